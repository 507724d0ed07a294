from django.db import models

from .metrics import MetricsRecord


class SuiteRun(models.Model):
    """實驗批次"""
    KIND_CHOICES = [
        ('single', '單一回合'),
        ('suite', '場景矩陣'),
        ('ablation', '消融掃描'),
    ]
    ABLATION_CHOICES = [
        ('', '無'),
        ('speed', '最大速度'),
        ('horizon', '軌跡時域'),
        ('ratio', '權重比'),
    ]

    name = models.CharField(max_length=200, verbose_name="批次名稱")
    kind = models.CharField(max_length=10, choices=KIND_CHOICES, default='suite', verbose_name="批次類型")
    ablation_kind = models.CharField(max_length=10, choices=ABLATION_CHOICES, blank=True, default='', verbose_name="消融種類")
    parameters = models.JSONField(default=dict, blank=True, verbose_name="執行參數")
    repeats = models.PositiveIntegerField(default=1, verbose_name="每格重複次數")
    created_at = models.DateTimeField(auto_now_add=True, verbose_name="創建時間")

    class Meta:
        verbose_name = "實驗批次"
        verbose_name_plural = "實驗批次"
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.name} ({self.get_kind_display()})"


class EpisodeRecord(models.Model):
    """單一回合的評估指標"""
    OUTCOME_CHOICES = [
        ('success', '成功'),
        ('timeout', '逾時'),
        ('collision', '碰撞'),
        ('failed', '執行失敗'),
    ]

    suite = models.ForeignKey(SuiteRun, on_delete=models.CASCADE, verbose_name="所屬批次", related_name='episodes')
    scenario_label = models.CharField(max_length=100, verbose_name="場景")
    planner_label = models.CharField(max_length=100, verbose_name="規劃器")
    grid_value = models.CharField(max_length=50, blank=True, default='', verbose_name="格點值")
    seed = models.IntegerField(verbose_name="亂數種子")
    outcome = models.CharField(max_length=10, choices=OUTCOME_CHOICES, verbose_name="結果")
    complete_ratio = models.FloatField(default=0.0, verbose_name="完成比例 (%)")
    success = models.BooleanField(default=False, verbose_name="成功")
    timeout = models.BooleanField(default=False, verbose_name="逾時")
    collision = models.BooleanField(default=False, verbose_name="碰撞")
    freezing_count = models.PositiveIntegerField(default=0, verbose_name="停滯次數")
    jerk = models.FloatField(default=0.0, verbose_name="平均急動度 (m/s³)")
    frontal_interactions = models.PositiveIntegerField(default=0, verbose_name="正面交會次數")
    cumulative_density = models.FloatField(default=0.0, verbose_name="前方累積密度")
    execute_time = models.FloatField(default=0.0, verbose_name="執行時間 (s)")
    error = models.TextField(blank=True, default='', verbose_name="錯誤訊息")

    class Meta:
        verbose_name = "回合紀錄"
        verbose_name_plural = "回合紀錄"
        ordering = ['suite', 'id']

    def __str__(self):
        return f"{self.scenario_label} / {self.planner_label} seed={self.seed}：{self.get_outcome_display()}"

    @property
    def metrics(self):
        if self.outcome == 'failed':
            return None
        return MetricsRecord(
            complete_ratio=self.complete_ratio,
            success=self.success,
            timeout=self.timeout,
            collision=self.collision,
            freezing_count=self.freezing_count,
            jerk=self.jerk,
            frontal_interactions=self.frontal_interactions,
            cumulative_density=self.cumulative_density,
            execute_time=self.execute_time,
        )

    # 讓紀錄可直接交給 metrics.aggregate
    @property
    def scenario(self):
        return self.scenario_label

    @property
    def planner(self):
        return self.planner_label
