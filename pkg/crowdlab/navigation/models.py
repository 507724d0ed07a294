from django.db import models
from django.utils.text import slugify

from .crowdsim import Direction, ScenarioConfig, ScenarioKind
from .planner import PlannerConfig

# Create your models here.

class ScenarioPreset(models.Model):
    """場景預設"""
    KIND_CHOICES = [
        (ScenarioKind.NC.value, '狹窄走廊'),
        (ScenarioKind.FI.value, '流線交會'),
        (ScenarioKind.BA.value, '瓶頸'),
        (ScenarioKind.OPEN.value, '開放場地'),
    ]
    DIRECTION_CHOICES = [
        (Direction.DT.value, '順流'),
        (Direction.UT.value, '逆流'),
    ]

    name = models.CharField(max_length=100, verbose_name="預設名稱")
    slug = models.SlugField(max_length=100, unique=True, verbose_name="代碼", help_text="CLI 以 --preset 指定，例如：nc-dt", blank=True)
    kind = models.CharField(max_length=8, choices=KIND_CHOICES, default=ScenarioKind.NC.value, verbose_name="場景種類")
    direction = models.CharField(max_length=4, choices=DIRECTION_CHOICES, default=Direction.DT.value, verbose_name="機器人方向")
    counterflow = models.BooleanField(default=False, verbose_name="是否有反向人流")
    ped_count = models.PositiveIntegerField(default=20, verbose_name="行人數")
    minor_flow_fraction = models.FloatField(default=0.2, verbose_name="反向人流比例")
    corridor_width = models.FloatField(default=4.0, verbose_name="走廊寬度 (m)")
    corridor_length = models.FloatField(default=30.0, verbose_name="走廊長度 (m)")
    bottleneck_gap = models.FloatField(default=1.5, verbose_name="瓶頸開口 (m)")
    arena_size = models.FloatField(default=20.0, verbose_name="場地邊長 (m)")
    cyclist_fraction = models.FloatField(default=0.0, verbose_name="自行車比例")
    seed = models.IntegerField(default=0, verbose_name="亂數種子")
    is_active = models.BooleanField(default=True, verbose_name="是否啟用")
    created_at = models.DateTimeField(auto_now_add=True, verbose_name="創建時間")
    updated_at = models.DateTimeField(auto_now=True, verbose_name="更新時間")

    class Meta:
        verbose_name = "場景預設"
        verbose_name_plural = "場景預設"
        ordering = ['kind', 'name']

    def __str__(self):
        return f"{self.name} ({self.slug})"

    def save(self, *args, **kwargs):
        if not self.slug and self.name:
            self.slug = slugify(self.name)
        super().save(*args, **kwargs)

    def to_config(self):
        return ScenarioConfig(
            kind=self.kind,
            direction=self.direction,
            counterflow=self.counterflow,
            ped_count=self.ped_count,
            minor_flow_fraction=self.minor_flow_fraction,
            corridor_width=self.corridor_width,
            corridor_length=self.corridor_length,
            bottleneck_gap=self.bottleneck_gap,
            arena_size=self.arena_size,
            cyclist_fraction=self.cyclist_fraction,
            seed=self.seed,
            name=self.slug,
        )


class PlannerProfile(models.Model):
    """規劃器參數組"""
    name = models.CharField(max_length=100, verbose_name="參數組名稱")
    slug = models.SlugField(max_length=100, unique=True, verbose_name="代碼", help_text="CLI 以 --profile 指定", blank=True)
    v_max = models.FloatField(default=1.2, verbose_name="最大速度 (m/s)")
    horizon = models.FloatField(default=4.0, verbose_name="規劃時域 (s)")
    safe_fraction = models.FloatField(default=0.5, verbose_name="安全區比例")
    K = models.PositiveIntegerField(default=24, verbose_name="每週期候選數")
    w_idp = models.FloatField(default=5.0, verbose_name="IDP 權重")
    w_fdp = models.FloatField(default=1.0, verbose_name="FDP 權重")
    w_base = models.FloatField(default=1.0, verbose_name="基本代價權重")
    decay_rate = models.FloatField(default=0.85, verbose_name="沿用衰減率")
    carry_threshold = models.FloatField(default=0.3, verbose_name="沿用門檻")
    is_baseline = models.BooleanField(default=False, verbose_name="是否為對照組", help_text="不考慮干擾（w_idp = w_fdp = 0）")
    is_active = models.BooleanField(default=True, verbose_name="是否啟用")
    created_at = models.DateTimeField(auto_now_add=True, verbose_name="創建時間")
    updated_at = models.DateTimeField(auto_now=True, verbose_name="更新時間")

    class Meta:
        verbose_name = "規劃器參數組"
        verbose_name_plural = "規劃器參數組"
        ordering = ['name']

    def __str__(self):
        return self.name

    def save(self, *args, **kwargs):
        if not self.slug and self.name:
            self.slug = slugify(self.name)
        super().save(*args, **kwargs)

    def to_config(self):
        cfg = PlannerConfig.from_settings(
            v_max=self.v_max,
            horizon=self.horizon,
            safe_fraction=self.safe_fraction,
            K=self.K,
            w_idp=self.w_idp,
            w_fdp=self.w_fdp,
            w_base=self.w_base,
            decay_rate=self.decay_rate,
            carry_threshold=self.carry_threshold,
        )
        return cfg.baseline() if self.is_baseline else cfg
