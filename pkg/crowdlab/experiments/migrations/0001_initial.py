# Generated by Django 4.2 on 2026-10-12 09:20

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='SuiteRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=200, verbose_name='批次名稱')),
                ('kind', models.CharField(choices=[('single', '單一回合'), ('suite', '場景矩陣'), ('ablation', '消融掃描')], default='suite', max_length=10, verbose_name='批次類型')),
                ('ablation_kind', models.CharField(blank=True, choices=[('', '無'), ('speed', '最大速度'), ('horizon', '軌跡時域'), ('ratio', '權重比')], default='', max_length=10, verbose_name='消融種類')),
                ('parameters', models.JSONField(blank=True, default=dict, verbose_name='執行參數')),
                ('repeats', models.PositiveIntegerField(default=1, verbose_name='每格重複次數')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='創建時間')),
            ],
            options={
                'verbose_name': '實驗批次',
                'verbose_name_plural': '實驗批次',
                'ordering': ['-created_at'],
            },
        ),
        migrations.CreateModel(
            name='EpisodeRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('scenario_label', models.CharField(max_length=100, verbose_name='場景')),
                ('planner_label', models.CharField(max_length=100, verbose_name='規劃器')),
                ('grid_value', models.CharField(blank=True, default='', max_length=50, verbose_name='格點值')),
                ('seed', models.IntegerField(verbose_name='亂數種子')),
                ('outcome', models.CharField(choices=[('success', '成功'), ('timeout', '逾時'), ('collision', '碰撞'), ('failed', '執行失敗')], max_length=10, verbose_name='結果')),
                ('complete_ratio', models.FloatField(default=0.0, verbose_name='完成比例 (%)')),
                ('success', models.BooleanField(default=False, verbose_name='成功')),
                ('timeout', models.BooleanField(default=False, verbose_name='逾時')),
                ('collision', models.BooleanField(default=False, verbose_name='碰撞')),
                ('freezing_count', models.PositiveIntegerField(default=0, verbose_name='停滯次數')),
                ('jerk', models.FloatField(default=0.0, verbose_name='平均急動度 (m/s³)')),
                ('frontal_interactions', models.PositiveIntegerField(default=0, verbose_name='正面交會次數')),
                ('cumulative_density', models.FloatField(default=0.0, verbose_name='前方累積密度')),
                ('execute_time', models.FloatField(default=0.0, verbose_name='執行時間 (s)')),
                ('error', models.TextField(blank=True, default='', verbose_name='錯誤訊息')),
                ('suite', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='episodes', to='experiments.suiterun', verbose_name='所屬批次')),
            ],
            options={
                'verbose_name': '回合紀錄',
                'verbose_name_plural': '回合紀錄',
                'ordering': ['suite', 'id'],
            },
        ),
    ]
