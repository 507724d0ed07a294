# Generated by Django 4.2 on 2026-10-12 09:15

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='PlannerProfile',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100, verbose_name='參數組名稱')),
                ('slug', models.SlugField(blank=True, help_text='CLI 以 --profile 指定', max_length=100, unique=True, verbose_name='代碼')),
                ('v_max', models.FloatField(default=1.2, verbose_name='最大速度 (m/s)')),
                ('horizon', models.FloatField(default=4.0, verbose_name='規劃時域 (s)')),
                ('safe_fraction', models.FloatField(default=0.5, verbose_name='安全區比例')),
                ('K', models.PositiveIntegerField(default=24, verbose_name='每週期候選數')),
                ('w_idp', models.FloatField(default=5.0, verbose_name='IDP 權重')),
                ('w_fdp', models.FloatField(default=1.0, verbose_name='FDP 權重')),
                ('w_base', models.FloatField(default=1.0, verbose_name='基本代價權重')),
                ('decay_rate', models.FloatField(default=0.85, verbose_name='沿用衰減率')),
                ('carry_threshold', models.FloatField(default=0.3, verbose_name='沿用門檻')),
                ('is_baseline', models.BooleanField(default=False, help_text='不考慮干擾（w_idp = w_fdp = 0）', verbose_name='是否為對照組')),
                ('is_active', models.BooleanField(default=True, verbose_name='是否啟用')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='創建時間')),
                ('updated_at', models.DateTimeField(auto_now=True, verbose_name='更新時間')),
            ],
            options={
                'verbose_name': '規劃器參數組',
                'verbose_name_plural': '規劃器參數組',
                'ordering': ['name'],
            },
        ),
        migrations.CreateModel(
            name='ScenarioPreset',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100, verbose_name='預設名稱')),
                ('slug', models.SlugField(blank=True, help_text='CLI 以 --preset 指定，例如：nc-dt', max_length=100, unique=True, verbose_name='代碼')),
                ('kind', models.CharField(choices=[('NC', '狹窄走廊'), ('FI', '流線交會'), ('BA', '瓶頸'), ('OPEN', '開放場地')], default='NC', max_length=8, verbose_name='場景種類')),
                ('direction', models.CharField(choices=[('DT', '順流'), ('UT', '逆流')], default='DT', max_length=4, verbose_name='機器人方向')),
                ('counterflow', models.BooleanField(default=False, verbose_name='是否有反向人流')),
                ('ped_count', models.PositiveIntegerField(default=20, verbose_name='行人數')),
                ('minor_flow_fraction', models.FloatField(default=0.2, verbose_name='反向人流比例')),
                ('corridor_width', models.FloatField(default=4.0, verbose_name='走廊寬度 (m)')),
                ('corridor_length', models.FloatField(default=30.0, verbose_name='走廊長度 (m)')),
                ('bottleneck_gap', models.FloatField(default=1.5, verbose_name='瓶頸開口 (m)')),
                ('arena_size', models.FloatField(default=20.0, verbose_name='場地邊長 (m)')),
                ('cyclist_fraction', models.FloatField(default=0.0, verbose_name='自行車比例')),
                ('seed', models.IntegerField(default=0, verbose_name='亂數種子')),
                ('is_active', models.BooleanField(default=True, verbose_name='是否啟用')),
                ('created_at', models.DateTimeField(auto_now_add=True, verbose_name='創建時間')),
                ('updated_at', models.DateTimeField(auto_now=True, verbose_name='更新時間')),
            ],
            options={
                'verbose_name': '場景預設',
                'verbose_name_plural': '場景預設',
                'ordering': ['kind', 'name'],
            },
        ),
    ]
