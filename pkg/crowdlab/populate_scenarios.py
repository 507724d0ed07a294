#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
填充場景預設與規劃器參數組的腳本
執行方式：python manage.py shell < populate_scenarios.py
或：python populate_scenarios.py
"""

import os
import sys
import django

# 設置 Windows 控制台編碼
if sys.platform == 'win32':
    import codecs
    sys.stdout = codecs.getwriter('utf-8')(sys.stdout.buffer, 'strict')
    sys.stderr = codecs.getwriter('utf-8')(sys.stderr.buffer, 'strict')

# 設置 Django 環境
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'crowdlab.settings')
django.setup()

from navigation.exceptions import CrowdNavError
from navigation.models import PlannerProfile, ScenarioPreset

KIND_NAMES = {'NC': '狹窄走廊', 'FI': '流線交會', 'BA': '瓶頸'}
DIRECTION_NAMES = {'DT': '順流', 'UT': '逆流'}


def scenario_data():
    """三種場景 × 兩種方向 × 是否有反向人流，再加上開放場地的低／高密度"""
    data = []
    for kind, kind_name in KIND_NAMES.items():
        for direction, direction_name in DIRECTION_NAMES.items():
            for counterflow in (False, True):
                suffix = '-cf' if counterflow else ''
                data.append({
                    'name': f"{kind_name}（{direction_name}{'，反向人流' if counterflow else ''}）",
                    'slug': f"{kind.lower()}-{direction.lower()}{suffix}",
                    'kind': kind,
                    'direction': direction,
                    'counterflow': counterflow,
                    'ped_count': 20,
                    'is_active': True,
                })
    data += [
        {
            'name': '開放場地（低密度）',
            'slug': 'open-low',
            'kind': 'OPEN',
            'direction': 'DT',
            'ped_count': 10,
            'is_active': True,
        },
        {
            'name': '開放場地（高密度）',
            'slug': 'open-high',
            'kind': 'OPEN',
            'direction': 'DT',
            'ped_count': 40,
            'is_active': True,
        },
    ]
    return data


PROFILE_DATA = [
    {
        'name': '干擾感知規劃器',
        'slug': 'mip',
        'w_idp': 5.0,
        'w_fdp': 1.0,
        'is_baseline': False,
        'is_active': True,
    },
    {
        'name': '對照組（不考慮干擾）',
        'slug': 'baseline',
        'w_idp': 0.0,
        'w_fdp': 0.0,
        'is_baseline': True,
        'is_active': True,
    },
]


def upsert(model, data):
    obj, created = model.objects.get_or_create(slug=data['slug'], defaults=data)
    if not created:
        # 更新現有記錄
        for key, value in data.items():
            setattr(obj, key, value)
        obj.save()
    # 轉換一次以檢查參數是否合法
    obj.to_config()
    return obj, created


def populate_scenarios():
    """填充場景預設與規劃器參數組"""

    print("開始填充場景預設...")
    print("-" * 50)

    created_count = 0
    updated_count = 0

    for model, items in ((ScenarioPreset, scenario_data()), (PlannerProfile, PROFILE_DATA)):
        for data in items:
            obj, created = upsert(model, data)
            if created:
                print(f"[+] 創建：{obj.name} ({obj.slug})")
                created_count += 1
            else:
                print(f"[*] 更新：{obj.name} ({obj.slug})")
                updated_count += 1

    print("-" * 50)
    print(f"完成！創建了 {created_count} 筆，更新了 {updated_count} 筆。")
    print(f"總共有 {ScenarioPreset.objects.count()} 個場景預設、{PlannerProfile.objects.count()} 個規劃器參數組。")
    print()
    print("下一步：")
    print("1. 進入管理後台：http://127.0.0.1:8000/admin/navigation/scenariopreset/")
    print("2. 執行單一回合：python manage.py crowdnav run --preset nc-dt --emit csv --emit replay")
    print("3. 執行比較矩陣：python manage.py crowdnav suite --preset nc-dt --preset nc-ut --baseline --repeats 5")


if __name__ == '__main__':
    try:
        populate_scenarios()
    except CrowdNavError as exc:
        print(f"[!] 填充失敗：{exc}")
        sys.exit(1)
