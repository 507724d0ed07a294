"""縮小規模的實驗設定，讓完整回合在測試中能快速跑完"""

from navigation.crowdsim import ScenarioConfig
from navigation.planner import PlannerConfig

TINY_CROWDNAV = {
    'FLOW': {'horizon': 2.0},
    'IDP': {'m': 4, 'max_iters': 2},
    'FDP': {'max_iters': 3, 'max_waypoints': 4},
    'PLANNER': {'K': 6, 'horizon': 1.5},
    'HARNESS': {'time_limit': 6.0, 'repeats': 1},
}


def tiny_scenario(seed=3, **overrides):
    values = dict(kind='OPEN', ped_count=2, arena_size=6.0, seed=seed)
    values.update(overrides)
    return ScenarioConfig(**values)


def tiny_planner(**overrides):
    return PlannerConfig.from_settings(**overrides)
