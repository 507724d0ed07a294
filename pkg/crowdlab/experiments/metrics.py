"""
回合評估指標

成功、碰撞、逾時、完成比例、停滯次數、急動度、正面交會次數、前方累積密度、執行時間
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from navigation.core import PED_RADIUS, ROBOT_RADIUS
from navigation.exceptions import TruncatedLog

OUTCOMES = ('success', 'timeout', 'collision')

# 彙總表欄位順序
AGGREGATE_COLUMNS = [
    'scenario', 'planner', 'grid_value', 'episodes', 'failures',
    'success_rate', 'collision_rate', 'timeout_rate', 'complete_ratio',
    'freezing_sum', 'freezing_mean', 'jerk', 'frontal_sum', 'frontal_mean',
    'cumulative_density', 'execute_time',
]


@dataclass(frozen=True)
class MetricsRecord:
    complete_ratio: float
    success: bool
    timeout: bool
    collision: bool
    freezing_count: int
    jerk: float
    frontal_interactions: int
    cumulative_density: float
    execute_time: float

    def __post_init__(self):
        if self.success and (self.timeout or self.collision):
            raise ValueError("成功的回合不可同時逾時或碰撞")
        if self.freezing_count < 0 or self.frontal_interactions < 0:
            raise ValueError("次數不可為負")
        if not 0.0 <= self.complete_ratio <= 100.0:
            raise ValueError(f"完成比例超出範圍：{self.complete_ratio}")

    @property
    def outcome(self):
        if self.success:
            return 'success'
        return 'collision' if self.collision else 'timeout'

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def _runs(mask):
    """布林序列中連續 True 區段的長度"""
    lengths, count = [], 0
    for flag in mask:
        if flag:
            count += 1
        elif count:
            lengths.append(count)
            count = 0
    if count:
        lengths.append(count)
    return lengths


def freezing_count(speeds, dt, freeze_speed=0.05, freeze_time=3.0):
    """速度低於門檻且持續超過 freeze_time 秒的次數"""
    return sum(1 for n in _runs(np.asarray(speeds) < freeze_speed) if n * dt > freeze_time + 1e-9)


def mean_jerk(positions, dt):
    pos = np.asarray(positions, dtype=float)
    if len(pos) < 4:
        return 0.0
    third = np.diff(pos, n=3, axis=0) / dt ** 3
    return float(np.mean(np.linalg.norm(third, axis=1)))


def frontal_mask(robot_pos, robot_heading, ped_pos, ped_vel, frontal_range=1.5, cone_deg=120.0):
    """
    每一步每位行人是否與機器人面對面：距離在範圍內、
    行人在機器人前方錐內、且行人朝機器人走來
    robot_pos (N, 2)、robot_heading (N,)、ped_pos / ped_vel (N, n, 2)
    """
    half = math.radians(cone_deg) / 2.0
    rel = ped_pos - robot_pos[:, None, :]
    dist = np.linalg.norm(rel, axis=-1)
    heading = np.stack([np.cos(robot_heading), np.sin(robot_heading)], axis=-1)
    safe = np.maximum(dist, 1e-9)
    ahead = np.einsum('nkc,nc->nk', rel, heading) / safe >= math.cos(half)
    speed = np.linalg.norm(ped_vel, axis=-1)
    facing = np.einsum('nkc,nkc->nk', -rel, ped_vel) / np.maximum(safe * speed, 1e-9) >= math.cos(half)
    return (dist <= frontal_range) & ahead & facing & (speed > 0.05)


def frontal_count(mask):
    """每位行人進入面對面狀態的次數（上升緣）"""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return 0
    onsets = mask[0].sum() + np.sum(mask[1:] & ~mask[:-1])
    return int(onsets)


def front_density(robot_pos, robot_heading, ped_pos, dt, depth=0.5,
                  robot_radius=ROBOT_RADIUS, ped_radius=PED_RADIUS):
    """機器人正前方 depth × 機身寬度矩形內的人數密度對時間積分"""
    rel = ped_pos - robot_pos[:, None, :]
    heading = np.stack([np.cos(robot_heading), np.sin(robot_heading)], axis=-1)
    along = np.einsum('nkc,nc->nk', rel, heading)
    lateral = np.abs(heading[:, None, 0] * rel[..., 1] - heading[:, None, 1] * rel[..., 0])
    inside = ((along >= robot_radius - ped_radius) & (along <= robot_radius + depth + ped_radius)
              & (lateral <= robot_radius + ped_radius))
    area = depth * 2.0 * robot_radius
    return float(np.sum(inside) / area * dt)


def compute_metrics(log, limits=None):
    """由完整的回合紀錄計算指標；紀錄不完整時拋出 TruncatedLog"""
    if not getattr(log, 'complete', False) or log.outcome not in OUTCOMES:
        raise TruncatedLog("回合紀錄不完整，無法計算指標")
    robot = np.asarray(log.robot, dtype=float)
    if robot.ndim != 2 or len(robot) < 2:
        raise TruncatedLog("回合紀錄至少需要兩個時間點")
    limits = limits or log.limits
    dt = log.dt

    pos = robot[:, 1:3]
    heading = robot[:, 3]
    speed = robot[:, 4]
    peds = np.asarray(log.peds, dtype=float)
    if peds.size == 0:
        peds = np.zeros((len(robot), 0, 5))

    start, goal = np.asarray(log.start), np.asarray(log.goal)
    total = float(np.linalg.norm(goal - start))
    progress = total - float(np.linalg.norm(goal - pos[-1]))
    success = log.outcome == 'success'
    ratio = 100.0 if success or total <= 0 else float(np.clip(100.0 * progress / total, 0.0, 100.0))

    mask = frontal_mask(pos, heading, peds[..., 0:2], peds[..., 2:4],
                        limits.frontal_range, limits.frontal_cone_deg)
    return MetricsRecord(
        complete_ratio=ratio,
        success=success,
        timeout=log.outcome == 'timeout',
        collision=log.outcome == 'collision',
        freezing_count=freezing_count(speed, dt, limits.freeze_speed, limits.freeze_time),
        jerk=mean_jerk(pos, dt),
        frontal_interactions=frontal_count(mask),
        cumulative_density=front_density(pos, heading, peds[..., 0:2], dt, limits.density_depth),
        execute_time=float(robot[-1, 0] - robot[0, 0]),
    )


def aggregate(outcomes):
    """
    依 (場景, 規劃器, 格點值) 分組彙總；比例以百分比表示
    outcomes 的每個元素需有 scenario、planner、grid_value、metrics（失敗時為 None）
    """
    groups = {}
    for o in outcomes:
        groups.setdefault((o.scenario, o.planner, o.grid_value), []).append(o)

    rows = []
    for (scenario, planner, grid_value), items in groups.items():
        records = [o.metrics for o in items if o.metrics is not None]
        # 比例的分母是重複次數，失敗回合不算成功、碰撞或逾時
        n = len(records)

        def mean(values):
            values = list(values)
            return float(np.mean(values)) if values else 0.0

        freezing = [r.freezing_count for r in records]
        frontal = [r.frontal_interactions for r in records]
        rows.append({
            'scenario': scenario,
            'planner': planner,
            'grid_value': grid_value,
            'episodes': n,
            'failures': len(items) - n,
            'success_rate': 100.0 * sum(r.success for r in records) / len(items),
            'collision_rate': 100.0 * sum(r.collision for r in records) / len(items),
            'timeout_rate': 100.0 * sum(r.timeout for r in records) / len(items),
            'complete_ratio': mean(r.complete_ratio for r in records),
            'freezing_sum': int(sum(freezing)),
            'freezing_mean': mean(freezing),
            'jerk': mean(r.jerk for r in records),
            'frontal_sum': int(sum(frontal)),
            'frontal_mean': mean(frontal),
            'cumulative_density': mean(r.cumulative_density for r in records),
            'execute_time': mean(r.execute_time for r in records),
        })
    return rows
