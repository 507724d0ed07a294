"""
行人世界模擬：場景生成（NC / FI / BA / OPEN × DT / UT × 逆向流）、
社會力步進、以及機器人察覺判定
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from shapely.geometry import box

from . import conf
from .core import PED_RADIUS, ROBOT_RADIUS, Pedestrian, RobotState, Rng, StaticMap, Vec2, unit_from_angle
from .exceptions import ConfigurationError, InfeasibleScenario

logger = logging.getLogger(__name__)

CROSS_FLOW_SHARE = 0.4
MAX_ACCEL = 10.0
SPAWN_ATTEMPTS = 200


class ScenarioKind(str, Enum):
    NC = 'NC'      # 狹窄走廊
    FI = 'FI'      # 流線交會
    BA = 'BA'      # 瓶頸
    OPEN = 'OPEN'  # 開放場地


class Direction(str, Enum):
    DT = 'DT'  # 與主流同向
    UT = 'UT'  # 與主流逆向


@dataclass(frozen=True)
class ScenarioConfig:
    """場景設定"""
    kind: ScenarioKind = ScenarioKind.NC
    direction: Direction = Direction.DT
    counterflow: bool = False
    ped_count: int = 20
    minor_flow_fraction: float = 0.2
    corridor_width: float = 4.0
    corridor_length: float = 30.0
    bottleneck_gap: float = 1.5
    arena_size: float = 20.0
    cyclist_fraction: float = 0.0
    seed: int = 0
    name: str = ''

    def __post_init__(self):
        try:
            object.__setattr__(self, 'kind', ScenarioKind(self.kind))
            object.__setattr__(self, 'direction', Direction(self.direction))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        if self.ped_count <= 0:
            raise ConfigurationError("ped_count 必須大於 0")
        for name in ('corridor_width', 'corridor_length', 'bottleneck_gap', 'arena_size'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} 必須為正")
        if not 0.0 <= self.minor_flow_fraction <= 1.0:
            raise ConfigurationError("minor_flow_fraction 必須介於 0 與 1")
        if not 0.0 <= self.cyclist_fraction <= 1.0:
            raise ConfigurationError("cyclist_fraction 必須介於 0 與 1")
        if self.kind == ScenarioKind.BA and self.bottleneck_gap >= 2.0 * self.corridor_width:
            raise ConfigurationError("瓶頸寬度必須小於房間高度")

    @property
    def label(self):
        if self.name:
            return self.name
        suffix = '-CF' if self.counterflow else ''
        if self.kind == ScenarioKind.OPEN:
            return f"OPEN-{self.ped_count}"
        return f"{self.kind.value}-{self.direction.value}{suffix}"

    def to_dict(self):
        data = dataclasses.asdict(self)
        data['kind'] = self.kind.value
        data['direction'] = self.direction.value
        return data

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed))

    @classmethod
    def from_mapping(cls, mapping):
        return conf.build(cls, dict(mapping))

    @classmethod
    def from_file(cls, path):
        data = conf.load_file(path)
        if isinstance(data, list):
            raise ConfigurationError(f"{path} 是場景清單，請使用 load_scenarios")
        return cls.from_mapping(data)


def load_scenarios(path):
    """讀取單一場景或場景清單"""
    data = conf.load_file(path)
    items = data if isinstance(data, list) else [data]
    return [ScenarioConfig.from_mapping(item) for item in items]


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.05
    goal_tau: float = 0.5
    ped_amp: float = 2.0
    ped_range: float = 0.8
    obs_amp: float = 4.0
    obs_range: float = 0.4
    robot_amp: float = 2.0
    robot_range: float = 1.0
    max_speed: float = 1.8
    interaction_cutoff: float = 5.0
    goal_radius: float = 0.5
    gaze_period: float = 2.0
    gaze_forward_prob: float = 0.8
    body_cone_deg: float = 90.0
    body_range: float = 10.0
    gaze_cone_deg: float = 60.0
    gaze_range: float = 20.0

    @classmethod
    def from_settings(cls, **overrides):
        values = conf.section('SIM')
        values.update(overrides)
        return conf.build(cls, values)


@dataclass(frozen=True)
class Band:
    """生成帶：矩形區域與行走軸向（0 = x, 1 = y）"""
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    axis: int = 0

    def contains(self, x, y):
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class Layout:
    bands: tuple
    start: Vec2
    goal: Vec2
    gate: Vec2 = None  # 瓶頸開口中心，行人需先穿過

    @property
    def course_length(self):
        return (self.goal - self.start).norm()


@dataclass(frozen=True, eq=False)
class WorldState:
    time: float
    peds: tuple
    robot: RobotState
    map: StaticMap
    goal: Vec2
    config: ScenarioConfig
    layout: Layout
    step_index: int = 0

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def ped_arrays(self):
        if not self.peds:
            return np.zeros((0, 2)), np.zeros((0, 2))
        pos = np.array([[p.pos.x, p.pos.y] for p in self.peds])
        vel = np.array([[p.vel.x, p.vel.y] for p in self.peds])
        return pos, vel


# ========== 場景幾何 ==========

def build_geometry(cfg):
    """依場景種類建立地圖與機器人起終點"""
    W = cfg.corridor_width
    if cfg.kind == ScenarioKind.NC:
        L = cfg.corridor_length
        walls = (box(0.0, -1.0, L, 0.0), box(0.0, W, L, W + 1.0))
        static_map = StaticMap((0.0, -1.0, L, W + 1.0), walls)
        bands = (Band(0.5, 0.3, L - 0.5, W - 0.3, 0),)
        start, goal = Vec2(1.5, W / 2.0), Vec2(L - 1.5, W / 2.0)
    elif cfg.kind == ScenarioKind.FI:
        A = cfg.arena_size
        c0, c1 = (A - W) / 2.0, (A + W) / 2.0
        blocks = (box(0.0, 0.0, c0, c0), box(c1, 0.0, A, c0),
                  box(0.0, c1, c0, A), box(c1, c1, A, A))
        static_map = StaticMap((0.0, 0.0, A, A), blocks)
        bands = (Band(0.5, c0 + 0.3, A - 0.5, c1 - 0.3, 0),
                 Band(c0 + 0.3, 0.5, c1 - 0.3, A - 0.5, 1))
        start, goal = Vec2(1.5, A / 2.0), Vec2(A - 1.5, A / 2.0)
    elif cfg.kind == ScenarioKind.BA:
        L = cfg.corridor_length
        H = 2.0 * W
        g = cfg.bottleneck_gap
        mid = L / 2.0
        walls = (box(mid - 0.25, 0.0, mid + 0.25, H / 2.0 - g / 2.0),
                 box(mid - 0.25, H / 2.0 + g / 2.0, mid + 0.25, H))
        static_map = StaticMap((0.0, 0.0, L, H), walls)
        bands = (Band(0.5, 0.5, L - 0.5, H - 0.5, 0),)
        start, goal = Vec2(1.5, H / 2.0), Vec2(L - 1.5, H / 2.0)
        return static_map, Layout(bands, start, goal, gate=Vec2(mid, H / 2.0))
    else:
        A = cfg.arena_size
        static_map = StaticMap((0.0, 0.0, A, A))
        bands = (Band(0.5, 0.5, A - 0.5, A - 0.5, 0),)
        start, goal = Vec2(1.5, A / 2.0), Vec2(A - 1.5, A / 2.0)
    return static_map, Layout(bands, start, goal)


def _goal_for(band, pos, sign):
    if band.axis == 0:
        return Vec2(band.xmax if sign > 0 else band.xmin, pos.y)
    return Vec2(pos.x, band.ymax if sign > 0 else band.ymin)


def _sample_gaze(heading, rng, params):
    """以機率 gaze_forward_prob 看向前方，否則在 ±90° 內隨機"""
    u, offset = rng.random(), rng.uniform(-0.5 * math.pi, 0.5 * math.pi)
    if u < params.gaze_forward_prob:
        return unit_from_angle(heading)
    return unit_from_angle(heading + offset)


def _clear_spot(static_map, point, radius):
    p = np.array([point])
    if not static_map.in_bounds(p, margin=radius)[0]:
        return False
    return not static_map.in_obstacle(p)[0] and static_map.clearance(p)[0] >= radius


def spawn(cfg, params=None):
    """依設定與種子產生初始世界，完全可重現"""
    params = params or SimParams.from_settings()
    static_map, layout = build_geometry(cfg)
    rng = Rng(cfg.seed).fork(0)

    n = cfg.ped_count
    main_sign = 1.0 if cfg.direction == Direction.DT else -1.0
    signs = np.full(n, main_sign)
    order = rng.permutation(n)
    n_minor = int(math.floor(cfg.minor_flow_fraction * n + 1e-9)) if cfg.counterflow else 0
    signs[order[:n_minor]] = -main_sign

    band_index = np.zeros(n, dtype=int)
    if cfg.kind == ScenarioKind.FI:
        rest = order[n_minor:]
        n_cross = int(round(CROSS_FLOW_SHARE * len(rest)))
        band_index[rest[:n_cross]] = 1
        for k, idx in enumerate(rest[:n_cross]):
            signs[idx] = 1.0 if k % 2 == 0 else -1.0

    n_cyclists = int(round(cfg.cyclist_fraction * n))
    cyclists = set(int(i) for i in order[::-1][:n_cyclists])

    peds = []
    placed = []
    for i in range(n):
        band = layout.bands[band_index[i]]
        for _ in range(SPAWN_ATTEMPTS):
            x = rng.uniform(band.xmin, band.xmax)
            y = rng.uniform(band.ymin, band.ymax)
            spot = Vec2(x, y)
            if (spot - layout.start).norm() < 1.5:
                continue
            if any((spot - q).norm() < 2.0 * PED_RADIUS for q in placed):
                continue
            if not _clear_spot(static_map, (x, y), PED_RADIUS):
                continue
            break
        else:
            raise InfeasibleScenario(
                f"{cfg.label}：無法放置第 {i + 1} 位行人（共 {n} 位），密度過高")
        placed.append(spot)

        is_cyclist = i in cyclists
        pref = rng.uniform(3.0, 4.0) if is_cyclist else rng.uniform(1.0, 1.5)
        goal = _goal_for(band, spot, signs[i])
        heading = (goal - spot).angle()
        gaze = _sample_gaze(heading, rng, params)
        peds.append(Pedestrian(
            id=i, pos=spot, vel=(goal - spot).unit() * pref, goal=goal,
            pref_speed=pref, heading=heading, gaze_dir=gaze,
            kind='cyclist' if is_cyclist else 'pedestrian',
        ))

    robot = RobotState(layout.start, (layout.goal - layout.start).angle(), 0.0, 0.0)
    logger.debug("spawn %s seed=%d：%d 位行人", cfg.label, cfg.seed, n)
    return WorldState(0.0, tuple(peds), robot, static_map, layout.goal, cfg, layout, 0)


# ========== 察覺判定 ==========

def _angle_between(v, direction):
    d = v.norm()
    n = direction.norm()
    if d == 0.0 or n == 0.0:
        return 0.0
    c = max(-1.0, min(1.0, v.dot(direction) / (d * n)))
    return math.degrees(math.acos(c))


def awareness_check(p, robot_pos, params=None):
    """身體朝向錐（90°、10 m）與視線錐（60°、20 m）的聯集"""
    params = params or SimParams.from_settings()
    v = Vec2.of(robot_pos) - p.pos
    d = v.norm()
    if d == 0.0:
        return True
    body = _angle_between(v, p.heading_vec) <= params.body_cone_deg and d <= params.body_range
    gaze = _angle_between(v, p.gaze_dir) <= params.gaze_cone_deg and d <= params.gaze_range
    return body or gaze


def awareness_vector(peds, robot_pos, params=None):
    params = params or SimParams.from_settings()
    return np.array([awareness_check(p, robot_pos, params) for p in peds], dtype=bool)


# ========== 社會力步進 ==========

def _speed_caps(peds, params):
    return np.array([
        params.max_speed if p.kind == 'pedestrian' else max(params.max_speed, 1.2 * p.pref_speed)
        for p in peds
    ])


def _forces(w, robot_visible, params):
    pos, vel = w.ped_arrays()
    n = len(pos)
    goals = np.array([[p.goal.x, p.goal.y] for p in w.peds])
    pref = np.array([p.pref_speed for p in w.peds])
    radii = np.array([p.radius for p in w.peds])

    gate = w.layout.gate
    if gate is not None:
        # 與目標分處牆兩側時先走向開口
        across = (pos[:, 0] - gate.x) * (goals[:, 0] - gate.x) < 0.0
        far = np.abs(pos[:, 0] - gate.x) > 0.3
        goals = np.where((across & far)[:, None], gate.as_array(), goals)

    to_goal = goals - pos
    dist_goal = np.linalg.norm(to_goal, axis=1, keepdims=True)
    e_goal = np.where(dist_goal > 1e-9, to_goal / np.maximum(dist_goal, 1e-9), 0.0)
    acc = (pref[:, None] * e_goal - vel) / params.goal_tau

    # 行人之間的排斥力
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    near = (dist < params.interaction_cutoff) & ~np.eye(n, dtype=bool)
    mag = params.ped_amp * np.exp((radii[:, None] + radii[None, :] - dist) / params.ped_range)
    unit = diff / np.maximum(dist, 1e-9)[..., None]
    acc += np.sum(np.where(near[..., None], mag[..., None] * unit, 0.0), axis=1)

    # 障礙物與邊界
    nearest = w.map.nearest_obstacle_points(pos)
    if nearest is not None:
        away = pos - nearest
        d = np.linalg.norm(away, axis=1)
        mag = params.obs_amp * np.exp((radii - d) / params.obs_range)
        acc += np.where((d > 1e-9)[:, None], mag[:, None] * away / np.maximum(d, 1e-9)[:, None], 0.0)
    xmin, ymin, xmax, ymax = w.map.bounds
    for dist_wall, normal in ((pos[:, 0] - xmin, (1.0, 0.0)), (xmax - pos[:, 0], (-1.0, 0.0)),
                              (pos[:, 1] - ymin, (0.0, 1.0)), (ymax - pos[:, 1], (0.0, -1.0))):
        mag = params.obs_amp * np.exp((radii - dist_wall) / params.obs_range)
        acc += mag[:, None] * np.array(normal)

    if robot_visible:
        robot = w.robot.pos.as_array()
        aware = awareness_vector(w.peds, w.robot.pos, params)
        away = pos - robot
        d = np.linalg.norm(away, axis=1)
        mag = params.robot_amp * np.exp((radii + ROBOT_RADIUS - d) / params.robot_range)
        push = np.where((d > 1e-9)[:, None], mag[:, None] * away / np.maximum(d, 1e-9)[:, None], 0.0)
        acc += np.where(aware[:, None], push, 0.0)

    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.where(norm > MAX_ACCEL, acc * MAX_ACCEL / np.maximum(norm, 1e-300), acc)


def _respawn(p, w, others, rng, robot_visible, params):
    """抵達目標的行人回到其行走帶的起點端"""
    band = next((b for b in w.layout.bands if b.contains(p.goal.x, p.goal.y)), w.layout.bands[0])
    sign = 1.0 if (p.goal.x if band.axis == 0 else p.goal.y) >= (
        (band.xmin + band.xmax) / 2.0 if band.axis == 0 else (band.ymin + band.ymax) / 2.0) else -1.0
    draws = rng.uniform(0.0, 1.0, size=5)
    for u in draws:
        if band.axis == 0:
            x = band.xmin if sign > 0 else band.xmax
            y = band.ymin + u * (band.ymax - band.ymin)
        else:
            x = band.xmin + u * (band.xmax - band.xmin)
            y = band.ymin if sign > 0 else band.ymax
        spot = Vec2(x, y)
        if not _clear_spot(w.map, (x, y), p.radius):
            continue
        if any((spot - q).norm() < 2.0 * p.radius for q in others):
            continue
        if robot_visible and (spot - w.robot.pos).norm() < 1.0:
            continue
        goal = _goal_for(band, spot, sign)
        heading = (goal - spot).angle()
        return dataclasses.replace(p, pos=spot, goal=goal, heading=heading,
                                   vel=(goal - spot).unit() * p.pref_speed,
                                   gaze_dir=unit_from_angle(heading))
    return dataclasses.replace(p, vel=Vec2(0.0, 0.0))


def step(w, dt, robot_visible=True, params=None):
    """所有行人依社會力前進 dt 秒；機器人狀態不變"""
    params = params or SimParams.from_settings()
    if not 0.0 < dt <= 0.1 + 1e-12:
        raise ConfigurationError(f"模擬步長必須介於 (0, 0.1]：{dt}")
    if not w.peds:
        return w.replace(time=w.time + dt, step_index=w.step_index + 1)

    rng = Rng(w.config.seed).fork(1 + w.step_index)
    pos, vel = w.ped_arrays()
    acc = _forces(w, robot_visible, params)

    vel_new = vel + acc * dt
    caps = _speed_caps(w.peds, params)
    speed = np.linalg.norm(vel_new, axis=1)
    vel_new *= np.where(speed > caps, caps / np.maximum(speed, 1e-300), 1.0)[:, None]
    pos_new = pos + vel_new * dt

    blocked = ~w.map.is_free(pos_new)
    for i in np.flatnonzero(blocked):
        # 先嘗試只沿 x 或只沿 y 移動，否則停在原地
        for candidate, keep in (((pos_new[i, 0], pos[i, 1]), (1.0, 0.0)),
                                ((pos[i, 0], pos_new[i, 1]), (0.0, 1.0))):
            if w.map.is_free(np.array([candidate]))[0]:
                pos_new[i] = candidate
                vel_new[i] *= keep
                break
        else:
            pos_new[i] = pos[i]
            vel_new[i] = 0.0

    t_new = w.time + dt
    resample_gaze = math.floor(t_new / params.gaze_period + 1e-9) > math.floor(w.time / params.gaze_period + 1e-9)
    gaze_draws = rng.random(size=(len(w.peds), 2)) if resample_gaze else None

    peds = []
    for i, p in enumerate(w.peds):
        v = Vec2(*vel_new[i])
        heading = v.angle() if v.norm() > 0.05 else p.heading
        gaze = p.gaze_dir
        if gaze_draws is not None:
            if gaze_draws[i, 0] < params.gaze_forward_prob:
                gaze = unit_from_angle(heading)
            else:
                gaze = unit_from_angle(heading + (gaze_draws[i, 1] - 0.5) * math.pi)
        peds.append(dataclasses.replace(p, pos=Vec2(*pos_new[i]), vel=v, heading=heading, gaze_dir=gaze))

    for i, p in enumerate(peds):
        if (p.goal - p.pos).norm() < params.goal_radius:
            others = [q.pos for j, q in enumerate(peds) if j != i]
            peds[i] = _respawn(p, w, others, rng.fork(i), robot_visible, params)

    return w.replace(time=t_new, peds=tuple(peds), step_index=w.step_index + 1)
