"""
干擾感知規劃器

每個週期：流場 → 意圖地形三角化 → 運動基元取樣 → 被動安全篩選
→ 時間一致性沿用 → IDP / FDP 評分 → 事後碰撞檢查 → 選擇
"""

import collections
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import conf
from .core import RobotState, Rng, Trajectory, Vec2, wrap_angle
from .crowdsim import SimParams, awareness_vector
from .exceptions import ConfigurationError, DegenerateTriangulation, NonFiniteObjective
from .fdp import FdpParams, fdp, triangulate
from .flowfield import FlowParams, build_flowmap
from .idp import IdpEvaluator, IdpParams, determinize, prune_near

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerConfig:
    v_max: float = 1.2
    horizon: float = 4.0
    dt: float = 0.25
    safe_fraction: float = 0.5
    K: int = 24
    w_idp: float = 5.0
    w_fdp: float = 1.0
    w_base: float = 1.0
    decay_rate: float = 0.85
    carry_threshold: float = 0.3
    a_max: float = 1.5
    alpha_max: float = 1.5
    omega_max: float = 1.0
    max_face_tries: int = 20
    brake_offsets: int = 5
    brake_offset_step: float = 0.5
    brake_dt: float = 0.1
    robot_radius: float = 0.4
    ped_radius: float = 0.25
    safety_margin: float = 0.05
    idp_enabled: bool = True
    workers: int = 1
    track_steps: int = 20
    track_dt: float = 0.1
    track_lookahead: float = 0.5
    median_window: int = 50

    def __post_init__(self):
        if not 0.0 < self.safe_fraction < 1.0:
            raise ConfigurationError(f"safe_fraction 必須介於 0 與 1 之間：{self.safe_fraction}")
        if self.K < 4:
            raise ConfigurationError(f"K 至少為 4：{self.K}")
        for name in ('v_max', 'horizon', 'dt', 'a_max', 'alpha_max', 'omega_max', 'brake_dt', 'track_dt'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"PlannerConfig.{name} 必須為正")
        if not 0.0 < self.decay_rate <= 1.0:
            raise ConfigurationError(f"decay_rate 必須介於 (0, 1]：{self.decay_rate}")
        if min(self.w_idp, self.w_fdp, self.w_base) < 0:
            raise ConfigurationError("權重不可為負")

    @property
    def steps(self):
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def safe_steps(self):
        return max(1, int(math.ceil(self.safe_fraction * self.steps - 1e-9)))

    @property
    def collision_distance(self):
        return self.robot_radius + self.ped_radius + self.safety_margin

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def baseline(self):
        """不考慮干擾的對照組：同樣的取樣器與安全篩選"""
        return self.replace(w_idp=0.0, w_fdp=0.0)

    def with_ratio(self, ratio):
        return self.replace(w_idp=float(ratio), w_fdp=1.0)

    def with_horizon(self, horizon):
        """horizon = 0 表示完全不建模個體干擾，軌跡僅保留一個時間步"""
        if horizon <= 0:
            return self.replace(horizon=self.dt, idp_enabled=False)
        return self.replace(horizon=float(horizon))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_settings(cls, **overrides):
        values = conf.section('PLANNER')
        values.update(overrides)
        return conf.build(cls, values)

    @classmethod
    def from_mapping(cls, mapping):
        return cls.from_settings(**dict(mapping))

    @classmethod
    def from_file(cls, path):
        data = conf.load_file(path)
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} 必須是單一規劃器設定")
        return cls.from_mapping(data)


# ========== 獨輪車運動學 ==========

def integrate_unicycle(state, controls, dt, cfg):
    """
    半隱式積分：先更新速度與角速度，再以新值推進姿態
    回傳每一步之後的狀態 (T, 5)：x, y, θ, v, ω
    """
    x, y = state.pos.x, state.pos.y
    theta, v, omega = state.heading, state.speed, state.yaw_rate
    out = np.empty((len(controls), 5))
    for k, (a, alpha) in enumerate(np.asarray(controls, dtype=float).reshape(-1, 2)):
        v = min(max(v + a * dt, 0.0), cfg.v_max)
        omega = min(max(omega + alpha * dt, -cfg.omega_max), cfg.omega_max)
        theta = theta + omega * dt
        x = x + v * math.cos(theta) * dt
        y = y + v * math.sin(theta) * dt
        out[k] = (x, y, theta, v, omega)
    return out


@dataclass(frozen=True, eq=False)
class MotionPrimitive:
    controls: np.ndarray
    states: np.ndarray
    trajectory: Trajectory
    start_state: RobotState
    kind: str = 'sample'

    @property
    def end_state(self):
        x, y, theta, v, omega = self.states[-1]
        return RobotState(Vec2(x, y), wrap_angle(theta), v, self.trajectory.t_end, omega)

    @property
    def speeds(self):
        return self.states[:, 3]

    def state_at(self, index):
        x, y, theta, v, omega = self.states[index]
        return RobotState(Vec2(x, y), wrap_angle(theta), v, self.trajectory.times[index], omega)

    def path_length(self):
        pts = np.vstack([self.start_state.pos.as_array(), self.trajectory.points])
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def make_primitive(state, controls, cfg, kind='sample'):
    controls = np.asarray(controls, dtype=float).reshape(-1, 2)
    if np.any(np.abs(controls[:, 0]) > cfg.a_max + 1e-9) or np.any(np.abs(controls[:, 1]) > cfg.alpha_max + 1e-9):
        raise ConfigurationError("控制量超出加速度或轉向率限制")
    states = integrate_unicycle(state, controls, cfg.dt, cfg)
    traj = Trajectory(state.time + cfg.dt, cfg.dt, states[:, :2])
    return MotionPrimitive(controls, states, traj, state, kind)


def _steer_controls(state, target, speed, cfg, steps):
    """朝目標點的閉迴路控制序列，結果以 make_primitive 重新積分"""
    target = Vec2.of(target).as_array()
    x, y = state.pos.x, state.pos.y
    theta, v, omega = state.heading, state.speed, state.yaw_rate
    dt = cfg.dt
    controls = np.empty((steps, 2))
    for k in range(steps):
        dx, dy = target[0] - x, target[1] - y
        dist = math.hypot(dx, dy)
        err = wrap_angle(math.atan2(dy, dx) - theta) if dist > 1e-9 else 0.0
        omega_des = max(-cfg.omega_max, min(cfg.omega_max, 2.0 * err))
        alpha = max(-cfg.alpha_max, min(cfg.alpha_max, (omega_des - omega) / dt))
        v_des = min(speed, math.sqrt(max(0.0, 2.0 * cfg.a_max * dist)))
        a = max(-cfg.a_max, min(cfg.a_max, (v_des - v) / dt))
        controls[k] = (a, alpha)
        v = min(max(v + a * dt, 0.0), cfg.v_max)
        omega = min(max(omega + alpha * dt, -cfg.omega_max), cfg.omega_max)
        theta += omega * dt
        x += v * math.cos(theta) * dt
        y += v * math.sin(theta) * dt
    return controls


def stop_primitive(state, cfg):
    """以最大減速煞停並消除角速度"""
    v, omega, dt = state.speed, state.yaw_rate, cfg.dt
    controls = np.zeros((cfg.steps, 2))
    for k in range(cfg.steps):
        a = -min(cfg.a_max, v / dt)
        alpha = max(-cfg.alpha_max, min(cfg.alpha_max, -omega / dt))
        controls[k] = (a, alpha)
        v = max(v + a * dt, 0.0)
        omega = omega + alpha * dt
    return make_primitive(state, controls, cfg, 'stop')


def goal_primitive(state, goal, cfg):
    return make_primitive(state, _steer_controls(state, goal, cfg.v_max, cfg, cfg.steps), cfg, 'goal')


# ========== 插入區取樣 ==========

@dataclass(frozen=True)
class SamplingReport:
    faces: tuple
    counts: dict
    under_filled: tuple


def _robot_faces(g, pos):
    """機器人頂點周圍的三角形；機器人不是頂點時退回其所在三角形"""
    v = g.vertex_index(pos)
    if v >= 0:
        return v, g.faces_around(v)
    t = g.locate(pos)
    return -1, ([t] if t >= 0 else [])


def _wedge(g, face, v):
    """面在機器人頂點處張開的角域，以兩條邊向量表示"""
    others = [int(k) for k in g.triangles[face] if k != v]
    origin = g.vertices[v]
    return g.vertices[others[0]] - origin, g.vertices[others[1]] - origin


def in_wedge(point, origin, wedge):
    a, b = wedge
    e = np.asarray(point, dtype=float) - origin
    if np.hypot(*e) < 1e-6:
        return False
    orient = a[0] * b[1] - a[1] * b[0]
    s1 = a[0] * e[1] - a[1] * e[0]
    s2 = e[0] * b[1] - e[1] * b[0]
    if orient < 0:
        s1, s2 = -s1, -s2
    return s1 >= 0 and s2 >= 0


def _sample(state, g, cfg, rng, goal=None):
    vertex, faces = _robot_faces(g, state.pos)
    prims, face_ids = [], []
    if goal is not None:
        prims.append(goal_primitive(state, goal, cfg))
        face_ids.append(-1)
    slots = cfg.K - 2
    counts = {f: 0 for f in faces}
    origin = state.pos.as_array()
    reach = cfg.v_max * cfg.horizon

    for slot in range(slots if faces else 0):
        face = faces[slot % len(faces)]
        slot_rng = rng.fork(slot)
        if vertex >= 0:
            a, b = _wedge(g, face, vertex)
            ta, tb = math.atan2(a[1], a[0]), math.atan2(b[1], b[0])
            span = wrap_angle(tb - ta)
        for _ in range(cfg.max_face_tries):
            if vertex >= 0:
                bearing = ta + slot_rng.uniform(0.0, 1.0) * span
            else:
                bearing = slot_rng.uniform(-math.pi, math.pi)
            dist = slot_rng.uniform(0.25, 1.0) * reach
            speed = slot_rng.uniform(0.3, 1.0) * cfg.v_max
            target = origin + dist * np.array([math.cos(bearing), math.sin(bearing)])
            prim = make_primitive(state, _steer_controls(state, target, speed, cfg, cfg.steps), cfg)
            end = prim.trajectory.points[-1]
            ok = in_wedge(end, origin, (a, b)) if vertex >= 0 else g.locate(end) == face
            if ok:
                prims.append(prim)
                face_ids.append(face)
                counts[face] += 1
                break

    prims.append(stop_primitive(state, cfg))
    face_ids.append(-1)
    per_face = slots // len(faces) if faces else 0
    under = tuple(f for f, c in counts.items() if c < per_face)
    if under:
        logger.debug("插入區取樣不足：%s", under)
    return prims, face_ids, SamplingReport(tuple(faces), counts, under)


def sample_candidates(state, g, cfg, rng, goal=None):
    """依機器人頂點周圍的三角形輪流分配候選，並永遠包含煞停基元"""
    prims, _, _ = _sample(state, g, cfg, rng, goal)
    return prims


# ========== 被動安全 ==========

@dataclass(frozen=True, eq=False)
class ConstantVelocityPrediction:
    positions: np.ndarray
    velocities: np.ndarray
    t0: float = 0.0

    def at(self, times):
        dt = np.asarray(times, dtype=float) - self.t0
        return self.positions[:, None, :] + dt[None, :, None] * self.velocities[:, None, :]


def predict_constant_velocity(peds, t0=0.0):
    if not peds:
        return ConstantVelocityPrediction(np.zeros((0, 2)), np.zeros((0, 2)), t0)
    pos = np.array([[p.pos.x, p.pos.y] for p in peds])
    vel = np.array([[p.vel.x, p.vel.y] for p in peds])
    return ConstantVelocityPrediction(pos, vel, t0)


def _collides(points, times, moving, preds, static_map, cfg):
    """靜止時被撞不算機器人造成的碰撞"""
    if static_map is not None:
        if np.any(static_map.clearance(points) < cfg.robot_radius) or not np.all(static_map.in_bounds(points)):
            return True
    if len(preds.positions) == 0 or not np.any(moving):
        return False
    d = np.linalg.norm(preds.at(times) - points[None], axis=-1)
    return bool(np.any((d < cfg.collision_distance) & moving[None]))


def braking_maneuvers(state, cfg):
    """從 state 以 a_max 煞停，搭配 brake_offsets 個轉向偏移"""
    half = cfg.brake_offsets // 2
    steps = max(1, int(math.ceil(state.speed / (cfg.a_max * cfg.brake_dt) - 1e-9)))
    for k in range(-half, cfg.brake_offsets - half):
        omega = max(-cfg.omega_max, min(cfg.omega_max, k * cfg.brake_offset_step))
        x, y, theta, v = state.pos.x, state.pos.y, state.heading, state.speed
        rows = []
        for _ in range(steps):
            v_next = max(v - cfg.a_max * cfg.brake_dt, 0.0)
            moving = v > 0.0
            theta += omega * cfg.brake_dt
            x += v_next * math.cos(theta) * cfg.brake_dt
            y += v_next * math.sin(theta) * cfg.brake_dt
            rows.append((x, y, moving))
            v = v_next
        arr = np.array(rows)
        times = state.time + cfg.brake_dt * np.arange(1, steps + 1)
        yield arr[:, :2], times, arr[:, 2].astype(bool)


def find_escape(state, preds, static_map, cfg):
    """第一個不碰撞的煞停動作；已靜止時回傳目前位置"""
    here = state.pos.as_array()[None]
    if state.speed <= 0.0:
        return here
    for points, times, moving in braking_maneuvers(state, cfg):
        if not _collides(points, times, moving, preds, static_map, cfg):
            return points
    return None


def passive_safety_check(p, preds, static_map, cfg):
    k = min(cfg.safe_steps, len(p.trajectory))
    points = p.trajectory.points[:k]
    times = p.trajectory.times[:k]
    prev_speed = np.concatenate([[p.start_state.speed], p.speeds[:k - 1]])
    moving = (p.speeds[:k] > 0.0) | (prev_speed > 0.0)
    if _collides(points, times, moving, preds, static_map, cfg):
        return False
    return find_escape(p.state_at(k - 1), preds, static_map, cfg) is not None


# ========== 候選與一致性 ==========

@dataclass(eq=False)
class Candidate:
    primitive: MotionPrimitive
    face_id: int = -1
    index: int = 0
    idp: float = None
    fdp: float = None
    base_cost: float = None
    total: float = None
    consistency_age: int = 0
    discount: float = 1.0
    safe: bool = False
    converged: bool = True
    carried_over: bool = False
    frozen: bool = False
    reachable: bool = True
    post_ok: bool = True
    tid: object = field(default=None, repr=False)

    @property
    def trajectory(self):
        return self.primitive.trajectory

    @property
    def kind(self):
        return self.primitive.kind

    @property
    def flags(self):
        return {
            'safe': self.safe, 'converged': self.converged, 'carried_over': self.carried_over,
            'frozen': self.frozen, 'reachable': self.reachable, 'post_ok': self.post_ok,
        }


def shift_primitive(p, state, cfg):
    """去掉已執行的部分並以 state.time 重新對齊時間軸；超出原軌跡時停在終點"""
    old_times = np.concatenate([[p.start_state.time], p.trajectory.times])
    start = p.start_state
    old = np.vstack([[start.pos.x, start.pos.y, start.heading, start.speed, start.yaw_rate], p.states])
    old[:, 2] = np.unwrap(old[:, 2])
    new_times = state.time + cfg.dt * np.arange(1, cfg.steps + 1)
    states = np.column_stack([np.interp(new_times, old_times, old[:, c]) for c in range(5)])
    beyond = new_times > old_times[-1] + 1e-9
    states[beyond, 3:] = 0.0
    traj = Trajectory(state.time + cfg.dt, cfg.dt, states[:, :2])
    return MotionPrimitive(np.zeros((0, 2)), states, traj, state, 'carry')


def consistency_merge(prev_best, fresh, cfg):
    merged = list(fresh)
    if prev_best is None:
        return merged
    age = prev_best.consistency_age + 1
    discount = cfg.decay_rate ** age
    if discount < cfg.carry_threshold:
        logger.debug("沿用軌跡權重 %.3f 低於門檻，捨棄", discount)
        return merged
    merged.append(dataclasses.replace(
        prev_best, index=len(merged), consistency_age=age, discount=discount, carried_over=True,
        idp=None, fdp=None, base_cost=None, total=None, tid=None, frozen=False, post_ok=True,
    ))
    return merged


def post_collision_check(c, tid, cfg=None):
    """任一行人確定化後的 TID 軌跡進入機器人與行人半徑和之內即否決"""
    if tid is None:
        return True
    radius = (cfg.robot_radius + cfg.ped_radius) if cfg is not None else 0.65
    traj = c.trajectory
    moving = (c.primitive.speeds > 0.0) if len(c.primitive.speeds) == len(traj) else np.ones(len(traj), dtype=bool)
    for b in tid.bundles:
        other = b.trajectories[determinize(b)]
        if not other.same_time_base(traj):
            continue
        d = np.linalg.norm(other.points - traj.points, axis=1)
        if np.any((d < radius) & moving):
            return False
    return True


# ========== 評分 ==========

class RunningMedian:
    """每回合的干擾值中位數，用來讓 IDP 與 FDP 的量級可比"""

    def __init__(self, window=50):
        self.values = collections.deque(maxlen=window)

    def scale(self):
        if not self.values:
            return 1.0
        return max(float(np.median(self.values)), 1e-6)

    def update(self, values):
        for v in values:
            if v is not None and np.isfinite(v) and v > 0.0:
                self.values.append(float(v))


def base_cost(c, goal, cfg):
    """繞行時間 + 目標進度不足時間"""
    start = c.primitive.start_state.pos
    goal = Vec2.of(goal)
    progress = (start - goal).norm() - (c.trajectory.end - goal).norm()
    length = c.primitive.path_length()
    reach = cfg.v_max * cfg.horizon
    return (max(length - progress, 0.0) + max(reach - progress, 0.0)) / cfg.v_max


def _freeze(state, cfg):
    return Candidate(stop_primitive(state, cfg), safe=True, frozen=True, idp=0.0, fdp=0.0, base_cost=0.0, total=0.0)


def score_and_select(cands, world, fm, cfg, goal=None, idp_fn=None, fdp_fn=None, normalizers=None):
    """
    total = w_base·base + discount·(w_idp·idp + w_fdp·fdp)，取最小者
    已填入的 idp / fdp 不會重算
    """
    goal = world.goal if goal is None else Vec2.of(goal)
    if not cands:
        return _freeze(world.robot, cfg)
    safe = [c for c in cands if c.safe]
    if not safe:
        return _freeze(world.robot, cfg)

    idp_scale = normalizers[0].scale() if normalizers else 1.0
    fdp_scale = normalizers[1].scale() if normalizers else 1.0
    for c in safe:
        if c.idp is None:
            c.idp = idp_fn(c) if idp_fn is not None and cfg.w_idp > 0 else 0.0
        if c.fdp is None:
            c.fdp = fdp_fn(c) if fdp_fn is not None and cfg.w_fdp > 0 and fm is not None else 0.0
        if c.base_cost is None:
            c.base_cost = base_cost(c, goal, cfg)
        disturbance = cfg.w_idp * c.idp / idp_scale + cfg.w_fdp * c.fdp / fdp_scale
        c.total = cfg.w_base * c.base_cost + c.discount * disturbance
        if not np.isfinite(c.total):
            raise NonFiniteObjective(f"候選 {c.index} 的總代價非有限值")
        c.post_ok = post_collision_check(c, c.tid, cfg)

    admissible = [c for c in safe if c.post_ok]
    if not admissible:
        return _freeze(world.robot, cfg)
    chosen = min(admissible, key=lambda c: (c.total, c.index))
    chosen.frozen = chosen.kind == 'stop'
    return chosen


# ========== 規劃週期 ==========

@dataclass(frozen=True, eq=False)
class PlanResult:
    chosen: Candidate
    table: list
    candidates: list
    graph: object = None
    flowmap: object = None
    report: SamplingReport = None


def _row(cycle, c, chosen):
    return {
        'cycle': cycle,
        'candidate': c.index,
        'face': c.face_id,
        'kind': c.kind,
        'idp': c.idp,
        'fdp': c.fdp,
        'base': c.base_cost,
        'total': c.total,
        'safe': c.safe,
        'converged': c.converged,
        'carried_over': c.carried_over,
        'age': c.consistency_age,
        'post_ok': c.post_ok,
        'selected': c is chosen,
    }


class DisturbanceAwarePlanner:
    """保存跨週期狀態（上一次的選擇與中位數正規化）的規劃器"""

    def __init__(self, config=None, flow_params=None, idp_params=None, fdp_params=None, sim_params=None):
        self.config = config or PlannerConfig.from_settings()
        self.flow_params = flow_params or FlowParams.from_settings()
        self.idp_params = idp_params or IdpParams.from_settings()
        self.fdp_params = fdp_params or FdpParams.from_settings()
        self.sim_params = sim_params or SimParams.from_settings()
        self.reset()

    def reset(self):
        self.prev_best = None
        self.cycle = 0
        self.normalizers = (RunningMedian(self.config.median_window), RunningMedian(self.config.median_window))

    def _idp_evaluator(self, world, rng):
        cfg = self.config
        if not (cfg.idp_enabled and cfg.w_idp > 0 and world.peds):
            return None
        reach = self.idp_params.prune_radius + cfg.v_max * cfg.horizon
        near = prune_near(world.peds, world.robot.pos.as_array()[None], reach)
        awares = awareness_vector(near, world.robot.pos, self.sim_params) if near else None
        return IdpEvaluator(near, world.map, self.idp_params, rng, world.time, cfg.dt, cfg.steps * cfg.dt, awares)

    def plan_step(self, world, goal=None, rng=None):
        cfg = self.config
        goal = world.goal if goal is None else Vec2.of(goal)
        rng = rng or Rng(world.config.seed, (2,)).fork(world.step_index)
        state = world.robot
        cycle = self.cycle
        self.cycle += 1

        fm = None
        if world.peds and cfg.w_fdp > 0:
            fm = build_flowmap(world.peds, world.map, self.flow_params.horizon, params=self.flow_params,
                               t_origin=world.time)
        try:
            anchors = [state.pos, goal] + world.map.corners()
            graph = triangulate(world.peds, world.map, anchors, self.fdp_params.boundary_spacing)
        except DegenerateTriangulation as exc:
            logger.warning("三角化失敗，改用煞停：%s", exc)
            chosen = _freeze(state, cfg)
            self.prev_best = None
            return PlanResult(chosen, [_row(cycle, chosen, chosen)], [chosen])

        prims, face_ids, report = _sample(state, graph, cfg, rng.fork(0), goal)
        fresh = [Candidate(p, face_id=f, index=k) for k, (p, f) in enumerate(zip(prims, face_ids))]
        carried = None
        if self.prev_best is not None and self.prev_best.kind != 'stop':
            carried = dataclasses.replace(self.prev_best, primitive=shift_primitive(self.prev_best.primitive, state, cfg))
        cands = consistency_merge(carried, fresh, cfg)

        preds = predict_constant_velocity(world.peds, world.time)
        for c in cands:
            c.safe = passive_safety_check(c.primitive, preds, world.map, cfg)

        evaluator = self._idp_evaluator(world, rng.fork(1))
        fdp_cache = {}

        def idp_fn(c):
            if evaluator is None:
                return 0.0
            result = evaluator.evaluate(c.trajectory)
            c.tid = result.tid
            c.converged = c.converged and result.converged
            return result.value

        def fdp_fn(c):
            key = tuple(np.round(c.trajectory.points[-1], 3))
            if key not in fdp_cache:
                fdp_cache[key] = fdp(c.trajectory, goal, world.peds, world.map, fm, self.fdp_params,
                                     graph=graph, speed=cfg.v_max)
            result = fdp_cache[key]
            c.reachable = result.reachable
            c.converged = c.converged and result.converged
            return result.value

        safe = [c for c in cands if c.safe]
        if cfg.workers > 1 and len(safe) > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                if evaluator is not None and cfg.w_idp > 0:
                    for c, value in zip(safe, pool.map(idp_fn, safe)):
                        c.idp = value
        chosen = score_and_select(cands, world, fm, cfg, goal, idp_fn, fdp_fn if fm is not None else None,
                                  self.normalizers)

        self.normalizers[0].update(c.idp for c in safe)
        self.normalizers[1].update(c.fdp for c in safe)
        if chosen.frozen or chosen.kind == 'stop':
            self.prev_best = None
        else:
            if not chosen.carried_over:
                chosen.consistency_age = 0
                chosen.discount = 1.0
            self.prev_best = chosen

        table = [_row(cycle, c, chosen) for c in cands]
        if chosen not in cands:
            table.append(_row(cycle, chosen, chosen))
        logger.debug("週期 %d：%d 個候選、%d 個安全，選擇 #%d (%s) total=%.3f",
                     cycle, len(cands), len(safe), chosen.index, chosen.kind, chosen.total or 0.0)
        return PlanResult(chosen, table, cands, graph, fm, report)


def plan_step(world, goal=None, cfg=None, rng=None):
    """無狀態版本：每次呼叫都從新的規劃器開始"""
    result = DisturbanceAwarePlanner(cfg).plan_step(world, goal, rng)
    return result.chosen, result.table


# ========== 追蹤 ==========

def _reference(p, t, cfg):
    """追蹤視窗內時間 t 的參考狀態（位置、航向、速度、角速度、前饋加速度）"""
    start = p.start_state
    times = np.concatenate([[start.time], p.trajectory.times])
    window_end = start.time + cfg.track_steps * cfg.track_dt
    states = np.vstack([[start.pos.x, start.pos.y, start.heading, start.speed, start.yaw_rate], p.states])
    states[:, 2] = np.unwrap(states[:, 2])
    tq = min(max(t, times[0]), min(times[-1], window_end))
    ref = np.array([np.interp(tq, times, states[:, c]) for c in range(5)])
    a_ff = 0.0
    if len(p.controls) and times[0] < tq < times[-1]:
        k = min(int(np.searchsorted(times, tq, side='right')) - 1, len(p.controls) - 1)
        a_ff = float(p.controls[k, 0])
    return ref, a_ff


def track(chosen, state, dt, cfg=None):
    """
    時間索引參考點的回授追蹤：縱向 PD + 前饋，橫向為純追蹤曲率
    回傳 (加速度, 轉向角加速度)，皆已限幅
    """
    cfg = cfg or PlannerConfig.from_settings()
    if not 0.0 < dt <= 0.1 + 1e-12:
        raise ConfigurationError(f"追蹤步長必須在 (0, 0.1] 內：{dt}")
    p = chosen.primitive if isinstance(chosen, Candidate) else chosen
    ref, a_ff = _reference(p, state.time, cfg)
    x_r, y_r, theta_r, v_r, omega_r = ref

    heading = np.array([math.cos(state.heading), math.sin(state.heading)])
    err = np.array([x_r - state.pos.x, y_r - state.pos.y])
    along = float(err @ heading)
    lateral = float(heading[0] * err[1] - heading[1] * err[0])

    accel = a_ff + 4.0 * (v_r - state.speed) + 4.0 * along
    lookahead = max(v_r * cfg.track_lookahead, 0.3)
    v_eff = max(state.speed, v_r, 0.1)
    omega_des = omega_r + 2.0 * wrap_angle(theta_r - state.heading) + v_eff * 2.0 * lateral / lookahead ** 2
    omega_des = max(-cfg.omega_max, min(cfg.omega_max, omega_des))
    alpha = (omega_des - state.yaw_rate) / dt

    accel = max(-cfg.a_max, min(cfg.a_max, accel))
    alpha = max(-cfg.alpha_max, min(cfg.alpha_max, alpha))
    return accel, alpha


def apply_control(state, control, dt, cfg):
    """以相同的半隱式積分推進一個物理步"""
    x, y, theta, v, omega = integrate_unicycle(state, [control], dt, cfg)[0]
    return RobotState(Vec2(x, y), wrap_angle(theta), v, state.time + dt, omega)
