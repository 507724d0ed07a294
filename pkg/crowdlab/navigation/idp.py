"""
個體干擾懲罰（IDP）

流程：
1. 依無干擾分佈（NID）為每位行人取樣 m 條軌跡，權重皆為 1
2. Gauss–Seidel 迭代最佳回應（IRM），沒有機器人時得到 PID，有機器人時得到 TID
3. 各行人取 PID / TID 權重最大的軌跡，兩者的軌跡距離即為該行人的位移
4. IDP = 所有行人位移的最大值
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import ot

from . import conf
from .core import DEFAULT_DT, Rng, Trajectory, min_separation, pointwise_distances, traj_metric
from .crowdsim import awareness_vector
from .exceptions import ConfigurationError, NotNormalizable, TimeBaseMismatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltyParams:
    c_ped: float = 1.0
    c_obs: float = 10.0
    b: float = 2.0
    gamma: float = 0.9
    th_peer: float = 0.6
    th_robot: float = 0.8

    def __post_init__(self):
        for name in ('c_ped', 'c_obs', 'b', 'gamma', 'th_peer', 'th_robot'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"PenaltyParams.{name} 必須為正")
        if self.gamma > 1.0:
            raise ConfigurationError("PenaltyParams.gamma 不可大於 1")

    @classmethod
    def from_settings(cls, **overrides):
        values = conf.pick(conf.section('IDP'), cls)
        values.update(overrides)
        return conf.build(cls, values)


@dataclass(frozen=True)
class IdpParams:
    m: int = 16
    eps: float = 0.05
    max_iters: int = 10
    sigma: float = 0.3
    prune_radius: float = 8.0
    penalty: PenaltyParams = field(default_factory=PenaltyParams)

    def __post_init__(self):
        if self.m < 2:
            raise ConfigurationError("IdpParams.m 至少為 2")
        if not self.eps > 0 or self.max_iters < 0 or self.sigma < 0:
            raise ConfigurationError("IdpParams 數值不合法")

    @classmethod
    def from_settings(cls, **overrides):
        values = conf.section('IDP')
        penalty = PenaltyParams(**conf.pick(values, PenaltyParams))
        values = conf.pick(values, cls)
        values['penalty'] = penalty
        values.update(overrides)
        return conf.build(cls, values)


@dataclass(frozen=True, eq=False)
class WeightedBundle:
    """一位行人的 m 條樣本軌跡與其權重"""
    agent_id: int
    trajectories: tuple
    weights: np.ndarray
    prior: np.ndarray = None

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("WeightedBundle 不可為空")
        weights = np.array(self.weights, dtype=float)
        if weights.shape != (len(trajs),):
            raise ValueError("權重數量必須等於軌跡數量")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("權重必須為非負有限值")
        first = trajs[0]
        if any(not t.same_time_base(first) for t in trajs[1:]):
            raise TimeBaseMismatch(f"行人 {self.agent_id} 的樣本時間基準不一致")
        prior = np.full(len(trajs), 1.0 / len(trajs)) if self.prior is None else np.array(self.prior, dtype=float)
        points = np.stack([t.points for t in trajs])
        for arr in (weights, prior, points):
            arr.flags.writeable = False
        object.__setattr__(self, 'trajectories', trajs)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'prior', prior)
        object.__setattr__(self, '_points', points)

    @property
    def m(self):
        return len(self.trajectories)

    @property
    def points(self):
        """(m, T, 2)"""
        return self._points

    @property
    def time_base(self):
        return self.trajectories[0]

    def with_weights(self, weights):
        return WeightedBundle(self.agent_id, self.trajectories, weights, self.prior)

    def normalized(self):
        total = float(np.sum(self.weights))
        if not np.isfinite(total) or total <= 0.0:
            raise NotNormalizable(f"行人 {self.agent_id} 的權重無法正規化")
        return self.with_weights(self.weights * (self.m / total))


@dataclass(frozen=True, eq=False)
class ReactionResult:
    bundles: tuple
    iterations: int
    final_jc: float
    converged: bool

    @property
    def weights(self):
        return np.stack([b.weights for b in self.bundles]) if self.bundles else np.zeros((0, 0))


def sample_nid(p, m, horizon, rng, dt=DEFAULT_DT, sigma=0.3, t0=0.0):
    """
    以等速度 GP 取樣：平均為朝目標的直線偏好路徑，
    變異數隨前瞻時間線性成長（布朗運動增量）
    第 0 條樣本固定為平均路徑
    """
    if m < 2:
        raise ConfigurationError(f"樣本數 m 至少為 2：{m}")
    steps = max(1, int(round(horizon / dt)))
    times = dt * np.arange(1, steps + 1)
    start = p.pos.as_array()
    offset = p.goal.as_array() - start
    dist = float(np.hypot(*offset))
    e = offset / dist if dist > 0 else np.zeros(2)
    travel = np.minimum(p.pref_speed * times, dist)
    mean = start + travel[:, None] * e

    noise = rng.normal(0.0, sigma * np.sqrt(dt), size=(m - 1, steps, 2)) if sigma > 0 else np.zeros((m - 1, steps, 2))
    paths = np.concatenate([mean[None], mean[None] + np.cumsum(noise, axis=1)])
    trajs = tuple(Trajectory(t0 + dt, dt, path) for path in paths)
    return WeightedBundle(p.id, trajs, np.ones(m))


def overlap_penalty(ti, tj, robot=None, aware=False, static_map=None, pp=None):
    """ψ(τi, τj, robot)；對 (i, j) 不對稱"""
    pp = pp or PenaltyParams()
    d = pointwise_distances(ti, tj)
    discount = pp.gamma ** np.arange(len(d))
    cost = pp.c_ped * float(np.max(discount * np.exp(-pp.b * (d - pp.th_peer))))
    if static_map is not None and static_map.paths_hit_obstacle(ti.points)[0]:
        cost += pp.c_obs
    if robot is not None:
        if not ti.same_time_base(robot):
            raise TimeBaseMismatch("機器人軌跡與行人樣本的時間基準不一致")
        if aware and min_separation(ti, robot)[0] < pp.th_robot:
            cost += pp.c_obs
    return cost


class InteractionGame:
    """
    預先計算所有樣本對的 ψ 同儕項與障礙物項
    機器人項只和 (i, y) 有關，於每條候選軌跡另外加上
    """

    def __init__(self, bundles, pp=None, static_map=None):
        self.pp = pp or PenaltyParams()
        self.bundles = tuple(bundles)
        self.n = len(self.bundles)
        if self.n == 0:
            self.m = 0
            self.points = np.zeros((0, 0, 0, 2))
            self.psi = np.zeros((0, 0, 0, 0))
            return
        self.m = self.bundles[0].m
        base = self.bundles[0].time_base
        for b in self.bundles:
            if b.m != self.m or not b.time_base.same_time_base(base):
                raise TimeBaseMismatch("所有行人的樣本必須共用時間基準與樣本數")
        self.points = np.stack([b.points for b in self.bundles])
        n, m, T, _ = self.points.shape

        discount = self.pp.gamma ** np.arange(T)
        psi = np.empty((n, m, n, m))
        for i in range(n):
            d = np.linalg.norm(self.points[i][:, None, None] - self.points[None], axis=-1)
            psi[i] = self.pp.c_ped * np.max(discount * np.exp(-self.pp.b * (d - self.pp.th_peer)), axis=-1)
        if static_map is not None:
            hits = static_map.paths_hit_obstacle(self.points.reshape(n * m, T, 2)).reshape(n, m)
            psi += self.pp.c_obs * hits[:, :, None, None]
        for i in range(n):
            psi[i, :, i, :] = 0.0
        self.psi = psi

    @property
    def time_base(self):
        return self.bundles[0].time_base if self.bundles else None

    def robot_flags(self, robot=None, awares=None):
        """c_obs·[min_t d(τ_iy, robot) < th_robot]·aware_i，形狀 (n, m)"""
        flags = np.zeros((self.n, self.m))
        if robot is None or self.n == 0:
            return flags
        if not robot.same_time_base(self.time_base):
            raise TimeBaseMismatch("機器人軌跡與行人樣本的時間基準不一致")
        aware = np.ones(self.n, dtype=bool) if awares is None else np.asarray(awares, dtype=bool)
        d = np.linalg.norm(self.points - robot.points[None, None], axis=-1).min(axis=-1)
        flags[:] = self.pp.c_obs * ((d < self.pp.th_robot) & aware[:, None])
        return flags

    def sample_costs(self, i, weights, flags):
        """第 i 位行人各樣本的期望碰撞代價 γ̄_i(y)；機器人視為單一確定的動態障礙物"""
        peer = np.einsum('yjz,jz->y', self.psi[i], weights)
        return peer / self.m + flags[i]

    def joint_penalty(self, weights, flags):
        if self.n == 0:
            return 0.0
        peer = np.einsum('iy,iyjz,jz->', weights, self.psi, weights)
        robot = np.sum(flags * weights)
        return float(peer / (self.m * self.m) + robot / self.m)


def expected_sample_cost(i, y, bundles, robot=None, awares=None, pp=None, m=None, static_map=None):
    """直接以 ψ 雙重迴圈計算的蒙地卡羅估計，另加一次機器人項"""
    pp = pp or PenaltyParams()
    bundles = list(bundles)
    m = m or bundles[i].m
    aware_i = True if awares is None else bool(awares[i])
    tau = bundles[i].trajectories[y]
    total = 0.0
    for j, other in enumerate(bundles):
        if j == i:
            continue
        inner = 0.0
        for z, tau_z in enumerate(other.trajectories):
            psi = overlap_penalty(tau, tau_z, None, False, static_map, pp)
            inner += psi * other.weights[z]
        total += inner / m
    if robot is not None:
        if not tau.same_time_base(robot):
            raise TimeBaseMismatch("機器人軌跡與行人樣本的時間基準不一致")
        if aware_i and min_separation(tau, robot)[0] < pp.th_robot:
            total += pp.c_obs
    return total


def joint_penalty(bundles, robot=None, awares=None, pp=None, static_map=None):
    game = InteractionGame(bundles, pp, static_map)
    weights = np.stack([b.weights for b in game.bundles]) if game.n else np.zeros((0, 0))
    return game.joint_penalty(weights, game.robot_flags(robot, awares))


def individual_reaction_modeling(bundles, robot=None, awares=None, static_map=None, pp=None,
                                 eps=0.05, max_iters=10, game=None):
    """
    Gauss–Seidel 迭代最佳回應
    w ← w·exp(−v/m)，每位行人更新後立即正規化為平均 1
    """
    if not eps > 0:
        raise ConfigurationError(f"eps 必須為正：{eps}")
    game = game or InteractionGame(bundles, pp, static_map)
    if game.n == 0:
        return ReactionResult((), 0, 0.0, True)

    m = game.m
    flags = game.robot_flags(robot, awares)
    weights = np.stack([b.weights for b in game.bundles]).astype(float)
    log_w = np.log(weights)

    jc = game.joint_penalty(weights, flags)
    iterations = 0
    while jc > eps and iterations < max_iters:
        for i in range(game.n):
            v = game.sample_costs(i, weights, flags)
            log_w[i] = log_w[i] - v / m
            shifted = np.exp(log_w[i] - log_w[i].max())
            weights[i] = shifted * (m / shifted.sum())
            log_w[i] = np.log(weights[i])
        iterations += 1
        jc = game.joint_penalty(weights, flags)

    converged = jc <= eps
    if not converged:
        logger.warning("IRM 在 %d 次迭代後未收斂：J_c=%.4f", iterations, jc)
    result = tuple(b.with_weights(weights[i]) for i, b in enumerate(game.bundles))
    return ReactionResult(result, iterations, float(jc), converged)


def determinize(b):
    """權重乘以先驗最大的樣本索引，平手取最小索引"""
    return int(np.argmax(b.weights * b.prior))


def wasserstein(p1, p2):
    """以軌跡距離為地面成本的精確最佳傳輸距離"""
    a = np.asarray(p1.weights, dtype=float)
    b = np.asarray(p2.weights, dtype=float)
    for w, owner in ((a, p1), (b, p2)):
        total = w.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise NotNormalizable(f"行人 {owner.agent_id} 的權重無法正規化")
    a = a / a.sum()
    b = b / b.sum()
    if not p1.time_base.same_time_base(p2.time_base):
        raise TimeBaseMismatch("兩個分佈的時間基準不一致")
    cost = np.linalg.norm(p1.points[:, None] - p2.points[None], axis=-1).mean(axis=-1)
    return float(ot.emd2(a, b, cost))


@dataclass(frozen=True, eq=False)
class IdpResult:
    value: float
    shifts: dict
    pid: ReactionResult
    tid: ReactionResult

    @property
    def converged(self):
        return self.pid.converged and self.tid.converged


class IdpEvaluator:
    """
    一個規劃週期內共用的 NID 樣本、ψ 表與 PID；
    每條機器人候選軌跡只需再跑一次 TID
    """

    def __init__(self, peds, static_map, params, rng, t0=0.0, dt=DEFAULT_DT, horizon=4.0, awares=None):
        self.params = params
        self.peds = tuple(peds)
        self.awares = awares
        bundles = [sample_nid(p, params.m, horizon, rng.fork(p.id), dt, params.sigma, t0) for p in self.peds]
        self.game = InteractionGame(bundles, params.penalty, static_map)
        self.pid = individual_reaction_modeling(
            bundles, None, None, static_map, params.penalty, params.eps, params.max_iters, game=self.game)
        self._pid_index = [determinize(b) for b in self.pid.bundles]

    def evaluate(self, robot_traj, awares=None):
        awares = self.awares if awares is None else awares
        if awares is None and self.peds:
            awares = awareness_vector(self.peds, robot_traj.point(0))
        tid = individual_reaction_modeling(
            self.game.bundles, robot_traj, awares, None, self.params.penalty,
            self.params.eps, self.params.max_iters, game=self.game)
        shifts = {}
        for k, (b_pid, b_tid) in enumerate(zip(self.pid.bundles, tid.bundles)):
            j_tid = determinize(b_tid)
            j_pid = self._pid_index[k]
            shifts[b_tid.agent_id] = 0.0 if j_tid == j_pid else traj_metric(
                b_tid.trajectories[j_tid], b_pid.trajectories[j_pid])
        value = max(shifts.values()) if shifts else 0.0
        return IdpResult(float(value), shifts, self.pid, tid)


def prune_near(peds, robot_points, radius):
    """保留距離機器人掃掠區域 radius 以內的行人"""
    pts = np.asarray(robot_points, dtype=float).reshape(-1, 2)
    kept = []
    for p in peds:
        if np.min(np.linalg.norm(pts - p.pos.as_array(), axis=1)) <= radius:
            kept.append(p)
    return kept


def idp(robot_traj, peds, static_map, pp=None, m=16, rng=None, params=None, awares=None):
    """單一機器人軌跡的 IDP 值"""
    params = params or IdpParams.from_settings()
    if pp is not None or m != params.m:
        params = IdpParams(m, params.eps, params.max_iters, params.sigma, params.prune_radius, pp or params.penalty)
    rng = rng or Rng(0)
    near = prune_near(peds, robot_traj.points, params.prune_radius)
    if awares is not None:
        lookup = dict(zip([p.id for p in peds], awares))
        awares = [lookup[p.id] for p in near]
    evaluator = IdpEvaluator(near, static_map, params, rng, robot_traj.t0 - robot_traj.dt,
                             robot_traj.dt, robot_traj.horizon, awares)
    return evaluator.evaluate(robot_traj).value
