"""
流干擾懲罰（FDP）

候選軌跡終點 → 意圖地形三角化 → 流敏感 A* → GP 先驗 MAP 最佳化 → 流干擾積分
"""

import csv
import logging
import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
import shapely
from scipy.spatial import Delaunay, QhullError

from . import conf
from .core import Vec2
from .exceptions import (
    ConfigurationError, DegenerateTriangulation, DisconnectedGraph, GoalBlocked, NonFiniteObjective,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FdpParams:
    w_rc: float = 2.0
    w_lc: float = 0.5
    sigma_f: float = 0.5
    qc: float = 0.5
    f_tol: float = 1e-3
    max_iters: int = 50
    envelope_margin: float = 0.6
    robot_radius: float = 0.4
    waypoint_dt: float = 0.5
    max_waypoints: int = 16
    quad_n: int = 4
    boundary_spacing: float = 1.0
    unreachable_cost: float = 1000.0
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.quad_n < 1 or self.max_iters < 1 or self.max_waypoints < 2:
            raise ConfigurationError("FdpParams 數值不合法")
        for name in ('sigma_f', 'qc', 'f_tol', 'waypoint_dt', 'boundary_spacing', 'fd_step'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"FdpParams.{name} 必須為正")

    @property
    def envelope_radius(self):
        return self.robot_radius + self.envelope_margin

    @classmethod
    def from_settings(cls, **overrides):
        values = conf.section('FDP')
        values.update(overrides)
        return conf.build(cls, values)


# ========== 意圖地形三角化 ==========

@dataclass(frozen=True, eq=False)
class TriangleGraph:
    vertices: np.ndarray
    triangles: np.ndarray
    neighbors: np.ndarray
    delaunay: object
    simplex_map: np.ndarray

    @property
    def size(self):
        return len(self.triangles)

    def locate(self, point):
        """包含該點的三角形索引，不在任何三角形內時為 -1"""
        p = Vec2.of(point)
        s = int(self.delaunay.find_simplex(np.array([[p.x, p.y]]))[0])
        return -1 if s < 0 else int(self.simplex_map[s])

    def adjacency(self):
        return {t: [int(n) for n in self.neighbors[t] if n >= 0] for t in range(self.size)}

    def vertex_index(self, point, tol=1e-6):
        d = np.linalg.norm(self.vertices - Vec2.of(point).as_array(), axis=1)
        k = int(np.argmin(d))
        return k if d[k] <= tol else -1

    def faces_around(self, vertex):
        return [t for t in range(self.size) if vertex in self.triangles[t]]

    def edge(self, t, k):
        """第 t 個三角形中與頂點 k 相對的邊（頂點索引，已排序）"""
        tri = self.triangles[t]
        a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
        return (int(min(a, b)), int(max(a, b)))

    def midpoint(self, edge):
        return 0.5 * (self.vertices[edge[0]] + self.vertices[edge[1]])

    def shared_edges(self, t):
        return [self.edge(t, k) for k in range(3) if self.neighbors[t][k] >= 0]


def triangulate(peds, static_map, anchors=(), spacing=1.0):
    """
    以行人位置、障礙物邊界取樣點與錨點做 Delaunay 三角化，
    再移除與障礙物重疊的三角形
    """
    parts = []
    if peds:
        parts.append(np.array([[p.pos.x, p.pos.y] for p in peds]))
    if static_map is not None:
        parts.append(static_map.boundary_samples(spacing))
    if anchors:
        parts.append(np.array([[a.x, a.y] for a in map(Vec2.of, anchors)]))
    pts = np.vstack(parts) if parts else np.zeros((0, 2))

    if len(pts):
        _, first = np.unique(np.round(pts, 6), axis=0, return_index=True)
        pts = pts[np.sort(first)]
    if len(pts) < 3 or np.linalg.matrix_rank(pts - pts[0], tol=1e-9) < 2:
        raise DegenerateTriangulation(f"三角化需要至少 3 個不共線頂點（目前 {len(pts)} 個）")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateTriangulation(str(exc)) from exc

    simplices = tri.simplices
    keep = np.ones(len(simplices), dtype=bool)
    if static_map is not None and static_map.obstacles:
        polys = shapely.polygons(pts[simplices])
        union = shapely.union_all(static_map.obstacles)
        overlap = shapely.area(shapely.intersection(polys, union))
        keep = overlap <= 1e-6 * np.maximum(shapely.area(polys), 1e-12)

    simplex_map = np.full(len(simplices), -1, dtype=int)
    simplex_map[keep] = np.arange(int(keep.sum()))
    neighbors = tri.neighbors[keep].copy()
    valid = neighbors >= 0
    neighbors[valid] = simplex_map[neighbors[valid]]
    return TriangleGraph(pts, simplices[keep].copy(), neighbors, tri, simplex_map)


# ========== 流敏感圖搜尋 ==========

def _flow_costs(seg, flux):
    """seg (N, 2)、flux = ρv (N, 2)"""
    rc = np.maximum(-np.sum(seg * flux, axis=1), 0.0)
    lc = np.abs(seg[:, 0] * flux[:, 1] - seg[:, 1] * flux[:, 0])
    return rc, lc


def edge_flow_costs(seg_start, seg_end, fm, t):
    """線段中點在時間 t 的阻力代價 RC 與側向代價 LC"""
    from .flowfield import flux_query

    a, b = Vec2.of(seg_start), Vec2.of(seg_end)
    for p in (a, b):
        fm.sample([[p.x, p.y]], [t], clip=False)
    rho, vel = flux_query(fm, (a + b) * 0.5, t)
    seg = (b - a).as_array()[None]
    flux = (vel * rho).as_array()[None]
    rc, lc = _flow_costs(seg, flux)
    return float(rc[0]), float(lc[0])


@dataclass(frozen=True, eq=False)
class FlowPath:
    points: np.ndarray
    times: np.ndarray
    cost: float

    @property
    def length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))


def build_search_graph(g, start, goal, fm, speed, w_rc=2.0, w_lc=0.5, t_start=0.0):
    """節點為共用邊中點與起終點的有向圖，邊代價 = 長度 + w_rc·RC + w_lc·LC"""
    start, goal = Vec2.of(start), Vec2.of(goal)
    s_tri, g_tri = g.locate(start), g.locate(goal)
    if s_tri < 0:
        raise GoalBlocked(f"起點 ({start.x:.2f}, {start.y:.2f}) 不在自由空間三角形內")
    if g_tri < 0:
        raise GoalBlocked(f"終點 ({goal.x:.2f}, {goal.y:.2f}) 不在自由空間三角形內")

    positions = {'start': start.as_array(), 'goal': goal.as_array()}
    arcs = []
    for t in range(g.size):
        edges = g.shared_edges(t)
        for e in edges:
            positions.setdefault(e, g.midpoint(e))
        for a in edges:
            for b in edges:
                if a != b:
                    arcs.append((a, b))
    for e in g.shared_edges(s_tri):
        arcs.append(('start', e))
    for e in g.shared_edges(g_tri):
        arcs.append((e, 'goal'))
    if s_tri == g_tri:
        arcs.append(('start', 'goal'))

    graph = nx.DiGraph()
    for node, pos in positions.items():
        graph.add_node(node, pos=pos)
    if arcs:
        tail = np.array([positions[u] for u, _ in arcs])
        head = np.array([positions[v] for _, v in arcs])
        seg = head - tail
        mid = 0.5 * (tail + head)
        times = t_start + np.linalg.norm(mid - positions['start'], axis=1) / speed
        rho, vel = fm.sample(mid, times, clip=True)
        rc, lc = _flow_costs(seg, rho[:, None] * vel)
        length = np.linalg.norm(seg, axis=1)
        weights = length + w_rc * rc + w_lc * lc
        graph.add_weighted_edges_from((u, v, float(c)) for (u, v), c in zip(arcs, weights))
    return graph


def flow_astar(g, start, goal, fm, speed, w_rc=2.0, w_lc=0.5, t_start=0.0):
    """A* 搜尋（歐氏距離啟發式），以等速指定時間戳"""
    graph = build_search_graph(g, start, goal, fm, speed, w_rc, w_lc, t_start)
    pos = nx.get_node_attributes(graph, 'pos')

    def heuristic(u, v):
        return float(np.linalg.norm(pos[u] - pos[v]))

    try:
        nodes = nx.astar_path(graph, 'start', 'goal', heuristic=heuristic, weight='weight')
    except nx.NetworkXNoPath as exc:
        raise DisconnectedGraph("三角圖中起點與終點不連通") from exc

    points = np.array([pos[n] for n in nodes])
    cost = sum(graph[u][v]['weight'] for u, v in zip(nodes[:-1], nodes[1:]))
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    return FlowPath(points, t_start + arc / speed, float(cost))


# ========== GP 先驗 ==========

@dataclass(frozen=True, eq=False)
class GpPath:
    positions: np.ndarray
    velocities: np.ndarray
    dt: float
    qc: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        vel = np.array(self.velocities, dtype=float).reshape(-1, 2)
        qc = np.array(self.qc, dtype=float)
        if qc.ndim == 0:
            qc = qc * np.eye(2)
        if len(pos) < 3 or len(vel) != len(pos):
            raise ConfigurationError("GpPath 至少需要 3 個路徑點（F ≥ 2）")
        if not self.dt > 0:
            raise ConfigurationError("GpPath.dt 必須為正")
        if not np.allclose(qc, qc.T):
            raise ConfigurationError("Qc 必須對稱")
        try:
            np.linalg.cholesky(qc)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("Qc 必須為正定矩陣") from exc
        object.__setattr__(self, 'positions', pos)
        object.__setattr__(self, 'velocities', vel)
        object.__setattr__(self, 'qc', qc)

    @property
    def F(self):
        return len(self.positions) - 1

    @property
    def states(self):
        return np.hstack([self.positions, self.velocities])

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.F + 1)


def transition(dt):
    phi = np.eye(4)
    phi[0:2, 2:4] = dt * np.eye(2)
    return phi


def process_noise(dt, qc):
    """等速度模型在 dt 內的過程雜訊共變異數"""
    q = np.zeros((4, 4))
    q[0:2, 0:2] = dt ** 3 / 3.0 * qc
    q[0:2, 2:4] = dt ** 2 / 2.0 * qc
    q[2:4, 0:2] = dt ** 2 / 2.0 * qc
    q[2:4, 2:4] = dt * qc
    return q


def gp_prior(path):
    phi = transition(path.dt)
    q = process_noise(path.dt, path.qc)
    states = path.states
    return [(states[i] - phi @ states[i - 1], q) for i in range(1, path.F + 1)]


def prior_cost(path):
    return float(sum(e @ np.linalg.solve(q, e) for e, q in gp_prior(path)))


# ========== 流干擾似然 ==========

@dataclass(frozen=True)
class Waypoint:
    t: float
    pos: Vec2
    vel: Vec2


def _quadrature(n, radius):
    radii = (np.arange(n) + 0.5) * radius / n
    angles = (np.arange(n) + 0.5) * 2.0 * math.pi / n
    rr, aa = np.meshgrid(radii, angles, indexing='ij')
    offsets = np.column_stack([(rr * np.cos(aa)).ravel(), (rr * np.sin(aa)).ravel()])
    weights = (rr * (radius / n) * (2.0 * math.pi / n)).ravel()
    return offsets, weights


def likelihood_batch(t0, p0, v0, t1, p1, v1, fm, radius, quad_n):
    """
    批次計算 h：各區間 [t0, t1] 上以中點法積分時間、
    以極座標網格積分機器人周圍圓盤的 ρ0·|ξ_v − v0|
    """
    t0, t1 = np.atleast_1d(t0).astype(float), np.atleast_1d(t1).astype(float)
    p0, v0, p1, v1 = (np.atleast_2d(a).astype(float) for a in (p0, v0, p1, v1))
    batch = len(t0)
    s = (np.arange(quad_n) + 0.5) / quad_n
    offsets, weights = _quadrature(quad_n, radius)

    times = t0[:, None] + s[None] * (t1 - t0)[:, None]                       # (B, n)
    centers = p0[:, None] + s[None, :, None] * (p1 - p0)[:, None]            # (B, n, 2)
    robot_v = v0[:, None] + s[None, :, None] * (v1 - v0)[:, None]            # (B, n, 2)
    pts = centers[:, :, None, :] + offsets[None, None]                       # (B, n, Q, 2)
    tq = np.broadcast_to(times[:, :, None], pts.shape[:3])
    rho, vel = fm.sample(pts.reshape(-1, 2), tq.reshape(-1), clip=True)
    rho = rho.reshape(pts.shape[:3])
    vel = vel.reshape(pts.shape)
    mismatch = np.linalg.norm(robot_v[:, :, None, :] - vel, axis=-1)
    spatial = np.sum(rho * mismatch * weights, axis=-1)                      # (B, n)
    return spatial.sum(axis=1) * (t1 - t0) / quad_n if batch else np.zeros(0)


def flow_likelihood(wp_prev, wp, fm, envelope_radius, quad_n):
    if not envelope_radius > 0 or quad_n < 1:
        raise ConfigurationError("envelope_radius 必須為正且 quad_n ≥ 1")
    h = likelihood_batch(wp_prev.t, wp_prev.pos.as_array(), wp_prev.vel.as_array(),
                         wp.t, wp.pos.as_array(), wp.vel.as_array(), fm, envelope_radius, quad_n)
    return float(h[0])


# ========== MAP 最佳化 ==========

class MapProblem:
    """
    變數 x = 內部路徑點位置 + 所有路徑點速度（端點位置固定）
    殘差 = 白化先驗殘差 L⁻¹e_i（F 組）與 h_i / σ_f（F 組；h_0 恆為 0）
    """

    def __init__(self, path, fm, params):
        self.path = path
        self.fm = fm
        self.params = params
        self.F = path.F
        self.phi = transition(path.dt)
        self.q = process_noise(path.dt, path.qc)
        self.whiten = np.linalg.inv(np.linalg.cholesky(self.q))
        self.fixed_start = path.positions[0].copy()
        self.fixed_end = path.positions[-1].copy()
        self.times = path.times
        self._prior_jac = self._build_prior_jacobian()

    @property
    def fixed_endpoints(self):
        return (True, True)

    @property
    def size(self):
        return 2 * (self.F - 1) + 2 * (self.F + 1)

    def pack(self, positions, velocities):
        return np.concatenate([positions[1:-1].ravel(), velocities.ravel()])

    def unpack(self, x):
        k = 2 * (self.F - 1)
        positions = np.vstack([self.fixed_start, x[:k].reshape(-1, 2), self.fixed_end])
        velocities = x[k:].reshape(-1, 2)
        return positions, velocities

    def x0(self):
        return self.pack(self.path.positions, self.path.velocities)

    def to_path(self, x):
        positions, velocities = self.unpack(x)
        return GpPath(positions, velocities, self.path.dt, self.path.qc, self.path.t0)

    def _state_index(self, i, c):
        """路徑點 i 的狀態分量 c（0,1 位置；2,3 速度）對應的變數索引；固定者為 None"""
        if c < 2:
            if i == 0 or i == self.F:
                return None
            return 2 * (i - 1) + c
        return 2 * (self.F - 1) + 2 * i + (c - 2)

    def _build_prior_jacobian(self):
        jac = np.zeros((4 * self.F, self.size))
        for i in range(1, self.F + 1):
            rows = slice(4 * (i - 1), 4 * i)
            block_cur = self.whiten
            block_prev = -self.whiten @ self.phi
            for c in range(4):
                col = self._state_index(i, c)
                if col is not None:
                    jac[rows, col] += block_cur[:, c]
                col = self._state_index(i - 1, c)
                if col is not None:
                    jac[rows, col] += block_prev[:, c]
        return jac

    def prior_residuals(self, x):
        positions, velocities = self.unpack(x)
        states = np.hstack([positions, velocities])
        e = states[1:] - states[:-1] @ self.phi.T
        return (e @ self.whiten.T).ravel()

    def likelihood_values(self, x):
        positions, velocities = self.unpack(x)
        return likelihood_batch(self.times[:-1], positions[:-1], velocities[:-1],
                                self.times[1:], positions[1:], velocities[1:],
                                self.fm, self.params.envelope_radius, self.params.quad_n)

    def residuals(self, x):
        return np.concatenate([self.prior_residuals(x), self.likelihood_values(x) / self.params.sigma_f])

    def objective(self, x):
        r = self.residuals(x)
        return 0.5 * float(r @ r)

    def likelihood_jacobian(self, x):
        """以中央差分計算 ∂h_i / ∂(ξ_{i−1}, ξ_i)，一次批次評估"""
        positions, velocities = self.unpack(x)
        step = self.params.fd_step
        F = self.F
        states = np.hstack([positions, velocities])
        base_prev = np.repeat(states[:-1], 16, axis=0).reshape(F, 16, 4)
        base_cur = np.repeat(states[1:], 16, axis=0).reshape(F, 16, 4)
        for k in range(8):
            target = base_prev if k < 4 else base_cur
            c = k % 4
            target[:, 2 * k, c] += step
            target[:, 2 * k + 1, c] -= step
        t_prev = np.repeat(self.times[:-1], 16)
        t_cur = np.repeat(self.times[1:], 16)
        prev = base_prev.reshape(-1, 4)
        cur = base_cur.reshape(-1, 4)
        h = likelihood_batch(t_prev, prev[:, :2], prev[:, 2:], t_cur, cur[:, :2], cur[:, 2:],
                             self.fm, self.params.envelope_radius, self.params.quad_n).reshape(F, 16)
        deriv = (h[:, 0::2] - h[:, 1::2]) / (2.0 * step)

        jac = np.zeros((F, self.size))
        for i in range(1, F + 1):
            for k in range(8):
                waypoint = i - 1 if k < 4 else i
                col = self._state_index(waypoint, k % 4)
                if col is not None:
                    jac[i - 1, col] += deriv[i - 1, k]
        return jac

    def jacobian(self, x):
        return np.vstack([self._prior_jac, self.likelihood_jacobian(x) / self.params.sigma_f])

    def gradient(self, x):
        return self.jacobian(x).T @ self.residuals(x)


@dataclass(frozen=True, eq=False)
class MapResult:
    path: GpPath
    fdp_value: float
    converged: bool
    iterations: int
    history: tuple


def initial_path(route, params, qc=None):
    """將搜尋折線依時間重取樣為 GP 路徑點，間隔約 waypoint_dt"""
    total = float(route.times[-1] - route.times[0])
    F = int(np.clip(math.ceil(total / params.waypoint_dt - 1e-9), 2, params.max_waypoints))
    dt = total / F
    times = route.times[0] + dt * np.arange(F + 1)
    positions = np.column_stack([np.interp(times, route.times, route.points[:, c]) for c in range(2)])
    velocities = np.gradient(positions, dt, axis=0)
    qc = params.qc * np.eye(2) if qc is None else qc
    return GpPath(positions, velocities, dt, qc, float(route.times[0]))


def optimize_map(init, fm, params=None):
    """Levenberg–Marquardt 求解 MAP；只接受使目標函數下降的步"""
    params = params or FdpParams.from_settings()
    path = init if isinstance(init, GpPath) else initial_path(init, params)
    problem = MapProblem(path, fm, params)

    x = problem.x0()
    r = problem.residuals(x)
    f = 0.5 * float(r @ r)
    if not np.isfinite(f):
        raise NonFiniteObjective("MAP 初始目標函數非有限值")

    lam = 1e-3
    history = [f]
    converged = False
    iterations = 0
    while iterations < params.max_iters:
        jac = problem.jacobian(x)
        grad = jac.T @ r
        hess = jac.T @ jac
        improved = False
        for _ in range(12):
            damped = hess + lam * np.diag(np.diag(hess) + 1e-9)
            try:
                delta = -np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = x + delta
            r_new = problem.residuals(x_new)
            f_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(f_new) and f_new < f:
                improved = True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        iterations += 1
        if not improved:
            converged = True
            break
        decrease = f - f_new
        x, r, f = x_new, r_new, f_new
        history.append(f)
        if decrease < params.f_tol:
            converged = True
            break

    if not np.isfinite(f):
        raise NonFiniteObjective("MAP 目標函數非有限值")
    if not converged:
        logger.warning("MAP 最佳化達到迭代上限 %d", params.max_iters)
    value = float(np.sum(problem.likelihood_values(x)))
    return MapResult(problem.to_path(x), value, converged, iterations, tuple(history))


# ========== FDP ==========

@dataclass(frozen=True, eq=False)
class FdpResult:
    value: float
    reachable: bool
    route: FlowPath = None
    map_result: MapResult = None

    @property
    def converged(self):
        return self.map_result is None or self.map_result.converged


def fdp(robot_candidate, goal, peds, static_map, fm, params=None, graph=None, speed=1.2, t_start=None):
    """以候選軌跡終點為起點評估剩餘路線的流干擾"""
    params = params or FdpParams.from_settings()
    start = robot_candidate.end
    goal = Vec2.of(goal)
    if t_start is None:
        t_start = robot_candidate.t_end - fm.t_origin
    if (goal - start).norm() < 1e-6:
        return FdpResult(0.0, True)

    try:
        if graph is None:
            anchors = [start, goal] + (static_map.corners() if static_map is not None else [])
            graph = triangulate(peds, static_map, anchors, params.boundary_spacing)
        route = flow_astar(graph, start, goal, fm, speed, params.w_rc, params.w_lc, t_start)
    except (GoalBlocked, DisconnectedGraph, DegenerateTriangulation) as exc:
        logger.debug("FDP 無法到達目標：%s", exc)
        return FdpResult(params.unreachable_cost, False)

    if route.times[-1] - route.times[0] <= 1e-9:
        return FdpResult(0.0, True, route)
    result = optimize_map(route, fm, params)
    return FdpResult(result.fdp_value, True, route, result)


def write_triangulation_csv(g, fh):
    """頂點列：v, index, x, y；三角形列：t, index, a, b, c"""
    writer = csv.writer(fh)
    writer.writerow(['kind', 'index', 'a', 'b', 'c'])
    for k, (x, y) in enumerate(g.vertices):
        writer.writerow(['v', k, f"{x:.4f}", f"{y:.4f}", ''])
    for k, (a, b, c) in enumerate(g.triangles):
        writer.writerow(['t', k, int(a), int(b), int(c)])
