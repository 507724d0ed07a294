"""
行人流場：核密度估計、無機器人情況下的守恆律傳播、時空通量查詢
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import conf
from .core import Vec2
from .exceptions import CFLViolation, ConfigurationError, OutOfDomain

logger = logging.getLogger(__name__)

EPS_DEN = 1e-9
TRUNCATION = 3.0


@dataclass(frozen=True)
class FlowParams:
    h: float = 0.5
    dt_flow: float = 0.5
    kernel_radius: float = 1.0
    horizon: float = 8.0
    tau_relax: float = 1.0
    pressure: float = 0.5
    speed_cap: float = 1.8
    dynamics: bool = True

    def __post_init__(self):
        for name in ('h', 'dt_flow', 'kernel_radius', 'tau_relax', 'speed_cap'):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"FlowParams.{name} 必須為正")
        if self.horizon < 0 or self.pressure < 0:
            raise ConfigurationError("FlowParams.horizon / pressure 不可為負")

    @classmethod
    def from_settings(cls, **overrides):
        values = conf.section('FLOW')
        values.update(overrides)
        return conf.build(cls, values)


@dataclass(frozen=True, eq=False)
class FlowSnapshot:
    """
    單一時刻的網格流場，數值存放在網格節點上
    節點 (iy, ix) 的位置為 origin + h·(ix, iy)
    """
    origin: tuple
    h: float
    rho: np.ndarray
    vel: np.ndarray
    timestamp: float
    free: np.ndarray
    periodic: tuple = (False, False)
    v_des: np.ndarray = None
    clamp_events: int = 0

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        vel = np.array(self.vel, dtype=float)
        free = np.array(self.free, dtype=bool)
        if rho.shape != free.shape or vel.shape != rho.shape + (2,):
            raise ValueError("rho / vel / free 網格尺寸不一致")
        if np.any(rho < 0) or not np.all(np.isfinite(vel)):
            raise ValueError("密度必須非負且速度必須為有限值")
        rho[~free] = 0.0
        vel[~free] = 0.0
        for arr in (rho, vel, free):
            arr.flags.writeable = False
        object.__setattr__(self, 'rho', rho)
        object.__setattr__(self, 'vel', vel)
        object.__setattr__(self, 'free', free)
        if self.v_des is not None:
            v_des = np.array(self.v_des, dtype=float)
            v_des.flags.writeable = False
            object.__setattr__(self, 'v_des', v_des)

    @property
    def shape(self):
        return self.rho.shape

    @property
    def xs(self):
        return self.origin[0] + self.h * np.arange(self.shape[1])

    @property
    def ys(self):
        return self.origin[1] + self.h * np.arange(self.shape[0])

    def total_mass(self):
        return float(self.rho.sum() * self.h * self.h)

    def max_speed(self):
        speeds = np.linalg.norm(self.vel, axis=-1)
        return float(speeds[self.free].max()) if self.free.any() else 0.0

    def replace(self, rho, vel, timestamp, clamp_events=0):
        return FlowSnapshot(self.origin, self.h, rho, vel, timestamp, self.free,
                            self.periodic, self.v_des, clamp_events)


def kernel(d2, R):
    return np.exp(-d2) / (math.pi * R * R)


def _positions(peds):
    if not peds:
        return np.zeros((0, 2)), np.zeros((0, 2))
    pos = np.array([[p.pos.x, p.pos.y] for p in peds], dtype=float)
    vel = np.array([[p.vel.x, p.vel.y] for p in peds], dtype=float)
    return pos, vel


def _kernel_weights(pos, q, R):
    if not R > 0:
        raise ConfigurationError(f"核半徑必須為正：{R}")
    d2 = np.sum((pos - np.asarray(q, dtype=float)) ** 2, axis=-1)
    w = kernel(d2, R)
    return np.where(d2 <= (TRUNCATION * R) ** 2, w, 0.0)


def estimate_density(peds, q, R):
    pos, _ = _positions(peds)
    if len(pos) == 0:
        if not R > 0:
            raise ConfigurationError(f"核半徑必須為正：{R}")
        return 0.0
    return float(_kernel_weights(pos, Vec2.of(q).as_array(), R).sum())


def estimate_velocity(peds, q, R):
    pos, vel = _positions(peds)
    if len(pos) == 0:
        if not R > 0:
            raise ConfigurationError(f"核半徑必須為正：{R}")
        return Vec2(0.0, 0.0)
    w = _kernel_weights(pos, Vec2.of(q).as_array(), R)
    den = w.sum()
    if den < EPS_DEN:
        return Vec2(0.0, 0.0)
    return Vec2(*(w @ vel / den))


def estimate_fields(pos, vel, xs, ys, R):
    """在所有網格節點上估計密度與平均速度"""
    gx, gy = np.meshgrid(xs, ys)
    nodes = np.stack([gx, gy], axis=-1)
    if len(pos) == 0:
        return np.zeros(gx.shape), np.zeros(gx.shape + (2,))
    w = _kernel_weights(pos[None, None, :, :], nodes[:, :, None, :], R)
    rho = w.sum(axis=-1)
    num = np.einsum('yxn,nc->yxc', w, vel)
    safe = np.where(rho < EPS_DEN, 1.0, rho)
    v = np.where((rho < EPS_DEN)[..., None], 0.0, num / safe[..., None])
    return rho, v


# ========== 守恆律傳播 ==========

def _shift(a, step, axis, periodic):
    """沿軸取相鄰節點值；非週期邊界以自身值補上"""
    out = np.roll(a, -step, axis=axis)
    if not periodic:
        index = [slice(None)] * a.ndim
        index[axis] = -1 if step > 0 else 0
        out[tuple(index)] = a[tuple(index)]
    return out


def _neighbor(a, free, step, axis, periodic):
    nb = _shift(a, step, axis, periodic)
    nb_free = _shift(free, step, axis, periodic)
    if not periodic:
        index = [slice(None)] * free.ndim
        index[axis] = -1 if step > 0 else 0
        nb_free = nb_free.copy()
        nb_free[tuple(index)] = False
    mask = nb_free if a.ndim == free.ndim else nb_free[..., None]
    return np.where(mask, nb, a)


def _face_flux(rho, vel_c, free, axis, periodic):
    """上風面通量；面 i 位於節點 i 與 i+1 之間"""
    vel_next = np.roll(vel_c, -1, axis=axis)
    rho_next = np.roll(rho, -1, axis=axis)
    open_face = free & np.roll(free, -1, axis=axis)
    uf = 0.5 * (vel_c + vel_next)
    flux = uf * np.where(uf > 0, rho, rho_next) * open_face
    if not periodic:
        index = [slice(None)] * 2
        index[axis] = -1
        flux[tuple(index)] = 0.0
    return flux


def propagate(s, dt, params=None):
    """前向 Euler 上風格式推進一個時間步"""
    params = params or FlowParams.from_settings()
    h = s.h
    vmax = s.max_speed()
    if vmax > 0.0:
        max_dt = h / (2.0 * vmax)
        if dt > max_dt * (1.0 + 1e-12):
            raise CFLViolation(dt, max_dt)

    rho = np.array(s.rho)
    u = s.vel[..., 0]
    w = s.vel[..., 1]
    free = s.free
    px, py = s.periodic

    fx = _face_flux(rho, u, free, axis=1, periodic=px)
    fy = _face_flux(rho, w, free, axis=0, periodic=py)

    # 通量限制器：流出量不超過格點現有質量
    out = (np.maximum(fx, 0.0) + np.maximum(-np.roll(fx, 1, axis=1), 0.0)
           + np.maximum(fy, 0.0) + np.maximum(-np.roll(fy, 1, axis=0), 0.0))
    with np.errstate(divide='ignore', invalid='ignore'):
        alpha = np.where(out > 0.0, np.minimum(1.0, rho * h / (dt * out)), 1.0)
    clamped = int(np.count_nonzero(alpha < 1.0))
    fx = np.where(fx > 0.0, fx * alpha, fx * np.roll(alpha, -1, axis=1))
    fy = np.where(fy > 0.0, fy * alpha, fy * np.roll(alpha, -1, axis=0))

    div = (fx - np.roll(fx, 1, axis=1)) + (fy - np.roll(fy, 1, axis=0))
    rho_new = np.maximum(rho - dt / h * div, 0.0)

    vel = s.vel
    dvx_back = (vel - _neighbor(vel, free, -1, 1, px)) / h
    dvx_fwd = (_neighbor(vel, free, 1, 1, px) - vel) / h
    dvy_back = (vel - _neighbor(vel, free, -1, 0, py)) / h
    dvy_fwd = (_neighbor(vel, free, 1, 0, py) - vel) / h
    dvdx = np.where((u > 0)[..., None], dvx_back, dvx_fwd)
    dvdy = np.where((w > 0)[..., None], dvy_back, dvy_fwd)
    adv = u[..., None] * dvdx + w[..., None] * dvdy

    force = np.zeros_like(vel)
    if params.dynamics:
        if s.v_des is not None:
            force += (s.v_des - vel) / params.tau_relax
        grad_x = (_neighbor(rho, free, 1, 1, px) - _neighbor(rho, free, -1, 1, px)) / (2.0 * h)
        grad_y = (_neighbor(rho, free, 1, 0, py) - _neighbor(rho, free, -1, 0, py)) / (2.0 * h)
        force -= params.pressure * np.stack([grad_x, grad_y], axis=-1)

    vel_new = vel - dt * adv + dt * force
    speed = np.linalg.norm(vel_new, axis=-1, keepdims=True)
    scale = np.where(speed > params.speed_cap, params.speed_cap / np.maximum(speed, 1e-300), 1.0)
    vel_new = vel_new * scale

    if clamped:
        logger.debug("propagate: %d 個格點觸發通量限制", clamped)
    return s.replace(rho_new, vel_new, s.timestamp + dt, clamped)


@dataclass(frozen=True, eq=False)
class FlowMap:
    """固定間隔的流場快照序列，時間以建構時刻為 0"""
    snapshots: tuple
    dt_flow: float
    kernel_radius: float
    t_origin: float = 0.0
    clamp_events: int = 0

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise ValueError("FlowMap 至少需要一個快照")
        first = snaps[0]
        for snap in snaps[1:]:
            if snap.shape != first.shape or snap.h != first.h or snap.origin != first.origin:
                raise ValueError("所有快照必須共用同一網格")
        object.__setattr__(self, 'snapshots', snaps)
        object.__setattr__(self, '_rho', np.stack([s.rho for s in snaps]))
        object.__setattr__(self, '_vel', np.stack([s.vel for s in snaps]))

    @property
    def horizon(self):
        return (len(self.snapshots) - 1) * self.dt_flow

    @property
    def h(self):
        return self.snapshots[0].h

    @property
    def origin(self):
        return self.snapshots[0].origin

    @property
    def shape(self):
        return self.snapshots[0].shape

    @property
    def extent(self):
        ny, nx = self.shape
        x0, y0 = self.origin
        return x0, y0, x0 + (nx - 1) * self.h, y0 + (ny - 1) * self.h

    def sample(self, points, times, clip=True):
        """
        向量化查詢
        clip=True 時網格外的點密度為 0，時間夾在 [0, horizon]
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ts = np.broadcast_to(np.asarray(times, dtype=float), (len(pts),))
        xmin, ymin, xmax, ymax = self.extent
        inside = ((pts[:, 0] >= xmin) & (pts[:, 0] <= xmax)
                  & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax))
        if not clip:
            if not np.all(inside):
                raise OutOfDomain("查詢點位於流場範圍之外")
            if np.any(ts < -1e-9) or np.any(ts > self.horizon + 1e-9):
                raise OutOfDomain(f"查詢時間超出 [0, {self.horizon}]")
        ts = np.clip(ts, 0.0, self.horizon)

        ny, nx = self.shape
        gx = np.clip((pts[:, 0] - xmin) / self.h, 0.0, nx - 1)
        gy = np.clip((pts[:, 1] - ymin) / self.h, 0.0, ny - 1)
        ix = np.minimum(np.floor(gx).astype(int), max(nx - 2, 0))
        iy = np.minimum(np.floor(gy).astype(int), max(ny - 2, 0))
        fx = gx - ix
        fy = gy - iy
        ix1 = np.minimum(ix + 1, nx - 1)
        iy1 = np.minimum(iy + 1, ny - 1)

        nt = len(self.snapshots)
        gt = ts / self.dt_flow if nt > 1 else np.zeros_like(ts)
        it = np.minimum(np.floor(gt).astype(int), max(nt - 2, 0))
        ft = gt - it
        it1 = np.minimum(it + 1, nt - 1)

        r0 = (1 - fx) * (1 - fy) * self._rho[it, iy, ix] + fx * (1 - fy) * self._rho[it, iy, ix1] \
            + (1 - fx) * fy * self._rho[it, iy1, ix] + fx * fy * self._rho[it, iy1, ix1]
        r1 = (1 - fx) * (1 - fy) * self._rho[it1, iy, ix] + fx * (1 - fy) * self._rho[it1, iy, ix1] \
            + (1 - fx) * fy * self._rho[it1, iy1, ix] + fx * fy * self._rho[it1, iy1, ix1]
        rho = (1 - ft) * r0 + ft * r1

        wx = ((1 - fx) * (1 - fy))[:, None]
        wx1 = (fx * (1 - fy))[:, None]
        wy1 = ((1 - fx) * fy)[:, None]
        wxy = (fx * fy)[:, None]
        v0 = wx * self._vel[it, iy, ix] + wx1 * self._vel[it, iy, ix1] \
            + wy1 * self._vel[it, iy1, ix] + wxy * self._vel[it, iy1, ix1]
        v1 = wx * self._vel[it1, iy, ix] + wx1 * self._vel[it1, iy, ix1] \
            + wy1 * self._vel[it1, iy1, ix] + wxy * self._vel[it1, iy1, ix1]
        vel = (1 - ft)[:, None] * v0 + ft[:, None] * v1

        if clip:
            rho = np.where(inside, rho, 0.0)
            vel = np.where(inside[:, None], vel, 0.0)
        return rho, vel


def flux_query(fm, q, t):
    """單點查詢 (ρ, v)；超出範圍時拋出 OutOfDomain"""
    q = Vec2.of(q)
    rho, vel = fm.sample([[q.x, q.y]], [t], clip=False)
    return float(rho[0]), Vec2(*vel[0])


def build_flowmap(peds, static_map, horizon, dt_flow=None, params=None, t_origin=0.0):
    """
    以核估計建立第 0 張快照，再重複傳播到 horizon
    每個 Δt_flow 內依 CFL 條件切分子步
    """
    params = params or FlowParams.from_settings()
    dt_flow = dt_flow or params.dt_flow
    if not horizon > 0:
        raise ConfigurationError(f"horizon 必須為正：{horizon}")

    xs, ys, free = static_map.grid(params.h)
    pos, vel = _positions(peds)
    speeds = np.linalg.norm(vel, axis=1, keepdims=True) if len(vel) else np.zeros((0, 1))
    vel = vel * np.where(speeds > params.speed_cap, params.speed_cap / np.maximum(speeds, 1e-300), 1.0)
    rho0, v0 = estimate_fields(pos, vel, xs, ys, params.kernel_radius)

    v_des = None
    if params.dynamics and len(pos):
        desired = np.array([
            (p.goal - p.pos).unit().as_array() * min(p.pref_speed, params.speed_cap)
            for p in peds
        ])
        _, v_des = estimate_fields(pos, desired, xs, ys, params.kernel_radius)

    snap = FlowSnapshot((float(xs[0]), float(ys[0])), params.h, rho0, v0, 0.0, free, v_des=v_des)
    snaps = [snap]
    steps = int(math.ceil(horizon / dt_flow - 1e-9))
    substeps = max(1, int(math.ceil(dt_flow * 2.0 * params.speed_cap / params.h - 1e-9)))
    dt_sub = dt_flow / substeps
    clamp_total = 0
    for k in range(steps):
        for _ in range(substeps):
            snap = propagate(snap, dt_sub, params)
            clamp_total += snap.clamp_events
        snap = snap.replace(snap.rho, snap.vel, (k + 1) * dt_flow)
        snaps.append(snap)

    cells = free.size * steps * substeps
    if cells and clamp_total > 1e-3 * cells:
        logger.warning("流場傳播的通量限制事件過多：%d / %d", clamp_total, cells)
    return FlowMap(tuple(snaps), dt_flow, params.kernel_radius, t_origin, clamp_total)


def write_flowmap_csv(fm, fh, t_offset=0.0):
    """每個格點一列：t, ix, iy, rho, vx, vy"""
    writer = csv.writer(fh)
    writer.writerow(['t', 'ix', 'iy', 'rho', 'vx', 'vy'])
    for snap in fm.snapshots:
        ny, nx = snap.shape
        for iy in range(ny):
            for ix in range(nx):
                vx, vy = snap.vel[iy, ix]
                writer.writerow([f"{snap.timestamp + t_offset:.3f}", ix, iy,
                                 f"{snap.rho[iy, ix]:.6g}", f"{vx:.6g}", f"{vy:.6g}"])
