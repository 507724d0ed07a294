"""
核心幾何型別：向量、軌跡、機器人與行人狀態、靜態地圖、亂數產生器
其他模組都依賴這裡的不可變值型別
"""

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon, box

from .exceptions import EmptyTrajectory, IndexOutOfRange, TimeBaseMismatch

ROBOT_RADIUS = 0.4
PED_RADIUS = 0.25
DEFAULT_DT = 0.25
TIME_TOL = 1e-9


def wrap_angle(angle):
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Vec2:
    """平面向量（公尺）"""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Vec2 分量必須為有限值：({self.x}, {self.y})")
        object.__setattr__(self, 'x', float(self.x))
        object.__setattr__(self, 'y', float(self.y))

    @classmethod
    def of(cls, value):
        if isinstance(value, Vec2):
            return value
        return cls(float(value[0]), float(value[1]))

    def __add__(self, other):
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other):
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, k):
        return Vec2(self.x * k, self.y * k)

    __rmul__ = __mul__

    def __neg__(self):
        return Vec2(-self.x, -self.y)

    def dot(self, other):
        return self.x * other.x + self.y * other.y

    def cross(self, other):
        return self.x * other.y - self.y * other.x

    def norm(self):
        return math.hypot(self.x, self.y)

    def unit(self):
        n = self.norm()
        if n == 0.0:
            return Vec2(0.0, 0.0)
        return Vec2(self.x / n, self.y / n)

    def angle(self):
        return math.atan2(self.y, self.x)

    def as_array(self):
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    固定步長的時間戳記路徑點序列
    points 為 (T, 2) 唯讀陣列，第 k 點的時間為 t0 + k·dt
    """
    t0: float
    dt: float
    points: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt 必須為正：{self.dt}")
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("軌跡含有非有限值")
        pts.flags.writeable = False
        object.__setattr__(self, 'points', pts)
        object.__setattr__(self, 't0', float(self.t0))
        object.__setattr__(self, 'dt', float(self.dt))

    def __len__(self):
        return self.points.shape[0]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def horizon(self):
        return len(self) * self.dt

    @property
    def t_end(self):
        return self.t0 + (len(self) - 1) * self.dt

    @property
    def velocities(self):
        """前向差分速度，最後一點沿用前一段"""
        n = len(self)
        if n < 2:
            return np.zeros((n, 2))
        v = np.diff(self.points, axis=0) / self.dt
        return np.vstack([v, v[-1:]])

    def point(self, index):
        if not 0 <= index < len(self):
            raise IndexOutOfRange(f"索引 {index} 超出軌跡長度 {len(self)}")
        return Vec2(*self.points[index])

    @property
    def end(self):
        return Vec2(*self.points[-1])

    def max_step(self):
        if len(self) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))

    def is_feasible(self, v_max, tol=1e-6):
        return self.max_step() <= v_max * self.dt + tol

    def same_time_base(self, other, check_length=True):
        if abs(self.t0 - other.t0) > TIME_TOL or abs(self.dt - other.dt) > TIME_TOL:
            return False
        return not check_length or len(self) == len(other)

    def position_at(self, t):
        """依時間線性內插位置，超出範圍時取端點"""
        if len(self) == 1:
            return self.points[0].copy()
        s = np.clip((t - self.t0) / self.dt, 0.0, len(self) - 1)
        k = min(int(math.floor(s)), len(self) - 2)
        frac = s - k
        return (1.0 - frac) * self.points[k] + frac * self.points[k + 1]

    def resample(self, dt):
        if abs(dt - self.dt) <= TIME_TOL:
            return self
        span = (len(self) - 1) * self.dt
        count = int(math.floor(span / dt + TIME_TOL)) + 1
        times = self.t0 + dt * np.arange(count)
        pts = np.array([self.position_at(t) for t in times])
        return Trajectory(self.t0, dt, pts)

    def shifted(self, points):
        return Trajectory(self.t0, self.dt, points)

    def __repr__(self):
        return f"Trajectory(t0={self.t0:.3f}, dt={self.dt:.3f}, T={len(self)})"


def _require_time_base(a, b, check_length=True):
    if not a.same_time_base(b, check_length=check_length):
        raise TimeBaseMismatch(f"時間基準不一致：{a!r} vs {b!r}")


def traj_point_distance(a, b, t_index):
    _require_time_base(a, b, check_length=False)
    if not (0 <= t_index < len(a) and 0 <= t_index < len(b)):
        raise IndexOutOfRange(f"索引 {t_index} 不適用於長度 {len(a)} / {len(b)}")
    d = a.points[t_index] - b.points[t_index]
    return math.hypot(d[0], d[1])


def pointwise_distances(a, b):
    _require_time_base(a, b)
    return np.linalg.norm(a.points - b.points, axis=1)


def traj_metric(a, b):
    """時間平均的逐點歐氏距離"""
    return float(np.mean(pointwise_distances(a, b)))


def min_separation(a, b):
    """最小逐點距離及最早達到的索引"""
    if len(a) == 0 or len(b) == 0:
        raise EmptyTrajectory("空軌跡沒有最小距離")
    d = pointwise_distances(a, b)
    k = int(np.argmin(d))
    return float(d[k]), k


@dataclass(frozen=True)
class RobotState:
    pos: Vec2
    heading: float
    speed: float
    time: float = 0.0
    yaw_rate: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.speed) and self.speed >= 0.0):
            raise ValueError(f"速度必須為非負有限值：{self.speed}")

    @property
    def velocity(self):
        return Vec2(self.speed * math.cos(self.heading), self.speed * math.sin(self.heading))


@dataclass(frozen=True)
class Pedestrian:
    """行人（或騎乘者，只差在偏好速度）"""
    id: int
    pos: Vec2
    vel: Vec2
    goal: Vec2
    pref_speed: float
    heading: float
    gaze_dir: Vec2
    radius: float = PED_RADIUS
    kind: str = 'pedestrian'

    def __post_init__(self):
        if not self.pref_speed > 0:
            raise ValueError(f"行人 {self.id} 的偏好速度必須為正")
        if abs(self.gaze_dir.norm() - 1.0) > 1e-9:
            raise ValueError(f"行人 {self.id} 的視線方向必須是單位向量")

    @property
    def heading_vec(self):
        return Vec2(math.cos(self.heading), math.sin(self.heading))


def unit_from_angle(angle):
    return Vec2(math.cos(angle), math.sin(angle))


@dataclass(frozen=True, eq=False)
class StaticMap:
    """
    靜態環境：邊界矩形與凸多邊形障礙物
    bounds = (xmin, ymin, xmax, ymax)
    """
    bounds: tuple
    obstacles: tuple = ()
    resolution: float = 0.1
    _union: object = field(default=None, repr=False)

    def __post_init__(self):
        xmin, ymin, xmax, ymax = (float(v) for v in self.bounds)
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"邊界不合法：{self.bounds}")
        object.__setattr__(self, 'bounds', (xmin, ymin, xmax, ymax))

        frame = box(xmin, ymin, xmax, ymax)
        polys = []
        for obstacle in self.obstacles:
            poly = obstacle if isinstance(obstacle, Polygon) else Polygon(obstacle)
            if poly.area <= 0.0:
                raise ValueError("障礙物多邊形面積必須大於零")
            if not frame.buffer(1e-9).contains(poly):
                raise ValueError("障礙物必須位於地圖邊界內")
            polys.append(poly)
        object.__setattr__(self, 'obstacles', tuple(polys))
        union = shapely.union_all(polys) if polys else None
        if union is not None:
            shapely.prepare(union)
        object.__setattr__(self, '_union', union)

    @property
    def width(self):
        return self.bounds[2] - self.bounds[0]

    @property
    def height(self):
        return self.bounds[3] - self.bounds[1]

    def corners(self):
        xmin, ymin, xmax, ymax = self.bounds
        return [Vec2(xmin, ymin), Vec2(xmax, ymin), Vec2(xmax, ymax), Vec2(xmin, ymax)]

    def in_bounds(self, points, margin=0.0):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        xmin, ymin, xmax, ymax = self.bounds
        return ((pts[:, 0] >= xmin + margin) & (pts[:, 0] <= xmax - margin)
                & (pts[:, 1] >= ymin + margin) & (pts[:, 1] <= ymax - margin))

    def in_obstacle(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self._union is None:
            return np.zeros(len(pts), dtype=bool)
        return shapely.intersects_xy(self._union, pts[:, 0], pts[:, 1])

    def is_free(self, points):
        return self.in_bounds(points) & ~self.in_obstacle(points)

    def clearance(self, points):
        """到最近障礙物的距離；沒有障礙物時為無限大"""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self._union is None:
            return np.full(len(pts), np.inf)
        return shapely.distance(shapely.points(pts), self._union)

    def nearest_obstacle_points(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self._union is None:
            return None
        lines = shapely.shortest_line(shapely.points(pts), self._union)
        coords = shapely.get_coordinates(lines).reshape(-1, 2, 2)
        return coords[:, 1, :]

    def paths_hit_obstacle(self, paths):
        """(N, T, 2) 路徑是否與任何障礙物相交"""
        arr = np.asarray(paths, dtype=float)
        if arr.ndim == 2:
            arr = arr[None]
        if self._union is None:
            return np.zeros(arr.shape[0], dtype=bool)
        if arr.shape[1] < 2:
            return self.in_obstacle(arr[:, 0, :])
        return shapely.intersects(shapely.linestrings(arr), self._union)

    def boundary_samples(self, spacing):
        """沿障礙物外框每隔 spacing 取樣（含頂點）"""
        samples = []
        for poly in self.obstacles:
            ring = np.asarray(poly.exterior.coords)[:-1]
            for a, b in zip(ring, np.roll(ring, -1, axis=0)):
                length = float(np.hypot(*(b - a)))
                count = max(1, int(math.ceil(length / spacing)))
                for k in range(count):
                    samples.append(a + (b - a) * (k / count))
        if not samples:
            return np.zeros((0, 2))
        return np.array(samples)

    def grid(self, h):
        """節點網格座標與自由空間遮罩 (ny, nx)"""
        xmin, ymin, xmax, ymax = self.bounds
        nx = int(round((xmax - xmin) / h)) + 1
        ny = int(round((ymax - ymin) / h)) + 1
        xs = xmin + h * np.arange(nx)
        ys = ymin + h * np.arange(ny)
        gx, gy = np.meshgrid(xs, ys)
        free = ~self.in_obstacle(np.column_stack([gx.ravel(), gy.ravel()])).reshape(ny, nx)
        return xs, ys, free


class Rng:
    """
    可重播的亂數串流
    同一 seed 與 fork 路徑會產生完全相同的序列
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed, path=()):
        self.seed = int(seed) & self.MASK
        self.path = tuple(int(p) & self.MASK for p in path)
        self.counter = 0
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def fork(self, offset):
        return Rng(self.seed, self.path + (offset,))

    def _count(self, size):
        self.counter += 1 if size is None else int(np.prod(size))

    def random(self, size=None):
        self._count(size)
        return self._gen.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        self._count(size)
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        self._count(size)
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        self._count(size)
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        self._count(n)
        return self._gen.permutation(n)

    def bytes(self, n):
        self._count(n)
        return self._gen.bytes(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path}, counter={self.counter})"
