import math

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from navigation.core import (
    Rng, RobotState, StaticMap, Trajectory, Vec2,
    min_separation, pointwise_distances, traj_metric, wrap_angle,
)
from navigation.exceptions import EmptyTrajectory, IndexOutOfRange, TimeBaseMismatch

coords = st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False)


def paths(length=6):
    return arrays(np.float64, (length, 2), elements=coords)


class TrajectoryMetricTests(SimpleTestCase):
    """逐點距離的虛擬度量性質"""

    @settings(deadline=None, max_examples=60)
    @given(paths())
    def test_identity(self, pts):
        a = Trajectory(0.0, 0.25, pts)
        self.assertEqual(traj_metric(a, a), 0.0)

    @settings(deadline=None, max_examples=60)
    @given(paths(), paths())
    def test_symmetry(self, p, q):
        a, b = Trajectory(0.0, 0.25, p), Trajectory(0.0, 0.25, q)
        self.assertAlmostEqual(traj_metric(a, b), traj_metric(b, a), places=12)

    @settings(deadline=None, max_examples=60)
    @given(paths(), paths(), paths())
    def test_triangle_inequality(self, p, q, r):
        a, b, c = (Trajectory(1.0, 0.25, x) for x in (p, q, r))
        self.assertLessEqual(traj_metric(a, c), traj_metric(a, b) + traj_metric(b, c) + 1e-9)

    def test_time_base_mismatch(self):
        a = Trajectory(0.0, 0.25, np.zeros((4, 2)))
        with self.assertRaises(TimeBaseMismatch):
            traj_metric(a, Trajectory(0.0, 0.5, np.zeros((4, 2))))
        with self.assertRaises(TimeBaseMismatch):
            pointwise_distances(a, Trajectory(0.1, 0.25, np.zeros((4, 2))))
        with self.assertRaises(TimeBaseMismatch):
            traj_metric(a, Trajectory(0.0, 0.25, np.zeros((5, 2))))

    def test_min_separation_earliest_index(self):
        a = Trajectory(0.0, 0.25, [[0, 0], [1, 0], [2, 0], [3, 0]])
        b = Trajectory(0.0, 0.25, [[0, 3], [1, 1], [2, 1], [3, 2]])
        d, k = min_separation(a, b)
        self.assertEqual(d, 1.0)
        self.assertEqual(k, 1)

    def test_min_separation_empty(self):
        empty = Trajectory(0.0, 0.25, np.zeros((0, 2)))
        with self.assertRaises(EmptyTrajectory):
            min_separation(empty, empty)


class TrajectoryTests(SimpleTestCase):

    def test_times_and_horizon(self):
        t = Trajectory(2.0, 0.5, np.zeros((4, 2)))
        np.testing.assert_allclose(t.times, [2.0, 2.5, 3.0, 3.5])
        self.assertEqual(t.horizon, 2.0)
        self.assertEqual(t.t_end, 3.5)

    def test_points_are_read_only(self):
        t = Trajectory(0.0, 0.25, np.zeros((3, 2)))
        with self.assertRaises(ValueError):
            t.points[0, 0] = 1.0

    def test_point_out_of_range(self):
        t = Trajectory(0.0, 0.25, np.zeros((3, 2)))
        with self.assertRaises(IndexOutOfRange):
            t.point(3)

    def test_rejects_non_finite(self):
        with self.assertRaises(ValueError):
            Trajectory(0.0, 0.25, [[0.0, math.nan]])

    def test_velocities_forward_difference(self):
        t = Trajectory(0.0, 0.5, [[0, 0], [1, 0], [1, 1]])
        np.testing.assert_allclose(t.velocities, [[2, 0], [0, 2], [0, 2]])

    def test_position_at_interpolates_and_clamps(self):
        t = Trajectory(1.0, 1.0, [[0, 0], [2, 0], [2, 2]])
        np.testing.assert_allclose(t.position_at(1.5), [1, 0])
        np.testing.assert_allclose(t.position_at(2.5), [2, 1])
        np.testing.assert_allclose(t.position_at(-10), [0, 0])
        np.testing.assert_allclose(t.position_at(10), [2, 2])

    @settings(deadline=None, max_examples=40)
    @given(paths(5), st.floats(min_value=0.0, max_value=1.0))
    def test_position_at_is_continuous(self, pts, t):
        traj = Trajectory(0.0, 0.25, pts)
        a = traj.position_at(t)
        b = traj.position_at(t + 1e-9)
        # 每段斜率不超過 (100 m / 0.25 s) 的兩倍
        self.assertLess(np.linalg.norm(a - b), 1e-9 * 800 + 1e-12)

    def test_resample(self):
        t = Trajectory(0.0, 0.5, [[0, 0], [1, 0], [2, 0]])
        r = t.resample(0.25)
        self.assertEqual(len(r), 5)
        np.testing.assert_allclose(r.points[:, 0], [0, 0.5, 1, 1.5, 2])


class GeometryTests(SimpleTestCase):

    def test_vec2_ops(self):
        a, b = Vec2(3, 4), Vec2(1, 0)
        self.assertEqual(a.norm(), 5.0)
        self.assertEqual((a - b).x, 2.0)
        self.assertEqual(b.cross(Vec2(0, 1)), 1.0)
        self.assertEqual(Vec2(0, 0).unit(), Vec2(0, 0))
        with self.assertRaises(ValueError):
            Vec2(math.inf, 0)

    @given(st.floats(min_value=-100, max_value=100))
    def test_wrap_angle_range(self, angle):
        w = wrap_angle(angle)
        self.assertGreaterEqual(w, -math.pi)
        self.assertLess(w, math.pi)
        self.assertAlmostEqual(math.cos(w), math.cos(angle), places=9)

    def test_robot_state_rejects_negative_speed(self):
        with self.assertRaises(ValueError):
            RobotState(Vec2(0, 0), 0.0, -0.1)

    def test_static_map_clearance(self):
        m = StaticMap((0, -5, 10, 5), obstacles=[[(1, -1), (2, -1), (2, 1), (1, 1)]])
        self.assertAlmostEqual(m.clearance([[0, 0]])[0], 1.0)
        self.assertTrue(m.in_obstacle([[1.5, 0]])[0])
        self.assertFalse(m.is_free([[1.5, 0]])[0])
        self.assertFalse(m.in_bounds([[11, 0]])[0])
        self.assertTrue(np.isinf(StaticMap((0, 0, 1, 1)).clearance([[0.5, 0.5]])[0]))

    def test_static_map_rejects_outside_obstacle(self):
        with self.assertRaises(ValueError):
            StaticMap((0, 0, 5, 5), obstacles=[[(4, 4), (6, 4), (6, 6)]])

    def test_boundary_samples_include_vertices(self):
        m = StaticMap((0, 0, 10, 10), obstacles=[[(2, 2), (4, 2), (4, 4), (2, 4)]])
        samples = m.boundary_samples(1.0)
        self.assertEqual(len(samples), 8)
        self.assertTrue(any(np.allclose(s, [4, 4]) for s in samples))

    def test_grid_marks_obstacle_nodes(self):
        m = StaticMap((0, 0, 2, 2), obstacles=[[(0.9, 0.9), (1.1, 0.9), (1.1, 1.1), (0.9, 1.1)]])
        xs, ys, free = m.grid(0.5)
        self.assertEqual(free.shape, (5, 5))
        self.assertFalse(free[2, 2])
        self.assertEqual(int((~free).sum()), 1)


class RngTests(SimpleTestCase):

    def test_same_seed_same_stream(self):
        a, b = Rng(7, (1, 2)), Rng(7, (1, 2))
        np.testing.assert_array_equal(a.normal(size=5), b.normal(size=5))

    def test_fork_is_independent_of_parent_draws(self):
        a = Rng(7)
        a.random(100)
        np.testing.assert_array_equal(a.fork(3).random(4), Rng(7).fork(3).random(4))

    def test_forks_differ(self):
        root = Rng(7)
        self.assertFalse(np.array_equal(root.fork(0).random(4), root.fork(1).random(4)))

    def test_counter(self):
        r = Rng(1)
        r.uniform(size=(2, 3))
        r.random()
        self.assertEqual(r.counter, 7)
