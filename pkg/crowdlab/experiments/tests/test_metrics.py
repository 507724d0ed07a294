from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase

from navigation.exceptions import TruncatedLog

from experiments.harness import EpisodeLimits
from experiments.metrics import (
    AGGREGATE_COLUMNS, MetricsRecord, aggregate, compute_metrics, freezing_count,
    front_density, frontal_count, frontal_mask, mean_jerk,
)


def record(**overrides):
    values = dict(complete_ratio=100.0, success=True, timeout=False, collision=False, freezing_count=0,
                  jerk=1.0, frontal_interactions=0, cumulative_density=0.0, execute_time=10.0)
    values.update(overrides)
    return MetricsRecord(**values)


class MetricFunctionTests(SimpleTestCase):

    def test_freezing_needs_more_than_three_seconds(self):
        self.assertEqual(freezing_count([0.0] * 60, 0.05), 0)
        self.assertEqual(freezing_count([0.0] * 61, 0.05), 1)
        speeds = [1.0] * 5 + [0.01] * 70 + [1.0] * 5 + [0.0] * 70
        self.assertEqual(freezing_count(speeds, 0.05), 2)
        self.assertEqual(freezing_count([], 0.05), 0)

    def test_jerk_of_a_cubic(self):
        t = 0.1 * np.arange(12)
        pos = np.column_stack([t ** 3, np.zeros_like(t)])
        self.assertAlmostEqual(mean_jerk(pos, 0.1), 6.0, places=6)
        self.assertEqual(mean_jerk(pos[:3], 0.1), 0.0)
        line = np.column_stack([t, 2 * t])
        self.assertAlmostEqual(mean_jerk(line, 0.1), 0.0, places=6)

    def test_frontal_mask(self):
        robot = np.array([[0.0, 0.0]])
        heading = np.array([0.0])
        peds = np.array([[[1.0, 0.0], [1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [1.0, 0.2]]])
        vels = np.array([[[-1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]])
        np.testing.assert_array_equal(frontal_mask(robot, heading, peds, vels)[0],
                                      [True, False, False, False, True])

    def test_frontal_counts_rising_edges(self):
        mask = np.array([[True, False], [True, False], [False, True], [True, True]])
        self.assertEqual(frontal_count(mask), 3)
        self.assertEqual(frontal_count(np.zeros((0, 2), dtype=bool)), 0)

    def test_front_density(self):
        n = 10
        robot = np.zeros((n, 2))
        heading = np.zeros(n)
        peds = np.tile([[[0.65, 0.0], [0.65, 2.0], [-0.65, 0.0]]], (n, 1, 1))
        self.assertAlmostEqual(front_density(robot, heading, peds, 0.05), n / 0.4 * 0.05)

    def test_record_validation(self):
        with self.assertRaises(ValueError):
            record(timeout=True)
        with self.assertRaises(ValueError):
            record(complete_ratio=120.0)
        with self.assertRaises(ValueError):
            record(freezing_count=-1)
        self.assertEqual(record(success=False, collision=True).outcome, 'collision')
        self.assertEqual(MetricsRecord.from_dict(dict(record().to_dict(), extra=1)), record())


def episode_log(outcome='timeout', complete=True, steps=41):
    t = 0.05 * np.arange(steps)
    robot = [(ti, 0.1 * k, 0.0, 0.0, 2.0, 0.0) for k, ti in enumerate(t)]
    return SimpleNamespace(complete=complete, outcome=outcome, robot=robot, peds=[], dt=0.05,
                           start=(0.0, 0.0), goal=(10.0, 0.0), limits=EpisodeLimits())


class ComputeMetricsTests(SimpleTestCase):

    def test_partial_progress(self):
        m = compute_metrics(episode_log())
        self.assertAlmostEqual(m.complete_ratio, 40.0)
        self.assertTrue(m.timeout)
        self.assertFalse(m.success)
        self.assertAlmostEqual(m.execute_time, 2.0)
        self.assertEqual(m.freezing_count, 0)
        self.assertEqual(m.frontal_interactions, 0)
        self.assertEqual(m.cumulative_density, 0.0)

    def test_success_is_complete(self):
        self.assertEqual(compute_metrics(episode_log('success')).complete_ratio, 100.0)

    def test_truncated_logs(self):
        with self.assertRaises(TruncatedLog):
            compute_metrics(episode_log(complete=False))
        with self.assertRaises(TruncatedLog):
            compute_metrics(episode_log(outcome=''))
        with self.assertRaises(TruncatedLog):
            compute_metrics(episode_log(steps=1))


class AggregateTests(SimpleTestCase):

    def outcome(self, metrics, planner='mip', grid=None):
        return SimpleNamespace(scenario='NC-DT', planner=planner, grid_value=grid, metrics=metrics)

    def test_rates_are_percentages(self):
        outcomes = [
            self.outcome(record(freezing_count=1, frontal_interactions=2)),
            self.outcome(record(success=False, collision=True, complete_ratio=50.0, frontal_interactions=1)),
            self.outcome(record(success=False, timeout=True, complete_ratio=20.0, freezing_count=3)),
            self.outcome(record()),
            self.outcome(None),
            self.outcome(record(), planner='baseline'),
        ]
        rows = aggregate(outcomes)
        self.assertEqual(len(rows), 2)
        row = rows[0]
        self.assertEqual(list(row), AGGREGATE_COLUMNS)
        self.assertEqual((row['episodes'], row['failures']), (4, 1))
        self.assertEqual(row['success_rate'], 40.0)
        self.assertEqual(row['collision_rate'], 20.0)
        self.assertEqual(row['timeout_rate'], 20.0)
        self.assertAlmostEqual(row['complete_ratio'], 67.5)
        self.assertEqual(row['freezing_sum'], 4)
        self.assertEqual(row['frontal_sum'], 3)
        self.assertEqual(rows[1]['planner'], 'baseline')

    def test_rates_use_repeats_as_denominator(self):
        outcomes = [self.outcome(record()), self.outcome(record()),
                    self.outcome(record(success=False, collision=True, complete_ratio=30.0)),
                    self.outcome(None)]
        [row] = aggregate(outcomes)
        repeats = len(outcomes)
        successes = sum(1 for o in outcomes if o.metrics is not None and o.metrics.success)
        collisions = sum(1 for o in outcomes if o.metrics is not None and o.metrics.collision)
        self.assertEqual(row['success_rate'], successes / repeats * 100)
        self.assertEqual(row['collision_rate'], collisions / repeats * 100)
        self.assertEqual(row['timeout_rate'], 0.0)
        self.assertEqual(row['success_rate'] + row['collision_rate'] + row['timeout_rate'],
                         100.0 * row['episodes'] / repeats)

    def test_all_failed(self):
        row = aggregate([self.outcome(None)])[0]
        self.assertEqual(row['episodes'], 0)
        self.assertEqual(row['success_rate'], 0.0)

    def test_grid_values_are_separate_groups(self):
        rows = aggregate([self.outcome(record(), grid=1.0), self.outcome(record(), grid=2.0)])
        self.assertEqual([r['grid_value'] for r in rows], [1.0, 2.0])
