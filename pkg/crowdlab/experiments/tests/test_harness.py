import shutil
import tempfile
from pathlib import Path

from django.test import SimpleTestCase, TestCase, override_settings, tag

from navigation.exceptions import ConfigurationError, TruncatedLog

from experiments.exports import emit_suite, format_row
from experiments.harness import (
    ABLATION_GRIDS, EpisodeLimits, EpisodeLog, ablation_planner, aggregate_replays, replay_matches,
    run_ablation, run_episode, run_suite, store_suite,
)
from experiments.metrics import OUTCOMES
from experiments.models import SuiteRun

from .helpers import TINY_CROWDNAV, tiny_planner, tiny_scenario


class EpisodeLimitsTests(SimpleTestCase):

    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            EpisodeLimits(physics_dt=0.2)
        with self.assertRaises(ConfigurationError):
            EpisodeLimits(plan_every=0)

    def test_time_limit(self):
        self.assertAlmostEqual(EpisodeLimits().limit_for(27.0, 1.2), 3.0 * 27.0 / 1.2)
        self.assertEqual(EpisodeLimits(time_limit=5.0).limit_for(27.0, 1.2), 5.0)

    @override_settings(CROWDNAV={'HARNESS': {'plan_every': 4}})
    def test_from_settings(self):
        limits = EpisodeLimits.from_settings(goal_tolerance=0.3)
        self.assertEqual(limits.plan_every, 4)
        self.assertEqual(limits.goal_tolerance, 0.3)


class AblationPlannerTests(SimpleTestCase):

    def test_grids(self):
        self.assertEqual(ABLATION_GRIDS['ratio'], list(range(1, 10)))
        self.assertEqual(len(ABLATION_GRIDS['speed']), 6)
        self.assertEqual(ABLATION_GRIDS['horizon'][0], 0.0)

    def test_variants(self):
        base = tiny_planner()
        self.assertEqual(ablation_planner('speed', 1.75, base).v_max, 1.75)
        self.assertFalse(ablation_planner('horizon', 0.0, base).idp_enabled)
        self.assertEqual(ablation_planner('ratio', 7, base).w_idp, 7.0)
        with self.assertRaises(ConfigurationError):
            ablation_planner('mass', 1, base)

    def test_bad_requests(self):
        with self.assertRaises(ConfigurationError):
            run_ablation('mass')
        with self.assertRaises(ConfigurationError):
            run_ablation('ratio', grid=[])
        with self.assertRaises(ConfigurationError):
            run_suite([(tiny_scenario(), tiny_planner())], repeats=0)


@tag('slow')
@override_settings(CROWDNAV=TINY_CROWDNAV)
class EpisodeTests(SimpleTestCase):

    def test_episode_ends_with_an_outcome(self):
        log = run_episode(tiny_scenario(), tiny_planner())
        self.assertTrue(log.complete)
        self.assertIn(log.outcome, OUTCOMES)
        self.assertEqual(log.metrics.outcome, log.outcome)
        self.assertEqual(len(log.robot), len(log.peds))
        self.assertEqual(log.episode_id, 'OPEN-2_mip_s3')
        self.assertLessEqual(log.robot[-1][0], 6.0 + 1e-9)
        self.assertEqual(len(log.cycles), len(log.paths))

    def test_same_seed_same_log(self):
        a = run_episode(tiny_scenario(), tiny_planner())
        b = run_episode(tiny_scenario(), tiny_planner())
        self.assertEqual(a.outcome, b.outcome)
        self.assertEqual(a.robot, b.robot)
        self.assertEqual(a.metrics, b.metrics)

    def test_replay(self):
        log = run_episode(tiny_scenario(seed=5), tiny_planner(w_idp=0.0, w_fdp=0.0), planner_label='baseline')
        rows = [format_row(r) for r in log.replay_rows()]
        data = log.to_dict()
        self.assertEqual(data['planner']['label'], 'baseline')
        matches, fresh = replay_matches(data, rows)
        self.assertTrue(matches)
        self.assertEqual(fresh.outcome, log.outcome)

        rows[1] = rows[1][:2] + ['0.0'] + rows[1][3:]
        matches, _ = replay_matches(data, rows)
        self.assertFalse(matches)

    def test_plotdata(self):
        log = run_episode(tiny_scenario(), tiny_planner(), record_plotdata=True)
        self.assertIsNotNone(log.plotdata['graph'])
        self.assertIsNotNone(log.plotdata['flowmap'])


@tag('slow')
@override_settings(CROWDNAV=TINY_CROWDNAV)
class SuiteTests(TestCase):

    def test_suite_with_baseline(self):
        pcfg = tiny_planner()
        result = run_suite([(tiny_scenario(), pcfg), (tiny_scenario(), pcfg.baseline(), 'baseline')], repeats=1)
        self.assertEqual(result.kind, 'suite')
        self.assertEqual([o.planner for o in result.outcomes], ['mip', 'baseline'])
        self.assertEqual(len(result.rows), 2)
        self.assertEqual(result.failures, [])
        self.assertTrue(all(o.log is None for o in result.outcomes))

    def test_failed_cell_is_recorded(self):
        crowded = tiny_scenario(ped_count=400, name='crowded')
        result = run_suite([(crowded, tiny_planner())], repeats=1)
        self.assertEqual(len(result.failures), 1)
        self.assertIn('InfeasibleScenario', result.failures[0].error)
        self.assertEqual(result.rows[0]['failures'], 1)

        suite = store_suite(result, 'crowded')
        episode = suite.episodes.get()
        self.assertEqual(episode.outcome, 'failed')
        self.assertIsNone(episode.metrics)

    def test_ablation_is_stored(self):
        result = run_ablation('ratio', grid=[1, 5], scenarios=[tiny_scenario()], base=tiny_planner(), repeats=1)
        self.assertEqual(result.parameters['ablation_kind'], 'ratio')
        self.assertEqual([o.planner for o in result.outcomes], ['ratio=1', 'ratio=5'])
        self.assertEqual([r['grid_value'] for r in result.rows], [1, 5])

        suite = store_suite(result, 'ratio sweep')
        self.assertEqual(SuiteRun.objects.get().ablation_kind, 'ratio')
        self.assertEqual(suite.episodes.count(), 2)
        self.assertEqual(sorted(suite.episodes.values_list('grid_value', flat=True)), ['1', '5'])

    def test_aggregate_recomputes_from_replay_files(self):
        out = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, out, ignore_errors=True)
        pcfg = tiny_planner()
        result = run_suite([(tiny_scenario(), pcfg), (tiny_scenario(ped_count=400, name='crowded'), pcfg)],
                           repeats=2, keep_logs=True)
        emit_suite(result, out, ('csv', 'json', 'replay'))

        offline = aggregate_replays(out)
        self.assertEqual(offline.rows, result.rows)
        self.assertEqual([o.metrics for o in offline.outcomes], [o.metrics for o in result.outcomes])
        self.assertEqual(offline.rows[1]['failures'], 2)

        (out / 'metrics.csv').unlink()
        [row] = aggregate_replays(out).rows
        self.assertEqual(row, result.rows[0])

    def test_replay_files_rebuild_the_log(self):
        log = run_episode(tiny_scenario(), tiny_planner())
        rows = [format_row(r) for r in log.replay_rows()]
        rebuilt = EpisodeLog.from_replay(log.to_dict(), rows)
        self.assertTrue(rebuilt.complete)
        self.assertEqual(len(rebuilt.robot), len(log.robot))
        self.assertEqual([r[:5] for r in rebuilt.robot], [tuple(float(v) for v in r[:5]) for r in log.robot])

    def test_empty_directory(self):
        out = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, out, ignore_errors=True)
        with self.assertRaises(TruncatedLog):
            aggregate_replays(out)
