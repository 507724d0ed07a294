import math
from types import SimpleNamespace

import numpy as np
from django.test import SimpleTestCase, override_settings
from hypothesis import given, settings, strategies as st

from navigation.core import Rng, RobotState, StaticMap, Vec2
from navigation.crowdsim import ScenarioConfig, SimParams, spawn
from navigation.exceptions import ConfigurationError
from navigation.fdp import FdpParams, triangulate
from navigation.flowfield import FlowParams
from navigation.idp import IdpParams
from navigation.planner import (
    Candidate, DisturbanceAwarePlanner, PlannerConfig, RunningMedian, _sample, _wedge,
    apply_control, base_cost, consistency_merge, goal_primitive, in_wedge, integrate_unicycle,
    make_primitive, passive_safety_check, plan_step, predict_constant_velocity, score_and_select,
    shift_primitive, stop_primitive, track,
)

from .helpers import make_ped

CFG = PlannerConfig()
AT_REST = RobotState(Vec2(0.0, 0.0), 0.0, 0.0)
CRUISING = RobotState(Vec2(0.0, 0.0), 0.0, 1.2)


def cruise(state=CRUISING, cfg=CFG):
    return make_primitive(state, np.zeros((cfg.steps, 2)), cfg)


class PlannerConfigTests(SimpleTestCase):

    def test_defaults(self):
        self.assertEqual(CFG.steps, 16)
        self.assertEqual(CFG.safe_steps, 8)
        self.assertAlmostEqual(CFG.collision_distance, 0.7)

    def test_validation(self):
        for bad in ({'safe_fraction': 1.0}, {'K': 3}, {'decay_rate': 0.0}, {'w_idp': -1.0}, {'dt': 0.0}):
            with self.assertRaises(ConfigurationError):
                PlannerConfig(**bad)

    def test_variants(self):
        base = CFG.baseline()
        self.assertEqual((base.w_idp, base.w_fdp), (0.0, 0.0))
        self.assertEqual(base.K, CFG.K)
        ratio = CFG.with_ratio(3)
        self.assertEqual((ratio.w_idp, ratio.w_fdp), (3.0, 1.0))
        flat = CFG.with_horizon(0)
        self.assertFalse(flat.idp_enabled)
        self.assertEqual(flat.steps, 1)
        self.assertEqual(CFG.with_horizon(2).steps, 8)

    def test_mapping_round_trip(self):
        cfg = PlannerConfig.from_mapping({'K': 12, 'w_idp': 2.5})
        self.assertEqual(cfg.K, 12)
        self.assertEqual(PlannerConfig.from_mapping(cfg.to_dict()), cfg)
        with self.assertRaises(ConfigurationError):
            PlannerConfig.from_mapping({'unknown_knob': 1})

    @override_settings(CROWDNAV={'PLANNER': {'K': 10}})
    def test_settings_override(self):
        self.assertEqual(PlannerConfig.from_settings().K, 10)
        self.assertEqual(PlannerConfig.from_settings(K=6).K, 6)


class UnicycleTests(SimpleTestCase):

    @settings(deadline=None, max_examples=50)
    @given(st.lists(st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)), min_size=1, max_size=30),
           st.floats(0.0, 1.2))
    def test_speed_and_turn_rate_stay_bounded(self, controls, v0):
        out = integrate_unicycle(RobotState(Vec2(0, 0), 0.3, v0), controls, CFG.dt, CFG)
        self.assertTrue(np.all(out[:, 3] >= 0.0))
        self.assertTrue(np.all(out[:, 3] <= CFG.v_max + 1e-12))
        self.assertTrue(np.all(np.abs(out[:, 4]) <= CFG.omega_max + 1e-12))
        steps = np.linalg.norm(np.diff(np.vstack([[0.0, 0.0], out[:, :2]]), axis=0), axis=1)
        self.assertTrue(np.all(steps <= CFG.v_max * CFG.dt + 1e-9))

    def test_rejects_controls_over_limits(self):
        with self.assertRaises(ConfigurationError):
            make_primitive(AT_REST, [[2.0, 0.0]], CFG)
        with self.assertRaises(ConfigurationError):
            make_primitive(AT_REST, [[0.0, -1.6]], CFG)

    def test_trajectory_time_base(self):
        p = cruise()
        self.assertEqual(len(p.trajectory), CFG.steps)
        self.assertAlmostEqual(p.trajectory.t0, CFG.dt)
        self.assertAlmostEqual(p.trajectory.points[-1][0], 1.2 * CFG.horizon)

    def test_stop_primitive_comes_to_rest(self):
        p = stop_primitive(RobotState(Vec2(0, 0), 0.0, 1.2, 0.0, 0.6), CFG)
        self.assertEqual(p.kind, 'stop')
        self.assertAlmostEqual(p.speeds[-1], 0.0, places=12)
        self.assertAlmostEqual(p.states[-1, 4], 0.0)
        self.assertTrue(np.all(np.diff(p.speeds) <= 0.0))

    def test_goal_primitive_approaches_goal(self):
        p = goal_primitive(RobotState(Vec2(0, 0), 0.5, 0.0), (10.0, 0.0), CFG)
        self.assertEqual(p.kind, 'goal')
        self.assertLess((p.trajectory.end - Vec2(10, 0)).norm(), 10.0 - 2.0)

    def test_apply_control(self):
        s = apply_control(AT_REST, (1.5, 0.0), 0.1, CFG)
        self.assertAlmostEqual(s.speed, 0.15)
        self.assertAlmostEqual(s.time, 0.1)
        self.assertAlmostEqual(s.pos.x, 0.015)


class SamplingTests(SimpleTestCase):

    def setUp(self):
        self.graph = triangulate([], None, anchors=[(0, 0), (10, 0), (10, 10), (0, 10), (5, 5)])
        self.state = RobotState(Vec2(5.0, 5.0), 0.0, 0.6)

    def test_wedge_membership(self):
        wedge = (np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        origin = np.zeros(2)
        self.assertTrue(in_wedge((1, 1), origin, wedge))
        self.assertTrue(in_wedge((1, 1), origin, wedge[::-1]))
        self.assertFalse(in_wedge((-1, 1), origin, wedge))
        self.assertFalse(in_wedge((0, 0), origin, wedge))

    def test_candidates_round_robin_over_faces(self):
        prims, faces, report = _sample(self.state, self.graph, CFG, Rng(1), goal=(9.0, 5.0))
        self.assertEqual(len(report.faces), 4)
        self.assertLessEqual(len(prims), CFG.K)
        self.assertEqual(prims[0].kind, 'goal')
        self.assertEqual(prims[-1].kind, 'stop')
        self.assertEqual(sum(report.counts.values()), len(prims) - 2)

        vertex = self.graph.vertex_index((5, 5))
        origin = self.state.pos.as_array()
        for p, face in zip(prims, faces):
            if p.kind == 'sample':
                self.assertTrue(in_wedge(p.trajectory.points[-1], origin, _wedge(self.graph, face, vertex)))

    def test_sampling_is_reproducible(self):
        a, _, _ = _sample(self.state, self.graph, CFG, Rng(4))
        b, _, _ = _sample(self.state, self.graph, CFG, Rng(4))
        self.assertEqual(len(a), len(b))
        for p, q in zip(a, b):
            np.testing.assert_array_equal(p.trajectory.points, q.trajectory.points)


class PassiveSafetyTests(SimpleTestCase):

    def test_pedestrian_ahead_blocks_cruising(self):
        preds = predict_constant_velocity([make_ped(0, 2.0, 0.0)])
        self.assertFalse(passive_safety_check(cruise(), preds, None, CFG))
        self.assertTrue(passive_safety_check(stop_primitive(CRUISING, CFG), preds, None, CFG))

    def test_braking_distance_is_required(self):
        cfg = CFG.replace(safe_fraction=0.1)
        preds = predict_constant_velocity([make_ped(0, 1.5, 0.0)])
        p = cruise(cfg=cfg)
        self.assertEqual(cfg.safe_steps, 2)
        self.assertGreater(1.5 - p.trajectory.points[1][0], cfg.collision_distance)
        self.assertFalse(passive_safety_check(p, preds, None, cfg))

    def test_standing_still_is_always_safe(self):
        preds = predict_constant_velocity([make_ped(0, 1.0, 0.0, vx=-1.5)])
        self.assertTrue(passive_safety_check(stop_primitive(AT_REST, CFG), preds, None, CFG))

    def test_walls_block(self):
        m = StaticMap((-5, -5, 10, 5), obstacles=[[(3, -5), (4, -5), (4, 5), (3, 5)]])
        self.assertFalse(passive_safety_check(cruise(), predict_constant_velocity([]), m, CFG))

    def test_safe_prefix_keeps_clear_of_predictions(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            peds = [make_ped(i, *rng.uniform(-6, 6, size=2), *rng.uniform(-1.2, 1.2, size=2)) for i in range(6)]
            peds = [p for p in peds if p.pos.norm() > 1.0]
            preds = predict_constant_velocity(peds)
            controls = np.column_stack([rng.uniform(-1.5, 1.5, CFG.steps), rng.uniform(-1.5, 1.5, CFG.steps)])
            p = make_primitive(CRUISING, controls, CFG)
            if not passive_safety_check(p, preds, None, CFG):
                continue
            k = CFG.safe_steps
            for j in range(k):
                prev = p.speeds[j - 1] if j else CRUISING.speed
                if p.speeds[j] <= 0.0 and prev <= 0.0:
                    continue
                t = p.trajectory.times[j]
                for ped in peds:
                    where = np.array([ped.pos.x + t * ped.vel.x, ped.pos.y + t * ped.vel.y])
                    self.assertGreaterEqual(np.linalg.norm(where - p.trajectory.points[j]), CFG.collision_distance)


class ConsistencyTests(SimpleTestCase):

    def test_merge_appends_discounted_copy(self):
        prev = Candidate(cruise(), index=3, idp=1.0, total=2.0, safe=True)
        merged = consistency_merge(prev, [], CFG)
        self.assertEqual(len(merged), 1)
        carried = merged[0]
        self.assertTrue(carried.carried_over)
        self.assertEqual(carried.consistency_age, 1)
        self.assertAlmostEqual(carried.discount, CFG.decay_rate)
        self.assertIsNone(carried.idp)
        self.assertEqual(prev.consistency_age, 0)

    def test_old_trajectories_are_dropped(self):
        self.assertEqual(consistency_merge(None, [], CFG), [])
        kept = Candidate(cruise(), consistency_age=6)
        self.assertEqual(len(consistency_merge(kept, [], CFG)), 1)
        stale = Candidate(cruise(), consistency_age=7)
        self.assertEqual(consistency_merge(stale, [], CFG), [])

    def test_shift_retimes_the_remainder(self):
        p = cruise(RobotState(Vec2(0, 0), 0.0, 1.2, 0.0))
        later = p.state_at(1)
        shifted = shift_primitive(p, later, CFG)
        self.assertAlmostEqual(shifted.trajectory.t0, later.time + CFG.dt)
        np.testing.assert_allclose(shifted.trajectory.points[0], p.trajectory.points[2])
        self.assertEqual(shifted.speeds[-1], 0.0)
        np.testing.assert_allclose(shifted.trajectory.points[-1], p.trajectory.points[-1])


class ScoringTests(SimpleTestCase):

    def setUp(self):
        self.world = SimpleNamespace(goal=Vec2(20.0, 0.0), robot=AT_REST)

    def candidates(self):
        prims = [
            goal_primitive(AT_REST, (20.0, 0.0), CFG),
            make_primitive(AT_REST, [[1.5, 0.3]] * 4 + [[0.0, 0.0]] * (CFG.steps - 4), CFG),
            stop_primitive(AT_REST, CFG),
        ]
        return [Candidate(p, index=k, safe=True) for k, p in enumerate(prims)]

    def test_base_cost(self):
        cands = self.candidates()
        self.assertAlmostEqual(base_cost(cands[2], self.world.goal, CFG), CFG.horizon)
        self.assertLess(base_cost(cands[0], self.world.goal, CFG), base_cost(cands[1], self.world.goal, CFG))

    def test_total_combines_terms(self):
        cands = self.candidates()
        cands[1].discount = 0.5
        idp = {0: 0.4, 1: 0.2, 2: 0.0}
        score_and_select(cands, self.world, None, CFG, idp_fn=lambda c: idp[c.index])
        for c in cands:
            self.assertEqual(c.fdp, 0.0)
            expected = CFG.w_base * c.base_cost + c.discount * CFG.w_idp * idp[c.index]
            self.assertAlmostEqual(c.total, expected)

    def test_disturbance_changes_the_choice(self):
        cands = self.candidates()
        chosen = score_and_select(cands, self.world, None, CFG, idp_fn=lambda c: 0.0)
        self.assertEqual(chosen.index, 0)
        self.assertFalse(chosen.frozen)

        cands = self.candidates()
        chosen = score_and_select(cands, self.world, None, CFG, idp_fn=lambda c: 10.0 if c.index == 0 else 0.0)
        self.assertNotEqual(chosen.index, 0)

    def test_stored_values_are_not_recomputed(self):
        cands = self.candidates()
        for c in cands:
            c.idp = 0.0

        def fail(c):
            raise AssertionError("should not be called")

        score_and_select(cands, self.world, None, CFG, idp_fn=fail)

    def test_freezes_without_safe_candidates(self):
        cands = self.candidates()
        for c in cands:
            c.safe = False
        chosen = score_and_select(cands, self.world, None, CFG)
        self.assertTrue(chosen.frozen)
        self.assertTrue(chosen.safe)
        self.assertEqual(chosen.kind, 'stop')
        self.assertTrue(score_and_select([], self.world, None, CFG).frozen)

    def test_running_median(self):
        med = RunningMedian(window=3)
        self.assertEqual(med.scale(), 1.0)
        med.update([None, 0.0, float('nan'), 2.0, 4.0])
        self.assertEqual(med.scale(), 3.0)
        med.update([10.0, 12.0])
        self.assertEqual(med.scale(), 10.0)


def small_planner(**overrides):
    cfg = PlannerConfig(K=8, horizon=2.0, **overrides)
    return DisturbanceAwarePlanner(
        cfg,
        flow_params=FlowParams(horizon=4.0),
        idp_params=IdpParams(m=4, max_iters=3),
        fdp_params=FdpParams(max_iters=5, max_waypoints=8),
        sim_params=SimParams.from_settings(),
    )


class PlanCycleTests(SimpleTestCase):

    def setUp(self):
        self.world = spawn(ScenarioConfig(kind='OPEN', ped_count=6, seed=3))

    def test_cycle_is_reproducible(self):
        a = small_planner().plan_step(self.world, rng=Rng(5))
        b = small_planner().plan_step(self.world, rng=Rng(5))
        self.assertEqual(a.chosen.index, b.chosen.index)
        self.assertEqual(a.table, b.table)

    def test_cycle_table(self):
        result = small_planner().plan_step(self.world, rng=Rng(5))
        self.assertTrue(result.chosen.safe)
        self.assertEqual(len(result.table), len(result.candidates))
        self.assertEqual(sum(row['selected'] for row in result.table), 1)
        self.assertIsNotNone(result.flowmap)
        for row in result.table:
            if row['safe']:
                self.assertIsNotNone(row['total'])

    def test_previous_choice_is_carried(self):
        empty = self.world.replace(peds=())
        planner = small_planner()
        first = planner.plan_step(empty, rng=Rng(1))
        self.assertNotEqual(first.chosen.kind, 'stop')
        self.assertIsNone(first.flowmap)
        second = planner.plan_step(empty, rng=Rng(2))
        carried = [c for c in second.candidates if c.carried_over]
        self.assertEqual(len(carried), 1)
        self.assertEqual(carried[0].consistency_age, 1)
        self.assertEqual(carried[0].kind, 'carry')

    def test_stateless_entry_point(self):
        chosen, table = plan_step(self.world.replace(peds=()), cfg=PlannerConfig(K=6, horizon=2.0), rng=Rng(0))
        self.assertTrue(chosen.safe)
        self.assertTrue(any(row['selected'] for row in table))


class TrackingTests(SimpleTestCase):

    def test_follows_reference(self):
        p = goal_primitive(AT_REST, (20.0, 0.0), CFG)
        s = AT_REST
        for _ in range(15):
            s = apply_control(s, track(p, s, 0.1, CFG), 0.1, CFG)
        self.assertLess(np.linalg.norm(s.pos.as_array() - p.trajectory.position_at(s.time)), 0.25)

    @settings(deadline=None, max_examples=60)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi), st.floats(0, 1.2), st.floats(0, 4))
    def test_controls_are_bounded(self, x, y, heading, speed, t):
        p = goal_primitive(AT_REST, (20.0, 0.0), CFG)
        a, alpha = track(p, RobotState(Vec2(x, y), heading, speed, t), 0.1, CFG)
        self.assertLessEqual(abs(a), CFG.a_max)
        self.assertLessEqual(abs(alpha), CFG.alpha_max)

    def test_rejects_long_steps(self):
        with self.assertRaises(ConfigurationError):
            track(cruise(), AT_REST, 0.2, CFG)
