import json
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from navigation.core import PED_RADIUS, RobotState, Vec2
from navigation.crowdsim import (
    Direction, ScenarioConfig, ScenarioKind, SimParams, awareness_check,
    awareness_vector, load_scenarios, spawn, step,
)
from navigation.exceptions import ConfigurationError, InfeasibleScenario

from .helpers import make_ped

PARAMS = SimParams()


def positions(world):
    return np.array([[p.pos.x, p.pos.y] for p in world.peds])


class ScenarioConfigTests(SimpleTestCase):

    def test_labels(self):
        self.assertEqual(ScenarioConfig(kind='NC', direction='UT', counterflow=True).label, 'NC-UT-CF')
        self.assertEqual(ScenarioConfig(kind='OPEN', ped_count=10).label, 'OPEN-10')
        self.assertEqual(ScenarioConfig(name='custom').label, 'custom')

    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            ScenarioConfig(kind='XX')
        with self.assertRaises(ConfigurationError):
            ScenarioConfig(ped_count=0)
        with self.assertRaises(ConfigurationError):
            ScenarioConfig(minor_flow_fraction=1.5)
        with self.assertRaises(ConfigurationError):
            ScenarioConfig(kind='BA', corridor_width=1.0, bottleneck_gap=3.0)
        with self.assertRaises(ConfigurationError):
            ScenarioConfig.from_mapping({'kind': 'NC', 'speed': 3})

    def test_dict_round_trip_keeps_enums_as_text(self):
        cfg = ScenarioConfig(kind=ScenarioKind.FI, direction=Direction.UT, seed=9)
        data = cfg.to_dict()
        self.assertEqual(data['kind'], 'FI')
        self.assertEqual(ScenarioConfig.from_mapping(data), cfg)

    def test_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            text = os.path.join(tmp, 'nc.conf')
            with open(text, 'w', encoding='utf-8') as fh:
                fh.write("# 走廊\nkind = NC\ndirection = UT\nped_count = 12\ncounterflow = true\n")
            cfg = ScenarioConfig.from_file(text)
            self.assertEqual((cfg.kind, cfg.direction, cfg.ped_count, cfg.counterflow),
                             (ScenarioKind.NC, Direction.UT, 12, True))

            matrix = os.path.join(tmp, 'matrix.json')
            with open(matrix, 'w', encoding='utf-8') as fh:
                json.dump([{'kind': 'NC'}, {'kind': 'BA', 'direction': 'UT'}], fh)
            self.assertEqual([c.label for c in load_scenarios(matrix)], ['NC-DT', 'BA-UT'])
            with self.assertRaises(ConfigurationError):
                ScenarioConfig.from_file(matrix)

            bad = os.path.join(tmp, 'bad.conf')
            with open(bad, 'w', encoding='utf-8') as fh:
                fh.write("kind NC\n")
            with self.assertRaises(ConfigurationError):
                ScenarioConfig.from_file(bad)

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            ScenarioConfig.from_file('/nonexistent/scenario.json')


class SpawnTests(SimpleTestCase):

    def test_deterministic(self):
        cfg = ScenarioConfig(kind='NC', seed=5)
        np.testing.assert_array_equal(positions(spawn(cfg, PARAMS)), positions(spawn(cfg, PARAMS)))
        self.assertFalse(np.array_equal(positions(spawn(cfg, PARAMS)),
                                        positions(spawn(cfg.with_seed(6), PARAMS))))

    def test_placement_is_valid(self):
        for kind in ('NC', 'FI', 'BA', 'OPEN'):
            world = spawn(ScenarioConfig(kind=kind, seed=2), PARAMS)
            pos = positions(world)
            self.assertEqual(len(pos), 20)
            self.assertTrue(np.all(world.map.is_free(pos)), kind)
            d = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + np.eye(len(pos)) * 99
            self.assertGreaterEqual(d.min(), 2 * PED_RADIUS - 1e-9)
            start = world.layout.start.as_array()
            self.assertGreaterEqual(np.linalg.norm(pos - start, axis=1).min(), 1.5)
            self.assertEqual(world.robot.speed, 0.0)
            self.assertEqual(world.time, 0.0)

    def test_direction_sets_main_flow(self):
        dt = spawn(ScenarioConfig(kind='NC', direction='DT', seed=1), PARAMS)
        ut = spawn(ScenarioConfig(kind='NC', direction='UT', seed=1), PARAMS)
        self.assertTrue(all(p.vel.x > 0 for p in dt.peds))
        self.assertTrue(all(p.vel.x < 0 for p in ut.peds))
        self.assertGreater(dt.goal.x, dt.layout.start.x)

    def test_counterflow_minor_share(self):
        world = spawn(ScenarioConfig(kind='NC', counterflow=True, minor_flow_fraction=0.2, seed=1), PARAMS)
        self.assertEqual(sum(p.vel.x < 0 for p in world.peds), 4)

    def test_intersection_has_cross_flow(self):
        world = spawn(ScenarioConfig(kind='FI', seed=3), PARAMS)
        crossing = [p for p in world.peds if abs(p.goal.x - p.pos.x) < 1e-9]
        self.assertEqual(len(crossing), 8)

    def test_cyclists(self):
        world = spawn(ScenarioConfig(kind='OPEN', cyclist_fraction=0.25, seed=4), PARAMS)
        cyclists = [p for p in world.peds if p.kind == 'cyclist']
        self.assertEqual(len(cyclists), 5)
        self.assertTrue(all(3.0 <= p.pref_speed <= 4.0 for p in cyclists))
        self.assertTrue(all(1.0 <= p.pref_speed <= 1.5 for p in world.peds if p.kind == 'pedestrian'))

    def test_infeasible_density(self):
        with self.assertRaises(InfeasibleScenario):
            spawn(ScenarioConfig(kind='NC', corridor_length=5.0, ped_count=200), PARAMS)


class StepTests(SimpleTestCase):

    def setUp(self):
        self.world = spawn(ScenarioConfig(kind='BA', seed=7), PARAMS)

    def test_advances_time_and_keeps_robot(self):
        nxt = step(self.world, 0.05, True, PARAMS)
        self.assertAlmostEqual(nxt.time, 0.05)
        self.assertEqual(nxt.step_index, 1)
        self.assertIs(nxt.robot, self.world.robot)

    def test_deterministic(self):
        a, b = self.world, self.world
        for _ in range(20):
            a = step(a, 0.05, True, PARAMS)
            b = step(b, 0.05, True, PARAMS)
        np.testing.assert_array_equal(positions(a), positions(b))

    def test_pedestrians_stay_in_free_space(self):
        w = self.world
        for _ in range(100):
            w = step(w, 0.05, True, PARAMS)
            self.assertTrue(np.all(w.map.is_free(positions(w))))
            speeds = np.array([p.vel.norm() for p in w.peds])
            self.assertTrue(np.all(speeds <= PARAMS.max_speed + 1e-9))

    def test_rejects_large_dt(self):
        with self.assertRaises(ConfigurationError):
            step(self.world, 0.2, True, PARAMS)

    def test_visible_robot_repels_aware_pedestrian(self):
        base = spawn(ScenarioConfig(kind='OPEN', ped_count=1, seed=0), PARAMS)
        ped = make_ped(0, 5.0, 10.0, 1.2, 0.0, goal=(18.0, 10.0))
        world = base.replace(peds=(ped,), robot=RobotState(Vec2(7.0, 10.0), 0.0, 0.0))
        seen, unseen = world, world
        for _ in range(10):
            seen = step(seen, 0.05, True, PARAMS)
            unseen = step(unseen, 0.05, False, PARAMS)
        self.assertLess(seen.peds[0].pos.x, unseen.peds[0].pos.x)

    def test_pedestrian_reaching_goal_respawns(self):
        base = spawn(ScenarioConfig(kind='NC', ped_count=1, seed=0), PARAMS)
        band = base.layout.bands[0]
        ped = make_ped(0, band.xmax - 0.3, 2.0, 1.2, 0.0, goal=(band.xmax, 2.0))
        world = step(base.replace(peds=(ped,)), 0.05, True, PARAMS)
        self.assertLess(world.peds[0].pos.x, band.xmin + 1e-6)
        self.assertGreater(world.peds[0].goal.x, world.peds[0].pos.x)


class AwarenessTests(SimpleTestCase):

    def setUp(self):
        self.ped = make_ped(0, 0.0, 0.0, 1.0, 0.0)

    def test_body_cone(self):
        self.assertTrue(awareness_check(self.ped, (5.0, 0.0), PARAMS))
        self.assertTrue(awareness_check(self.ped, (3.0, 3.0), PARAMS))
        self.assertFalse(awareness_check(self.ped, (-5.0, 0.0), PARAMS))

    def test_gaze_extends_range(self):
        self.assertTrue(awareness_check(self.ped, (15.0, 0.0), PARAMS))
        self.assertFalse(awareness_check(self.ped, (25.0, 0.0), PARAMS))

    def test_gaze_behind(self):
        glancing = make_ped(0, 0.0, 0.0, 1.0, 0.0, gaze=np.pi)
        self.assertTrue(awareness_check(glancing, (-5.0, 0.0), PARAMS))
        self.assertFalse(awareness_check(glancing, (15.0, 0.0), PARAMS))

    def test_vector(self):
        peds = [self.ped, make_ped(1, 10.0, 0.0, 1.0, 0.0)]
        np.testing.assert_array_equal(awareness_vector(peds, (5.0, 0.0), PARAMS), [True, False])
