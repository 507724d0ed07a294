"""
實驗框架：單回合閉迴路模擬、場景矩陣、消融掃描

物理 20 Hz、規劃 10 Hz；回合以抵達目標、逾時或碰撞結束
"""

import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from navigation import conf
from navigation.core import Rng
from navigation.crowdsim import ScenarioConfig, SimParams, spawn, step
from navigation.exceptions import ConfigurationError, TruncatedLog
from navigation.fdp import FdpParams
from navigation.flowfield import FlowParams
from navigation.idp import IdpParams
from navigation.planner import DisturbanceAwarePlanner, PlannerConfig, apply_control, track

from .exports import format_row, read_metrics_csv, read_replay_csv
from .metrics import OUTCOMES, aggregate, compute_metrics

logger = logging.getLogger(__name__)

ABLATION_GRIDS = {
    'speed': [1.0, 1.25, 1.5, 1.75, 2.0, 2.25],
    'horizon': [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
    'ratio': [1, 2, 3, 4, 5, 6, 7, 8, 9],
}


@dataclass(frozen=True)
class EpisodeLimits:
    physics_dt: float = 0.05
    plan_every: int = 2
    goal_tolerance: float = 0.5
    timeout_factor: float = 3.0
    time_limit: float = 0.0
    safety_margin: float = 0.05
    freeze_speed: float = 0.05
    freeze_time: float = 3.0
    frontal_range: float = 1.5
    frontal_cone_deg: float = 120.0
    density_depth: float = 0.5
    robot_visible: bool = True

    def __post_init__(self):
        if not 0.0 < self.physics_dt <= 0.1:
            raise ConfigurationError(f"physics_dt 必須介於 (0, 0.1]：{self.physics_dt}")
        if self.plan_every < 1:
            raise ConfigurationError("plan_every 至少為 1")

    def limit_for(self, course_length, v_max):
        """未指定時，以空走廊直線通過時間的 timeout_factor 倍為上限"""
        if self.time_limit > 0:
            return self.time_limit
        return self.timeout_factor * course_length / v_max

    @classmethod
    def from_settings(cls, **overrides):
        values = conf.pick(conf.section('HARNESS'), cls)
        values.update(overrides)
        return conf.build(cls, values)


@dataclass(frozen=True)
class ParamSet:
    """在主程序中解析好的參數，避免工作程序再讀取設定"""
    flow: FlowParams
    idp: IdpParams
    fdp: FdpParams
    sim: SimParams

    @classmethod
    def from_settings(cls):
        return cls(FlowParams.from_settings(), IdpParams.from_settings(),
                   FdpParams.from_settings(), SimParams.from_settings())


@dataclass(eq=False)
class EpisodeLog:
    scenario: dict
    planner: dict
    seed: int
    dt: float
    start: tuple
    goal: tuple
    limits: EpisodeLimits
    robot: list = field(default_factory=list)   # t, x, y, heading, speed, yaw_rate
    peds: list = field(default_factory=list)    # 每步 (n, 5)：x, y, vx, vy, heading
    cycles: list = field(default_factory=list)  # 各規劃週期的代價表
    paths: list = field(default_factory=list)   # (cycle, t, points)
    outcome: str = ''
    complete: bool = False
    metrics: object = None
    wall_time: float = 0.0
    plotdata: dict = field(default_factory=dict, repr=False)

    @property
    def label(self):
        return ScenarioConfig.from_mapping(self.scenario).label

    @property
    def episode_id(self):
        planner = self.planner.get('label', 'planner')
        return f"{self.label}_{planner}_s{self.seed}"

    def replay_rows(self):
        rows = []
        for k, (t, x, y, heading, speed, _) in enumerate(self.robot):
            rows.append((t, 'robot', x, y, heading, speed * math.cos(heading), speed * math.sin(heading), speed))
            for i, (px, py, vx, vy, ph) in enumerate(self.peds[k]):
                rows.append((t, f'ped{i}', float(px), float(py), float(ph), float(vx), float(vy),
                             float(math.hypot(vx, vy))))
        return rows

    @classmethod
    def from_replay(cls, data, rows):
        """
        由回合 JSON 與回放 CSV 重建紀錄，供離線重算指標
        機器人的角速度不在回放檔中，一律記為 0
        """
        log = cls(data['scenario'], data['planner'], data['seed'], data['dt'],
                  tuple(data['start']), tuple(data['goal']), EpisodeLimits(**data['limits']),
                  outcome=data['outcome'])
        peds = []
        for row in rows:
            t, agent, x, y, heading, vx, vy, speed = row
            if agent == 'robot':
                if log.robot:
                    log.peds.append(np.array(peds, dtype=float).reshape(-1, 5))
                log.robot.append((float(t), float(x), float(y), float(heading), float(speed), 0.0))
                peds = []
            else:
                peds.append((float(x), float(y), float(vx), float(vy), float(heading)))
        if log.robot:
            log.peds.append(np.array(peds, dtype=float).reshape(-1, 5))
        log.complete = log.outcome in OUTCOMES
        return log

    def to_dict(self):
        return {
            'episode': self.episode_id,
            'scenario': self.scenario,
            'planner': self.planner,
            'seed': self.seed,
            'dt': self.dt,
            'start': list(self.start),
            'goal': list(self.goal),
            'limits': dataclasses.asdict(self.limits),
            'outcome': self.outcome,
            'metrics': self.metrics.to_dict() if self.metrics else None,
            'steps': len(self.robot),
            'cycles': len(self.cycles),
            'wall_time': self.wall_time,
        }


def _planner_label(pcfg, label=None):
    if label:
        return label
    return 'baseline' if pcfg.w_idp == 0 and pcfg.w_fdp == 0 else 'mip'


def _snapshot(world):
    if not world.peds:
        return np.zeros((0, 5))
    return np.array([[p.pos.x, p.pos.y, p.vel.x, p.vel.y, p.heading] for p in world.peds])


def _collided(world, pcfg, limits):
    robot = world.robot.pos
    if world.map.clearance([[robot.x, robot.y]])[0] < pcfg.robot_radius:
        return True
    for p in world.peds:
        if (p.pos - robot).norm() < pcfg.robot_radius + p.radius + limits.safety_margin:
            return True
    return False


def run_episode(cfg, pcfg=None, limits=None, params=None, planner_label=None, record_plotdata=False):
    """
    單一回合閉迴路模擬；所有結束方式都記錄為結果而不是例外
    相同 (cfg, seed) 必定產生完全相同的紀錄
    """
    pcfg = pcfg or PlannerConfig.from_settings()
    limits = limits or EpisodeLimits.from_settings()
    params = params or ParamSet.from_settings()
    started = time.perf_counter()

    world = spawn(cfg, params.sim)
    planner = DisturbanceAwarePlanner(pcfg, params.flow, params.idp, params.fdp, params.sim)
    course = world.layout.course_length
    t_limit = limits.limit_for(course, pcfg.v_max)
    dt = limits.physics_dt
    planner_dict = dict(pcfg.to_dict(), label=_planner_label(pcfg, planner_label))
    log = EpisodeLog(cfg.to_dict(), planner_dict, cfg.seed, dt,
                     (world.layout.start.x, world.layout.start.y), (world.goal.x, world.goal.y), limits)

    def record(w):
        r = w.robot
        log.robot.append((w.time, r.pos.x, r.pos.y, r.heading, r.speed, r.yaw_rate))
        log.peds.append(_snapshot(w))

    record(world)
    chosen = None
    cycle = 0
    rng_root = Rng(cfg.seed, (2,))
    while True:
        if world.step_index % limits.plan_every == 0:
            result = planner.plan_step(world, rng=rng_root.fork(cycle))
            chosen = result.chosen
            log.cycles.append(result.table)
            log.paths.append((cycle, world.time, chosen.trajectory.points.copy()))
            if record_plotdata and cycle == 0:
                log.plotdata = {'flowmap': result.flowmap, 'graph': result.graph}
            cycle += 1

        control = track(chosen, world.robot, dt, pcfg)
        robot = apply_control(world.robot, control, dt, pcfg)
        world = step(world, dt, limits.robot_visible, params.sim)
        world = world.replace(robot=dataclasses.replace(robot, time=world.time))
        record(world)

        if _collided(world, pcfg, limits):
            log.outcome = 'collision'
            break
        if (world.robot.pos - world.goal).norm() <= limits.goal_tolerance:
            log.outcome = 'success'
            break
        if world.time >= t_limit - 1e-9:
            log.outcome = 'timeout'
            break

    log.complete = True
    log.metrics = compute_metrics(log, limits)
    log.wall_time = time.perf_counter() - started
    logger.info("回合 %s：%s，%.1f s 模擬 / %.1f s 實際",
                log.episode_id, log.outcome, world.time, log.wall_time)
    return log


# ========== 場景矩陣 ==========

@dataclass(eq=False)
class EpisodeOutcome:
    scenario: str
    planner: str
    grid_value: object
    seed: int
    metrics: object = None
    error: str = ''
    log: EpisodeLog = field(default=None, repr=False)


@dataclass(eq=False)
class SuiteResult:
    kind: str
    outcomes: list
    rows: list
    parameters: dict = field(default_factory=dict)

    @property
    def failures(self):
        return [o for o in self.outcomes if o.metrics is None]


@dataclass(frozen=True)
class Cell:
    scenario: ScenarioConfig
    planner: PlannerConfig
    planner_label: str
    grid_value: object = None


def _run_cell(job):
    index, cell, seed, limits, params, keep_log = job
    cfg = cell.scenario.with_seed(seed)
    try:
        log = run_episode(cfg, cell.planner, limits, params, cell.planner_label, record_plotdata=keep_log)
    except Exception as exc:  # 單一格失敗不中斷整個矩陣
        return index, None, f"{type(exc).__name__}: {exc}"
    if not keep_log:
        log = dataclasses.replace(log, robot=[], peds=[], cycles=[], paths=[], plotdata={})
    return index, log, ''


def _seeds_for(cell, repeats, seeds):
    if seeds is not None:
        return list(seeds)[:repeats] if repeats else list(seeds)
    return [cell.scenario.seed + r for r in range(repeats)]


def run_cells(cells, repeats, seeds=None, limits=None, workers=1, keep_logs=False, kind='suite', parameters=None):
    if repeats < 1:
        raise ConfigurationError(f"repeats 至少為 1：{repeats}")
    limits = limits or EpisodeLimits.from_settings()
    params = ParamSet.from_settings()

    jobs = []
    for cell in cells:
        for seed in _seeds_for(cell, repeats, seeds):
            jobs.append((len(jobs), cell, seed, limits, params, keep_logs))
    logger.info("開始執行 %d 個格子、共 %d 個回合（%d 個工作程序）", len(cells), len(jobs), workers)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]

    outcomes = []
    for (index, log, error), job in zip(sorted(results, key=lambda r: r[0]), jobs):
        cell, seed = job[1], job[2]
        if error:
            logger.warning("%s / %s seed=%d 失敗：%s", cell.scenario.label, cell.planner_label, seed, error)
        outcomes.append(EpisodeOutcome(
            cell.scenario.label, cell.planner_label, cell.grid_value, seed,
            log.metrics if log is not None else None, error, log if keep_logs else None,
        ))
    return SuiteResult(kind, outcomes, aggregate(outcomes), dict(parameters or {}, repeats=repeats))


def run_suite(matrix, repeats, seeds=None, limits=None, workers=1, keep_logs=False):
    """matrix 為 (ScenarioConfig, PlannerConfig) 或 (ScenarioConfig, PlannerConfig, 標籤) 的序列"""
    cells = []
    for item in matrix:
        scenario, planner = item[0], item[1]
        label = item[2] if len(item) > 2 else _planner_label(planner)
        cells.append(Cell(scenario, planner, label))
    return run_cells(cells, repeats, seeds, limits, workers, keep_logs, 'suite')


def ablation_planner(kind, value, base):
    if kind == 'speed':
        return base.replace(v_max=float(value))
    if kind == 'horizon':
        return base.with_horizon(float(value))
    if kind == 'ratio':
        return base.with_ratio(float(value))
    raise ConfigurationError(f"未知的消融種類：{kind}")


def run_ablation(kind, grid=None, scenarios=None, base=None, repeats=5, seeds=None, limits=None, workers=1):
    """依序掃描最大速度、軌跡時域或 IDP:FDP 權重比"""
    if kind not in ABLATION_GRIDS:
        raise ConfigurationError(f"未知的消融種類：{kind}")
    grid = ABLATION_GRIDS[kind] if grid is None else list(grid)
    if not grid:
        raise ConfigurationError("消融格點不可為空")
    base = base or PlannerConfig.from_settings()
    scenarios = scenarios or [ScenarioConfig(kind='NC', direction='UT')]
    cells = [Cell(s, ablation_planner(kind, g, base), f"{kind}={g}", g) for s in scenarios for g in grid]
    return run_cells(cells, repeats, seeds, limits, workers, False, 'ablation',
                     {'ablation_kind': kind, 'grid': grid})


def store_suite(result, name, ablation_kind=''):
    """將矩陣或消融結果寫入資料庫"""
    from .models import EpisodeRecord, SuiteRun

    suite = SuiteRun.objects.create(
        name=name,
        kind=result.kind,
        ablation_kind=ablation_kind or result.parameters.get('ablation_kind', ''),
        parameters=result.parameters,
        repeats=result.parameters.get('repeats', 1),
    )
    records = []
    for o in result.outcomes:
        m = o.metrics
        records.append(EpisodeRecord(
            suite=suite,
            scenario_label=o.scenario,
            planner_label=o.planner,
            grid_value='' if o.grid_value is None else str(o.grid_value),
            seed=o.seed,
            outcome=m.outcome if m else 'failed',
            complete_ratio=m.complete_ratio if m else 0.0,
            success=m.success if m else False,
            timeout=m.timeout if m else False,
            collision=m.collision if m else False,
            freezing_count=m.freezing_count if m else 0,
            jerk=m.jerk if m else 0.0,
            frontal_interactions=m.frontal_interactions if m else 0,
            cumulative_density=m.cumulative_density if m else 0.0,
            execute_time=m.execute_time if m else 0.0,
            error=o.error,
        ))
    EpisodeRecord.objects.bulk_create(records)
    logger.info("已儲存實驗 %s（%d 個回合）", suite.name, len(records))
    return suite


def replay_matches(log, recorded_rows):
    """重新執行後的回放列是否與既有紀錄逐字相同"""
    cfg = ScenarioConfig.from_mapping(log['scenario'])
    planner = dict(log['planner'])
    label = planner.pop('label', None)
    pcfg = PlannerConfig.from_mapping(planner)
    limits = EpisodeLimits.from_settings(**log['limits'])
    fresh = run_episode(cfg, pcfg, limits, planner_label=label)
    rows = [format_row(r) for r in fresh.replay_rows()]
    return rows == list(recorded_rows), fresh


def _grid_value(text):
    return json.loads(text) if text not in (None, '') else None


def aggregate_replays(out_dir):
    """
    只讀輸出目錄中的回合 JSON 與回放 CSV，重新計算每回合指標與彙總表
    有 metrics.csv 時依其順序排列，並把執行失敗的回合計入
    """
    out = Path(out_dir)
    episodes = {}
    for path in sorted(out.glob('*.json')):
        with open(path, encoding='utf-8') as fh:
            data = json.load(fh)
        if not isinstance(data, dict) or not data.get('replay_csv'):
            continue
        log = EpisodeLog.from_replay(data, read_replay_csv(out / data['replay_csv']))
        episodes[log.episode_id] = (log, data.get('grid_value'))
    if not episodes:
        raise TruncatedLog(f"{out} 沒有可用的回放紀錄")

    def outcome_for(log, grid_value):
        return EpisodeOutcome(log.label, log.planner.get('label', 'planner'), grid_value, log.seed,
                              compute_metrics(log))

    outcomes = []
    listing = out / 'metrics.csv'
    if listing.exists():
        for row in read_metrics_csv(listing):
            if row['outcome'] == 'failed':
                outcomes.append(EpisodeOutcome(row['scenario'], row['planner'], _grid_value(row['grid_value']),
                                               int(row['seed']), None, row['error']))
                continue
            key = f"{row['scenario']}_{row['planner']}_s{row['seed']}"
            if key not in episodes:
                raise TruncatedLog(f"找不到回合 {key} 的回放紀錄")
            outcomes.append(outcome_for(*episodes[key]))
    else:
        outcomes = [outcome_for(log, grid) for log, grid in episodes.values()]
    logger.info("由 %s 的回放紀錄重算 %d 個回合", out, len(outcomes))
    return SuiteResult('replay', outcomes, aggregate(outcomes), {'source': str(out)})
