"""
結果輸出：metrics.csv、aggregate.csv / .json、replay/*.csv、plotdata/*.csv 與回合 JSON
"""

import csv
import json
import logging
from pathlib import Path

from navigation.fdp import write_triangulation_csv
from navigation.flowfield import write_flowmap_csv

from .metrics import AGGREGATE_COLUMNS

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    'scenario', 'planner', 'grid_value', 'seed', 'outcome',
    'success', 'collision', 'timeout', 'complete_ratio', 'freezing_count',
    'jerk', 'frontal_interactions', 'cumulative_density', 'execute_time', 'error',
]
REPLAY_COLUMNS = ['t', 'agent', 'x', 'y', 'heading', 'vx', 'vy', 'speed']
COST_COLUMNS = ['cycle', 'candidate', 'face', 'kind', 'idp', 'fdp', 'base', 'total',
                'safe', 'converged', 'carried_over', 'age', 'post_ok', 'selected']
EMIT_CHOICES = ('csv', 'json', 'replay')


def format_row(row):
    """浮點數以 repr 輸出，確保回放比對逐字一致"""
    return [repr(float(v)) if isinstance(v, float) else str(v) for v in row]


def metric_row(outcome):
    m = outcome.metrics
    row = {
        'scenario': outcome.scenario,
        'planner': outcome.planner,
        'grid_value': '' if outcome.grid_value is None else outcome.grid_value,
        'seed': outcome.seed,
        'outcome': m.outcome if m else 'failed',
        'error': outcome.error,
    }
    if m:
        row.update(m.to_dict())
    return row


def read_metrics_csv(path):
    with open(path, newline='', encoding='utf-8') as fh:
        return list(csv.DictReader(fh))


def write_metrics_csv(outcomes, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction='ignore')
        writer.writeheader()
        for o in outcomes:
            writer.writerow(metric_row(o))


def write_aggregate(rows, csv_path=None, json_path=None):
    if csv_path:
        with open(csv_path, 'w', newline='', encoding='utf-8') as fh:
            writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: ('' if row[k] is None else row[k]) for k in AGGREGATE_COLUMNS})
    if json_path:
        with open(json_path, 'w', encoding='utf-8') as fh:
            json.dump(rows, fh, ensure_ascii=False, indent=2)


def write_replay_csv(log, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(REPLAY_COLUMNS)
        for row in log.replay_rows():
            writer.writerow(format_row(row))


def read_replay_csv(path):
    with open(path, newline='', encoding='utf-8') as fh:
        reader = csv.reader(fh)
        next(reader, None)
        return [row for row in reader]


def write_cost_tables(log, path):
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.DictWriter(fh, fieldnames=COST_COLUMNS, extrasaction='ignore')
        writer.writeheader()
        for table in log.cycles:
            for row in table:
                writer.writerow({k: ('' if row.get(k) is None else row.get(k)) for k in COST_COLUMNS})


def write_paths_csv(log, path):
    """每個規劃週期選中的軌跡"""
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(['cycle', 't', 'k', 'x', 'y'])
        for cycle, t, points in log.paths:
            for k, (x, y) in enumerate(points):
                writer.writerow([cycle, f"{t:.3f}", k, f"{x:.4f}", f"{y:.4f}"])


def write_episode_json(log, path, replay_name=None, grid_value=None):
    data = log.to_dict()
    data['grid_value'] = grid_value
    if replay_name:
        data['replay_csv'] = replay_name
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(data, fh, ensure_ascii=False, indent=2)


def emit_episode(log, out_dir, emit=('csv', 'json'), grid_value=None):
    """單一回合的所有輸出；回傳寫出的檔案"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    name = log.episode_id

    replay_name = None
    if 'replay' in emit:
        (out / 'replay').mkdir(exist_ok=True)
        replay_name = f"replay/{name}.csv"
        write_replay_csv(log, out / replay_name)
        write_cost_tables(log, out / 'replay' / f"{name}_costs.csv")
        written += [out / replay_name, out / 'replay' / f"{name}_costs.csv"]

        plot = out / 'plotdata'
        plot.mkdir(exist_ok=True)
        write_paths_csv(log, plot / f"paths_{name}.csv")
        written.append(plot / f"paths_{name}.csv")
        if log.plotdata.get('flowmap') is not None:
            with open(plot / f"flow_{name}.csv", 'w', newline='', encoding='utf-8') as fh:
                write_flowmap_csv(log.plotdata['flowmap'], fh, log.plotdata['flowmap'].t_origin)
            written.append(plot / f"flow_{name}.csv")
        if log.plotdata.get('graph') is not None:
            with open(plot / f"tri_{name}.csv", 'w', newline='', encoding='utf-8') as fh:
                write_triangulation_csv(log.plotdata['graph'], fh)
            written.append(plot / f"tri_{name}.csv")

    if 'json' in emit or replay_name:
        write_episode_json(log, out / f"{name}.json", replay_name, grid_value)
        written.append(out / f"{name}.json")
    logger.info("回合 %s 已輸出 %d 個檔案到 %s", name, len(written), out)
    return written


def emit_suite(result, out_dir, emit=('csv', 'json')):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if 'csv' in emit:
        write_metrics_csv(result.outcomes, out / 'metrics.csv')
        write_aggregate(result.rows, csv_path=out / 'aggregate.csv')
        written += [out / 'metrics.csv', out / 'aggregate.csv']
    if 'json' in emit:
        write_aggregate(result.rows, json_path=out / 'aggregate.json')
        written.append(out / 'aggregate.json')
    if 'replay' in emit:
        for o in result.outcomes:
            if o.log is not None:
                written += emit_episode(o.log, out, ('replay',), o.grid_value)
    logger.info("已輸出 %d 個檔案到 %s", len(written), out)
    return written
