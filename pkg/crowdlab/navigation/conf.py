"""
導航參數設定
預設值 ← settings.CROWDNAV ← 環境變數 CROWDNAV_<SECTION>_<KEY>
"""

import dataclasses
import json
import os

from django.conf import settings

from .exceptions import ConfigurationError

DEFAULTS = {
    # 流場估計與傳播
    'FLOW': {
        'h': 0.5,
        'dt_flow': 0.5,
        'kernel_radius': 1.0,
        'horizon': 8.0,
        'tau_relax': 1.0,
        'pressure': 0.5,
        'speed_cap': 1.8,
        'dynamics': True,
    },
    # 行人模擬（社會力模型）
    'SIM': {
        'dt': 0.05,
        'goal_tau': 0.5,
        'ped_amp': 2.0,
        'ped_range': 0.8,
        'obs_amp': 4.0,
        'obs_range': 0.4,
        'robot_amp': 2.0,
        'robot_range': 1.0,
        'max_speed': 1.8,
        'interaction_cutoff': 5.0,
        'goal_radius': 0.5,
        'gaze_period': 2.0,
        'gaze_forward_prob': 0.8,
        'body_cone_deg': 90.0,
        'body_range': 10.0,
        'gaze_cone_deg': 60.0,
        'gaze_range': 20.0,
    },
    # 個體干擾（IDP）
    'IDP': {
        'm': 16,
        'c_ped': 1.0,
        'c_obs': 10.0,
        'b': 2.0,
        'gamma': 0.9,
        'th_peer': 0.6,
        'th_robot': 0.8,
        'eps': 0.05,
        'max_iters': 10,
        'sigma': 0.3,
        'prune_radius': 8.0,
    },
    # 流干擾（FDP）
    'FDP': {
        'w_rc': 2.0,
        'w_lc': 0.5,
        'sigma_f': 0.5,
        'qc': 0.5,
        'f_tol': 1e-3,
        'max_iters': 50,
        'envelope_margin': 0.6,
        'robot_radius': 0.4,
        'waypoint_dt': 0.5,
        'max_waypoints': 16,
        'quad_n': 4,
        'boundary_spacing': 1.0,
        'unreachable_cost': 1000.0,
        'fd_step': 1e-5,
    },
    # 規劃器
    'PLANNER': {
        'v_max': 1.2,
        'horizon': 4.0,
        'dt': 0.25,
        'safe_fraction': 0.5,
        'K': 24,
        'w_idp': 5.0,
        'w_fdp': 1.0,
        'w_base': 1.0,
        'decay_rate': 0.85,
        'carry_threshold': 0.3,
        'a_max': 1.5,
        'alpha_max': 1.5,
        'omega_max': 1.0,
        'max_face_tries': 20,
        'brake_offsets': 5,
        'brake_offset_step': 0.5,
        'brake_dt': 0.1,
        'robot_radius': 0.4,
        'ped_radius': 0.25,
        'safety_margin': 0.05,
        'idp_enabled': True,
        'workers': 1,
        'track_steps': 20,
        'track_dt': 0.1,
        'track_lookahead': 0.5,
        'median_window': 50,
    },
    # 實驗框架
    'HARNESS': {
        'physics_dt': 0.05,
        'plan_every': 2,
        'goal_tolerance': 0.5,
        'timeout_factor': 3.0,
        'time_limit': 0.0,
        'safety_margin': 0.05,
        'freeze_speed': 0.05,
        'freeze_time': 3.0,
        'frontal_range': 1.5,
        'frontal_cone_deg': 120.0,
        'density_depth': 0.5,
        'repeats': 40,
        'workers': 1,
        'robot_visible': True,
    },
}


def _coerce(raw, default):
    """將環境變數字串轉為與預設值相同的型別"""
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ('1', 'true', 'yes', 'on')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"無法解析設定值 {raw!r}") from exc
    return raw


def section(name):
    """取得合併後的設定區段"""
    key = name.upper()
    if key not in DEFAULTS:
        raise ConfigurationError(f"未知的設定區段：{name}")

    merged = dict(DEFAULTS[key])
    user = getattr(settings, 'CROWDNAV', {}).get(key, {})
    for option, value in user.items():
        if option not in merged:
            raise ConfigurationError(f"{key} 區段沒有 {option} 這個設定")
        merged[option] = value

    for option, default in merged.items():
        raw = os.environ.get(f'CROWDNAV_{key}_{option.upper()}')
        if raw is not None:
            merged[option] = _coerce(raw, default)
    return merged


def _parse_value(raw):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        lowered = raw.lower()
        if lowered in ('true', 'false'):
            return lowered == 'true'
        return raw.strip('"\'')


def parse_text(text):
    """
    解析設定檔內容：JSON 物件／陣列，或每行一組 key = value（# 為註解）
    """
    stripped = text.strip()
    if stripped.startswith('{') or stripped.startswith('['):
        try:
            return json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"JSON 格式錯誤：{exc}") from exc

    mapping = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        sep = '=' if '=' in line else (':' if ':' in line else None)
        if sep is None:
            raise ConfigurationError(f"第 {number} 行缺少 '=': {line}")
        key, raw = line.split(sep, 1)
        mapping[key.strip()] = _parse_value(raw)
    return mapping


def load_file(path):
    try:
        with open(path, encoding='utf-8') as fh:
            return parse_text(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"無法讀取設定檔 {path}：{exc}") from exc


def build(cls, mapping):
    """以字典建立參數 dataclass，拒絕未知欄位"""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigurationError(f"{cls.__name__} 不支援的欄位：{', '.join(unknown)}")
    return cls(**mapping)


def pick(mapping, cls):
    """只保留 dataclass 擁有的欄位"""
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in mapping.items() if k in names}
