"""
人群導航實驗指令

使用方式：
    python manage.py crowdnav run --preset nc-dt --seed 3 --out results/single --emit csv --emit replay
    python manage.py crowdnav suite --preset nc-dt --preset nc-ut --baseline --repeats 5 --workers 4 --out results/suite
    python manage.py crowdnav ablation --kind ratio --repeats 5 --out results/ratio
    python manage.py crowdnav replay --log results/single/NC-DT_mip_s3.json
    python manage.py crowdnav replay --aggregate results/suite
"""

import json
import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from navigation import conf
from navigation.crowdsim import Direction, ScenarioConfig, ScenarioKind, load_scenarios
from navigation.exceptions import CrowdNavError
from navigation.models import PlannerProfile, ScenarioPreset
from navigation.planner import PlannerConfig

from experiments.exports import EMIT_CHOICES, emit_episode, emit_suite, read_replay_csv
from experiments.harness import (
    ABLATION_GRIDS, EpisodeLimits, EpisodeOutcome, SuiteResult, aggregate_replays,
    replay_matches, run_ablation, run_episode, run_suite, store_suite,
)
from experiments.metrics import aggregate

logger = logging.getLogger(__name__)

DEFAULT_EMIT = ['csv', 'json']


class Command(BaseCommand):
    help = '執行人群導航實驗：單一回合、場景矩陣、消融掃描或回放驗證'

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest='action', required=True)

        run = subparsers.add_parser('run', help='執行單一回合')
        self._scenario_options(run)
        self._planner_options(run)
        self._output_options(run)

        suite = subparsers.add_parser('suite', help='執行場景 × 規劃器矩陣')
        self._scenario_options(suite, multiple=True)
        self._planner_options(suite)
        self._output_options(suite)
        suite.add_argument('--repeats', type=int, help='每格重複次數（預設取 HARNESS.repeats）')
        suite.add_argument('--workers', type=int, help='平行工作程序數')

        ablation = subparsers.add_parser('ablation', help='消融掃描')
        ablation.add_argument('--kind', required=True, choices=sorted(ABLATION_GRIDS), help='掃描的參數')
        ablation.add_argument('--grid', help='以逗號分隔的格點，例如 1,3,5,7')
        self._scenario_options(ablation, multiple=True)
        self._planner_options(ablation, baseline=False)
        self._output_options(ablation)
        ablation.add_argument('--repeats', type=int, default=5, help='每格重複次數')
        ablation.add_argument('--workers', type=int, help='平行工作程序數')

        replay = subparsers.add_parser('replay', help='重新執行回合並逐字比對回放紀錄')
        source = replay.add_mutually_exclusive_group(required=True)
        source.add_argument('--log', help='回合 JSON（需由 --emit replay 產生）')
        source.add_argument('--aggregate', metavar='DIR', help='只由輸出目錄中的回放紀錄重算彙總表')

    def _scenario_options(self, parser, multiple=False):
        parser.add_argument('--scenario', help='場景設定檔（JSON 或 key = value）')
        parser.add_argument('--preset', action='append' if multiple else 'store',
                            help='資料庫中的場景預設代碼')
        parser.add_argument('--seed', type=int, help='覆寫場景的亂數種子')

    def _planner_options(self, parser, baseline=True):
        parser.add_argument('--planner', help='規劃器設定檔')
        parser.add_argument('--profile', help='資料庫中的規劃器參數組代碼')
        if baseline:
            parser.add_argument('--baseline', action='store_true', help='加入不考慮干擾的對照組')

    def _output_options(self, parser):
        parser.add_argument('--out', default='results', help='輸出目錄')
        parser.add_argument('--emit', action='append', choices=EMIT_CHOICES, help='輸出種類，可重複指定')
        parser.add_argument('--store', action='store_true', help='將結果寫入資料庫')
        parser.add_argument('--name', help='儲存時的批次名稱')

    def handle(self, *args, **options):
        if options['verbosity'] >= 2:
            logging.getLogger('navigation').setLevel(logging.DEBUG)
            logging.getLogger('experiments').setLevel(logging.DEBUG)

        action = options['action']
        logger.debug("crowdnav %s：%s", action, {k: v for k, v in options.items() if v is not None})
        try:
            handler = getattr(self, f'handle_{action}')
            handler(options)
        except CrowdNavError as exc:
            raise CommandError(f"設定錯誤：{exc}") from exc
        except OSError as exc:
            raise CommandError(f"檔案存取失敗：{exc}") from exc

    # ========== 設定解析 ==========

    def _scenarios(self, options, default=None):
        scenarios = []
        if options.get('scenario'):
            scenarios.extend(load_scenarios(options['scenario']))

        presets = options.get('preset') or []
        if isinstance(presets, str):
            presets = [presets]
        for slug in presets:
            try:
                preset = ScenarioPreset.objects.get(slug=slug, is_active=True)
            except ScenarioPreset.DoesNotExist:
                raise CommandError(f"找不到場景預設：{slug}（請先執行 populate_scenarios.py）")
            scenarios.append(preset.to_config())

        if not scenarios:
            scenarios = list(default or [ScenarioConfig()])
        if options.get('seed') is not None:
            scenarios = [s.with_seed(options['seed']) for s in scenarios]
        return scenarios

    def _planner(self, options):
        """回傳 (PlannerConfig, 標籤)；標籤為 None 時由權重判斷"""
        if options.get('planner') and options.get('profile'):
            raise CommandError("--planner 與 --profile 只能擇一")
        if options.get('planner'):
            return PlannerConfig.from_file(options['planner']), None
        if options.get('profile'):
            try:
                profile = PlannerProfile.objects.get(slug=options['profile'], is_active=True)
            except PlannerProfile.DoesNotExist:
                raise CommandError(f"找不到規劃器參數組：{options['profile']}")
            return profile.to_config(), profile.slug
        return PlannerConfig.from_settings(), None

    def _emit(self, options):
        return options.get('emit') or DEFAULT_EMIT

    def _report(self, result, options):
        for row in result.rows:
            grid = f" [{row['grid_value']}]" if row['grid_value'] not in (None, '') else ''
            self.stdout.write(
                f"  {row['scenario']} / {row['planner']}{grid}："
                f"成功 {row['success_rate']:.1f}%、碰撞 {row['collision_rate']:.1f}%、"
                f"停滯 {row['freezing_sum']}、正面交會 {row['frontal_sum']}"
            )
        if result.failures:
            self.stdout.write(self.style.WARNING(f"  [!] {len(result.failures)} 個回合執行失敗"))
        if options.get('store'):
            name = options.get('name') or f"{result.kind} {timezone.now():%Y-%m-%d %H:%M}"
            suite = store_suite(result, name)
            self.stdout.write(f"  [+] 已儲存：{suite.name}（id={suite.id}）")

    # ========== 子指令 ==========

    def handle_run(self, options):
        scenarios = self._scenarios(options)
        if len(scenarios) != 1:
            raise CommandError("run 只接受單一場景，多個場景請使用 suite")
        cfg = scenarios[0]
        pcfg, label = self._planner(options)
        if options.get('baseline'):
            pcfg, label = pcfg.baseline(), 'baseline'
        emit = self._emit(options)

        log = run_episode(cfg, pcfg, EpisodeLimits.from_settings(), planner_label=label,
                          record_plotdata='replay' in emit)
        outcome = EpisodeOutcome(cfg.label, log.planner['label'], None, cfg.seed, log.metrics, '', log)
        result = SuiteResult('single', [outcome], aggregate([outcome]), {'repeats': 1, 'seed': cfg.seed})

        out = Path(options['out'])
        written = emit_suite(result, out, [e for e in emit if e != 'replay'])
        episode_emit = [e for e in emit if e in ('json', 'replay')]
        if episode_emit:
            written += emit_episode(log, out, episode_emit)

        m = log.metrics
        self.stdout.write(self.style.SUCCESS(
            f"[+] {log.episode_id}：{log.outcome}，完成 {m.complete_ratio:.1f}%，"
            f"停滯 {m.freezing_count} 次，正面交會 {m.frontal_interactions} 次，耗時 {m.execute_time:.1f} s"
        ))
        self.stdout.write(f"  輸出 {len(written)} 個檔案到 {out}")
        self._report(result, options)

    def handle_suite(self, options):
        default = [ScenarioConfig(kind=k, direction=d)
                   for k in (ScenarioKind.NC, ScenarioKind.FI, ScenarioKind.BA)
                   for d in (Direction.DT, Direction.UT)]
        scenarios = self._scenarios(options, default)
        pcfg, label = self._planner(options)

        matrix = []
        for s in scenarios:
            matrix.append((s, pcfg, label) if label else (s, pcfg))
            if options.get('baseline'):
                matrix.append((s, pcfg.baseline(), 'baseline'))

        limits = EpisodeLimits.from_settings()
        repeats = options.get('repeats') or self._harness_default('repeats')
        workers = options.get('workers') or self._harness_default('workers')
        emit = self._emit(options)

        self.stdout.write(f"開始執行 {len(matrix)} 個格子，每格 {repeats} 次...")
        result = run_suite(matrix, repeats, limits=limits, workers=workers, keep_logs='replay' in emit)
        written = emit_suite(result, options['out'], emit)
        self.stdout.write(self.style.SUCCESS(f"[+] 完成 {len(result.outcomes)} 個回合，輸出 {len(written)} 個檔案"))
        self._report(result, options)

    def handle_ablation(self, options):
        kind = options['kind']
        grid = None
        if options.get('grid'):
            try:
                grid = [float(v) for v in options['grid'].split(',') if v.strip()]
            except ValueError:
                raise CommandError(f"無法解析格點：{options['grid']}")
        scenarios = self._scenarios(options, [ScenarioConfig(kind=ScenarioKind.NC, direction=Direction.UT)])
        base, _ = self._planner(options)
        workers = options.get('workers') or self._harness_default('workers')

        self.stdout.write(f"開始消融掃描：{kind}")
        result = run_ablation(kind, grid, scenarios, base, options['repeats'], workers=workers)
        written = emit_suite(result, options['out'], self._emit(options))
        self.stdout.write(self.style.SUCCESS(f"[+] 完成 {len(result.outcomes)} 個回合，輸出 {len(written)} 個檔案"))
        self._report(result, options)

    def handle_replay(self, options):
        if options.get('aggregate'):
            return self._replay_aggregate(Path(options['aggregate']))
        path = Path(options['log'])
        with open(path, encoding='utf-8') as fh:
            data = json.load(fh)
        replay_name = data.get('replay_csv')
        if not replay_name:
            raise CommandError(f"{path} 沒有回放紀錄，請以 --emit replay 重新產生")
        recorded = read_replay_csv(path.parent / replay_name)

        matches, fresh = replay_matches(data, recorded)
        if not matches:
            raise CommandError(f"回放不一致：{data.get('episode')}（重新執行結果為 {fresh.outcome}）")
        self.stdout.write(self.style.SUCCESS(
            f"[+] 回放一致：{data.get('episode')}，共 {len(recorded)} 列，結果 {fresh.outcome}"
        ))

    def _replay_aggregate(self, out):
        result = aggregate_replays(out)
        self.stdout.write(f"由回放紀錄重算 {len(result.outcomes)} 個回合")
        self._report(result, {})
        stored = out / 'aggregate.json'
        if stored.exists():
            with open(stored, encoding='utf-8') as fh:
                if json.load(fh) != result.rows:
                    raise CommandError(f"彙總表與 {stored} 不一致")
            self.stdout.write(self.style.SUCCESS(f"[+] 彙總表與 {stored} 一致"))

    def _harness_default(self, key):
        return conf.section('HARNESS')[key]
