import csv

from django.http import HttpResponse, JsonResponse

from .exports import METRIC_COLUMNS
from .metrics import aggregate
from .models import SuiteRun


def suite_list(request):
    """實驗批次列表"""
    suites = SuiteRun.objects.all()
    data = [
        {
            'id': s.id,
            'name': s.name,
            'kind': s.kind,
            'ablation_kind': s.ablation_kind,
            'repeats': s.repeats,
            'episodes': s.episodes.count(),
            'created_at': s.created_at.isoformat(),
        }
        for s in suites
    ]
    return JsonResponse({'success': True, 'suites': data})


def _get_suite(suite_id):
    try:
        return SuiteRun.objects.get(pk=suite_id), None
    except SuiteRun.DoesNotExist:
        return None, JsonResponse({'success': False, 'error': '找不到指定的實驗批次'}, status=404)


def suite_detail(request, suite_id):
    """由已儲存的回合重新計算彙總表"""
    suite, error = _get_suite(suite_id)
    if error:
        return error

    rows = aggregate(suite.episodes.all())
    return JsonResponse({
        'success': True,
        'suite': {
            'id': suite.id,
            'name': suite.name,
            'kind': suite.kind,
            'ablation_kind': suite.ablation_kind,
            'parameters': suite.parameters,
            'repeats': suite.repeats,
        },
        'rows': rows,
    })


def suite_metrics_csv(request, suite_id):
    """下載每回合指標"""
    suite, error = _get_suite(suite_id)
    if error:
        return error

    response = HttpResponse(content_type='text/csv; charset=utf-8')
    response['Content-Disposition'] = f'attachment; filename="suite_{suite.id}_metrics.csv"'
    writer = csv.writer(response)
    writer.writerow(METRIC_COLUMNS)
    for e in suite.episodes.all():
        writer.writerow([
            e.scenario_label, e.planner_label, e.grid_value, e.seed, e.outcome,
            e.success, e.collision, e.timeout, e.complete_ratio, e.freezing_count,
            e.jerk, e.frontal_interactions, e.cumulative_density, e.execute_time, e.error,
        ])
    return response
