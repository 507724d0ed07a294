from django.contrib import admin

from .models import EpisodeRecord, SuiteRun


class EpisodeRecordInline(admin.TabularInline):
    """回合紀錄內嵌"""
    model = EpisodeRecord
    extra = 0
    fields = ['scenario_label', 'planner_label', 'grid_value', 'seed', 'outcome',
              'complete_ratio', 'freezing_count', 'frontal_interactions', 'execute_time']
    readonly_fields = fields
    can_delete = False
    show_change_link = True


@admin.register(SuiteRun)
class SuiteRunAdmin(admin.ModelAdmin):
    """實驗批次管理界面"""
    list_display = ['name', 'kind', 'ablation_kind', 'repeats', 'episode_count', 'created_at']
    list_filter = ['kind', 'ablation_kind', 'created_at']
    search_fields = ['name']
    readonly_fields = ['created_at']
    inlines = [EpisodeRecordInline]

    def episode_count(self, obj):
        return obj.episodes.count()
    episode_count.short_description = '回合數'


@admin.register(EpisodeRecord)
class EpisodeRecordAdmin(admin.ModelAdmin):
    """回合紀錄管理界面"""
    list_display = ['suite', 'scenario_label', 'planner_label', 'grid_value', 'seed', 'outcome',
                    'freezing_count', 'frontal_interactions', 'execute_time']
    list_filter = ['outcome', 'scenario_label', 'planner_label', 'suite']
    search_fields = ['scenario_label', 'planner_label', 'suite__name', 'error']
