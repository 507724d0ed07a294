from django.contrib import admin

from .models import PlannerProfile, ScenarioPreset


@admin.register(ScenarioPreset)
class ScenarioPresetAdmin(admin.ModelAdmin):
    """場景預設管理界面"""
    list_display = ['name', 'slug', 'kind', 'direction', 'counterflow', 'ped_count', 'seed', 'is_active']
    list_filter = ['kind', 'direction', 'counterflow', 'is_active']
    search_fields = ['name', 'slug']
    list_editable = ['is_active']
    readonly_fields = ['created_at', 'updated_at']
    prepopulated_fields = {'slug': ('name',)}
    ordering = ['kind', 'name']
    fieldsets = (
        ('基本資訊', {
            'fields': ('name', 'slug', 'kind', 'direction', 'is_active')
        }),
        ('人群', {
            'fields': ('ped_count', 'counterflow', 'minor_flow_fraction', 'cyclist_fraction', 'seed')
        }),
        ('幾何', {
            'fields': ('corridor_width', 'corridor_length', 'bottleneck_gap', 'arena_size'),
            'classes': ('collapse',)
        }),
        ('時間資訊', {
            'fields': ('created_at', 'updated_at'),
            'classes': ('collapse',)
        }),
    )


@admin.register(PlannerProfile)
class PlannerProfileAdmin(admin.ModelAdmin):
    """規劃器參數組管理界面"""
    list_display = ['name', 'slug', 'v_max', 'horizon', 'w_idp', 'w_fdp', 'is_baseline', 'is_active']
    list_filter = ['is_baseline', 'is_active']
    search_fields = ['name', 'slug']
    list_editable = ['is_active']
    readonly_fields = ['created_at', 'updated_at']
    prepopulated_fields = {'slug': ('name',)}
