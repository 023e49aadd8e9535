from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    """
    Read-only ledger of experiment runs.
    Runs are recorded by the pddp command, never edited by hand.
    """
    list_display = ('id', 'kind', 'system', 'scheme', 'status', 'exit_code', 'final_cost', 'iterations',
                    'created_at')
    list_filter = ('kind', 'system', 'scheme', 'status')
    search_fields = ('system', 'output_dir')
    readonly_fields = ('kind', 'system', 'scheme', 'status', 'exit_code', 'final_cost', 'final_params',
                       'iterations', 'wall_time', 'output_dir', 'config', 'created_at')
    date_hierarchy = 'created_at'

    fieldsets = (
        ('Run', {
            'fields': ('kind', 'system', 'scheme', 'status', 'exit_code')
        }),
        ('Result', {
            'fields': ('final_cost', 'final_params', 'iterations', 'wall_time', 'output_dir')
        }),
        ('Configuration', {
            'fields': ('config',),
            'classes': ('collapse',)
        }),
        ('Timestamps', {
            'fields': ('created_at',),
        }),
    )

    def has_add_permission(self, request):
        return False

    def has_change_permission(self, request, obj=None):
        return False


admin.site.site_header = "pddplab Admin"
admin.site.site_title = "pddplab Administration"
admin.site.index_title = "Experiment ledger"
