from django.contrib import admin
from .models import ExperimentRun, ExperimentCell


class ExperimentCellInline(admin.TabularInline):
    model = ExperimentCell
    extra = 0
    fields = ['organ', 'model_name', 'status', 'best_epoch', 'val_dsc']
    readonly_fields = fields


# ========================================
# EXPERIMENT RUN ADMIN
# ========================================
@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['id', 'name', 'status', 'seed', 'started_at', 'finished_at']
    list_filter = ['status', 'started_at']
    search_fields = ['name', 'out_dir', 'data_dir']
    readonly_fields = ['started_at', 'finished_at']
    inlines = [ExperimentCellInline]


# ========================================
# EXPERIMENT CELL ADMIN
# ========================================
@admin.register(ExperimentCell)
class ExperimentCellAdmin(admin.ModelAdmin):
    list_display = ['id', 'run', 'organ', 'model_name', 'status', 'best_epoch', 'val_dsc']
    list_filter = ['status', 'organ', 'model_name']
    search_fields = ['run__name', 'error', 'checkpoint']
    list_per_page = 50

    fieldsets = (
        ('Cell', {
            'fields': ('run', 'organ', 'model_name', 'status', 'error')
        }),
        ('Training', {
            'fields': ('best_epoch', 'epochs_run', 'val_loss', 'val_dsc', 'checkpoint')
        }),
        ('Test Metrics', {
            'fields': ('metrics',)
        }),
    )
