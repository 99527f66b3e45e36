from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("id", "name", "controller", "step_minutes", "demand_seed", "avg_wait_minutes", "created_at")
    search_fields = ("name", "controller", "arrival_hash")
    list_filter = ("controller", "step_minutes", "created_at")
    readonly_fields = ("created_at", "arrival_hash")
