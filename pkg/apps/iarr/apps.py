from django.apps import AppConfig


class IarrConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.iarr"
    label = "iarr"
    verbose_name = "Real-time rebalancing baseline"
