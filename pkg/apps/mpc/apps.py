from django.apps import AppConfig


class MpcAppConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.mpc"
    label = "mpc"
    verbose_name = "Model predictive rebalancing"
