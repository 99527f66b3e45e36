from django.apps import AppConfig


class PlantConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.plant"
    label = "plant"
    verbose_name = "Fleet simulator"
