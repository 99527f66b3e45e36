from .base import *  # noqa
import dj_database_url  # pip install dj-database-url

# ----------------------------------------------------------------------
# Core toggles
# ----------------------------------------------------------------------
DEBUG = False

ALLOWED_HOSTS = env.list("DJANGO_ALLOWED_HOSTS", default=["localhost"])

# ----------------------------------------------------------------------
# Database & Celery/Redis (shared run store, worker fan-out for compare)
# ----------------------------------------------------------------------
DATABASES = {
    "default": dj_database_url.parse(
        env("DATABASE_URL", default="postgres://rebalance:rebalance@db:5432/rebalance"),
        conn_max_age=600,
    )
}

CELERY_TASK_ALWAYS_EAGER = env.bool("CELERY_TASK_ALWAYS_EAGER", default=False)
if not CELERY_TASK_ALWAYS_EAGER:
    CELERY_BROKER_URL = env(
        "CELERY_BROKER_URL",
        default=env("REDIS_URL", default="redis://redis:6379/0"),
    )
    CELERY_RESULT_BACKEND = env("CELERY_RESULT_BACKEND", default=CELERY_BROKER_URL)

# ----------------------------------------------------------------------
# Structured logging (JSON)
# ----------------------------------------------------------------------
LOGGING["handlers"]["console"]["formatter"] = "json"

# ----------------------------------------------------------------------
# Sentry (optional)
# ----------------------------------------------------------------------
SENTRY_DSN = env("SENTRY_DSN", default="")
if SENTRY_DSN:
    try:
        import sentry_sdk
        from sentry_sdk.integrations.celery import CeleryIntegration
        from sentry_sdk.integrations.django import DjangoIntegration

        sentry_sdk.init(
            dsn=SENTRY_DSN,
            integrations=[DjangoIntegration(), CeleryIntegration()],
            traces_sample_rate=0.0,
        )
    except Exception:
        pass
