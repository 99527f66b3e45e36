from pathlib import Path
import environ

BASE_DIR = Path(__file__).resolve().parent.parent

# --- env bootstrap -----------------------------------------------------------
env = environ.Env()
ENV_FILE = BASE_DIR / ".env"
if ENV_FILE.exists():
    environ.Env.read_env(ENV_FILE)

# --- core toggles ------------------------------------------------------------
SECRET_KEY = env.str("DJANGO_SECRET_KEY", default="dev-secret-please-change")
DEBUG = env.bool("DJANGO_DEBUG", default=True)
ALLOWED_HOSTS = env.list("DJANGO_ALLOWED_HOSTS", default=["127.0.0.1", "localhost"])

# --- installed apps ----------------------------------------------------------
INSTALLED_APPS = [
    "django.contrib.admin",
    "django.contrib.auth",
    "django.contrib.contenttypes",
    "django.contrib.sessions",
    "django.contrib.messages",

    # Input schemas (serializers only, no API surface)
    "rest_framework",

    # Project apps
    "apps.core",
    "apps.network",
    "apps.demand",
    "apps.plant",
    "apps.dynamics",
    "apps.solver",
    "apps.reference",
    "apps.mpc",
    "apps.iarr",
    "apps.harness",
]

MIDDLEWARE = [
    "django.middleware.security.SecurityMiddleware",
    "django.contrib.sessions.middleware.SessionMiddleware",
    "django.middleware.common.CommonMiddleware",
    "django.middleware.csrf.CsrfViewMiddleware",
    "django.contrib.auth.middleware.AuthenticationMiddleware",
    "django.contrib.messages.middleware.MessageMiddleware",
]

ROOT_URLCONF = "config.urls"

# Admin needs the template engine to browse stored runs
TEMPLATES = [
    {
        "BACKEND": "django.template.backends.django.DjangoTemplates",
        "DIRS": [],
        "APP_DIRS": True,
        "OPTIONS": {
            "context_processors": [
                "django.template.context_processors.request",
                "django.contrib.auth.context_processors.auth",
                "django.contrib.messages.context_processors.messages",
            ],
        },
    },
]

# --- database ---------------------------------------------------------------
DATABASES = {
    "default": env.db("DATABASE_URL", default=f"sqlite:///{BASE_DIR / 'db.sqlite3'}"),
}
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LANGUAGE_CODE = "en-us"
TIME_ZONE = env.str("DJANGO_TIME_ZONE", default="UTC")
USE_I18N = False
USE_TZ = True

STATIC_URL = "/static/"

# --- experiment defaults -----------------------------------------------------
# Case-study protocol: 2-min steps, horizon 8, fleet 125, 12 h, reference every 2 h.
REBALANCE_STEP_MINUTES = env.float("REBALANCE_STEP_MINUTES", default=2.0)
REBALANCE_HORIZON = env.int("REBALANCE_HORIZON", default=8)
REBALANCE_FLEET_SIZE = env.int("REBALANCE_FLEET_SIZE", default=125)
REBALANCE_DURATION_MINUTES = env.float("REBALANCE_DURATION_MINUTES", default=720.0)
REBALANCE_REFRESH_MINUTES = env.float("REBALANCE_REFRESH_MINUTES", default=120.0)
REBALANCE_PERTURBATION = env.float("REBALANCE_PERTURBATION", default=0.0)

REBALANCE_DEMAND_SEED = env.int("REBALANCE_DEMAND_SEED", default=0)
REBALANCE_ROUNDING_SEED = env.int("REBALANCE_ROUNDING_SEED", default=1)
REBALANCE_PERTURBATION_SEED = env.int("REBALANCE_PERTURBATION_SEED", default=2)

# Soft terminal weight on queues = factor x max stage weight
REBALANCE_SOFT_TERMINAL_FACTOR = env.float("REBALANCE_SOFT_TERMINAL_FACTOR", default=1000.0)
# Soft terminal weight on zone stock (idle + inbound) = factor x mean travel steps
REBALANCE_SOFT_STOCK_FACTOR = env.float("REBALANCE_SOFT_STOCK_FACTOR", default=0.25)
# Per-vehicle penalty on unmet coverage in the IARR program, in units of max travel time
REBALANCE_IARR_SHORTAGE_WEIGHT = env.float("REBALANCE_IARR_SHORTAGE_WEIGHT", default=10.0)

REBALANCE_OUTPUT_DIR = env.str("REBALANCE_OUTPUT_DIR", default=str(BASE_DIR / "runs"))

# --- Celery ------------------------------------------------------------------
# compare() fans runs out as a group; eager mode keeps them in-process.
CELERY_TASK_ALWAYS_EAGER = env.bool("CELERY_TASK_ALWAYS_EAGER", default=True)
CELERY_TASK_EAGER_PROPAGATES = True
if CELERY_TASK_ALWAYS_EAGER:
    CELERY_BROKER_URL = "memory://"
    CELERY_RESULT_BACKEND = "cache+memory://"
else:
    CELERY_BROKER_URL = env.str(
        "CELERY_BROKER_URL",
        default=env.str("REDIS_URL", default="redis://localhost:6379/0"),
    )
    CELERY_RESULT_BACKEND = env.str("CELERY_RESULT_BACKEND", default=CELERY_BROKER_URL)
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"

# --- logging -----------------------------------------------------------------
REBALANCE_LOG_LEVEL = env.str("REBALANCE_LOG_LEVEL", default="INFO")
REBALANCE_LOG_FORMAT = env.str("REBALANCE_LOG_FORMAT", default="json")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "json": {
            "()": "pythonjsonlogger.jsonlogger.JsonFormatter",
            "fmt": "%(asctime)s %(levelname)s %(name)s %(message)s",
        },
        "plain": {"format": "%(asctime)s %(levelname)-7s %(name)s: %(message)s"},
    },
    "handlers": {
        # stdout is reserved for command output
        "console": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": REBALANCE_LOG_FORMAT,
        },
    },
    "loggers": {
        "apps": {"handlers": ["console"], "level": REBALANCE_LOG_LEVEL, "propagate": False},
    },
    "root": {"handlers": ["console"], "level": "WARNING"},
}
