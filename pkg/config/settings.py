# config/settings.py
"""
DJANGO_SETTINGS_MODULE target. Picks prod when REBALANCE_ENV=prod,
otherwise dev (plain-text logs, eager Celery).
"""
import os

if os.environ.get("REBALANCE_ENV", "dev") == "prod":
    from .prod import *  # noqa
else:
    from .dev import *  # noqa
