"""Pytest wiring: configure Django as src/runtests.py does."""

import django
from django.conf import settings


def pytest_configure(config):
    if not settings.configured:
        settings.configure(
            INSTALLED_APPS=['alohalab'],
            ALOHALAB_WARMUP_SLOTS=1_000,
            ALOHALAB_MEASURE_SLOTS=20_000,
        )
        django.setup()
