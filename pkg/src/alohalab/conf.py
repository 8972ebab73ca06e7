# -*- coding: utf-8 -*-
"""App settings with fallback defaults.

Any of the names in DEFAULTS may be set in a Django settings module. The
environment variables in ENVIRONMENT take precedence over both, so that a
published table can be regenerated with a different seed without editing
anything.

"""

import logging
import os
from typing import Any, Dict

import django.conf

from alohalab.errors import DomainError

DEFAULTS: Dict[str, Any] = {
    'ALOHALAB_SEED': 20080422,
    'ALOHALAB_WARMUP_SLOTS': 100_000,
    'ALOHALAB_MEASURE_SLOTS': 1_000_000,
    'ALOHALAB_WORKERS': 1,
}

ENVIRONMENT: Dict[str, str] = {
    'ALOHALAB_SEED': 'ALOHA_LAB_SEED',
}


def setting(name: str) -> Any:
    """Return the effective value of a named setting."""
    default = DEFAULTS[name]

    variable = ENVIRONMENT.get(name)
    if variable and os.environ.get(variable):
        raw = os.environ[variable]
        logging.debug(f'{name} taken from {variable}={raw}.')
        try:
            return type(default)(raw)
        except ValueError:
            raise DomainError(f'{variable} must be an integer, not {raw!r}.')

    if not django.conf.settings.configured:
        return default
    return getattr(django.conf.settings, name, default)
