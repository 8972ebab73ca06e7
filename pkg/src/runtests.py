"""A script to trigger Django unit tests.

This is based on the conceit of defining a fake site project. This site is
not packaged with the application. The app has no models, so no database is
configured.

Set ALOHALAB_SLOW_TESTS to include tests that simulate millions of slots.

"""

import sys

import django
from django.conf import settings
from django.core.management import call_command


def _run():
    settings.configure(
        INSTALLED_APPS=['alohalab'],
        ALOHALAB_WARMUP_SLOTS=1_000,
        ALOHALAB_MEASURE_SLOTS=20_000,
    )

    django.setup()

    return call_command('test', 'alohalab')


if __name__ == '__main__':
    sys.exit(bool(_run()))
