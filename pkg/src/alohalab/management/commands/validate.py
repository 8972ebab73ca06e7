# -*- coding: utf-8 -*-
"""Run validation suites against closed forms and simulation.

-------

This program is free software: you can redistribute it and/or modify it under
the terms of the GNU General Public License as published by the Free Software
Foundation, either version 3 of the License, or (at your option) any later
version.

This program is distributed in the hope that it will be useful, but WITHOUT ANY
WARRANTY; without even the implied warranty of MERCHANTABILITY or FITNESS FOR A
PARTICULAR PURPOSE. See the GNU General Public License for more details.

You should have received a copy of the GNU General Public License along with
this program. If not, see <https://www.gnu.org/licenses/>.

"""

from argparse import ArgumentParser

from alohalab.cli import CommandName, ScenarioSpec, validate
from alohalab.management.misc import TableCommand, failed_checks
from alohalab.util.file import count
from alohalab.validation import load_catalogue

# Stands for every suite in the catalogue.
ALL = 'all'


class Command(TableCommand):
    help = 'Run named validation suites; exit 1 if a check fails'

    _command = CommandName.VALIDATE

    def add_arguments(self, parser: ArgumentParser):
        parser.add_argument('suites',
                            metavar='SUITE',
                            nargs='*',
                            help='Suite name, or “all”; see --list')
        parser.add_argument('--list',
                            action='store_true',
                            help='Print suite names and descriptions')
        parser.add_argument('--slots',
                            type=count,
                            help='Override the slot budget of simulated '
                            'checks')
        self._add_output_arguments(parser)
        return parser

    def _handle(self, spec: ScenarioSpec):
        catalogue = load_catalogue()
        if self._args['list']:
            for name, suite in catalogue.items():
                self.stdout.write(f'{name}: {suite.get("description", "")}')
            return

        suites = self._args['suites']
        if suites == [ALL]:
            suites = list(catalogue)
        self._results = validate(suites, slots=self._args['slots'])
        super()._handle(spec)

        error = failed_checks(sum(not r.passed for r in self._results),
                              len(self._results))
        if error:
            raise error

    def _rows(self, spec: ScenarioSpec):
        rows = []
        for result in self._results:
            verdict = 'PASS' if result.passed else 'FAIL'
            self.stderr.write(f'{verdict} {result.suite}/{result.check}: '
                              f'{result.measured:.6g} in '
                              f'[{_end(result.lower, "-inf")}, '
                              f'{_end(result.upper, "inf")}]')
            rows.append(result.record())
        return rows


def _end(value, unbounded: str) -> str:
    return unbounded if value is None else f'{value:.6g}'
