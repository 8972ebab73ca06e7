# -*- coding: utf-8 -*-
"""Shared plumbing for the aloha-lab management commands.

Scenario options, YAML scenario files, table output and exit statuses live
here so that each command only says what it computes.

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

import logging
from argparse import ArgumentParser, RawDescriptionHelpFormatter
from pathlib import Path
from typing import Optional

import django.core.management.base
import yaml
from django.core.management.base import CommandError

from alohalab.cli import (COLUMNS, CommandName, OutputFormat, ScenarioSpec,
                          column_names, emit)
from alohalab.errors import AlohaLabError, DomainError
from alohalab.util.file import (count, cutoff_phase, existing_file, natural,
                                output_path, probability, q_grid, rate)
from alohalab.util.misc import Raw

# Exit statuses beside Django's own 0.
EXIT_FAILED_CHECKS = 1
EXIT_USAGE = 2


class LoggingLevelCommand(django.core.management.base.BaseCommand):
    """A command that uses Django's verbosity for general logging."""

    requires_system_checks: list = []

    def handle(self, **kwargs):
        """Adapt Django's standard verbosity argument for general use."""
        logging.basicConfig(level=10 * (4 - kwargs['verbosity']))


class _ScenarioCommand(LoggingLevelCommand):
    """Abstract base class for commands on one network scenario.

    Every parameter may come from a YAML scenario file. Options given on the
    command line take precedence over the file.

    """

    _command: CommandName
    _takes_q = True
    _takes_grid = False
    _simulates = False
    _traces = False

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.formatter_class = RawDescriptionHelpFormatter
        parser.epilog = self._epilog()
        return parser

    def add_arguments(self, parser: ArgumentParser):
        self._add_scenario_arguments(parser)
        self._add_network_arguments(parser)
        if self._simulates:
            self._add_simulation_arguments(parser)
        self._add_output_arguments(parser)
        return parser

    def _add_scenario_arguments(self, parser: ArgumentParser):
        parser.add_argument('--scenario',
                            metavar='PATH',
                            type=existing_file,
                            help='Read parameters from a YAML file')

    def _add_network_arguments(self, parser: ArgumentParser):
        network = parser.add_argument_group('network')
        network.add_argument('--n',
                             metavar='NODES',
                             type=count,
                             help='Number of nodes')
        network.add_argument('--rate',
                             metavar='λ̂',
                             type=rate,
                             help='Aggregate input rate, packets per slot')
        network.add_argument('--K',
                             metavar='PHASE',
                             type=cutoff_phase,
                             help='Cutoff phase, or “inf” for unbounded '
                             'backoff')
        if not self._takes_q:
            return network
        if self._takes_grid:
            q = network.add_mutually_exclusive_group()
            q.add_argument('--q-grid',
                           metavar='START:STOP:POINTS[:log]',
                           type=q_grid,
                           help='Sweep the retransmission factor')
        else:
            q = network
        q.add_argument('--q',
                       metavar='FACTOR',
                       type=probability,
                       help='Retransmission factor')
        return network

    def _add_simulation_arguments(self, parser: ArgumentParser):
        simulation = parser.add_argument_group('simulation')
        simulation.add_argument('--slots',
                                type=count,
                                help='Measured slots')
        simulation.add_argument('--warmup',
                                type=natural,
                                help='Slots discarded before measuring')
        simulation.add_argument('--seed',
                                type=natural,
                                help='Master seed; default from settings or '
                                'ALOHA_LAB_SEED')
        simulation.add_argument('--saturated',
                                action='store_const',
                                const=True,
                                help='Keep every queue non-empty')
        simulation.add_argument('--workers',
                                type=count,
                                help='Processes for independent runs')
        if self._takes_grid:
            simulation.add_argument('--simulate',
                                    action='store_const',
                                    const=True,
                                    help='Add simulated estimates per q')
        if self._traces:
            simulation.add_argument('--trace-node',
                                    metavar='INDEX',
                                    type=natural,
                                    help='Node whose queue to record')
        return simulation

    def _add_output_arguments(self, parser: ArgumentParser):
        output = parser.add_argument_group('output')
        output.add_argument('--format',
                            dest='output_format',
                            choices=[f.value for f in OutputFormat],
                            help='Table format; default csv')
        output.add_argument('--out',
                            metavar='PATH',
                            type=output_path,
                            help='Write the table to a file, not stdout')
        return output

    def handle(self, *args, **kwargs):
        """Handle command.

        This is an override to make full arguments available to overrides,
        and to turn domain errors into exit statuses.

        """
        self._args = kwargs
        super().handle(*args, **kwargs)
        try:
            scenario = self._parse_file(kwargs['scenario']) \
                if kwargs.get('scenario') else None
            spec = ScenarioSpec.from_options(self._command, kwargs, scenario)
            self._handle(spec)
        except AlohaLabError as e:
            raise CommandError(str(e), returncode=EXIT_USAGE)

    def _handle(self, spec: ScenarioSpec):
        raise NotImplementedError()

    def _parse_file(self, filepath: Path) -> Raw:
        logging.debug(f'Parsing {filepath}.')
        assert isinstance(filepath, Path)
        data = yaml.safe_load(filepath.read_text(encoding='utf-8'))
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise DomainError(f'Not a mapping of parameters: {filepath}')
        return data

    def _write(self, text: str, spec: ScenarioSpec):
        """Print rendered output unless it went to a file."""
        if spec.out is None:
            self.stdout.write(text, ending='')

    def _epilog(self) -> str:
        columns = COLUMNS[self._command]
        width = max(len(name) for name, _ in columns)
        lines = [f'  {name:<{width}}  {text}' for name, text in columns]
        return '\n'.join(['columns:', *lines])


class TableCommand(_ScenarioCommand):
    """A command that prints one table of records."""

    def _handle(self, spec: ScenarioSpec):
        self._write(
            emit(self._rows(spec), column_names(self._command),
                 spec.output_format, spec.out), spec)

    def _rows(self, spec: ScenarioSpec):
        raise NotImplementedError()


def failed_checks(failures: int, total: int) -> Optional[CommandError]:
    """Return an error to raise if any validation check failed."""
    if not failures:
        return None
    return CommandError(f'{failures} of {total} checks failed.',
                        returncode=EXIT_FAILED_CHECKS)
