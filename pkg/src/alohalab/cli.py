# -*- coding: utf-8 -*-
"""The command-line front end: analysis and simulation as tables.

The commands themselves are Django management commands under
alohalab.management.commands. This module holds what they share: the
scenario specification assembled from options and scenario files, the
records each command produces, and the rendering of records as CSV, JSON
or YAML. Output is deterministic, so a rerun with the same seed produces
the same bytes.

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

###########
# IMPORTS #
###########

import csv
import enum
import io
import json
import logging
import sys
from argparse import ArgumentTypeError
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import django
import django.conf
import numpy as np
import pyaml
from django.core.management import ManagementUtility

from alohalab import conf
from alohalab.errors import DomainError, OutputError, SingularityError
from alohalab.regions import (Method, Mode, classify, max_stable_throughput,
                              pseudo_region, q_lower, q_lower_approx, q_upper,
                              q_upper_star, q_upper_star_approx)
from alohalab.simulator import (SimConfig, SimMetrics, row_seeds, run,
                                standard_error, sweep)
from alohalab.steady_state import (Cutoff, NetworkConfig, attempt_rate,
                                   clamp_probability, offered_load,
                                   require_stable_points)
from alohalab.util import file as types
from alohalab.util.misc import Raw, field_order_fn, plain, text_cell
from alohalab.validation import CheckResult, run_suites

#############
# CONSTANTS #
#############

PROGRAM = 'aloha-lab'

###########
# CLASSES #
###########


class CommandName(enum.Enum):
    ANALYZE = 'analyze'
    REGIONS = 'regions'
    SWEEP = 'sweep'
    SIMULATE = 'simulate'
    VALIDATE = 'validate'
    TRACE = 'trace'


class OutputFormat(enum.Enum):
    CSV = 'csv'
    JSON = 'json'
    YAML = 'yaml'


@dataclass(frozen=True)
class QGrid:
    """Retransmission factors to sweep, evenly or logarithmically spaced."""

    start: float
    stop: float
    points: int
    log: bool = False

    def __post_init__(self):
        if self.points < 1:
            raise DomainError('A q grid needs at least one point.')
        if self.points > 1 and not self.start < self.stop:
            raise DomainError(f'Grid start {self.start} must lie below stop '
                              f'{self.stop}.')

    def values(self) -> List[float]:
        if self.points == 1:
            return [self.start]
        space = np.geomspace if self.log else np.linspace
        return [float(q) for q in space(self.start, self.stop, self.points)]


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything one command needs, from options and a scenario file."""

    command: CommandName
    n: Optional[int] = None
    rate: Optional[float] = None
    cutoff: Optional[Cutoff] = None
    q: Optional[float] = None
    q_grid: Optional[QGrid] = None
    slots: int = conf.DEFAULTS['ALOHALAB_MEASURE_SLOTS']
    warmup: int = conf.DEFAULTS['ALOHALAB_WARMUP_SLOTS']
    seed: int = conf.DEFAULTS['ALOHALAB_SEED']
    saturated: bool = False
    trace_node: Optional[int] = None
    simulate: bool = False
    workers: int = 1
    out: Optional[Path] = None
    output_format: OutputFormat = OutputFormat.CSV

    @classmethod
    def from_options(cls, command: CommandName, options: Raw,
                     scenario: Optional[Raw] = None) -> 'ScenarioSpec':
        """Merge options over scenario-file values over settings.

        Options that were not given are None. Scenario values pass through
        the same conversions as command-line strings.

        """
        scenario = dict(scenario or {})
        unknown = set(scenario) - set(_SCENARIO_KEYS)
        if unknown:
            raise DomainError(f'Unknown scenario keys: '
                              f'{", ".join(sorted(unknown))}.')

        values: Raw = {}
        for key, (attribute, convert) in _SCENARIO_KEYS.items():
            value = options.get(attribute if key == 'format' else key)
            if value is None and scenario.get(key) is not None:
                try:
                    value = convert(scenario[key])
                except ArgumentTypeError as e:
                    raise DomainError(f'Scenario key {key}: {e}')
            if value is not None:
                values[attribute] = value

        values.setdefault('slots', conf.setting('ALOHALAB_MEASURE_SLOTS'))
        values.setdefault('warmup', conf.setting('ALOHALAB_WARMUP_SLOTS'))
        values.setdefault('seed', conf.setting('ALOHALAB_SEED'))
        values.setdefault('workers', conf.setting('ALOHALAB_WORKERS'))
        if 'q_grid' in values:
            values['q_grid'] = QGrid(*values['q_grid'])
        if 'output_format' in values:
            name = values['output_format']
            try:
                values['output_format'] = OutputFormat(name)
            except ValueError:
                raise DomainError(f'Unknown format {name!r}.')
        return cls(command, **values)

    def require(self, *names: str):
        """Raise DomainError naming any missing parameter."""
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            flags = ', '.join(_FLAGS.get(n, f'--{n}') for n in missing)
            raise DomainError(f'Missing {flags}.')

    def network(self, q: Optional[float] = None) -> NetworkConfig:
        self.require('n', 'rate', 'cutoff')
        q = self.q if q is None else q
        if q is None:
            raise DomainError('Missing --q.')
        return NetworkConfig(self.n, self.rate, self.cutoff, q)

    def sim_config(self,
                   q: Optional[float] = None,
                   seed: Optional[int] = None) -> SimConfig:
        return SimConfig(self.network(q),
                         seed=self.seed if seed is None else seed,
                         warmup_slots=self.warmup,
                         measure_slots=self.slots,
                         saturated=self.saturated,
                         trace_node=self.trace_node)

    def q_values(self) -> List[float]:
        if self.q_grid is not None:
            return self.q_grid.values()
        if self.q is not None:
            return [self.q]
        raise DomainError('Missing --q or --q-grid.')


# Scenario key -> (ScenarioSpec attribute, conversion).
_SCENARIO_KEYS: Dict[str, Tuple[str, Callable]] = {
    'n': ('n', types.count),
    'rate': ('rate', types.rate),
    'K': ('cutoff', types.cutoff_phase),
    'q': ('q', types.probability),
    'q_grid': ('q_grid', types.q_grid),
    'slots': ('slots', types.count),
    'warmup': ('warmup', types.natural),
    'seed': ('seed', types.natural),
    'saturated': ('saturated', bool),
    'trace_node': ('trace_node', types.natural),
    'simulate': ('simulate', bool),
    'workers': ('workers', types.count),
    'format': ('output_format', str),
    'out': ('out', types.output_path),
}

_FLAGS = {'cutoff': '--K', 'q_grid': '--q-grid', 'trace_node': '--trace-node'}

###########
# COLUMNS #
###########

# Column names and descriptions, per command, in output order.
COLUMNS: Dict[CommandName, Tuple[Tuple[str, str], ...]] = {
    CommandName.ANALYZE: (
        ('n', 'node count'),
        ('rate', 'aggregate input rate λ̂, packets per slot'),
        ('K', 'cutoff phase; inf for unbounded'),
        ('q', 'retransmission factor'),
        ('p_l', 'desired stable probability of success'),
        ('p_s', 'unstable equilibrium of the probability of success'),
        ('attempt_rate', 'attempts per slot at p_L'),
        ('q_lower', 'lower bound q_l of the stable regions'),
        ('q_upper', 'upper bound q_u of the absolute region'),
        ('q_upper_star', 'upper bound q_u* of the asymptotic region'),
        ('pseudo_lower', '1 - p_L, unbounded backoff only'),
        ('pseudo_upper', '1 - p_S, unbounded backoff only'),
        ('absolute_region_empty', 'true if q_l > q_u'),
        ('classification', 'absolute, asymptotic, pseudo or unstable'),
        ('predicted_throughput', 'predicted network throughput'),
        ('offered_load', 'ρ = λ/f_0 at p_L; empty if infinite'),
        ('epsilon_bound', 'bound on a collapse probability, asymptotic '
         'region only'),
        ('p_a', 'saturated stable point, outside the stable regions'),
        ('p_a_converged', 'whether the saturated solver converged'),
        ('notes', 'caveats'),
    ),
    CommandName.REGIONS: (
        ('n', 'node count'),
        ('rate', 'aggregate input rate λ̂'),
        ('K', 'cutoff phase'),
        ('p_l', 'desired stable point'),
        ('p_s', 'unstable equilibrium'),
        ('q_lower', 'exact q_l'),
        ('q_lower_approx', 'large-n approximation of q_l'),
        ('q_upper', 'q_u'),
        ('q_upper_star', 'exact q_u*'),
        ('q_upper_star_approx', 'large-n approximation of q_u*'),
        ('pseudo_lower', '1 - p_L'),
        ('pseudo_upper', '1 - p_S'),
        ('absolute_region_empty', 'true if q_l > q_u'),
        ('lambda_max', 'maximum stable throughput, absolute region'),
        ('q_at_max', 'q at the maximum, absolute region'),
        ('lambda_max_method', 'exact or approximation'),
        ('lambda_max_approx', 'closed-form maximum, absolute region'),
        ('lambda_max_asymptotic', 'maximum stable throughput, asymptotic '
         'region'),
        ('q_at_max_asymptotic', 'q at the asymptotic maximum'),
        ('lambda_max_asymptotic_approx', 'closed-form asymptotic maximum; '
         'empty where none exists'),
    ),
    CommandName.SWEEP: (
        ('q', 'retransmission factor'),
        ('rho', 'offered load at p_L; empty if infinite'),
        ('classification', 'region of q'),
        ('p_predicted', 'p_L in a stable region, else p_A'),
        ('predicted_throughput', 'predicted network throughput'),
        ('p_hat', 'simulated probability of success'),
        ('g_hat', 'simulated attempts per slot'),
        ('throughput_hat', 'simulated successes per slot'),
        ('rho_hat', 'simulated fraction of busy node-slots'),
        ('seed', 'seed of the simulated row'),
    ),
    CommandName.SIMULATE: (
        ('n', 'node count'),
        ('rate', 'aggregate input rate λ̂'),
        ('K', 'cutoff phase'),
        ('q', 'retransmission factor'),
        ('saturated', 'whether every queue stays non-empty'),
        ('seed', 'master seed'),
        ('warmup', 'slots before measurement'),
        ('slots', 'measured slots'),
        ('p_hat', 'successes per attempt'),
        ('p_hat_error', 'binomial standard error of p_hat'),
        ('g_hat', 'attempts per slot'),
        ('throughput_hat', 'successes per slot'),
        ('rho_hat', 'fraction of busy node-slots'),
        ('attempts', 'measured attempts'),
        ('successes', 'measured successes'),
        ('collisions', 'measured collision slots'),
        ('idle_slots', 'measured idle slots'),
        ('arrivals_total', 'arrivals over the whole run'),
        ('departures_total', 'departures over the whole run'),
        ('backlog', 'packets queued at the end'),
    ),
    CommandName.TRACE: (
        ('slot', 'slot index, counting warmup'),
        ('queue_length', 'queue length of the traced node after the slot'),
        ('departure', 'whether the traced node sent a packet in the slot'),
    ),
    CommandName.VALIDATE: (
        ('suite', 'suite name'),
        ('check', 'check name'),
        ('measured', 'measured value'),
        ('expected', 'reference value'),
        ('delta', 'measured minus expected'),
        ('lower', 'lowest passing value; empty if open'),
        ('upper', 'highest passing value; empty if open'),
        ('passed', 'whether measured lies within [lower, upper]'),
    ),
}

#######################
# INTERFACE FUNCTIONS #
#######################


def configure(**overrides):
    """Configure Django settings for standalone use, once."""
    if not django.conf.settings.configured:
        django.conf.settings.configure(INSTALLED_APPS=['alohalab'],
                                       **overrides)
    django.setup()


def main(argv: Optional[Sequence[str]] = None):
    """Run a command, e.g. “aloha-lab analyze --n 50 ...”."""
    configure()
    arguments = list(sys.argv[1:] if argv is None else argv)
    ManagementUtility([PROGRAM, *arguments]).execute()


def column_names(command: CommandName) -> Tuple[str, ...]:
    return tuple(name for name, _ in COLUMNS[command])


def analyze(n: int, rate: float, cutoff: Cutoff, q: float) -> Raw:
    """Report stable points, regions and the classification of q."""
    config = NetworkConfig(n, rate, cutoff, q)
    points = require_stable_points(rate)
    report = classify(config)
    try:
        load: Optional[float] = offered_load(config, points.p_l)
    except SingularityError:
        load = None

    record: Raw = dict(n=n,
                       rate=rate,
                       K=cutoff,
                       q=q,
                       p_l=clamp_probability(points.p_l, 'p_L'),
                       p_s=clamp_probability(points.p_s, 'p_S'),
                       attempt_rate=attempt_rate(rate, points.p_l),
                       q_lower=report.q_lower,
                       q_upper=report.q_upper,
                       q_upper_star=report.q_upper_star,
                       pseudo_lower=report.pseudo_lower,
                       pseudo_upper=report.pseudo_upper,
                       absolute_region_empty=report.absolute_region_empty,
                       classification=report.classification,
                       predicted_throughput=report.predicted_throughput,
                       offered_load=load,
                       epsilon_bound=report.epsilon_bound,
                       notes='; '.join(report.notes))
    if report.saturated is not None:
        record['p_a'] = clamp_probability(report.saturated.p_a, 'p_A')
        record['p_a_converged'] = report.saturated.converged
    return record


def regions_record(n: int, rate: float, cutoff: Cutoff) -> Raw:
    """Report every region bound and the maximum stable throughput."""
    points = require_stable_points(rate)
    lower = q_lower(n, rate, cutoff)
    upper = q_upper(n, rate)
    record: Raw = dict(n=n,
                       rate=rate,
                       K=cutoff,
                       p_l=clamp_probability(points.p_l, 'p_L'),
                       p_s=clamp_probability(points.p_s, 'p_S'),
                       q_lower=lower,
                       q_lower_approx=q_lower_approx(n, rate, cutoff),
                       q_upper=upper,
                       q_upper_star=q_upper_star(n, rate, cutoff),
                       q_upper_star_approx=q_upper_star_approx(
                           n, rate, cutoff),
                       absolute_region_empty=lower > upper)
    record['pseudo_lower'], record['pseudo_upper'] = pseudo_region(rate)

    absolute = max_stable_throughput(n, cutoff)
    record['lambda_max'] = absolute.lambda_max
    record['q_at_max'] = absolute.q_at_max
    record['lambda_max_method'] = absolute.method
    record['lambda_max_approx'] = max_stable_throughput(
        n, cutoff, method=Method.APPROXIMATION).lambda_max

    asymptotic = max_stable_throughput(n, cutoff, Mode.ASYMPTOTIC)
    record['lambda_max_asymptotic'] = asymptotic.lambda_max
    record['q_at_max_asymptotic'] = asymptotic.q_at_max
    try:
        record['lambda_max_asymptotic_approx'] = max_stable_throughput(
            n, cutoff, Mode.ASYMPTOTIC, Method.APPROXIMATION).lambda_max
    except DomainError:
        record['lambda_max_asymptotic_approx'] = None
    return record


def sweep_rows(spec: ScenarioSpec) -> List[Raw]:
    """Produce one row per q: predictions, then simulated estimates."""
    qs = spec.q_values()
    rows = []
    for q in qs:
        config = spec.network(q)
        report = classify(config)
        try:
            rho: Optional[float] = offered_load(config,
                                                report.stable_points.p_l)
        except (SingularityError, TypeError):
            rho = None
        rows.append(
            dict(q=q,
                 rho=rho,
                 classification=report.classification,
                 p_predicted=_probability(report.predicted_success),
                 predicted_throughput=report.predicted_throughput))

    if spec.simulate:
        seeds = row_seeds(spec.seed, len(qs))
        configs = [spec.sim_config(q, s) for q, s in zip(qs, seeds)]
        for row, seed, (_, metrics) in zip(rows, seeds,
                                           sweep(configs, spec.workers)):
            row.update(p_hat=metrics.p_hat,
                       g_hat=metrics.g_hat,
                       throughput_hat=metrics.throughput_hat,
                       rho_hat=metrics.rho_hat,
                       seed=seed)
    return rows


def sweep_emit(spec: ScenarioSpec) -> str:
    """Compute a sweep and write it where the spec says."""
    return emit(sweep_rows(spec), column_names(CommandName.SWEEP),
                spec.output_format, spec.out)


def simulate_record(spec: ScenarioSpec) -> Raw:
    return _metrics_record(run(spec.sim_config()))


def trace(spec: ScenarioSpec) -> Tuple[List[Raw], SimMetrics]:
    """Simulate with a traced node; return its per-slot rows."""
    spec.require('trace_node')
    node = spec.trace_node
    assert node is not None
    metrics = run(spec.sim_config())
    rows = [
        dict(slot=slot, queue_length=length, departure=bool(departed))
        for (slot, length), departed in zip(
            metrics.trace_rows(), metrics.departures_of(node))
    ]
    return rows, metrics


def validate(suites: Sequence[str],
             slots: Optional[int] = None) -> List[CheckResult]:
    """Run named validation suites."""
    return run_suites(suites, slots=slots)


def emit(rows: Sequence[Raw],
         columns: Sequence[str],
         output_format: OutputFormat = OutputFormat.CSV,
         out: Optional[Path] = None) -> str:
    """Render rows in fixed column order, and write them to out if given.

    Return the rendered text.

    """
    order = field_order_fn(tuple(columns))
    records = []
    for row in rows:
        record: Raw = dict.fromkeys(columns)
        record.update(order(row))
        records.append(record)

    if output_format is OutputFormat.CSV:
        text = _csv(records, columns)
    else:
        table = dict(columns=list(columns),
                     rows=[{k: plain(v)
                            for k, v in r.items()} for r in records])
        if output_format is OutputFormat.JSON:
            text = json.dumps(table, indent=2, ensure_ascii=False) + '\n'
        else:
            text = pyaml.dump(table, dst=str)

    if out is not None:
        try:
            out.write_text(text, encoding='utf-8')
        except OSError as e:
            raise OutputError(f'Cannot write {out}: {e.strerror}')
        logging.info(f'Wrote {len(records)} rows to {out}.')
    return text


############
# INTERNAL #
############


def _probability(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    return clamp_probability(value, 'predicted p')


def _csv(records: Sequence[Raw], columns: Sequence[str]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(columns)
    for record in records:
        writer.writerow([text_cell(record[c]) for c in columns])
    return buffer.getvalue()


def _metrics_record(metrics: SimMetrics) -> Raw:
    config = metrics.config
    network = config.network
    return dict(n=network.n,
                rate=network.aggregate_rate,
                K=network.cutoff,
                q=network.q,
                saturated=config.saturated,
                seed=config.seed,
                warmup=config.warmup_slots,
                slots=metrics.slots,
                p_hat=metrics.p_hat,
                p_hat_error=standard_error(metrics),
                g_hat=metrics.g_hat,
                throughput_hat=metrics.throughput_hat,
                rho_hat=metrics.rho_hat,
                attempts=metrics.attempts,
                successes=metrics.successes,
                collisions=metrics.collisions,
                idle_slots=metrics.idle_slots,
                arrivals_total=metrics.arrivals_total,
                departures_total=metrics.departures_total,
                backlog=int(metrics.final_queue_lengths.sum()))
