# -*- coding: utf-8 -*-
"""Named suites of checks pairing predictions with measurements.

Suites are declared in suites.yaml, next to this module. Each check in a
suite names a kind, registered here with check_kind, and supplies that
kind's parameters. A kind yields one CheckResult per measured quantity.

Kinds that simulate take “slots”, “warmup” and “seed” parameters. The
measured budget can be overridden for a whole run, which is useful for a
quick look at a suite meant for 10**7 slots.

"""

###########
# IMPORTS #
###########

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml
from scipy.optimize import bisect

from alohalab import conf
from alohalab.errors import DomainError
from alohalab.regions import (Method, Mode, max_stable_throughput,
                              pseudo_region, q_lower, q_lower_approx, q_upper,
                              q_upper_star, q_upper_star_approx)
from alohalab.simulator import (SimConfig, capture_statistics, row_seeds,
                                run, standard_error, sweep)
from alohalab.steady_state import (E_INVERSE, NetworkConfig, Verdict,
                                   as_cutoff, finite_population_success,
                                   iterate_dynamics, offered_load,
                                   p_a_closed_form_exp, p_a_closed_form_geo,
                                   phase_distribution, saturated_fixed_point,
                                   stable_points)
from alohalab.util.misc import Raw

#############
# CONSTANTS #
#############

CATALOGUE = Path(__file__).with_name('suites.yaml')

# Parameters of simulated kinds that a run-wide override replaces.
_BUDGET = 'slots'

###########
# CLASSES #
###########


@dataclass(frozen=True)
class CheckResult:
    """One measured quantity and the interval it must fall in.

    Either end of the interval may be open (None).

    """

    suite: str
    check: str
    measured: float
    expected: float
    lower: Optional[float]
    upper: Optional[float]

    @property
    def delta(self) -> float:
        return self.measured - self.expected

    @property
    def passed(self) -> bool:
        if math.isnan(self.measured):
            return False
        if self.lower is not None and self.measured < self.lower:
            return False
        if self.upper is not None and self.measured > self.upper:
            return False
        return True

    def record(self) -> Raw:
        return dict(suite=self.suite,
                    check=self.check,
                    measured=self.measured,
                    expected=self.expected,
                    delta=self.delta,
                    lower=self.lower,
                    upper=self.upper,
                    passed=self.passed)


Check = Callable[..., Iterable[CheckResult]]

_KINDS: Dict[str, Check] = {}

#######################
# INTERFACE FUNCTIONS #
#######################


def check_kind(name: str):
    """Register a function as the implementation of a kind of check."""
    def register(function: Check) -> Check:
        assert name not in _KINDS, f'Duplicate check kind {name}.'
        _KINDS[name] = function
        return function

    return register


def kinds() -> List[str]:
    return sorted(_KINDS)


def load_catalogue(path: Path = CATALOGUE) -> Dict[str, Raw]:
    """Read suite declarations from YAML."""
    logging.debug(f'Parsing {path}.')
    catalogue = yaml.safe_load(path.read_text(encoding='utf-8'))
    for name, suite in catalogue.items():
        for check in suite.get('checks', ()):
            if check.get('kind') not in _KINDS:
                raise DomainError(f'Suite {name} uses unknown check kind '
                                  f'{check.get("kind")!r}.')
    return catalogue


def run_suite(name: str,
              catalogue: Optional[Dict[str, Raw]] = None,
              slots: Optional[int] = None) -> List[CheckResult]:
    """Run every check of a named suite, in catalogue order."""
    if catalogue is None:
        catalogue = load_catalogue()
    if name not in catalogue:
        raise DomainError(f'Unknown suite {name!r}; known suites: '
                          f'{", ".join(catalogue)}.')

    results: List[CheckResult] = []
    for declaration in catalogue[name]['checks']:
        parameters = dict(declaration)
        kind = parameters.pop('kind')
        label = parameters.pop('name', kind)
        if slots is not None and _BUDGET in parameters:
            parameters[_BUDGET] = slots
            parameters['warmup'] = min(parameters.get('warmup', 0),
                                       slots // 10)
        logging.info(f'Running {name}/{label}.')
        results.extend(_KINDS[kind](name, label, **parameters))
    return results


def run_suites(names: Sequence[str],
               slots: Optional[int] = None) -> List[CheckResult]:
    if not names:
        raise DomainError('No suites named.')
    catalogue = load_catalogue()
    results = []
    for name in names:
        results.extend(run_suite(name, catalogue=catalogue, slots=slots))
    return results


###############
# CHECK KINDS #
###############


@check_kind('region_bounds')
def _region_bounds(suite: str, label: str, n: int, rate: float,
                   expected: Dict[str, float], tolerance: float):
    pseudo = pseudo_region(rate)
    bounds = {
        'geo_lower': lambda: q_lower(n, rate, 1),
        'geo_upper': lambda: q_upper(n, rate),
        'exp_lower': lambda: q_lower(n, rate, as_cutoff('inf')),
        'exp_upper_star': lambda: q_upper_star(n, rate, as_cutoff('inf')),
        'pseudo_lower': lambda: pseudo[0],
        'pseudo_upper': lambda: pseudo[1],
    }
    for key, value in expected.items():
        yield _within(suite, f'{label}.{key}', bounds[key](), value,
                      tolerance)


@check_kind('fixed_points')
def _fixed_points(suite: str, label: str, samples: int, seed: int,
                  residual: float, branch_tolerance: float):
    rng = np.random.default_rng(seed)
    worst = 0.0
    misordered = 0
    for rate in rng.uniform(1e-12, E_INVERSE, samples):
        points = stable_points(float(rate))
        for p in (points.p_l, points.p_s):
            worst = max(worst, abs(p - math.exp(-rate / p)))
        if not points.p_s <= E_INVERSE <= points.p_l:
            misordered += 1
    yield _at_most(suite, f'{label}.residual', worst, residual)
    yield _at_most(suite, f'{label}.misordered', misordered, 0)

    points = stable_points(E_INVERSE)
    gap = max(abs(points.p_l - E_INVERSE), abs(points.p_s - E_INVERSE))
    yield _at_most(suite, f'{label}.branch_point', gap, branch_tolerance)


@check_kind('dynamics')
def _dynamics(suite: str, label: str, rates: List[float], samples: int,
              seed: int, margin: float, tolerance: float):
    rng = np.random.default_rng(seed)
    for rate in rates:
        points = stable_points(rate)
        worst = 0.0
        stray = 0
        for p_0 in rng.uniform(points.p_s + margin, 1.0, samples):
            result = iterate_dynamics(float(p_0), rate, tol=tolerance / 10)
            if result.verdict is not Verdict.CONVERGED_TO_PL:
                stray += 1
            worst = max(worst, abs(result.final - points.p_l))
        yield _at_most(suite, f'{label}[λ̂={rate}].distance_from_p_l', worst,
                       tolerance)
        yield _at_most(suite, f'{label}[λ̂={rate}].not_converged', stray, 0)

        stray = 0
        for p_0 in rng.uniform(1e-12, points.p_s - margin, samples):
            result = iterate_dynamics(float(p_0), rate)
            if result.verdict is not Verdict.DIVERGED_BELOW_PS:
                stray += 1
        yield _at_most(suite, f'{label}[λ̂={rate}].not_diverged', stray, 0)


@check_kind('saturated_closed_form')
def _saturated_closed_form(suite: str, label: str, n: int, K: Any,
                           cases: List[Raw]):
    cutoff = as_cutoff(K)
    for case in cases:
        q = case['q']
        size = case.get('n', n)
        point = saturated_fixed_point(size, q, cutoff)
        if 'value' in case:
            expected = case['value']
        elif cutoff == 1:
            expected = p_a_closed_form_geo(size, q)
        else:
            expected = p_a_closed_form_exp(size, q)
        yield _within(suite,
                      f'{label}[n={size},q={q}]',
                      point.p_a,
                      expected,
                      case['tolerance'],
                      relative=case.get('relative', False))


@check_kind('saturated_monotone_in_cutoff')
def _saturated_monotone(suite: str, label: str, n: int, q: float,
                        cutoffs: List[int], large_n: int, large_cutoff: int,
                        ceiling: float):
    values = [saturated_fixed_point(n, q, k).p_a for k in cutoffs]
    drops = sum(1 for a, b in zip(values, values[1:]) if not a < b)
    yield _at_most(suite, f'{label}[n={n}].non_increasing_steps', drops, 0)
    large = saturated_fixed_point(large_n, q, large_cutoff).p_a
    yield _at_most(suite, f'{label}[n={large_n},K={large_cutoff}].p_a',
                   large, ceiling)


@check_kind('max_throughput')
def _max_throughput(suite: str, label: str, K: Any, sizes: List[int],
                    mode: str = 'absolute', reference: str = 'log',
                    tolerance: float = 0.0):
    """Compare exact maximum stable throughput with its closed forms.

    The “log” reference is ln n/n, checked to a relative tolerance. The
    “open” reference checks that the region stays open up to 1/e, within
    [1/e - 2/(en), 1/e], with the maximum reached at q = 1/n.

    """
    cutoff = as_cutoff(K)
    for n in sizes:
        result = max_stable_throughput(n, cutoff, Mode(mode))
        name = f'{label}[n={n}]'
        if reference == 'log':
            yield _within(suite, name, result.lambda_max,
                          math.log(n) / n, tolerance, relative=True)
        elif reference == 'open':
            yield _between(suite, name, result.lambda_max, E_INVERSE,
                           E_INVERSE - 2 * E_INVERSE / n, E_INVERSE)
            yield _within(suite, f'{name}.q_at_max', result.q_at_max, 1 / n,
                          tolerance)
        elif reference == 'corner':
            yield _within(suite, f'{name}.q_at_max', result.q_at_max,
                          1 - E_INVERSE, tolerance)
        else:
            raise DomainError(f'Unknown reference {reference!r}.')


@check_kind('max_throughput_ratio')
def _max_throughput_ratio(suite: str, label: str, n: int, K: int,
                          lower: float, upper: float):
    exact = max_stable_throughput(n, K)
    approximate = max_stable_throughput(n, K, method=Method.APPROXIMATION)
    ratio = approximate.lambda_max / exact.lambda_max
    yield _between(suite, f'{label}[n={n},K={K}]', ratio, 1.0, lower, upper)


@check_kind('region_approximation')
def _region_approximation(suite: str, label: str, n: int, rate: float,
                          K: int, tolerance: float):
    yield _within(suite, f'{label}.q_lower', q_lower_approx(n, rate, K),
                  q_lower(n, rate, K), tolerance, relative=True)
    yield _within(suite, f'{label}.q_upper_star',
                  q_upper_star_approx(n, rate, K), q_upper_star(n, rate, K),
                  tolerance, relative=True)


@check_kind('success_probability')
def _success_probability(suite: str, label: str, n: int, rate: float,
                         cases: List[Raw], tolerance: float,
                         throughput_tolerance: float, slots: int,
                         warmup: int, seed: Optional[int] = None):
    """Compare p_hat with the band between p_L and its finite-n root.

    At small n the product form p = (1 - λ/p)**(n - 1) sits above p_L, and
    p_hat falls between the two, lower as q grows. The band is widened by
    the tolerance on both sides.

    """
    p_l = stable_points(rate).p_l
    p_n = finite_population_success(n, rate)
    lower, upper = min(p_l, p_n) - tolerance, max(p_l, p_n) + tolerance
    for case, metrics in _simulate(n, rate, cases, slots, warmup, seed):
        name = f'{label}[K={case["K"]},q={metrics.config.network.q}]'
        yield _between(suite, f'{name}.p_hat', metrics.p_hat, p_l, lower,
                       upper)
        yield _within(suite, f'{name}.throughput_hat', metrics.throughput_hat,
                      rate, throughput_tolerance)


@check_kind('offered_load')
def _offered_load(suite: str, label: str, n: int, rate: float,
                  cases: List[Raw], tolerance: float, slots: int,
                  warmup: int, seed: Optional[int] = None):
    """Compare rho_hat with ρ = λ/f_0, to a relative tolerance.

    A case may carry its own tolerance; a null one reports the row without
    bounding it. The model gives every attempt the same chance p, but
    partners in a collision stay backlogged together and collide again more
    often than that, so the measured load runs high once retransmissions are
    frequent.

    """
    p = finite_population_success(n, rate)
    for case, metrics in _simulate(n, rate, cases, slots, warmup, seed):
        network = metrics.config.network
        name = f'{label}[K={case["K"]},q={network.q}]'
        expected = offered_load(network, p)
        allowance = case.get('tolerance', tolerance)
        if allowance is None:
            yield _between(suite, name, metrics.rho_hat, expected, None, None)
        else:
            yield _within(suite,
                          name,
                          metrics.rho_hat,
                          expected,
                          allowance,
                          relative=True)


@check_kind('phase_histogram')
def _phase_histogram(suite: str, label: str, n: int, rate: float,
                     cases: List[Raw], tolerance: float, min_samples: int,
                     slots: int, warmup: int, seed: Optional[int] = None):
    """Compare the measured HOL phase distribution with f_0..f_K.

    Phases seen in fewer than min_samples busy node-slots are skipped.

    """
    p = finite_population_success(n, rate)
    for case, metrics in _simulate(n, rate, cases, slots, warmup, seed):
        network = metrics.config.network
        model = phase_distribution(p, network.q, network.cutoff)
        measured = metrics.empirical_phases
        for phase, samples in enumerate(metrics.phase_histogram):
            if samples < min_samples:
                continue
            yield _within(suite,
                          f'{label}[K={case["K"]},q={network.q}].f_{phase}',
                          measured[phase],
                          model.f_at(phase),
                          tolerance,
                          relative=True)


@check_kind('near_capacity')
def _near_capacity(suite: str, label: str, n: int, rate: float, K: int,
                   margin: float, threshold: float, slots: int, warmup: int,
                   seed: Optional[int] = None):
    """Simulate just above the ρ = 1 factor and expect a heavy load.

    q_l is solved at the finite-population probability of success, which
    is where a small network actually operates.

    """
    p = finite_population_success(n, rate)
    cutoff = as_cutoff(K)
    trial = NetworkConfig(n, rate, cutoff, 0.5)
    q = margin * _q_at_unit_load(trial, p)
    metrics = run(_sim(NetworkConfig(n, rate, cutoff, q), slots, warmup,
                       seed))
    yield _between(suite, f'{label}[q={q:.6g}].rho_hat', metrics.rho_hat,
                   offered_load(metrics.config.network, p), threshold, None)


@check_kind('throughput')
def _throughput(suite: str, label: str, n: int, rate: float,
                cases: List[Raw], slots: int, warmup: int,
                seed: Optional[int] = None):
    """Compare simulated throughput with an expected value per case.

    A case expects either a value within a relative tolerance, or a
    ceiling.

    """
    for case, metrics in _simulate(n, rate, cases, slots, warmup, seed):
        name = f'{label}[K={case["K"]},q={metrics.config.network.q}]'
        if 'ceiling' in case:
            yield _at_most(suite, name, metrics.throughput_hat,
                           case['ceiling'])
        else:
            expected = case.get('expected', rate)
            if expected == 'saturated':
                q = metrics.config.network.q
                expected = -(1 - q) * math.log1p(-q)
            yield _within(suite,
                          name,
                          metrics.throughput_hat,
                          expected,
                          case['tolerance'],
                          relative=True)


@check_kind('saturated_success')
def _saturated_success(suite: str, label: str, n: int, cases: List[Raw],
                       tolerance: float, standard_errors: float, slots: int,
                       warmup: int, seed: Optional[int] = None):
    """Compare saturated p_hat with the finite-population p_A.

    The allowed distance is the larger of a relative tolerance and a number
    of standard errors.

    """
    for case, metrics in _simulate(n, 0.0, cases, slots, warmup, seed,
                                   saturated=True):
        network = metrics.config.network
        expected = saturated_fixed_point(n,
                                         network.q,
                                         network.cutoff,
                                         finite_population=True).p_a
        allowance = max(tolerance * expected,
                        standard_errors * standard_error(metrics))
        yield _within(suite, f'{label}[K={case["K"]},q={network.q}]',
                      metrics.p_hat, expected, allowance)


@check_kind('capture')
def _capture(suite: str, label: str, n: int, rate: float, K: Any, q: float,
             trace_node: int, min_silence: int, min_burst: int, slots: int,
             warmup: int, seed: Optional[int] = None):
    """Look for a node that drains its queue in one burst, and a long wait.

    Which node captures the channel is a matter of chance, so both measures
    are the largest over all nodes.

    """
    config = _sim(NetworkConfig(n, rate, as_cutoff(K), q),
                  slots,
                  warmup,
                  seed,
                  trace_node=trace_node)
    metrics = run(config)
    stats = [capture_statistics(metrics, node) for node in range(n)]
    silent = max(stats, key=lambda s: s.longest_silence)
    bursty = max(stats, key=lambda s: s.longest_burst)
    yield _between(suite, f'{label}[node={silent.node}].longest_silence',
                   silent.longest_silence, min_silence, min_silence + 1,
                   None)
    yield _between(suite, f'{label}[node={bursty.node}].longest_burst',
                   bursty.longest_burst, min_burst, min_burst + 1, None)


@check_kind('determinism')
def _determinism(suite: str, label: str, n: int, rate: float, K: Any,
                 q: float, slots: int, warmup: int,
                 seed: Optional[int] = None):
    config = _sim(NetworkConfig(n, rate, as_cutoff(K), q), slots, warmup,
                  seed)
    first, second = run(config), run(config)
    yield _at_most(suite, f'{label}.differences',
                   0 if first.identical(second) else 1, 0)


############
# INTERNAL #
############


def _within(suite: str,
            check: str,
            measured: float,
            expected: float,
            tolerance: float,
            relative: bool = False) -> CheckResult:
    allowance = tolerance * abs(expected) if relative else tolerance
    return CheckResult(suite, check, float(measured), float(expected),
                       expected - allowance, expected + allowance)


def _between(suite: str, check: str, measured: float, expected: float,
             lower: Optional[float], upper: Optional[float]) -> CheckResult:
    return CheckResult(suite, check, float(measured), float(expected), lower,
                       upper)


def _at_most(suite: str, check: str, measured: float,
             ceiling: float) -> CheckResult:
    return CheckResult(suite, check, float(measured), float(ceiling), None,
                       ceiling)


def _sim(network: NetworkConfig,
         slots: int,
         warmup: int,
         seed: Optional[int],
         saturated: bool = False,
         trace_node: Optional[int] = None) -> SimConfig:
    if seed is None:
        seed = conf.setting('ALOHALAB_SEED')
    return SimConfig(network,
                     seed=seed,
                     warmup_slots=warmup,
                     measure_slots=slots,
                     saturated=saturated,
                     trace_node=trace_node)


def _simulate(n: int,
              rate: float,
              cases: List[Raw],
              slots: int,
              warmup: int,
              seed: Optional[int],
              saturated: bool = False):
    """Run one simulation per (case, q), pairing each case with its metrics.

    A case gives a cutoff “K” and a list “q”. Rows get seeds derived from
    the master seed in order.

    """
    if seed is None:
        seed = conf.setting('ALOHALAB_SEED')
    seeds = iter(row_seeds(seed, sum(len(case['q']) for case in cases)))
    workers = conf.setting('ALOHALAB_WORKERS')
    paired = []
    for case in cases:
        configs = [
            _sim(NetworkConfig(n, rate, as_cutoff(case['K']), q), slots,
                 warmup, next(seeds), saturated) for q in case['q']
        ]
        paired.extend((case, m) for _, m in sweep(configs, workers))
    return paired


def _q_at_unit_load(network: NetworkConfig, p: float) -> float:
    """Solve ρ(q) = 1 at a given probability of success."""
    def excess(q):
        trial = NetworkConfig(network.n, network.aggregate_rate,
                              network.cutoff, q)
        try:
            return offered_load(trial, p) - 1
        except DomainError:
            return math.inf

    return bisect(excess, 1e-12, 1 - 1e-12, xtol=1e-15, rtol=1e-12)
