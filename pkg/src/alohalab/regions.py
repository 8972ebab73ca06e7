# -*- coding: utf-8 -*-
"""Stable regions of the retransmission factor, and classification.

For fixed n and λ̂, a retransmission factor q is absolutely stable when it
lies in [q_l, q_u]: above q_l every queue's offered load stays at most 1, and
below q_u even a fully backlogged network attempts at most -ln p_S packets
per slot, so p cannot fall below p_S. The asymptotic region [q_l, q_u*]
relaxes the upper bound to what holds with probability tending to 1 as n
grows. Under unbounded backoff, the pseudo-stable region [1 - p_L, 1 - p_S]
still carries the full input rate, but at the undesired stable point p_A and
with unbounded delay.

All roots are found by scanning a log-spaced grid for sign changes and then
bisecting. Every target function is monotone where it matters, so a single
bracket is the norm; more than one is logged and flagged.

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

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import bisect
from scipy.special import erfc

from alohalab.errors import DomainError, NoRootError, SingularityError
from alohalab.steady_state import (E_INVERSE, UNBOUNDED, Cutoff,
                                   NetworkConfig, SaturatedPoint,
                                   StablePoints, check_cutoff,
                                   inverse_service_rate, network_throughput,
                                   phase_distribution, require_stable_points,
                                   saturated_fixed_point, stable_points)

#############
# CONSTANTS #
#############

# Roots for q are searched on a log grid. At the lowest rates tried for the
# maximum stable throughput, q_l of a large network lies far below 1e-9.
GRID_LOWER = 1e-30
GRID_UPPER = 1 - 1e-9
GRID_POINTS = 256

# Absolute tolerance small enough that ROOT_RTOL governs tiny roots.
ROOT_XTOL = 1e-300
ROOT_RTOL = 1e-10
ROOT_MAX_ITERATIONS = 200

# Lowest aggregate rate tried when bracketing the maximum stable throughput.
RATE_FLOOR = 1e-9

DEFAULT_DELTA = 0.05

###########
# CLASSES #
###########


class Classification(enum.Enum):
    """Where a retransmission factor falls relative to the stable regions."""

    ABSOLUTE = 'absolute'
    ASYMPTOTIC = 'asymptotic'
    PSEUDO = 'pseudo'
    UNSTABLE = 'unstable'


class Mode(enum.Enum):
    """Which upper bound closes the region for maximum stable throughput."""

    ABSOLUTE = 'absolute'
    ASYMPTOTIC = 'asymptotic'


class Method(enum.Enum):
    EXACT_ROOT = 'exact'
    APPROXIMATION = 'approximation'


@dataclass(frozen=True)
class EpsilonBounds:
    """Upper bounds on the probability that attempts exceed -ln p_S."""

    markov: float
    clt: float


@dataclass(frozen=True)
class MaxThroughputResult:
    lambda_max: float
    q_at_max: float
    method: Method
    mode: Mode = Mode.ABSOLUTE


@dataclass(frozen=True)
class StabilityReport:
    """Region bounds for one configuration, and where its q falls.

    Region endpoints are closed. At q_lower the offered load is exactly 1,
    so a strictly stable queue needs q strictly above it.

    """

    config: NetworkConfig
    stable_points: StablePoints
    q_lower: Optional[float]
    q_upper: Optional[float]
    q_upper_star: Optional[float]
    pseudo_lower: Optional[float]
    pseudo_upper: Optional[float]
    absolute_region_empty: bool
    classification: Classification
    predicted_throughput: Optional[float] = None
    epsilon_bound: Optional[float] = None
    saturated: Optional[SaturatedPoint] = None
    multiple_roots: bool = False
    notes: Tuple[str, ...] = ()

    @property
    def is_stable(self) -> bool:
        """Return True if q lies in an absolute or asymptotic region."""
        return self.classification in (Classification.ABSOLUTE,
                                       Classification.ASYMPTOTIC)

    @property
    def predicted_success(self) -> Optional[float]:
        """Return p_L in a stable region, else p_A when it is known."""
        if self.is_stable:
            return self.stable_points.p_l
        if self.saturated is not None:
            return self.saturated.p_a
        return None


#######################
# INTERFACE FUNCTIONS #
#######################


def q_upper(n: int, aggregate_rate: float) -> float:
    """Return q_u = -ln p_S/n, the absolute upper bound for any K."""
    _check_nodes(n)
    points = require_stable_points(aggregate_rate)
    if points.degenerate:
        return 1.0
    return -math.log(points.p_s) / n


def q_lower(n: int, aggregate_rate: float, cutoff: Cutoff) -> float:
    """Return q_l, the retransmission factor at which ρ = 1 at p_L."""
    _check_nodes(n)
    check_cutoff(cutoff)
    points = require_stable_points(aggregate_rate)
    if points.degenerate:
        return 0.0
    p = points.p_l
    rate = aggregate_rate / n
    if cutoff == 1:
        return aggregate_rate * (1 - p) / (p * (n - aggregate_rate))
    if cutoff is UNBOUNDED:
        return (1 - p) / (1 - rate)

    def excess_load(q):
        return rate * inverse_service_rate(p, q, cutoff) - 1

    root, _ = _grid_root(excess_load, f'q_l (n = {n}, λ̂ = {aggregate_rate}, '
                         f'K = {cutoff})')
    return root


def q_lower_approx(n: int, aggregate_rate: float, cutoff: Cutoff) -> float:
    """Approximate q_l for large n as (1 - p_L)/(n·p_L/λ̂)**(1/K)."""
    _check_nodes(n)
    check_cutoff(cutoff)
    points = require_stable_points(aggregate_rate)
    if points.degenerate:
        return 0.0
    p = points.p_l
    if cutoff is UNBOUNDED:
        return 1 - p
    return (1 - p) / (n * p / aggregate_rate)**(1 / cutoff)


def q_upper_star(n: int, aggregate_rate: float, cutoff: Cutoff) -> float:
    """Return q_u*, the upper bound of the asymptotic stable region."""
    return _q_upper_star(n, aggregate_rate, cutoff)[0]


def q_upper_star_approx(n: int, aggregate_rate: float,
                        cutoff: Cutoff) -> float:
    """Approximate q_u* for large n as (1 - p_L)/(n(1 - p_L)/G_S)**(1/K).

    G_S = -ln p_S is the attempt rate at the unstable point. An unbounded
    cutoff gives the limit 1 - p_L.

    """
    _check_nodes(n)
    check_cutoff(cutoff)
    points = require_stable_points(aggregate_rate)
    if points.degenerate:
        return 1.0
    p = points.p_l
    if cutoff is UNBOUNDED:
        return 1 - p
    return (1 - p) / (n * (1 - p) / -math.log(points.p_s))**(1 / cutoff)


def pseudo_region(aggregate_rate: float) -> Tuple[float, float]:
    """Return (1 - p_L, 1 - p_S), the pseudo-stable region of q."""
    points = require_stable_points(aggregate_rate)
    return 1 - points.p_l, 1 - points.p_s


def max_stable_throughput(n: int,
                          cutoff: Cutoff,
                          mode: Mode = Mode.ABSOLUTE,
                          method: Method = Method.EXACT_ROOT
                          ) -> MaxThroughputResult:
    """Find the largest λ̂ with a non-empty stable region.

    q_l grows and the upper bound shrinks with λ̂, so they cross once. If they
    are still separated at 1/e, the region never closes and the result is 1/e
    itself, labelled an approximation, at the binding upper bound.

    """
    _check_nodes(n)
    check_cutoff(cutoff)
    if method is Method.APPROXIMATION:
        return _approximate_max_throughput(n, cutoff, mode)

    def bound(rate):
        if mode is Mode.ABSOLUTE:
            return q_upper(n, rate)
        return q_upper_star(n, rate, cutoff)

    def gap(rate):
        return q_lower(n, rate, cutoff) - bound(rate)

    if gap(E_INVERSE) < 0:
        logging.info(f'Stable region for n = {n}, K = {cutoff} stays open '
                     'up to 1/e.')
        return MaxThroughputResult(E_INVERSE, bound(E_INVERSE),
                                   Method.APPROXIMATION, mode)
    if gap(RATE_FLOOR) >= 0:
        raise NoRootError(f'Stable region for n = {n}, K = {cutoff} is empty '
                          f'even at λ̂ = {RATE_FLOOR}.')

    root = bisect(gap,
                  RATE_FLOOR,
                  E_INVERSE,
                  xtol=ROOT_XTOL,
                  rtol=ROOT_RTOL,
                  maxiter=ROOT_MAX_ITERATIONS)
    logging.debug(f'λ̂_max = {root} for n = {n}, K = {cutoff}, '
                  f'{mode.value}.')
    return MaxThroughputResult(root, q_lower(n, root, cutoff),
                               Method.EXACT_ROOT, mode)


def epsilon_bounds(n: int,
                   backlogged: int,
                   aggregate_rate: float,
                   q: float,
                   delta: float = DEFAULT_DELTA) -> EpsilonBounds:
    """Bound the chance that attempts exceed -ln p_S under unbounded backoff.

    With n_b backlogged nodes whose phases follow φ at p_L, the Markov
    inequality gives n_b·Σφ_i q**i / (-ln p_S - (1 - n_b/n)·λ̂). For n_b
    near n, a normal approximation gives 1 - Φ(δ/sqrt(Σφ_i q**i/n)).

    """
    _check_nodes(n)
    if not 0 <= backlogged <= n:
        raise DomainError(f'Backlogged count {backlogged} outside [0, {n}].')
    if not delta > 0:
        raise DomainError(f'δ must be positive, not {delta}.')
    points = require_stable_points(aggregate_rate)
    if points.degenerate:
        return EpsilonBounds(0.0, 0.0)

    lower = q_lower(n, aggregate_rate, UNBOUNDED)
    upper = q_upper_star(n, aggregate_rate, UNBOUNDED)
    if not lower <= q <= upper:
        logging.warning(f'q = {q} outside the asymptotic region '
                        f'[{lower}, {upper}]; ε bounds may not hold.')

    mass = phase_distribution(points.p_l, q,
                              UNBOUNDED).backlogged_attempt_mass()
    denominator = (-math.log(points.p_s) -
                   (1 - backlogged / n) * aggregate_rate)
    if denominator <= 0:
        raise DomainError(f'Markov bound undefined for n_b = {backlogged} at '
                          f'λ̂ = {aggregate_rate}.')
    markov = backlogged * mass / denominator
    if mass == 0:
        clt = 0.0
    else:
        clt = 1 - standard_normal_cdf(delta / math.sqrt(mass / n))
    return EpsilonBounds(markov, clt)


def standard_normal_cdf(x: float) -> float:
    """Return Φ(x) through the complementary error function."""
    return 0.5 * float(erfc(-x / math.sqrt(2)))


def half_factor_rate_threshold(n: int) -> float:
    """Return the λ̂ below which q = 1/2 is in the absolute backoff region.

    Binary exponential backoff uses q = 1/2; q_u exceeds 1/2 exactly when
    λ̂ < (n/2)·exp(-n/2).

    """
    _check_nodes(n)
    return 0.5 * n * math.exp(-n / 2)


def classify(config: NetworkConfig) -> StabilityReport:
    """Compute every region bound for a configuration and place its q."""
    _check_nodes(config.n)
    n, rate, cutoff, q = (config.n, config.aggregate_rate, config.cutoff,
                          config.q)
    points = stable_points(rate)
    if not points.defined:
        logging.info(f'No stable points at λ̂ = {rate}.')
        return StabilityReport(config,
                               points,
                               None,
                               None,
                               None,
                               None,
                               None,
                               True,
                               Classification.UNSTABLE,
                               notes=('no stable points: aggregate rate '
                                      'above 1/e', ))

    notes: List[str] = []
    lower = q_lower(n, rate, cutoff)
    upper = q_upper(n, rate)
    upper_star, multiple = _q_upper_star(n, rate, cutoff)
    if multiple:
        notes.append('several roots for q_u*; took the one nearest its '
                     'approximation')
    if cutoff is UNBOUNDED:
        pseudo = pseudo_region(rate)
    else:
        pseudo = (None, None)
    if points.degenerate:
        notes.append('zero input rate')

    classification = _place(q, lower, upper, upper_star, pseudo, cutoff)
    report = StabilityReport(config,
                             points,
                             lower,
                             upper,
                             upper_star,
                             pseudo[0],
                             pseudo[1],
                             lower > upper,
                             classification,
                             multiple_roots=multiple)

    if cutoff is UNBOUNDED and lower <= q <= upper_star and not \
            points.degenerate:
        try:
            bound = epsilon_bounds(n, n, rate, q).clt
        except SingularityError:
            bound = None
        report = dataclasses.replace(report, epsilon_bound=bound)

    if not report.is_stable and not points.degenerate:
        saturated = saturated_fixed_point(n, q, cutoff)
        if not saturated.converged:
            notes.append('saturated fixed point did not converge')
        if cutoff is UNBOUNDED and q < 1 - points.p_l:
            notes.append('p + q <= 1 at p_L; unbounded backoff has no '
                         'stationary phase distribution there')
        report = dataclasses.replace(report, saturated=saturated)

    report = dataclasses.replace(report,
                                 predicted_throughput=network_throughput(
                                     config, report),
                                 notes=tuple(notes))
    logging.debug(f'q = {q} is {classification.value} for n = {n}, '
                  f'λ̂ = {rate}, K = {cutoff}.')
    return report


############
# INTERNAL #
############


def _check_nodes(n: int):
    if n < 2:
        raise DomainError(f'Region analysis needs at least two nodes, '
                          f'not {n}.')


def _place(q: float, lower: float, upper: float, upper_star: float,
           pseudo: Tuple[Optional[float], Optional[float]],
           cutoff: Cutoff) -> Classification:
    if lower <= q <= upper:
        return Classification.ABSOLUTE
    if cutoff is UNBOUNDED:
        if lower <= q <= upper_star:
            return Classification.ASYMPTOTIC
        if pseudo[0] <= q <= pseudo[1]:
            return Classification.PSEUDO
    return Classification.UNSTABLE


def _q_upper_star(n: int, aggregate_rate: float,
                  cutoff: Cutoff) -> Tuple[float, bool]:
    """Return q_u* and whether more than one root was bracketed."""
    _check_nodes(n)
    check_cutoff(cutoff)
    points = require_stable_points(aggregate_rate)
    if points.degenerate:
        return 1.0, False
    if cutoff == 1:
        return q_upper(n, aggregate_rate), False

    p = points.p_l
    attempts_at_ps = -math.log(points.p_s)
    if cutoff is UNBOUNDED:
        return 1 - p + attempts_at_ps / n * p, False

    # Mean service time allowed when the backlogged nodes' attempts just
    # reach -ln p_S.
    allowed = 1 + (1 - p) / p * n / attempts_at_ps

    def excess_service(q):
        return inverse_service_rate(p, q, cutoff) - allowed

    return _grid_root(excess_service,
                      f'q_u* (n = {n}, λ̂ = {aggregate_rate}, K = {cutoff})',
                      target=q_upper_star_approx(n, aggregate_rate, cutoff))


def _grid_root(func: Callable[[float], float],
               label: str,
               target: Optional[float] = None) -> Tuple[float, bool]:
    """Bisect a sign change of func found on the log-spaced q grid.

    With several sign changes, take the root nearest target, or the lowest
    if there is no target. Return the root and whether it was ambiguous.

    """
    grid = np.geomspace(GRID_LOWER, GRID_UPPER, GRID_POINTS)
    values = np.array([func(float(x)) for x in grid])
    brackets = [(float(grid[i]), float(grid[i + 1]))
                for i in range(len(grid) - 1)
                if values[i] == 0 or values[i] * values[i + 1] < 0]
    if not brackets:
        raise NoRootError(f'No sign change for {label} in '
                          f'[{GRID_LOWER}, {GRID_UPPER}].')

    roots = [
        bisect(func,
               a,
               b,
               xtol=ROOT_XTOL,
               rtol=ROOT_RTOL,
               maxiter=ROOT_MAX_ITERATIONS) for a, b in brackets
    ]
    multiple = len(roots) > 1
    if multiple:
        logging.warning(f'{len(roots)} roots for {label}: {roots}.')
    if target is None:
        return roots[0], multiple
    return min(roots, key=lambda r: abs(r - target)), multiple


def _approximate_max_throughput(n: int, cutoff: Cutoff,
                                mode: Mode) -> MaxThroughputResult:
    if cutoff == 1:
        return MaxThroughputResult(E_INVERSE, 1 / n, Method.APPROXIMATION,
                                   mode)
    if cutoff is UNBOUNDED:
        if mode is Mode.ASYMPTOTIC:
            return MaxThroughputResult(E_INVERSE, 1 - E_INVERSE,
                                       Method.APPROXIMATION, mode)
        rate = math.log(n) / n
        return MaxThroughputResult(rate, rate, Method.APPROXIMATION, mode)
    if mode is Mode.ASYMPTOTIC:
        raise DomainError(f'No closed-form asymptotic maximum throughput '
                          f'for K = {cutoff}.')
    effective = n**(1 - 1 / cutoff)
    rate = min(math.log(effective) / effective, E_INVERSE)
    return MaxThroughputResult(rate, q_lower_approx(n, rate, cutoff),
                               Method.APPROXIMATION, mode)
