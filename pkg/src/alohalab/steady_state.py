# -*- coding: utf-8 -*-
"""The decomposed-queue model of buffered slotted Aloha with backoff.

Each of n nodes is treated as an independent Geo/G/1 queue with Bernoulli
arrivals of rate λ = λ̂/n. Its head-of-line (HOL) packet moves through
phases 0..K, one per collision, and in phase i it is transmitted with
probability q**i. The queues are coupled only through the probability of
success p, which in steady state solves the characteristic equation
p = exp(-λ̂/p), independently of q and K.

This module holds that model: the phase distribution of the HOL packet,
offered load, the stable points of the characteristic equation and the
dynamics between them, and the saturated network's fixed point, where every
node is busy and p settles at an undesired stable point p_A that does depend
on q and K.

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

import enum
import logging
import math
from dataclasses import dataclass
from typing import (TYPE_CHECKING, Generator, Optional, Tuple, Union)

import numpy as np
from scipy.optimize import bisect

from alohalab.errors import (DomainError, NoStablePointsError,
                             SingularityError)
from alohalab.lambert_w import DOMAIN_TOLERANCE, w0, wm1

if TYPE_CHECKING:
    from alohalab.regions import StabilityReport

#############
# CONSTANTS #
#############

E_INVERSE = 1 / math.e

FIXED_POINT_TOLERANCE = 1e-10
MAX_FIXED_POINT_STEPS = 10_000

# Damped iteration gets this many steps before bisection takes over.
DAMPED_STEPS = 200
DAMPING = 0.5

# Bisection settings for fixed points; relative tolerance must stay above
# four machine epsilons for scipy.
BISECTION_XTOL = 1e-15
BISECTION_RTOL = 1e-15

DYNAMICS_TOLERANCE = 1e-10
MAX_DYNAMICS_STEPS = 10_000

# Beyond this, exp() overflows.
_MAX_EXPONENT = 709.0

###########
# CLASSES #
###########


class _Unbounded(enum.Enum):
    """Marker for exponential backoff without a cutoff phase."""

    UNBOUNDED = 'inf'

    def __str__(self):
        return self.value


UNBOUNDED = _Unbounded.UNBOUNDED

# A cutoff phase K: a positive integer, or UNBOUNDED.
Cutoff = Union[int, _Unbounded]


class Verdict(enum.Enum):
    """Where the success-probability dynamics are headed."""

    CONVERGED_TO_PL = 'converged'
    DIVERGED_BELOW_PS = 'diverged'
    UNDECIDED = 'undecided'


@dataclass(frozen=True)
class NetworkConfig:
    """One buffered-Aloha instance: n nodes, aggregate rate λ̂, K and q."""

    n: int
    aggregate_rate: float
    cutoff: Cutoff
    q: float

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, int):
            raise DomainError(f'Node count must be an integer: {self.n!r}.')
        if self.n < 1:
            raise DomainError(f'Need at least one node, not {self.n}.')
        if not self.aggregate_rate >= 0:
            raise DomainError('Aggregate rate must be non-negative, '
                              f'not {self.aggregate_rate}.')
        if self.aggregate_rate > self.n:
            raise DomainError(f'Per-node rate {self.aggregate_rate}/{self.n} '
                              'exceeds one packet per slot.')
        if not 0 < self.q < 1:
            raise DomainError(f'Retransmission factor must lie strictly '
                              f'between 0 and 1, not {self.q}.')
        check_cutoff(self.cutoff)

    @property
    def rate(self) -> float:
        """Return the per-node input rate λ."""
        return self.aggregate_rate / self.n

    @property
    def unbounded(self) -> bool:
        return self.cutoff is UNBOUNDED


@dataclass(frozen=True)
class PhaseDistribution:
    """Limiting distribution of the HOL packet's phase, f_0..f_K.

    For a finite cutoff, f holds all K + 1 probabilities and
    phase_given_backlogged holds φ_1..φ_K, the phase distribution given that
    the packet has collided at least once. For UNBOUNDED, both arrays are
    absent and the distribution is the geometric series f_i = f_0·ratio**i.
    With p = 1 no packet is ever backlogged, so phase_given_backlogged is
    absent as well.

    """

    p: float
    q: float
    cutoff: Cutoff
    f0: float
    ratio: float
    f: Optional[np.ndarray] = None
    phase_given_backlogged: Optional[np.ndarray] = None

    def f_at(self, phase: int) -> float:
        """Return the probability of one phase, including the unbounded tail."""
        if self.f is not None:
            return float(self.f[phase]) if phase < len(self.f) else 0.0
        return self.f0 * _power(self.ratio, phase)

    def phi_at(self, phase: int) -> float:
        """Return φ_i, the probability of phase i >= 1 given a backlog."""
        assert phase >= 1
        backlog = 1 - self.f0
        if backlog <= 0:
            return 0.0
        return self.f_at(phase) / backlog

    def truncated(self, phases: int) -> np.ndarray:
        """Return f_0..f_(phases - 1)."""
        return np.array([self.f_at(i) for i in range(phases)])

    def backlogged_attempt_mass(self) -> float:
        """Return Σ φ_i q**i, the attempt probability of a backlogged HOL.

        Summing the balance equations gives Σ_(i>=1) f_i q**i = f_0(1-p)/p,
        which holds for every cutoff.

        """
        backlog = 1 - self.f0
        if backlog <= 0:
            return 0.0
        return self.f0 * (1 - self.p) / (self.p * backlog)


@dataclass(frozen=True)
class StablePoints:
    """Roots p_L >= p_S of the characteristic equation p = exp(-λ̂/p).

    Both are absent (and defined is false) above λ̂ = 1/e. At λ̂ = 0, p_L is 1
    and p_S is reported as its limit 0, with degenerate set.

    """

    aggregate_rate: float
    p_l: Optional[float]
    p_s: Optional[float]
    defined: bool
    degenerate: bool = False


@dataclass(frozen=True)
class DynamicsResult:
    """A trajectory of p_(t+1) = exp(-λ̂/p_t) and its verdict."""

    trajectory: Tuple[float, ...]
    verdict: Verdict

    @property
    def steps(self) -> int:
        return len(self.trajectory) - 1

    @property
    def final(self) -> float:
        return self.trajectory[-1]


@dataclass(frozen=True)
class SaturatedPoint:
    """The undesired stable point p_A of a saturated network."""

    p_a: float
    iterations: int
    converged: bool
    residual: float


#######################
# INTERFACE FUNCTIONS #
#######################


def check_cutoff(cutoff: Cutoff):
    """Raise DomainError unless cutoff is a positive integer or UNBOUNDED."""
    if cutoff is UNBOUNDED:
        return
    if isinstance(cutoff, bool) or not isinstance(cutoff, (int, np.integer)):
        raise DomainError(f'Cutoff phase must be an integer or unbounded, '
                          f'not {cutoff!r}.')
    if cutoff < 1:
        raise DomainError(f'Cutoff phase must be at least 1, not {cutoff}.')


def as_cutoff(value: Union[int, float, str, _Unbounded]) -> Cutoff:
    """Interpret a value from a file or command line as a cutoff phase."""
    if value is UNBOUNDED:
        return UNBOUNDED
    if isinstance(value, str):
        if value.strip().lower() in ('inf', 'infinity', 'unbounded', '∞'):
            return UNBOUNDED
        try:
            value = int(value)
        except ValueError:
            raise DomainError(f'Not a cutoff phase: {value!r}.')
    if isinstance(value, float):
        if math.isinf(value):
            return UNBOUNDED
        if not value.is_integer():
            raise DomainError(f'Not a cutoff phase: {value!r}.')
        value = int(value)
    check_cutoff(value)
    return int(value)


def inverse_service_rate(p: float, q: float, cutoff: Cutoff) -> float:
    """Return 1/f_0, the mean service time of a HOL packet in slots.

    With r = (1 - p)/q this is Σ_(i<K) r**i + r**K/p, or 1/(1 - r) for an
    unbounded cutoff, which requires r < 1.

    """
    _check_probability(p, 'Probability of success', allow_one=True)
    _check_factor(q)
    if cutoff is UNBOUNDED:
        if not p + q > 1:
            raise SingularityError(
                f'Unbounded backoff with p + q <= 1 (p = {p}, q = {q}) '
                'has no stationary phase distribution.')
        return q / (p - (1 - q))
    ratio = (1 - p) / q
    return _geometric_sum(ratio, cutoff) + _power(ratio, cutoff) / p


def service_rate(p: float, q: float, cutoff: Cutoff) -> float:
    """Return f_0, the probability that the HOL packet is in phase 0."""
    return 1 / inverse_service_rate(p, q, cutoff)


def phase_distribution(p: float, q: float,
                       cutoff: Cutoff) -> PhaseDistribution:
    """Solve the phase Markov chain of a HOL packet."""
    f0 = service_rate(p, q, cutoff)
    ratio = (1 - p) / q
    if cutoff is UNBOUNDED:
        return PhaseDistribution(p, q, cutoff, f0, ratio)

    # Normalise in log space; the weights r**i overflow for small p and q.
    if ratio == 0:
        f = np.zeros(cutoff + 1)
        f[0] = 1.0
    else:
        log_weights = np.arange(cutoff + 1) * math.log(ratio)
        log_weights[-1] -= math.log(p)
        weights = np.exp(log_weights - log_weights.max())
        f = weights / weights.sum()

    backlog = 1 - f[0]
    phi = f[1:] / backlog if backlog > 0 else None
    return PhaseDistribution(p, q, cutoff, float(f[0]), ratio, f, phi)


def offered_load(config: NetworkConfig, p: float) -> float:
    """Return ρ = λ/f_0 for one node's queue at probability of success p."""
    return config.rate * inverse_service_rate(p, config.q, config.cutoff)


def stable_points(aggregate_rate: float) -> StablePoints:
    """Find the roots of p = exp(-λ̂/p) through the Lambert W function."""
    if not aggregate_rate >= 0:
        raise DomainError(f'Aggregate rate must be non-negative, '
                          f'not {aggregate_rate}.')
    if aggregate_rate == 0:
        return StablePoints(0.0, 1.0, 0.0, True, degenerate=True)
    if aggregate_rate > E_INVERSE + DOMAIN_TOLERANCE:
        return StablePoints(aggregate_rate, None, None, False)
    z = max(-aggregate_rate, -E_INVERSE)
    return StablePoints(aggregate_rate, math.exp(w0(z)), math.exp(wm1(z)),
                        True)


def require_stable_points(aggregate_rate: float) -> StablePoints:
    """Like stable_points but raise NoStablePointsError above 1/e."""
    points = stable_points(aggregate_rate)
    if not points.defined:
        raise NoStablePointsError(
            f'No stable points: aggregate rate {aggregate_rate} exceeds 1/e.')
    return points


def p_l_series(aggregate_rate: float) -> float:
    """Approximate p_L by the first terms of its power series in λ̂."""
    x = aggregate_rate
    return 1 - x - x**2 / 2 - 2 * x**3 / 3 - 9 * x**4 / 8


def p_s_linear_approx(aggregate_rate: float) -> float:
    """Approximate p_S with an exponent linear in λ̂, tangent at λ̂ = 1/e."""
    return math.exp(-5 / 3 - math.sqrt(2) + math.e *
                    (2 / 3 + math.sqrt(2) / 2) * aggregate_rate)


def finite_population_success(n: int, aggregate_rate: float) -> float:
    """Solve p = (1 - λ/p)**(n - 1) for the root nearest p_L.

    This is the characteristic equation before its large-n exponential
    approximation. It sits slightly above p_L, noticeably so for small n.

    """
    points = require_stable_points(aggregate_rate)
    if aggregate_rate == 0 or n == 1:
        return 1.0
    rate = aggregate_rate / n

    def residual(p):
        return p - (1 - rate / p)**(n - 1)

    # The product form dominates the exponential, so the root lies in
    # [p_L, 1].
    lower = points.p_l
    if residual(lower) >= 0:
        return lower
    return bisect(residual,
                  lower,
                  1.0,
                  xtol=BISECTION_XTOL,
                  rtol=BISECTION_RTOL)


def attempt_rate(aggregate_rate: float, p: float) -> float:
    """Return G = λ̂/p, the expected number of attempts per slot."""
    if not 0 < p <= 1:
        raise DomainError(f'Attempt rate needs 0 < p <= 1, not {p}.')
    return aggregate_rate / p


def throughput_of_attempt_rate(attempts: float) -> float:
    """Return G·exp(-G), the throughput of Poisson attempts at rate G."""
    if not attempts >= 0:
        raise DomainError(f'Attempt rate must be non-negative: {attempts}.')
    return attempts * math.exp(-attempts)


def success_map(p_t: float, aggregate_rate: float) -> float:
    """Take one step of the dynamics: p_(t+1) = exp(-λ̂/p_t)."""
    _check_probability(p_t, 'Probability of success', allow_zero=True,
                       allow_one=True)
    if p_t == 0:
        return 0.0 if aggregate_rate > 0 else 1.0
    return math.exp(-aggregate_rate / p_t)


def dynamics(p_0: float,
             aggregate_rate: float) -> Generator[float, None, None]:
    """Generate p_0, p_1, ... under the success map, without end."""
    p = p_0
    while True:
        yield p
        p = success_map(p, aggregate_rate)


def iterate_dynamics(p_0: float,
                     aggregate_rate: float,
                     max_steps: int = MAX_DYNAMICS_STEPS,
                     tol: float = DYNAMICS_TOLERANCE) -> DynamicsResult:
    """Iterate the success map from p_0 until its fate is clear.

    Without stable points (λ̂ > 1/e) the verdict is always UNDECIDED.

    """
    points = stable_points(aggregate_rate)
    trajectory = []
    verdict = Verdict.UNDECIDED
    for step, p in enumerate(dynamics(p_0, aggregate_rate)):
        trajectory.append(p)
        if points.defined:
            if abs(p - points.p_l) < tol:
                verdict = Verdict.CONVERGED_TO_PL
                break
            if p < points.p_s - tol:
                verdict = Verdict.DIVERGED_BELOW_PS
                break
        if step >= max_steps:
            break

    logging.debug(f'Dynamics from {p_0} at λ̂ = {aggregate_rate}: '
                  f'{verdict.value} after {len(trajectory) - 1} steps.')
    return DynamicsResult(tuple(trajectory), verdict)


def saturated_gain(p: float, q: float, cutoff: Cutoff) -> float:
    """Return g(p) = p/f_0 for a saturated network, possibly infinite.

    For an unbounded cutoff with (1 - p)/q >= 1, the mean service time is
    infinite and so is g.

    """
    _check_probability(p, 'Probability of success', allow_zero=True,
                       allow_one=True)
    _check_factor(q)
    if cutoff is UNBOUNDED:
        if not p + q > 1:
            return math.inf
        return p * q / (p - (1 - q))
    ratio = (1 - p) / q
    return p * _geometric_sum(ratio, cutoff) + _power(ratio, cutoff)


def saturated_map(p_t: float,
                  n: int,
                  q: float,
                  cutoff: Cutoff,
                  finite_population: bool = False) -> float:
    """Take one step of the saturated dynamics, p_(t+1) = exp(-n/g(p_t)).

    With finite_population, return the exact product form
    (1 - 1/g(p_t))**(n - 1) instead of its exponential approximation.

    """
    gain = saturated_gain(p_t, q, cutoff)
    if finite_population:
        return (1 - 1 / gain)**(n - 1)
    return math.exp(-n / gain)


def saturated_fixed_point(n: int,
                          q: float,
                          cutoff: Cutoff,
                          finite_population: bool = False,
                          tol: float = FIXED_POINT_TOLERANCE,
                          max_steps: int = MAX_FIXED_POINT_STEPS
                          ) -> SaturatedPoint:
    """Find p_A, the fixed point of the saturated map.

    Damped iteration is tried first. The raw map alternates around its fixed
    point and can be steep, so bisection on p - map(p) takes over when the
    damped iteration stalls; p - map(p) is increasing and changes sign once.

    """
    if n < 2:
        raise DomainError(f'Saturation needs at least two nodes, not {n}.')
    _check_factor(q)

    def mapped(p):
        return saturated_map(p, n, q, cutoff, finite_population)

    # Below 1 - q an unbounded backoff's map is identically 1.
    lower = 1 - q if cutoff is UNBOUNDED else 0.0
    upper = 1.0

    p = _saturated_guess(n, q, cutoff)
    for step in range(1, min(DAMPED_STEPS, max_steps) + 1):
        target = mapped(p)
        if abs(target - p) <= tol:
            logging.debug(f'p_A = {p} by damped iteration in {step} steps.')
            return SaturatedPoint(p, step, True, abs(target - p))
        p += DAMPING * (target - p)

    used = min(DAMPED_STEPS, max_steps)
    p, result = bisect(lambda x: x - mapped(x),
                       lower,
                       upper,
                       xtol=BISECTION_XTOL,
                       rtol=BISECTION_RTOL,
                       maxiter=max(1, max_steps - used),
                       full_output=True,
                       disp=False)
    residual = abs(p - mapped(p))
    converged = residual <= tol or (result.converged and
                                    _at_float_resolution(p, n, q, cutoff,
                                                         finite_population))
    if not converged:
        logging.warning(f'p_A for n = {n}, q = {q}, K = {cutoff} did not '
                        f'converge: residual {residual:.3g}.')
    logging.debug(f'p_A = {p} by bisection in {result.iterations} steps.')
    return SaturatedPoint(p, used + result.iterations, converged, residual)


def p_a_closed_form_geo(n: int, q: float) -> float:
    """Approximate p_A for geometric retransmission (K = 1) as exp(-nq)."""
    _check_factor(q)
    return math.exp(-n * q)


def p_a_closed_form_exp(n: int, q: float) -> float:
    """Approximate p_A for unbounded backoff as n(1-q)/(n + q·ln(1-q))."""
    _check_factor(q)
    denominator = n + q * math.log1p(-q)
    if denominator <= 0:
        raise DomainError(f'Closed form for p_A undefined at n = {n}, '
                          f'q = {q}.')
    return n * (1 - q) / denominator


def network_throughput(config: NetworkConfig,
                       report: 'StabilityReport') -> float:
    """Predict the network throughput min(n·f_0, λ̂) for a classified q.

    Inside a stable region the throughput is λ̂. Outside it the network
    saturates and p drifts to p_A: geometric retransmission then delivers
    nq·exp(-nq) above q_u, and n·f_0(p_A) below q_l; unbounded backoff
    delivers λ̂ throughout [1 - p_L, 1 - p_S] and -(1-q)·ln(1-q) beyond it;
    other cutoffs deliver n·f_0(p_A).

    """
    points = require_stable_points(config.aggregate_rate)
    rate = config.aggregate_rate
    if report.is_stable or points.degenerate:
        return rate

    n, q, cutoff = config.n, config.q, config.cutoff
    if cutoff is UNBOUNDED:
        if report.pseudo_lower <= q <= report.pseudo_upper:
            return rate
        return min(-(1 - q) * math.log1p(-q), rate)

    if cutoff == 1 and q > report.q_upper:
        return min(n * q * math.exp(-n * q), rate)

    saturated = report.saturated or saturated_fixed_point(n, q, cutoff)
    if saturated.p_a <= 0:
        return 0.0
    return min(n * service_rate(saturated.p_a, q, cutoff), rate)


def clamp_probability(value: float, label: str) -> float:
    """Clamp a computed probability to [0, 1] at an output boundary."""
    clamped = min(1.0, max(0.0, value))
    if clamped != value:
        logging.warning(f'Clamped {label} from {value!r} to {clamped}.')
    return clamped


############
# INTERNAL #
############


def _check_probability(p: float,
                       label: str,
                       allow_zero: bool = False,
                       allow_one: bool = False):
    low_ok = p >= 0 if allow_zero else p > 0
    high_ok = p <= 1 if allow_one else p < 1
    if not (low_ok and high_ok):
        raise DomainError(f'{label} out of range: {p}.')


def _check_factor(q: float):
    if not 0 < q < 1:
        raise DomainError(f'Retransmission factor must lie strictly between '
                          f'0 and 1, not {q}.')


def _power(base: float, exponent: int) -> float:
    """Return base**exponent, or infinity where that overflows."""
    if base == 0:
        return 1.0 if exponent == 0 else 0.0
    if exponent * math.log(base) > _MAX_EXPONENT:
        return math.inf
    return base**exponent


def _geometric_sum(ratio: float, terms: int) -> float:
    """Return Σ_(i<terms) ratio**i."""
    if ratio == 0:
        return 1.0
    if ratio == 1:
        return float(terms)
    exponent = terms * math.log(ratio)
    if exponent > _MAX_EXPONENT:
        return math.inf
    return math.expm1(exponent) / (ratio - 1)


def _saturated_guess(n: int, q: float, cutoff: Cutoff) -> float:
    if cutoff == 1:
        return p_a_closed_form_geo(n, q)
    if cutoff is UNBOUNDED:
        try:
            return min(1.0, p_a_closed_form_exp(n, q))
        except DomainError:
            return 1 - q / 2
    return 0.5


def _at_float_resolution(p: float, n: int, q: float, cutoff: Cutoff,
                         finite_population: bool) -> bool:
    """Check whether p - map(p) changes sign between neighbouring floats."""
    def h(x):
        return x - saturated_map(x, n, q, cutoff, finite_population)

    below, above = np.nextafter(p, 0.0), np.nextafter(p, 1.0)
    return h(float(below)) <= 0 <= h(float(above))
