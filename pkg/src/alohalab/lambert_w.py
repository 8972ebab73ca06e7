# -*- coding: utf-8 -*-
"""Real branches of the Lambert W function.

W(z) is the inverse of w -> w·exp(w). On the real line it has two branches
meeting at the branch point z = -1/e, w = -1: the principal branch W_0,
defined for z >= -1/e with values >= -1, and the lower branch W_-1, defined
for -1/e <= z < 0 with values <= -1.

Both are evaluated by Halley iteration on w·exp(w) - z. Initial guesses
come from series: the Taylor series of W_0 about zero, the branch-point
series in x = ±sqrt(2(ez + 1)) near -1/e, and the logarithmic asymptotes
elsewhere. The series are never returned on their own.

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
import sys
from typing import Sequence

from alohalab.errors import DomainError

#############
# CONSTANTS #
#############

BRANCH_POINT = -1 / math.e

# Inputs this far below the branch point are still accepted as the branch
# point itself.
DOMAIN_TOLERANCE = 1e-15

# Inputs this close to the branch point evaluate to exactly -1.
BRANCH_POINT_NEIGHBOURHOOD = 1e-12

# Relative residual |w·exp(w) - z| accepted from Halley iteration.
RESIDUAL_TOLERANCE = 1e-12

MAX_HALLEY_STEPS = 64

# Coefficients of the branch-point series, in ascending powers of x.
BRANCH_POINT_COEFFICIENTS = (-1.0, 1.0, -1 / 3, 11 / 72, -43 / 540,
                             769 / 17280)

# Below this, branch-point series guesses beat the alternatives.
_BRANCH_POINT_SERIES_LIMIT = -0.25

_EPSILON = sys.float_info.epsilon

###########
# CLASSES #
###########


class WBranch(enum.Enum):
    """A real branch of the Lambert W function."""

    PRINCIPAL = 0
    MINUS_ONE = -1

    def evaluate(self, z: float) -> float:
        """Evaluate this branch at z."""
        if self is WBranch.PRINCIPAL:
            return w0(z)
        return wm1(z)


#######################
# INTERFACE FUNCTIONS #
#######################


def w0(z: float) -> float:
    """Evaluate the principal branch W_0 at z >= -1/e."""
    z = float(z)
    _check_lower_bound(z)
    if _near_branch_point(z):
        return -1.0
    if z == 0:
        return 0.0
    return _halley(z, _w0_guess(z), RESIDUAL_TOLERANCE * max(1.0, abs(z)))


def wm1(z: float) -> float:
    """Evaluate the lower branch W_-1 at -1/e <= z < 0."""
    z = float(z)
    _check_lower_bound(z)
    if z >= 0:
        raise DomainError(f'W_-1 is not real at z = {z}; need z < 0.')
    if _near_branch_point(z):
        return -1.0
    return _halley(z, _wm1_guess(z), RESIDUAL_TOLERANCE * abs(z))


def w0_series(z: float, terms: int = 5) -> float:
    """Sum the first terms of the Taylor series of W_0 about zero.

    The series is sum((-i)**(i - 1) / i! * z**i) and converges for
    |z| < 1/e.

    """
    return sum((-i)**(i - 1) / math.factorial(i) * z**i
               for i in range(1, terms + 1))


def wm1_series(z: float, terms: int = 6) -> float:
    """Sum the branch-point series of W_-1 at z.

    Only the six coefficients in BRANCH_POINT_COEFFICIENTS are known here.

    """
    assert terms <= len(BRANCH_POINT_COEFFICIENTS)
    x = -_branch_distance(z)
    return _polynomial(BRANCH_POINT_COEFFICIENTS[:terms], x)


############
# INTERNAL #
############


def _check_lower_bound(z: float):
    if math.isnan(z) or z < BRANCH_POINT - DOMAIN_TOLERANCE:
        raise DomainError(f'Lambert W is not real at z = {z}; '
                          f'need z >= -1/e.')


def _near_branch_point(z: float) -> bool:
    return abs(z - BRANCH_POINT) < BRANCH_POINT_NEIGHBOURHOOD


def _branch_distance(z: float) -> float:
    """Return sqrt(2(ez + 1)), clipped at zero against rounding."""
    return math.sqrt(max(0.0, 2 * (math.e * z + 1)))


def _polynomial(coefficients: Sequence[float], x: float) -> float:
    result = 0.0
    for c in reversed(coefficients):
        result = result * x + c
    return result


def _w0_guess(z: float) -> float:
    if z < _BRANCH_POINT_SERIES_LIMIT:
        return _polynomial(BRANCH_POINT_COEFFICIENTS, _branch_distance(z))
    if z <= 0.25:
        return w0_series(z)
    if z < 3:
        return math.log1p(z)
    log_z = math.log(z)
    log_log_z = math.log(log_z)
    return log_z - log_log_z + log_log_z / log_z


def _wm1_guess(z: float) -> float:
    if z < _BRANCH_POINT_SERIES_LIMIT:
        return wm1_series(z)
    log_z = math.log(-z)
    log_log_z = math.log(-log_z)
    return log_z - log_log_z + log_log_z / log_z


def _halley(z: float, w: float, tolerance: float) -> float:
    """Refine a guess for W(z) by Halley's method."""
    residual = w * math.exp(w) - z
    for _ in range(MAX_HALLEY_STEPS):
        if abs(residual) <= tolerance:
            return w
        w_plus_one = w + 1
        if w_plus_one == 0:
            break
        e_w = math.exp(w)
        step = residual / (e_w * w_plus_one - (w + 2) * residual /
                           (2 * w_plus_one))
        w -= step
        residual = w * math.exp(w) - z
        if abs(step) <= 4 * _EPSILON * max(1.0, abs(w)):
            break

    if abs(residual) > tolerance:
        logging.warning(f'Lambert W at z = {z}: residual {residual:.3g} '
                        f'above tolerance {tolerance:.3g}.')
    return w
