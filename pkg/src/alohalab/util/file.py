# -*- coding: utf-8 -*-
"""Argument types for scenario parameters and the files they come from.

Each function here converts one command-line string, or one value from a
scenario file, and raises ArgumentTypeError on bad input, so that argparse
can report it as a usage error.

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

from argparse import ArgumentTypeError
from pathlib import Path
from typing import Any, Tuple

from alohalab.errors import DomainError
from alohalab.steady_state import Cutoff, as_cutoff

#######################
# INTERFACE FUNCTIONS #
#######################

# (start, stop, points, logarithmic)
GridSpec = Tuple[float, float, int, bool]


def existing_file(candidate: str):
    """Convert a CLI argument to an absolute file path."""
    path = Path(candidate).resolve()
    if not path.is_file():
        raise ArgumentTypeError(f"Not a file: {path}")
    return path


def existing_dir(candidate: str):
    """Convert a CLI argument to an absolute folder path."""
    path = Path(candidate).resolve()
    if not path.is_dir():
        raise ArgumentTypeError(f"Not a folder: {path}")
    return path


def output_path(candidate: str) -> Path:
    """Convert a CLI argument to an absolute path in an existing folder."""
    path = Path(candidate).resolve()
    existing_dir(str(path.parent))
    if path.is_dir():
        raise ArgumentTypeError(f"Not a file: {path}")
    return path


def cutoff_phase(candidate: Any) -> Cutoff:
    """Convert a CLI argument to a cutoff phase; “inf” means unbounded."""
    try:
        return as_cutoff(candidate)
    except DomainError as e:
        raise ArgumentTypeError(str(e))


def probability(candidate: Any) -> float:
    """Convert a CLI argument to a number strictly between 0 and 1."""
    value = _number(candidate, float)
    if not 0 < value < 1:
        raise ArgumentTypeError(f"Not strictly between 0 and 1: {candidate}")
    return value


def rate(candidate: Any) -> float:
    """Convert a CLI argument to a non-negative packet rate."""
    value = _number(candidate, float)
    if not value >= 0:
        raise ArgumentTypeError(f"Not a non-negative rate: {candidate}")
    return value


def count(candidate: Any) -> int:
    """Convert a CLI argument to a positive integer."""
    value = _number(candidate, int)
    if value < 1:
        raise ArgumentTypeError(f"Not a positive integer: {candidate}")
    return value


def natural(candidate: Any) -> int:
    """Convert a CLI argument to a non-negative integer."""
    value = _number(candidate, int)
    if value < 0:
        raise ArgumentTypeError(f"Not a non-negative integer: {candidate}")
    return value


def q_grid(candidate: Any) -> GridSpec:
    """Convert “start:stop:points[:log]” to a grid specification.

    A scenario file may instead give a mapping with the keys start, stop,
    points and, optionally, log.

    """
    if isinstance(candidate, dict):
        try:
            parts = [
                candidate['start'], candidate['stop'], candidate['points']
            ]
        except KeyError as e:
            raise ArgumentTypeError(f"Grid lacks {e}: {candidate}")
        spacing = 'log' if candidate.get('log') else 'lin'
    else:
        parts = str(candidate).split(':')
        if len(parts) not in (3, 4):
            raise ArgumentTypeError(
                f"Not a grid of the form start:stop:points[:log]: {candidate}")
        spacing = parts.pop() if len(parts) == 4 else 'lin'
    if spacing not in ('lin', 'log'):
        raise ArgumentTypeError(f"Unknown grid spacing: {spacing}")

    start = probability(parts[0])
    stop = probability(parts[1])
    points = count(parts[2])
    if points > 1 and not start < stop:
        raise ArgumentTypeError(f"Grid start must lie below stop: {candidate}")
    return start, stop, points, spacing == 'log'


############
# INTERNAL #
############


def _number(candidate: Any, kind: type):
    if isinstance(candidate, bool):
        raise ArgumentTypeError(f"Not a number: {candidate}")
    try:
        if kind is int and isinstance(candidate, float):
            if not candidate.is_integer():
                raise ValueError
            return int(candidate)
        return kind(candidate)
    except (TypeError, ValueError):
        raise ArgumentTypeError(f"Not a valid {kind.__name__}: {candidate}")
