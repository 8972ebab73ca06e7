# -*- coding: utf-8 -*-
"""Miscellaneous utility functions for output records.

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
import math
from typing import Any, Callable, Dict, Tuple

import numpy as np

from alohalab.errors import DomainError

#######################
# INTERFACE FUNCTIONS #
#######################

# Raw represents one output record, in column order.
Raw = Dict[str, Any]

SIGNIFICANT_DIGITS = 12


def field_order_fn(fields: Tuple[str, ...]) -> Callable[[Raw], Raw]:
    """Close over a mapping function that puts a record's columns in order.

    The record gets exactly “fields”, with absent entries left out.

    """
    def order(record: Raw) -> Raw:
        return {f: record[f] for f in fields if f in record}

    return order


def plain(value: Any) -> Any:
    """Reduce a value to a string, int, float, bool or None.

    Floats are rounded to SIGNIFICANT_DIGITS. Non-finite floats become None,
    since JSON has no spelling for them.

    """
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, enum.Enum):
        return plain(value.value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            return None
        return float(f'{value:.{SIGNIFICANT_DIGITS}g}')
    return str(value)


def text_cell(value: Any) -> str:
    """Render a value for a CSV cell."""
    value = plain(value)
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return f'{value:.{SIGNIFICANT_DIGITS}g}'
    return str(value)


def check_schema(document: Any) -> None:
    """Validate a tabular JSON document: named columns, then flat rows."""
    if not isinstance(document, dict) or set(document) != {'columns', 'rows'}:
        raise DomainError('Table must have exactly “columns” and “rows”.')
    columns = document['columns']
    if not isinstance(columns, list) or not all(
            isinstance(c, str) for c in columns):
        raise DomainError('Columns must be a list of names.')
    if len(set(columns)) != len(columns):
        raise DomainError('Column names must be unique.')
    if not isinstance(document['rows'], list):
        raise DomainError('Rows must be a list.')
    for i, row in enumerate(document['rows']):
        if not isinstance(row, dict) or list(row) != columns:
            raise DomainError(f'Row {i} does not follow the columns.')
        for key, value in row.items():
            if value is not None and not isinstance(
                    value, (str, int, float, bool)):
                raise DomainError(f'Row {i}, column {key}: not a scalar.')
