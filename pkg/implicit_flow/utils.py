"""
SPDX-License-Identifier: BSD-2
"""

import numpy as np

from .IFLOW_Exception import IFLOW_Exception
from .types import IFLOW_RC


def _chkshape(layer, got, expected, what=None):
    """Raise a BAD_SHAPE error carrying both shapes unless they match."""
    got = tuple(got)
    expected = tuple(expected)
    if got != expected:
        raise IFLOW_Exception(
            IFLOW_RC.make(layer, IFLOW_RC.BAD_SHAPE), what, shapes=(got, expected)
        )


def _chkfinite(layer, values, what=None, error=IFLOW_RC.NON_FINITE):
    """Raise on the first non-finite entry, naming its flat index."""
    arr = np.asarray(values)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise IFLOW_Exception(IFLOW_RC.make(layer, error), what, index=int(bad[0]))


def _chkinterval(layer, t0, t1):
    if t0 == t1:
        raise IFLOW_Exception(
            IFLOW_RC.make(layer, IFLOW_RC.DEGENERATE_INTERVAL),
            f"t0 == t1 == {t0}",
            values=(t0, t1),
        )


def as_float64(values):
    return np.ascontiguousarray(values, dtype=np.float64)
