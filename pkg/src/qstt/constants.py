"""Shared physical constants and time-grid conversions.

All timestamps cross file boundaries as integer picoseconds; in memory they are
float64 seconds snapped to the picosecond grid. For |t| < ~2000 s the round trip
int ps -> float s -> int ps is exact (the product error stays below half a
picosecond), which is what keeps CSV replay bit-identical to in-memory runs.
"""

from __future__ import annotations

import numpy as np

# Vacuum speed of light, m/s (exact by SI definition).
C_VACUUM = 299_792_458.0

PS_PER_S = 10**12
_PS = 1e-12


def s_to_ps(t):
    """Seconds -> integer picoseconds (nearest), scalar or ndarray."""
    if np.isscalar(t):
        return int(round(t * PS_PER_S))
    return np.rint(np.asarray(t) * PS_PER_S).astype(np.int64)


def ps_to_s(ps):
    """Integer picoseconds -> float64 seconds, scalar or ndarray."""
    if np.isscalar(ps):
        return float(ps) * _PS
    return np.asarray(ps, dtype=np.float64) * _PS


def snap_ps(t):
    """Snap float seconds onto the picosecond grid (models a 1 ps time tagger)."""
    return ps_to_s(s_to_ps(t))
