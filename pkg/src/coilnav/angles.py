"""Angle wrapping and planar rotations shared across the package."""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to the interval (-pi, pi].

    ``pi`` maps to ``pi`` and ``-pi`` maps to ``pi``, so the result is
    single-valued on the half-open interval.
    """
    return np.pi - np.remainder(np.pi - np.asarray(theta), TWO_PI)


def rot2(angle: float) -> np.ndarray:
    """2x2 counter-clockwise rotation matrix."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])
