"""Arithmetic on the circle: wrapping, weighted circular means, wrap-safe medians.

Every angle entering the reconstruction is only known modulo 2*pi, so naive
subtraction or averaging silently breaks near the branch cut.  All angle
handling is funneled through here.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(x):
    """Wrap angle(s) into the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), TWO_PI)


def circular_mean(angles, weights=None):
    """Weighted circular mean and resultant length.

    Returns (mean, r) with mean in (-pi, pi] and r in [0, 1].  r close to 0
    means the mean direction is ill-defined.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.size == 0:
        raise ValueError("circular_mean of empty set")
    if weights is None:
        weights = np.ones_like(angles)
    weights = np.asarray(weights, dtype=float)
    z = np.sum(weights * np.exp(1j * angles))
    total = np.sum(weights)
    if total <= 0:
        raise ValueError("circular_mean requires positive total weight")
    r = np.abs(z) / total
    return float(wrap_angle(np.angle(z))), float(r)


def wrapped_median(angles):
    """Median of angles, computed after recentering on the circular mean.

    Robust to a minority of values sitting across the branch cut; the
    result is wrapped back into (-pi, pi].
    """
    angles = np.asarray(angles, dtype=float)
    if angles.size == 0:
        raise ValueError("wrapped_median of empty set")
    center, _ = circular_mean(angles)
    residuals = wrap_angle(angles - center)
    return float(wrap_angle(center + np.median(residuals)))


def angle_distance(a, b):
    """Absolute distance between two angles on the circle, in [0, pi]."""
    return np.abs(wrap_angle(np.asarray(a, dtype=float) - b))
