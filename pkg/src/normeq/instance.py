"""Pooled instance statistics and the reversible normalization transform.

An instance is one real-valued tensor treated as a single statistical unit:
a training patch, a full image, or a (C, H, W) stack.  Statistics always
pool over *every* entry of the instance, never per channel or per row.  The
global affine action y -> a*y + b*1 acts on all entries at once, and the
pooling domain is part of that contract.

The standard deviation uses the population convention

    std(y) = ||y - mu(y)*1||_2 / sqrt(d),    d = number of entries,

so the normalized image z = (y - mu)/std satisfies mu(z) = 0 and
||z||_2 = sqrt(d) whenever std(y) > 0.

All functions are pure: inputs are never mutated.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class InstanceStats(NamedTuple):
    """Pooled first and second moment of one instance."""

    mu: float
    std: float


def pooled_stats(y) -> InstanceStats:
    """Mean and population standard deviation pooled over all entries.

    Raises ValueError("non-finite instance") when the input contains NaN
    or infinities, and on empty input.
    """
    arr = np.asarray(y, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty instance")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite instance")
    mu = float(arr.mean())
    std = float(np.sqrt(np.mean((arr - mu) ** 2)))
    return InstanceStats(mu=mu, std=std)


def normalize(y) -> tuple[np.ndarray, InstanceStats]:
    """Map an instance onto the zero-mean, unit-std manifold.

    Returns (z, stats) with z = (y - mu)/std.  A constant instance has
    std = 0 and maps to the all-zeros instance (guardrail); together with
    the stats the transform stays invertible through denormalize.
    """
    arr = np.asarray(y, dtype=np.float64)
    s = pooled_stats(arr)
    if s.std == 0.0:
        return np.zeros_like(arr), s
    return (arr - s.mu) / s.std, s


def denormalize(z, s: InstanceStats) -> np.ndarray:
    """Invert normalize: std*z + mu."""
    arr = np.asarray(z, dtype=np.float64)
    if not (np.isfinite(s.mu) and np.isfinite(s.std)):
        raise ValueError("non-finite stats")
    return s.std * arr + s.mu


def matched_target(x, s: InstanceStats) -> np.ndarray:
    """Express a clean target in a noisy instance's normalized frame.

    (x - mu)/std with (mu, std) taken from the *observation*, not from x.
    In this frame the training loss on the normalized pair equals the raw
    loss divided by std(y)^2.  Returns zeros when std = 0.
    """
    arr = np.asarray(x, dtype=np.float64)
    if s.std == 0.0:
        return np.zeros_like(arr)
    return (arr - s.mu) / s.std


def normalized_distance(y_tilde, x_tilde) -> float:
    """L2 distance between a normalized input and its matched target.

    This is the per-instance difficulty: for additive noise it equals
    ||y - x||_2 / std(y), the noise norm measured in contrast units.
    """
    a = np.asarray(y_tilde, dtype=np.float64)
    b = np.asarray(x_tilde, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm((a - b).ravel()))
