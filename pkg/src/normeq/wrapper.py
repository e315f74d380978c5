"""Normalization-equivariant wrapping of arbitrary denoisers.

A denoiser f is normalization equivariant when

    f(a*y + b*1) = a*f(y) + b*1        for all a > 0, b real.

Any backbone g can be forced into this class exactly by running it on the
normalized input and undoing the normalization afterwards:

    DIRECT      f(y) = std(y) * g((y - mu)/std) + mu
    RESIDUAL    f(y) = y - std(y) * h((y - mu)/std)
    INPUT_ONLY  f(y) = g((y - mu)/std)    (ablation: affine-invariant,
                                           not equivariant)
    NONE        f(y) = g(y)               (bare backbone, unmodified)

With epsilon = 0 the wrapper is the ideal map: a constant input has
std = 0 and the output is forced to the input itself (DIRECT collapses to
mu*1, RESIDUAL subtracts nothing).  With epsilon > 0 the statistics are
stabilized as std + epsilon, trading exactness near the constant manifold
for a division bounded away from zero; 1e-5 is small enough that the
defect stays at noise level for any instance with visible content.

The wrapped map agrees with g on the normalized manifold, and conversely
is determined by its restriction there, so nothing is lost: wrapping the
restriction of an already-equivariant map reproduces that map.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .instance import pooled_stats

# Denominator floor for the relative defect; keeps probes near the zero
# map well defined without masking real violations.
DEFECT_TAU = 1e-8


class WrapMode(Enum):
    NONE = "none"
    DIRECT = "direct"
    RESIDUAL = "residual"
    INPUT_ONLY = "input-only"


@dataclass(frozen=True)
class WrappedDenoiser:
    """A backbone plus the wrapping mode that fixes its symmetry class."""

    backbone: Callable[[np.ndarray], np.ndarray]
    mode: WrapMode = WrapMode.DIRECT
    epsilon: float = 1e-5

    def __post_init__(self):
        if not (self.epsilon >= 0.0):
            raise ValueError("epsilon must be >= 0")
        if not isinstance(self.mode, WrapMode):
            raise ValueError(f"unknown wrap mode: {self.mode!r}")

    def __call__(self, y) -> np.ndarray:
        return apply_wrapped(self, y)


def _run_backbone(backbone, z: np.ndarray) -> np.ndarray:
    out = np.asarray(backbone(z), dtype=np.float64)
    if out.shape != z.shape:
        raise ValueError(
            f"backbone not shape-preserving: {z.shape} -> {out.shape}"
        )
    return out


def apply_wrapped(w: WrappedDenoiser, y) -> np.ndarray:
    """Evaluate the wrapped denoiser on one instance."""
    arr = np.asarray(y, dtype=np.float64)
    if w.mode is WrapMode.NONE:
        return _run_backbone(w.backbone, arr)

    s = pooled_stats(arr)
    std_used = s.std + w.epsilon
    if std_used == 0.0:
        # Ideal wrapper on a constant instance: nothing to denoise.
        if w.mode is WrapMode.DIRECT:
            return np.full_like(arr, s.mu)
        if w.mode is WrapMode.RESIDUAL:
            return arr.copy()
        return _run_backbone(w.backbone, np.zeros_like(arr))

    z = (arr - s.mu) / std_used
    out = _run_backbone(w.backbone, z)
    if w.mode is WrapMode.DIRECT:
        return std_used * out + s.mu
    if w.mode is WrapMode.RESIDUAL:
        return arr - std_used * out
    return out


def residual_to_direct(h) -> Callable[[np.ndarray], np.ndarray]:
    """Convert a residual-predicting backbone to a clean-predicting one.

    Returns z -> z - h(z).  Wrapping the converted backbone in DIRECT mode
    gives the same map as wrapping h in RESIDUAL mode (same stabilized
    statistics on both paths).
    """

    def direct(z):
        z = np.asarray(z, dtype=np.float64)
        return z - np.asarray(h(z), dtype=np.float64)

    return direct


def equivariance_defect(f, y, a: float, b: float, tau: float = DEFECT_TAU) -> float:
    """Relative violation of f(a*y + b*1) = a*f(y) + b*1 for one probe.

    Zero (up to float rounding) for normalization-equivariant maps; order
    one for maps that ignore the affine action entirely.
    """
    if not a > 0:
        raise ValueError("probe gain a must be positive")
    arr = np.asarray(y, dtype=np.float64)
    lhs = np.asarray(f(a * arr + b), dtype=np.float64)
    rhs = a * np.asarray(f(arr), dtype=np.float64) + b
    num = float(np.linalg.norm((lhs - rhs).ravel()))
    den = float(np.linalg.norm(rhs.ravel())) + tau
    return num / den
