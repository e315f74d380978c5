"""Iterative denoiser-guided sampling for linear measurements.

A denoiser's residual D(y) - y points toward the data manifold, and its
norm estimates how far away the iterate is.  The sampler walks that
direction while re-imposing the measured pixels, injecting a controlled
amount of fresh noise each step:

    u_t     = (I - P)(D(y) - y) + x_c - P y
    sigma_t = ||u_t|| / sqrt(d)
    h_t     = h0 * t / (1 + h0 * (t - 1))
    gamma_t = sqrt((1 - beta*h_t)^2 - (1 - h_t)^2) * sigma_t
    y      <- y + h_t * u_t + gamma_t * z,   z ~ N(0, I)

with P the measurement projector (a 0/1 pixel mask here) and x_c = P x*
the observed pixels.  Iteration stops when sigma_t drops to the floor or
the step budget runs out; the reconstruction is x_c + (I - P) y, which
satisfies the measurements bitwise.

beta = 1 makes gamma vanish: the same loop becomes a deterministic
iterated denoiser with a residual-based stopping rule, started from a
noisy image instead of the half-gray initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import psnr


@dataclass(frozen=True)
class SamplerConfig:
    sigma0: float = 1.0
    sigma_floor: float = 0.01
    h0: float = 0.01
    beta: float = 0.01
    t_max: int = 1000

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.sigma_floor > 0):
            raise ValueError("sigma0 and sigma_floor must be positive")
        if not (0.0 < self.h0 <= 1.0):
            raise ValueError("h0 must be in (0, 1]")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError("beta must be in [0, 1]")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")


def step_size(h0: float, t: int) -> float:
    """Schedule h_t = h0*t / (1 + h0*(t-1)); h_1 = h0, monotone toward 1."""
    return h0 * t / (1.0 + h0 * (t - 1))


def noise_gain(h: float, beta: float) -> float:
    """Injected-noise gain sqrt((1 - beta*h)^2 - (1 - h)^2).

    Identically zero at beta = 1; the argument is nonnegative for any
    beta in [0, 1] and h in (0, 1], so a negative value means a broken
    configuration rather than a numerical edge case.
    """
    gain_sq = (1.0 - beta * h) ** 2 - (1.0 - h) ** 2
    if gain_sq < 0.0:
        raise ArithmeticError("negative injected-noise variance")
    return float(np.sqrt(gain_sq))


@dataclass(frozen=True)
class Projector:
    """Diagonal 0/1 projector onto the observed pixels."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float64)
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "mask", m)

    def apply(self, v) -> np.ndarray:
        return self.mask * np.asarray(v, dtype=np.float64)

    def complement(self, v) -> np.ndarray:
        return (1.0 - self.mask) * np.asarray(v, dtype=np.float64)

    @property
    def observed_count(self) -> int:
        return int(self.mask.sum())


def make_inpainting_mask(shape, fraction: float, rng) -> Projector:
    """Random mask keeping exactly floor(fraction * d) pixels."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must be in [0, 1]")
    d = int(np.prod(shape))
    keep = int(np.floor(fraction * d))
    mask = np.zeros(d, dtype=np.float64)
    mask[rng.choice(d, size=keep, replace=False)] = 1.0
    return Projector(mask.reshape(shape))


def observe(clean, projector: Projector) -> np.ndarray:
    """Measured pixels x_c = P x*, exact zeros elsewhere."""
    return projector.apply(clean)


@dataclass
class StepRecord:
    t: int
    sigma_hat: float
    psnr: float  # NaN when no clean reference was supplied


@dataclass
class Trajectory:
    records: list[StepRecord]
    stop_reason: str  # "threshold" or "budget"
    final_y: np.ndarray
    x_hat: np.ndarray
    one_pass_psnr: float = np.nan
    best_psnr: float = np.nan
    final_psnr: float = np.nan

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def stability_gap(self) -> float:
        """final - best PSNR; near zero when stopping is well calibrated."""
        return self.final_psnr - self.best_psnr


def _iterate(denoiser, projector, x_c, y0, cfg: SamplerConfig, rng, clean):
    mask = projector.mask
    d = y0.size
    sqrt_d = np.sqrt(d)

    def reconstruct(y):
        return x_c + (1.0 - mask) * y

    def score(y):
        return psnr(reconstruct(y), clean) if clean is not None else np.nan

    y = np.asarray(y0, dtype=np.float64).copy()
    one_pass = np.nan
    if clean is not None:
        one_pass = psnr(
            x_c + (1.0 - mask) * np.asarray(denoiser(y), dtype=np.float64), clean
        )

    records: list[StepRecord] = []
    stop_reason = "budget"
    for t in range(1, cfg.t_max + 1):
        dy = np.asarray(denoiser(y), dtype=np.float64)
        if dy.shape != y.shape:
            raise ValueError("denoiser not shape-preserving")
        u = (1.0 - mask) * (dy - y) + x_c - mask * y
        sigma_hat = float(np.linalg.norm(u.ravel()) / sqrt_d)
        if not np.isfinite(sigma_hat):
            raise ArithmeticError(f"non-finite sampler state at step {t}")
        records.append(StepRecord(t=t, sigma_hat=sigma_hat, psnr=score(y)))
        if sigma_hat <= cfg.sigma_floor:
            stop_reason = "threshold"
            break
        h = step_size(cfg.h0, t)
        gamma = noise_gain(h, cfg.beta) * sigma_hat
        z = rng.standard_normal(y.shape) if rng is not None else 0.0
        y = y + h * u + gamma * z

    x_hat = reconstruct(y)
    final = psnr(x_hat, clean) if clean is not None else np.nan
    best = final
    if clean is not None and records:
        best = max(final, max(r.psnr for r in records))
    return Trajectory(
        records=records,
        stop_reason=stop_reason,
        final_y=y,
        x_hat=x_hat,
        one_pass_psnr=one_pass,
        best_psnr=best,
        final_psnr=final,
    )


def run_sampler(denoiser, projector: Projector, x_c, cfg: SamplerConfig, rng, clean=None):
    """Sample a reconstruction consistent with the measured pixels.

    Initialization: y = x_c + 0.5*(I - P)*1 + sigma0*z with z drawn over
    the full image.  Per-step PSNR (when clean is given) is measured on
    the projected estimate x_c + (I - P)y.
    """
    x_c = np.asarray(x_c, dtype=np.float64)
    if x_c.shape != projector.mask.shape:
        raise ValueError("x_c shape does not match the projector")
    y0 = x_c + 0.5 * (1.0 - projector.mask) + cfg.sigma0 * rng.standard_normal(x_c.shape)
    return _iterate(denoiser, projector, x_c, y0, cfg, rng, clean)


def iterative_denoise(denoiser, y0, cfg: SamplerConfig, clean=None):
    """Deterministic iterated denoising with residual-based stopping.

    Requires beta = 1 (no injected noise) and runs unconstrained: the
    projector is empty and the iteration starts from the given noisy
    image.  Stops once the denoiser residual norm falls to the floor.
    """
    if cfg.beta != 1.0:
        raise ValueError("iterative denoising requires beta = 1")
    y0 = np.asarray(y0, dtype=np.float64)
    projector = Projector(np.zeros(y0.shape))
    x_c = np.zeros_like(y0)
    return _iterate(denoiser, projector, x_c, y0, cfg, rng=None, clean=clean)
