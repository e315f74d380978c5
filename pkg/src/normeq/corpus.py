"""Synthetic clean-image corpus.

Four families: smoothed Gaussian random fields (three correlation
scales), piecewise-constant Voronoi mosaics, linear ramps, and sinusoidal
gratings.  Each base pattern is normalized to zero mean and unit standard
deviation, then placed at a random mean level with a contrast drawn from a
two-component law: a textured bulk (roughly one decade around 0.1) plus a
low-contrast tail stretching two further decades down.  Mosaic interiors
and gentle ramps add near-flat patches on top of that.

The resulting patch-contrast distribution is what the robustness
diagnostics feed on: most patches sit in a narrow high-contrast band while
a thin tail spans orders of magnitude below it, so the same noise level
meets wildly different signal-to-noise ratios across the corpus.

Images are float64 in [0, 1].  Ramps are kept inside [0, 1] by
construction (their pixel statistics must stay exactly affine in the
coordinates); the other families are clipped when the draw demands it.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

DEFAULT_MIX = {"field": 0.40, "mosaic": 0.25, "ramp": 0.15, "grating": 0.20}

FIELD_SCALES = (1.5, 4.0, 10.0)

# Contrast law: (probability, log10 range) per component.
FLAT_TAIL_P = 0.15
FLAT_TAIL_RANGE = (0.002, 0.02)
BULK_RANGE = (0.05, 0.28)


def _unit(pattern: np.ndarray) -> np.ndarray:
    mu = pattern.mean()
    std = pattern.std()
    if std == 0.0:
        raise ValueError("degenerate pattern")
    return (pattern - mu) / std


def gaussian_field(shape, corr, rng) -> np.ndarray:
    """White noise smoothed at correlation length corr, unit contrast."""
    noise = rng.standard_normal(shape)
    return _unit(ndimage.gaussian_filter(noise, sigma=corr, mode="reflect"))


def voronoi_mosaic(shape, rng, n_sites=None) -> np.ndarray:
    """Nearest-site constant cells; flat interiors with sharp boundaries."""
    h, w = shape
    if n_sites is None:
        n_sites = int(rng.integers(4, 13))
    for _ in range(8):
        sites = np.column_stack(
            [rng.uniform(0, h, n_sites), rng.uniform(0, w, n_sites)]
        )
        values = rng.uniform(-1.0, 1.0, n_sites)
        ii, jj = np.mgrid[0:h, 0:w]
        d2 = (ii[..., None] - sites[:, 0]) ** 2 + (jj[..., None] - sites[:, 1]) ** 2
        field = values[np.argmin(d2, axis=-1)]
        if field.std() > 0:
            return _unit(field)
    raise ValueError("could not draw a non-constant mosaic")


def linear_ramp(shape, rng) -> np.ndarray:
    """Unit-contrast plane with a random orientation."""
    h, w = shape
    theta = rng.uniform(0.0, np.pi)
    ii, jj = np.mgrid[0:h, 0:w].astype(np.float64)
    t = np.cos(theta) * (jj - (w - 1) / 2.0) / w + np.sin(theta) * (
        ii - (h - 1) / 2.0
    ) / h
    return _unit(t)


def grating(shape, rng) -> np.ndarray:
    """Sinusoidal grating with random frequency, orientation and phase."""
    h, w = shape
    cycles = rng.uniform(2.0, 12.0)
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    ii, jj = np.mgrid[0:h, 0:w].astype(np.float64)
    t = (np.cos(theta) * jj + np.sin(theta) * ii) / max(h, w)
    return _unit(np.sin(2.0 * np.pi * cycles * t + phase))


_FAMILIES = ("field", "mosaic", "ramp", "grating")


def _draw_contrast(rng) -> float:
    lo, hi = FLAT_TAIL_RANGE if rng.uniform() < FLAT_TAIL_P else BULK_RANGE
    return float(10.0 ** rng.uniform(np.log10(lo), np.log10(hi)))


def make_image(size, rng, mix=None) -> np.ndarray:
    """Draw one clean image: random family, contrast and mean level."""
    shape = (size, size) if np.isscalar(size) else tuple(size)
    weights = dict(DEFAULT_MIX if mix is None else mix)
    names = [f for f in _FAMILIES if weights.get(f, 0.0) > 0]
    p = np.array([weights[f] for f in names], dtype=np.float64)
    if not names or not np.all(p >= 0):
        raise ValueError(f"bad family mix: {weights!r}")
    family = names[rng.choice(len(names), p=p / p.sum())]

    if family == "field":
        base = gaussian_field(shape, rng.choice(FIELD_SCALES), rng)
    elif family == "mosaic":
        base = voronoi_mosaic(shape, rng)
    elif family == "ramp":
        base = linear_ramp(shape, rng)
    else:
        base = grating(shape, rng)

    contrast = _draw_contrast(rng)
    if family == "ramp":
        # keep the plane exact: shrink contrast until [0, 1] fits, then
        # place the mean inside the feasible band instead of clipping
        span = float(base.max() - base.min())
        contrast = min(contrast, 0.999 / span)
        lo = contrast * -float(base.min())
        hi = 1.0 - contrast * float(base.max())
        mean = rng.uniform(lo, hi)
        return mean + contrast * base
    mean = rng.uniform(0.3, 0.7)
    return np.clip(mean + contrast * base, 0.0, 1.0)


def make_corpus(n, size, rng, mix=None) -> list[np.ndarray]:
    return [make_image(size, rng, mix=mix) for _ in range(n)]
