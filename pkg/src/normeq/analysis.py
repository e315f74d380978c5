"""Metrics and robustness diagnostics.

The central quantity is the per-instance difficulty

    Delta = ||y_tilde - x_tilde||_2 = ||y - x||_2 / std(y),

the noise norm measured in the observation's own contrast units.  An
equivariant denoiser sees only the normalized problem, so its quality
(in the normalized frame) is a function of Delta alone, not of the raw
noise level.  The diagnostics here quantify that: difficulty histograms
per noise level, cross-noise coverage of central difficulty intervals,
quality-versus-difficulty curves, and the mean equivariance defect.

Quality in the normalized frame is reported as

    Q = -10 log10 ||g_out - x_tilde||_2^2   (dB),

which composes with the raw-frame peak term and the contrast term into
the usual PSNR:

    PSNR = 10 log10(d R^2) + Q - 20 log10(std(y)).

Any denoiser, wrapped or not, can be scored in that frame by anchoring
its output to the observation's statistics.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .instance import matched_target, pooled_stats
from .training import noise_unit
from .wrapper import DEFECT_TAU

PSNR_CAP_DB = 300.0


def psnr(xhat, x, peak: float = 1.0, cap: float = PSNR_CAP_DB) -> float:
    """10 log10(d * peak^2 / ||xhat - x||^2), capped for exact matches."""
    a = np.asarray(xhat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = float(np.sum((a - b) ** 2))
    if err == 0.0:
        return cap
    return min(10.0 * np.log10(a.size * peak * peak / err), cap)


def quality_db(g_out, x_tilde, cap: float = PSNR_CAP_DB) -> float:
    """Normalized-frame quality Q = -10 log10 of the squared error norm."""
    a = np.asarray(g_out, dtype=np.float64)
    b = np.asarray(x_tilde, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    err = float(np.sum((a - b) ** 2))
    if err == 0.0:
        return cap
    return min(-10.0 * np.log10(err), cap)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_kernel() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    g = np.exp(-((np.arange(_SSIM_WINDOW) - half) ** 2) / (2.0 * _SSIM_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(xhat, x, peak: float = 1.0) -> float:
    """Mean structural similarity, Gaussian 11x11 window, grayscale only.

    Windows are evaluated where they fit entirely inside the image, so
    inputs must be at least 11 pixels on each side.
    """
    a = np.asarray(xhat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError("ssim expects two equal-shape 2-D images")
    if min(a.shape) < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")
    k = _ssim_kernel()
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    mu1 = signal.convolve2d(a, k, mode="valid")
    mu2 = signal.convolve2d(b, k, mode="valid")
    s11 = signal.convolve2d(a * a, k, mode="valid") - mu1 * mu1
    s22 = signal.convolve2d(b * b, k, mode="valid") - mu2 * mu2
    s12 = signal.convolve2d(a * b, k, mode="valid") - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# equivariance defect sweep
# ---------------------------------------------------------------------------


def defect_sweep(
    f,
    images,
    trials: int,
    rng,
    a_range=(0.5, 1.5),
    b_range=(-0.25, 0.25),
) -> np.ndarray:
    """Relative defect of f for each random gain/shift probe.

    For each image, f(y) is evaluated once and reused across the trials.
    Returns the (n_images * trials,) per-probe defects; summarize with
    max for worst case or mean for a headline number.
    """
    vals = []
    for img in images:
        arr = np.asarray(img, dtype=np.float64)
        fy = np.asarray(f(arr), dtype=np.float64)
        for _ in range(trials):
            a = rng.uniform(*a_range)
            b = rng.uniform(*b_range)
            lhs = np.asarray(f(a * arr + b), dtype=np.float64)
            rhs = a * fy + b
            num = float(np.linalg.norm((lhs - rhs).ravel()))
            den = float(np.linalg.norm(rhs.ravel())) + DEFECT_TAU
            vals.append(num / den)
    if not vals:
        raise ValueError("no probes evaluated")
    return np.asarray(vals)


# ---------------------------------------------------------------------------
# difficulty sampling and coverage
# ---------------------------------------------------------------------------


def _random_patches(corpus, n: int, size: int, rng) -> np.ndarray:
    """Gather n random size x size patches from the corpus, flattened."""
    images = [np.asarray(im, dtype=np.float64) for im in corpus]
    for im in images:
        if im.ndim != 2 or min(im.shape) < size:
            raise ValueError("corpus images must be 2-D and at least one patch large")
    img_idx = rng.integers(0, len(images), n)
    out = np.empty((n, size * size), dtype=np.float64)
    for i, im in enumerate(images):
        take = np.flatnonzero(img_idx == i)
        if take.size == 0:
            continue
        windows = np.lib.stride_tricks.sliding_window_view(im, (size, size))
        rows = rng.integers(0, windows.shape[0], take.size)
        cols = rng.integers(0, windows.shape[1], take.size)
        out[take] = windows[rows, cols].reshape(take.size, -1)
    return out


def sample_difficulties(
    corpus, sigma: float, n: int, patch: int, rng, noise_kind: str = "gaussian"
) -> np.ndarray:
    """Draw n patch difficulties Delta at one noise level."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x = _random_patches(corpus, n, patch, rng)
    noise = (sigma / 255.0) * noise_unit(noise_kind, x.shape, rng)
    y = x + noise
    mu = y.mean(axis=1, keepdims=True)
    std = np.sqrt(((y - mu) ** 2).mean(axis=1))
    # constant observation: both normalized vectors are zero (guardrail)
    return np.where(std > 0.0, np.linalg.norm(noise, axis=1) / np.where(std > 0.0, std, 1.0), 0.0)


@dataclass
class DifficultySummary:
    sigma: float
    samples: np.ndarray
    q025: float
    q975: float
    mean_sq: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray


def difficulty_stats(
    corpus, sigmas, n: int, patch: int, rng, bins: int = 60
) -> dict[float, DifficultySummary]:
    """Per-noise-level difficulty samples with quantiles and histograms."""
    out: dict[float, DifficultySummary] = {}
    for sigma in sigmas:
        d = sample_difficulties(corpus, sigma, n, patch, rng)
        counts, edges = np.histogram(d, bins=bins)
        out[float(sigma)] = DifficultySummary(
            sigma=float(sigma),
            samples=d,
            q025=float(np.quantile(d, 0.025)),
            q975=float(np.quantile(d, 0.975)),
            mean_sq=float(np.mean(d * d)),
            hist_counts=counts,
            hist_edges=edges,
        )
    return out


@dataclass
class CoverageTable:
    train_sigmas: list[float]
    test_sigmas: list[float]
    matrix: np.ndarray  # percent of test difficulties inside the train interval
    intervals: dict[float, tuple[float, float]]


def coverage_table(samples_by_sigma: dict, train_sigmas=None, test_sigmas=None) -> CoverageTable:
    """Cross-noise coverage of central 95% difficulty intervals.

    Entry (i, j): the percentage of difficulties seen at test noise j that
    fall inside the central interval of training noise i.  The diagonal is
    95 by construction; off-diagonal asymmetry shows which direction of
    noise mismatch leaves the model on familiar ground.
    """
    keys = sorted(samples_by_sigma)
    train = [float(s) for s in (train_sigmas if train_sigmas is not None else keys)]
    test = [float(s) for s in (test_sigmas if test_sigmas is not None else keys)]
    intervals = {}
    for s in train:
        d = np.asarray(samples_by_sigma[s])
        intervals[s] = (float(np.quantile(d, 0.025)), float(np.quantile(d, 0.975)))
    matrix = np.empty((len(train), len(test)), dtype=np.float64)
    for i, s_train in enumerate(train):
        lo, hi = intervals[s_train]
        for j, s_test in enumerate(test):
            d = np.asarray(samples_by_sigma[s_test])
            matrix[i, j] = 100.0 * float(np.mean((d >= lo) & (d <= hi)))
    return CoverageTable(train, test, matrix, intervals)


# ---------------------------------------------------------------------------
# quality versus difficulty
# ---------------------------------------------------------------------------


@dataclass
class BinnedCurve:
    sigmas: list[float]
    edges: np.ndarray  # (bins + 1,)
    counts: np.ndarray  # (n_sigma, bins)
    q_mean: np.ndarray  # (n_sigma, bins), NaN where empty
    q_std: np.ndarray
    display_range: np.ndarray  # (n_sigma, 2) central-95% difficulty span


def quality_vs_difficulty(
    model, corpus, sigmas, n: int, patch: int, rng, bins: int = 20
) -> BinnedCurve:
    """Normalized-frame quality binned by difficulty, one curve per sigma.

    The model output is anchored to each observation's statistics before
    scoring, so wrapped and bare models are compared in the same frame.
    For an equivariant model the per-sigma curves collapse onto one
    function of the difficulty.
    """
    deltas = []
    qualities = []
    for sigma in sigmas:
        x = _random_patches(corpus, n, patch, rng)
        noise = (sigma / 255.0) * noise_unit("gaussian", x.shape, rng)
        y = x + noise
        d_sig = np.empty(n)
        q_sig = np.empty(n)
        side = patch
        for i in range(n):
            y_i = y[i].reshape(side, side)
            s = pooled_stats(y_i)
            xhat = np.asarray(model(y_i), dtype=np.float64)
            if s.std > 0.0:
                anchored = (xhat - s.mu) / s.std
                x_t = matched_target(x[i].reshape(side, side), s)
                d_sig[i] = float(np.linalg.norm(noise[i])) / s.std
            else:
                # constant observation: both normalized vectors are zero
                # (guardrail), difficulty zero
                anchored = np.zeros_like(xhat)
                x_t = np.zeros((side, side))
                d_sig[i] = 0.0
            q_sig[i] = quality_db(anchored, x_t)
        deltas.append(d_sig)
        qualities.append(q_sig)

    pooled = np.concatenate(deltas)
    lo, hi = np.quantile(pooled, [0.005, 0.995])
    edges = np.linspace(lo, hi, bins + 1)
    n_sigma = len(sigmas)
    counts = np.zeros((n_sigma, bins), dtype=np.int64)
    q_mean = np.full((n_sigma, bins), np.nan)
    q_std = np.full((n_sigma, bins), np.nan)
    display = np.empty((n_sigma, 2))
    for k in range(n_sigma):
        d_sig, q_sig = deltas[k], qualities[k]
        display[k] = np.quantile(d_sig, [0.025, 0.975])
        which = np.digitize(d_sig, edges) - 1
        for b in range(bins):
            sel = q_sig[which == b]
            counts[k, b] = sel.size
            if sel.size:
                q_mean[k, b] = float(sel.mean())
                q_std[k, b] = float(sel.std())
    return BinnedCurve(
        sigmas=[float(s) for s in sigmas],
        edges=edges,
        counts=counts,
        q_mean=q_mean,
        q_std=q_std,
        display_range=display,
    )


# ---------------------------------------------------------------------------
# Jacobian probes
# ---------------------------------------------------------------------------


def fd_jacobian(f, y, step: float = 1e-4) -> np.ndarray:
    """Full Jacobian of an instance map by central finite differences."""
    arr = np.asarray(y, dtype=np.float64)
    d = arr.size
    jac = np.empty((d, d), dtype=np.float64)
    flat = arr.ravel()
    for j in range(d):
        plus = flat.copy()
        minus = flat.copy()
        plus[j] += step
        minus[j] -= step
        fp = np.asarray(f(plus.reshape(arr.shape)), dtype=np.float64).ravel()
        fm = np.asarray(f(minus.reshape(arr.shape)), dtype=np.float64).ravel()
        jac[:, j] = (fp - fm) / (2.0 * step)
    return jac


@dataclass
class JacobianReport:
    jacobian: np.ndarray
    row_sums: np.ndarray
    rho: float
    filters: dict[int, np.ndarray] = field(default_factory=dict)


def jacobian_filters(f, y, rows=None, step: float = 1e-4) -> JacobianReport:
    """Jacobian diagnostics at one instance.

    rho = ||f(y) - J y|| / ||f(y)|| vanishes for scale-equivariant maps
    (they act as input-adaptive linear filters), and shift equivariance
    forces every Jacobian row to sum to one.  Selected rows are reshaped
    to the instance grid: the equivalent filter at that pixel.
    """
    arr = np.asarray(y, dtype=np.float64)
    jac = fd_jacobian(f, arr, step=step)
    fy = np.asarray(f(arr), dtype=np.float64).ravel()
    rho = float(np.linalg.norm(fy - jac @ arr.ravel()) / np.linalg.norm(fy))
    report = JacobianReport(jacobian=jac, row_sums=jac.sum(axis=1), rho=rho)
    for r in rows or ():
        report.filters[int(r)] = jac[int(r)].reshape(arr.shape)
    return report


# ---------------------------------------------------------------------------
# noise-mismatch sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    sigma_tests: list[float]
    input_psnr: np.ndarray  # (n_sigma, n_images)
    output_psnr: np.ndarray
    output_ssim: np.ndarray

    def row_means(self):
        return (
            self.input_psnr.mean(axis=1),
            self.output_psnr.mean(axis=1),
            self.output_ssim.mean(axis=1),
        )


def mismatch_sweep(
    model, images, sigma_tests, rng, noise_kind: str = "gaussian", threads: int = 1
) -> SweepResult:
    """Denoise every image at every test noise level.

    Each (sigma, image) cell gets its own child generator, spawned in a
    fixed order, so results are independent of scheduling and thread
    count.
    """
    imgs = [np.asarray(im, dtype=np.float64) for im in images]
    sigmas = [float(s) for s in sigma_tests]
    n_s, n_i = len(sigmas), len(imgs)
    children = rng.spawn(n_s * n_i)
    input_psnr = np.empty((n_s, n_i))
    output_psnr = np.empty((n_s, n_i))
    output_ssim = np.empty((n_s, n_i))

    def cell(task):
        si, ii = task
        child = children[si * n_i + ii]
        x = imgs[ii]
        y = x + (sigmas[si] / 255.0) * noise_unit(noise_kind, x.shape, child)
        xhat = np.asarray(model(y), dtype=np.float64)
        input_psnr[si, ii] = psnr(y, x)
        output_psnr[si, ii] = psnr(xhat, x)
        output_ssim[si, ii] = ssim(xhat, x)

    tasks = [(si, ii) for si in range(n_s) for ii in range(n_i)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(cell, tasks))
    else:
        for task in tasks:
            cell(task)
    return SweepResult(sigmas, input_psnr, output_psnr, output_ssim)
