"""Patch-based training of the MLP backbone, bare or wrapped.

Noise conventions: sigma is quoted in 8-bit units and scaled by 1/255
against images in [0, 1].  Every noise family is normalized to unit
standard deviation before scaling so that sigma means the same thing for
all of them; uniform and laplace are zero mean by construction, rayleigh
keeps its positive mean (a deliberately biased corruption).

When training a wrapped model the loss lives in the raw frame while the
backbone sees the normalized input.  The statistics of the observation are
constants with respect to the parameters, so the chain rule only scales
the upstream gradient by +/- std(y) on the backbone output; everything
else is ordinary backprop.  Gradients are exact and checked against
central finite differences in the test suite.

All randomness flows through one generator seeded from the config, and
batch reductions are single matmuls with a fixed order: a given config
reproduces its loss curve bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .backbones import PatchMlp, PatchMlpParams, mlp_flat_forward
from .wrapper import WrapMode, WrappedDenoiser

NOISE_KINDS = ("gaussian", "uniform", "laplace", "rayleigh")
LOSS_KINDS = ("mse", "l1")

_RAYLEIGH_STD = np.sqrt((4.0 - np.pi) / 2.0)
# Mean of the unit-std rayleigh draw (it is not recentered).
RAYLEIGH_MEAN = float(np.sqrt(np.pi / 2.0) / _RAYLEIGH_STD)


@dataclass(frozen=True)
class NoiseModel:
    kind: str = "gaussian"
    sigma: float = 25.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind: {self.kind!r}")
        if not (self.sigma >= 0.0):
            raise ValueError("sigma must be >= 0")


def noise_unit(kind: str, shape, rng) -> np.ndarray:
    """Unit-standard-deviation noise draws of the given family."""
    if kind == "gaussian":
        return rng.standard_normal(shape)
    if kind == "uniform":
        r = np.sqrt(3.0)
        return rng.uniform(-r, r, shape)
    if kind == "laplace":
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), shape)
    if kind == "rayleigh":
        return rng.rayleigh(1.0, shape) / _RAYLEIGH_STD
    raise ValueError(f"unknown noise kind: {kind!r}")


def corrupt(x, model: NoiseModel, rng) -> np.ndarray:
    """x + (sigma/255) * unit noise; the input is never clamped."""
    arr = np.asarray(x, dtype=np.float64)
    return arr + (model.sigma / 255.0) * noise_unit(model.kind, arr.shape, rng)


def affine_orbit_augment(x, y, rng) -> tuple[np.ndarray, np.ndarray]:
    """Apply one random gain/shift to a clean/noisy pair.

    alpha, mu ~ U(0, 1), identical on both members: a soft push toward
    equivariance through data instead of architecture.
    """
    alpha = rng.uniform(0.0, 1.0)
    mu = rng.uniform(0.0, 1.0)
    return (
        alpha * np.asarray(x, dtype=np.float64) + mu,
        alpha * np.asarray(y, dtype=np.float64) + mu,
    )


def _loss_diff(pred, target) -> np.ndarray:
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(target, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def loss_value(pred, target, kind: str = "mse") -> float:
    e = _loss_diff(pred, target)
    if kind == "mse":
        return float(np.sum(e * e))
    if kind == "l1":
        return float(np.sum(np.abs(e)))
    raise ValueError(f"unknown loss kind: {kind!r}")


def loss_grad(pred, target, kind: str = "mse") -> np.ndarray:
    e = _loss_diff(pred, target)
    if kind == "mse":
        return 2.0 * e
    if kind == "l1":
        return np.sign(e)
    raise ValueError(f"unknown loss kind: {kind!r}")


class TrainingDiverged(RuntimeError):
    def __init__(self, message="divergence", step=None):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(a) for k, a in params.items()},
        v={k: np.zeros_like(a) for k, a in params.items()},
        t=0,
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    t = state.t + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for key, p in params.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged("divergence: non-finite gradient")
        m = beta1 * state.m[key] + (1.0 - beta1) * g
        v = beta2 * state.v[key] + (1.0 - beta2) * (g * g)
        new_params[key] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[key] = m
        new_v[key] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


# ---------------------------------------------------------------------------
# backprop
# ---------------------------------------------------------------------------


def _mlp_backward(params: PatchMlpParams, cache, g_core):
    """Gradients of the MLP core given upstream gradient on its output."""
    z, pre, hid = cache
    d_w2 = g_core.T @ hid
    d_b2 = g_core.sum(axis=0)
    d_pre = (g_core @ params.W2) * (pre > 0.0)
    d_w1 = d_pre.T @ z
    d_b1 = d_pre.sum(axis=0)
    return {"W1": d_w1, "b1": d_b1, "W2": d_w2, "b2": d_b2}


def _tile_rows(batch: np.ndarray, tile: int) -> np.ndarray:
    """(B, S, S) -> (B*T, tile*tile) rows in row-major tile order."""
    b, s, _ = batch.shape
    k = s // tile
    blocks = batch.reshape(b, k, tile, k, tile).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(b * k * k, tile * tile)


def _untile_rows(rows: np.ndarray, b: int, side: int, tile: int) -> np.ndarray:
    k = side // tile
    blocks = rows.reshape(b, k, k, tile, tile).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(b, side, side)


def _batch_loss_grads(
    params: PatchMlpParams,
    y: np.ndarray,
    target: np.ndarray,
    mode: WrapMode,
    epsilon: float,
    loss_kind: str,
    reduction: str = "mean",
):
    """Loss and parameter gradients for a batch of (B, S, S) patches.

    The patch is the instance: the wrap-mode statistics pool over all of
    its entries, and they enter the backward pass only as the +/- std
    factor on the backbone output.  The MLP itself runs on the stride-P
    tiles of the (normalized) patch, so S must be a multiple of the tile.
    """
    b, side, _ = y.shape
    tile = params.patch_size
    if side % tile != 0:
        raise ValueError(f"training patch side {side} not a multiple of tile {tile}")
    if mode is WrapMode.NONE:
        z = y
        scale = None
    else:
        mu = y.mean(axis=(1, 2), keepdims=True)
        std = np.sqrt(((y - mu) ** 2).mean(axis=(1, 2), keepdims=True))
        c = std + epsilon
        safe = np.where(c > 0.0, c, 1.0)
        z = np.where(c > 0.0, (y - mu) / safe, 0.0)
        scale = c

    rows, cache = mlp_flat_forward(params, _tile_rows(z, tile), want_cache=True)
    out = _untile_rows(rows, b, side, tile)
    if mode is WrapMode.DIRECT:
        pred = scale * out + mu
    elif mode is WrapMode.RESIDUAL:
        pred = y - scale * out
    else:
        pred = out

    e = pred - target
    denom = float(b) if reduction == "mean" else 1.0
    if loss_kind == "mse":
        loss = float(np.sum(e * e)) / denom
        d_pred = (2.0 / denom) * e
    elif loss_kind == "l1":
        loss = float(np.sum(np.abs(e))) / denom
        d_pred = np.sign(e) / denom
    else:
        raise ValueError(f"unknown loss kind: {loss_kind!r}")

    if mode is WrapMode.DIRECT:
        d_out = scale * d_pred
    elif mode is WrapMode.RESIDUAL:
        d_out = -scale * d_pred
    else:
        d_out = d_pred
    g_rows = _tile_rows(d_out, tile)
    g_core = -g_rows if params.convention == "residual" else g_rows
    return loss, _mlp_backward(params, cache, g_core)


def _as_patch(arr, tile: int) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 1 and a.size == tile * tile:
        a = a.reshape(tile, tile)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] % tile != 0:
        raise ValueError("patch must be square with side a multiple of the tile")
    return a


def patch_mlp_grads(
    params: PatchMlpParams,
    patch_in,
    patch_target,
    loss_kind: str = "mse",
    mode: WrapMode = WrapMode.NONE,
    epsilon: float = 0.0,
):
    """Loss (sum convention) and exact gradients for a single patch."""
    y = _as_patch(patch_in, params.patch_size)
    x = _as_patch(patch_target, params.patch_size)
    if y.shape != x.shape:
        raise ValueError("patch and target shapes differ")
    return _batch_loss_grads(
        params, y[None], x[None], mode, epsilon, loss_kind, reduction="sum"
    )


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    sigma: float = 25.0
    noise_kind: str = "gaussian"
    patch_size: int = 8
    batch: int = 32
    steps: int = 2000
    lr: float = 1e-3
    schedule: str = "constant"  # or "halve": lr * 0.5**(step // halve_every)
    halve_every: int | None = None
    loss: str = "mse"
    objective: str = "supervised"  # or "n2n"
    softne: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind: {self.noise_kind!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind: {self.loss!r}")
        if self.objective not in ("supervised", "n2n"):
            raise ValueError(f"unknown objective: {self.objective!r}")
        if self.schedule not in ("constant", "halve"):
            raise ValueError(f"unknown schedule: {self.schedule!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch < 1 or self.patch_size < 1:
            raise ValueError("batch and patch_size must be >= 1")
        if not (self.lr > 0):
            raise ValueError("lr must be > 0")


def _gather_patches(images, img_idx, tops, lefts, size):
    rows = tops[:, None, None] + np.arange(size)[None, :, None]
    cols = lefts[:, None, None] + np.arange(size)[None, None, :]
    return images[img_idx[:, None, None], rows, cols]


def train(model: WrappedDenoiser, corpus, cfg: TrainConfig):
    """Train the patch-MLP backbone of a wrapped (or bare) denoiser.

    Patches are sampled uniformly from the corpus, corrupted, optionally
    orbit-augmented, and fed through the model exactly as it will be used
    at inference.  Returns (trained model, per-step loss curve).
    """
    if not isinstance(model.backbone, PatchMlp):
        raise ValueError("train() expects a PatchMlp backbone")
    params = model.backbone.params
    size = cfg.patch_size
    if size % params.patch_size != 0:
        raise ValueError(
            f"config patch_size {size} not a multiple of the "
            f"model tile {params.patch_size}"
        )
    images = np.stack([np.asarray(im, dtype=np.float64) for im in corpus])
    if images.ndim != 3:
        raise ValueError("corpus must be a list of equally-sized 2-D images")
    _, height, width = images.shape
    if height < size or width < size:
        raise ValueError("corpus images smaller than the training patch")

    rng = np.random.default_rng(cfg.seed)
    sig = cfg.sigma / 255.0
    halve_every = cfg.halve_every or max(1, cfg.steps // 5)
    arrays = params.as_dict()
    state = adam_init(arrays)
    curve = np.empty(cfg.steps, dtype=np.float64)
    n_images = len(images)

    for step in range(cfg.steps):
        img_idx = rng.integers(0, n_images, cfg.batch)
        tops = rng.integers(0, height - size + 1, cfg.batch)
        lefts = rng.integers(0, width - size + 1, cfg.batch)
        x = _gather_patches(images, img_idx, tops, lefts, size)
        y = x + sig * noise_unit(cfg.noise_kind, x.shape, rng)
        if cfg.objective == "n2n":
            target = x + sig * noise_unit(cfg.noise_kind, x.shape, rng)
        else:
            target = x
        if cfg.softne:
            alpha = rng.uniform(0.0, 1.0, (cfg.batch, 1, 1))
            shift = rng.uniform(0.0, 1.0, (cfg.batch, 1, 1))
            y = alpha * y + shift
            target = alpha * target + shift

        current = params.replace_arrays(arrays)
        loss, grads = _batch_loss_grads(
            current, y, target, model.mode, model.epsilon, cfg.loss
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(f"divergence at step {step}", step=step)
        curve[step] = loss

        lr_t = cfg.lr
        if cfg.schedule == "halve":
            lr_t = cfg.lr * 0.5 ** (step // halve_every)
        arrays, state = adam_step(arrays, grads, state, lr_t)

    trained = PatchMlp(params.replace_arrays(arrays), name=model.backbone.name)
    return replace(model, backbone=trained), curve
