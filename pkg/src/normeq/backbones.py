"""Denoiser backbones with declared equivariance classes.

Every backbone is a shape-preserving map on instances ((H, W) arrays or
(C, H, W) stacks, float64).  The descriptor ``equivariance`` states which
symmetry the *bare* map honors:

    "NE"       f(a*y + b) = a*f(y) + b  for a > 0, any b
    "SE-only"  f(a*y) = a*f(y) only (shifts are distorted)
    "none"     neither identity holds
    "unknown"  unclassified (e.g. freshly trained models)

The labels are load-bearing: the test suite probes them, so a backbone
must not claim a symmetry it does not have bit-for-bit (up to float
rounding).

Also here: layer primitives (affine-constrained convolution, channel sort
pooling, affine residual mixing) that preserve equivariance layer by
layer, a small fixed stack built from them, and the binary checkpoint
format for the trainable patch MLP.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import fft as spfft
from scipy import ndimage

from .instance import pooled_stats

# Normalized 3x3 binomial kernel; taps sum to exactly 1 in float64.
GAUSS3 = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0

KERNEL_SUM_TOL = 1e-12


class Backbone:
    """Base denoiser: subclasses implement denoise(y) -> same-shape array."""

    name = "backbone"
    equivariance = "unknown"

    def denoise(self, y) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, y) -> np.ndarray:
        return self.denoise(y)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} [{self.equivariance}]>"


def _per_channel(y, fn) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 2:
        return fn(arr)
    if arr.ndim == 3:
        return np.stack([fn(ch) for ch in arr])
    raise ValueError("expected an (H, W) or (C, H, W) instance")


def _to_blocks(img: np.ndarray, size: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Cut a 2-D image into non-overlapping size x size tiles.

    The bottom/right remainder is mirror-extended so every tile is full;
    callers crop back with _from_blocks.
    """
    h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {img.shape} smaller than block size {size}")
    pad_h = (-h) % size
    pad_w = (-w) % size
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w)), mode="reflect")
    hp, wp = img.shape
    blocks = (
        img.reshape(hp // size, size, wp // size, size)
        .swapaxes(1, 2)
        .reshape(-1, size, size)
    )
    return blocks, (hp, wp)


def _from_blocks(blocks, padded_shape, size, out_shape) -> np.ndarray:
    hp, wp = padded_shape
    img = (
        blocks.reshape(hp // size, wp // size, size, size)
        .swapaxes(1, 2)
        .reshape(hp, wp)
    )
    return img[: out_shape[0], : out_shape[1]]


class Identity(Backbone):
    name = "identity"
    equivariance = "NE"

    def denoise(self, y):
        return np.array(y, dtype=np.float64, copy=True)


class UnitSumConv(Backbone):
    """Linear smoothing with a kernel whose taps sum to one.

    Unit sum plus padding that reuses image values makes the map exactly
    normalization equivariant.  Applied per channel with mirror padding.
    """

    equivariance = "NE"

    def __init__(self, kernel=None, name="unit_sum_conv"):
        k = np.asarray(GAUSS3 if kernel is None else kernel, dtype=np.float64)
        if k.ndim != 2:
            raise ValueError("kernel must be 2-D")
        if abs(float(k.sum()) - 1.0) > KERNEL_SUM_TOL:
            raise ValueError("kernel not affine-constrained: taps must sum to 1")
        self.kernel = k
        self.name = name

    def denoise(self, y):
        return _per_channel(
            y, lambda ch: ndimage.correlate(ch, self.kernel, mode="mirror")
        )


class BiasFreeConv(Backbone):
    """Linear filtering without the unit-sum constraint.

    Bias-free linearity gives scale equivariance for free; unless the taps
    happen to sum to one, constant shifts are scaled by the tap sum, so the
    map is SE-only.
    """

    def __init__(self, kernel, name="bias_free_conv"):
        k = np.asarray(kernel, dtype=np.float64)
        if k.ndim != 2:
            raise ValueError("kernel must be 2-D")
        self.kernel = k
        self.name = name
        self.equivariance = (
            "NE" if abs(float(k.sum()) - 1.0) <= KERNEL_SUM_TOL else "SE-only"
        )

    def denoise(self, y):
        return _per_channel(
            y, lambda ch: ndimage.correlate(ch, self.kernel, mode="mirror")
        )


def _soft_threshold(c: np.ndarray, t: float) -> np.ndarray:
    return np.sign(c) * np.maximum(np.abs(c) - t, 0.0)


class DctThreshold(Backbone):
    """Blockwise DCT soft-thresholding with a fixed threshold.

    Orthonormal DCT on non-overlapping tiles; every coefficient except the
    tile mean is shrunk by the threshold.  The fixed threshold deliberately
    breaks scale equivariance (the classical failure mode the wrapper
    repairs), while the untouched mean coefficient keeps shifts intact.
    """

    equivariance = "none"

    def __init__(self, block_size=8, threshold=0.05):
        if block_size < 2:
            raise ValueError("block size must be >= 2")
        if threshold < 0:
            raise ValueError("threshold must be >= 0")
        self.block_size = int(block_size)
        self.threshold = float(threshold)
        self.name = f"dct{self.block_size}_t{self.threshold:g}"

    def denoise(self, y):
        size = self.block_size

        def one(ch):
            blocks, padded = _to_blocks(ch, size)
            coef = spfft.dctn(blocks, type=2, norm="ortho", axes=(1, 2))
            mean_coef = coef[:, 0, 0].copy()
            coef = _soft_threshold(coef, self.threshold)
            coef[:, 0, 0] = mean_coef
            out = spfft.idctn(coef, type=2, norm="ortho", axes=(1, 2))
            return _from_blocks(out, padded, size, ch.shape)

        return _per_channel(y, one)


def _nlm_channel(ch, search_radius, patch_radius, h):
    height, width = ch.shape
    pr = patch_radius
    margin = search_radius + pr
    padded = np.pad(ch, margin, mode="reflect")
    center = padded[margin - pr : margin + height + pr, margin - pr : margin + width + pr]
    acc_w = np.zeros_like(ch)
    acc_v = np.zeros_like(ch)
    box = 2 * pr + 1
    inv_h2 = 1.0 / (h * h)
    for di in range(-search_radius, search_radius + 1):
        for dj in range(-search_radius, search_radius + 1):
            shifted = padded[
                margin + di - pr : margin + di + height + pr,
                margin + dj - pr : margin + dj + width + pr,
            ]
            d2 = ndimage.uniform_filter((center - shifted) ** 2, size=box)
            # crop to patch centers; windows there never touch the border
            d2 = d2[pr : pr + height, pr : pr + width]
            w = np.exp(-d2 * inv_h2)
            vals = padded[
                margin + di : margin + di + height,
                margin + dj : margin + dj + width,
            ]
            acc_w += w
            acc_v += w * vals
    return acc_v / acc_w


class NonLocalMeans(Backbone):
    """Patchwise weighted averaging with a Gaussian similarity kernel.

    bandwidth=None selects the relative mode h = kappa * std(y) (pooled
    over the whole instance): similarities are measured in contrast units
    and the map becomes exactly normalization equivariant.  A fixed
    absolute bandwidth keeps the classical behavior: differences cancel
    shifts but the weights do not survive rescaling.
    """

    def __init__(self, search_radius=5, patch_radius=1, bandwidth=None, kappa=0.4):
        if search_radius < 1 or patch_radius < 0:
            raise ValueError("bad window radii")
        if bandwidth is not None and not bandwidth > 0:
            raise ValueError("absolute bandwidth must be positive")
        if bandwidth is None and not kappa > 0:
            raise ValueError("kappa must be positive")
        self.search_radius = int(search_radius)
        self.patch_radius = int(patch_radius)
        self.bandwidth = None if bandwidth is None else float(bandwidth)
        self.kappa = float(kappa)
        mode = "rel" if bandwidth is None else "abs"
        self.name = f"nlm_{mode}"
        self.equivariance = "NE" if bandwidth is None else "none"

    def denoise(self, y):
        arr = np.asarray(y, dtype=np.float64)
        if self.bandwidth is None:
            std = pooled_stats(arr).std
            if std == 0.0:
                return arr.copy()
            h = self.kappa * std
        else:
            h = self.bandwidth
        return _per_channel(
            arr,
            lambda ch: _nlm_channel(ch, self.search_radius, self.patch_radius, h),
        )


# ---------------------------------------------------------------------------
# equivariant layer primitives
# ---------------------------------------------------------------------------


def affine_constrain(weights) -> np.ndarray:
    """Project convolution weights onto the unit-sum constraint set.

    For each output channel with n coefficients summing to S, subtract
    (S - 1)/n from every coefficient: the closest kernel (in L2) whose
    taps sum to exactly one.  Accepts (C_out, C_in, k, k) stacks, which
    are projected per output channel, or a bare kernel projected whole.
    """
    w = np.array(weights, dtype=np.float64, copy=True)
    if w.size == 0:
        raise ValueError("empty weights")
    if w.ndim == 4:
        for o in range(w.shape[0]):
            n = w[o].size
            w[o] -= (float(w[o].sum()) - 1.0) / n
    else:
        w -= (float(w.sum()) - 1.0) / w.size
    return w


def affine_conv(x, weights) -> np.ndarray:
    """Multi-channel correlation with mirror padding, (C_in,H,W) -> (C_out,H,W).

    Equivariance holds when each output channel's taps sum to one (use
    affine_constrain); no bias term is ever added.
    """
    arr = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if arr.ndim != 3 or w.ndim != 4 or w.shape[1] != arr.shape[0]:
        raise ValueError(
            f"shape mismatch: input {arr.shape} vs weights {w.shape}"
        )
    out = np.empty((w.shape[0],) + arr.shape[1:], dtype=np.float64)
    for o in range(w.shape[0]):
        acc = np.zeros(arr.shape[1:], dtype=np.float64)
        for i in range(arr.shape[0]):
            acc += ndimage.correlate(arr[i], w[o, i], mode="mirror")
        out[o] = acc
    return out


def sort_pool(u, v) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise (min, max) of two responses.

    An order statistic commutes with increasing affine maps, so unlike
    ReLU it costs no equivariance while still being nonlinear.
    """
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.minimum(a, b), np.maximum(a, b)


def sort_pool_channels(x) -> np.ndarray:
    """Sort adjacent channel pairs (0,1), (2,3), ... in place of ReLU.

    An odd trailing channel passes through; rotate_channels between stages
    changes the pairing so information still mixes across all channels.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("expected (C, H, W)")
    out = arr.copy()
    for i in range(0, arr.shape[0] - 1, 2):
        out[i], out[i + 1] = sort_pool(arr[i], arr[i + 1])
    return out


def rotate_channels(x, shift: int = 1) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("expected (C, H, W)")
    return np.roll(arr, shift, axis=0)


def affine_residual(skip, out, t) -> np.ndarray:
    """Affine combination (1 - t)*skip + t*out of two branches.

    Affine (rather than additive) skips keep the unit-sum structure: a
    sum of two equivariant branches would double constants.
    """
    a = np.asarray(skip, dtype=np.float64)
    b = np.asarray(out, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    t = float(t)
    return (1.0 - t) * a + t * b


class NeConvStack(Backbone):
    """Small fixed network built only from equivariant primitives.

    conv -> sort pool -> rotate, twice, then a projection conv and an
    affine skip from the input.  Every layer preserves the affine action
    exactly, so the whole stack is NE without any wrapping.  Weights are
    random but constrained; the stack is a structural exemplar, not a
    trained model.
    """

    equivariance = "NE"
    name = "ne_conv_stack"

    def __init__(self, rng, width=4, kernel_size=3, mix=0.7):
        k = int(kernel_size)
        self.k1 = affine_constrain(0.3 * rng.standard_normal((width, 1, k, k)))
        self.k2 = affine_constrain(0.3 * rng.standard_normal((width, width, k, k)))
        self.k3 = affine_constrain(0.3 * rng.standard_normal((1, width, k, k)))
        self.mix = float(mix)

    def denoise(self, y):
        def one(ch):
            x = affine_conv(ch[None], self.k1)
            x = rotate_channels(sort_pool_channels(x))
            x = affine_conv(x, self.k2)
            x = rotate_channels(sort_pool_channels(x))
            x = affine_conv(x, self.k3)[0]
            return affine_residual(ch, x, self.mix)

        return _per_channel(y, one)


# ---------------------------------------------------------------------------
# trainable patch MLP
# ---------------------------------------------------------------------------

CONVENTIONS = ("clean", "residual")


@dataclass
class PatchMlpParams:
    """One-hidden-layer MLP on flattened patches.

    convention "clean": the network output is the denoised patch.
    convention "residual": the output is the noise estimate and the
    denoised patch is input - output.
    """

    patch_size: int
    hidden: int
    W1: np.ndarray  # (hidden, patch_size**2)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (patch_size**2, hidden)
    b2: np.ndarray  # (patch_size**2,)
    convention: str = "residual"

    def __post_init__(self):
        d = self.patch_size * self.patch_size
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention: {self.convention!r}")
        shapes = {
            "W1": (self.hidden, d),
            "b1": (self.hidden,),
            "W2": (d, self.hidden),
            "b2": (d,),
        }
        for attr, want in shapes.items():
            a = np.asarray(getattr(self, attr), dtype=np.float64)
            if a.shape != want:
                raise ValueError(f"{attr} has shape {a.shape}, expected {want}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{attr} has non-finite entries")
            setattr(self, attr, a)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> "PatchMlpParams":
        return PatchMlpParams(
            patch_size=self.patch_size,
            hidden=self.hidden,
            W1=arrays["W1"],
            b1=arrays["b1"],
            W2=arrays["W2"],
            b2=arrays["b2"],
            convention=self.convention,
        )


def patch_mlp_init(patch_size, hidden, convention="residual", rng=None) -> PatchMlpParams:
    """Linear-capable init: He-scaled +/- row pairs and a zero readout.

    Paired rows make relu(r.z) - relu(-r.z) = r.z exactly, so the net can
    realize any linear filter without fighting its own kinks; the zero W2
    starts the core at 0 (the identity map under the residual convention)
    and the first updates are plain least squares on the readout.  An odd
    last unit, if any, stays a lone He row.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    d = patch_size * patch_size
    w1 = rng.standard_normal((hidden, d)) * np.sqrt(2.0 / d)
    w1[1 : 2 * (hidden // 2) : 2] = -w1[0 : 2 * (hidden // 2) : 2]
    return PatchMlpParams(
        patch_size=patch_size,
        hidden=hidden,
        W1=w1,
        b1=np.zeros(hidden),
        W2=np.zeros((d, hidden)),
        b2=np.zeros(d),
        convention=convention,
    )


def mlp_flat_forward(params: PatchMlpParams, flat, want_cache=False):
    """Forward pass on flattened patches, shape (n, patch_size**2).

    Returns the denoised patches (per the params' convention); with
    want_cache=True also returns intermediates for backprop.
    """
    z = np.atleast_2d(np.asarray(flat, dtype=np.float64))
    pre = z @ params.W1.T + params.b1
    hid = np.maximum(pre, 0.0)
    core = hid @ params.W2.T + params.b2
    out = z - core if params.convention == "residual" else core
    if want_cache:
        return out, (z, pre, hid)
    return out


def patch_mlp_forward(params: PatchMlpParams, y) -> np.ndarray:
    """Apply the patch MLP tile by tile over a whole instance.

    Non-overlapping tiles with stride = patch size; the bottom/right
    remainder is mirror-extended and cropped after reassembly, so any
    image at least one tile large is supported.
    """
    size = params.patch_size

    def one(ch):
        blocks, padded = _to_blocks(ch, size)
        flat = blocks.reshape(len(blocks), -1)
        out = mlp_flat_forward(params, flat)
        return _from_blocks(out.reshape(blocks.shape), padded, size, ch.shape)

    return _per_channel(y, one)


class PatchMlp(Backbone):
    equivariance = "none"

    def __init__(self, params: PatchMlpParams, name=None):
        self.params = params
        self.name = name or f"patch_mlp_p{params.patch_size}h{params.hidden}"

    def denoise(self, y):
        return patch_mlp_forward(self.params, y)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"NQPM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, patch, hidden, convention


def save_patch_mlp(path, params: PatchMlpParams) -> None:
    """Write a flat little-endian checkpoint: header then W1, b1, W2, b2."""
    conv_code = CONVENTIONS.index(params.convention)
    blob = _HEADER.pack(
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        params.patch_size,
        params.hidden,
        conv_code,
    )
    order = (params.W1, params.b1, params.W2, params.b2)
    blob += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in order)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_patch_mlp(path) -> PatchMlpParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValueError("truncated checkpoint header")
    magic, version, patch, hidden, conv_code = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if conv_code >= len(CONVENTIONS):
        raise ValueError(f"unknown convention code {conv_code}")
    d = patch * patch
    counts = (hidden * d, hidden, d * hidden, d)
    if len(blob) != _HEADER.size + 8 * sum(counts):
        raise ValueError("truncated checkpoint payload")
    arrays = []
    offset = _HEADER.size
    for count in counts:
        arrays.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset))
        offset += 8 * count
    w1, b1, w2, b2 = arrays
    return PatchMlpParams(
        patch_size=patch,
        hidden=hidden,
        W1=w1.reshape(hidden, d).copy(),
        b1=b1.copy(),
        W2=w2.reshape(d, hidden).copy(),
        b2=b2.copy(),
        convention=CONVENTIONS[conv_code],
    )


def random_patch_mlp(patch_size, hidden, convention, rng) -> PatchMlpParams:
    """Generic random parameters, deliberately not equivariant.

    Unlike patch_mlp_init this fills every array, so the untrained map is
    a nontrivial nonlinear function rather than the identity; the library
    needs that to exercise the "none" symmetry class.
    """
    d = patch_size * patch_size
    return PatchMlpParams(
        patch_size=patch_size,
        hidden=hidden,
        W1=rng.standard_normal((hidden, d)) * np.sqrt(2.0 / d),
        b1=0.1 * rng.standard_normal(hidden),
        W2=rng.standard_normal((d, hidden)) * np.sqrt(2.0 / hidden),
        b2=0.1 * rng.standard_normal(d),
        convention=convention,
    )


def default_library(rng) -> list[Backbone]:
    """One backbone per behavior class, used by the symmetry test sweeps."""
    return [
        Identity(),
        UnitSumConv(),
        BiasFreeConv(0.9 * GAUSS3),
        DctThreshold(block_size=8, threshold=0.05),
        NonLocalMeans(search_radius=3, patch_radius=1),
        NonLocalMeans(search_radius=3, patch_radius=1, bandwidth=0.1),
        NeConvStack(rng),
        PatchMlp(random_patch_mlp(8, 32, "clean", rng)),
        PatchMlp(random_patch_mlp(8, 32, "residual", rng)),
    ]
