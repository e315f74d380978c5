"""Noise models, losses, exact gradients, and the training loop."""

import numpy as np
import pytest

from normeq import (
    NoiseModel,
    PatchMlp,
    TrainConfig,
    TrainingDiverged,
    WrapMode,
    WrappedDenoiser,
    adam_init,
    adam_step,
    affine_orbit_augment,
    corrupt,
    loss_grad,
    loss_value,
    make_corpus,
    matched_target,
    noise_unit,
    normalize,
    patch_mlp_grads,
    patch_mlp_init,
    pooled_stats,
    random_patch_mlp,
    train,
)
from normeq.backbones import Identity
from normeq.training import NOISE_KINDS, RAYLEIGH_MEAN


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


def test_noise_model_validation():
    with pytest.raises(ValueError, match="unknown noise kind"):
        NoiseModel(kind="poisson")
    with pytest.raises(ValueError, match="sigma"):
        NoiseModel(sigma=-1.0)


@pytest.mark.parametrize("kind", NOISE_KINDS)
def test_noise_unit_is_normalized(kind):
    draws = noise_unit(kind, 1_000_000, np.random.default_rng(0))
    expected_mean = RAYLEIGH_MEAN if kind == "rayleigh" else 0.0
    assert abs(draws.mean() - expected_mean) < 5e-3
    assert abs(draws.std() - 1.0) < 1e-2


def test_corrupt_scales_noise_to_sigma():
    rng = np.random.default_rng(1)
    x = np.full((1000, 1000), 0.5)
    y = corrupt(x, NoiseModel("gaussian", 25.0), rng)
    assert abs((y - x).std() - 25.0 / 255.0) < 0.01 * (25.0 / 255.0)


def test_corrupt_sigma_zero_is_exact():
    x = np.random.default_rng(2).random((16, 16))
    y = corrupt(x, NoiseModel("gaussian", 0.0), np.random.default_rng(3))
    np.testing.assert_array_equal(y, x)


def test_rayleigh_corruption_is_biased_up():
    rng = np.random.default_rng(4)
    x = np.zeros(100_000)
    y = corrupt(x, NoiseModel("rayleigh", 25.0), rng)
    assert y.mean() > 0.5 * (25.0 / 255.0)


class _StubRng:
    """Plays back a fixed sequence of uniform draws."""

    def __init__(self, values):
        self.values = list(values)

    def uniform(self, lo, hi):
        return self.values.pop(0)


def test_affine_orbit_augment_applies_one_gain_and_shift():
    x = np.linspace(0.0, 1.0, 9).reshape(3, 3)
    y = x + 0.1
    x2, y2 = affine_orbit_augment(x, y, _StubRng([0.5, 0.25]))
    np.testing.assert_allclose(x2, 0.5 * x + 0.25, rtol=0, atol=1e-15)
    np.testing.assert_allclose(y2, 0.5 * y + 0.25, rtol=0, atol=1e-15)
    assert x2.min() == 0.25 and x2.max() == 0.75


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def test_loss_hand_values():
    pred = np.array([1.0, 2.0])
    target = np.zeros(2)
    assert loss_value(pred, target, "mse") == 5.0
    assert loss_value(pred, target, "l1") == 3.0
    np.testing.assert_array_equal(loss_grad(pred, target, "mse"), [2.0, 4.0])
    np.testing.assert_array_equal(loss_grad(pred, target, "l1"), [1.0, 1.0])
    np.testing.assert_array_equal(loss_grad(target, target, "l1"), [0.0, 0.0])


def test_loss_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape mismatch"):
        loss_value(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="shape mismatch"):
        loss_grad(np.zeros((2, 2)), np.zeros(4))


def test_loss_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown loss kind"):
        loss_value(np.zeros(2), np.zeros(2), "huber")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_is_a_fixed_point():
    params = {"w": np.array([1.0, -2.0])}
    grads = {"w": np.zeros(2)}
    new, state = adam_step(params, grads, adam_init(params), lr=0.1)
    np.testing.assert_array_equal(new["w"], params["w"])
    assert state.t == 1


def test_adam_first_step_is_signed_lr():
    # bias correction makes the first update lr * g / (|g| + eps)
    params = {"w": np.array([1.0])}
    grads = {"w": np.array([3.0])}
    new, _ = adam_step(params, grads, adam_init(params), lr=0.1)
    expected = 1.0 - 0.1 * 3.0 / (3.0 + 1e-8)
    np.testing.assert_allclose(new["w"], [expected], rtol=0, atol=1e-10)


def test_adam_rejects_non_finite_gradient():
    params = {"w": np.array([1.0])}
    grads = {"w": np.array([np.inf])}
    with pytest.raises(TrainingDiverged, match="non-finite gradient"):
        adam_step(params, grads, adam_init(params), lr=0.1)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def _fd_grads(params, y, x, loss_kind, mode, epsilon, step=1e-5):
    """Central finite differences through the public gradient entry point."""
    arrays = {k: a.copy() for k, a in params.as_dict().items()}
    out = {}
    for key in arrays:
        flat = arrays[key].ravel()
        g = np.empty_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi, _ = patch_mlp_grads(
                params.replace_arrays(arrays), y, x, loss_kind, mode, epsilon
            )
            flat[i] = saved - step
            lo, _ = patch_mlp_grads(
                params.replace_arrays(arrays), y, x, loss_kind, mode, epsilon
            )
            flat[i] = saved
            g[i] = (hi - lo) / (2.0 * step)
        out[key] = g.reshape(arrays[key].shape)
    return out


# One probe per row: seed, convention, wrap mode, epsilon, loss, patch side.
_GRAD_PROBES = [
    (10, "clean", WrapMode.NONE, 0.0, "mse", 4),
    (11, "clean", WrapMode.DIRECT, 0.0, "mse", 4),
    (12, "clean", WrapMode.RESIDUAL, 0.0, "mse", 4),
    (13, "residual", WrapMode.NONE, 0.0, "mse", 4),
    (14, "residual", WrapMode.DIRECT, 0.0, "mse", 8),
    (15, "residual", WrapMode.RESIDUAL, 0.0, "mse", 8),
    (16, "clean", WrapMode.DIRECT, 1e-5, "mse", 4),
    (17, "residual", WrapMode.RESIDUAL, 1e-5, "mse", 4),
    (18, "clean", WrapMode.NONE, 0.0, "l1", 4),
    (19, "residual", WrapMode.DIRECT, 0.0, "l1", 8),
]


@pytest.mark.parametrize("seed,convention,mode,epsilon,loss_kind,side", _GRAD_PROBES)
def test_gradients_match_finite_differences(
    seed, convention, mode, epsilon, loss_kind, side
):
    rng = np.random.default_rng(seed)
    params = random_patch_mlp(4, 8, convention, rng)
    y = 0.5 + 0.2 * rng.standard_normal((side, side))
    x = 0.5 + 0.2 * rng.standard_normal((side, side))
    _, grads = patch_mlp_grads(params, y, x, loss_kind, mode, epsilon)
    fd = _fd_grads(params, y, x, loss_kind, mode, epsilon)
    for key, g in grads.items():
        scale = max(1.0, float(np.max(np.abs(g))))
        assert np.max(np.abs(fd[key] - g)) <= 1e-4 * scale, key


def test_zero_error_gives_zero_gradients():
    params = patch_mlp_init(4, 8, "residual", np.random.default_rng(1))
    y = np.random.default_rng(2).standard_normal((4, 4))
    loss, grads = patch_mlp_grads(params, y, y)
    assert loss == 0.0
    for g in grads.values():
        np.testing.assert_array_equal(g, np.zeros_like(g))


def test_flat_and_square_patches_agree():
    rng = np.random.default_rng(3)
    params = random_patch_mlp(4, 8, "clean", rng)
    y = rng.standard_normal((4, 4))
    x = rng.standard_normal((4, 4))
    loss_sq, g_sq = patch_mlp_grads(params, y, x)
    loss_fl, g_fl = patch_mlp_grads(params, y.ravel(), x.ravel())
    assert loss_sq == loss_fl
    for key in g_sq:
        np.testing.assert_array_equal(g_sq[key], g_fl[key])


def test_patch_shape_errors():
    params = random_patch_mlp(4, 8, "clean", np.random.default_rng(0))
    with pytest.raises(ValueError, match="patch must be square"):
        patch_mlp_grads(params, np.zeros((4, 8)), np.zeros((4, 8)))
    with pytest.raises(ValueError, match="patch must be square"):
        patch_mlp_grads(params, np.zeros((6, 6)), np.zeros((6, 6)))
    with pytest.raises(ValueError, match="shapes differ"):
        patch_mlp_grads(params, np.zeros((4, 4)), np.zeros((8, 8)))


def test_wrapped_gradient_carries_the_std_factor():
    # zero-readout init with b1 = 0: the hidden layer is positively
    # homogeneous, so on a mean-zero patch the Direct-wrapped backward
    # differs from the bare one by exactly std(y) on b2 (and not on W2,
    # where the 1/std of the normalized activations cancels it).
    params = patch_mlp_init(4, 8, "residual", np.random.default_rng(1))
    rng = np.random.default_rng(5)
    y = rng.standard_normal((4, 4))
    y = y - y.mean()
    x = rng.standard_normal((4, 4))
    _, bare = patch_mlp_grads(params, y, x)
    _, wrapped = patch_mlp_grads(params, y, x, mode=WrapMode.DIRECT, epsilon=0.0)
    std = float(y.std())
    np.testing.assert_allclose(wrapped["b2"], std * bare["b2"], rtol=1e-12)
    np.testing.assert_allclose(wrapped["W2"], bare["W2"], rtol=1e-12)


def test_wrapped_objective_equals_scaled_normalized_objective():
    # L_direct(theta; y, x) = std^2 * L_bare(theta; z, matched target)
    rng = np.random.default_rng(6)
    params = random_patch_mlp(4, 8, "residual", rng)
    y = 0.5 + 0.2 * rng.standard_normal((8, 8))
    x = 0.5 + 0.2 * rng.standard_normal((8, 8))
    z, stats = normalize(y)
    target = matched_target(x, stats)
    loss_raw, g_raw = patch_mlp_grads(params, y, x, mode=WrapMode.DIRECT, epsilon=0.0)
    loss_norm, g_norm = patch_mlp_grads(params, z, target)
    s2 = stats.std**2
    assert abs(loss_raw - s2 * loss_norm) <= 1e-10 * abs(loss_raw)
    for key in g_raw:
        np.testing.assert_allclose(g_raw[key], s2 * g_norm[key], rtol=1e-10)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _mlp_model(tile=4, hidden=8, mode=WrapMode.NONE, seed=0):
    params = random_patch_mlp(tile, hidden, "residual", np.random.default_rng(seed))
    return WrappedDenoiser(PatchMlp(params), mode=mode)


def test_train_config_validation():
    with pytest.raises(ValueError, match="unknown noise kind"):
        TrainConfig(noise_kind="salt")
    with pytest.raises(ValueError, match="unknown loss kind"):
        TrainConfig(loss="huber")
    with pytest.raises(ValueError, match="unknown objective"):
        TrainConfig(objective="score")
    with pytest.raises(ValueError, match="unknown schedule"):
        TrainConfig(schedule="cosine")
    with pytest.raises(ValueError, match="steps"):
        TrainConfig(steps=-1)
    with pytest.raises(ValueError, match="batch"):
        TrainConfig(batch=0)
    with pytest.raises(ValueError, match="lr"):
        TrainConfig(lr=0.0)


def test_train_requires_patch_mlp_backbone(small_corpus):
    with pytest.raises(ValueError, match="PatchMlp backbone"):
        train(WrappedDenoiser(Identity()), small_corpus, TrainConfig(steps=1))


def test_train_patch_size_must_tile(small_corpus):
    cfg = TrainConfig(patch_size=10, steps=1)
    with pytest.raises(ValueError, match="not a multiple"):
        train(_mlp_model(tile=4), small_corpus, cfg)


def test_train_rejects_undersized_corpus():
    tiny = [np.zeros((4, 4))]
    cfg = TrainConfig(patch_size=8, steps=1)
    with pytest.raises(ValueError, match="smaller than the training patch"):
        train(_mlp_model(tile=4), tiny, cfg)


def test_train_zero_steps_returns_model_unchanged(small_corpus):
    model = _mlp_model()
    trained, curve = train(model, small_corpus, TrainConfig(patch_size=4, steps=0))
    assert curve.shape == (0,)
    before = model.backbone.params.as_dict()
    after = trained.backbone.params.as_dict()
    for key in before:
        np.testing.assert_array_equal(after[key], before[key])


def test_train_is_deterministic(small_corpus):
    cfg = TrainConfig(sigma=25.0, patch_size=4, batch=8, steps=25, seed=7)
    _, curve_a = train(_mlp_model(), small_corpus, cfg)
    trained_b, curve_b = train(_mlp_model(), small_corpus, cfg)
    _, curve_c = train(trained_b, small_corpus, cfg)
    np.testing.assert_array_equal(curve_a, curve_b)
    assert not np.array_equal(curve_b, curve_c)


def test_train_first_step_loss_matches_manual_batch(small_corpus):
    # freezes the per-step draw order: image index, top, left, then noise
    cfg = TrainConfig(sigma=10.0, patch_size=8, batch=4, steps=1, seed=123)
    model = _mlp_model(mode=WrapMode.RESIDUAL, seed=2)
    model = WrappedDenoiser(model.backbone, mode=WrapMode.RESIDUAL, epsilon=1e-5)
    _, curve = train(model, small_corpus, cfg)

    images = np.stack(small_corpus)
    n, height, width = images.shape
    rng = np.random.default_rng(123)
    img_idx = rng.integers(0, n, 4)
    tops = rng.integers(0, height - 8 + 1, 4)
    lefts = rng.integers(0, width - 8 + 1, 4)
    x = np.stack(
        [images[i, t : t + 8, l : l + 8] for i, t, l in zip(img_idx, tops, lefts)]
    )
    y = x + (10.0 / 255.0) * noise_unit("gaussian", x.shape, rng)
    losses = [
        patch_mlp_grads(
            model.backbone.params, y[i], x[i], "mse", WrapMode.RESIDUAL, 1e-5
        )[0]
        for i in range(4)
    ]
    np.testing.assert_allclose(curve[0], np.mean(losses), rtol=1e-12)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_train_diverges_with_explosive_parameters(small_corpus):
    base = random_patch_mlp(4, 8, "clean", np.random.default_rng(0))
    big = base.replace_arrays({k: a * 1e200 for k, a in base.as_dict().items()})
    model = WrappedDenoiser(PatchMlp(big), mode=WrapMode.NONE)
    with pytest.raises(TrainingDiverged, match="step 0") as info:
        train(model, small_corpus, TrainConfig(patch_size=4, steps=5))
    assert info.value.step == 0


def test_train_softne_and_halve_schedule_run(small_corpus):
    cfg = TrainConfig(
        sigma=25.0,
        patch_size=4,
        batch=8,
        steps=20,
        schedule="halve",
        halve_every=5,
        softne=True,
        objective="n2n",
        seed=3,
    )
    _, curve = train(_mlp_model(), small_corpus, cfg)
    assert curve.shape == (20,)
    assert np.all(np.isfinite(curve))


def test_training_beats_the_identity_baseline():
    corpus = make_corpus(24, 64, np.random.default_rng(100))
    val = make_corpus(6, 64, np.random.default_rng(900))
    init = patch_mlp_init(8, 64, "residual", np.random.default_rng(1))
    cfg = TrainConfig(sigma=25.0, patch_size=8, batch=32, steps=2000, lr=1e-3, seed=0)
    model = WrappedDenoiser(PatchMlp(init), mode=WrapMode.NONE)
    trained, _ = train(model, corpus, cfg)

    rng = np.random.default_rng(55)
    val_mse, identity_mse = [], []
    for image in val:
        noisy = image + (25.0 / 255.0) * noise_unit("gaussian", image.shape, rng)
        val_mse.append(np.mean((trained(noisy) - image) ** 2))
        identity_mse.append(np.mean((noisy - image) ** 2))
    val_mse = float(np.mean(val_mse))
    identity_mse = float(np.mean(identity_mse))
    np.testing.assert_allclose(val_mse, 0.002543, rtol=1e-3)
    np.testing.assert_allclose(identity_mse, 0.009748, rtol=1e-3)
    assert val_mse < 0.5 * identity_mse


def test_n2n_matches_supervised_for_a_linear_model():
    # with affine regression the noisy-target normal equations share the
    # supervised minimizer; held-out clean MSE must agree within 5%
    rng = np.random.default_rng(42)
    corpus = np.stack(make_corpus(12, 32, rng))
    sig = 10.0 / 255.0

    def draw(n):
        idx = rng.integers(0, corpus.shape[0], n)
        tops = rng.integers(0, 32 - 4 + 1, n)
        lefts = rng.integers(0, 32 - 4 + 1, n)
        rows = tops[:, None, None] + np.arange(4)[None, :, None]
        cols = lefts[:, None, None] + np.arange(4)[None, None, :]
        return corpus[idx[:, None, None], rows, cols].reshape(n, 16)

    x = draw(24_000)
    y1 = x + sig * rng.standard_normal(x.shape)
    y2 = x + sig * rng.standard_normal(x.shape)
    design = np.hstack([y1, np.ones((x.shape[0], 1))])
    w_sup = np.linalg.lstsq(design, x, rcond=None)[0]
    w_n2n = np.linalg.lstsq(design, y2, rcond=None)[0]

    x_test = draw(6_000)
    y_test = x_test + sig * rng.standard_normal(x_test.shape)
    design_test = np.hstack([y_test, np.ones((x_test.shape[0], 1))])
    mse_sup = np.mean((design_test @ w_sup - x_test) ** 2)
    mse_n2n = np.mean((design_test @ w_n2n - x_test) ** 2)
    assert abs(mse_n2n - mse_sup) <= 0.05 * mse_sup
