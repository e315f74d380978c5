"""Denoiser-guided sampler: schedule, projector, stopping, consistency."""

import numpy as np
import pytest

from normeq import (
    Identity,
    Projector,
    SamplerConfig,
    UnitSumConv,
    WrappedDenoiser,
    iterative_denoise,
    make_inpainting_mask,
    noise_gain,
    observe,
    run_sampler,
    step_size,
)


def test_sampler_config_validation():
    with pytest.raises(ValueError, match="sigma0 and sigma_floor"):
        SamplerConfig(sigma0=0.0)
    with pytest.raises(ValueError, match="sigma0 and sigma_floor"):
        SamplerConfig(sigma_floor=-0.1)
    with pytest.raises(ValueError, match="h0"):
        SamplerConfig(h0=0.0)
    with pytest.raises(ValueError, match="h0"):
        SamplerConfig(h0=1.5)
    with pytest.raises(ValueError, match="beta"):
        SamplerConfig(beta=1.2)
    with pytest.raises(ValueError, match="t_max"):
        SamplerConfig(t_max=0)


def test_step_size_closed_form():
    h0 = 0.01
    assert abs(step_size(h0, 1) - 0.01) <= 1e-12
    assert abs(step_size(h0, 10) - 0.1 / 1.09) <= 1e-12
    assert abs(step_size(h0, 100) - 1.0 / 1.99) <= 1e-12
    hs = [step_size(h0, t) for t in range(1, 2000)]
    assert all(b > a for a, b in zip(hs, hs[1:]))
    assert hs[-1] < 1.0
    assert step_size(1.0, 1) == 1.0


def test_noise_gain_values():
    # beta = 1 removes the injected noise entirely
    assert noise_gain(0.3, 1.0) == 0.0
    assert noise_gain(1.0, 1.0) == 0.0
    # beta = 0 gives the pure-diffusion gain sqrt(h * (2 - h))
    h = 0.25
    np.testing.assert_allclose(noise_gain(h, 0.0), np.sqrt(h * (2.0 - h)), rtol=1e-15)
    with pytest.raises(ArithmeticError, match="negative injected-noise"):
        noise_gain(0.5, 2.0)


def test_projector_basics():
    mask = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = Projector(mask)
    v = np.array([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(p.apply(v), [[3.0, 0.0], [0.0, 6.0]])
    np.testing.assert_array_equal(p.complement(v), [[0.0, 4.0], [5.0, 0.0]])
    np.testing.assert_array_equal(p.apply(p.apply(v)), p.apply(v))
    assert p.observed_count == 2
    with pytest.raises(ValueError, match="0 or 1"):
        Projector(np.array([0.5, 1.0]))


def test_inpainting_mask_fraction():
    rng = np.random.default_rng(0)
    p = make_inpainting_mask((100, 100), 0.1, rng)
    assert p.observed_count == 1000
    assert make_inpainting_mask((8, 8), 0.0, rng).observed_count == 0
    assert make_inpainting_mask((8, 8), 1.0, rng).observed_count == 64
    with pytest.raises(ValueError, match="fraction"):
        make_inpainting_mask((8, 8), 1.5, rng)


def test_observe_zeros_off_support():
    rng = np.random.default_rng(1)
    clean = rng.random((16, 16))
    p = make_inpainting_mask((16, 16), 0.25, rng)
    x_c = observe(clean, p)
    np.testing.assert_array_equal(x_c[p.mask == 0.0], 0.0)
    np.testing.assert_array_equal(x_c[p.mask == 1.0], clean[p.mask == 1.0])


def test_full_observation_returns_measurements_bitwise():
    # with P = I the reconstruction is x_c regardless of the denoiser
    rng = np.random.default_rng(2)
    clean = rng.random((12, 12))
    p = Projector(np.ones((12, 12)))
    x_c = observe(clean, p)
    cfg = SamplerConfig(t_max=5)
    for denoiser in (Identity(), WrappedDenoiser(UnitSumConv())):
        traj = run_sampler(denoiser, p, x_c, cfg, np.random.default_rng(3), clean=clean)
        np.testing.assert_array_equal(traj.x_hat, x_c)


def test_reconstruction_is_measurement_consistent():
    rng = np.random.default_rng(4)
    clean = rng.random((16, 16))
    p = make_inpainting_mask((16, 16), 0.3, rng)
    x_c = observe(clean, p)
    cfg = SamplerConfig(t_max=20)
    traj = run_sampler(WrappedDenoiser(UnitSumConv()), p, x_c, cfg, rng, clean=clean)
    np.testing.assert_array_equal(p.apply(traj.x_hat), x_c)


def test_zero_residual_stops_at_first_step():
    # unconstrained run with an identity denoiser: u = 0 immediately
    rng = np.random.default_rng(5)
    p = Projector(np.zeros((8, 8)))
    x_c = np.zeros((8, 8))
    traj = run_sampler(Identity(), p, x_c, SamplerConfig(t_max=50), rng)
    assert traj.stop_reason == "threshold"
    assert traj.steps == 1
    assert traj.records[0].t == 1
    assert traj.records[0].sigma_hat == 0.0
    assert np.isnan(traj.records[0].psnr)
    assert np.isnan(traj.final_psnr)


def test_budget_stop_records_every_step():
    # a constant-offset denoiser keeps the residual norm at 1
    rng = np.random.default_rng(6)
    p = Projector(np.zeros((8, 8)))
    offset = lambda y: y + 1.0
    cfg = SamplerConfig(sigma_floor=0.5, t_max=7)
    traj = run_sampler(offset, p, np.zeros((8, 8)), cfg, rng)
    assert traj.stop_reason == "budget"
    assert traj.steps == 7
    assert [r.t for r in traj.records] == list(range(1, 8))
    np.testing.assert_allclose([r.sigma_hat for r in traj.records], 1.0, rtol=1e-12)


def test_sampler_is_deterministic():
    rng = np.random.default_rng(7)
    clean = np.random.default_rng(8).random((16, 16))
    p = make_inpainting_mask((16, 16), 0.2, rng)
    x_c = observe(clean, p)
    model = WrappedDenoiser(UnitSumConv())
    cfg = SamplerConfig(t_max=15)
    t1 = run_sampler(model, p, x_c, cfg, np.random.default_rng(9), clean=clean)
    t2 = run_sampler(model, p, x_c, cfg, np.random.default_rng(9), clean=clean)
    np.testing.assert_array_equal(t1.x_hat, t2.x_hat)
    assert [r.sigma_hat for r in t1.records] == [r.sigma_hat for r in t2.records]
    assert t1.final_psnr == t2.final_psnr


def test_trajectory_bookkeeping():
    rng = np.random.default_rng(10)
    clean = np.random.default_rng(11).random((16, 16))
    p = make_inpainting_mask((16, 16), 0.2, rng)
    x_c = observe(clean, p)
    cfg = SamplerConfig(t_max=10)
    traj = run_sampler(WrappedDenoiser(UnitSumConv()), p, x_c, cfg, rng, clean=clean)
    assert traj.steps == len(traj.records)
    assert traj.best_psnr >= traj.final_psnr
    np.testing.assert_allclose(
        traj.stability_gap, traj.final_psnr - traj.best_psnr, rtol=0, atol=0
    )
    assert np.isfinite(traj.one_pass_psnr)


def test_non_finite_state_reports_step():
    rng = np.random.default_rng(12)
    p = Projector(np.zeros((8, 8)))
    exploding = lambda y: y * np.inf
    with pytest.raises(ArithmeticError, match="step 1"):
        run_sampler(exploding, p, np.zeros((8, 8)), SamplerConfig(), rng)


def test_shape_checks():
    rng = np.random.default_rng(13)
    p = Projector(np.ones((8, 8)))
    with pytest.raises(ValueError, match="does not match the projector"):
        run_sampler(Identity(), p, np.zeros((4, 4)), SamplerConfig(), rng)
    bad = lambda y: y[:4]
    with pytest.raises(ValueError, match="shape-preserving"):
        run_sampler(bad, p, np.zeros((8, 8)), SamplerConfig(), rng)


def test_iterative_denoise_requires_beta_one():
    with pytest.raises(ValueError, match="beta = 1"):
        iterative_denoise(Identity(), np.zeros((8, 8)), SamplerConfig(beta=0.5))


def test_iterative_denoise_smooths_toward_the_clean_image(textured_image):
    from normeq import psnr

    rng = np.random.default_rng(14)
    noisy = textured_image + (25.0 / 255.0) * rng.standard_normal((32, 32))
    cfg = SamplerConfig(beta=1.0, sigma_floor=0.02, h0=0.1, t_max=60)
    traj = iterative_denoise(
        WrappedDenoiser(UnitSumConv()), noisy, cfg, clean=textured_image
    )
    assert traj.final_psnr > psnr(noisy, textured_image)
    # deterministic: no generator involved
    again = iterative_denoise(
        WrappedDenoiser(UnitSumConv()), noisy, cfg, clean=textured_image
    )
    np.testing.assert_array_equal(traj.x_hat, again.x_hat)
