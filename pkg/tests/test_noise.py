import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spde_lab.grid import GridSpec
from spde_lab.noise import (
    LIPSCHITZ,
    SUPERLINEAR,
    NoiseModel,
    RngStream,
    check_noise,
    derive_seed,
    diffusion_apply,
    lipschitz_probe,
    noise_preset,
    wiener_increments,
)

G = GridSpec(1, 4.0, 32)


def single(value, regime=LIPSCHITZ, lambda0=0.0, channels=1):
    mu = np.zeros((channels,) + G.shape)
    mu[0] = value
    return NoiseModel(G, regime, mu, K=1.0, lambda0=lambda0)


def test_zero_channels_gives_empty_vector():
    rng = RngStream(1)
    assert wiener_increments(rng, 0, 1e-3).shape == (0,)
    assert rng.counter == 1


def test_invalid_increment_arguments():
    rng = RngStream(1)
    with pytest.raises(ValueError):
        wiener_increments(rng, 3, 0.0)
    with pytest.raises(ValueError):
        wiener_increments(rng, -1, 1e-3)


def test_increment_statistics():
    rng = RngStream(12345)
    dt, n = 1e-3, 100_000
    x = np.array([wiener_increments(rng, 1, dt)[0] for _ in range(n)])
    assert abs(x.mean()) <= 4 * np.sqrt(dt / n)
    assert abs(x.var() / dt - 1) <= 0.05


def test_channels_are_uncorrelated():
    rng = RngStream(3)
    x = np.array([wiener_increments(rng, 4, 1.0) for _ in range(20_000)])
    corr = np.corrcoef(x.T)
    assert np.max(np.abs(corr - np.eye(4))) < 0.04


def test_stream_reproducible_and_counter_addressed():
    a, b = RngStream(99), RngStream(99)
    seq_a = [a.normals(5) for _ in range(300)]
    # jump straight to counter 290 without drawing the earlier values
    b.counter = 290
    assert np.array_equal(b.normals(5), seq_a[290])
    c = RngStream(99)
    assert all(np.array_equal(c.normals(5), s) for s in seq_a)


def test_streams_differ_between_paths():
    assert derive_seed(0, 0) != derive_seed(0, 1)
    assert derive_seed(0, 3) == derive_seed(0, 3)
    x = RngStream.for_path(0, 0).normals(8)
    y = RngStream.for_path(0, 1).normals(8)
    assert not np.array_equal(x, y)


def test_diffusion_of_zero_is_zero():
    u = np.zeros(G.shape)
    for model in (single(1.0), single(1.0, SUPERLINEAR, 0.5)):
        assert np.all(diffusion_apply(model, u, np.array([0.7])) == 0)


def test_lipschitz_single_channel_definition():
    u = np.random.default_rng(0).normal(size=G.shape)
    assert np.array_equal(diffusion_apply(single(1.0), u, np.array([0.3])), 0.3 * u)


def test_superlinear_value():
    u = np.full(G.shape, 4.0)
    out = diffusion_apply(single(1.0, SUPERLINEAR, 0.5), u, np.array([1.0]))
    assert np.allclose(out, 8.0, rtol=1e-15)


def test_superlinear_cutoff_mode():
    u = np.full(G.shape, 3.0)
    model = single(1.0, SUPERLINEAR, 0.5)
    assert np.allclose(diffusion_apply(model, u, np.array([1.0]), m=2.0), 3.0**1.5 * 0.5)
    assert np.all(diffusion_apply(model, -u, np.array([1.0]), m=10.0) == 0)


def test_dw_length_mismatch():
    with pytest.raises(ValueError):
        diffusion_apply(single(1.0, channels=2), np.ones(G.shape), np.array([1.0]))


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10, allow_nan=False), st.integers(0, 1000))
def test_diffusion_homogeneous_in_dw(s, seed):
    rng = np.random.default_rng(seed)
    model = noise_preset(G, LIPSCHITZ, 4, "modulated:0.5", scale=0.5)
    u = rng.normal(size=G.shape)
    dW = rng.normal(size=4)
    base = diffusion_apply(model, u, dW)
    scaled = diffusion_apply(model, u, s * dW)
    assert np.allclose(scaled, s * base, rtol=1e-13, atol=1e-13 * np.abs(base).max())


def test_probe_zero_and_equality_cases():
    rng = RngStream(5)
    assert lipschitz_probe(single(0.0), 1000, rng).max_ratio == 0.0
    rep = lipschitz_probe(single(0.75), 1000, rng)
    assert rep.max_ratio == pytest.approx(0.75, rel=1e-12)


def test_probe_two_channels_l2_norm():
    mu = np.zeros((2,) + G.shape)
    mu[0], mu[1] = 3.0, 4.0
    rep = lipschitz_probe(NoiseModel(G, LIPSCHITZ, mu, K=5.0), 1000, RngStream(6))
    assert rep.max_ratio == pytest.approx(5.0, rel=1e-12)
    assert rep.passed


def test_probe_rejects_superlinear():
    with pytest.raises(ValueError):
        lipschitz_probe(single(1.0, SUPERLINEAR, 0.5), 10, RngStream(0))


def test_check_noise_bounds():
    ok = noise_preset(G, LIPSCHITZ, 16, "geometric:0.5", scale=0.5, K=1.0)
    assert all(c.passed for c in check_noise(ok))
    bad = noise_preset(G, LIPSCHITZ, 2, "constant", scale=2.0, K=1.0)
    assert not check_noise(bad)[0].passed
    sl = noise_preset(G, SUPERLINEAR, 4, "geometric:0.5", scale=0.5, K=1.0, lambda0=1.5)
    names = {c.name: c.passed for c in check_noise(sl)}
    assert names["noise_superlinear_bound"] and not names["lambda0_range"]


def test_presets():
    assert noise_preset(G, LIPSCHITZ, 3, "zero").is_zero
    geo = noise_preset(G, LIPSCHITZ, 3, "geometric:0.5", scale=0.4)
    assert np.allclose(geo.mu[:, 0], [0.4, 0.2, 0.1])
    mod = noise_preset(G, LIPSCHITZ, 3, "modulated:0.5", scale=0.4)
    assert np.max(mod.mu[0]) <= 0.4 + 1e-15
    with pytest.raises(ValueError):
        noise_preset(G, LIPSCHITZ, 3, "pink")
    with pytest.raises(ValueError):
        NoiseModel(G, "additive", np.zeros((1,) + G.shape), K=1.0)
