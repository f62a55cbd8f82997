import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spde_lab.grid import (
    GridSpec,
    ResidueError,
    as_field,
    bessel_symbol,
    bump_profile,
    central_gradient,
    dft_multiplier,
    laplacian_like,
    mollifier_kernel,
    mollify,
    second_difference,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_gridspec_invariants():
    g = GridSpec(1, 8.0, 256)
    assert g.spacing * g.points_per_dim == 2 * g.half_length
    assert g.shape == (256,)
    assert g.axis[0] == -8.0
    assert GridSpec(2, 3.0, 16).shape == (16, 16)
    for bad in [(3, 1.0, 16), (1, 1.0, 12), (1, 1.0, 4), (1, 0.0, 16)]:
        with pytest.raises(ValueError):
            GridSpec(*bad)


def test_radius_is_minimal_image():
    g = GridSpec(1, 4.0, 16)
    assert g.radius[0] == 4.0
    assert g.radius[8] == 0.0
    assert g.radius[1] == g.radius[-1] == 3.5


def test_as_field_rejects_nonfinite_and_wrong_size():
    g = GridSpec(1, 1.0, 8)
    with pytest.raises(ValueError):
        as_field(g, np.zeros(7))
    with pytest.raises(FloatingPointError):
        as_field(g, [0, 0, 0, np.nan, 0, 0, 0, 0])


def test_gradient_of_constant_is_zero():
    g = GridSpec(2, 2.0, 16)
    assert np.all(central_gradient(g, np.full(g.shape, 3.5), 1) == 0)


def test_gradient_sine_error_bound():
    g = GridSpec(1, 8.0, 256)
    L, x = g.half_length, g.axis
    f = np.sin(np.pi * x / L)
    err = np.max(np.abs(central_gradient(g, f, 0) - np.pi / L * np.cos(np.pi * x / L)))
    assert err <= (np.pi * g.spacing / L) ** 2


def test_gradient_impulse_stencil():
    g = GridSpec(1, 1.0, 16)
    f = np.zeros(16)
    f[5] = 1.0
    d = central_gradient(g, f, 0)
    assert np.count_nonzero(d) == 2
    assert d[4] == 1 / (2 * g.spacing) and d[6] == -1 / (2 * g.spacing)


def test_gradient_wraps_periodically():
    g = GridSpec(1, 1.0, 8)
    f = np.zeros(8)
    f[0] = 1.0
    d = central_gradient(g, f, 0)
    assert d[7] != 0 and d[1] != 0


def test_gradient_bad_axis():
    g = GridSpec(1, 1.0, 8)
    with pytest.raises(IndexError):
        central_gradient(g, np.zeros(8), 1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 32, elements=finite), arrays(np.float64, 32, elements=finite))
def test_summation_by_parts(f, g_vals):
    g = GridSpec(1, 2.0, 32)
    lhs = np.sum(g_vals * central_gradient(g, f, 0))
    rhs = -np.sum(f * central_gradient(g, g_vals, 0))
    scale = np.sum(np.abs(g_vals * central_gradient(g, f, 0))) + np.sum(np.abs(f * central_gradient(g, g_vals, 0)))
    assert abs(lhs - rhs) <= 1e-12 * max(scale, 1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (16, 16), elements=finite), st.integers(0, 1))
def test_telescoping(f, axis):
    g = GridSpec(2, 1.0, 16)
    d = central_gradient(g, f, axis)
    assert abs(d.sum()) <= 1e-12 * max(np.abs(d).sum(), 1.0)


def test_laplacian_constant_is_zero():
    g = GridSpec(2, 2.0, 16)
    assert np.allclose(laplacian_like(g, np.full(g.shape, 2.0), np.eye(2)), 0, atol=1e-12)


@pytest.mark.parametrize("k", [1, 3, 17])
def test_laplacian_sine_eigenvalue(k):
    g = GridSpec(1, 8.0, 256)
    h, L = g.spacing, g.half_length
    f = np.sin(k * np.pi * g.axis / L)
    lam = -(2 / h**2) * (1 - np.cos(k * np.pi * h / L))
    out = laplacian_like(g, f, np.eye(1))
    assert np.max(np.abs(out - lam * f)) <= 1e-9 * abs(lam)


def test_laplacian_linear_in_a():
    g = GridSpec(2, 2.0, 16)
    f = np.random.default_rng(0).normal(size=g.shape)
    assert np.array_equal(laplacian_like(g, f, 2 * np.eye(2)), 2 * laplacian_like(g, f, np.eye(2)))


def test_laplacian_mixed_term_matches_iterated_differences():
    g = GridSpec(2, 2.0, 16)
    rng = np.random.default_rng(1)
    f = rng.normal(size=g.shape)
    a = np.array([[1.0, 0.3], [0.3, 2.0]])
    mixed = central_gradient(g, central_gradient(g, f, 1), 0)
    expect = second_difference(g, f, 0) + 2.0 * second_difference(g, f, 1) + 0.6 * mixed
    assert np.allclose(laplacian_like(g, f, a), expect, atol=1e-10)


def test_mollify_fixes_constants():
    g = GridSpec(2, 2.0, 32)
    assert np.allclose(mollify(g, np.full(g.shape, 1.7), 0.4), 1.7, rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 2.0))
def test_mollify_preserves_mass(seed, eps):
    g = GridSpec(1, 4.0, 64)
    f = np.random.default_rng(seed).normal(size=g.shape)
    m0 = f.sum()
    m1 = mollify(g, f, eps).sum()
    assert abs(m1 - m0) <= 1e-12 * max(np.abs(f).sum(), 1.0)


def test_mollify_impulse_matches_direct_quadrature():
    g = GridSpec(1, 4.0, 64)
    h, eps, j0 = g.spacing, 8 * g.spacing, 20
    f = np.zeros(g.shape)
    f[j0] = 1.0
    # independent oracle: brute-force periodic sum with its own normalization
    def dist(i, j):
        w = abs(g.axis[i] - g.axis[j]) % (2 * g.half_length)
        return min(w, 2 * g.half_length - w)

    weights = np.array([(1 - (dist(i, 0) / eps) ** 2) ** 3 if dist(i, 0) < eps else 0.0 for i in range(64)])
    norm = weights.sum() * h
    oracle = np.array(
        [sum(f[i] * ((1 - (dist(i, j) / eps) ** 2) ** 3 if dist(i, j) < eps else 0.0) for i in range(64)) * h / norm
         for j in range(64)]
    )
    assert np.max(np.abs(mollify(g, f, eps) - oracle)) <= 1e-10


def test_mollify_below_resolution_is_identity():
    g = GridSpec(1, 4.0, 64)
    f = np.random.default_rng(3).normal(size=g.shape)
    assert np.allclose(mollify(g, f, g.spacing), f, atol=1e-12)


def test_mollifier_kernel_properties():
    g = GridSpec(2, 2.0, 32)
    k = mollifier_kernel(g, 0.5)
    assert k.min() >= 0
    assert np.isclose(k.sum() * g.cell_volume, 1.0, rtol=1e-13)
    with pytest.raises(ValueError):
        mollifier_kernel(g, 0.0)
    assert bump_profile(np.array([0.0, 1.0, 2.0])).tolist() == [1.0, 0.0, 0.0]


def test_dft_identity_symbols():
    g = GridSpec(2, 3.0, 16)
    f = np.random.default_rng(4).normal(size=g.shape)
    assert np.allclose(dft_multiplier(g, f, lambda xi: 1.0), f, atol=1e-12)
    assert np.allclose(dft_multiplier(g, f, bessel_symbol(0.0)), f, atol=1e-12)


@pytest.mark.parametrize("dim", [1, 2])
def test_dft_cosine_mode_scaled(dim):
    g = GridSpec(dim, 4.0, 32)
    n = 3
    xi0 = 2 * np.pi * n / (2 * g.half_length)
    f = np.cos(xi0 * g.coords[0])
    out = dft_multiplier(g, f, bessel_symbol(1.5))
    assert np.allclose(out, (1 + xi0**2) ** 0.75 * f, atol=1e-11)


def test_dft_composition():
    g = GridSpec(2, 3.0, 16)
    f = np.random.default_rng(5).normal(size=g.shape)
    s1, s2 = bessel_symbol(-1.0), bessel_symbol(0.5)
    both = dft_multiplier(g, f, lambda xi: s1(xi) * s2(xi))
    seq = dft_multiplier(g, dft_multiplier(g, f, s1), s2)
    assert np.max(np.abs(both - seq)) <= 1e-10 * np.max(np.abs(both))


def test_dft_odd_symbol_raises_residue_error():
    g = GridSpec(1, 3.0, 16)
    f = np.random.default_rng(6).normal(size=g.shape)
    with pytest.raises(ResidueError):
        dft_multiplier(g, f, lambda xi: 1.0 + xi[0])


def test_dft_nonfinite_symbol_rejected():
    g = GridSpec(1, 3.0, 16)
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        dft_multiplier(g, np.ones(16), lambda xi: 1.0 / xi[0])
