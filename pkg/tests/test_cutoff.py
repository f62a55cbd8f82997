import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spde_lab.cutoff import CutoffSpec, h_cutoff, powered_cutoff_max


def test_cutoff_values():
    m = 3.0
    assert h_cutoff(0.5 * m, m) == 1.0
    assert h_cutoff(2 * m, m) == 0.0
    assert h_cutoff(1.5 * m, m) == 0.5
    assert h_cutoff(-1.5 * m, m) == 0.5
    assert isinstance(h_cutoff(0.0, m), float)


def test_cutoff_rejects_nonpositive_level():
    with pytest.raises(ValueError):
        h_cutoff(1.0, 0.0)


@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(1e-3, 1e3))
def test_cutoff_range_and_plateau(z, m):
    v = h_cutoff(z, m)
    assert 0.0 <= v <= 1.0
    if abs(z) <= m:
        assert v == 1.0
    if abs(z) >= 2 * m:
        assert v == 0.0


def test_cutoff_is_c1():
    m = 1.0
    z = np.linspace(-2.5, 2.5, 200001)
    h = h_cutoff(z, m)
    dz = z[1] - z[0]
    slope = np.diff(h) / dz
    # derivative exists and is continuous: consecutive slopes never jump
    assert np.max(np.abs(np.diff(slope))) < 1e-3
    assert np.max(np.abs(slope)) <= 1.5 / m + 1e-6


def test_powered_cutoff_max():
    assert powered_cutoff_max(1.0, 1.0) <= 2.0
    # at least the value on the plateau edge
    assert powered_cutoff_max(1.0, 1.0) >= 1.0
    assert powered_cutoff_max(0.5, 4.0) <= np.sqrt(8.0)


def test_cutoff_spec_validation():
    CutoffSpec(1.0)
    for bad in [dict(m0=0.0), dict(m0=1.0, growth=1.0), dict(m0=10.0, m_max=5.0)]:
        with pytest.raises(ValueError):
            CutoffSpec(**bad)
