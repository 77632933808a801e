import numpy as np
import pytest
from hypothesis import given, strategies as st

from hardedge.errors import DomainError, UsageError
from hardedge.sine import (sine_boundary_vector, sine_field, sine_matrix, sine_right_boundary,
                           simulate_hbm)
from hardedge.stochastic import ComplexPath, RngSeed, make_grid, sample_complex_brownian


def _noise(seed, horizon=8.0, step=0.01, n=None):
    g = make_grid(0.0, horizon, step, uniform_in="log_time")
    if n is None:
        return sample_complex_brownian(RngSeed(seed, 4, 0), g)
    return ComplexPath(g, np.stack([sample_complex_brownian(RngSeed(seed, 4, i), g).values
                                    for i in range(n)]))


def test_sine_matrix_values():
    assert np.allclose(sine_matrix(0.0, 1.0), 0.5 * np.eye(2))
    assert np.allclose(sine_matrix(1.0, 1.0), [[0.5, -0.5], [-0.5, 1.0]])
    with pytest.raises(DomainError):
        sine_matrix(0.0, 0.0)


@given(x=st.floats(-1e3, 1e3), y=st.floats(1e-6, 1e3))
def test_sine_matrix_unit_determinant(x, y):
    R = sine_matrix(x, y)
    det = R[0, 0] * R[1, 1] - R[0, 1] ** 2
    assert det == pytest.approx(0.25, rel=1e-6, abs=1e-9 * np.trace(R) ** 2)
    assert np.trace(R) >= 1 - 1e-12


def test_zero_noise_freezes_motion():
    g = make_grid(0.0, 3.0, 0.1)
    hbm = simulate_hbm(2.0, ComplexPath(g, np.zeros(len(g))))
    assert np.all(hbm.x == 0)
    assert np.allclose(hbm.y, np.exp(-g.nodes))
    inf = simulate_hbm(np.inf, _noise(1))
    assert np.all(inf.x == 0) and np.all(inf.y == 1)


def test_field_at_infinite_beta_is_constant():
    F = sine_field(np.inf, _noise(2))
    assert np.allclose(F.samples, 0.5 * np.eye(2))
    assert F.right_end == 1.0


def test_field_psd_and_positive():
    F = sine_field(2.0, _noise(3, n=20))
    ev = np.linalg.eigvalsh(F.samples)
    assert ev.min() >= -1e-12 * ev.max()
    hbm = simulate_hbm(2.0, _noise(3, n=20))
    assert hbm.x[..., 0].tolist() == [0.0] * 20 and np.all(hbm.y[..., 0] == 1)


def test_log_y_drift():
    W = _noise(4, horizon=1.0, step=0.25, n=10000)
    y = simulate_hbm(4.0, W).y[..., -1]
    se = np.log(y).std() / np.sqrt(y.size)
    assert abs(np.log(y).mean() + 0.5) < 3 * se


def test_boundary_vector():
    hbm = simulate_hbm(4.0, _noise(5, horizon=12.0))
    b = sine_right_boundary(hbm, 4.0)
    assert b.vector[1] == 1.0 and b.horizon == pytest.approx(12.0)
    with pytest.raises(UsageError):
        sine_right_boundary(hbm, 2.0)
    g = make_grid(0.0, 3.0, 0.1)
    frozen = simulate_hbm(2.0, ComplexPath(g, np.zeros(len(g))))
    assert np.allclose(sine_boundary_vector(frozen).vector, [0.0, 1.0])


def test_boundary_horizon_stability():
    W = _noise(6, horizon=12.0, n=200)
    hbm = simulate_hbm(4.0, W)
    s = hbm.grid.nodes
    late = s >= 8.0
    drift = np.abs(hbm.x[..., -1] - hbm.at(8.0)[0])
    # conditional std of the remaining Ito integral: (2/sqrt(beta)) sqrt(int y^2 ds)
    scale = np.sqrt(np.trapezoid(hbm.y[..., late] ** 2, s[late], axis=-1))
    assert np.median(drift) < 3 * np.median(scale)
    assert np.median(scale) < 0.1
