import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardedge import bessel as bs
from hardedge import spectral as sp
from hardedge.errors import DomainError, RangeError, ResolutionError
from hardedge.sine import sine_field
from hardedge.stochastic import RngSeed, make_grid, sample_complex_brownian


def free_field(length=np.pi, n=2001):
    t = np.linspace(0, length, n)
    return sp.CoefficientMatrixField(t, np.broadcast_to(np.eye(2), (n, 2, 2)))


def random_field(seed, n=200):
    """Piecewise sampled PSD field H = A A^T with random A."""
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, 2, 2))
    H = A @ np.swapaxes(A, -1, -2)
    H[..., 1, 0] = H[..., 0, 1]
    return sp.CoefficientMatrixField(np.sort(rng.uniform(0, 2, n)) + np.arange(n) * 1e-3, H)


def test_field_validation():
    t = np.linspace(0, 1, 3)
    with pytest.raises(DomainError):
        sp.CoefficientMatrixField(t, np.broadcast_to(np.diag([1.0, -1.0]), (3, 2, 2)))
    with pytest.raises(DomainError):
        sp.CoefficientMatrixField(t, np.zeros((3, 2, 2)))
    with pytest.raises(DomainError):
        sp.CoefficientMatrixField(t, np.broadcast_to([[1.0, 0.5], [0.4, 1.0]], (3, 2, 2)))
    F = free_field(1.0, 11)
    assert F.truncate(0.5).nodes[-1] == pytest.approx(0.5)
    with pytest.raises(RangeError):
        F.truncate(0.55)


def test_transfer_free_system():
    F = free_field(2.0, 401)
    assert np.allclose(sp.transfer_matrix(F, 2.0, 0.0).value, np.eye(2))
    assert np.allclose(sp.transfer_matrix(F, 2.0, np.pi).value, np.eye(2), atol=1e-12)
    T = sp.transfer_matrix(F, 1.0, 0.7).value
    assert np.allclose(T, [[np.cos(0.7), -np.sin(0.7)], [np.sin(0.7), np.cos(0.7)]])
    with pytest.raises(RangeError):
        sp.transfer_matrix(F, 3.0, 1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), zr=st.floats(-5, 5), zi=st.floats(-3, 3))
def test_transfer_unimodular_and_conjugate_symmetric(seed, zr, zi):
    F = random_field(seed, 60)
    z = complex(zr, zi)
    T = sp.transfer_matrices(F, np.array([z, np.conj(z)]))
    det = T[..., 0, 0] * T[..., 1, 1] - T[..., 0, 1] * T[..., 1, 0]
    assert np.allclose(det, 1.0, atol=1e-6 * np.max(np.abs(T)) ** 2)
    assert np.allclose(T[1], np.conj(T[0]), rtol=1e-9, atol=1e-9 * np.max(np.abs(T)))


def test_sine_field_unimodular_at_complex_z():
    g = make_grid(0.0, 8.0, 0.01, uniform_in="log_time")
    F = sine_field(2.0, sample_complex_brownian(RngSeed(0, 4, 0), g))
    T = sp.transfer_matrix(F, F.nodes[-1], 1 + 2j).value
    assert abs(np.linalg.det(T) - 1) < 1e-8 * np.abs(T).max() ** 2


def test_free_weyl_function():
    F = free_field()
    m = sp.weyl_m_limit_circle(F, sp.BoundaryData.from_angle(0.0))
    z = np.array([1j, 0.3 + 0.5j, -2 + 1j])
    assert np.allclose(m(z), -1 / np.tan(np.pi * z), rtol=1e-6)
    assert m(1j).imag > 0
    assert np.allclose(m(np.conj(z)), np.conj(m(z)), atol=1e-10)


def test_weyl_via_transfer_callable():
    F = free_field()
    bd = sp.BoundaryData.from_angle(0.0)
    m_T = sp.weyl_m_limit_circle(lambda z: sp.transfer_matrix(F, np.pi, z), bd)
    assert m_T(1j) == pytest.approx(sp.weyl_m_limit_circle(F, bd)(1j), rel=1e-10)


def test_paired_matches_broadcast():
    F = random_field(3, 80)
    G = sp.CoefficientMatrixField(F.nodes, np.stack([F.samples, 2 * F.samples]))
    bd = sp.BoundaryData.from_vector(np.array([[1.0, 0.3], [0.2, 1.0]]))
    z = np.array([[1j, 2 + 1j], [0.5 + 0.1j, -1 + 3j]])
    paired = sp.weyl_m_paired(G, bd, z)
    full = sp.weyl_m_limit_circle(G, bd)(z)
    assert np.allclose(paired, [full[0, 0], full[1, 1]])


def test_limit_point_half_line():
    n = 4001
    t = np.linspace(0, 40, n)
    F = sp.CoefficientMatrixField(t, np.broadcast_to(np.eye(2), (n, 2, 2)))
    value, radius, ok = sp.weyl_m_limit_point(F, 1j, schedule=[5, 10, 20, 40], tol=1e-6)
    assert ok and value == pytest.approx(1j, abs=1e-6)
    assert value.imag >= -1e-9


@pytest.mark.parametrize("t,mass", [(3.0, 1 / np.pi)])
def test_stieltjes_fixtures(t, mass):
    m = lambda z: -1 / np.tan(np.pi * z)
    assert sp.stieltjes_atom(m, t) == pytest.approx(mass, abs=1e-4)
    assert sp.stieltjes_atom(lambda z: 1 / (0.7 - z), 0.7) == pytest.approx(1.0, abs=1e-12)
    assert sp.stieltjes_atom(lambda z: z, 1.5) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(DomainError):
        sp.stieltjes_atom(m, t, eps_schedule=(1e-3,))


def test_herglotz_fixtures():
    zs = np.array([1j, 1 + 1j, -1 + 2j])
    assert sp.herglotz_violation(lambda z: z, zs) == 0
    assert sp.herglotz_violation(lambda z: -1 / z, zs) == 0
    assert sp.herglotz_violation(np.conj, zs) > 0
    with pytest.raises(DomainError):
        sp.herglotz_violation(lambda z: z, [1.0 + 0j])


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_random_field_weyl_is_herglotz(seed):
    F = random_field(seed, 60)
    bd = sp.BoundaryData.from_angle(0.4)
    zs = np.array([1j, 3 + 0.2j, -2 + 2j])
    assert sp.herglotz_violation(sp.weyl_m_limit_circle(F, bd), zs) <= 1e-8


def test_free_eigenvalues_and_masses():
    F = free_field()
    bd = sp.BoundaryData.from_vector([1.0, 0.0])
    ev = sp.eigenvalues(F, bd, (-5.5, 5.5))
    assert np.allclose(ev, np.arange(-5, 6), atol=1e-8)
    assert sp.eigenvalues(F, bd, (0.2, 0.8)).size == 0
    meas = sp.spectral_measure(F, bd, (-5.5, 5.5))
    assert np.allclose(meas.masses, 1 / np.pi, atol=1e-4)
    assert np.allclose(sp.eigenfunction_mass(F, ev), 1 / np.pi, rtol=1e-4)


def test_coarse_scan_detected():
    with pytest.raises(ResolutionError):
        sp.eigenvalues(free_field(), sp.BoundaryData.from_angle(0.0), (-5.5, 5.5), resolution=3.0)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_prufer_angle_monotone_in_lambda(seed):
    F = random_field(seed, 80)
    lam = np.linspace(-6, 6, 49)
    theta = sp.prufer_angle(F, lam, lam_max=6.0)
    assert np.all(np.diff(theta) >= -1e-9)


def test_sine_eigenvalues_match_stieltjes_atoms():
    g = make_grid(0.0, 12.0, 0.01, uniform_in="log_time")
    F = sine_field(4.0, sample_complex_brownian(RngSeed(1, 4, 0), g))
    from hardedge.sine import simulate_hbm, sine_boundary_vector
    hbm = simulate_hbm(4.0, sample_complex_brownian(RngSeed(1, 4, 0), g))
    bd = sp.BoundaryData.from_vector(sine_boundary_vector(hbm).vector)
    meas = sp.spectral_measure(F, bd, (-8, 8))
    assert meas.locations.size > 0
    assert np.all(meas.masses > 0)
    oracle = sp.eigenfunction_mass(F, meas.locations)
    assert np.allclose(meas.masses, oracle, rtol=1e-4)


def test_bessel_lc_boundary_matches_oracle():
    a, E = 0.0, 1e4
    params = bs.BesselParams(np.inf, a)
    shift = bs.shift_params(params, E)
    t_end = bs.eta_inverse(np.log(1e8), shift)
    pairs = bs.fundamental_pair(params, shift, RngSeed(0, 0, 0), t_end=t_end)
    v = sp.bessel_right_boundary_lc(params, shift, pairs).vector
    ref = sp.bessel_lc_oracle_direction(a, E)
    angle = np.arccos(min(1.0, abs(np.dot(v, ref))))
    assert angle < 1e-3


def test_bessel_lc_boundary_horizon_stability():
    params = bs.BesselParams(4.0, 0.0)
    shift = bs.shift_params(params, 1e4)
    h1 = bs.eta_inverse(np.log(1e8), shift)
    h2 = bs.eta_inverse(2 * np.log(1e8), shift)
    seeds = [RngSeed(9, 0, i) for i in range(10)]
    pairs = bs.fundamental_pair(params, shift, seeds, t_end=h2, breakpoints=[h1])
    v1 = sp.bessel_right_boundary_lc(params, shift, pairs, horizon=h1).vector
    v2 = sp.bessel_right_boundary_lc(params, shift, pairs).vector
    angle = np.arccos(np.minimum(1.0, np.abs(np.sum(v1 * v2, axis=-1))))
    assert np.all(angle < 1e-2)


def test_decaying_solution_free_case():
    """B = 0, a = 1: the ratio P/Phi at 0 is stable when the start point T is doubled."""
    from hardedge.stochastic import RealPath
    params = bs.BesselParams(np.inf, 1.0)
    out = []
    for T in (20.0, 40.0):
        g = make_grid(0.0, T, 0.01)
        phi, P, _ = sp.solve_decaying_solution(params, RealPath(g, np.zeros(len(g))), 1.0)
        out.append(P / phi)
    assert abs(out[0] - out[1]) <= 1e-3 * abs(out[1])


def test_beta_gt2_boundary_stable_in_start_point():
    from hardedge.stochastic import RealPath, sample_brownian
    params = bs.BesselParams(4.0, 1.0)
    shift = bs.shift_params(params, 1e4)
    pairs = bs.fundamental_pair(params, shift, RngSeed(4, 0, 0))
    B = bs.bessel_time_noise(pairs.noise, shift)
    z = np.array([1j, 2 + 1j])
    out = []
    for T in (20.0, 40.0):
        g = make_grid(0.0, T, 0.01)
        tail = RealPath(g, sample_brownian(RngSeed(4, 2, 0), make_grid(0.0, 40.0, 0.01)).values[:len(g)])
        bd = sp.bessel_right_boundary_beta_gt2(params, shift, pairs, B, tail)
        out.append(bd.at(z))
    assert np.all(np.abs(out[0] - out[1]) <= 1e-3 * np.abs(out[1]).max())
    assert np.all(np.isfinite(out[1]))
