"""The stochastic Bessel operator in polar coordinates.

The operator acts on functions of t >= 0 with weights

    p(t) = exp(-a t - (2/sqrt(beta)) B(t)),    w(t) = exp(-t) p(t).

After the shift G -> (2/sqrt(E)) (G - E) and the time change
t = eta(s) = -2 log(1 - c s), its fundamental solutions f (f(0)=1, f'(0)=0) and
g (g(0)=0, g'(0)=1) are carried by amplitudes rho and phases xi driven by one
native-time Brownian motion B_E.  In log time u = -log(1 - c s) the
non-rotating part of those SDEs is the exact linear squeeze

    (v1, v2) -> (v1 e^{-X}, v2 e^{X}),    X = (a + 1/2) du + sqrt(2/beta) dBtilde,

of v = e^rho (cos xi, sin xi), where Btilde is a standard Brownian motion in u.
The integrator composes that squeeze with the exact phase rotation by
Strang splitting, so every step is a common unimodular map for f and g.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import (ConfigError, DomainError, IntegrationError, IntegrityError,
                     UsageError)
from .stochastic import (RealPath, RngSeed, TimeGrid, integrate_sde, log_time,
                         log_time_inverse, make_grid, sample_brownian)

__all__ = [
    "BesselParams", "ShiftParams", "PolarPair", "FundamentalPair", "ReversedPolar",
    "Unshift", "shift_params", "eta", "eta_prime", "eta_inverse", "pw_weights",
    "polar_grid", "bessel_time_noise", "integrate_polar", "fundamental_pair",
    "solutions_from_polar", "bessel_matrix", "bessel_field",
    "deterministic_bessel_reference", "varpi", "weyl_classification",
    "weyl_bound_check", "unshift_solution", "reversed_grid",
    "integrate_reversed_polar", "reversed_initial_data", "reversed_solution",
]


def _noise_scale(beta):
    return 0.0 if np.isinf(beta) else 2.0 / np.sqrt(beta)


@dataclass(frozen=True)
class BesselParams:
    beta: float
    a: float

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if not self.a > -1 or not np.isfinite(self.a):
            raise DomainError("a must be a finite number > -1")


@dataclass(frozen=True)
class ShiftParams:
    E: float
    c: float
    tau: float
    eps: float

    @property
    def log_E(self):
        return float(np.log(self.E))


def shift_params(params, E):
    """Scale c_E and the time tau_E with eta(tau_E) = log E."""
    E = float(E)
    if not E > 1 or not np.isfinite(E):
        raise DomainError("the shift E must be a finite number > 1")
    if params.beta > 2 and params.a >= 1:
        c = 1.0 - 1.0 / np.sqrt(E)
    else:
        c = 1.0
    tau = (1.0 - 1.0 / np.sqrt(E)) / c
    return ShiftParams(E=E, c=c, tau=tau, eps=1.0 / c - 1.0)


def eta(t, shift):
    """eta(t) = -2 log(1 - c t)."""
    return 2.0 * log_time(t, shift.c)


def eta_prime(t, shift):
    return 2.0 * shift.c * np.exp(0.5 * eta(t, shift))


def eta_inverse(s, shift):
    return log_time_inverse(0.5 * np.asarray(s, dtype=float), shift.c)


def pw_weights(t, B, params):
    """Weights (p, w) at Bessel time t for a Brownian path B sampled in Bessel time."""
    t = np.asarray(t, dtype=float)
    b = B(t)
    p = np.exp(-params.a * t - _noise_scale(params.beta) * b)
    return p, np.exp(-t) * p


def polar_grid(shift, phase_cap=0.1, max_step=0.01, t_end=None, breakpoints=()):
    """Native-time grid, uniform in log time, resolving the phase rotation.

    The deterministic phase turns at rate 2 sqrt(E) e^{-u} per unit of log
    time u, so gaps are min(max_step, phase_cap / rate) in u.
    """
    t_end = shift.tau if t_end is None else float(t_end)
    if not 0 < t_end < 1.0 / shift.c:
        raise DomainError("t_end must lie in (0, 1/c)")
    u_end = log_time(t_end, shift.c)
    u_breaks = [log_time(b, shift.c) for b in breakpoints if 0 < b < t_end]
    rate = lambda u: 2.0 * np.sqrt(shift.E) * np.exp(-u)
    ugrid = make_grid(0.0, u_end, max_step, phase_cap, rate, breakpoints=u_breaks)
    t = log_time_inverse(ugrid.nodes, shift.c)
    # pin the requested breakpoints and the endpoint to their exact values
    for b in list(breakpoints) + [t_end]:
        if 0 < b <= t_end:
            t[np.argmin(np.abs(t - b))] = b
    return TimeGrid(t, "log_time")


def _log_steps(grid, shift):
    u = log_time(grid.nodes, shift.c)
    return u, np.diff(u), np.diff(grid.nodes)


def bessel_time_noise(B_E, shift):
    """B(eta(t)) on the native grid from the native-time motion B_E.

    Uses B(eta(t)) = int_0^t sqrt(eta') dB_E with the exact step average of
    eta' per gap, so the result is a Brownian motion in Bessel time.
    """
    _, du, dt = _log_steps(B_E.grid, shift)
    incr = np.sqrt(2.0 * du / dt) * np.diff(B_E.values, axis=-1)
    vals = np.concatenate([np.zeros(incr.shape[:-1] + (1,)), np.cumsum(incr, axis=-1)], axis=-1)
    return RealPath(B_E.grid, vals)


@dataclass(frozen=True)
class PolarPair:
    """Amplitude/phase pair of one solution; arrays may carry a leading path axis."""
    grid: TimeGrid
    rho: RealPath
    xi: RealPath
    C: float

    @property
    def amplitude(self):
        return self.rho.values

    @property
    def phase(self):
        return self.xi.values


def _squeeze(rho, xi, shift_amp, X):
    """Exact polar update for (v1, v2) -> e^m (v1 e^{-X}, v2 e^{X})."""
    c2, s2 = np.cos(2.0 * xi), np.sin(2.0 * xi)
    ex = np.exp(X)
    emx = 1.0 / ex
    ch, sh = 0.5 * (ex + emx), 0.5 * (ex - emx)
    ch2, sh2 = 0.5 * (ex * ex + emx * emx), 0.5 * (ex * ex - emx * emx)
    rho = rho + shift_amp + 0.5 * np.log(ch2 - c2 * sh2)
    xi = xi + np.arctan2(s2 * sh, ch - c2 * sh)
    return rho, xi


def _split_run(rho0, xi0, rot, amp, X, t):
    """Strang splitting: half rotation, exact squeeze, half rotation.

    ``rot`` and ``amp`` are per-step arrays, ``X`` has steps on its last axis.
    Returns rho, xi with nodes on the last axis.
    """
    n = rot.size
    rho = np.array(rho0, dtype=float)
    xi = np.array(xi0, dtype=float)
    rho, xi = np.broadcast_arrays(rho, xi, X[..., 0])[:2]
    rho, xi = rho.copy(), xi.copy()
    R = np.empty(rho.shape + (n + 1,))
    P = np.empty(rho.shape + (n + 1,))
    R[..., 0], P[..., 0] = rho, xi
    for k in range(n):
        xi = xi - 0.5 * rot[k]
        rho, xi = _squeeze(rho, xi, amp[k], X[..., k])
        xi = xi - 0.5 * rot[k]
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(xi))):
            raise IntegrationError(f"non-finite polar state at t={t[k + 1]}", time=t[k + 1])
        R[..., k + 1], P[..., k + 1] = rho, xi
    return R, P


def _default_C(xi0, shift):
    if xi0 == 0.0:
        return shift.E ** 0.25
    if xi0 == np.pi / 2:
        return shift.E ** -0.25
    return 1.0


def _check_domain(grid, shift, extend):
    if grid.nodes[0] != 0.0:
        raise DomainError("polar integration starts at t = 0")
    if not extend and grid.nodes[-1] > shift.tau * (1 + 1e-12):
        raise DomainError("grid extends past tau_E; pass extend=True to integrate further")
    if shift.c * grid.nodes[-1] >= 1:
        raise DomainError("grid reaches the singular time 1/c")


def integrate_polar(params, shift, xi0, noise, phase_cap=0.1, extend=False,
                    scheme="split", C=None):
    """Integrate (rho, xi) from rho(0)=0, xi(0)=xi0 on the grid of ``noise``.

    ``noise`` is the native-time Brownian motion B_E (one row per path is
    allowed). ``scheme="split"`` is the exact-squeeze Strang splitting;
    ``scheme="euler"`` is plain Euler-Maruyama after the exact rotation, kept
    for comparison.
    """
    grid = noise.grid
    _check_domain(grid, shift, extend)
    u, du, dt = _log_steps(grid, shift)
    rot = 2.0 * shift.c * np.sqrt(shift.E) * dt
    if phase_cap is not None and rot.max() > phase_cap * (1 + 1e-6):
        raise ConfigError(f"grid rotates {rot.max():.3g} rad per step, above the cap {phase_cap}")
    sigma = np.sqrt(2.0 / params.beta) if np.isfinite(params.beta) else 0.0
    alpha = params.a + 0.5
    dBt = np.sqrt(du / dt) * np.diff(noise.values, axis=-1)
    C = _default_C(xi0, shift) if C is None else C
    if scheme == "split":
        X = alpha * du + sigma * dBt
        rho, xi = _split_run(0.0, xi0, rot, np.zeros_like(rot), X, grid.nodes)
    elif scheme == "euler":
        rho, xi = _euler_polar(params, shift, xi0, noise, sigma, alpha)
    else:
        raise UsageError(f"unknown scheme {scheme!r}")
    return PolarPair(grid, RealPath(grid, rho), RealPath(grid, xi), float(C))


def _euler_polar(params, shift, xi0, noise, sigma, alpha):
    c, sqE, ib = shift.c, np.sqrt(shift.E), 0.0 if np.isinf(params.beta) else 1.0 / params.beta

    def lam(t):
        return c / (1.0 - c * t)

    def drift(x, t):
        r2, r4 = 2.0 * x[..., 1], 4.0 * x[..., 1]
        d = np.empty_like(x)
        d[..., 0] = (ib - alpha * np.cos(r2) - ib * np.cos(r4)) * lam(t)
        d[..., 1] = (alpha * np.sin(r2) + ib * np.sin(r4)) * lam(t)
        return d

    def diffusion(x, t):
        g = np.empty_like(x)
        g[..., 0] = -sigma * np.cos(2.0 * x[..., 1]) * np.sqrt(lam(t))
        g[..., 1] = sigma * np.sin(2.0 * x[..., 1]) * np.sqrt(lam(t))
        return g

    def rotation(x, t0, t1):
        y = x.copy()
        y[..., 1] -= 2.0 * c * sqE * (t1 - t0)
        return y

    lead = noise.values.shape[:-1]
    init = np.zeros(lead + (2,))
    init[..., 1] = xi0
    out = integrate_sde(drift, diffusion, init, noise.grid, noise, rotation)
    out = np.moveaxis(out, 0, -1)
    return out[..., 0, :], out[..., 1, :]


@dataclass(frozen=True)
class FundamentalPair:
    """Polar coordinates of f and g driven by one noise path (or a batch of paths)."""
    f: PolarPair
    g: PolarPair
    noise: RealPath
    seed: object = field(default=None)

    @property
    def grid(self):
        return self.f.grid

    @property
    def delta_rho(self):
        return self.g.rho.values - self.f.rho.values

    @property
    def delta_xi(self):
        return self.g.xi.values - self.f.xi.values

    @property
    def sum_rho(self):
        return self.g.rho.values + self.f.rho.values

    @property
    def sum_xi(self):
        return self.g.xi.values + self.f.xi.values

    @property
    def wronskian(self):
        """e^{rho_f + rho_g} sin(xi_g - xi_f); identically 1 for the exact flow."""
        return np.exp(self.sum_rho) * np.sin(self.delta_xi)

    def path(self, i):
        """The i-th path of a batched pair."""
        pick = lambda p: PolarPair(p.grid, RealPath(p.grid, p.rho.values[i]),
                                   RealPath(p.grid, p.xi.values[i]), p.C)
        seed = self.seed[i] if isinstance(self.seed, (list, tuple)) else self.seed
        return FundamentalPair(pick(self.f), pick(self.g),
                               RealPath(self.grid, self.noise.values[i]), seed)


def fundamental_pair(params, shift, seed, grid=None, phase_cap=0.1, max_step=0.01,
                     t_end=None, breakpoints=(), scheme="split", noise=None):
    """f (xi0 = 0) and g (xi0 = pi/2) driven by one B_E path per seed.

    ``seed`` may be one RngSeed or a sequence of them (a batch of paths).
    """
    if grid is None:
        grid = polar_grid(shift, phase_cap, max_step, t_end, breakpoints)
    if noise is None:
        seeds = [seed] if isinstance(seed, RngSeed) else list(seed)
        vals = np.stack([sample_brownian(s, grid).values for s in seeds])
        if isinstance(seed, RngSeed):
            vals = vals[0]
        noise = RealPath(grid, vals)
    extend = grid.nodes[-1] > shift.tau * (1 + 1e-12)
    _check_domain(grid, shift, extend)
    if scheme == "split":
        # integrate both solutions at once: they share the noise and the grid
        u, du, dt = _log_steps(grid, shift)
        rot = 2.0 * shift.c * np.sqrt(shift.E) * dt
        if phase_cap is not None and rot.max() > phase_cap * (1 + 1e-6):
            raise ConfigError(f"grid rotates {rot.max():.3g} rad per step, above the cap {phase_cap}")
        sigma = np.sqrt(2.0 / params.beta) if np.isfinite(params.beta) else 0.0
        X = (params.a + 0.5) * du + sigma * np.sqrt(du / dt) * np.diff(noise.values, axis=-1)
        xi0 = np.array([0.0, np.pi / 2]).reshape((2,) + (1,) * (X.ndim - 1))
        rho, xi = _split_run(0.0, xi0, rot, np.zeros_like(rot), X[None], grid.nodes)
        f = PolarPair(grid, RealPath(grid, rho[0]), RealPath(grid, xi[0]), shift.E ** 0.25)
        g = PolarPair(grid, RealPath(grid, rho[1]), RealPath(grid, xi[1]), shift.E ** -0.25)
    else:
        f = integrate_polar(params, shift, 0.0, noise, phase_cap, extend, scheme)
        g = integrate_polar(params, shift, np.pi / 2, noise, phase_cap, extend, scheme)
    return FundamentalPair(f, g, noise, seed)


def solutions_from_polar(pair, shift, B, params, t=None):
    """(h(eta(t)), h'(eta(t))) for the solution carried by ``pair``.

    ``B`` holds B(eta(t)) on the pair's grid (see :func:`bessel_time_noise`).
    ``t`` selects nodes; default all nodes.
    """
    nodes = pair.grid.nodes
    idx = slice(None) if t is None else _node_index(nodes, t)
    et = 2.0 * log_time(nodes[idx], shift.c)
    p = np.exp(-params.a * et - _noise_scale(params.beta) * B.values[..., idx])
    amp = pair.C * p ** -0.5 * np.exp(pair.rho.values[..., idx])
    xi = pair.xi.values[..., idx]
    E4 = shift.E ** 0.25
    return amp * np.exp(0.25 * et) / E4 * np.cos(xi), amp * E4 * np.exp(-0.25 * et) * np.sin(xi)


def _node_index(nodes, t):
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(nodes, t)
    idx = np.clip(idx, 0, nodes.size - 1)
    lo = np.clip(idx - 1, 0, nodes.size - 1)
    idx = np.where(np.abs(nodes[lo] - t) < np.abs(nodes[idx] - t), lo, idx)
    if np.any(np.abs(nodes[idx] - t) > 1e-12 * max(1.0, abs(nodes[-1]))):
        raise DomainError("requested time is not a grid node")
    return idx


def bessel_matrix(pairs, shift, index=None):
    """Time-changed coefficient matrix from polar coordinates.

    Returns (full, hyperbolic, oscillatory), each with shape (..., 2, 2);
    ``index`` selects nodes (default: all). ``full`` is assembled as the
    rank-one product c v v^T with v = (e^{rho_g} cos xi_g, e^{rho_f} cos xi_f).
    """
    sl = slice(None) if index is None else index
    rf, rg = pairs.f.rho.values[..., sl], pairs.g.rho.values[..., sl]
    xf, xg = pairs.f.xi.values[..., sl], pairs.g.xi.values[..., sl]
    dr, dx = rg - rf, xg - xf
    s = np.sin(dx)
    if np.any(s <= 0):
        bad = np.argwhere(np.atleast_1d(s <= 0))[0]
        raise IntegrityError(f"sin(xi_g - xi_f) <= 0 at node {tuple(bad)}: integrator breakdown")
    c = shift.c
    k = np.exp(-dr)
    hyp = np.empty(np.shape(dr) + (2, 2))
    pref = c / (2.0 * k * s)
    hyp[..., 0, 0] = pref
    hyp[..., 0, 1] = hyp[..., 1, 0] = pref * k * np.cos(dx)
    hyp[..., 1, 1] = pref * k * k
    osc = np.empty_like(hyp)
    osc[..., 0, 0] = 0.5 * c * np.exp(2 * rg) * np.cos(2 * xg)
    osc[..., 0, 1] = osc[..., 1, 0] = 0.5 * c * np.exp(rf + rg) * np.cos(xf + xg)
    osc[..., 1, 1] = 0.5 * c * np.exp(2 * rf) * np.cos(2 * xf)
    v0, v1 = np.exp(rg) * np.cos(xg), np.exp(rf) * np.cos(xf)
    full = np.empty_like(hyp)
    full[..., 0, 0] = c * v0 * v0
    full[..., 0, 1] = full[..., 1, 0] = c * v0 * v1
    full[..., 1, 1] = c * v1 * v1
    return full, hyp, osc


def bessel_field(pairs, shift):
    """The time-changed Bessel coefficient matrix as a CoefficientMatrixField."""
    from .spectral import CoefficientMatrixField
    full, _, _ = bessel_matrix(pairs, shift)
    return CoefficientMatrixField(pairs.grid.nodes, full, right_end=1.0 / shift.c)


def deterministic_bessel_reference(a, E, t):
    """(f, f', g, g') at Bessel time t for beta = infinity (B = 0).

    f(t) = e^{at/2} (C J_a(x) + C' Y_a(x)) with x = 2 sqrt(E) e^{-t/2}, with the
    constants matched to f(0)=1, f'(0)=0 (and g(0)=0, g'(0)=1).
    """
    t = np.asarray(t, dtype=float)
    x0 = 2.0 * np.sqrt(E)
    M = np.array([[special.jv(a, x0), special.yv(a, x0)],
                  [0.5 * a * special.jv(a, x0) - 0.5 * x0 * special.jvp(a, x0),
                   0.5 * a * special.yv(a, x0) - 0.5 * x0 * special.yvp(a, x0)]])
    cf = np.linalg.solve(M, [1.0, 0.0])
    cg = np.linalg.solve(M, [0.0, 1.0])
    x = x0 * np.exp(-0.5 * t)
    J, Y = special.jv(a, x), special.yv(a, x)
    Jp, Yp = special.jvp(a, x), special.yvp(a, x)
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(Yp))):
        raise IntegrationError("Bessel evaluation overflowed")
    grow = np.exp(0.5 * a * t)
    out = []
    for cc in (cf, cg):
        h = grow * (cc[0] * J + cc[1] * Y)
        hp = 0.5 * a * h - 0.5 * x * grow * (cc[0] * Jp + cc[1] * Yp)
        out += [h, hp]
    out = [np.where(t == 0, v0, v) for v, v0 in zip(out, (1.0, 0.0, 0.0, 1.0))]
    return tuple(float(v) if v.ndim == 0 else v for v in out)


def varpi(t, B, params):
    """int_0^t exp(a s + (2/sqrt(beta)) B(s)) ds by the trapezoid rule on B's grid."""
    s = B.grid.nodes
    integrand = np.exp(params.a * s + _noise_scale(params.beta) * B.values)
    cum = np.concatenate([np.zeros(integrand.shape[:-1] + (1,)),
                          np.cumsum(0.5 * (integrand[..., 1:] + integrand[..., :-1]) * np.diff(s),
                                    axis=-1)], axis=-1)
    return RealPath(B.grid, cum)(t)


def weyl_classification(params):
    """Limit circle at infinity iff |a| < 1."""
    return "limit_circle_infinity" if abs(params.a) < 1 else "limit_point_infinity"


def weyl_bound_check(B, params, delta, horizon):
    """Smallest constants with w <= C e^{-(1+a-delta)t} and varpi^2 w <= C e^{-(1-a-3delta)t}."""
    if not abs(params.a) < 1:
        raise UsageError("the envelope bounds are stated for |a| < 1")
    if not 0 < delta < min((1 - params.a) / 3, 0.5):
        raise DomainError("delta must lie in (0, min((1-a)/3, 1/2))")
    s = B.grid.nodes
    keep = s <= horizon * (1 + 1e-12)
    s = s[keep]
    _, w = pw_weights(s, B, params)
    vp = varpi(s, B, params)
    a = params.a
    return {
        "C_w": float(np.max(w * np.exp((1 + a - delta) * s))),
        "C_varpi_w": float(np.max(vp ** 2 * w * np.exp((1 - a - 3 * delta) * s))),
    }


@dataclass(frozen=True)
class Unshift:
    """Maps between the shifted operator and the unshifted one started at log E."""
    E: float

    def eigenparameter(self, z):
        return 1.0 + np.asarray(z) / (2.0 * np.sqrt(self.E))

    def time(self, t):
        return np.asarray(t, dtype=float) + np.log(self.E)

    def translate(self, B):
        """B(. + log E) - B(log E) for a path B sampled in Bessel time."""
        s = B.grid.nodes
        start = np.log(self.E)
        keep = s >= start - 1e-12
        nodes = s[keep] - start
        vals = B.values[..., keep] - B(start)[..., None] if B.values.ndim > 1 else B.values[keep] - B(start)
        if nodes[0] > 1e-12:
            raise DomainError("log E must be a grid node of the path")
        nodes[0] = 0.0
        return RealPath(TimeGrid(nodes), vals)


def unshift_solution(shift):
    return Unshift(shift.E)


# --- reversed time -----------------------------------------------------------

@dataclass(frozen=True)
class ReversedPolar:
    grid: TimeGrid
    r: RealPath
    xi: RealPath
    lam: float


def reversed_grid(lam, T, phase_cap=0.1, max_step=0.01, min_step=2e-3):
    """Grid on [1, T] for the reversed SDEs.

    The phase turns at rate sqrt(lam) e^{t/2}. Where resolving it would need
    gaps below ``min_step``, gaps are floored and the rotation is applied
    exactly over many turns, so the slow coefficients see the phase at
    effectively random positions (stroboscopic averaging).
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    if not T > 1:
        raise DomainError("T must exceed 1")
    rate = lambda t: np.sqrt(lam) * np.exp(0.5 * t)
    return make_grid(1.0, T, max_step, phase_cap, rate, min_step=min_step)


def reversed_initial_data(f_m1, fp_m1, lam):
    """(r(1), xi(1)) from f(-1), f'(-1) via the reconstruction identity."""
    x = lam ** 0.25 * np.exp(0.25) * np.asarray(f_m1, dtype=float)
    y = -lam ** -0.25 * np.exp(-0.25) * np.asarray(fp_m1, dtype=float)
    return 0.5 * np.log(x * x + y * y), np.arctan2(y, x)


def reversed_solution(rp, t=None):
    """(f(-t), f'(-t)) from reversed polar coordinates."""
    s = rp.grid.nodes if t is None else np.asarray(t, dtype=float)
    r = rp.r.values if t is None else rp.r(s)
    xi = rp.xi.values if t is None else rp.xi(s)
    f = rp.lam ** -0.25 * np.exp(r - 0.25 * s) * np.cos(xi)
    fp = -rp.lam ** 0.25 * np.exp(r + 0.25 * s) * np.sin(xi)
    return f, fp


def integrate_reversed_polar(params, lam, init, noise, grid=None):
    """Reversed-time polar SDEs on [1, T] driven by the negative-time noise.

    In the variables u = (S y, y'/S), S = lam^{1/4} e^{t/4}, the non-rotating
    part is the diagonal flow u1 -> u1 e^{dt/4},
    u2 -> u2 exp(-(a + 1/4) dt + (2/sqrt(beta)) dB), solved exactly and
    composed with the exact rotation by Strang splitting.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive")
    grid = noise.grid if grid is None else grid
    if grid.nodes[0] != 1.0:
        raise DomainError("the reversed grid starts at t = 1")
    if noise.values.shape[-1] != len(grid):
        raise DomainError("noise must be sampled on the integration grid")
    t = grid.nodes
    dt = np.diff(t)
    rot = 2.0 * np.sqrt(lam) * (np.exp(0.5 * t[1:]) - np.exp(0.5 * t[:-1]))
    db = np.diff(noise.values, axis=-1)
    A = 0.25 * dt
    Bv = -(params.a + 0.25) * dt + _noise_scale(params.beta) * db
    r, xi = _split_run(init[0], init[1], rot, np.zeros_like(rot), 0.5 * (Bv - A), t)
    r = r + np.concatenate([[0.0], np.cumsum(0.5 * (A + Bv), axis=-1)]) if np.ndim(Bv) == 1 else \
        r + np.concatenate([np.zeros(Bv.shape[:-1] + (1,)), np.cumsum(0.5 * (A + Bv), axis=-1)], axis=-1)
    return ReversedPolar(grid, RealPath(grid, r), RealPath(grid, xi), float(lam))
