"""Coupling of the real Bessel-side noise B_E with a complex Brownian motion W.

On a partition c t_j = 1 - (1 + E^{-p})^{-j} every piece of log time has the
same length sigma^2 = log(1 + E^{-p}). The oscillatory integral of
i e^{-2i theta} sqrt(2 lambda) dB_E over a piece, with the deterministic phase
theta(t) = pi/2 - 2 c sqrt(E) t, is Gaussian with covariance Sigma_j; it is
whitened to variance sigma^2, rotated by the random phase offset of the
g-solution, and used as the increment of W over that piece. W is filled in
between the pins with independent complex Brownian bridges.
"""
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, CouplingError, DomainError
from .stochastic import (ComplexPath, RealPath, RngSeed, TimeGrid, log_time,
                         standard_normals)

__all__ = [
    "CouplingConfig", "CouplingPartition", "CoupledNoise", "GbmReference",
    "coupling_partition", "theta_covariance", "build_coupled_w",
    "oscillatory_integral", "deviation_sup", "averaging_sup", "gbm_reference",
    "gbm_compare", "rehbm_compare", "window_end",
]


@dataclass(frozen=True)
class CouplingConfig:
    alpha: float = 0.3
    delta: float = 0.05

    def __post_init__(self):
        if not 0 < self.alpha < 0.5:
            raise ConfigError("alpha must lie in (0, 1/2)")
        if not 0 < self.delta < self.alpha / 3:
            raise ConfigError("delta must lie in (0, alpha/3)")

    @property
    def p(self):
        return 2.0 * self.alpha / 3.0


@dataclass(frozen=True)
class CouplingPartition:
    t: np.ndarray
    N: int
    sigma2: float
    c: float
    E: float

    def theta(self, t):
        return np.pi / 2 - 2.0 * self.c * np.sqrt(self.E) * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class CoupledNoise:
    """B_E, the coupled W (in log time) and the per-piece records."""
    B_E: RealPath
    W: ComplexPath
    B_theta: np.ndarray
    Sigma: np.ndarray
    sigma2: float
    W_pieces: np.ndarray
    pin_index: np.ndarray


@dataclass(frozen=True)
class GbmReference:
    Z: RealPath


def coupling_partition(shift, config, max_pieces=10 ** 6):
    """Partition points t_0 = 0 < ... < t_N = tau_E with equal log-time pieces."""
    E = shift.E
    x = E ** -config.p
    sigma2 = float(np.log1p(x))
    N = int(np.ceil(np.log(E) / (2.0 * sigma2)))
    if N > max_pieces:
        raise DomainError(f"partition would need {N} pieces")
    j = np.arange(N + 1, dtype=float)
    t = -np.expm1(-j * sigma2) / shift.c
    t[0] = 0.0
    t[-1] = shift.tau
    if N >= 2 and not t[-2] < t[-1]:
        raise DomainError("partition is not increasing")
    return CouplingPartition(t, N, sigma2, shift.c, E)


def theta_covariance(u0, u1, E):
    """Covariance of (Re, Im) of the theta-phase oscillatory integral over log times [u0, u1].

    With x = e^{-u} and k = 8 sqrt(E), 4 theta = 2 pi - k (1 - x) and du = -dx/x,
    so the oscillating parts reduce to sine and cosine integrals.
    """
    k = 8.0 * np.sqrt(E)
    x0, x1 = np.exp(-u0), np.exp(-u1)
    si0, ci0 = special.sici(k * x0)
    si1, ci1 = special.sici(k * x1)
    # int cos(4 theta) du and int sin(4 theta) du
    C = np.cos(k) * (ci0 - ci1) + np.sin(k) * (si0 - si1)
    S = -(np.sin(k) * (ci0 - ci1) - np.cos(k) * (si0 - si1))
    v = u1 - u0
    return np.array([[v - C, S], [S, v + C]])


def _whitener(Sigma, sigma2, j):
    """sigma Sigma^{-1/2} by the closed-form 2x2 eigendecomposition."""
    a, b, d = Sigma[0, 0], Sigma[0, 1], Sigma[1, 1]
    mean = 0.5 * (a + d)
    r = np.hypot(0.5 * (a - d), b)
    lo, hi = mean - r, mean + r
    if not lo > 1e-12 * hi:
        raise CouplingError(f"covariance of piece {j} is numerically singular", interval=j)
    if r == 0:
        return np.sqrt(sigma2 / mean) * np.eye(2)
    Mx = np.array([[0.5 * (a - d), b], [b, 0.5 * (d - a)]]) / r
    P_hi, P_lo = 0.5 * (np.eye(2) + Mx), 0.5 * (np.eye(2) - Mx)
    return np.sqrt(sigma2) * (P_hi / np.sqrt(hi) + P_lo / np.sqrt(lo))


def _bessel_increments(B_E, shift):
    """sqrt(2) dBtilde per gap: the Brownian increments in log time, scaled by sqrt 2."""
    u = log_time(B_E.grid.nodes, shift.c)
    du, dt = np.diff(u), np.diff(B_E.grid.nodes)
    return u, np.sqrt(2.0 * du / dt) * np.diff(B_E.values, axis=-1)


def _pin_indices(nodes, times):
    idx = np.searchsorted(nodes, times)
    idx = np.clip(idx, 0, nodes.size - 1)
    if np.any(np.abs(nodes[idx] - times) > 1e-12 * max(1.0, nodes[-1])):
        raise DomainError("the noise grid must contain every partition point")
    return idx


def build_coupled_w(B_E, xi_g, partition, shift, seed_fill, horizon=None, tail_step=0.01):
    """Complex Brownian motion W coupled to B_E through the g-phase.

    ``B_E`` and ``xi_g`` share a grid containing the partition points; their
    leading axes index paths. ``seed_fill`` (one RngSeed per path, or one for
    an unbatched call) drives the bridges between pins and, when ``horizon``
    exceeds the log time of tau_E, the independent continuation of W up to it.
    """
    nodes = B_E.grid.nodes
    pins = _pin_indices(nodes, partition.t)
    u, dB2 = _bessel_increments(B_E, shift)
    th = partition.theta(nodes[:-1])
    osc = (np.sin(2 * th) + 1j * np.cos(2 * th)) * dB2
    cum = np.concatenate([np.zeros(osc.shape[:-1] + (1,)), np.cumsum(osc, axis=-1)], axis=-1)
    B_theta = np.diff(cum[..., pins], axis=-1)
    N = partition.N
    sigma2 = partition.sigma2
    Sigma = np.stack([theta_covariance(u[pins[j]], u[pins[j + 1]], shift.E) for j in range(N)])
    whiten = np.stack([_whitener(Sigma[j], sigma2, j) for j in range(N)])
    re, im = B_theta.real, B_theta.imag
    wr = whiten[:, 0, 0] * re + whiten[:, 0, 1] * im
    wi = whiten[:, 1, 0] * re + whiten[:, 1, 1] * im
    xi = np.asarray(xi_g.values)
    offset = xi[..., pins[:-1]] - partition.theta(nodes[pins[:-1]])
    W_pieces = np.exp(-2j * offset) * (wr + 1j * wi)
    pin_vals = np.concatenate([np.zeros(W_pieces.shape[:-1] + (1,)), np.cumsum(W_pieces, axis=-1)],
                              axis=-1)

    # log-time grid of W: the noise nodes, then an optional continuation
    u_nodes = u
    if horizon is not None and horizon > u[-1]:
        n_tail = int(np.ceil((horizon - u[-1]) / tail_step))
        u_nodes = np.concatenate([u, np.linspace(u[-1], horizon, n_tail + 1)[1:]])
    seeds = [seed_fill] if isinstance(seed_fill, RngSeed) else list(seed_fill)
    lead = B_E.values.shape[:-1]
    n_paths = int(np.prod(lead)) if lead else 1
    if len(seeds) != n_paths:
        raise DomainError("need one fill seed per path")
    du = np.diff(u_nodes)
    W = np.empty((n_paths, u_nodes.size), complex)
    pin_flat = pin_vals.reshape(n_paths, -1)
    for i, s in enumerate(seeds):
        z = standard_normals(s, du.size, width=2)
        dZ = np.sqrt(du) * (z[:, 0] + 1j * z[:, 1])
        Z = np.concatenate([[0.0], np.cumsum(dZ)])
        w = np.empty(u_nodes.size, complex)
        for j in range(N):
            a, b = pins[j], pins[j + 1]
            frac = (u[a:b + 1] - u[a]) / (u[b] - u[a])
            bridge = Z[a:b + 1] - Z[a] - frac * (Z[b] - Z[a])
            w[a:b + 1] = pin_flat[i, j] + frac * (pin_flat[i, j + 1] - pin_flat[i, j]) + bridge
        w[pins] = pin_flat[i]
        last = pins[-1]
        w[last + 1:] = pin_flat[i, -1] + (Z[last + 1:] - Z[last])
        W[i] = w
    W = W.reshape(lead + (u_nodes.size,))
    return CoupledNoise(B_E, ComplexPath(TimeGrid(u_nodes, "log_time"), W),
                        B_theta, Sigma, sigma2, W_pieces, pins)


def oscillatory_integral(xi, B_E, shift, t=None):
    """Ito sums of i e^{-2i xi} sqrt(2c/(1 - cs)) dB_E.

    Returns the running integral as a ComplexPath, or its values at ``t``.
    """
    _, dB2 = _bessel_increments(B_E, shift)
    incr = 1j * np.exp(-2j * np.asarray(xi.values)[..., :-1]) * dB2
    vals = np.concatenate([np.zeros(incr.shape[:-1] + (1,)), np.cumsum(incr, axis=-1)], axis=-1)
    path = ComplexPath(B_E.grid, vals)
    return path if t is None else path(t)


def window_end(shift, config):
    """Native time with c t = 1 - E^{-1/2 + alpha}."""
    return (1.0 - shift.E ** (-0.5 + config.alpha)) / shift.c


def _window(nodes, shift, config):
    return nodes <= window_end(shift, config) * (1 + 1e-12)


def deviation_sup(coupled, xi_g, shift, config):
    """sup over the alpha-window of |oscillatory integral - W(log time)|."""
    B_E = coupled.B_E
    nodes = B_E.grid.nodes
    n = nodes.size
    osc = oscillatory_integral(xi_g, B_E, shift).values
    Wv = coupled.W.values[..., :n]
    keep = _window(nodes, shift, config)
    return np.max(np.abs(osc - Wv)[..., keep], axis=-1)


def averaging_sup(xi, k, shift, window_end):
    """sup over t <= window_end of |int_0^t e^{i k xi(s)} c/(1 - cs) ds|.

    The integrand is integrated in log time u (where c ds/(1 - cs) = du) by
    the trapezoid rule on the nodes of ``xi``.
    """
    if k == 0 or int(k) != k:
        raise DomainError("k must be a nonzero integer")
    nodes = xi.grid.nodes
    if window_end > shift.tau * (1 + 1e-12):
        raise DomainError("window_end must not exceed tau_E")
    u = log_time(nodes, shift.c)
    f = np.exp(1j * k * np.asarray(xi.values))
    seg = 0.5 * (f[..., 1:] + f[..., :-1]) * np.diff(u)
    cum = np.concatenate([np.zeros(seg.shape[:-1] + (1,)), np.cumsum(seg, axis=-1)], axis=-1)
    keep = nodes <= window_end * (1 + 1e-12)
    return np.max(np.abs(cum[..., keep]), axis=-1)


def gbm_reference(coupled, shift, beta):
    """Z = exp((2/sqrt(beta)) Im W(u) - (2/beta) u) on the native grid of B_E."""
    nodes = coupled.B_E.grid.nodes
    u = log_time(nodes, shift.c)
    Wim = coupled.W.values[..., :nodes.size].imag
    if np.isinf(beta):
        Z = np.ones(Wim.shape)
    else:
        Z = np.exp(2.0 / np.sqrt(beta) * Wim - 2.0 / beta * u)
    return GbmReference(RealPath(coupled.B_E.grid, Z))


def gbm_compare(pair_g, coupled, shift, config, beta):
    """sup|2 rho_g + log Z| and sup|e^{-2 rho_g} - Z| over the alpha-window."""
    Z = gbm_reference(coupled, shift, beta).Z.values
    rho = pair_g.rho.values
    keep = _window(pair_g.grid.nodes, shift, config)
    sup_log = np.max(np.abs(2 * rho + np.log(Z))[..., keep], axis=-1)
    sup_lin = np.max(np.abs(np.exp(-2 * rho) - Z)[..., keep], axis=-1)
    return {"sup_log": sup_log, "sup_lin": sup_lin}


def rehbm_compare(pairs, coupled, shift, config, beta):
    """sup over the alpha-window of |-e^{-drho} cos dxi - (2/sqrt(beta)) int Z dRe W|."""
    Z = gbm_reference(coupled, shift, beta).Z.values
    n = pairs.grid.nodes.size
    dRe = np.diff(coupled.W.values[..., :n].real, axis=-1)
    k = 0.0 if np.isinf(beta) else 2.0 / np.sqrt(beta)
    x = np.concatenate([np.zeros(dRe.shape[:-1] + (1,)),
                        np.cumsum(k * Z[..., :-1] * dRe, axis=-1)], axis=-1)
    bessel = -np.exp(-pairs.delta_rho) * np.cos(pairs.delta_xi)
    keep = _window(pairs.grid.nodes, shift, config)
    return np.max(np.abs(bessel - x)[..., keep], axis=-1)
