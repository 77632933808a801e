"""Hyperbolic Brownian motion and the stochastic sine canonical system.

The motion solves d(x + iy) = (2/sqrt(beta)) y dW in the upper half-plane,
started at i, in logarithmic time s. Its imaginary part is the geometric
Brownian motion y(s) = exp((2/sqrt(beta)) Im W(s) - 2s/beta), which is used
directly, and x is the Ito sum of (2/sqrt(beta)) y dRe W. The sine system
lives on [0, 1) with s = -log(1 - t).
"""
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError
from .stochastic import RealPath, TimeGrid, log_time

__all__ = ["HyperbolicPath", "SineBoundary", "simulate_hbm", "sine_matrix",
           "sine_field", "sine_right_boundary", "sine_boundary_vector"]


@dataclass(frozen=True)
class HyperbolicPath:
    """Sampled hyperbolic Brownian motion; ``x`` and ``y`` have nodes on the last axis."""
    grid: TimeGrid
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in ("x", "y"):
            v = np.array(getattr(self, name), dtype=float)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if np.any(self.y <= 0):
            raise DomainError("the imaginary part must stay positive")

    def at(self, s):
        """(x, y) at log times ``s`` by linear interpolation."""
        return RealPath(self.grid, self.x)(s), RealPath(self.grid, self.y)(s)


@dataclass(frozen=True)
class SineBoundary:
    """Right boundary vector (x at the horizon, 1) and the log time it was read at."""
    vector: np.ndarray
    horizon: float


def simulate_hbm(beta, noise):
    """Hyperbolic Brownian motion from i driven by the complex motion ``noise``.

    ``noise`` is a ComplexPath in log time starting at 0; leading axes of its
    values are independent paths.
    """
    if not beta > 0:
        raise DomainError("beta must be positive")
    s = noise.grid.nodes
    if s[0] != 0.0:
        raise DomainError("the noise grid must start at log time 0")
    W = noise.values
    if np.isinf(beta):
        zeros = np.zeros(W.shape)
        return HyperbolicPath(noise.grid, zeros, np.ones(W.shape))
    k = 2.0 / np.sqrt(beta)
    y = np.exp(k * W.imag - 2.0 * s / beta)
    dx = k * y[..., :-1] * np.diff(W.real, axis=-1)
    x = np.concatenate([np.zeros(W.shape[:-1] + (1,)), np.cumsum(dx, axis=-1)], axis=-1)
    return HyperbolicPath(noise.grid, x, y)


def sine_matrix(x, y):
    """(1/(2y)) [[1, -x], [-x, x^2 + y^2]]; broadcasts over arrays, last two axes 2x2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise DomainError("sine_matrix needs y > 0")
    x, y = np.broadcast_arrays(x, y)
    R = np.empty(x.shape + (2, 2))
    R[..., 0, 0] = 0.5 / y
    R[..., 0, 1] = R[..., 1, 0] = -0.5 * x / y
    R[..., 1, 1] = 0.5 * (x * x + y * y) / y
    return R


def sine_field(beta, noise, t_nodes=None):
    """The sine coefficient matrix t -> R(B(-log(1 - t))) as a CoefficientMatrixField.

    Without ``t_nodes`` the field is sampled at t = 1 - e^{-s} for the noise
    nodes s; otherwise at the given native times, interpolating the motion.
    """
    from .spectral import CoefficientMatrixField
    hbm = simulate_hbm(beta, noise)
    if t_nodes is None:
        t = -np.expm1(-hbm.grid.nodes)
        x, y = hbm.x, hbm.y
    else:
        t = np.asarray(t_nodes, dtype=float)
        x, y = hbm.at(log_time(t))
    return CoefficientMatrixField(t, sine_matrix(x, y), right_end=1.0)


def sine_boundary_vector(path):
    """(x at the last node, 1), for any beta; a truncation when beta <= 2."""
    x = np.asarray(path.x)[..., -1]
    v = np.stack([x, np.ones_like(x)], axis=-1)
    return SineBoundary(v, float(path.grid.nodes[-1]))


def sine_right_boundary(path, beta):
    """Estimate of (Re B(infinity), 1) read at the last log time of ``path``."""
    if not beta > 2:
        raise UsageError("the limit Re B(infinity) exists only for beta > 2")
    return sine_boundary_vector(path)
