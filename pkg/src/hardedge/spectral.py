"""Transfer matrices, Weyl-Titchmarsh functions and spectra of canonical systems.

A canonical system J u' = -z H u, J = [[0, -1], [1, 0]], is integrated with H
replaced on each gap of its sampling grid by the trapezoid average of the
two end samples. The step map is then the exact exponential of the
traceless generator z J H dt,

    exp(M) = cosh(s) I + (sinh(s)/s) M,    s^2 = -(z dt)^2 det H,

so every computed transfer matrix is unimodular up to rounding.
"""
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateBoundaryError, DomainError, RangeError,
                     ResolutionError, UsageError)
from .stochastic import TimeGrid

__all__ = [
    "CoefficientMatrixField", "TransferMatrix", "BoundaryData", "SpectralMeasure",
    "transfer_matrix", "transfer_matrices", "weyl_m_limit_circle", "weyl_m_paired",
    "weyl_m_limit_point", "stieltjes_atom", "prufer_angle", "eigenvalues",
    "eigenfunction_mass", "spectral_measure", "herglotz_violation",
    "bessel_right_boundary_lc", "bessel_lc_oracle_direction",
    "bessel_right_boundary_beta_gt2", "solve_decaying_solution",
]


@dataclass(frozen=True)
class CoefficientMatrixField:
    """Samples of H at increasing nodes; leading axes of ``samples`` index paths.

    ``right_end`` is the right end b of the interval [0, b) on which the
    system lives (the samples may stop before it).
    """
    nodes: np.ndarray
    samples: np.ndarray
    right_end: float = None
    trace_integrable_right: bool = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        samples = np.array(self.samples, dtype=float)
        TimeGrid(nodes)
        if samples.shape[-3:] != (nodes.size, 2, 2):
            raise DomainError("samples must have shape (..., n_nodes, 2, 2)")
        if not np.all(np.isfinite(samples)):
            raise DomainError("coefficient samples must be finite")
        if np.any(samples[..., 0, 1] != samples[..., 1, 0]):
            raise DomainError("coefficient samples must be symmetric")
        tr = samples[..., 0, 0] + samples[..., 1, 1]
        det = samples[..., 0, 0] * samples[..., 1, 1] - samples[..., 0, 1] ** 2
        lam_min = 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4 * det, 0.0)))
        if np.any(lam_min < -1e-10 * np.maximum(np.abs(tr), 1e-300)) or np.any(tr < 0):
            raise DomainError("coefficient samples must be positive semidefinite")
        if not np.all(np.any(tr > 0, axis=-1)):
            raise DomainError("a coefficient field must be nonzero somewhere")
        right = nodes[-1] if self.right_end is None else float(self.right_end)
        if right < nodes[-1]:
            raise DomainError("right_end lies before the last node")
        for name, v in (("nodes", nodes), ("samples", samples)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "right_end", right)

    @property
    def interval(self):
        return (float(self.nodes[0]), self.right_end)

    @property
    def batch_shape(self):
        return self.samples.shape[:-3]

    def path(self, i):
        return CoefficientMatrixField(self.nodes, self.samples[i], self.right_end,
                                      self.trace_integrable_right)

    def trace(self):
        return self.samples[..., 0, 0] + self.samples[..., 1, 1]

    def truncate(self, t_end):
        """The field restricted to nodes <= t_end (t_end must be a node)."""
        k = int(np.searchsorted(self.nodes, t_end, side="right"))
        if k < 2 or abs(self.nodes[k - 1] - t_end) > 1e-12 * max(1.0, abs(t_end)):
            raise RangeError("truncation time must be a node past the first")
        return CoefficientMatrixField(self.nodes[:k], self.samples[..., :k, :, :],
                                      self.right_end, self.trace_integrable_right)


@dataclass(frozen=True)
class TransferMatrix:
    value: np.ndarray
    t: float
    z: complex


@dataclass(frozen=True)
class BoundaryData:
    """A right boundary condition u(b) parallel to a (possibly z-dependent) vector."""
    kind: str
    angle: float = None
    vector: np.ndarray = None
    evaluator: object = None

    def __post_init__(self):
        if self.kind == "angle":
            if not 0 <= self.angle < np.pi:
                raise DomainError("boundary angle must lie in [0, pi)")
        elif self.kind == "vector":
            v = np.array(self.vector, dtype=float)
            if v.shape[-1] != 2 or np.any(np.hypot(v[..., 0], v[..., 1]) == 0):
                raise DomainError("boundary vector must be a nonzero pair")
            object.__setattr__(self, "vector", v)
        elif self.kind == "z_dependent":
            if not callable(self.evaluator):
                raise DomainError("a z-dependent boundary needs an evaluator")
        else:
            raise DomainError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def from_angle(cls, phi):
        return cls("angle", angle=float(phi))

    @classmethod
    def from_vector(cls, v):
        return cls("vector", vector=v)

    def at(self, z):
        """Boundary vector(s) at spectral parameter z; last axis has length 2."""
        if self.kind == "angle":
            return np.array([np.cos(self.angle), np.sin(self.angle)])
        if self.kind == "vector":
            return self.vector
        return np.asarray(self.evaluator(z))


@dataclass(frozen=True)
class SpectralMeasure:
    """Atoms (locations, masses) inside a window; masses may be None."""
    locations: np.ndarray
    masses: np.ndarray
    window: tuple


# --- step maps ---------------------------------------------------------------

def _cosh_sinhc(q):
    """cosh(sqrt(q)) and sinh(sqrt(q))/sqrt(q), entire in q."""
    if np.iscomplexobj(q):
        s = np.sqrt(q)
        small = np.abs(q) < 1e-12
        s_safe = np.where(small, 1.0, s)
        return np.cosh(s), np.where(small, 1.0 + q / 6.0, np.sinh(s_safe) / s_safe)
    r = np.sqrt(np.abs(q))
    small = r < 1e-6
    r_safe = np.where(small, 1.0, r)
    pos = q >= 0
    ch = np.where(pos, np.cosh(r), np.cos(r))
    sc = np.where(small, 1.0 + q / 6.0,
                  np.where(pos, np.sinh(r_safe), np.sin(r_safe)) / r_safe)
    return ch, sc


def _step(h11, h12, h22, zd):
    """Entries (a, b, c, d) of exp(zd * J H) for symmetric H."""
    q = -(zd * zd) * (h11 * h22 - h12 * h12)
    ch, sc = _cosh_sinhc(q)
    k = sc * zd
    return ch - k * h12, -k * h22, k * h11, ch + k * h12


def _averaged(samples):
    """Trapezoid averages of H over each gap: three arrays with gaps on the last axis."""
    h = 0.5 * (samples[..., 1:, :, :] + samples[..., :-1, :, :])
    return h[..., 0, 0], h[..., 0, 1], h[..., 1, 1]


def _batch_z(z, batch_ndim):
    z = np.asarray(z)
    return z, (slice(None),) * batch_ndim + (None,) * z.ndim


def transfer_matrices(H, z, t=None):
    """T(t, z) for a batch of paths and spectral parameters.

    Output shape is batch_shape + z.shape + (2, 2). ``t`` defaults to the last node.
    """
    nodes = H.nodes
    t = nodes[-1] if t is None else float(t)
    tol = 1e-12 * max(1.0, abs(nodes[-1]))
    if t < nodes[0] - tol or t > nodes[-1] + tol:
        raise RangeError(f"t={t} lies outside the sampled interval")
    z, ix = _batch_z(z, len(H.batch_shape))
    h11, h12, h22 = _averaged(H.samples)
    dt = np.diff(nodes)
    k_full = int(np.searchsorted(nodes, t + tol, side="right")) - 1
    shape = H.batch_shape + z.shape
    dtype = complex if np.iscomplexobj(z) else float
    a = np.ones(shape, dtype)
    b = np.zeros(shape, dtype)
    c = np.zeros(shape, dtype)
    d = np.ones(shape, dtype)
    steps = [(k, dt[k]) for k in range(k_full)]
    if k_full < nodes.size - 1 and t - nodes[k_full] > tol:
        steps.append((k_full, t - nodes[k_full]))
    for k, h in steps:
        sa, sb, sc, sd = _step(h11[..., k][ix], h12[..., k][ix], h22[..., k][ix], z * h)
        a, b, c, d = sa * a + sb * c, sa * b + sb * d, sc * a + sd * c, sc * b + sd * d
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


def transfer_matrix(H, t, z):
    """T(t, z) with T(0, z) = I for a single field (or batch) and one z."""
    return TransferMatrix(transfer_matrices(H, z, t), float(t), complex(z))


# --- Weyl functions ----------------------------------------------------------

def _backward_ratio(H, z, w, paired=False):
    """v1/v2 for v = T(b, z)^{-1} w, propagated backward with renormalization.

    With ``paired`` the leading axes of z are the field's batch axes and its
    last axis lists spectral parameters per path.
    """
    if paired:
        z = np.asarray(z)
        if z.shape[:-1] != H.batch_shape:
            raise DomainError("paired z must have shape batch_shape + (K,)")
        ix = (Ellipsis, None)
        shape = z.shape
        n_z = 1
    else:
        z, ix = _batch_z(z, len(H.batch_shape))
        shape = H.batch_shape + z.shape
        n_z = z.ndim
    h11, h12, h22 = _averaged(H.samples)
    dt = np.diff(H.nodes)
    w = np.asarray(w)
    if w.ndim > 1 and w.shape[:-1] != shape:
        # per-path vectors broadcast over z
        w = w.reshape(w.shape[:-1] + (1,) * n_z + (2,))
    v1 = np.broadcast_to(w[..., 0], shape).astype(complex)
    v2 = np.broadcast_to(w[..., 1], shape).astype(complex)
    for k in range(dt.size - 1, -1, -1):
        sa, sb, sc, sd = _step(h11[..., k][ix], h12[..., k][ix], h22[..., k][ix], z * dt[k])
        v1, v2 = sd * v1 - sb * v2, -sc * v1 + sa * v2
        n = np.maximum(np.abs(v1), np.abs(v2))
        v1, v2 = v1 / n, v2 / n
    with np.errstate(divide="ignore", invalid="ignore"):
        m = v1 / v2
    return np.where(v2 == 0, complex(np.inf), m)


def weyl_m_paired(H, boundary, z):
    """Limit-circle Weyl function at per-path parameters z of shape batch_shape + (K,)."""
    return _backward_ratio(H, z, boundary.at(z), paired=True)


def weyl_m_limit_circle(H, boundary):
    """Weyl function z -> v1/v2 with v = T(b, z)^{-1} w(z).

    ``H`` is a CoefficientMatrixField (integrated over all its nodes) or a
    callable z -> TransferMatrix. The returned evaluator accepts scalar or
    array z and returns batch_shape + z.shape values.
    """
    if callable(H) and not isinstance(H, CoefficientMatrixField):
        def m_from_T(z):
            T = np.asarray(H(z).value)
            w = boundary.at(z)
            v1 = T[..., 1, 1] * w[..., 0] - T[..., 0, 1] * w[..., 1]
            v2 = -T[..., 1, 0] * w[..., 0] + T[..., 0, 0] * w[..., 1]
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(v2 == 0, complex(np.inf), v1 / v2)
        return m_from_T

    def m(z):
        return _backward_ratio(H, z, boundary.at(z))
    return m


def weyl_m_limit_point(H, z, probes=(0.0, np.pi / 2), schedule=None, tol=1e-6):
    """Two-probe evaluation of a limit-point Weyl function at one z.

    For each truncation b_n of the schedule (node times), evaluates the
    ratio for boundary angles ``probes`` and stops once they agree within
    ``tol``. Returns (value, radius, certified) with value the midpoint of
    the two probes and radius their distance; arrays for batched fields.
    """
    if len(probes) != 2 or probes[0] == probes[1]:
        raise DomainError("two distinct probe angles are needed")
    nodes = H.nodes
    if schedule is None:
        schedule = nodes[np.unique(np.geomspace(2, nodes.size, 12).astype(int)) - 1]
    z, ix = _batch_z(z, len(H.batch_shape))
    if z.ndim:
        raise DomainError("weyl_m_limit_point takes a scalar z")
    h11, h12, h22 = _averaged(H.samples)
    dt = np.diff(nodes)
    stops = set(int(np.argmin(np.abs(nodes - b))) for b in schedule)
    shape = H.batch_shape
    a = np.ones(shape, complex)
    b = np.zeros(shape, complex)
    c = np.zeros(shape, complex)
    d = np.ones(shape, complex)
    e = [np.array([np.cos(p), np.sin(p)]) for p in probes]
    value = radius = None
    for k in range(dt.size):
        sa, sb, sc, sd = _step(h11[..., k], h12[..., k], h22[..., k], z * dt[k])
        a, b, c, d = sa * a + sb * c, sa * b + sb * d, sc * a + sd * c, sc * b + sd * d
        # keep the product bounded; only ratios of its columns matter
        scale = np.maximum.reduce([np.abs(a), np.abs(b), np.abs(c), np.abs(d)])
        a, b, c, d = a / scale, b / scale, c / scale, d / scale
        if k + 1 in stops:
            ms = [(d * w[0] - b * w[1]) / (-c * w[0] + a * w[1]) for w in e]
            value = 0.5 * (ms[0] + ms[1])
            radius = np.abs(ms[0] - ms[1])
            if np.all(radius < tol):
                return value, radius, True
    return value, radius, False


def stieltjes_atom(m, t, eps_schedule=(1e-3, 1e-4), return_residue=False):
    """Point mass of the spectral measure at t from -i eps m(t + i eps).

    The last two schedule values are combined by linear Richardson
    extrapolation in eps; tiny negative results are clamped to 0.
    """
    eps = np.asarray(eps_schedule, dtype=float)
    if eps.size < 2 or np.any(eps <= 0):
        raise DomainError("need at least two positive eps values")
    t = np.asarray(t, dtype=float)
    vals = [-1j * e * np.asarray(m(t + 1j * e)) for e in eps[-2:]]
    e1, e2 = eps[-2:]
    est = (e1 * vals[1] - e2 * vals[0]) / (e1 - e2)
    mass = np.maximum(est.real, 0.0)
    mass = float(mass) if mass.ndim == 0 else mass
    if return_residue:
        res = np.abs(est.imag)
        return mass, (float(res) if np.ndim(res) == 0 else res)
    return mass


def herglotz_violation(m, zs):
    """max(0, -min Im m(z)) over the points ``zs`` (all in the upper half-plane)."""
    zs = np.asarray(zs, dtype=complex)
    if np.any(zs.imag <= 0):
        raise DomainError("Herglotz checks need Im z > 0")
    vals = np.asarray(m(zs))
    finite = np.isfinite(vals)
    if not np.any(finite):
        return 0.0
    return float(max(0.0, -np.min(vals.imag[finite])))


# --- real-axis spectrum --------------------------------------------------------

def prufer_angle(H, lam, max_turn=1.0, lam_max=None):
    """Continuous argument of u(b, lam) = T(b, lam) (1, 0).

    ``lam`` has shape batch_shape + (K,) (or (K,) for broadcasting). Each
    step is conjugate to a rotation by lam dt sqrt(det H) (a shear when
    det H = 0), which turns any vector by less than pi while that angle stays
    below pi. Steps where lam_max dt sqrt(det H) exceeds ``max_turn`` are
    subdivided, so each principal-value increment is the true one.
    ``lam_max`` defaults to max |lam|; fixing it makes the angle one function
    of lam across calls.
    """
    if not 0 < max_turn < np.pi:
        raise DomainError("max_turn must lie in (0, pi)")
    lam = np.asarray(lam, dtype=float)
    nb = len(H.batch_shape)
    ix = (slice(None),) * nb + (None,)
    h11, h12, h22 = _averaged(H.samples)
    dt = np.diff(H.nodes)
    shape = np.broadcast_shapes(H.batch_shape + (1,), lam.shape)
    u1 = np.ones(shape)
    u2 = np.zeros(shape)
    theta = np.zeros(shape)
    alam = lam_max if lam_max is not None else (np.max(np.abs(lam)) if lam.size else 0.0)
    det = np.maximum(h11 * h22 - h12 * h12, 0.0)
    root_det = np.sqrt(det.reshape(-1, dt.size).max(axis=0))
    for k in range(dt.size):
        p11, p12, p22 = h11[..., k][ix], h12[..., k][ix], h22[..., k][ix]
        n_sub = max(1, int(np.ceil(alam * root_det[k] * dt[k] / max_turn)))
        sa, sb, sc, sd = _step(p11, p12, p22, lam * (dt[k] / n_sub))
        for _ in range(n_sub):
            n1, n2 = sa * u1 + sb * u2, sc * u1 + sd * u2
            d = np.arctan2(u1 * n2 - u2 * n1, u1 * n1 + u2 * n2)
            # the angle moves with the sign of lam; repair branch flips near pi
            d = np.where((lam > 0) & (d < -np.pi / 2), d + 2 * np.pi, d)
            d = np.where((lam < 0) & (d > np.pi / 2), d - 2 * np.pi, d)
            theta = theta + d
            r = np.hypot(n1, n2)
            u1, u2 = n1 / r, n2 / r
    return theta


def _boundary_angle(boundary, lam, batch_shape):
    """arg w in [0, pi), broadcast to batch_shape + lam.shape."""
    w = boundary.at(lam) if boundary.kind == "z_dependent" else boundary.at(None)
    w = np.asarray(w, dtype=complex if np.iscomplexobj(w) else float)
    if np.iscomplexobj(w):
        if np.max(np.abs(w.imag)) > 1e-8 * np.max(np.abs(w)):
            raise UsageError("boundary vector must be real on the real axis")
        w = w.real
    phi = np.mod(np.arctan2(w[..., 1], w[..., 0]), np.pi)
    if boundary.kind == "vector" and w.ndim > 1:
        phi = phi.reshape(phi.shape + (1,))
    return np.broadcast_to(phi, batch_shape + np.shape(lam)[-1:])


def eigenvalues(H, boundary, window, resolution=0.25, tol=1e-10, max_turn=1.0):
    """Eigenvalues in ``window`` with u(0) parallel to (1, 0) and u(b) parallel to w.

    Roots of theta(b, lam) = arg w + k pi, where theta is the Prufer angle
    (nondecreasing in lam). A scan at the given resolution counts roots per
    gap; gaps with more than one root raise ResolutionError; each root is
    refined by Illinois regula falsi. Returns a list of arrays (one per path) or one
    array for an unbatched field.
    """
    lo, hi = map(float, window)
    if not hi > lo:
        raise DomainError("window must satisfy lo < hi")
    if boundary.kind == "z_dependent":
        return _eigenvalues_z_dependent(H, boundary, (lo, hi), resolution, tol, max_turn)
    batch = H.batch_shape
    n_scan = max(2, int(np.ceil((hi - lo) / resolution)) + 1)
    grid = np.linspace(lo, hi, n_scan)
    phi = _boundary_angle(boundary, grid, batch)[..., :1]
    lam_max = max(abs(lo), abs(hi))
    theta = prufer_angle(H, np.broadcast_to(grid, batch + grid.shape), max_turn, lam_max)
    count = np.floor((theta - phi) / np.pi + 1e-13)
    jumps = np.diff(count, axis=-1)
    if np.any(jumps > 1) or np.any(jumps < 0):
        raise ResolutionError("more than one eigenvalue between scan points; refine the scan")
    flat_jumps = jumps.reshape(-1, jumps.shape[-1])
    n_paths = flat_jumps.shape[0]
    per_path = [np.flatnonzero(flat_jumps[i]) for i in range(n_paths)]
    n_max = max((len(p) for p in per_path), default=0)
    if n_max == 0:
        out = [np.empty(0) for _ in range(n_paths)]
        return out if batch else out[0]
    left = np.full((n_paths, n_max), lo)
    right = np.full((n_paths, n_max), lo)
    target = np.zeros((n_paths, n_max))
    flat_count = count.reshape(-1, count.shape[-1])
    for i, idx in enumerate(per_path):
        left[i, :idx.size] = grid[idx]
        right[i, :idx.size] = grid[idx + 1]
        target[i, :idx.size] = flat_count[i, idx + 1]
    shape = batch + (n_max,)
    left, right, target = left.reshape(shape), right.reshape(shape), target.reshape(shape)
    # Illinois regula falsi on the continuous angle: g = theta - phi - target pi
    # is increasing in lam, negative at ``left`` and nonnegative at ``right``
    g = lambda lam: prufer_angle(H, lam, max_turn, lam_max) - phi - target * np.pi
    g_left = np.minimum(g(left), -1e-300)
    g_right = np.maximum(g(right), 0.0)
    left = np.where(g_right == 0, right, left)
    side = np.zeros(shape)
    width_tol = tol * max(1.0, abs(lo), abs(hi))
    for _ in range(200):
        width = right - left
        active = width > width_tol
        if not np.any(active):
            break
        mid = right - g_right * width / (g_right - g_left)
        # fall back to the midpoint if the secant point is not strictly inside
        inside = (mid > left) & (mid < right)
        mid = np.where(inside, mid, 0.5 * (left + right))
        g_mid = g(mid)
        hit = active & (g_mid >= 0)
        miss = active & (g_mid < 0)
        # Illinois: halve the stale endpoint after two moves on the same side
        g_left = np.where(hit & (side > 0), 0.5 * g_left, g_left)
        g_right = np.where(miss & (side < 0), 0.5 * g_right, g_right)
        right, g_right = np.where(hit, mid, right), np.where(hit, g_mid, g_right)
        left, g_left = np.where(miss, mid, left), np.where(miss, g_mid, g_left)
        side = np.where(hit, 1.0, np.where(miss, -1.0, side))
        exact = active & (g_mid == 0)
        left = np.where(exact, mid, left)
    roots = right.reshape(n_paths, n_max)
    out = [roots[i, :len(per_path[i])].copy() for i in range(n_paths)]
    return out if batch else out[0]


def _eigenvalues_z_dependent(H, boundary, window, resolution, tol, max_turn):
    """Unbatched scan for a boundary vector that depends on the spectral parameter."""
    if H.batch_shape:
        raise UsageError("z-dependent boundaries are handled one path at a time")
    lo, hi = window
    grid = np.linspace(lo, hi, max(2, int(np.ceil((hi - lo) / resolution)) + 1))

    def g(lam, ref=None):
        lam = np.atleast_1d(lam)
        th = prufer_angle(H, lam, max_turn)
        phi = _boundary_angle(boundary, lam, ())
        if ref is not None:
            phi = phi + np.pi * np.round((ref - phi) / np.pi)
        return th - phi, phi

    vals, phis = g(grid)
    phis = np.unwrap(phis, period=np.pi)
    vals = prufer_angle(H, grid, max_turn) - phis
    count = np.floor(vals / np.pi + 1e-13)
    jumps = np.diff(count)
    if np.any(np.abs(jumps) > 1):
        raise ResolutionError("more than one eigenvalue between scan points; refine the scan")
    roots = []
    for i in np.flatnonzero(jumps):
        a, b = grid[i], grid[i + 1]
        target = max(count[i], count[i + 1])
        up = jumps[i] > 0
        phi_ref = phis[i]
        while b - a > tol * max(1.0, abs(lo), abs(hi)):
            mid = 0.5 * (a + b)
            v, ph = g(mid, phi_ref)
            hit = (np.floor(v[0] / np.pi + 1e-13) >= target) == up
            a, b = (a, mid) if hit else (mid, b)
            phi_ref = ph[0]
        roots.append(b)
    return np.array(roots)


def eigenfunction_mass(H, lam, max_turn=0.25):
    """1 / int u^T H u dt for u = T(t, lam)(1, 0); the atom of the spectral measure at lam.

    Valid at eigenvalues. Each gap is split so the solution turns by at most
    ``max_turn`` and the integral uses the trapezoid rule on the substeps.
    """
    lam = np.asarray(lam, dtype=float)
    nb = len(H.batch_shape)
    ix = (slice(None),) * nb + (None,)
    h11, h12, h22 = _averaged(H.samples)
    dt = np.diff(H.nodes)
    shape = np.broadcast_shapes(H.batch_shape + (1,), lam.shape)
    u1 = np.ones(shape)
    u2 = np.zeros(shape)
    log_scale = np.zeros(shape)
    total = np.zeros(shape)
    alam = np.max(np.abs(lam)) if lam.size else 0.0
    for k in range(dt.size):
        p11, p12, p22 = h11[..., k][ix], h12[..., k][ix], h22[..., k][ix]
        n_sub = max(1, int(np.ceil(alam * np.max(p11 + p22) * dt[k] / max_turn)))
        h = dt[k] / n_sub
        sa, sb, sc, sd = _step(p11, p12, p22, lam * h)
        q0 = p11 * u1 * u1 + 2 * p12 * u1 * u2 + p22 * u2 * u2
        for _ in range(n_sub):
            n1, n2 = sa * u1 + sb * u2, sc * u1 + sd * u2
            q1 = p11 * n1 * n1 + 2 * p12 * n1 * n2 + p22 * n2 * n2
            total = total + 0.5 * h * (q0 + q1) * np.exp(2 * log_scale)
            r = np.hypot(n1, n2)
            u1, u2, q0 = n1 / r, n2 / r, q1 / (r * r)
            log_scale = log_scale + np.log(r)
    return 1.0 / total


def spectral_measure(H, boundary, window, resolution=0.25, eps_schedule=(1e-3, 1e-4)):
    """Eigenvalues in the window with Stieltjes masses, for an unbatched field."""
    if H.batch_shape:
        raise UsageError("spectral_measure works on one path")
    loc = eigenvalues(H, boundary, window, resolution)
    m = weyl_m_limit_circle(H, boundary)
    masses = np.array([stieltjes_atom(m, x, eps_schedule) for x in loc])
    return SpectralMeasure(loc, masses, tuple(window))


# --- Bessel right boundaries -------------------------------------------------

def bessel_right_boundary_lc(params, shift, pairs, horizon=None):
    """Neumann-at-infinity boundary vector for |a| < 1, read at the last grid node.

    The z = 0 solution h = A F + B G (F = E^{-1/4} f, G = E^{1/4} g) with
    p h' = 0 at the horizon gives the constant canonical vector (B, A),
    proportional to (-e^{rho_f} sin xi_f, e^{rho_g} sin xi_g) there.
    """
    if not abs(params.a) < 1:
        raise UsageError("the Neumann boundary at infinity needs |a| < 1")
    nodes = pairs.grid.nodes
    k = -1 if horizon is None else int(np.argmin(np.abs(nodes - horizon)))
    rf, rg = pairs.f.rho.values[..., k], pairs.g.rho.values[..., k]
    xf, xg = pairs.f.xi.values[..., k], pairs.g.xi.values[..., k]
    top = np.maximum(rf, rg)
    v = np.stack([-np.exp(rf - top) * np.sin(xf), np.exp(rg - top) * np.sin(xg)], axis=-1)
    norm = np.hypot(v[..., 0], v[..., 1])
    if np.any(~np.isfinite(norm)) or np.any(norm < 1e-12):
        raise DegenerateBoundaryError("boundary Wronskians vanish at the horizon; move the horizon")
    return BoundaryData.from_vector(v / norm[..., None])


def bessel_lc_oracle_direction(a, E):
    """Boundary direction for beta = infinity from the small-argument Bessel asymptotics.

    As t -> infinity, p f' -> -(Gamma(a+1)/pi) E^{-a/2} times the Y_a
    coefficient of f, so the direction is (E^{-1/4} y_f, -E^{1/4} y_g).
    """
    from scipy import special
    x0 = 2.0 * np.sqrt(E)
    M = np.array([[special.jv(a, x0), special.yv(a, x0)],
                  [0.5 * a * special.jv(a, x0) - 0.5 * x0 * special.jvp(a, x0),
                   0.5 * a * special.yv(a, x0) - 0.5 * x0 * special.yvp(a, x0)]])
    yf = np.linalg.solve(M, [1.0, 0.0])[1]
    yg = np.linalg.solve(M, [0.0, 1.0])[1]
    v = np.array([E ** -0.25 * yf, -E ** 0.25 * yg])
    return v / np.hypot(*v)


def solve_decaying_solution(params, noise, mu, step=0.01):
    """(Phi(0), Phi'(0)) of the solution of -(1/w)(p Phi')' = mu Phi bounded at infinity.

    ``noise`` is the Brownian motion of the operator on [0, T]; the system
    dPhi = P/p ds, dP = -mu w Phi ds is integrated backward from
    (Phi, P) = (1, 0) at T with exact exponentials of the gap-averaged
    traceless generator. ``mu`` may be an array.
    """
    s = noise.grid.nodes
    sig = 0.0 if np.isinf(params.beta) else 2.0 / np.sqrt(params.beta)
    log_p = -params.a * s - sig * noise.values
    inv_p = np.exp(-log_p)
    w = np.exp(-s + log_p)
    ip = 0.5 * (inv_p[..., 1:] + inv_p[..., :-1])
    ww = 0.5 * (w[..., 1:] + w[..., :-1])
    ds = np.diff(s)
    mu = np.asarray(mu)
    extra = (None,) * mu.ndim
    lead = noise.values.shape[:-1]
    ix = (slice(None),) * len(lead)
    shape = lead + mu.shape
    phi = np.ones(shape, complex)
    P = np.zeros(shape, complex)
    log_scale = np.zeros(shape)
    for k in range(ds.size - 1, -1, -1):
        # generator A = [[0, ip], [-mu ww, 0]]; det A = mu ip ww
        b = ip[..., k][ix + extra] * ds[k]
        c = -mu * ww[..., k][ix + extra] * ds[k]
        ch, sc = _cosh_sinhc(np.asarray(b * c, dtype=complex))
        # backward step: exp(-A ds)
        phi, P = ch * phi - sc * b * P, -sc * c * phi + ch * P
        n = np.maximum(np.abs(phi), np.abs(P))
        phi, P = phi / n, P / n
        log_scale = log_scale + np.log(n)
    return phi, P, log_scale


def bessel_right_boundary_beta_gt2(params, shift, pairs, B_bessel, tail_noise, threshold=None):
    """z-dependent boundary vector u_z(log E) for beta > 2, a >= 1.

    ``pairs`` is the fundamental pair on [0, tau_E]; ``B_bessel`` holds
    B(eta(t)) on its grid; ``tail_noise`` is the Brownian motion of the
    unshifted operator started at log E (a RealPath on [0, T_Phi]). The
    solution bounded at infinity at eigenparameter 1 + z/(2 sqrt E) is
    normalized so that its Wronskian with E^{1/4} g at log E is 1.
    Raises DegenerateBoundaryError when p(log E) |W~| < E^{-a/2}.
    """
    if not (params.beta > 2 and params.a >= 1):
        raise UsageError("this boundary is defined for beta > 2 and a >= 1")
    E = shift.E
    thr = E ** (-params.a / 2) if threshold is None else threshold
    sig = 0.0 if np.isinf(params.beta) else 2.0 / np.sqrt(params.beta)
    p_end = np.exp(-params.a * np.log(E) - sig * B_bessel.values[..., -1])
    rf, xf = pairs.f.rho.values[..., -1], pairs.f.xi.values[..., -1]
    rg, xg = pairs.g.rho.values[..., -1], pairs.g.xi.values[..., -1]
    amp = p_end ** -0.5
    f, fp = E ** 0.25 * amp * np.exp(rf) * np.cos(xf), E ** 0.25 * amp * np.exp(rf) * np.sin(xf)
    g, gp = E ** -0.25 * amp * np.exp(rg) * np.cos(xg), E ** -0.25 * amp * np.exp(rg) * np.sin(xg)

    def evaluator(z):
        z = np.asarray(z)
        phi, P, _ = solve_decaying_solution(params, tail_noise, 1.0 + z / (2.0 * np.sqrt(E)))
        ex = (Ellipsis,) + (None,) * z.ndim
        wt = E ** 0.25 * (phi * gp[ex] - P * g[ex])
        denom = p_end[ex] * wt
        if np.any(np.abs(denom) < thr):
            raise DegenerateBoundaryError("normalizing Wronskian below the good-event threshold")
        h, hp = phi / denom, P / denom
        u1 = p_end[ex] * E ** -0.25 * (f[ex] * hp - fp[ex] * h)
        u2 = p_end[ex] * E ** 0.25 * (h * gp[ex] - hp * g[ex])
        return np.stack([u1, u2], axis=-1)

    return BoundaryData("z_dependent", evaluator=evaluator)
