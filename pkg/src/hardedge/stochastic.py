"""Random paths, time grids, log-time maps and a splitting SDE integrator.

Random streams are keyed by ``(experiment_id, stream_id, path_id)`` and drawn
from the counter-based Philox generator, so every path can be regenerated on
its own, in any order, by any worker.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError, RangeError

__all__ = [
    "RngSeed", "TimeGrid", "RealPath", "ComplexPath", "make_grid",
    "standard_normals", "sample_brownian", "sample_complex_brownian",
    "brownian_from_normals", "log_time", "log_time_inverse", "integrate_sde",
]


@dataclass(frozen=True)
class RngSeed:
    """Hierarchical seed: experiment -> stream -> path."""
    experiment_id: int
    stream_id: int
    path_id: int

    def __post_init__(self):
        for name in ("experiment_id", "stream_id", "path_id"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise DomainError(f"{name} must be a nonnegative integer, got {v!r}")

    def generator(self, substream=0):
        """Philox generator for this triple (and an optional substream index)."""
        ss = np.random.SeedSequence(
            entropy=[self.experiment_id, self.stream_id, self.path_id],
            spawn_key=(int(substream),))
        return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))

    def with_stream(self, stream_id):
        return RngSeed(self.experiment_id, stream_id, self.path_id)

    def with_path(self, path_id):
        return RngSeed(self.experiment_id, self.stream_id, path_id)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing sample times; ``uniform_in`` records the design variable."""
    nodes: np.ndarray
    uniform_in: str = "native"

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise DomainError("a grid needs at least two nodes")
        if not np.all(np.isfinite(nodes)):
            raise DomainError("grid nodes must be finite")
        if not np.all(np.diff(nodes) > 0):
            raise DomainError("grid nodes must be strictly increasing")
        if self.uniform_in not in ("native", "log_time"):
            raise DomainError(f"unknown grid tag {self.uniform_in!r}")
        object.__setattr__(self, "nodes", nodes)

    def __len__(self):
        return self.nodes.size

    @property
    def gaps(self):
        return np.diff(self.nodes)

    @property
    def t0(self):
        return float(self.nodes[0])

    @property
    def t1(self):
        return float(self.nodes[-1])


@dataclass(frozen=True)
class _Path:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = _frozen(self.values, self._dtype)
        if values.shape[-1] != len(self.grid):
            raise DomainError("path values must have one sample per grid node")
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        """Linear interpolation between nodes (the off-node semantics of all paths)."""
        t = np.asarray(t, dtype=float)
        nodes = self.grid.nodes
        tol = 1e-12 * max(1.0, abs(nodes[-1]))
        if np.any(t < nodes[0] - tol) or np.any(t > nodes[-1] + tol):
            raise RangeError(f"time outside the sampled range [{nodes[0]}, {nodes[-1]}]")
        if self.values.ndim == 1:
            if np.iscomplexobj(self.values):
                return (np.interp(t, nodes, self.values.real)
                        + 1j * np.interp(t, nodes, self.values.imag))
            return np.interp(t, nodes, self.values)
        return np.stack([type(self)(self.grid, v)(t) for v in self.values])

    @property
    def increments(self):
        return np.diff(self.values, axis=-1)


class RealPath(_Path):
    """Real samples at the nodes of a grid (last axis indexes nodes)."""
    _dtype = float


class ComplexPath(_Path):
    """Complex samples at the nodes of a grid (last axis indexes nodes)."""
    _dtype = complex


def make_grid(t0, t1, max_step, phase_cap=np.inf, fast_rate=None,
              breakpoints=(), min_step=0.0, uniform_in="native"):
    """Build a grid on [t0, t1] with gaps <= max_step and gap*fast_rate <= phase_cap.

    The rate condition is enforced at both ends of every gap. ``breakpoints``
    are forced to be nodes. A positive ``min_step`` floors the gaps, which
    deliberately gives up the phase cap where the rate is too fast to resolve.
    """
    vals = np.array([t0, t1, max_step, phase_cap, min_step], dtype=float)
    if np.any(np.isnan(vals)) or not np.all(np.isfinite(vals[[0, 1, 2, 4]])):
        raise DomainError("grid parameters must be finite")
    if not t1 > t0:
        raise DomainError("make_grid needs t0 < t1")
    if not max_step > 0 or not phase_cap > 0:
        raise DomainError("max_step and phase_cap must be positive")
    rate = (lambda t: 0.0) if fast_rate is None else fast_rate
    stops = sorted({float(b) for b in breakpoints if t0 < b < t1} | {float(t1)})
    nodes = [float(t0)]
    for stop in stops:
        t = nodes[-1]
        while t < stop:
            d = float(max_step)
            for _ in range(200):
                r = max(abs(float(rate(t))), abs(float(rate(min(t + d, stop)))))
                if r * d <= phase_cap or d <= min_step:
                    break
                d = phase_cap / r * (1 - 1e-9) if phase_cap / r < d else 0.5 * d
            d = max(d, min_step)
            if t + d >= stop - 1e-12 * max(1.0, abs(stop)):
                t = stop
            else:
                t = t + d
            nodes.append(t)
    return TimeGrid(np.array(nodes), uniform_in)


def standard_normals(seed, n, substream=0, width=None):
    """``n`` standard normals (or an ``(n, width)`` block) from the seed's stream."""
    gen = seed.generator(substream)
    shape = (n,) if width is None else (n, width)
    return gen.standard_normal(shape)


def brownian_from_normals(normals, gaps):
    """Cumulative sums of sqrt(gap)-scaled normals, starting at 0."""
    incr = np.sqrt(gaps) * normals
    return np.concatenate([np.zeros(incr.shape[:-1] + (1,)), np.cumsum(incr, axis=-1)], axis=-1)


def sample_brownian(seed, grid, two_sided=False):
    """Standard Brownian motion at the grid nodes with B(0) = 0.

    One-sided grids are anchored at their first node. Two-sided grids must
    contain 0; the negative half uses an independent substream.
    """
    nodes = grid.nodes
    if not two_sided:
        z = standard_normals(seed, len(nodes) - 1)
        return RealPath(grid, brownian_from_normals(z, grid.gaps))
    hits = np.flatnonzero(nodes == 0.0)
    if hits.size != 1:
        raise DomainError("a two-sided grid must contain 0")
    k = int(hits[0])
    values = np.zeros(len(nodes))
    if k < len(nodes) - 1:
        pos = nodes[k:]
        values[k:] = brownian_from_normals(standard_normals(seed, pos.size - 1), np.diff(pos))
    if k > 0:
        neg = nodes[k::-1]
        z = standard_normals(seed, neg.size - 1, substream=1)
        values[k::-1] = brownian_from_normals(z, -np.diff(neg))
    return RealPath(grid, values)


def sample_complex_brownian(seed, grid):
    """Complex Brownian motion with independent standard real and imaginary parts."""
    z = standard_normals(seed, len(grid) - 1, width=2)
    re = brownian_from_normals(z[:, 0], grid.gaps)
    im = brownian_from_normals(z[:, 1], grid.gaps)
    return ComplexPath(grid, re + 1j * im)


def log_time(t, c=1.0):
    """upsilon(t) = -log(1 - c t) on [0, 1/c)."""
    t = np.asarray(t, dtype=float)
    if not 0 < c <= 1:
        raise DomainError("c must lie in (0, 1]")
    if np.any(c * t >= 1) or np.any(t < 0):
        raise DomainError("log_time needs 0 <= c t < 1")
    out = -np.log1p(-c * t)
    return float(out) if out.ndim == 0 else out


def log_time_inverse(s, c=1.0):
    """Inverse of :func:`log_time`: t = (1 - e^{-s}) / c."""
    s = np.asarray(s, dtype=float)
    if not 0 < c <= 1:
        raise DomainError("c must lie in (0, 1]")
    if np.any(s < 0):
        raise DomainError("log time must be nonnegative")
    out = -np.expm1(-s) / c
    return float(out) if out.ndim == 0 else out


def integrate_sde(drift, diffusion, init, grid, noise, rotation=None):
    """Euler-Maruyama with an exactly applied deterministic part (Lie splitting).

    Each step first applies ``rotation(x, t0, t1)``, the exact flow of the
    separated deterministic term, then one Euler-Maruyama step
    ``x + drift(x, t) dt + diffusion(x, t) dB`` at the rotated state.

    ``noise`` is a RealPath on ``grid`` or an array whose last axis indexes
    nodes; its leading axes broadcast against the leading axes of ``init``
    (e.g. one noise row per path). Returns states stacked along axis 0.
    """
    nodes = grid.nodes
    values = noise.values if isinstance(noise, _Path) else np.asarray(noise, dtype=float)
    if values.shape[-1] != nodes.size:
        raise DomainError("noise must be sampled on the integration grid")
    dB = np.diff(values, axis=-1)
    x = np.array(init, dtype=float)
    out = np.empty((nodes.size,) + x.shape)
    out[0] = x
    for k in range(nodes.size - 1):
        t0, t1 = nodes[k], nodes[k + 1]
        if rotation is not None:
            x = rotation(x, t0, t1)
        db = dB[..., k]
        if x.ndim > np.ndim(db):
            db = np.reshape(db, np.shape(db) + (1,) * (x.ndim - np.ndim(db)))
        x = x + drift(x, t0) * (t1 - t0) + diffusion(x, t0) * db
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at t={t1}", time=t1)
        out[k + 1] = x
    return out
