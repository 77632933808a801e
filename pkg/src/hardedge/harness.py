"""Monte Carlo experiments, their statistics and report files.

Every experiment is split into cells (one shift E and a chunk of path ids).
Each cell regenerates its random inputs from ``RngSeed(seed, stream, path)``,
so cells can run in any order or process; results are reassembled in cell
order, which keeps serial and parallel runs identical.
"""
import csv
import dataclasses
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from . import bessel as bs
from . import coupling as cp
from . import sine as sn
from . import spectral as sp
from .errors import ConfigError, DomainError
from .stochastic import (ComplexPath, RealPath, RngSeed, log_time, make_grid,
                         sample_brownian, sample_complex_brownian)

__all__ = [
    "ExperimentConfig", "StatsReport", "PhaseUniformity", "COMMANDS", "load_config",
    "parse_config_text", "ks_statistic", "run_vague_convergence",
    "run_spectral_convergence", "run_wt_convergence", "run_asymptotics",
    "run_coupling_decay", "run_gamma_masses", "run_selftest", "run_command",
]

# random stream ids
STREAM_B = 0          # native-time noise B_E of the Bessel side
STREAM_FILL = 1       # bridges and continuation of the coupled W
STREAM_REVERSED = 2   # negative-time noise of the reversed SDEs
STREAM_SINE = 3       # complex noise of stand-alone sine systems


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20240601
    beta: float = 2.0
    a: float = 0.0
    E_list: tuple = (1e2, 1e3, 1e4)
    paths: int = 200
    chunk: int = 50
    alpha: float = 0.3
    delta: float = 0.05
    phase_cap: float = 0.1
    max_step: float = 0.01
    sine_horizon: float = 12.0
    sine_step: float = 0.01
    window: tuple = (-8.0, 8.0)
    core_fraction: float = 0.6
    resolution: float = 0.25
    z_grid: tuple = (1j, 1 + 1j, -1 + 2j)
    eps: tuple = (1e-3, 1e-4)
    bump: tuple = (0.1, 0.6)
    bump_vector: tuple = (1.0, 0.0)
    decay_ratio: float = 1.0 / 3.0
    slope_max: float = -0.05
    lam: float = 1.0
    T: float = 50.0
    min_step: float = 2e-3
    init: tuple = (1.0, 0.0)
    envelope_power: float = 0.6
    envelope_frac: float = 0.95
    slope_tol: float = 0.05
    phase_paths: int = 2000
    phase_ks_max: float = 0.05
    n_masses: int = 300
    ks_max: float = 0.08
    system: str = "sine"
    herglotz_tol: float = 1e-8

    def __post_init__(self):
        E = np.asarray(self.E_list, dtype=float)
        if E.ndim != 1 or E.size < 1 or np.any(E <= 1) or np.any(np.diff(E) <= 0):
            raise ConfigError("E_list must be strictly increasing values > 1")
        if self.paths < 1 or self.chunk < 1:
            raise ConfigError("paths and chunk must be positive")
        if not self.beta > 0 or not self.a > -1:
            raise ConfigError("need beta > 0 and a > -1")
        if self.system not in ("sine", "bessel"):
            raise ConfigError("system must be 'sine' or 'bessel'")

    def digest(self):
        text = json.dumps(_jsonable(dataclasses.asdict(self)), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


_DEFAULTS = {
    "vague": dict(beta=2.0, a=0.0, E_list=(1e2, 1e3, 1e4), paths=200),
    "spectra": dict(beta=2.0, a=0.5, E_list=(1e3, 1e4), paths=200),
    "weyl": dict(beta=4.0, a=0.0, E_list=(1e2, 1e4), paths=200),
    "asymptotics": dict(beta=2.0, a=0.0, paths=500, chunk=100),
    "coupling": dict(beta=2.0, a=0.0, E_list=(1e2, 1e3, 1e4), paths=200),
    "gamma-masses": dict(beta=4.0, a=0.0, paths=160, E_list=(1e4,)),
    "selftest": dict(),
}
COMMANDS = tuple(_DEFAULTS)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _parse_value(name, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, str):
            return text
        if isinstance(default, tuple):
            items = [x for x in text.replace(" ", "").split(",") if x]
            if default and isinstance(default[0], complex):
                return tuple(complex(x.replace("i", "j")) for x in items)
            return tuple(float(x) for x in items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc
    raise ConfigError(f"unsupported key type for {name}")


def parse_config_text(text):
    """Parse flat ``key = value`` lines; '#' starts a comment. Unknown keys are errors."""
    known = {f.name: f.default for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value, known[key])
    return out


def load_config(command, path=None, seed=None, **overrides):
    """Defaults for ``command``, then the config file, then explicit overrides."""
    if command not in _DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    values = dict(_DEFAULTS[command])
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    values.update(overrides)
    if seed is not None:
        values["seed"] = int(seed)
    return ExperimentConfig(**values)


# --- reports -----------------------------------------------------------------

@dataclass
class StatsReport:
    command: str
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add_quantiles(self, E, name, values):
        values = np.asarray(values, dtype=float)
        values = values[np.isfinite(values)]
        if values.size == 0:
            for q in ("median", "p05", "p95"):
                self.rows.append((E, name, q, float("nan")))
            return
        for q, level in (("median", 0.5), ("p05", 0.05), ("p95", 0.95)):
            self.rows.append((E, name, q, float(np.quantile(values, level))))

    def add_value(self, E, name, value, quantile="value"):
        self.rows.append((E, name, quantile, float(value)))

    def add_flag(self, name, passed, detail=""):
        self.flags.append((name, bool(passed), detail))

    def value(self, E, name, quantile="median"):
        for e, n, q, v in self.rows:
            if n == name and q == quantile and (E is None or e == E):
                return v
        raise KeyError((E, name, quantile))

    def series(self, name, quantile="median"):
        return [v for _, n, q, v in self.rows if n == name and q == quantile]

    @property
    def passed(self):
        return all(p for _, p, _ in self.flags)

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["config", "E", "statistic", "quantile", "value"])
        h = self.config.digest()
        for E, name, q, v in self.rows:
            w.writerow([h, "" if E is None else f"{E:.17g}", name, q, f"{v:.17g}"])
        for name, passed, detail in self.flags:
            w.writerow([h, "", f"check:{name}", "pass" if passed else "fail", detail])
        return buf.getvalue()

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.csv"), "w") as fh:
            fh.write(self.csv_text())
        doc = {
            "command": self.command,
            "config": _jsonable(dataclasses.asdict(self.config)),
            "config_hash": self.config.digest(),
            "metadata": _jsonable(self.metadata),
            "rows": [dict(E=E, statistic=n, quantile=q, value=v) for E, n, q, v in self.rows],
            "flags": [dict(name=n, passed=p, detail=d) for n, p, d in self.flags],
            "passed": self.passed,
        }
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(doc, fh, indent=2, allow_nan=True)


@dataclass(frozen=True)
class PhaseUniformity:
    samples: np.ndarray
    ks: float


def ks_statistic(samples_a, samples_b_or_cdf):
    """One-sample (callable or scipy distribution name) or two-sample KS distance."""
    a = np.asarray(samples_a, dtype=float)
    if a.size == 0:
        raise DomainError("KS needs nonempty samples")
    other = samples_b_or_cdf
    if callable(other) or isinstance(other, str):
        return float(stats.kstest(a, other).statistic)
    b = np.asarray(other, dtype=float)
    if b.size == 0:
        raise DomainError("KS needs nonempty samples")
    return float(stats.ks_2samp(a, b).statistic)


def _strictly_decreasing(values):
    v = np.asarray(values, dtype=float)
    return bool(v.size >= 2 and np.all(np.isfinite(v)) and np.all(np.diff(v) < 0))


def _loglog_slope(E, values):
    return float(np.polyfit(np.log(np.asarray(E, float)), np.log(np.asarray(values, float)), 1)[0])


# --- cell plumbing -------------------------------------------------------------

def _cells(config, E_list=None, n_paths=None):
    E_list = config.E_list if E_list is None else E_list
    n = config.paths if n_paths is None else n_paths
    out = []
    for E in E_list:
        for start in range(0, n, config.chunk):
            out.append((float(E), tuple(range(start, min(n, start + config.chunk)))))
    return out


def _run_cells(fn, cells, threads):
    if threads <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, cells))


def _gather(cells, results, key):
    """Concatenate per-cell arrays for each E in cell order."""
    out = {}
    for (E, _), res in zip(cells, results):
        out.setdefault(E, []).append(np.asarray(res[key]))
    return {E: np.concatenate(v) for E, v in out.items()}


def _coupled_setup(config, E, ids, t_end=None, horizon=None):
    params = bs.BesselParams(config.beta, config.a)
    shift = bs.shift_params(params, E)
    part = cp.coupling_partition(shift, cp.CouplingConfig(config.alpha, config.delta))
    breaks = list(part.t[1:-1]) + ([shift.tau] if t_end is not None else [])
    grid = bs.polar_grid(shift, config.phase_cap, config.max_step, t_end, breaks)
    pairs = bs.fundamental_pair(params, shift, [RngSeed(config.seed, STREAM_B, i) for i in ids],
                                grid=grid, phase_cap=config.phase_cap)
    coupled = cp.build_coupled_w(pairs.noise, pairs.g.xi, part, shift,
                                 [RngSeed(config.seed, STREAM_FILL, i) for i in ids],
                                 horizon=horizon)
    return params, shift, part, pairs, coupled


def _bump(t, lo, hi):
    """Smooth bump supported on [lo, hi]."""
    x = (2 * np.asarray(t) - lo - hi) / (hi - lo)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(1 - 1 / (1 - x[inside] ** 2))
    return out


# --- coupling decay ---------------------------------------------------------

def _coupling_cell(config, cell):
    E, ids = cell
    params, shift, part, pairs, coupled = _coupled_setup(config, E, ids)
    cfg = cp.CouplingConfig(config.alpha, config.delta)
    gb = cp.gbm_compare(pairs.g, coupled, shift, cfg, config.beta)
    return {
        "deviation_sup": cp.deviation_sup(coupled, pairs.g.xi, shift, cfg),
        "gbm_sup_lin": gb["sup_lin"],
        "gbm_sup_log": gb["sup_log"],
        "rehbm_sup": cp.rehbm_compare(pairs, coupled, shift, cfg, config.beta),
        "averaging_sup": cp.averaging_sup(pairs.g.xi, 2, shift, cp.window_end(shift, cfg)),
    }


def run_coupling_decay(config, threads=1):
    cells = _cells(config)
    results = _run_cells(partial(_coupling_cell, config), cells, threads)
    report = StatsReport("coupling", config)
    names = ("deviation_sup", "gbm_sup_lin", "gbm_sup_log", "rehbm_sup", "averaging_sup")
    data = {n: _gather(cells, results, n) for n in names}
    for E in config.E_list:
        for n in names:
            report.add_quantiles(E, n, data[n][float(E)])
    E = list(config.E_list)
    for n in names:
        med = report.series(n)
        if len(E) >= 2:
            report.add_value(None, f"{n}_loglog_slope", _loglog_slope(E, med))
    if len(E) >= 2:
        dev = report.series("deviation_sup")
        slope = _loglog_slope(E, dev)
        report.add_flag("deviation_sup_decreasing", _strictly_decreasing(dev), _fmt(dev))
        report.add_flag("deviation_sup_slope", slope <= config.slope_max,
                        f"slope={slope:.4g} max={config.slope_max}")
        report.add_flag("gbm_sup_lin_decreasing", _strictly_decreasing(report.series("gbm_sup_lin")),
                        _fmt(report.series("gbm_sup_lin")))
        report.add_flag("rehbm_decreasing", _strictly_decreasing(report.series("rehbm_sup")),
                        _fmt(report.series("rehbm_sup")))
    return report


def _fmt(values):
    return " ".join(f"{v:.6g}" for v in values)


# --- vague convergence ------------------------------------------------------

def _vague_cell(config, cell):
    E, ids = cell
    params, shift, part, pairs, coupled = _coupled_setup(config, E, ids)
    lo, hi = config.bump
    t = pairs.grid.nodes
    full, _, _ = bs.bessel_matrix(pairs, shift)
    hbm = sn.simulate_hbm(config.beta, coupled.W)
    # the W grid is the log time of the Bessel nodes (plus nothing past tau_E)
    x, y = hbm.at(log_time(t))
    R = sn.sine_matrix(x, y)
    phi = _bump(t, lo, hi)[:, None] * np.asarray(config.bump_vector)
    qB = np.einsum("ti,...tij,tj->...t", phi, full, phi)
    qS = np.einsum("ti,...tij,tj->...t", phi, R, phi)
    return {"statistic": np.trapezoid(qB - qS, t, axis=-1)}


def run_vague_convergence(config, threads=1):
    lo, hi = config.bump
    if not 0 <= lo < hi:
        raise ConfigError("the test function needs 0 <= lo < hi")
    for E in config.E_list:
        shift = bs.shift_params(bs.BesselParams(config.beta, config.a), E)
        if hi > shift.tau or hi >= 1:
            raise ConfigError(f"test function support leaves [0, tau_E] at E={E}")
    cells = _cells(config)
    results = _run_cells(partial(_vague_cell, config), cells, threads)
    data = _gather(cells, results, "statistic")
    report = StatsReport("vague", config)
    for E in config.E_list:
        report.add_quantiles(E, "abs_statistic", np.abs(data[float(E)]))
        report.add_quantiles(E, "statistic", data[float(E)])
    med = report.series("abs_statistic")
    if len(med) >= 2:
        report.add_flag("median_decreasing", _strictly_decreasing(med), _fmt(med))
        ratio = med[-1] / med[0] if med[0] > 0 else float("nan")
        report.add_flag("final_vs_first", med[-1] <= config.decay_ratio * med[0],
                        f"ratio={ratio:.4g} max={config.decay_ratio:.4g}")
    return report


# --- spectra and Weyl functions -------------------------------------------------

def _bessel_horizon(config, shift):
    """Bessel time beyond log E where the weight e^{-(1+a)s} drops below 1e-8."""
    return max(np.log(shift.E) + 1.0, np.log(1e8) / (1.0 + config.a))


def _spectral_systems(config, E, ids):
    """Coupled Bessel and sine fields with their right boundaries."""
    params = bs.BesselParams(config.beta, config.a)
    shift = bs.shift_params(params, E)
    if not abs(config.a) < 1:
        raise ConfigError("batched spectra use the Neumann boundary at infinity, which needs |a| < 1")
    t_end = bs.eta_inverse(_bessel_horizon(config, shift), shift)
    _, _, part, pairs, coupled = _coupled_setup(config, E, ids, t_end=t_end,
                                                    horizon=config.sine_horizon)
    FB = bs.bessel_field(pairs, shift)
    bdB = sp.bessel_right_boundary_lc(params, shift, pairs)
    hbm = sn.simulate_hbm(config.beta, coupled.W)
    FS = sp.CoefficientMatrixField(-np.expm1(-hbm.grid.nodes), sn.sine_matrix(hbm.x, hbm.y), 1.0)
    bdS = sp.BoundaryData.from_vector(sn.sine_boundary_vector(hbm).vector)
    return FB, bdB, FS, bdS


def _weyl_stats(config, FB, bdB, FS, bdS):
    z = np.asarray(config.z_grid, dtype=complex)
    mB = sp.weyl_m_limit_circle(FB, bdB)(z)
    mS = sp.weyl_m_limit_circle(FS, bdS)(z)
    return {
        "weyl_maxdiff": np.max(np.abs(mB - mS), axis=-1),
        "herglotz_bessel": np.maximum(0.0, -np.min(mB.imag, axis=-1)),
        "herglotz_sine": np.maximum(0.0, -np.min(mS.imag, axis=-1)),
    }


def _hausdorff(a, b, empty_value):
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        return empty_value
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def _spectra_cell(config, cell):
    E, ids = cell
    FB, bdB, FS, bdS = _spectral_systems(config, E, ids)
    evB = sp.eigenvalues(FB, bdB, config.window, config.resolution)
    evS = sp.eigenvalues(FS, bdS, config.window, config.resolution)
    lo, hi = config.window
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * config.core_fraction
    core = lambda v: v[(v >= mid - half) & (v <= mid + half)]
    haus = [_hausdorff(core(b), core(s), 2 * half) for b, s in zip(evB, evS)]
    out = _weyl_stats(config, FB, bdB, FS, bdS)
    out.update({
        "hausdorff": np.array(haus),
        "spacings_bessel": np.concatenate([np.diff(core(b)) for b in evB] + [np.empty(0)]),
        "spacings_sine": np.concatenate([np.diff(core(s)) for s in evS] + [np.empty(0)]),
        "count_bessel": np.array([len(b) for b in evB], float),
        "count_sine": np.array([len(s) for s in evS], float),
    })
    return out


def run_spectral_convergence(config, threads=1):
    cells = _cells(config)
    results = _run_cells(partial(_spectra_cell, config), cells, threads)
    report = StatsReport("spectra", config)
    ks_vals = []
    for E in config.E_list:
        E = float(E)
        pick = lambda k: np.concatenate([np.asarray(r[k]) for c, r in zip(cells, results)
                                         if c[0] == E])
        sb, ss = pick("spacings_bessel"), pick("spacings_sine")
        ks = ks_statistic(sb, ss) if sb.size and ss.size else float("nan")
        ks_vals.append(ks)
        report.add_value(E, "spacing_ks", ks)
        report.add_value(E, "mean_spacing_sine", np.mean(ss) if ss.size else float("nan"))
        report.add_value(E, "mean_spacing_bessel", np.mean(sb) if sb.size else float("nan"))
        for k in ("hausdorff", "weyl_maxdiff", "count_bessel", "count_sine"):
            report.add_quantiles(E, k, pick(k))
        report.add_value(E, "herglotz_max", max(pick("herglotz_bessel").max(),
                                                pick("herglotz_sine").max()))
    if len(config.E_list) >= 2:
        report.add_flag("spacing_ks_decreasing", _strictly_decreasing(ks_vals), _fmt(ks_vals))
        for k in ("hausdorff", "weyl_maxdiff"):
            report.add_flag(f"{k}_decreasing", _strictly_decreasing(report.series(k)),
                            _fmt(report.series(k)))
    herg = max(report.value(float(E), "herglotz_max", "value") for E in config.E_list)
    report.add_flag("herglotz", herg <= config.herglotz_tol, f"max={herg:.3g}")
    return report


def _weyl_cell(config, cell):
    E, ids = cell
    FB, bdB, FS, bdS = _spectral_systems(config, E, ids)
    return _weyl_stats(config, FB, bdB, FS, bdS)


def run_wt_convergence(config, threads=1):
    z = np.asarray(config.z_grid, dtype=complex)
    if np.any(z.imag <= 0):
        raise ConfigError("z_grid must lie in the upper half-plane")
    cells = _cells(config)
    results = _run_cells(partial(_weyl_cell, config), cells, threads)
    report = StatsReport("weyl", config)
    data = {k: _gather(cells, results, k)
            for k in ("weyl_maxdiff", "herglotz_bessel", "herglotz_sine")}
    herg = 0.0
    for E in config.E_list:
        report.add_quantiles(E, "weyl_maxdiff", data["weyl_maxdiff"][float(E)])
        h = max(data["herglotz_bessel"][float(E)].max(), data["herglotz_sine"][float(E)].max())
        report.add_value(E, "herglotz_max", h)
        herg = max(herg, h)
    med = report.series("weyl_maxdiff")
    if len(med) >= 2:
        report.add_flag("weyl_maxdiff_decreasing", _strictly_decreasing(med), _fmt(med))
    report.add_flag("herglotz", herg <= config.herglotz_tol, f"max={herg:.3g}")
    return report


# --- asymptotics ------------------------------------------------------------

def _asymptotics_cell(config, cell):
    _, ids = cell
    params = bs.BesselParams(config.beta, config.a)
    grid = bs.reversed_grid(config.lam, config.T, config.phase_cap, config.max_step,
                            config.min_step)
    noise = np.stack([sample_brownian(RngSeed(config.seed, STREAM_REVERSED, i), grid).values
                      for i in ids])
    n = len(ids)
    init = bs.reversed_initial_data(np.full(n, config.init[0]), np.full(n, config.init[1]),
                                    config.lam)
    rp = bs.integrate_reversed_polar(params, config.lam, init, RealPath(grid, noise))
    t = grid.nodes
    r = rp.r.values - rp.r.values[:, :1]
    A = np.vstack([t, np.ones_like(t)]).T
    slope = np.linalg.lstsq(A, r.T, rcond=None)[0][0]
    kappa = 1.0 / (2 * config.beta) - config.a / 2
    X = r - kappa * t
    ratio = np.max(np.abs(X) / (1.0 + t ** config.envelope_power), axis=-1)
    return {"slope": slope, "envelope_ratio": ratio,
            "phase": np.mod(rp.xi.values[:, -1], 2 * np.pi)}


def run_asymptotics(config, threads=1):
    if not config.lam > 0 or not config.T >= 10:
        raise ConfigError("asymptotics need lam > 0 and T >= 10")
    n_total = max(config.paths, config.phase_paths)
    cells = _cells(config, E_list=(0.0,), n_paths=n_total)
    results = _run_cells(partial(_asymptotics_cell, config), cells, threads)
    slope = np.concatenate([r["slope"] for r in results])
    ratio = np.concatenate([r["envelope_ratio"] for r in results])
    phase = np.concatenate([r["phase"] for r in results])
    report = StatsReport("asymptotics", config)
    kappa = 1.0 / (2 * config.beta) - config.a / 2
    s = slope[:config.paths]
    report.add_value(None, "expected_slope", kappa)
    report.add_value(None, "mean_slope", s.mean())
    report.add_value(None, "slope_stderr", s.std(ddof=1) / np.sqrt(s.size))
    report.add_quantiles(None, "slope", s)
    # calibrate the envelope constant on one half, evaluate on the other
    rr = ratio[:config.paths]
    half = rr.size // 2
    C = float(np.quantile(rr[:half], 0.99))
    frac = float(np.mean(rr[half:] <= C))
    report.add_value(None, "envelope_constant", C)
    report.add_value(None, "envelope_fraction", frac)
    pu = PhaseUniformity(phase[:config.phase_paths],
                         ks_statistic(phase[:config.phase_paths] / (2 * np.pi), "uniform"))
    report.add_value(None, "phase_ks", pu.ks)
    report.add_value(None, "phase_samples", pu.samples.size)
    report.add_flag("slope", abs(s.mean() - kappa) <= config.slope_tol,
                    f"mean={s.mean():.4g} expected={kappa:.4g}")
    report.add_flag("envelope", frac >= config.envelope_frac, f"fraction={frac:.4g}")
    report.add_flag("phase_uniform", pu.ks <= config.phase_ks_max, f"ks={pu.ks:.4g}")
    return report


# --- spectral masses --------------------------------------------------------

def _sine_system(config, ids):
    s_grid = make_grid(0.0, config.sine_horizon, config.sine_step, uniform_in="log_time")
    W = np.stack([sample_complex_brownian(RngSeed(config.seed, STREAM_SINE, i), s_grid).values
                  for i in ids])
    hbm = sn.simulate_hbm(config.beta, ComplexPath(s_grid, W))
    F = sp.CoefficientMatrixField(-np.expm1(-s_grid.nodes), sn.sine_matrix(hbm.x, hbm.y), 1.0)
    return F, sp.BoundaryData.from_vector(sn.sine_boundary_vector(hbm).vector)


def _masses_cell(config, cell):
    E, ids = cell
    if config.system == "sine":
        F, bd = _sine_system(config, ids)
    else:
        F, bd, _, _ = _spectral_systems(config, E, ids)
    ev = sp.eigenvalues(F, bd, config.window, config.resolution)
    n_max = max((len(v) for v in ev), default=0)
    if n_max == 0:
        return {"masses": np.empty(0), "oracle": np.empty(0)}
    pad = np.zeros((len(ev), n_max))
    for i, v in enumerate(ev):
        pad[i, :len(v)] = v
        pad[i, len(v):] = v[0] if len(v) else 0.0
    m = lambda z: sp.weyl_m_paired(F, bd, z)
    mass = sp.stieltjes_atom(m, pad, config.eps)
    oracle = sp.eigenfunction_mass(F, pad)
    masses = np.concatenate([mass[i, :len(v)] for i, v in enumerate(ev)])
    orc = np.concatenate([oracle[i, :len(v)] for i, v in enumerate(ev)])
    return {"masses": masses, "oracle": orc}


def run_gamma_masses(config, threads=1):
    """Pooled spectral masses against the Gamma law with shape beta/2 and mean 2.

    With ``system = bessel`` the same statistics are computed for the coupled
    Bessel system at the first shift of E_list and labeled exploratory.
    """
    exploratory = config.system == "bessel"
    if not exploratory and not config.beta > 2:
        raise ConfigError("sine masses are defined through the boundary only for beta > 2")
    E_list = config.E_list[:1]
    cells = _cells(config, E_list=E_list)
    results = _run_cells(partial(_masses_cell, config), cells, threads)
    masses = np.concatenate([r["masses"] for r in results])
    oracle = np.concatenate([r["oracle"] for r in results])
    report = StatsReport("gamma-masses", config)
    report.metadata["exploratory"] = exploratory
    label = "bessel_" if exploratory else ""
    pooled = masses[:config.n_masses]
    shape, scale = config.beta / 2, 4.0 / config.beta
    ks = ks_statistic(pooled, stats.gamma(shape, scale=scale).cdf) if pooled.size else 1.0
    report.add_value(None, f"{label}n_masses", masses.size)
    report.add_value(None, f"{label}mean_mass", pooled.mean() if pooled.size else float("nan"))
    report.add_value(None, f"{label}gamma_ks", ks)
    if masses.size:
        rel = np.abs(masses - oracle) / oracle
        report.add_quantiles(None, f"{label}mass_route_reldiff", rel)
        report.add_value(None, f"{label}min_mass", masses.min())
    if not exploratory:
        report.add_flag("enough_masses", masses.size >= config.n_masses, f"n={masses.size}")
        report.add_flag("masses_positive", bool(np.all(pooled > 0)))
        report.add_flag("gamma_ks", ks <= config.ks_max, f"ks={ks:.4g} max={config.ks_max}")
    return report


# --- selftest ---------------------------------------------------------------

def run_selftest(config, threads=1):
    """Closed-form oracles: free system, beta = infinity Bessel, Herglotz fixtures."""
    report = StatsReport("selftest", config)
    n = 2001
    t = np.linspace(0, np.pi, n)
    free = sp.CoefficientMatrixField(t, np.broadcast_to(np.eye(2), (n, 2, 2)))
    bd = sp.BoundaryData.from_angle(0.0)
    ev = sp.eigenvalues(free, bd, (-5.5, 5.5))
    err = np.max(np.abs(ev - np.arange(-5, 6))) if ev.size == 11 else np.inf
    report.add_value(None, "free_eigen_err", err)
    report.add_flag("free_eigenvalues", err <= 1e-8, f"err={err:.3g}")
    m = sp.weyl_m_limit_circle(free, bd)
    mass_err = max(abs(sp.stieltjes_atom(m, x) - 1 / np.pi) for x in ev)
    report.add_value(None, "free_mass_err", mass_err)
    report.add_flag("free_masses", mass_err <= 1e-4, f"err={mass_err:.3g}")
    worst = 0.0
    for E in (100.0, 1e4):
        for a in (0.0, 0.5, 1.0):
            worst = max(worst, beta_infinity_error(a, E))
    report.add_value(None, "bessel_oracle_err", worst)
    report.add_flag("bessel_oracle", worst <= 1e-3, f"err={worst:.3g}")
    lam0 = 0.7
    atom = sp.stieltjes_atom(lambda z: 1 / (lam0 - z), lam0)
    report.add_flag("atom_fixture", abs(atom - 1) <= 1e-10, f"mass={atom:.12g}")
    zs = np.array([1j, 1 + 1j, -2 + 0.5j])
    ok = (sp.herglotz_violation(lambda z: -1 / z, zs) == 0
          and sp.herglotz_violation(np.conj, zs) > 0)
    report.add_flag("herglotz_fixtures", ok)
    return report


def beta_infinity_error(a, E, t_max=3.0, phase_cap=0.1, max_step=0.01):
    """Worst relative error of the zero-noise polar reconstruction on Bessel times [0, t_max].

    Errors are measured in the amplitude norm hypot(S h, h'/S), S = E^{1/4} e^{-t/4},
    in which both solutions have slowly varying size.
    """
    params = bs.BesselParams(np.inf, a)
    shift = bs.shift_params(params, E)
    pairs = bs.fundamental_pair(params, shift, RngSeed(0, 0, 0), phase_cap=phase_cap,
                                max_step=max_step)
    zero = RealPath(pairs.grid, np.zeros(len(pairs.grid)))
    s = bs.eta(pairs.grid.nodes, shift)
    keep = s <= t_max
    ref = bs.deterministic_bessel_reference(a, E, s[keep])
    S = E ** 0.25 * np.exp(-s[keep] / 4)
    worst = 0.0
    for pair, (h, hp) in ((pairs.f, ref[:2]), (pairs.g, ref[2:])):
        v, vp = bs.solutions_from_polar(pair, shift, zero, params)
        v, vp = v[keep], vp[keep]
        rel = np.hypot(S * (v - h), (vp - hp) / S) / np.hypot(S * h, hp / S)
        worst = max(worst, float(rel.max()))
    return worst


_RUNNERS = {
    "vague": run_vague_convergence,
    "spectra": run_spectral_convergence,
    "weyl": run_wt_convergence,
    "asymptotics": run_asymptotics,
    "coupling": run_coupling_decay,
    "gamma-masses": run_gamma_masses,
    "selftest": run_selftest,
}


def run_command(command, config, threads=1):
    start = time.time()
    report = _RUNNERS[command](config, threads=threads)
    report.metadata.update({
        "threads": threads,
        "wall_seconds": round(time.time() - start, 3),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed_streams": {"B_E": STREAM_B, "W_fill": STREAM_FILL,
                         "reversed": STREAM_REVERSED, "sine": STREAM_SINE},
        "sine_horizon": config.sine_horizon,
    })
    return report
