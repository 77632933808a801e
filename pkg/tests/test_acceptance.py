"""Acceptance criteria at full size. Each test records one PASS/FAIL line for the summary."""
import time

import numpy as np
import pytest

from hardedge import bessel as bs
from hardedge import spectral as sp
from hardedge.harness import COMMANDS, load_config, run_command, beta_infinity_error
from hardedge.sine import sine_field
from hardedge.stochastic import RealPath, RngSeed, TimeGrid, make_grid, sample_brownian, \
    sample_complex_brownian

SEED = 20240601


def _flag(report, name):
    for n, passed, detail in report.flags:
        if n == name:
            return passed, detail
    raise KeyError(name)


def _check(record, number, title, passed, detail):
    record(number, title, passed, detail)
    assert passed, f"criterion {number} ({title}): {detail}"


# --- transfer matrices and closed-form oracles ------------------------------------

def test_c01_unimodularity(record_criterion):
    start = time.time()
    rng = np.random.default_rng(SEED)
    g = make_grid(0.0, 12.0, 0.01, uniform_in="log_time")
    params = bs.BesselParams(2.0, 0.0)
    shift = bs.shift_params(params, 1e3)
    worst = 0.0
    for k in range(100):
        if k % 2 == 0:
            F = sine_field(rng.choice([1.0, 2.0, 4.0]),
                           sample_complex_brownian(RngSeed(SEED, 3, k), g))
        else:
            pairs = bs.fundamental_pair(params, shift, RngSeed(SEED, 0, k))
            F = bs.bessel_field(pairs, shift)
        t = rng.uniform(F.nodes[1], F.nodes[-1])
        z = complex(rng.uniform(-10, 10), rng.uniform(-1, 1))
        T = sp.transfer_matrix(F, t, z).value
        worst = max(worst, abs(np.linalg.det(T) - 1))
    elapsed = time.time() - start
    _check(record_criterion, 1, "unimodularity", worst <= 1e-6 and elapsed <= 60,
           f"max|det T - 1| = {worst:.3g}, {elapsed:.1f} s")


def test_c02_free_system_oracle(record_criterion):
    n = 2001
    F = sp.CoefficientMatrixField(np.linspace(0, np.pi, n), np.broadcast_to(np.eye(2), (n, 2, 2)))
    bd = sp.BoundaryData.from_vector([1.0, 0.0])
    ev = sp.eigenvalues(F, bd, (-5.5, 5.5))
    ev_err = np.max(np.abs(ev - np.arange(-5, 6))) if ev.size == 11 else np.inf
    m = sp.weyl_m_limit_circle(F, bd)
    mass_err = max(abs(sp.stieltjes_atom(m, x) - 1 / np.pi) for x in ev)
    _check(record_criterion, 2, "free-system oracle", ev_err <= 1e-8 and mass_err <= 1e-4,
           f"eigenvalue err {ev_err:.3g}, mass err {mass_err:.3g}")


def test_c03_beta_infinity_bessel_oracle(record_criterion):
    worst = max(beta_infinity_error(a, E) for E in (100.0, 1e4) for a in (0.0, 0.5, 1.0))
    _check(record_criterion, 3, "beta=inf Bessel oracle", worst <= 1e-3,
           f"max relative error {worst:.3g}")


# --- polar integrator on 200 paths ---------------------------------------------------

@pytest.fixture(scope="module")
def polar_runs():
    """200 paths at E=1e4, beta=4 on a fine grid (cap 0.025) and its every-other-node
    coarsening (cap 0.05), driven by the same Brownian paths."""
    params = bs.BesselParams(4.0, 0.0)
    shift = bs.shift_params(params, 1e4)
    fine = bs.polar_grid(shift, phase_cap=0.025, max_step=0.005)
    keep = np.arange(0, len(fine), 2)
    if keep[-1] != len(fine) - 1:
        keep = np.append(keep, len(fine) - 1)
    coarse = TimeGrid(fine.nodes[keep])
    out = {"sup_coarse": [], "sup_fine": [], "rank": 0.0, "det": 0.0, "det_ulps": 0.0,
           "det_nodes": 0, "det_bad": 0}
    for lo in range(0, 200, 50):
        seeds = [RngSeed(SEED, 0, i) for i in range(lo, lo + 50)]
        B = np.stack([sample_brownian(s, fine).values for s in seeds])
        pf = bs.fundamental_pair(params, shift, seeds, grid=fine, phase_cap=0.025,
                                 noise=RealPath(fine, B))
        pc = bs.fundamental_pair(params, shift, seeds, grid=coarse, phase_cap=0.05,
                                 noise=RealPath(coarse, B[:, keep]))
        out["sup_fine"].append(np.max(np.abs(pf.wronskian - 1), axis=-1))
        out["sup_coarse"].append(np.max(np.abs(pc.wronskian - 1), axis=-1))
        full, hyp, _ = bs.bessel_matrix(pc, shift)
        tr = np.trace(full, axis1=-2, axis2=-1)
        out["rank"] = max(out["rank"], float(np.max(np.linalg.eigvalsh(full)[..., 0] / tr)))
        det = hyp[..., 0, 0] * hyp[..., 1, 1] - hyp[..., 0, 1] ** 2
        err = np.abs(det - shift.c ** 2 / 4)
        out["det"] = max(out["det"], float(err.max()))
        # error in units of the rounding scale of the products h11 h22
        ulps = err / (np.finfo(float).eps * hyp[..., 0, 0] * hyp[..., 1, 1])
        out["det_ulps"] = max(out["det_ulps"], float(ulps.max()))
        out["det_nodes"] += err.size
        out["det_bad"] += int(np.sum(err > 1e-10))
    out["sup_fine"] = np.concatenate(out["sup_fine"])
    out["sup_coarse"] = np.concatenate(out["sup_coarse"])
    return out


def test_c04_wronskian_conservation(record_criterion, polar_runs):
    p99 = np.quantile(polar_runs["sup_coarse"], 0.99)
    med_c, med_f = np.median(polar_runs["sup_coarse"]), np.median(polar_runs["sup_fine"])
    order = np.log2(med_c / med_f)
    _check(record_criterion, 4, "Wronskian conservation", p99 <= 1e-2 and order >= 0.8,
           f"p99 {p99:.3g}, median {med_c:.3g} -> {med_f:.3g}, order {order:.3g}")


def test_c05_rank_one(record_criterion, polar_runs):
    worst = polar_runs["rank"]
    _check(record_criterion, 5, "rank-1 structure", worst <= 1e-10,
           f"max min-eigenvalue/trace {worst:.3g}")


def test_c06_hyperbolic_determinant(record_criterion, polar_runs):
    worst = polar_runs["det"]
    _check(record_criterion, 6, "hyperbolic determinant", worst <= 1e-10,
           f"max|det - c^2/4| {worst:.3g}; {polar_runs['det_bad']} of "
           f"{polar_runs['det_nodes']} nodes above 1e-10; worst {polar_runs['det_ulps']:.3g} "
           f"rounding units of h11*h22")


# --- coupling sweep ----------------------------------------------------------------

@pytest.fixture(scope="module")
def coupling_report():
    return run_command("coupling", load_config("coupling", alpha=0.3, delta=0.05))


def test_c07_coupling_decay(record_criterion, coupling_report):
    dec, dec_detail = _flag(coupling_report, "deviation_sup_decreasing")
    slope, slope_detail = _flag(coupling_report, "deviation_sup_slope")
    _check(record_criterion, 7, "coupling decay", dec and slope,
           f"medians {dec_detail}; {slope_detail}")


def test_c08_gbm_comparison(record_criterion, coupling_report):
    ok, detail = _flag(coupling_report, "gbm_sup_lin_decreasing")
    _check(record_criterion, 8, "GBM comparison", ok, f"medians {detail}")


def test_c09_rehbm_comparison(record_criterion, coupling_report):
    ok, detail = _flag(coupling_report, "rehbm_decreasing")
    _check(record_criterion, 9, "re-HBM comparison", ok, f"medians {detail}")


def test_c10_vague_convergence(record_criterion):
    report = run_command("vague", load_config("vague", bump=(0.1, 0.6), bump_vector=(1.0, 0.0)))
    dec, dec_detail = _flag(report, "median_decreasing")
    ratio, ratio_detail = _flag(report, "final_vs_first")
    _check(record_criterion, 10, "vague convergence", dec and ratio,
           f"medians {dec_detail}; {ratio_detail}")


# --- spectra and Weyl functions --------------------------------------------------------

@pytest.fixture(scope="module")
def spectra_report():
    start = time.time()
    report = run_command("spectra", load_config("spectra"))
    report.metadata["elapsed"] = time.time() - start
    return report


def test_c11_spectral_convergence(record_criterion, spectra_report):
    parts = [_flag(spectra_report, k) for k in
             ("spacing_ks_decreasing", "hausdorff_decreasing", "weyl_maxdiff_decreasing")]
    elapsed = spectra_report.metadata["elapsed"]
    ok = all(p for p, _ in parts) and elapsed <= 1800
    detail = "; ".join(f"{k.split('_decreasing')[0]} {d}" for k, (_, d) in
                       zip(("spacing_ks", "hausdorff", "weyl_maxdiff"), parts))
    _check(record_criterion, 11, "spectral convergence", ok, f"{detail}; {elapsed:.0f} s")


def test_c12_herglotz(record_criterion, spectra_report):
    weyl = run_command("weyl", load_config("weyl"))
    ok_s, det_s = _flag(spectra_report, "herglotz")
    ok_w, det_w = _flag(weyl, "herglotz")
    _check(record_criterion, 12, "Herglotz property", ok_s and ok_w,
           f"spectra {det_s}, weyl {det_w}")


# --- reversed-time asymptotics and spectral masses ---------------------------------------

def test_c13_asymptotics(record_criterion):
    start = time.time()
    report = run_command("asymptotics", load_config("asymptotics", lam=1.0, T=50.0))
    elapsed = time.time() - start
    parts = [_flag(report, k) for k in ("slope", "envelope", "phase_uniform")]
    ok = all(p for p, _ in parts) and elapsed <= 600
    _check(record_criterion, 13, "asymptotics", ok,
           "; ".join(d for _, d in parts) + f"; {elapsed:.0f} s")


def test_c14_gamma_masses(record_criterion):
    start = time.time()
    report = run_command("gamma-masses", load_config("gamma-masses", n_masses=300))
    elapsed = time.time() - start
    parts = [_flag(report, k) for k in ("enough_masses", "masses_positive", "gamma_ks")]
    ok = all(p for p, _ in parts) and elapsed <= 900
    _check(record_criterion, 14, "Gamma masses", ok,
           "; ".join(d for _, d in parts if d) + f"; {elapsed:.0f} s")


# --- reproducibility -------------------------------------------------------------------

def test_c15_reproducibility(record_criterion):
    """Every subcommand at reduced size: rerun and two-process run give identical CSV."""
    small = {
        "vague": dict(paths=4, chunk=2, E_list=(1e2, 1e3)),
        "spectra": dict(paths=2, chunk=1, E_list=(1e2, 1e3)),
        "weyl": dict(paths=4, chunk=2, E_list=(1e2, 1e3)),
        "asymptotics": dict(paths=4, chunk=2, phase_paths=4, T=20.0),
        "coupling": dict(paths=4, chunk=2, E_list=(1e2, 1e3)),
        "gamma-masses": dict(paths=4, chunk=2),
        "selftest": dict(),
    }
    bad = []
    for command in COMMANDS:
        cfg = load_config(command, **small[command])
        first = run_command(command, cfg).csv_text()
        again = run_command(command, cfg).csv_text()
        parallel = run_command(command, cfg, threads=2).csv_text()
        if not first == again == parallel:
            bad.append(command)
    _check(record_criterion, 15, "reproducibility", not bad,
           "all subcommands byte-identical" if not bad else f"differs: {bad}")
