import json

import numpy as np
import pytest
from scipy import stats

from hardedge import cli
from hardedge.errors import ConfigError, DomainError
from hardedge.harness import (ExperimentConfig, StatsReport, ks_statistic, load_config,
                              parse_config_text, run_command)


def test_parse_config_text():
    text = """
    # comment line
    seed = 7
    E_list = 1e2, 1e3   # trailing comment
    z_grid = 1j, 1+1i
    system = bessel
    """
    values = parse_config_text(text)
    assert values == {"seed": 7, "E_list": (100.0, 1000.0), "z_grid": (1j, 1 + 1j),
                      "system": "bessel"}
    with pytest.raises(ConfigError):
        parse_config_text("nonsense = 1")
    with pytest.raises(ConfigError):
        parse_config_text("seed 7")
    with pytest.raises(ConfigError):
        parse_config_text("paths = many")


def test_load_config_precedence(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("paths = 12\nseed = 3\n")
    cfg = load_config("weyl", str(path), seed=9, chunk=4)
    assert (cfg.beta, cfg.paths, cfg.seed, cfg.chunk) == (4.0, 12, 9, 4)
    with pytest.raises(ConfigError):
        load_config("nope")


def test_config_validation_and_digest():
    with pytest.raises(ConfigError):
        ExperimentConfig(E_list=(1e3, 1e2))
    with pytest.raises(ConfigError):
        ExperimentConfig(paths=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(system="other")
    assert ExperimentConfig().digest() == ExperimentConfig().digest()
    assert ExperimentConfig().digest() != ExperimentConfig(seed=1).digest()


def test_ks_statistic_examples():
    x = np.linspace(0, 1, 50)
    assert ks_statistic(x, x) == 0
    assert ks_statistic([0.0], stats.uniform.cdf) == 1.0
    assert ks_statistic([0.0, 0.1], [5.0, 6.0]) == 1.0
    assert ks_statistic(x, "uniform") < 0.05
    with pytest.raises(DomainError):
        ks_statistic([], x)
    with pytest.raises(DomainError):
        ks_statistic(x, [])


def test_csv_full_precision_and_hash():
    cfg = ExperimentConfig()
    r = StatsReport("selftest", cfg)
    r.add_value(10.0, "thing", 1 / 3)
    r.add_flag("ok", True, "fine")
    lines = r.csv_text().splitlines()
    assert lines[0] == "config,E,statistic,quantile,value"
    assert all(line.startswith(cfg.digest() + ",") for line in lines[1:])
    assert float(lines[1].split(",")[-1]) == 1 / 3
    assert lines[2].endswith("check:ok,pass,fine")


def test_report_series_and_values():
    r = StatsReport("x", ExperimentConfig())
    r.add_quantiles(1e2, "s", [1.0, 2.0, 3.0])
    r.add_quantiles(1e3, "s", [np.nan])
    assert r.value(1e2, "s") == 2.0
    assert np.isnan(r.series("s")[1])
    with pytest.raises(KeyError):
        r.value(1e4, "s")


def test_cli_selftest(tmp_path, capsys):
    code = cli.main(["selftest", "--out", str(tmp_path)])
    assert code == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["passed"] and doc["command"] == "selftest"
    assert "PASS free_eigenvalues" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert cli.main(["coupling", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_small_run_reproducible_across_threads():
    cfg = load_config("coupling", paths=4, chunk=2, E_list=(1e2, 1e3))
    serial = run_command("coupling", cfg, threads=1).csv_text()
    again = run_command("coupling", cfg, threads=1).csv_text()
    parallel = run_command("coupling", cfg, threads=2).csv_text()
    assert serial == again == parallel


def test_vague_rejects_bad_support():
    with pytest.raises(ConfigError):
        run_command("vague", load_config("vague", bump=(0.1, 1.2), paths=1))
    with pytest.raises(ConfigError):
        run_command("vague", load_config("vague", bump=(0.5, 0.2), paths=1))


def test_vague_zero_test_function():
    cfg = load_config("vague", bump_vector=(0.0, 0.0), paths=2, E_list=(1e2, 1e3))
    report = run_command("vague", cfg)
    assert all(v == 0 for v in report.series("abs_statistic"))


def test_spectra_rejects_large_a():
    with pytest.raises(ConfigError):
        run_command("spectra", load_config("spectra", a=1.5, paths=1))
