import json
import math
import subprocess

import numpy as np
import pytest

from scalarmix import harness
from scalarmix.cli import main
from scalarmix.config import parse_config
from scalarmix.errors import ConfigurationError, SmixError
from scalarmix.spectral import ScalarField, read_snapshot, write_snapshot

HEAT = """\
[flow]
kind = steady-shear
amplitude = 1.0
[budget]
normalize = false
[solver]
n = 64
dt = 0.001
kappa = 0.01
horizon = 1.0
diagnostic_cadence = 10
snapshot_cadence = 250
"""

TRANSPORT = """\
[flow]
kind = alternating-sine
seed = 5
[solver]
n = 256
dt = 0.01
kappa = 0
horizon = 1.0
"""

DRY_SWEEP = """\
[solver]
kappa = 1e-2, 1e-3, 1e-4, 1e-5
resolution_override = true
[sweep]
dry_run = true
synthetic_beta = 1.0
synthetic_c = 0.7
"""


def heat_config():
    return parse_config(HEAT, overrides=["flow.amplitude=0"])


def two_cell_field(path):
    v = np.zeros((4, 4))
    v[0, 0], v[1, 0] = 8.0, -8.0
    write_snapshot(path, ScalarField(v))
    return path


def test_simulate_heat_matches_analytic(tmp_path):
    res = harness.cmd_simulate(heat_config(), tmp_path / "run")
    t = res.series.times
    np.testing.assert_allclose(res.series.l2, np.exp(-4 * math.pi**2 * 0.01 * t) / math.sqrt(2), rtol=1e-6)
    for name in ("diagnostics.csv", "config.ini", "manifest.json", "final.bin", "snapshots/times.csv"):
        assert (tmp_path / "run" / name).exists()
    assert len(list((tmp_path / "run" / "snapshots").glob("snap_*.bin"))) == 5
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["config_sha256"] == heat_config().digest()
    assert man["energy_residual_max"] <= 1e-6
    assert parse_config((tmp_path / "run" / "config.ini").read_text()) == heat_config()


def test_simulate_transport_records_drift(tmp_path):
    res = harness.cmd_simulate(parse_config(TRANSPORT), tmp_path / "t")
    drift = res.manifest["lq_drift"]
    assert drift["l2"] <= 1e-3 and drift["l4"] <= 1e-3
    assert res.manifest["budget"]["value"] == pytest.approx(1.0, abs=1e-6)


def test_simulate_is_deterministic(tmp_path):
    harness.cmd_simulate(heat_config(), tmp_path / "a")
    harness.cmd_simulate(heat_config(), tmp_path / "b")
    for name in ("diagnostics.csv", "manifest.json", "final.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_rejects_kappa_list():
    with pytest.raises(ConfigurationError):
        harness.cmd_simulate(parse_config(DRY_SWEEP), "unused")


def test_dry_run_sweep_recovers_beta(tmp_path):
    rep = harness.cmd_sweep(parse_config(DRY_SWEEP), tmp_path / "sw")
    assert rep.synthetic
    assert rep.scaling.beta == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(rep.scaling.constants, 0.7, rtol=1e-9)
    doc = json.loads((tmp_path / "sw" / "report.json").read_text())
    assert doc["scaling"]["beta"] == pytest.approx(1.0, abs=1e-9)
    names = [row["invariant"] for row in doc["ledger"]]
    assert any("nonincreasing" in n for n in names) and any("c_i" in n for n in names)


def test_sweep_needs_four_kappas(tmp_path):
    cfg = parse_config("[solver]\nkappa = 1e-2\n[sweep]\ndry_run = true\n")
    with pytest.raises(ConfigurationError):
        harness.cmd_sweep(cfg, tmp_path)


def test_sweep_abort_preserves_partial_results(tmp_path):
    text = """\
[flow]
kind = steady-shear
[budget]
normalize = false
[solver]
kappa = 0.05, 0.04, 0.03, 0.02
n = 64
dt = 0.001, 0.001, 0.001, 0.1
horizon = 0.1
"""
    with pytest.raises(SmixError, match="CFL"):
        harness.cmd_sweep(parse_config(text), tmp_path / "sw")
    doc = json.loads((tmp_path / "sw" / "report.json").read_text())
    assert "CFL" in doc["aborted"]
    assert (tmp_path / "sw" / "kappa_5.000e-02" / "diagnostics.csv").exists()


def test_krdist_two_cell(tmp_path):
    src = two_cell_field(tmp_path / "f.bin")
    res = harness.cmd_krdist(src, [0.1, 0.01, 1.0], tmp_path / "kr")
    assert res[0].value == pytest.approx(0.626381, abs=1e-6)
    vals = [r.value for r in res]
    assert vals[1] >= vals[0] >= vals[2]
    doc = json.loads((tmp_path / "kr" / "krdist.json").read_text())
    assert len(doc["results"]) == 3
    assert (tmp_path / "kr" / "plan_00.csv").read_text().startswith("x_src,y_src,x_dst,y_dst,mass")


def test_krdist_entropic_fixture(tmp_path, rng):
    from tests.conftest import random_mean_zero
    src = tmp_path / "f.bin"
    write_snapshot(src, random_mean_zero(rng, 8))
    ex = harness.cmd_krdist(src, [0.1], method="exact")[0].value
    en = harness.cmd_krdist(src, [0.1], method="entropic")[0].value
    assert abs(ex - en) <= 1e-3


def test_report_files(tmp_path):
    harness.cmd_sweep(parse_config(DRY_SWEEP), tmp_path / "sw")
    harness.cmd_simulate(heat_config(), tmp_path / "runs" / "heat")
    summary = harness.cmd_report([tmp_path / "runs"], tmp_path / "rep")
    for name in ("fig_norms.csv", "fig_rate_vs_kappa.csv", "fig_batchelor.csv", "fig_crossover.csv", "summary.json"):
        assert (tmp_path / "rep" / name).exists()
    assert summary["runs"][0]["kappa"] == 0.01
    rows = (tmp_path / "rep" / "fig_norms.csv").read_text().splitlines()[1:]
    l2 = [float(r.split(",")[3]) for r in rows]
    assert all(b < a for a, b in zip(l2, l2[1:]))
    with pytest.raises(ConfigurationError):
        harness.cmd_report([], tmp_path / "x")


def test_check_suite_passes():
    rows = harness.check()
    assert rows and all(r["passed"] for r in rows)


def test_random_field_seeded():
    a = harness.build_random_field(32, 7)
    assert a.values.tobytes() == harness.build_random_field(32, 7).values.tobytes()
    assert abs(a.mean) <= 1e-15
    assert np.sqrt(np.mean(a.values**2)) == pytest.approx(1 / math.sqrt(2), rel=1e-12)


# -- command line ---------------------------------------------------------------------------


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_simulate_and_seed(tmp_path, capsys):
    cfg = write(tmp_path, TRANSPORT.replace("n = 256", "n = 64").replace("horizon = 1.0", "horizon = 0.1"))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "r"), "--seed", "11"]) == 0
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["seed"] == 11 and int(man["flow"]["seed"]) == 11


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "[solver]\nn = 100\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "r")]) == 2
    assert "c.ini:2" in capsys.readouterr().err
    assert main(["simulate", "--override", "solver.bogus=1", "--out", str(tmp_path / "r")]) == 2


def test_cli_usage_error_exit_code():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_cli_report_without_runs(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == 2


def test_cli_under_resolved_is_invariant_failure(tmp_path):
    cfg = write(tmp_path, "[flow]\nkind = steady-shear\n[solver]\nn = 16\ndt = 0.01\nkappa = 0\nhorizon = 30\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "r")]) == 1
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["under_resolved"]


def test_cli_krdist_prints_json(tmp_path, capsys):
    src = two_cell_field(tmp_path / "f.bin")
    assert main(["krdist", str(src), "--delta", "0.1"]) == 0
    doc = json.loads(capsys.readouterr().out.strip().splitlines()[0])
    assert doc["value"] == pytest.approx(0.626381, abs=1e-6)
    assert doc["method"] == "exact-flow"


def test_cli_dry_sweep(tmp_path, capsys):
    cfg = write(tmp_path, DRY_SWEEP)
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_console_script_check():
    proc = subprocess.run(["smix", "check"], capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.count("PASS") == 6


def test_snapshot_round_trip_from_run(tmp_path):
    res = harness.cmd_simulate(heat_config(), tmp_path / "r")
    back = read_snapshot(tmp_path / "r" / "final.bin")
    assert back.values.tobytes() == res.series.final.values.tobytes()
