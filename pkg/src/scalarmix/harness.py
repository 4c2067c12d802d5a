"""Experiment orchestration: single runs, kappa sweeps, KR distances and plot data.

Every command writes into its own output directory and never reads the
clock or any other source of nondeterminism, so repeated invocations with the
same configuration produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ExperimentConfig
from .diagnostics import (
    RateFit,
    batchelor_plateau,
    batchelor_scale,
    crossover_time,
    enhancement_report,
    fit_exponential_rate,
    scaling_fit,
    theoretical_T,
)
from .errors import ConfigurationError, SmixError, UnderResolvedError
from .flows import (
    make_alternating_sine_flow,
    make_cellular_flow,
    make_steady_shear,
    normalize_to_budget,
)
from .kr import discretize, kr_coarse, kr_distance_entropic, kr_distance_exact
from .solver import SimulationSeries, SolverConfig, energy_identity_residual, solve
from .spectral import ScalarField, export_csv, get_threads, grid, read_snapshot, write_snapshot

__all__ = [
    "build_protocol",
    "build_initial",
    "solver_config",
    "cmd_simulate",
    "cmd_sweep",
    "cmd_krdist",
    "cmd_report",
    "check",
    "SweepReport",
    "RunResult",
    "InvariantFailure",
    "build_random_field",
]

MEAN_TOL = 1e-12


class InvariantFailure(SmixError):
    """An asserted invariant did not hold; carries the ledger rows."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows or []


def _json_dump(obj, path) -> None:
    with open(path, "w", newline="") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _finite(x):
    """JSON has no infinities; encode them as strings."""
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


# -- builders ------------------------------------------------------------------------


def build_protocol(cfg: ExperimentConfig, horizon: float):
    """Flow protocol of the config, normalised to the budget when requested."""
    f = cfg["flow"]
    kind = f["kind"]
    if kind == "alternating-sine":
        proto = make_alternating_sine_flow(f["seed"], f["switching_period"], f["amplitude"],
                                           random_phases=f["random_phases"], schedule=f["schedule"],
                                           schedule_s=f["schedule_s"])
    elif kind == "steady-shear":
        proto = make_steady_shear(f["amplitude"])
    else:
        proto = make_cellular_flow(f["amplitude"])
    b = cfg["budget"]
    if not b["normalize"]:
        return proto, None
    bh = b["horizon"] if b["horizon"] > 0 else horizon
    return normalize_to_budget(proto, b["p"], b["s"], bh)


def build_initial(cfg: ExperimentConfig, n: int) -> ScalarField:
    """Initial datum: a single Fourier mode or a seeded random band-limited field."""
    i = cfg["initial"]
    x, y = grid(n)
    if i["kind"] == "sine":
        return ScalarField(np.sin(2 * np.pi * (i["kx"] * x + i["ky"] * y)))
    return build_random_field(n, i["seed"], i["modes"])


def solver_config(cfg: ExperimentConfig, index: int = 0) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(
        n=cfg.per_kappa("n", index), dt=cfg.per_kappa("dt", index), kappa=s["kappa"][index],
        dealias=s["dealias"], scheme=s["scheme"], snapshot_cadence=s["snapshot_cadence"],
        diagnostic_cadence=s["diagnostic_cadence"], lq=s["lq"],
        resolution_override=s["resolution_override"], quadrature=s["quadrature"])


# -- single runs -----------------------------------------------------------------------


@dataclass
class RunResult:
    directory: Path
    series: SimulationSeries
    manifest: dict
    under_resolved: bool = False


def _run_index(cfg: ExperimentConfig, index: int, out: Path) -> RunResult:
    scfg = solver_config(cfg, index)
    horizon = cfg.per_kappa("horizon", index)
    proto, budget = build_protocol(cfg, horizon)
    theta0 = build_initial(cfg, scfg.n)
    out.mkdir(parents=True, exist_ok=True)
    under = False
    message = None
    try:
        series = solve(theta0, proto, scfg, horizon)
    except UnderResolvedError as exc:
        series = exc.series
        under = True
        message = str(exc)
    series.to_csv(out / "diagnostics.csv")
    with open(out / "config.ini", "w", newline="") as fh:
        fh.write(cfg.to_text())
    manifest = {
        "artifact": "scalarmix",
        "version": __version__,
        "config_sha256": cfg.digest(),
        "kappa_index": index,
        "solver": scfg.as_dict(),
        "flow": proto.to_config(),
        "seed": cfg["flow"]["seed"],
        "horizon": horizon,
        "budget": budget.as_dict() if budget is not None else None,
        "kernel_backend": kernels.BACKEND,
        "fft_threads": get_threads(),
        "samples": len(series.times),
        "final_time": float(series.times[-1]),
        "under_resolved": under,
        "under_resolved_message": message,
        "mean_max_abs": float(np.abs(series.mean).max()),
    }
    if scfg.kappa > 0:
        manifest["energy_residual_max"] = float(energy_identity_residual(series).max())
    else:
        manifest["lq_drift"] = series.drift()
    manifest = {k: _finite(v) for k, v in manifest.items()}
    _json_dump(manifest, out / "manifest.json")
    if series.snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for k, (t, f) in enumerate(series.snapshots):
            write_snapshot(snap_dir / f"snap_{k:05d}.bin", f)
        with open(snap_dir / "times.csv", "w", newline="") as fh:
            fh.write("index,t\n")
            for k, (t, _) in enumerate(series.snapshots):
                fh.write(f"{k},{t!r}\n")
    write_snapshot(out / "final.bin", series.final)
    if cfg["output"]["export_field_csv"]:
        export_csv(out / "final.csv", series.final)
    return RunResult(out, series, manifest, under)


def cmd_simulate(cfg: ExperimentConfig, out) -> RunResult:
    """Run the single configured kappa into ``out``.

    Writes ``diagnostics.csv``, ``config.ini`` (the exact configuration),
    ``manifest.json``, ``final.bin`` and, when enabled, ``snapshots/``.  A
    transport run that becomes under-resolved keeps its partial output and
    is flagged in the manifest.
    """
    if len(cfg.kappas) != 1:
        raise ConfigurationError("simulate takes a single kappa; use sweep for kappa lists")
    return _run_index(cfg, 0, Path(out))


# -- sweeps ------------------------------------------------------------------------------


@dataclass
class SweepReport:
    """Per-kappa fits and scales, the scaling fit, and the invariant ledger."""

    kappas: list
    fits: dict
    scaling: object
    crossovers: list
    batchelor: list
    enhancement: dict
    ledger: list
    runs: dict = field(default_factory=dict, repr=False)
    synthetic: bool = False

    @property
    def passed(self) -> bool:
        return all(row["passed"] for row in self.ledger)

    def as_dict(self) -> dict:
        return {
            "synthetic": self.synthetic,
            "kappas": self.kappas,
            "fits": {repr(k): f.as_dict() if isinstance(f, RateFit) else f for k, f in self.fits.items()},
            "scaling": self.scaling.as_dict() if self.scaling is not None else None,
            "crossovers": [{k: _finite(v) for k, v in row.items()} for row in self.crossovers],
            "batchelor": self.batchelor,
            "enhancement": {repr(k): {kk: _finite(vv) for kk, vv in v.items()} for k, v in self.enhancement.items()},
            "ledger": [{k: _finite(v) for k, v in row.items()} for row in self.ledger],
            "passed": self.passed,
        }


def _synthetic_series(kappa: float, rate: float) -> SimulationSeries:
    t = np.linspace(0.0, 6.0 / rate, 61)
    l2 = np.exp(-rate * t) / np.sqrt(2.0)
    z = np.zeros_like(t)
    return SimulationSeries(times=t, l2=l2, h1neg=l2 / (2 * np.pi), grad_l2=l2 * 2 * np.pi, grad_l1=z,
                            diss_cum=0.5 * (l2[0] ** 2 - l2**2), mean=z, lq={}, lq_dissipation={},
                            kappa=kappa)


def _sweep_worker(args):
    text, index, out = args
    from .config import parse_config
    cfg = parse_config(text)
    res = _run_index(cfg, index, Path(out))
    # snapshots stay on disk; keep the returned object small
    res.series.snapshots = []
    return res


def _ledger_row(name, passed, margin, detail=""):
    return {"invariant": name, "passed": bool(passed), "margin": float(margin) if margin is not None else None,
            "detail": detail}


def cmd_sweep(cfg: ExperimentConfig, out, min_kappas: int = 4) -> SweepReport:
    """Run every kappa of the config and assemble the sweep report.

    With ``[sweep] dry_run = true`` no PDE is solved: each kappa gets an exact
    exponential series with rate ``synthetic_c * log(1/kappa)^-synthetic_beta``,
    which exercises the fitting and reporting path end to end.
    """
    kappas = list(cfg.kappas)
    if len(kappas) < min_kappas:
        raise ConfigurationError(f"a sweep needs at least {min_kappas} kappa values, got {len(kappas)}")
    if any(k <= 0 for k in kappas):
        raise ConfigurationError("sweep kappa values must be positive")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sw = cfg["sweep"]
    dg = cfg["diagnostics"]
    s_exp = dg["s"]
    runs: dict = {}
    report_path = out / "report.json"
    try:
        if sw["dry_run"]:
            for k in kappas:
                runs[k] = _synthetic_series(k, sw["synthetic_c"] * math.log(1 / k) ** -sw["synthetic_beta"])
        else:
            jobs = [(cfg.to_text(), i, str(out / f"kappa_{k:.3e}")) for i, k in enumerate(kappas)]
            if sw["workers"] > 1:
                with ProcessPoolExecutor(max_workers=sw["workers"]) as pool:
                    results = list(pool.map(_sweep_worker, jobs))
            else:
                results = [_run_index(cfg, i, Path(o)) for _, i, o in jobs]
            for k, res in zip(kappas, results):
                if res.under_resolved:
                    raise SmixError(f"run kappa={k:g} stopped early: {res.manifest['under_resolved_message']}")
                runs[k] = res.series
    except SmixError as exc:
        _json_dump({"aborted": str(exc), "completed": [repr(k) for k in runs]}, report_path)
        raise
    report = summarize_sweep(runs, s=s_exp, window=dg["fit_window"], efoldings=dg["efoldings"],
                             min_r2=dg["min_r2"], synthetic=sw["dry_run"])
    _json_dump(report.as_dict(), report_path)
    return report


def summarize_sweep(runs: dict, s: float = math.inf, window="late", efoldings: float = 2.0,
                    min_r2: float = 0.95, synthetic: bool = False) -> SweepReport:
    """Fits, scales and the invariant ledger for a set of runs keyed by kappa."""
    kappas = sorted(runs, reverse=True)
    fits, crossovers, batch, enh, ledger = {}, [], [], {}, []
    for k in kappas:
        ser = runs[k]
        try:
            fits[k] = fit_exponential_rate(ser, "l2", None if window == "late" else window,
                                           efoldings=efoldings, min_r2=min_r2)
        except SmixError as exc:
            fits[k] = {"error": str(exc)}
        tc = crossover_time(ser)
        T = theoretical_T(k, s)
        crossovers.append({"kappa": k, "crossover": tc, "T": T, "margin": tc / T})
        batch.append(batchelor_plateau(ser, s))
        rep = enhancement_report(ser, k)
        enh[k] = rep.as_dict()
        enh[k].pop("halving_checks")
    ok_fits = [k for k in kappas if isinstance(fits[k], RateFit)]
    for k in kappas:
        f = fits[k]
        if isinstance(f, RateFit):
            ledger.append(_ledger_row(f"rate fit r^2 >= {min_r2:g} (kappa={k:g})", f.r_squared >= min_r2,
                                      f.r_squared - min_r2, f"D={f.rate:.6g}"))
        else:
            ledger.append(_ledger_row(f"rate fit (kappa={k:g})", False, None, f["error"]))
    rates = [fits[k].rate for k in ok_fits]
    if len(rates) == len(kappas):
        ratios = [rates[i + 1] / rates[i] for i in range(len(rates) - 1)]
        ledger.append(_ledger_row("D nonincreasing as kappa decreases", all(r <= 1 for r in ratios),
                                  1 - max(ratios), "successive ratios " + ", ".join(f"{r:.4g}" for r in ratios)))
    scaling = None
    if len(ok_fits) >= 2:
        try:
            scaling = scaling_fit([(k, fits[k].rate) for k in ok_fits], s, min_points=min(4, len(ok_fits)))
            spread = scaling.constant_spread
            ledger.append(_ledger_row("max c_i / min c_i <= 10", spread <= 10, 10 - spread,
                                      f"beta={scaling.beta:.4g}"))
        except SmixError as exc:
            ledger.append(_ledger_row("scaling fit", False, None, str(exc)))
    margins = [row["margin"] for row in crossovers]
    ledger.append(_ledger_row("L2 persists to 0.1 T_kappa (crossover margin >= 0.1)",
                              all(m >= 0.1 for m in margins), min(margins) - 0.1,
                              ", ".join(f"{m:.4g}" for m in margins)))
    if not synthetic:
        for k in kappas:
            ser = runs[k]
            r = float(energy_identity_residual(ser).max())
            ledger.append(_ledger_row(f"energy identity residual <= 1e-4 (kappa={k:g})", r <= 1e-4, 1e-4 - r))
            m = float(np.abs(ser.mean).max())
            ledger.append(_ledger_row(f"mean stays zero (kappa={k:g})", m <= MEAN_TOL, MEAN_TOL - m))
    for k in kappas:
        if enh[k]["D"] > 0 and math.isfinite(enh[k]["t0"]):
            ledger.append(_ledger_row(f"iterated halving at multiples of t0 (kappa={k:g})",
                                      enh[k]["halving_holds"], None, f"t0={enh[k]['t0']:.4g}"))
    return SweepReport(kappas, fits, scaling, crossovers, batch, enh, ledger, runs, synthetic)


# -- KR distances ---------------------------------------------------------------------------


def _load_field(source) -> ScalarField:
    p = Path(source)
    if p.is_dir():
        p = p / "final.bin"
    if not p.exists():
        raise ConfigurationError(f"no field found at {source}")
    return read_snapshot(p)


def cmd_krdist(source, deltas, out=None, method: str = "exact", coarse: int = 32) -> list:
    """``D_delta`` of a stored field for every ``delta``; writes ``krdist.json`` into ``out``.

    Fields finer than ``coarse`` are block-averaged first and the
    coarse-graining bound is reported next to the value.
    """
    if method not in ("exact", "entropic"):
        raise ConfigurationError(f"unknown method {method!r}")
    deltas = [float(d) for d in deltas]
    if not deltas or any(not d > 0 for d in deltas):
        raise ConfigurationError("need at least one positive delta")
    theta = _load_field(source)
    results = []
    for d in deltas:
        if theta.n > coarse:
            res = kr_coarse(theta, d, coarse, method)
        else:
            pair = discretize(theta)
            res = kr_distance_exact(pair, d) if method == "exact" else kr_distance_entropic(pair, d)
        results.append(res)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for r in results:
            row = r.as_dict()
            row["coarse_error"] = r.coarse_error
            row["converged"] = r.converged
            rows.append(row)
        _json_dump({"source": str(source), "results": rows}, out / "krdist.json")
        for i, r in enumerate(results):
            if r.plan is not None and r.pair is not None:
                r.write_plan_csv(out / f"plan_{i:02d}.csv")
    return results


# -- reports --------------------------------------------------------------------------------


def _expand_runs(paths):
    runs = []
    for p in map(Path, paths):
        if (p / "diagnostics.csv").exists():
            runs.append(p)
        elif p.is_dir():
            runs.extend(sorted(q.parent for q in p.glob("*/diagnostics.csv")))
        else:
            raise ConfigurationError(f"{p}: not a run or sweep directory")
    if not runs:
        raise ConfigurationError("no run directories found")
    return runs


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in row) + "\n")


def cmd_report(run_dirs, out, s: float = math.inf) -> dict:
    """Emit plot-ready CSV files and ``summary.json`` for the given runs.

    Files: ``fig_norms.csv`` (norms against time), ``fig_rate_vs_kappa.csv``
    (fitted rate against ``log(1/kappa)``), ``fig_batchelor.csv`` (length
    scale against its predicted plateau), ``fig_crossover.csv`` (half-life
    against ``T_{kappa,s}``).
    """
    if not run_dirs:
        raise ConfigurationError("report needs at least one run directory")
    runs = _expand_runs(run_dirs)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    norms, rates, ells, cross, summary = [], [], [], [], []
    for d in runs:
        with open(d / "manifest.json") as fh:
            man = json.load(fh)
        kappa = float(man["solver"]["kappa"])
        ser = SimulationSeries.from_csv(d / "diagnostics.csv", kappa=kappa)
        name = d.name
        for row in zip(ser.times, ser.l2, ser.h1neg, ser.column("lq")):
            norms.append((name, kappa) + row)
        entry = {"run": name, "kappa": kappa, "samples": len(ser.times)}
        if kappa > 0:
            try:
                fit = fit_exponential_rate(ser, "l2")
                rates.append((kappa, math.log(1 / kappa), fit.rate, fit.r_squared))
                entry["rate"] = fit.as_dict()
            except SmixError as exc:
                entry["rate"] = {"error": str(exc)}
            pred = math.sqrt(kappa * theoretical_T(kappa, s)) if kappa < 1 else math.nan
            for t, ell in zip(ser.times, batchelor_scale(ser)):
                ells.append((name, kappa, t, ell, pred))
            tc = crossover_time(ser)
            T = theoretical_T(kappa, s) if kappa < 1 else math.nan
            cross.append((kappa, tc, T, tc / T))
            entry["crossover"] = _finite(tc)
        summary.append(entry)
    _write_rows(out / "fig_norms.csv", ["run", "kappa", "t", "l2", "h1neg", "lq"],
                [(r[0],) + r[1:] for r in norms])
    _write_rows(out / "fig_rate_vs_kappa.csv", ["kappa", "log_inv_kappa", "D", "r_squared"], sorted(rates))
    _write_rows(out / "fig_batchelor.csv", ["run", "kappa", "t", "ell", "predicted_plateau"], ells)
    _write_rows(out / "fig_crossover.csv", ["kappa", "crossover", "T_kappa_s", "ratio"], sorted(cross))
    result = {"runs": summary, "s": _finite(float(s))}
    _json_dump(result, out / "summary.json")
    return result


# -- invariant suite -------------------------------------------------------------------------


def check() -> list:
    """Quick invariant suite; returns ledger rows (see :func:`_ledger_row`)."""
    from .diagnostics import dissipation_fraction
    from .spectral import gradient_norm, sobolev_norm

    rows = []
    heat = solve(ScalarField.from_function(lambda x, y: np.sin(2 * np.pi * x), 32), make_steady_shear(0.0),
                 SolverConfig(n=32, dt=1e-3, kappa=0.01, resolution_override=True), 1.0)
    err = abs(heat.l2[-1] / (math.exp(-4 * math.pi**2 * 0.01) / math.sqrt(2)) - 1)
    rows.append(_ledger_row("heat-kernel amplitude at t=1 (rel. err <= 1e-6)", err <= 1e-6, 1e-6 - err))
    f = dissipation_fraction(heat)
    rows.append(_ledger_row("dissipation fraction: quadrature vs identity", f.discrepancy <= 1e-6,
                            1e-6 - f.discrepancy))
    shear, _ = normalize_to_budget(make_steady_shear(), math.inf, math.inf, 1.0)
    run = solve(build_random_field(64, 0), shear, SolverConfig(n=64, dt=2e-3, kappa=1e-2, diagnostic_cadence=1), 1.0)
    r = float(energy_identity_residual(run).max())
    rows.append(_ledger_row("energy identity on a shear run (<= 1e-4)", r <= 1e-4, 1e-4 - r))
    m = float(np.abs(run.mean).max())
    rows.append(_ledger_row("mean conserved (<= 1e-12)", m <= MEAN_TOL, MEAN_TOL - m))
    from .kr import DiscreteMeasurePair
    pair = DiscreteMeasurePair.from_points([[0.0, 0.0]], [0.5], [[0.25, 0.0]], [0.5])
    v = kr_distance_exact(pair, 0.1).value
    e = abs(v - 0.5 * math.log(3.5))
    rows.append(_ledger_row("KR two-cell value 0.5 log 3.5", e <= 1e-12, 1e-12 - e))
    worst = math.inf
    rng = np.random.default_rng(0)
    for _ in range(200):
        th = build_random_field(16, int(rng.integers(2**32)))
        lhs = sobolev_norm(th, 0) ** 2
        rhs = gradient_norm(th, 2) * sobolev_norm(th, -1)
        worst = min(worst, rhs - lhs)
    rows.append(_ledger_row("L2^2 <= |grad|_L2 |.|_H-1 on random fields", worst >= -1e-10, worst))
    return rows


def build_random_field(n: int, seed: int, modes: int = 4) -> ScalarField:
    """Seeded mean-zero trigonometric polynomial with ``|k| <= modes``, L^2 norm ``1/sqrt 2``."""
    x, y = grid(n)
    rng = np.random.default_rng(seed)
    vals = np.zeros((n, n))
    for kx in range(-modes, modes + 1):
        for ky in range(0, modes + 1):
            if (ky == 0 and kx <= 0) or kx * kx + ky * ky > modes * modes:
                continue
            a, b = rng.standard_normal(2)
            ph = 2 * np.pi * (kx * x + ky * y)
            vals += a * np.cos(ph) + b * np.sin(ph)
    vals -= vals.mean()
    return ScalarField(vals / np.sqrt(np.mean(vals**2)) / np.sqrt(2.0))
