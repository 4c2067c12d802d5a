"""Time integration of the advection-diffusion and pure transport equations.

Two schemes are provided:

* ``integrating-factor-rk4`` (kappa > 0): pseudo-spectral advection with the
  2/3 dealiasing rule; diffusion is integrated exactly through the factor
  ``exp(-4 pi^2 kappa |k|^2 dt)``.
* ``semi-lagrangian`` (kappa = 0): grid points are traced backwards along the
  exact velocity with RK4 and the old field is sampled by periodic bicubic
  interpolation.  The scheme dissipates slightly; the drift of every L^q norm
  is measured and stored on the returned series.

Steps never straddle a jump of the velocity protocol: a nominal step that
contains a switching time is split in two.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError, StepError, UnderResolvedError
from .flows import VelocityProtocol, integrate_characteristics
from .spectral import (
    ScalarField,
    check_resolution,
    dealias_mask,
    grid,
    irfft2,
    nyquist_mask,
    rfft2,
    rfft_wavenumbers,
    rfft_weights,
)

__all__ = [
    "SolverConfig",
    "SimulationSeries",
    "step_advection_diffusion",
    "step_transport",
    "solve",
    "energy_identity_residual",
    "lq_identity_residual",
    "CSV_HEADER",
]

SCHEMES = ("auto", "integrating-factor-rk4", "semi-lagrangian")
QUADRATURES = ("quadratic", "trapezoid")
CSV_HEADER = ("t", "l2", "lq", "h1neg", "grad_l2", "grad_l1", "diss_cum")


@dataclass(frozen=True)
class SolverConfig:
    """Numerical parameters of a single run.

    ``diagnostic_cadence`` and ``snapshot_cadence`` count nominal time steps;
    a snapshot cadence of 0 disables snapshots.  For ``kappa > 0`` the grid
    must resolve the diffusive scale, ``n >= resolution_factor / sqrt(kappa)``,
    unless ``resolution_override`` is set.
    """

    n: int
    dt: float
    kappa: float = 0.0
    dealias: bool = True
    scheme: str = "auto"
    snapshot_cadence: int = 0
    diagnostic_cadence: int = 10
    lq: tuple = (4.0,)
    cfl_limit: float = 0.5
    resolution_factor: float = 4.0
    resolution_override: bool = False
    transport_guard: bool = True
    quadrature: str = "quadratic"

    def __post_init__(self):
        check_resolution(self.n)
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.kappa >= 0:
            raise ConfigurationError(f"kappa must be nonnegative, got {self.kappa}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme == "semi-lagrangian" and self.kappa > 0:
            raise ConfigurationError("the semi-Lagrangian scheme only handles kappa = 0")
        if self.quadrature not in QUADRATURES:
            raise ConfigurationError(f"unknown quadrature {self.quadrature!r}; expected one of {QUADRATURES}")
        if self.diagnostic_cadence < 1 or self.snapshot_cadence < 0:
            raise ConfigurationError("cadences must be positive step counts")
        object.__setattr__(self, "lq", tuple(float(q) for q in self.lq))
        for q in self.lq:
            if not 1 < q < math.inf:
                raise ConfigurationError(f"L^q diagnostics need 1 < q < inf, got {q}")
        if self.kappa > 0 and not self.resolution_override:
            need = self.resolution_factor / math.sqrt(self.kappa)
            if self.n < need:
                raise ConfigurationError(
                    f"n={self.n} does not resolve the diffusive scale for kappa={self.kappa:g} "
                    f"(need n >= {need:.0f}); set resolution_override to run anyway")

    @property
    def resolved_scheme(self) -> str:
        if self.scheme != "auto":
            return self.scheme
        return "integrating-factor-rk4" if self.kappa > 0 else "semi-lagrangian"

    def as_dict(self) -> dict:
        return {
            "n": self.n, "dt": self.dt, "kappa": self.kappa, "dealias": self.dealias,
            "scheme": self.resolved_scheme, "snapshot_cadence": self.snapshot_cadence,
            "diagnostic_cadence": self.diagnostic_cadence, "lq": list(self.lq),
            "cfl_limit": self.cfl_limit, "resolution_factor": self.resolution_factor,
            "resolution_override": self.resolution_override, "quadrature": self.quadrature,
        }


def check_cfl(config: SolverConfig, protocol: VelocityProtocol, t0: float, t1: float) -> None:
    speed = protocol.max_speed(t0, t1)
    number = speed * config.dt * config.n
    if number > config.cfl_limit:
        suggested = config.cfl_limit / (speed * config.n)
        raise StepError(
            f"CFL number {number:.3f} exceeds {config.cfl_limit} (max|u|={speed:.4g}, "
            f"n={config.n}); use dt <= {suggested:.4g}", suggested_dt=suggested)


# -- steppers -------------------------------------------------------------------


class _SpectralStepper:
    """Integrating-factor RK4 on rfft2 coefficients (unnormalised)."""

    def __init__(self, config: SolverConfig, protocol: VelocityProtocol):
        n = config.n
        self.n = n
        self.protocol = protocol
        kx, ky = rfft_wavenumbers(n)
        self.ikx = 2j * np.pi * kx
        self.iky = 2j * np.pi * ky
        self.decay = 4 * np.pi**2 * config.kappa * (kx**2 + ky**2)
        self.mask = dealias_mask(n) if config.dealias else nyquist_mask(n)
        self._factors = {}

    def factors(self, h):
        f = self._factors.get(h)
        if f is None:
            f = (np.exp(-self.decay * h), np.exp(-self.decay * h / 2))
            if len(self._factors) > 16:
                self._factors.clear()
            self._factors[h] = f
        return f

    def advection(self, c, t, leg):
        """``-P(u . grad theta)`` in spectral space."""
        u1, u2 = self.protocol.velocity_grid(t, self.n, leg)
        if u1 is None and u2 is None:
            return np.zeros_like(c)
        acc = 0.0
        if u1 is not None:
            acc = u1 * irfft2(self.ikx * c, self.n)
        if u2 is not None:
            acc = acc + u2 * irfft2(self.iky * c, self.n)
        out = rfft2(acc)
        out *= -self.mask
        out[0, 0] = 0.0
        return out

    def step(self, c, t, h):
        leg = self.protocol.leg(t + h / 2)
        e, e2 = self.factors(h)
        k1 = self.advection(c, t, leg)
        k2 = self.advection(e2 * (c + h / 2 * k1), t + h / 2, leg)
        k3 = self.advection(e2 * c + h / 2 * k2, t + h / 2, leg)
        k4 = self.advection(e * c + h * e2 * k3, t + h, leg)
        return e * c + h / 6 * (e * k1 + 2 * e2 * (k2 + k3) + k4)


class _SemiLagrangianStepper:
    def __init__(self, config: SolverConfig, protocol: VelocityProtocol):
        self.n = config.n
        self.protocol = protocol
        self.x, self.y = grid(config.n)

    def step(self, values, t, h):
        xd, yd = integrate_characteristics(self.protocol, self.x, self.y, t + h, t, h)
        new = kernels.interp_bicubic_periodic(values, xd * self.n, yd * self.n)
        return new - new.mean()


def _substeps(protocol, t, dt):
    cuts = [t] + protocol.breakpoints(t, t + dt) + [t + dt]
    return [(a, b - a) for a, b in zip(cuts[:-1], cuts[1:])]


def step_advection_diffusion(state: ScalarField, protocol: VelocityProtocol, t: float,
                             config: SolverConfig) -> ScalarField:
    """Advance ``state`` from ``t`` to ``t + config.dt`` with integrating-factor RK4."""
    if config.resolved_scheme != "integrating-factor-rk4":
        raise ConfigurationError("step_advection_diffusion needs kappa > 0 "
                                 "(or scheme='integrating-factor-rk4')")
    check_cfl(config, protocol, t, t + config.dt)
    st = _SpectralStepper(config, protocol)
    c = rfft2(state.values) * st.mask
    for a, h in _substeps(protocol, t, config.dt):
        c = st.step(c, a, h)
    return ScalarField(irfft2(c, config.n))


def step_transport(state: ScalarField, protocol: VelocityProtocol, t: float,
                   config: SolverConfig) -> ScalarField:
    """Advance the pure transport equation by one semi-Lagrangian step."""
    if config.kappa != 0 or config.resolved_scheme != "semi-lagrangian":
        raise ConfigurationError("step_transport needs kappa = 0 and the semi-Lagrangian scheme")
    check_cfl(config, protocol, t, t + config.dt)
    st = _SemiLagrangianStepper(config, protocol)
    v = np.array(state.values)
    for a, h in _substeps(protocol, t, config.dt):
        v = st.step(v, a, h)
    return ScalarField(v)


# -- diagnostics ----------------------------------------------------------------


@dataclass
class SimulationSeries:
    """Diagnostics sampled along one run.

    ``diss_cum`` is ``kappa * int_0^t ||grad theta||_{L^2}^2`` and
    ``lq_dissipation[q]`` is ``int_0^t int |theta|^{q-2} |grad theta|^2``, both
    accumulated on the diagnostic times with the rule chosen by
    ``SolverConfig.quadrature``.
    """

    times: np.ndarray
    l2: np.ndarray
    h1neg: np.ndarray
    grad_l2: np.ndarray
    grad_l1: np.ndarray
    diss_cum: np.ndarray
    mean: np.ndarray
    lq: dict
    lq_dissipation: dict
    kappa: float
    snapshots: list = field(default_factory=list)
    final: ScalarField | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def primary_q(self):
        return next(iter(self.lq), None)

    def column(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        if name == "lq":
            q = self.primary_q
            return self.lq[q] if q is not None else np.full_like(self.times, np.nan)
        if name.startswith("l") and name[1:].replace(".", "", 1).isdigit() and name != "l2":
            return self.lq[float(name[1:])]
        return getattr(self, name)

    def drift(self) -> dict:
        """Relative change of the L^2 and L^q norms between the first and last sample."""
        out = {"l2": float(abs(self.l2[-1] - self.l2[0]) / self.l2[0])}
        for q, v in self.lq.items():
            out[f"l{q:g}"] = float(abs(v[-1] - v[0]) / v[0])
        return out

    def to_csv(self, path) -> None:
        cols = [self.column(c) for c in CSV_HEADER]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, kappa: float = float("nan")) -> "SimulationSeries":
        """Rebuild the CSV columns of a series (no snapshots, no L^q dissipation)."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ConfigurationError(f"{path}: not a diagnostics CSV (header {rows[:1]})")
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 7)
        t, l2, lq, h1, g2, g1, dc = data.T
        return cls(times=t, l2=l2, h1neg=h1, grad_l2=g2, grad_l1=g1, diss_cum=dc,
                   mean=np.zeros_like(t), lq={0.0: lq}, lq_dissipation={}, kappa=kappa)


def _last_interval_weights(ts) -> tuple[float, ...]:
    """Quadrature weights for the last interval of ``ts`` (2 or 3 nodes).

    With three nodes the quadratic through all of them is integrated over
    the last interval, which makes the cumulative rule third order.
    """
    if len(ts) == 2:
        h = ts[1] - ts[0]
        return (h / 2, h / 2)
    t0, t1, t2 = ts
    lo, hi = t1 - t0, t2 - t0
    w = []
    for i, ti in enumerate(ts):
        others = [tj - t0 for j, tj in enumerate(ts) if j != i]
        den = np.prod([(ti - t0) - o for o in others])
        poly = np.polynomial.Polynomial.fromroots(others) / den
        anti = poly.integ()
        w.append(float(anti(hi) - anti(lo)))
    return tuple(w)


def _advance_integral(ts, fs, acc, order=3):
    w = _last_interval_weights(ts[-order:])
    return acc + sum(wi * fi for wi, fi in zip(w, fs[-len(w):]))


class _Recorder:
    def __init__(self, config: SolverConfig, kappa: float):
        self.n = config.n
        self.qs = config.lq
        self.order = 3 if config.quadrature == "quadratic" else 2
        self.kappa = kappa
        kx, ky = rfft_wavenumbers(self.n)
        self.ikx = 2j * np.pi * kx
        self.iky = 2j * np.pi * ky
        k2 = 4 * np.pi**2 * (kx**2 + ky**2)
        self.w = rfft_weights(self.n)
        self.nyq = nyquist_mask(self.n)
        self.k2 = k2 * self.nyq
        inv = np.zeros_like(k2)
        inv[k2 > 0] = 1.0 / k2[k2 > 0]
        self.inv_k2 = inv
        self.rows = {k: [] for k in ("t", "l2", "h1neg", "grad_l2", "grad_l1", "diss_cum", "mean")}
        self.lq = {q: [] for q in self.qs}
        self.lq_int = {q: [] for q in self.qs}
        self.lq_diss = {q: [] for q in self.qs}
        self.g2 = []
        self.g2_int = 0.0

    def record(self, t, values, c):
        n = self.n
        power = self.w * np.abs(c / n**2) ** 2
        g2 = float((power * self.k2).sum())
        gx = irfft2(self.ikx * c * self.nyq, n)
        gy = irfft2(self.iky * c * self.nyq, n)
        gsq = gx * gx + gy * gy
        r = self.rows
        r["t"].append(t)
        self.g2.append(g2)
        self.g2_int = _advance_integral(r["t"], self.g2, self.g2_int, self.order) if len(r["t"]) > 1 else 0.0
        r["diss_cum"].append(self.kappa * self.g2_int)
        r["l2"].append(float(np.sqrt(power.sum())))
        r["h1neg"].append(float(np.sqrt((power * self.inv_k2).sum())))
        r["grad_l2"].append(math.sqrt(g2))
        r["grad_l1"].append(float(np.sqrt(gsq).mean()))
        r["mean"].append(float(values.mean()))
        a = np.abs(values)
        for q in self.qs:
            self.lq[q].append(float(np.mean(a**q) ** (1 / q)))
            if q == 2:
                dens = float(gsq.mean())
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    wq = np.where(a > 0, a ** (q - 2), 0.0)
                dens = float((wq * gsq).mean())
            prev = self.lq_int[q]
            prev.append(dens)
            if len(prev) > 1:
                self.lq_diss[q].append(_advance_integral(r["t"], prev, self.lq_diss[q][-1], self.order))
            else:
                self.lq_diss[q].append(0.0)

    def filament_scale(self):
        l2 = self.rows["l2"][-1]
        return self.rows["h1neg"][-1] / l2 if l2 > 0 else math.inf

    def series(self, **extra) -> SimulationSeries:
        r = {k: np.asarray(v, dtype=float) for k, v in self.rows.items()}
        return SimulationSeries(
            times=r["t"], l2=r["l2"], h1neg=r["h1neg"], grad_l2=r["grad_l2"], grad_l1=r["grad_l1"],
            diss_cum=r["diss_cum"], mean=r["mean"],
            lq={q: np.asarray(v) for q, v in self.lq.items()},
            lq_dissipation={q: np.asarray(v) for q, v in self.lq_diss.items()},
            kappa=self.kappa, **extra)


def solve(theta0: ScalarField, protocol: VelocityProtocol, config: SolverConfig, horizon: float,
          t0: float = 0.0, provenance: dict | None = None) -> SimulationSeries:
    """Run from ``t0`` to ``t0 + horizon`` and return the sampled diagnostics.

    The final field is stored on ``series.final``; snapshots (if enabled)
    on ``series.snapshots`` as ``(t, ScalarField)`` pairs.  A kappa = 0 run
    stops with :class:`UnderResolvedError` once the filament scale
    ``||theta||_{H^-1} / ||theta||_{L^2}`` drops below four grid spacings.
    """
    if theta0.n != config.n:
        raise ConfigurationError(f"initial field has n={theta0.n}, config has n={config.n}")
    if not theta0.is_mean_zero(1e-10):
        raise DomainError("initial configuration must have zero mean")
    nsteps = int(round(horizon / config.dt))
    if nsteps < 1 or abs(nsteps * config.dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ConfigurationError(f"horizon {horizon} is not a positive multiple of dt={config.dt}")
    check_cfl(config, protocol, t0, t0 + horizon)

    scheme = config.resolved_scheme
    n = config.n
    if scheme == "integrating-factor-rk4":
        st = _SpectralStepper(config, protocol)
        state = rfft2(theta0.values) * st.mask
        state[0, 0] = 0.0
        to_values = lambda s: irfft2(s, n)  # noqa: E731
        to_coeffs = lambda s, v: s  # noqa: E731
    else:
        st = _SemiLagrangianStepper(config, protocol)
        state = np.array(theta0.values) - theta0.values.mean()
        to_values = lambda s: s  # noqa: E731
        to_coeffs = lambda s, v: rfft2(v)  # noqa: E731

    rec = _Recorder(config, config.kappa)
    prov = dict(provenance or {})
    prov.setdefault("solver", config.as_dict())
    prov.setdefault("flow", protocol.to_config())
    snaps = []
    guard = config.kappa == 0 and config.transport_guard
    min_scale = 4.0 / n

    def observe(step, t):
        v = to_values(state)
        rec.record(t, v, to_coeffs(state, v))
        if guard and rec.filament_scale() < min_scale:
            raise UnderResolvedError(
                f"filament scale {rec.filament_scale():.3g} below 4 grid spacings at t={t:.4g}",
                series=rec.series(snapshots=snaps, final=ScalarField(v), provenance=prov))
        return v

    def snap(v, t):
        snaps.append((t, ScalarField(v)))

    v = observe(0, t0)
    if config.snapshot_cadence:
        snap(v, t0)
    for k in range(1, nsteps + 1):
        t_start = t0 + (k - 1) * config.dt
        for a, h in _substeps(protocol, t_start, config.dt):
            state = st.step(state, a, h)
        t = t0 + k * config.dt
        diag = k % config.diagnostic_cadence == 0 or k == nsteps
        want_snap = config.snapshot_cadence and k % config.snapshot_cadence == 0
        if diag:
            v = observe(k, t)
        if want_snap:
            snap(v if diag else to_values(state), t)
    final = ScalarField(to_values(state))
    return rec.series(snapshots=snaps, final=final, provenance=prov)


def energy_identity_residual(series: SimulationSeries, kappa: float | None = None) -> np.ndarray:
    """``|‖θ(t)‖² + 2 κ ∫‖∇θ‖² - ‖θ0‖²| / ‖θ0‖²`` on the diagnostic times."""
    kappa = series.kappa if kappa is None else kappa
    if not kappa > 0:
        raise DomainError("the energy identity residual needs a kappa > 0 run")
    e0 = series.l2[0] ** 2
    return np.abs(series.l2**2 + 2 * series.diss_cum - e0) / e0


def lq_identity_residual(series: SimulationSeries, q: float, kappa: float | None = None,
                         cumulative: bool = True) -> np.ndarray:
    """Relative residual of the L^q balance ``‖θ‖_q^q + κ q (q-1) ∫∫|θ|^{q-2}|∇θ|² = const``.

    With ``cumulative=True`` the balance is taken from time 0 to each
    diagnostic time (for ``q = 2`` this is exactly
    :func:`energy_identity_residual`); otherwise between consecutive
    diagnostic times.  Both are normalised by ``‖θ0‖_q^q``.
    """
    q = float(q)
    kappa = series.kappa if kappa is None else kappa
    if not q > 1 or q == math.inf:
        raise DomainError(f"the L^q identity needs 1 < q < inf, got {q}")
    if not kappa > 0:
        raise DomainError("the L^q identity residual needs a kappa > 0 run")
    if q == 2:
        norm_q = series.l2**2
        diss = 2 * series.diss_cum
    else:
        if q not in series.lq:
            raise DomainError(f"q={q:g} was not recorded (have {sorted(series.lq)})")
        norm_q = series.lq[q] ** q
        diss = kappa * q * (q - 1) * series.lq_dissipation[q]
    if cumulative:
        return np.abs(norm_q + diss - norm_q[0]) / norm_q[0]
    return np.abs(np.diff(norm_q) + np.diff(diss)) / norm_q[0]
