"""Rates, scales and crossover times extracted from simulation series.

Everything here is a pure function of a :class:`~scalarmix.solver.SimulationSeries`
(or of plain arrays), so it can be applied to runs loaded back from CSV.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .flows import VelocityProtocol, gradient_integral
from .solver import SimulationSeries, SolverConfig, solve
from .spectral import ScalarField, rfft2, rfft_wavenumbers, rfft_weights

__all__ = [
    "RateFit",
    "fit_exponential_rate",
    "batchelor_scale",
    "batchelor_plateau",
    "crossover_time",
    "theoretical_T",
    "DissipationFraction",
    "dissipation_fraction",
    "EnhancementReport",
    "enhancement_report",
    "mixing_rate_vs_budget",
    "ScalingFit",
    "scaling_fit",
    "TransportDiffusiveGap",
    "compare_transport_diffusive",
    "h1neg_distance",
]

_EPS = np.finfo(float).eps


def _columns(series, norm_name: str):
    if isinstance(series, SimulationSeries):
        return np.asarray(series.times, float), np.asarray(series.column(norm_name), float)
    t, v = series
    return np.asarray(t, float), np.asarray(v, float)


# -- exponential rates ----------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit ``norm(t) ~ prefactor * exp(-rate t)`` on ``window``."""

    rate: float
    prefactor: float
    window: tuple
    r_squared: float
    norm_name: str = "l2"
    samples: int = 0
    rate_stderr: float = 0.0

    def as_dict(self) -> dict:
        return {"rate": self.rate, "prefactor": self.prefactor,
                "window": [float(self.window[0]), float(self.window[1])], "r_squared": self.r_squared}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def _line_fit(t, logv):
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, logv, rcond=None)
    resid = logv - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((logv - logv.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = len(t) - 2
    stderr = 0.0
    if dof > 0:
        sxx = float(((t - t.mean()) ** 2).sum())
        stderr = math.sqrt(ss_res / dof / sxx) if sxx > 0 else math.inf
    return coef, min(max(r2, 0.0), 1.0), stderr


def _late_window(t, logv, efoldings, min_r2, min_samples):
    """Last interval spanning ``efoldings`` e-folds whose fit reaches ``min_r2``."""
    best = None
    for end in range(len(t) - 1, min_samples - 2, -1):
        drop = logv[: end + 1] - logv[end]
        ok = np.flatnonzero(drop >= efoldings)
        if ok.size == 0:
            continue
        start = min(int(ok[-1]), end + 1 - min_samples)
        if start < 0:
            continue
        coef, r2, _ = _line_fit(t[start:end + 1], logv[start:end + 1])
        if best is None:
            best = (start, end)
        if r2 >= min_r2:
            return start, end
    if best is None:
        raise DomainError(f"the series never decays by {efoldings:g} e-foldings")
    return best


def fit_exponential_rate(series, norm_name: str = "l2", window=None, efoldings: float = 2.0,
                         min_r2: float = 0.95, min_samples: int = 10) -> RateFit:
    """Fit an exponential decay rate to one norm of a series.

    Parameters
    ----------
    series : SimulationSeries or (times, values)
    norm_name : str
        Column name (``l2``, ``h1neg``, ``lq``, ...).
    window : (t_a, t_b), optional
        Explicit fit window.  By default the late window is used: the last
        interval over which the norm drops by ``efoldings`` e-folds and the
        fit reaches ``min_r2`` (if no interval reaches it, the last one
        spanning the e-folds is fitted and its ``r_squared`` reported).

    Raises
    ------
    DomainError
        Nonpositive values or values below ten machine epsilons in the window.
    ConfigurationError
        Window with fewer than ``min_samples`` samples.
    """
    t, v = _columns(series, norm_name)
    if window is None:
        keep = v > 10 * _EPS * np.abs(v).max()
        last = len(v) if keep.all() else int(np.argmin(keep))
        t, v = t[:last], v[:last]
        if len(t) < min_samples:
            raise ConfigurationError(f"only {len(t)} usable samples; need {min_samples}")
        a, b = _late_window(t, np.log(v), efoldings, min_r2, min_samples)
        tw, vw = t[a:b + 1], v[a:b + 1]
    else:
        ta, tb = window
        if not ta < tb:
            raise ConfigurationError(f"fit window must have t_a < t_b, got {window}")
        sel = (t >= ta - 1e-12) & (t <= tb + 1e-12)
        tw, vw = t[sel], v[sel]
        if len(tw) < min_samples:
            raise ConfigurationError(f"fit window {window} holds {len(tw)} samples; need {min_samples}")
    if not (vw > 10 * _EPS).all():
        raise DomainError("norm values in the fit window must exceed ten machine epsilons")
    coef, r2, stderr = _line_fit(tw, np.log(vw))
    return RateFit(rate=float(-coef[1]), prefactor=float(math.exp(coef[0])),
                   window=(float(tw[0]), float(tw[-1])), r_squared=r2, norm_name=norm_name,
                   samples=len(tw), rate_stderr=stderr)


# -- scales and times -------------------------------------------------------------


def batchelor_scale(series) -> np.ndarray:
    """Length scale ``||theta||_{H^-1} / ||theta||_{L^2}`` at every sample."""
    if isinstance(series, SimulationSeries):
        h1, l2 = series.h1neg, series.l2
    else:
        h1, l2 = (np.asarray(a, float) for a in series)
    if not (l2 > 0).all():
        raise DomainError("Batchelor scale undefined once the L^2 norm has vanished")
    return h1 / l2


def theoretical_T(kappa: float, s: float) -> float:
    """Crossover time ``log(1/kappa)^(s/(s-1))`` (``s > 1``) or ``1/kappa`` (``s = 1``)."""
    if not 0 < kappa < 1:
        raise DomainError(f"kappa must lie in (0, 1), got {kappa}")
    s = float(s)
    if s == 1:
        return 1.0 / kappa
    if not s > 1:
        raise DomainError(f"time integrability exponent must be >= 1, got {s}")
    power = 1.0 if s == math.inf else s / (s - 1)
    return math.log(1.0 / kappa) ** power


def batchelor_plateau(series: SimulationSeries, s: float = math.inf, window=None) -> dict:
    """Late-time median of the Batchelor scale against ``sqrt(kappa T_{kappa,s})``.

    ``window`` defaults to the second half of the run.
    """
    ell = batchelor_scale(series)
    t = series.times
    ta, tb = window if window is not None else (t[0] + 0.5 * (t[-1] - t[0]), t[-1])
    sel = (t >= ta) & (t <= tb)
    plateau = float(np.median(ell[sel]))
    predicted = math.sqrt(series.kappa * theoretical_T(series.kappa, s))
    return {"kappa": series.kappa, "plateau": plateau, "predicted": predicted,
            "ratio": plateau / predicted, "window": [float(ta), float(tb)]}


def _log_interp(t, v, tq):
    """Piecewise exponential interpolation (exact for exponentials)."""
    with np.errstate(divide="ignore"):
        lv = np.log(v)
    return np.exp(np.interp(tq, t, lv))


def crossover_time(series) -> float:
    """First time at which ``||theta||_{L^2}`` reaches half its initial value.

    Between samples the norm is interpolated exponentially.  Returns
    ``math.inf`` when the series never gets there.
    """
    t, v = _columns(series, "l2")
    target = 0.5 * v[0]
    hit = np.flatnonzero(v <= target)
    if hit.size == 0:
        return math.inf
    k = int(hit[0])
    if k == 0:
        return float(t[0])
    la, lb, lt = math.log(v[k - 1]), math.log(v[k]), math.log(target)
    if lb == la:
        return float(t[k])
    return float(t[k - 1] + (t[k] - t[k - 1]) * (lt - la) / (lb - la))


# -- dissipation ----------------------------------------------------------------


@dataclass(frozen=True)
class DissipationFraction:
    """``kappa int ||grad theta||^2 / ||theta0||^2`` by quadrature and by the energy identity."""

    times: np.ndarray
    direct: np.ndarray
    identity: np.ndarray

    @property
    def discrepancy(self) -> float:
        return float(np.abs(self.direct - self.identity).max())


def dissipation_fraction(series: SimulationSeries) -> DissipationFraction:
    e0 = series.l2[0] ** 2
    return DissipationFraction(series.times, series.diss_cum / e0, 0.5 * (1.0 - series.l2**2 / e0))


@dataclass(frozen=True)
class EnhancementReport:
    """Envelope ``||theta(t)|| <= Lambda exp(-D t) ||theta0||`` and the dissipation checks.

    ``t0 = log(2 Lambda^2) / (2 D)`` is the time by which the envelope
    guarantees that a quarter of the variance has been dissipated.  The
    converse check confirms ``||theta(k t0)||^2 <= 2^-k ||theta0||^2`` at every
    multiple of ``t0`` inside the run.
    """

    Lambda: float
    D: float
    delta_star: float
    t0: float
    fraction_at_t0: float
    forward_holds: bool
    halving_checks: list = field(default_factory=list)
    halving_holds: bool = False

    def as_dict(self) -> dict:
        return {"Lambda": self.Lambda, "D": self.D, "delta_star": self.delta_star, "t0": self.t0,
                "fraction_at_t0": self.fraction_at_t0, "forward_holds": self.forward_holds,
                "halving_holds": self.halving_holds, "halving_checks": self.halving_checks}


def _upper_hull(t, y):
    """Indices of the upper concave hull of the points ``(t, y)``."""
    hull = []
    for i in range(len(t)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (y[b] - y[a]) * (t[i] - t[a]) <= (y[i] - y[a]) * (t[b] - t[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def enhancement_report(series: SimulationSeries, kappa: float | None = None, window=None,
                       rel_tol: float = 1e-9) -> EnhancementReport:
    """Exponential envelope of the L^2 norm and the two implications linking it to dissipation.

    The rate ``D`` is the slope of the upper concave hull of
    ``log(||theta(t)|| / ||theta0||)`` on the late window (the second half of
    the run by default); ``Lambda`` is then the smallest prefactor for which
    the envelope bounds every sample.
    """
    t = np.asarray(series.times, float)
    r = series.l2 / series.l2[0]
    y = np.log(np.maximum(r, np.finfo(float).tiny))
    ta, tb = window if window is not None else (t[0] + 0.5 * (t[-1] - t[0]), t[-1])
    hull = _upper_hull(t, y)
    th, yh = t[hull], y[hull]
    sel = (th >= ta - 1e-12) & (th <= tb + 1e-12)
    if sel.sum() >= 2:
        tt, yy = th[sel], yh[sel]
    else:
        # one hull edge spans the window: use it
        k = max(1, int(np.searchsorted(th, 0.5 * (ta + tb))))
        k = min(k, len(th) - 1)
        tt, yy = th[k - 1:k + 1], yh[k - 1:k + 1]
    D = float(-(yy[-1] - yy[0]) / (tt[-1] - tt[0])) if len(tt) >= 2 and tt[-1] > tt[0] else 0.0
    delta_star = 0.25
    if not D > 0:
        return EnhancementReport(Lambda=math.inf, D=max(D, 0.0), delta_star=delta_star, t0=math.inf,
                                 fraction_at_t0=math.nan, forward_holds=False)
    Lam = float(math.exp(max(0.0, float((y + D * t).max()))))
    t0 = math.log(2 * Lam**2) / (2 * D)
    frac = math.nan
    forward = False
    if t0 <= t[-1]:
        rt = float(_log_interp(t, r, t0))
        frac = 0.5 * (1.0 - rt**2)
        forward = frac >= delta_star * (1 - rel_tol) - rel_tol
    checks = []
    k = 1
    while k * t0 <= t[-1] + 1e-12:
        rk = float(_log_interp(t, r, k * t0))
        bound = (1 - 2 * delta_star) ** k
        checks.append({"k": k, "t": k * t0, "ratio_sq": rk**2, "bound": bound,
                       "holds": bool(rk**2 <= bound * (1 + rel_tol) + rel_tol * bound)})
        k += 1
    return EnhancementReport(Lambda=Lam, D=D, delta_star=delta_star, t0=t0, fraction_at_t0=frac,
                             forward_holds=bool(forward), halving_checks=checks,
                             halving_holds=bool(checks) and all(c["holds"] for c in checks))


def mixing_rate_vs_budget(series: SimulationSeries, protocol: VelocityProtocol,
                          p: float = math.inf) -> np.ndarray:
    """``-log(||theta(t)||_{H^-1} / ||theta0||_{H^-1}) / int_0^t ||grad u||_{L^p}``.

    Samples where the budget integral vanishes are reported as zero.
    """
    t = np.asarray(series.times, float)
    num = -np.log(series.h1neg / series.h1neg[0])
    den = gradient_integral(protocol, p, t - t[0])
    out = np.zeros_like(num)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


# -- kappa scaling ---------------------------------------------------------------


@dataclass(frozen=True)
class ScalingFit:
    """Regression ``log D = a - beta log log(1/kappa)`` with per-point constants."""

    kappas: np.ndarray
    rates: np.ndarray
    s: float
    beta: float
    beta_stderr: float
    constants: np.ndarray

    @property
    def constant_spread(self) -> float:
        return float(self.constants.max() / self.constants.min())

    def as_dict(self) -> dict:
        return {"beta": self.beta, "beta_stderr": self.beta_stderr,
                "points": [{"kappa": float(k), "D": float(d), "c": float(c)}
                           for k, d, c in zip(self.kappas, self.rates, self.constants)]}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


def scaling_fit(points, s: float = math.inf, min_points: int = 4, min_decades: float = 2.0) -> ScalingFit:
    """Fit the exponent of ``D ~ log^-beta(1/kappa)`` to measured rates.

    ``points`` is an iterable of ``(kappa, D)``.  The constants are
    ``c_i = D_i T_{kappa_i, s}``.
    """
    pts = sorted((float(k), float(d)) for k, d in points)
    kap = np.array([k for k, _ in pts])
    rates = np.array([d for _, d in pts])
    if len(pts) < min_points:
        raise ConfigurationError(f"scaling fit needs at least {min_points} points, got {len(pts)}")
    if len(np.unique(kap)) != len(kap):
        raise ConfigurationError("kappa values must be distinct")
    if not ((kap > 0) & (kap < 1)).all() or not (rates > 0).all():
        raise DomainError("need 0 < kappa < 1 and positive rates")
    if math.log10(kap.max() / kap.min()) < min_decades - 1e-9:
        raise ConfigurationError(f"kappa values must span at least {min_decades:g} decades")
    x = np.log(np.log(1.0 / kap))
    coef, _, stderr = _line_fit(x, np.log(rates))
    consts = np.array([d * theoretical_T(k, s) for k, d in zip(kap, rates)])
    return ScalingFit(kap, rates, float(s), float(-coef[1]), float(stderr), consts)


# -- transport versus diffusion ------------------------------------------------------


def h1neg_distance(a: ScalarField, b: ScalarField) -> float:
    """``||a - b||_{H^-1}`` computed from the half spectrum."""
    n = a.n
    kx, ky = rfft_wavenumbers(n)
    k2 = 4 * np.pi**2 * (kx**2 + ky**2)
    k2[0, 0] = np.inf
    c = rfft2(a.values - b.values) / n**2
    return float(np.sqrt((rfft_weights(n) * np.abs(c) ** 2 / k2).sum()))


@dataclass(frozen=True)
class TransportDiffusiveGap:
    """``g(t) = ||theta(t) - theta^kappa(t)||_{H^-1}`` on common sample times."""

    times: np.ndarray
    gap: np.ndarray
    kappa: float
    alpha: float
    transport: SimulationSeries = field(repr=False, default=None)
    diffusive: SimulationSeries = field(repr=False, default=None)

    @property
    def scaled(self) -> np.ndarray:
        """``g(t)^2 / kappa^(1 - alpha)``."""
        return self.gap**2 / self.kappa ** (1.0 - self.alpha)

    def at(self, t: float) -> float:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ConfigurationError(f"time {t} was not sampled")
        return float(self.gap[k])


def compare_transport_diffusive(theta0: ScalarField, protocol: VelocityProtocol, kappa: float,
                                horizon: float, dt: float, sample_every: float = 0.1,
                                alpha: float = 0.5, transport_scheme: str = "semi-lagrangian",
                                resolution_override: bool = False,
                                transport: SimulationSeries | None = None) -> TransportDiffusiveGap:
    """Run the transport and advection-diffusion problems from the same datum and compare them.

    Parameters
    ----------
    transport_scheme : {'semi-lagrangian', 'integrating-factor-rk4'}
        Scheme for the kappa = 0 run.  The spectral choice removes the
        difference between discretisations from the measured gap.
    transport : SimulationSeries, optional
        A previously computed kappa = 0 run with matching snapshots.
    """
    if not kappa >= 0:
        raise DomainError("kappa must be nonnegative")
    cadence = int(round(sample_every / dt))
    if cadence < 1 or abs(cadence * dt - sample_every) > 1e-9:
        raise ConfigurationError("sample_every must be a multiple of dt")
    base = dict(n=theta0.n, dt=dt, snapshot_cadence=cadence, diagnostic_cadence=cadence,
                resolution_override=resolution_override)
    if transport is None:
        cfg0 = SolverConfig(kappa=0.0, scheme=transport_scheme, transport_guard=False, **base)
        transport = solve(theta0, protocol, cfg0, horizon)
    if kappa == 0:
        cfgk = SolverConfig(kappa=0.0, scheme="integrating-factor-rk4", transport_guard=False, **base)
    else:
        cfgk = SolverConfig(kappa=kappa, **base)
    diffusive = solve(theta0, protocol, cfgk, horizon)
    t0 = [t for t, _ in transport.snapshots]
    tk = [t for t, _ in diffusive.snapshots]
    if len(t0) != len(tk) or not np.allclose(t0, tk, atol=1e-12):
        raise ConfigurationError("transport run snapshots do not match the requested sampling")
    gap = np.array([h1neg_distance(a, b) for (_, a), (_, b) in zip(transport.snapshots, diffusive.snapshots)])
    return TransportDiffusiveGap(np.array(t0), gap, float(kappa), float(alpha), transport, diffusive)
