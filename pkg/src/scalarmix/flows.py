"""Divergence-free stirring protocols on the unit torus.

Every protocol is built from a stream function or an axis-aligned shear, so
incompressibility holds identically and all velocity gradients are available
in closed form.  The spatial shape of ``grad u`` never changes in time: only
the amplitude schedule, the shear orientation and the phase do, which makes
``||grad u(t)||_{L^p}`` equal to ``A(t)`` times a protocol constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import ConfigurationError, DomainError

__all__ = [
    "VelocityProtocol",
    "BudgetReport",
    "FlowMap",
    "make_steady_shear",
    "make_alternating_sine_flow",
    "make_cellular_flow",
    "make_streamfunction_flow",
    "normalize_to_budget",
    "gradient_budget",
    "gradient_integral",
    "velocity_at",
    "grad_velocity_at",
    "flow_map",
    "integrate_characteristics",
]

KINDS = ("steady-shear", "alternating-sine", "cellular", "custom-streamfunction")
SCHEDULES = ("constant", "powerlaw")
TWO_PI = 2.0 * np.pi


@lru_cache(maxsize=4096)
def _phase(seed: int, leg: int) -> float:
    # Counter-based: Philox keyed by the seed, counter = interval index.
    bg = np.random.Philox(key=int(seed) & (2**64 - 1), counter=int(leg))
    return float(np.random.Generator(bg).random() * TWO_PI)


def _abs_cos_moment(p: float) -> float:
    """``(int_0^1 |cos 2 pi y|^p dy)^{1/p}``, with the sup for ``p = inf``."""
    if p == np.inf:
        return 1.0
    log_mean = gammaln((p + 1) / 2) - 0.5 * math.log(math.pi) - gammaln(p / 2 + 1)
    return math.exp(log_mean / p)


@dataclass(frozen=True)
class VelocityProtocol:
    """Time-dependent incompressible velocity field.

    Attributes
    ----------
    kind : str
        One of ``steady-shear``, ``alternating-sine``, ``cellular``,
        ``custom-streamfunction``.
    amplitude : float
        Base amplitude ``A0`` (velocity units).
    seed : int
        Key of the phase generator (alternating-sine only).
    switching_period : float
        Duration ``tau`` of each shear leg (alternating-sine only).
    schedule : str
        ``constant`` or ``powerlaw``; the latter is ``A0 (1 + t)^(-1/s)``.
    schedule_s : float
        Exponent ``s`` of the power-law schedule.
    random_phases : bool
        If false every leg uses phase 0.
    modes : tuple
        ``(k1, k2, weight, phase)`` tuples of the custom stream function
        ``psi = A sum weight sin(2 pi k.x + phase) / (2 pi)``.
    normalization : tuple
        ``(p, s, horizon, factor)`` once :func:`normalize_to_budget` was applied.
    """

    kind: str
    amplitude: float = 1.0
    seed: int = 0
    switching_period: float = 1.0
    schedule: str = "constant"
    schedule_s: float = np.inf
    random_phases: bool = True
    modes: tuple = ()
    normalization: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown flow kind {self.kind!r}; expected one of {KINDS}")
        if self.schedule not in SCHEDULES:
            raise ConfigurationError(f"unknown amplitude schedule {self.schedule!r}")
        if not self.switching_period > 0:
            raise ConfigurationError("switching period must be positive")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise ConfigurationError("amplitude must be finite and nonnegative")
        if self.schedule == "powerlaw" and not self.schedule_s >= 1:
            raise ConfigurationError("power-law schedule needs s >= 1")
        if self.kind == "custom-streamfunction":
            object.__setattr__(self, "modes", tuple(tuple(float(v) for v in m) for m in self.modes))
            for m in self.modes:
                if len(m) != 4:
                    raise ConfigurationError("stream-function modes are (k1, k2, weight, phase)")

    # -- schedule -------------------------------------------------------------

    def amplitude_at(self, t: float) -> float:
        if self.schedule == "constant" or self.schedule_s == np.inf:
            return self.amplitude
        return self.amplitude * (1.0 + t) ** (-1.0 / self.schedule_s)

    def leg(self, t: float) -> int:
        return int(math.floor(t / self.switching_period)) if self.kind == "alternating-sine" else 0

    def phase(self, leg: int) -> float:
        if self.kind != "alternating-sine" or not self.random_phases:
            return 0.0
        return _phase(self.seed, leg)

    def phases(self, count: int) -> list[float]:
        """Phases of the first ``count`` legs (``phi_0, psi_0, phi_1, psi_1, ...``)."""
        return [self.phase(j) for j in range(count)]

    def breakpoints(self, t0: float, t1: float) -> list[float]:
        """Times in the open interval between ``t0`` and ``t1`` where the velocity jumps."""
        if self.kind != "alternating-sine":
            return []
        lo, hi = min(t0, t1), max(t0, t1)
        tau = self.switching_period
        first = math.floor(lo / tau) + 1
        out = []
        j = first
        while j * tau < hi:
            tb = j * tau
            if tb - lo > 1e-12 * tau and hi - tb > 1e-12 * tau:
                out.append(tb)
            j += 1
        return out if t1 >= t0 else out[::-1]

    # -- evaluation -----------------------------------------------------------

    def _shear_state(self, t, leg=None):
        """(direction, phase) of the shear active at time ``t``: 0 means u = (f(y), 0)."""
        if self.kind == "steady-shear":
            return 0, 0.0
        if leg is None:
            leg = self.leg(t)
        return leg % 2, self.phase(leg)

    def velocity(self, t: float, x, y, leg=None):
        """Velocity components at positions ``(x, y)`` (broadcasting arrays).

        ``leg`` pins the shear interval, so that a time step ending exactly on
        a switching time keeps evaluating the interval it started in.
        """
        a = self.amplitude_at(t)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        zero = np.zeros(np.broadcast(x, y).shape)
        if self.kind in ("steady-shear", "alternating-sine"):
            d, ph = self._shear_state(t, leg)
            if d == 0:
                return a * np.sin(TWO_PI * y + ph) + zero, zero
            return zero, a * np.sin(TWO_PI * x + ph) + zero
        if self.kind == "cellular":
            sx, cx = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
            sy, cy = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
            return a * sx * cy + zero, -a * cx * sy + zero
        u1 = zero.copy()
        u2 = zero.copy()
        for k1, k2, w, ph in self.modes:
            c = np.cos(TWO_PI * (k1 * x + k2 * y) + ph)
            u1 += a * w * k2 * c
            u2 -= a * w * k1 * c
        return u1, u2

    def grad_velocity(self, t: float, x, y, leg=None) -> np.ndarray:
        """Velocity gradient ``G[..., i, j] = d u_i / d x_j``."""
        a = self.amplitude_at(t)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        g = np.zeros(shape + (2, 2))
        if self.kind in ("steady-shear", "alternating-sine"):
            d, ph = self._shear_state(t, leg)
            if d == 0:
                g[..., 0, 1] = TWO_PI * a * np.cos(TWO_PI * y + ph)
            else:
                g[..., 1, 0] = TWO_PI * a * np.cos(TWO_PI * x + ph)
            return g
        if self.kind == "cellular":
            sx, cx = np.sin(TWO_PI * x), np.cos(TWO_PI * x)
            sy, cy = np.sin(TWO_PI * y), np.cos(TWO_PI * y)
            g[..., 0, 0] = TWO_PI * a * cx * cy
            g[..., 0, 1] = -TWO_PI * a * sx * sy
            g[..., 1, 0] = TWO_PI * a * sx * sy
            g[..., 1, 1] = -TWO_PI * a * cx * cy
            return g
        for k1, k2, w, ph in self.modes:
            s = -TWO_PI * a * w * np.sin(TWO_PI * (k1 * x + k2 * y) + ph)
            g[..., 0, 0] += s * k2 * k1
            g[..., 0, 1] += s * k2 * k2
            g[..., 1, 0] -= s * k1 * k1
            g[..., 1, 1] -= s * k1 * k2
        return g

    def velocity_grid(self, t: float, n: int, leg=None):
        """Velocity on the ``n x n`` grid as broadcastable arrays; ``None`` marks a zero component."""
        a = self.amplitude_at(t)
        c = np.arange(n) / n
        if self.kind in ("steady-shear", "alternating-sine"):
            d, ph = self._shear_state(t, leg)
            prof = a * np.sin(TWO_PI * c + ph)
            if a == 0:
                return None, None
            if d == 0:
                return prof[None, :], None
            return None, prof[:, None]
        x = c[:, None]
        y = c[None, :]
        return self.velocity(t, x, y)

    # -- norms ----------------------------------------------------------------

    def max_speed(self, t0: float, t1: float) -> float:
        """Upper bound on ``sup |u|`` over the time interval."""
        a = max(self.amplitude_at(t0), self.amplitude_at(t1))
        if self.kind == "custom-streamfunction":
            return a * sum(abs(w) * math.hypot(k1, k2) for k1, k2, w, _ in self.modes)
        return a

    def unit_grad_norm(self, p: float) -> float:
        """``||grad u||_{L^p}`` per unit amplitude (Frobenius norm pointwise)."""
        return _unit_grad_norm(self.kind, self.modes, float(p))

    def grad_norm(self, t: float, p: float) -> float:
        return self.amplitude_at(t) * self.unit_grad_norm(p)

    # -- serialization --------------------------------------------------------

    def to_config(self) -> dict:
        """Flat string dictionary; :meth:`from_config` reproduces the protocol exactly."""
        d = {
            "kind": self.kind,
            "amplitude": repr(float(self.amplitude)),
            "seed": str(int(self.seed)),
            "tau": repr(float(self.switching_period)),
            "schedule": self.schedule,
            "schedule_s": repr(float(self.schedule_s)),
            "random_phases": "true" if self.random_phases else "false",
        }
        if self.modes:
            d["modes"] = ";".join(",".join(repr(v) for v in m) for m in self.modes)
        if self.normalization is not None:
            p, s, horizon, factor = self.normalization
            d["normalized"] = f"p={p!r},s={s!r},horizon={horizon!r},factor={factor!r}"
        return d

    @classmethod
    def from_config(cls, d: dict) -> "VelocityProtocol":
        modes = ()
        if d.get("modes"):
            modes = tuple(tuple(float(v) for v in m.split(",")) for m in d["modes"].split(";"))
        norm = None
        if d.get("normalized"):
            parts = dict(kv.split("=") for kv in d["normalized"].split(","))
            norm = tuple(float(parts[k]) for k in ("p", "s", "horizon", "factor"))
        return cls(
            kind=d["kind"],
            amplitude=float(d.get("amplitude", 1.0)),
            seed=int(d.get("seed", 0)),
            switching_period=float(d.get("tau", 1.0)),
            schedule=d.get("schedule", "constant"),
            schedule_s=float(d.get("schedule_s", "inf")),
            random_phases=str(d.get("random_phases", "true")).lower() in ("1", "true", "yes", "on"),
            modes=modes,
            normalization=norm,
        )


@lru_cache(maxsize=None)
def _unit_grad_norm(kind: str, modes: tuple, p: float) -> float:
    if kind in ("steady-shear", "alternating-sine"):
        return TWO_PI * _abs_cos_moment(p)
    if kind == "custom-streamfunction" and not modes:
        return 0.0
    # Trigonometric profile: quadrature on a fine grid (exact for p = 2).
    proto = VelocityProtocol(kind=kind, amplitude=1.0, modes=modes)
    m = 512
    c = np.arange(m) / m
    g = proto.grad_velocity(0.0, c[:, None], c[None, :])
    mag = np.sqrt((g**2).sum(axis=(-2, -1)))
    if p == np.inf:
        return float(mag.max())
    return float(np.mean(mag**p) ** (1.0 / p))


def make_steady_shear(amplitude: float = 1.0) -> VelocityProtocol:
    """``u = (A sin 2 pi y, 0)``."""
    return VelocityProtocol(kind="steady-shear", amplitude=amplitude)


def make_alternating_sine_flow(seed: int, switching_period: float, amplitude: float,
                               random_phases: bool = True, schedule: str = "constant",
                               schedule_s: float = np.inf) -> VelocityProtocol:
    """Alternating horizontal/vertical sine shears with per-leg random phases.

    On ``[2 j tau, (2 j + 1) tau)`` the velocity is ``(A sin(2 pi y + phi_j), 0)``,
    on ``[(2 j + 1) tau, (2 j + 2) tau)`` it is ``(0, A sin(2 pi x + psi_j))``.
    """
    if not switching_period > 0 or not amplitude > 0:
        raise ConfigurationError("alternating-sine flow needs tau > 0 and A > 0")
    return VelocityProtocol(kind="alternating-sine", amplitude=amplitude, seed=seed,
                            switching_period=switching_period, random_phases=random_phases,
                            schedule=schedule, schedule_s=schedule_s)


def make_cellular_flow(amplitude: float = 1.0) -> VelocityProtocol:
    """Steady cellular flow with stream function ``A sin(2 pi x) sin(2 pi y) / (2 pi)``."""
    return VelocityProtocol(kind="cellular", amplitude=amplitude)


def make_streamfunction_flow(modes, amplitude: float = 1.0) -> VelocityProtocol:
    return VelocityProtocol(kind="custom-streamfunction", amplitude=amplitude, modes=tuple(modes))


def velocity_at(protocol: VelocityProtocol, t: float, x) -> np.ndarray:
    """Velocity at points ``x[..., 2]``; returns an array of the same shape."""
    x = np.asarray(x, dtype=float)
    u1, u2 = protocol.velocity(t, x[..., 0], x[..., 1])
    return np.stack([u1, u2], axis=-1)


def grad_velocity_at(protocol: VelocityProtocol, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return protocol.grad_velocity(t, x[..., 0], x[..., 1])


# -- enstrophy budget ---------------------------------------------------------


@dataclass(frozen=True)
class BudgetReport:
    """``||grad u||_{L^s_t L^p_x}`` over ``[0, horizon]`` plus sampled ``||grad u(t)||_{L^p}``."""

    p: float
    s: float
    horizon: float
    value: float
    times: np.ndarray
    per_time_series: np.ndarray

    def as_dict(self) -> dict:
        return {"p": self.p, "s": self.s, "horizon": self.horizon, "value": self.value}


def gradient_budget(protocol: VelocityProtocol, p: float, s: float, horizon: float,
                    samples: int = 201) -> BudgetReport:
    """Quadrature of the mixed-norm enstrophy budget; ess-sup of samples when ``s = inf``."""
    p, s, horizon = float(p), float(s), float(horizon)
    if not (0 < horizon < np.inf):
        raise DomainError("budget horizon must be positive and finite")
    if not p >= 1 or not s >= 1:
        raise DomainError("budget exponents must be >= 1")
    times = np.linspace(0.0, horizon, samples)
    series = np.array([protocol.grad_norm(t, p) for t in times])
    if s == np.inf:
        value = float(series.max())
    else:
        c = protocol.unit_grad_norm(p)
        integrand = lambda t: (protocol.amplitude_at(t) * c) ** s  # noqa: E731
        val, _ = integrate.quad(integrand, 0.0, horizon, epsabs=0.0, epsrel=1e-12, limit=200)
        value = float(val ** (1.0 / s))
    return BudgetReport(p=p, s=s, horizon=horizon, value=value, times=times, per_time_series=series)


def normalize_to_budget(protocol: VelocityProtocol, p: float, s: float,
                        horizon: float) -> tuple[VelocityProtocol, BudgetReport]:
    """Rescale the amplitude so the budget over ``[0, horizon]`` equals one."""
    report = gradient_budget(protocol, p, s, horizon)
    if not report.value > 0:
        raise DomainError("cannot normalise a flow with vanishing velocity gradient")
    factor = 1.0 / report.value
    scaled = replace(protocol, amplitude=protocol.amplitude * factor,
                     normalization=(float(p), float(s), float(horizon), factor))
    return scaled, gradient_budget(scaled, p, s, horizon)


def gradient_integral(protocol: VelocityProtocol, p: float, t) -> np.ndarray:
    """``int_0^t ||grad u(tau)||_{L^p} d tau`` for each entry of ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    c = protocol.unit_grad_norm(p)
    if protocol.schedule == "constant" or protocol.schedule_s == np.inf:
        return protocol.amplitude * c * t
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        out[i] = integrate.quad(lambda tau: protocol.amplitude_at(tau), 0.0, ti, epsrel=1e-12)[0] * c
    return out


# -- Lagrangian trajectories ----------------------------------------------------


def _rk4_points(protocol, px, py, t, h):
    leg = protocol.leg(t + h / 2)
    k1x, k1y = protocol.velocity(t, px, py, leg)
    k2x, k2y = protocol.velocity(t + h / 2, px + h / 2 * k1x, py + h / 2 * k1y, leg)
    k3x, k3y = protocol.velocity(t + h / 2, px + h / 2 * k2x, py + h / 2 * k2y, leg)
    k4x, k4y = protocol.velocity(t + h, px + h * k3x, py + h * k3y, leg)
    return (px + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            py + h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y))


def _time_nodes(protocol, t0, t1, dt):
    """Step boundaries from ``t0`` to ``t1`` with steps <= dt that never straddle a velocity jump."""
    cuts = [t0] + protocol.breakpoints(t0, t1) + [t1]
    nodes = [t0]
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = max(1, int(math.ceil(abs(b - a) / dt - 1e-9)))
        nodes.extend(a + (b - a) * np.arange(1, m + 1) / m)
    return nodes


def integrate_characteristics(protocol: VelocityProtocol, px, py, t0: float, t1: float,
                              dt: float):
    """RK4 on ``dX/dt = u(t, X)`` from ``t0`` to ``t1`` (either direction), unwrapped positions."""
    if not dt > 0:
        raise ConfigurationError("trajectory step dt must be positive")
    px = np.array(px, dtype=float, copy=True)
    py = np.array(py, dtype=float, copy=True)
    nodes = _time_nodes(protocol, t0, t1, dt)
    for a, b in zip(nodes[:-1], nodes[1:]):
        px, py = _rk4_points(protocol, px, py, a, b - a)
    return px, py


@dataclass(frozen=True)
class FlowMap:
    """Trajectory endpoints: positions modulo one, winding numbers and unwrapped lift."""

    positions: np.ndarray
    windings: np.ndarray
    unwrapped: np.ndarray


def flow_map(protocol: VelocityProtocol, x0, t: float, dt: float, t0: float = 0.0) -> FlowMap:
    """Lagrangian flow map ``X(t, x0)`` by classical RK4.

    ``x0`` has shape ``(..., 2)``.  Distances between trajectories should be
    measured on ``unwrapped`` (the lift to the plane), which is what the
    Lipschitz separation bounds refer to.
    """
    x0 = np.asarray(x0, dtype=float)
    px, py = integrate_characteristics(protocol, x0[..., 0], x0[..., 1], t0, t, dt)
    lift = np.stack([px, py], axis=-1)
    wind = np.floor(lift)
    return FlowMap(positions=lift - wind, windings=wind.astype(np.int64), unwrapped=lift)
