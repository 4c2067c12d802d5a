"""Kantorovich-Rubinstein distance with logarithmic cost on the torus.

For a mean-zero field ``theta`` the distance is the optimal transport cost
between its positive and negative parts,

    D_delta(theta) = min_pi  sum pi(x, y) log(d(x, y) / delta + 1),

with ``d`` the geodesic distance on the unit torus.  Because the cost is a
concave function of a metric vanishing at zero, it is itself a metric and
``D_delta`` behaves like a norm on mean-zero measures.

Two solvers are provided: an exact network simplex on the bipartite support
graph (:func:`kr_distance_exact`) and log-domain Sinkhorn iteration with
epsilon scaling (:func:`kr_distance_entropic`), which returns the cost of a
feasible rounded plan together with a certified duality gap.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import CapacityError, ConfigurationError, DomainError, SmixError
from .spectral import ScalarField, gradient_norm, grid, lebesgue_norm

__all__ = [
    "DiscreteMeasurePair",
    "KRResult",
    "discretize",
    "torus_distance",
    "torus_cost",
    "kr_distance_exact",
    "kr_distance_entropic",
    "kr_upper_bound",
    "kr_lower_bound",
    "lower_bound_constant",
    "calibrate_constant",
    "coarse_grain",
    "coarse_graining_error",
    "kr_coarse",
    "kr_rate_check",
    "RateCheck",
    "TORUS_DIAMETER",
    "DEFAULT_CAPACITY",
]

TORUS_DIAMETER = math.sqrt(2.0) / 2.0
DEFAULT_CAPACITY = 4096
DEFAULT_MASS_FLOOR = 1e-14


@dataclass(frozen=True)
class DiscreteMeasurePair:
    """Positive and negative parts of a mean-zero field as weighted point sets.

    Attributes
    ----------
    src, dst : ndarray, shape (m, 2) and (k, 2)
        Positions of the cells carrying ``theta+`` and ``theta-``.
    src_mass, dst_mass : ndarray
        Cell masses (value times cell area); both sum to ``total_mass``.
    """

    src: np.ndarray
    src_mass: np.ndarray
    dst: np.ndarray
    dst_mass: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.src_mass.sum())

    @property
    def support_size(self) -> int:
        return len(self.src_mass) + len(self.dst_mass)

    @classmethod
    def from_points(cls, src, src_mass, dst, dst_mass, balance_tol: float = 1e-10):
        """Build a pair from explicit point masses (total masses must agree)."""
        src = np.atleast_2d(np.asarray(src, dtype=float)).reshape(-1, 2)
        dst = np.atleast_2d(np.asarray(dst, dtype=float)).reshape(-1, 2)
        src_mass = np.asarray(src_mass, dtype=float).ravel()
        dst_mass = np.asarray(dst_mass, dtype=float).ravel()
        if len(src) != len(src_mass) or len(dst) != len(dst_mass):
            raise ConfigurationError("positions and masses have different lengths")
        if (src_mass < 0).any() or (dst_mass < 0).any():
            raise DomainError("masses must be nonnegative")
        ms, md = src_mass.sum(), dst_mass.sum()
        if abs(ms - md) > balance_tol * max(1.0, ms, md):
            raise DomainError(f"unbalanced masses: {ms!r} vs {md!r}")
        return cls(src % 1.0, src_mass, dst % 1.0, dst_mass)

    def swapped(self) -> "DiscreteMeasurePair":
        return DiscreteMeasurePair(self.dst, self.dst_mass, self.src, self.src_mass)

    def scaled(self, c: float) -> "DiscreteMeasurePair":
        return DiscreteMeasurePair(self.src, self.src_mass * c, self.dst, self.dst_mass * c)


def discretize(field: ScalarField, mass_floor: float = DEFAULT_MASS_FLOOR) -> DiscreteMeasurePair:
    """Split a mean-zero field into positive and negative cell masses.

    Cells whose mass is at or below ``mass_floor`` are dropped; the two parts
    are then rescaled to their common average so the totals agree to
    rounding.  The correction is bounded by the field's mean defect.
    """
    if not field.is_mean_zero(1e-10):
        raise DomainError(f"discretize needs a mean-zero field (mean {field.mean:.3e})")
    n = field.n
    mass = field.values.ravel() / n**2
    x, y = grid(n)
    pts = np.column_stack([x.ravel(), y.ravel()])
    pos = mass > mass_floor
    neg = -mass > mass_floor
    mp, mn = mass[pos], -mass[neg]
    tp, tn = mp.sum(), mn.sum()
    if tp == 0 or tn == 0:
        empty = np.zeros((0, 2))
        return DiscreteMeasurePair(empty, np.zeros(0), empty.copy(), np.zeros(0))
    target = 0.5 * (tp + tn)
    return DiscreteMeasurePair(pts[pos], mp * (target / tp), pts[neg], mn * (target / tn))


def torus_distance(p, q) -> np.ndarray:
    """Pairwise geodesic distances between point sets ``p`` (m, 2) and ``q`` (k, 2)."""
    d = np.abs(np.asarray(p, dtype=float)[:, None, :] - np.asarray(q, dtype=float)[None, :, :]) % 1.0
    d = np.minimum(d, 1.0 - d)
    return np.hypot(d[..., 0], d[..., 1])


def torus_cost(p, q, delta: float) -> np.ndarray:
    """Cost matrix ``log(d_T(x, y) / delta + 1)``."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    return np.log1p(torus_distance(p, q) / delta)


@dataclass
class KRResult:
    """Outcome of a distance computation.

    ``gap`` certifies ``value - gap <= D_delta <= value``; it is zero for the
    exact solver.  ``coarse_error`` bounds the additional error from
    coarse-graining the field first (zero when no coarse-graining was done).
    ``plan`` holds ``(src_index, dst_index, mass)`` arrays when requested.
    """

    value: float
    delta: float
    method: str
    gap: float = 0.0
    iterations: int = 0
    converged: bool = True
    coarse_error: float = 0.0
    plan: tuple | None = None
    pair: DiscreteMeasurePair | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {"value": self.value, "delta": self.delta, "method": self.method,
                "gap": self.gap, "iterations": self.iterations}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    def write_plan_csv(self, path) -> None:
        """Write the nonzero plan entries as ``x_src,y_src,x_dst,y_dst,mass``."""
        if self.plan is None or self.pair is None:
            raise ConfigurationError("result carries no transport plan")
        i, j, m = self.plan
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_src", "y_src", "x_dst", "y_dst", "mass"])
            for a, b, v in zip(i, j, m):
                xs, ys = self.pair.src[a]
                xd, yd = self.pair.dst[b]
                w.writerow([repr(float(xs)), repr(float(ys)), repr(float(xd)), repr(float(yd)), repr(float(v))])


def _empty_result(delta, method, keep_plan, pair):
    plan = (np.zeros(0, int), np.zeros(0, int), np.zeros(0)) if keep_plan else None
    return KRResult(0.0, delta, method, plan=plan, pair=pair if keep_plan else None)


def kr_distance_exact(pair: DiscreteMeasurePair, delta: float, capacity: int = DEFAULT_CAPACITY,
                      keep_plan: bool = True) -> KRResult:
    """Exact ``D_delta`` by the transportation network simplex.

    Raises
    ------
    CapacityError
        If the support has more than ``capacity`` cells in total.
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if pair.support_size > capacity:
        raise CapacityError(
            f"support of {pair.support_size} cells exceeds the exact-solver cap of {capacity}; "
            "coarse-grain the field or use kr_distance_entropic")
    if len(pair.src_mass) == 0 or len(pair.dst_mass) == 0:
        return _empty_result(delta, "exact-flow", keep_plan, pair)
    C = torus_cost(pair.src, pair.dst, delta)
    rows, cols, flows, u, v, cost, it, status = kernels.transport_simplex(pair.src_mass, pair.dst_mass, C)
    if status != kernels.OPTIMAL:
        raise SmixError(f"network simplex stopped after {it} pivots without reaching optimality")
    plan = None
    if keep_plan:
        nz = flows > 0
        plan = (rows[nz], cols[nz], flows[nz])
    return KRResult(max(float(cost), 0.0), float(delta), "exact-flow", 0.0, int(it), True,
                    plan=plan, pair=pair if keep_plan else None)


def _round_plan(P, a, b):
    """Project a nonnegative matrix onto the transport polytope of ``(a, b)``."""
    r = P.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        P = P * np.where(r > a, a / r, 1.0)[:, None]
        c = P.sum(axis=0)
        P = P * np.where(c > b, b / c, 1.0)[None, :]
    er = a - P.sum(axis=1)
    ec = b - P.sum(axis=0)
    s = er.sum()
    if s > 0:
        P = P + np.outer(er, ec) / s
    return P


def _c_transform_dual(C, f, a, b):
    """Feasible dual value from potential ``f`` by a double c-transform."""
    g = (C - f[:, None]).min(axis=0)
    f2 = (C - g[None, :]).min(axis=1)
    return float(a @ f2 + b @ g)


def kr_distance_entropic(pair: DiscreteMeasurePair, delta: float, epsilon: float = 1e-3,
                         max_iter: int = 10_000, tol: float = 1e-9, keep_plan: bool = False) -> KRResult:
    """Approximate ``D_delta`` by log-domain Sinkhorn iteration.

    The regularisation starts at the cost scale and is halved per round until
    it reaches ``epsilon``; each round iterates until the L1 marginal
    violation (on normalised masses) is below ``tol``.  The returned value
    is the cost of the rounded, exactly feasible plan, and ``gap`` is its
    distance to a feasible dual objective, so it bounds the true error.

    ``converged`` is False when ``max_iter`` iterations were spent before the
    final round met ``tol``; the value and gap are still valid bounds.
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if not epsilon > 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    if len(pair.src_mass) == 0 or len(pair.dst_mass) == 0:
        return _empty_result(delta, "entropic", keep_plan, pair)
    M = pair.total_mass
    a = pair.src_mass / M
    b = pair.dst_mass / pair.dst_mass.sum()
    C = torus_cost(pair.src, pair.dst, delta)
    la, lb = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    eps = max(float(C.max()), epsilon)
    it = 0
    converged = False
    while True:
        # intermediate rounds only need a warm start for the next one
        round_tol = tol if eps <= epsilon else max(tol, 1e-4)
        while it < max_iter:
            f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
            it += 1
            if it % 10 == 0 or it == max_iter:
                # g-update makes the column marginals exact; check the rows
                logP = (f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :]
                if np.abs(np.exp(logsumexp(logP, axis=1)) - a).sum() <= round_tol:
                    break
        else:
            break
        if eps <= epsilon:
            converged = True
            break
        eps = max(eps / 2, epsilon)
    P = np.exp((f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :])
    P = _round_plan(P, a, b)
    primal = float((P * C).sum())
    dual = _c_transform_dual(C, f, a, b)
    gap = max(primal - dual, 0.0)
    plan = None
    if keep_plan:
        i, j = np.nonzero(P > 1e-15)
        plan = (i, j, P[i, j] * M)
    return KRResult(primal * M, float(delta), "entropic", gap * M, it, converged,
                    plan=plan, pair=pair if keep_plan else None)


def kr_upper_bound(pair: DiscreteMeasurePair, delta: float) -> float:
    """Every transport plan costs at most ``log(diam / delta + 1)`` per unit mass."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    return math.log1p(TORUS_DIAMETER / delta) * pair.total_mass


def kr_lower_bound(field: ScalarField, delta: float, constant_C: float = 1.0) -> float:
    """``log(||theta||_1 / (delta C ||grad theta||_1) + 1) ||theta||_1``.

    Here ``||theta||_1`` is twice the mass of ``theta+`` for a mean-zero field.
    """
    if not delta > 0 or not constant_C > 0:
        raise DomainError("delta and C must be positive")
    g = gradient_norm(field, 1)
    if not g > 0:
        raise DomainError("lower bound undefined for a field with zero gradient")
    l1 = lebesgue_norm(field, 1)
    return math.log1p(l1 / (delta * constant_C * g)) * l1


def lower_bound_constant(field: ScalarField, delta: float, value: float) -> float:
    """Smallest ``C`` for which ``kr_lower_bound(field, delta, C) <= value``."""
    l1 = lebesgue_norm(field, 1)
    g = gradient_norm(field, 1)
    if not g > 0:
        raise DomainError("lower bound undefined for a field with zero gradient")
    if value <= 0:
        return math.inf
    return l1 / (delta * g * math.expm1(value / l1))


def calibrate_constant(fields, deltas, solver=None) -> tuple[float, np.ndarray]:
    """Calibrate the implicit constant of the lower bound on a corpus.

    Parameters
    ----------
    fields : sequence of ScalarField
    deltas : float or sequence of float
        One delta per field, or a shared one.
    solver : callable, optional
        ``solver(field, delta) -> value``; defaults to the exact solver on the
        discretised field.

    Returns
    -------
    C_star : float
        The smallest constant making the bound hold on every instance.
    per_instance : ndarray
        The smallest admissible constant of each instance.
    """
    fields = list(fields)
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (len(fields),))
    if solver is None:
        def solver(f, d):
            return kr_distance_exact(discretize(f), d, keep_plan=False).value
    per = np.array([lower_bound_constant(f, d, solver(f, d)) for f, d in zip(fields, deltas)])
    return float(per.max()), per


def coarse_grain(field: ScalarField, m: int) -> ScalarField:
    """Block-average ``field`` onto an ``m x m`` grid (``m`` divides ``n``, ``m <= 64``).

    The result is indexed like any ``m x m`` field; note that the centre of
    block ``(i, j)`` is offset from ``(i / m, j / m)`` by ``(r - 1) / (2 n)``
    per axis for blocks of ``r x r`` fine cells (see :func:`kr_coarse`).
    """
    n = field.n
    if m > 64 or m < 1 or n % m:
        raise ConfigurationError(f"coarse size must divide n={n} and be at most 64, got {m}")
    r = n // m
    return ScalarField(field.values.reshape(m, r, m, r).mean(axis=(1, 3)))


def coarse_graining_error(field: ScalarField, m: int, delta: float) -> float:
    """Bound on ``|D_delta(theta) - D_delta(coarse)|`` for :func:`kr_coarse`.

    Every fine cell moves to its block representative, at most
    ``sqrt(2) (r - 1) / (2 n)`` away, so by the triangle inequality the
    distance changes by at most that cost times ``||theta||_1``.
    """
    n = field.n
    r = n // m
    reach = math.sqrt(2.0) * (r - 1) / (2.0 * n)
    return math.log1p(reach / delta) * lebesgue_norm(field, 1)


def kr_coarse(field: ScalarField, delta: float, m: int = 32, method: str = "exact", **kwargs) -> KRResult:
    """``D_delta`` of the block-averaged field, with the coarse-graining bound attached.

    Block masses are placed at the block centres, so the coarse measure is a
    faithful aggregate of the fine one.
    """
    n = field.n
    r = n // m
    coarse = coarse_grain(field, m)
    pair = discretize(project_to_mean_zero(coarse))
    shift = (r - 1) / (2.0 * n)
    pair = DiscreteMeasurePair(pair.src + shift, pair.src_mass, pair.dst + shift, pair.dst_mass)
    if method == "exact":
        res = kr_distance_exact(pair, delta, **kwargs)
    elif method == "entropic":
        res = kr_distance_entropic(pair, delta, **kwargs)
    else:
        raise ConfigurationError(f"unknown method {method!r}; expected 'exact' or 'entropic'")
    res.coarse_error = coarse_graining_error(field, m, delta)
    return res


def project_to_mean_zero(field: ScalarField) -> ScalarField:
    return ScalarField(field.values - field.values.mean())


@dataclass
class RateCheck:
    """Finite-difference rate of ``D_delta`` against the bound on its derivative.

    ``ratio`` is NaN where the sample is inconclusive (solver gap not small
    compared with the increment of ``D_delta``).
    """

    times: np.ndarray
    distance: np.ndarray
    rate: np.ndarray
    rhs: np.ndarray
    ratio: np.ndarray
    conclusive: np.ndarray
    spacing: float

    @property
    def sup(self) -> float:
        r = self.ratio[self.conclusive]
        return float(r.max()) if r.size else math.nan

    def as_dict(self) -> dict:
        return {"spacing": self.spacing, "sup": self.sup,
                "times": self.times.tolist(), "ratio": self.ratio.tolist()}


def kr_rate_check(snapshots, protocol, kappa: float, delta: float, p: float = math.inf,
                  method: str = "exact", coarse: int | None = 32, gap_fraction: float = 0.1,
                  distances=None) -> RateCheck:
    """Compare ``|dD_delta/dt|`` with ``||grad u||_p ||theta||_p' + (kappa/delta) ||grad theta||_1``.

    Parameters
    ----------
    snapshots : sequence of (t, ScalarField)
        Uniformly spaced in time.
    protocol : VelocityProtocol
    kappa, delta : float
    p : float
        Lebesgue exponent of the velocity gradient; ``p'`` is its conjugate.
    method : {'exact', 'entropic'}
    coarse : int or None
        Coarse-grain each snapshot to this size first (None: use the field as is).
    gap_fraction : float
        A sample is conclusive when the summed solver gaps of the two
        neighbouring distances are below this fraction of their difference.
    distances : sequence of KRResult, optional
        Precomputed distances for the snapshots (reused across spacings).

    Returns
    -------
    RateCheck
        Central differences at the interior snapshots.
    """
    snapshots = list(snapshots)
    if len(snapshots) < 3:
        raise ConfigurationError("rate check needs at least three snapshots")
    times = np.array([t for t, _ in snapshots])
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ConfigurationError("snapshots must be uniformly spaced in time")
    if distances is None:
        distances = [_distance(f, delta, method, coarse) for _, f in snapshots]
    D = np.array([r.value for r in distances])
    gaps = np.array([r.gap for r in distances])
    h = steps[0]
    pp = 1.0 if p == math.inf else (math.inf if p == 1 else p / (p - 1))
    ti = times[1:-1]
    rate = np.abs(D[2:] - D[:-2]) / (2 * h)
    rhs = np.array([protocol.grad_norm(t, p) * lebesgue_norm(f, pp)
                    + kappa / delta * gradient_norm(f, 1) for t, f in snapshots[1:-1]])
    conclusive = (gaps[2:] + gaps[:-2]) <= gap_fraction * np.abs(D[2:] - D[:-2])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(conclusive, np.where(rate == 0, 0.0, rate / rhs), np.nan)
    return RateCheck(ti, D[1:-1], rate, rhs, ratio, conclusive & np.isfinite(ratio), float(h))


def _distance(f: ScalarField, delta, method, coarse) -> KRResult:
    if coarse is not None and coarse < f.n:
        return kr_coarse(f, delta, coarse, method, keep_plan=False)
    pair = discretize(f)
    if method == "exact":
        return kr_distance_exact(pair, delta, keep_plan=False)
    return kr_distance_entropic(pair, delta)
