import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalarmix.errors import CapacityError, ConfigurationError, DomainError
from scalarmix.flows import make_steady_shear
from scalarmix.kr import (
    DiscreteMeasurePair,
    calibrate_constant,
    coarse_grain,
    discretize,
    kr_coarse,
    kr_distance_entropic,
    kr_distance_exact,
    kr_lower_bound,
    kr_rate_check,
    kr_upper_bound,
    torus_cost,
    torus_distance,
)
from scalarmix.spectral import ScalarField
from tests.conftest import random_mean_zero

TWO_CELL = DiscreteMeasurePair.from_points([[0.0, 0.0]], [0.5], [[0.25, 0.0]], [0.5])


def random_pair(rng, m, k, mass=1.0):
    a = rng.random(m) + 0.05
    b = rng.random(k) + 0.05
    return DiscreteMeasurePair.from_points(rng.random((m, 2)), a * mass / a.sum(),
                                           rng.random((k, 2)), b * mass / b.sum())


def exhaustive_oracle(pair, delta):
    """Minimum over all basic feasible solutions of the transportation polytope."""
    C = torus_cost(pair.src, pair.dst, delta)
    a, b = pair.src_mass, pair.dst_mass
    m, k = C.shape
    arcs = list(itertools.product(range(m), range(k)))
    best = math.inf
    for basis in itertools.combinations(arcs, m + k - 1):
        A = np.zeros((m + k, m + k - 1))
        for col, (i, j) in enumerate(basis):
            A[i, col] = 1
            A[m + j, col] = 1
        x, *_ = np.linalg.lstsq(A, np.concatenate([a, b]), rcond=None)
        if np.allclose(A @ x, np.concatenate([a, b]), atol=1e-12) and (x >= -1e-12).all():
            best = min(best, sum(C[i, j] * xi for (i, j), xi in zip(basis, x)))
    return best


# -- discretisation ----------------------------------------------------------------


def test_discretize_sine_halves(sine_field):
    pair = discretize(sine_field(64))
    assert pair.total_mass == pytest.approx(1 / math.pi, abs=1e-3)
    assert (pair.src[:, 0] < 0.5).all() and (pair.dst[:, 0] > 0.5).all()
    assert abs(pair.src_mass.sum() - pair.dst_mass.sum()) <= 1e-10


def test_discretize_zero_and_nonzero_mean():
    assert discretize(ScalarField.zeros(8)).support_size == 0
    with pytest.raises(DomainError):
        discretize(ScalarField(np.ones((8, 8))))


def test_from_points_rejects_unbalanced():
    with pytest.raises(DomainError):
        DiscreteMeasurePair.from_points([[0, 0]], [1.0], [[0.5, 0.5]], [0.9])


def test_torus_distance_wraps():
    d = torus_distance([[0.05, 0.0], [0.0, 0.0]], [[0.95, 0.0], [0.5, 0.5]])
    assert d.shape == (2, 2)
    assert d[0, 0] == pytest.approx(0.1)
    assert d[1, 1] == pytest.approx(math.sqrt(2) / 2)


# -- exact solver -----------------------------------------------------------------


def test_two_cell_exact():
    res = kr_distance_exact(TWO_CELL, 0.1)
    assert res.value == pytest.approx(0.5 * math.log(3.5), abs=1e-12)
    assert res.value == pytest.approx(0.626381, abs=1e-6)
    assert res.gap == 0 and res.method == "exact-flow"


def test_two_cell_upper_bound():
    assert kr_upper_bound(TWO_CELL, 0.1) == pytest.approx(0.5 * math.log(math.sqrt(2) / 0.2 + 1))
    # 0.5 * log(8.0711) = 1.04414
    assert kr_upper_bound(TWO_CELL, 0.1) == pytest.approx(1.04414, abs=1e-5)


def test_collocated_is_zero(rng):
    pts = rng.random((5, 2))
    m = rng.random(5)
    pair = DiscreteMeasurePair.from_points(pts, m, pts, m)
    assert kr_distance_exact(pair, 0.1).value == pytest.approx(0.0, abs=1e-15)


def test_exact_matches_exhaustive_enumeration(rng):
    for _ in range(15):
        pair = random_pair(rng, *rng.integers(1, 4, size=2))
        assert kr_distance_exact(pair, 0.05).value == pytest.approx(exhaustive_oracle(pair, 0.05), abs=1e-12)


def test_plan_marginals_and_cost(rng):
    pair = random_pair(rng, 6, 9)
    res = kr_distance_exact(pair, 0.1)
    i, j, m = res.plan
    np.testing.assert_allclose(np.bincount(i, m, 6), pair.src_mass, atol=1e-14)
    np.testing.assert_allclose(np.bincount(j, m, 9), pair.dst_mass, atol=1e-14)
    C = torus_cost(pair.src, pair.dst, 0.1)
    assert (C[i, j] * m).sum() == pytest.approx(res.value, rel=1e-12)


def test_capacity_error(rng):
    with pytest.raises(CapacityError):
        kr_distance_exact(random_pair(rng, 40, 40), 0.1, capacity=50)


@given(st.integers(0, 2**32 - 1))
def test_symmetry_and_scaling(seed):
    rng = np.random.default_rng(seed)
    pair = random_pair(rng, 5, 4)
    v = kr_distance_exact(pair, 0.1).value
    assert kr_distance_exact(pair.swapped(), 0.1).value == pytest.approx(v, rel=1e-10, abs=1e-14)
    assert kr_distance_exact(pair.scaled(3.5), 0.1).value == pytest.approx(3.5 * v, rel=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_monotone_in_delta(seed):
    rng = np.random.default_rng(seed)
    pair = random_pair(rng, 6, 6)
    vals = [kr_distance_exact(pair, d).value for d in (1e-3, 1e-2, 1e-1, 1.0)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


@given(st.integers(0, 2**32 - 1))
def test_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((3, 5, 2))
    ms = rng.random((3, 5)) + 0.05
    ms /= ms.sum(axis=1, keepdims=True)

    def d(a, b):
        return kr_distance_exact(DiscreteMeasurePair.from_points(pts[a], ms[a], pts[b], ms[b]), 0.05).value

    assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9


@given(st.integers(0, 2**32 - 1))
def test_upper_bound_dominates(seed):
    rng = np.random.default_rng(seed)
    pair = random_pair(rng, 7, 5, mass=rng.random() + 0.1)
    for delta in (1e-3, 0.3):
        assert kr_distance_exact(pair, delta).value <= kr_upper_bound(pair, delta) + 1e-12


# -- entropic solver --------------------------------------------------------------


def test_two_cell_entropic():
    res = kr_distance_entropic(TWO_CELL, 0.1, epsilon=1e-3)
    assert res.value == pytest.approx(0.626381, abs=1e-3)
    assert res.converged


def test_entropic_close_to_exact(rng):
    for _ in range(3):
        pair = discretize(random_mean_zero(rng, 8))
        exact = kr_distance_exact(pair, 0.1).value
        res = kr_distance_entropic(pair, 0.1, epsilon=1e-3, max_iter=10_000)
        assert abs(res.value - exact) <= 1e-3
        assert res.value >= exact - 1e-12
        assert res.value - res.gap <= exact + 1e-12
        assert res.iterations <= 10_000


def test_entropic_gap_refines(rng):
    pair = discretize(random_mean_zero(rng, 8))
    coarse = kr_distance_entropic(pair, 0.1, epsilon=1e-1)
    fine = kr_distance_entropic(pair, 0.1, epsilon=1e-3)
    assert fine.gap <= coarse.gap


def test_entropic_nonconvergence_flagged(rng):
    pair = discretize(random_mean_zero(rng, 8))
    res = kr_distance_entropic(pair, 0.1, epsilon=1e-4, max_iter=3)
    assert not res.converged
    assert res.gap > 0


# -- bounds -----------------------------------------------------------------------


def test_lower_bound_sine(sine_field):
    # grid L1 norms carry an O(h^2) quadrature error
    val = kr_lower_bound(sine_field(1024), 1e-3, 1.0)
    assert val == pytest.approx(math.log((2 / math.pi) / 4e-3 + 1) * 2 / math.pi, rel=1e-5)
    assert val == pytest.approx(3.23157, abs=1e-4)
    assert kr_lower_bound(sine_field(64), 1e12) < 1e-12


def test_lower_bound_zero_gradient():
    with pytest.raises(DomainError):
        kr_lower_bound(ScalarField.zeros(8), 0.1)


def test_calibrated_sandwich(rng):
    fields = [random_mean_zero(rng, 8, smooth=3) for _ in range(10)]
    C, per = calibrate_constant(fields, 0.05)
    assert C == per.max()
    for f in fields:
        pair = discretize(f)
        v = kr_distance_exact(pair, 0.05).value
        assert kr_lower_bound(f, 0.05, C) <= v * (1 + 1e-12)
        assert v <= kr_upper_bound(pair, 0.05)


# -- coarse graining --------------------------------------------------------------


def test_coarse_grain_preserves_mean_and_shape(rng):
    f = random_mean_zero(rng, 64)
    c = coarse_grain(f, 16)
    assert c.n == 16 and abs(c.mean) <= 1e-15
    with pytest.raises(ConfigurationError):
        coarse_grain(f, 128)


def test_coarse_error_bound_holds(rng):
    f = random_mean_zero(rng, 16, smooth=4)
    fine = kr_distance_exact(discretize(f), 0.05).value
    res = kr_coarse(f, 0.05, m=8)
    assert abs(res.value - fine) <= res.coarse_error


def test_coarse_identity_when_m_equals_n(rng):
    f = random_mean_zero(rng, 8)
    res = kr_coarse(f, 0.1, m=8)
    assert res.coarse_error == 0
    assert res.value == pytest.approx(kr_distance_exact(discretize(f), 0.1).value, rel=1e-12)


# -- I/O --------------------------------------------------------------------------


def test_result_json_and_plan_csv(tmp_path):
    res = kr_distance_exact(TWO_CELL, 0.1)
    assert set(json.loads(res.to_json())) == {"value", "delta", "method", "gap", "iterations"}
    path = tmp_path / "plan.csv"
    res.write_plan_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x_src,y_src,x_dst,y_dst,mass"
    assert [float(v) for v in lines[1].split(",")] == pytest.approx([0.0, 0.0, 0.25, 0.0, 0.5])


# -- rate check -------------------------------------------------------------------


def test_rate_check_stationary_is_zero(sine_field):
    f = sine_field(16)
    rc = kr_rate_check([(0.1 * k, f) for k in range(4)], make_steady_shear(0.0), 0.0, 0.1, coarse=None)
    assert rc.conclusive.all()
    assert rc.sup == 0.0


def test_rate_check_heat_finite(sine_field):
    f0 = sine_field(16)
    snaps = [(0.1 * k, f0 * math.exp(-4 * math.pi**2 * 0.05 * 0.1 * k)) for k in range(6)]
    rc = kr_rate_check(snaps, make_steady_shear(0.0), 0.05, 0.1, coarse=None)
    assert np.isfinite(rc.ratio).all()
    assert 0 < rc.sup < 10


def test_rate_check_needs_uniform_spacing(sine_field):
    f = sine_field(8)
    with pytest.raises(ConfigurationError):
        kr_rate_check([(0, f), (0.1, f), (0.3, f)], make_steady_shear(0.0), 0.0, 0.1)
