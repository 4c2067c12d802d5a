import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from scalarmix import _pykernels, kernels

try:
    from scalarmix import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

IMPLS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    IMPLS.append(pytest.param(_ckernels, id="compiled"))


def lp_oracle(a, b, C):
    m, n = C.shape
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A_eq[m + j, j::n] = 1
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    return res.fun


def random_problem(rng, m, n):
    a = rng.random(m) + 0.01
    b = rng.random(n) + 0.01
    b *= a.sum() / b.sum()
    return a, b, rng.random((m, n))


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("impl", IMPLS)
def test_simplex_matches_lp(impl, rng):
    for _ in range(30):
        m, n = rng.integers(1, 12, size=2)
        a, b, C = random_problem(rng, m, n)
        rows, cols, flows, u, v, cost, it, status = impl.transport_simplex(a, b, C)
        assert status == kernels.OPTIMAL
        assert cost == pytest.approx(lp_oracle(a, b, C), abs=1e-10)
        x = np.zeros((m, n))
        np.add.at(x, (rows, cols), flows)
        np.testing.assert_allclose(x.sum(1), a, atol=1e-12)
        np.testing.assert_allclose(x.sum(0), b, atol=1e-12)
        assert (flows >= -1e-14).all()
        # complementary slackness and dual feasibility
        np.testing.assert_allclose(u[rows] + v[cols], C[rows, cols], atol=1e-12)
        assert (C - u[:, None] - v[None, :]).min() >= -1e-10


@pytest.mark.parametrize("impl", IMPLS)
def test_simplex_degenerate_ties(impl):
    a = np.ones(4)
    b = np.ones(4)
    C = np.ones((4, 4))
    *_, cost, _, status = impl.transport_simplex(a, b, C)
    assert status == kernels.OPTIMAL
    assert cost == pytest.approx(4.0)


@pytest.mark.parametrize("impl", IMPLS)
def test_simplex_iteration_limit(impl, rng):
    a, b, C = random_problem(rng, 20, 20)
    *_, status = impl.transport_simplex(a, b, C, max_iter=1)
    assert status == kernels.ITERATION_LIMIT


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
def test_backends_agree_on_cost(rng):
    for _ in range(10):
        a, b, C = random_problem(rng, 15, 13)
        c1 = _pykernels.transport_simplex(a, b, C)[5]
        c2 = _ckernels.transport_simplex(a, b, C)[5]
        assert c1 == pytest.approx(c2, abs=1e-12)


@pytest.mark.parametrize("impl", IMPLS)
def test_interp_exact_on_grid(impl, rng):
    f = rng.standard_normal((16, 16))
    i, j = np.meshgrid(np.arange(16.0), np.arange(16.0), indexing="ij")
    np.testing.assert_allclose(impl.interp_bicubic_periodic(f, i + 16, j - 32), f, atol=1e-13)


@pytest.mark.parametrize("impl", IMPLS)
def test_interp_reproduces_cubics(impl, rng):
    # cubic polynomials are reproduced away from the periodic seam
    n = 32
    i, j = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
    poly = lambda x, y: 0.3 * x**3 - x * y**2 + 2 * y - 1  # noqa: E731
    xi = rng.uniform(5, 25, 200)
    yi = rng.uniform(5, 25, 200)
    np.testing.assert_allclose(impl.interp_bicubic_periodic(poly(i, j), xi, yi), poly(xi, yi), rtol=1e-11, atol=1e-9)


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
@given(st.integers(0, 2**32 - 1))
def test_interp_backends_agree(seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((8, 8))
    xi, yi = rng.uniform(-20, 20, (2, 50))
    np.testing.assert_allclose(_ckernels.interp_bicubic_periodic(f, xi, yi),
                               _pykernels.interp_bicubic_periodic(f, xi, yi), atol=1e-13)
