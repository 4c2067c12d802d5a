import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalarmix.errors import ConfigurationError, DomainError
from scalarmix.flows import (
    VelocityProtocol,
    flow_map,
    grad_velocity_at,
    gradient_budget,
    gradient_integral,
    make_alternating_sine_flow,
    make_cellular_flow,
    make_steady_shear,
    make_streamfunction_flow,
    normalize_to_budget,
    velocity_at,
)


def test_alternating_flow_direct_evaluation():
    proto = make_alternating_sine_flow(seed=0, switching_period=1.0, amplitude=1.0, random_phases=False)
    u = velocity_at(proto, 0.1, np.array([0.25, 0.25]))
    np.testing.assert_allclose(u, [1.0, 0.0], atol=1e-15)
    # second leg shears in y
    u = velocity_at(proto, 1.5, np.array([0.25, 0.7]))
    np.testing.assert_allclose(u, [0.0, 1.0], atol=1e-15)


def test_phases_are_deterministic_and_seeded():
    a = make_alternating_sine_flow(7, 0.5, 1.0)
    b = make_alternating_sine_flow(7, 0.5, 1.0)
    c = make_alternating_sine_flow(8, 0.5, 1.0)
    assert a.phases(20) == b.phases(20)
    assert a.phases(20) != c.phases(20)
    assert all(0 <= p < 2 * math.pi for p in a.phases(50))


def test_divergence_free_everywhere(rng):
    protos = [make_alternating_sine_flow(3, 0.7, 1.3), make_steady_shear(2.0), make_cellular_flow(0.5),
              make_streamfunction_flow([(1, 2, 0.5, 0.3), (3, -1, 0.2, 1.0)])]
    pts = rng.random((10_000, 2))
    ts = rng.random(10_000) * 10
    for proto in protos:
        for t in ts[:20]:
            g = grad_velocity_at(proto, t, pts)
            div = g[..., 0, 0] + g[..., 1, 1]
            assert np.abs(div).max() <= 1e-12


def test_gradient_matches_finite_differences(rng):
    proto = make_streamfunction_flow([(1, 2, 0.5, 0.3), (2, -1, 0.2, 1.0)])
    x = rng.random((50, 2))
    h = 1e-6
    g = grad_velocity_at(proto, 0.0, x)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (velocity_at(proto, 0.0, x + e) - velocity_at(proto, 0.0, x - e)) / (2 * h)
        np.testing.assert_allclose(g[..., :, j], fd, atol=1e-7)


def test_steady_shear_gradient_single_entry():
    g = grad_velocity_at(make_steady_shear(0.3), 0.0, np.array([0.1, 0.2]))
    expect = np.zeros((2, 2))
    expect[0, 1] = 2 * math.pi * 0.3 * math.cos(2 * math.pi * 0.2)
    np.testing.assert_allclose(g, expect, atol=1e-15)


def test_normalize_lipschitz_shear():
    proto, rep = normalize_to_budget(make_steady_shear(), math.inf, math.inf, 5.0)
    assert proto.amplitude == pytest.approx(1 / (2 * math.pi), rel=1e-12)
    assert rep.value == pytest.approx(1.0, abs=1e-6)


def test_normalize_l2_shear():
    proto, _ = normalize_to_budget(make_steady_shear(), 2, math.inf, 5.0)
    assert proto.amplitude == pytest.approx(1 / (math.sqrt(2) * math.pi), rel=1e-9)


def test_normalize_alternating_l2_l2_closed_form():
    # ||grad u(t)||_{L^2} = sqrt(2) pi A for every leg, so the budget is sqrt(2 pi^2 A^2 T)
    proto, rep = normalize_to_budget(make_alternating_sine_flow(1, 1.0, 1.0), 2, 2, 10.0)
    assert proto.amplitude == pytest.approx(1 / math.sqrt(2 * math.pi**2 * 10.0), rel=1e-9)
    assert rep.value == pytest.approx(1.0, abs=1e-6)


def test_normalize_powerlaw_closed_form():
    # A(t) = A0 (1+t)^(-1/2): int_0^T 2 pi^2 A(t)^2 dt = 2 pi^2 A0^2 log(1+T)
    base = make_alternating_sine_flow(1, 1.0, 1.0, schedule="powerlaw", schedule_s=2.0)
    proto, rep = normalize_to_budget(base, 2, 2, 10.0)
    assert proto.amplitude == pytest.approx(1 / math.sqrt(2 * math.pi**2 * math.log(11.0)), rel=1e-9)
    assert rep.value == pytest.approx(1.0, abs=1e-6)


def test_lp_shear_constant_against_quadrature():
    from scipy import integrate
    for p in (1.0, 3.0, 4.5):
        val, _ = integrate.quad(lambda y: abs(2 * math.pi * math.cos(2 * math.pi * y)) ** p, 0, 1,
                                epsabs=0, epsrel=1e-12, limit=200)
        assert make_steady_shear(1.0).unit_grad_norm(p) == pytest.approx(val ** (1 / p), rel=1e-8)


def test_zero_flow_cannot_be_normalized():
    with pytest.raises(DomainError):
        normalize_to_budget(make_steady_shear(0.0), 2, 2, 1.0)


def test_gradient_integral_constant_schedule():
    proto, _ = normalize_to_budget(make_alternating_sine_flow(0, 1.0, 1.0), math.inf, math.inf, 3.0)
    np.testing.assert_allclose(gradient_integral(proto, math.inf, [0.0, 1.5, 3.0]), [0.0, 1.5, 3.0])


def test_budget_report_fields():
    rep = gradient_budget(make_cellular_flow(1.0), 2, 2, 4.0)
    assert rep.per_time_series.shape == rep.times.shape
    assert rep.value > 0
    assert set(rep.as_dict()) == {"p", "s", "horizon", "value"}


def test_invalid_parameters():
    with pytest.raises(ConfigurationError):
        make_alternating_sine_flow(0, 0.0, 1.0)
    with pytest.raises(ConfigurationError):
        VelocityProtocol(kind="vortex")


def test_config_round_trip():
    proto, _ = normalize_to_budget(make_alternating_sine_flow(2**63 + 5, 0.25, 3.0), 2, 2, 7.0)
    back = VelocityProtocol.from_config(proto.to_config())
    assert back == proto
    assert back.normalization == proto.normalization
    custom = make_streamfunction_flow([(1, 1, 0.5, 0.25)], 2.0)
    assert VelocityProtocol.from_config(custom.to_config()) == custom


def test_flow_map_steady_shear_exact(rng):
    A = 0.8
    x0 = rng.random((20, 2))
    fm = flow_map(make_steady_shear(A), x0, 1.0, 1e-3)
    expect = np.column_stack([x0[:, 0] + A * np.sin(2 * np.pi * x0[:, 1]), x0[:, 1]])
    np.testing.assert_allclose(fm.unwrapped, expect, atol=1e-8)
    np.testing.assert_allclose(fm.positions, expect % 1.0, atol=1e-8)
    assert ((fm.positions >= 0) & (fm.positions < 1)).all()


def test_flow_map_zero_flow(rng):
    x0 = rng.random((5, 2))
    fm = flow_map(make_steady_shear(0.0), x0, 2.0, 0.1)
    np.testing.assert_array_equal(fm.unwrapped, x0)
    assert (fm.windings == 0).all()


def test_flow_map_convergence_order(rng):
    proto = make_streamfunction_flow([(1, 2, 0.5, 0.3), (2, -1, 0.4, 1.0)])
    x0 = rng.random((30, 2))
    ref = flow_map(proto, x0, 1.0, 1e-4).unwrapped
    errs = [np.abs(flow_map(proto, x0, 1.0, h).unwrapped - ref).max() for h in (0.04, 0.02)]
    assert math.log2(errs[0] / errs[1]) >= 3.5


def test_flow_map_crosses_switches_exactly():
    # a step that lands on a switch must not evaluate the next leg
    proto = make_alternating_sine_flow(0, 0.5, 1.0, random_phases=False)
    x0 = np.array([[0.0, 0.25]])
    fm = flow_map(proto, x0, 0.5, 0.5)
    np.testing.assert_allclose(fm.unwrapped, [[0.5, 0.25]], atol=1e-14)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 2.0))
def test_trajectory_separation_bounds(seed, t):
    rng = np.random.default_rng(seed)
    proto, _ = normalize_to_budget(make_alternating_sine_flow(seed, 0.5, 1.0), math.inf, math.inf, 2.0)
    a, b = rng.random((2, 2))
    fm = flow_map(proto, np.stack([a, b]), t, 1e-2)
    ratio = np.linalg.norm(fm.unwrapped[0] - fm.unwrapped[1]) / np.linalg.norm(a - b)
    growth = math.exp(float(gradient_integral(proto, math.inf, t)[0]))
    assert 1 / growth / (1 + 1e-3) <= ratio <= growth * (1 + 1e-3)
