import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scalarmix.spectral import ScalarField

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sine_field():
    def make(n, kx=1, ky=0):
        return ScalarField.from_function(lambda x, y: np.sin(2 * np.pi * (kx * x + ky * y)), n)
    return make


def random_mean_zero(rng, n, smooth=None):
    v = rng.standard_normal((n, n))
    if smooth is not None:
        k = np.fft.fftfreq(n, 1.0 / n)
        filt = np.exp(-(k[:, None] ** 2 + k[None, :] ** 2) / smooth**2)
        v = np.fft.ifft2(np.fft.fft2(v) * filt).real
    return ScalarField(v - v.mean())



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
