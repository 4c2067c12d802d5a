"""Periodic-grid scalar fields on the unit torus and their norms.

Fields live on the uniform ``n x n`` grid of ``[0, 1)^2`` with
``values[i, j] = theta(i / n, j / n)``, i.e. axis 0 is ``x`` and axis 1 is
``y``.  Fourier coefficients are normalised so that

    theta(x) = sum_k theta_hat[k] * exp(2 pi i k . x),

which makes ``theta_hat[0]`` the mean and turns Parseval into
``||theta||_{L^2}^2 = sum_k |theta_hat[k]|^2``.

All norms are lattice surrogates of the continuum norms: integrals are grid
means (exact for band-limited integrands), the L^inf norm is the grid maximum
and therefore a lower bound on the continuum value.
"""

from __future__ import annotations

import csv
import os
import struct
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, DomainError

__all__ = [
    "ScalarField",
    "to_spectral",
    "from_spectral",
    "sobolev_norm",
    "lebesgue_norm",
    "gradient",
    "gradient_norm",
    "project_mean_zero",
    "grid",
    "wavenumbers",
    "write_snapshot",
    "read_snapshot",
    "export_csv",
    "set_threads",
    "get_threads",
]

MEAN_ZERO_TOL = 1e-12
SNAPSHOT_MAGIC = b"SMIX"
SNAPSHOT_VERSION = 1

_workers = 1


def set_threads(n: int) -> None:
    """Set the number of threads used by the FFTs (``scipy.fft`` workers)."""
    global _workers
    if n < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {n}")
    _workers = int(n)


def get_threads() -> int:
    return _workers


def _threads_from_env() -> None:
    env = os.environ.get("SMIX_THREADS")
    if env:
        try:
            set_threads(int(env))
        except ValueError:
            pass


_threads_from_env()


def check_resolution(n: int) -> int:
    n = int(n)
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"grid resolution must be a power of two >= 2, got {n}")
    return n


def fft2(a: np.ndarray) -> np.ndarray:
    return sfft.fft2(a, workers=_workers)


def ifft2(a: np.ndarray) -> np.ndarray:
    return sfft.ifft2(a, workers=_workers)


def rfft2(a: np.ndarray) -> np.ndarray:
    return sfft.rfft2(a, workers=_workers)


def irfft2(a: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfft2(a, s=(n, n), workers=_workers)


@lru_cache(maxsize=None)
def grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return the ``(x, y)`` coordinate arrays of the ``n x n`` grid (``ij`` indexing)."""
    c = np.arange(n) / n
    x, y = np.meshgrid(c, c, indexing="ij")
    x.setflags(write=False)
    y.setflags(write=False)
    return x, y


@lru_cache(maxsize=None)
def wavenumbers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer wavevector components for the full ``fft2`` layout."""
    k = np.fft.fftfreq(n, 1.0 / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    kx.setflags(write=False)
    ky.setflags(write=False)
    return kx, ky


@lru_cache(maxsize=None)
def rfft_wavenumbers(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer wavevectors for the ``rfft2`` half-spectrum, shapes ``(n, 1)`` and ``(1, n//2+1)``."""
    kx = np.fft.fftfreq(n, 1.0 / n)[:, None]
    ky = np.arange(n // 2 + 1, dtype=float)[None, :]
    return kx, ky


@lru_cache(maxsize=None)
def rfft_weights(n: int) -> np.ndarray:
    """Multiplicity of each half-spectrum column in the full spectrum."""
    w = np.full((1, n // 2 + 1), 2.0)
    w[0, 0] = 1.0
    w[0, -1] = 1.0
    return w


@lru_cache(maxsize=None)
def nyquist_mask(n: int) -> np.ndarray:
    """1 everywhere except the Nyquist row/column of the rfft2 layout."""
    m = np.ones((n, n // 2 + 1))
    m[n // 2, :] = 0.0
    m[:, n // 2] = 0.0
    return m


@lru_cache(maxsize=None)
def dealias_mask(n: int) -> np.ndarray:
    """Two-thirds rule mask on the rfft2 layout: keep ``|k_i| < n/3``."""
    kx, ky = rfft_wavenumbers(n)
    cut = n / 3.0
    return ((np.abs(kx) < cut) & (np.abs(ky) < cut)).astype(float)


class ScalarField:
    """Real scalar field on the periodic unit square.

    Instances are immutable snapshots: the sample array is copied and marked
    read-only, and the Fourier coefficients are computed once on demand.

    Parameters
    ----------
    values : array_like, shape (n, n)
        Grid samples; ``n`` must be a power of two.
    """

    __slots__ = ("n", "_values", "_spectral")

    def __init__(self, values):
        values = np.array(values, dtype=float, copy=True)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ConfigurationError(f"field must be a square 2-D array, got shape {values.shape}")
        self.n = check_resolution(values.shape[0])
        values.setflags(write=False)
        self._values = values
        self._spectral = None

    @classmethod
    def from_function(cls, func, n: int) -> "ScalarField":
        """Sample ``func(x, y)`` on the ``n x n`` grid."""
        x, y = grid(check_resolution(n))
        return cls(np.broadcast_to(func(x, y), (n, n)))

    @classmethod
    def zeros(cls, n: int) -> "ScalarField":
        return cls(np.zeros((check_resolution(n),) * 2))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            s = fft2(self._values) / self.n**2
            s.setflags(write=False)
            self._spectral = s
        return self._spectral

    @property
    def mean(self) -> float:
        return float(self._values.mean())

    def is_mean_zero(self, tol: float = MEAN_ZERO_TOL) -> bool:
        l2 = float(np.sqrt(np.mean(self._values**2)))
        return abs(self.mean) <= tol * max(l2, np.finfo(float).tiny)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self._values + other._values)
        return ScalarField(self._values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self._values - other._values)
        return ScalarField(self._values - other)

    def __mul__(self, c):
        return ScalarField(self._values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(-self._values)

    def __repr__(self):
        return f"ScalarField(n={self.n}, mean={self.mean:.3g})"


def to_spectral(field: ScalarField) -> np.ndarray:
    """Fourier coefficients ``theta_hat[k]`` in ``fft2`` order (read-only view)."""
    return field.spectral


def from_spectral(coeffs) -> ScalarField:
    """Inverse of :func:`to_spectral`; the imaginary residue of the inverse DFT is dropped."""
    coeffs = np.asarray(coeffs, dtype=complex)
    n = check_resolution(coeffs.shape[0])
    return ScalarField(ifft2(coeffs * n**2).real)


def sobolev_norm(field: ScalarField, sigma: float) -> float:
    """Homogeneous Sobolev norm ``(sum_{k != 0} |2 pi k|^{2 sigma} |theta_hat_k|^2)^{1/2}``.

    For ``sigma == 0`` the zero mode is included so the result is the L^2 norm
    of any field.  Negative orders are only defined for mean-zero fields.
    """
    sigma = float(sigma)
    if not np.isfinite(sigma):
        raise DomainError(f"Sobolev order must be finite, got {sigma}")
    if sigma < 0 and not field.is_mean_zero():
        raise DomainError(f"H^{sigma:g} norm undefined for a field with mean {field.mean:.3e}")
    power = np.abs(field.spectral) ** 2
    if sigma == 0:
        return float(np.sqrt(power.sum()))
    kx, ky = wavenumbers(field.n)
    k2 = (2 * np.pi) ** 2 * (kx**2 + ky**2)
    k2[0, 0] = 1.0
    weight = k2**sigma
    weight[0, 0] = 0.0
    return float(np.sqrt((weight * power).sum()))


def _lq(values: np.ndarray, q: float) -> float:
    if q == np.inf:
        return float(np.abs(values).max())
    if q == 1:
        return float(np.abs(values).mean())
    if q == 2:
        return float(np.sqrt(np.mean(values * values)))
    return float(np.mean(np.abs(values) ** q) ** (1.0 / q))


def lebesgue_norm(field: ScalarField, q: float) -> float:
    """Grid-quadrature ``L^q`` norm; ``q = inf`` gives the grid maximum of ``|theta|``."""
    q = float(q)
    if not q >= 1:
        raise DomainError(f"L^q norm requires q >= 1, got {q}")
    return _lq(field.values, q)


def _gradient_values(field: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    n = field.n
    kx, ky = rfft_wavenumbers(n)
    h = rfft2(field.values) * nyquist_mask(n)
    gx = irfft2(2j * np.pi * kx * h, n)
    gy = irfft2(2j * np.pi * ky * h, n)
    return gx, gy


def gradient(field: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Spectral gradient; Nyquist modes are dropped so both components stay real."""
    gx, gy = _gradient_values(field)
    return ScalarField(gx), ScalarField(gy)


def gradient_norm(field: ScalarField, q: float) -> float:
    """``L^q`` norm of the Euclidean length ``|grad theta|``."""
    gx, gy = _gradient_values(field)
    return _lq(np.hypot(gx, gy), float(q))


def project_mean_zero(field: ScalarField) -> ScalarField:
    return ScalarField(field.values - field.values.mean())


# -- snapshot files -----------------------------------------------------------

_HEADER = struct.Struct("<4sII")


def write_snapshot(path, field: ScalarField) -> None:
    """Write ``field`` as ``SMIX`` magic, u32 version, u32 n, then row-major float64 (little endian)."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, field.n))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_snapshot(path) -> ScalarField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ConfigurationError(f"{path}: truncated snapshot header")
        magic, version, n = _HEADER.unpack(head)
        if magic != SNAPSHOT_MAGIC:
            raise ConfigurationError(f"{path}: not a snapshot file (magic {magic!r})")
        if version != SNAPSHOT_VERSION:
            raise ConfigurationError(f"{path}: unsupported snapshot version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise ConfigurationError(f"{path}: expected {n * n} samples, found {data.size}")
    return ScalarField(data.reshape(n, n))


def export_csv(path, field: ScalarField) -> None:
    """Write ``x,y,value`` rows for plotting."""
    x, y = grid(field.n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for xi, yi, v in zip(x.ravel(), y.ravel(), field.values.ravel()):
            w.writerow([repr(float(xi)), repr(float(yi)), repr(float(v))])
