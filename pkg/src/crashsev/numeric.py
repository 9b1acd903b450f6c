"""Deterministic statistical kernels: Halton draws, normal CDF/quantile, chi-square quantile."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import ArgumentError

__all__ = [
    "PRIMES", "DrawMatrix", "halton_element", "halton_sequence", "make_draws",
    "std_normal_cdf", "std_normal_quantile", "chi_square_quantile",
    "two_tailed_p", "DEFAULT_DISCARD",
]

DEFAULT_DISCARD = 10


def _first_primes(count):
    primes = []
    k = 2
    while len(primes) < count:
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)
        k += 1
    return tuple(primes)


PRIMES = _first_primes(100)


def _is_prime(n):
    if n < 2:
        return False
    return all(n % d for d in range(2, math.isqrt(n) + 1))


def halton_sequence(start, count, base):
    """Radical inverses of ``start, start + 1, ..., start + count - 1`` in ``base``."""
    if start < 1:
        raise ArgumentError(f"Halton index must be >= 1, got {start}")
    if not _is_prime(int(base)):
        raise ArgumentError(f"Halton base must be prime, got {base}")
    idx = np.arange(start, start + count, dtype=np.int64)
    out = np.zeros(count)
    scale = 1.0 / base
    while idx.any():
        out += scale * (idx % base)
        idx //= base
        scale /= base
    return out


def halton_element(index, base):
    """Radical inverse of ``index`` in prime ``base``; e.g. ``(5, 3) -> 7/9``."""
    if int(index) != index or index < 1:
        raise ArgumentError(f"Halton index must be a positive integer, got {index}")
    return float(halton_sequence(int(index), 1, base)[0])


@dataclass(frozen=True, eq=False)
class DrawMatrix:
    """Standard-normal simulation draws of shape ``(n_obs, n_draws, n_random)``.

    Dimension ``d`` is built from the ``d``-th prime. Observation ``n`` uses
    the contiguous Halton block starting at index ``discard + n * n_draws + 1``.
    """

    values: np.ndarray
    primes: tuple
    discard: int

    @property
    def n_obs(self):
        return self.values.shape[0]

    @property
    def n_draws(self):
        return self.values.shape[1]

    @property
    def n_random(self):
        return self.values.shape[2]

    def rows(self, index) -> "DrawMatrix":
        """Draw blocks for a subset of observations (keeps provenance)."""
        return DrawMatrix(self.values[index], self.primes, self.discard)


def make_draws(n_obs, n_draws, n_random, discard=DEFAULT_DISCARD) -> DrawMatrix:
    if min(n_obs, n_draws, n_random) < 1:
        raise ArgumentError("n_obs, n_draws and n_random must all be >= 1")
    if discard < 0:
        raise ArgumentError("discard must be >= 0")
    if n_random > len(PRIMES):
        raise ArgumentError(
            f"n_random={n_random} exceeds the {len(PRIMES)}-entry prime table")
    total = n_obs * n_draws
    values = np.empty((n_obs, n_draws, n_random))
    for d in range(n_random):
        u = halton_sequence(discard + 1, total, PRIMES[d])
        values[:, :, d] = std_normal_quantile(u).reshape(n_obs, n_draws)
    values.setflags(write=False)
    return DrawMatrix(values, PRIMES[:n_random], int(discard))


_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)


def std_normal_cdf(z):
    """Standard normal CDF via the complementary error function."""
    z = np.asarray(z, dtype=float)
    out = 0.5 * special.erfc(-z / _SQRT2)
    return float(out) if out.ndim == 0 else out


# Acklam's rational approximation to the normal quantile (rel. error ~1e-9)
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _poly(coefs, x):
    acc = np.zeros_like(x)
    for c in coefs:
        acc = acc * x + c
    return acc


def std_normal_quantile(p):
    """Inverse standard normal CDF for ``p`` in (0, 1).

    Acklam's approximation followed by one Halley correction step.
    """
    p = np.asarray(p, dtype=float)
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ArgumentError("normal quantile requires 0 < p < 1")
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = p[mid] - 0.5
    r = q * q
    x[mid] = _poly(_A, r) * q / (_poly(_B, r) * r + 1.0)
    q = np.sqrt(-2.0 * np.log(p[lo]))
    x[lo] = _poly(_C, q) / (_poly(_D, q) * q + 1.0)
    q = np.sqrt(-2.0 * np.log1p(-p[hi]))
    x[hi] = -_poly(_C, q) / (_poly(_D, q) * q + 1.0)

    # Halley step; the upper tail works with survival probabilities
    e = np.where(hi, (1.0 - p) - 0.5 * special.erfc(x / _SQRT2),
                 0.5 * special.erfc(-x / _SQRT2) - p)
    u = e * _SQRT2PI * np.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    return float(x) if x.ndim == 0 else x


def chi_square_quantile(df, confidence):
    """Critical value ``x`` with ``P(chi2_df <= x) = confidence``."""
    if int(df) != df or df < 1:
        raise ArgumentError(f"degrees of freedom must be a positive integer, got {df}")
    if not 0.0 < confidence < 1.0:
        raise ArgumentError(f"confidence must lie in (0, 1), got {confidence}")
    return float(stats.chi2.ppf(confidence, int(df)))


def two_tailed_p(t):
    """Two-tailed standard-normal p-value of a z/t statistic."""
    t = np.abs(np.asarray(t, dtype=float))
    out = special.erfc(t / _SQRT2)
    return float(out) if out.ndim == 0 else out
