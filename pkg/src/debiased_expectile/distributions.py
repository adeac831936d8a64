"""Scalar probability kernels and a reproducible random stream.

The generator is a counter-based SplitMix64 construction: the ``c``-th
output of stream ``(seed, stream_id)`` is ``mix64(key + c * GOLDEN)`` where
``key`` is a hash of the pair.  Every draw is a pure function of
``(seed, stream_id, c)``, so replicate ``i`` of a study produces the same
numbers no matter which worker runs it or in what order.
"""

import math

import numpy as np
from scipy import special

__all__ = [
    "RngStream",
    "normal_pdf",
    "normal_cdf",
    "normal_quantile",
    "chi2_cdf",
    "chi2_sf",
    "chi2_tail",
    "chi2_quantile",
]

_MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
# odd constant used to separate streams before hashing
_STREAM_SALT = 0xD1B54A32D192ED03


def _mix64_int(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64(z):
    """Vectorised SplitMix64 finaliser on a uint64 array (wrapping)."""
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """Reproducible stream of 64-bit draws keyed by ``(seed, stream_id)``.

    Not safe to share between threads; build one stream per task.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        h = _mix64_int(self.seed ^ _mix64_int((self.stream_id * _STREAM_SALT + GOLDEN) & _MASK64))
        self._key = np.uint64(h)
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def _raw_at(self, start, size):
        idx = np.arange(start, start + size, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix64(self._key + (idx + np.uint64(1)) * np.uint64(GOLDEN))

    def uint64(self, size):
        out = self._raw_at(self.counter, size)
        self.counter += int(size)
        return out

    def uniform(self, size):
        """Uniform draws on the open interval (0, 1) with 53-bit resolution."""
        bits = self.uint64(size) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * 2.0**-53

    def standard_normal(self, size):
        """Standard normal draws by the polar Box-Muller method.

        Both members of each accepted pair are used; when ``size`` is odd
        the last partner is dropped.  The counter always ends just past the
        last pair inspected, so the consumption pattern depends only on the
        sequence of requested sizes.
        """
        size = int(size)
        out = np.empty(size)
        filled = 0
        while filled < size:
            need = (size - filled + 1) // 2
            batch = int(need / 0.78) + 8
            start = self.counter
            u = (self._raw_at(start, 2 * batch) >> np.uint64(11)).astype(np.float64)
            u = (u + 0.5) * 2.0**-52 - 1.0
            v1, v2 = u[0::2], u[1::2]
            s = v1 * v1 + v2 * v2
            ok = np.flatnonzero((s < 1.0) & (s > 0.0))
            take = ok[:need]
            if len(take):
                last = take[-1] + 1 if len(take) == need else batch
            else:
                last = batch
            self.counter = start + 2 * int(last)
            f = np.sqrt(-2.0 * np.log(s[take]) / s[take])
            pairs = np.column_stack((v1[take] * f, v2[take] * f)).ravel()
            k = min(len(pairs), size - filled)
            out[filled:filled + k] = pairs[:k]
            filled += k
        return out

    def student_t4(self, size):
        """Student-t draws with 4 degrees of freedom, ``Z / sqrt(V / 4)``."""
        z = self.standard_normal(5 * int(size)).reshape(int(size), 5)
        v = np.sum(z[:, 1:] ** 2, axis=1)
        return z[:, 0] / np.sqrt(v / 4.0)

    def multivariate_normal(self, chol, size):
        """Rows ``L z`` for i.i.d. standard normal ``z``; ``chol`` lower-triangular."""
        chol = np.asarray(chol, dtype=float)
        if chol.ndim != 2 or chol.shape[0] != chol.shape[1]:
            raise ValueError("Cholesky factor must be square")
        d = np.diag(chol)
        if np.any(~np.isfinite(chol)) or np.any(d <= 0) or np.any(np.triu(chol, 1) != 0):
            raise ValueError("expected a lower-triangular factor with positive diagonal")
        z = self.standard_normal(int(size) * chol.shape[0]).reshape(int(size), chol.shape[0])
        return z @ chol.T

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def normal_pdf(x):
    return np.exp(-0.5 * np.square(x)) / math.sqrt(2 * math.pi)


def normal_cdf(x):
    """Standard normal cdf (scalar or array)."""
    return special.ndtr(x)


def normal_quantile(p):
    return special.ndtri(p)


def chi2_cdf(x, df):
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return special.gammainc(df / 2.0, x / 2.0)


def chi2_sf(x, df):
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return special.gammaincc(df / 2.0, x / 2.0)


def chi2_tail(x, df):
    """Return ``(cdf, survival)`` of the chi-square law with ``df`` degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    return float(chi2_cdf(x, df)), float(chi2_sf(x, df))


def chi2_quantile(p, df, tol=1e-12):
    """Inverse chi-square cdf by safeguarded Newton iteration.

    Starts from the Wilson-Hilferty approximation and falls back to
    bisection whenever a Newton step leaves the current bracket.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if df <= 0:
        raise ValueError("df must be positive")
    k = float(df)
    z = float(normal_quantile(p))
    h = 2.0 / (9.0 * k)
    x = max(k * (1.0 - h + z * math.sqrt(h)) ** 3, 1e-8)
    lo, hi = 0.0, max(2.0 * x, k + 10.0 * math.sqrt(2 * k) + 50.0)
    while float(chi2_cdf(hi, k)) < p:
        hi *= 2.0
    logc = -(k / 2) * math.log(2.0) - math.lgamma(k / 2)
    for _ in range(200):
        f = float(chi2_cdf(x, k)) - p
        if f > 0:
            hi = x
        else:
            lo = x
        dens = math.exp(logc + (k / 2 - 1) * math.log(x) - x / 2) if x > 0 else 0.0
        step = f / dens if dens > 0 else math.inf
        nx = x - step
        if not lo < nx < hi:
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= tol * abs(x):
            x = nx
            break
        x = nx
    return x
