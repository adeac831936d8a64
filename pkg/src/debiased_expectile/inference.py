"""De-biased coefficients, their sandwich covariance, and Wald tests."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .distributions import chi2_quantile, chi2_sf, normal_cdf, normal_quantile
from .expectile import Dataset
from .nodewise import PrecisionEstimate, weighted_gram
from .solver import ExpectileFit

__all__ = [
    "DebiasResult",
    "WaldTest",
    "RankDeficientError",
    "SingularCovarianceError",
    "debias",
    "wald_test",
    "confidence_intervals",
    "coefficient_table",
    "delta_diagnostics",
    "DEFAULT_ALPHAS",
]

DEFAULT_ALPHAS = (0.01, 0.05, 0.10)
DEGENERATE_VARIANCE = 1e-14
RANK_TOL = 1e-10
MAX_CONDITION = 1e12


class RankDeficientError(ValueError):
    pass


class SingularCovarianceError(ArithmeticError):
    pass


@dataclass
class DebiasResult:
    """De-biased estimate ``beta_de`` with covariance ``omega`` of ``sqrt(n) (beta_de - beta)``."""

    beta_de: np.ndarray
    omega: np.ndarray
    se: np.ndarray
    n: int
    beta_hat: np.ndarray = None
    fit: ExpectileFit = None
    precision: PrecisionEstimate = None
    names: list = None

    @property
    def degenerate(self):
        return np.diag(self.omega) <= DEGENERATE_VARIANCE

    def transformed(self, a, names=None):
        """The estimate of ``A beta`` (for instance a back-transformation to raw units)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if a.shape[1] != self.beta_de.shape[0]:
            raise ValueError("transformation has the wrong number of columns")
        omega = a @ self.omega @ a.T
        bh = None if self.beta_hat is None else a @ self.beta_hat
        return DebiasResult(a @ self.beta_de, omega, np.sqrt(np.maximum(np.diag(omega), 0.0) / self.n),
                            self.n, bh, self.fit, self.precision, names)


@dataclass
class WaldTest:
    r_matrix: np.ndarray
    c_vector: np.ndarray
    statistic: float
    df: int
    p_value: float
    reject_at: dict = field(default_factory=dict)
    degenerate: bool = False

    def reject(self, alpha):
        if self.degenerate:
            return False
        return bool(self.statistic > chi2_quantile(1.0 - alpha, self.df))


def debias(data: Dataset, fit: ExpectileFit, pe: PrecisionEstimate) -> DebiasResult:
    """One-step correction ``beta_hat + Theta X' W^2 e / n`` and its sandwich covariance.

    With ``e = y - X beta_hat`` and squared weights at ``beta_hat``, the
    middle of the sandwich is ``sum_i x_i x_i' w_i^4 e_i^2 / n``.
    """
    beta = np.asarray(fit.beta_hat, dtype=float)
    if beta.shape != (data.p,) or pe.theta.shape != (data.p, data.p):
        raise ValueError("fit, precision estimate and data disagree on the dimension")
    e = data.residuals(beta)
    w2 = np.where(e < 0, 1.0 - fit.tau, fit.tau)
    score = data.x.T @ (w2 * e) / data.n
    beta_de = beta + pe.theta @ score
    meat = (data.x.T * (w2 * e) ** 2) @ data.x / data.n
    omega = pe.theta @ meat @ pe.theta.T
    if not (np.all(np.isfinite(beta_de)) and np.all(np.isfinite(omega))):
        raise FloatingPointError("non-finite value in the de-biased estimate")
    se = np.sqrt(np.maximum(np.diag(omega), 0.0) / data.n)
    return DebiasResult(beta_de, omega, se, data.n, beta, fit, pe)


def _check_rank(r):
    _, rr, _ = linalg.qr(r.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(rr))
    if d.size == 0 or d[0] == 0 or np.any(d < RANK_TOL * d[0]):
        raise RankDeficientError("hypothesis matrix does not have full row rank")


def wald_test(dr: DebiasResult, r_matrix, c_vector=None, alphas=DEFAULT_ALPHAS, on_degenerate="raise") -> WaldTest:
    """Chi-square Wald test of ``R beta = c``.

    The statistic is ``n d' (R Omega R')^{-1} d`` with ``d = R beta_de - c``.
    ``on_degenerate="flag"`` returns a non-rejecting test marked degenerate
    when ``R Omega R'`` is zero or numerically singular, instead of raising.
    """
    p = dr.beta_de.shape[0]
    r = np.atleast_2d(np.asarray(r_matrix, dtype=float))
    if r.shape[1] != p:
        raise ValueError(f"hypothesis matrix has {r.shape[1]} columns, expected {p}")
    p0 = r.shape[0]
    if p0 > p:
        raise RankDeficientError("more restrictions than coefficients")
    c = np.zeros(p0) if c_vector is None else np.asarray(c_vector, dtype=float).reshape(-1)
    if c.shape != (p0,):
        raise ValueError("right-hand side has the wrong length")
    _check_rank(r)
    d = r @ dr.beta_de - c
    m = r @ dr.omega @ r.T
    m = 0.5 * (m + m.T)
    problem = None
    if np.max(np.diag(m)) <= DEGENERATE_VARIANCE:
        problem = "restricted covariance is zero"
    elif np.linalg.cond(m) > MAX_CONDITION:
        problem = "restricted covariance is numerically singular"
    else:
        try:
            cf = linalg.cho_factor(m, lower=True)
        except linalg.LinAlgError:
            problem = "restricted covariance is not positive definite"
    if problem is not None:
        if on_degenerate == "flag":
            return WaldTest(r, c, math.nan, p0, math.nan, {a: False for a in alphas}, degenerate=True)
        raise SingularCovarianceError(problem)
    stat = float(dr.n * d @ linalg.cho_solve(cf, d))
    stat = max(stat, 0.0)
    pval = float(chi2_sf(stat, p0))
    out = WaldTest(r, c, stat, p0, pval)
    out.reject_at = {a: out.reject(a) for a in alphas}
    return out


def confidence_intervals(dr: DebiasResult, alpha=0.05):
    """Marginal normal intervals; returns ``(lower, upper, degenerate)``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = float(normal_quantile(1.0 - alpha / 2.0))
    half = z * dr.se
    return dr.beta_de - half, dr.beta_de + half, dr.degenerate


def coefficient_table(dr: DebiasResult):
    """Per-coefficient z-statistics and two-sided p-values (NaN where degenerate)."""
    deg = dr.degenerate
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(deg, np.nan, dr.beta_de / np.where(deg, 1.0, dr.se))
    pval = np.where(deg, np.nan, 2.0 * normal_cdf(-np.abs(z)))
    return z, pval


def delta_diagnostics(data: Dataset, fit: ExpectileFit, pe: PrecisionEstimate, beta_ref=None):
    """``sqrt(n)``-scaled sup-norms of the two remainder terms of the de-biased estimator.

    ``beta_ref`` must be the true coefficient vector, so this is for
    simulations only.  The first term measures the cost of estimating the
    weights, the second the imperfect inversion of the weighted Gram matrix.
    """
    if beta_ref is None:
        raise ValueError("delta diagnostics need the true coefficients (simulation use only)")
    beta_ref = np.asarray(beta_ref, dtype=float)
    beta = np.asarray(fit.beta_hat, dtype=float)
    eps = data.residuals(beta_ref)
    w2_true = np.where(eps < 0, 1.0 - fit.tau, fit.tau)
    w2_hat = np.where(data.residuals(beta) < 0, 1.0 - fit.tau, fit.tau)
    d1 = pe.theta @ (data.x.T @ ((w2_true - w2_hat) * eps)) / data.n
    s, _ = weighted_gram(data, beta, fit.tau)
    d2 = (pe.theta @ s - np.eye(data.p)) @ (beta - beta_ref)
    rn = math.sqrt(data.n)
    return rn * float(np.max(np.abs(d1))), rn * float(np.max(np.abs(d2)))
