"""Expectile loss, its weighted-least-squares form, and scalar expectiles."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

__all__ = [
    "Dataset",
    "check_tau",
    "expectile_loss_scalar",
    "squared_weights",
    "loss_and_gradient",
    "scalar_expectile",
    "partial_moment",
]


def check_tau(tau) -> float:
    tau = float(tau)
    if not (0.0 < tau < 1.0) or not math.isfinite(tau):
        raise ValueError(f"expectile level must lie strictly inside (0, 1), got {tau}")
    return tau


@dataclass(frozen=True)
class Dataset:
    """An observed sample: design ``x`` (n, p) and response ``y`` (n,)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("design matrix needs at least one row and one column")
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"design has {x.shape[0]} rows but response has length {y.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("data contain non-finite entries")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def residuals(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.shape[0] != self.p:
            raise ValueError(f"coefficient vector has length {beta.shape[0]}, expected {self.p}")
        return self.y - self.x @ beta


def expectile_loss_scalar(u, tau):
    """Asymmetric squared loss ``|tau - 1(u < 0)| u**2`` (vectorised)."""
    tau = check_tau(tau)
    u = np.asarray(u, dtype=float)
    return np.where(u < 0, 1.0 - tau, tau) * u * u


def _weights_from_residuals(r, tau):
    # a zero residual is not negative, so it takes weight tau
    return np.where(r < 0, 1.0 - tau, tau)


def squared_weights(data: Dataset, beta, tau):
    """Squared expectile weights at ``beta``: ``tau`` for nonnegative residuals, else ``1 - tau``."""
    tau = check_tau(tau)
    return _weights_from_residuals(data.residuals(beta), tau)


def loss_and_gradient(data: Dataset, beta, tau):
    """Value and gradient of ``L_n(beta) = (1/2n) sum rho_tau(y_i - x_i' beta)``.

    The gradient is ``-X' W^2 (y - X beta) / n``.  The loss is continuously
    differentiable, so no special handling is needed at zero residuals.
    """
    tau = check_tau(tau)
    r = data.residuals(beta)
    w2 = _weights_from_residuals(r, tau)
    wr = w2 * r
    loss = 0.5 * float(np.dot(wr, r)) / data.n
    grad = -(data.x.T @ wr) / data.n
    return loss, grad


def partial_moment(m, dist):
    """Upper and lower partial moments ``(E[(Y - m)+], E[(m - Y)+])``.

    Closed forms for the standard normal and the Student t with 4 degrees
    of freedom; for t_nu, ``int_m^inf y f(y) dy = (nu + m^2) f(m) / (nu - 1)``.
    """
    if dist in ("normal", "std_normal"):
        upper = stats.norm.pdf(m) - m * stats.norm.sf(m)
    elif dist in ("t4", "student_t4"):
        nu = 4.0
        upper = (nu + m * m) / (nu - 1.0) * stats.t.pdf(m, nu) - m * stats.t.sf(m, nu)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    # E[Y] = 0 for both laws, so E[(m - Y)+] = E[(Y - m)+] + m
    return float(upper), float(upper + m)


def scalar_expectile(sample_or_dist, tau, tol=1e-10):
    """The tau-expectile of a sample or of a named distribution.

    Solves ``tau E[(Y - m)+] = (1 - tau) E[(m - Y)+]`` for ``m`` by bracketing
    root-finding; the left-hand side minus the right is strictly decreasing
    in ``m``.

    Parameters
    ----------
    sample_or_dist : array_like or {"normal", "t4"}
        Observations (the empirical law is used) or a distribution name.
    tau : float
        Expectile level in (0, 1).
    """
    tau = check_tau(tau)
    if isinstance(sample_or_dist, str):
        dist = sample_or_dist

        def score(m):
            up, down = partial_moment(m, dist)
            return tau * up - (1.0 - tau) * down

        lo, hi = -1.0, 1.0
        while score(lo) < 0:
            lo *= 2.0
        while score(hi) > 0:
            hi *= 2.0
        return optimize.brentq(score, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)

    y = np.asarray(sample_or_dist, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("cannot compute the expectile of an empty sample")
    if not np.all(np.isfinite(y)):
        raise ValueError("sample contains non-finite values")
    if tau == 0.5:
        return float(np.mean(y))
    lo, hi = float(y.min()), float(y.max())
    if lo == hi:
        return lo

    def score(m):
        d = y - m
        return tau * np.sum(np.maximum(d, 0.0)) - (1.0 - tau) * np.sum(np.maximum(-d, 0.0))

    return optimize.brentq(score, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
