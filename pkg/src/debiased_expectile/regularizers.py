"""Separable amenable penalties: Lasso and SCAD.

Every function broadcasts over ``t`` and over ``lam``, so a coefficient
matrix can carry a different tuning parameter per column (or per entry,
as weighted-l1 stages do).
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["Regularizer", "lasso", "scad", "soft_threshold"]

KINDS = ("lasso", "scad")


def soft_threshold(z, thresh):
    return np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0)


def _scad_value(t, lam, a):
    u = np.abs(t)
    lam = np.asarray(lam, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mid = (2 * a * lam * u - u * u - lam * lam) / (2 * (a - 1))
    return np.where(u <= lam, lam * u, np.where(u <= a * lam, mid, (a + 1) * lam * lam / 2))


def _scad_derivative(t, lam, a):
    u = np.abs(t)
    s = np.sign(t)
    d = np.where(u <= lam, lam, np.where(u <= a * lam, (a * lam - u) / (a - 1), 0.0))
    return s * d


@dataclass(frozen=True)
class Regularizer:
    """Penalty ``P(beta) = sum_j p_lam(beta_j)``.

    ``kind`` is ``"lasso"`` or ``"scad"``; ``a`` is the SCAD shape constant
    (ignored for the Lasso).  ``lam`` may be an array for column- or
    entry-specific tuning.
    """

    kind: str
    lam: object
    a: float = 3.7

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty {self.kind!r}; expected one of {KINDS}")
        lam = np.asarray(self.lam, dtype=float)
        if np.any(~np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("lambda must be finite and nonnegative")
        if self.kind == "scad" and not self.a > 2:
            raise ValueError("SCAD requires a > 2")
        object.__setattr__(self, "lam", float(lam) if lam.ndim == 0 else lam)

    @property
    def mu(self) -> float:
        """Weak-convexity constant: ``p + mu t^2 / 2`` is convex."""
        return 0.0 if self.kind == "lasso" else 1.0 / (self.a - 1.0)

    @property
    def gamma(self):
        """Oracle constant (``p' = 0`` beyond ``gamma * lam``); ``None`` for the Lasso."""
        return None if self.kind == "lasso" else self.a

    def with_lam(self, lam):
        return Regularizer(self.kind, lam, self.a)

    def elementwise(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "lasso":
            return self.lam * np.abs(t)
        return _scad_value(t, self.lam, self.a)

    def value(self, beta):
        """Total penalty (summed over axis 0, so columns of a matrix are separate problems)."""
        return np.sum(self.elementwise(beta), axis=0)

    def derivative(self, t):
        """``p'(|t|) sign(t)``, with the value 0 at ``t = 0``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "lasso":
            return self.lam * np.sign(t)
        return _scad_derivative(t, self.lam, self.a)

    def derivative_abs(self, t):
        """Right derivative of ``p`` at ``|t|``; equals ``lam`` at zero (LLA weights)."""
        u = np.abs(np.asarray(t, dtype=float))
        if self.kind == "lasso":
            return self.lam * np.ones_like(u)
        lam = self.lam
        return np.where(u <= lam, lam, np.where(u <= self.a * lam, (self.a * lam - u) / (self.a - 1), 0.0))

    def concave_part_grad(self, t):
        """Gradient of ``q(t) = lam |t| - p(t)``, which is differentiable everywhere."""
        t = np.asarray(t, dtype=float)
        if self.kind == "lasso":
            return np.zeros_like(t)
        return self.lam * np.sign(t) - _scad_derivative(t, self.lam, self.a)

    def concave_part(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "lasso":
            return np.zeros(t.shape[1:]) if t.ndim > 1 else 0.0
        return np.sum(self.lam * np.abs(t) - _scad_value(t, self.lam, self.a), axis=0)

    def prox(self, z, step):
        """``argmin_t (t - z)^2 / (2 step) + p(t)``, elementwise.

        For SCAD the minimiser of each of the three pieces is computed,
        clipped to its piece, and the best is kept (ties go to the smaller
        magnitude).  Requires ``step * mu < 1``.
        """
        if np.any(np.asarray(step) <= 0):
            raise ValueError("step must be positive")
        z = np.asarray(z, dtype=float)
        if self.kind == "lasso":
            return soft_threshold(z, step * self.lam)
        if np.any(np.asarray(step) * self.mu >= 1):
            raise ValueError("SCAD prox needs step * mu < 1 for a strongly convex subproblem")
        a, lam = self.a, np.asarray(self.lam, dtype=float)
        u = np.abs(z)
        s = np.where(z < 0, -1.0, 1.0)
        c1 = np.clip(u - step * lam, 0.0, lam)
        c2 = np.clip(((a - 1) * u - a * lam * step) / (a - 1 - step), lam, a * lam)
        c3 = np.maximum(u, a * lam)
        cands = np.stack(np.broadcast_arrays(c1, c2, c3))
        obj = (cands - u) ** 2 / (2 * step) + _scad_value(cands, lam, a)
        # stable ordering: candidates sorted by magnitude so argmin breaks ties low
        order = np.argsort(cands, axis=0, kind="stable")
        cs = np.take_along_axis(cands, order, axis=0)
        os_ = np.take_along_axis(obj, order, axis=0)
        best = np.argmin(os_, axis=0)
        t = np.take_along_axis(cs, best[None], axis=0)[0]
        return s * t


def lasso(lam) -> Regularizer:
    return Regularizer("lasso", lam)


def scad(lam, a=3.7) -> Regularizer:
    return Regularizer("scad", lam, a)
