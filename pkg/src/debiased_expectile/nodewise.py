"""Node-wise regressions on the expectile-weighted design.

Every column regression only needs the weighted Gram matrix
``S = X' W^2 X / n``: regressing weighted column ``j`` on the others is

    min_g  g' S g / 2 - S[:, j]' g + Q(g),   g_j = 0,

which is ``||X_w[:, j] - X_w[:, -j] g||^2 / (2n) + Q(g)`` up to a constant.
All ``p`` columns are solved as one batched problem by the shared
proximal-gradient kernel.
"""

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .distributions import RngStream
from .expectile import Dataset
from .regularizers import Regularizer
from .solver import ExpectileFit, QuadraticLoss, SolverOptions, _solve, fold_assignment

__all__ = [
    "PrecisionEstimate",
    "DegenerateColumnError",
    "IdentityViolation",
    "weighted_gram",
    "nodewise_precision",
    "nodewise_cv",
    "relaxation_diagnostic",
]

DEGENERATE_PHI2 = 1e-12
JITTER = 1e-8


class DegenerateColumnError(RuntimeError):
    """Some weighted columns are (numerically) perfectly explained by the others."""

    def __init__(self, columns, phi2):
        self.columns = list(columns)
        self.phi2 = phi2
        super().__init__(
            f"node-wise residual variance <= {DEGENERATE_PHI2:g} for columns {self.columns}; "
            "pass allow_jitter=True to continue with a small ridge"
        )


class IdentityViolation(RuntimeError):
    pass


@dataclass
class PrecisionEstimate:
    """Output of the node-wise step.

    ``varphi[j]`` is the length ``p - 1`` coefficient vector of column ``j``
    (the other columns in their original order); ``coef`` holds the same
    numbers as a ``(p, p)`` matrix with a zero diagonal.  ``relax_bound[j]``
    is the sup-norm of the penalty (sub)gradient certificate of column ``j``
    divided by ``phi2[j]``.
    """

    theta: np.ndarray
    phi2: np.ndarray
    coef: np.ndarray
    lambdas: np.ndarray
    relax_bound: np.ndarray
    gram: np.ndarray
    kind: str
    a: float = 3.7
    degenerate: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def varphi(self):
        p = self.coef.shape[0]
        keep = ~np.eye(p, dtype=bool)
        return [self.coef[j][keep[j]] for j in range(p)]

    @property
    def p(self):
        return self.theta.shape[0]


def weighted_gram(data: Dataset, beta, tau):
    """``X' W^2 X / n`` with squared expectile weights at ``beta``."""
    r = data.residuals(beta)
    w2 = np.where(r < 0, 1.0 - tau, tau)
    return (data.x.T * w2) @ data.x / data.n, w2


# --------------------------------------------------------------------------
# tuning-path solver: coordinate descent on the Gram form, compiled


@numba.njit(cache=True)
def _coord_min(c, b, lam, scad, a):
    # argmin_t c t^2 / 2 - b t + p_lam(t); the optimum has the sign of b
    s = 1.0 if b >= 0 else -1.0
    u = abs(b)
    t1 = max(u - lam, 0.0) / c
    if not scad:
        return s * t1
    t1 = min(t1, lam)
    best_t = t1
    best_f = 0.5 * c * t1 * t1 - u * t1 + lam * t1
    cm = c - 1.0 / (a - 1.0)
    if cm > 0:
        t2 = (u - a * lam / (a - 1.0)) / cm
        t2 = min(max(t2, lam), a * lam)
        cands2 = (t2, t2)
    else:
        cands2 = (lam, a * lam)
    for t2 in cands2:
        f2 = 0.5 * c * t2 * t2 - u * t2 + (2 * a * lam * t2 - t2 * t2 - lam * lam) / (2 * (a - 1.0))
        if f2 < best_f:
            best_f = f2
            best_t = t2
    t3 = max(u / c, a * lam)
    f3 = 0.5 * c * t3 * t3 - u * t3 + (a + 1.0) * lam * lam / 2.0
    if f3 < best_f:
        best_t = t3
    return s * best_t


@numba.njit(cache=True)
def _sweep(g, grad, S, j, lam, scad, a, idx):
    big = 0.0
    for k in idx:
        if k == j:
            continue
        c = S[k, k]
        if c <= 0:
            continue
        old = g[k]
        new = _coord_min(c, c * old - grad[k], lam, scad, a)
        d = new - old
        if d != 0.0:
            g[k] = new
            for i in range(S.shape[0]):
                grad[i] += S[i, k] * d
            big = max(big, abs(d) * math.sqrt(c))
    return big


@numba.njit(cache=True)
def _cd_step_heldout(s_train, s_test, cols, coef, grads, lam, scad, a, tol, max_sweeps):
    """Advance every (fold, column) problem to ``lam``; return held-out residual variances."""
    nf, p, _ = s_train.shape
    out = np.empty((nf, cols.size))
    everything = np.arange(p)
    for f in range(nf):
        S = s_train[f]
        T = s_test[f]
        for ci in range(cols.size):
            j = cols[ci]
            g = coef[f, ci]
            grad = grads[f, ci]
            for _ in range(max_sweeps):
                if _sweep(g, grad, S, j, lam, scad, a, everything) <= tol:
                    break
                active = np.flatnonzero(g)
                for _ in range(max_sweeps):
                    if _sweep(g, grad, S, j, lam, scad, a, active) <= tol:
                        break
            tg = T @ g
            out[f, ci] = T[j, j] - 2.0 * tg[j] + g @ tg
    return out


@dataclass
class NodewiseCV:
    lambda_star: float
    grid: np.ndarray
    cv_mean: np.ndarray
    columns: np.ndarray
    heldout: np.ndarray


def nodewise_cv(x, w2, kind="lasso", a=3.7, folds=10, max_columns=50, seed=0, n_lambda=40,
                lambda_min_ratio=1e-2, stream_id=1, tol=1e-7, max_sweeps=1000, patience=5):
    """Choose one shared node-wise lambda by K-fold CV on a random subset of columns.

    Fold-specific weighted Grams are formed from the fixed Step-1 weights;
    the criterion is the held-out residual variance of each column
    regression, averaged over folds and the sampled columns.  The path
    stops early once the averaged curve has failed to improve on its
    minimum for ``patience`` consecutive grid points (``None`` runs the
    whole grid).
    """
    n, p = x.shape
    labels = fold_assignment(n, folds, seed, stream_id)
    cols = np.sort(RngStream(seed, stream_id + 1).permutation(p)[: min(p, max_columns)])
    total = (x.T * w2) @ x
    s_train = np.empty((folds, p, p))
    s_test = np.empty((folds, p, p))
    for f in range(folds):
        te = labels == f
        part = (x[te].T * w2[te]) @ x[te]
        s_test[f] = part / te.sum()
        s_train[f] = (total - part) / (n - te.sum())
    full = total / n
    off = np.abs(full[:, cols])
    off[cols, np.arange(len(cols))] = 0.0
    top = float(off.max())
    if top <= 0:
        top = 1.0
    grid = np.geomspace(top, top * lambda_min_ratio, n_lambda)
    coef = np.zeros((folds, len(cols), p))
    grads = -np.ascontiguousarray(s_train[:, :, cols].transpose(0, 2, 1))
    cols64 = cols.astype(np.int64)
    held = []
    best, rising = 0, 0
    for li, lam in enumerate(grid):
        h = _cd_step_heldout(s_train, s_test, cols64, coef, grads, lam, kind == "scad", float(a), tol, max_sweeps)
        held.append(h)
        m = h.mean()
        if m < held[best].mean():
            best, rising = li, 0
        elif patience is not None:
            rising += 1
            if rising >= patience:
                break
    held = np.stack(held, axis=-1)
    cv_mean = held.mean(axis=(0, 1))
    grid = grid[: len(cv_mean)]
    return NodewiseCV(float(grid[best]), grid, cv_mean, cols, held)


# --------------------------------------------------------------------------


def _node_opts(opts):
    return replace(opts if opts is not None else SolverOptions(), tol=1e-10, init=None, lla_stages=0, polish=True)


def nodewise_precision(
    data: Dataset,
    fit: ExpectileFit,
    reg_kind=None,
    lambdas=None,
    r_bounds=math.inf,
    opts: SolverOptions = None,
    a=None,
    allow_jitter=False,
    cv_folds=10,
    cv_columns=50,
    seed=0,
    cv_lambdas=40,
    stream_id=1,
):
    """Node-wise pseudo-inverse of the weighted Gram matrix at ``fit.beta_hat``.

    ``lambdas`` is a scalar, a length-``p`` vector, or ``None`` for a shared
    CV-chosen value.  ``r_bounds`` is one l1 radius for every column (the
    kernel handles one radius per call).
    """
    if data.p < 2:
        raise ValueError("node-wise regression needs at least two covariates")
    beta = np.asarray(fit.beta_hat, dtype=float)
    if beta.shape != (data.p,):
        raise ValueError("fit does not match the data dimension")
    kind = fit.reg.kind if reg_kind is None else reg_kind
    a = fit.reg.a if a is None else a
    p = data.p
    S, w2 = weighted_gram(data, beta, fit.tau)
    diagnostics = {}
    if lambdas is None or (isinstance(lambdas, str) and lambdas == "auto"):
        cv = nodewise_cv(data.x, w2, kind, a, cv_folds, cv_columns, seed, cv_lambdas, stream_id=stream_id)
        lam = np.full(p, cv.lambda_star)
        diagnostics["cv"] = cv
    else:
        lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (p,)).copy()
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("node-wise lambdas must be finite and nonnegative")

    node_opts = replace(_node_opts(opts), r_bound=float(r_bounds))
    loss = QuadraticLoss(S, S, fixed=np.eye(p, dtype=bool), const=0.5 * np.diag(S))
    reg = Regularizer(kind, lam[None, :], a)
    sol = _solve(loss, reg, np.zeros((p, p)), node_opts)
    coef = sol.x
    np.fill_diagonal(coef, 0.0)

    sg = S @ coef
    # residual variance ||X_j - X_-j g||^2 / n and the penalty inner product
    rss = np.diag(S) - 2.0 * np.sum(S * coef, axis=0) + np.sum(coef * sg, axis=0)
    pen = np.sum(coef * reg.derivative(coef), axis=0)
    if math.isfinite(r_bounds):
        # on the boundary the certificate also carries the ball multiplier
        on_ball = np.abs(coef).sum(axis=0) >= float(r_bounds) * (1 - 1e-10)
        pen = np.where(on_ball, np.sum(coef * (S - sg), axis=0), pen)
    phi2 = rss + pen
    degenerate = phi2 <= DEGENERATE_PHI2
    if degenerate.any():
        if not allow_jitter:
            raise DegenerateColumnError(np.flatnonzero(degenerate), phi2)
        phi2 = np.where(degenerate, phi2 + JITTER, phi2)

    phi = np.eye(p) - coef.T
    theta = phi / phi2[:, None]
    cert = sg - S
    np.fill_diagonal(cert, 0.0)
    relax = np.abs(cert).max(axis=0) / phi2
    diagnostics.update(
        iterations=sol.iterations,
        converged=sol.converged,
        kkt_residual=float(np.max(sol.kkt_residual)),
        support=np.count_nonzero(coef, axis=0),
    )
    return PrecisionEstimate(theta, phi2, coef.T.copy(), lam, relax, S, kind, a, degenerate, diagnostics)


def relaxation_diagnostic(pe: PrecisionEstimate, data: Dataset, fit: ExpectileFit, check=True):
    """Sup-norm of ``Theta S - I`` off the diagonal, overall and per row.

    Raises :class:`IdentityViolation` if a diagonal entry of ``Theta S``
    is further than ``1e-8`` from one (with ``check``).
    """
    S, _ = weighted_gram(data, fit.beta_hat, fit.tau)
    if pe.theta.shape != S.shape:
        raise ValueError("precision estimate does not match the data dimension")
    m = pe.theta @ S - np.eye(S.shape[0])
    diag = np.abs(np.diag(m))
    if check and np.any(diag > 1e-8):
        raise IdentityViolation(f"diagonal identity fails: max |(Theta S)_jj - 1| = {diag.max():.3g}")
    off = np.abs(m)
    np.fill_diagonal(off, 0.0)
    per_row = off.max(axis=1)
    return float(per_row.max()), per_row
