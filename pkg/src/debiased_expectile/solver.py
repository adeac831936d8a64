"""Penalised asymmetric least squares.

The workhorse is a proximal-gradient kernel for objectives of the form
``loss(beta) + P(beta)`` over an optional l1 ball.  A nonconvex penalty is
split as ``P = lam ||.||_1 - q`` with ``q`` differentiable, so every step is
a gradient step on ``loss - q`` followed by soft-thresholding.  The kernel
works on a single coefficient vector or on a ``(p, m)`` matrix of ``m``
independent problems (cross-validation folds, node-wise columns), which is
what keeps the replicate loop of a simulation study affordable.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import RngStream
from .expectile import Dataset, check_tau, expectile_loss_scalar
from .regularizers import Regularizer, soft_threshold

__all__ = [
    "SolverOptions",
    "ExpectileFit",
    "CVResult",
    "ExpectileLoss",
    "QuadraticLoss",
    "ConvergenceError",
    "ConditionWarning",
    "prox_gradient",
    "fit_penalized_als",
    "irls_unpenalized",
    "project_l1_ball",
    "fold_assignment",
    "lambda_max",
    "cross_validate",
]


class ConvergenceError(RuntimeError):
    pass


class ConditionWarning(UserWarning):
    """The sample curvature looks too weak for the chosen nonconvex penalty."""


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs for :func:`prox_gradient`.

    ``tol`` applies to the relative objective decrease and to the step
    length; ``r_bound`` is the l1 radius (``inf`` disables the constraint).
    ``lla_stages > 0`` makes SCAD fits run that many weighted-l1 restarts
    after an initial Lasso stage.  ``polish`` finishes with an exact solve
    on the active piece of the piecewise-quadratic objective.
    """

    max_iters: int = 10000
    tol: float = 1e-8
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    r_bound: float = math.inf
    lla_stages: int = 0
    init: object = None
    polish: bool = True
    accelerate: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not self.r_bound > 0:
            raise ValueError("r_bound must be positive")
        if self.lla_stages < 0:
            raise ValueError("lla_stages must be nonnegative")


@dataclass
class ExpectileFit:
    tau: float
    reg: Regularizer
    beta_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    penalty_factor: np.ndarray = None
    r_bound: float = math.inf
    diagnostics: dict = field(default_factory=dict)


@dataclass
class CVResult:
    lambda_star: float
    fit: ExpectileFit
    grid: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    fold_losses: np.ndarray

    def table(self):
        return [
            {"lambda": float(l), "cv_mean": float(m), "cv_se": float(s)}
            for l, m, s in zip(self.grid, self.cv_mean, self.cv_se)
        ]


class ExpectileLoss:
    """``L_n`` on ``m`` problems at once; ``mask[:, k]`` selects the rows of problem ``k``."""

    def __init__(self, x, y, tau, mask=None):
        self.x = x
        self.y = y
        self.tau = check_tau(tau)
        if mask is None:
            self.mask = None
            self.counts = float(x.shape[0])
        else:
            self.mask = np.asarray(mask, dtype=float)
            self.counts = self.mask.sum(axis=0)

    def _weights(self, r):
        w2 = np.where(r < 0, 1.0 - self.tau, self.tau)
        if self.mask is not None:
            w2 = w2 * self.mask
        return w2

    def value(self, b):
        r = self.y[:, None] - self.x @ b
        return 0.5 * np.sum(self._weights(r) * r * r, axis=0) / self.counts

    def value_grad(self, b):
        r = self.y[:, None] - self.x @ b
        wr = self._weights(r) * r
        val = 0.5 * np.sum(wr * r, axis=0) / self.counts
        grad = -(self.x.T @ wr) / self.counts
        return val, grad

    def column(self, k):
        return self.subset([k])

    def subset(self, cols):
        if self.mask is None:
            return self
        return ExpectileLoss(self.x, self.y, self.tau, self.mask[:, cols])

    def local_quadratic(self, b, active):
        """Hessian block, linear term and sign pattern of the piece containing ``b`` (p, 1)."""
        r = self.y - self.x @ b[:, 0]
        w2 = self._weights(r[:, None])[:, 0]
        cnt = np.ravel(self.counts)[0]
        xa = self.x[:, active]
        h = (xa.T * w2) @ xa / cnt
        lin = xa.T @ (w2 * self.y) / cnt
        return h, lin, r < 0

    def same_piece(self, b, signature):
        # residuals at rounding level may land on either side of zero; their
        # gradient contribution vanishes on both pieces
        r = self.y - self.x @ b[:, 0]
        tol = 1e-12 * (1.0 + float(np.max(np.abs(self.y))))
        return not np.any(((r < 0) != signature) & (np.abs(r) > tol))


class QuadraticLoss:
    """``b' G b / 2 - c' b + const`` per column, with some coordinates pinned at zero."""

    def __init__(self, gram, lin, fixed=None, const=None):
        self.gram = gram
        self.lin = lin
        self.fixed = fixed
        self.const = np.zeros(lin.shape[1]) if const is None else np.broadcast_to(const, (lin.shape[1],))

    def value(self, b):
        return 0.5 * np.sum(b * (self.gram @ b), axis=0) - np.sum(self.lin * b, axis=0) + self.const

    def value_grad(self, b):
        gb = self.gram @ b
        val = 0.5 * np.sum(b * gb, axis=0) - np.sum(self.lin * b, axis=0) + self.const
        grad = gb - self.lin
        if self.fixed is not None:
            grad = np.where(self.fixed, 0.0, grad)
        return val, grad

    def column(self, k):
        return self.subset([k])

    def subset(self, cols):
        fixed = None if self.fixed is None else self.fixed[:, cols]
        return QuadraticLoss(self.gram, self.lin[:, cols], fixed, self.const[cols])

    def local_quadratic(self, b, active):
        return self.gram[np.ix_(active, active)], self.lin[active, 0], None

    def same_piece(self, b, signature):
        return True


def project_l1_ball(v, r):
    """Euclidean projection onto ``{u : ||u||_1 <= r}`` (columnwise for matrices)."""
    if not r > 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=float)
    one_d = v.ndim == 1
    vv = v[:, None] if one_d else v
    out = vv.copy()
    norms = np.abs(vv).sum(axis=0)
    cols = np.flatnonzero(norms > r)
    if len(cols):
        a = np.abs(vv[:, cols])
        srt = -np.sort(-a, axis=0)
        css = np.cumsum(srt, axis=0)
        ks = np.arange(1, a.shape[0] + 1)[:, None]
        cond = srt - (css - r) / ks > 0
        rho = a.shape[0] - 1 - np.argmax(cond[::-1], axis=0)
        theta = (css[rho, np.arange(len(cols))] - r) / (rho + 1)
        out[:, cols] = np.sign(vv[:, cols]) * np.maximum(a - theta, 0.0)
    return out[:, 0] if one_d else out


@dataclass
class _KernelResult:
    x: np.ndarray
    objective: np.ndarray
    iterations: int
    converged: bool
    done: np.ndarray
    step: np.ndarray
    history: list


def _composite_map(x, g, eta, reg, radius):
    cand = soft_threshold(x - eta * g, eta * reg.lam)
    if math.isfinite(radius):
        cand = project_l1_ball(cand, radius)
    return cand


def _backtrack(loss, reg, y, f_y, g_y, eta, opts, need_grad):
    """Shrink per-problem steps until the quadratic upper model holds at ``T(y)``."""
    while True:
        cand = _composite_map(y, g_y, eta, reg, opts.r_bound)
        d = cand - y
        if need_grad:
            lval_c, lgrad_c = loss.value_grad(cand)
        else:
            lval_c, lgrad_c = loss.value(cand), None
        f_c = lval_c - reg.concave_part(cand)
        bound = f_y + (g_y * d).sum(axis=0) + (d * d).sum(axis=0) / (2 * eta)
        bad = f_c > bound + 1e-12 * (1.0 + np.abs(f_y))
        if not bad.any():
            return cand, d, lval_c, lgrad_c, f_c, eta
        eta = np.where(bad, eta * opts.backtrack_factor, eta)
        if eta.min() < 1e-30:
            raise ConvergenceError("backtracking failed to find a descent step")


def _small(d, x, obj_old, obj_new, tol):
    return (
        (np.abs(obj_old - obj_new) <= tol * np.maximum(1.0, np.abs(obj_old)))
        & (np.abs(d).max(axis=0) <= tol * (1.0 + np.abs(x).max(axis=0)))
        & (np.sqrt((d * d).sum(axis=0)) <= tol * (1.0 + np.sqrt((x * x).sum(axis=0))))
    )


def prox_gradient(loss, reg: Regularizer, x0, opts: SolverOptions, record=False, step0=None):
    """Minimise ``loss + reg`` by backtracking proximal gradient.

    ``x0`` is ``(p,)`` or ``(p, m)``; ``reg.lam`` must broadcast against the
    2-D view.  With ``opts.accelerate`` the extrapolated (FISTA) variant is
    used with a monotone safeguard: a candidate that would raise the
    objective is rejected and the momentum restarted.  Either way the
    sequence of accepted objectives is nonincreasing.  ``step0`` seeds the
    per-problem step sizes (default ``opts.initial_step``).
    """
    x = np.array(x0, dtype=float)
    one_d = x.ndim == 1
    if one_d:
        x = x[:, None]
    lam = np.asarray(reg.lam, dtype=float)
    if one_d and lam.ndim == 1:
        reg = reg.with_lam(lam[:, None])
    if math.isfinite(opts.r_bound):
        x = project_l1_ball(x, opts.r_bound)
    m = x.shape[1]
    eta = np.full(m, opts.initial_step) if step0 is None else np.array(step0, dtype=float)
    lval, lgrad = loss.value_grad(x)
    obj = lval + reg.value(x)
    y, f_y, g_y = x, lval - reg.concave_part(x), lgrad - reg.concave_part_grad(x)
    t = np.ones(m)
    at_x = np.ones(m, dtype=bool)
    history = [obj.copy()] if record else []
    done = np.zeros(m, dtype=bool)
    it = 0
    for it in range(1, opts.max_iters + 1):
        cand, d, lval_c, lgrad_c, f_c, eta = _backtrack(loss, reg, y, f_y, g_y, eta, opts, not opts.accelerate)
        obj_c = lval_c + reg.value(cand)
        if opts.accelerate:
            # from a restart point the plain step is always taken
            accept = (obj_c <= obj) | at_x
            x_new = np.where(accept, cand, x)
            obj_new = np.where(accept, obj_c, obj)
        else:
            x_new, obj_new = cand, obj_c
            assert np.all(obj_c <= obj + 1e-10 * (1.0 + np.abs(obj))), "composite objective increased"
        done = _small(d, y, obj, obj_new, opts.tol)
        if record:
            history.append(obj_new.copy())
        if done.all():
            x, obj = x_new, obj_new
            break
        if opts.accelerate:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = x_new + (t / t_new) * (cand - x_new) + ((t - 1.0) / t_new) * (x_new - x)
            restart = ~accept | at_x & (obj_c > obj)
            t = np.where(restart, 1.0, t_new)
            y = np.where(restart, x_new, y)
            at_x = restart
            x, obj = x_new, obj_new
            if math.isfinite(opts.r_bound):
                y = project_l1_ball(y, opts.r_bound)
            lval, lgrad = loss.value_grad(y)
        else:
            x, obj, y = cand, obj_c, cand
            lval, lgrad = lval_c, lgrad_c
        f_y = lval - reg.concave_part(y)
        g_y = lgrad - reg.concave_part_grad(y)
    out_x = x[:, 0] if one_d else x
    return _KernelResult(out_x, obj, it, bool(done.all()), done, eta, history)


def _penalty_piece(kind, a, beta_a, lam_a):
    """Slope ``curv * beta + const`` of ``p'`` on the piece containing ``beta_a``."""
    s = np.sign(beta_a)
    u = np.abs(beta_a)
    if kind == "lasso":
        return np.zeros_like(u), lam_a * s, np.zeros(u.shape, dtype=int)
    region = np.where(u <= lam_a, 0, np.where(u <= a * lam_a, 1, 2))
    curv = np.where(region == 1, -1.0 / (a - 1), 0.0)
    const = np.where(region == 0, lam_a * s, np.where(region == 1, a * lam_a * s / (a - 1), 0.0))
    return curv, const, region


def _polish_column(loss, reg, lam, x0, sweeps=6):
    """Exact stationary point on the piece containing ``x0`` (p, 1), if it is consistent.

    Returns ``(x, ok)``; on failure ``x`` is ``x0`` unchanged.
    """
    reg1 = reg.with_lam(lam[:, None])
    fixed = getattr(loss, "fixed", None)
    free = np.ones(len(lam), dtype=bool) if fixed is None else ~fixed[:, 0]
    cur = x0
    obj0 = None
    for _ in range(sweeps):
        active = np.flatnonzero(cur[:, 0])
        if len(active) == 0:
            new = cur
        else:
            h, lin, sig = loss.local_quadratic(cur, active)
            curv, const, region = _penalty_piece(reg.kind, reg.a, cur[active, 0], lam[active])
            try:
                sol = np.linalg.solve(h + np.diag(curv), lin - const)
            except np.linalg.LinAlgError:
                return x0, False
            if np.any(np.sign(sol) != np.sign(cur[active, 0])):
                return x0, False
            if np.any(_penalty_piece(reg.kind, reg.a, sol, lam[active])[2] != region):
                return x0, False
            new = np.zeros_like(x0)
            new[active, 0] = sol
            if not loss.same_piece(new, sig):
                cur = new
                continue
        lv, lg = loss.value_grad(new)
        zeros = np.flatnonzero((new[:, 0] == 0) & free)
        if np.any(np.abs(lg[zeros, 0]) > lam[zeros] * (1 + 1e-9) + 1e-12):
            return x0, False
        if obj0 is None:
            lv0 = loss.value(x0)
            obj0 = float(lv0[0] + reg1.value(x0)[0])
        if lv[0] + reg1.value(new)[0] <= obj0 + 1e-12 * (1.0 + abs(obj0)):
            return new, True
        return x0, False
    return x0, False


def _polish(loss, reg, x, opts):
    """Polish every column of ``x`` (p, m); returns the new matrix and a success mask."""
    xx = x.copy()
    m = xx.shape[1]
    lam = np.broadcast_to(np.asarray(reg.lam, dtype=float), xx.shape)
    ok = np.zeros(m, dtype=bool)
    for k in range(m):
        if math.isfinite(opts.r_bound) and np.abs(xx[:, k]).sum() >= opts.r_bound * (1 - 1e-9):
            continue
        sub = loss.subset([k]) if m > 1 else loss
        xx[:, [k]], ok[k] = _polish_column(sub, reg, np.array(lam[:, k]), xx[:, [k]])
    return xx, ok


def _reg_cols(reg, cols, m):
    lam = np.asarray(reg.lam)
    if lam.ndim == 2 and lam.shape[1] == m and m > 1:
        return reg.with_lam(lam[:, cols])
    return reg


def _fixed_point_residual(loss, reg, x, eta, radius):
    _, lg = loss.value_grad(x)
    g = lg - reg.concave_part_grad(x)
    return np.sqrt(np.sum((_composite_map(x, g, eta, reg, radius) - x) ** 2, axis=0))


@dataclass
class _Solution:
    x: np.ndarray
    objective: np.ndarray
    iterations: int
    converged: bool
    kkt_residual: np.ndarray
    polished: np.ndarray


def _kernel(loss, reg, x, opts, polish):
    """Proximal iterations interleaved with exact polish attempts.

    Without polishing this is a single call of :func:`prox_gradient`.  With
    it, the start is polished first, then unresolved problems get chunks of
    iterations of growing length, each followed by another polish attempt.
    A column is resolved once its polish succeeds or the tolerance test
    passes (and it has been polished once more).
    """
    m = x.shape[1]
    if not polish:
        res = prox_gradient(loss, reg, x, opts)
        return res.x, res.iterations, res.done, res.step, np.zeros(m, dtype=bool)
    x = x.copy()
    eta = np.full(m, opts.initial_step)
    polished = np.zeros(m, dtype=bool)
    converged = np.zeros(m, dtype=bool)
    x, polished = _polish(loss, reg, x, opts)
    resolved = polished.copy()
    iters, chunk = 0, 100000
    while not resolved.all() and iters < opts.max_iters:
        cols = np.flatnonzero(~resolved)
        sub = loss.subset(cols) if len(cols) < m else loss
        sreg = _reg_cols(reg, cols, m) if len(cols) < m else reg
        n_it = min(chunk, opts.max_iters - iters)
        res = prox_gradient(sub, sreg, x[:, cols], replace(opts, max_iters=n_it), step0=eta[cols])
        iters += res.iterations
        x[:, cols] = res.x
        eta[cols] = res.step
        px, pok = _polish(sub, sreg, res.x, opts)
        x[:, cols] = px
        polished[cols] = pok
        converged[cols] = res.done
        resolved[cols] = pok | res.done
        chunk *= 2
    return x, iters, polished | converged, eta, polished


def _solve(loss, reg, x0, opts, polish=None):
    """Kernel plus optional LLA restarts for SCAD and the final polish."""
    polish = opts.polish if polish is None else polish
    x0 = np.array(x0, dtype=float)
    one_d = x0.ndim == 1
    x = x0[:, None] if one_d else x0
    lam = np.asarray(reg.lam, dtype=float)
    if one_d and lam.ndim == 1:
        reg = reg.with_lam(lam[:, None])
    if math.isfinite(opts.r_bound):
        x = project_l1_ball(x, opts.r_bound)
    if reg.kind == "scad" and opts.lla_stages > 0:
        x, iters, conv, eta, pol = _kernel(loss, Regularizer("lasso", reg.lam), x, opts, False)
        for stage in range(opts.lla_stages):
            last = Regularizer("lasso", reg.derivative_abs(x))
            final = stage == opts.lla_stages - 1
            x, it, c, eta, pol = _kernel(loss, last, x, opts, polish and final)
            iters += it
            conv = conv & c
    else:
        last = reg
        x, iters, conv, eta, pol = _kernel(loss, reg, x, opts, polish)
    resid = _fixed_point_residual(loss, last, x, eta, opts.r_bound)
    obj = loss.value(x) + reg.value(x)
    if one_d:
        x = x[:, 0]
    return _Solution(x, obj, iters, bool(np.all(conv)), resid, pol)


def fit_penalized_als(data: Dataset, tau, reg: Regularizer, opts: SolverOptions = None, penalty_factor=None):
    """Penalised expectile regression: minimise ``L_n + P_lam`` over ``||beta||_1 <= R``.

    ``penalty_factor`` scales the tuning parameter per coordinate (0 leaves a
    coordinate, such as an intercept, unpenalised).  Returns the best
    iterate with ``converged = False`` if ``max_iters`` is exhausted.
    """
    tau = check_tau(tau)
    opts = SolverOptions() if opts is None else opts
    if np.ndim(reg.lam) != 0:
        raise ValueError("fit_penalized_als takes a scalar lambda; use penalty_factor for weights")
    p = data.p
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, dtype=float)
    if pf.shape != (p,) or np.any(pf < 0):
        raise ValueError("penalty_factor must be a nonnegative vector of length p")
    regp = reg if np.all(pf == 1) else reg.with_lam(reg.lam * pf)
    if opts.init is None or (isinstance(opts.init, str) and opts.init == "zeros"):
        x0 = np.zeros(p)
    else:
        x0 = np.asarray(opts.init, dtype=float)
        if x0.shape != (p,):
            raise ValueError("warm start has the wrong length")
    loss = ExpectileLoss(data.x, data.y, tau)
    sol = _solve(loss, regp, x0, opts)
    beta = sol.x
    diagnostics = {"support_size": int(np.count_nonzero(beta)), "polished": bool(sol.polished[0])}
    if reg.kind == "scad":
        supp = np.flatnonzero(beta)
        if len(supp):
            xs = data.x[:, supp]
            lmin = float(np.linalg.eigvalsh(xs.T @ xs / data.n)[0])
            diagnostics["restricted_min_eig"] = lmin
            diagnostics["curvature_ok"] = min(tau, 1 - tau) * lmin > 0.75 * reg.mu
            if not diagnostics["curvature_ok"]:
                warnings.warn(
                    "min(tau, 1 - tau) * restricted eigenvalue is below 3 mu / 4; "
                    "the SCAD estimate may be a poor stationary point",
                    ConditionWarning,
                    stacklevel=2,
                )
    return ExpectileFit(
        tau=tau,
        reg=reg,
        beta_hat=beta,
        objective=float(sol.objective[0]),
        iterations=sol.iterations,
        converged=sol.converged,
        kkt_residual=float(sol.kkt_residual[0]),
        penalty_factor=pf,
        r_bound=opts.r_bound,
        diagnostics=diagnostics,
    )


def irls_unpenalized(data: Dataset, tau, tol=1e-10, max_iter=500):
    """Exact unpenalised ALS fit (needs ``n > p``) by iteratively reweighted least squares."""
    tau = check_tau(tau)
    x, y = data.x, data.y
    if data.n <= data.p:
        raise ValueError("unpenalised fit needs more observations than covariates")
    beta = np.linalg.lstsq(x, y, rcond=None)[0]
    for _ in range(max_iter):
        w2 = np.where(y - x @ beta < 0, 1.0 - tau, tau)
        gram = (x.T * w2) @ x
        try:
            new = np.linalg.solve(gram, x.T @ (w2 * y))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("weighted Gram matrix is singular") from exc
        if np.max(np.abs(new - beta)) <= tol:
            return new
        beta = new
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")


def fold_assignment(n, folds, seed, stream_id=0):
    """Fold label per row: seeded Fisher-Yates shuffle, then contiguous blocks.

    The first ``n % folds`` blocks get one extra row.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    if n < folds:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    perm = RngStream(seed, stream_id).permutation(n)
    sizes = np.full(folds, n // folds)
    sizes[: n % folds] += 1
    labels = np.empty(n, dtype=int)
    labels[perm] = np.repeat(np.arange(folds), sizes)
    return labels


def lambda_max(data: Dataset, tau, penalty_factor=None):
    """Smallest lambda for which the penalised coordinates are all zero, and the base fit."""
    p = data.p
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, dtype=float)
    beta0 = np.zeros(p)
    free = np.flatnonzero(pf == 0)
    if len(free):
        beta0[free] = irls_unpenalized(Dataset(data.x[:, free], data.y), tau)
    r = data.y - data.x @ beta0
    w2 = np.where(r < 0, 1.0 - tau, tau)
    g = np.abs(data.x.T @ (w2 * r)) / data.n
    pen = pf > 0
    if not pen.any():
        return 0.0, beta0
    return float(np.max(g[pen] / pf[pen])), beta0


def cross_validate(
    data: Dataset,
    tau,
    kind="lasso",
    grid=None,
    folds=10,
    seed=0,
    opts: SolverOptions = None,
    a=3.7,
    penalty_factor=None,
    n_lambda=50,
    lambda_min_ratio=1e-3,
    stream_id=0,
    path_tol=None,
):
    """K-fold cross-validation of lambda along a decreasing, warm-started path.

    The held-out criterion is the average expectile loss ``rho_tau / 2`` on
    each fold.  All folds are solved together as one batched problem.  The
    selected lambda is refitted on the full sample, warm-starting down the
    grid.  ``path_tol`` replaces ``opts.tol`` along the path; it only matters
    for problems whose exact polish fails.
    """
    tau = check_tau(tau)
    opts = SolverOptions() if opts is None else opts
    n, p = data.n, data.p
    pf = np.ones(p) if penalty_factor is None else np.asarray(penalty_factor, dtype=float)
    labels = fold_assignment(n, folds, seed, stream_id)
    train = labels[:, None] != np.arange(folds)[None, :]
    test = ~train
    if np.any(train.sum(axis=0) == 0):
        raise ValueError("degenerate folds")
    lmax, beta0 = lambda_max(data, tau, pf)
    if grid is None:
        top = lmax if lmax > 0 else 1.0
        grid = np.geomspace(top, top * lambda_min_ratio, n_lambda)
    else:
        grid = np.sort(np.asarray(grid, dtype=float).ravel())[::-1]
        if grid.size == 0:
            raise ValueError("lambda grid is empty")
        if np.any(grid < 0) or not np.all(np.isfinite(grid)):
            raise ValueError("lambda grid must be finite and nonnegative")
    path_opts = replace(opts, tol=opts.tol if path_tol is None else path_tol, init=None)
    loss = ExpectileLoss(data.x, data.y, tau, train)
    b = np.tile(beta0[:, None], (1, folds))
    test_counts = test.sum(axis=0)
    fold_losses = np.empty((folds, len(grid)))
    for gi, lam in enumerate(grid):
        reg = Regularizer(kind, lam * pf[:, None], a)
        b = _solve(loss, reg, b, path_opts).x
        r = data.y[:, None] - data.x @ b
        fold_losses[:, gi] = 0.5 * np.sum(expectile_loss_scalar(r, tau) * test, axis=0) / test_counts
    cv_mean = fold_losses.mean(axis=0)
    cv_se = fold_losses.std(axis=0, ddof=1) / math.sqrt(folds)
    best = int(np.argmin(cv_mean))
    lam_star = float(grid[best])
    full = ExpectileLoss(data.x, data.y, tau)
    bf = beta0.copy()
    for lam in grid[:best]:
        bf = _solve(full, Regularizer(kind, lam * pf, a), bf, path_opts).x
    fit = fit_penalized_als(data, tau, Regularizer(kind, lam_star, a), replace(opts, init=bf), pf)
    return CVResult(lam_star, fit, grid, cv_mean, cv_se, fold_losses)
