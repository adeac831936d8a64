"""Monte Carlo designs and the replicate runner for rejection-rate studies.

Replicate ``i`` of a study draws everything from streams keyed by
``(seed, 8 i + offset)``, so results do not depend on the worker count or on
the order in which replicates finish.
"""

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from scipy import linalg

from .distributions import RngStream, normal_cdf
from .expectile import Dataset, check_tau, scalar_expectile
from .inference import debias, wald_test
from .nodewise import nodewise_precision
from .solver import SolverOptions, cross_validate

__all__ = [
    "CovarianceDesign",
    "CovarianceFactor",
    "StudyConfig",
    "StudyResult",
    "StudyError",
    "make_sigma",
    "coefficient_pattern",
    "gen_replicate",
    "run_replicate",
    "run_study",
    "hypothesis_matrix",
    "write_study_csv",
    "write_study_json",
    "PRESETS",
]

ACTIVE_SETS = {"4": (6, 12, 15, 20), "10": (5, 6, 7, 8, 9, 10, 11, 12, 15, 20)}
PATTERNS = ("dirac4", "dirac10", "unif4", "unif10")
ERRORS = ("std_normal", "t4", "none")
DGPS = ("homoscedastic", "heteroscedastic")
METHODS = {"la_la": "lasso", "sc_sc": "scad"}
# stream offsets inside a replicate's block of eight
_DATA, _STEP1_FOLDS, _NODE = 0, 1, 2
_STUDY_COEF_STREAM = 2**62


class StudyError(RuntimeError):
    pass


@dataclass(frozen=True)
class CovarianceDesign:
    """``toeplitz`` with parameter ``xi`` or ``scalefree`` with band width ``varsigma``."""

    kind: str
    p: int
    xi: float = 0.5
    varsigma: int = 10

    def __post_init__(self):
        if self.kind not in ("toeplitz", "scalefree"):
            raise ValueError(f"unknown covariance design {self.kind!r}")
        if self.p < 2:
            raise ValueError("need p >= 2")
        if self.kind == "toeplitz" and not -1 < self.xi < 1:
            raise ValueError("Toeplitz parameter must lie in (-1, 1)")
        if self.kind == "scalefree" and (int(self.varsigma) != self.varsigma or self.varsigma < 1):
            raise ValueError("band width must be a positive integer")

    @property
    def parameter(self):
        return self.xi if self.kind == "toeplitz" else self.varsigma


@dataclass
class CovarianceFactor:
    """Sampling factor for ``N(0, Sigma)``.

    ``mode == "direct"``: ``chol`` factors ``Sigma`` and draws are ``L z``.
    ``mode == "inverse"``: ``chol`` factors ``M = Sigma^{-1}`` and draws are
    ``L^{-T} z``, whose covariance is ``M^{-1}``.
    """

    design: CovarianceDesign
    chol: np.ndarray
    mode: str
    matrix: np.ndarray

    @property
    def sigma(self):
        if self.mode == "direct":
            return self.matrix
        return linalg.cho_solve((self.chol, True), np.eye(self.matrix.shape[0]))

    def sample(self, rng: RngStream, n):
        p = self.chol.shape[0]
        if self.mode == "direct":
            return rng.multivariate_normal(self.chol, n)
        z = rng.standard_normal(n * p).reshape(n, p)
        return linalg.solve_triangular(self.chol, z.T, lower=True, trans="T").T


def make_sigma(design: CovarianceDesign) -> CovarianceFactor:
    p = design.p
    if design.kind == "toeplitz":
        j = np.arange(p)
        sigma = design.xi ** np.abs(j[:, None] - j[None, :]).astype(float)
        return CovarianceFactor(design, np.linalg.cholesky(sigma), "direct", sigma)
    j = np.arange(p)
    dist = np.abs(j[:, None] - j[None, :])
    adj = np.where((dist > 0) & (dist <= design.varsigma), 0.3, 0.0)
    lmin = float(np.linalg.eigvalsh(adj)[0])
    dgl = np.where(j < p // 2, 1.0, 3.0)
    m = dgl[:, None] * (adj + (abs(lmin) + 0.2) * np.eye(p)) * dgl[None, :]
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - excluded by construction
        raise AssertionError("scale-free precision matrix is not positive definite") from exc
    return CovarianceFactor(design, chol, "inverse", m)


@dataclass(frozen=True)
class StudyConfig:
    """Everything needed to reproduce a rejection-rate study.

    ``hypotheses`` is a tuple of 1-based coordinate groups, each tested as
    ``beta_G = 0``; several groups may share one set of replicates.  ``k``
    scales the signal ``k / sqrt(n)`` on coordinate 1 (homoscedastic) or on
    coordinate 2 (heteroscedastic).
    """

    n: int = 200
    p: int = 100
    tau: float = 0.1
    cov: str = "toeplitz"
    xi: float = 0.5
    varsigma: int = 10
    pattern: str = "dirac4"
    k: float = 0.0
    error: str = "std_normal"
    dgp: str = "homoscedastic"
    hypotheses: tuple = ((1,),)
    method: str = "la_la"
    replicates: int = 100
    alpha: float = 0.05
    seed: int = 0
    folds: int = 10
    n_lambda: int = 50
    path_tol: float = 1e-6
    lla_stages: int = 0
    scad_a: float = 3.7
    unif_per_replicate: bool = True
    failure_budget: int = 0

    def __post_init__(self):
        check_tau(self.tau)
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if self.error not in ERRORS:
            raise ValueError(f"error must be one of {ERRORS}")
        if self.dgp not in DGPS:
            raise ValueError(f"dgp must be one of {DGPS}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {tuple(METHODS)}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.p < 20:
            raise ValueError("the coefficient patterns need p >= 20")
        hyp = tuple(tuple(int(c) for c in g) for g in self.hypotheses)
        if not hyp or any(not g for g in hyp):
            raise ValueError("need at least one nonempty hypothesis group")
        for g in hyp:
            if min(g) < 1 or max(g) > self.p or len(set(g)) != len(g):
                raise ValueError(f"hypothesis group {g} is inconsistent with p = {self.p}")
        object.__setattr__(self, "hypotheses", hyp)
        self.design  # validates the covariance fields

    @property
    def design(self):
        return CovarianceDesign(self.cov, self.p, self.xi, self.varsigma)

    @property
    def hypothesis_names(self):
        return ["beta[" + ",".join(str(c) for c in g) + "]=0" for g in self.hypotheses]

    def to_dict(self):
        d = asdict(self)
        d["hypotheses"] = [list(g) for g in self.hypotheses]
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown study keys: {sorted(unknown)}")
        d = dict(d)
        if "hypotheses" in d:
            d["hypotheses"] = tuple(tuple(g) for g in d["hypotheses"])
        return cls(**d)


def hypothesis_matrix(group, p):
    """Rows ``e_j'`` for the 1-based coordinates in ``group``."""
    r = np.zeros((len(group), p))
    for row, c in enumerate(group):
        r[row, c - 1] = 1.0
    return r


def coefficient_pattern(cfg: StudyConfig, rng: RngStream):
    beta = np.zeros(cfg.p)
    active = np.array(ACTIVE_SETS[cfg.pattern[-2:] if cfg.pattern.endswith("10") else "4"]) - 1
    if cfg.pattern.startswith("dirac"):
        beta[active] = 1.0
    else:
        src = rng if cfg.unif_per_replicate else RngStream(cfg.seed, _STUDY_COEF_STREAM)
        beta[active] = 2.0 * src.uniform(len(active))
    beta[0] = cfg.k / math.sqrt(cfg.n)
    return beta


def _errors(cfg, rng, n):
    if cfg.error == "std_normal":
        return rng.standard_normal(n)
    if cfg.error == "t4":
        return rng.student_t4(n)
    return np.zeros(n)


_FACTORS = {}


def _factor(design):
    if design not in _FACTORS:
        _FACTORS[design] = make_sigma(design)
    return _FACTORS[design]


def gen_replicate(cfg: StudyConfig, replicate_index: int):
    """Data set and true coefficients (``None`` for the heteroscedastic model)."""
    rng = RngStream(cfg.seed, 8 * int(replicate_index) + _DATA)
    if cfg.dgp == "homoscedastic":
        beta = coefficient_pattern(cfg, rng)
        x = _factor(cfg.design).sample(rng, cfg.n)
        eps = _errors(cfg, rng, cfg.n)
        if cfg.error != "none":
            eps = eps - scalar_expectile("normal" if cfg.error == "std_normal" else "t4", cfg.tau)
        return Dataset(x, x @ beta + eps), beta
    x = _factor(cfg.design).sample(rng, cfg.n)
    eps = _errors(cfg, rng, cfg.n)
    mean = x[:, 5] + x[:, 11] + x[:, 14] + x[:, 19] + cfg.k / math.sqrt(cfg.n) * x[:, 1]
    return Dataset(x, mean + 0.7 * normal_cdf(x[:, 0]) * eps), None


def run_replicate(cfg: StudyConfig, index: int):
    """Steps 1-4 on replicate ``index``; returns a JSON-ready record."""
    data, _ = gen_replicate(cfg, index)
    kind = METHODS[cfg.method]
    opts = SolverOptions(lla_stages=cfg.lla_stages)
    cv = cross_validate(
        data, cfg.tau, kind, folds=cfg.folds, seed=cfg.seed, opts=opts, a=cfg.scad_a,
        n_lambda=cfg.n_lambda, stream_id=8 * index + _STEP1_FOLDS, path_tol=cfg.path_tol,
    )
    pe = nodewise_precision(data, cv.fit, kind, a=cfg.scad_a, seed=cfg.seed, cv_folds=cfg.folds,
                            stream_id=8 * index + _NODE)
    dr = debias(data, cv.fit, pe)
    tests = []
    for g in cfg.hypotheses:
        wt = wald_test(dr, hypothesis_matrix(g, cfg.p), None, alphas=(cfg.alpha,), on_degenerate="flag")
        tests.append(
            {
                "statistic": None if wt.degenerate else wt.statistic,
                "p_value": None if wt.degenerate else wt.p_value,
                "reject": wt.reject_at[cfg.alpha],
                "degenerate": wt.degenerate,
            }
        )
    return {
        "index": index,
        "lambda": cv.lambda_star,
        "lambda_node": float(pe.lambdas[0]),
        "support": int(np.count_nonzero(cv.fit.beta_hat)),
        "tests": tests,
    }


@dataclass
class StudyResult:
    config: StudyConfig
    rejection_rates: dict
    rejections: dict
    per_replicate: list
    failures: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def rejection_rate(self):
        return self.rejection_rates[self.config.hypothesis_names[0]]


def _safe_replicate(args):
    cfg, index = args
    try:
        return run_replicate(cfg, index)
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        return {"index": index, "error": f"{type(exc).__name__}: {exc}"}


def run_study(cfg: StudyConfig, workers=1, progress=None) -> StudyResult:
    """Run all replicates and tally rejections for every hypothesis.

    ``workers > 1`` fans replicates out to processes.  Records are sorted
    by index before tallying, so the result is the same for any worker
    count.  Failures beyond ``cfg.failure_budget`` abort the study.
    """
    start = time.perf_counter()
    jobs = [(cfg, i) for i in range(cfg.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_safe_replicate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = []
        for job in jobs:
            records.append(_safe_replicate(job))
            if progress is not None:
                progress(len(records), cfg.replicates)
    records.sort(key=lambda r: r["index"])
    failures = [r for r in records if "error" in r]
    if len(failures) > cfg.failure_budget:
        first = failures[0]
        raise StudyError(f"replicate {first['index']} failed: {first['error']}")
    ok = [r for r in records if "error" not in r]
    names = cfg.hypothesis_names
    rejections = {nm: sum(bool(r["tests"][h]["reject"]) for r in ok) for h, nm in enumerate(names)}
    rates = {nm: rejections[nm] / cfg.replicates for nm in names}
    return StudyResult(cfg, rates, rejections, records, failures, time.perf_counter() - start)


# --------------------------------------------------------------------------
# output

CSV_COLUMNS = [
    "method", "dgp", "design", "design_param", "pattern", "error", "tau", "n", "p", "k",
    "hypothesis", "alpha", "replicates", "rejections", "rejection_rate",
]


def _num(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def study_rows(res: StudyResult):
    c = res.config
    for nm in c.hypothesis_names:
        yield {
            "method": c.method.upper().replace("_", "-"),
            "dgp": c.dgp,
            "design": c.cov,
            "design_param": c.design.parameter,
            "pattern": c.pattern,
            "error": c.error,
            "tau": c.tau,
            "n": c.n,
            "p": c.p,
            "k": c.k,
            "hypothesis": nm,
            "alpha": c.alpha,
            "replicates": c.replicates,
            "rejections": res.rejections[nm],
            "rejection_rate": res.rejection_rates[nm],
        }


def write_study_csv(results, path_or_file):
    """One row per (study, hypothesis) in the rejection-table layout."""
    if isinstance(results, StudyResult):
        results = [results]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for res in results:
        for row in study_rows(res):
            w.writerow([_num(row[c]) for c in CSV_COLUMNS])
    return _emit(buf.getvalue(), path_or_file)


def write_study_json(results, path_or_file, include_timing=False):
    """Config echo plus per-replicate detail; timing is opt-in so files stay reproducible."""
    if isinstance(results, StudyResult):
        results = [results]
    out = []
    for res in results:
        item = {
            "config": res.config.to_dict(),
            "rejection_rates": res.rejection_rates,
            "rejections": res.rejections,
            "replicates": res.per_replicate,
        }
        if include_timing:
            item["wall_time"] = res.wall_time
        out.append(item)
    return _emit(json.dumps(out, indent=1, sort_keys=True, allow_nan=False) + "\n", path_or_file)


def _emit(text, path_or_file):
    if path_or_file is None:
        return text
    if isinstance(path_or_file, (str, os.PathLike)):
        with open(path_or_file, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        path_or_file.write(text)
    return text


# --------------------------------------------------------------------------
# presets: desk-scale studies and their full-size (n = 300, 1000 replicates) counterparts

_BASE = StudyConfig()

PRESETS = {
    "desk_null": replace(_BASE, replicates=300, hypotheses=((1,), (1, 3, 4))),
    "desk_power_k2": replace(_BASE, k=2.0, replicates=200),
    "desk_power_k4": replace(_BASE, k=4.0, replicates=200),
    "desk_power_k6": replace(_BASE, k=6.0, replicates=200),
    "desk_hetero_tau01": replace(_BASE, dgp="heteroscedastic", tau=0.1, replicates=200),
    "desk_hetero_tau05": replace(_BASE, dgp="heteroscedastic", tau=0.5, replicates=300),
    "desk_hetero_tau09": replace(_BASE, dgp="heteroscedastic", tau=0.9, replicates=200),
}
for _k in range(7):
    for _m in METHODS:
        PRESETS[f"full_power_{_m}_k{_k}"] = replace(
            _BASE, n=300, p=400, k=float(_k), method=_m, replicates=1000, path_tol=1e-8
        )
    PRESETS[f"full_group_k{_k}"] = replace(
        _BASE, n=300, p=400, k=float(_k), hypotheses=((1, 3, 4),), replicates=1000, path_tol=1e-8
    )
for _t in (0.1, 0.5, 0.9):
    for _p in (400, 600):
        for _m in METHODS:
            PRESETS[f"full_hetero_{_m}_p{_p}_tau{int(round(_t * 10)):02d}"] = replace(
                _BASE, n=300, p=_p, tau=_t, dgp="heteroscedastic", method=_m, replicates=1000, path_tol=1e-8
            )
