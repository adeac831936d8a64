import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from debiased_expectile import RngStream, StudyConfig, gen_replicate, make_sigma, run_study, scalar_expectile
from debiased_expectile.simulation import (
    CSV_COLUMNS,
    PRESETS,
    CovarianceDesign,
    StudyError,
    coefficient_pattern,
    hypothesis_matrix,
    write_study_csv,
    write_study_json,
)

TINY = StudyConfig(n=60, p=20, replicates=3, folds=3, n_lambda=10, hypotheses=((1,), (2, 3)), seed=5)


def scalefree_reference(p, band):
    a = np.zeros((p, p))
    for j in range(p):
        for k in range(p):
            if j != k and abs(j - k) <= band:
                a[j, k] = 0.3
    return a


def test_toeplitz_entries():
    fac = make_sigma(CovarianceDesign("toeplitz", 6, xi=0.5))
    assert fac.sigma[0, 3] == 0.125 and fac.sigma[4, 4] == 1.0
    assert np.allclose(fac.chol @ fac.chol.T, fac.sigma)


@pytest.mark.parametrize("p,band", [(4, 1), (50, 10), (200, 10)])
def test_scalefree_precision_times_dense_inverse(p, band):
    fac = make_sigma(CovarianceDesign("scalefree", p, varsigma=band))
    m = fac.matrix
    sigma_dense = np.linalg.inv(m)
    assert np.max(np.abs(m @ sigma_dense - np.eye(p))) <= 1e-8
    assert np.max(np.abs(fac.sigma - sigma_dense)) <= 1e-8
    assert np.allclose(m, m.T)


def test_scalefree_shift_uses_exact_smallest_eigenvalue():
    p, band = 40, 5
    a = scalefree_reference(p, band)
    d = np.where(np.arange(p) < p // 2, 1.0, 3.0)
    m = make_sigma(CovarianceDesign("scalefree", p, varsigma=band)).matrix
    shift = m[0, 0] - 0.2  # diagonal of A + (|lmin| + 0.2) I at D = 1
    # A + s I is positive definite just above |lmin| and not just below
    np.linalg.cholesky(a + (shift + 1e-9) * np.eye(p))
    with pytest.raises(np.linalg.LinAlgError):
        np.linalg.cholesky(a + (shift - 1e-6) * np.eye(p))
    assert np.allclose(m, d[:, None] * (a + (shift + 0.2) * np.eye(p)) * d[None, :])


@pytest.mark.parametrize("kind", ["toeplitz", "scalefree"])
def test_sampled_covariance(kind):
    design = CovarianceDesign(kind, 10, xi=0.5, varsigma=2)
    fac = make_sigma(design)
    n = 40000
    x = fac.sample(RngStream(1, 2), n)
    emp = x.T @ x / n
    s = fac.sigma
    # sampling sd of each second-moment entry; 55 entries, so a 4 sd band
    sd = np.sqrt(np.outer(np.diag(s), np.diag(s)) + s**2) / math.sqrt(n)
    assert np.max(np.abs(emp - s) / sd) <= 4.0


def test_homoscedastic_errors_are_expectile_centred():
    for error in ("std_normal", "t4"):
        cfg = StudyConfig(n=20000, p=20, tau=0.1, error=error)
        data, beta = gen_replicate(cfg, 0)
        eps = data.y - data.x @ beta
        assert abs(scalar_expectile(eps, 0.1)) < 4 / math.sqrt(cfg.n)


def test_patterns_and_signal():
    cfg = StudyConfig(k=4.0, n=400)
    beta = coefficient_pattern(cfg, RngStream(0))
    assert np.flatnonzero(beta).tolist() == [0, 5, 11, 14, 19]
    assert beta[0] == pytest.approx(0.2)
    u = coefficient_pattern(replace(cfg, pattern="unif10", k=0.0), RngStream(0))
    assert len(np.flatnonzero(u)) == 10 and np.all((u >= 0) & (u <= 2))
    fixed = replace(cfg, pattern="unif4", unif_per_replicate=False)
    a = coefficient_pattern(fixed, RngStream(0, 0))
    b = coefficient_pattern(fixed, RngStream(0, 8))
    assert np.array_equal(a, b)


def test_heteroscedastic_replicate():
    cfg = StudyConfig(dgp="heteroscedastic", n=50, p=20)
    data, beta = gen_replicate(cfg, 2)
    assert beta is None and data.x.shape == (50, 20)
    d2, _ = gen_replicate(cfg, 2)
    assert np.array_equal(data.y, d2.y)


def test_hypothesis_matrix():
    r = hypothesis_matrix((1, 3, 4), 6)
    assert r.tolist() == [[1, 0, 0, 0, 0, 0], [0, 0, 1, 0, 0, 0], [0, 0, 0, 1, 0, 0]]


def test_config_validation_and_round_trip():
    cfg = replace(TINY, hypotheses=((1, 3, 4),))
    assert StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.hypothesis_names == ["beta[1,3,4]=0"]
    for bad in (dict(tau=1.0), dict(p=10), dict(hypotheses=((0,),)), dict(pattern="x"), dict(xi=1.0),
                dict(replicates=0), dict(cov="banded")):
        with pytest.raises(ValueError):
            replace(TINY, **bad)
    with pytest.raises(ValueError):
        StudyConfig.from_dict({"n": 60, "bogus": 1})


def test_presets_are_valid():
    assert PRESETS["desk_null"].replicates == 300
    assert PRESETS["desk_null"].hypotheses == ((1,), (1, 3, 4))
    assert PRESETS["full_group_k0"].p == 400


def test_run_study_outputs():
    res = run_study(TINY)
    assert set(res.rejection_rates) == {"beta[1]=0", "beta[2,3]=0"}
    assert len(res.per_replicate) == 3 and [r["index"] for r in res.per_replicate] == [0, 1, 2]
    buf = io.StringIO()
    write_study_csv(res, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == CSV_COLUMNS and len(lines) == 3
    text = write_study_json(res, None)
    parsed = json.loads(text)
    assert parsed[0]["config"]["n"] == 60 and "wall_time" not in parsed[0]
    assert "wall_time" in json.loads(write_study_json(res, None, include_timing=True))[0]


def test_failure_budget(monkeypatch):
    import debiased_expectile.simulation as sim

    def broken(cfg, i):
        if i == 1:
            raise FloatingPointError("boom")
        return real(cfg, i)

    real = sim.run_replicate
    monkeypatch.setattr(sim, "run_replicate", broken)
    with pytest.raises(StudyError):
        run_study(TINY)
    res = run_study(replace(TINY, failure_budget=1))
    assert len(res.failures) == 1 and res.failures[0]["index"] == 1
