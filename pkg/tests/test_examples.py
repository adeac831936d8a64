"""Worked examples with exact or independently computed answers, module by module."""

import math

import numpy as np
import pytest
from oracles import lasso_ls
from scipy import integrate

from debiased_expectile import (
    Dataset,
    RngStream,
    StudyConfig,
    confidence_intervals,
    cross_validate,
    debias,
    delta_diagnostics,
    expectile_loss_scalar,
    fit_penalized_als,
    gen_replicate,
    irls_unpenalized,
    lasso,
    loss_and_gradient,
    make_sigma,
    nodewise_precision,
    normal_cdf,
    project_l1_ball,
    run_study,
    scalar_expectile,
    scad,
    squared_weights,
    wald_test,
)
from debiased_expectile.distributions import chi2_cdf, chi2_sf
from debiased_expectile.inference import DebiasResult
from debiased_expectile.simulation import CovarianceDesign, hypothesis_matrix
from debiased_expectile.solver import fold_assignment

# ------------------------------------------------------------ loss and weights


@pytest.mark.parametrize("u,tau,want", [(2.0, 0.1, 0.4), (-2.0, 0.1, 3.6), (1.5, 0.5, 1.125)])
def test_asymmetric_loss_values(u, tau, want):
    assert float(expectile_loss_scalar(u, tau)) == pytest.approx(want, abs=1e-15)


def test_weight_entries():
    d = Dataset(np.ones((3, 1)), [1.0, -1.0, 0.0])
    assert squared_weights(d, [0.0], 0.1).tolist() == [0.1, 0.9, 0.1]
    assert np.all(squared_weights(d, [0.3], 0.5) == 0.5)


def test_loss_at_exact_fit_and_single_term():
    x = np.random.default_rng(0).standard_normal((10, 3))
    b = np.array([1.0, -2.0, 0.5])
    loss, grad = loss_and_gradient(Dataset(x, x @ b), b, 0.3)
    assert loss == 0.0 and np.all(grad == 0.0)
    loss, grad = loss_and_gradient(Dataset([[1.0]], [1.0]), [0.0], 0.1)
    assert loss == pytest.approx(0.05) and grad[0] == pytest.approx(-0.1)


def test_two_point_sample_expectile_is_tau():
    for tau in (0.1, 0.37, 0.9):
        assert scalar_expectile([0.0, 1.0], tau) == pytest.approx(tau, abs=1e-10)


def test_normal_expectile_by_partial_moment_bisection():
    def score(m, tau=0.1):
        upper = math.exp(-m * m / 2) / math.sqrt(2 * math.pi) - m * (1 - 0.5 * math.erfc(-m / math.sqrt(2)))
        lower = upper + m  # E[(m - Y)+] = E[(Y - m)+] + m for a centred law
        return tau * upper - (1 - tau) * lower

    lo, hi = -5.0, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if score(mid) > 0 else (lo, mid)
    assert scalar_expectile("normal", 0.1) == pytest.approx(0.5 * (lo + hi), abs=1e-9)


# ------------------------------------------------------------ penalties


def test_penalty_values_and_derivatives():
    assert lasso(1.0).value(np.array([-2.0, 3.0])) == pytest.approx(5.0)
    assert scad(1.0, 3.7).value(np.array([0.5])) == pytest.approx(0.5)
    assert scad(1.0, 3.7).value(np.array([5.0])) == pytest.approx(2.35)
    assert float(lasso(1.0).derivative(np.array([-0.3]))[0]) == -1.0
    assert float(scad(1.0, 3.7).derivative(np.array([5.0]))[0]) == 0.0
    d = float(scad(1.0, 3.7).derivative(np.array([2.0]))[0])
    h = 1e-6
    fd = (float(scad(1.0, 3.7).value(np.array([2.0 + h]))) - float(scad(1.0, 3.7).value(np.array([2.0 - h])))) / (2 * h)
    assert d == pytest.approx(1.7 / 2.7, abs=1e-12) and d == pytest.approx(fd, abs=1e-8)


def test_prox_examples():
    assert float(lasso(1.0).prox(np.array([0.5]), 1.0)[0]) == 0.0
    assert float(lasso(1.0).prox(np.array([3.0]), 1.0)[0]) == 2.0
    from test_expectile_and_penalties import scad_prox_oracle

    for z in (0.4, 1.3, 4.0):
        got = float(scad(1.0, 3.7).prox(np.array([z]), 0.5)[0])
        assert got == pytest.approx(scad_prox_oracle(z, 1.0, 3.7, 0.5), abs=1e-8)


# ------------------------------------------------------------ solver


def test_half_level_lasso_is_least_squares_lasso_at_double_penalty():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((120, 30))
    y = x[:, :3] @ [1.5, -1.0, 0.7] + rng.standard_normal(120)
    for lam in (0.02, 0.1):
        fit = fit_penalized_als(Dataset(x, y), 0.5, lasso(lam))
        assert np.max(np.abs(fit.beta_hat - lasso_ls(x, y, 2 * lam))) <= 1e-7


def test_noiseless_limit_recovers_truth():
    rng = np.random.default_rng(22)
    x = rng.standard_normal((80, 6))
    b = np.array([1.0, 0.0, -2.0, 0.5, 0.0, 3.0])
    data = Dataset(x, x @ b)
    errs = [np.max(np.abs(fit_penalized_als(data, 0.3, lasso(lam)).beta_hat - b)) for lam in (1e-2, 1e-4, 1e-6)]
    assert errs[0] > errs[1] > errs[2] and errs[2] <= 1e-4


def test_irls_special_cases():
    rng = np.random.default_rng(23)
    x = rng.standard_normal((60, 3))
    y = x @ [1.0, 2.0, -1.0] + rng.standard_normal(60)
    assert np.allclose(irls_unpenalized(Dataset(x, y), 0.5), np.linalg.lstsq(x, y, rcond=None)[0], atol=1e-10)
    assert irls_unpenalized(Dataset(np.ones((60, 1)), y), 0.2)[0] == pytest.approx(scalar_expectile(y, 0.2), abs=1e-9)
    x2 = rng.standard_normal((200, 3))
    d = Dataset(x2, x2 @ [0.5, 0.0, 1.0] + rng.standard_t(4, 200))
    fit = fit_penalized_als(d, 0.1, lasso(0.0))
    assert np.max(np.abs(loss_and_gradient(d, fit.beta_hat, 0.1)[1])) <= 1e-8


def test_projection_examples():
    v = np.array([0.2, -0.3])
    assert np.array_equal(project_l1_ball(v, 1.0), v)
    assert np.allclose(project_l1_ball(np.array([3.0, 0.0]), 1.0), [1.0, 0.0])
    assert np.allclose(project_l1_ball(np.array([2.0, 1.0]), 1.0), [1.0, 0.0])


def test_cv_constant_response_and_singleton_grid():
    rng = np.random.default_rng(24)
    x = np.column_stack([np.ones(100), rng.standard_normal((100, 5))])
    pf = np.r_[0.0, np.ones(5)]
    cv = cross_validate(Dataset(x, np.full(100, 2.5)), 0.3, folds=5, penalty_factor=pf)
    assert np.all(cv.fit.beta_hat[1:] == 0.0) and cv.fit.beta_hat[0] == pytest.approx(2.5)
    top = cv.grid >= cv.grid[len(cv.grid) // 2]
    assert np.ptp(cv.cv_mean[top]) <= 1e-12  # no signal to find: the loss is flat
    y = x[:, 1] + rng.standard_normal(100)
    one = cross_validate(Dataset(x, y), 0.3, grid=[0.05], folds=5, penalty_factor=pf)
    full = fit_penalized_als(Dataset(x, y), 0.3, lasso(0.05), penalty_factor=pf)
    assert one.lambda_star == 0.05 and np.allclose(one.fit.beta_hat, full.beta_hat, atol=1e-8)


def test_cv_curve_matches_least_squares_lasso_cv():
    cfg = StudyConfig(n=200, p=100, tau=0.5)
    data, _ = gen_replicate(cfg, 0)
    cv = cross_validate(data, 0.5, folds=10, seed=4, n_lambda=20, stream_id=1)
    folds = fold_assignment(data.n, 10, 4, 1)
    x, y = data.x, data.y
    ref = []
    for lam in cv.grid:
        losses = []
        for k in range(10):
            tr, te = folds != k, folds == k
            b = lasso_ls(x[tr], y[tr], 2 * lam)
            losses.append(np.mean(0.25 * (y[te] - x[te] @ b) ** 2))
        ref.append(np.mean(losses))
    assert np.max(np.abs(cv.cv_mean / np.array(ref) - 1)) <= 0.02


# ------------------------------------------------------------ node-wise


def test_exact_inverse_rows_have_zero_off_diagonal():
    rng = np.random.default_rng(25)
    x = rng.standard_normal((200, 6))
    data = Dataset(x, x[:, 0] + rng.standard_normal(200))
    fit = fit_penalized_als(data, 0.4, lasso(0.05))
    pe = nodewise_precision(data, fit, lambdas=0.0)
    off = pe.theta @ pe.gram - np.eye(6)
    assert np.max(np.abs(off)) <= 1e-6


def test_lasso_relaxation_bound_is_lambda_over_phi2():
    rng = np.random.default_rng(26)
    x = rng.standard_normal((150, 40))
    x[:, 1:] += 0.4 * x[:, :-1]
    data = Dataset(x, x[:, :2] @ [1.0, 1.0] + rng.standard_normal(150))
    fit = fit_penalized_als(data, 0.2, lasso(0.05))
    pe = nodewise_precision(data, fit, lambdas=0.03)
    m = pe.theta @ pe.gram
    sup_off = np.max(np.abs(m - np.diag(np.diag(m))))
    assert sup_off <= np.max(pe.lambdas / pe.phi2) + 1e-8


# ------------------------------------------------------------ inference


def test_perfect_fit_gives_no_correction_and_degenerate_covariance():
    rng = np.random.default_rng(27)
    x = rng.standard_normal((50, 4))
    data = Dataset(x, x @ [1.0, 0.0, -1.0, 2.0])
    fit = fit_penalized_als(data, 0.3, lasso(0.0))
    pe = nodewise_precision(data, fit, lambdas=0.0)
    dr = debias(data, fit, pe)
    assert np.allclose(dr.beta_de, fit.beta_hat, atol=1e-10)
    assert np.max(np.abs(dr.omega)) <= 1e-20 and dr.degenerate.all()
    assert wald_test(dr, np.eye(4)[:1], on_degenerate="flag").degenerate


def test_single_covariate_unpenalized_correction_vanishes():
    rng = np.random.default_rng(28)
    x = rng.standard_normal((40, 2))
    data = Dataset(x, 0.5 * x[:, 0] + rng.standard_normal(40))
    fit = fit_penalized_als(data, 0.7, lasso(0.0))
    dr = debias(data, fit, nodewise_precision(data, fit, lambdas=0.0))
    assert np.max(np.abs(dr.beta_de - fit.beta_hat)) <= 1e-10


def test_wald_at_the_null_point():
    dr = DebiasResult(np.array([0.3, -0.2]), np.eye(2), np.ones(2) / 10, 100)
    wt = wald_test(dr, np.eye(2), np.array([0.3, -0.2]))
    assert wt.statistic == 0.0 and wt.p_value == 1.0


def test_interval_examples():
    dr = DebiasResult(np.array([0.1, 0.0]), np.diag([0.05**2 * 100, 0.0]), np.array([0.05, 0.0]), 100)
    lo, hi, deg = confidence_intervals(dr, 0.05)
    assert lo[0] == pytest.approx(0.1 - 1.959964 * 0.05, abs=1e-7)
    assert hi[0] == pytest.approx(0.1 + 1.959964 * 0.05, abs=1e-7)
    assert lo[1] == hi[1] == 0.0 and deg.tolist() == [False, True]
    widths = [np.diff(confidence_intervals(dr, a)[:2], axis=0)[0, 0] for a in (0.01, 0.05, 0.2, 0.5, 0.9)]
    assert all(a > b for a, b in zip(widths, widths[1:]))


def test_delta_terms_vanish_at_the_truth():
    rng = np.random.default_rng(29)
    x = rng.standard_normal((100, 8))
    b = np.array([1.0, 0, 0, -1.0, 0, 0, 0, 0.5])
    data = Dataset(x, x @ b + rng.standard_normal(100))
    fit = fit_penalized_als(data, 0.2, lasso(0.0))
    fit.beta_hat[:] = b
    pe = nodewise_precision(data, fit, lambdas=0.05)
    assert delta_diagnostics(data, fit, pe, b) == (0.0, 0.0)


def test_delta_terms_shrink_with_sample_size():
    """Median over 50 replicates per n of the scaled remainders, theory-rate tuning."""
    medians = {}
    for n in (200, 400, 800):
        cfg = StudyConfig(n=n, p=100, tau=0.1, seed=3)
        lam = 0.5 * math.sqrt(math.log(cfg.p) / n)
        vals = []
        for i in range(50):
            data, beta = gen_replicate(cfg, i)
            fit = fit_penalized_als(data, cfg.tau, lasso(lam))
            pe = nodewise_precision(data, fit, lambdas=2 * lam)
            vals.append(delta_diagnostics(data, fit, pe, beta))
        medians[n] = np.median(np.array(vals), axis=0)
    print({n: m.round(4).tolist() for n, m in medians.items()})
    for term in (0, 1):
        seq = [medians[n][term] for n in (200, 400, 800)]
        assert seq[0] > seq[1] > seq[2], (term, seq)


# ------------------------------------------------------------ distributions


def test_normal_cdf_examples():
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(40.0) == 1.0
    # Taylor series of the error function
    x = 1.959964 / math.sqrt(2)
    erf = 2 / math.sqrt(math.pi) * sum((-1) ** k * x ** (2 * k + 1) / (math.factorial(k) * (2 * k + 1)) for k in range(60))
    assert normal_cdf(1.959964) == pytest.approx(0.5 * (1 + erf), abs=1e-12)
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)


def test_chi2_examples():
    assert chi2_cdf(0.0, 3) == 0.0 and chi2_sf(0.0, 3) == 1.0
    from debiased_expectile import chi2_quantile

    assert chi2_quantile(0.95, 1) == pytest.approx(3.841459, abs=1e-5)
    assert chi2_quantile(0.95, 3) == pytest.approx(7.814728, abs=1e-5)
    assert integrate.quad(lambda t: t ** 0.5 * math.exp(-t / 2) / (2**1.5 * math.gamma(1.5)), 0, 7.814728)[0] == \
        pytest.approx(0.95, abs=1e-6)


def test_stream_examples():
    a = RngStream(1, 0).standard_normal(2)
    b = RngStream(1, 0).standard_normal(2)
    assert a.tolist() == b.tolist() == [0.19307435297586037, -1.828363297197155]
    t = RngStream(3, 1).student_t4(10**6)
    assert 1.9 <= t.var() <= 2.1
    z = RngStream(4, 0).multivariate_normal(np.eye(3), 10**5)
    assert np.max(np.abs(z.T @ z / 10**5 - np.eye(3))) <= 0.02


# ------------------------------------------------------------ simulation


def test_covariance_examples():
    s = make_sigma(CovarianceDesign("toeplitz", 3, xi=0.5)).sigma
    assert s.tolist() == [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]]
    assert np.array_equal(make_sigma(CovarianceDesign("toeplitz", 5, xi=0.0)).sigma, np.eye(5))
    a = 0.3 * (np.eye(4, k=1) + np.eye(4, k=-1))
    lmin = np.linalg.eigvalsh(a)[0]
    m = make_sigma(CovarianceDesign("scalefree", 4, varsigma=1)).matrix
    d = np.array([1.0, 1.0, 3.0, 3.0])
    assert np.allclose(m, d[:, None] * (a + (abs(lmin) + 0.2) * np.eye(4)) * d[None, :], atol=1e-14)
    assert np.max(np.abs(m @ np.linalg.inv(m) - np.eye(4))) <= 1e-10


def test_replicate_examples():
    cfg = StudyConfig(n=50, p=20, tau=0.5)
    (d1, _), (d2, _) = gen_replicate(cfg, 4), gen_replicate(cfg, 4)
    assert d1.x.tobytes() == d2.x.tobytes() and d1.y.tobytes() == d2.y.tobytes()
    # at tau = 0.5 the centring term vanishes: y - X beta is the raw normal draw
    assert scalar_expectile("normal", 0.5) == 0.0
    big = StudyConfig(n=10**6, p=20, tau=0.1)
    data, beta = gen_replicate(big, 0)
    assert abs(scalar_expectile(data.y - data.x @ beta, 0.1)) <= 0.01


def test_noise_free_null_never_rejects():
    cfg = StudyConfig(n=100, p=30, error="none", hypotheses=((2,),), replicates=3, folds=5, seed=6)
    res = run_study(cfg)
    assert res.rejection_rate == 0.0
    assert hypothesis_matrix((2,), 30)[0, 1] == 1.0
