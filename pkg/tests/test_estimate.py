import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import optimize

from crashsev.domain import CovariateKind, Dataset
from crashsev.errors import ConvergenceError, DomainError, SingularHessianError
from crashsev.estimate import (FitResult, bfgs_maximize, evaluate_loglik, fit, fit_mixed_logit,
                               fit_mnl, mcfadden_rho2, refine_specification, restricted_loglik,
                               retention_flags, retention_threshold)
from crashsev.model import Likelihood, ModelSpec, ParameterVector
from crashsev.synth import CovariateGenerator, DgpSpec, enumerate_small_mnl, simulate_dataset

from cases import random_dataset
from conftest import mnl_dgp

# (restricted LL, converged LL, printed rho2) of six segment model footers
FOOTERS = [(-12117.69, -3084.30, 0.745), (-4865.75, -1359.13, 0.721),
           (-903.06, -126.29, 0.860), (-22106.27, -2938.57, 0.867),
           (-2286.21, -421.43, 0.816), (-3270.57, -466.72, 0.857)]


@pytest.mark.parametrize("ll_r,ll_c,rho", FOOTERS)
def test_rho2_footers(ll_r, ll_c, rho):
    assert abs(mcfadden_rho2(ll_c, ll_r) - rho) <= 0.001


def test_footer_restricted_values_are_ll_at_zero():
    # the footers' "restricted" values coincide with N ln(1/3), the equal-shares model
    for n, (ll_r, _, _) in zip((11030, 4429, 822, 20122, 2081, 2977), FOOTERS):
        assert n * math.log(1 / 3) == pytest.approx(ll_r, abs=0.01)


def test_rho2_domain():
    with pytest.raises(DomainError):
        mcfadden_rho2(-10.0, -5.0)
    with pytest.raises(DomainError):
        mcfadden_rho2(0.0, -5.0)
    assert mcfadden_rho2(-5.0, -5.0) == 0.0


def test_restricted_loglik_is_constants_only_fit(mnl_data):
    _, d = mnl_data
    f = fit_mnl(d, ModelSpec.build({"Major": ["const"], "Minor": ["const"]}))
    assert f.ll_converged == pytest.approx(restricted_loglik(d.class_counts()), abs=1e-8)
    assert f.rho2 == pytest.approx(0.0, abs=1e-10)


def test_bfgs_quadratic_and_rosenbrock():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -2.0])
    res = bfgs_maximize(lambda x: (-(0.5 * x @ A @ x) + b @ x, -(A @ x) + b), np.zeros(2),
                        gtol=1e-12)
    assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-9)

    def rosen(x):
        return -optimize.rosen(x), -optimize.rosen_der(x)

    res = bfgs_maximize(rosen, np.array([-1.2, 1.0]), gtol=1e-10)
    assert_allclose(res.x, [1.0, 1.0], atol=1e-5)


def test_bfgs_iteration_cap():
    with pytest.raises(ConvergenceError) as exc:
        bfgs_maximize(lambda x: (-optimize.rosen(x), -optimize.rosen_der(x)),
                      np.array([-1.2, 1.0]), max_iter=3)
    assert exc.value.best is not None


def test_mnl_matches_independent_optimizer(mnl_data):
    dgp, d = mnl_data
    f = fit_mnl(d, dgp.spec)
    lik = Likelihood(d, dgp.spec)
    ref = optimize.minimize(lambda t: -lik.loglik(t), np.zeros(dgp.spec.n_params),
                            method="Nelder-Mead",
                            options={"xatol": 1e-9, "fatol": 1e-10, "maxiter": 40000,
                                     "maxfev": 40000})
    assert_allclose(f.theta, ref.x, atol=2e-4)
    # the default relative-gradient stop leaves the LL within ~1e-7 of the optimum
    assert f.ll_converged >= -ref.fun - 1e-6
    assert f.convergence.converged


def test_mnl_matches_grid_enumeration():
    rng = np.random.default_rng(5)
    d = random_dataset(rng, 12)
    spec = ModelSpec.build({"Major": ["x1"], "Minor": ["x3"]})
    f = fit_mnl(d, spec)
    grid = {n: np.linspace(v - 0.05, v + 0.05, 21) for n, v in zip(spec.param_names, f.theta)}
    point, ll = enumerate_small_mnl(d, spec, grid)
    assert_allclose(point, f.theta, atol=0.005)
    assert f.ll_converged >= ll - 1e-12


def test_hessian_and_bhhh_standard_errors_agree(mnl_data):
    dgp, d = mnl_data
    h = fit_mnl(d, dgp.spec)
    b = fit_mnl(d, dgp.spec, covariance="bhhh")
    assert_allclose(h.std_errors, b.std_errors, rtol=0.1)
    assert_allclose(h.t_stats, h.theta / h.std_errors)


def test_mnl_recovery(mnl_fit, mnl_data):
    dgp, _ = mnl_data
    truth = dgp.params.to_array(dgp.spec)
    z = (mnl_fit.theta - truth) / mnl_fit.std_errors
    assert np.all(np.abs(z) < 4)
    assert mnl_fit.ll_zero == pytest.approx(-4000 * math.log(3))
    assert 0 < mnl_fit.rho2 < 1


def test_hold_parameters(mnl_data):
    dgp, d = mnl_data
    f = fit_mnl(d, dgp.spec, hold={"Major:d1": 0.5})
    i = f.param_names.index("Major:d1")
    assert f.theta[i] == 0.5 and np.isnan(f.std_errors[i])
    assert f.n_estimated == dgp.spec.n_params - 1
    with pytest.raises(DomainError):
        fit_mnl(d, dgp.spec, hold={"nope": 1.0})


def test_collinear_design_is_singular():
    rng = np.random.default_rng(3)
    d = random_dataset(rng, 300)
    X = np.column_stack([d.X, 2.0 * d.X[:, 0]])
    kinds = {**d.kinds, "x1b": CovariateKind.CONTINUOUS}
    d2 = Dataset(d.severity, d.area, d.lighting, X, d.names + ("x1b",), kinds)
    spec = ModelSpec.build({"Major": ["const", "x1", "x1b"], "Minor": ["const"]})
    with pytest.raises(SingularHessianError):
        fit_mnl(d2, spec)


def test_separation_detected():
    rng = np.random.default_rng(4)
    d = random_dataset(rng, 200)
    sev = np.where(d.X[:, 0] > 0, 0, 2)
    sev[:5] = 1
    X = d.X.copy()
    X[:5, 0] = -1.0
    d2 = Dataset(sev, d.area, d.lighting, X, d.names, d.kinds)
    with pytest.raises(ConvergenceError, match="separated"):
        fit_mnl(d2, ModelSpec.build({"Major": ["const", "x1"], "Minor": ["const"]}))


def test_missing_outcome_class():
    rng = np.random.default_rng(6)
    d = random_dataset(rng, 50)
    d = d.subset(d.severity != 1)
    with pytest.raises(DomainError, match="Minor"):
        fit_mnl(d, ModelSpec.build({"Major": ["const"], "Minor": ["const"]}))


def test_fit_result_round_trip(mnl_fit):
    back = FitResult.from_dict(mnl_fit.to_dict())
    assert_array_equal(back.theta, mnl_fit.theta)
    assert_array_equal(back.covariance, mnl_fit.covariance)
    assert back.ll_converged == mnl_fit.ll_converged
    assert back.spec == mnl_fit.spec
    assert evaluate_loglik(back, simulate_dataset(mnl_dgp(), 4000)) == mnl_fit.ll_converged


def test_mixed_fit_properties(mixed_fit, mixed_data):
    dgp, d = mixed_data
    assert mixed_fit.is_mixed and mixed_fit.n_draws == 100
    name = "sd.Major:x1"
    assert mixed_fit.reported_value(name) == abs(mixed_fit.theta[mixed_fit.param_names.index(name)])
    assert abs(mixed_fit.estimates.random["Major:x1"][0] - (-0.8)) < 0.5
    assert mixed_fit.ll_converged == evaluate_loglik(mixed_fit, d)


def test_mixed_fit_deterministic(mixed_data, mixed_fit):
    dgp, d = mixed_data
    again = fit_mixed_logit(d, dgp.spec, n_draws=100)
    assert_array_equal(again.theta, mixed_fit.theta)
    assert again.ll_converged == mixed_fit.ll_converged


def test_mixed_beats_mnl_on_heterogeneous_data(mixed_data, mixed_fit):
    dgp, d = mixed_data
    mnl = fit(d, dgp.spec.without_random())
    assert mixed_fit.ll_converged > mnl.ll_converged


def test_fit_dispatch_rejects_wrong_kind(mixed_data, mnl_data):
    with pytest.raises(DomainError):
        fit_mnl(mixed_data[1], mixed_data[0].spec)
    with pytest.raises(DomainError):
        fit_mixed_logit(mnl_data[1], mnl_data[0].spec)


def test_retention_threshold():
    assert retention_threshold(0.90) == pytest.approx(1.645, abs=5e-4)
    assert retention_threshold(0.95) == pytest.approx(1.960, abs=5e-4)


def test_retention_flags_and_elimination():
    dgp = mnl_dgp(seed=9)
    d = simulate_dataset(dgp, 3000)
    rng = np.random.default_rng(0)
    noise = rng.normal(size=len(d))
    d2 = Dataset(d.severity, d.area, d.lighting, np.column_stack([d.X, noise]),
                 d.names + ("noise",), {**d.kinds, "noise": CovariateKind.CONTINUOUS})
    spec = ModelSpec.build({"Major": ["const", "x1", "d1", "noise"], "Minor": ["const", "x2"]})
    f = fit_mnl(d2, spec)
    flags = retention_flags(f)
    t_noise = f.t_stats[f.param_names.index("Major:noise")]
    if abs(t_noise) < 1.645:
        assert [fl.param for fl in flags] == ["Major:noise"]
    rep = refine_specification(f, dataset=d2, eliminate=True)
    assert rep.final is not None
    assert not retention_flags(rep.final)
    consts = [n for n in rep.final.param_names if n.endswith(":const")]
    assert consts == ["Major:const", "Minor:const"]


def test_constants_never_flagged(mnl_data):
    dgp, d = mnl_data
    f = fit_mnl(d, ModelSpec.build({"Major": ["const", "x1"], "Minor": ["const", "x2"]}),
                hold={})
    assert all(not fl.param.endswith(":const") for fl in retention_flags(f, 0.999999))


def test_random_coefficient_demotion():
    # a random coefficient whose spread is not significant is flagged for demotion
    dgp = mnl_dgp(seed=21)
    d = simulate_dataset(dgp, 1500)
    spec = ModelSpec(dgp.spec.terms, ("Major:x1",))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f = fit_mixed_logit(d, spec, n_draws=50)
    t_sd = f.t_stats[f.param_names.index("sd.Major:x1")]
    flags = retention_flags(f)
    demoted = [fl for fl in flags if fl.action == "demote"]
    assert bool(demoted) == (not abs(t_sd) >= 1.645)


def _ridge_data():
    spec = ModelSpec.build({"Major": ["const", "speed10", "male"], "Minor": ["const", "male"]},
                           random=["Major:speed10"])
    truth = ParameterVector({"Major:const": -4.0, "Major:male": -0.5,
                             "Minor:const": -1.5, "Minor:male": -0.3},
                            {"Major:speed10": (0.3, 0.5)})
    gens = (CovariateGenerator("speed10", "uniform", low=2.0, high=7.0),
            CovariateGenerator("male", "indicator", p=0.55))
    return spec, simulate_dataset(DgpSpec(spec, truth, gens, 7), 4000)


def test_mixed_start_avoids_scale_ridge():
    # from zeros this likelihood is climbed along a ridge where every utility
    # term grows without bound; the fixed-coefficient start finds the interior optimum
    spec, d = _ridge_data()
    f = fit_mixed_logit(d, spec, n_draws=100)
    assert np.all(np.abs(f.theta) < 10) and np.all(np.isfinite(f.std_errors))
    x0 = np.zeros(spec.n_params)
    x0[-1] = 0.5
    with pytest.raises(ConvergenceError, match="ridge") as exc:
        fit_mixed_logit(d, spec, n_draws=100, start=x0, compute_covariance=False)
    assert exc.value.loglik < f.ll_converged
