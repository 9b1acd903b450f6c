import numpy as np
import pytest
from scipy import stats

from crashsev.domain import Area, Lighting, SegmentKey
from crashsev.errors import ArgumentError, ConsistencyError, ConvergenceError, SpecDataMismatch
from crashsev.estimate import fit_mnl
from crashsev.model import ModelSpec, ParameterVector
from crashsev.modeltests import (BatteryError, battery_from_fits, hausman_iia_test,
                                 lr_partition_statistic, lr_partition_test, lr_transfer_test,
                                 run_battery)
from crashsev.synth import CovariateGenerator, DgpSpec, SegmentDgp, simulate_dataset

from conftest import mnl_dgp

FOUR = ((Area.RURAL, Lighting.DAYLIGHT), (Area.RURAL, Lighting.DARK),
        (Area.URBAN, Lighting.DAYLIGHT), (Area.URBAN, Lighting.DARK))


def test_partition_rural_example():
    r = lr_partition_statistic(-4290, [-2886, -1242, -114], 20, [20, 20, 20])
    assert r.statistic == pytest.approx(96.0)
    assert r.df == 40 and r.critical_value == pytest.approx(63.69, abs=0.02)
    assert r.reject_null and r.comment == "LR > χ²"


def test_partition_urban_example():
    r = lr_partition_statistic(-3232, [-2401, -379, -426], 15, [15, 15, 15])
    assert r.statistic == pytest.approx(52.0)
    assert r.df == 30 and r.reject_null


def test_partition_degenerate_and_inconsistent():
    with pytest.raises(ArgumentError):
        lr_partition_statistic(-100.0, [-100.0], 5, [5])
    with pytest.raises(ConsistencyError):
        lr_partition_statistic(-100.0, [-60.0, -45.0], 5, [5, 5])


def test_partition_fit_coverage(mnl_fit):
    with pytest.raises(ConsistencyError):
        lr_partition_test(mnl_fit, [mnl_fit, mnl_fit])


def test_transfer_diagonal_exact_zero(mnl_fit, mnl_data, mixed_fit, mixed_data):
    for f, (_, d) in ((mnl_fit, mnl_data), (mixed_fit, mixed_data)):
        r = lr_transfer_test(f, f, d)
        assert r.statistic == 0.0 and np.copysign(1.0, r.statistic) == 1.0
        assert r.df == f.n_estimated and not r.reject_null


def test_transfer_missing_covariate(mnl_fit, mnl_data):
    _, d = mnl_data
    spec = ModelSpec.build({"Major": ["const", "x1", "x3"], "Minor": ["const"]})
    other = fit_mnl(_with_x3(d), spec)
    with pytest.raises(SpecDataMismatch):
        lr_transfer_test(mnl_fit, other, d)


def _with_x3(d):
    from crashsev.domain import CovariateKind, Dataset
    x3 = np.random.default_rng(99).normal(size=len(d))
    return Dataset(d.severity, d.area, d.lighting, np.column_stack([d.X, x3]),
                   d.names + ("x3",), {**d.kinds, "x3": CovariateKind.CONTINUOUS})


def test_transfer_detects_different_parameters():
    a = simulate_dataset(mnl_dgp(seed=31), 5000)
    b = simulate_dataset(mnl_dgp(seed=32, overrides={"Major:x1": 1.6}), 5000)
    spec = mnl_dgp().spec
    fa, fb = fit_mnl(a, spec), fit_mnl(b, spec)
    r = lr_transfer_test(fa, fb, a)
    assert r.reject_null and r.statistic > 0


def test_results_reproducible(mnl_fit, mnl_data):
    _, d = mnl_data
    assert lr_transfer_test(mnl_fit, mnl_fit, d) == lr_transfer_test(mnl_fit, mnl_fit, d)


def test_hausman_identical_is_zero(mnl_fit):
    r = hausman_iia_test(mnl_fit, mnl_fit)
    assert r.statistic == 0.0 and not r.reject_null


def test_hausman_no_shared_parameters(mnl_fit):
    lone = fit_mnl(simulate_dataset(mnl_dgp(seed=2), 500),
                   ModelSpec.build({"Major": ["const"], "Minor": ["const"]}))
    with pytest.raises(ArgumentError):
        hausman_iia_test(mnl_fit, lone, exclude_constants=True)


def _hausman(d, spec, drop):
    full = fit_mnl(d, spec)
    keep = [a for a in spec.alternatives if a.value != drop]
    code = [a.value for a in spec.alternatives].index(drop)
    restricted = fit_mnl(d.subset(d.severity != code), spec.restrict(keep))
    return hausman_iia_test(full, restricted, 0.95, exclude_constants=True)


@pytest.mark.slow
def test_hausman_null_calibration():
    stats_ = []
    for s in range(200):
        dgp = mnl_dgp(seed=3000 + s)
        stats_.append(_hausman(simulate_dataset(dgp, 5000), dgp.spec, "Minor").statistic)
    stats_ = np.array(stats_)
    rate = np.mean(stats_ > stats.chi2.ppf(0.95, 2))
    # binomial(200, 0.05) lies in [0.02, 0.09] with probability > 0.99
    assert 0.02 <= rate <= 0.09
    assert stats.kstest(stats_, stats.chi2(2).cdf).pvalue > 0.001


@pytest.mark.slow
def test_hausman_power_against_mixed_data():
    true = ModelSpec.build({"Major": ["const", "x1"], "Minor": ["const", "x2"]},
                           random=["Major:x1"])
    params = ParameterVector({"Major:const": 0.0, "Minor:const": 0.0, "Minor:x2": 1.0},
                             {"Major:x1": (1.0, 3.0)})
    gens = (CovariateGenerator("x1"), CovariateGenerator("x2"))
    spec = true.without_random()
    rej = 0
    for s in range(200):
        d = simulate_dataset(DgpSpec(true, params, gens, 7000 + s), 20000)
        rej += _hausman(d, spec, "Major").reject_null
    assert rej / 200 >= 0.80


def _segmented(seed, n_per, het=0.0):
    segs = tuple(SegmentDgp(a, l, 1.0, {"Major:x1": 0.8 + het * (i % 2)})
                 for i, (a, l) in enumerate(FOUR))
    return simulate_dataset(mnl_dgp(seed=seed, segments=segs), n_per * len(FOUR))


def _mnl(d, s):
    return fit_mnl(d, s, compute_covariance=False)


def test_battery_heterogeneous_rejects_everywhere():
    rep = run_battery(_segmented(41, 5000, het=0.5), mnl_dgp().spec, fitter=_mnl)
    assert [r.label for r in rep.partition] == ["full vs segments", "rural vs segments",
                                                "urban vs segments"]
    assert all(r.result.reject_null for r in rep.partition)
    full = rep.partition[0].result
    assert full.df == 3 * mnl_dgp().spec.n_params
    keys, M = rep.transfer_matrix("Rural")
    assert keys == [SegmentKey(Area.RURAL, Lighting.DAYLIGHT), SegmentKey(Area.RURAL, Lighting.DARK)]
    assert np.all(np.diag(M) == 0.0) and np.all(M[~np.eye(2, dtype=bool)] > 20)


def test_battery_homogeneous_mostly_accepts():
    rejects = 0
    for s in range(10):
        rep = run_battery(_segmented(500 + s, 1000), mnl_dgp().spec, fitter=_mnl)
        rejects += sum(r.result.reject_null for r in rep.partition)
    # 30 tests at the 1% level; P(more than 3 rejections) < 0.01
    assert rejects <= 3


def test_battery_workers_do_not_change_results():
    d = _segmented(77, 800, het=0.3)
    a = run_battery(d, mnl_dgp().spec, fitter=_mnl, workers=1).to_dict()
    b = run_battery(d, mnl_dgp().spec, fitter=_mnl, workers=3).to_dict()
    assert a == b


def test_battery_single_segment():
    d = simulate_dataset(mnl_dgp(seed=3), 300)
    rep = run_battery(d, mnl_dgp().spec, fitter=_mnl)
    assert rep.nothing_to_compare and "nothing to compare" in rep.note
    assert battery_from_fits({}, {}, {}).nothing_to_compare


def test_battery_aborts_naming_segment():
    d = _segmented(5, 300)

    def fitter(data, spec):
        if np.all(data.area == "Urban") and np.all(data.lighting == "Dark"):
            raise ConvergenceError("no convergence", None, float("nan"))
        return _mnl(data, spec)

    with pytest.raises(BatteryError) as exc:
        run_battery(d, mnl_dgp().spec, fitter=fitter)
    assert exc.value.segment == SegmentKey(Area.URBAN, Lighting.DARK).label
