import numpy as np
import pytest

from crashsev.domain import Area, Lighting
from crashsev.model import ModelSpec, ParameterVector
from crashsev.synth import CovariateGenerator, DgpSpec, SegmentDgp, simulate_dataset


def mnl_dgp(seed=1, overrides=None, segments=None):
    spec = ModelSpec.build({"Major": ["const", "x1", "d1"], "Minor": ["const", "x2"]})
    params = ParameterVector({"Major:const": -1.2, "Major:x1": 0.8, "Major:d1": 0.5,
                              "Minor:const": -0.4, "Minor:x2": -0.6})
    gens = (CovariateGenerator("x1", "normal"), CovariateGenerator("x2", "normal"),
            CovariateGenerator("d1", "indicator", p=0.4))
    segs = segments or (SegmentDgp(Area.RURAL, Lighting.DAYLIGHT, 1.0, overrides or {}),)
    return DgpSpec(spec, params, gens, seed, segs)


def mixed_dgp(seed=2):
    spec = ModelSpec.build({"Major": ["const", "x1"], "Minor": ["const", "x2"]},
                           random=["Major:x1"])
    params = ParameterVector({"Major:const": -0.5, "Minor:const": -0.2, "Minor:x2": 0.7},
                             {"Major:x1": (-0.8, 1.5)})
    gens = (CovariateGenerator("x1", "normal"), CovariateGenerator("x2", "normal"))
    return DgpSpec(spec, params, gens, seed)


@pytest.fixture(scope="session")
def mnl_data():
    dgp = mnl_dgp()
    return dgp, simulate_dataset(dgp, 4000)


@pytest.fixture(scope="session")
def mnl_fit(mnl_data):
    from crashsev.estimate import fit_mnl
    dgp, data = mnl_data
    return fit_mnl(data, dgp.spec)


@pytest.fixture(scope="session")
def mixed_data():
    dgp = mixed_dgp()
    return dgp, simulate_dataset(dgp, 1500)


@pytest.fixture(scope="session")
def mixed_fit(mixed_data):
    from crashsev.estimate import fit_mixed_logit
    dgp, data = mixed_data
    return fit_mixed_logit(data, dgp.spec, n_draws=100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
