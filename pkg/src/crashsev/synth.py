"""Synthetic crash data from known models, and independent probability oracles."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import (REFERENCE_SEGMENT_COUNTS, SEVERITY_CLASSES, Area, CovariateKind,
                     CrashRecord, Dataset, Lighting, concat)
from .errors import ArgumentError, ResourceError
from .model import (Design, Likelihood, ModelSpec, ParameterVector, _record_design,
                    as_theta, mnl_probability)


@dataclass(frozen=True)
class CovariateGenerator:
    """``indicator`` (probability ``p``), ``uniform`` (``low``, ``high``) or
    ``normal`` (``mean``, ``sd``)."""

    name: str
    kind: str = "normal"
    p: float = 0.5
    low: float = 0.0
    high: float = 1.0
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.kind not in ("indicator", "uniform", "normal"):
            raise ArgumentError(f"unknown covariate generator kind {self.kind!r}")
        if self.kind == "indicator" and not 0.0 < self.p < 1.0:
            raise ArgumentError(f"indicator probability must lie in (0, 1), got {self.p}")

    @property
    def covariate_kind(self) -> CovariateKind:
        return CovariateKind.INDICATOR if self.kind == "indicator" else CovariateKind.CONTINUOUS

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "indicator":
            return (rng.random(n) < self.p).astype(float)
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, n)
        return rng.normal(self.mean, self.sd, n)

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind}
        if self.kind == "indicator":
            d["p"] = self.p
        elif self.kind == "uniform":
            d.update(low=self.low, high=self.high)
        else:
            d.update(mean=self.mean, sd=self.sd)
        return d


@dataclass(frozen=True)
class SegmentDgp:
    area: Area
    lighting: Lighting
    weight: float = 1.0
    overrides: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "area", Area.parse(self.area))
        object.__setattr__(self, "lighting", Lighting.parse(self.lighting))


@dataclass(frozen=True)
class DgpSpec:
    """A data-generating model: specification, true parameters, covariate
    generators, segment mix with per-segment parameter overrides, and seed."""

    spec: ModelSpec
    params: ParameterVector
    covariates: tuple
    seed: int
    segments: tuple = (SegmentDgp(Area.RURAL, Lighting.DAYLIGHT),)

    def __post_init__(self):
        if self.seed is None:
            raise ArgumentError("a DGP needs an explicit seed")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "segments", tuple(self.segments))
        names = [g.name for g in self.covariates]
        missing = [v for v in self.spec.variables if v not in names]
        if missing:
            raise ArgumentError(f"no generator for covariate(s) {missing}")
        self.params.to_array(self.spec)

    def segment_params(self, seg: SegmentDgp) -> ParameterVector:
        fixed = dict(self.params.fixed)
        random = dict(self.params.random)
        for k, v in seg.overrides.items():
            if k in random:
                random[k] = tuple(v)
            elif k in fixed:
                fixed[k] = float(v)
            else:
                raise ArgumentError(f"override for unknown coefficient {k!r}")
        return ParameterVector(fixed, random)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.spec.to_dict(),
            "params": {"fixed": dict(self.params.fixed),
                       "random": {k: list(v) for k, v in self.params.random.items()}},
            "covariates": [g.to_dict() for g in self.covariates],
            "segments": [{"area": s.area.value, "lighting": s.lighting.value,
                          "weight": s.weight,
                          "overrides": {k: (list(v) if isinstance(v, (tuple, list)) else v)
                                        for k, v in s.overrides.items()}}
                         for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpSpec":
        spec = ModelSpec.from_dict(d["model"])
        p = d.get("params", {})
        params = ParameterVector(p.get("fixed", {}),
                                 {k: tuple(v) for k, v in p.get("random", {}).items()})
        gens = tuple(CovariateGenerator(**g) for g in d["covariates"])
        segs = tuple(SegmentDgp(s["area"], s["lighting"], s.get("weight", 1.0),
                                s.get("overrides", {}))
                     for s in d.get("segments", [{"area": "Rural", "lighting": "Daylight"}]))
        return cls(spec, params, gens, d["seed"], segs)


def allocate(n: int, weights: Sequence[float]) -> list[int]:
    """Split ``n`` proportionally to ``weights`` by largest remainder."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ArgumentError("segment weights must be non-negative and not all zero")
    exact = n * w / w.sum()
    base = np.floor(exact).astype(int)
    order = np.argsort(-(exact - base), kind="stable")
    base[order[: n - base.sum()]] += 1
    return base.tolist()


def simulate_dataset(dgp: DgpSpec, n: int) -> Dataset:
    """Forward-simulate ``n`` crashes: covariates, per-crash coefficients,
    Gumbel errors, and the utility-maximizing severity."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    rng = np.random.default_rng(dgp.seed)
    spec = dgp.spec
    names = tuple(g.name for g in dgp.covariates)
    kinds = {g.name: g.covariate_kind for g in dgp.covariates}
    alt_class = np.array([SEVERITY_CLASSES.index(a) for a in spec.alternatives])
    parts = []
    for seg, count in zip(dgp.segments, allocate(n, [s.weight for s in dgp.segments])):
        if count == 0:
            continue
        X = np.column_stack([g.sample(rng, count) for g in dgp.covariates])
        placeholder = Dataset(np.full(count, alt_class[0]), [seg.area.value] * count,
                              [seg.lighting.value] * count, X, names, kinds)
        des = Design(placeholder, spec)
        beta, mu, sigma = des.split(as_theta(spec, dgp.segment_params(seg)))
        if des.kr:
            coef = mu + sigma * rng.standard_normal((count, 1, des.kr))
            V = des.utilities(beta, coef)[:, 0, :]
        else:
            V = des.utilities(beta, mu)
        u = rng.random(V.shape)
        gumbel = -np.log(-np.log(u))
        choice = np.argmax(V + gumbel, axis=1)
        parts.append(Dataset(alt_class[choice], placeholder.area, placeholder.lighting,
                             X, names, kinds))
    return concat(parts)


def quadrature_probability_oracle(record: CrashRecord, spec: ModelSpec, params,
                                  n_nodes: int = 200) -> np.ndarray:
    """Mixed-logit probabilities by a dense trapezoid rule over z in [-8, 8]
    (tensor grid for two random coefficients)."""
    kr = len(spec.random)
    if kr > 2:
        raise ArgumentError("quadrature oracle supports at most two random coefficients")
    if n_nodes < 100:
        raise ArgumentError("quadrature oracle needs n_nodes >= 100")
    des = _record_design(record, spec)
    beta, mu, sigma = des.split(as_theta(spec, params))
    if kr == 0:
        return mnl_probability(des.utilities(beta, mu))[0]
    z = np.linspace(-8.0, 8.0, n_nodes)
    w = np.exp(-0.5 * z * z)
    w[[0, -1]] *= 0.5
    if kr == 1:
        nodes, weights = z[:, None], w
    else:
        zz = np.array(list(itertools.product(z, z)))
        nodes, weights = zz, np.outer(w, w).ravel()
    weights = weights / weights.sum()
    V = des.utilities(beta, (mu + sigma * nodes)[None])
    return np.einsum("r,rj->j", weights, mnl_probability(V)[0])


def enumerate_small_mnl(dataset: Dataset, spec: ModelSpec, grid: Mapping[str, Sequence[float]]):
    """Brute-force the best grid point by exact log-likelihood.

    ``grid`` maps each free parameter name to candidate values. Returns
    ``(point, loglik)`` with ``point`` ordered as ``spec.param_names``.
    """
    if len(dataset) > 12:
        raise ArgumentError("enumeration oracle is limited to 12 observations")
    if spec.random:
        raise ArgumentError("enumeration oracle handles fixed-coefficient logit only")
    if spec.n_params > 3:
        raise ArgumentError("enumeration oracle is limited to 3 free parameters")
    if set(grid) != set(spec.param_names):
        raise ArgumentError("grid must list every parameter of the specification")
    axes = [np.asarray(grid[name], dtype=float) for name in spec.param_names]
    size = math.prod(len(a) for a in axes)
    if size > 1e7:
        raise ResourceError(f"grid of {size} points exceeds the 1e7 limit")
    lik = Likelihood(dataset, spec)
    best, best_ll = None, -math.inf
    for point in itertools.product(*axes):
        ll = lik.loglik(np.array(point))
        if ll > best_ll:
            best, best_ll = np.array(point), ll
    return best, best_ll


def reference_mix_dgp(seed=2017, n_dawn_dusk=0) -> DgpSpec:
    """Intercept-only DGP whose segment weights are the reference segment counts.

    With ``n = 41461 + n_dawn_dusk`` the segment sizes reproduce the counts
    exactly; ``n_dawn_dusk`` extra records are labelled Dawn.
    """
    spec = ModelSpec.build({SEVERITY_CLASSES[0]: ["const"], SEVERITY_CLASSES[1]: ["const"]})
    # class shares 1.1% / 4.1% / 94.8% in log-odds against the base
    params = ParameterVector({"Major:const": math.log(462 / 39294),
                              "Minor:const": math.log(1705 / 39294)})
    segs = [SegmentDgp(k.area, k.lighting, c) for k, c in REFERENCE_SEGMENT_COUNTS.items()]
    if n_dawn_dusk:
        segs.append(SegmentDgp(Area.RURAL, Lighting.DAWN, n_dawn_dusk))
    gens = (CovariateGenerator("weekday", "indicator", p=0.909),
            CovariateGenerator("LogAADT", "normal", mean=10.0, sd=1.0))
    return DgpSpec(spec, params, gens, seed, tuple(segs))
