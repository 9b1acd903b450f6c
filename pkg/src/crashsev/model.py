"""Utility specification, logit and simulated mixed-logit probabilities, likelihoods."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .domain import SEVERITY_CLASSES, CrashRecord, Dataset, SeverityClass
from .errors import ArgumentError, DomainError, NumericError, SpecDataMismatch
from .numeric import DrawMatrix

logger = logging.getLogger(__name__)

CONSTANT = "const"

# elements of the (obs x draws x alternatives) working array per chunk
_CHUNK_ELEMENTS = 1_500_000


@dataclass(frozen=True)
class Term:
    """``coef * variable`` entering the utility of ``alternative``.

    ``variable == CONSTANT`` marks an alternative-specific constant.
    """

    alternative: SeverityClass
    variable: str
    coef: str

    def __post_init__(self):
        object.__setattr__(self, "alternative", SeverityClass.parse(self.alternative))

    @property
    def is_constant(self) -> bool:
        return self.variable == CONSTANT


def default_coef_id(alternative, variable) -> str:
    return f"{SeverityClass.parse(alternative).value}:{variable}"


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[Term, ...]
    random: tuple[str, ...] = ()
    alternatives: tuple[SeverityClass, ...] = SEVERITY_CLASSES
    base: SeverityClass | None = None

    def __post_init__(self):
        alts = tuple(SeverityClass.parse(a) for a in self.alternatives)
        if len(set(alts)) != len(alts) or len(alts) < 2:
            raise DomainError("a model needs at least two distinct alternatives")
        terms = tuple(self.terms)
        seen = set()
        for t in terms:
            if t.alternative not in alts:
                raise DomainError(f"term {t.coef!r} refers to alternative "
                                  f"{t.alternative.value} outside the choice set")
            if (t.alternative, t.variable) in seen:
                raise DomainError(f"variable {t.variable!r} entered twice in "
                                  f"{t.alternative.value}")
            seen.add((t.alternative, t.variable))
        with_const = {t.alternative for t in terms if t.is_constant}
        base = self.base
        if base is None:
            free = [a for a in reversed(alts) if a not in with_const]
            if not free:
                raise DomainError("every alternative has a constant; none can be the base")
            base = free[0]
        base = SeverityClass.parse(base)
        if base not in alts:
            raise DomainError(f"base alternative {base.value} is not in the choice set")
        if base in with_const:
            raise DomainError(f"base alternative {base.value} must not carry a constant")
        ids = self.coef_ids_of(terms)
        unknown = [r for r in self.random if r not in ids]
        if unknown:
            raise DomainError(f"random coefficient(s) {unknown} appear in no term")
        if len(set(self.random)) != len(self.random):
            raise DomainError("duplicate random coefficient id")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "alternatives", alts)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "random", tuple(r for r in ids if r in self.random))

    @staticmethod
    def coef_ids_of(terms) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.coef for t in terms))

    @classmethod
    def build(cls, terms: Mapping, random: Sequence[str] = (), **kwargs) -> "ModelSpec":
        """Shorthand: ``{alternative: [variable, ...]}`` with default coefficient ids."""
        out = []
        for alt, variables in terms.items():
            for var in variables:
                out.append(Term(alt, var, default_coef_id(alt, var)))
        return cls(tuple(out), tuple(random), **kwargs)

    @property
    def coef_ids(self) -> tuple[str, ...]:
        return self.coef_ids_of(self.terms)

    @property
    def fixed_ids(self) -> tuple[str, ...]:
        return tuple(c for c in self.coef_ids if c not in self.random)

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(t.variable for t in self.terms if not t.is_constant))

    @property
    def param_names(self) -> tuple[str, ...]:
        """Free-parameter layout: fixed coefficients, random means, random spreads."""
        return self.fixed_ids + self.random + tuple(sd_name(r) for r in self.random)

    @property
    def n_params(self) -> int:
        return len(self.fixed_ids) + 2 * len(self.random)

    def without_random(self) -> "ModelSpec":
        return ModelSpec(self.terms, (), self.alternatives, self.base)

    def restrict(self, alternatives) -> "ModelSpec":
        """The same specification on a reduced choice set."""
        keep = tuple(SeverityClass.parse(a) for a in alternatives)
        terms = tuple(t for t in self.terms if t.alternative in keep)
        ids = self.coef_ids_of(terms)
        base = self.base if self.base in keep else None
        return ModelSpec(terms, tuple(r for r in self.random if r in ids), keep, base)

    def to_dict(self) -> dict:
        return {
            "alternatives": [a.value for a in self.alternatives],
            "base": self.base.value,
            "terms": [{"alternative": t.alternative.value, "variable": t.variable,
                       "coef": t.coef} for t in self.terms],
            "random": list(self.random),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        terms = tuple(
            Term(t["alternative"], t["variable"],
                 t.get("coef") or default_coef_id(t["alternative"], t["variable"]))
            for t in d.get("terms", ()))
        alts = tuple(d.get("alternatives", [a.value for a in SEVERITY_CLASSES]))
        return cls(terms, tuple(d.get("random", ())), alts, d.get("base"))


def sd_name(coef_id: str) -> str:
    return f"sd.{coef_id}"


@dataclass(frozen=True)
class ParameterVector:
    """Fixed coefficients and ``(mean, spread)`` pairs for random ones.

    Spreads are stored unconstrained; ``N(mu, s)`` and ``N(mu, -s)`` are the
    same distribution and reports use ``|s|``.
    """

    fixed: Mapping[str, float] = field(default_factory=dict)
    random: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        fixed = {k: float(v) for k, v in self.fixed.items()}
        random = {k: (float(m), float(s)) for k, (m, s) in self.random.items()}
        vals = list(fixed.values()) + [x for pair in random.values() for x in pair]
        if not all(math.isfinite(v) for v in vals):
            raise NumericError("parameter values must be finite")
        object.__setattr__(self, "fixed", MappingProxyType(fixed))
        object.__setattr__(self, "random", MappingProxyType(random))

    def to_array(self, spec: ModelSpec) -> np.ndarray:
        try:
            return np.array([self.fixed[c] for c in spec.fixed_ids]
                            + [self.random[r][0] for r in spec.random]
                            + [self.random[r][1] for r in spec.random], dtype=float)
        except KeyError as exc:
            raise ArgumentError(f"parameter vector lacks coefficient {exc.args[0]!r}") from None

    @classmethod
    def from_array(cls, spec: ModelSpec, theta) -> "ParameterVector":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (spec.n_params,):
            raise ArgumentError(f"expected {spec.n_params} parameters, got {theta.shape}")
        kf, kr = len(spec.fixed_ids), len(spec.random)
        fixed = dict(zip(spec.fixed_ids, theta[:kf].tolist()))
        random = {r: (theta[kf + d], theta[kf + kr + d]) for d, r in enumerate(spec.random)}
        return cls(fixed, random)

    def coefficient(self, coef_id: str) -> float:
        """Point value: the fixed coefficient or the random coefficient's mean."""
        if coef_id in self.fixed:
            return self.fixed[coef_id]
        return self.random[coef_id][0]

    def zero_spread(self) -> "ParameterVector":
        return ParameterVector(self.fixed, {k: (m, 0.0) for k, (m, _) in self.random.items()})


def as_theta(spec: ModelSpec, params) -> np.ndarray:
    if isinstance(params, ParameterVector):
        return params.to_array(spec)
    theta = np.asarray(params, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ArgumentError(f"expected {spec.n_params} parameters, got {theta.shape}")
    return theta


@dataclass(frozen=True)
class LikelihoodValue:
    total: float
    contributions: np.ndarray


def mnl_probability(utilities):
    """Logit probabilities along the last axis, computed with max-subtraction."""
    v = np.asarray(utilities, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite utility")
    ex = np.exp(v - v.max(axis=-1, keepdims=True))
    return ex / ex.sum(axis=-1, keepdims=True)


def _draw_average(P):
    """Mean over the draw axis (1) as first draw plus mean deviation, which is
    exact when every draw gives the same probabilities."""
    first = P[:, :1]
    return first[:, 0] + (P - first).mean(axis=1)


class Design:
    """Dataset and specification laid out for vectorized evaluation.

    ``Zf[n, j, k]`` is the covariate multiplying fixed coefficient ``k`` in
    alternative ``j`` for observation ``n``; ``Zr`` likewise for random ones.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec):
        self.spec = spec
        self.n = len(dataset)
        J = len(spec.alternatives)
        missing = [v for v in spec.variables if v not in dataset.names]
        if missing:
            raise SpecDataMismatch(
                f"covariate {missing[0]!r} required by the specification is absent "
                f"from the data")
        alt_col = {a: j for j, a in enumerate(spec.alternatives)}
        class_to_col = np.full(len(SEVERITY_CLASSES), -1)
        for i, c in enumerate(SEVERITY_CLASSES):
            class_to_col[i] = alt_col.get(c, -1)
        chosen = class_to_col[dataset.severity.astype(int)]
        if np.any(chosen < 0):
            bad = int(np.flatnonzero(chosen < 0)[0])
            raise DomainError(f"observation {bad} chose an alternative outside the "
                              f"specification's choice set")
        self.chosen = chosen
        self.J = J

        def tensor(ids):
            Z = np.zeros((self.n, J, len(ids)))
            pos = {c: k for k, c in enumerate(ids)}
            for t in spec.terms:
                if t.coef not in pos:
                    continue
                col = (np.ones(self.n) if t.is_constant
                       else dataset.X[:, dataset.names.index(t.variable)])
                Z[:, alt_col[t.alternative], pos[t.coef]] += col
            return Z

        self.Zf = tensor(spec.fixed_ids)
        self.Zr = tensor(spec.random)
        self.kf = len(spec.fixed_ids)
        self.kr = len(spec.random)

    def utilities(self, beta, coef_random, rows=slice(None)):
        """Systematic utilities.

        ``coef_random`` is either a ``(kr,)`` point or a ``(n, R, kr)`` array of
        realized coefficients, giving ``(n, J)`` or ``(n, R, J)`` output. Terms
        are accumulated in the same order in both cases.
        """
        Zf, Zr = self.Zf[rows], self.Zr[rows]
        V = np.zeros(Zf.shape[:2])
        for k in range(self.kf):
            V = V + beta[k] * Zf[:, :, k]
        coef_random = np.asarray(coef_random, dtype=float)
        if coef_random.ndim == 1:
            for d in range(self.kr):
                V = V + coef_random[d] * Zr[:, :, d]
        else:
            V = V[:, None, :]
            for d in range(self.kr):
                V = V + coef_random[:, :, d, None] * Zr[:, None, :, d]
        return V

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        kf, kr = self.kf, self.kr
        return theta[:kf], theta[kf:kf + kr], theta[kf + kr:]


class Likelihood:
    """(Simulated) log-likelihood of a dataset under a specification.

    Evaluation is chunked over observations; chunks are reduced in a fixed
    order so repeated calls are bit-identical.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec, draws: DrawMatrix | None = None):
        self.design = Design(dataset, spec)
        self.spec = spec
        if spec.random:
            if draws is None:
                raise ArgumentError("a specification with random coefficients needs draws")
            if draws.n_obs != len(dataset) or draws.n_random != len(spec.random):
                raise ArgumentError(
                    f"draws of shape {draws.values.shape} do not match "
                    f"{len(dataset)} observations x {len(spec.random)} random coefficients")
        elif draws is not None:
            raise ArgumentError("draws supplied for a specification without random coefficients")
        self.draws = draws
        n = len(dataset)
        if spec.random:
            per_obs = draws.n_draws * self.design.J
            size = max(1, _CHUNK_ELEMENTS // per_obs)
        else:
            size = max(n, 1)
        self._chunks = [slice(s, min(s + size, n)) for s in range(0, n, size)]
        self.evaluations = 0

    @property
    def n_params(self):
        return self.spec.n_params

    def contributions(self, theta) -> np.ndarray:
        return self._evaluate(theta, grad=False)[0]

    def loglik(self, theta) -> float:
        return float(np.sum(self.contributions(theta)))

    def loglik_and_grad(self, theta):
        contrib, grad, _ = self._evaluate(theta, grad=True)
        return float(np.sum(contrib)), grad

    def scores(self, theta) -> np.ndarray:
        """Per-observation gradients, shape ``(n, n_params)``."""
        return self._evaluate(theta, grad=True, scores=True)[2]

    def probabilities(self, theta) -> np.ndarray:
        """Predicted (simulated) probabilities, shape ``(n, J)``."""
        des = self.design
        beta, mu, sigma = des.split(as_theta(self.spec, theta))
        if not self.spec.random:
            return mnl_probability(des.utilities(beta, mu))
        out = np.empty((des.n, des.J))
        for sl in self._chunks:
            b = mu + sigma * self.draws.values[sl]
            out[sl] = _draw_average(mnl_probability(des.utilities(beta, b, sl)))
        return out

    def _evaluate(self, theta, grad=False, scores=False):
        self.evaluations += 1
        des = self.design
        theta = as_theta(self.spec, theta)
        beta, mu, sigma = des.split(theta)
        contrib = np.empty(des.n)
        g_total = np.zeros(self.spec.n_params) if grad else None
        score_rows = np.empty((des.n, self.spec.n_params)) if scores else None
        kr = des.kr
        for sl in self._chunks:
            chosen = des.chosen[sl]
            onehot = np.zeros((len(chosen), des.J))
            onehot[np.arange(len(chosen)), chosen] = 1.0
            if kr == 0:
                V = des.utilities(beta, mu, sl)
                if not np.all(np.isfinite(V)):
                    raise NumericError("non-finite utility")
                m = V.max(axis=-1, keepdims=True)
                ex = np.exp(V - m)
                s = ex.sum(axis=-1)
                logp = np.take_along_axis(V - m, chosen[:, None], -1)[:, 0] - np.log(s)
                contrib[sl] = logp
                if grad:
                    A = onehot - ex / s[:, None]
                    parts = [np.einsum("nj,njk->nk", A, des.Zf[sl])]
            else:
                z = self.draws.values[sl]
                R = z.shape[1]
                V = des.utilities(beta, mu + sigma * z, sl)
                if not np.all(np.isfinite(V)):
                    raise NumericError("non-finite utility")
                m = V.max(axis=-1, keepdims=True)
                ex = np.exp(V - m)
                s = ex.sum(axis=-1)
                logpc = (np.take_along_axis(V - m, chosen[:, None, None], -1)[..., 0]
                         - np.log(s))
                top = logpc.max(axis=1, keepdims=True)
                lse = top[:, 0] + np.log(np.exp(logpc - top).sum(axis=1))
                contrib[sl] = lse - math.log(R)
                if grad:
                    w = np.exp(logpc - lse[:, None])
                    E = onehot[:, None, :] - ex / s[..., None]
                    A = np.einsum("nr,nrj->nj", w, E)
                    Zr = des.Zr[sl]
                    g_sig = np.empty((len(chosen), kr))
                    for d in range(kr):
                        Bd = np.einsum("nr,nrj->nj", w * z[:, :, d], E)
                        g_sig[:, d] = np.einsum("nj,nj->n", Bd, Zr[:, :, d])
                    parts = [np.einsum("nj,njk->nk", A, des.Zf[sl]),
                             np.einsum("nj,njk->nk", A, Zr), g_sig]
            bad = ~np.isfinite(contrib[sl])
            if bad.any():
                obs = int(np.flatnonzero(bad)[0]) + (sl.start or 0)
                raise NumericError(f"probability of the chosen outcome is zero at "
                                   f"working precision for observation {obs}")
            if grad:
                rows = np.concatenate(parts, axis=1)
                g_total += rows.sum(axis=0)
                if scores:
                    score_rows[sl] = rows
        return contrib, g_total, score_rows


def _single(record: CrashRecord, spec: ModelSpec) -> Dataset:
    names = tuple(record.covariates)
    return Dataset([SEVERITY_CLASSES.index(record.severity)], [record.area],
                   [record.lighting], [[record.covariates[k] for k in names]],
                   names, {k: "continuous" for k in names})


def _record_design(record: CrashRecord, spec: ModelSpec) -> Design:
    # the record's own outcome is irrelevant for utilities; relabel onto the choice set
    if record.severity not in spec.alternatives:
        record = CrashRecord(spec.alternatives[0], record.area, record.lighting,
                             record.covariates)
    return Design(_single(record, spec), spec)


def utility(record: CrashRecord, spec: ModelSpec, params, draw=None) -> np.ndarray:
    """Systematic utilities of one crash, ordered as ``spec.alternatives``.

    ``draw`` maps random coefficient ids to standard-normal values ``z``; the
    realized coefficient is ``mu + sigma * z``. Without it, means are used.
    """
    des = _record_design(record, spec)
    beta, mu, sigma = des.split(as_theta(spec, params))
    coef = mu.copy()
    if draw is not None:
        z = np.array([draw[r] for r in spec.random], dtype=float)
        coef = mu + sigma * z
    return des.utilities(beta, coef)[0]


def simulated_probability(record: CrashRecord, spec: ModelSpec, params, draws) -> np.ndarray:
    """Average of logit probabilities over the record's draw block ``(R, kr)``."""
    z = draws.values[0] if isinstance(draws, DrawMatrix) else np.asarray(draws, float)
    if z.ndim == 1:
        z = z[:, None]
    if z.ndim != 2 or z.shape[1] != len(spec.random):
        raise ArgumentError(f"draw block of shape {z.shape} does not match "
                            f"{len(spec.random)} random coefficient(s)")
    des = _record_design(record, spec)
    beta, mu, sigma = des.split(as_theta(spec, params))
    V = des.utilities(beta, (mu + sigma * z)[None], slice(None))
    return _draw_average(mnl_probability(V))[0]


def log_likelihood(dataset: Dataset, spec: ModelSpec, params,
                   draws: DrawMatrix | None = None) -> LikelihoodValue:
    contrib = Likelihood(dataset, spec, draws).contributions(params)
    return LikelihoodValue(float(np.sum(contrib)), contrib)


def ll_gradient(dataset: Dataset, spec: ModelSpec, params,
                draws: DrawMatrix | None = None) -> np.ndarray:
    """Analytic gradient over ``spec.param_names``."""
    return Likelihood(dataset, spec, draws).loglik_and_grad(params)[1]
