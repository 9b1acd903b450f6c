"""Marginal effects and the sign split of normally distributed coefficients."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .domain import SEVERITY_CLASSES, Dataset, SeverityClass
from .errors import ArgumentError
from .estimate import FitResult
from .model import Likelihood
from .numeric import make_draws, std_normal_cdf


def marginal_effect_point(probabilities: Sequence[float], beta_k: float, home,
                          target, alternatives=SEVERITY_CLASSES) -> float:
    """``dP_target / dx`` for a variable entering ``home``'s utility with
    coefficient ``beta_k``: ``[1(target = home) - P_home] * P_target * beta_k``."""
    p = np.asarray(probabilities, dtype=float)
    alternatives = tuple(SeverityClass.parse(a) for a in alternatives)
    if p.shape != (len(alternatives),):
        raise ArgumentError("one probability per alternative is required")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ArgumentError("probabilities must form a simplex point")
    m = alternatives.index(SeverityClass.parse(home))
    i = alternatives.index(SeverityClass.parse(target))
    return float(((1.0 if i == m else 0.0) - p[m]) * p[i] * beta_k)


@dataclass(frozen=True)
class MarginalEffectRow:
    variable: str
    home: SeverityClass
    coef: str
    effects: Mapping[SeverityClass, float]


@dataclass(frozen=True)
class MarginalEffectsTable:
    alternatives: tuple
    rows: tuple
    mode: str = "derivative"

    def row(self, variable: str, home) -> MarginalEffectRow:
        home = SeverityClass.parse(home)
        for r in self.rows:
            if r.variable == variable and r.home is home:
                return r
        raise KeyError((variable, home))

    def as_array(self) -> np.ndarray:
        return np.array([[r.effects[a] for a in self.alternatives] for r in self.rows])

    def by_variable(self) -> dict:
        """Effects summed over every term a variable enters."""
        out = {}
        for r in self.rows:
            acc = out.setdefault(r.variable, {a: 0.0 for a in self.alternatives})
            for a in self.alternatives:
                acc[a] += r.effects[a]
        return out


def _likelihood_for(fit: FitResult, dataset: Dataset) -> Likelihood:
    draws = None
    if fit.spec.random:
        draws = make_draws(len(dataset), fit.n_draws, len(fit.spec.random), fit.discard)
    return Likelihood(dataset, fit.spec, draws)


def predicted_probabilities(dataset: Dataset, fit: FitResult) -> np.ndarray:
    """Per-crash probabilities (simulated for mixed fits), shape ``(n, J)``."""
    return _likelihood_for(fit, dataset).probabilities(fit.theta)


def marginal_effects_average(dataset: Dataset, fit: FitResult,
                             mode: str = "derivative") -> MarginalEffectsTable:
    """Average over crashes of each term's marginal effect on every class.

    ``mode="derivative"`` applies the analytic logit derivative to every
    variable, indicators included, with random coefficients at their mean.
    ``mode="discrete"`` instead uses ``P(x=1) - P(x=0)`` for indicator
    variables, switching only the term in question.
    """
    if mode not in ("derivative", "discrete"):
        raise ArgumentError(f"unknown marginal-effects mode {mode!r}")
    spec = fit.spec
    lik = _likelihood_for(fit, dataset)
    P = lik.probabilities(fit.theta)
    alts = spec.alternatives
    rows = []
    for term in spec.terms:
        if term.is_constant:
            continue
        m = alts.index(term.alternative)
        beta = fit.estimates.coefficient(term.coef)
        indicator = dataset.kinds[term.variable].value == "indicator"
        if mode == "discrete" and indicator:
            diff = _switched(lik, fit, term, m, 1.0) - _switched(lik, fit, term, m, 0.0)
            eff = diff.mean(axis=0)
        else:
            own = (np.arange(len(alts)) == m).astype(float)
            eff = ((own[None, :] - P[:, [m]]) * P * beta).mean(axis=0)
        rows.append(MarginalEffectRow(term.variable, term.alternative, term.coef,
                                      dict(zip(alts, eff.tolist()))))
    return MarginalEffectsTable(alts, tuple(rows), mode)


def _switched(lik: Likelihood, fit: FitResult, term, alt_col: int, value: float) -> np.ndarray:
    alt = copy.copy(lik)
    des = copy.copy(lik.design)
    alt.design = des
    spec = fit.spec
    if term.coef in spec.random:
        des.Zr = des.Zr.copy()
        des.Zr[:, alt_col, spec.random.index(term.coef)] = value
    else:
        des.Zf = des.Zf.copy()
        des.Zf[:, alt_col, spec.fixed_ids.index(term.coef)] = value
    return alt.probabilities(fit.theta)


class NormalShares(NamedTuple):
    positive: float
    negative: float


def share_positive(mu: float, sigma: float) -> NormalShares:
    """Mass of ``N(mu, sigma^2)`` above zero, ``Phi(mu / sigma)``, and its complement."""
    if not sigma > 0:
        raise ArgumentError("share_positive needs sigma > 0")
    above = std_normal_cdf(mu / sigma)
    return NormalShares(above, std_normal_cdf(-mu / sigma))


def random_parameter_shares(fit: FitResult) -> dict:
    """``NormalShares`` for every random coefficient of a fit (spread as ``|sigma|``)."""
    out = {}
    for cid, (mu, sigma) in fit.estimates.random.items():
        if sigma != 0:
            out[cid] = share_positive(mu, abs(sigma))
    return out
