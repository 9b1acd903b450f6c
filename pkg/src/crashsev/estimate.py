"""Maximum (simulated) likelihood estimation and post-estimation statistics."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np
from scipy.optimize import linprog

from .domain import Dataset
from .errors import ConvergenceError, CrashsevError, DomainError, SingularHessianError
from .model import Likelihood, ModelSpec, ParameterVector, sd_name
from .numeric import DEFAULT_DISCARD, make_draws, std_normal_quantile, two_tailed_p

logger = logging.getLogger(__name__)

MAX_ITER = 500
GTOL = 1e-6
XTOL = 1e-8
SIGMA_START = 0.5


@dataclass(frozen=True)
class ConvergenceReport:
    iterations: int
    gradient_norm: float
    relative_gradient: float
    status: str
    converged: bool
    evaluations: int = 0


@dataclass(frozen=True)
class OptimResult:
    x: np.ndarray
    loglik: float
    grad: np.ndarray
    report: ConvergenceReport


def _relative_gradient(g, x, f):
    return float(np.max(np.abs(g) * np.maximum(np.abs(x), 1.0)) / max(abs(f), 1.0)) if len(g) else 0.0


def bfgs_maximize(fun: Callable, x0, *, max_iter=MAX_ITER, gtol=GTOL, xtol=XTOL,
                  free=None) -> OptimResult:
    """Maximize ``fun(x) -> (value, gradient)`` by BFGS with backtracking.

    Stops when the relative gradient ``max_k |g_k| max(|x_k|, 1) / max(|f|, 1)``
    drops to ``gtol``, when the step is below ``xtol`` (relative), or after
    ``max_iter`` iterations (``ConvergenceError`` carrying the best point).
    Entries outside the boolean mask ``free`` are held at their start values.
    """
    x_full = np.array(x0, dtype=float)
    free = np.ones(len(x_full), bool) if free is None else np.asarray(free, bool)

    def negfg(xf):
        xx = x_full.copy()
        xx[free] = xf
        f, g = fun(xx)
        return -f, -np.asarray(g)[free]

    x = x_full[free].copy()
    f, g = negfg(x)
    if not math.isfinite(f):
        raise ConvergenceError("objective is not finite at the starting point", x_full, -f)
    n = len(x)
    H = np.eye(n)
    first = True
    status, converged, it = "max_iter", False, 0
    while True:
        rel = _relative_gradient(g, x, f)
        if rel <= gtol:
            status, converged = "gradient", True
            break
        if it >= max_iter:
            break
        it += 1
        p = -H @ g
        slope = float(g @ p)
        if slope >= 0:
            H = np.eye(n)
            p, slope = -g, -float(g @ g)
        t = min(1.0, 1.0 / max(np.linalg.norm(g), 1e-300)) if first else 1.0
        accepted = False
        for _ in range(60):
            x_new = x + t * p
            f_new, g_new = negfg(x_new)
            if math.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = "line_search"
            converged = rel <= 1e-4
            break
        s, y = x_new - x, g_new - g
        x, f, g = x_new, f_new, g_new
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if first:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) \
                + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
        first = False
        if np.max(np.abs(s) / np.maximum(np.abs(x), 1.0), initial=0.0) <= xtol:
            status, converged = "step", True
            break
    x_full[free] = x
    g_full = np.zeros(len(x_full))
    g_full[free] = -g
    report = ConvergenceReport(it, float(np.linalg.norm(g)), _relative_gradient(g, x, f),
                               status, converged)
    if not converged:
        raise ConvergenceError(
            f"optimizer stopped ({status}) after {it} iterations with relative "
            f"gradient {report.relative_gradient:.3g}", x_full, -f)
    return OptimResult(x_full, -f, g_full, report)


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    estimates: ParameterVector
    theta: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    ll_converged: float
    ll_restricted: float
    ll_zero: float
    rho2: float
    n_obs: int
    n_draws: int
    discard: int
    convergence: ConvergenceReport
    held: tuple = ()
    covariance_method: str = "hessian"
    covariance_flag: str = ""
    class_counts: tuple = ()

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.spec.param_names

    @property
    def is_mixed(self) -> bool:
        return bool(self.spec.random)

    @property
    def n_estimated(self) -> int:
        """Number of parameters actually estimated (held ones excluded)."""
        return self.spec.n_params - len(self.held)

    @property
    def rho2_zero(self) -> float:
        """Pseudo-R-squared against the equal-shares (all-zero) model."""
        return 1.0 - self.ll_converged / self.ll_zero

    def reported_value(self, name: str) -> float:
        """Estimate as shown in tables: spreads are reported as ``|sigma|``."""
        v = float(self.theta[self.param_names.index(name)])
        return abs(v) if name.startswith("sd.") else v

    def table(self) -> list[dict]:
        rows = []
        for i, name in enumerate(self.param_names):
            rows.append({"param": name, "estimate": self.reported_value(name),
                         "std_error": float(self.std_errors[i]),
                         "t_stat": float(self.t_stats[i]),
                         "p_value": float(self.p_values[i]),
                         "held": name in self.held})
        return rows

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "param_names": list(self.param_names),
            "theta": self.theta.tolist(),
            "covariance": self.covariance.tolist(),
            "std_errors": self.std_errors.tolist(),
            "t_stats": self.t_stats.tolist(),
            "p_values": self.p_values.tolist(),
            "ll_converged": self.ll_converged,
            "ll_restricted": self.ll_restricted,
            "ll_zero": self.ll_zero,
            "rho2": self.rho2,
            "rho2_zero": self.rho2_zero,
            "n_obs": self.n_obs,
            "n_draws": self.n_draws,
            "discard": self.discard,
            "held": list(self.held),
            "covariance_method": self.covariance_method,
            "covariance_flag": self.covariance_flag,
            "class_counts": list(self.class_counts),
            "convergence": {
                "iterations": self.convergence.iterations,
                "gradient_norm": self.convergence.gradient_norm,
                "relative_gradient": self.convergence.relative_gradient,
                "status": self.convergence.status,
                "converged": self.convergence.converged,
                "evaluations": self.convergence.evaluations,
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitResult":
        spec = ModelSpec.from_dict(d["spec"])
        theta = np.array(d["theta"], dtype=float)
        return cls(
            spec=spec, estimates=ParameterVector.from_array(spec, theta), theta=theta,
            covariance=np.array(d["covariance"], dtype=float).reshape(len(theta), len(theta)),
            std_errors=np.array(d["std_errors"], dtype=float),
            t_stats=np.array(d["t_stats"], dtype=float),
            p_values=np.array(d["p_values"], dtype=float),
            ll_converged=d["ll_converged"], ll_restricted=d["ll_restricted"],
            ll_zero=d["ll_zero"], rho2=d["rho2"], n_obs=d["n_obs"],
            n_draws=d["n_draws"], discard=d["discard"],
            convergence=ConvergenceReport(**d["convergence"]),
            held=tuple(d.get("held", ())),
            covariance_method=d.get("covariance_method", "hessian"),
            covariance_flag=d.get("covariance_flag", ""),
            class_counts=tuple(d.get("class_counts", ())),
        )


def restricted_loglik(counts) -> float:
    """Constants-only log-likelihood ``sum_i n_i ln(n_i / N)``."""
    counts = np.asarray(counts, dtype=float)
    N = counts.sum()
    nz = counts[counts > 0]
    return float(np.sum(nz * np.log(nz / N)))


def mcfadden_rho2(ll_converged, ll_restricted) -> float:
    if not (ll_converged < 0 and ll_restricted < 0):
        raise DomainError("log-likelihoods must be negative")
    if ll_converged < ll_restricted:
        raise DomainError(f"converged log-likelihood {ll_converged} is worse than the "
                          f"restricted one {ll_restricted}")
    return 1.0 - ll_converged / ll_restricted


def numerical_hessian(grad_fn: Callable, theta, free=None) -> np.ndarray:
    """Central differences of an analytic gradient, ``h = 1e-5 max(1, |theta|)``.

    Rows/columns outside ``free`` are zero.
    """
    theta = np.asarray(theta, dtype=float)
    k = len(theta)
    free = np.ones(k, bool) if free is None else np.asarray(free, bool)
    H = np.zeros((k, k))
    for i in np.flatnonzero(free):
        h = 1e-5 * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        H[i] = (np.asarray(grad_fn(up)) - np.asarray(grad_fn(dn))) / (2 * h)
    H = 0.5 * (H + H.T)
    H[~free] = 0.0
    H[:, ~free] = 0.0
    return H


def _invert_information(info, free):
    """Covariance from an information matrix; returns ``(cov, flag)``."""
    k = len(info)
    cov = np.zeros((k, k))
    idx = np.flatnonzero(free)
    if len(idx) == 0:
        return cov, ""
    sub = info[np.ix_(idx, idx)]
    lam, vec = np.linalg.eigh(sub)
    scale = max(np.max(np.abs(lam)), 1e-300)
    if np.any(np.abs(lam) <= 1e-12 * scale):
        raise SingularHessianError(
            "information matrix is singular; reduce the specification "
            "(collinear or unidentified parameters)")
    flag = ""
    if np.any(lam < 0):
        warnings.warn("negative Hessian is not positive definite; using a "
                      "pseudo-inverse over its positive eigenspace", RuntimeWarning)
        flag = "pinv"
        keep = lam > 0
        inv = (vec[:, keep] / lam[keep]) @ vec[:, keep].T
    else:
        inv = (vec / lam) @ vec.T
    inv = 0.5 * (inv + inv.T)
    cov[np.ix_(idx, idx)] = inv
    return cov, flag


def t_stats_pvalues(estimates, std_errors):
    """``t = estimate / SE`` and two-tailed standard-normal p-values."""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(std_errors, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, est / se, np.nan)
    p = np.where(np.isfinite(t), two_tailed_p(np.nan_to_num(t)), np.nan)
    return t, p


def standard_errors(fit: FitResult) -> np.ndarray:
    return np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))


def _assemble(spec, lik, opt, dataset, n_draws, discard, held, free, covariance):
    theta = opt.x
    if covariance == "bhhh":
        S = lik.scores(theta)[:, free]
        info = np.zeros((spec.n_params,) * 2)
        info[np.ix_(free, free)] = S.T @ S
    else:
        info = -numerical_hessian(lambda th: lik.loglik_and_grad(th)[1], theta, free)
    cov, flag = _invert_information(info, free)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    se[~free] = np.nan
    shown = np.array([abs(v) if n.startswith("sd.") else v
                      for n, v in zip(spec.param_names, theta)])
    t, p = t_stats_pvalues(shown, se)
    ll = lik.loglik(theta)
    counts = tuple(int(c) for c in dataset.class_counts())
    ll_r = restricted_loglik([counts[i] for i in _class_positions(spec)])
    ll_0 = -len(dataset) * math.log(len(spec.alternatives))
    rho2 = 1.0 - ll / ll_r
    if ll < ll_r:
        logger.warning("fit is worse than the constants-only model (rho2=%.4f)", rho2)
    report = replace(opt.report, evaluations=lik.evaluations)
    return FitResult(
        spec=spec, estimates=ParameterVector.from_array(spec, theta), theta=theta,
        covariance=cov, std_errors=se, t_stats=t, p_values=p, ll_converged=ll,
        ll_restricted=ll_r, ll_zero=ll_0, rho2=rho2, n_obs=len(dataset),
        n_draws=n_draws, discard=discard, convergence=report, held=held,
        covariance_method=covariance, covariance_flag=flag, class_counts=counts)


def _class_positions(spec):
    from .domain import SEVERITY_CLASSES
    return [SEVERITY_CLASSES.index(a) for a in spec.alternatives]


def _check_outcomes(dataset, spec):
    if len(dataset) == 0:
        raise DomainError("cannot estimate on an empty dataset")
    counts = dataset.class_counts()
    for a, i in zip(spec.alternatives, _class_positions(spec)):
        if counts[i] == 0:
            raise DomainError(f"severity class {a.value} never occurs in the data")


def _hold_mask(spec, hold):
    hold = dict(hold or {})
    unknown = set(hold) - set(spec.param_names)
    if unknown:
        raise DomainError(f"cannot hold unknown parameter(s) {sorted(unknown)}")
    free = np.array([n not in hold for n in spec.param_names])
    return hold, free


def _separation_check(lik, theta, spec):
    """Raise if the data admit a direction along which the likelihood never peaks."""
    des = lik.design
    Z = np.concatenate([des.Zf, des.Zr], axis=2)
    if Z.shape[2] == 0:
        return
    rows = []
    idx = np.arange(des.n)
    Zc = Z[idx, des.chosen]
    for j in range(des.J):
        keep = des.chosen != j
        rows.append(Zc[keep] - Z[keep, j])
    D = np.concatenate(rows)
    res = linprog(-D.sum(axis=0), A_ub=-D, b_ub=np.zeros(len(D)),
                  bounds=[(-1, 1)] * Z.shape[2], method="highs")
    if res.status == 0 and -res.fun > 1e-7:
        ids = spec.fixed_ids + spec.random
        culprits = [ids[k] for k in np.flatnonzero(np.abs(res.x) > 1e-9)]
        raise ConvergenceError(
            f"maximum likelihood estimate does not exist: the data are separated "
            f"along coefficient(s) {culprits}", theta)


def fit_mnl(dataset: Dataset, spec: ModelSpec, *, start=None, hold=None,
            max_iter=MAX_ITER, gtol=GTOL, covariance="hessian",
            compute_covariance=True) -> FitResult:
    """Multinomial logit by maximum likelihood.

    ``hold`` maps parameter names to values kept fixed during estimation.
    ``covariance`` is ``"hessian"`` (default) or ``"bhhh"``.
    """
    if spec.random:
        raise DomainError("fit_mnl takes a specification without random coefficients")
    _check_outcomes(dataset, spec)
    lik = Likelihood(dataset, spec)
    hold, free = _hold_mask(spec, hold)
    x0 = np.zeros(spec.n_params) if start is None else np.array(start, dtype=float)
    for i, name in enumerate(spec.param_names):
        if name in hold:
            x0[i] = hold[name]
    try:
        opt = bfgs_maximize(lik.loglik_and_grad, x0, max_iter=max_iter, gtol=gtol, free=free)
    except ConvergenceError as exc:
        _separation_check(lik, exc.best, spec)
        raise
    des = lik.design
    scale = np.max(np.abs(des.Zf), axis=(0, 1)) if des.kf else np.zeros(0)
    if np.any(np.abs(opt.x[:des.kf]) * scale > 15.0):
        _separation_check(lik, opt.x, spec)
    if not compute_covariance:
        return _light_result(spec, lik, opt, dataset, 0, 0, tuple(hold))
    return _assemble(spec, lik, opt, dataset, 0, 0, tuple(hold), free, covariance)


def _light_result(spec, lik, opt, dataset, n_draws, discard, held):
    k = spec.n_params
    nan = np.full(k, np.nan)
    counts = tuple(int(c) for c in dataset.class_counts())
    ll = lik.loglik(opt.x)
    ll_r = restricted_loglik([counts[i] for i in _class_positions(spec)])
    return FitResult(
        spec=spec, estimates=ParameterVector.from_array(spec, opt.x), theta=opt.x,
        covariance=np.full((k, k), np.nan), std_errors=nan, t_stats=nan, p_values=nan,
        ll_converged=ll, ll_restricted=ll_r,
        ll_zero=-len(dataset) * math.log(len(spec.alternatives)),
        rho2=1.0 - ll / ll_r, n_obs=len(dataset), n_draws=n_draws, discard=discard,
        convergence=replace(opt.report, evaluations=lik.evaluations), held=held,
        covariance_method="none", class_counts=counts)


def fit_mixed_logit(dataset: Dataset, spec: ModelSpec, n_draws=500,
                    discard=DEFAULT_DISCARD, *, start=None, hold=None,
                    max_iter=MAX_ITER, gtol=GTOL, covariance="hessian",
                    compute_covariance=True) -> FitResult:
    """Mixed logit with independent normal coefficients by simulated ML.

    Halton draws are built once and reused at every iteration. Unless
    ``start`` is given, means start at the fixed-coefficient logit estimates
    (zeros if that fit fails) and spreads at 0.5.
    """
    if not spec.random:
        raise DomainError("fit_mixed_logit needs at least one random coefficient")
    _check_outcomes(dataset, spec)
    draws = make_draws(len(dataset), n_draws, len(spec.random), discard)
    lik = Likelihood(dataset, spec, draws)
    hold, free = _hold_mask(spec, hold)
    if start is None:
        x0 = _mnl_start(dataset, spec, hold)
    else:
        x0 = np.array(start, dtype=float)
    for i, name in enumerate(spec.param_names):
        if name in hold:
            x0[i] = hold[name]
    opt = bfgs_maximize(lik.loglik_and_grad, x0, max_iter=max_iter, gtol=gtol, free=free)
    _ridge_check(lik, opt)
    if not compute_covariance:
        return _light_result(spec, lik, opt, dataset, n_draws, discard, tuple(hold))
    return _assemble(spec, lik, opt, dataset, n_draws, discard, tuple(hold), free,
                     covariance)


UTILITY_LIMIT = 1e3


def _ridge_check(lik, opt):
    # utility terms this large make the logit kernel a step function: the
    # optimizer has followed a scale ridge instead of finding an interior optimum
    des = lik.design
    beta, mu, sigma = des.split(opt.x)
    span = lambda Z: np.max(np.abs(Z), axis=(0, 1)) if Z.shape[2] else np.zeros(0)
    reach = np.concatenate([np.abs(beta) * span(des.Zf), (np.abs(mu) + np.abs(sigma))
                            * span(des.Zr)])
    if np.any(reach > UTILITY_LIMIT):
        raise ConvergenceError(
            "estimates diverged along a scale ridge (utility terms beyond "
            f"{UTILITY_LIMIT:g}); supply start values near a fixed-coefficient fit",
            opt.x, opt.loglik)


def _mnl_start(dataset, spec, hold):
    x0 = np.zeros(spec.n_params)
    for r in spec.random:
        x0[spec.param_names.index(sd_name(r))] = SIGMA_START
    fixed = spec.without_random()
    try:
        pre = fit_mnl(dataset, fixed, hold={k: v for k, v in hold.items()
                                            if k in fixed.param_names},
                      compute_covariance=False)
    except CrashsevError as exc:
        logger.info("fixed-coefficient start failed (%s); starting from zeros", exc)
        return x0
    for name, value in zip(pre.param_names, pre.theta):
        x0[spec.param_names.index(name)] = value
    return x0


def fit(dataset: Dataset, spec: ModelSpec, n_draws=500, discard=DEFAULT_DISCARD,
        **kwargs) -> FitResult:
    """Dispatch to ``fit_mixed_logit`` or ``fit_mnl`` by the specification."""
    if spec.random:
        return fit_mixed_logit(dataset, spec, n_draws, discard, **kwargs)
    return fit_mnl(dataset, spec, **kwargs)


def evaluate_loglik(fit_result: FitResult, dataset: Dataset, spec: ModelSpec | None = None,
                    params=None) -> float:
    """Log-likelihood of ``dataset`` at a fit's parameters and simulation settings."""
    spec = spec or fit_result.spec
    theta = fit_result.theta if params is None else params
    draws = None
    if spec.random:
        draws = make_draws(len(dataset), fit_result.n_draws, len(spec.random),
                           fit_result.discard)
    return Likelihood(dataset, spec, draws).loglik(theta)


@dataclass(frozen=True)
class RetentionFlag:
    param: str
    coef: str
    action: str  # "drop" (fixed coefficient) or "demote" (random -> fixed)
    t_stat: float


@dataclass(frozen=True)
class RetentionReport:
    confidence: float
    threshold: float
    flags: tuple
    steps: tuple = ()
    final: FitResult | None = None

    @property
    def clean(self) -> bool:
        return not self.flags


def retention_threshold(confidence=0.90) -> float:
    """Two-tailed critical value, e.g. 1.645 at 90%."""
    return std_normal_quantile(0.5 + confidence / 2.0)


def retention_flags(fit_result: FitResult, confidence=0.90) -> tuple:
    z = retention_threshold(confidence)
    spec = fit_result.spec
    const_ids = {t.coef for t in spec.terms if t.is_constant}
    t_of = dict(zip(spec.param_names, fit_result.t_stats))
    flags = []
    for cid in spec.fixed_ids:
        if cid in const_ids or cid in fit_result.held:
            continue
        t = t_of[cid]
        if not abs(t) >= z:
            flags.append(RetentionFlag(cid, cid, "drop", float(t)))
    for cid in spec.random:
        name = sd_name(cid)
        if name in fit_result.held:
            continue
        t = t_of[name]
        if not abs(t) >= z:
            flags.append(RetentionFlag(name, cid, "demote", float(t)))
    return tuple(flags)


def _apply_flag(spec: ModelSpec, flag: RetentionFlag) -> ModelSpec:
    if flag.action == "demote":
        return ModelSpec(spec.terms, tuple(r for r in spec.random if r != flag.coef),
                         spec.alternatives, spec.base)
    terms = tuple(t for t in spec.terms if t.coef != flag.coef)
    return ModelSpec(terms, spec.random, spec.alternatives, spec.base)


def refine_specification(fit_result: FitResult, confidence=0.90, *, dataset=None,
                         eliminate=False, max_steps=50) -> RetentionReport:
    """Flag parameters failing the two-tailed retention rule.

    Fixed coefficients (constants excepted) with ``|t|`` below the critical
    value are flagged for dropping; random coefficients whose spread fails
    are flagged for demotion to fixed. A random coefficient with a
    significant spread is kept whatever its mean's t-statistic. With
    ``eliminate=True`` the worst offender is removed and the model refit,
    repeating until nothing is flagged.
    """
    flags = retention_flags(fit_result, confidence)
    report = RetentionReport(confidence, retention_threshold(confidence), flags)
    if not eliminate or not flags:
        return replace(report, final=fit_result)
    if dataset is None:
        raise DomainError("backward elimination needs the estimation dataset")
    current, steps = fit_result, []
    for _ in range(max_steps):
        cur_flags = retention_flags(current, confidence)
        if not cur_flags:
            break
        worst = min(cur_flags, key=lambda f: abs(f.t_stat) if math.isfinite(f.t_stat) else -1)
        spec = _apply_flag(current.spec, worst)
        steps.append(worst)
        if not spec.terms:
            break
        current = fit(dataset, spec, current.n_draws or 500, current.discard or DEFAULT_DISCARD)
    return replace(report, steps=tuple(steps), final=current)
