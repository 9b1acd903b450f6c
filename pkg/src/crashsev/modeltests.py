"""Likelihood-ratio transferability tests and the Hausman-McFadden IIA test."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .domain import (SEGMENT_KEYS, SEVERITY_CLASSES, Area, Dataset, SegmentKey, concat,
                     partition_dataset)
from .errors import ArgumentError, ConsistencyError, CrashsevError, SpecDataMismatch
from .estimate import FitResult, evaluate_loglik, fit
from .model import ModelSpec
from .numeric import DEFAULT_DISCARD, chi_square_quantile

logger = logging.getLogger(__name__)

# relative slack for "subgroup fits cannot be worse than the pooled fit"
_LL_SLACK = 1e-7


class BatteryError(CrashsevError, RuntimeError):
    """A component fit of the test battery failed."""

    def __init__(self, message, segment):
        super().__init__(message)
        self.segment = segment


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    df: int
    critical_value: float
    confidence: float
    reject_null: bool
    inputs: Mapping = field(default_factory=dict)
    flag: str = ""

    __test__ = False  # not a pytest class

    @property
    def comment(self) -> str:
        return "LR > χ²" if self.reject_null else "LR ≤ χ²"

    def to_dict(self) -> dict:
        return {"name": self.name, "statistic": self.statistic, "df": self.df,
                "critical_value": self.critical_value, "confidence": self.confidence,
                "reject_null": self.reject_null, "inputs": dict(self.inputs),
                "flag": self.flag}


def _decide(name, statistic, df, confidence, inputs, flag=""):
    if df < 1:
        raise ArgumentError(f"{name}: degrees of freedom must be >= 1, got {df}")
    crit = chi_square_quantile(df, confidence)
    return TestResult(name, float(statistic), int(df), crit, confidence,
                      bool(statistic > crit), inputs, flag)


def lr_partition_statistic(ll_full: float, ll_subgroups: Sequence[float], k_full: int,
                           k_subgroups: Sequence[int], confidence=0.99,
                           name="partition") -> TestResult:
    """``-2 [LL_full - sum_j LL_j]`` with ``df = sum_j k_j - k_full``."""
    total = float(np.sum(ll_subgroups))
    if total < ll_full - _LL_SLACK * max(1.0, abs(ll_full)):
        raise ConsistencyError(
            f"{name}: subgroup log-likelihoods sum to {total:.6f}, below the pooled "
            f"{ll_full:.6f}; the subgroups cannot be a refit partition of the pooled data")
    stat = max(0.0, -2.0 * (ll_full - total))
    df = int(np.sum(k_subgroups)) - int(k_full)
    inputs = {"ll_full": float(ll_full), "ll_subgroups": [float(v) for v in ll_subgroups],
              "k_full": int(k_full), "k_subgroups": [int(k) for k in k_subgroups]}
    return _decide(name, stat, df, confidence, inputs)


def lr_partition_test(full_fit: FitResult, subgroup_fits: Sequence[FitResult],
                      confidence=0.99, name="partition") -> TestResult:
    """Pooled fit against separate fits on a partition of its data."""
    subgroup_fits = list(subgroup_fits)
    n_sub = sum(f.n_obs for f in subgroup_fits)
    if n_sub != full_fit.n_obs:
        raise ConsistencyError(f"{name}: subgroup fits cover {n_sub} observations, "
                               f"the pooled fit {full_fit.n_obs}")
    return lr_partition_statistic(full_fit.ll_converged,
                                  [f.ll_converged for f in subgroup_fits],
                                  full_fit.n_estimated,
                                  [f.n_estimated for f in subgroup_fits],
                                  confidence, name)


def lr_transfer_test(fit_k1: FitResult, fit_k2: FitResult, data_k1: Dataset,
                     confidence=0.99, name="transfer") -> TestResult:
    """``-2 [LL(k2's parameters on k1's data) - LL_k1]``, ``df`` = parameters
    estimated in k2's model.

    Both log-likelihoods are evaluated on ``data_k1`` with the same code
    path and simulation settings, so ``k1 = k2`` gives exactly zero.
    """
    missing = [v for v in fit_k2.spec.variables if v not in data_k1.names]
    if missing:
        raise SpecDataMismatch(f"{name}: covariate(s) {missing} of the transferred "
                               "model are absent from the target data")
    absent = [a.value for a, c in zip(SEVERITY_CLASSES, data_k1.class_counts())
              if c > 0 and a not in fit_k2.spec.alternatives]
    if absent:
        raise SpecDataMismatch(f"{name}: target data has outcomes {absent} outside the "
                               "transferred model's choice set")
    ll_k1 = evaluate_loglik(fit_k1, data_k1)
    ll_k1k2 = evaluate_loglik(fit_k2, data_k1)
    stat = -2.0 * (ll_k1k2 - ll_k1) + 0.0  # no negative zero on the diagonal
    inputs = {"ll_k1": ll_k1, "ll_k1k2": ll_k1k2, "n_k1": len(data_k1)}
    return _decide(name, stat, fit_k2.n_estimated, confidence, inputs)


def hausman_iia_test(full_fit: FitResult, restricted_fit: FitResult, confidence=0.95,
                     exclude_constants=False, name="hausman") -> TestResult:
    """Hausman-McFadden test of IIA over the parameters both fits share.

    ``(b_r - b_f)' (V_r - V_f)^-1 (b_r - b_f)`` with ``df`` the number of
    shared parameters. If ``V_r - V_f`` is not positive definite the
    Moore-Penrose inverse is used, ``df`` becomes its rank and the result
    is flagged.
    """
    shared = [n for n in restricted_fit.param_names
              if n in full_fit.param_names
              and n not in restricted_fit.held and n not in full_fit.held]
    if exclude_constants:
        consts = {t.coef for t in full_fit.spec.terms if t.is_constant}
        shared = [n for n in shared if n not in consts]
    if not shared:
        raise ArgumentError(f"{name}: the two fits share no estimated parameter")
    ir = [restricted_fit.param_names.index(n) for n in shared]
    jf = [full_fit.param_names.index(n) for n in shared]
    d = restricted_fit.theta[ir] - full_fit.theta[jf]
    V = restricted_fit.covariance[np.ix_(ir, ir)] - full_fit.covariance[np.ix_(jf, jf)]
    inputs = {"shared": shared, "n_full": full_fit.n_obs, "n_restricted": restricted_fit.n_obs}
    if not np.any(d):
        return _decide(name, 0.0, len(shared), confidence, inputs)
    V = 0.5 * (V + V.T)
    w, U = np.linalg.eigh(V)
    tol = max(V.shape) * np.finfo(float).eps * max(np.max(np.abs(w)), 1e-300)
    if np.all(w > tol):
        stat = float(d @ np.linalg.solve(V, d))
        return _decide(name, stat, len(shared), confidence, inputs)
    rank = int(np.sum(np.abs(w) > tol))
    proj = U.T @ d
    keep = np.abs(w) > tol
    stat = float(np.sum(proj[keep] ** 2 / w[keep]))
    logger.warning("%s: covariance difference is not positive definite; "
                   "using the pseudo-inverse with df = rank = %d", name, rank)
    return _decide(name, stat, max(rank, 1), confidence, inputs,
                   flag="covariance difference not positive definite; pseudo-inverse used")


# ---------------------------------------------------------------------------
# the battery

@dataclass(frozen=True)
class PartitionRow:
    label: str
    pooled: str
    subgroups: tuple
    ll_pooled: float | None
    ll_subgroups: tuple
    result: TestResult | None
    note: str = ""


@dataclass(frozen=True)
class TransferCell:
    k1: SegmentKey
    k2: SegmentKey
    result: TestResult | None
    note: str = ""


@dataclass(frozen=True)
class BatteryReport:
    confidence: float
    partition: tuple
    transfer: Mapping  # Area -> tuple of TransferCell, row-major over k1 then k2
    segments: tuple
    note: str = ""

    @property
    def nothing_to_compare(self) -> bool:
        return not self.partition and not any(self.transfer.values())

    def transfer_matrix(self, area) -> tuple[list, np.ndarray]:
        """Segment labels and the statistic matrix (rows k1, columns k2;
        NaN where not evaluable)."""
        area = Area.parse(area)
        cells = self.transfer.get(area, ())
        keys = list(dict.fromkeys(c.k1 for c in cells))
        M = np.full((len(keys), len(keys)), np.nan)
        for c in cells:
            if c.result is not None:
                M[keys.index(c.k1), keys.index(c.k2)] = c.result.statistic
        return keys, M

    def to_dict(self) -> dict:
        return {
            "confidence": self.confidence,
            "note": self.note,
            "segments": [k.label for k in self.segments],
            "partition": [{"label": r.label, "pooled": r.pooled,
                           "subgroups": list(r.subgroups), "ll_pooled": r.ll_pooled,
                           "ll_subgroups": list(r.ll_subgroups),
                           "result": None if r.result is None else r.result.to_dict(),
                           "note": r.note} for r in self.partition],
            "transfer": {a.value: [{"k1": c.k1.label, "k2": c.k2.label,
                                    "result": None if c.result is None else c.result.to_dict(),
                                    "note": c.note} for c in cells]
                         for a, cells in self.transfer.items()},
        }


POOLED_FULL = "full"


def pooled_label(area=None) -> str:
    return POOLED_FULL if area is None else Area.parse(area).value.lower()


def battery_from_fits(pooled: Mapping[str, FitResult], segment_fits: Mapping[SegmentKey, FitResult],
                      segment_data: Mapping[SegmentKey, Dataset], confidence=0.99) -> BatteryReport:
    """Assemble the battery from fits already made.

    ``pooled`` maps ``"full"``, ``"rural"`` and ``"urban"`` to fits of the
    pooled data (missing entries make the corresponding rows not
    evaluable). Segment order follows ``SEGMENT_KEYS``.
    """
    keys = tuple(k for k in SEGMENT_KEYS if k in segment_fits)
    if len(keys) < 2:
        return BatteryReport(confidence, (), {}, keys,
                             note="nothing to compare: fewer than two segments")
    rows = [_partition_row("full vs segments", POOLED_FULL, keys, pooled, segment_fits,
                           confidence)]
    for area in Area:
        sub = tuple(k for k in keys if k.area is area)
        rows.append(_partition_row(f"{area.value.lower()} vs segments", pooled_label(area),
                                   sub, pooled, segment_fits, confidence))
    transfer = {}
    for area in Area:
        sub = [k for k in keys if k.area is area]
        cells = []
        for k1 in sub:
            for k2 in sub:
                label = f"{k1.label}<-{k2.label}"
                try:
                    res = lr_transfer_test(segment_fits[k1], segment_fits[k2],
                                           segment_data[k1], confidence, label)
                    cells.append(TransferCell(k1, k2, res))
                except SpecDataMismatch as exc:
                    cells.append(TransferCell(k1, k2, None, f"not evaluable: {exc}"))
        if cells:
            transfer[area] = tuple(cells)
    return BatteryReport(confidence, tuple(rows), transfer, keys)


def _partition_row(label, pooled_name, keys, pooled, segment_fits, confidence):
    names = tuple(k.label for k in keys)
    lls = tuple(segment_fits[k].ll_converged for k in keys)
    full = pooled.get(pooled_name)
    if len(keys) < 2:
        return PartitionRow(label, pooled_name, names, None if full is None else
                            full.ll_converged, lls, None,
                            "not evaluable: fewer than two segments")
    if full is None:
        return PartitionRow(label, pooled_name, names, None, lls, None,
                            f"not evaluable: no pooled fit {pooled_name!r}")
    try:
        res = lr_partition_test(full, [segment_fits[k] for k in keys], confidence, label)
    except (ArgumentError, ConsistencyError) as exc:
        return PartitionRow(label, pooled_name, names, full.ll_converged, lls, None,
                            f"not evaluable: {exc}")
    return PartitionRow(label, pooled_name, names, full.ll_converged, lls, res)


def pooled_datasets(segment_data: Mapping[SegmentKey, Dataset]) -> dict:
    """Pooled data sets ``full``, ``rural``, ``urban`` built from the segments."""
    keys = [k for k in SEGMENT_KEYS if k in segment_data]
    out = {}
    if keys:
        out[POOLED_FULL] = concat([segment_data[k] for k in keys])
    for area in Area:
        sub = [segment_data[k] for k in keys if k.area is area]
        if sub:
            out[pooled_label(area)] = concat(sub)
    return out


def fit_all(jobs: Mapping, fitter: Callable[[Dataset, ModelSpec], FitResult],
            workers=1) -> dict:
    """Run ``fitter`` over ``{name: (dataset, spec)}``; results keep job order.

    Failures are returned as the raised exception in place of a fit.
    """
    def run(item):
        name, (data, spec) = item
        try:
            return fitter(data, spec)
        except CrashsevError as exc:
            return exc

    items = list(jobs.items())
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(it) for it in items]
    return {name: res for (name, _), res in zip(items, results)}


def run_battery(full_dataset: Dataset, full_spec: ModelSpec,
                segment_specs: Mapping[SegmentKey, ModelSpec] | None = None,
                confidence=0.99, *, n_draws=500, discard=DEFAULT_DISCARD,
                workers=1, fitter=None) -> BatteryReport:
    """Partition, fit pooled and segment models, and run every test.

    Tests: pooled vs all segments, rural pooled vs rural segments, urban
    pooled vs urban segments, and every ordered pair of segments within
    an area for transfer. ``segment_specs`` defaults to ``full_spec`` for
    every segment. Any failed fit aborts with ``BatteryError``.
    """
    part = partition_dataset(full_dataset)
    segs = dict(part.segments)
    if fitter is None:
        fitter = lambda d, s: fit(d, s, n_draws, discard)
    if len(segs) < 2:
        return BatteryReport(confidence, (), {}, tuple(segs),
                             note="nothing to compare: fewer than two segments")
    specs = {k: (segment_specs or {}).get(k, full_spec) for k in segs}
    jobs = {name: (d, full_spec) for name, d in pooled_datasets(segs).items()}
    jobs.update({k: (segs[k], specs[k]) for k in segs})
    fits = fit_all(jobs, fitter, workers)
    for name, res in fits.items():
        if isinstance(res, Exception):
            label = name.label if isinstance(name, SegmentKey) else name
            raise BatteryError(f"battery aborted: fit for {label!r} failed: {res}", label)
    pooled = {n: f for n, f in fits.items() if isinstance(n, str)}
    seg_fits = {k: f for k, f in fits.items() if isinstance(k, SegmentKey)}
    return battery_from_fits(pooled, seg_fits, segs, confidence)
