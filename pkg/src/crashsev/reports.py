"""Markdown and CSV renderings of descriptive statistics, fits and test batteries.

Markdown shows numbers at table precision (coefficients 2 dp, marginal
effects 4 dp, pseudo-R-squared 3 dp); CSV and JSON carry full precision.
Nothing here reads a clock, so the same inputs give the same bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .domain import SEGMENT_KEYS, CovariateKind, DescriptiveStats, SegmentKey
from .estimate import FitResult
from .inference import MarginalEffectsTable, NormalShares
from .model import sd_name
from .modeltests import BatteryReport

CLASS_TITLE = {"Major": "major injury", "Minor": "minor injury",
               "PossibleNo": "possible or no injury"}


def fmt(x, dp: int) -> str:
    """Fixed-point text; ``n/a`` for missing values and no negative zero."""
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "n/a"
    s = f"{x:.{dp}f}"
    return s[1:] if s.startswith("-") and float(s) == 0.0 else s


def full(x) -> str:
    """Shortest round-trip text of a number for machine-readable files."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else full(v) for v in r])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def segment_title(name) -> str:
    if isinstance(name, SegmentKey):
        return str(name)
    try:
        return str(SegmentKey.from_label(name))
    except Exception:
        return {"full": "Full model (all segments)", "rural": "Rural (all lighting)",
                "urban": "Urban (all lighting)"}.get(name, name)


# ---------------------------------------------------------------------------
# describe

def describe_markdown(stats: Mapping[SegmentKey, DescriptiveStats], excluded: int,
                      kinds: Mapping[str, CovariateKind]) -> str:
    total = sum(s.n for s in stats.values())
    out = ["# Descriptive statistics", "", "## Segment counts", ""]
    rows = [[str(k), str(stats[k].n) if k in stats else "0",
             fmt(100.0 * stats[k].n / total, 1) if k in stats and total else "0.0"]
            for k in SEGMENT_KEYS]
    rows.append(["Total (segmented)", str(total), "100.0" if total else "0.0"])
    rows.append(["Excluded (dawn/dusk)", str(excluded), ""])
    out += [md_table(["Segment", "Crashes", "Share (%)"], rows), ""]
    for k in SEGMENT_KEYS:
        out += [f"## {k}", ""]
        if k not in stats:
            out += ["_Warning: no crashes in this segment; table omitted._", ""]
            continue
        s = stats[k]
        out += [f"Crashes: {s.n}", ""]
        out += [md_table(["Severity", "Share (%)"],
                         [[c.value, fmt(v, 1)] for c, v in s.severity_shares.items()]), ""]
        if s.indicator_shares:
            out += ["### Indicator variables", "",
                    md_table(["Variable", "Share (%)"],
                             [[n, fmt(v, 1)] for n, v in s.indicator_shares.items()]), ""]
        if s.continuous:
            out += ["### Continuous variables", "",
                    md_table(["Variable", "Mean", "Standard deviation", "Minimum", "Maximum"],
                             [[n, fmt(c.mean, 2), fmt(c.sd, 2), fmt(c.min, 2), fmt(c.max, 2)]
                              for n, c in s.continuous.items()]), ""]
    return "\n".join(out)


def describe_csv(stats: Mapping[SegmentKey, DescriptiveStats], excluded: int) -> str:
    rows = []
    for k in SEGMENT_KEYS:
        if k not in stats:
            rows.append([k.label, "", "", "n", 0])
            continue
        s = stats[k]
        rows.append([k.label, "", "", "n", s.n])
        for c, v in s.severity_shares.items():
            rows.append([k.label, c.value, "severity", "share_pct", v])
        for n, v in s.indicator_shares.items():
            rows.append([k.label, n, "indicator", "share_pct", v])
        for n, c in s.continuous.items():
            for stat in ("mean", "sd", "min", "max"):
                rows.append([k.label, n, "continuous", stat, getattr(c, stat)])
    rows.append(["excluded", "", "", "n", excluded])
    return csv_text(["segment", "variable", "kind", "statistic", "value"], rows)


# ---------------------------------------------------------------------------
# fit

@dataclass(frozen=True)
class FitSummary:
    """A fit plus the interpretation shown alongside it."""

    name: str
    fit: FitResult
    effects: MarginalEffectsTable
    shares: Mapping[str, NormalShares]
    retention: tuple  # RetentionFlag
    retention_confidence: float
    retention_threshold: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "fit": self.fit.to_dict(),
            "marginal_effects": {
                "mode": self.effects.mode,
                "rows": [{"variable": r.variable, "home": r.home.value, "coef": r.coef,
                          "effects": {a.value: r.effects[a] for a in self.effects.alternatives}}
                         for r in self.effects.rows]},
            "random_shares": {k: {"positive": v.positive, "negative": v.negative}
                              for k, v in self.shares.items()},
            "retention": {"confidence": self.retention_confidence,
                          "threshold": self.retention_threshold,
                          "flags": [{"param": f.param, "coef": f.coef, "action": f.action,
                                     "t_stat": f.t_stat} for f in self.retention]},
        }


def _coef_rows(s: FitSummary) -> list[list[str]]:
    fit = s.fit
    spec = fit.spec
    idx = {n: i for i, n in enumerate(fit.param_names)}
    alts = s.effects.alternatives
    me = {(r.variable, r.home): r.effects for r in s.effects.rows}
    rows = []
    for alt in spec.alternatives:
        terms = [t for t in spec.terms if t.alternative is alt]
        if not terms:
            continue
        rows.append([f"**Defined for {CLASS_TITLE[alt.value]}**"] + [""] * (3 + len(alts)))
        for t in terms:
            i = idx[t.coef]
            est = fmt(fit.reported_value(t.coef), 2)
            tt = fmt(fit.t_stats[i], 2)
            pp = fmt(fit.p_values[i], 3)
            label = "Constant" if t.is_constant else t.variable
            if t.coef in spec.random:
                j = idx[sd_name(t.coef)]
                label += " (standard deviation of parameter distribution)"
                est += f" ({fmt(fit.reported_value(sd_name(t.coef)), 2)})"
                tt += f" ({fmt(fit.t_stats[j], 2)})"
                pp += f" ({fmt(fit.p_values[j], 3)})"
            if t.coef in fit.held:
                label += " [held]"
            eff = me.get((t.variable, alt))
            cells = [fmt(eff[a], 4) for a in alts] if eff is not None else [""] * len(alts)
            rows.append([label, est, tt, pp] + cells)
    return rows


def fit_markdown_section(s: FitSummary) -> str:
    fit = s.fit
    alts = s.effects.alternatives
    header = (["Variable", "Coefficient", "t-statistic", "p-value"]
              + [f"ME {a.value}" for a in alts])
    out = [f"## {segment_title(s.name)}", "", md_table(header, _coef_rows(s)), ""]
    if s.shares:
        out += ["Random parameters (share of crashes with a positive / negative coefficient):", ""]
        for cid, sh in s.shares.items():
            out.append(f"- {cid}: {fmt(100 * sh.positive, 1)}% above zero, "
                       f"{fmt(100 * sh.negative, 1)}% below zero")
        out.append("")
    stats = [["Number of observations", str(fit.n_obs)],
             ["Restricted log-likelihood (constants only)", fmt(fit.ll_restricted, 2)],
             ["Log-likelihood at zero (equal shares)", fmt(fit.ll_zero, 2)],
             ["Log-likelihood at convergence", fmt(fit.ll_converged, 2)],
             ["ρ² (constants-only base)", fmt(fit.rho2, 3)],
             ["ρ² (zero base)", fmt(fit.rho2_zero, 3)]]
    if fit.is_mixed:
        stats.append(["Halton draws (discarded)", f"{fit.n_draws} ({fit.discard})"])
    conv = fit.convergence
    stats.append(["Convergence", f"{conv.status}, {conv.iterations} iterations"])
    if fit.covariance_flag:
        stats.append(["Covariance", fit.covariance_flag])
    out += ["Model statistics", "", md_table(["Statistic", "Value"], stats), ""]
    conf = fmt(100 * s.retention_confidence, 0)
    if s.retention:
        out.append(f"Retention flags at {conf}% (|t| < {fmt(s.retention_threshold, 3)}):")
        out.append("")
        for f in s.retention:
            out.append(f"- {f.param}: t = {fmt(f.t_stat, 2)}, {f.action}")
    else:
        out.append(f"Retention flags at {conf}% (|t| < {fmt(s.retention_threshold, 3)}): none")
    out.append("")
    return "\n".join(out)


def fit_markdown(summaries: Sequence[FitSummary], failures: Mapping[str, str]) -> str:
    out = ["# Model estimation results", ""]
    for s in summaries:
        out.append(fit_markdown_section(s))
    for name, msg in failures.items():
        out += [f"## {segment_title(name)}", "", f"_Fit failed: {msg}_", ""]
    return "\n".join(out)


def coefficients_csv(summaries: Sequence[FitSummary]) -> str:
    rows = []
    for s in summaries:
        fit = s.fit
        flagged = {f.param: f.action for f in s.retention}
        for i, name in enumerate(fit.param_names):
            kind = ("sd" if name.startswith("sd.") else
                    "mean" if name in fit.spec.random else "fixed")
            rows.append([s.name, name, kind, fit.reported_value(name), fit.std_errors[i],
                         fit.t_stats[i], fit.p_values[i], name in fit.held,
                         flagged.get(name, "")])
    return csv_text(["model", "param", "kind", "estimate", "std_error", "t_stat", "p_value",
                     "held", "retention_flag"], rows)


def effects_csv(summaries: Sequence[FitSummary]) -> str:
    alts = None
    rows = []
    for s in summaries:
        alts = s.effects.alternatives
        for r in s.effects.rows:
            rows.append([s.name, r.variable, r.home.value, r.coef, s.effects.mode]
                        + [r.effects[a] for a in alts])
    names = [a.value for a in alts] if alts else []
    return csv_text(["model", "variable", "home", "coef", "mode"] + names, rows)


def shares_csv(summaries: Sequence[FitSummary]) -> str:
    rows = []
    for s in summaries:
        for cid, sh in s.shares.items():
            rows.append([s.name, cid, s.fit.estimates.random[cid][0],
                         abs(s.fit.estimates.random[cid][1]), sh.positive, sh.negative])
    return csv_text(["model", "coef", "mu", "sigma", "share_positive", "share_negative"], rows)


def model_stats_csv(summaries: Sequence[FitSummary]) -> str:
    rows = [[s.name, s.fit.n_obs, s.fit.ll_restricted, s.fit.ll_zero, s.fit.ll_converged,
             s.fit.rho2, s.fit.rho2_zero, s.fit.n_estimated, s.fit.n_draws, s.fit.discard,
             s.fit.convergence.iterations, s.fit.convergence.status, s.fit.covariance_flag]
            for s in summaries]
    return csv_text(["model", "n_obs", "ll_restricted", "ll_zero", "ll_converged", "rho2",
                     "rho2_zero", "n_estimated", "n_draws", "discard", "iterations", "status",
                     "covariance_flag"], rows)


# ---------------------------------------------------------------------------
# tests

def tests_markdown(report: BatteryReport) -> str:
    conf = fmt(100 * report.confidence, 0)
    out = [f"# Model specification tests ({conf}% confidence)", ""]
    if report.nothing_to_compare:
        out += [f"_{report.note or 'nothing to compare'}_", ""]
        return "\n".join(out)
    out += ["## (a) Pooled versus segment models", ""]
    rows = []
    for r in report.partition:
        segs = "; ".join(f"{segment_title(n)} {fmt(ll, 2)}"
                         for n, ll in zip(r.subgroups, r.ll_subgroups))
        if r.result is None:
            rows.append([r.label, fmt(r.ll_pooled, 2), segs, "", "", "", r.note])
            continue
        t = r.result
        rows.append([r.label, fmt(r.ll_pooled, 2), segs, fmt(t.statistic, 2), str(t.df),
                     fmt(t.critical_value, 2), t.comment + (f" ({t.flag})" if t.flag else "")])
    out += [md_table(["Test", "LL pooled", "LL segments", "LR", "df", "χ² critical",
                      "Comment"], rows), ""]
    out += ["## (b) Transferability between segments", "",
            "Rows: data of segment k1. Columns: parameters of segment k2. "
            "Cells: LR (df), marked * where LR > χ².", ""]
    for area, cells in report.transfer.items():
        keys = list(dict.fromkeys(c.k1 for c in cells))
        grid = {(c.k1, c.k2): c for c in cells}
        rows = []
        for k1 in keys:
            row = [k1.lighting.value]
            for k2 in keys:
                c = grid[(k1, k2)]
                if c.result is None:
                    row.append("not evaluable")
                else:
                    star = "*" if c.result.reject_null else ""
                    row.append(f"{fmt(c.result.statistic, 2)}{star} (df = {c.result.df})")
            rows.append(row)
        out += [f"### {area.value}", "",
                md_table(["k1 \\ k2"] + [k.lighting.value for k in keys], rows), ""]
        notes = [f"- {c.k1} <- {c.k2}: {c.note}" for c in cells if c.note]
        if notes:
            out += notes + [""]
    return "\n".join(out)


def partition_csv(report: BatteryReport) -> str:
    rows = []
    for r in report.partition:
        t = r.result
        rows.append([r.label, r.pooled, r.ll_pooled, ";".join(r.subgroups),
                     ";".join(full(v) for v in r.ll_subgroups),
                     None if t is None else t.statistic, None if t is None else t.df,
                     None if t is None else t.critical_value,
                     "" if t is None else full(t.reject_null), r.note])
    return csv_text(["test", "pooled", "ll_pooled", "segments", "ll_segments", "statistic",
                     "df", "critical_value", "reject", "note"], rows)


def transfer_csv(report: BatteryReport) -> str:
    rows = []
    for area, cells in report.transfer.items():
        for c in cells:
            t = c.result
            rows.append([area.value, c.k1.label, c.k2.label,
                         None if t is None else t.inputs["ll_k1"],
                         None if t is None else t.inputs["ll_k1k2"],
                         None if t is None else t.statistic, None if t is None else t.df,
                         None if t is None else t.critical_value,
                         "" if t is None else full(t.reject_null), c.note])
    return csv_text(["area", "k1", "k2", "ll_k1", "ll_k1k2", "statistic", "df",
                     "critical_value", "reject", "note"], rows)
