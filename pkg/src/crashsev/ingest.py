"""CSV crash files: schema-driven parsing, covariate derivation and validation."""
from __future__ import annotations

import csv
import logging
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .domain import (REPRESENTATIVE_CODE, SEVERITY_CLASSES, Area, CovariateKind, Dataset,
                     Lighting, consolidate_severity)
from .errors import DomainError, ParseError, RowError, SchemaError

logger = logging.getLogger(__name__)

SOURCE_KINDS = ("categorical", "numeric", "indicator")
TRANSFORM_KINDS = ("natural_log", "scale", "indicator", "band")

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
        "==": operator.eq, "!=": operator.ne}


@dataclass(frozen=True)
class TransformRule:
    """A derived covariate.

    ``natural_log`` and ``scale`` (by ``factor``) give continuous outputs;
    ``indicator`` and ``band`` give 0/1 outputs. An indicator predicate is
    either membership in ``values`` or a comparison ``op`` against
    ``threshold``. ``band`` is the closed interval ``[lo, hi]``.
    """

    kind: str
    source: str
    output: str
    factor: float | None = None
    values: tuple = ()
    op: str | None = None
    threshold: float | None = None
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise SchemaError(f"unknown transform kind {self.kind!r}")
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        if self.kind == "scale" and self.factor is None:
            raise SchemaError(f"scale rule for {self.output!r} needs a factor")
        if self.kind == "band":
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise SchemaError(f"band rule for {self.output!r} needs lo < hi")
        if self.kind == "indicator":
            if bool(self.values) == (self.op is not None):
                raise SchemaError(f"indicator rule for {self.output!r} needs either "
                                  "values or op/threshold")
            if self.op is not None and (self.op not in _OPS or self.threshold is None):
                raise SchemaError(f"indicator rule for {self.output!r} has a bad comparison")

    @property
    def covariate_kind(self) -> CovariateKind:
        if self.kind in ("indicator", "band"):
            return CovariateKind.INDICATOR
        return CovariateKind.CONTINUOUS

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "source": self.source, "output": self.output}
        for key in ("factor", "op", "threshold", "lo", "hi"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.values:
            d["values"] = list(self.values)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TransformRule":
        unknown = set(d) - {"kind", "source", "output", "factor", "values", "op",
                            "threshold", "lo", "hi"}
        if unknown:
            raise SchemaError(f"unknown transform field(s) {sorted(unknown)}")
        try:
            return cls(**{**d, "values": tuple(d.get("values", ()))})
        except TypeError as exc:
            raise SchemaError(f"bad transform rule {dict(d)}: {exc}") from None


def apply_transform(rule: TransformRule, value) -> float:
    """Value of ``rule``'s output for one source cell."""
    if rule.kind == "indicator" and rule.values:
        token = str(value).strip()
        if token in rule.values:
            return 1.0
        try:
            x = float(token)
        except ValueError:
            return 0.0
        return 1.0 if any(_as_float(v) == x for v in rule.values) else 0.0
    x = float(value)
    if rule.kind == "natural_log":
        if not x > 0:
            raise DomainError(f"natural_log of non-positive value {x} for {rule.output!r}")
        return math.log(x)
    if rule.kind == "scale":
        return x * rule.factor
    if rule.kind == "band":
        return 1.0 if rule.lo <= x <= rule.hi else 0.0
    return 1.0 if _OPS[rule.op](x, rule.threshold) else 0.0


def _as_float(token):
    try:
        return float(token)
    except ValueError:
        return None


@dataclass(frozen=True)
class SchemaSpec:
    """Source columns and their kinds, derivations, and the three role columns.

    Numeric columns become continuous covariates and indicator columns 0/1
    covariates; categorical columns only feed transforms. ``keep`` restricts
    (and orders) the covariates placed in the dataset.
    """

    columns: Mapping[str, str] = field(default_factory=dict)
    transforms: tuple = ()
    severity: str = "severity"
    area: str = "area"
    lighting: str = "lighting"
    keep: tuple | None = None

    def __post_init__(self):
        cols = dict(self.columns)
        for name, kind in cols.items():
            if kind not in SOURCE_KINDS:
                raise SchemaError(f"column {name!r} has unknown kind {kind!r}")
        roles = (self.severity, self.area, self.lighting)
        if len(set(roles)) != 3:
            raise SchemaError("severity, area and lighting must be different columns")
        clash = [r for r in roles if r in cols]
        if clash:
            raise SchemaError(f"role column(s) {clash} must not be listed as covariates")
        rules = tuple(r if isinstance(r, TransformRule) else TransformRule.from_dict(r)
                      for r in self.transforms)
        for r in rules:
            if r.source not in cols:
                raise SchemaError(f"transform {r.output!r} references unknown column {r.source!r}")
            if r.kind != "indicator" and cols[r.source] == "categorical":
                raise SchemaError(f"{r.kind} transform {r.output!r} needs a numeric source")
        outputs = [n for n, k in cols.items() if k != "categorical"] + [r.output for r in rules]
        dup = sorted({n for n in outputs if outputs.count(n) > 1})
        if dup:
            raise SchemaError(f"duplicate covariate name(s) {dup}")
        if self.keep is not None:
            missing = [k for k in self.keep if k not in outputs]
            if missing:
                raise SchemaError(f"keep lists unknown covariate(s) {missing}")
            object.__setattr__(self, "keep", tuple(self.keep))
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "transforms", rules)

    @property
    def source_columns(self) -> tuple[str, ...]:
        return (self.severity, self.area, self.lighting) + tuple(self.columns)

    @property
    def covariate_kinds(self) -> dict:
        kinds = {n: (CovariateKind.INDICATOR if k == "indicator" else CovariateKind.CONTINUOUS)
                 for n, k in self.columns.items() if k != "categorical"}
        kinds.update({r.output: r.covariate_kind for r in self.transforms})
        if self.keep is not None:
            kinds = {k: kinds[k] for k in self.keep}
        return kinds

    def to_dict(self) -> dict:
        d = {"columns": dict(self.columns),
             "transforms": [r.to_dict() for r in self.transforms],
             "severity": self.severity, "area": self.area, "lighting": self.lighting}
        if self.keep is not None:
            d["keep"] = list(self.keep)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SchemaSpec":
        unknown = set(d) - {"columns", "transforms", "severity", "area", "lighting", "keep"}
        if unknown:
            raise SchemaError(f"unknown schema field(s) {sorted(unknown)}")
        keep = d.get("keep")
        return cls(dict(d.get("columns", {})), tuple(d.get("transforms", ())),
                   d.get("severity", "severity"), d.get("area", "area"),
                   d.get("lighting", "lighting"), None if keep is None else tuple(keep))


@dataclass(frozen=True)
class ParseReport:
    rows_read: int
    rows_kept: int
    skipped: tuple  # (line number, message)

    @property
    def rows_skipped(self) -> int:
        return len(self.skipped)


def parse_dataset(path, schema: SchemaSpec, strict: bool = False) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row.

    Rows with an unparseable cell, an unknown severity/area/lighting code or
    a failed derivation are skipped and counted, or raise ``RowError`` with
    the file line number when ``strict``. The ``ParseReport`` is stored in
    ``Dataset.info["parse"]``.
    """
    path = Path(path)
    kinds = schema.covariate_kinds
    names = tuple(kinds)
    direct = [n for n, k in schema.columns.items() if k != "categorical"]
    sev, area, light, rows, skipped = [], [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.source_columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        pos = {c: header.index(c) for c in schema.source_columns}
        n_read = 0
        for cells in reader:
            if not cells or all(not c.strip() for c in cells):
                continue
            n_read += 1
            line = reader.line_num
            try:
                if len(cells) != len(header):
                    raise ParseError(f"expected {len(header)} fields, found {len(cells)}")
                get = lambda c: cells[pos[c]].strip()
                s = SEVERITY_CLASSES.index(consolidate_severity(get(schema.severity)))
                a = Area.parse(get(schema.area)).value
                li = Lighting.parse(get(schema.lighting)).value
                values = {}
                for c in direct:
                    values[c] = _number(get(c), c)
                for r in schema.transforms:
                    raw = get(r.source)
                    if r.kind != "indicator" or schema.columns[r.source] != "categorical":
                        raw = _number(raw, r.source)
                    values[r.output] = apply_transform(r, raw)
            except (ParseError, DomainError) as exc:
                if strict:
                    raise RowError(f"{path}: {exc}", line) from None
                skipped.append((line, str(exc)))
                continue
            sev.append(s)
            area.append(a)
            light.append(li)
            rows.append([values[n] for n in names])
    if skipped:
        logger.warning("%s: skipped %d of %d row(s); first at line %d: %s",
                       path, len(skipped), n_read, skipped[0][0], skipped[0][1])
    report = ParseReport(n_read, len(rows), tuple(skipped))
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return Dataset(np.array(sev, dtype=np.int8), np.array(area, dtype="U5"),
                   np.array(light, dtype="U11"), X, names, kinds,
                   info={"source": str(path), "parse": report})


def _number(token: str, column: str) -> float:
    try:
        x = float(token)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot read {token!r} as a number") from None
    if not math.isfinite(x):
        raise ParseError(f"column {column!r}: non-finite value {token!r}")
    return x


def schema_for(d: Dataset, severity="severity", area="area", lighting="lighting") -> SchemaSpec:
    """Schema that reads back a file written by ``write_dataset``."""
    cols = {n: ("indicator" if d.kinds[n] is CovariateKind.INDICATOR else "numeric")
            for n in d.names}
    return SchemaSpec(cols, (), severity, area, lighting)


def write_dataset(d: Dataset, path, severity="severity", area="area", lighting="lighting"):
    """Write ``d`` as CSV. Severity is written as a representative KABCO code
    and floats in shortest round-trip form, so re-parsing gives an equal dataset."""
    path = Path(path)
    codes = [REPRESENTATIVE_CODE[c].value for c in SEVERITY_CLASSES]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([severity, area, lighting, *d.names])
        for i in range(len(d)):
            w.writerow([codes[d.severity[i]], d.area[i], d.lighting[i],
                        *(repr(float(x)) for x in d.X[i])])
    return path


@dataclass(frozen=True)
class Violation:
    column: str
    problem: str
    rows: tuple

    def __str__(self):
        head = ", ".join(str(r) for r in self.rows[:5])
        more = f" (+{len(self.rows) - 5} more)" if len(self.rows) > 5 else ""
        return f"{self.column}: {self.problem} at row(s) {head}{more}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple
    warnings: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dataset(d: Dataset) -> ValidationReport:
    """Report non-finite values and indicators outside {0, 1} (violations)
    and zero-variance columns (warnings). Never raises."""
    violations, warnings = [], []
    for j, name in enumerate(d.names):
        col = d.X[:, j]
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            violations.append(Violation(name, "non-finite value", tuple(bad.tolist())))
        if d.kinds[name] is CovariateKind.INDICATOR:
            off = np.flatnonzero(np.isfinite(col) & (col != 0.0) & (col != 1.0))
            if off.size:
                violations.append(Violation(name, "indicator outside {0, 1}",
                                            tuple(off.tolist())))
        finite = col[np.isfinite(col)]
        if len(d) > 0 and (finite.size == 0 or np.all(finite == finite[0])):
            warnings.append(f"{name}: zero variance")
    return ValidationReport(tuple(violations), tuple(warnings))

