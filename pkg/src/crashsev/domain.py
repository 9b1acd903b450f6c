"""Severity scales, segment keys and the crash dataset container."""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, ParseError

logger = logging.getLogger(__name__)


class Kabco(str, enum.Enum):
    K = "K"  # fatal
    A = "A"  # disabling
    B = "B"  # evident
    C = "C"  # possible
    O = "O"  # none

    @classmethod
    def parse(cls, token) -> "Kabco":
        if isinstance(token, cls):
            return token
        key = str(token).strip().upper()
        try:
            return cls(key)
        except ValueError:
            raise ParseError(f"unknown KABCO severity code {token!r}") from None


class SeverityClass(str, enum.Enum):
    MAJOR = "Major"
    MINOR = "Minor"
    POSSIBLE_NO = "PossibleNo"

    @classmethod
    def parse(cls, token) -> "SeverityClass":
        if isinstance(token, cls):
            return token
        key = _norm(token)
        for member in cls:
            if _norm(member.value) == key or _norm(member.name) == key:
                return member
        raise ParseError(f"unknown severity class {token!r}")


SEVERITY_CLASSES: tuple[SeverityClass, ...] = tuple(SeverityClass)

_CONSOLIDATION = {
    Kabco.K: SeverityClass.MAJOR,
    Kabco.A: SeverityClass.MAJOR,
    Kabco.B: SeverityClass.MINOR,
    Kabco.C: SeverityClass.POSSIBLE_NO,
    Kabco.O: SeverityClass.POSSIBLE_NO,
}

# one KABCO code per class, used when writing datasets back to CSV
REPRESENTATIVE_CODE = {
    SeverityClass.MAJOR: Kabco.K,
    SeverityClass.MINOR: Kabco.B,
    SeverityClass.POSSIBLE_NO: Kabco.O,
}


def consolidate_severity(code) -> SeverityClass:
    """Map a KABCO code (K, A, B, C, O) onto the three-level severity scale."""
    return _CONSOLIDATION[Kabco.parse(code)]


class Area(str, enum.Enum):
    RURAL = "Rural"
    URBAN = "Urban"

    @classmethod
    def parse(cls, token) -> "Area":
        if isinstance(token, cls):
            return token
        key = _norm(token)
        for member in cls:
            if key in (_norm(member.value), member.value[0].lower()):
                return member
        raise ParseError(f"unknown area code {token!r}")


class Lighting(str, enum.Enum):
    DAYLIGHT = "Daylight"
    DARK = "Dark"
    DARK_LIGHTED = "DarkLighted"
    DAWN = "Dawn"
    DUSK = "Dusk"

    @classmethod
    def parse(cls, token) -> "Lighting":
        if isinstance(token, cls):
            return token
        key = _norm(token)
        for member in cls:
            if key == _norm(member.value):
                return member
        raise ParseError(f"unknown lighting code {token!r}")


def _norm(token) -> str:
    return "".join(ch for ch in str(token).lower() if ch.isalnum())


class SegmentKey(NamedTuple):
    area: Area
    lighting: Lighting

    @property
    def label(self) -> str:
        """File-system friendly name, e.g. ``rural_dark_lighted``."""
        light = {Lighting.DAYLIGHT: "daylight", Lighting.DARK: "dark",
                 Lighting.DARK_LIGHTED: "dark_lighted"}[self.lighting]
        return f"{self.area.value.lower()}_{light}"

    @classmethod
    def from_label(cls, label: str) -> "SegmentKey":
        area, _, light = label.replace("/", "_").partition("_")
        key = classify_segment(area, light)
        if key is EXCLUDED:
            raise ParseError(f"{label!r} is not a segment")
        return key

    def __str__(self):
        return f"{self.area.value} {self.lighting.value}"


class _Excluded:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EXCLUDED"


EXCLUDED = _Excluded()

SEGMENT_LIGHTING = (Lighting.DAYLIGHT, Lighting.DARK, Lighting.DARK_LIGHTED)
SEGMENT_KEYS: tuple[SegmentKey, ...] = tuple(
    SegmentKey(a, l) for a in Area for l in SEGMENT_LIGHTING
)

# segment sizes of a 41,461-crash reference sample, in SEGMENT_KEYS order
REFERENCE_SEGMENT_COUNTS = dict(zip(SEGMENT_KEYS, (11030, 4429, 822, 20122, 2081, 2977)))


def classify_segment(area, lighting):
    """Return the ``SegmentKey`` for a crash, or ``EXCLUDED`` for dawn/dusk."""
    area = Area.parse(area)
    lighting = Lighting.parse(lighting)
    if lighting in (Lighting.DAWN, Lighting.DUSK):
        return EXCLUDED
    return SegmentKey(area, lighting)


class CovariateKind(str, enum.Enum):
    INDICATOR = "indicator"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class CrashRecord:
    severity: SeverityClass
    area: Area
    lighting: Lighting
    covariates: Mapping[str, float]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented crash observations.

    ``X`` has one row per crash and one column per covariate in ``names``.
    ``severity`` holds indices into ``SEVERITY_CLASSES``. Arrays are made
    read-only on construction. Values are not range-checked here; see
    ``ingest.validate_dataset``.
    """

    severity: np.ndarray
    area: np.ndarray
    lighting: np.ndarray
    X: np.ndarray
    names: tuple[str, ...]
    kinds: Mapping[str, CovariateKind]
    info: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n = len(self.severity)
        if len(set(self.names)) != len(self.names):
            raise DomainError("covariate names must be unique")
        X = np.asarray(self.X, dtype=float)
        if X.size != n * len(self.names):
            raise DomainError(f"covariate matrix has {X.size} values, expected "
                              f"{n} x {len(self.names)}")
        X = X.reshape(n, len(self.names))
        if set(self.kinds) != set(self.names):
            raise DomainError("schema kinds must cover exactly the covariate names")
        if len(self.area) != n or len(self.lighting) != n:
            raise DomainError("severity, area and lighting columns differ in length")
        arrays = {
            "severity": np.asarray(self.severity, dtype=np.int8),
            "area": _code_array(self.area, Area, "U5"),
            "lighting": _code_array(self.lighting, Lighting, "U11"),
            "X": X,
        }
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "kinds", MappingProxyType(
            {k: CovariateKind(self.kinds[k]) for k in self.names}))
        object.__setattr__(self, "info", MappingProxyType(dict(self.info)))

    def __len__(self):
        return len(self.severity)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.names == other.names
                and dict(self.kinds) == dict(other.kinds)
                and np.array_equal(self.severity, other.severity)
                and np.array_equal(self.area, other.area)
                and np.array_equal(self.lighting, other.lighting)
                and np.array_equal(self.X, other.X, equal_nan=True))

    __hash__ = None

    @classmethod
    def from_records(cls, records: Iterable[CrashRecord],
                     kinds: Mapping[str, CovariateKind] | None = None) -> "Dataset":
        records = list(records)
        if kinds is None:
            if not records:
                raise DomainError("cannot infer a schema from zero records")
            kinds = {k: CovariateKind.CONTINUOUS for k in records[0].covariates}
        names = tuple(kinds)
        X = np.array([[r.covariates[k] for k in names] for r in records],
                     dtype=float).reshape(len(records), len(names))
        return cls(
            severity=np.array([SEVERITY_CLASSES.index(SeverityClass.parse(r.severity))
                               for r in records], dtype=np.int8),
            area=[r.area for r in records],
            lighting=[r.lighting for r in records],
            X=X, names=names, kinds=kinds,
        )

    @property
    def records(self) -> Iterator[CrashRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> CrashRecord:
        return CrashRecord(
            severity=SEVERITY_CLASSES[self.severity[i]],
            area=Area(self.area[i]),
            lighting=Lighting(self.lighting[i]),
            covariates=MappingProxyType(dict(zip(self.names, self.X[i].tolist()))),
        )

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def subset(self, mask_or_index) -> "Dataset":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(self.severity[idx], self.area[idx], self.lighting[idx],
                       self.X[idx], self.names, self.kinds)

    def with_covariates(self, names: Sequence[str]) -> "Dataset":
        cols = [self.names.index(n) for n in names]
        return Dataset(self.severity, self.area, self.lighting, self.X[:, cols],
                       tuple(names), {n: self.kinds[n] for n in names})

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.severity, minlength=len(SEVERITY_CLASSES))


def _code_array(values, enum_cls, dtype) -> np.ndarray:
    if not isinstance(values, np.ndarray):
        values = [v.value if isinstance(v, enum.Enum) else v for v in values]
    arr = np.asarray(values)
    if arr.dtype.kind == "U":
        valid = {m.value for m in enum_cls}
        uniq, inverse = np.unique(arr, return_inverse=True)
        canon = np.array([enum_cls.parse(u).value if u not in valid else u
                          for u in uniq.tolist()], dtype=dtype)
        return canon[inverse.reshape(arr.shape)] if len(arr) else arr.astype(dtype)
    return np.asarray([enum_cls.parse(v).value for v in values], dtype=dtype)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    first = datasets[0]
    for d in datasets[1:]:
        if d.names != first.names:
            raise DomainError("cannot concatenate datasets with different schemas")
    return Dataset(
        np.concatenate([d.severity for d in datasets]),
        np.concatenate([d.area for d in datasets]),
        np.concatenate([d.lighting for d in datasets]),
        np.concatenate([d.X for d in datasets]),
        first.names, first.kinds,
    )


@dataclass(frozen=True)
class Partition:
    segments: Mapping[object, Dataset]
    excluded: int

    def __getitem__(self, key):
        return self.segments[key]

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    def counts(self) -> dict:
        return {k: len(v) for k, v in self.segments.items()}


def partition_by(d: Dataset, key: Callable[[str, str], object]) -> Partition:
    """Split ``d`` by ``key(area, lighting)``; keys equal to ``EXCLUDED`` are
    dropped and counted. Segment order follows first appearance in ``d``.
    """
    labels = [key(a, l) for a, l in zip(d.area, d.lighting)]
    groups: dict = {}
    excluded = 0
    for i, lab in enumerate(labels):
        if lab is EXCLUDED:
            excluded += 1
        else:
            groups.setdefault(lab, []).append(i)
    if excluded:
        logger.info("partition: %d record(s) excluded (dawn/dusk)", excluded)
    return Partition({k: d.subset(np.array(v, dtype=int)) for k, v in groups.items()},
                     excluded)


def partition_dataset(d: Dataset) -> Partition:
    """Partition crashes into the six area x lighting segments.

    The returned segments are ordered as ``SEGMENT_KEYS``; segments with
    no records are absent.
    """
    part = partition_by(d, classify_segment)
    ordered = {k: part.segments[k] for k in SEGMENT_KEYS if k in part.segments}
    return Partition(ordered, part.excluded)


@dataclass(frozen=True)
class ContinuousSummary:
    mean: float
    sd: float
    min: float
    max: float


@dataclass(frozen=True)
class DescriptiveStats:
    n: int
    severity_shares: Mapping[SeverityClass, float]
    indicator_shares: Mapping[str, float]
    continuous: Mapping[str, ContinuousSummary]


def descriptive_stats(d: Dataset) -> DescriptiveStats:
    """Indicator shares (percent), continuous moments (sample sd) and
    severity-class shares (percent)."""
    n = len(d)
    if n == 0:
        raise DomainError("descriptive statistics of an empty dataset")
    counts = d.class_counts()
    sev = {c: 100.0 * counts[i] / n for i, c in enumerate(SEVERITY_CLASSES)}
    ind, cont = {}, {}
    for j, name in enumerate(d.names):
        col = d.X[:, j]
        if d.kinds[name] is CovariateKind.INDICATOR:
            ind[name] = 100.0 * float(np.mean(col == 1.0))
        else:
            sd = float(np.std(col, ddof=1)) if n > 1 else math.nan
            cont[name] = ContinuousSummary(float(np.mean(col)), sd,
                                           float(np.min(col)), float(np.max(col)))
    return DescriptiveStats(n, sev, ind, cont)
