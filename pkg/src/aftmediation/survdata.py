"""Censored / truncated survival observations with exposure, mediator and covariates.

A :class:`Dataset` stores one row per subject in columnar numpy arrays:

``status``  0 exact, 1 right-censored, 2 interval-censored
``time1``   event time, censoring time, or left interval bound
``time2``   event time, ``inf``, or right interval bound
``entry``   left-truncation time, ``nan`` when the subject is not truncated

CSV files follow the ``interval2`` convention of R's ``Surv``: two time columns,
with an empty (or ``NA``) second column meaning right-censored and equal
columns meaning an exact event time.  A ``time`` + ``event`` pair is accepted
as well.
"""

from __future__ import annotations

import csv
import enum
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

__all__ = [
    "OutcomeKind",
    "SurvivalOutcome",
    "Subject",
    "Dataset",
    "Schema",
    "CensoringSummary",
    "DataValidationError",
    "read_csv",
    "write_csv",
    "summarize",
]

EXACT, RIGHT, INTERVAL = 0, 1, 2
_MISSING = {"", "na", "nan", "."}


class DataValidationError(ValueError):
    """Invalid survival data; ``problems`` lists ``(row, message)`` pairs."""

    def __init__(self, problems: Sequence[tuple[int | None, str]]):
        self.problems = list(problems)
        lines = [f"row {row}: {msg}" if row is not None else msg for row, msg in self.problems[:20]]
        if len(self.problems) > 20:
            lines.append(f"... and {len(self.problems) - 20} more")
        super().__init__("\n".join(lines))


class OutcomeKind(enum.IntEnum):
    EXACT = EXACT
    RIGHT = RIGHT
    INTERVAL = INTERVAL


@dataclass(frozen=True)
class SurvivalOutcome:
    """One subject's observed event-time information."""

    kind: OutcomeKind
    time: float
    upper: float | None = None
    truncation: float | None = None

    def __post_init__(self):
        problems = _outcome_problems(
            int(self.kind), self.time, self.upper if self.upper is not None else math.nan,
            self.truncation if self.truncation is not None else math.nan,
        )
        if problems:
            raise DataValidationError([(None, p) for p in problems])

    @classmethod
    def exact(cls, t: float, truncation: float | None = None) -> SurvivalOutcome:
        return cls(OutcomeKind.EXACT, float(t), None, truncation)

    @classmethod
    def right(cls, c: float, truncation: float | None = None) -> SurvivalOutcome:
        return cls(OutcomeKind.RIGHT, float(c), None, truncation)

    @classmethod
    def interval(cls, lower: float, upper: float, truncation: float | None = None) -> SurvivalOutcome:
        return cls(OutcomeKind.INTERVAL, float(lower), float(upper), truncation)

    @property
    def time2(self) -> float:
        if self.kind == OutcomeKind.EXACT:
            return self.time
        if self.kind == OutcomeKind.RIGHT:
            return math.inf
        return float(self.upper)


@dataclass(frozen=True)
class Subject:
    outcome: SurvivalOutcome
    exposure: float
    mediator: float
    covariates: tuple[float, ...] = ()


def _outcome_problems(kind: int, t1: float, t2: float, entry: float) -> list[str]:
    out = []
    if not (math.isfinite(t1) and t1 > 0):
        out.append(f"time must be positive and finite, got {t1}")
    if kind == INTERVAL:
        if not (t2 > 0 and math.isfinite(t2)):
            out.append(f"interval upper bound must be positive and finite, got {t2}")
        elif not t1 < t2:
            out.append(f"interval bounds violate l < r (l={t1}, r={t2})")
    if not math.isnan(entry):
        if not (entry > 0 and math.isfinite(entry)):
            out.append(f"truncation time must be positive, got {entry}")
        elif entry > t1:
            out.append(f"truncation time {entry} exceeds observed time {t1}")
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar survival dataset."""

    status: np.ndarray
    time1: np.ndarray
    time2: np.ndarray
    entry: np.ndarray
    exposure: np.ndarray
    mediator: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        n = len(self.time1)
        status = np.array(self.status, dtype=np.int8, copy=True)
        status.flags.writeable = False
        object.__setattr__(self, "status", status)
        for name in ("time1", "time2", "entry", "exposure", "mediator"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        cov = np.array(self.covariates, dtype=float, copy=True)
        if cov.ndim == 1:
            cov = cov.reshape(n, -1) if cov.size else np.zeros((n, 0))
        cov.flags.writeable = False
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if self.validate:
            self._check()

    def _check(self):
        n = len(self.time1)
        problems: list[tuple[int | None, str]] = []
        if n == 0:
            raise DataValidationError([(None, "dataset is empty")])
        for name in ("status", "time2", "entry", "exposure", "mediator"):
            if len(getattr(self, name)) != n:
                problems.append((None, f"column {name} has length {len(getattr(self, name))}, expected {n}"))
        if self.covariates.shape != (n, len(self.covariate_names)):
            problems.append((None, f"covariates shape {self.covariates.shape} does not match "
                                   f"{n} rows x {len(self.covariate_names)} names"))
        if problems:
            raise DataValidationError(problems)
        bad_status = ~np.isin(self.status, (EXACT, RIGHT, INTERVAL))
        for i in np.flatnonzero(bad_status):
            problems.append((i + 1, f"unknown status code {self.status[i]}"))
        # vectorized screening, then exact messages for offending rows only
        t1, t2, v = self.time1, self.time2, self.entry
        with np.errstate(invalid="ignore"):
            suspect = ~(np.isfinite(t1) & (t1 > 0))
            suspect |= (self.status == INTERVAL) & ~(np.isfinite(t2) & (t2 > t1))
            suspect |= (self.status == EXACT) & (t2 != t1)
            suspect |= (self.status == RIGHT) & (t2 != np.inf)
            suspect |= ~np.isnan(v) & ~((v > 0) & (v <= t1))
        for i in np.flatnonzero(suspect & ~bad_status):
            msgs = _outcome_problems(int(self.status[i]), float(t1[i]), float(t2[i]), float(v[i]))
            if not msgs:
                msgs = [f"time2 {t2[i]} inconsistent with status {int(self.status[i])}"]
            problems.extend((i + 1, m) for m in msgs)
        for name in ("exposure", "mediator"):
            col = getattr(self, name)
            for i in np.flatnonzero(~np.isfinite(col)):
                problems.append((i + 1, f"missing or non-finite {name}"))
        for i in np.flatnonzero(~np.isfinite(self.covariates).all(axis=1)):
            problems.append((i + 1, "missing or non-finite covariate"))
        if problems:
            raise DataValidationError(problems)
        if np.all(self.status == RIGHT):
            raise DataValidationError([(None, "all outcomes are right-censored; the scale is not identifiable")])

    # construction helpers

    @classmethod
    def from_subjects(cls, subjects: Iterable[Subject], covariate_names: Sequence[str] = ()) -> Dataset:
        subjects = list(subjects)
        k = len(covariate_names)
        for i, s in enumerate(subjects):
            if len(s.covariates) != k:
                raise DataValidationError([(i + 1, f"expected {k} covariates, got {len(s.covariates)}")])
        return cls(
            status=[int(s.outcome.kind) for s in subjects],
            time1=[s.outcome.time for s in subjects],
            time2=[s.outcome.time2 for s in subjects],
            entry=[s.outcome.truncation if s.outcome.truncation is not None else math.nan for s in subjects],
            exposure=[s.exposure for s in subjects],
            mediator=[s.mediator for s in subjects],
            covariates=np.array([s.covariates for s in subjects], dtype=float).reshape(len(subjects), k),
            covariate_names=tuple(covariate_names),
        )

    @classmethod
    def from_arrays(cls, time1, time2=None, exposure=None, mediator=None, covariates=None,
                    covariate_names: Sequence[str] | None = None, entry=None) -> Dataset:
        """Build from ``interval2``-style arrays (``time2`` NaN = right-censored)."""
        t1 = np.asarray(time1, dtype=float)
        n = len(t1)
        t2 = t1.copy() if time2 is None else np.asarray(time2, dtype=float)
        status = np.where(np.isnan(t2), RIGHT, np.where(t2 == t1, EXACT, INTERVAL))
        t2 = np.where(np.isnan(t2), np.inf, t2)
        cov = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(n, -1)
        names = tuple(covariate_names) if covariate_names is not None else tuple(f"z{j + 1}" for j in range(cov.shape[1]))
        return cls(
            status=status,
            time1=t1,
            time2=t2,
            entry=np.full(n, np.nan) if entry is None else np.asarray(entry, dtype=float),
            exposure=np.zeros(n) if exposure is None else exposure,
            mediator=np.zeros(n) if mediator is None else mediator,
            covariates=cov,
            covariate_names=names,
        )

    # accessors

    def __len__(self) -> int:
        return len(self.time1)

    @property
    def n(self) -> int:
        return len(self.time1)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def outcome(self, i: int) -> SurvivalOutcome:
        v = float(self.entry[i])
        trunc = None if math.isnan(v) else v
        kind = OutcomeKind(int(self.status[i]))
        upper = float(self.time2[i]) if kind == OutcomeKind.INTERVAL else None
        return SurvivalOutcome(kind, float(self.time1[i]), upper, trunc)

    @property
    def subjects(self) -> Iterator[Subject]:
        for i in range(self.n):
            yield Subject(self.outcome(i), float(self.exposure[i]), float(self.mediator[i]),
                          tuple(float(z) for z in self.covariates[i]))

    def take(self, idx) -> Dataset:
        """Row subset / resample (no re-validation beyond the identifiability check)."""
        idx = np.asarray(idx)
        ds = Dataset(
            status=self.status[idx], time1=self.time1[idx], time2=self.time2[idx], entry=self.entry[idx],
            exposure=self.exposure[idx], mediator=self.mediator[idx], covariates=self.covariates[idx],
            covariate_names=self.covariate_names, validate=False,
        )
        if np.all(ds.status == RIGHT):
            raise DataValidationError([(None, "all outcomes are right-censored; the scale is not identifiable")])
        return ds

    def replace(self, **changes) -> Dataset:
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "validate"}
        kw.update(changes)
        return Dataset(**kw)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.covariate_names != other.covariate_names:
            return False
        return all(
            np.array_equal(getattr(self, f), getattr(other, f), equal_nan=True)
            for f in ("status", "time1", "time2", "entry", "exposure", "mediator", "covariates")
        )

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, covariates={list(self.covariate_names)})"


# CSV ingestion


@dataclass(frozen=True)
class Schema:
    """Column mapping for :func:`read_csv`.

    Either ``time1``/``time2`` (interval2 convention) or ``time``/``event``
    (event = 1 observed, 0 right-censored) identifies the outcome.
    """

    exposure: str = "exposure"
    mediator: str = "mediator"
    time1: str | None = "time1"
    time2: str | None = "time2"
    time: str | None = None
    event: str | None = None
    truncation: str | None = None
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.time is not None:
            object.__setattr__(self, "time1", None)
            object.__setattr__(self, "time2", None)
        elif self.time1 is None:
            raise ValueError("schema needs time1 (+ time2) or time (+ event)")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> Schema:
        kw: dict = {}
        known = {f.name for f in fields(cls)}
        for key, value in mapping.items():
            key = key.strip().lower()
            if key not in known:
                raise ValueError(f"unknown schema key {key!r}")
            value = value.strip()
            if key == "covariates":
                kw[key] = tuple(c.strip() for c in value.replace(";", ",").replace(" ", ",").split(",") if c.strip())
            else:
                kw[key] = value or None
        return cls(**kw)

    @classmethod
    def parse(cls, text: str) -> Schema:
        """Parse ``key=value`` pairs separated by commas, or a key-value file path."""
        if "=" not in text and Path(text).exists():
            text = Path(text).read_text(encoding="utf-8")
        pairs: dict[str, str] = {}
        chunks = text.splitlines() if "\n" in text else _split_inline(text)
        for chunk in chunks:
            chunk = chunk.split("#", 1)[0].strip()
            if not chunk or chunk.startswith("["):
                continue
            sep = "=" if "=" in chunk else ":"
            if sep not in chunk:
                raise ValueError(f"cannot parse schema entry {chunk!r}")
            k, v = chunk.split(sep, 1)
            pairs[k] = v
        return cls.from_mapping(pairs)


def _split_inline(text: str) -> list[str]:
    # "a=x,b=y,covariates=z1;z2" -- commas separate pairs unless no '=' follows
    parts, current = [], ""
    for piece in text.split(","):
        if "=" in piece or not current:
            if current:
                parts.append(current)
            current = piece
        else:
            current += "," + piece
    if current:
        parts.append(current)
    return parts


def _cell(row: dict, col: str, rownum: int, problems: list, *, allow_missing=False) -> float:
    raw = row.get(col)
    raw = "" if raw is None else raw.strip()
    if raw.lower() in _MISSING:
        if not allow_missing:
            problems.append((rownum, f"missing value in column {col!r}"))
        return math.nan
    try:
        return float(raw)
    except ValueError:
        problems.append((rownum, f"non-numeric value {raw!r} in column {col!r}"))
        return math.nan


def read_csv(path, schema: Schema | None = None) -> Dataset:
    """Read and validate a survival CSV file.

    Rows are numbered from 1 (the first data row after the header).  All
    problems are collected and raised together as a :class:`DataValidationError`.
    """
    schema = schema or Schema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        needed = [schema.exposure, schema.mediator, *schema.covariates]
        needed += [c for c in (schema.time1, schema.time2, schema.time, schema.event, schema.truncation) if c]
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataValidationError([(None, f"missing column {c!r}") for c in missing])
        rows = list(reader)

    n = len(rows)
    problems: list[tuple[int | None, str]] = []
    status = np.zeros(n, dtype=np.int8)
    t1 = np.empty(n)
    t2 = np.empty(n)
    entry = np.full(n, np.nan)
    a = np.empty(n)
    m = np.empty(n)
    z = np.empty((n, len(schema.covariates)))
    for i, row in enumerate(rows):
        r = i + 1
        a[i] = _cell(row, schema.exposure, r, problems)
        m[i] = _cell(row, schema.mediator, r, problems)
        for j, c in enumerate(schema.covariates):
            z[i, j] = _cell(row, c, r, problems)
        if schema.truncation:
            entry[i] = _cell(row, schema.truncation, r, problems, allow_missing=True)
        if schema.time is not None:
            t = _cell(row, schema.time, r, problems)
            ev = _cell(row, schema.event, r, problems) if schema.event else 1.0
            if ev not in (0.0, 1.0) and not math.isnan(ev):
                problems.append((r, f"event indicator must be 0 or 1, got {ev}"))
            t1[i] = t
            if ev == 0.0:
                status[i], t2[i] = RIGHT, math.inf
            else:
                status[i], t2[i] = EXACT, t
        else:
            lo = _cell(row, schema.time1, r, problems)
            hi = _cell(row, schema.time2, r, problems, allow_missing=True) if schema.time2 else lo
            t1[i] = lo
            if math.isnan(hi):
                status[i], t2[i] = RIGHT, math.inf
            elif hi == lo:
                status[i], t2[i] = EXACT, lo
            else:
                status[i], t2[i] = INTERVAL, hi
        if not problems or problems[-1][0] != r:
            for msg in _outcome_problems(int(status[i]), t1[i], t2[i], entry[i]):
                problems.append((r, msg))
    if problems:
        raise DataValidationError(problems)
    return Dataset(status=status, time1=t1, time2=t2, entry=entry, exposure=a, mediator=m,
                   covariates=z, covariate_names=schema.covariates)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(dataset: Dataset, path) -> Schema:
    """Write ``dataset`` in interval2 layout; returns the schema that reads it back."""
    has_entry = bool(np.any(~np.isnan(dataset.entry)))
    header = ["exposure", "mediator", "time1", "time2"]
    if has_entry:
        header.append("entry")
    header += list(dataset.covariate_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            st = dataset.status[i]
            t2 = "" if st == RIGHT else _fmt(dataset.time2[i])
            row = [_fmt(dataset.exposure[i]), _fmt(dataset.mediator[i]), _fmt(dataset.time1[i]), t2]
            if has_entry:
                v = dataset.entry[i]
                row.append("" if math.isnan(v) else _fmt(v))
            row += [_fmt(v) for v in dataset.covariates[i]]
            w.writerow(row)
    return Schema(truncation="entry" if has_entry else None, covariates=dataset.covariate_names)


@dataclass(frozen=True)
class CensoringSummary:
    n: int
    n_exact: int
    n_right: int
    n_interval: int
    n_truncated: int

    @property
    def exact_fraction(self) -> float:
        return self.n_exact / self.n

    @property
    def right_fraction(self) -> float:
        return self.n_right / self.n

    @property
    def interval_fraction(self) -> float:
        return self.n_interval / self.n

    @property
    def truncated_fraction(self) -> float:
        return self.n_truncated / self.n

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "exact": self.n_exact,
            "right": self.n_right,
            "interval": self.n_interval,
            "truncated": self.n_truncated,
            "exact_fraction": self.exact_fraction,
            "right_fraction": self.right_fraction,
            "interval_fraction": self.interval_fraction,
            "truncated_fraction": self.truncated_fraction,
        }


def summarize(dataset: Dataset) -> CensoringSummary:
    st = dataset.status
    return CensoringSummary(
        n=dataset.n,
        n_exact=int(np.sum(st == EXACT)),
        n_right=int(np.sum(st == RIGHT)),
        n_interval=int(np.sum(st == INTERVAL)),
        n_truncated=int(np.sum(~np.isnan(dataset.entry))),
    )
