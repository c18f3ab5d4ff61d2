"""Per-subject feature table with survival targets, persisted as CSV."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ShapeError, ValidationError

TABLE_SCHEMA = "gliosurv-feature-table"
TABLE_VERSION = 1
META_COLUMNS = ("id", "age", "survival_days", "resection_status")
RESECTION_STATUSES = ("GTR", "STR", "NA")
#: pseudo feature name that selects the age column when building design matrices
AGE = "age"


def _float_or_nan(text: str) -> float:
    text = text.strip()
    if text == "" or text.lower() == "nan":
        return math.nan
    return float(text)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


@dataclass
class FeatureTable:
    """Rows are subjects, columns are named features.

    ``targets`` (survival days) and ``age`` may contain NaN for subjects whose
    clinical data is unknown; feature ``values`` must be finite.
    """

    subjects: list
    feature_names: list
    values: np.ndarray
    targets: np.ndarray = None
    age: np.ndarray = None
    resection_status: list = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.subjects = [str(s) for s in self.subjects]
        self.feature_names = [str(f) for f in self.feature_names]
        n, p = len(self.subjects), len(self.feature_names)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(n, p)
        if len(set(self.feature_names)) != p:
            dup = sorted({f for f in self.feature_names if self.feature_names.count(f) > 1})
            raise ValidationError(f"duplicate feature names: {dup}")
        if AGE in self.feature_names:
            raise ValidationError("'age' is reserved for the age column")
        if len(set(self.subjects)) != n:
            raise ValidationError("duplicate subject ids")
        if not np.all(np.isfinite(self.values)):
            rows, cols = np.nonzero(~np.isfinite(self.values))
            where = [(self.subjects[r], self.feature_names[c]) for r, c in zip(rows[:5], cols[:5])]
            raise ValidationError(f"non-finite feature values at {where}")
        self.targets = self._column(self.targets, "targets")
        self.age = self._column(self.age, "age")
        if self.resection_status is None:
            self.resection_status = ["NA"] * n
        self.resection_status = [str(s) for s in self.resection_status]
        if len(self.resection_status) != n:
            raise ShapeError("resection_status length does not match subject count")
        bad = sorted(set(self.resection_status) - set(RESECTION_STATUSES))
        if bad:
            raise ValidationError(f"resection_status must be one of {RESECTION_STATUSES}, got {bad}")

    def _column(self, col, name):
        n = len(self.subjects)
        if col is None:
            return np.full(n, np.nan)
        col = np.asarray(col, dtype=np.float64).reshape(-1)
        if col.shape != (n,):
            raise ShapeError(f"{name} has {col.shape[0]} entries for {n} subjects")
        return col

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def __len__(self):
        return self.n_subjects

    def column(self, name: str) -> np.ndarray:
        if name == AGE:
            return self.age
        try:
            return self.values[:, self.feature_names.index(name)]
        except ValueError:
            raise ValidationError(f"feature {name!r} not in table") from None

    def design(self, names) -> np.ndarray:
        """Columns ``names`` as an (n, len(names)) matrix; ``"age"`` selects the age column."""
        missing = [nm for nm in names if nm != AGE and nm not in self.feature_names]
        if missing:
            raise ValidationError(f"features not in table: {missing}")
        X = np.column_stack([self.column(nm) for nm in names]) if names else np.empty((len(self), 0))
        if not np.all(np.isfinite(X)):
            raise ValidationError("design matrix has missing values (is age unknown for some subjects?)")
        return X

    def all_columns(self) -> tuple:
        """``(names, X)`` with age first followed by every feature column."""
        return [AGE, *self.feature_names], np.column_stack([self.age, self.values])

    def require_targets(self) -> np.ndarray:
        if np.any(np.isnan(self.targets)):
            missing = [s for s, t in zip(self.subjects, self.targets) if np.isnan(t)]
            raise ValidationError(f"survival_days missing for subjects {missing[:10]}")
        return self.targets

    def subset_rows(self, rows) -> "FeatureTable":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return FeatureTable(
            [self.subjects[i] for i in rows],
            list(self.feature_names),
            self.values[rows],
            self.targets[rows],
            self.age[rows],
            [self.resection_status[i] for i in rows],
            dict(self.notes),
        )

    def subset_features(self, names) -> "FeatureTable":
        idx = [self.feature_names.index(nm) for nm in names]
        return FeatureTable(
            list(self.subjects), list(names), self.values[:, idx], self.targets, self.age,
            list(self.resection_status), dict(self.notes),
        )

    def with_features(self, names, values) -> "FeatureTable":
        values = np.asarray(values, dtype=np.float64).reshape(len(self), len(names))
        return FeatureTable(
            list(self.subjects), [*self.feature_names, *names], np.hstack([self.values, values]),
            self.targets, self.age, list(self.resection_status), dict(self.notes),
        )

    def to_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write(f"# {TABLE_SCHEMA} v{TABLE_VERSION}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*META_COLUMNS, *self.feature_names])
            for i, sid in enumerate(self.subjects):
                w.writerow(
                    [sid, _fmt(self.age[i]), _fmt(self.targets[i]), self.resection_status[i]]
                    + [repr(float(v)) for v in self.values[i]]
                )

    @classmethod
    def from_csv(cls, path) -> "FeatureTable":
        path = Path(path)
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        if lines and lines[0].startswith("#"):
            tag = lines[0][1:].split()
            if len(tag) != 2 or tag[0] != TABLE_SCHEMA:
                raise FormatError(f"{path}: unrecognised schema line {lines[0]!r}")
            if tag[1] != f"v{TABLE_VERSION}":
                raise FormatError(f"{path}: unsupported feature-table version {tag[1]}")
            lines = lines[1:]
        rows = list(csv.reader(lines))
        if not rows:
            raise FormatError(f"{path}: empty feature table")
        header = rows[0]
        if tuple(header[:1]) != ("id",):
            raise FormatError(f"{path}: first column must be 'id'")
        meta = [c for c in header if c in META_COLUMNS]
        feats = [c for c in header if c not in META_COLUMNS]
        pos = {c: header.index(c) for c in header}
        subjects, age, surv, status, values = [], [], [], [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                subjects.append(row[0])
                age.append(_float_or_nan(row[pos["age"]]) if "age" in meta else math.nan)
                surv.append(_float_or_nan(row[pos["survival_days"]]) if "survival_days" in meta else math.nan)
                status.append(row[pos["resection_status"]] if "resection_status" in meta else "NA")
                values.append([float(row[pos[c]]) for c in feats])
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from exc
        return cls(subjects, feats, np.asarray(values, dtype=np.float64).reshape(len(subjects), len(feats)),
                   surv, age, status)


def read_cohort_csv(path) -> dict:
    """``{id: {"age", "survival_days", "resection_status", ...}}`` from a cohort metadata CSV."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise FormatError(f"{path}: cohort CSV needs an 'id' column")
        for row in reader:
            try:
                out[row["id"]] = {
                    "age": _float_or_nan(row.get("age", "") or ""),
                    "survival_days": _float_or_nan(row.get("survival_days", "") or ""),
                    "resection_status": (row.get("resection_status") or "NA").strip() or "NA",
                    **{k: v for k, v in row.items() if k not in ("id", "age", "survival_days", "resection_status")},
                }
            except ValueError as exc:
                raise FormatError(f"{path}: subject {row.get('id')}: {exc}") from exc
    return out
