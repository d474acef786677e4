"""Column-oriented analysis data with semantic roles.

Numeric columns are float64 arrays with NaN for missing cells.  Categorical
columns are stored as int64 level codes (-1 = missing) together with their
declared level order; the first declared level is the reference level in
design matrices.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    MalformedCsv,
    MissingValidationData,
    MissingValidationFlag,
    NonPositiveLog,
    RoleConflict,
    UnknownColumn,
)

logger = logging.getLogger(__name__)


class ColumnRole(str, Enum):
    OUTCOME = "outcome"
    EXPOSURE = "exposure"
    REFERENCE = "reference"
    REPLICATE = "replicate"
    CONFOUNDER = "confounder"
    EXTRA = "extra"
    MEDIATOR = "mediator"
    VALIDATION = "validation"
    STRATUM = "stratum"
    PSU = "psu"
    WEIGHT = "weight"
    PLAIN = "plain"


@dataclass(frozen=True)
class ColumnSpec:
    role: ColumnRole = ColumnRole.PLAIN
    levels: tuple[str, ...] | None = None

    @property
    def categorical(self) -> bool:
        return self.levels is not None


def parse_role_map(raw: Mapping[str, object]) -> dict[str, ColumnSpec]:
    """Normalise a role map from config form.

    Entries are either a role name (``"outcome"``) or a mapping with keys
    ``role`` and optionally ``levels``.
    """
    out = {}
    for name, entry in raw.items():
        if isinstance(entry, ColumnSpec):
            out[name] = entry
            continue
        if isinstance(entry, (str, ColumnRole)):
            role, levels = entry, None
        elif isinstance(entry, Mapping):
            role = entry.get("role", "plain")
            levels = entry.get("levels")
        else:
            raise RoleConflict(f"column {name!r}: cannot interpret role entry {entry!r}")
        try:
            role = ColumnRole(role)
        except ValueError:
            raise RoleConflict(f"column {name!r}: unknown role {role!r}") from None
        if levels is not None:
            levels = tuple(str(v) for v in levels)
            if len(set(levels)) != len(levels) or not levels:
                raise RoleConflict(f"column {name!r}: levels must be non-empty and unique")
        out[name] = ColumnSpec(role, levels)
    return out


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_labels: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class AnalysisDataset:
    """Immutable table of equal-length columns with role assignments.

    Use :meth:`from_columns` to build one; it validates the role invariants.
    """

    columns: Mapping[str, np.ndarray]
    specs: Mapping[str, ColumnSpec]
    provenance: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_columns(
        cls,
        columns: Mapping[str, Sequence],
        role_map: Mapping[str, object] | None = None,
        *,
        require_outcome: bool = True,
        provenance: Mapping[str, str] | None = None,
    ) -> "AnalysisDataset":
        specs = parse_role_map(role_map or {})
        unknown = set(specs) - set(columns)
        if unknown:
            raise UnknownColumn(f"role map names columns not in data: {sorted(unknown)}")
        cols = {}
        for name, values in columns.items():
            spec = specs.setdefault(name, ColumnSpec())
            cols[name] = _coerce(name, values, spec)
        ds = cls(cols, dict(specs), dict(provenance or {}))
        ds._validate(require_outcome)
        return ds

    def _validate(self, require_outcome: bool) -> None:
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise MalformedCsv(f"columns have unequal lengths {sorted(lengths)}")
        counts: dict[ColumnRole, int] = {}
        for spec in self.specs.values():
            counts[spec.role] = counts.get(spec.role, 0) + 1
        n_out = counts.get(ColumnRole.OUTCOME, 0)
        if n_out > 1 or (require_outcome and n_out != 1):
            raise RoleConflict(f"expected exactly one outcome column, found {n_out}")
        for role, cap in ((ColumnRole.EXPOSURE, 1), (ColumnRole.REPLICATE, 2), (ColumnRole.VALIDATION, 1)):
            if counts.get(role, 0) > cap:
                raise RoleConflict(f"at most {cap} {role.value} column(s) allowed, found {counts[role]}")
        flag = self.column_with_role(ColumnRole.VALIDATION)
        if flag is not None:
            v = self.columns[flag]
            if self.specs[flag].categorical or not np.all(np.isin(v, (0.0, 1.0))):
                raise RoleConflict(f"validation flag {flag!r} must be binary 0/1 without missing cells")
            for ref in self.columns_with_role(ColumnRole.REFERENCE):
                bad = np.flatnonzero((v == 1.0) & np.isnan(self.columns[ref]))
                if bad.size:
                    raise RoleConflict(
                        f"rows flagged as validation must have the reference measure {ref!r}; "
                        f"missing in {bad.size} row(s), first at row {bad[0]}"
                    )

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def role_map(self) -> dict[str, ColumnRole]:
        return {k: s.role for k, s in self.specs.items()}

    def columns_with_role(self, role: ColumnRole) -> list[str]:
        return [k for k, s in self.specs.items() if s.role == role]

    def column_with_role(self, role: ColumnRole) -> str | None:
        names = self.columns_with_role(role)
        return names[0] if names else None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise UnknownColumn(f"unknown column {name!r}") from None

    def numeric(self, name: str) -> np.ndarray:
        col = self[name]
        if self.specs[name].categorical:
            raise UnknownColumn(f"column {name!r} is categorical, expected numeric")
        return col

    def missing_mask(self, names: Iterable[str]) -> np.ndarray:
        mask = np.zeros(self.n_rows, dtype=bool)
        for name in names:
            col = self[name]
            mask |= (col < 0) if self.specs[name].categorical else np.isnan(col)
        return mask

    def take(self, rows) -> "AnalysisDataset":
        """Row subset (boolean mask or index array); roles are kept."""
        rows = np.asarray(rows)
        cols = {k: v[rows] for k, v in self.columns.items()}
        return AnalysisDataset(cols, self.specs, self.provenance)

    def complete_cases(self, names: Iterable[str], purpose: str = "fit") -> "AnalysisDataset":
        names = list(names)
        miss = self.missing_mask(names)
        if miss.any():
            logger.info("%s: excluding %d of %d rows with missing %s", purpose, miss.sum(), self.n_rows, names)
            return self.take(~miss)
        return self

    def with_columns(
        self,
        new: Mapping[str, np.ndarray],
        roles: Mapping[str, object] | None = None,
        provenance: str | None = None,
    ) -> "AnalysisDataset":
        cols = dict(self.columns)
        specs = dict(self.specs)
        prov = dict(self.provenance)
        extra_specs = parse_role_map(roles or {})
        for name, values in new.items():
            spec = extra_specs.get(name, ColumnSpec())
            cols[name] = _coerce(name, values, spec)
            specs[name] = spec
            if provenance is not None:
                prov[name] = provenance
        ds = AnalysisDataset(cols, specs, prov)
        ds._validate(require_outcome=False)
        return ds

    def to_csv(self, path: str | Path) -> None:
        """Write with ``repr`` floats so reloading is bit-exact."""
        names = list(self.columns)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for i in range(self.n_rows):
                writer.writerow([_format_cell(self.columns[k][i], self.specs[k]) for k in names])


def _format_cell(value, spec: ColumnSpec) -> str:
    if spec.categorical:
        return "" if value < 0 else spec.levels[value]
    return "" if math.isnan(value) else repr(float(value))


def _coerce(name: str, values, spec: ColumnSpec) -> np.ndarray:
    if spec.categorical:
        arr = np.asarray(values)
        if arr.dtype.kind in "iu" and _is_codes(arr, spec.levels):
            return arr.astype(np.int64)
        lookup = {lvl: i for i, lvl in enumerate(spec.levels)}
        codes = np.empty(len(arr), dtype=np.int64)
        for i, v in enumerate(arr):
            if v is None or (isinstance(v, float) and math.isnan(v)) or v == "":
                codes[i] = -1
                continue
            key = str(v)
            if key not in lookup:
                raise MalformedCsv(f"column {name!r}: value {key!r} not among declared levels {spec.levels}")
            codes[i] = lookup[key]
        return codes
    try:
        return np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise MalformedCsv(f"column {name!r} holds non-numeric values") from None


def _is_codes(arr, levels) -> bool:
    return arr.size == 0 or (arr.min() >= -1 and arr.max() < len(levels))


def load_csv(
    path: str | Path,
    role_map: Mapping[str, object],
    *,
    require_outcome: bool = True,
) -> AnalysisDataset:
    """Read a header-first, UTF-8 CSV file; empty cells are missing."""
    specs = parse_role_map(role_map)
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsv(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise MalformedCsv(f"{path}: duplicate column names in header")
        missing = set(specs) - set(header)
        if missing:
            raise UnknownColumn(f"{path}: role map names columns not in header: {sorted(missing)}")
        raw: dict[str, list] = {h: [] for h in header}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedCsv(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, cell in zip(header, row):
                raw[h].append(cell)
    columns = {}
    for h in header:
        spec = specs.get(h, ColumnSpec())
        if spec.categorical:
            columns[h] = [c.strip() for c in raw[h]]
            continue
        vals = np.empty(len(raw[h]))
        for i, cell in enumerate(raw[h]):
            cell = cell.strip()
            if cell == "":
                vals[i] = np.nan
                continue
            try:
                vals[i] = float(cell)
            except ValueError:
                raise MalformedCsv(f"{path}:{i + 2}: non-numeric value {cell!r} in column {h!r}") from None
        columns[h] = vals
    return AnalysisDataset.from_columns(columns, specs, require_outcome=require_outcome)


TRANSFORMS = ("identity", "log")


def apply_transform(values: np.ndarray, tag: str, name: str = "") -> np.ndarray:
    if tag == "identity":
        return values
    if tag == "log":
        finite = values[~np.isnan(values)]
        if np.any(finite <= 0):
            raise NonPositiveLog(f"log transform of {name or 'column'} requires strictly positive values")
        return np.log(values)
    raise ValueError(f"unknown transform {tag!r}; expected one of {TRANSFORMS}")


def build_design(
    ds: AnalysisDataset,
    covariates: Sequence[str],
    transforms: Mapping[str, str] | None = None,
    *,
    intercept: bool = True,
) -> DesignMatrix:
    """Design matrix with intercept, dummy-coded categoricals and transforms."""
    transforms = transforms or {}
    n = ds.n_rows
    blocks = [np.ones((n, 1))] if intercept else []
    labels = ["(intercept)"] if intercept else []
    for name in covariates:
        if name not in ds:
            raise UnknownColumn(f"unknown column {name!r}")
        spec = ds.specs[name]
        col = ds.columns[name]
        if spec.categorical:
            k = len(spec.levels)
            dummies = np.zeros((n, k - 1))
            for j in range(1, k):
                dummies[:, j - 1] = col == j
            dummies[col < 0] = np.nan
            blocks.append(dummies)
            labels.extend(f"{name}[{lvl}]" for lvl in spec.levels[1:])
        else:
            tag = transforms.get(name, "identity")
            blocks.append(apply_transform(col, tag, name)[:, None])
            labels.append(name if tag == "identity" else f"{tag}({name})")
    values = np.hstack(blocks) if blocks else np.empty((n, 0))
    return DesignMatrix(values, tuple(labels))


def split_validation(ds: AnalysisDataset) -> tuple[AnalysisDataset, AnalysisDataset]:
    """Return ``(validation subset, full cohort)``."""
    flag = ds.column_with_role(ColumnRole.VALIDATION)
    if flag is None:
        raise MissingValidationFlag("dataset has no column with the validation role")
    mask = ds.columns[flag] == 1.0
    if not mask.any():
        raise MissingValidationData(f"no rows flagged in validation column {flag!r}")
    return ds.take(mask), ds
