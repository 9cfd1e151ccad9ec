"""Dataset representation, CSV ingestion and design-matrix construction.

Counts are cohort-indexed; one covariate is flagged as error prone and is
the target of contamination / SIMEX correction. Categorical covariates are
stored as level indices and expanded to reference-coded indicators when the
design matrix is built (reference = lexicographically first level).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ParseError, SchemaError, ValidationError


@dataclass(frozen=True)
class ColumnSchema:
    """Column roles for CSV ingestion."""

    outcome: str
    cohort: str
    covariates: tuple[str, ...]
    error_prone: str
    categoricals: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.covariates:
            raise SchemaError("schema needs at least one covariate")
        if len(set(self.covariates)) != len(self.covariates):
            raise SchemaError("duplicate covariate names in schema")
        for name in self.categoricals:
            if name not in self.covariates:
                raise SchemaError(f"categorical {name!r} is not a covariate")
        if self.error_prone not in self.covariates:
            raise SchemaError(f"error-prone column {self.error_prone!r} is not a covariate")
        if self.error_prone in self.categoricals:
            raise SchemaError("the error-prone covariate must be numeric")


@dataclass(frozen=True)
class CountDataset:
    """Validated count records with cohort ids 1..m.

    ``x`` holds numeric covariate values; categorical covariates are stored
    as float level indices into ``categorical_levels[name]`` (index 0 is the
    reference level).
    """

    y: np.ndarray
    x: np.ndarray
    cohorts: np.ndarray
    m: int
    p: int
    error_prone_index: int
    covariate_names: tuple[str, ...]
    cohort_labels: tuple[str, ...]
    categorical_levels: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        cohorts = np.asarray(self.cohorts, dtype=np.int64)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "cohorts", cohorts)
        n = y.shape[0]
        if x.shape != (n, self.p):
            raise ValidationError(f"covariate matrix shape {x.shape} != ({n}, {self.p})")
        if cohorts.shape != (n,):
            raise ValidationError("cohort vector length mismatch")
        if n == 0:
            raise ValidationError("dataset has no records")
        if np.any(y < 0):
            raise ValidationError("negative count outcome")
        if not np.all(np.isfinite(x)):
            raise ValidationError("non-finite covariate entry")
        present = np.unique(cohorts)
        if present[0] != 1 or present[-1] != self.m or present.size != self.m:
            raise ValidationError("cohort ids must cover 1..m with every cohort non-empty")
        if not (0 <= self.error_prone_index < self.p):
            raise ValidationError("error_prone_index out of range")
        if len(self.covariate_names) != self.p:
            raise ValidationError("covariate_names length mismatch")
        if len(self.cohort_labels) != self.m:
            raise ValidationError("cohort_labels length mismatch")
        ep_name = self.covariate_names[self.error_prone_index]
        if ep_name in self.categorical_levels:
            raise ValidationError("the error-prone covariate must be numeric")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def error_prone_name(self) -> str:
        return self.covariate_names[self.error_prone_index]

    @classmethod
    def from_arrays(
        cls,
        y,
        x,
        cohorts,
        error_prone_index: int = 0,
        covariate_names: tuple[str, ...] | None = None,
        cohort_labels: tuple[str, ...] | None = None,
        categorical_levels: dict[str, tuple[str, ...]] | None = None,
    ) -> "CountDataset":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[0] == 1 and np.asarray(y).shape[0] != 1:
            x = x.T
        cohorts = np.asarray(cohorts, dtype=np.int64)
        m = int(cohorts.max()) if cohorts.size else 0
        p = x.shape[1]
        if covariate_names is None:
            covariate_names = tuple(f"x{i + 1}" for i in range(p))
        if cohort_labels is None:
            cohort_labels = tuple(str(j) for j in range(1, m + 1))
        return cls(
            y=y,
            x=x,
            cohorts=cohorts,
            m=m,
            p=p,
            error_prone_index=error_prone_index,
            covariate_names=tuple(covariate_names),
            cohort_labels=tuple(cohort_labels),
            categorical_levels=dict(categorical_levels or {}),
        )


@dataclass(frozen=True)
class DesignMatrix:
    """Row-major design with a leading intercept column.

    ``column_map`` maps each covariate (or expanded indicator, named
    ``name=level``) to its matrix column; it is a bijection onto the
    non-intercept columns.
    """

    rows: np.ndarray
    column_map: dict[str, int]
    column_names: tuple[str, ...]
    error_prone_column: int

    def __post_init__(self):
        rows = np.ascontiguousarray(np.asarray(self.rows, dtype=np.float64))
        object.__setattr__(self, "rows", rows)
        if not np.all(rows[:, 0] == 1.0):
            raise ValidationError("first design column must be the intercept")
        cols = sorted(self.column_map.values())
        if cols != list(range(1, rows.shape[1])):
            raise ValidationError("column_map must biject onto non-intercept columns")

    @property
    def n_columns(self) -> int:
        return int(self.rows.shape[1])

    @property
    def slope_names(self) -> tuple[str, ...]:
        return self.column_names[1:]

    @property
    def slopes(self) -> np.ndarray:
        """View of the non-intercept columns."""
        return self.rows[:, 1:]


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def ingest_csv(path, schema: ColumnSchema) -> CountDataset:
    """Read a comma-separated UTF-8 file with a header row into a dataset.

    Outcome values are rounded to the nearest integer (ties at .5 round up);
    cohort ids are assigned in order of first appearance.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        needed = [schema.outcome, schema.cohort, *schema.covariates]
        col_idx = {}
        for name in needed:
            if name not in header:
                raise SchemaError(f"missing column {name!r}")
            col_idx[name] = header.index(name)

        y_vals: list[int] = []
        cohort_ids: list[int] = []
        cohort_of_label: dict[str, int] = {}
        cohort_labels: list[str] = []
        raw_cells: list[list[str]] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError("fewer cells than header columns", row=row_no)
            try:
                y_raw = float(row[col_idx[schema.outcome]])
            except ValueError:
                raise ParseError(
                    f"non-numeric outcome {row[col_idx[schema.outcome]]!r}", row=row_no
                ) from None
            y_int = _round_half_up(y_raw)
            if y_int < 0:
                raise ValidationError(f"row {row_no}: negative outcome {y_raw}")
            label = row[col_idx[schema.cohort]].strip()
            if not label:
                raise ValidationError(f"row {row_no}: empty cohort label")
            if label not in cohort_of_label:
                cohort_of_label[label] = len(cohort_of_label) + 1
                cohort_labels.append(label)
            y_vals.append(y_int)
            cohort_ids.append(cohort_of_label[label])
            raw_cells.append([row[col_idx[c]].strip() for c in schema.covariates])

    if not y_vals:
        raise ValidationError(f"{path}: no data rows")

    n = len(y_vals)
    p = len(schema.covariates)
    x = np.empty((n, p), dtype=np.float64)
    categorical_levels: dict[str, tuple[str, ...]] = {}
    for k, name in enumerate(schema.covariates):
        column = [cells[k] for cells in raw_cells]
        if name in schema.categoricals:
            levels = tuple(sorted(set(column)))
            categorical_levels[name] = levels
            index_of = {lev: i for i, lev in enumerate(levels)}
            x[:, k] = [index_of[v] for v in column]
        else:
            for i, cell in enumerate(column):
                try:
                    x[i, k] = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric value {cell!r} in {name!r}", row=i + 1) from None

    return CountDataset(
        y=np.asarray(y_vals),
        x=x,
        cohorts=np.asarray(cohort_ids),
        m=len(cohort_labels),
        p=p,
        error_prone_index=schema.covariates.index(schema.error_prone),
        covariate_names=schema.covariates,
        cohort_labels=tuple(cohort_labels),
        categorical_levels=categorical_levels,
    )


def save_csv(dataset: CountDataset, path, schema_names=("y", "cohort")) -> None:
    """Write a dataset back to CSV; inverse of ingest_csv under its schema."""
    outcome, cohort = schema_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([outcome, cohort, *dataset.covariate_names])
        for i in range(dataset.n):
            row = [str(int(dataset.y[i])), dataset.cohort_labels[dataset.cohorts[i] - 1]]
            for k, name in enumerate(dataset.covariate_names):
                if name in dataset.categorical_levels:
                    row.append(dataset.categorical_levels[name][int(dataset.x[i, k])])
                else:
                    row.append(repr(float(dataset.x[i, k])))
            writer.writerow(row)


def default_schema(dataset: CountDataset, schema_names=("y", "cohort")) -> ColumnSchema:
    """Schema matching save_csv output for round-trip ingestion."""
    return ColumnSchema(
        outcome=schema_names[0],
        cohort=schema_names[1],
        covariates=dataset.covariate_names,
        error_prone=dataset.error_prone_name,
        categoricals=tuple(sorted(dataset.categorical_levels)),
    )


def build_design(dataset: CountDataset) -> DesignMatrix:
    """Intercept + numeric columns + (L-1) indicators per categorical."""
    blocks = [np.ones((dataset.n, 1))]
    names = ["(intercept)"]
    column_map: dict[str, int] = {}
    error_prone_column = -1
    col = 1
    for k, name in enumerate(dataset.covariate_names):
        if name in dataset.categorical_levels:
            levels = dataset.categorical_levels[name]
            if len(levels) < 2:
                raise ValidationError(f"categorical {name!r} has a single level (degenerate column)")
            codes = dataset.x[:, k].astype(np.int64)
            for li, level in enumerate(levels[1:], start=1):
                blocks.append((codes == li).astype(np.float64)[:, None])
                ind_name = f"{name}={level}"
                names.append(ind_name)
                column_map[ind_name] = col
                col += 1
        else:
            blocks.append(dataset.x[:, k : k + 1])
            names.append(name)
            column_map[name] = col
            if k == dataset.error_prone_index:
                error_prone_column = col
            col += 1
    return DesignMatrix(
        rows=np.hstack(blocks),
        column_map=column_map,
        column_names=tuple(names),
        error_prone_column=error_prone_column,
    )


def with_error_prone(dataset: CountDataset, values: np.ndarray) -> CountDataset:
    """Dataset copy with the error-prone covariate column replaced."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (dataset.n,):
        raise ValidationError("replacement column length mismatch")
    x = dataset.x.copy()
    x[:, dataset.error_prone_index] = values
    return replace(dataset, x=x)


def subset(dataset: CountDataset, indices: np.ndarray) -> CountDataset:
    """Row subset preserving cohort ids; every cohort must stay non-empty."""
    indices = np.asarray(indices, dtype=np.int64)
    return replace(
        dataset,
        y=dataset.y[indices],
        x=dataset.x[indices],
        cohorts=dataset.cohorts[indices],
    )
