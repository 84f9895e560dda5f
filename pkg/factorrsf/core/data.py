"""Survival datasets over factor-valued features.

A dataset holds observed times, censoring status and one column of label
indices per variable. Numeric columns with many distinct values are held
back as raw reals ("pending discretization") until ``discretize`` turns them
into factors with equal-frequency bins.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from . import (
    CONTINUOUS_NOISE_PREFIX,
    DEFAULT_MAX_FACTOR_LEVELS,
    DISCRETE_NOISE_PREFIX,
    DataError,
)

_LOGGER = logging.getLogger(__name__)

MISSING_TOKENS: frozenset[str] = frozenset({""})
PENDING = -1  # code stored for variables awaiting discretization


@dataclass(frozen=True)
class SurvivalRecord:
    """One observation: time T = min(T0, C), status (1 = event), label indices."""

    time: float
    status: int
    features: tuple[int, ...]


@dataclass(frozen=True)
class FactorVariable:
    """A named factor; ``pending`` variables have no labels yet."""

    name: str
    labels: tuple[str, ...] = ()
    pending: bool = False
    cut_points: tuple[float, ...] | None = None
    noise: bool = False

    @property
    def label_count(self) -> int:
        return len(self.labels)

    @property
    def degenerate(self) -> bool:
        """Only one realized label, so the variable can never be split on."""
        return not self.pending and len(self.labels) < 2

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "labels": list(self.labels),
            "pending": self.pending,
            "cut_points": None if self.cut_points is None else list(self.cut_points),
            "noise": self.noise,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> FactorVariable:
        cuts = raw.get("cut_points")
        return cls(
            name=raw["name"],
            labels=tuple(raw.get("labels", ())),
            pending=bool(raw.get("pending", False)),
            cut_points=None if cuts is None else tuple(float(c) for c in cuts),
            noise=bool(raw.get("noise", False)),
        )


@dataclass(frozen=True)
class FactorSchema:
    """Ordered variables of a dataset."""

    variables: tuple[FactorVariable, ...]

    def __post_init__(self) -> None:
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate variable names in schema: {names}")
        for var in self.variables:
            if len(set(var.labels)) != len(var.labels):
                raise DataError(f"variable {var.name!r} has repeated labels")

    def __len__(self) -> int:
        return len(self.variables)

    def __getitem__(self, index: int) -> FactorVariable:
        return self.variables[index]

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def label_counts(self) -> list[int]:
        return [v.label_count for v in self.variables]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown variable {name!r}") from None

    def splittable(self) -> list[int]:
        """Indices of variables that may be used as split candidates."""
        return [j for j, v in enumerate(self.variables) if not v.pending and not v.degenerate]

    def with_variable(self, index: int, variable: FactorVariable) -> FactorSchema:
        variables = list(self.variables)
        variables[index] = variable
        return FactorSchema(tuple(variables))

    def to_dict(self) -> dict:
        return {"variables": [v.to_dict() for v in self.variables]}

    @classmethod
    def from_dict(cls, raw: Mapping) -> FactorSchema:
        return cls(tuple(FactorVariable.from_dict(v) for v in raw["variables"]))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable learning data. Arrays are made read-only on construction."""

    schema: FactorSchema
    time: np.ndarray
    status: np.ndarray
    codes: np.ndarray
    raw: Mapping[str, np.ndarray] = field(default_factory=dict)
    time_name: str = "time"
    status_name: str = "status"

    def __post_init__(self) -> None:
        time = np.array(self.time, dtype=float)
        status = np.array(self.status, dtype=np.int8)
        codes = np.array(self.codes, dtype=np.int32).reshape(len(time), len(self.schema))
        raw = {name: np.array(values, dtype=float) for name, values in self.raw.items()}
        if status.shape != time.shape:
            raise DataError("time and status columns differ in length")
        if np.any(time < 0) or not np.all(np.isfinite(time)):
            raise DataError("observed times must be finite and non-negative")
        if np.any((status != 0) & (status != 1)):
            raise DataError("status must be 0 (censored) or 1 (event)")
        for j, var in enumerate(self.schema.variables):
            column = codes[:, j]
            if var.pending:
                if var.name not in raw or len(raw[var.name]) != len(time):
                    raise DataError(f"pending variable {var.name!r} has no raw values")
                continue
            if column.size and (column.min() < 0 or column.max() >= max(var.label_count, 1)):
                raise DataError(f"variable {var.name!r} has label indices outside [0, {var.label_count})")
        for arr in (time, status, codes, *raw.values()):
            arr.flags.writeable = False
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "raw", raw)

    @property
    def n_cases(self) -> int:
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    @property
    def pending_variables(self) -> list[str]:
        return [v.name for v in self.schema.variables if v.pending]

    def record(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(float(self.time[i]), int(self.status[i]), tuple(int(c) for c in self.codes[i]))

    @property
    def records(self) -> list[SurvivalRecord]:
        return [self.record(i) for i in range(self.n_cases)]

    def variable_codes(self, name: str) -> np.ndarray:
        return self.codes[:, self.schema.index(name)]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _line(row: int) -> int:
    """1-based file line of a 0-based data row (line 1 is the header)."""
    return row + 2


def _is_missing(series: pd.Series, tokens: frozenset[str]) -> np.ndarray:
    text = series.astype(str).str.strip()
    return (series.isna() | text.isin(tokens)).to_numpy()


def format_number(value: float) -> str:
    return np.format_float_positional(float(value), trim="-")


def _numeric_or_none(series: pd.Series) -> np.ndarray | None:
    values = pd.to_numeric(series, errors="coerce")
    if values.isna().any():
        return None
    return values.to_numpy(dtype=float)


def _parse_time(series: pd.Series, column: str) -> np.ndarray:
    values = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values) | (values < 0))
    if bad.size:
        row = int(bad[0])
        raise DataError(
            f"line {_line(row)}, column {column!r}: time {series.iloc[row]!r} is not a non-negative number"
        )
    return values


def _parse_status(series: pd.Series, column: str) -> np.ndarray:
    values = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero((values != 0) & (values != 1))
    if bad.size:
        row = int(bad[0])
        raise DataError(f"line {_line(row)}, column {column!r}: status {series.iloc[row]!r} is not 0 or 1")
    return values.astype(np.int8)


def _infer_column(series: pd.Series, name: str, as_factor: bool, max_levels: int):
    """Return (FactorVariable, codes, raw-or-None) for a fresh column."""
    numeric = _numeric_or_none(series)
    if numeric is None:
        codes, uniques = pd.factorize(series.astype(str).str.strip())
        return FactorVariable(name, tuple(str(u) for u in uniques)), codes, None
    distinct = np.unique(numeric)
    if as_factor or len(distinct) <= max_levels:
        codes = np.searchsorted(distinct, numeric)
        return FactorVariable(name, tuple(format_number(v) for v in distinct)), codes, None
    return FactorVariable(name, pending=True), np.full(len(numeric), PENDING), numeric


def _apply_variable(series: pd.Series, var: FactorVariable):
    """Map a column through an existing schema variable."""
    if var.pending:
        numeric = _numeric_or_none(series)
        if numeric is None:
            raise DataError(f"column {var.name!r} must be numeric (pending discretization)")
        return np.full(len(numeric), PENDING), numeric
    if var.cut_points is not None:
        numeric = _numeric_or_none(series)
        if numeric is not None:
            return bin_values(numeric, np.asarray(var.cut_points)), None
    lookup = {label: k for k, label in enumerate(var.labels)}
    codes = np.empty(len(series), dtype=np.int32)
    for row, cell in enumerate(series.astype(str).str.strip()):
        code = lookup.get(cell)
        if code is None:
            numeric = pd.to_numeric(pd.Series([cell]), errors="coerce").iloc[0]
            if not pd.isna(numeric):
                code = lookup.get(format_number(numeric))
        if code is None:
            raise DataError(f"line {_line(row)}, column {var.name!r}: unknown label {cell!r}")
        codes[row] = code
    return codes, None


def dataset_from_frame(
    frame: pd.DataFrame,
    time_col: str,
    status_col: str,
    *,
    factor_columns: Iterable[str] = (),
    max_factor_levels: int = DEFAULT_MAX_FACTOR_LEVELS,
    schema: FactorSchema | None = None,
    missing_tokens: Iterable[str] = MISSING_TOKENS,
) -> Dataset:
    """Build a Dataset from a frame; every other column becomes a variable."""
    frame = frame.rename(columns=lambda c: str(c).strip())
    time_col, status_col = time_col.strip(), status_col.strip()
    for column in (time_col, status_col):
        if column not in frame.columns:
            raise DataError(f"missing column {column!r}; found {list(frame.columns)}")
    if frame.empty:
        raise DataError("file has a header but no data rows")
    tokens = MISSING_TOKENS | {str(token).strip() for token in missing_tokens}
    for column in frame.columns:
        missing = np.flatnonzero(_is_missing(frame[column], tokens))
        if missing.size:
            raise DataError(f"line {_line(int(missing[0]))}, column {column!r}: missing value")

    time = _parse_time(frame[time_col], time_col)
    status = _parse_status(frame[status_col], status_col)
    feature_cols = [c for c in frame.columns if c not in (time_col, status_col)]
    as_factor = set(factor_columns)

    variables: list[FactorVariable] = []
    columns: list[np.ndarray] = []
    raw: dict[str, np.ndarray] = {}
    if schema is not None:
        absent = [name for name in schema.names if name not in frame.columns]
        if absent:
            raise DataError(f"missing columns required by schema: {absent}")
        for var in schema.variables:
            codes, values = _apply_variable(frame[var.name], var)
            variables.append(var)
            columns.append(codes)
            if values is not None:
                raw[var.name] = values
    else:
        for name in feature_cols:
            var, codes, values = _infer_column(frame[name], name, name in as_factor, max_factor_levels)
            variables.append(var)
            columns.append(codes)
            if values is not None:
                raw[name] = values

    codes = np.column_stack(columns) if columns else np.empty((len(time), 0), dtype=np.int32)
    _LOGGER.debug(
        "Loaded %d cases, %d variables (%d pending discretization)", len(time), len(variables), len(raw)
    )
    return Dataset(FactorSchema(tuple(variables)), time, status, codes, raw, time_col, status_col)


def load_csv(
    path: str | Path,
    time_col: str,
    status_col: str,
    *,
    factor_columns: Iterable[str] = (),
    max_factor_levels: int = DEFAULT_MAX_FACTOR_LEVELS,
    schema: FactorSchema | None = None,
    missing_tokens: Iterable[str] = MISSING_TOKENS,
) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row.

    String columns map distinct values to labels in order of first
    appearance. Numeric columns load as factors when listed in
    ``factor_columns`` or when they have at most ``max_factor_levels``
    distinct values; otherwise they are pending discretization. With a
    ``schema`` the file is mapped through that schema's labels and cut points.

    Empty cells are always missing; ``missing_tokens`` adds further
    spellings, compared exactly after stripping whitespace.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file is empty") from None
    return dataset_from_frame(
        frame,
        time_col,
        status_col,
        factor_columns=factor_columns,
        max_factor_levels=max_factor_levels,
        schema=schema,
        missing_tokens=missing_tokens,
    )


def to_frame(dataset: Dataset) -> pd.DataFrame:
    """Tabular view with label strings (raw reals for pending variables)."""
    data: dict[str, object] = {dataset.time_name: dataset.time, dataset.status_name: dataset.status}
    for j, var in enumerate(dataset.schema.variables):
        if var.pending:
            data[var.name] = dataset.raw[var.name]
        else:
            labels = np.asarray(var.labels, dtype=object)
            data[var.name] = labels[dataset.codes[:, j]]
    return pd.DataFrame(data)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    to_frame(dataset).to_csv(path, index=False)


def save_schema(schema: FactorSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


def load_schema(path: str | Path) -> FactorSchema:
    try:
        return FactorSchema.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, KeyError, TypeError, ValueError) as err:
        raise DataError(f"cannot read schema sidecar {path}: {err}") from err


# ---------------------------------------------------------------------------
# Discretization and noise
# ---------------------------------------------------------------------------


def bin_values(values: np.ndarray, cut_points: np.ndarray) -> np.ndarray:
    """Bin index of each value; bin k is (cut[k-1], cut[k]]."""
    return np.searchsorted(cut_points, values, side="left").astype(np.int32)


def quantile_cut_points(values: np.ndarray, label_count: int) -> np.ndarray:
    """Equal-frequency cut points keeping only those between populated bins.

    Tied values never straddle a cut, so fewer than ``label_count`` bins may
    be realized (a constant column yields none).
    """
    if label_count < 2:
        raise DataError(f"granularity must be at least 2, got {label_count}")
    cuts = np.unique(np.quantile(values, np.arange(1, label_count) / label_count))
    occupied = np.unique(bin_values(values, cuts))
    return cuts[occupied[1:] - 1]


def _bin_labels(count: int) -> tuple[str, ...]:
    return tuple(f"bin{k}" for k in range(count))


def _discretized_variable(name: str, values: np.ndarray, label_count: int, noise: bool = False):
    cuts = quantile_cut_points(values, label_count)
    var = FactorVariable(name, _bin_labels(len(cuts) + 1), cut_points=tuple(float(c) for c in cuts), noise=noise)
    if var.degenerate:
        _LOGGER.warning("Variable %s has a single value; it will never be split on", name)
    return var, bin_values(values, cuts)


def discretize(dataset: Dataset, variable: str, label_count: int) -> Dataset:
    """Turn a pending numeric variable into a factor of at most ``label_count`` labels."""
    j = dataset.schema.index(variable)
    if not dataset.schema[j].pending:
        raise DataError(f"variable {variable!r} is already a factor")
    if label_count < 2:
        raise DataError(f"granularity must be at least 2, got {label_count}")
    var, column = _discretized_variable(variable, dataset.raw[variable], label_count, dataset.schema[j].noise)
    codes = dataset.codes.copy()
    codes[:, j] = column
    raw = {k: v for k, v in dataset.raw.items() if k != variable}
    return replace(dataset, schema=dataset.schema.with_variable(j, var), codes=codes, raw=raw)


def discretize_all(dataset: Dataset, label_count: int) -> Dataset:
    """Discretize every pending variable to ``label_count`` labels."""
    for name in dataset.pending_variables:
        dataset = discretize(dataset, name, label_count)
    return dataset


def inject_noise(
    dataset: Dataset,
    n_continuous: int,
    n_discrete: int,
    label_count: int,
    rng: np.random.Generator,
) -> Dataset:
    """Append independent noise variables.

    ``c1..cN`` are standard normal draws discretized to ``label_count``
    labels; ``d1..dM`` are fair-coin binary factors. Time and status are
    left untouched.
    """
    if n_continuous == 0 and n_discrete == 0:
        return dataset
    if dataset.n_cases == 0:
        raise DataError("cannot add noise variables to an empty dataset")
    n = dataset.n_cases
    variables = list(dataset.schema.variables)
    columns = [dataset.codes]
    for k in range(1, n_continuous + 1):
        var, column = _discretized_variable(
            f"{CONTINUOUS_NOISE_PREFIX}{k}", rng.standard_normal(n), label_count, noise=True
        )
        variables.append(var)
        columns.append(column[:, None])
    for k in range(1, n_discrete + 1):
        variables.append(FactorVariable(f"{DISCRETE_NOISE_PREFIX}{k}", ("0", "1"), noise=True))
        columns.append(rng.integers(0, 2, size=n)[:, None])
    return replace(dataset, schema=FactorSchema(tuple(variables)), codes=np.hstack(columns))
