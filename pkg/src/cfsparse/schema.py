"""Feature schema, tabular CSV/JSON IO, and the standardize/one-hot codec.

Everything downstream (models, generators, matching, attribution) works on
the encoded feature space produced here; all user-facing values stay in the
original space. Column order of the encoded space is a deterministic
function of the schema alone: features appear in schema order, numerics as
one standardized column, categoricals as a contiguous one-hot group.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

#: numeric cells closer than this (original units) do not count as changed
DEFAULT_NUMERIC_TOL = 1e-9

Cell = float | str


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    levels: tuple[str, ...] = ()

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    @property
    def width(self) -> int:
        """Number of encoded columns this feature occupies."""
        return 1 if self.is_numeric else len(self.levels)


@dataclass(frozen=True)
class LabelSpec:
    name: str
    classes: tuple[str, ...]


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature declarations plus the label column.

    Feature order is canonical: it fixes the column order of every table
    and every encoded matrix derived from this schema.
    """

    features: tuple[Feature, ...]
    label: LabelSpec

    def __post_init__(self) -> None:
        if not self.features:
            raise ValidationError("schema declares no features")
        seen: set[str] = set()
        for f in self.features:
            if f.name in seen:
                raise ValidationError(f"duplicate feature name {f.name!r}")
            seen.add(f.name)
            if f.name == self.label.name:
                raise ValidationError(
                    f"feature name {f.name!r} equals the label name"
                )
            if f.kind not in (NUMERIC, CATEGORICAL):
                raise ValidationError(
                    f"feature {f.name!r}: unknown kind {f.kind!r}"
                )
            if f.kind == CATEGORICAL:
                if len(f.levels) < 2:
                    raise ValidationError(
                        f"categorical feature {f.name!r} has fewer than 2 levels"
                    )
                if len(set(f.levels)) != len(f.levels):
                    raise ValidationError(
                        f"categorical feature {f.name!r} has duplicate levels"
                    )
            elif f.levels:
                raise ValidationError(
                    f"numeric feature {f.name!r} must not declare levels"
                )
        if len(self.label.classes) < 2:
            raise ValidationError("label declares fewer than 2 classes")
        if len(set(self.label.classes)) != len(self.label.classes):
            raise ValidationError("label classes are not distinct")

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def encoded_width(self) -> int:
        return sum(f.width for f in self.features)

    def column_groups(self) -> tuple[tuple[int, ...], ...]:
        """Encoded column indices per feature, contiguous in schema order."""
        groups = []
        start = 0
        for f in self.features:
            groups.append(tuple(range(start, start + f.width)))
            start += f.width
        return tuple(groups)

    def column_map(self) -> tuple[int, ...]:
        """For each encoded column, the index of its originating feature."""
        out: list[int] = []
        for j, f in enumerate(self.features):
            out.extend([j] * f.width)
        return tuple(out)

    def level_index(self, feature_idx: int, level: str) -> int:
        return self.features[feature_idx].levels.index(level)


@dataclass(frozen=True)
class InstanceSet:
    """Rows of original-space cell values tied to a schema.

    Numeric cells are finite floats, categorical cells are declared level
    strings; both are checked at construction so every InstanceSet in the
    pipeline is valid by construction.
    """

    schema: FeatureSchema
    rows: tuple[tuple[Cell, ...], ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        norm = tuple(
            tuple(self._check_cell(r, j, v) for j, v in enumerate(row))
            for r, row in enumerate(self.rows)
        )
        object.__setattr__(self, "rows", norm)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != len(self.rows):
                raise ValidationError("labels length does not match row count")
            for r, lab in enumerate(self.labels):
                if lab not in self.schema.label.classes:
                    raise ValidationError(
                        f"row {r + 1}: label {lab!r} not a declared class"
                    )

    def _check_cell(self, r: int, j: int, value: Cell) -> Cell:
        if j >= self.schema.n_features:
            raise ValidationError(
                f"row {r + 1}: expected {self.schema.n_features} cells"
            )
        feat = self.schema.features[j]
        if feat.is_numeric:
            if isinstance(value, bool) or isinstance(value, str):
                raise ValidationError(
                    f"row {r + 1}, feature {feat.name!r}: expected a number, "
                    f"got {value!r}"
                )
            value = float(value)
            if not math.isfinite(value):
                raise ValidationError(
                    f"row {r + 1}, feature {feat.name!r}: non-finite value"
                )
            return value
        if value not in feat.levels:
            raise ValidationError(
                f"row {r + 1}, feature {feat.name!r}: value {value!r} "
                f"not in declared levels"
            )
        return value

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def take(self, indices: Sequence[int]) -> "InstanceSet":
        """Row subset/reordering (repeats allowed), labels dropped."""
        return InstanceSet(
            self.schema, tuple(self.rows[i] for i in indices), None
        )

    def numeric_range(self, feature_idx: int) -> tuple[float, float]:
        vals = [row[feature_idx] for row in self.rows]
        return float(min(vals)), float(max(vals))  # type: ignore[type-var]


@dataclass(frozen=True)
class NumericStats:
    mean: float
    std: float


@dataclass(frozen=True)
class PreprocessSpec:
    """Standardization constants and one-hot layout, fitted or loaded.

    ``stats[j]`` is None for categorical features. ``constant`` holds the
    indices of numeric features whose fitted std fell below 1e-12 and was
    replaced by 1.
    """

    schema: FeatureSchema
    stats: tuple[NumericStats | None, ...]
    constant: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        if len(self.stats) != self.schema.n_features:
            raise ValidationError("preprocess stats do not cover all features")
        for j, f in enumerate(self.schema.features):
            s = self.stats[j]
            if f.is_numeric:
                if s is None:
                    raise ValidationError(
                        f"feature {f.name!r}: missing mean/std"
                    )
                if not (s.std > 0):
                    raise ValidationError(
                        f"feature {f.name!r}: std must be > 0"
                    )
            elif s is not None:
                raise ValidationError(
                    f"feature {f.name!r}: categorical features take no stats"
                )

    @property
    def width(self) -> int:
        return self.schema.encoded_width

    @property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        return self.schema.column_groups()

    def to_dict(self) -> dict:
        feats = []
        for j, f in enumerate(self.schema.features):
            if f.is_numeric:
                s = self.stats[j]
                assert s is not None
                feats.append(
                    {"name": f.name, "kind": f.kind, "mean": s.mean, "std": s.std}
                )
            else:
                feats.append(
                    {"name": f.name, "kind": f.kind, "levels": list(f.levels)}
                )
        return {
            "features": feats,
            "label": {
                "name": self.schema.label.name,
                "classes": list(self.schema.label.classes),
            },
            "constant": sorted(self.constant),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "PreprocessSpec":
        try:
            features = []
            stats: list[NumericStats | None] = []
            for entry in obj["features"]:
                kind = entry["kind"]
                if kind == NUMERIC:
                    features.append(Feature(entry["name"], NUMERIC))
                    stats.append(
                        NumericStats(float(entry["mean"]), float(entry["std"]))
                    )
                else:
                    features.append(
                        Feature(entry["name"], kind, tuple(entry["levels"]))
                    )
                    stats.append(None)
            label = LabelSpec(
                obj["label"]["name"], tuple(obj["label"]["classes"])
            )
            constant = frozenset(int(i) for i in obj.get("constant", []))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"invalid preprocess spec: {exc}") from exc
        schema = FeatureSchema(tuple(features), label)
        return cls(schema, tuple(stats), constant)


@dataclass(frozen=True)
class EncodedMatrix:
    """n x d standardized/one-hot matrix plus the column -> feature map."""

    values: np.ndarray
    column_map: tuple[int, ...]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError("encoded matrix must be 2-dimensional")
        if v.shape[1] != len(self.column_map):
            raise ValidationError("column_map does not match matrix width")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def groups(self) -> tuple[tuple[int, ...], ...]:
        out: dict[int, list[int]] = {}
        for col, feat in enumerate(self.column_map):
            out.setdefault(feat, []).append(col)
        return tuple(tuple(out[k]) for k in sorted(out))

    def take(self, indices: Sequence[int]) -> "EncodedMatrix":
        return EncodedMatrix(self.values[list(indices)], self.column_map)


@dataclass(frozen=True)
class ChangeMask:
    """Per-cell changed flags between two aligned instance sets."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.mask, dtype=bool).copy()
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @property
    def per_row_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(int)

    @property
    def total(self) -> int:
        return int(self.mask.sum())


def load_schema(path: str | Path) -> FeatureSchema:
    """Read and validate a schema JSON file."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"schema file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid schema JSON in {path}: {exc}") from exc
    return schema_from_dict(obj)


def schema_from_dict(obj: Mapping) -> FeatureSchema:
    try:
        features = []
        for entry in obj["features"]:
            kind = entry["kind"]
            levels = tuple(str(x) for x in entry.get("levels", ()))
            features.append(Feature(str(entry["name"]), kind, levels))
        label = LabelSpec(
            str(obj["label"]["name"]),
            tuple(str(c) for c in obj["label"]["classes"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"invalid schema structure: {exc}") from exc
    return FeatureSchema(tuple(features), label)


def schema_to_dict(schema: FeatureSchema) -> dict:
    feats = []
    for f in schema.features:
        entry: dict = {"name": f.name, "kind": f.kind}
        if not f.is_numeric:
            entry["levels"] = list(f.levels)
        feats.append(entry)
    return {
        "features": feats,
        "label": {"name": schema.label.name, "classes": list(schema.label.classes)},
    }


def read_csv_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Raw CSV read: header plus string rows. UTF-8, comma-separated."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"CSV file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, no header") from None
        rows = [row for row in reader if row]
    return header, rows


def _parse_columns(
    header: list[str],
    rows: list[list[str]],
    schema: FeatureSchema,
    expect_label: bool,
    allowed_extra: Iterable[str] = (),
) -> tuple[list[tuple[Cell, ...]], list[str] | None, dict[str, list[str]]]:
    """Validate a raw CSV against the schema and parse its cells."""
    allowed_extra = set(allowed_extra)
    known = set(schema.feature_names) | {schema.label.name} | allowed_extra
    seen: set[str] = set()
    for col in header:
        if col not in known:
            raise ValidationError(f"unknown column {col!r}")
        if col in seen:
            raise ValidationError(f"duplicate column {col!r}")
        seen.add(col)
    for name in schema.feature_names:
        if name not in seen:
            raise ValidationError(f"missing column {name!r}")
    if expect_label and schema.label.name not in seen:
        raise ValidationError(f"missing label column {schema.label.name!r}")

    pos = {col: i for i, col in enumerate(header)}
    label_pos = pos.get(schema.label.name)
    parsed: list[tuple[Cell, ...]] = []
    labels: list[str] = []
    extras: dict[str, list[str]] = {c: [] for c in allowed_extra if c in seen}
    for r, raw in enumerate(rows):
        if len(raw) != len(header):
            raise ValidationError(
                f"row {r + 1}: expected {len(header)} cells, got {len(raw)}"
            )
        cells: list[Cell] = []
        for j, feat in enumerate(schema.features):
            text = raw[pos[feat.name]]
            if feat.is_numeric:
                try:
                    value: Cell = float(text)
                except ValueError:
                    raise ValidationError(
                        f"row {r + 1}, feature {feat.name!r}: "
                        f"value {text!r} is not a number"
                    ) from None
            else:
                value = text
            cells.append(value)
        parsed.append(tuple(cells))
        if label_pos is not None:
            labels.append(raw[label_pos])
        for col in extras:
            extras[col].append(raw[pos[col]])
    return parsed, (labels if label_pos is not None else None), extras


def load_table(
    path: str | Path, schema: FeatureSchema, expect_label: bool = False
) -> InstanceSet:
    """Load a data CSV and validate every cell against the schema.

    The header must contain exactly the schema's feature names (any order);
    the label column is required iff ``expect_label`` and is parsed when
    present. Row order is preserved.
    """
    header, rows = read_csv_rows(path)
    parsed, labels, _ = _parse_columns(header, rows, schema, expect_label)
    if not parsed:
        raise ValidationError(f"{path}: no rows")
    return InstanceSet(schema, tuple(parsed), tuple(labels) if labels else None)


def write_table(
    path: str | Path,
    instances: InstanceSet,
    extra_columns: Mapping[str, Sequence[str]] | None = None,
) -> None:
    """Write an InstanceSet as CSV (schema order, deterministic bytes).

    Numeric cells use shortest round-trip float formatting; extra columns
    are appended after the feature columns in the given order.
    """
    extra_columns = dict(extra_columns or {})
    for name, col in extra_columns.items():
        if len(col) != instances.n_rows:
            raise ValidationError(f"extra column {name!r} has wrong length")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(instances.schema.feature_names) + list(extra_columns))
        for r, row in enumerate(instances.rows):
            out = [
                repr(v) if isinstance(v, float) else v for v in row
            ]
            out.extend(str(extra_columns[c][r]) for c in extra_columns)
            writer.writerow(out)


def fit_preprocess(data: InstanceSet) -> PreprocessSpec:
    """Fit standardization constants on a dataset.

    Uses the population standard deviation; constant numeric columns
    (std < 1e-12) fall back to std 1 and are flagged in ``constant``.
    """
    if data.n_rows < 1:
        raise ValidationError("cannot fit preprocessing on an empty set")
    stats: list[NumericStats | None] = []
    constant: set[int] = set()
    for j, feat in enumerate(data.schema.features):
        if not feat.is_numeric:
            stats.append(None)
            continue
        col = np.array([row[j] for row in data.rows], dtype=np.float64)
        mean = float(col.mean())
        std = float(col.std())
        if std < 1e-12:
            std = 1.0
            constant.add(j)
        stats.append(NumericStats(mean, std))
    return PreprocessSpec(data.schema, tuple(stats), frozenset(constant))


def encode(data: InstanceSet, prep: PreprocessSpec) -> EncodedMatrix:
    """Standardize numerics and one-hot categoricals into an n x d matrix."""
    if data.schema != prep.schema:
        raise ValidationError("data schema does not match preprocess schema")
    n = data.n_rows
    out = np.zeros((n, prep.width), dtype=np.float64)
    col = 0
    for j, feat in enumerate(prep.schema.features):
        if feat.is_numeric:
            s = prep.stats[j]
            assert s is not None
            vals = np.array([row[j] for row in data.rows], dtype=np.float64)
            out[:, col] = (vals - s.mean) / s.std
            col += 1
        else:
            idx = np.array(
                [feat.levels.index(row[j]) for row in data.rows], dtype=int
            )
            out[np.arange(n), col + idx] = 1.0
            col += feat.width
    return EncodedMatrix(out, prep.schema.column_map())


def encode_row(row: Sequence[Cell], prep: PreprocessSpec) -> np.ndarray:
    """Encode a single original-space row to a length-d vector."""
    out = np.zeros(prep.width, dtype=np.float64)
    col = 0
    for j, feat in enumerate(prep.schema.features):
        if feat.is_numeric:
            s = prep.stats[j]
            assert s is not None
            out[col] = (float(row[j]) - s.mean) / s.std  # type: ignore[arg-type]
            col += 1
        else:
            out[col + feat.levels.index(row[j])] = 1.0  # type: ignore[arg-type]
            col += feat.width
    return out


def decode(m: EncodedMatrix, prep: PreprocessSpec) -> InstanceSet:
    """Invert :func:`encode`.

    Numerics map back via z*std + mean. One-hot groups decode by argmax; a
    group that is not a clean 0/1 vertex triggers a warning, a group with
    no positive entry is an error.
    """
    if m.width != prep.width:
        raise ValidationError("encoded width does not match preprocess spec")
    rows: list[tuple[Cell, ...]] = []
    off_grid = 0
    for r in range(m.n_rows):
        cells: list[Cell] = []
        col = 0
        for j, feat in enumerate(prep.schema.features):
            if feat.is_numeric:
                s = prep.stats[j]
                assert s is not None
                cells.append(float(m.values[r, col]) * s.std + s.mean)
                col += 1
            else:
                block = m.values[r, col : col + feat.width]
                if block.max() <= 0.0:
                    raise ValidationError(
                        f"row {r + 1}, feature {feat.name!r}: "
                        f"undecodable one-hot group"
                    )
                clean = (
                    abs(block.sum() - 1.0) <= 1e-9
                    and np.all(np.abs(block - np.round(block)) <= 1e-9)
                )
                if not clean:
                    off_grid += 1
                cells.append(feat.levels[int(block.argmax())])
                col += feat.width
        rows.append(tuple(cells))
    if off_grid:
        warnings.warn(
            f"{off_grid} one-hot group(s) were off-grid; decoded by argmax",
            stacklevel=2,
        )
    return InstanceSet(prep.schema, tuple(rows))


def diff_features(
    a: InstanceSet, b: InstanceSet, numeric_tol: float = DEFAULT_NUMERIC_TOL
) -> ChangeMask:
    """Mark original-level cells that differ between two aligned sets.

    Numeric cells count as changed only when they differ by more than
    ``numeric_tol`` in original units; categorical cells when levels differ.
    """
    if a.schema != b.schema:
        raise ValidationError("instance sets have different schemas")
    if a.n_rows != b.n_rows:
        raise ValidationError(
            f"row count mismatch: {a.n_rows} vs {b.n_rows}"
        )
    mask = np.zeros((a.n_rows, a.schema.n_features), dtype=bool)
    for r, (ra, rb) in enumerate(zip(a.rows, b.rows)):
        for j, feat in enumerate(a.schema.features):
            if feat.is_numeric:
                mask[r, j] = abs(float(ra[j]) - float(rb[j])) > numeric_tol  # type: ignore[arg-type]
            else:
                mask[r, j] = ra[j] != rb[j]
    return ChangeMask(mask)
