"""Built-in counterfactual generators and the external CSV import path.

Two generators ship: a gradient-descent search that minimizes a squared
hinge on the target-class probability plus a distance penalty, and a
seeded random-search generator that proposes diverse candidates and keeps
the valid ones with the fewest changed features. Externally produced
counterfactuals enter through :func:`import_external`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .model import ModelSpec, gradient_scores, predict_label, score_batch
from .schema import (
    CATEGORICAL,
    Cell,
    EncodedMatrix,
    FeatureSchema,
    InstanceSet,
    _parse_columns,
    decode,
    encode,
    read_csv_rows,
)

L1 = "l1"
L2 = "l2"

ALIGNED = "aligned"
INDEXED = "indexed"


@dataclass(frozen=True)
class GeneratorParams:
    target_class: int
    max_iters: int = 1000
    step_size: float = 0.05
    lambda_init: float = 0.1
    lambda_growth: float = 1.1
    distance: str = L1
    k_per_instance: int = 1
    seed: int = 0
    margin: float = 0.0

    def __post_init__(self) -> None:
        if self.step_size <= 0:
            raise ValidationError("step_size must be > 0")
        if self.lambda_growth < 1:
            raise ValidationError("lambda_growth must be >= 1")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.k_per_instance < 1:
            raise ValidationError("k_per_instance must be >= 1")
        if self.distance not in (L1, L2):
            raise ValidationError(f"unknown distance {self.distance!r}")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")


@dataclass(frozen=True)
class GenerationResult:
    """Generated counterfactuals plus per-row validity flags.

    ``factual_index[r]`` is the factual each output row explains; for the
    gradient generator this is the identity, the diverse generator emits
    ``k_per_instance`` rows per factual.
    """

    instances: InstanceSet
    valid: tuple[bool, ...]
    already_valid: tuple[bool, ...]
    factual_index: tuple[int, ...]

    @property
    def validity_rate(self) -> float:
        if not self.valid:
            return 0.0
        return sum(self.valid) / len(self.valid)


@dataclass(frozen=True)
class ImportResult:
    instances: InstanceSet
    factual_index: tuple[int, ...] | None


def _categorical_groups(schema: FeatureSchema) -> list[tuple[int, ...]]:
    return [
        g
        for f, g in zip(schema.features, schema.column_groups())
        if f.kind == CATEGORICAL
    ]


def _project_onehot(x: np.ndarray, cat_groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Snap every one-hot group of every row to its nearest vertex."""
    for g in cat_groups:
        cols = list(g)
        block = x[:, cols]
        winner = block.argmax(axis=1)
        block = np.zeros_like(block)
        block[np.arange(block.shape[0]), winner] = 1.0
        x[:, cols] = block
    return x


def _distances(x: np.ndarray, x0: np.ndarray, kind: str) -> np.ndarray:
    delta = x - x0
    if kind == L1:
        return np.abs(delta).sum(axis=1)
    return (delta * delta).sum(axis=1)


def _distance_grad(x: np.ndarray, x0: np.ndarray, kind: str) -> np.ndarray:
    delta = x - x0
    if kind == L1:
        return np.sign(delta)  # subgradient 0 at coincident coordinates
    return 2.0 * delta


def wachter_generate(
    model: ModelSpec, factuals: InstanceSet, params: GeneratorParams
) -> GenerationResult:
    """Gradient-descent counterfactual search, one row per factual.

    Minimizes lambda * max(0, 0.5 + margin - p_target)^2 + dist(x0, x) in
    encoded space; lambda grows by ``lambda_growth`` every 50 iterations
    while a row is still invalid. One-hot groups snap to their nearest
    vertex after every step, so each evaluated iterate is decodable. Rows
    already at the target pass through unchanged; rows that never flip
    return the iterate with the highest target probability, flagged
    invalid. Among valid iterates the closest one wins.
    """
    prep = model.preprocess
    if factuals.schema != prep.schema:
        raise ValidationError("factuals do not match the model's schema")
    target = params.target_class
    if not (0 <= target < model.n_classes):
        raise ValidationError(f"target class {target} out of range")

    x_all = encode(factuals, prep).values
    labels0 = predict_label(model, x_all)
    n = factuals.n_rows
    rows: list[tuple[Cell, ...]] = list(factuals.rows)
    valid = np.zeros(n, dtype=bool)
    already = labels0 == target
    valid[already] = True

    active = np.flatnonzero(~already)
    if active.size:
        x0 = x_all[active]
        x = x0.copy()
        m = x0.shape[0]
        lam = np.full(m, params.lambda_init)
        found = np.zeros(m, dtype=bool)
        best_x = x0.copy()
        best_dist = np.full(m, np.inf)
        fallback_x = x0.copy()
        fallback_p = np.full(m, -np.inf)
        cat_groups = _categorical_groups(prep.schema)

        for t in range(params.max_iters):
            p = score_batch(model, x, target, "probability")
            h = np.maximum(0.0, 0.5 + params.margin - p)
            dp = gradient_scores(model, x, target, "probability")
            grad = np.where(
                (h > 0)[:, None], -2.0 * (lam * h)[:, None] * dp, 0.0
            ) + _distance_grad(x, x0, params.distance)
            x = _project_onehot(x - params.step_size * grad, cat_groups)

            now_valid = predict_label(model, x) == target
            p_now = score_batch(model, x, target, "probability")
            d_now = _distances(x, x0, params.distance)
            improved = now_valid & (d_now < best_dist)
            best_x[improved] = x[improved]
            best_dist[improved] = d_now[improved]
            found |= now_valid
            closer_to_flip = ~found & (p_now > fallback_p)
            fallback_x[closer_to_flip] = x[closer_to_flip]
            fallback_p[closer_to_flip] = p_now[closer_to_flip]
            if (t + 1) % 50 == 0:
                lam = np.where(now_valid, lam, lam * params.lambda_growth)

        final = np.where(found[:, None], best_x, fallback_x)
        decoded = decode(EncodedMatrix(final, prep.schema.column_map()), prep)
        for local, global_i in enumerate(active):
            rows[global_i] = decoded.rows[local]
            valid[global_i] = bool(found[local])

    return GenerationResult(
        InstanceSet(prep.schema, tuple(rows)),
        tuple(bool(v) for v in valid),
        tuple(bool(a) for a in already),
        tuple(range(n)),
    )


def diverse_generate(
    model: ModelSpec, factuals: InstanceSet, params: GeneratorParams
) -> GenerationResult:
    """Seeded random-search generator, k_per_instance rows per factual.

    Per factual, ``max_iters`` candidates are drawn by resampling a random
    feature subset (numerics uniform within the factual set's min/max,
    categoricals uniform over levels); valid candidates are kept, fewest
    changed features first, draw order breaking ties. Factuals already at
    the target yield themselves. When fewer than k valid candidates exist
    the remaining slots repeat the factual, flagged invalid. Deterministic
    given the seed: row r uses generator seed ``seed XOR r``.
    """
    prep = model.preprocess
    if factuals.schema != prep.schema:
        raise ValidationError("factuals do not match the model's schema")
    target = params.target_class
    if not (0 <= target < model.n_classes):
        raise ValidationError(f"target class {target} out of range")

    schema = prep.schema
    p = schema.n_features
    k = params.k_per_instance
    n_samples = params.max_iters
    groups = schema.column_groups()
    ranges = {
        j: factuals.numeric_range(j)
        for j, f in enumerate(schema.features)
        if f.is_numeric
    }

    x_all = encode(factuals, prep).values
    labels0 = predict_label(model, x_all)

    rows: list[tuple[Cell, ...]] = []
    valid: list[bool] = []
    already: list[bool] = []
    findex: list[int] = []

    for i in range(factuals.n_rows):
        f_row = factuals.rows[i]
        findex.extend([i] * k)
        if int(labels0[i]) == target:
            rows.extend([f_row] * k)
            valid.extend([True] * k)
            already.extend([True] * k)
            continue
        already.extend([False] * k)

        rng = np.random.default_rng(params.seed ^ i)
        sizes = rng.integers(1, p + 1, size=n_samples)
        perms = rng.permuted(
            np.tile(np.arange(p), (n_samples, 1)), axis=1
        )
        selected = np.argsort(perms, axis=1) < sizes[:, None]

        draws_num: dict[int, np.ndarray] = {}
        draws_cat: dict[int, np.ndarray] = {}
        for j, feat in enumerate(schema.features):
            if feat.is_numeric:
                lo, hi = ranges[j]
                draws_num[j] = rng.uniform(lo, hi, size=n_samples)
            else:
                draws_cat[j] = rng.integers(0, len(feat.levels), size=n_samples)

        cand = np.tile(x_all[i], (n_samples, 1))
        changed = np.zeros(n_samples, dtype=int)
        for j, feat in enumerate(schema.features):
            sel = selected[:, j]
            if feat.is_numeric:
                stats = prep.stats[j]
                assert stats is not None
                vals = draws_num[j]
                col = groups[j][0]
                cand[sel, col] = (vals[sel] - stats.mean) / stats.std
                changed += (sel & (np.abs(vals - float(f_row[j])) > 1e-9)).astype(int)
            else:
                lev = draws_cat[j]
                cols = list(groups[j])
                orig = feat.levels.index(f_row[j])  # type: ignore[arg-type]
                rows_sel = np.flatnonzero(sel)
                cand[np.ix_(rows_sel, cols)] = 0.0
                cand[rows_sel, groups[j][0] + lev[rows_sel]] = 1.0
                changed += (sel & (lev != orig)).astype(int)

        ok = np.flatnonzero(predict_label(model, cand) == target)
        order = ok[np.lexsort((ok, changed[ok]))]
        chosen = order[:k]
        for s in chosen:
            cells = list(f_row)
            for j, feat in enumerate(schema.features):
                if not selected[s, j]:
                    continue
                if feat.is_numeric:
                    cells[j] = float(draws_num[j][s])
                else:
                    cells[j] = feat.levels[int(draws_cat[j][s])]
            rows.append(tuple(cells))
            valid.append(True)
        shortfall = k - len(chosen)
        if shortfall:
            rows.extend([f_row] * shortfall)
            valid.extend([False] * shortfall)

    return GenerationResult(
        InstanceSet(schema, tuple(rows)),
        tuple(valid),
        tuple(already),
        tuple(findex),
    )


def import_external(
    path: str | Path,
    schema: FeatureSchema,
    pairing: str = ALIGNED,
    n_factuals: int | None = None,
) -> ImportResult:
    """Load externally generated counterfactuals from CSV.

    ``indexed`` pairing requires a ``_factual_index`` column whose entries
    are validated against ``n_factuals`` when given; ``aligned`` expects
    one row per factual. A ``_valid`` column, if present, is ignored:
    validity is always re-established by the pipeline.
    """
    if pairing not in (ALIGNED, INDEXED):
        raise ValidationError(f"unknown pairing {pairing!r}")
    header, raw = read_csv_rows(path)
    parsed, _, extras = _parse_columns(
        header, raw, schema, expect_label=False,
        allowed_extra=("_factual_index", "_valid"),
    )
    if not parsed:
        raise ValidationError(f"{path}: no rows")
    instances = InstanceSet(schema, tuple(parsed))
    if pairing == ALIGNED:
        if n_factuals is not None and instances.n_rows != n_factuals:
            raise ValidationError(
                f"aligned pairing needs {n_factuals} rows, got {instances.n_rows}"
            )
        return ImportResult(instances, None)
    if "_factual_index" not in extras:
        raise ValidationError("indexed pairing requires a _factual_index column")
    index: list[int] = []
    for r, text in enumerate(extras["_factual_index"]):
        try:
            v = int(text)
        except ValueError:
            raise ValidationError(
                f"row {r + 1}: _factual_index {text!r} is not an integer"
            ) from None
        if n_factuals is not None and not (0 <= v < n_factuals):
            raise ValidationError(
                f"row {r + 1}: _factual_index {v} out of range for "
                f"{n_factuals} factuals"
            )
        index.append(v)
    return ImportResult(instances, tuple(index))
