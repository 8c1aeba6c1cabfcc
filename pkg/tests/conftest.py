"""Shared builders for synthetic schemas, data and models."""

from __future__ import annotations

import numpy as np
import pytest

from cfsparse import (
    Feature,
    FeatureSchema,
    InstanceSet,
    LabelSpec,
    ModelSpec,
    PreprocessSpec,
    fit_preprocess,
)
from cfsparse.model import IDENTITY, RELU, Layer


def make_schema(n_numeric: int = 2, cat_levels: tuple[int, ...] = ()) -> FeatureSchema:
    feats = [Feature(f"n{i}", "numeric") for i in range(n_numeric)]
    for i, levels in enumerate(cat_levels):
        feats.append(
            Feature(
                f"c{i}",
                "categorical",
                tuple(chr(ord("A") + k) for k in range(levels)),
            )
        )
    return FeatureSchema(tuple(feats), LabelSpec("y", ("0", "1")))


def make_instances(
    schema: FeatureSchema, n: int, seed: int = 0
) -> InstanceSet:
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        cells = []
        for f in schema.features:
            if f.is_numeric:
                cells.append(float(rng.normal()))
            else:
                cells.append(f.levels[int(rng.integers(len(f.levels)))])
        rows.append(tuple(cells))
    return InstanceSet(schema, tuple(rows))


def identity_prep(schema: FeatureSchema) -> PreprocessSpec:
    """Preprocess with mean 0 / std 1 so encoded == raw for numerics."""
    from cfsparse.schema import NumericStats

    stats = tuple(
        NumericStats(0.0, 1.0) if f.is_numeric else None for f in schema.features
    )
    return PreprocessSpec(schema, stats)


def make_logistic(
    prep: PreprocessSpec,
    weights: np.ndarray | list[float],
    bias: float = 0.0,
    threshold: float = 0.5,
) -> ModelSpec:
    return ModelSpec(
        "logistic", prep, threshold, weights=np.asarray(weights, float), bias=bias
    )


def make_mlp(
    prep: PreprocessSpec,
    seed: int = 0,
    hidden: tuple[int, ...] = (8, 8),
    out_width: int = 1,
    scale: float = 1.0,
) -> ModelSpec:
    rng = np.random.default_rng(seed)
    widths = [prep.width, *hidden, out_width]
    layers = []
    for i in range(len(widths) - 1):
        act = RELU if i < len(widths) - 2 else IDENTITY
        layers.append(
            Layer(
                scale * rng.normal(size=(widths[i + 1], widths[i])),
                scale * rng.normal(size=widths[i + 1]),
                act,
            )
        )
    return ModelSpec("mlp", prep, layers=tuple(layers))


@pytest.fixture
def simple_schema() -> FeatureSchema:
    return make_schema(n_numeric=1, cat_levels=(3,))


@pytest.fixture
def simple_data(simple_schema) -> InstanceSet:
    return InstanceSet(
        simple_schema,
        ((30.0, "B"), (10.0, "A"), (20.0, "C"), (40.0, "B")),
    )


@pytest.fixture
def simple_prep(simple_data) -> PreprocessSpec:
    return fit_preprocess(simple_data)
