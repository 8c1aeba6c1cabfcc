"""Shapley attribution vs independent enumeration oracles."""

from __future__ import annotations

import math
from itertools import permutations

import numpy as np
import pytest

from cfsparse import (
    AttributionParams,
    SwapGame,
    ValidationError,
    attribute_all,
    cost_matrix,
    encode,
    fit_preprocess,
    hybrid,
    match_index,
    score_batch,
    shapley_exact,
    shapley_sample,
)
from conftest import (
    identity_prep,
    make_instances,
    make_logistic,
    make_mlp,
    make_schema,
)


def oracle_phi(model, x, c, groups, target, scale):
    """Independent oracle: average marginal contribution over all p!
    feature orderings, with its own hybrid construction."""
    p = len(groups)

    def value(subset):
        row = np.array(x, dtype=float)
        for j in subset:
            for col in groups[j]:
                row[col] = c[col]
        return float(score_batch(model, row[None, :], target, scale)[0])

    phi = np.zeros(p)
    for order in permutations(range(p)):
        subset: list[int] = []
        prev = value(subset)
        for j in order:
            subset.append(j)
            now = value(subset)
            phi[j] += now - prev
            prev = now
    return phi / math.factorial(p)


def closed_form_logistic_logit(model, x, c, groups, target):
    """Additive game: phi_j is the group sum of w_k * (c_k - x_k)."""
    sign = 1.0 if target == 1 else -1.0
    return np.array(
        [
            sign * sum(model.weights[k] * (c[k] - x[k]) for k in g)
            for g in groups
        ]
    )


def test_hybrid_anchors_and_atomicity():
    schema = make_schema(n_numeric=1, cat_levels=(3,))
    groups = schema.column_groups()
    x = np.array([0.5, 1.0, 0.0, 0.0])
    c = np.array([-2.0, 0.0, 0.0, 1.0])
    assert hybrid(x, c, (), groups).tolist() == x.tolist()
    assert hybrid(x, c, (0, 1), groups).tolist() == c.tolist()
    h = hybrid(x, c, (1,), groups)
    # the categorical group moves as a block: never a mixed one-hot vector
    assert h.tolist() == [0.5, 0.0, 0.0, 1.0]


def test_exact_null_game_is_zero():
    prep = identity_prep(make_schema(3))
    model = make_mlp(prep, seed=0)
    x = np.array([1.0, -2.0, 0.5])
    game = SwapGame(model, x, x.copy(), prep.groups, target=1)
    assert shapley_exact(game).tolist() == [0.0, 0.0, 0.0]


def test_exact_matches_logistic_closed_form():
    rng = np.random.default_rng(0)
    schema = make_schema(n_numeric=3, cat_levels=(2, 3))
    data = make_instances(schema, 30, seed=1)
    prep = fit_preprocess(data)
    model = make_logistic(prep, rng.normal(size=prep.width), bias=0.3)
    enc = encode(data, prep).values
    for k in range(0, 28, 2):
        x, c = enc[k], enc[k + 1]
        for target in (0, 1):
            game = SwapGame(model, x, c, prep.groups, target, "logit")
            phi = shapley_exact(game)
            expected = closed_form_logistic_logit(model, x, c, prep.groups, target)
            assert np.max(np.abs(phi - expected)) < 1e-12


def test_exact_matches_permutation_oracle_mlp():
    rng = np.random.default_rng(5)
    schema = make_schema(n_numeric=2, cat_levels=(2,))  # p = 3
    prep = identity_prep(schema)
    model = make_mlp(prep, seed=2, hidden=(6, 5))
    for trial in range(10):
        x = rng.normal(size=prep.width)
        c = rng.normal(size=prep.width)
        for scale in ("probability", "logit"):
            game = SwapGame(model, x, c, prep.groups, 1, scale)
            phi = shapley_exact(game)
            expected = oracle_phi(model, x, c, prep.groups, 1, scale)
            assert np.max(np.abs(phi - expected)) < 1e-9


def test_exact_efficiency_and_memoization():
    rng = np.random.default_rng(9)
    schema = make_schema(6)
    prep = identity_prep(schema)
    model = make_mlp(prep, seed=4, hidden=(10, 10))
    for _ in range(10):
        x = rng.normal(size=6)
        c = rng.normal(size=6)
        game = SwapGame(model, x, c, prep.groups, 1, "probability")
        phi = shapley_exact(game)
        delta = game.value((1 << 6) - 1) - game.value(0)
        assert abs(phi.sum() - delta) < 1e-9
        assert game.evaluations <= 2**6


def test_exact_limit_points_to_sampling():
    schema = make_schema(13)
    prep = identity_prep(schema)
    model = make_logistic(prep, np.ones(13))
    game = SwapGame(model, np.zeros(13), np.ones(13), prep.groups, 1)
    with pytest.raises(ValidationError, match="shapley_sample"):
        shapley_exact(game)


def test_dummy_feature_zero_phi():
    rng = np.random.default_rng(13)
    schema = make_schema(4)
    prep = identity_prep(schema)
    model = make_mlp(prep, seed=6)
    x = rng.normal(size=4)
    c = rng.normal(size=4)
    c[2] = x[2]  # feature 2 never changes
    game = SwapGame(model, x, c, prep.groups, 1)
    phi = shapley_exact(game)
    assert abs(phi[2]) < 1e-12


def test_symmetric_features_equal_phi():
    # two inputs wired identically into the network and moved identically
    # are interchangeable in every coalition
    schema = make_schema(3)
    prep = identity_prep(schema)
    rng = np.random.default_rng(21)
    from cfsparse.model import Layer, ModelSpec

    w1 = rng.normal(size=(5, 3))
    w1[:, 1] = w1[:, 0]
    layers = (
        Layer(w1, rng.normal(size=5), "relu"),
        Layer(rng.normal(size=(1, 5)), rng.normal(size=1), "identity"),
    )
    model = ModelSpec("mlp", prep, layers=layers)
    x = np.array([0.3, 0.3, -1.0])
    c = np.array([1.7, 1.7, 0.4])
    game = SwapGame(model, x, c, prep.groups, 1, "probability")
    phi = shapley_exact(game)
    assert abs(phi[0] - phi[1]) < 1e-9


def test_sampled_null_game_zero():
    prep = identity_prep(make_schema(4))
    model = make_mlp(prep, seed=1)
    x = np.ones(4)
    game = SwapGame(model, x, x.copy(), prep.groups, 1)
    phi = shapley_sample(game, samples=5, seed=3)
    assert phi.tolist() == [0.0, 0.0, 0.0, 0.0]


def test_sampled_exact_on_additive_game_single_permutation():
    rng = np.random.default_rng(2)
    schema = make_schema(5)
    prep = identity_prep(schema)
    model = make_logistic(prep, rng.normal(size=5), bias=-0.2)
    x = rng.normal(size=5)
    c = rng.normal(size=5)
    game = SwapGame(model, x, c, prep.groups, 1, "logit")
    exact = shapley_exact(
        SwapGame(model, x, c, prep.groups, 1, "logit")
    )
    sampled = shapley_sample(game, samples=1, seed=17)
    assert np.max(np.abs(sampled - exact)) < 1e-12


def test_sampled_closure_makes_efficiency_exact():
    rng = np.random.default_rng(31)
    schema = make_schema(7)
    prep = identity_prep(schema)
    model = make_mlp(prep, seed=8, hidden=(9, 9))
    for seed in range(10):
        x = rng.normal(size=7)
        c = rng.normal(size=7)
        game = SwapGame(model, x, c, prep.groups, 1, "probability")
        phi = shapley_sample(game, samples=30, seed=seed)
        delta = game.value((1 << 7) - 1) - game.value(0)
        assert abs(float(np.sum(phi)) - delta) == 0.0


def test_sampled_mean_within_three_standard_errors():
    """p=8 mlp, K=2000, 20 seeds: seed-mean phi within 3 SE of exact."""
    schema = make_schema(8)
    prep = identity_prep(schema)
    model = make_mlp(prep, seed=10, hidden=(12, 12))
    rng = np.random.default_rng(50)
    x = rng.normal(size=8)
    c = rng.normal(size=8)
    game = SwapGame(model, x, c, prep.groups, 1, "probability")
    exact = shapley_exact(game)
    estimates = np.stack(
        [shapley_sample(game, samples=2000, seed=s) for s in range(20)]
    )
    mean = estimates.mean(axis=0)
    se = estimates.std(axis=0, ddof=1) / np.sqrt(20)
    # guard very small SEs with a floating-point floor
    assert np.all(np.abs(mean - exact) <= 3 * se + 1e-12)


def test_attribute_all_shapes_and_zero_tables():
    schema = make_schema(3, cat_levels=(2,))
    data = make_instances(schema, 6, seed=3)
    prep = fit_preprocess(data)
    model = make_logistic(prep, np.ones(prep.width), bias=0.0)
    enc = encode(data, prep)
    match = match_index(6, 6, cost=cost_matrix(enc, enc))
    params = AttributionParams(target=1)
    tables = attribute_all(model, match, enc, enc, "exact", params)
    assert len(tables) == match.n_pairs
    for t in tables:
        assert np.all(t.phi == 0.0)
        assert t.baseline == t.full


def test_attribute_all_exact_vs_sampled():
    rng = np.random.default_rng(6)
    schema = make_schema(6)
    prep = identity_prep(schema)
    model = make_mlp(prep, seed=12, hidden=(8, 8))
    f = encode_random(prep, rng, 3)
    c = encode_random(prep, rng, 3)
    match = match_index(3, 3)
    params = AttributionParams(target=1, samples=5000, seed=0)
    exact = attribute_all(model, match, f, c, "exact", params)
    sampled = attribute_all(model, match, f, c, "sampled", params)
    for te, ts in zip(exact, sampled):
        assert np.max(np.abs(te.phi - ts.phi)) < 0.02


def encode_random(prep, rng, n):
    from cfsparse import EncodedMatrix

    return EncodedMatrix(
        rng.normal(size=(n, prep.width)), prep.schema.column_map()
    )


def test_attribute_all_deterministic_given_seed():
    rng = np.random.default_rng(8)
    schema = make_schema(5)
    prep = identity_prep(schema)
    model = make_mlp(prep, seed=14)
    f = encode_random(prep, rng, 4)
    c = encode_random(prep, rng, 4)
    match = match_index(4, 4)
    params = AttributionParams(target=1, samples=50, seed=9)
    a = attribute_all(model, match, f, c, "sampled", params)
    b = attribute_all(model, match, f, c, "sampled", params)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.phi, tb.phi)
        assert ta.seed == tb.seed
