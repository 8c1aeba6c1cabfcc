"""Shapley attribution of the prediction change for each matched pair.

The cooperative game is the "swap game": a coalition S of original-level
features yields the model score of the hybrid instance that takes the
columns of the features in S from the counterfactual and everything else
from the factual. One-hot groups move atomically, so attribution happens
at the original feature level, never on individual encoded columns. By
construction v(empty) is the factual's score and v(all features) the
counterfactual's, so the Shapley values split exactly the score change
the refinement stage has to explain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .matching import Matching
from .model import PROBABILITY, ModelSpec, score_batch
from .schema import EncodedMatrix

EXACT = "exact"
SAMPLED = "sampled"

#: largest p for exact enumeration (2^p model evaluations per pair)
EXACT_LIMIT = 12


def hybrid(
    x: np.ndarray,
    c: np.ndarray,
    subset: Iterable[int],
    groups: Sequence[Sequence[int]],
) -> np.ndarray:
    """Coalition instance: counterfactual columns for features in subset.

    Whole one-hot groups are copied atomically, so the result is always a
    decodable row.
    """
    out = np.array(x, dtype=np.float64)
    for j in subset:
        cols = list(groups[j])
        out[cols] = c[cols]
    return out


@dataclass
class SwapGame:
    """Set function over original features with memoized model calls."""

    model: ModelSpec
    x: np.ndarray
    c: np.ndarray
    groups: tuple[tuple[int, ...], ...]
    target: int
    scale: str = PROBABILITY
    _memo: dict[int, float] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        covered = sorted(col for g in self.groups for col in g)
        if covered != list(range(self.x.shape[0])):
            raise ValidationError("groups must partition all encoded columns")
        # precomputed column picker: feature index per encoded column
        col_feature = np.empty(self.x.shape[0], dtype=int)
        for j, g in enumerate(self.groups):
            col_feature[list(g)] = j
        self._col_feature = col_feature

    @property
    def n_features(self) -> int:
        return len(self.groups)

    @property
    def evaluations(self) -> int:
        """Distinct model evaluations made so far."""
        return len(self._memo)

    def _rows_for(self, masks: Sequence[int]) -> np.ndarray:
        bits = (
            (np.asarray(masks, dtype=np.int64)[:, None]
             >> np.arange(self.n_features)) & 1
        ).astype(bool)
        pick_c = bits[:, self._col_feature]
        return np.where(pick_c, self.c[None, :], self.x[None, :])

    def values(self, masks: Sequence[int]) -> np.ndarray:
        """Set-function values for subset bitmasks, batching model calls."""
        missing = sorted({int(m) for m in masks if int(m) not in self._memo})
        if missing:
            scores = score_batch(
                self.model, self._rows_for(missing), self.target, self.scale
            )
            for mask, s in zip(missing, scores):
                self._memo[mask] = float(s)
        return np.array([self._memo[int(m)] for m in masks])

    def value(self, mask: int) -> float:
        return float(self.values([mask])[0])


@dataclass(frozen=True)
class AttributionTable:
    """Per-pair Shapley values at the original-feature level."""

    pair_index: int
    factual_index: int
    cf_index: int
    phi: np.ndarray
    baseline: float  # v(empty) = score of the factual
    full: float      # v(all) = score of the counterfactual
    method: str
    target: int = 1
    samples: int = 0
    seed: int | None = None

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=np.float64).copy()
        phi.flags.writeable = False
        object.__setattr__(self, "phi", phi)

    def to_dict(self, feature_names: Sequence[str]) -> dict:
        return {
            "pair": self.pair_index,
            "factual": self.factual_index,
            "counterfactual": self.cf_index,
            "phi": {name: float(v) for name, v in zip(feature_names, self.phi)},
            "baseline": self.baseline,
            "full": self.full,
            "method": self.method,
            "target": self.target,
            "samples": self.samples,
            "seed": self.seed,
        }


def shapley_exact(game: SwapGame, exact_limit: int = EXACT_LIMIT) -> np.ndarray:
    """Exact Shapley values by full subset enumeration.

    Evaluates every one of the 2^p hybrids once (memoized by bitmask) and
    accumulates the classical weighted marginal contributions.
    """
    p = game.n_features
    if p > exact_limit:
        raise ValidationError(
            f"{p} features exceed the exact enumeration limit {exact_limit}; "
            f"use shapley_sample instead"
        )
    all_masks = list(range(1 << p))
    v = game.values(all_masks)
    pop = np.array([m.bit_count() for m in all_masks])
    fact = [math.factorial(k) for k in range(p + 1)]
    # weight of a marginal contribution on top of a subset of size s
    w = np.array([fact[s] * fact[p - 1 - s] / fact[p] for s in range(p)])
    phi = np.zeros(p)
    masks_arr = np.arange(1 << p)
    for j in range(p):
        without = masks_arr[(masks_arr >> j) & 1 == 0]
        with_j = without | (1 << j)
        phi[j] = float(np.sum(w[pop[without]] * (v[with_j] - v[without])))
    return phi


def _fold(values) -> float:
    """Plain left-to-right float summation (same order as builtin sum)."""
    acc = 0.0
    for v in values:
        acc += float(v)
    return acc


def _close_efficiency(phi: np.ndarray, delta: float) -> np.ndarray:
    """Shift phi uniformly, then absorb the rounding leftovers so that the
    sequential sum of the coordinates equals delta exactly.

    Exactness is guaranteed with respect to left-to-right summation; tree
    reorderings (e.g. np.sum's pairwise blocks for long arrays) may differ
    in the last ulp.
    """
    p = phi.shape[0]
    phi = phi + (delta - _fold(phi)) / p
    delta = float(delta)
    if p == 1:
        phi[0] = delta
        return phi
    for _ in range(64):
        prefix = _fold(phi[: p - 1])
        t = delta - prefix
        for _ in range(128):
            total = prefix + t
            if total == delta:
                phi[p - 1] = t
                return phi
            t = math.nextafter(t, math.inf if total < delta else -math.inf)
        # the reachable grid missed delta; move the prefix one ulp and retry
        phi[p - 2] = math.nextafter(phi[p - 2], math.inf)
    phi[p - 1] = delta - _fold(phi[: p - 1])  # best effort
    return phi


def shapley_sample(game: SwapGame, samples: int, seed: int = 0) -> np.ndarray:
    """Monte Carlo permutation estimate with exact efficiency closure.

    Averages marginal contributions along ``samples`` uniform random
    feature permutations, then shifts all coordinates equally so they sum
    to v(all) - v(empty) exactly.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    p = game.n_features
    rng = np.random.default_rng(seed)
    full_mask = (1 << p) - 1
    acc = np.zeros(p)
    for _ in range(samples):
        order = rng.permutation(p)
        masks = [0]
        m = 0
        for j in order:
            m |= 1 << int(j)
            masks.append(m)
        v = game.values(masks)
        acc[order] += np.diff(v)
    phi = acc / samples
    delta = game.value(full_mask) - game.value(0)
    return _close_efficiency(phi, delta)


@dataclass(frozen=True)
class AttributionParams:
    target: int
    scale: str = PROBABILITY
    samples: int = 2000
    seed: int = 0
    exact_limit: int = EXACT_LIMIT


def attribute_all(
    model: ModelSpec,
    matching: Matching,
    f: EncodedMatrix,
    c: EncodedMatrix,
    policy: str,
    params: AttributionParams,
) -> list[AttributionTable]:
    """One attribution table per matched pair.

    Pairs are independent; sampled runs derive a per-pair seed as
    ``seed XOR pair index`` so results do not depend on evaluation order.
    """
    if policy not in (EXACT, SAMPLED):
        raise ValidationError(f"unknown attribution policy {policy!r}")
    groups = model.preprocess.groups
    tables: list[AttributionTable] = []
    for k, (i, j) in enumerate(matching.pairs):
        if not (0 <= i < f.n_rows and 0 <= j < c.n_rows):
            raise ValidationError(f"pair {k} ({i},{j}) out of range")
        game = SwapGame(
            model, f.values[i], c.values[j], groups, params.target, params.scale
        )
        if policy == EXACT:
            phi = shapley_exact(game, params.exact_limit)
            samples, seed = 0, None
        else:
            seed = params.seed ^ k
            phi = shapley_sample(game, params.samples, seed)
            samples = params.samples
        tables.append(
            AttributionTable(
                pair_index=k,
                factual_index=i,
                cf_index=j,
                phi=phi,
                baseline=game.value(0),
                full=game.value((1 << game.n_features) - 1),
                method=policy,
                target=params.target,
                samples=samples,
                seed=seed,
            )
        )
    return tables
