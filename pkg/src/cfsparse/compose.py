"""Compose refined counterfactuals from ranked attributions.

Refinement only ever *drops* changes: each refined row is the factual with
some subset of the matched counterfactual's differing features copied in,
so it can never touch more features than the original counterfactual did.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .attribution import AttributionTable, hybrid
from .errors import ValidationError
from .matching import Matching
from .model import ModelSpec, predict_label
from .schema import Cell, ChangeMask, InstanceSet, diff_features, encode

REFINED_VALID = "refined_valid"
FALLBACK_ORIGINAL_CF = "fallback_original_cf"
INVALID_PARTIAL = "invalid_partial"
ALREADY_VALID = "already_valid"

SPARSEST_VALID = "sparsest_valid"
BUDGET = "budget"

GLOBAL_GREEDY = "global_greedy"
PER_PAIR_CAP = "per_pair_cap"


@dataclass(frozen=True)
class Action:
    """Copy one original-level feature from the matched counterfactual."""

    pair: int
    feature: int
    phi: float


@dataclass(frozen=True)
class RefinementResult:
    """Refined rows aligned with the matching's pairs, plus bookkeeping.

    ``edits[k]`` counts the actions applied to pair k (for fallback rows
    that is the full diff, since every action was applied before falling
    back). ``total_edits`` follows the strict accounting that excludes
    fallback rows.
    """

    refined: InstanceSet
    statuses: tuple[str, ...]
    edits: tuple[int, ...]
    mode: str
    target: int
    budget: int | None = None
    allocation: str | None = None

    @property
    def total_edits(self) -> int:
        return sum(
            e
            for e, s in zip(self.edits, self.statuses)
            if s != FALLBACK_ORIGINAL_CF
        )

    @property
    def applied_edits(self) -> int:
        """Edits applied across all rows, fallback rows included."""
        return sum(self.edits)


def rank_actions(
    tables: Sequence[AttributionTable], diffs: ChangeMask
) -> list[Action]:
    """All candidate actions, best attribution first.

    Only features that actually differ within their pair become actions;
    ties break by (pair index, feature index) ascending.
    """
    if len(tables) != diffs.mask.shape[0]:
        raise ValidationError("attribution tables do not align with diffs")
    actions = [
        Action(k, j, float(t.phi[j]))
        for k, t in enumerate(tables)
        for j in range(diffs.mask.shape[1])
        if diffs.mask[k, j]
    ]
    actions.sort(key=lambda a: (-a.phi, a.pair, a.feature))
    return actions


def _refine_pair(
    model: ModelSpec,
    groups: tuple[tuple[int, ...], ...],
    f_enc: np.ndarray,
    c_enc: np.ndarray,
    f_row: tuple[Cell, ...],
    c_row: tuple[Cell, ...],
    actions: Sequence[Action],
    target: int,
    cap: int | None,
) -> tuple[tuple[Cell, ...], str, int]:
    """Apply one pair's actions best-first until valid; returns
    (refined row, status, edits applied)."""
    if cap is not None and cap == 0:
        return f_row, INVALID_PARTIAL, 0
    limit = len(actions) if cap is None else min(cap, len(actions))
    if limit > 0:
        states = np.empty((limit, f_enc.shape[0]))
        current = f_enc.copy()
        for t in range(limit):
            cols = list(groups[actions[t].feature])
            current[cols] = c_enc[cols]
            states[t] = current
        labels = predict_label(model, states)
        valid_at = np.flatnonzero(labels == target)
        if valid_at.size:
            k = int(valid_at[0]) + 1
            cells = list(f_row)
            for a in actions[:k]:
                cells[a.feature] = c_row[a.feature]
            return tuple(cells), REFINED_VALID, k
    if limit < len(actions):
        # budget ran out mid-pair: keep the partial state
        cells = list(f_row)
        for a in actions[:limit]:
            cells[a.feature] = c_row[a.feature]
        return tuple(cells), INVALID_PARTIAL, limit
    # every differing feature applied and still invalid; grant the original
    # counterfactual only if it re-validates verbatim (sub-tolerance cells
    # can make it differ from the all-applied state)
    if int(predict_label(model, c_enc[None, :])[0]) == target:
        return tuple(c_row), FALLBACK_ORIGINAL_CF, len(actions)
    cells = list(f_row)
    for a in actions:
        cells[a.feature] = c_row[a.feature]
    return tuple(cells), INVALID_PARTIAL, len(actions)


def _prepare(
    model: ModelSpec,
    matching: Matching,
    factuals: InstanceSet,
    counterfactuals: InstanceSet,
    tables: Sequence[AttributionTable],
):
    if len(tables) != matching.n_pairs:
        raise ValidationError("one attribution table per pair is required")
    prep = model.preprocess
    f_al = factuals.take(matching.factual_indices())
    c_al = counterfactuals.take(matching.counterfactual_indices())
    f_enc = encode(f_al, prep).values
    c_enc = encode(c_al, prep).values
    diffs = diff_features(f_al, c_al)
    ranked = rank_actions(tables, diffs)
    per_pair: list[list[Action]] = [[] for _ in range(matching.n_pairs)]
    for a in ranked:
        per_pair[a.pair].append(a)
    f_labels = predict_label(model, f_enc)
    return prep, f_al, c_al, f_enc, c_enc, per_pair, f_labels


def compose_sparsest_valid(
    model: ModelSpec,
    matching: Matching,
    factuals: InstanceSet,
    counterfactuals: InstanceSet,
    tables: Sequence[AttributionTable],
) -> RefinementResult:
    """Per pair, apply actions in descending attribution order and stop at
    the first valid state."""
    target = _common_target(tables)
    prep, f_al, c_al, f_enc, c_enc, per_pair, f_labels = _prepare(
        model, matching, factuals, counterfactuals, tables
    )
    rows: list[tuple[Cell, ...]] = []
    statuses: list[str] = []
    edits: list[int] = []
    for k in range(matching.n_pairs):
        if int(f_labels[k]) == target:
            rows.append(f_al.rows[k])
            statuses.append(ALREADY_VALID)
            edits.append(0)
            continue
        row, status, e = _refine_pair(
            model, prep.groups, f_enc[k], c_enc[k],
            f_al.rows[k], c_al.rows[k], per_pair[k], target, cap=None,
        )
        rows.append(row)
        statuses.append(status)
        edits.append(e)
    return RefinementResult(
        InstanceSet(prep.schema, tuple(rows)),
        tuple(statuses),
        tuple(edits),
        SPARSEST_VALID,
        target,
    )


def compose_budget(
    model: ModelSpec,
    matching: Matching,
    factuals: InstanceSet,
    counterfactuals: InstanceSet,
    tables: Sequence[AttributionTable],
    q: int,
    allocation: str = GLOBAL_GREEDY,
) -> RefinementResult:
    """Refine under an edit budget.

    ``global_greedy`` shares q edits across all pairs, visiting pairs by
    their best single-action attribution; ``per_pair_cap`` lets every pair
    use at most q edits independently.
    """
    if q < 0:
        raise ValidationError("budget must be >= 0")
    if allocation not in (GLOBAL_GREEDY, PER_PAIR_CAP):
        raise ValidationError(f"unknown allocation {allocation!r}")
    target = _common_target(tables)
    prep, f_al, c_al, f_enc, c_enc, per_pair, f_labels = _prepare(
        model, matching, factuals, counterfactuals, tables
    )
    n = matching.n_pairs
    rows: list[tuple[Cell, ...] | None] = [None] * n
    statuses: list[str] = [""] * n
    edits: list[int] = [0] * n

    pending: list[int] = []
    for k in range(n):
        if int(f_labels[k]) == target:
            rows[k] = f_al.rows[k]
            statuses[k] = ALREADY_VALID
        else:
            pending.append(k)

    if allocation == PER_PAIR_CAP:
        order = pending
    else:
        # visit pairs with the strongest single action first
        def best_phi(k: int) -> float:
            return per_pair[k][0].phi if per_pair[k] else float("-inf")

        order = sorted(pending, key=lambda k: (-best_phi(k), k))

    budget_left = q
    for k in order:
        cap = q if allocation == PER_PAIR_CAP else budget_left
        if allocation == GLOBAL_GREEDY and budget_left == 0:
            rows[k] = f_al.rows[k]
            statuses[k] = INVALID_PARTIAL
            edits[k] = 0
            continue
        row, status, e = _refine_pair(
            model, prep.groups, f_enc[k], c_enc[k],
            f_al.rows[k], c_al.rows[k], per_pair[k], target, cap=cap,
        )
        rows[k] = row
        statuses[k] = status
        edits[k] = e
        if allocation == GLOBAL_GREEDY:
            budget_left -= e
    return RefinementResult(
        InstanceSet(prep.schema, tuple(rows)),  # type: ignore[arg-type]
        tuple(statuses),
        tuple(edits),
        BUDGET,
        target,
        budget=q,
        allocation=allocation,
    )


def _common_target(tables: Sequence[AttributionTable]) -> int:
    if not tables:
        raise ValidationError("no attribution tables given")
    targets = {t.target for t in tables}
    if len(targets) != 1:
        raise ValidationError("attribution tables disagree on the target class")
    return targets.pop()


def exhaustive_sparsest(
    model: ModelSpec,
    x: np.ndarray,
    c: np.ndarray,
    groups: Sequence[Sequence[int]],
    target: int,
) -> tuple[int, ...] | None:
    """Brute-force minimal valid feature subset (test oracle).

    Enumerates subsets by increasing size, lexicographic within a size, and
    returns the first one whose hybrid is classified as the target, or
    None if no subset flips the prediction.
    """
    p = len(groups)
    if p > 12:
        raise ValidationError("exhaustive search is limited to 12 features")
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    for size in range(p + 1):
        subsets = list(combinations(range(p), size))
        states = np.stack([hybrid(x, c, s, groups) for s in subsets])
        labels = predict_label(model, states)
        valid = np.flatnonzero(labels == target)
        if valid.size:
            return subsets[int(valid[0])]
    return None
