"""Pairing policies between factual and counterfactual instances.

Three policies are shipped: ``index`` (row-aligned or externally indexed),
``nearest`` (row-wise greedy nearest neighbour) and ``ot`` (exact
minimum-cost bijection, i.e. optimal transport between uniform empirical
distributions of equal size).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ValidationError
from .schema import EncodedMatrix

INDEX = "index"
NEAREST = "nearest"
OT = "ot"


@dataclass(frozen=True)
class Matching:
    """Ordered (factual index, counterfactual index) pairs.

    ``nearest`` and ``ot`` cover every factual exactly once (``ot`` is a
    bijection). An externally indexed matching may pair one factual with
    several counterfactuals and leave others uncovered.
    """

    pairs: tuple[tuple[int, int], ...]
    policy_name: str
    total_cost: float | None = None

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def factual_indices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.pairs)

    def counterfactual_indices(self) -> tuple[int, ...]:
        return tuple(j for _, j in self.pairs)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy_name,
            "pairs": [list(p) for p in self.pairs],
            "total_cost": self.total_cost,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
            + "\n",
            encoding="utf-8",
        )


def cost_matrix(f: EncodedMatrix, c: EncodedMatrix) -> np.ndarray:
    """Squared Euclidean distances in encoded space, shape (n, m)."""
    if f.width != c.width:
        raise ValidationError(
            f"encoded widths differ: {f.width} vs {c.width}"
        )
    diff = f.values[:, None, :] - c.values[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _pair_cost(cost: np.ndarray, pairs: Sequence[tuple[int, int]]) -> float:
    return float(sum(cost[i, j] for i, j in pairs))


def match_index(
    n: int,
    m: int,
    external_index: Sequence[int] | None = None,
    cost: np.ndarray | None = None,
) -> Matching:
    """Identity pairing (i, i), or (external_index[j], j) when provided."""
    if external_index is not None:
        idx = [int(v) for v in external_index]
        if len(idx) != m:
            raise ValidationError("external index must cover every counterfactual")
        for j, i in enumerate(idx):
            if not (0 <= i < n):
                raise ValidationError(
                    f"external index {i} at position {j} out of range "
                    f"for {n} factuals"
                )
        pairs = tuple((i, j) for j, i in enumerate(idx))
    else:
        if n != m:
            raise ValidationError(
                f"cannot align {n} factuals with {m} counterfactuals "
                f"without an external index"
            )
        pairs = tuple((i, i) for i in range(n))
    total = _pair_cost(cost, pairs) if cost is not None else None
    return Matching(pairs, INDEX, total)


def match_nearest(cost: np.ndarray) -> Matching:
    """Each factual takes its cheapest counterfactual (repeats allowed)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[1] < 1:
        raise ValidationError("cost matrix must be n x m with m >= 1")
    cols = cost.argmin(axis=1)  # argmin takes the lowest index on ties
    pairs = tuple((i, int(j)) for i, j in enumerate(cols))
    return Matching(pairs, NEAREST, _pair_cost(cost, pairs))


def match_ot(cost: np.ndarray) -> Matching:
    """Exact minimum-total-cost bijection between the two sets.

    Rectangular inputs are padded with dummy rows/columns at cost
    max + 1 and the dummy pairs dropped, so the smaller side is matched
    injectively at exact minimum cost.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValidationError("cost matrix must be a non-empty 2-d array")
    if not np.all(np.isfinite(cost)):
        raise ValidationError("cost matrix contains non-finite entries")
    n, m = cost.shape
    size = max(n, m)
    if n != m:
        padded = np.full((size, size), cost.max() + 1.0)
        padded[:n, :m] = cost
    else:
        padded = cost
    rows, cols = linear_sum_assignment(padded)
    pairs = tuple(
        (int(i), int(j)) for i, j in zip(rows, cols) if i < n and j < m
    )
    return Matching(pairs, OT, _pair_cost(cost, pairs))
