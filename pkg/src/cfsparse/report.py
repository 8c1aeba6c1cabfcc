"""Sparsity/validity reports with canonical, round-trippable JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .compose import FALLBACK_ORIGINAL_CF, RefinementResult
from .errors import ValidationError
from .matching import Matching
from .model import ModelSpec, predict_label
from .schema import InstanceSet, diff_features, encode


@dataclass(frozen=True)
class RowRecord:
    pair: int
    factual: int
    counterfactual: int
    status: str
    changed_before: int
    changed_after: int
    valid_before: bool
    valid_after: bool

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "factual": self.factual,
            "counterfactual": self.counterfactual,
            "status": self.status,
            "changed_before": self.changed_before,
            "changed_after": self.changed_after,
            "valid_before": self.valid_before,
            "valid_after": self.valid_after,
        }


@dataclass(frozen=True)
class Report:
    """Aggregate and per-row outcome of one sparsification run."""

    matcher: str
    attributor: str
    mode: str
    feature_names: tuple[str, ...]
    target: int
    changed_before: int
    changed_after: int
    reduction_pct: float
    validity_before: float
    validity_after: float
    rows: tuple[RowRecord, ...]
    seed: int | None = None
    budget: int | None = None
    runtime_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "policy": {
                "matcher": self.matcher,
                "attributor": self.attributor,
                "mode": self.mode,
            },
            "feature_names": list(self.feature_names),
            "target": self.target,
            "changed_before": self.changed_before,
            "changed_after": self.changed_after,
            "reduction_pct": self.reduction_pct,
            "validity_before": self.validity_before,
            "validity_after": self.validity_after,
            "rows": [r.to_dict() for r in self.rows],
            "seed": self.seed,
            "budget": self.budget,
            "runtime_ms": self.runtime_ms,
        }


def reduction_percentage(changed_before: int, changed_after: int) -> float:
    """100 * (before - after) / before, defined as 0 when before is 0."""
    if changed_before == 0:
        return 0.0
    return 100.0 * (changed_before - changed_after) / changed_before


def sparsity_report(
    factuals: InstanceSet,
    original_cfs: InstanceSet,
    refined: RefinementResult,
    matching: Matching,
    model: ModelSpec,
    attributor: str = "shapley-exact",
    seed: int | None = None,
    runtime_ms: float | None = None,
) -> Report:
    """Measure a refinement run against the original counterfactuals.

    Validity rates come from re-evaluating the model on both sets; nothing
    is trusted from composer flags. Fallback rows contribute their full
    original diff to ``changed_after``, so the report never flatters the
    refinement.
    """
    if refined.refined.n_rows != matching.n_pairs:
        raise ValidationError("refined rows do not align with the matching")
    f_al = factuals.take(matching.factual_indices())
    c_al = original_cfs.take(matching.counterfactual_indices())
    before = diff_features(f_al, c_al)
    after = diff_features(f_al, refined.refined)

    prep = model.preprocess
    target = refined.target
    valid_before = predict_label(model, encode(c_al, prep)) == target
    valid_after = predict_label(model, encode(refined.refined, prep)) == target

    before_counts = before.per_row_counts
    after_counts = after.per_row_counts
    rows = tuple(
        RowRecord(
            pair=k,
            factual=i,
            counterfactual=j,
            status=refined.statuses[k],
            changed_before=int(before_counts[k]),
            changed_after=int(after_counts[k]),
            valid_before=bool(valid_before[k]),
            valid_after=bool(valid_after[k]),
        )
        for k, (i, j) in enumerate(matching.pairs)
    )
    n = matching.n_pairs
    return Report(
        matcher=matching.policy_name,
        attributor=attributor,
        mode=refined.mode,
        feature_names=factuals.schema.feature_names,
        target=target,
        changed_before=before.total,
        changed_after=after.total,
        reduction_pct=reduction_percentage(before.total, after.total),
        validity_before=float(sum(valid_before)) / n,
        validity_after=float(sum(valid_after)) / n,
        rows=rows,
        seed=seed,
        budget=refined.budget,
        runtime_ms=runtime_ms,
    )


def report_to_json(report: Report) -> str:
    """Canonical serialization: stable key order, compact separators."""
    return json.dumps(report.to_dict(), sort_keys=True, separators=(",", ":"))


def report_from_dict(obj: Mapping) -> Report:
    try:
        rows = tuple(
            RowRecord(
                pair=int(r["pair"]),
                factual=int(r["factual"]),
                counterfactual=int(r["counterfactual"]),
                status=str(r["status"]),
                changed_before=int(r["changed_before"]),
                changed_after=int(r["changed_after"]),
                valid_before=bool(r["valid_before"]),
                valid_after=bool(r["valid_after"]),
            )
            for r in obj["rows"]
        )
        return Report(
            matcher=str(obj["policy"]["matcher"]),
            attributor=str(obj["policy"]["attributor"]),
            mode=str(obj["policy"]["mode"]),
            feature_names=tuple(obj["feature_names"]),
            target=int(obj["target"]),
            changed_before=int(obj["changed_before"]),
            changed_after=int(obj["changed_after"]),
            reduction_pct=float(obj["reduction_pct"]),
            validity_before=float(obj["validity_before"]),
            validity_after=float(obj["validity_after"]),
            rows=rows,
            seed=obj.get("seed"),
            budget=obj.get("budget"),
            runtime_ms=obj.get("runtime_ms"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid report JSON: {exc}") from exc


def load_report(path: str | Path) -> Report:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"report file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid report JSON in {path}: {exc}") from exc
    return report_from_dict(obj)


def write_report(report: Report, path: str | Path) -> None:
    Path(path).write_text(report_to_json(report) + "\n", encoding="utf-8")
