"""Dependency-free SVG output: change heatmaps and policy comparisons.

All geometry is formatted with fixed precision so identical inputs always
produce identical bytes; files are standalone SVG 1.1 with generic font
families only.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .errors import ValidationError
from .report import Report, reduction_percentage
from .schema import ChangeMask, FeatureSchema

CHANGED_FILL = "#d9534f"
UNCHANGED_FILL = "#f4f4f4"
REDUCTION_FILL = "#4878a8"
VALIDITY_FILL = "#6aa84f"

_CELL = 16
_GAP = 40


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _write_svg(path: str | Path, parts: Sequence[str]) -> None:
    try:
        Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from exc


def _grid(
    gid: str, x0: float, y0: float, mask: ChangeMask, title: str
) -> list[str]:
    n, p = mask.mask.shape
    parts = [f'<g id="{gid}">']
    parts.append(
        f'<text x="{_fmt(x0 + p * _CELL / 2)}" y="{_fmt(y0 - 28)}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'font-weight="bold">{escape(title)}</text>'
    )
    for r in range(n):
        for j in range(p):
            fill = CHANGED_FILL if mask.mask[r, j] else UNCHANGED_FILL
            parts.append(
                f'<rect x="{_fmt(x0 + j * _CELL)}" y="{_fmt(y0 + r * _CELL)}" '
                f'width="{_CELL}" height="{_CELL}" fill="{fill}" '
                f'stroke="#999999" stroke-width="0.5"/>'
            )
    parts.append("</g>")
    return parts


def _column_labels(
    x0: float, y0: float, names: Sequence[str]
) -> list[str]:
    parts = []
    for j, name in enumerate(names):
        cx = x0 + j * _CELL + _CELL / 2
        parts.append(
            f'<text x="{_fmt(cx)}" y="{_fmt(y0 - 6)}" text-anchor="start" '
            f'font-family="sans-serif" font-size="9" '
            f'transform="rotate(-45 {_fmt(cx)} {_fmt(y0 - 6)})">'
            f"{escape(name)}</text>"
        )
    return parts


def emit_heatmap_svg(
    mask_before: ChangeMask,
    mask_after: ChangeMask,
    schema: FeatureSchema,
    path: str | Path,
) -> None:
    """Two aligned n x p change grids (before/after refinement).

    Changed cells are filled; a footer states the resulting reduction
    percentage computed from the two masks.
    """
    if mask_before.mask.shape != mask_after.mask.shape:
        raise ValidationError("before/after masks have different shapes")
    n, p = mask_before.mask.shape
    if p != schema.n_features:
        raise ValidationError("mask width does not match the schema")
    pct = reduction_percentage(mask_before.total, mask_after.total)

    margin = 20
    top = 70
    grid_w = p * _CELL
    grid_h = n * _CELL
    width = 2 * grid_w + _GAP + 2 * margin
    height = top + grid_h + 40
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    x_before = margin
    x_after = margin + grid_w + _GAP
    parts += _grid("before-grid", x_before, top, mask_before, "before")
    parts += _grid("after-grid", x_after, top, mask_after, "after")
    parts += _column_labels(x_before, top, schema.feature_names)
    parts += _column_labels(x_after, top, schema.feature_names)
    parts.append(
        f'<text id="footer" x="{_fmt(width / 2)}" y="{_fmt(height - 12)}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="12">'
        f"changed {mask_before.total} &#8594; {mask_after.total} "
        f"(reduction {_fmt(pct)}%)</text>"
    )
    parts.append("</svg>")
    _write_svg(path, parts)


def compare_policies(reports: Sequence[Report], path: str | Path) -> None:
    """Grouped bar chart of reduction_pct and validity_after per report.

    Bars are drawn on a linear 0-100 scale in input order, labeled by the
    policy triple matcher/attributor/mode.
    """
    if not reports:
        raise ValidationError("no reports to compare")
    names = {r.feature_names for r in reports}
    if len(names) != 1:
        raise ValidationError("incompatible reports: feature sets differ")

    bar_w = 28
    group_w = 2 * bar_w + 50
    margin_left = 50
    plot_h = 160.0
    base_y = 200.0
    width = margin_left + group_w * len(reports) + 20
    height = 270
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for tick in (0, 25, 50, 75, 100):
        y = base_y - plot_h * tick / 100.0
        parts.append(
            f'<line x1="{margin_left}" y1="{_fmt(y)}" '
            f'x2="{width - 20}" y2="{_fmt(y)}" stroke="#dddddd" '
            f'stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{margin_left - 6}" y="{_fmt(y + 3)}" '
            f'text-anchor="end" font-family="sans-serif" font-size="9">'
            f"{tick}</text>"
        )
    for k, rep in enumerate(reports):
        x = margin_left + k * group_w + 10
        reduction = rep.reduction_pct
        validity = 100.0 * rep.validity_after
        for value, fill, cls, dx in (
            (reduction, REDUCTION_FILL, "bar-reduction", 0),
            (validity, VALIDITY_FILL, "bar-validity", bar_w + 4),
        ):
            h = plot_h * value / 100.0
            parts.append(
                f'<rect class="{cls}" x="{x + dx}" y="{_fmt(base_y - h)}" '
                f'width="{bar_w}" height="{_fmt(h)}" fill="{fill}"/>'
            )
        label = f"{rep.matcher}/{rep.attributor}/{rep.mode}"
        parts.append(
            f'<text x="{_fmt(x + bar_w + 2)}" y="{_fmt(base_y + 14)}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="8">'
            f"{escape(label)}</text>"
        )
    legend_y = 240
    parts.append(
        f'<rect x="{margin_left}" y="{legend_y}" width="10" height="10" '
        f'fill="{REDUCTION_FILL}"/>'
    )
    parts.append(
        f'<text x="{margin_left + 14}" y="{legend_y + 9}" '
        f'font-family="sans-serif" font-size="10">reduction %</text>'
    )
    parts.append(
        f'<rect x="{margin_left + 110}" y="{legend_y}" width="10" height="10" '
        f'fill="{VALIDITY_FILL}"/>'
    )
    parts.append(
        f'<text x="{margin_left + 124}" y="{legend_y + 9}" '
        f'font-family="sans-serif" font-size="10">validity %</text>'
    )
    parts.append("</svg>")
    _write_svg(path, parts)
