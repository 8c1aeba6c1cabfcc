"""Command-line pipeline: generate counterfactuals, sparsify, compare.

Every command is a pure function of its input files, flags and seed;
repeated runs produce byte-identical outputs. Exit codes: 0 success,
2 invalid input or usage, 1 internal error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any, Callable, Mapping

import click
from click.core import ParameterSource

from . import attribution, compose, generators, matching as matching_mod
from .errors import ValidationError
from .model import load_model
from .report import load_report, sparsity_report, write_report
from .schema import (
    diff_features,
    encode,
    load_schema,
    load_table,
    read_csv_rows,
    write_table,
)
from .viz import compare_policies, emit_heatmap_svg

_ATTRIBUTORS = {
    "shapley-exact": attribution.EXACT,
    "shapley-sample": attribution.SAMPLED,
}
_ALLOCATIONS = {
    "global-greedy": compose.GLOBAL_GREEDY,
    "per-pair-cap": compose.PER_PAIR_CAP,
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid config JSON in {p}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"config {p} must be a JSON object")
    return obj


def _merge(ctx: click.Context, config: Mapping[str, Any]) -> dict:
    """Flags override config values; config overrides click defaults."""
    merged = {}
    for name, value in ctx.params.items():
        if name == "config":
            continue
        if ctx.get_parameter_source(name) == ParameterSource.COMMANDLINE:
            merged[name] = value
        elif name in config:
            merged[name] = config[name]
        else:
            merged[name] = value
    return merged


def _require(cfg: Mapping[str, Any], name: str) -> Any:
    if cfg.get(name) is None:
        raise ValidationError(
            f"missing required option --{name.replace('_', '-')}"
        )
    return cfg[name]


def _run(body: Callable[[], None]) -> None:
    try:
        body()
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except click.exceptions.Exit:
        raise
    except Exception as exc:  # noqa: BLE001 - report, then exit 1
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(1)


def _load_pipeline_inputs(cfg: Mapping[str, Any]):
    schema = load_schema(_require(cfg, "schema"))
    model = load_model(_require(cfg, "model"))
    if model.preprocess.schema != schema:
        raise ValidationError(
            "model preprocessing is incompatible with the given schema"
        )
    factuals = load_table(_require(cfg, "data"), schema)
    return schema, model, factuals


@click.group()
def cli() -> None:
    """Sparsify counterfactual explanations for tabular classifiers."""


_global_options = [
    click.option("--seed", type=int, default=0, show_default=True,
                 help="Random seed shared by all stochastic steps."),
    click.option("--threads", type=int, default=None,
                 help="Worker threads (results are identical for any value)."),
    click.option("--config", type=str, default=None,
                 help="JSON config file; explicit flags take precedence."),
]


def _with_global_options(fn):
    for opt in reversed(_global_options):
        fn = opt(fn)
    return fn


@cli.command()
@click.option("--schema", type=str, default=None, help="Schema JSON path.")
@click.option("--data", type=str, default=None, help="Factual CSV path.")
@click.option("--model", type=str, default=None, help="Model JSON path.")
@click.option("--out", type=str, default=None, help="Counterfactual CSV to write.")
@click.option("--generator", type=click.Choice(["wachter", "diverse"]),
              default=None, help="Built-in generator to run.")
@click.option("--target", type=int, default=1, show_default=True,
              help="Desired class index.")
@click.option("--k", type=int, default=1, show_default=True,
              help="Candidates per factual (diverse generator).")
@click.option("--max-iters", type=int, default=1000, show_default=True)
@click.option("--step-size", type=float, default=0.05, show_default=True)
@click.option("--lambda-init", type=float, default=0.1, show_default=True)
@click.option("--lambda-growth", type=float, default=1.1, show_default=True)
@click.option("--distance", type=click.Choice([generators.L1, generators.L2]),
              default=generators.L1, show_default=True)
@click.option("--margin", type=float, default=0.0, show_default=True)
@_with_global_options
@click.pass_context
def generate(ctx: click.Context, **_: Any) -> None:
    """Generate counterfactuals with a built-in generator."""

    def body() -> None:
        cfg = _merge(ctx, _load_config(ctx.params["config"]))
        _, model, factuals = _load_pipeline_inputs(cfg)
        gen_name = _require(cfg, "generator")
        params = generators.GeneratorParams(
            target_class=int(cfg["target"]),
            max_iters=int(cfg["max_iters"]),
            step_size=float(cfg["step_size"]),
            lambda_init=float(cfg["lambda_init"]),
            lambda_growth=float(cfg["lambda_growth"]),
            distance=cfg["distance"],
            k_per_instance=int(cfg["k"]),
            seed=int(cfg["seed"]),
            margin=float(cfg["margin"]),
        )
        if gen_name == "wachter":
            result = generators.wachter_generate(model, factuals, params)
            extra = {"_valid": ["true" if v else "false" for v in result.valid]}
        elif gen_name == "diverse":
            result = generators.diverse_generate(model, factuals, params)
            extra = {
                "_factual_index": [str(i) for i in result.factual_index],
                "_valid": ["true" if v else "false" for v in result.valid],
            }
        else:
            raise ValidationError(f"unknown generator {gen_name!r}")
        write_table(_require(cfg, "out"), result.instances, extra)
        n_valid = sum(result.valid)
        n = len(result.valid)
        click.echo(f"valid={n_valid}/{n} rate={n_valid / n:.4f}")

    _run(body)


@cli.command()
@click.option("--schema", type=str, default=None, help="Schema JSON path.")
@click.option("--data", type=str, default=None, help="Factual CSV path.")
@click.option("--model", type=str, default=None, help="Model JSON path.")
@click.option("--counterfactuals", type=str, default=None,
              help="Counterfactual CSV (aligned, or with _factual_index).")
@click.option("--refined-out", type=str, default=None,
              help="Refined counterfactual CSV to write.")
@click.option("--report-out", type=str, default=None,
              help="Report JSON to write.")
@click.option("--heatmap", type=str, default=None,
              help="Optional before/after change heatmap SVG.")
@click.option("--save-matching", type=str, default=None,
              help="Optional matching JSON dump.")
@click.option("--save-attributions", type=str, default=None,
              help="Optional attribution JSON dump.")
@click.option("--matcher", type=click.Choice(
    [matching_mod.INDEX, matching_mod.NEAREST, matching_mod.OT]),
    default=matching_mod.INDEX, show_default=True)
@click.option("--attributor", type=click.Choice(sorted(_ATTRIBUTORS)),
              default="shapley-exact", show_default=True)
@click.option("--samples", type=int, default=2000, show_default=True,
              help="Permutations for shapley-sample.")
@click.option("--mode", type=click.Choice(["sparsest-valid", "budget"]),
              default="sparsest-valid", show_default=True)
@click.option("--budget", type=int, default=None,
              help="Total edit budget (mode=budget).")
@click.option("--allocation", type=click.Choice(sorted(_ALLOCATIONS)),
              default="global-greedy", show_default=True)
@click.option("--target", type=int, default=1, show_default=True)
@click.option("--score-scale",
              type=click.Choice(["probability", "logit"]),
              default="probability", show_default=True)
@_with_global_options
@click.pass_context
def sparsify(ctx: click.Context, **_: Any) -> None:
    """Match, attribute and compose sparser counterfactuals."""

    def body() -> None:
        cfg = _merge(ctx, _load_config(ctx.params["config"]))
        schema, model, factuals = _load_pipeline_inputs(cfg)
        cf_path = _require(cfg, "counterfactuals")
        header, _rows = read_csv_rows(cf_path)
        pairing = (
            generators.INDEXED if "_factual_index" in header else generators.ALIGNED
        )
        imported = generators.import_external(
            cf_path, schema, pairing, n_factuals=factuals.n_rows
        )
        cfs = imported.instances

        prep = model.preprocess
        f_enc = encode(factuals, prep)
        c_enc = encode(cfs, prep)
        cost = matching_mod.cost_matrix(f_enc, c_enc)
        matcher = cfg["matcher"]
        if matcher == matching_mod.INDEX:
            pairing_index = imported.factual_index
            match = matching_mod.match_index(
                factuals.n_rows, cfs.n_rows, pairing_index, cost=cost
            )
        elif matcher == matching_mod.NEAREST:
            match = matching_mod.match_nearest(cost)
        else:
            match = matching_mod.match_ot(cost)

        params = attribution.AttributionParams(
            target=int(cfg["target"]),
            scale=cfg["score_scale"],
            samples=int(cfg["samples"]),
            seed=int(cfg["seed"]),
        )
        tables = attribution.attribute_all(
            model, match, f_enc, c_enc, _ATTRIBUTORS[cfg["attributor"]], params
        )

        if cfg["mode"] == "budget":
            if cfg.get("budget") is None:
                raise ValidationError("mode=budget requires --budget")
            refined = compose.compose_budget(
                model, match, factuals, cfs, tables,
                int(cfg["budget"]), _ALLOCATIONS[cfg["allocation"]],
            )
        else:
            refined = compose.compose_sparsest_valid(
                model, match, factuals, cfs, tables
            )

        report = sparsity_report(
            factuals, cfs, refined, match, model,
            attributor=cfg["attributor"], seed=int(cfg["seed"]),
            runtime_ms=None,
        )
        write_table(
            _require(cfg, "refined_out"),
            refined.refined,
            {
                "_status": list(refined.statuses),
                "_edits": [str(e) for e in refined.edits],
            },
        )
        write_report(report, _require(cfg, "report_out"))
        if cfg.get("heatmap"):
            f_al = factuals.take(match.factual_indices())
            c_al = cfs.take(match.counterfactual_indices())
            emit_heatmap_svg(
                diff_features(f_al, c_al),
                diff_features(f_al, refined.refined),
                schema,
                cfg["heatmap"],
            )
        if cfg.get("save_matching"):
            match.save(cfg["save_matching"])
        if cfg.get("save_attributions"):
            payload = [t.to_dict(schema.feature_names) for t in tables]
            Path(cfg["save_attributions"]).write_text(
                json.dumps(payload, sort_keys=True, separators=(",", ":"))
                + "\n",
                encoding="utf-8",
            )
        click.echo(
            f"reduction={report.reduction_pct:.2f}% "
            f"validity={report.validity_after:.4f}"
        )

    _run(body)


@cli.command()
@click.argument("reports", nargs=-1, type=str)
@click.option("--out", type=str, default=None, help="Comparison SVG to write.")
@_with_global_options
@click.pass_context
def report(ctx: click.Context, **_: Any) -> None:
    """Render a policy comparison chart from report JSON files."""

    def body() -> None:
        cfg = _merge(ctx, _load_config(ctx.params["config"]))
        paths = cfg["reports"] or tuple(
            _load_config(ctx.params["config"]).get("reports", ())
        )
        if not paths:
            raise ValidationError("at least one report path is required")
        loaded = [load_report(p) for p in paths]
        compare_policies(loaded, _require(cfg, "out"))
        click.echo(f"compared {len(loaded)} report(s)")

    _run(body)


def main() -> None:
    cli(prog_name="cfsparse")


if __name__ == "__main__":
    main()
