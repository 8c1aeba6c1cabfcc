"""Sparsify counterfactual explanations for tabular classifiers.

Pipeline: match factuals to counterfactuals, attribute the prediction
change to original-level features with Shapley values, then compose
refined counterfactuals that change as few features as possible while
staying valid, optionally under an edit budget.
"""

from .attribution import (
    AttributionParams,
    AttributionTable,
    SwapGame,
    attribute_all,
    hybrid,
    shapley_exact,
    shapley_sample,
)
from .compose import (
    Action,
    RefinementResult,
    compose_budget,
    compose_sparsest_valid,
    exhaustive_sparsest,
    rank_actions,
)
from .errors import ValidationError
from .generators import (
    GenerationResult,
    GeneratorParams,
    ImportResult,
    diverse_generate,
    import_external,
    wachter_generate,
)
from .matching import (
    Matching,
    cost_matrix,
    match_index,
    match_nearest,
    match_ot,
)
from .model import (
    ModelSpec,
    gradient_score,
    gradient_scores,
    load_model,
    model_to_dict,
    predict_label,
    predict_proba,
    save_model,
    score_batch,
)
from .report import (
    Report,
    RowRecord,
    load_report,
    report_to_json,
    sparsity_report,
    write_report,
)
from .schema import (
    ChangeMask,
    EncodedMatrix,
    Feature,
    FeatureSchema,
    InstanceSet,
    LabelSpec,
    PreprocessSpec,
    decode,
    diff_features,
    encode,
    fit_preprocess,
    load_schema,
    load_table,
    write_table,
)
from .viz import compare_policies, emit_heatmap_svg

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AttributionParams",
    "AttributionTable",
    "ChangeMask",
    "EncodedMatrix",
    "Feature",
    "FeatureSchema",
    "GenerationResult",
    "GeneratorParams",
    "ImportResult",
    "InstanceSet",
    "LabelSpec",
    "Matching",
    "ModelSpec",
    "PreprocessSpec",
    "RefinementResult",
    "Report",
    "RowRecord",
    "SwapGame",
    "ValidationError",
    "attribute_all",
    "compare_policies",
    "compose_budget",
    "compose_sparsest_valid",
    "cost_matrix",
    "decode",
    "diff_features",
    "diverse_generate",
    "emit_heatmap_svg",
    "encode",
    "exhaustive_sparsest",
    "fit_preprocess",
    "gradient_score",
    "gradient_scores",
    "hybrid",
    "import_external",
    "load_model",
    "load_report",
    "load_schema",
    "load_table",
    "match_index",
    "match_nearest",
    "match_ot",
    "model_to_dict",
    "predict_label",
    "predict_proba",
    "rank_actions",
    "report_to_json",
    "save_model",
    "score_batch",
    "shapley_exact",
    "shapley_sample",
    "sparsity_report",
    "wachter_generate",
    "write_report",
    "write_table",
]
