"""Portable classifier definitions: prediction, probabilities, gradients.

Two model families are supported, a logistic regression and a relu
feed-forward network, both defined over the encoded feature space and
stored as self-contained JSON (preprocessing embedded) so one artifact
fixes the whole raw-input -> probability map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .schema import EncodedMatrix, PreprocessSpec

LOGISTIC = "logistic"
MLP = "mlp"

RELU = "relu"
IDENTITY = "identity"

PROBABILITY = "probability"
LOGIT = "logit"


@dataclass(frozen=True)
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    act: str

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64).copy()
        b = np.asarray(self.b, dtype=np.float64).copy()
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    preprocess: PreprocessSpec
    threshold: float = 0.5
    weights: np.ndarray | None = None  # logistic only, shape (d,)
    bias: float = 0.0
    layers: tuple[Layer, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in (LOGISTIC, MLP):
            raise ValidationError(f"unknown kind {self.kind!r}")
        if not (0.0 < self.threshold < 1.0):
            raise ValidationError("threshold must lie in (0, 1)")
        d = self.preprocess.width
        n_classes = len(self.preprocess.schema.label.classes)
        if self.kind == LOGISTIC:
            w = np.asarray(self.weights, dtype=np.float64).copy()
            if w.ndim != 1 or w.shape[0] != d:
                raise ValidationError(
                    f"logistic weights must have length {d}, got {w.shape}"
                )
            if n_classes != 2:
                raise ValidationError("logistic models are binary only")
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)
        else:
            if not self.layers:
                raise ValidationError("mlp declares no layers")
            prev = d
            for i, layer in enumerate(self.layers):
                if layer.act not in (RELU, IDENTITY):
                    raise ValidationError(
                        f"layer {i}: unknown activation {layer.act!r}"
                    )
                if layer.w.ndim != 2:
                    raise ValidationError(f"layer {i}: weight must be 2-d")
                out_w, in_w = layer.w.shape
                if in_w != prev:
                    raise ValidationError(
                        f"layer {i} expects input {in_w}, got {prev}"
                    )
                if layer.b.shape != (out_w,):
                    raise ValidationError(
                        f"layer {i}: bias length {layer.b.shape[0]} does not "
                        f"match output width {out_w}"
                    )
                prev = out_w
            if prev not in (1, n_classes):
                raise ValidationError(
                    f"final layer width {prev} must be 1 (binary) or "
                    f"{n_classes} (one logit per class)"
                )

    @property
    def input_width(self) -> int:
        return self.preprocess.width

    @property
    def n_classes(self) -> int:
        return len(self.preprocess.schema.label.classes)

    @property
    def output_width(self) -> int:
        if self.kind == LOGISTIC:
            return 1
        return int(self.layers[-1].w.shape[0])


def load_model(path: str | Path) -> ModelSpec:
    """Read a model JSON file, validating the layer dimension chain."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"model file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid model JSON in {path}: {exc}") from exc
    return model_from_dict(obj)


def model_from_dict(obj: Mapping) -> ModelSpec:
    try:
        kind = obj["kind"]
        prep = PreprocessSpec.from_dict(obj["preprocess"])
        threshold = float(obj.get("threshold", 0.5))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"invalid model spec: {exc}") from exc
    if kind == LOGISTIC:
        try:
            weights = np.asarray(obj["weights"], dtype=np.float64)
            bias = float(obj["bias"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"invalid logistic spec: {exc}") from exc
        return ModelSpec(
            LOGISTIC, prep, threshold, weights=weights, bias=bias
        )
    if kind == MLP:
        try:
            layers = tuple(
                Layer(
                    np.asarray(entry["w"], dtype=np.float64),
                    np.asarray(entry["b"], dtype=np.float64),
                    entry.get("act", RELU),
                )
                for entry in obj["layers"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"invalid mlp spec: {exc}") from exc
        return ModelSpec(MLP, prep, threshold, layers=layers)
    raise ValidationError(f"unknown kind {kind!r}")


def model_to_dict(model: ModelSpec) -> dict:
    out: dict = {
        "kind": model.kind,
        "threshold": model.threshold,
        "preprocess": model.preprocess.to_dict(),
    }
    if model.kind == LOGISTIC:
        assert model.weights is not None
        out["weights"] = model.weights.tolist()
        out["bias"] = model.bias
    else:
        out["layers"] = [
            {"w": layer.w.tolist(), "b": layer.b.tolist(), "act": layer.act}
            for layer in model.layers
        ]
    return out


def save_model(model: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
        + "\n",
        encoding="utf-8",
    )


def _as_matrix(x: EncodedMatrix | np.ndarray) -> np.ndarray:
    if isinstance(x, EncodedMatrix):
        return x.values
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _check_width(model: ModelSpec, x: np.ndarray) -> None:
    if x.shape[1] != model.input_width:
        raise ValidationError(
            f"input width {x.shape[1]} does not match model width "
            f"{model.input_width}"
        )


def _forward(model: ModelSpec, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass returning (logits, pre-activations per layer)."""
    if model.kind == LOGISTIC:
        assert model.weights is not None
        return (x @ model.weights + model.bias)[:, None], []
    pre: list[np.ndarray] = []
    a = x
    for layer in model.layers:
        z = a @ layer.w.T + layer.b
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.act == RELU else z
    return a, pre


def logits(model: ModelSpec, x: EncodedMatrix | np.ndarray) -> np.ndarray:
    """Raw output scores, shape (n, output_width)."""
    arr = _as_matrix(x)
    _check_width(model, arr)
    return _forward(model, arr)[0]


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # stable branch: never exponentiates a large positive argument
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(t: np.ndarray) -> np.ndarray:
    shifted = t - t.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(model: ModelSpec, x: EncodedMatrix | np.ndarray) -> np.ndarray:
    """Class probabilities, shape (n, n_classes); rows sum to 1."""
    t = logits(model, x)
    if model.output_width == 1:
        p1 = _sigmoid(t[:, 0])
        return np.column_stack([1.0 - p1, p1])
    return _softmax(t)


def predict_label(model: ModelSpec, x: EncodedMatrix | np.ndarray) -> np.ndarray:
    """Predicted class indices.

    Binary models use p1 >= threshold (ties to class 1); models with three
    or more classes use argmax with lowest-index tie-break.
    """
    proba = predict_proba(model, x)
    if model.n_classes == 2:
        return (proba[:, 1] >= model.threshold).astype(int)
    return proba.argmax(axis=1).astype(int)


def score_batch(
    model: ModelSpec,
    x: EncodedMatrix | np.ndarray,
    target: int,
    scale: str = PROBABILITY,
) -> np.ndarray:
    """Scalar score per row: target-class probability or target logit.

    On the logit scale, binary models score class 1 as the raw logit and
    class 0 as its negation.
    """
    _check_target(model, target)
    if scale == PROBABILITY:
        return predict_proba(model, x)[:, target]
    if scale != LOGIT:
        raise ValidationError(f"unknown score scale {scale!r}")
    t = logits(model, x)
    if model.output_width == 1:
        return t[:, 0] if target == 1 else -t[:, 0]
    return t[:, target]


def _check_target(model: ModelSpec, target: int) -> None:
    if not (0 <= target < model.n_classes):
        raise ValidationError(
            f"target class {target} out of range for {model.n_classes} classes"
        )


def gradient_scores(
    model: ModelSpec,
    x: EncodedMatrix | np.ndarray,
    target: int,
    scale: str = PROBABILITY,
) -> np.ndarray:
    """d(score)/d(input) per row via reverse-mode accumulation, shape (n, d).

    The relu subgradient at exactly 0 is taken as 0.
    """
    _check_target(model, target)
    if scale not in (PROBABILITY, LOGIT):
        raise ValidationError(f"unknown score scale {scale!r}")
    arr = _as_matrix(x)
    _check_width(model, arr)

    if model.kind == LOGISTIC:
        assert model.weights is not None
        if scale == LOGIT:
            sign = 1.0 if target == 1 else -1.0
            return np.tile(sign * model.weights, (arr.shape[0], 1))
        t = arr @ model.weights + model.bias
        p1 = _sigmoid(t)
        sign = 1.0 if target == 1 else -1.0
        return (sign * p1 * (1.0 - p1))[:, None] * model.weights[None, :]

    t, pre = _forward(model, arr)
    n = arr.shape[0]
    if model.output_width == 1:
        p1 = _sigmoid(t[:, 0])
        sign = 1.0 if target == 1 else -1.0
        if scale == LOGIT:
            dt = np.full((n, 1), sign)
        else:
            dt = (sign * p1 * (1.0 - p1))[:, None]
    else:
        if scale == LOGIT:
            dt = np.zeros((n, model.output_width))
            dt[:, target] = 1.0
        else:
            p = _softmax(t)
            # d p_target / d t_j = p_target * (delta_tj - p_j)
            dt = p[:, target][:, None] * (
                np.eye(model.output_width)[target][None, :] - p
            )
    grad = dt
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if layer.act == RELU:
            grad = grad * (pre[i] > 0)
        grad = grad @ layer.w
    return grad


def gradient_score(
    model: ModelSpec,
    x: np.ndarray,
    target: int,
    scale: str = PROBABILITY,
) -> np.ndarray:
    """Single-row convenience wrapper around :func:`gradient_scores`."""
    return gradient_scores(model, np.asarray(x, dtype=np.float64)[None, :], target, scale)[0]
