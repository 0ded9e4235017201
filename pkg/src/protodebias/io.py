"""CSV datasets and JSON model / config files."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .baselines import LinearModel, StudyNamingModel, UnbiasedSvmModel
from .core import DebiasError, LabeledDataset, PrototypeModel

SCHEMA_VERSION = 1
MODEL_KINDS = ("prototype", "logistic", "unbiased_svm", "study_namer")


class DataFormatError(DebiasError):
    """Malformed dataset file."""


class ModelFormatError(DebiasError):
    """Malformed or incompatible model file."""


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_csv(data: LabeledDataset) -> str:
    n = data.feature_count
    lines = [",".join(["dataset_id", "label"] + [f"f{i}" for i in range(n)])]
    for s, y, row in zip(data.dataset_ids, data.class_labels, data.features):
        lines.append(",".join([str(int(s)), str(int(y))] + [_fmt(v) for v in row]))
    return "\n".join(lines) + "\n"


def write_csv(data: LabeledDataset, path) -> None:
    Path(path).write_bytes(format_csv(data).encode("utf-8"))


def read_csv(path, dataset_count: int | None = None, class_count: int | None = None) -> LabeledDataset:
    """Parse a ``dataset_id,label,f0,...`` file.

    D and C default to ``max id + 1`` and ``max(2, max label + 1)``.
    """
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[:2] != ["dataset_id", "label"] or len(header) < 3:
        raise DataFormatError(f"{path}: header must start with dataset_id,label followed by features")
    n = len(header) - 2
    if header[2:] != [f"f{i}" for i in range(n)]:
        raise DataFormatError(f"{path}: feature columns must be named f0..f{n - 1}")
    ids, labels, rows = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != n + 2:
            raise DataFormatError(f"{path}: row at line {lineno} has {len(parts)} fields, expected {n + 2}")
        try:
            s, y = int(parts[0]), int(parts[1])
            x = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise DataFormatError(f"{path}: row at line {lineno}: {exc}") from exc
        if s < 0 or y < 0:
            raise DataFormatError(f"{path}: row at line {lineno}: negative dataset id or label")
        if not all(np.isfinite(x)):
            raise DataFormatError(f"{path}: row at line {lineno}: non-finite feature value")
        ids.append(s)
        labels.append(y)
        rows.append(x)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    d = dataset_count if dataset_count is not None else max(ids) + 1
    c = class_count if class_count is not None else max(2, max(labels) + 1)
    try:
        return LabeledDataset(np.array(rows), np.array(ids), np.array(labels), d, c)
    except DebiasError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DebiasError(f"{path}: invalid JSON: {exc}") from exc


def model_to_dict(model, hyperparameters: dict | None = None, seed: int = 0, priors=None) -> dict:
    if isinstance(model, PrototypeModel):
        kind = "prototype"
        dims = {"N": model.feature_count, "K": model.prototype_count, "C": model.class_count}
        params = {"prototypes": model.prototypes.tolist(), "class_weights": model.class_weights.tolist()}
        if priors is None and model.priors is not None:
            priors = model.priors
    elif isinstance(model, LinearModel):
        kind = "logistic"
        dims = {"N": int(model.weights.size)}
        params = {"weights": model.weights.tolist(), "intercept": float(model.intercept)}
    elif isinstance(model, UnbiasedSvmModel):
        kind = "unbiased_svm"
        ds = sorted(model.dataset_deltas)
        dims = {"N": int(model.common_weights.size), "D": len(ds)}
        params = {"common_weights": model.common_weights.tolist(),
                  "common_intercept": float(model.common_intercept),
                  "dataset_ids": ds,
                  "dataset_deltas": [model.dataset_deltas[d].tolist() for d in ds],
                  "dataset_intercepts": [float(model.dataset_intercepts[d]) for d in ds]}
    elif isinstance(model, StudyNamingModel):
        kind = "study_namer"
        dims = {"N": int(model.weights.shape[1]), "D": int(model.weights.shape[0])}
        params = {"weights": model.weights.tolist(), "intercepts": model.intercepts.tolist()}
    else:
        raise ModelFormatError(f"cannot serialise {type(model).__name__}")
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "dimensions": dims,
            "parameters": params, "hyperparameters": hyperparameters or {}, "seed": int(seed),
            "priors": None if priors is None else [float(p) for p in priors]}


def model_from_dict(doc: dict):
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema_version {doc.get('schema_version')!r}")
    kind, p, dims = doc.get("kind"), doc.get("parameters", {}), doc.get("dimensions", {})
    try:
        if kind == "prototype":
            priors = doc.get("priors")
            model = PrototypeModel(np.array(p["prototypes"], dtype=float), np.array(p["class_weights"], dtype=float),
                                   None if priors is None else np.array(priors, dtype=float))
            got = {"N": model.feature_count, "K": model.prototype_count, "C": model.class_count}
        elif kind == "logistic":
            model = LinearModel(np.array(p["weights"], dtype=float), float(p["intercept"]))
            got = {"N": int(model.weights.size)}
        elif kind == "unbiased_svm":
            ds = [int(d) for d in p["dataset_ids"]]
            model = UnbiasedSvmModel(np.array(p["common_weights"], dtype=float), float(p["common_intercept"]),
                                     {d: np.array(w, dtype=float) for d, w in zip(ds, p["dataset_deltas"])},
                                     {d: float(b) for d, b in zip(ds, p["dataset_intercepts"])})
            got = {"N": int(model.common_weights.size), "D": len(ds)}
        elif kind == "study_namer":
            model = StudyNamingModel(np.array(p["weights"], dtype=float), np.array(p["intercepts"], dtype=float))
            got = {"N": int(model.weights.shape[1]), "D": int(model.weights.shape[0])}
        else:
            raise ModelFormatError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed {kind} model: {exc}") from exc
    if got != dims:
        raise ModelFormatError(f"dimensions {dims} do not match parameters {got}")
    return model


def save_model(path, model, hyperparameters=None, seed=0, priors=None) -> None:
    Path(path).write_text(dumps(model_to_dict(model, hyperparameters, seed, priors)), encoding="utf-8")


def load_model(path):
    """Returns ``(model, document)``."""
    doc = read_json(path)
    return model_from_dict(doc), doc
