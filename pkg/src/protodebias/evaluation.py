"""ROC-AUC, leave-one-dataset-out (LODO) evaluation and nested grid search."""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines
from .core import DebiasError, HyperParams, LabeledDataset, SingleClassError, positive_scores
from .optimizer import train as train_prototypes

METHODS = ("debias", "logistic", "unbiased_svm")


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DebiasError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("ROC-AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranked = scores[order]
    # midrank of each run of equal scores
    starts = np.flatnonzero(np.r_[True, ranked[1:] != ranked[:-1]])
    ends = np.r_[starts[1:], ranked.size]
    mid = (starts + ends + 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(mid, ends - starts)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(probabilities, labels, threshold: float = 0.5) -> float:
    return float(np.mean((np.asarray(probabilities) >= threshold) == (np.asarray(labels) == 1)))


def drop_percentage(lodo_auc, ceiling_auc) -> float | None:
    """Relative AUC loss against the within-dataset ceiling, in percent.

    Returns ``None`` when either AUC is missing or the ceiling is not positive.
    """
    if lodo_auc is None or ceiling_auc is None or not ceiling_auc > 0:
        return None
    return 100.0 * (ceiling_auc - lodo_auc) / ceiling_auc


@dataclass
class GridSpec:
    alpha_j: list[float] = field(default_factory=lambda: [1.0])
    alpha_e: list[float] = field(default_factory=lambda: [1.0])
    alpha_l: list[float] = field(default_factory=lambda: [1.0])
    lam: list[float] = field(default_factory=lambda: [0.01])
    prototype_count: list[int] = field(default_factory=lambda: [2])
    logistic_l2: list[float] = field(default_factory=lambda: [0.01])
    svm_c_common: list[float] = field(default_factory=lambda: [1.0])
    svm_c_specific: list[float] = field(default_factory=lambda: [1.0])
    svm_delta_penalty: list[float] = field(default_factory=lambda: [1.0])
    base: HyperParams = field(default_factory=HyperParams)
    ceiling_l2: float = 0.01

    _LISTS = ("alpha_j", "alpha_e", "alpha_l", "lam", "prototype_count", "logistic_l2",
              "svm_c_common", "svm_c_specific", "svm_delta_penalty")

    def __post_init__(self):
        for name in self._LISTS:
            vals = list(getattr(self, name))
            if not vals:
                raise DebiasError(f"grid list {name!r} is empty")
            if any(not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0) for v in vals):
                raise DebiasError(f"grid list {name!r} must hold finite non-negative numbers")
            setattr(self, name, vals)
        if any(int(k) != k or k < 1 for k in self.prototype_count):
            raise DebiasError("prototype_count entries must be positive integers")
        self.prototype_count = [int(k) for k in self.prototype_count]

    def cells(self, method: str) -> list[dict]:
        """All grid cells for ``method`` in canonical tie-break order."""
        if method == "debias":
            raw = [dict(alpha_j=a, alpha_e=e, alpha_l=l, lam=lam, prototype_count=k)
                   for a, e, l, lam, k in itertools.product(self.alpha_j, self.alpha_e, self.alpha_l,
                                                             self.lam, self.prototype_count)]
            key = lambda c: (c["prototype_count"], c["lam"], c["alpha_j"], c["alpha_e"], c["alpha_l"])  # noqa: E731
        elif method == "logistic":
            raw = [dict(l2=v) for v in self.logistic_l2]
            key = lambda c: (c["l2"],)  # noqa: E731
        elif method == "unbiased_svm":
            raw = [dict(c_common=a, c_specific=b, delta_penalty=p)
                   for a, b, p in itertools.product(self.svm_c_common, self.svm_c_specific,
                                                    self.svm_delta_penalty)]
            key = lambda c: (c["c_common"], c["c_specific"], c["delta_penalty"])  # noqa: E731
        else:
            raise DebiasError(f"unknown method {method!r}; expected one of {METHODS}")
        return sorted(raw, key=key)

    def to_dict(self) -> dict:
        out = {name: list(getattr(self, name)) for name in self._LISTS}
        out["base"] = self.base.to_dict()
        out["ceiling_l2"] = self.ceiling_l2
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "K" in d:
            d["prototype_count"] = d.pop("K")
        if "base" in d:
            d["base"] = HyperParams.from_dict(d["base"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DebiasError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**d)


def fit_method(method: str, train: LabeledDataset, cell: dict, base: HyperParams, seed: int):
    if method == "debias":
        model, _ = train_prototypes(train, replace(base, **cell), seed=seed)
        return model
    if method == "logistic":
        return baselines.train_logistic(train, cell["l2"], seed)
    if method == "unbiased_svm":
        return baselines.train_unbiased_svm(train, cell["c_common"], cell["c_specific"],
                                            cell["delta_penalty"], seed)
    raise DebiasError(f"unknown method {method!r}")


def score_method(method: str, model, features) -> tuple[np.ndarray, np.ndarray]:
    """``(ranking scores, positive-class probabilities)``; SVM margins are
    thresholded at 0 by mapping them through a logistic."""
    if method == "debias":
        p = positive_scores(features, model)
        return p, p
    z = model.decision_function(features)
    return z, 0.5 * (1.0 + np.tanh(0.5 * z))


def _has_both_classes(data: LabeledDataset, d: int) -> bool:
    return np.unique(data.class_labels[data.dataset_ids == d]).size == 2


def inner_lodo_score(train: LabeledDataset, method: str, cell: dict, base: HyperParams, seed: int):
    """Mean held-out AUC over inner LODO folds that admit an AUC."""
    aucs = []
    for d in train.present_datasets():
        d = int(d)
        if not _has_both_classes(train, d):
            continue
        rest = train.without_dataset(d)
        if np.unique(rest.class_labels).size < 2:
            continue
        model = fit_method(method, rest, cell, base, seed)
        held = train.subset(train.dataset_ids == d)
        aucs.append(roc_auc(score_method(method, model, held.features)[0], held.class_labels))
    return float(np.mean(aucs)) if aucs else None


def nested_grid_search(train: LabeledDataset, grid: GridSpec, method: str, seed: int = 0,
                       threads: int = 1) -> tuple[dict, float | None]:
    """Pick the grid cell with the best inner-LODO mean AUC.

    Returns ``(cell, inner_score)``.  A singleton grid involves no choice, so
    its cell is returned even when no inner fold admits an AUC (the score is
    then ``None``).
    """
    cells = grid.cells(method)
    if len(cells) == 1 and train.present_datasets().size < 2:
        return cells[0], None

    def run(cell):
        return inner_lodo_score(train, method, cell, grid.base, seed)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            scores = list(pool.map(run, cells))
    else:
        scores = [run(c) for c in cells]
    best, best_score = None, -np.inf
    for cell, sc in zip(cells, scores):
        if sc is not None and sc > best_score:
            best, best_score = cell, sc
    if best is None:
        if len(cells) == 1:
            return cells[0], None
        raise DebiasError("no inner LODO fold admits an AUC; cannot tune hyperparameters")
    return best, float(best_score)


@dataclass
class FoldRecord:
    method: str
    held_out: int
    auc: float | None
    skip_reason: str | None
    accuracy: float
    chosen: dict
    inner_score: float | None
    ceiling_auc: float | None
    drop_pct: float | None

    def to_dict(self) -> dict:
        return {"method": self.method, "held_out": self.held_out, "auc": self.auc,
                "skip_reason": self.skip_reason, "accuracy": self.accuracy, "chosen": self.chosen,
                "inner_score": self.inner_score, "ceiling_auc": self.ceiling_auc,
                "drop_pct": self.drop_pct}


@dataclass
class EvalReport:
    method: str
    seed: int
    records: list[FoldRecord]
    models: dict = field(default_factory=dict, repr=False, compare=False)

    def record(self, held_out: int) -> FoldRecord:
        return next(r for r in self.records if r.held_out == held_out)

    def admissible(self) -> list[FoldRecord]:
        return [r for r in self.records if r.auc is not None]

    def to_dict(self) -> dict:
        return {"method": self.method, "seed": self.seed,
                "records": [r.to_dict() for r in self.records]}

    def to_text(self) -> str:
        header = ("held_out", "auc", "ceiling", "drop_pct", "accuracy", "inner", "chosen")
        rows = [header]
        fmt = lambda v: "-" if v is None else f"{v:.4f}"  # noqa: E731
        for r in self.records:
            auc = fmt(r.auc) if r.auc is not None else f"skip ({r.skip_reason})"
            chosen = " ".join(f"{k}={v:g}" for k, v in r.chosen.items())
            rows.append((str(r.held_out), auc, fmt(r.ceiling_auc),
                         "-" if r.drop_pct is None else f"{r.drop_pct:.2f}",
                         fmt(r.accuracy), fmt(r.inner_score), chosen))
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = [f"method: {self.method}  seed: {self.seed}"]
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
        return "\n".join(lines) + "\n"


def lodo_evaluate(data: LabeledDataset, method: str, grid: GridSpec, seed: int = 0,
                  threads: int = 1, ceiling: dict | None = None) -> EvalReport:
    """Leave each dataset out in turn, tuning on the rest with nested LODO.

    Held-out rows never reach training or tuning for their own fold.  A
    single-class held-out dataset is still trained against and reported, with
    its AUC replaced by a skip marker.
    """
    if method not in METHODS:
        raise DebiasError(f"unknown method {method!r}; expected one of {METHODS}")
    present = data.present_datasets()
    if present.size < 2:
        raise DebiasError("LODO needs at least two datasets")
    if method == "debias" and present.size < 3:
        raise DebiasError("nested LODO for the debias method needs >= 3 datasets; "
                          "with two datasets run `train` with fixed hyperparameters instead")
    if ceiling is None:
        ceiling = baselines.within_dataset_ceiling(data, grid.ceiling_l2, seed)
    records, models = [], {}
    for d in present:
        d = int(d)
        train = data.without_dataset(d)
        held = data.subset(data.dataset_ids == d)
        cell, inner = nested_grid_search(train, grid, method, seed, threads)
        model = fit_method(method, train, cell, grid.base, seed)
        models[d] = model
        ranking, probs = score_method(method, model, held.features)
        auc, reason = None, None
        if _has_both_classes(data, d):
            auc = roc_auc(ranking, held.class_labels)
        else:
            reason = "held-out dataset has a single class"
        ceil = ceiling.get(d)
        ceil_auc = None if ceil is None else ceil.auc
        records.append(FoldRecord(method, d, auc, reason, accuracy(probs, held.class_labels), cell,
                                  inner, ceil_auc, drop_percentage(auc, ceil_auc)))
    return EvalReport(method, seed, records, models)
