"""Prototype latent space: soft assignments, dataset conditionals and losses.

Every function here is a pure function of its arguments.  Data points are
softly assigned to prototypes by a softmax over negative squared Euclidean
distances; the assignment probabilities are both the latent features used by
the class softmax and the quantities whose dataset-conditional entropy is
maximised.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-300


class DebiasError(ValueError):
    """Base class for structured errors raised by this package."""


class DimensionError(DebiasError):
    pass


class NonFiniteError(DebiasError):
    pass


class EmptyGroupError(DebiasError):
    pass


class SingleClassError(DebiasError):
    pass


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with per-row dataset id and class label."""

    features: np.ndarray
    dataset_ids: np.ndarray
    class_labels: np.ndarray
    dataset_count: int
    class_count: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        s = np.asarray(self.dataset_ids)
        y = np.asarray(self.class_labels)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DimensionError(f"features must be a non-empty 2-D matrix, got shape {x.shape}")
        m = x.shape[0]
        if s.shape != (m,) or y.shape != (m,):
            raise DimensionError("dataset_ids and class_labels must have one entry per row")
        if self.dataset_count < 1 or self.class_count < 1:
            raise DimensionError("dataset_count and class_count must be >= 1")
        for name, v, bound in (("dataset_id", s, self.dataset_count), ("class_label", y, self.class_count)):
            if not np.all(np.equal(np.mod(v, 1), 0)):
                raise DimensionError(f"{name}s must be integers")
            bad = np.flatnonzero((v < 0) | (v >= bound))
            if bad.size:
                raise DimensionError(f"row {int(bad[0])}: {name} {v[bad[0]]} outside [0, {bound})")
        _check_finite("features", x)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "dataset_ids", s.astype(np.int64))
        object.__setattr__(self, "class_labels", y.astype(np.int64))

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def present_datasets(self) -> np.ndarray:
        return np.unique(self.dataset_ids)

    def dataset_sizes(self) -> np.ndarray:
        return np.bincount(self.dataset_ids, minlength=self.dataset_count)

    def subset(self, mask) -> "LabeledDataset":
        """Rows selected by a boolean mask or index array; D and C are kept."""
        return LabeledDataset(self.features[mask], self.dataset_ids[mask], self.class_labels[mask],
                              self.dataset_count, self.class_count)

    def select_datasets(self, ids) -> "LabeledDataset":
        return self.subset(np.isin(self.dataset_ids, np.asarray(list(ids))))

    def without_dataset(self, d: int) -> "LabeledDataset":
        return self.subset(self.dataset_ids != d)


@dataclass
class PrototypeModel:
    prototypes: np.ndarray  # K x N
    class_weights: np.ndarray  # C x K
    priors: np.ndarray | None = None

    def __post_init__(self):
        self.prototypes = np.atleast_2d(np.asarray(self.prototypes, dtype=float))
        self.class_weights = np.atleast_2d(np.asarray(self.class_weights, dtype=float))
        if self.prototypes.shape[0] < 1:
            raise DimensionError("need at least one prototype")
        if self.class_weights.shape[1] != self.prototypes.shape[0]:
            raise DimensionError(
                f"class_weights has {self.class_weights.shape[1]} columns but there are "
                f"{self.prototypes.shape[0]} prototypes")
        _check_finite("prototypes", self.prototypes)
        _check_finite("class_weights", self.class_weights)

    @property
    def prototype_count(self) -> int:
        return self.prototypes.shape[0]

    @property
    def feature_count(self) -> int:
        return self.prototypes.shape[1]

    @property
    def class_count(self) -> int:
        return self.class_weights.shape[0]

    def copy(self) -> "PrototypeModel":
        return PrototypeModel(self.prototypes.copy(), self.class_weights.copy(),
                              None if self.priors is None else self.priors.copy())


@dataclass(frozen=True)
class HyperParams:
    """Loss weights, prototype count and optimizer settings."""

    alpha_j: float = 1.0
    alpha_e: float = 1.0
    alpha_l: float = 1.0
    lam: float = 0.01
    prototype_count: int = 2
    step_size: float = 1e-2
    max_iter: int = 2000
    tol: float = 1e-6
    restarts: int = 1
    jitter: float = 0.01
    priors: str = "empirical"

    def __post_init__(self):
        weights = (self.alpha_j, self.alpha_e, self.alpha_l, self.lam)
        if any(not np.isfinite(w) or w < 0 for w in weights):
            raise DebiasError("loss weights must be finite and non-negative")
        if self.prototype_count < 1:
            raise DebiasError("prototype_count must be >= 1")
        if self.step_size <= 0 or self.max_iter < 0 or self.tol < 0 or self.restarts < 1:
            raise DebiasError("invalid optimizer settings")
        if self.priors not in ("empirical", "uniform"):
            raise DebiasError(f"unknown prior mode {self.priors!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "K" in d:
            d["prototype_count"] = d.pop("K")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DebiasError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AssignmentMatrix:
    psi: np.ndarray  # M x K, rows sum to one


@dataclass(frozen=True)
class DatasetConditionals:
    phi: np.ndarray  # D x K, mean assignment per dataset
    conditional: np.ndarray  # D x K, P(s=d | Z=k); columns sum to one
    priors: np.ndarray  # D


@dataclass(frozen=True)
class LossBreakdown:
    entropy_j: float
    reconstruction_e: float
    classification_l: float
    l2_penalty: float
    combined: float

    def to_dict(self) -> dict:
        return {"J": self.entropy_j, "E": self.reconstruction_e, "L": self.classification_l,
                "l2": self.l2_penalty, "combined": self.combined}


def dataset_priors(data: LabeledDataset, mode: str = "empirical") -> np.ndarray:
    """Length-D prior vector; datasets without rows get prior 0."""
    sizes = data.dataset_sizes().astype(float)
    if mode == "empirical":
        return sizes / sizes.sum()
    if mode == "uniform":
        present = (sizes > 0).astype(float)
        return present / present.sum()
    raise DebiasError(f"unknown prior mode {mode!r}")


def compute_assignments(features, prototypes) -> AssignmentMatrix:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    v = np.atleast_2d(np.asarray(prototypes, dtype=float))
    if x.shape[1] != v.shape[1]:
        raise DimensionError(f"features have {x.shape[1]} columns, prototypes {v.shape[1]}")
    _check_finite("features", x)
    _check_finite("prototypes", v)
    return AssignmentMatrix(_softmax_neg_sqdist(x, v))


def _sqdist(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - v[None, :, :]
    return np.einsum("mkn,mkn->mk", diff, diff)


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_neg_sqdist(x, v):
    return _softmax_rows(-_sqdist(x, v))


def compute_dataset_conditionals(psi, dataset_ids, priors) -> DatasetConditionals:
    """Mean assignments per dataset and the Bayes posterior over datasets.

    ``dataset_ids`` must index ``priors`` densely: every id in
    ``[0, len(priors))`` owns at least one row.
    """
    psi = psi.psi if isinstance(psi, AssignmentMatrix) else np.atleast_2d(np.asarray(psi, dtype=float))
    s = np.asarray(dataset_ids, dtype=np.int64)
    pri = np.asarray(priors, dtype=float)
    if s.shape != (psi.shape[0],):
        raise DimensionError("dataset_ids must have one entry per assignment row")
    d_count = pri.shape[0]
    if np.any(s < 0) or np.any(s >= d_count):
        raise DimensionError("dataset id outside the prior vector")
    if np.any(pri <= 0) or abs(pri.sum() - 1.0) > 1e-9:
        raise DebiasError("priors must be strictly positive and sum to one")
    counts = np.bincount(s, minlength=d_count)
    if np.any(counts == 0):
        raise EmptyGroupError(f"dataset {int(np.flatnonzero(counts == 0)[0])} has no rows")
    sums = np.zeros((d_count, psi.shape[1]))
    np.add.at(sums, s, psi)
    phi = sums / counts[:, None]
    joint = phi * pri[:, None]
    denom = joint.sum(axis=0)
    conditional = np.empty_like(joint)
    ok = denom > 0
    conditional[:, ok] = joint[:, ok] / denom[ok]
    conditional[:, ~ok] = pri[:, None]
    return DatasetConditionals(phi, conditional, pri)


def entropy_objective(conditionals) -> float:
    """Summed entropy (nats) of P(s | Z=k) over all prototypes k."""
    p = conditionals.conditional if isinstance(conditionals, DatasetConditionals) else np.asarray(conditionals)
    terms = np.where(p > 0, p * np.log(np.maximum(p, LOG_FLOOR)), 0.0)
    return float(-terms.sum())


def reconstruction_error(features, psi, prototypes) -> float:
    x = np.atleast_2d(np.asarray(features, dtype=float))
    psi = psi.psi if isinstance(psi, AssignmentMatrix) else np.atleast_2d(np.asarray(psi, dtype=float))
    v = np.atleast_2d(np.asarray(prototypes, dtype=float))
    if psi.shape != (x.shape[0], v.shape[0]) or x.shape[1] != v.shape[1]:
        raise DimensionError("inconsistent shapes for reconstruction")
    resid = x - psi @ v
    return float(np.mean(np.sum(resid * resid, axis=1)))


def _log_softmax_rows(u: np.ndarray) -> np.ndarray:
    u = u - u.max(axis=1, keepdims=True)
    return u - np.log(np.exp(u).sum(axis=1, keepdims=True))


def classification_loss(psi, class_labels, class_weights) -> float:
    """Mean negative log-likelihood of the latent class softmax."""
    psi = psi.psi if isinstance(psi, AssignmentMatrix) else np.atleast_2d(np.asarray(psi, dtype=float))
    theta = np.atleast_2d(np.asarray(class_weights, dtype=float))
    y = np.asarray(class_labels, dtype=np.int64)
    if theta.shape[1] != psi.shape[1] or y.shape != (psi.shape[0],):
        raise DimensionError("inconsistent shapes for classification loss")
    if np.any(y < 0) or np.any(y >= theta.shape[0]):
        raise DimensionError("class label outside [0, C)")
    logp = _log_softmax_rows(psi @ theta.T)
    return float(-np.mean(logp[np.arange(y.size), y]))


def dense_dataset_index(dataset_ids, priors) -> tuple[np.ndarray, np.ndarray]:
    """Map ids onto the datasets actually present and restrict the priors."""
    present, dense = np.unique(np.asarray(dataset_ids), return_inverse=True)
    pri = np.asarray(priors, dtype=float)[present]
    if np.any(pri <= 0):
        raise DebiasError("every dataset present in the data needs a positive prior")
    return dense, pri / pri.sum()


def combined_loss(model: PrototypeModel, data: LabeledDataset, hyper: HyperParams,
                  priors=None) -> LossBreakdown:
    if model.feature_count != data.feature_count:
        raise DimensionError(f"model expects {model.feature_count} features, data has {data.feature_count}")
    if model.class_count != data.class_count:
        raise DimensionError(f"model has {model.class_count} classes, data has {data.class_count}")
    if priors is None:
        priors = dataset_priors(data, hyper.priors)
    dense, pri = dense_dataset_index(data.dataset_ids, priors)
    psi = compute_assignments(data.features, model.prototypes)
    j = entropy_objective(compute_dataset_conditionals(psi, dense, pri))
    e = reconstruction_error(data.features, psi, model.prototypes)
    ell = classification_loss(psi, data.class_labels, model.class_weights)
    reg = float(np.sum(model.class_weights ** 2))
    total = -hyper.alpha_j * j + hyper.alpha_e * e + hyper.alpha_l * ell + hyper.lam * reg
    return LossBreakdown(j, e, ell, reg, total)


def predict_class_probabilities(x, model: PrototypeModel) -> np.ndarray:
    """Class probabilities for one row (length-N) or many rows (M x N)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    psi = compute_assignments(np.atleast_2d(arr), model.prototypes).psi
    probs = _softmax_rows(psi @ model.class_weights.T)
    return probs[0] if single else probs


def positive_scores(features, model: PrototypeModel) -> np.ndarray:
    """Probability of class 1, the score used for ROC-AUC."""
    return predict_class_probabilities(np.atleast_2d(features), model)[:, 1]
