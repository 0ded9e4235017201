"""Comparison systems: naive logistic regression, unbiased SVM, study namer,
and the within-dataset ceiling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DebiasError, LabeledDataset, SingleClassError, _log_softmax_rows
from .optimizer import adam_minimize


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    train_loss: float = float("nan")

    def decision_function(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.weights + self.intercept

    def predict_proba(self, x) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.decision_function(x)))


@dataclass
class UnbiasedSvmModel:
    common_weights: np.ndarray
    common_intercept: float
    dataset_deltas: dict[int, np.ndarray]
    dataset_intercepts: dict[int, float]
    objective: float = float("nan")

    def decision_function(self, x) -> np.ndarray:
        """Held-out scoring uses the common weights only."""
        return np.atleast_2d(x) @ self.common_weights + self.common_intercept

    def dataset_decision_function(self, x, d: int) -> np.ndarray:
        w = self.common_weights + self.dataset_deltas[d]
        return np.atleast_2d(x) @ w + self.common_intercept + self.dataset_intercepts[d]


@dataclass
class StudyNamingModel:
    weights: np.ndarray  # D x N
    intercepts: np.ndarray  # D
    train_loss: float = float("nan")

    def predict(self, x) -> np.ndarray:
        return np.argmax(np.atleast_2d(x) @ self.weights.T + self.intercepts, axis=1)


def _require_binary(data: LabeledDataset) -> np.ndarray:
    if data.class_count != 2:
        raise DebiasError("baselines are binary classifiers (C must be 2)")
    y = data.class_labels
    if np.unique(y).size < 2:
        raise SingleClassError("training data contains a single class")
    return y.astype(float)


def train_logistic(train: LabeledDataset, l2: float = 0.01, seed: int = 0,
                   step_size: float = 0.05, max_iter: int = 2000, tol: float = 1e-6) -> LinearModel:
    """Mean binary cross-entropy + l2 * ||w||^2, intercept unpenalised.

    Starts from zeros, so the fit does not depend on ``seed``.
    """
    y = _require_binary(train)
    x = train.features
    m = x.shape[0]

    def fun(params):
        w, b = params
        z = x @ w + b[0]
        # log(1 + exp(-z)) for y=1, log(1 + exp(z)) for y=0
        loss = np.mean(np.logaddexp(0.0, z) - y * z) + l2 * float(w @ w)
        r = (0.5 * (1.0 + np.tanh(0.5 * z)) - y) / m
        return loss, [x.T @ r + 2 * l2 * w, np.array([r.sum()])], None

    (w, b), loss, _ = adam_minimize(fun, [np.zeros(x.shape[1]), np.zeros(1)], step_size, max_iter, tol)
    return LinearModel(w, float(b[0]), float(loss))


def _svm_subgradient(x, y_pm, s_dense, n_sets, c_common, c_specific, delta_penalty,
                     fit_deltas, step_size, max_iter):
    """Subgradient descent on the objective divided by M, returning the
    average of the second half of the iterates.

    Hinge terms take an explicit subgradient step; the quadratic penalties are
    applied implicitly (proximal step), which stays stable for any penalty.
    """
    m, n = x.shape
    w0, b0 = np.zeros(n), 0.0
    delta, bd = np.zeros((n_sets, n)), np.zeros(n_sets)
    aw0, ab0, adelta, abd = np.zeros(n), 0.0, np.zeros((n_sets, n)), np.zeros(n_sets)
    for t in range(max_iter):
        common = x @ w0 + b0
        act_c = (y_pm * common < 1).astype(float) * y_pm
        g_w0 = -c_common * (x.T @ act_c) / m
        g_b0 = -c_common * act_c.sum() / m
        if c_specific:
            specific = common + np.einsum("mn,mn->m", x, delta[s_dense]) + bd[s_dense] if fit_deltas else common
            act_s = (y_pm * specific < 1).astype(float) * y_pm
            g_w0 -= c_specific * (x.T @ act_s) / m
            g_b0 -= c_specific * act_s.sum() / m
        if fit_deltas:
            g_delta = np.zeros_like(delta)
            g_bd = np.zeros(n_sets)
            if c_specific:
                np.add.at(g_delta, s_dense, -c_specific * act_s[:, None] * x / m)
                g_bd = -c_specific * np.bincount(s_dense, weights=act_s, minlength=n_sets) / m
        eta = step_size / np.sqrt(t + 1.0)
        w0 = (w0 - eta * g_w0) / (1.0 + eta / m)
        b0 = b0 - eta * g_b0
        if fit_deltas:
            delta = (delta - eta * g_delta) / (1.0 + eta * delta_penalty / m)
            bd = bd - eta * g_bd
        # running average over the second half of the iterates
        start = max_iter // 2
        if t < start:
            continue
        a = 1.0 / (t - start + 1)
        aw0 += a * (w0 - aw0)
        ab0 += a * (b0 - ab0)
        adelta += a * (delta - adelta)
        abd += a * (bd - abd)
    return aw0, ab0, adelta, abd


def _svm_objective(x, y_pm, s_dense, w0, b0, delta, bd, c_common, c_specific, delta_penalty):
    common = x @ w0 + b0
    specific = common + np.einsum("mn,mn->m", x, delta[s_dense]) + bd[s_dense]
    hinge = lambda z: np.maximum(0.0, 1.0 - y_pm * z).sum()  # noqa: E731
    return float(0.5 * w0 @ w0 + 0.5 * delta_penalty * np.sum(delta ** 2)
                 + c_common * hinge(common) + c_specific * hinge(specific))


def train_unbiased_svm(train: LabeledDataset, c_common: float = 1.0, c_specific: float = 1.0,
                       delta_penalty: float = 1.0, seed: int = 0, step_size: float = 10.0,
                       max_iter: int = 2000, fit_deltas: bool = True) -> UnbiasedSvmModel:
    """Linear SVM with common weights plus per-dataset offsets.

    ``fit_deltas=False`` pins every offset at zero, which is a pooled linear
    SVM with cost ``c_common + c_specific``.
    """
    y = _require_binary(train)
    y_pm = 2.0 * y - 1.0
    present, s_dense = np.unique(train.dataset_ids, return_inverse=True)
    w0, b0, delta, bd = _svm_subgradient(train.features, y_pm, s_dense, present.size, c_common,
                                         c_specific, delta_penalty, fit_deltas, step_size, max_iter)
    obj = _svm_objective(train.features, y_pm, s_dense, w0, b0, delta, bd,
                         c_common, c_specific, delta_penalty)
    return UnbiasedSvmModel(w0, float(b0),
                            {int(d): delta[i] for i, d in enumerate(present)},
                            {int(d): float(bd[i]) for i, d in enumerate(present)}, obj)


def train_pooled_svm(train: LabeledDataset, c: float = 2.0, seed: int = 0, step_size: float = 10.0,
                     max_iter: int = 2000) -> LinearModel:
    """Standard linear SVM on pooled data with the same solver."""
    y = _require_binary(train)
    y_pm = 2.0 * y - 1.0
    s0 = np.zeros(train.size, dtype=np.int64)
    w, b, _, _ = _svm_subgradient(train.features, y_pm, s0, 1, c, 0.0, 0.0, False, step_size, max_iter)
    return LinearModel(w, float(b))


def train_study_namer(train: LabeledDataset, l2: float = 0.01, seed: int = 0, step_size: float = 0.05,
                      max_iter: int = 1000, tol: float = 1e-6) -> StudyNamingModel:
    """Multinomial softmax predicting dataset id; class labels are ignored."""
    x = train.features
    d_count = train.dataset_count
    s = train.dataset_ids
    m = x.shape[0]
    onehot = np.zeros((m, d_count))
    onehot[np.arange(m), s] = 1.0

    def fun(params):
        w, b = params
        logp = _log_softmax_rows(x @ w.T + b)
        loss = -np.mean(logp[np.arange(m), s]) + l2 * float(np.sum(w * w))
        r = (np.exp(logp) - onehot) / m
        return loss, [r.T @ x + 2 * l2 * w, r.sum(axis=0)], None

    (w, b), loss, _ = adam_minimize(fun, [np.zeros((d_count, x.shape[1])), np.zeros(d_count)],
                                    step_size, max_iter, tol)
    return StudyNamingModel(w, b, float(loss))


def stratified_two_fold(keys: np.ndarray, seed: int) -> np.ndarray:
    """Fold assignment (0/1) per row, balanced within every key value."""
    rng = np.random.default_rng(seed)
    fold = np.zeros(keys.size, dtype=np.int64)
    for key in np.unique(keys):
        idx = np.flatnonzero(keys == key)
        idx = idx[rng.permutation(idx.size)]
        fold[idx[1::2]] = 1
    return fold


def study_naming_cv(data: LabeledDataset, l2: float = 0.01, seed: int = 0) -> dict:
    """Two-fold cross-validated study-naming accuracy, stratified by dataset.

    Returns ``{"accuracy", "chance", "fold_accuracies", "confusion"}`` where
    chance is ``1/D`` over the datasets present and ``confusion[true][pred]``
    pools both folds.
    """
    present = data.present_datasets()
    if present.size < 2:
        raise DebiasError("study naming needs at least two datasets")
    sizes = data.dataset_sizes()
    if np.any(sizes[present] < 2):
        raise DebiasError("every dataset needs at least two rows for two-fold CV")
    fold = stratified_two_fold(data.dataset_ids, seed)
    confusion = np.zeros((data.dataset_count, data.dataset_count), dtype=np.int64)
    accs = []
    for f in (0, 1):
        model = train_study_namer(data.subset(fold != f), l2, seed)
        test = data.subset(fold == f)
        pred = model.predict(test.features)
        accs.append(float(np.mean(pred == test.dataset_ids)))
        np.add.at(confusion, (test.dataset_ids, pred), 1)
    return {"accuracy": float(np.mean(accs)), "chance": 1.0 / present.size,
            "fold_accuracies": accs, "confusion": confusion.tolist()}


@dataclass
class CeilingResult:
    dataset_id: int
    auc: float | None
    skip_reason: str | None = None


def within_dataset_ceiling(data: LabeledDataset, l2: float = 0.01, seed: int = 0) -> dict[int, CeilingResult]:
    """Per-dataset two-fold CV AUC of logistic regression, stratified by class."""
    from .evaluation import roc_auc

    out = {}
    for d in data.present_datasets():
        d = int(d)
        part = data.subset(data.dataset_ids == d)
        counts = np.bincount(part.class_labels, minlength=2)
        if np.count_nonzero(counts) < 2:
            out[d] = CeilingResult(d, None, "single class")
            continue
        if counts.min() < 2:
            out[d] = CeilingResult(d, None, "a class has fewer than two rows")
            continue
        fold = stratified_two_fold(part.class_labels, seed + d)
        aucs = []
        for f in (0, 1):
            model = train_logistic(part.subset(fold != f), l2, seed)
            test = part.subset(fold == f)
            aucs.append(roc_auc(model.decision_function(test.features), test.class_labels))
        out[d] = CeilingResult(d, float(np.mean(aucs)))
    return out
