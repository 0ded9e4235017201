"""Analytic gradients of the combined loss and a seeded Adam trainer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    LOG_FLOOR,
    DebiasError,
    DimensionError,
    HyperParams,
    LabeledDataset,
    LossBreakdown,
    NonFiniteError,
    PrototypeModel,
    _log_softmax_rows,
    _softmax_neg_sqdist,
    _softmax_rows,
    dataset_priors,
    dense_dataset_index,
)

log = logging.getLogger(__name__)


@dataclass
class GradientBundle:
    d_prototypes: np.ndarray
    d_class_weights: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.d_prototypes.ravel(), self.d_class_weights.ravel()])

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.d_prototypes ** 2) + np.sum(self.d_class_weights ** 2)))


@dataclass
class TraceRecord:
    iteration: int
    combined: float
    breakdown: LossBreakdown
    grad_norm: float


@dataclass
class TrainingTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate([r.combined for r in self.records])

    def __len__(self):
        return len(self.records)


class DivergenceError(DebiasError):
    """Loss became non-finite during training; carries the trace so far."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


def _require_finite(term: str, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite intermediate in {term}")


def loss_and_gradients(model: PrototypeModel, data: LabeledDataset, hyper: HyperParams,
                       priors=None) -> tuple[LossBreakdown, GradientBundle]:
    x, v, theta = data.features, model.prototypes, model.class_weights
    if v.shape[1] != x.shape[1] or theta.shape[0] != data.class_count:
        raise DimensionError("model and data dimensions disagree")
    if priors is None:
        priors = dataset_priors(data, hyper.priors)
    s, pri = dense_dataset_index(data.dataset_ids, priors)
    m, k = x.shape[0], v.shape[0]

    psi = _softmax_neg_sqdist(x, v)
    g_psi = np.zeros_like(psi)  # dLoss/dpsi with psi treated as free
    d_v = np.zeros_like(v)
    d_theta = 2.0 * hyper.lam * theta

    # entropy of P(s | Z=k)
    counts = np.bincount(s, minlength=pri.size).astype(float)
    sums = np.zeros((pri.size, k))
    np.add.at(sums, s, psi)
    joint = sums / counts[:, None] * pri[:, None]
    denom = joint.sum(axis=0)
    ok = denom > 0
    q = np.where(ok, joint / np.where(ok, denom, 1.0), pri[:, None])
    logq = np.log(np.maximum(q, LOG_FLOOR))
    h = -np.sum(np.where(q > 0, q * logq, 0.0), axis=0)
    j = float(h.sum())
    _require_finite("entropy", q, h)
    if hyper.alpha_j and pri.size > 1:
        # dH_k/dJoint_dk = -(ln q_dk + H_k) / S_k; fallback columns are constant
        d_joint = np.where(ok, -(logq + h) / np.where(ok, denom, 1.0), 0.0)
        d_psi_j = (d_joint * (pri / counts)[:, None])[s]
        g_psi -= hyper.alpha_j * d_psi_j

    # reconstruction
    resid = psi @ v - x
    e = float(np.mean(np.sum(resid * resid, axis=1)))
    _require_finite("reconstruction", resid)
    if hyper.alpha_e:
        g_psi += hyper.alpha_e * (2.0 / m) * (resid @ v.T)
        d_v += hyper.alpha_e * (2.0 / m) * (psi.T @ resid)

    # latent class softmax
    logits = psi @ theta.T
    logp = _log_softmax_rows(logits)
    y = data.class_labels
    ell = float(-np.mean(logp[np.arange(m), y]))
    _require_finite("classification", logp)
    if hyper.alpha_l:
        err = np.exp(logp)
        err[np.arange(m), y] -= 1.0
        err *= hyper.alpha_l / m
        g_psi += err @ theta
        d_theta += err.T @ psi

    # back through the softmax over negative squared distances
    g_a = psi * (g_psi - np.sum(psi * g_psi, axis=1, keepdims=True))
    d_v += 2.0 * (g_a.T @ x - g_a.sum(axis=0)[:, None] * v)

    reg = float(np.sum(theta ** 2))
    total = -hyper.alpha_j * j + hyper.alpha_e * e + hyper.alpha_l * ell + hyper.lam * reg
    _require_finite("gradient", d_v, d_theta)
    return LossBreakdown(j, e, ell, reg, total), GradientBundle(d_v, d_theta)


def finite_difference_check(model: PrototypeModel, data: LabeledDataset, hyper: HyperParams,
                            priors=None, step: float = 1e-5,
                            gradient_fn: Callable | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``gradient_fn`` defaults to :func:`loss_and_gradients`; substituting a
    wrapped version lets callers verify the checker itself.
    """
    if step <= 0:
        raise DebiasError("step must be positive")
    gradient_fn = gradient_fn or loss_and_gradients
    if priors is None:
        priors = dataset_priors(data, hyper.priors)
    _, grads = gradient_fn(model, data, hyper, priors)
    analytic = grads.flat()
    kv = model.prototypes.size
    base = np.concatenate([model.prototypes.ravel(), model.class_weights.ravel()])

    def f(params):
        trial = PrototypeModel(params[:kv].reshape(model.prototypes.shape),
                               params[kv:].reshape(model.class_weights.shape))
        return loss_and_gradients(trial, data, hyper, priors)[0].combined

    worst = 0.0
    for i in range(base.size):
        p = base.copy()
        p[i] = base[i] + step
        up = f(p)
        p[i] = base[i] - step
        down = f(p)
        fd = (up - down) / (2.0 * step)
        a = analytic[i]
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst


def initialize_prototypes(data: LabeledDataset, k: int, seed: int, jitter: float = 0.01) -> np.ndarray:
    """K training rows drawn without replacement (with, if K > M) plus jitter."""
    if k < 1:
        raise DebiasError("K must be >= 1")
    if data.size < 1:
        raise DebiasError("cannot initialise prototypes from an empty dataset")
    rng = np.random.default_rng(seed)
    idx = rng.choice(data.size, size=k, replace=k > data.size)
    sd = data.features.std(axis=0)
    noise = rng.standard_normal((k, data.feature_count))
    return data.features[idx] + jitter * sd * noise


class Adam:
    """Adam update over a list of arrays, modified in place."""

    def __init__(self, step_size=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step_size, self.beta1, self.beta2, self.eps = step_size, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.step_size * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_minimize(fun: Callable, params: list[np.ndarray], step_size: float, max_iter: int,
                  tol: float, on_record: Callable | None = None):
    """Minimise ``fun(params) -> (loss, grads, extra)`` and return the best iterate.

    Returns ``(best_params, best_loss, n_iter)``.  ``on_record`` is called as
    ``on_record(iteration, loss, extra, grad_norm)`` before every update.
    """
    opt = Adam(step_size)
    params = [np.array(p, dtype=float) for p in params]
    best, best_loss = [p.copy() for p in params], np.inf
    it = 0
    for it in range(max_iter + 1):
        loss, grads, extra = fun(params)
        gnorm = float(np.sqrt(sum(np.sum(g * g) for g in grads)))
        if not np.isfinite(loss) or not np.isfinite(gnorm):
            raise DivergenceError(f"loss became non-finite at iteration {it}")
        if on_record is not None:
            on_record(it, loss, extra, gnorm)
        if loss < best_loss:
            best_loss = loss
            best = [p.copy() for p in params]
        if gnorm < tol or it == max_iter:
            break
        opt.update(params, grads)
    return best, best_loss, it


def _train_once(data, hyper, priors, seed):
    v0 = initialize_prototypes(data, hyper.prototype_count, seed, hyper.jitter)
    theta0 = np.zeros((data.class_count, hyper.prototype_count))
    trace = TrainingTrace()

    def fun(params):
        lb, g = loss_and_gradients(PrototypeModel(params[0], params[1]), data, hyper, priors)
        return lb.combined, [g.d_prototypes, g.d_class_weights], lb

    def record(it, loss, lb, gnorm):
        trace.records.append(TraceRecord(it, loss, lb, gnorm))

    try:
        best, _, _ = adam_minimize(fun, [v0, theta0], hyper.step_size, hyper.max_iter, hyper.tol, record)
    except (DivergenceError, NonFiniteError) as exc:
        raise DivergenceError(str(exc), trace) from exc
    return PrototypeModel(best[0], best[1], np.asarray(priors, dtype=float)), trace


def train(data: LabeledDataset, hyper: HyperParams, priors=None, seed: int = 0):
    """Fit prototypes and latent class weights; returns ``(model, trace)``.

    With ``hyper.restarts > 1`` the restart seeds are ``seed, seed+1, ...``
    and the run with the lowest best loss wins.
    """
    if priors is None:
        priors = dataset_priors(data, hyper.priors)
    if len(np.unique(data.dataset_ids)) == 1 and hyper.alpha_j > 0:
        log.warning("single dataset in training data: entropy term is constant 0")
    best = None
    for r in range(hyper.restarts):
        model, trace = _train_once(data, hyper, priors, seed + r)
        score = min(rec.combined for rec in trace.records)
        if best is None or score < best[0]:
            best = (score, model, trace)
    return best[1], best[2]
