"""Seeded multi-dataset generator with controllable dataset bias.

Each dataset ``d`` draws rows as::

    x = offset[d] + scale[d] * (sign(y) * class_effect / 2 + noise)

with ``noise ~ N(0, noise_sigma^2 I)``; the class effect is shared, the
offsets (mean shift) and scales (diagonal covariance distortion) are the
dataset footprint.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DebiasError, LabeledDataset


@dataclass
class GeneratorConfig:
    sizes: list[int]
    class_effect: np.ndarray  # N
    bias_offsets: np.ndarray  # D x N
    bias_scales: np.ndarray  # D x N
    noise_sigma: float
    class_balance: list[float]
    seed: int = 0

    def __post_init__(self):
        self.sizes = [int(m) for m in self.sizes]
        self.class_balance = [float(p) for p in self.class_balance]
        self.class_effect = np.asarray(self.class_effect, dtype=float)
        d, n = self.dataset_count, self.class_effect.size
        self.bias_offsets = np.broadcast_to(np.asarray(self.bias_offsets, dtype=float), (d, n)).copy()
        self.bias_scales = np.broadcast_to(np.asarray(self.bias_scales, dtype=float), (d, n)).copy()
        if d < 1 or n < 1 or any(m < 1 for m in self.sizes):
            raise DebiasError("need at least one dataset, one feature, and one row per dataset")
        if len(self.class_balance) != d:
            raise DebiasError("class_balance needs one entry per dataset")
        if any(not 0.0 <= p <= 1.0 for p in self.class_balance):
            raise DebiasError("class_balance entries must lie in [0, 1]")
        if not self.noise_sigma > 0:
            raise DebiasError("noise_sigma must be positive")
        if np.any(self.bias_scales <= 0):
            raise DebiasError("bias_scales must be positive")
        if not (np.all(np.isfinite(self.class_effect)) and np.all(np.isfinite(self.bias_offsets))
                and np.all(np.isfinite(self.bias_scales))):
            raise DebiasError("generator arrays must be finite")

    @property
    def dataset_count(self) -> int:
        return len(self.sizes)

    @property
    def feature_count(self) -> int:
        return self.class_effect.size

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "feature_count": self.feature_count,
            "class_effect": self.class_effect.tolist(),
            "bias_offsets": self.bias_offsets.tolist(),
            "bias_scales": self.bias_scales.tolist(),
            "noise_sigma": float(self.noise_sigma),
            "class_balance": list(self.class_balance),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        n = d.pop("feature_count", None)
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise DebiasError(f"malformed generator config: {exc}") from exc
        if n is not None and n != cfg.feature_count:
            raise DebiasError("feature_count disagrees with class_effect length")
        return cfg


def generate(config: GeneratorConfig) -> LabeledDataset:
    rng = np.random.default_rng(config.seed)
    xs, ss, ys = [], [], []
    for d, m in enumerate(config.sizes):
        y = (rng.random(m) < config.class_balance[d]).astype(np.int64)
        sign = 2.0 * y - 1.0
        noise = config.noise_sigma * rng.standard_normal((m, config.feature_count))
        x = config.bias_offsets[d] + config.bias_scales[d] * (sign[:, None] * config.class_effect / 2 + noise)
        order = rng.permutation(m)
        xs.append(x[order])
        ys.append(y[order])
        ss.append(np.full(m, d, dtype=np.int64))
    return LabeledDataset(np.vstack(xs), np.concatenate(ss), np.concatenate(ys),
                          config.dataset_count, 2)


def zero_bias_config(sizes=(100, 100, 100), feature_count=10, effect=1.0,
                     noise_sigma=1.0, balance=0.5, seed=0) -> GeneratorConfig:
    """Statistically identical datasets: no offsets, unit scales."""
    d = len(sizes)
    eff = np.zeros(feature_count)
    eff[: max(1, feature_count // 5)] = effect
    return GeneratorConfig(list(sizes), eff, np.zeros((d, feature_count)), np.ones((d, feature_count)),
                           noise_sigma, [balance] * d, seed)


# Committed benchmark.  Features are split into blocks:
#   signal   shared class effect, identical in every dataset
#   bias     dataset offsets that track each dataset's class prevalence, a
#            within-dataset effect of the opposite sign, and per-dataset
#            noise scales
#   rest     pure noise
# Pooled over datasets, the bias block looks positively predictive while
# within every dataset it is negatively predictive (a Simpson's-paradox
# confound).  Effects and offsets are in units of noise_sigma.  Frozen.
BENCHMARK = {
    "sizes": [200, 150, 60, 250],
    "feature_count": 78,
    "noise_sigma": 0.15,
    "class_balance": [0.23, 0.79, 1.0, 0.5],
    "signal_features": 19,
    "signal_effect": 0.26,
    "bias_features": 38,
    "bias_effect": -0.26,
    "bias_offset": 2.84,
    "bias_scales": [2.83, 1.70, 1.00, 0.70],
    "seed": 0,
}


def benchmark_config(params: dict | None = None) -> GeneratorConfig:
    """Build a block-structured config; the bias-block offset of dataset d
    is ``(class_balance[d] - 0.5) * 2 * bias_offset`` noise units."""
    b = dict(BENCHMARK if params is None else params)
    d, n, sig = len(b["sizes"]), b["feature_count"], b["noise_sigma"]
    e0, nb = b["signal_features"], b["bias_features"]
    if e0 + nb > n:
        raise DebiasError("feature blocks exceed feature_count")
    eff = np.zeros(n)
    eff[:e0] = b["signal_effect"] * sig
    eff[e0:e0 + nb] = b["bias_effect"] * sig
    offsets = np.zeros((d, n))
    scales = np.ones((d, n))
    for i, p in enumerate(b["class_balance"]):
        offsets[i, e0:e0 + nb] = (p - 0.5) * 2 * b["bias_offset"] * sig
        scales[i, e0:e0 + nb] = b["bias_scales"][i]
    return GeneratorConfig(list(b["sizes"]), eff, offsets, scales, sig, list(b["class_balance"]), b["seed"])


def default_benchmark_config() -> GeneratorConfig:
    """The repository's canonical benchmark (also committed as
    ``configs/benchmark.json``)."""
    return benchmark_config()
