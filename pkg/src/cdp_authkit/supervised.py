"""Supervised multi-class / binary classification over acquired codes.

A deliberately small network (block-pooled input, one hidden ReLU layer,
K logits) trained by mini-batch SGD on cross-entropy. The output layer is
zero-initialized so training starts from exactly uniform class posteriors.
Also houses the mutual-information lower-bound estimator
I(A; C) >= H(C) - H(C|A) computed from predicted log-probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ParameterError, TrainingError, UndefinedRateError
from .imageio import read_json, write_json
from .nn import Dense, relu
from .rng import rng_for


@dataclass(frozen=True)
class ClassLabel:
    """One class in a K-way problem, with its one-hot encoding."""

    index: int
    n_classes: int
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.index < self.n_classes:
            raise ParameterError("index must lie in [0, n_classes)")

    def one_hot(self) -> np.ndarray:
        vec = np.zeros(self.n_classes, dtype=np.int64)
        vec[self.index] = 1
        return vec


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.05
    hidden: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ParameterError("epochs, batch_size and hidden must be positive")
        if self.lr <= 0:
            raise ParameterError("lr must be positive")


@dataclass
class ClassifierModel:
    hidden_layer: Dense
    output_layer: Dense
    n_classes: int
    class_names: tuple[str, ...]
    config: TrainConfig
    final_loss: float = math.nan
    loss_trace: list = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return int(self.hidden_layer.w.shape[0])


def pool_image(image: np.ndarray, max_side: int = 32) -> np.ndarray:
    """Block-average an image down to at most max_side per dimension."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DataError("pool_image expects a 2-D image")
    side = max(img.shape)
    factor = -(-side // max_side)  # ceil
    if factor <= 1:
        return img.copy()
    pad_h = (-img.shape[0]) % factor
    pad_w = (-img.shape[1]) % factor
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w)), mode="edge")
    h, w = img.shape
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def images_to_features(images: Sequence[np.ndarray], max_side: int = 32) -> np.ndarray:
    """Pool and flatten a batch of images into a fixed-size feature matrix."""
    return np.stack([pool_image(img, max_side).ravel() for img in images])


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _ce_loss_and_grads(hidden: Dense, output: Dense, xb: np.ndarray, yb: np.ndarray) -> float:
    """Mean cross-entropy of one batch; leaves gradients on the two layers.

    Factored out of the training loop so gradient-correctness tests probe the
    exact arithmetic the optimizer consumes.
    """
    h_pre = hidden.forward(xb)
    h = relu(h_pre)
    logits = output.forward(h)
    logp = _log_softmax(logits)
    rows = np.arange(len(yb))
    loss = -float(logp[rows, yb].mean())

    dlogits = np.exp(logp)
    dlogits[rows, yb] -= 1.0
    dlogits /= len(yb)
    output.gw[:] = 0.0
    output.gb[:] = 0.0
    hidden.gw[:] = 0.0
    hidden.gb[:] = 0.0
    dh = output.backward(dlogits)
    hidden.backward(np.where(h_pre > 0, dh, 0.0))
    return loss


def train_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    config: Optional[TrainConfig] = None,
    class_names: Optional[Sequence[str]] = None,
) -> ClassifierModel:
    """Minimize mean cross-entropy by mini-batch SGD. Deterministic in seed.

    Args:
        features: (N, D) float matrix (e.g. from images_to_features).
        labels: (N,) int class indices in [0, n_classes).
        n_classes: K >= 2.
        config: optimizer settings; defaults are desk-scale.
        class_names: optional K names recorded on the model.

    Raises:
        DataError: fewer than 2 examples in some class, or bad shapes.
        TrainingError: loss became non-finite (trace attached).
    """
    cfg = config if config is not None else TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DataError("features must be (N, D) aligned with (N,) labels")
    if n_classes < 2:
        raise ParameterError("need at least two classes")
    if y.min() < 0 or y.max() >= n_classes:
        raise DataError("labels out of range")
    counts = np.bincount(y, minlength=n_classes)
    if counts.min() < 2:
        missing = int(np.argmin(counts))
        raise DataError(f"class {missing} has {counts.min()} examples; need >= 2")
    names = tuple(class_names) if class_names else tuple(str(i) for i in range(n_classes))
    if len(names) != n_classes:
        raise ParameterError("class_names length must equal n_classes")

    n, d = x.shape
    hidden = Dense(rng_for(cfg.seed, "init", "hidden"), d, cfg.hidden)
    # Zero-initialized output layer: training starts at uniform posteriors.
    output = Dense(rng_for(cfg.seed, "init", "output"), cfg.hidden, n_classes, zero_init=True)
    shuffle = rng_for(cfg.seed, "batches")

    trace: list[float] = []
    for _ in range(cfg.epochs):
        order = shuffle.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = _ce_loss_and_grads(hidden, output, x[idx], y[idx])
            epoch_loss += loss * len(idx)
            for layer in (hidden, output):
                layer.w -= cfg.lr * layer.gw
                layer.b -= cfg.lr * layer.gb
        trace.append(epoch_loss / n)
        if not math.isfinite(trace[-1]):
            raise TrainingError("training loss became non-finite", trace=trace)

    return ClassifierModel(
        hidden_layer=hidden,
        output_layer=output,
        n_classes=n_classes,
        class_names=names,
        config=cfg,
        final_loss=trace[-1],
        loss_trace=trace,
    )


def predict(model: ClassifierModel, features: np.ndarray):
    """(class indices, log-probability rows); argmax ties go to the lowest index."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise DataError(f"expected {model.input_dim}-dimensional features")
    h = relu(x @ model.hidden_layer.w + model.hidden_layer.b)
    logits = h @ model.output_layer.w + model.output_layer.b
    logp = _log_softmax(logits)
    return np.argmax(logits, axis=1), logp


@dataclass(frozen=True)
class BinaryRates:
    """Empirical miss / false-acceptance rates for original-vs-rest decisions."""

    p_miss: float  # P{decide not-original | original}
    p_fa: float  # P{decide original | fake}
    n_original: int
    n_fake: int


def binary_rates(
    true_is_original: np.ndarray, decided_original: np.ndarray
) -> BinaryRates:
    """Rates from aligned boolean arrays (hypothesis, decision).

    Raises UndefinedRateError if either hypothesis class is empty.
    """
    truth = np.asarray(true_is_original, dtype=bool)
    decision = np.asarray(decided_original, dtype=bool)
    if truth.shape != decision.shape:
        raise DataError("aligned arrays required")
    n_orig = int(truth.sum())
    n_fake = int((~truth).sum())
    if n_orig == 0:
        raise UndefinedRateError("no genuine probes: P_miss undefined")
    if n_fake == 0:
        raise UndefinedRateError("no fake probes: P_fa undefined")
    p_miss = float((~decision[truth]).mean())
    p_fa = float(decision[~truth].mean())
    return BinaryRates(p_miss=p_miss, p_fa=p_fa, n_original=n_orig, n_fake=n_fake)


@dataclass(frozen=True)
class MiEstimate:
    """Plug-in lower bound on I(A; C) in nats.

    h_c_given_a is +inf (and lower_bound -inf) when some true label received
    probability exactly zero; the infinity is the flag, nothing is clipped.
    """

    h_c: float
    h_c_given_a: float
    lower_bound: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.lower_bound)


def estimate_mi_lower_bound(labels: np.ndarray, logprobs: np.ndarray) -> MiEstimate:
    """I(A; C) >= H(C) - H(C|A) from true labels and predicted log-probs.

    Args:
        labels: (N,) true class indices.
        logprobs: (N, K) log of predicted class probabilities.
    """
    y = np.asarray(labels, dtype=np.int64)
    lp = np.atleast_2d(np.asarray(logprobs, dtype=np.float64))
    if y.ndim != 1 or lp.shape[0] != y.shape[0]:
        raise DataError("labels and log-probability rows must align")
    if y.min() < 0 or y.max() >= lp.shape[1]:
        raise DataError("labels out of range")
    freq = np.bincount(y, minlength=lp.shape[1]) / y.size
    nonzero = freq > 0
    h_c = float(-(freq[nonzero] * np.log(freq[nonzero])).sum())
    picked = lp[np.arange(y.size), y]
    if np.any(np.isneginf(picked)):
        return MiEstimate(h_c=h_c, h_c_given_a=math.inf, lower_bound=-math.inf)
    h_c_given_a = float(-picked.mean())
    return MiEstimate(h_c=h_c, h_c_given_a=h_c_given_a, lower_bound=h_c - h_c_given_a)


def save_classifier(model: ClassifierModel, path: str | Path) -> None:
    write_json(
        path,
        {
            "kind": "classifier",
            "w1": model.hidden_layer.w.tolist(),
            "b1": model.hidden_layer.b.tolist(),
            "w2": model.output_layer.w.tolist(),
            "b2": model.output_layer.b.tolist(),
            "n_classes": model.n_classes,
            "class_names": list(model.class_names),
            "config": {
                "epochs": model.config.epochs,
                "batch_size": model.config.batch_size,
                "lr": model.config.lr,
                "hidden": model.config.hidden,
                "seed": model.config.seed,
            },
            "final_loss": model.final_loss,
            "loss_trace": list(model.loss_trace),
        },
    )


def load_classifier(path: str | Path) -> ClassifierModel:
    obj = read_json(path)
    if obj.get("kind") != "classifier":
        raise DataError("not a classifier model file")
    cfg = TrainConfig(**obj["config"])
    w1 = np.asarray(obj["w1"], dtype=np.float64)
    w2 = np.asarray(obj["w2"], dtype=np.float64)
    hidden = Dense(rng_for(0, "unused"), w1.shape[0], w1.shape[1])
    hidden.w = w1
    hidden.b = np.asarray(obj["b1"], dtype=np.float64)
    output = Dense(rng_for(0, "unused"), w2.shape[0], w2.shape[1], zero_init=True)
    output.w = w2
    output.b = np.asarray(obj["b2"], dtype=np.float64)
    return ClassifierModel(
        hidden_layer=hidden,
        output_layer=output,
        n_classes=int(obj["n_classes"]),
        class_names=tuple(obj["class_names"]),
        config=cfg,
        final_loss=float(obj["final_loss"]),
        loss_trace=list(obj["loss_trace"]),
    )
