"""Mini-batch training with Adam, plus inference helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from gsnorm.features import SampleBatch
from gsnorm.model.network import ModelParams, loss_and_gradients, predict_proba
from gsnorm.rng import stream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.3
    bn_momentum: float = 0.99
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "bn_momentum"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    # mode flag of every validation pass; always "inference"
    val_mode: list[str] = field(default_factory=list)

    def format(self) -> str:
        lines = ["epoch,train_loss,train_accuracy,val_accuracy"]
        for e, (l, a) in enumerate(zip(self.train_loss, self.train_accuracy), 1):
            v = self.val_accuracy[e - 1] if e - 1 < len(self.val_accuracy) else float("nan")
            lines.append(f"{e},{l:.6f},{a:.6f},{v:.6f}")
        return "\n".join(lines) + "\n"


def fit_standardization(params: ModelParams, samples: SampleBatch) -> None:
    """Set per-channel input mean/std from the training samples (x_lstm values)."""
    x = samples.x_lstm.astype(np.float64)  # (N, M, D)
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    params.tensors["input.mean"] = mean.astype(params.dtype)
    params.tensors["input.std"] = np.where(std > 1e-6, std, 1.0).astype(params.dtype)


def accuracy(params: ModelParams, samples: SampleBatch) -> float:
    pred = np.argmax(predict_proba(params, samples), axis=1)
    return float(np.mean(pred == samples.labels))


class Adam:
    def __init__(self, params: ModelParams, config: TrainConfig):
        self.c = config
        self.t = 0
        self.m = {k: np.zeros_like(params.tensors[k]) for k in params.trainable()}
        self.v = {k: np.zeros_like(params.tensors[k]) for k in params.trainable()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        c = self.c
        self.t += 1
        lr = c.learning_rate * np.sqrt(1 - c.beta2**self.t) / (1 - c.beta1**self.t)
        # epsilon scaled so the update equals lr * m_hat / (sqrt(v_hat) + epsilon)
        eps = c.epsilon * np.sqrt(1 - c.beta2**self.t)
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            params.tensors[k] -= (lr * m / (np.sqrt(v) + eps)).astype(params.dtype)


def train(
    params: ModelParams,
    train_samples: SampleBatch,
    val_samples: SampleBatch | None,
    config: TrainConfig = TrainConfig(),
    standardize: bool = True,
) -> tuple[ModelParams, History]:
    """Train a copy of ``params``; the input is left untouched.

    Deterministic for a given seed: batch order and dropout draw from separate
    seeded streams, and the loop is single-threaded.
    """
    if len(train_samples) == 0:
        raise ValueError("empty training set")
    params = params.copy()
    if params.arch.delta and not train_samples.has_delta:
        raise ValueError(f"{params.arch.kind} needs delta but training samples carry none")
    if standardize:
        fit_standardization(params, train_samples)
    opt = Adam(params, config)
    shuffle = stream(config.seed, "shuffle")
    noise = stream(config.seed, "dropout")
    hist = History()
    N = len(train_samples)
    mom = config.bn_momentum
    for epoch in range(config.epochs):
        order = shuffle.permutation(N)
        total_loss = 0.0
        correct = 0
        for s in range(0, N, config.batch_size):
            idx = order[s : s + config.batch_size]
            batch = train_samples.subset(idx)
            loss, grads, cache = loss_and_gradients(params, batch, rng=noise, dropout=config.dropout)
            opt.step(params, grads)
            for bn, (mu, var) in cache["bn_stats"].items():
                P = params.tensors
                P[bn + ".mean"] = (mom * P[bn + ".mean"] + (1 - mom) * mu).astype(params.dtype)
                P[bn + ".var"] = (mom * P[bn + ".var"] + (1 - mom) * var).astype(params.dtype)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(cache["logits"], axis=1) == batch.labels))
        hist.train_loss.append(total_loss / N)
        hist.train_accuracy.append(correct / N)
        if val_samples is not None and len(val_samples):
            hist.val_accuracy.append(accuracy(params, val_samples))
            hist.val_mode.append("inference")
        log.info(
            "epoch %d/%d loss %.4f acc %.4f val %s",
            epoch + 1,
            config.epochs,
            hist.train_loss[-1],
            hist.train_accuracy[-1],
            f"{hist.val_accuracy[-1]:.4f}" if hist.val_accuracy else "-",
        )
    return params, hist

