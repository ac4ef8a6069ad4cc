"""Minibatch training loop, evaluation and metrics CSV output."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ContractError
from .layers import ACTIVATIONS, softmax
from .model import Model, ModelConfig, backward, build_model, forward
from .optim import sgd_momentum_step, softmax_cross_entropy
from .shapegen import NUM_CLASSES, LabeledDataset
from .tensor import make_rng

log = logging.getLogger(__name__)

EVAL_BATCH = 256
_SHUFFLE_KEY = 1


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.001
    momentum: float = 0.9
    batch_size: int = 4
    seed: int = 1
    activation: str = "relu"

    def validate(self, n_train: int) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        # lr = 0 is permitted: it must leave the initial weights untouched
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 1 <= self.batch_size <= max(n_train, 1):
            raise ConfigError(f"batch_size must be in [1, {n_train}], got {self.batch_size}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


class EpochMetrics(NamedTuple):
    epoch: int
    split: str
    mean_loss: float
    accuracy: float


def to_batch(images: np.ndarray) -> np.ndarray:
    """uint8 ``[N, 28, 28]`` -> float64 ``[N, 1, 28, 28]`` in [0, 1]."""
    return images.astype(np.float64)[:, None, :, :] / 255.0


def evaluate(model: Model, dataset: LabeledDataset):
    """Returns ``(mean_loss, accuracy, confusion)`` with confusion rows indexed by true class."""
    k = model.config.num_classes
    if len(dataset) and int(dataset.labels.max()) >= k:
        raise ContractError(f"labels go up to {int(dataset.labels.max())} but the model has {k} classes")
    confusion = np.zeros((k, k), dtype=np.int64)
    loss_sum = 0.0
    for s in range(0, len(dataset), EVAL_BATCH):
        labels = dataset.labels[s:s + EVAL_BATCH].astype(np.int64)
        logits, _ = forward(model, to_batch(dataset.images[s:s + EVAL_BATCH]))
        loss_sum += softmax_cross_entropy(logits, labels).mean_loss * len(labels)
        np.add.at(confusion, (labels, np.argmax(logits, axis=1)), 1)
    n = max(len(dataset), 1)
    return loss_sum / n, int(np.trace(confusion)) / n, confusion


def train(config: TrainConfig, train_set: LabeledDataset, test_set: LabeledDataset | None = None):
    """Train a fresh LeNet-5; returns ``(model, metrics)``.

    Each epoch visits the training set in an order drawn from a generator keyed
    on ``(seed, epoch)``, then records train (and test, if given) metrics from a
    full evaluation pass.
    """
    config.validate(len(train_set))
    model = build_model(ModelConfig(config.activation, NUM_CLASSES, config.seed))
    x_all = to_batch(train_set.images)
    y_all = train_set.labels.astype(np.int64)
    metrics = []
    for epoch in range(1, config.epochs + 1):
        order = make_rng(config.seed, _SHUFFLE_KEY, epoch).permutation(len(train_set))
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            logits, tape = forward(model, x_all[idx])
            loss = softmax_cross_entropy(logits, y_all[idx])
            grads = backward(model, tape, loss.grad_logits)
            for p, g, v in zip(model.parameters(), grads, model.velocities):
                sgd_momentum_step(p, g, v, config.lr, config.momentum)
            model.mark_updated()
        splits = [("train", train_set)] + ([("test", test_set)] if test_set is not None else [])
        for name, ds in splits:
            loss_val, acc, _ = evaluate(model, ds)
            metrics.append(EpochMetrics(epoch, name, loss_val, acc))
            log.info("epoch %d %s loss %.6f acc %.4f", epoch, name, loss_val, acc)
    return model, metrics


def metrics_csv(metrics) -> str:
    lines = ["epoch,split,mean_loss,accuracy"]
    lines += [f"{m.epoch},{m.split},{m.mean_loss:.6f},{m.accuracy:.6f}" for m in metrics]
    return "\n".join(lines) + "\n"


def probabilities(model: Model, images: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, to_batch(images))
    return softmax(logits)
