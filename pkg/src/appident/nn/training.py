"""Mini-batch training loop with plateau early stopping.

The loop is deterministic for a fixed seed: batch order comes from one
seeded generator and all layer randomness (dropout masks) flows from the
generator bound to the model at build time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 30
    patience: int = 5
    min_improvement: float = 1e-6
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class TrainResult:
    epoch_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_losses)


def train_model(model, inputs: tuple[np.ndarray, ...], labels: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Train any model exposing ``parameters()`` and ``loss_and_backward``.

    ``inputs`` is a tuple of equally sized arrays fed positionally to
    ``model.loss_and_backward(*batch_inputs, batch_labels)``. Stops at
    ``max_epochs`` or when the epoch loss has not improved on its best value
    by at least ``min_improvement`` for ``patience`` consecutive epochs.
    """
    from .optim import Adam

    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    adam = Adam(
        model.parameters(),
        lr=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.epsilon,
    )
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    best = math.inf
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss = model.loss_and_backward(*(arr[batch] for arr in inputs), labels[batch])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            adam.step()
            total += loss * len(batch)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(epoch, epoch_loss)
        result.epoch_losses.append(epoch_loss)
        if best - epoch_loss >= cfg.min_improvement:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                result.stopped_early = True
                break
    if hasattr(model, "calibrate_stats"):
        model.calibrate_stats(*inputs, batch_size=cfg.batch_size)
    return result
