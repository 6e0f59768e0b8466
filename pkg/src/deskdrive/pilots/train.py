"""Mini-batch Adam training for any of the pilot models."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import DataError, NumericError
from ..net import adam_init, adam_update
from ..net.losses import LOSSES
from ..tub import split_dataset


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch: int = 32
    lr: float = 1e-3
    loss: str = "mse"
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be positive")


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    epochs: int
    wall_time_s: float
    seed: int
    hyper: dict = field(default_factory=dict)
    preprocess: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _collate(model, samples):
    xs = model.collate([s[0] for s in samples])
    ys = np.stack([np.atleast_1d(np.asarray(s[1], dtype=float)) for s in samples])
    return xs, ys


def _eval_loss(model, samples, loss_fn, batch: int) -> float:
    total, count = 0.0, 0
    for i in range(0, len(samples), batch):
        xs, ys = _collate(model, samples[i:i + batch])
        pred = model.forward(xs, mode="infer")
        loss, _ = loss_fn(pred, ys)
        total += loss * len(ys)
        count += len(ys)
    return total / count


def train(model, dataset, hyper: TrainConfig = TrainConfig()) -> TrainReport:
    """Train in place; returns per-epoch train and validation losses.

    Fully deterministic under hyper.seed for a fixed dataset order.
    """
    data = list(dataset)
    if not data:
        raise DataError("training dataset is empty")
    if len(data) < 2:
        raise DataError("training needs at least 2 samples for a validation split")
    train_set, val_set = split_dataset(data, hyper.val_fraction, hyper.seed)

    rng = np.random.default_rng(np.random.SeedSequence([hyper.seed & (2 ** 62 - 1), 0x7EA1]))
    state = adam_init(model.params, alpha=hyper.lr)
    loss_fn = LOSSES[hyper.loss]

    t0 = time.perf_counter()
    train_losses, val_losses = [], []
    for _epoch in range(hyper.epochs):
        order = rng.permutation(len(train_set))
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(order), hyper.batch)):
            batch_idx = order[start:start + hyper.batch]
            xs, ys = _collate(model, [train_set[i] for i in batch_idx])
            batch_seed = int(rng.integers(2 ** 62))
            pred = model.forward(xs, mode="train", seed=batch_seed)
            loss, dpred = loss_fn(pred, ys)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at batch {bi}")
            grads, _ = model.backward(dpred)
            model.params, state = adam_update(model.params, grads, state)
            total += loss * len(ys)
            count += len(ys)
        train_losses.append(total / count)
        val_losses.append(_eval_loss(model, val_set, loss_fn, hyper.batch))

    return TrainReport(
        train_loss=train_losses,
        val_loss=val_losses,
        epochs=hyper.epochs,
        wall_time_s=time.perf_counter() - t0,
        seed=hyper.seed,
        hyper={"batch": hyper.batch, "lr": hyper.lr, "loss": hyper.loss,
               "val_fraction": hyper.val_fraction},
    )
