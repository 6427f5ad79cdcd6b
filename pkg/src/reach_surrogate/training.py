"""One-step training objective, temporal split and training bookkeeping."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingDivergence",
    "loss",
    "loss_and_grad",
    "split_train_val",
    "persistence_mse",
]


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        super().__init__(f"non-finite training loss ({value}) in epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    lr: float = 2e-4
    batch_size: int = 16
    smoothness_weight: float = 0.0
    val_fraction: float = 0.2
    weight_decay: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.smoothness_weight < 0:
            raise ValueError("smoothness_weight must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def to_jsonl(self) -> str:
        lines = []
        for i, tl in enumerate(self.train_loss):
            rec = {
                "epoch": i + 1,
                "train_loss": tl,
                "val_loss": self.val_loss[i] if i < len(self.val_loss) else None,
                "seconds": self.epoch_seconds[i] if i < len(self.epoch_seconds) else None,
                "best": i + 1 == self.best_epoch,
            }
            lines.append(json.dumps(rec))
        return "\n".join(lines) + ("\n" if lines else "")


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")
    if pred.ndim != 3:
        raise ValueError(f"expected [B, N, C] arrays, got {pred.shape}")


def loss(pred, target, smoothness_weight: float = 0.0) -> float:
    """MSE plus ``smoothness_weight`` times the mean over (batch, channel) of
    the summed squared first differences along the section axis."""
    _check_pair(pred, target)
    value = float(np.mean((pred - target) ** 2))
    if smoothness_weight:
        d = np.diff(pred, axis=1)
        value += smoothness_weight * float(np.sum(d * d) / (pred.shape[0] * pred.shape[2]))
    return value


def loss_and_grad(pred, target, smoothness_weight: float = 0.0):
    _check_pair(pred, target)
    diff = pred - target
    value = float(np.mean(diff * diff))
    grad = diff * (2.0 / diff.size)
    if smoothness_weight:
        d = np.diff(pred, axis=1)
        scale = smoothness_weight / (pred.shape[0] * pred.shape[2])
        value += scale * float(np.sum(d * d))
        g = 2.0 * scale * d
        grad[:, 1:] += g
        grad[:, :-1] -= g
    return value, grad


def split_train_val(samples, val_fraction: float):
    """Temporal split: the last ``val_fraction`` of ``samples`` become validation.

    Works on anything sliceable (lists, arrays); ``val`` is empty when the
    fraction is zero.
    """
    n_samples = len(samples)
    if n_samples < 2:
        raise ValueError("need at least 2 samples to split")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must lie in [0, 1)")
    n_val = int(round(n_samples * val_fraction))
    if val_fraction > 0 and n_val == 0:
        raise ValueError(f"val_fraction={val_fraction} leaves an empty validation split")
    n_train = n_samples - n_val
    return samples[:n_train], samples[n_train:]


def persistence_mse(X_norm, y_norm) -> float:
    """One-step MSE of predicting the last window (H, Q) as the next hour."""
    return float(np.mean((X_norm[:, -1, :, :2] - y_norm) ** 2))
