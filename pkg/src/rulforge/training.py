"""Mini-batch training loop with validation-driven scheduling.

One epoch shuffles the training windows, walks them in batches (the
trailing partial batch is kept), and applies one Adam update per batch.
After each epoch the validation RMSE drives two counters, both reset by
any strict improvement over the best value seen so far:

* plateau counter: after `lr_decay_patience` consecutive non-improving
  epochs the learning rate is multiplied by `lr_decay_factor` (floored
  at `min_learning_rate`) starting with the next epoch, and the counter
  restarts;
* stopping counter: after `early_stop_patience` consecutive
  non-improving epochs training stops.

Epochs are numbered from 1. Parameters are checkpointed whenever the
validation loss improves, and the returned model is the best-epoch
checkpoint, not the last state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError
from .network import NetworkSpec, ParamSet, adam_step, loss_and_grads, predict


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    learning_rate: float
    l1: float = 0.0
    l2: float = 0.0
    max_epochs: int = 100
    early_stop_patience: int = 8
    lr_decay_patience: int = 3
    lr_decay_factor: float = 0.1
    min_learning_rate: float = 1e-7

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 1 or self.lr_decay_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < self.lr_decay_factor < 1.0:
            raise ValueError(f"lr_decay_factor must lie in (0, 1), got {self.lr_decay_factor}")


@dataclass(frozen=True)
class EpochDecision:
    """What the controller decided after seeing one validation loss."""

    epoch: int
    improved: bool
    decayed: bool
    stop: bool
    lr_next: float


class EpochController:
    """Early-stopping and learning-rate bookkeeping, one epoch at a time.

    Pure state machine over validation losses, so schedule behavior can
    be exercised with injected sequences instead of real training. `lr`
    always holds the rate the next epoch should use.
    """

    def __init__(self, config: TrainConfig):
        self.config = config
        self.lr = config.learning_rate
        self.epoch = 0
        self.best_val = np.inf
        self.best_epoch = 0
        self._stall_stop = 0
        self._stall_lr = 0

    def observe(self, val_loss: float) -> EpochDecision:
        """Record one completed epoch's validation loss."""
        cfg = self.config
        self.epoch += 1
        improved = val_loss < self.best_val
        decayed = False
        if improved:
            self.best_val = val_loss
            self.best_epoch = self.epoch
            self._stall_stop = 0
            self._stall_lr = 0
        else:
            self._stall_stop += 1
            self._stall_lr += 1
            if self._stall_lr >= cfg.lr_decay_patience:
                if self.lr > cfg.min_learning_rate:
                    self.lr = max(self.lr * cfg.lr_decay_factor, cfg.min_learning_rate)
                    decayed = True
                self._stall_lr = 0
        stop = self._stall_stop >= cfg.early_stop_patience
        return EpochDecision(
            epoch=self.epoch, improved=improved, decayed=decayed, stop=stop, lr_next=self.lr
        )


def replay_controller(val_losses, config: TrainConfig) -> list[EpochDecision]:
    """Feed a fixed loss sequence through a fresh controller; stops early."""
    ctl = EpochController(config)
    out = []
    for v in val_losses:
        d = ctl.observe(float(v))
        out.append(d)
        if d.stop:
            break
    return out


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float


@dataclass(frozen=True)
class TrainResult:
    params: ParamSet
    best_epoch: int
    best_val_loss: float
    history: tuple[EpochStats, ...]
    stopped_early: bool
    final_lr: float

    @property
    def epochs_run(self) -> int:
        return len(self.history)


def evaluate_rmse(
    spec: NetworkSpec, params: ParamSet, x: np.ndarray, y: np.ndarray, batch: int = 4096
) -> float:
    """Evaluation-mode RMSE, computed in bounded-memory chunks."""
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot evaluate on an empty set")
    sse = 0.0
    for lo in range(0, n, batch):
        pred = predict(spec, params, x[lo : lo + batch])
        err = pred - y[lo : lo + batch]
        sse += float(err @ err)
    return float(np.sqrt(sse / n))


def train(
    spec: NetworkSpec,
    params: ParamSet,
    train_x: np.ndarray,
    train_y: np.ndarray,
    val_x: np.ndarray,
    val_y: np.ndarray,
    config: TrainConfig,
    seed,
) -> TrainResult:
    """Fit a network; deterministic for a fixed seed.

    The seed drives both the per-epoch shuffle and the dropout masks.
    Raises TrainingError if a loss turns non-finite.
    """
    n = train_x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if val_x.shape[0] == 0:
        raise ValueError("empty validation set; the schedule needs validation losses")
    if train_y.shape[0] != n or val_y.shape[0] != val_x.shape[0]:
        raise ValueError("label arrays disagree with inputs")

    rng = np.random.default_rng(seed)
    ctl = EpochController(config)
    best_params = params
    history: list[EpochStats] = []
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        lr = ctl.lr
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            data_loss, _, grads = loss_and_grads(
                spec, params, train_x[idx], train_y[idx],
                l1=config.l1, l2=config.l2, train=True, rng=rng,
            )
            if not np.isfinite(data_loss):
                raise TrainingError(f"training loss became non-finite ({data_loss})", epoch=epoch)
            params = adam_step(params, grads, lr)
            batch_losses.append(data_loss)
        val_loss = evaluate_rmse(spec, params, val_x, val_y)
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became non-finite ({val_loss})", epoch=epoch)

        decision = ctl.observe(val_loss)
        if decision.improved:
            best_params = params.copy()
        history.append(EpochStats(
            epoch=epoch, lr=lr, train_loss=float(np.mean(batch_losses)), val_loss=val_loss
        ))
        if decision.stop:
            stopped_early = True
            break

    return TrainResult(
        params=best_params,
        best_epoch=ctl.best_epoch,
        best_val_loss=float(ctl.best_val),
        history=tuple(history),
        stopped_early=stopped_early,
        final_lr=ctl.lr,
    )


__all__ = [
    "TrainConfig", "EpochController", "EpochDecision", "EpochStats",
    "TrainResult", "train", "evaluate_rmse", "replay_controller",
]
