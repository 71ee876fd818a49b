import numpy as np
import pytest

from rulforge.errors import TrainingError
from rulforge.network import Dense, Flatten, NetworkSpec, init_params, params_equal, predict
from rulforge.training import (
    EpochController,
    TrainConfig,
    replay_controller,
    train,
)


def linear_spec(n_in=6):
    return NetworkSpec((n_in, 1, 1), (Flatten(), Dense(units=4, activation="tanh"),
                                      Dense(units=1)))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0, learning_rate=1e-3)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=8, learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=8, learning_rate=1e-3, lr_decay_factor=1.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=8, learning_rate=1e-3, early_stop_patience=0)


def test_controller_stop_fixture():
    cfg = TrainConfig(batch_size=8, learning_rate=1e-3)
    decisions = replay_controller([5, 4, 4, 4, 4, 4, 4, 4, 4, 4], cfg)
    assert decisions[-1].epoch == 10 and decisions[-1].stop
    improved = [d.epoch for d in decisions if d.improved]
    assert improved == [1, 2]


def test_controller_decay_fixture():
    lr = 3e-4
    cfg = TrainConfig(batch_size=8, learning_rate=lr)
    decisions = replay_controller([5, 4, 4.1, 4.2, 4.3], cfg)
    # three stalled epochs after the best trigger one decay at epoch 5
    assert [d.decayed for d in decisions] == [False] * 4 + [True]
    assert decisions[-1].lr_next == pytest.approx(0.1 * lr, rel=1e-12)


def test_controller_strict_improvement_resets_both_counters():
    cfg = TrainConfig(batch_size=8, learning_rate=1e-2, early_stop_patience=4,
                      lr_decay_patience=2)
    ctl = EpochController(cfg)
    for v in (5, 4.5, 4.5, 4.5):  # decay fires at epoch 3 (two stalls)
        d = ctl.observe(v)
    assert not d.stop
    d = ctl.observe(4.0)  # equals nothing seen; strict improvement
    assert d.improved and ctl.best_epoch == 5
    d = ctl.observe(4.0)  # ties are not improvements
    assert not d.improved


def test_controller_lr_floor():
    cfg = TrainConfig(batch_size=8, learning_rate=1e-6, lr_decay_patience=1,
                      min_learning_rate=1e-7)
    ctl = EpochController(cfg)
    ctl.observe(1.0)
    for _ in range(5):
        d = ctl.observe(2.0)
    assert d.lr_next == pytest.approx(1e-7)


def toy_problem(rng, n=160):
    # y is a noiseless linear readout: easily learnable
    x = rng.normal(size=(n, 6, 1, 1))
    w = np.array([1.0, -2.0, 0.5, 0.0, 3.0, 1.5])
    y = x[:, :, 0, 0] @ w + 10.0
    return x, y


def test_training_learns_and_restores_best(rng):
    x, y = toy_problem(rng)
    spec = linear_spec()
    cfg = TrainConfig(batch_size=16, learning_rate=3e-3, max_epochs=30)
    res = train(spec, init_params(spec, seed=0), x[:120], y[:120], x[120:], y[120:],
                cfg, seed=7)
    assert res.best_val_loss < res.history[0].val_loss
    assert res.best_epoch == min(
        (s.val_loss, s.epoch) for s in res.history
    )[1]
    # returned params reproduce the recorded best validation loss
    pred = predict(spec, res.params, x[120:])
    got = float(np.sqrt(np.mean((pred - y[120:]) ** 2)))
    assert got == pytest.approx(res.best_val_loss, rel=1e-12)


def test_training_deterministic(rng):
    x, y = toy_problem(rng, n=80)
    spec = linear_spec()
    cfg = TrainConfig(batch_size=16, learning_rate=1e-3, max_epochs=4)
    r1 = train(spec, init_params(spec, seed=1), x[:60], y[:60], x[60:], y[60:], cfg, seed=3)
    r2 = train(spec, init_params(spec, seed=1), x[:60], y[:60], x[60:], y[60:], cfg, seed=3)
    assert params_equal(r1.params, r2.params)
    assert [s.train_loss for s in r1.history] == [s.train_loss for s in r2.history]


def test_training_partial_batch_used(rng):
    x, y = toy_problem(rng, n=70)  # 70 = 4*16 + 6 leftover
    spec = linear_spec()
    cfg = TrainConfig(batch_size=16, learning_rate=1e-3, max_epochs=1)
    res = train(spec, init_params(spec, seed=1), x[:50], y[:50], x[50:], y[50:], cfg, seed=3)
    # 50 samples / batch 16 -> 4 updates including the short one
    assert res.params.t == 4


def test_training_raises_on_nonfinite(rng):
    x, y = toy_problem(rng, n=40)
    x[3, 0, 0, 0] = np.inf
    spec = linear_spec()
    cfg = TrainConfig(batch_size=8, learning_rate=1e-3, max_epochs=2)
    with pytest.raises(TrainingError), np.errstate(invalid="ignore"):
        train(spec, init_params(spec, seed=1), x[:30], y[:30], x[30:], y[30:], cfg, seed=0)


def test_training_early_stop(rng):
    x, y = toy_problem(rng, n=40)
    spec = linear_spec()
    cfg = TrainConfig(batch_size=8, learning_rate=1e-2, max_epochs=50,
                      early_stop_patience=3)
    # validation targets point the opposite way, so fitting the training
    # set makes validation strictly worse and the stopper must fire
    res = train(spec, init_params(spec, seed=1), x, y, x, -y, cfg, seed=0)
    assert res.stopped_early
    assert res.epochs_run == 4  # first epoch improves, then patience runs out
    assert res.best_epoch == 1
