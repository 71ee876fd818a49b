"""Shared fixtures: a small fleet and a cheap two-fold pipeline.

The expensive objects (trained fold members) are built once per session
so the stacking, CLI, and serialization tests can share them.
"""

import numpy as np
import pytest

from rulforge.fleet import synthesize_fleet
from rulforge.modelsel import (
    cross_validate_level1,
    cross_validate_level2,
    level1_space,
    level2_space,
    make_fold_plan,
    override_space,
)

TINY_L1_HP = {
    "window_len": 30,
    "batch_size": 64,
    "n_blocks": 2,
    "convs_per_block": 2,
    "l1": 0.0,
    "l2": 0.0,
    "learning_rate": 1e-3,
    "dropout": 0.1,
    "fc_1": 12,
    "dilation": 2,
    "kernel": (3, 3),
    "conv_activation": "tanh",
    "fc_activation": "relu",
}

TINY_L2_HP = {
    "batch_size": 64,
    "n_blocks": 2,
    "convs_per_block": 2,
    "l1": 0.0,
    "l2": 0.0,
    "learning_rate": 1e-3,
    "dropout": 0.1,
    "fc_1": 12,
    "dilation": 1,
    "kernel": (3, 3),
    "conv_activation": "tanh",
    "fc_activation": "relu",
    "fc_2": 16,
    "channels": 2,
    "step": 300,
}

TINY_L1_OVERRIDES = {
    "window_len": [20, 40],
    "fc_1": [8, 16],
    "batch_size": [32, 64],
    "n_blocks": [2, 2],
    "convs_per_block": [2, 2],
}

TINY_L2_OVERRIDES = {
    "fc_1": [8, 16],
    "fc_2": [8, 32],
    "step": [200, 600],
    "batch_size": [32, 64],
    "n_blocks": [2, 2],
    "convs_per_block": [2, 2],
    "channels": [1, 2],
}

FAST_TRAIN = {"max_epochs": 2}


def tiny_l1_space():
    return override_space(level1_space(), TINY_L1_OVERRIDES)


def tiny_l2_space():
    return override_space(level2_space(), TINY_L2_OVERRIDES)


@pytest.fixture(scope="session")
def fleet8():
    return synthesize_fleet(8, seed=5)


@pytest.fixture(scope="session")
def plan2(fleet8):
    return make_fold_plan(fleet8.unit_ids, k=2, val_fraction=0.3, seed=0)


@pytest.fixture(scope="session")
def l1_cv(fleet8, plan2):
    hp = tiny_l1_space().canonicalize(TINY_L1_HP)
    return cross_validate_level1(
        fleet8, hp, plan2, seed=11, n_filters=4, window_stride=29,
        train_overrides=FAST_TRAIN,
    )


@pytest.fixture(scope="session")
def l2_cv(fleet8, plan2, l1_cv):
    hp = tiny_l2_space().canonicalize(TINY_L2_HP)
    return cross_validate_level2(
        fleet8, hp, plan2, l1_cv.members, seed=13, n_filters=4,
        train_overrides=FAST_TRAIN,
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
