import math

import numpy as np
import pytest

from conftest import FAST_TRAIN, TINY_L1_HP, tiny_l1_space
from rulforge.bayesopt import Trial
from rulforge.errors import ParseError
from rulforge.modelsel import (
    LEVEL1_REFERENCE_CONFIG,
    LEVEL2_REFERENCE_CONFIG,
    Fold,
    FoldPlan,
    append_trial,
    build_level1_network,
    build_level2_network,
    cross_validate_level1,
    level1_space,
    level2_seed_from_level1,
    level2_space,
    load_trials,
    make_fold_plan,
    optimize_level1,
    override_space,
)
from rulforge.network import Conv, Dense, Flatten, params_equal


def test_fold_rejects_leakage():
    with pytest.raises(ValueError, match="3"):
        Fold(train_unit_ids=(1, 2, 3), val_unit_ids=(3, 4))
    with pytest.raises(ValueError):
        Fold(train_unit_ids=(), val_unit_ids=(1,))
    with pytest.raises(ValueError):
        Fold(train_unit_ids=(1, 1, 2), val_unit_ids=(3,))


def test_make_fold_plan_counts():
    plan = make_fold_plan(range(1, 91), k=5, val_fraction=0.3, seed=0)
    assert plan.k == 5
    for fold in plan.folds:
        assert len(fold.val_unit_ids) == 27
        assert len(fold.train_unit_ids) == 63
        assert not set(fold.train_unit_ids) & set(fold.val_unit_ids)
    # folds may overlap with each other (sampling with replacement across folds)
    v0, v1 = set(plan.folds[0].val_unit_ids), set(plan.folds[1].val_unit_ids)
    assert v0 != v1


def test_make_fold_plan_determinism_and_edges():
    a = make_fold_plan(range(10), k=3, seed=4)
    b = make_fold_plan(range(10), k=3, seed=4)
    assert a == b
    assert a != make_fold_plan(range(10), k=3, seed=5)
    # rounding clamps so both sides stay non-empty
    tiny = make_fold_plan([1, 2], k=2, val_fraction=0.9, seed=0)
    for fold in tiny.folds:
        assert len(fold.val_unit_ids) == 1 and len(fold.train_unit_ids) == 1
    with pytest.raises(ValueError):
        make_fold_plan([1], k=2)
    with pytest.raises(ValueError):
        make_fold_plan(range(10), k=0)
    with pytest.raises(ValueError):
        make_fold_plan(range(10), k=2, val_fraction=1.0)


def test_spaces_have_expected_dimensions():
    s1, s2 = level1_space(), level2_space()
    assert "window_len" in s1.names and "window_len" not in s2.names
    for extra in ("fc_2", "channels", "step"):
        assert extra in s2.names and extra not in s1.names
    shared = set(s1.names) - {"window_len"}
    assert shared < set(s2.names)


def test_reference_configs_validate():
    level1_space().validate(LEVEL1_REFERENCE_CONFIG)
    level2_space().validate(LEVEL2_REFERENCE_CONFIG)


def test_level2_seed_mapping():
    seed = level2_seed_from_level1(LEVEL1_REFERENCE_CONFIG)
    level2_space().validate(seed)
    assert "window_len" not in seed
    assert seed["batch_size"] == LEVEL1_REFERENCE_CONFIG["batch_size"]


def test_override_space():
    space = override_space(level1_space(), {"window_len": [20, 40], "kernel": [[3, 3]]})
    cfg_dim = {d.name: d for d in space.dimensions}
    assert (cfg_dim["window_len"].lo, cfg_dim["window_len"].hi) == (20, 40)
    assert cfg_dim["kernel"].choices == ((3, 3),)
    assert cfg_dim["learning_rate"].log  # untouched dimensions keep their scaling
    with pytest.raises(ValueError):
        override_space(level1_space(), {"nope": [1, 2]})
    with pytest.raises(ValueError):
        override_space(level1_space(), {"kernel": [[9, 9]]})  # not an original choice


def test_build_level1_network_shape():
    spec = build_level1_network(LEVEL1_REFERENCE_CONFIG, n_filters=8)
    assert spec.input_shape == (LEVEL1_REFERENCE_CONFIG["window_len"], 20, 1)
    assert spec.output_shape == (1,)
    dense = [l for l in spec.layers if isinstance(l, Dense)]
    assert dense[0].units == LEVEL1_REFERENCE_CONFIG["fc_1"]
    assert dense[0].dropout == LEVEL1_REFERENCE_CONFIG["dropout"]
    assert dense[-1].units == 1 and dense[-1].activation == "relu"
    assert any(isinstance(l, Flatten) for l in spec.layers)


def test_build_network_clamps_dilation():
    # a (10,3) kernel at dilation 7 cannot fit 20 columns at full rate;
    # the builder shrinks the rate instead of failing
    hp = dict(LEVEL1_REFERENCE_CONFIG, kernel=(10, 3), dilation=7, window_len=100)
    spec = build_level1_network(hp, n_filters=4)
    convs = [l for l in spec.layers if isinstance(l, Conv)]
    assert convs, "at least one conv survives"
    for shape in spec.shapes:
        assert all(s >= 1 for s in shape)


def test_build_network_truncates_when_too_deep():
    hp = dict(TINY_L1_HP, window_len=24, n_blocks=4, convs_per_block=4, dilation=1)
    spec = build_level1_network(
        override_space(level1_space(), {"window_len": [20, 40], "fc_1": [8, 16]}).canonicalize(hp),
        n_filters=2,
    )
    # 24 rows cannot host 16 convs + 4 pools; the stack stops early but
    # still produces a valid regressor
    assert spec.output_shape == (1,)


def test_build_level2_network_shape():
    hp = dict(LEVEL2_REFERENCE_CONFIG)
    spec = build_level2_network(hp, enc_width=100, n_filters=4)
    assert spec.input_shape == (100, 100, hp["channels"])
    dense = [l for l in spec.layers if isinstance(l, Dense)]
    assert [d.units for d in dense[-3:]] == [hp["fc_1"], hp["fc_2"], 1]


def test_cv_level1_outcome(l1_cv, plan2):
    assert len(l1_cv.fold_scores) == plan2.k
    assert len(l1_cv.members) == plan2.k
    assert math.isfinite(l1_cv.score)
    assert l1_cv.score == pytest.approx(
        np.mean([f.combined for f in l1_cv.fold_scores]), rel=1e-12
    )
    # per-fold normalizers are fitted on different training units
    assert l1_cv.members[0].normalizer != l1_cv.members[1].normalizer


def test_cv_level1_deterministic(fleet8, plan2, l1_cv):
    hp = tiny_l1_space().canonicalize(TINY_L1_HP)
    again = cross_validate_level1(
        fleet8, hp, plan2, seed=11, n_filters=4, window_stride=29,
        train_overrides=FAST_TRAIN,
    )
    assert again.score == l1_cv.score
    for a, b in zip(again.members, l1_cv.members):
        assert params_equal(a.params, b.params)


def test_cv_workers_do_not_change_results(fleet8, plan2, l1_cv):
    hp = tiny_l1_space().canonicalize(TINY_L1_HP)
    threaded = cross_validate_level1(
        fleet8, hp, plan2, seed=11, n_filters=4, window_stride=29,
        train_overrides=FAST_TRAIN, n_workers=2,
    )
    assert threaded.score == l1_cv.score
    for a, b in zip(threaded.members, l1_cv.members):
        assert params_equal(a.params, b.params)


def test_cv_level2_outcome(l2_cv, plan2):
    assert len(l2_cv.members) == plan2.k
    assert math.isfinite(l2_cv.score)
    for m in l2_cv.members:
        assert m.encoder is not None
        assert m.channels == 2 and m.step == 300


def test_trial_log_round_trip(tmp_path):
    space = tiny_l1_space()
    rng = np.random.default_rng(0)
    trials = [
        Trial(index=0, phase="random", config=space.sample(rng), score=5.0, error=""),
        Trial(index=1, phase="random", config=space.sample(rng), score=math.inf,
              error="RuntimeError: diverged"),
        Trial(index=2, phase="bayes", config=space.sample(rng), score=4.25, error=""),
    ]
    p = tmp_path / "history.jsonl"
    for t in trials:
        append_trial(p, t)
    back = load_trials(p, space)
    assert [t.config for t in back] == [t.config for t in trials]
    assert math.isinf(back[1].score) and back[1].error
    assert back[2].score == 4.25


def test_trial_log_rejects_gap(tmp_path):
    space = tiny_l1_space()
    rng = np.random.default_rng(0)
    p = tmp_path / "history.jsonl"
    append_trial(p, Trial(index=0, phase="random", config=space.sample(rng), score=1.0, error=""))
    append_trial(p, Trial(index=2, phase="random", config=space.sample(rng), score=2.0, error=""))
    with pytest.raises(ParseError, match="sequence"):
        load_trials(p, space)


def test_optimize_level1_resume_identical(fleet8, plan2, tmp_path):
    space = tiny_l1_space()
    kw = dict(space=space, plan=plan2, n_filters=4, window_stride=29,
              train_overrides=FAST_TRAIN)
    full = optimize_level1(fleet8, budget=3, n_random=2, seed=21, **kw)

    hist = tmp_path / "history.jsonl"
    partial = optimize_level1(fleet8, budget=2, n_random=2, seed=21,
                              history_path=hist, **kw)
    resumed = optimize_level1(fleet8, budget=3, n_random=2, seed=21,
                              history_path=hist, **kw)
    assert [t.score for t in resumed.result.trials] == [t.score for t in full.result.trials]
    assert resumed.result.best_trial.index == full.result.best_trial.index
    # the rebuilt best members match a from-scratch run bit for bit
    for a, b in zip(resumed.members, full.members):
        assert params_equal(a.params, b.params)
