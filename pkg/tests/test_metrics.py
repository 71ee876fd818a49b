import math

import numpy as np
import pytest

from rulforge.metrics import (
    ScoreReport,
    challenge_penalty,
    challenge_score,
    combined_score,
    mae,
    nasa_score,
    rmse,
    score_by_class,
)


def test_penalty_hand_values():
    # late by 10 cycles costs e - 1; early by 13 costs the same
    assert math.isclose(challenge_penalty(np.array([10.0]))[0], math.e - 1, rel_tol=1e-12)
    assert math.isclose(challenge_penalty(np.array([-13.0]))[0], math.e - 1, rel_tol=1e-12)
    assert challenge_penalty(np.array([0.0]))[0] == 0.0


def test_nasa_score_hand_values():
    assert math.isclose(nasa_score([10.0], [20.0]), math.e - 1, rel_tol=1e-9)
    assert math.isclose(nasa_score([23.0], [10.0]), math.e - 1, rel_tol=1e-9)
    assert nasa_score([5.0, 9.0], [5.0, 9.0]) == 0.0


def test_nasa_asymmetry():
    # same |error|: predicting late is worse than predicting early
    for e in (1.0, 4.0, 8.0, 20.0):
        late = nasa_score([10.0], [10.0 + e])
        early = nasa_score([10.0], [10.0 - e])
        assert late > early


def test_rmse_and_mae():
    y = np.array([10.0, 20.0, 30.0])
    assert rmse(y, y) == 0.0
    assert mae(y, y) == 0.0
    yp = y + np.array([3.0, -4.0, 0.0])
    assert math.isclose(rmse(y, yp), math.sqrt(25.0 / 3.0))
    assert math.isclose(mae(y, yp), 7.0 / 3.0)
    assert math.isclose(rmse(np.array([5.0]), np.array([0.0])), 5.0)


def test_combined_is_equal_blend():
    rng = np.random.default_rng(0)
    y = rng.uniform(0, 80, size=50)
    yp = y + rng.normal(scale=2.0, size=50)
    assert math.isclose(
        combined_score(y, yp), 0.5 * rmse(y, yp) + 0.5 * nasa_score(y, yp), rel_tol=1e-12
    )


def test_challenge_score_report(rng):
    y = rng.uniform(0, 80, size=50)
    yp = y + rng.normal(scale=2.0, size=50)
    rep = challenge_score(y, yp)
    assert isinstance(rep, ScoreReport)
    assert rep.m == 50
    assert rep.rmse >= 0 and rep.mae >= 0 and rep.nasa >= 0 and rep.combined >= 0
    assert math.isclose(rep.combined, 0.5 * rep.rmse + 0.5 * rep.nasa, rel_tol=1e-12)
    assert rep.rmse >= rep.mae  # always, by power-mean inequality
    perfect = challenge_score(y, y)
    assert perfect.combined == 0.0


def test_permutation_invariance(rng):
    y = rng.uniform(0, 50, size=40)
    yp = y + rng.normal(size=40)
    perm = rng.permutation(40)
    assert math.isclose(nasa_score(y, yp), nasa_score(y[perm], yp[perm]), rel_tol=1e-12)
    assert math.isclose(rmse(y, yp), rmse(y[perm], yp[perm]), rel_tol=1e-12)
    assert math.isclose(mae(y, yp), mae(y[perm], yp[perm]), rel_tol=1e-12)


def test_score_by_class(rng):
    y = rng.uniform(0, 50, size=30)
    yp = y + 1.0
    classes = np.array([1] * 10 + [2] * 10 + [3] * 10)
    table = score_by_class(y, yp, classes)
    assert set(table) == {"all", "1", "2", "3"}
    assert table["all"].m == 30
    assert table["2"].m == 10


def test_input_validation():
    with pytest.raises(ValueError):
        rmse(np.array([1.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        nasa_score(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        challenge_score(np.ones((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        score_by_class([1.0, 2.0], [1.0, 2.0], [1])
