"""Prognostic accuracy metrics.

All errors are in cycles. RMSE and MAE treat early and late predictions
symmetrically. The NASA score penalizes late predictions (overestimated
remaining life) harder than early ones: with d = predicted - true,

    penalty(d) = exp(-d / 13) - 1   if d < 0   (early)
                 exp( d / 10) - 1   if d >= 0  (late)

and the score is the mean penalty over all predictions. The combined
figure of merit, used as the model-selection objective throughout,
averages RMSE with it:

    combined = 0.5 * rmse + 0.5 * nasa

Lower is better for every metric; a perfect predictor scores 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARLY_DENOM = 13.0
LATE_DENOM = 10.0


def _check_pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"need matching 1-d arrays, got {y_true.shape} and {y_pred.shape}")
    if y_true.shape[0] == 0:
        raise ValueError("cannot score an empty prediction set")
    return y_true, y_pred


def rmse(y_true, y_pred) -> float:
    """Root-mean-square prediction error."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def mae(y_true, y_pred) -> float:
    """Mean absolute prediction error."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    return float(np.mean(np.abs(y_true - y_pred)))


def challenge_penalty(d):
    """Asymmetric per-prediction penalty of the signed error d = pred - true.

    Vectorized; convex in d with its minimum (0) at d = 0. A tie (d = 0)
    takes the late branch, where the penalty is 0 anyway.
    """
    d = np.asarray(d, dtype=np.float64)
    return np.where(d < 0, np.expm1(-d / EARLY_DENOM), np.expm1(d / LATE_DENOM))


def nasa_score(y_true, y_pred) -> float:
    """Mean asymmetric penalty over all predictions."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    return float(np.mean(challenge_penalty(y_pred - y_true)))


def combined_score(y_true, y_pred) -> float:
    """Equal-weight blend of RMSE and the NASA score."""
    return 0.5 * rmse(y_true, y_pred) + 0.5 * nasa_score(y_true, y_pred)


@dataclass(frozen=True)
class ScoreReport:
    """Every reported metric for one prediction set of m samples."""

    rmse: float
    mae: float
    nasa: float
    combined: float
    m: int


def challenge_score(y_true, y_pred) -> ScoreReport:
    """Full score breakdown; `combined` is the selection objective."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    r = float(np.sqrt(np.mean((y_true - y_pred) ** 2)))
    a = float(np.mean(np.abs(y_true - y_pred)))
    s = float(np.mean(challenge_penalty(y_pred - y_true)))
    return ScoreReport(rmse=r, mae=a, nasa=s, combined=0.5 * r + 0.5 * s,
                       m=int(y_true.shape[0]))


def score_by_class(y_true, y_pred, classes) -> dict:
    """ScoreReports keyed by flight class, plus 'all' for the pooled set."""
    y_true, y_pred = _check_pair(y_true, y_pred)
    classes = np.asarray(classes)
    if classes.shape != y_true.shape:
        raise ValueError(f"classes shape {classes.shape} disagrees with predictions")
    out = {"all": challenge_score(y_true, y_pred)}
    for c in sorted(set(int(x) for x in classes)):
        mask = classes == c
        out[str(c)] = challenge_score(y_true[mask], y_pred[mask])
    return out
