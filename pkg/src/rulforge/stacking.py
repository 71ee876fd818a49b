"""Two-level model stacking, fold ensembles, and confidence intervals.

Level 1 maps a raw-signal window (window_len frames x 20 variables) to a
RUL estimate; its first hidden dense layer ("fc_1", post-activation) is
also an encoding of the window. Level 2 consumes sequences of those
encodings: its input is an image of 100 rows per channel, where row j
of channel c holds the encoding at lag index i = c * 100 + j, newest
first, i.e. the encoding at time t - i * step seconds. Lag times are
resolved against the unit's encoding grid by floor lookup; times before
the earliest available encoding are filled by replicating that earliest
encoding.

Cross-validation leaves one trained model per fold. Such a fold
ensemble predicts with the member mean mu and reports the interval
[max(mu - 3 sigma, 0), mu + 3 sigma], sigma being the population
standard deviation of the member predictions.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, EnsembleError, ParseError
from .fleet import UnitRecord
from .metrics import challenge_score
from .network import NetworkSpec, ParamSet, forward, load_model, predict_batched, save_model
from .preprocess import Normalizer, extract_windows, window_end_indices

ROWS_PER_CHANNEL = 100
INTERVAL_SIGMAS = 3.0
ENSEMBLE_MANIFEST = "manifest.json"
ENSEMBLE_FORMAT = "rulforge-ensemble"

_PREDICT_CHUNK = 256


@dataclass
class Level1Member:
    """One fold's window-to-RUL model plus everything needed to apply it."""

    spec: NetworkSpec
    params: ParamSet
    normalizer: Normalizer
    window_len: int
    hp: dict
    tap: str = "fc_1"

    @property
    def encoding_width(self) -> int:
        return self.spec.tap_width(self.tap)


@dataclass
class Level2Member:
    """One fold's encoding-sequence model, bound to its level-1 encoder."""

    spec: NetworkSpec
    params: ParamSet
    encoder: Level1Member
    step: int
    channels: int
    hp: dict


@dataclass(frozen=True)
class EncodingTrack:
    """Encodings of one unit on a regular time grid (one row per grid point)."""

    unit_id: int
    frame_idx: np.ndarray   # (n,) int64, window-end frame of each encoding
    times: np.ndarray       # (n,) float64, unit times at those frames
    rows: np.ndarray        # (n, width) float64

    @property
    def width(self) -> int:
        return self.rows.shape[1]


def _floor_indices(times: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the last grid time <= query; clamped to 0 before the grid."""
    idx = np.searchsorted(times, queries, side="right") - 1
    return np.clip(idx, 0, len(times) - 1)


def encode_unit(member: Level1Member, unit: UnitRecord, stride: int) -> EncodingTrack:
    """Tap the member's hidden layer over the unit's valid window grid."""
    ends = window_end_indices(unit.n_frames, member.window_len, stride)
    if ends.shape[0] == 0:
        raise DataError(
            f"unit {unit.unit_id} has {unit.n_frames} frames, too short for "
            f"window length {member.window_len}"
        )
    ws = extract_windows([unit], member.window_len, stride).normalized(member.normalizer)
    x = ws.inputs[..., None]
    rows = []
    for lo in range(0, x.shape[0], _PREDICT_CHUNK):
        taps: dict = {}
        forward(member.spec, member.params, x[lo : lo + _PREDICT_CHUNK], taps=taps)
        rows.append(taps[member.tap])
    return EncodingTrack(
        unit_id=unit.unit_id,
        frame_idx=ends,
        times=unit.times[ends],
        rows=np.concatenate(rows, axis=0),
    )


def assemble_encoding_image(
    track: EncodingTrack, anchor_time: float, channels: int, step: int
) -> np.ndarray:
    """Stack lagged encodings into a (100, width, channels) input image."""
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    lags = np.arange(ROWS_PER_CHANNEL * channels, dtype=np.float64)
    wanted = anchor_time - lags * step
    src = _floor_indices(track.times, wanted)
    stacked = track.rows[src]  # (100 * channels, width)
    image = np.empty((ROWS_PER_CHANNEL, track.width, channels), dtype=np.float64)
    for c in range(channels):
        image[:, :, c] = stacked[c * ROWS_PER_CHANNEL : (c + 1) * ROWS_PER_CHANNEL]
    return image


# ---------------------------------------------------------------------------
# Member prediction.


def predict_level1_member(
    member: Level1Member, unit: UnitRecord, at_times: np.ndarray
) -> np.ndarray:
    """Member RUL estimates at the given unit times.

    Each time resolves (floor lookup) to a frame; frames earlier than the
    first valid window end clamp to that earliest window.
    """
    at_times = np.asarray(at_times, dtype=np.float64)
    ends = window_end_indices(unit.n_frames, member.window_len, 1)
    if ends.shape[0] == 0:
        raise DataError(
            f"unit {unit.unit_id} is too short for window length {member.window_len}"
        )
    idx = _floor_indices(unit.times, at_times)
    idx = np.clip(idx, member.window_len, unit.n_frames - 1)
    uniq, inverse = np.unique(idx, return_inverse=True)
    slabs = np.stack(
        [unit.values[e - member.window_len + 1 : e + 1] for e in uniq]
    )
    x = member.normalizer.transform(slabs)[..., None]
    preds = predict_batched(member.spec, member.params, x, _PREDICT_CHUNK)
    return preds[inverse]


def predict_level2_member(
    member: Level2Member, unit: UnitRecord, at_times: np.ndarray,
    track: EncodingTrack | None = None,
) -> np.ndarray:
    """Member RUL estimates at the given times, from lagged encodings.

    A precomputed EncodingTrack for this unit/encoder/step may be passed
    to avoid re-encoding.
    """
    at_times = np.asarray(at_times, dtype=np.float64)
    if track is None:
        track = encode_unit(member.encoder, unit, stride=member.step)
    images = np.stack(
        [assemble_encoding_image(track, t, member.channels, member.step) for t in at_times]
    )
    return predict_batched(member.spec, member.params, images, _PREDICT_CHUNK)


# ---------------------------------------------------------------------------
# Fold-ensemble aggregation.


def confidence_interval(member_preds: np.ndarray):
    """(mean, lo, hi) across the member axis of a (k, n) prediction matrix.

    sigma is the population standard deviation over members; the band is
    mean +/- 3 sigma with the lower edge clipped at 0.
    """
    member_preds = np.asarray(member_preds, dtype=np.float64)
    if member_preds.ndim != 2 or member_preds.shape[0] < 1:
        raise EnsembleError(f"need a (k, n) member matrix, got shape {member_preds.shape}")
    mean = member_preds.mean(axis=0)
    sigma = member_preds.std(axis=0)
    lo = np.maximum(mean - INTERVAL_SIGMAS * sigma, 0.0)
    hi = mean + INTERVAL_SIGMAS * sigma
    return mean, lo, hi


@dataclass(frozen=True)
class PredictionTable:
    """Ensemble output for one unit: band plus every member's estimate."""

    unit_id: int
    times: np.ndarray        # (n,)
    mean: np.ndarray         # (n,)
    lo: np.ndarray           # (n,)
    hi: np.ndarray           # (n,)
    member_preds: np.ndarray  # (k, n)


def _check_members(members) -> list:
    members = list(members)
    if not members:
        raise EnsembleError("an ensemble needs at least one member")
    kinds = {type(m) for m in members}
    if len(kinds) > 1:
        raise EnsembleError(f"mixed member types in ensemble: {sorted(t.__name__ for t in kinds)}")
    return members


def default_prediction_times(members, unit: UnitRecord) -> np.ndarray:
    """The natural grid for a unit: every valid window end (level 1) or
    the encoding grid (level 2)."""
    members = _check_members(members)
    m = members[0]
    if isinstance(m, Level1Member):
        ends = window_end_indices(unit.n_frames, m.window_len, 1)
    else:
        ends = window_end_indices(unit.n_frames, m.encoder.window_len, m.step)
    if ends.shape[0] == 0:
        raise DataError(f"unit {unit.unit_id} is too short to predict on")
    return unit.times[ends]


def predict_ensemble(members, unit: UnitRecord, at_times=None) -> PredictionTable:
    """Mean-and-band prediction of a fold ensemble for one unit.

    A member that cannot predict turns into an EnsembleError naming it.
    """
    members = _check_members(members)
    if at_times is None:
        at_times = default_prediction_times(members, unit)
    at_times = np.asarray(at_times, dtype=np.float64)
    rows = []
    for i, m in enumerate(members):
        try:
            if isinstance(m, Level1Member):
                rows.append(predict_level1_member(m, unit, at_times))
            else:
                rows.append(predict_level2_member(m, unit, at_times))
        except Exception as exc:
            raise EnsembleError(
                f"member {i} failed on unit {unit.unit_id}: {exc}"
            ) from exc
    member_preds = np.stack(rows)
    mean, lo, hi = confidence_interval(member_preds)
    return PredictionTable(
        unit_id=unit.unit_id, times=at_times, mean=mean, lo=lo, hi=hi,
        member_preds=member_preds,
    )


def score_ensemble(members, fleet, eval_points):
    """Score mean predictions and every member at (unit_id, time) points.

    Returns (ensemble ScoreReport, per-member ScoreReports). The truth
    at each point is the unit's RUL at the frame holding that time.
    """
    members = _check_members(members)
    by_unit: dict[int, list[float]] = {}
    order = []
    for uid, t in eval_points:
        by_unit.setdefault(int(uid), []).append(float(t))
        order.append((int(uid), float(t)))
    if not order:
        raise ValueError("no evaluation points given")

    truths: dict[tuple, float] = {}
    preds: dict[tuple, np.ndarray] = {}
    for uid, times in by_unit.items():
        unit = fleet.unit(uid)
        times_arr = np.asarray(times, dtype=np.float64)
        idx = _floor_indices(unit.times, times_arr)
        table = predict_ensemble(members, unit, times_arr)
        for j, t in enumerate(times):
            truths[(uid, t)] = float(unit.total_useful_life_cycles - unit.cycles[idx[j]])
            preds[(uid, t)] = table.member_preds[:, j]
    y_true = np.array([truths[p] for p in order])
    member_matrix = np.stack([preds[p] for p in order], axis=1)  # (k, n)
    ensemble_report = challenge_score(y_true, member_matrix.mean(axis=0))
    member_reports = tuple(
        challenge_score(y_true, member_matrix[i]) for i in range(member_matrix.shape[0])
    )
    return ensemble_report, member_reports


# ---------------------------------------------------------------------------
# On-disk ensemble bundles: a directory with a manifest and one model file
# (level 1) or an encoder/head pair (level 2) per member.


def _jsonable_hp(hp: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in hp.items()}


def save_level1_member(path, member: Level1Member) -> None:
    extra = {
        "role": "level1",
        "window_len": member.window_len,
        "tap": member.tap,
        "normalizer": member.normalizer.to_dict(),
        "hp": _jsonable_hp(member.hp),
    }
    save_model(path, member.spec, member.params, extra)


def load_level1_member(path) -> Level1Member:
    spec, params, extra = load_model(path)
    if extra.get("role") != "level1":
        raise ParseError(f"{path}: not a level-1 member (role {extra.get('role')!r})")
    return Level1Member(
        spec=spec,
        params=params,
        normalizer=Normalizer.from_dict(extra["normalizer"]),
        window_len=int(extra["window_len"]),
        hp=extra.get("hp", {}),
        tap=extra.get("tap", "fc_1"),
    )


def save_level2_member(head_path, encoder_path, member: Level2Member) -> None:
    save_level1_member(encoder_path, member.encoder)
    extra = {
        "role": "level2",
        "step": member.step,
        "channels": member.channels,
        "hp": _jsonable_hp(member.hp),
    }
    save_model(head_path, member.spec, member.params, extra)


def load_level2_member(head_path, encoder_path) -> Level2Member:
    spec, params, extra = load_model(head_path)
    if extra.get("role") != "level2":
        raise ParseError(f"{head_path}: not a level-2 member (role {extra.get('role')!r})")
    return Level2Member(
        spec=spec,
        params=params,
        encoder=load_level1_member(encoder_path),
        step=int(extra["step"]),
        channels=int(extra["channels"]),
        hp=extra.get("hp", {}),
    )


def save_ensemble(dirpath, members, plan=None, extra: dict | None = None) -> None:
    """Write a fold ensemble as a directory bundle.

    The manifest records the member file names, each member's
    normalization statistics, the fold plan the members came from (when
    given), and whether the stack is level 1 alone or level 1 plus 2.
    """
    members = _check_members(members)
    level = 1 if isinstance(members[0], Level1Member) else 2
    os.makedirs(dirpath, exist_ok=True)
    member_files = []
    normalizers = []
    for i, m in enumerate(members):
        if level == 1:
            name = f"member_{i}.rfm"
            save_level1_member(os.path.join(dirpath, name), m)
            member_files.append(name)
            normalizers.append(m.normalizer.to_dict())
        else:
            head, enc = f"member_{i}.head.rfm", f"member_{i}.encoder.rfm"
            save_level2_member(
                os.path.join(dirpath, head), os.path.join(dirpath, enc), m
            )
            member_files.append({"head": head, "encoder": enc})
            normalizers.append(m.encoder.normalizer.to_dict())
    manifest = {
        "format": ENSEMBLE_FORMAT,
        "level": level,
        "topology": "L1" if level == 1 else "L1+L2",
        "k": len(members),
        "members": member_files,
        "normalizers": normalizers,
        "fold_plan": None if plan is None else [
            {"train": list(f.train_unit_ids), "val": list(f.val_unit_ids)}
            for f in plan.folds
        ],
        "hp": _jsonable_hp(members[0].hp),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(dirpath, ENSEMBLE_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ensemble(dirpath):
    """Read a directory bundle; returns (members, manifest)."""
    manifest_path = os.path.join(dirpath, ENSEMBLE_MANIFEST)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"{dirpath}: no {ENSEMBLE_MANIFEST}; not an ensemble bundle") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: bad manifest: {exc}") from None
    if manifest.get("format") != ENSEMBLE_FORMAT:
        raise ParseError(f"{dirpath}: unrecognized bundle format {manifest.get('format')!r}")
    level = manifest.get("level")
    k = int(manifest.get("k", 0))
    if level not in (1, 2) or k < 1:
        raise ParseError(f"{dirpath}: bad manifest (level={level!r}, k={k})")
    names = manifest.get("members") or [
        (f"member_{i}.rfm" if level == 1 else
         {"head": f"member_{i}.head.rfm", "encoder": f"member_{i}.encoder.rfm"})
        for i in range(k)
    ]
    members = []
    for entry in names:
        if level == 1:
            path = os.path.join(dirpath, entry)
            if not os.path.exists(path):
                raise ParseError(f"missing member file: {path}")
            members.append(load_level1_member(path))
        else:
            head = os.path.join(dirpath, entry["head"])
            enc = os.path.join(dirpath, entry["encoder"])
            for p in (head, enc):
                if not os.path.exists(p):
                    raise ParseError(f"missing member file: {p}")
            members.append(load_level2_member(head, enc))
    return members, manifest
