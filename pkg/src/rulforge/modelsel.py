"""Model selection: fold plans, search spaces, templates, CV objectives.

Validation uses repeated random subsampling: each of the k folds draws
its own random 30% of the units for validation (so folds may overlap
across the plan, never within a fold), and the remaining units train.
Normalization statistics are refit on each fold's training units.

A candidate configuration is scored by training one model per fold and
averaging the folds' combined validation metric (0.5 RMSE + 0.5
asymmetric penalty, both in cycles). The sequential optimizer explores
the mixed search space; failed configurations score +inf and the search
continues. Because every randomized step is keyed by (seed, trial
index) or (seed, trial index, fold index), the best trial's fold models
can be rebuilt bit-identically after the search by re-running its
cross-validation with the same keys.

Network templates grow convolution blocks (convs_per_block convolutions
per block, n_blocks blocks, each block closed by a 2x1 max pool) on top
of the input slab, then flatten into the dense regression head, which
always ends in a single relu unit so RUL estimates are non-negative.
Geometry is clamped where the sampled hyperparameters outgrow the
input: dilation shrinks per convolution to the largest value that still
fits, a pool is skipped when the tensor is a single row tall, and the
conv stack stops early once no kernel fits at any dilation.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bayesopt import (
    Categorical,
    Integer,
    OptResult,
    Real,
    SearchSpace,
    Trial,
    minimize,
)
from .errors import DataError, ParseError
from .fleet import N_VARIABLES, Fleet
from .metrics import challenge_score
from .network import Conv, Dense, Flatten, NetworkSpec, Pool, init_params, predict_batched
from .netops import conv_output_dims
from .preprocess import Normalizer, extract_windows
from .stacking import (
    Level1Member,
    Level2Member,
    ROWS_PER_CHANNEL,
    assemble_encoding_image,
    encode_unit,
)
from .training import TrainConfig, train

DEFAULT_FILTERS = 32

KERNEL_CHOICES = ((3, 3), (10, 1), (10, 3))
ACTIVATION_CHOICES = ("tanh", "relu", "leaky_relu")

# Known-good configurations for full-scale runs, found by this search
# procedure on the reference fleet. Useful as seeds and smoke defaults.
LEVEL1_REFERENCE_CONFIG = {
    "window_len": 161,
    "batch_size": 116,
    "convs_per_block": 4,
    "n_blocks": 4,
    "l1": 7.23e-4,
    "l2": 0.0,
    "learning_rate": 1e-3,
    "dropout": 0.13,
    "fc_1": 100,
    "conv_activation": "tanh",
    "dilation": 2,
    "kernel": (10, 1),
    "fc_activation": "leaky_relu",
}
LEVEL2_REFERENCE_CONFIG = {
    "batch_size": 31,
    "convs_per_block": 4,
    "n_blocks": 4,
    "l1": 6.96e-4,
    "l2": 1.73e-5,
    "learning_rate": 5.53e-4,
    "dropout": 0.21,
    "fc_1": 247,
    "conv_activation": "tanh",
    "dilation": 2,
    "kernel": (10, 1),
    "fc_activation": "leaky_relu",
    "fc_2": 105,
    "channels": 3,
    "step": 989,
}


# ---------------------------------------------------------------------------
# Fold plans.


@dataclass(frozen=True)
class Fold:
    train_unit_ids: tuple[int, ...]
    val_unit_ids: tuple[int, ...]

    def __post_init__(self):
        tr, va = set(self.train_unit_ids), set(self.val_unit_ids)
        if len(tr) != len(self.train_unit_ids) or len(va) != len(self.val_unit_ids):
            raise ValueError("duplicate unit ids within a fold split")
        if not tr or not va:
            raise ValueError("both sides of a fold must be non-empty")
        leaked = tr & va
        if leaked:
            raise ValueError(f"units on both sides of a fold: {sorted(leaked)}")


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    @property
    def k(self) -> int:
        return len(self.folds)


def make_fold_plan(unit_ids, k: int = 5, val_fraction: float = 0.3, seed: int = 0) -> FoldPlan:
    """Draw k independent random train/validation splits of the units.

    Each fold holds out round(val_fraction * n) units, clamped to
    [1, n-1]. Splits are unit-level, so no unit's windows can appear on
    both sides of any single fold.
    """
    unit_ids = tuple(int(u) for u in unit_ids)
    n = len(unit_ids)
    if n < 2:
        raise ValueError(f"need at least 2 units to make folds, got {n}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n_val = min(max(int(round(val_fraction * n)), 1), n - 1)
    rng = np.random.default_rng(seed)
    folds = []
    ids = np.array(unit_ids)
    for _ in range(k):
        val_idx = rng.choice(n, size=n_val, replace=False)
        mask = np.zeros(n, dtype=bool)
        mask[val_idx] = True
        folds.append(Fold(
            train_unit_ids=tuple(int(u) for u in ids[~mask]),
            val_unit_ids=tuple(int(u) for u in ids[mask]),
        ))
    return FoldPlan(folds=tuple(folds))


# ---------------------------------------------------------------------------
# Search spaces.


def _shared_dimensions():
    return [
        Integer("batch_size", 31, 128),
        Integer("convs_per_block", 2, 4),
        Integer("n_blocks", 2, 4),
        Real("l1", 0.0, 1e-3),
        Real("l2", 0.0, 1e-3),
        Real("learning_rate", 1e-5, 1e-3, log=True),
        Real("dropout", 0.0, 0.9),
        Integer("fc_1", 64, 256),
        Categorical("conv_activation", ACTIVATION_CHOICES),
        Integer("dilation", 1, 10),
        Categorical("kernel", KERNEL_CHOICES),
        Categorical("fc_activation", ACTIVATION_CHOICES),
    ]


def level1_space() -> SearchSpace:
    return SearchSpace([Integer("window_len", 100, 500)] + _shared_dimensions())


def level2_space() -> SearchSpace:
    return SearchSpace(_shared_dimensions() + [
        Integer("fc_2", 100, 1000),
        Integer("channels", 1, 3),
        Integer("step", 64, 1024),
    ])


def level2_seed_from_level1(hp1: dict) -> dict:
    """Carry a level-1 configuration into the level-2 space.

    window_len is dropped (level 2 has none); the three new dimensions
    start at their range midpoints.
    """
    hp2 = {k: v for k, v in hp1.items() if k != "window_len"}
    hp2.update(fc_2=550, channels=2, step=544)
    return hp2


def override_space(space: SearchSpace, overrides: dict) -> SearchSpace:
    """Rebuild a space with per-dimension bound/choice overrides.

    Reals and integers take a [lo, hi] pair (log scaling is kept);
    categoricals take a list of choices drawn from the original ones.
    """
    if not overrides:
        return space
    unknown = set(overrides) - set(space.names)
    if unknown:
        raise ValueError(f"unknown search dimensions: {sorted(unknown)}")
    dims = []
    for d in space.dimensions:
        if d.name not in overrides:
            dims.append(d)
            continue
        ov = overrides[d.name]
        if isinstance(d, Real):
            lo, hi = ov
            dims.append(Real(d.name, float(lo), float(hi), log=d.log))
        elif isinstance(d, Integer):
            lo, hi = ov
            dims.append(Integer(d.name, int(lo), int(hi)))
        else:
            choices = tuple(tuple(c) if isinstance(c, list) else c for c in ov)
            for c in choices:
                if c not in d.choices:
                    raise ValueError(f"{d.name}: {c!r} is not an allowed choice")
            dims.append(Categorical(d.name, choices))
    return SearchSpace(dims)


# ---------------------------------------------------------------------------
# Network templates.


def _conv_stack(h: int, w: int, hp: dict, n_filters: int):
    """Build the block structure that fits the (h, w) input; returns layers."""
    kh, kw = hp["kernel"]
    layers = []
    for _ in range(hp["n_blocks"]):
        for _ in range(hp["convs_per_block"]):
            d = hp["dilation"]
            if kh > 1:
                d = min(d, (h - 1) // (kh - 1))
            if kw > 1:
                d = min(d, (w - 1) // (kw - 1))
            if d < 1:
                return layers
            layers.append(Conv(n_filters, (kh, kw), dilation=d, activation=hp["conv_activation"]))
            h, w = conv_output_dims(h, w, kh, kw, d)
        if h >= 2:
            layers.append(Pool())
            h //= 2
    return layers


def build_level1_network(hp: dict, n_filters: int = DEFAULT_FILTERS) -> NetworkSpec:
    """Window regressor: conv blocks, then fc_1, then the single relu output."""
    h = int(hp["window_len"])
    conv_layers = _conv_stack(h, N_VARIABLES, hp, n_filters)
    layers = conv_layers + [
        Flatten(),
        Dense(int(hp["fc_1"]), hp["fc_activation"], dropout=float(hp["dropout"])),
        Dense(1, "relu"),
    ]
    return NetworkSpec((h, N_VARIABLES, 1), layers)


def build_level2_network(hp: dict, enc_width: int, n_filters: int = DEFAULT_FILTERS) -> NetworkSpec:
    """Encoding-sequence regressor with two hidden dense layers."""
    channels = int(hp["channels"])
    conv_layers = _conv_stack(ROWS_PER_CHANNEL, enc_width, hp, n_filters)
    layers = conv_layers + [
        Flatten(),
        Dense(int(hp["fc_1"]), hp["fc_activation"], dropout=float(hp["dropout"])),
        Dense(int(hp["fc_2"]), hp["fc_activation"], dropout=float(hp["dropout"])),
        Dense(1, "relu"),
    ]
    return NetworkSpec((ROWS_PER_CHANNEL, enc_width, channels), layers)


# ---------------------------------------------------------------------------
# Cross-validated objectives.


@dataclass(frozen=True)
class FoldScore:
    fold: int
    rmse: float
    mae: float
    nasa: float
    combined: float
    best_epoch: int
    epochs_run: int


@dataclass(frozen=True)
class CVOutcome:
    score: float
    fold_scores: tuple[FoldScore, ...]
    members: tuple

    @property
    def score_std(self) -> float:
        return float(np.std([f.combined for f in self.fold_scores]))


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def _train_config(hp: dict, overrides: dict | None) -> TrainConfig:
    kw = dict(
        batch_size=int(hp["batch_size"]),
        learning_rate=float(hp["learning_rate"]),
        l1=float(hp["l1"]),
        l2=float(hp["l2"]),
    )
    if overrides:
        kw.update(overrides)
    return TrainConfig(**kw)


def _run_folds(plan: FoldPlan, run_fold, n_workers: int):
    """Run fold closures serially or on a thread pool; results in fold order."""
    if n_workers <= 1 or plan.k == 1:
        return [run_fold(i, fold) for i, fold in enumerate(plan.folds)]
    with ThreadPoolExecutor(max_workers=min(n_workers, plan.k)) as pool:
        futures = [pool.submit(run_fold, i, fold) for i, fold in enumerate(plan.folds)]
        return [f.result() for f in futures]


def cross_validate_level1(
    fleet: Fleet,
    hp: dict,
    plan: FoldPlan,
    seed,
    *,
    n_filters: int = DEFAULT_FILTERS,
    window_stride: int = 1,
    train_overrides: dict | None = None,
    n_workers: int = 1,
) -> CVOutcome:
    """Train one window regressor per fold; score = mean combined metric.

    Folds are independent (own seeds, own data copies), so `n_workers`
    may run them concurrently without changing any result.
    """
    base = _seed_tuple(seed)
    cfg = _train_config(hp, train_overrides)
    window_len = int(hp["window_len"])

    def run_fold(i: int, fold: Fold):
        tr_units = [fleet.unit(uid) for uid in fold.train_unit_ids]
        va_units = [fleet.unit(uid) for uid in fold.val_unit_ids]
        norm = Normalizer.fit_fleet(tr_units)
        wtr = extract_windows(tr_units, window_len, window_stride).normalized(norm)
        wva = extract_windows(va_units, window_len, window_stride).normalized(norm)
        spec = build_level1_network(hp, n_filters=n_filters)
        params = init_params(spec, base + (i, 0))
        result = train(
            spec, params,
            wtr.inputs[..., None], wtr.labels,
            wva.inputs[..., None], wva.labels,
            cfg, seed=base + (i, 1),
        )
        preds = predict_batched(spec, result.params, wva.inputs[..., None])
        rep = challenge_score(wva.labels, preds)
        score = FoldScore(
            fold=i, rmse=rep.rmse, mae=rep.mae, nasa=rep.nasa, combined=rep.combined,
            best_epoch=result.best_epoch, epochs_run=result.epochs_run,
        )
        member = Level1Member(
            spec=spec, params=result.params, normalizer=norm,
            window_len=window_len, hp=dict(hp),
        )
        return score, member

    results = _run_folds(plan, run_fold, n_workers)
    fold_scores = tuple(r[0] for r in results)
    return CVOutcome(
        score=float(np.mean([f.combined for f in fold_scores])),
        fold_scores=fold_scores,
        members=tuple(r[1] for r in results),
    )


def _level2_dataset(units, encoder: Level1Member, step: int, channels: int):
    xs, ys = [], []
    for u in units:
        if u.n_frames <= encoder.window_len:
            continue  # too short to encode; contributes nothing
        track = encode_unit(encoder, u, stride=step)
        for a in range(track.times.shape[0]):
            xs.append(assemble_encoding_image(track, float(track.times[a]), channels, step))
            ys.append(u.total_useful_life_cycles - u.cycles[track.frame_idx[a]])
    if not xs:
        raise DataError("no unit is long enough to build encoding sequences")
    return np.stack(xs), np.array(ys, dtype=np.float64)


def cross_validate_level2(
    fleet: Fleet,
    hp: dict,
    plan: FoldPlan,
    l1_members,
    seed,
    *,
    n_filters: int = DEFAULT_FILTERS,
    train_overrides: dict | None = None,
    n_workers: int = 1,
) -> CVOutcome:
    """Train one encoding-sequence regressor per fold, on that fold's encoder.

    `l1_members` must hold one Level1Member per fold of the plan, in
    fold order; fold i's model both generates the training encodings and
    rides along inside the resulting Level2Member.
    """
    l1_members = tuple(l1_members)
    if len(l1_members) != plan.k:
        raise ValueError(f"{len(l1_members)} encoders for a {plan.k}-fold plan")
    base = _seed_tuple(seed)
    cfg = _train_config(hp, train_overrides)
    step, channels = int(hp["step"]), int(hp["channels"])
    enc_width = l1_members[0].encoding_width

    def run_fold(i: int, fold: Fold):
        encoder = l1_members[i]
        tr_units = [fleet.unit(uid) for uid in fold.train_unit_ids]
        va_units = [fleet.unit(uid) for uid in fold.val_unit_ids]
        xtr, ytr = _level2_dataset(tr_units, encoder, step, channels)
        xva, yva = _level2_dataset(va_units, encoder, step, channels)
        spec = build_level2_network(hp, enc_width, n_filters=n_filters)
        params = init_params(spec, base + (i, 0))
        result = train(spec, params, xtr, ytr, xva, yva, cfg, seed=base + (i, 1))
        preds = predict_batched(spec, result.params, xva)
        rep = challenge_score(yva, preds)
        score = FoldScore(
            fold=i, rmse=rep.rmse, mae=rep.mae, nasa=rep.nasa, combined=rep.combined,
            best_epoch=result.best_epoch, epochs_run=result.epochs_run,
        )
        member = Level2Member(
            spec=spec, params=result.params, encoder=encoder,
            step=step, channels=channels, hp=dict(hp),
        )
        return score, member

    results = _run_folds(plan, run_fold, n_workers)
    fold_scores = tuple(r[0] for r in results)
    return CVOutcome(
        score=float(np.mean([f.combined for f in fold_scores])),
        fold_scores=fold_scores,
        members=tuple(r[1] for r in results),
    )


# ---------------------------------------------------------------------------
# Trial persistence (JSON lines; +inf scores stored as null).


def _jsonable_config(config: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in config.items()}


def append_trial(path, trial: Trial) -> None:
    rec = {
        "index": trial.index,
        "phase": trial.phase,
        "config": _jsonable_config(trial.config),
        "score": trial.score if math.isfinite(trial.score) else None,
        "error": trial.error,
    }
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(rec) + "\n")


def load_trials(path, space: SearchSpace) -> list[Trial]:
    """Read a trial log back; validates the index sequence."""
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}") from None
            score = rec.get("score")
            trials.append(Trial(
                index=int(rec["index"]),
                phase=rec["phase"],
                config=space.canonicalize(rec["config"]),
                score=float(score) if score is not None else math.inf,
                error=rec.get("error", ""),
            ))
    for i, t in enumerate(trials):
        if t.index != i:
            raise ParseError(f"{path}: trial indices out of sequence at position {i}")
    return trials


# ---------------------------------------------------------------------------
# Search drivers.


@dataclass
class SearchOutcome:
    """Everything a finished search hands back."""

    result: OptResult
    space: SearchSpace
    plan: FoldPlan
    members: tuple
    cv: CVOutcome | None

    @property
    def best_config(self) -> dict | None:
        return self.result.best_config

    @property
    def best_score(self) -> float:
        return self.result.best_score


def _run_search(objective_for_index, space, budget, n_random, seed,
                seed_points, history_path, on_trial):
    prior = []
    if history_path and os.path.exists(history_path):
        prior = load_trials(history_path, space)
    next_index = [len(prior)]

    def objective(config):
        idx = next_index[0]
        next_index[0] += 1
        return objective_for_index(config, idx)

    def record(trial: Trial):
        if history_path:
            append_trial(history_path, trial)
        if on_trial:
            on_trial(trial)

    return minimize(
        objective, space, budget, n_random, seed,
        seed_points=seed_points, prior_trials=prior, on_trial=record,
    )


def optimize_level1(
    fleet: Fleet,
    budget: int,
    n_random: int,
    seed: int,
    *,
    plan: FoldPlan | None = None,
    k: int = 5,
    val_fraction: float = 0.3,
    space: SearchSpace | None = None,
    n_filters: int = DEFAULT_FILTERS,
    window_stride: int = 1,
    train_overrides: dict | None = None,
    n_workers: int = 1,
    seed_points=(),
    history_path=None,
    on_trial=None,
) -> SearchOutcome:
    """Search the level-1 space; returns the best fold models, rebuilt exactly."""
    if space is None:
        space = level1_space()
    if plan is None:
        plan = make_fold_plan(fleet.unit_ids, k=k, val_fraction=val_fraction, seed=seed)

    def cv_for(config, idx):
        return cross_validate_level1(
            fleet, config, plan, (seed, idx),
            n_filters=n_filters, window_stride=window_stride,
            train_overrides=train_overrides, n_workers=n_workers,
        )

    result = _run_search(lambda c, i: cv_for(c, i).score, space, budget, n_random,
                         seed, seed_points, history_path, on_trial)
    members, cv = (), None
    if result.best_trial is not None:
        cv = cv_for(result.best_trial.config, result.best_trial.index)
        members = cv.members
    return SearchOutcome(result=result, space=space, plan=plan, members=members, cv=cv)


def optimize_level2(
    fleet: Fleet,
    l1_members,
    plan: FoldPlan,
    budget: int,
    n_random: int,
    seed: int,
    *,
    l1_best_hp: dict | None = None,
    space: SearchSpace | None = None,
    n_filters: int = DEFAULT_FILTERS,
    train_overrides: dict | None = None,
    n_workers: int = 1,
    seed_points=None,
    history_path=None,
    on_trial=None,
) -> SearchOutcome:
    """Search the level-2 space on top of per-fold level-1 encoders.

    By default the first trial is the level-1 best configuration carried
    into the level-2 space, mirroring how a good level-1 setup seeds the
    deeper search.
    """
    if space is None:
        space = level2_space()
    if seed_points is None:
        seed_points = []
        if l1_best_hp:
            carried = level2_seed_from_level1(l1_best_hp)
            try:
                space.validate(carried)
            except ValueError:
                pass  # narrowed space rejects the carried point; start cold
            else:
                seed_points = [carried]

    def cv_for(config, idx):
        return cross_validate_level2(
            fleet, config, plan, l1_members, (seed, idx),
            n_filters=n_filters, train_overrides=train_overrides,
            n_workers=n_workers,
        )

    result = _run_search(lambda c, i: cv_for(c, i).score, space, budget, n_random,
                         seed, seed_points, history_path, on_trial)
    members, cv = (), None
    if result.best_trial is not None:
        cv = cv_for(result.best_trial.config, result.best_trial.index)
        members = cv.members
    return SearchOutcome(result=result, space=space, plan=plan, members=members, cv=cv)
