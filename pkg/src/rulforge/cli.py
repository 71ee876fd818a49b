"""Command-line pipeline driver.

Subcommands: synth, optimize, train, encode, predict, score,
plot-export. Every command is deterministic for a fixed config and
seed, never mutates its inputs, and re-running it overwrites its
outputs byte-identically. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 compute error.

Run configuration is a JSON file with an explicit schema_version (see
the README for the full schema). The environment variable
RULFORGE_THREADS caps how many cross-validation folds may train
concurrently; the default is 1.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

import numpy as np

from .bayesopt import Trial
from .errors import (
    ConfigError,
    DataError,
    EnsembleError,
    OrderingError,
    ParseError,
    RulforgeError,
    SchemaError,
    ShapeError,
    TrainingError,
)
from .fleet import (
    CSV_HEADER,
    DEFAULT_PROFILE,
    Fleet,
    SynthProfile,
    load_fleet_csv,
    synthesize_fleet,
    write_fleet_csv,
)
from .metrics import challenge_penalty, challenge_score
from .modelsel import (
    Fold,
    FoldPlan,
    cross_validate_level1,
    cross_validate_level2,
    level1_space,
    level2_space,
    make_fold_plan,
    optimize_level1,
    optimize_level2,
    override_space,
)
from .stacking import (
    ENSEMBLE_MANIFEST,
    Level1Member,
    encode_unit,
    load_ensemble,
    predict_ensemble,
    save_ensemble,
)
from .training import TrainConfig

SCHEMA_VERSION = 1

TRUTH_HEADER = ("unit", "t_s", "rul_true")
TRUTH_HEADER_CLASS = TRUTH_HEADER + ("flight_class",)
POINTS_HEADER = ("unit", "t_s")

PLOT_KINDS = ("trajectory", "score_vs_rul", "class_bars", "convergence")


def _cell(v) -> str:
    """CSV cell formatting: repr for floats so round trips are exact."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _n_workers() -> int:
    raw = os.environ.get("RULFORGE_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"RULFORGE_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"RULFORGE_THREADS must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# Run configuration.


@dataclasses.dataclass
class RunConfig:
    dataset: dict
    out_dir: str
    level: int
    seed: int
    budget: int
    n_random: int
    fold_plan: dict
    training: dict
    n_filters: int
    window_stride: int
    space_overrides: dict
    seed_points: list
    hyperparameters: dict | None
    l1_ensemble: str | None


_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def load_run_config(path, *, level: int | None = None, out: str | None = None) -> RunConfig:
    """Parse and validate a run configuration file.

    `level` and `out` are command-line overrides that win over the file.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"{path}: schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}"
        )

    dataset = raw.get("dataset")
    if not isinstance(dataset, dict) or len(set(dataset) & {"path", "synth"}) != 1:
        raise ConfigError(f"{path}: dataset must contain exactly one of 'path' or 'synth'")

    out_dir = out if out is not None else raw.get("out_dir")
    if not out_dir:
        raise ConfigError(f"{path}: out_dir is required (or pass --out)")

    lvl = level if level is not None else raw.get("level", 1)
    if lvl not in (1, 2):
        raise ConfigError(f"{path}: level must be 1 or 2, got {lvl!r}")

    seed = raw.get("seed", 0)
    budget = raw.get("budget", 0)
    n_random = raw.get("n_random", min(10, budget) if budget else 0)
    for name, v in (("seed", seed), ("budget", budget), ("n_random", n_random)):
        if not isinstance(v, int) or v < 0:
            raise ConfigError(f"{path}: {name} must be a non-negative integer, got {v!r}")

    fold_plan = raw.get("fold_plan") or {}
    if not isinstance(fold_plan, dict):
        raise ConfigError(f"{path}: fold_plan must be an object")
    unknown = set(fold_plan) - {"k", "val_fraction", "seed"}
    if unknown:
        raise ConfigError(f"{path}: unknown fold_plan keys: {sorted(unknown)}")

    training = raw.get("training") or {}
    bad = set(training) - _TRAIN_FIELDS
    if bad:
        raise ConfigError(f"{path}: unknown training keys: {sorted(bad)}")

    hp = raw.get("hyperparameters")
    if hp is not None and not isinstance(hp, dict):
        raise ConfigError(f"{path}: hyperparameters must be an object")

    return RunConfig(
        dataset=dataset,
        out_dir=str(out_dir),
        level=int(lvl),
        seed=seed,
        budget=budget,
        n_random=n_random,
        fold_plan=fold_plan,
        training=dict(training),
        n_filters=int(raw.get("n_filters", 32)),
        window_stride=int(raw.get("window_stride", 1)),
        space_overrides=dict(raw.get("space_overrides") or {}),
        seed_points=list(raw.get("seed_points") or []),
        hyperparameters=hp,
        l1_ensemble=raw.get("l1_ensemble"),
    )


def _load_dataset(cfg: RunConfig) -> Fleet:
    if "path" in cfg.dataset:
        return load_fleet_csv(cfg.dataset["path"])
    spec = dict(cfg.dataset["synth"])
    n_units = spec.pop("n_units", None)
    seed = spec.pop("seed", cfg.seed)
    if n_units is None:
        raise ConfigError("dataset.synth needs n_units")
    allowed = {f.name for f in dataclasses.fields(SynthProfile)}
    bad = set(spec) - allowed
    if bad:
        raise ConfigError(f"unknown synth profile keys: {sorted(bad)}")
    fixed = {k: (tuple(v) if isinstance(v, list) else v) for k, v in spec.items()}
    profile = dataclasses.replace(DEFAULT_PROFILE, **fixed)
    return synthesize_fleet(int(n_units), int(seed), profile)


def _plan_from_config(cfg: RunConfig, fleet: Fleet) -> FoldPlan:
    fp = cfg.fold_plan
    return make_fold_plan(
        fleet.unit_ids,
        k=int(fp.get("k", 5)),
        val_fraction=float(fp.get("val_fraction", 0.3)),
        seed=int(fp.get("seed", cfg.seed)),
    )


def _space_for(cfg: RunConfig):
    base = level1_space() if cfg.level == 1 else level2_space()
    try:
        return override_space(base, cfg.space_overrides)
    except ValueError as exc:
        raise ConfigError(f"bad space_overrides: {exc}") from None


def _resolve_bundle_dir(path: str) -> str:
    if os.path.basename(path) == ENSEMBLE_MANIFEST:
        return os.path.dirname(path) or "."
    return path


def _load_l1_bundle(path: str):
    """Level-1 members, their fold plan, and their hyperparameters."""
    members, manifest = load_ensemble(_resolve_bundle_dir(path))
    if manifest.get("level") != 1:
        raise ConfigError(f"{path}: level-2 work needs a level-1 ensemble bundle")
    raw_plan = manifest.get("fold_plan")
    if not raw_plan:
        raise ConfigError(f"{path}: bundle has no fold plan; level 2 needs fold-aligned encoders")
    plan = FoldPlan(folds=tuple(
        Fold(
            train_unit_ids=tuple(int(u) for u in f["train"]),
            val_unit_ids=tuple(int(u) for u in f["val"]),
        )
        for f in raw_plan
    ))
    hp = None
    if manifest.get("hp"):
        try:
            hp = level1_space().canonicalize(manifest["hp"])
        except ValueError:
            hp = None
    return members, plan, hp


# ---------------------------------------------------------------------------
# Shared readers.


def _read_csv_rows(path, expect_header=None):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if expect_header is not None and header != tuple(expect_header):
            raise SchemaError(
                f"{path}: expected header {','.join(expect_header)}, got {','.join(header)}"
            )
        return header, list(reader)


def _load_predictions(path):
    """Rows of a prediction CSV: unit, t_s, mean, lo, hi, member columns."""
    header, raw = _read_csv_rows(path)
    fixed = ("unit", "t_s", "rul_mean", "rul_lo", "rul_hi")
    if tuple(header[:5]) != fixed:
        raise SchemaError(f"{path}: prediction CSV must start with {','.join(fixed)}")
    k = len(header) - 5
    expect_members = tuple(f"member_{i}" for i in range(k))
    if tuple(header[5:]) != expect_members:
        raise SchemaError(f"{path}: member columns must be member_0..member_{k - 1}")
    rows = []
    for lineno, row in enumerate(raw, start=2):
        try:
            rows.append({
                "unit": int(row[0]),
                "t_s": float(row[1]),
                "mean": float(row[2]),
                "lo": float(row[3]),
                "hi": float(row[4]),
                "members": np.array([float(x) for x in row[5:]]),
            })
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: row {lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no prediction rows")
    return rows


def _load_points(path):
    _, raw = _read_csv_rows(path, POINTS_HEADER)
    points = []
    for lineno, row in enumerate(raw, start=2):
        try:
            points.append((int(row[0]), float(row[1])))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: row {lineno}: {exc}") from None
    if not points:
        raise DataError(f"{path}: no points")
    return points


class TruthSource:
    """RUL ground truth, from either a fleet export or a plain truth table.

    A fleet CSV answers any in-range (unit, t) query via the unit's
    cycle counter; a truth table (`unit,t_s,rul_true[,flight_class]`)
    answers exactly the points it lists.
    """

    def __init__(self, fleet: Fleet | None, table: dict | None, classes: dict | None):
        self._fleet = fleet
        self._table = table
        self._classes = classes

    @classmethod
    def load(cls, path) -> "TruthSource":
        with open(path, newline="", encoding="utf-8") as fh:
            first = fh.readline().strip()
        header = tuple(first.split(","))
        if header == CSV_HEADER:
            fleet = load_fleet_csv(path)
            classes = {u.unit_id: u.flight_class for u in fleet}
            return cls(fleet, None, classes)
        if header in (TRUTH_HEADER, TRUTH_HEADER_CLASS):
            _, raw = _read_csv_rows(path)
            table, classes = {}, {}
            for lineno, row in enumerate(raw, start=2):
                try:
                    uid, t, r = int(row[0]), float(row[1]), float(row[2])
                    table[(uid, t)] = r
                    if len(header) == 4:
                        classes[uid] = int(float(row[3]))
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"{path}: row {lineno}: {exc}") from None
            return cls(None, table, classes if len(header) == 4 else None)
        raise SchemaError(
            f"{path}: not a fleet export and not a truth table "
            f"({','.join(TRUTH_HEADER)}[,flight_class])"
        )

    def unit_ids(self) -> set:
        if self._fleet is not None:
            return set(self._fleet.unit_ids)
        return {uid for uid, _ in self._table}

    def rul(self, unit_id: int, t: float) -> float:
        if self._fleet is not None:
            unit = self._fleet.unit(unit_id)
            idx = int(np.searchsorted(unit.times, t, side="right")) - 1
            idx = min(max(idx, 0), unit.n_frames - 1)
            return float(unit.total_useful_life_cycles - unit.cycles[idx])
        try:
            return self._table[(unit_id, t)]
        except KeyError:
            raise DataError(f"truth table has no row for unit {unit_id} at t={t!r}") from None

    def flight_class(self, unit_id: int) -> int:
        if self._classes is None:
            raise DataError("truth source has no flight_class information")
        try:
            return self._classes[unit_id]
        except KeyError:
            raise DataError(f"no flight class for unit {unit_id}") from None


def _truth_for_predictions(pred_rows, truth: TruthSource) -> np.ndarray:
    missing = sorted({r["unit"] for r in pred_rows} - truth.unit_ids())
    if missing:
        raise DataError(f"units missing from truth data: {missing}")
    return np.array([truth.rul(r["unit"], r["t_s"]) for r in pred_rows])


# ---------------------------------------------------------------------------
# Commands.


def cmd_synth(args) -> int:
    profile = dataclasses.replace(
        DEFAULT_PROFILE,
        noise=args.noise,
        degradation_gamma=args.gamma,
        tul_cycles=tuple(args.tul_cycles),
        cycle_seconds=tuple(args.cycle_seconds),
    )
    fleet = synthesize_fleet(args.units, args.seed, profile)
    write_fleet_csv(fleet, args.out)
    print(f"wrote {len(fleet)} units, {fleet.n_frames()} frames -> {args.out}")
    return 0


def _echo_trial(trial: Trial) -> None:
    score = "failed" if not math.isfinite(trial.score) else f"{trial.score:.6f}"
    print(f"trial {trial.index:>3} [{trial.phase:>6}] score={score}")


def _write_search_outputs(out_dir, outcome, level: int, seed: int) -> None:
    best = outcome.result.best_trial
    summary = {
        "schema_version": SCHEMA_VERSION,
        "level": level,
        "seed": seed,
        "n_trials": len(outcome.result.trials),
        "best_index": None if best is None else best.index,
        "best_score": None if best is None else best.score,
        "best_config": None if best is None else {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in best.config.items()
        },
        "fold_scores": None if outcome.cv is None else [
            dataclasses.asdict(f) for f in outcome.cv.fold_scores
        ],
    }
    _write_json(os.path.join(out_dir, "best.json"), summary)
    if outcome.members:
        save_ensemble(
            os.path.join(out_dir, "ensemble"), outcome.members,
            plan=outcome.plan, extra={"level_seed": seed},
        )


def cmd_optimize(args) -> int:
    cfg = load_run_config(args.config, level=args.level, out=args.out)
    if cfg.budget < 1:
        raise ConfigError("optimize needs budget >= 1")
    fleet = _load_dataset(cfg)
    space = _space_for(cfg)
    try:
        seed_points = [space.canonicalize(p) for p in cfg.seed_points]
        for p in seed_points:
            space.validate(p)
    except ValueError as exc:
        raise ConfigError(f"bad seed_points: {exc}") from None

    os.makedirs(cfg.out_dir, exist_ok=True)
    history = os.path.join(cfg.out_dir, "history.jsonl")
    if not args.resume and os.path.exists(history):
        os.remove(history)

    common = dict(
        space=space,
        n_filters=cfg.n_filters,
        train_overrides=cfg.training or None,
        n_workers=_n_workers(),
        history_path=history,
        on_trial=_echo_trial,
    )
    if cfg.level == 1:
        outcome = optimize_level1(
            fleet, cfg.budget, cfg.n_random, cfg.seed,
            plan=_plan_from_config(cfg, fleet),
            window_stride=cfg.window_stride,
            seed_points=seed_points,
            **common,
        )
    else:
        bundle = args.l1_ensemble or cfg.l1_ensemble
        if not bundle:
            raise ConfigError("level 2 needs --l1-ensemble (or l1_ensemble in the config)")
        l1_members, plan, l1_hp = _load_l1_bundle(bundle)
        outcome = optimize_level2(
            fleet, l1_members, plan, cfg.budget, cfg.n_random, cfg.seed,
            l1_best_hp=l1_hp,
            seed_points=seed_points or None,
            **common,
        )

    _write_search_outputs(cfg.out_dir, outcome, cfg.level, cfg.seed)
    if outcome.result.best_trial is None:
        raise TrainingError("every trial failed; no model to keep")
    print(
        f"best trial {outcome.result.best_trial.index} "
        f"score={outcome.result.best_score:.6f} -> {cfg.out_dir}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, level=args.level, out=args.out)
    if not cfg.hyperparameters:
        raise ConfigError("train needs a 'hyperparameters' object in the config")
    fleet = _load_dataset(cfg)
    space = _space_for(cfg)
    try:
        hp = space.canonicalize(cfg.hyperparameters)
        space.validate(hp)
    except ValueError as exc:
        raise ConfigError(f"bad hyperparameters: {exc}") from None

    n_workers = _n_workers()
    if cfg.level == 1:
        plan = _plan_from_config(cfg, fleet)
        cv = cross_validate_level1(
            fleet, hp, plan, cfg.seed,
            n_filters=cfg.n_filters, window_stride=cfg.window_stride,
            train_overrides=cfg.training or None, n_workers=n_workers,
        )
    else:
        bundle = args.l1_ensemble or cfg.l1_ensemble
        if not bundle:
            raise ConfigError("level 2 needs --l1-ensemble (or l1_ensemble in the config)")
        l1_members, plan, _ = _load_l1_bundle(bundle)
        cv = cross_validate_level2(
            fleet, hp, plan, l1_members, cfg.seed,
            n_filters=cfg.n_filters,
            train_overrides=cfg.training or None, n_workers=n_workers,
        )

    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_json(os.path.join(cfg.out_dir, "cv.json"), {
        "schema_version": SCHEMA_VERSION,
        "level": cfg.level,
        "seed": cfg.seed,
        "score": cv.score,
        "fold_scores": [dataclasses.asdict(f) for f in cv.fold_scores],
    })
    save_ensemble(
        os.path.join(cfg.out_dir, "ensemble"), cv.members,
        plan=plan, extra={"level_seed": cfg.seed},
    )
    print(f"cross-validation score {cv.score:.6f} ({plan.k} folds) -> {cfg.out_dir}")
    return 0


def cmd_encode(args) -> int:
    members, manifest = load_ensemble(_resolve_bundle_dir(args.ensemble))
    if manifest.get("level") != 1:
        raise ConfigError("encode needs a level-1 ensemble bundle")
    fleet = load_fleet_csv(args.data)
    which = range(len(members)) if args.member < 0 else [args.member]
    if args.member >= len(members):
        raise ConfigError(f"member {args.member} does not exist (k={len(members)})")
    width = members[0].encoding_width
    header = ["unit", "member", "t_s"] + [f"e_{i}" for i in range(width)]
    rows = []
    encoded_any = False
    for unit in sorted(fleet.units, key=lambda u: u.unit_id):
        for mi in which:
            member = members[mi]
            if unit.n_frames <= member.window_len:
                continue
            track = encode_unit(member, unit, stride=args.stride)
            encoded_any = True
            for j in range(track.times.shape[0]):
                rows.append([unit.unit_id, mi, float(track.times[j])] + list(track.rows[j]))
    if not encoded_any:
        raise DataError("no unit is long enough to encode")
    _write_rows(args.out, header, rows)
    print(f"wrote {len(rows)} encodings (width {width}) -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    members, _ = load_ensemble(_resolve_bundle_dir(args.ensemble))
    fleet = load_fleet_csv(args.data)
    k = len(members)

    if args.points:
        points = _load_points(args.points)
    else:
        points = [
            (u.unit_id, float(u.times[-1]))
            for u in sorted(fleet.units, key=lambda x: x.unit_id)
        ]

    by_unit: dict[int, list[float]] = {}
    for uid, t in points:
        by_unit.setdefault(uid, []).append(t)
    tables = {
        uid: predict_ensemble(members, fleet.unit(uid), np.array(times))
        for uid, times in by_unit.items()
    }
    consumed: dict[int, int] = {uid: 0 for uid in by_unit}

    def fmt(x: float):
        return int(round(x)) if args.round else float(x)

    rows = []
    for uid, t in points:
        j = consumed[uid]
        consumed[uid] += 1
        table = tables[uid]
        rows.append(
            [uid, float(t), fmt(table.mean[j]), fmt(table.lo[j]), fmt(table.hi[j])]
            + [fmt(v) for v in table.member_preds[:, j]]
        )
    header = ["unit", "t_s", "rul_mean", "rul_lo", "rul_hi"] + [f"member_{i}" for i in range(k)]
    _write_rows(args.out, header, rows)
    print(f"wrote {len(rows)} predictions -> {args.out}")
    return 0


def cmd_score(args) -> int:
    pred_rows = _load_predictions(args.predictions)
    truth = TruthSource.load(args.truth)
    y_true = _truth_for_predictions(pred_rows, truth)
    y_pred = np.array([r["mean"] for r in pred_rows])

    reports = {"all": challenge_score(y_true, y_pred)}
    if args.group_by == "flight_class":
        classes = np.array([truth.flight_class(r["unit"]) for r in pred_rows])
        for c in sorted(set(int(x) for x in classes)):
            mask = classes == c
            reports[str(c)] = challenge_score(y_true[mask], y_pred[mask])

    for name in sorted(reports):
        r = reports[name]
        print(
            f"{name}: m={r.m} rmse={r.rmse:.6f} mae={r.mae:.6f} "
            f"nasa={r.nasa:.6f} combined={r.combined:.6f}"
        )
    _write_json(args.out, {
        "schema_version": SCHEMA_VERSION,
        "predictions": os.path.basename(args.predictions),
        "reports": {k: dataclasses.asdict(v) for k, v in sorted(reports.items())},
    })
    return 0


def _best_so_far(scores):
    best, out = math.inf, []
    for s in scores:
        if s is not None and s < best:
            best = s
        out.append(None if math.isinf(best) else best)
    return out


def cmd_plot_export(args) -> int:
    from . import figures  # heavy import, only the report path needs it

    os.makedirs(args.out, exist_ok=True)
    draw = not args.no_figures

    if args.kind == "convergence":
        if not args.history:
            raise ConfigError("kind=convergence needs --history")
        recs = []
        with open(args.history, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    recs.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{args.history}: line {lineno}: {exc}") from None
        if not recs:
            raise DataError(f"{args.history}: empty history")
        scores = [r.get("score") for r in recs]
        best = _best_so_far(scores)
        rows = [
            [r["index"], r["phase"], "" if s is None else s, "" if b is None else b]
            for r, s, b in zip(recs, scores, best)
        ]
        _write_rows(os.path.join(args.out, "convergence.csv"),
                    ["trial", "phase", "score", "best_so_far"], rows)
        if draw:
            figures.render_convergence(
                os.path.join(args.out, "convergence.png"),
                [r["index"] for r in recs],
                np.array([math.inf if s is None else s for s in scores], dtype=np.float64),
                np.array([math.nan if b is None else b for b in best], dtype=np.float64),
            )
        print(f"exported {len(rows)} trials -> {args.out}")
        return 0

    if not args.predictions:
        raise ConfigError(f"kind={args.kind} needs --predictions")
    if not args.truth:
        raise ConfigError(f"kind={args.kind} needs --truth")
    truth = TruthSource.load(args.truth)

    if args.kind == "trajectory":
        pred_rows = _load_predictions(args.predictions[0])
        y_true = _truth_for_predictions(pred_rows, truth)
        units = sorted({r["unit"] for r in pred_rows})
        for uid in units:
            sel = [(r, yt) for r, yt in zip(pred_rows, y_true) if r["unit"] == uid]
            rows = [
                [r["t_s"], yt, r["mean"], r["lo"], r["hi"]] for r, yt in sel
            ]
            base = os.path.join(args.out, f"trajectory_unit_{uid}")
            _write_rows(base + ".csv", ["t", "rul_true", "rul_mean", "rul_lo", "rul_hi"], rows)
            if draw:
                arr = np.array(rows, dtype=np.float64)
                figures.render_trajectory(
                    base + ".png", arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], uid
                )
        print(f"exported {len(units)} unit trajectories -> {args.out}")
        return 0

    if args.kind == "score_vs_rul":
        pred_rows = _load_predictions(args.predictions[0])
        y_true = _truth_for_predictions(pred_rows, truth)
        y_pred = np.array([r["mean"] for r in pred_rows])
        contrib = challenge_penalty(y_pred - y_true)
        rows = [[t, c] for t, c in zip(y_true, contrib)]
        _write_rows(os.path.join(args.out, "score_vs_rul.csv"),
                    ["rul_true", "score_contribution"], rows)
        if draw:
            figures.render_score_vs_rul(
                os.path.join(args.out, "score_vs_rul.png"), y_true, contrib
            )
        print(f"exported {len(rows)} contributions -> {args.out}")
        return 0

    # class_bars: one (class, label, score) row per predictions file and class
    labels = args.labels or [
        os.path.splitext(os.path.basename(p))[0] for p in args.predictions
    ]
    if len(labels) != len(args.predictions):
        raise ConfigError("--labels must match --predictions one to one")
    bar_rows = []
    for path, label in zip(args.predictions, labels):
        pred_rows = _load_predictions(path)
        y_true = _truth_for_predictions(pred_rows, truth)
        y_pred = np.array([r["mean"] for r in pred_rows])
        classes = np.array([truth.flight_class(r["unit"]) for r in pred_rows])
        for c in sorted(set(int(x) for x in classes)):
            mask = classes == c
            rep = challenge_score(y_true[mask], y_pred[mask])
            bar_rows.append([c, label, rep.combined])
    _write_rows(os.path.join(args.out, "class_bars.csv"),
                ["class", "level", "score"], bar_rows)
    if draw:
        figures.render_class_bars(os.path.join(args.out, "class_bars.png"), bar_rows)
    print(f"exported {len(bar_rows)} class scores -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulforge",
        description="Remaining-useful-life estimation with stacked dilated-conv networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic run-to-failure fleet CSV")
    p.add_argument("--units", type=int, required=True, help="number of units")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="output fleet CSV path")
    p.add_argument("--noise", type=float, default=DEFAULT_PROFILE.noise,
                   help="noise scale (0 disables)")
    p.add_argument("--gamma", type=float, default=DEFAULT_PROFILE.degradation_gamma,
                   help="degradation trend exponent")
    p.add_argument("--tul-cycles", type=int, nargs=2, metavar=("LO", "HI"),
                   default=list(DEFAULT_PROFILE.tul_cycles), help="useful-life range, cycles")
    p.add_argument("--cycle-seconds", type=int, nargs=2, metavar=("LO", "HI"),
                   default=list(DEFAULT_PROFILE.cycle_seconds), help="cycle duration range")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="search hyperparameters with cross-validation")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--level", type=int, choices=(1, 2), help="model level (overrides config)")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--resume", action="store_true",
                   help="continue from the existing history file")
    p.add_argument("--l1-ensemble", help="level-1 bundle (dir or manifest path), level 2 only")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("train", help="train a fold ensemble for fixed hyperparameters")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--level", type=int, choices=(1, 2), help="model level (overrides config)")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--l1-ensemble", help="level-1 bundle (dir or manifest path), level 2 only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="export hidden-layer encodings of a fleet")
    p.add_argument("--ensemble", required=True, help="level-1 bundle (dir or manifest path)")
    p.add_argument("--data", required=True, help="fleet CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--stride", type=int, default=1, help="seconds between encodings")
    p.add_argument("--member", type=int, default=-1,
                   help="member index; default all members")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("predict", help="ensemble RUL predictions with intervals")
    p.add_argument("--ensemble", required=True, help="bundle (dir or manifest path)")
    p.add_argument("--data", required=True, help="fleet CSV")
    p.add_argument("--out", required=True, help="output prediction CSV")
    p.add_argument("--points", help="CSV of unit,t_s rows; default: each unit's final time")
    p.add_argument("--round", action="store_true",
                   help="round RULs to integer cycles (submission mode)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score a prediction CSV against ground truth")
    p.add_argument("--predictions", required=True, help="prediction CSV")
    p.add_argument("--truth", required=True,
                   help="fleet CSV or truth table (unit,t_s,rul_true[,flight_class])")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--group-by", choices=("flight_class",),
                   help="also report per flight class")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("plot-export", help="export chart-ready series (and figures)")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS,
                   help=f"what to export: {', '.join(PLOT_KINDS)}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--predictions", nargs="+", help="prediction CSV(s)")
    p.add_argument("--truth", help="fleet CSV or truth table")
    p.add_argument("--history", help="trial history JSONL (kind=convergence)")
    p.add_argument("--labels", nargs="+", help="labels for class_bars inputs")
    p.add_argument("--no-figures", action="store_true",
                   help="write only the delimited series, no images")
    p.set_defaults(func=cmd_plot_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, ParseError, OrderingError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ShapeError, TrainingError, EnsembleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except RulforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
