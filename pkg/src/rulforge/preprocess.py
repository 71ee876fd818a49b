"""Window extraction and feature normalization.

Level-1 model inputs are time-window slabs cut from the raw 1 Hz trace:
a window ending at frame ``t_end`` covers the ``window_len`` most recent
frames and is labeled with the remaining useful life at its end,

    rul(t_end) = total_useful_life_cycles - cycle(t_end),

with no clamping or plateau. Within a unit of ``T`` frames the valid
window ends are ``t_end = window_len, window_len + stride, ... <= T - 1``
(0-based), so at stride 1 a unit contributes exactly ``T - window_len``
windows; units shorter than ``window_len + 1`` frames contribute none
and are skipped.

Features are standardized per variable with statistics estimated on the
training split only (population standard deviation); variables that are
constant in the training split map to 0 everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .fleet import N_VARIABLES, Fleet, UnitRecord


def window_end_indices(n_frames: int, window_len: int, stride: int = 1) -> np.ndarray:
    """Valid window-end frame indices for a unit of `n_frames` frames."""
    if window_len < 1:
        raise ValueError(f"window_len must be >= 1, got {window_len}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return np.arange(window_len, n_frames, stride, dtype=np.int64)


def window_count(n_frames: int, window_len: int, stride: int = 1) -> int:
    """Number of windows a unit contributes; 0 when too short."""
    return int(window_end_indices(n_frames, window_len, stride).shape[0])


def label_rul(unit: UnitRecord, t_end_index: int) -> float:
    """Remaining useful life, in cycles, at the given frame index."""
    return float(unit.total_useful_life_cycles - unit.cycles[t_end_index])


@dataclass(frozen=True)
class WindowSet:
    """A batch of extracted windows with labels and provenance.

    ``inputs`` has shape (n, window_len, n_variables); ``labels`` holds
    the RUL at each window end; ``unit_ids`` and ``t_end_s`` identify
    where each window came from.
    """

    inputs: np.ndarray
    labels: np.ndarray
    unit_ids: np.ndarray
    t_end_s: np.ndarray
    window_len: int

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.inputs.ndim != 3:
            raise ValueError(f"inputs must be 3-d, got shape {self.inputs.shape}")
        if self.labels.shape != (n,) or self.unit_ids.shape != (n,) or self.t_end_s.shape != (n,):
            raise ValueError("window metadata arrays disagree with inputs length")

    @property
    def n_windows(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "WindowSet":
        return WindowSet(
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            unit_ids=self.unit_ids[idx],
            t_end_s=self.t_end_s[idx],
            window_len=self.window_len,
        )

    def normalized(self, normalizer: "Normalizer") -> "WindowSet":
        return WindowSet(
            inputs=normalizer.transform(self.inputs),
            labels=self.labels,
            unit_ids=self.unit_ids,
            t_end_s=self.t_end_s,
            window_len=self.window_len,
        )


def extract_windows(source, window_len: int, stride: int = 1) -> WindowSet:
    """Cut labeled windows from a fleet (or iterable of units).

    Units too short to hold a single valid window are skipped; if no
    unit contributes anything, DataError is raised.
    """
    units = source.units if isinstance(source, Fleet) else tuple(source)
    inputs, labels, unit_ids, t_end_s = [], [], [], []
    for u in units:
        ends = window_end_indices(u.n_frames, window_len, stride)
        for t_end in ends:
            inputs.append(u.values[t_end - window_len + 1 : t_end + 1])
            labels.append(u.total_useful_life_cycles - u.cycles[t_end])
            unit_ids.append(u.unit_id)
            t_end_s.append(u.times[t_end])
    if not inputs:
        raise DataError(
            f"no unit has more than {window_len} frames; nothing to extract"
        )
    return WindowSet(
        inputs=np.array(inputs, dtype=np.float64),
        labels=np.array(labels, dtype=np.float64),
        unit_ids=np.array(unit_ids, dtype=np.int64),
        t_end_s=np.array(t_end_s, dtype=np.float64),
        window_len=window_len,
    )


class Normalizer:
    """Per-variable standardization with training-split statistics.

    Uses the population standard deviation. Variables whose training
    spread is below ``eps`` are treated as constant and map to 0.
    """

    EPS = 1e-8

    __slots__ = ("mean", "std", "_scale")

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError(f"bad statistics shapes {mean.shape} / {std.shape}")
        if np.any(std < 0) or not np.all(np.isfinite(mean)) or not np.all(np.isfinite(std)):
            raise ValueError("normalizer statistics must be finite, std non-negative")
        self.mean = mean
        self.std = std
        self._scale = np.where(std < self.EPS, 0.0, 1.0 / np.where(std < self.EPS, 1.0, std))

    @classmethod
    def fit(cls, frames: np.ndarray) -> "Normalizer":
        """Estimate statistics from a (n_frames, n_variables) matrix."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise ValueError(f"need a non-empty 2-d frame matrix, got shape {frames.shape}")
        return cls(frames.mean(axis=0), frames.std(axis=0))

    @classmethod
    def fit_fleet(cls, source) -> "Normalizer":
        """Estimate statistics from every frame of every unit in a fleet."""
        units = source.units if isinstance(source, Fleet) else tuple(source)
        if not units:
            raise ValueError("cannot fit a normalizer on an empty fleet")
        return cls.fit(np.concatenate([u.values for u in units], axis=0))

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Standardize an (..., n_variables) array."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise ValueError(
                f"last axis is {x.shape[-1]}, normalizer was fit on {self.mean.shape[0]} variables"
            )
        return (x - self.mean) * self._scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mean"]), np.array(d["std"]))

    def __eq__(self, other):
        return (
            isinstance(other, Normalizer)
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def __repr__(self):
        return f"Normalizer(n_variables={self.mean.shape[0]})"


def fit_unit_normalizer(units) -> Normalizer:
    """Convenience wrapper kept for symmetry with per-fold refits."""
    return Normalizer.fit_fleet(units)
