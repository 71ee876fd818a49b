"""Run-to-failure fleet data: in-memory types, CSV ingest/export, synthesis.

A fleet is a set of engine units, each recorded from healthy state until
failure. Every unit carries a 1 Hz multivariate trace of 20 input
variables (4 operating conditions, 14 sensed physical quantities, and 2
auxiliary channels), a per-frame flight-cycle index, and a flight class
derived from flight duration (1: short, 2: medium, 3: long). The total
useful life (TUL) of a unit, in cycles, is the highest cycle index it
reaches before failure.

The on-disk format is a single CSV per fleet:

    unit,cycle,time_s,alt,Mach,TRA,T2,Wf,Nf,Nc,T24,T30,T48,T50,P15,P2,
    P21,P24,Ps30,P40,P50,Fc,hs

rows sorted by (unit, time_s), UTF-8, `.` decimal separator. Floats are
written with repr so that a write/read round trip is value-exact.

For desk-scale experiments where real exports are unavailable,
``synthesize_fleet`` builds a deterministic stand-in fleet: per-variable
baselines, a power-law degradation trend on a subset of sensed channels,
a within-cycle flight profile on the operating-condition channels, and
Gaussian noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, OrderingError, ParseError, SchemaError

# Fixed variable order; the CSV columns and all value arrays follow it.
W_VARIABLES = ("alt", "Mach", "TRA", "T2")
XS_VARIABLES = (
    "Wf", "Nf", "Nc", "T24", "T30", "T48", "T50",
    "P15", "P2", "P21", "P24", "Ps30", "P40", "P50",
)
AUX_VARIABLES = ("Fc", "hs")
VARIABLES = W_VARIABLES + XS_VARIABLES + AUX_VARIABLES
N_VARIABLES = len(VARIABLES)

CSV_HEADER = ("unit", "cycle", "time_s") + VARIABLES

_FC_COL = VARIABLES.index("Fc")
_HS_COL = VARIABLES.index("hs")


@dataclass(frozen=True)
class SensorFrame:
    """One 1 Hz sample of a unit: operating conditions, sensors, auxiliary."""

    time_s: float
    cycle: int
    w: tuple[float, ...]    # alt, Mach, TRA, T2
    xs: tuple[float, ...]   # 14 sensed quantities
    aux: tuple[float, ...]  # Fc, hs


class UnitRecord:
    """Complete run-to-failure history of a single engine unit.

    Frames are stored column-wise as read-only numpy arrays: ``times``
    (seconds from unit start, strictly increasing at 1 Hz), ``cycles``
    (non-decreasing, starting at 1), and ``values`` with one row per
    frame and one column per entry of ``VARIABLES``.
    """

    __slots__ = ("unit_id", "flight_class", "times", "cycles", "values")

    def __init__(self, unit_id, flight_class, times, cycles, values):
        times = np.ascontiguousarray(times, dtype=np.float64)
        cycles = np.ascontiguousarray(cycles, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.float64)
        n = times.shape[0]
        if n == 0:
            raise ValueError(f"unit {unit_id}: no frames")
        if cycles.shape != (n,) or values.shape != (n, N_VARIABLES):
            raise ValueError(
                f"unit {unit_id}: inconsistent frame arrays "
                f"(times {times.shape}, cycles {cycles.shape}, values {values.shape})"
            )
        if flight_class not in (1, 2, 3):
            raise ValueError(f"unit {unit_id}: flight class {flight_class} not in {{1,2,3}}")
        if n > 1:
            dt = np.diff(times)
            if np.any(dt <= 0):
                raise OrderingError(f"unit {unit_id}: timestamps not strictly increasing")
            if np.any(np.abs(dt - 1.0) > 1e-6):
                raise OrderingError(f"unit {unit_id}: sampling is not 1 Hz")
        if cycles[0] != 1:
            raise ValueError(f"unit {unit_id}: cycle index must start at 1, got {cycles[0]}")
        if np.any(np.diff(cycles) < 0):
            raise ValueError(f"unit {unit_id}: cycle index must be non-decreasing")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"unit {unit_id}: non-finite sensor value")
        for a in (times, cycles, values):
            a.setflags(write=False)
        self.unit_id = int(unit_id)
        self.flight_class = int(flight_class)
        self.times = times
        self.cycles = cycles
        self.values = values

    @property
    def total_useful_life_cycles(self) -> int:
        return int(self.cycles[-1])

    @property
    def n_frames(self) -> int:
        return self.times.shape[0]

    def frame(self, i: int) -> SensorFrame:
        row = self.values[i]
        return SensorFrame(
            time_s=float(self.times[i]),
            cycle=int(self.cycles[i]),
            w=tuple(row[:4]),
            xs=tuple(row[4:18]),
            aux=tuple(row[18:]),
        )

    def iter_frames(self):
        for i in range(self.n_frames):
            yield self.frame(i)

    def with_values(self, values: np.ndarray) -> "UnitRecord":
        """Copy of this unit with the value matrix replaced (same times/cycles)."""
        return UnitRecord(self.unit_id, self.flight_class, self.times, self.cycles, values)

    def __eq__(self, other):
        return (
            isinstance(other, UnitRecord)
            and self.unit_id == other.unit_id
            and self.flight_class == other.flight_class
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.cycles, other.cycles)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return (
            f"UnitRecord(unit_id={self.unit_id}, flight_class={self.flight_class}, "
            f"frames={self.n_frames}, tul={self.total_useful_life_cycles})"
        )


class Fleet:
    """An id-keyed collection of units."""

    __slots__ = ("name", "_units")

    def __init__(self, units, name: str = ""):
        units = tuple(units)
        ids = [u.unit_id for u in units]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate unit ids: {dupes}")
        self.name = name
        self._units = units

    @property
    def units(self) -> tuple[UnitRecord, ...]:
        return self._units

    @property
    def unit_ids(self) -> tuple[int, ...]:
        return tuple(u.unit_id for u in self._units)

    def unit(self, unit_id: int) -> UnitRecord:
        for u in self._units:
            if u.unit_id == unit_id:
                return u
        raise DataError(f"no unit {unit_id} in fleet {self.name!r}")

    def n_frames(self) -> int:
        return sum(u.n_frames for u in self._units)

    def __len__(self):
        return len(self._units)

    def __iter__(self):
        return iter(self._units)

    def __eq__(self, other):
        if not isinstance(other, Fleet):
            return NotImplemented
        mine = {u.unit_id: u for u in self._units}
        theirs = {u.unit_id: u for u in other._units}
        if mine.keys() != theirs.keys():
            return False
        return all(mine[k] == theirs[k] for k in mine)

    def __repr__(self):
        return f"Fleet(name={self.name!r}, units={len(self._units)}, frames={self.n_frames()})"


def load_fleet_csv(path) -> Fleet:
    """Load a fleet from the delimited export format.

    Raises SchemaError if the header deviates from ``CSV_HEADER`` (naming
    the offending column), ParseError for unparseable or non-finite cells
    (with the 1-based row number), and OrderingError when timestamps
    within a unit are not strictly increasing at 1 Hz.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty file, no header") from None
        if header != CSV_HEADER:
            missing = [c for c in CSV_HEADER if c not in header]
            extra = [c for c in header if c not in CSV_HEADER]
            if missing:
                raise SchemaError(f"{path}: missing column {missing[0]!r}")
            if extra:
                raise SchemaError(f"{path}: unexpected column {extra[0]!r}")
            raise SchemaError(f"{path}: columns out of order, expected {','.join(CSV_HEADER)}")

        per_unit: dict[int, list[tuple]] = {}
        order: list[int] = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise SchemaError(f"{path}: row {rownum} has {len(row)} fields, expected {len(CSV_HEADER)}")
            try:
                unit_id = int(row[0])
                cycle = int(row[1])
                cells = [float(x) for x in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}: row {rownum}: {exc}") from None
            if not all(math.isfinite(x) for x in cells):
                raise ParseError(f"{path}: row {rownum}: non-finite value")
            if unit_id not in per_unit:
                per_unit[unit_id] = []
                order.append(unit_id)
            per_unit[unit_id].append((cells[0], cycle, cells[1:]))

    units = []
    for unit_id in order:
        rows = per_unit[unit_id]
        times = np.array([r[0] for r in rows])
        cycles = np.array([r[1] for r in rows])
        values = np.array([r[2] for r in rows])
        fc_col = values[:, _FC_COL]
        if np.any(fc_col != fc_col[0]):
            raise ParseError(f"{path}: unit {unit_id}: Fc varies within the unit")
        units.append(UnitRecord(unit_id, int(fc_col[0]), times, cycles, values))
    return Fleet(units, name=str(path))


def write_fleet_csv(fleet: Fleet, path) -> None:
    """Write a fleet in the delimited export format (repr floats, value-exact)."""
    units = sorted(fleet.units, key=lambda u: u.unit_id)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for u in units:
            for i in range(u.n_frames):
                row = [u.unit_id, int(u.cycles[i]), repr(float(u.times[i]))]
                row.extend(repr(float(v)) for v in u.values[i])
                writer.writerow(row)


# ---------------------------------------------------------------------------
# Synthetic fleet generation


@dataclass(frozen=True)
class SynthProfile:
    """Knobs of the synthetic degradation generator.

    ``noise`` scales the per-variable Gaussian noise levels; 0 disables
    noise entirely. ``degradation_gamma`` shapes the trend in life
    fraction: sensed channels drift as (cycle/TUL) ** gamma. ``health_onset``
    is the life fraction past which the hs channel flips from 1 to 0.
    """

    class_probs: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    tul_cycles: tuple[int, int] = (30, 100)
    cycle_seconds: tuple[int, int] = (60, 180)
    class_duration_scale: tuple[float, float, float] = (0.5, 0.75, 1.0)
    degradation_gamma: float = 1.5
    noise: float = 1.0
    health_onset: float = 0.5


DEFAULT_PROFILE = SynthProfile()

# Per-variable healthy-state baselines, in natural units.
_BASELINES = np.array([
    28000.0,  # alt (ft)
    0.78,     # Mach
    72.0,     # TRA (%)
    518.0,    # T2 (degR)
    2.2,      # Wf (pps)
    2100.0,   # Nf (rpm)
    9050.0,   # Nc (rpm)
    555.0,    # T24 (degR)
    1400.0,   # T30 (degR)
    1650.0,   # T48 (degR)
    1180.0,   # T50 (degR)
    15.3,     # P15 (psia)
    14.2,     # P2 (psia)
    21.9,     # P21 (psia)
    24.5,     # P24 (psia)
    312.0,    # Ps30 (psia)
    340.0,    # P40 (psia)
    17.1,     # P50 (psia)
    0.0,      # Fc (set per unit)
    1.0,      # hs
])

# Full-life degradation drift, added as trend * (cycle/TUL)**gamma.
# Six sensed channels degrade: core spools down, temperatures climb,
# HPC static pressure sags.
_TRENDS = np.zeros(N_VARIABLES)
_TRENDS[VARIABLES.index("Nc")] = -45.0
_TRENDS[VARIABLES.index("T24")] = 9.0
_TRENDS[VARIABLES.index("T30")] = 28.0
_TRENDS[VARIABLES.index("T48")] = 55.0
_TRENDS[VARIABLES.index("T50")] = 32.0
_TRENDS[VARIABLES.index("Ps30")] = -8.5

DEGRADED_VARIABLES = tuple(VARIABLES[i] for i in np.flatnonzero(_TRENDS))

# Per-variable noise standard deviations (scaled by SynthProfile.noise).
_NOISE_SD = np.abs(_BASELINES) * 0.004
_NOISE_SD[:4] = (150.0, 0.006, 0.8, 1.2)  # operating conditions wander more
_NOISE_SD[_FC_COL] = 0.0
_NOISE_SD[_HS_COL] = 0.0


def _flight_envelope(duration: int) -> np.ndarray:
    """Climb/cruise/descent factor in [0, 1] over one cycle of `duration` seconds."""
    phase = np.arange(duration) / max(duration - 1, 1)
    up = np.clip(phase / 0.15, 0.0, 1.0)
    down = np.clip((1.0 - phase) / 0.15, 0.0, 1.0)
    return np.minimum(up, down)


def synthesize_fleet(n_units: int, seed: int, profile: SynthProfile = DEFAULT_PROFILE) -> Fleet:
    """Generate a deterministic run-to-failure fleet.

    Identical (n_units, seed, profile) arguments yield bit-identical
    fleets. Each unit draws a flight class, a TUL in cycles, and
    per-cycle durations scaled by class (class 3 flies longest); sensed
    channels follow baseline + trend * (cycle/TUL)**gamma + noise.
    """
    if n_units < 1:
        raise ValueError(f"n_units must be >= 1, got {n_units}")
    lo_t, hi_t = profile.tul_cycles
    lo_s, hi_s = profile.cycle_seconds
    if not (1 <= lo_t <= hi_t):
        raise ValueError(f"bad tul_cycles range {profile.tul_cycles}")
    if not (2 <= lo_s <= hi_s):
        raise ValueError(f"bad cycle_seconds range {profile.cycle_seconds}")

    rng = np.random.default_rng(seed)
    units = []
    for unit_id in range(1, n_units + 1):
        fc = int(rng.choice((1, 2, 3), p=profile.class_probs))
        tul = int(rng.integers(lo_t, hi_t + 1))
        scale = profile.class_duration_scale[fc - 1]
        durations = [
            max(2, int(round(rng.uniform(lo_s, hi_s) * scale)))
            for _ in range(tul)
        ]
        total = sum(durations)

        cycles = np.repeat(np.arange(1, tul + 1), durations)
        times = np.arange(total, dtype=np.float64)
        frac = cycles / tul

        values = np.tile(_BASELINES, (total, 1))
        values += _TRENDS * (frac ** profile.degradation_gamma)[:, None]

        # Operating conditions follow a climb/cruise/descent profile per cycle.
        env = np.concatenate([_flight_envelope(d) for d in durations])
        values[:, 0] = _BASELINES[0] * (0.25 + 0.75 * env)            # alt
        values[:, 1] = _BASELINES[1] * (0.55 + 0.45 * env)            # Mach
        values[:, 2] = _BASELINES[2] * (1.15 - 0.35 * env)            # TRA
        values[:, 3] = _BASELINES[3] - 28.0 * env                     # T2

        if profile.noise > 0:
            values += rng.normal(size=(total, N_VARIABLES)) * (_NOISE_SD * profile.noise)

        values[:, _FC_COL] = float(fc)
        values[:, _HS_COL] = (frac <= profile.health_onset).astype(np.float64)

        units.append(UnitRecord(unit_id, fc, times, cycles, values))
    return Fleet(units, name=f"synth(n={n_units},seed={seed})")


def split_units(fleet: Fleet, unit_ids) -> tuple[Fleet, Fleet]:
    """Split a fleet into (selected, remainder) by unit id.

    Unknown ids raise ValueError listing them. Unit objects are shared,
    not copied.
    """
    wanted = set(int(i) for i in unit_ids)
    known = set(fleet.unit_ids)
    unknown = sorted(wanted - known)
    if unknown:
        raise ValueError(f"unknown unit ids: {unknown}")
    inside = [u for u in fleet.units if u.unit_id in wanted]
    outside = [u for u in fleet.units if u.unit_id not in wanted]
    return (
        Fleet(inside, name=f"{fleet.name}[selected]"),
        Fleet(outside, name=f"{fleet.name}[rest]"),
    )
