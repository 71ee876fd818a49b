import numpy as np
import pytest

from rulforge.errors import DataError, OrderingError, ParseError, SchemaError
from rulforge.fleet import (
    CSV_HEADER,
    DEFAULT_PROFILE,
    VARIABLES,
    Fleet,
    SynthProfile,
    UnitRecord,
    load_fleet_csv,
    split_units,
    synthesize_fleet,
    write_fleet_csv,
)


def make_unit(unit_id=1, n=10, tul=3, flight_class=2):
    times = np.arange(n, dtype=np.float64)
    cycles = np.minimum(1 + np.arange(n) // max(n // tul, 1), tul)
    cycles[-1] = tul
    values = np.ones((n, len(VARIABLES)))
    return UnitRecord(unit_id, flight_class, times, cycles, values)


def test_header_layout():
    assert CSV_HEADER[:3] == ("unit", "cycle", "time_s")
    assert len(CSV_HEADER) == 23
    assert CSV_HEADER[3:7] == ("alt", "Mach", "TRA", "T2")
    assert CSV_HEADER[-2:] == ("Fc", "hs")


def test_unit_record_validation():
    with pytest.raises(ValueError):
        make_unit(flight_class=4)
    times = np.arange(10.0)
    times[5] = times[4]  # repeated timestamp
    cycles = np.ones(10, dtype=np.int64)
    with pytest.raises(OrderingError):
        UnitRecord(1, 1, times, cycles, np.ones((10, len(VARIABLES))))
    with pytest.raises(OrderingError):
        # 2 Hz sampling is rejected, the pipeline assumes 1 Hz
        UnitRecord(1, 1, np.arange(10) * 0.5, cycles, np.ones((10, len(VARIABLES))))
    cycles2 = np.ones(10, dtype=np.int64)
    cycles2[3] = 0  # cycle counter dips
    with pytest.raises(ValueError):
        UnitRecord(1, 1, np.arange(10.0), cycles2, np.ones((10, len(VARIABLES))))


def test_unit_record_is_immutable():
    u = make_unit()
    with pytest.raises(ValueError):
        u.values[0, 0] = 99.0
    assert u.total_useful_life_cycles == u.cycles[-1]


def test_fleet_duplicate_and_lookup():
    u = make_unit(unit_id=1)
    with pytest.raises(ValueError):
        Fleet([u, make_unit(unit_id=1)])
    fleet = Fleet([u, make_unit(unit_id=2)])
    assert fleet.unit(2).unit_id == 2
    with pytest.raises(DataError):
        fleet.unit(99)


def test_synthesize_deterministic():
    a = synthesize_fleet(4, seed=9)
    b = synthesize_fleet(4, seed=9)
    assert a == b
    assert a != synthesize_fleet(4, seed=10)


def test_synthesize_shape_contract():
    profile = SynthProfile(tul_cycles=(5, 12))
    fleet = synthesize_fleet(6, seed=0, profile=profile)
    assert len(fleet) == 6
    for u in fleet:
        assert u.flight_class in (1, 2, 3)
        assert 5 <= u.total_useful_life_cycles <= 12
        assert u.cycles[0] == 1
        assert u.cycles[-1] == u.total_useful_life_cycles
        assert np.all(np.diff(u.cycles) >= 0)
        assert np.all(np.abs(np.diff(u.times) - 1.0) <= 1e-6)
        # operating-condition flags are constant within a unit
        fc_col = u.values[:, VARIABLES.index("Fc")]
        assert np.all(fc_col == fc_col[0])


def test_degradation_monotone_without_noise():
    profile = SynthProfile(noise=0.0, tul_cycles=(8, 8))
    fleet = synthesize_fleet(2, seed=3, profile=profile)
    u = fleet.units[0]
    t30 = u.values[:, VARIABLES.index("T30")]
    # degradation drives this temperature up over the life
    assert t30[-1] > t30[0]
    nc = u.values[:, VARIABLES.index("Nc")]
    assert nc[-1] < nc[0]


def test_csv_round_trip(tmp_path):
    fleet = synthesize_fleet(3, seed=7)
    p = tmp_path / "fleet.csv"
    write_fleet_csv(fleet, p)
    assert load_fleet_csv(p) == fleet
    # byte-identical rewrite
    blob = p.read_bytes()
    write_fleet_csv(load_fleet_csv(p), p)
    assert p.read_bytes() == blob


def test_csv_header_errors(tmp_path):
    p = tmp_path / "bad.csv"
    header = list(CSV_HEADER)
    header.remove("Mach")
    p.write_text(",".join(header) + "\n")
    with pytest.raises(SchemaError, match="Mach"):
        load_fleet_csv(p)
    header = list(CSV_HEADER) + ["extra_col"]
    p.write_text(",".join(header) + "\n")
    with pytest.raises(SchemaError, match="extra_col"):
        load_fleet_csv(p)


def test_csv_parse_error_reports_row(tmp_path):
    fleet = synthesize_fleet(1, seed=2)
    p = tmp_path / "fleet.csv"
    write_fleet_csv(fleet, p)
    lines = p.read_text().splitlines()
    broken = lines[2].split(",")
    broken[4] = "not_a_number"
    lines[2] = ",".join(broken)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match="row 3"):
        load_fleet_csv(p)


def test_csv_rejects_varying_condition_flag(tmp_path):
    fleet = synthesize_fleet(1, seed=2)
    p = tmp_path / "fleet.csv"
    write_fleet_csv(fleet, p)
    lines = p.read_text().splitlines()
    fc_idx = CSV_HEADER.index("Fc")
    row = lines[5].split(",")
    row[fc_idx] = "9.0"
    lines[5] = ",".join(row)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError):
        load_fleet_csv(p)


def test_split_units():
    fleet = synthesize_fleet(5, seed=1)
    picked, rest = split_units(fleet, [1, 3])
    assert picked.unit_ids == (1, 3)
    assert set(rest.unit_ids) == {2, 4, 5}
    with pytest.raises(ValueError):
        split_units(fleet, [77])


def test_profile_default_sane():
    assert len(DEFAULT_PROFILE.class_probs) == 3
    assert abs(sum(DEFAULT_PROFILE.class_probs) - 1.0) < 1e-12
