import numpy as np
import pytest

from rulforge.errors import DataError
from rulforge.fleet import VARIABLES, synthesize_fleet
from rulforge.preprocess import (
    Normalizer,
    extract_windows,
    fit_unit_normalizer,
    label_rul,
    window_count,
    window_end_indices,
)


def test_window_end_indices_law():
    # stride 1: one window per frame past the first window_len frames
    idx = window_end_indices(100, 30)
    assert idx[0] == 30 and idx[-1] == 99 and len(idx) == 70
    assert window_count(100, 30) == 70
    assert window_count(30, 30) == 0
    assert window_count(10, 30) == 0
    assert window_count(100, 30, stride=7) == len(window_end_indices(100, 30, 7))


def test_extract_windows_alignment(fleet8):
    ws = extract_windows(fleet8, window_len=50, stride=113)
    assert ws.inputs.shape[1:] == (50, len(VARIABLES))
    assert ws.window_len == 50
    # each window's slab is the 50 frames ending at its anchor
    unit = fleet8.unit(int(ws.unit_ids[0]))
    t_end = ws.t_end_s[0]
    k = int(np.searchsorted(unit.times, t_end))
    np.testing.assert_array_equal(ws.inputs[0], unit.values[k - 49 : k + 1])
    assert ws.labels[0] == unit.total_useful_life_cycles - unit.cycles[k]


def test_labels_non_increasing_within_unit(fleet8):
    ws = extract_windows(fleet8, window_len=40, stride=17)
    for uid in np.unique(ws.unit_ids):
        labels = ws.labels[ws.unit_ids == uid]
        assert np.all(np.diff(labels) <= 0)


def test_label_rul_direct(fleet8):
    u = fleet8.units[0]
    assert label_rul(u, u.n_frames - 1) == 0.0
    assert label_rul(u, 0) == u.total_useful_life_cycles - u.cycles[0]


def test_short_units_are_skipped():
    fleet = synthesize_fleet(3, seed=4)
    big = max(u.n_frames for u in fleet) + 1
    with pytest.raises(DataError):
        extract_windows(fleet, window_len=big)


def test_subset_keeps_alignment(fleet8):
    ws = extract_windows(fleet8, window_len=30, stride=301)
    sub = ws.subset(np.array([2, 0]))
    np.testing.assert_array_equal(sub.inputs[0], ws.inputs[2])
    assert sub.labels[1] == ws.labels[0]
    assert sub.unit_ids[0] == ws.unit_ids[2]


def test_normalizer_basic(rng):
    x = rng.normal(loc=5.0, scale=3.0, size=(500, 7))
    norm = Normalizer.fit(x)
    z = norm.transform(x)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(z.std(axis=0) - 1.0) < 1e-9)


def test_normalizer_constant_feature_maps_to_zero(rng):
    x = rng.normal(size=(64, 3))
    x[:, 1] = 42.0
    z = Normalizer.fit(x).transform(x)
    assert np.all(z[:, 1] == 0.0)


def test_normalizer_round_trip_dict(rng):
    norm = Normalizer.fit(rng.normal(size=(40, 5)))
    again = Normalizer.from_dict(norm.to_dict())
    assert norm == again


def test_normalizer_applies_on_trailing_axis(fleet8):
    norm = Normalizer.fit_fleet(fleet8)
    ws = extract_windows(fleet8, window_len=30, stride=401).normalized(norm)
    flat = ws.inputs.reshape(-1, len(VARIABLES))
    assert np.all(np.isfinite(flat))


def test_validation_keeps_training_statistics():
    train = synthesize_fleet(4, seed=21)
    val = synthesize_fleet(4, seed=22)
    train_norm = fit_unit_normalizer(train.units)
    val_norm = fit_unit_normalizer(val.units)
    assert train_norm != val_norm
    stacked = np.concatenate([u.values for u in val])
    z_train_stats = train_norm.transform(stacked)
    z_refit = val_norm.transform(stacked)
    # the val fleet is not recentred by the training statistics
    assert np.max(np.abs(z_train_stats.mean(axis=0))) > 1e-6
    assert not np.allclose(z_train_stats, z_refit)


def test_normalizer_shape_mismatch(rng):
    norm = Normalizer.fit(rng.normal(size=(10, 4)))
    with pytest.raises(ValueError):
        norm.transform(rng.normal(size=(10, 5)))
