import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtscgan.data import (ClassSignal, DataError, Dataset, SplitSpec, SyntheticSpec, denormalize,
                          dominant_frequency, filter_classes, fit_normalizer, generate_synthetic, load_csv,
                          make_condition_categorical, make_condition_series, make_split, normalize, save_csv)


def small_ds(n_per=10, seed=0):
    return generate_synthetic(SyntheticSpec(timesteps=20, samples_per_class=n_per, seed=seed))


def write_sidecar(path, channels=2, timesteps=3, names=("a", "b"), **extra):
    path.write_text(json.dumps({"channels": channels, "timesteps": timesteps,
                                "class_names": list(names), **extra}))


# csv

def test_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(5, 2, 3)) * 10.0 ** rng.integers(-8, 8, (5, 2, 3)),
                 np.array([0, 1, 1, 0, 1]), ("a", "b"))
    save_csv(ds, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv")
    assert back.values.tobytes() == ds.values.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.class_names == ds.class_names


def test_csv_channel_major(tmp_path):
    (tmp_path / "s.csv").write_text("1,1,2,3,4,5,6\n")
    write_sidecar(tmp_path / "s.json")
    ds = load_csv(tmp_path / "s.csv")
    assert len(ds) == 1
    np.testing.assert_array_equal(ds.values[0], [[1, 2, 3], [4, 5, 6]])
    assert ds.labels[0] == 1


def test_csv_errors(tmp_path):
    write_sidecar(tmp_path / "s.json")
    f = tmp_path / "s.csv"
    f.write_text("")
    with pytest.raises(DataError, match="no samples"):
        load_csv(f)
    f.write_text("0,1,2,3,4,5,6\n0,1,2,3\n")
    with pytest.raises(DataError, match=":2:.*arity|:2: expected"):
        load_csv(f)
    f.write_text("0,1,2,x,4,5,6\n")
    with pytest.raises(DataError, match="non-numeric"):
        load_csv(f)
    f.write_text("2,1,2,3,4,5,6\n")
    with pytest.raises(DataError, match="unknown class id 2"):
        load_csv(f)


def test_csv_keep_classes(tmp_path):
    (tmp_path / "s.csv").write_text("0,1,1,1,1,1,1\n1,2,2,2,2,2,2\n2,3,3,3,3,3,3\n")
    write_sidecar(tmp_path / "s.json", names=("a", "b", "c"), keep_classes=["c", "a"])
    ds = load_csv(tmp_path / "s.csv")
    assert ds.class_names == ("c", "a")
    np.testing.assert_array_equal(ds.labels, [1, 0])
    with pytest.raises(DataError):
        filter_classes(ds, ["zzz"])


def test_dataset_immutable():
    ds = small_ds()
    with pytest.raises(ValueError):
        ds.values[0, 0, 0] = 1.0


# normalisation

def test_normalize_moments_and_round_trip():
    rng = np.random.default_rng(0)
    vals = 5.0 + rng.normal(size=(50, 3, 40)) * np.array([1.0, 3.0, 0.2])[:, None]
    ds = Dataset(vals, np.zeros(50, int), ("x",))
    norm = normalize(ds, fit_normalizer(ds))
    per_ch = norm.values.transpose(1, 0, 2).reshape(3, -1)
    assert np.abs(per_ch.mean(axis=1)).max() < 1e-9
    assert np.abs(per_ch.std(axis=1) - 1).max() < 1e-6
    np.testing.assert_allclose(denormalize(norm).values, vals, atol=1e-10)


def test_normalize_twice_forbidden():
    ds = small_ds()
    n = normalize(ds, fit_normalizer(ds))
    with pytest.raises(DataError, match="already"):
        normalize(n, fit_normalizer(ds))


def test_zero_variance_channel_named():
    vals = np.random.default_rng(0).normal(size=(4, 3, 5))
    vals[:, 1] = 2.0
    with pytest.raises(DataError, match="channel 1"):
        fit_normalizer(Dataset(vals, np.zeros(4, int), ("x",)))


# splits

def test_split_sizes_and_determinism():
    ds = Dataset(np.zeros((100, 1, 2)), np.arange(100) % 2, ("a", "b"))
    a = make_split(ds, SplitSpec(seed=3))
    assert tuple(len(p) for p in a) == (70, 15, 15)
    b = make_split(ds, SplitSpec(seed=3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.values, y.values)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(3, 40), min_size=1, max_size=4), st.integers(0, 1000), st.booleans())
def test_split_is_partition_and_stratified(counts, seed, stratified):
    labels = np.repeat(np.arange(len(counts)), counts)
    n = len(labels)
    ids = np.arange(n, dtype=float).reshape(n, 1, 1)
    ds = Dataset(ids, labels, tuple(str(i) for i in range(len(counts))))
    parts = make_split(ds, SplitSpec(seed=seed, stratified=stratified))
    got = np.concatenate([p.values.reshape(-1) for p in parts])
    assert sorted(got.tolist()) == list(range(n))
    ideal = np.array([0.7, 0.15, 0.15]) * n
    assert np.all(np.abs([len(p) for p in parts] - ideal) < 1)
    if stratified:
        for c, cnt in enumerate(counts):
            for frac, p in zip((0.7, 0.15, 0.15), parts):
                assert abs(np.sum(p.labels == c) - frac * cnt) < 2


def test_stratified_balanced_within_one():
    ds = small_ds(n_per=50)
    for p, frac in zip(make_split(ds), (0.7, 0.15, 0.15)):
        assert np.all(np.abs(p.class_counts() - frac * 50) <= 1)


def test_split_small_class_error():
    ds = Dataset(np.zeros((5, 1, 2)), [0, 0, 0, 1, 1], ("a", "b"))
    with pytest.raises(DataError):
        make_split(ds)
    with pytest.raises(DataError):
        SplitSpec(fractions=(0.5, 0.5, 0.1))


# conditions

def test_condition_categorical():
    np.testing.assert_array_equal(make_condition_categorical(1, 3).one_hot, [[0, 1, 0]])
    np.testing.assert_array_equal(make_condition_categorical(0, 1).one_hot, [[1]])
    with pytest.raises(ValueError):
        make_condition_categorical(3, 3)


def test_condition_series():
    x = np.arange(30.0).reshape(3, 10)
    cond, target = make_condition_series(x, [0, 1], [2])
    assert cond.values.shape == (1, 2, 10) and target.shape == (1, 10)
    np.testing.assert_array_equal(target[0], x[2])
    with pytest.raises(ValueError):
        make_condition_series(x, [0], [0])
    with pytest.raises(ValueError):
        make_condition_series(x, [], [0, 1, 2])
    with pytest.raises(ValueError):
        make_condition_series(x, [0], [5])


# synthetic

def test_synthetic_exact_sinusoid():
    spec = SyntheticSpec(classes=(ClassSignal(3.0, 2.0, (1.0,), 0.0),), class_names=("s",), channels=1,
                         timesteps=150, samples_per_class=2, random_phase=False, warp=(1.0, 1.0))
    x = generate_synthetic(spec).values[0, 0]
    t = np.arange(150) / 150
    basis = np.stack([np.sin(2 * np.pi * 3 * t), np.cos(2 * np.pi * 3 * t)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    assert np.abs(basis @ coef - x).max() < 1e-10
    assert np.hypot(*coef) == pytest.approx(2.0)


def test_synthetic_counts_and_determinism():
    spec = SyntheticSpec(samples_per_class=200, timesteps=30)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert len(a) == 600
    np.testing.assert_array_equal(a.values, b.values)
    with pytest.raises(DataError):
        SyntheticSpec(classes=(ClassSignal(2.0), ClassSignal(2.0)), class_names=("a", "b"))
    with pytest.raises(DataError):
        SyntheticSpec(classes=(ClassSignal(2.0, noise_std=-1.0),), class_names=("a",))


def test_synthetic_oracle_separates_2_vs_5():
    spec = SyntheticSpec(classes=(ClassSignal(2.0), ClassSignal(5.0)), class_names=("a", "b"),
                         timesteps=150, samples_per_class=100)
    ds = generate_synthetic(spec)
    pred = (dominant_frequency(ds.values) > 3.5).astype(int)
    assert np.all(pred == ds.labels)


def test_synthetic_coupling():
    spec = SyntheticSpec(timesteps=40, samples_per_class=5, coupling=((2, 0, -0.5),), coupling_noise=0.0)
    v = generate_synthetic(spec).values
    np.testing.assert_allclose(v[:, 2], -0.5 * v[:, 0])
