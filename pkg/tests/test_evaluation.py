import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtscgan.autodiff import ShapeError
from mtscgan.data import Dataset, SyntheticSpec, fit_normalizer, generate_synthetic, make_split, normalize
from mtscgan.evaluation import (GaussianStats, dtw, extract_features, fid_ramp, frechet_distance,
                                gaussian_stats, histogram_pair, mean_dtw, mts_fid, pca_fit, pca_project,
                                pca_reconstruct, stat_features, train_fcn)


def stats1d(mu, var):
    return GaussianStats(np.array([mu], float), np.array([[var]], float), 10)


# ---------------------------------------------------------------- FID

def test_gaussian_stats_examples():
    s = gaussian_stats(np.array([[0.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_array_equal(s.mu, [1, 0])
    np.testing.assert_array_equal(s.sigma, [[2, 0], [0, 0]])
    np.testing.assert_array_equal(gaussian_stats(np.ones((5, 3))).sigma, 0.0)
    with pytest.raises(ValueError):
        gaussian_stats(np.ones((1, 3)))


def test_frechet_1d_closed_forms():
    assert abs(frechet_distance(stats1d(0, 1), stats1d(1, 1)) - 1.0) <= 1e-10
    assert abs(frechet_distance(stats1d(0, 1), stats1d(0, 4)) - 1.0) <= 1e-10
    for m1, m2, v1, v2 in [(0.3, -2.0, 0.5, 7.0), (5.0, 5.0, 1e-3, 1e3)]:
        ref = (m1 - m2) ** 2 + v1 + v2 - 2 * np.sqrt(v1 * v2)
        assert abs(frechet_distance(stats1d(m1, v1), stats1d(m2, v2)) - ref) <= 1e-10 * max(1, ref)


def test_frechet_commuting_diagonal_closed_form():
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0.1, 3, 6), rng.uniform(0.1, 3, 6)
    m1, m2 = rng.normal(size=6), rng.normal(size=6)
    ref = np.sum((m1 - m2) ** 2) + np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)
    got = frechet_distance(GaussianStats(m1, np.diag(a), 9), GaussianStats(m2, np.diag(b), 9))
    assert got == pytest.approx(ref, abs=1e-10)


def test_frechet_errors():
    with pytest.raises(ValueError):
        frechet_distance(stats1d(0, 1), GaussianStats(np.zeros(2), np.eye(2), 3))
    with pytest.raises(ValueError):
        frechet_distance(stats1d(np.nan, 1), stats1d(0, 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(2, 30))
def test_frechet_properties(seed, d, n):
    rng = np.random.default_rng(seed)
    s1 = gaussian_stats(rng.normal(size=(n, d)) @ rng.normal(size=(d, d)))
    s2 = gaussian_stats(rng.normal(size=(n + 3, d)) * rng.uniform(0.1, 2, d) + 1.0)
    assert frechet_distance(s1, s1) == 0.0
    a, b = frechet_distance(s1, s2), frechet_distance(s2, s1)
    assert a >= 0 and abs(a - b) <= 1e-8 * max(1.0, a)


# ---------------------------------------------------------------- FCN extractor

@pytest.fixture(scope="module")
def synth():
    ds = generate_synthetic(SyntheticSpec(timesteps=64, samples_per_class=60, seed=1))
    tr, va, te = make_split(ds)
    stats = fit_normalizer(tr)
    return tuple(normalize(d, stats) for d in (tr, va, te))


@pytest.fixture(scope="module")
def extractor(synth):
    tr, va, _ = synth
    return train_fcn(tr, va, epochs=30, rng=np.random.default_rng(0))


def test_fcn_reaches_high_val_accuracy(extractor):
    assert extractor.val_accuracy >= 0.95


def test_features_shape_and_determinism(extractor, synth):
    x = synth[2].values[:7]
    f = extract_features(x, extractor)
    assert f.shape == (7, 128)
    np.testing.assert_array_equal(f, extract_features(x, extractor))
    te = synth[2]
    a, b = te.values[te.labels == 0][:1], te.values[te.labels == 2][:1]
    assert not np.allclose(extract_features(a, extractor), extract_features(b, extractor))
    with pytest.raises(ShapeError):
        extract_features(x[:, :2], extractor)


def test_feature_dim_independent_of_classes():
    rng = np.random.default_rng(0)
    ds = Dataset(rng.normal(size=(4, 2, 16)), [0, 1, 0, 1], ("a", "b"))
    m = train_fcn(ds, ds, epochs=1, rng=rng, filters=(4, 6, 128), kernels=(3, 3, 3))
    assert extract_features(ds.values, m).shape == (4, 128)


def test_fcn_singleton_memorizes_and_single_class_errors():
    rng = np.random.default_rng(0)
    one = Dataset(rng.normal(size=(1, 2, 16)), [1], ("a", "b"))
    m = train_fcn(one, one, epochs=20, rng=rng, filters=(8, 8, 8), kernels=(3, 3, 3))
    assert m.val_accuracy == 1.0
    with pytest.raises(ValueError):
        train_fcn(Dataset(np.zeros((3, 1, 8)), [0, 0, 0], ("a",)), one, 1, rng)


def test_mts_fid_real_vs_real_zero_and_order_invariant(extractor, synth):
    x = synth[1].values
    assert abs(mts_fid(x, x, extractor)) <= 1e-8
    perm = np.random.default_rng(3).permutation(len(x))
    other = synth[2].values
    assert mts_fid(x[perm], other, extractor) == pytest.approx(mts_fid(x, other, extractor), abs=1e-8)


def test_fid_ramp_increasing(extractor, synth):
    for seed in range(3):
        ramp = fid_ramp(synth[2].values, extractor, [0.1, 0.2, 0.4, 0.8], np.random.default_rng(seed))
        assert all(b > a for a, b in zip(ramp, ramp[1:])), ramp


# ---------------------------------------------------------------- DTW

def brute_force_dtw(a, b):
    """Minimum over every monotone warping path, enumerated by recursion."""
    a, b = np.asarray(a, float).reshape(len(a), -1), np.asarray(b, float).reshape(len(b), -1)
    n, m = len(a), len(b)
    best = float("inf")

    def walk(i, j, cost):
        nonlocal best
        cost += float(np.sqrt(((a[i] - b[j]) ** 2).sum()))
        if (i, j) == (n - 1, m - 1):
            best = min(best, cost)
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, cost)

    walk(0, 0, 0.0)
    return best


def test_dtw_examples():
    r = dtw([1, 2, 3], [1, 2, 3])
    assert r.cost == 0 and r.path == [(0, 0), (1, 1), (2, 2)]
    assert dtw([1, 2, 3], [1, 2, 2, 3]).cost == 0
    assert dtw([0, 1], [1]).cost == 1
    with pytest.raises(ValueError):
        dtw([], [1])
    with pytest.raises(ValueError):
        dtw([1, 2, 3, 4, 5], [1], band=2)


def test_dtw_matches_brute_force_exactly():
    rng = np.random.default_rng(0)
    for _ in range(120):
        n, m, ch = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 3)
        a, b = rng.normal(size=(n, ch)), rng.normal(size=(m, ch))
        res = dtw(a, b)
        # the DP adds costs along the path in the same order as the recursion
        assert res.cost == pytest.approx(brute_force_dtw(a, b), rel=0, abs=1e-12)
        dist = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
        assert sum(dist[i, j] for i, j in res.path) == pytest.approx(res.cost, abs=1e-12)


def test_dtw_exact_on_integer_grid():
    # integer-valued scalar sequences give exact float sums, so equality is bit-for-bit
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = rng.integers(-5, 6, rng.integers(1, 7)).astype(float)
        b = rng.integers(-5, 6, rng.integers(1, 7)).astype(float)
        assert dtw(a, b).cost == brute_force_dtw(a, b)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.just(2)), elements=st.floats(-10, 10)),
       arrays(np.float64, st.tuples(st.integers(1, 12), st.just(2)), elements=st.floats(-10, 10)))
def test_dtw_properties(a, b):
    ra = dtw(a, a)
    assert ra.cost == 0 and ra.path == [(i, i) for i in range(len(a))]
    r = dtw(a, b)
    assert r.cost == pytest.approx(dtw(b, a).cost, abs=1e-9)
    assert r.path[0] == (0, 0) and r.path[-1] == (len(a) - 1, len(b) - 1)
    for (i0, j0), (i1, j1) in zip(r.path, r.path[1:]):
        assert (i1 - i0, j1 - j0) in {(1, 0), (0, 1), (1, 1)}
    if len(a) == len(b):
        lockstep = np.sqrt(((a - b) ** 2).sum(-1)).sum()
        assert r.cost <= lockstep + 1e-9


def test_dtw_band():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(8, 1)), rng.normal(size=(8, 1))
    free = dtw(a, b).cost
    assert dtw(a, b, band=8).cost == free
    assert dtw(a, b, band=0).cost == pytest.approx(np.abs(a - b).sum())
    assert dtw(a, b, band=2).cost >= free


def test_mean_dtw():
    x = np.random.default_rng(0).normal(size=(3, 2, 5))
    assert mean_dtw(x, x) == 0.0


# ---------------------------------------------------------------- PCA

def test_pca_rank_one():
    t = np.linspace(-3, 3, 20)[:, None]
    m = pca_fit(t * np.array([[1.0, 1.0]]) + 4.0)
    assert abs(m.explained_variance_ratio[0] - 1.0) <= 1e-10


def test_pca_isotropic_cloud():
    m = pca_fit(np.random.default_rng(0).normal(size=(10_000, 2)))
    assert np.all(np.abs(m.explained_variance_ratio - 0.5) < 0.05)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(2, 40))
def test_pca_properties(seed, d, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d)) @ rng.normal(size=(d, d)) + rng.normal(size=d)
    m = pca_fit(x)
    c = m.components
    assert np.abs(c @ c.T - np.eye(d)).max() < 1e-8
    r = m.explained_variance_ratio
    assert np.all(r >= 0) and np.all(r <= 1) and r.sum() <= 1 + 1e-8 and np.all(np.diff(r) <= 1e-12)
    proj = pca_project(m, x, d)
    assert np.abs(pca_reconstruct(m, proj) - x).max() < 1e-8
    cov = np.cov(proj, rowvar=False)
    off = cov - np.diag(np.diag(cov))
    assert np.abs(off).max() < 1e-8 * max(1.0, np.abs(cov).max())


def test_pca_errors():
    with pytest.raises(ValueError):
        pca_fit(np.ones((1, 3)))
    with pytest.raises(ValueError):
        pca_project(pca_fit(np.random.default_rng(0).normal(size=(5, 2))), np.zeros((1, 2)), 3)


# ---------------------------------------------------------------- stats

def test_stat_features_examples():
    f = stat_features(np.array([[[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]]]))
    assert f["mean"][0, 0] == 2 and f["median"][0, 0] == 2
    assert f["std"][0, 0] == pytest.approx(np.sqrt(2 / 3))
    assert f["std"][0, 1] == 0


def test_stat_features_normalized_data(synth):
    tr = synth[0].values
    assert abs(tr.mean()) < 1e-9 and abs(tr.std() - 1) < 1e-6


def test_histogram_pair():
    edges, hr, hg = histogram_pair(np.array([0.0, 1.0]), np.array([0.5, 2.0]), bins=4)
    assert len(edges) == 5 and edges[0] == 0 and edges[-1] == 2
    assert hr.sum() == 2 and hg.sum() == 2
    _, hr, _ = histogram_pair(np.ones(3), np.ones(2))
    assert hr.sum() == 3
