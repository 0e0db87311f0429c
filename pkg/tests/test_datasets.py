"""Generators: 1D Gaussians and the 2D fractal benchmark."""

import math

import numpy as np
import pytest

from guideflow.datasets import (
    FRACTAL_BRANCHES,
    Dataset,
    FractalBranch,
    build_fractal_tree,
    fractal_branch_count,
    gen_gaussian_1d,
    make_fractal_dataset,
    place_gaussians,
    read_dataset_csv,
    sample_fractal,
    write_dataset_csv,
)
from guideflow.errors import ConfigError, DataError

from oracles import normal_cdf

# sum over branches i=0..126 of 8 * floor(1000 * exp(-i/100)), frozen from
# a direct evaluation of the formula (also recomputed below)
FRACTAL_POINTS_PER_CLASS = 577704


def test_gaussian_moments():
    ds = gen_gaussian_1d(1.0, 0.05, 10000, seed=0)
    assert len(ds) == 20000 and ds.dim == 1
    for label, center in ((0, 1.0), (1, -1.0)):
        pts = ds.of_class(label)[:, 0]
        assert pts.shape == (10000,)
        assert abs(pts.mean() - center) < 0.005
        assert abs(pts.std() - 0.05) < 0.005


def test_gaussian_degenerate_std():
    ds = gen_gaussian_1d(1.0, 1e-12, 100, seed=1)
    assert np.allclose(ds.of_class(0), 1.0, atol=1e-10)
    assert np.allclose(ds.of_class(1), -1.0, atol=1e-10)


def test_gaussian_overlap_fraction_matches_normal_cdf():
    # class 0 ~ N(0.1, 0.05): P(x < 0) = Phi(-2)
    ds = gen_gaussian_1d(0.1, 0.05, 100000, seed=2)
    frac = float(np.mean(ds.of_class(0)[:, 0] < 0.0))
    expected = normal_cdf(-2.0)
    assert abs(frac - expected) < 4 * math.sqrt(expected * (1 - expected) / 100000)


def test_gaussian_validation():
    with pytest.raises(ConfigError):
        gen_gaussian_1d(1.0, 0.0, 10, seed=0)
    with pytest.raises(ConfigError):
        gen_gaussian_1d(1.0, 0.1, 0, seed=0)


def test_gaussian_reproducible():
    a = gen_gaussian_1d(0.5, 0.05, 500, seed=7)
    b = gen_gaussian_1d(0.5, 0.05, 500, seed=7)
    assert np.array_equal(a.points, b.points)
    c = gen_gaussian_1d(0.5, 0.05, 500, seed=8)
    assert not np.array_equal(a.points, c.points)


@pytest.mark.parametrize("class_id,root_orientation", [(0, 0.25 * np.pi), (1, 1.75 * np.pi)])
def test_fractal_tree_structure(class_id, root_orientation):
    branches = build_fractal_tree(class_id, seed=0)
    assert len(branches) == FRACTAL_BRANCHES == 127
    by_index = {b.index: b for b in branches}
    assert sorted(by_index) == list(range(1, 128))  # heap indexing is a bijection
    root = by_index[1]
    assert np.array_equal(root.start, np.zeros(2))
    assert root.length == 1.2
    assert root.orientation == pytest.approx(root_orientation)
    for b in branches:
        if b.index == 1:
            continue
        parent = by_index[b.index // 2]
        assert np.allclose(b.start, parent.end, atol=1e-12)
        # length factor 1 - 0.4*xi with xi in (0.5, 0.8)
        ratio = b.length / parent.length
        assert 0.68 <= ratio <= 0.80
        assert 0.0 <= b.orientation < 2.0 * np.pi


def test_fractal_tree_reproducible():
    a = build_fractal_tree(0, seed=3)
    b = build_fractal_tree(0, seed=3)
    for x, y in zip(a, b):
        assert x.length == y.length and x.orientation == y.orientation


def test_place_gaussians_counts_and_rotation():
    branches = build_fractal_tree(0, seed=0)
    comps = place_gaussians(branches)
    assert len(comps) == 1016
    assert [c.component_index for c in comps] == list(range(1016))
    for c in comps[:50]:
        # rotation preserves the base spectrum
        i = c.component_index
        base = np.array([0.005 * math.exp(-i / 30.0), 0.003 * math.exp(-i / 25.0)])
        eig = np.sort(np.linalg.eigvalsh(c.covariance))
        assert np.allclose(eig, np.sort(base), rtol=1e-10)
        np.linalg.cholesky(c.covariance)  # symmetric positive definite


def test_place_gaussians_zero_orientation_is_diagonal():
    branch = FractalBranch(index=1, start=np.zeros(2), length=1.0, orientation=0.0)
    comps = place_gaussians([branch] + build_fractal_tree(0, seed=0)[1:])
    first = comps[0]
    assert first.component_index == 0
    assert np.allclose(first.covariance, np.diag([0.005, 0.003]), atol=1e-15)
    # means sit at fractions (j+0.5)/8 along the branch
    assert np.allclose(comps[0].mean, [1.0 / 16.0, 0.0])
    assert np.allclose(comps[7].mean, [15.0 / 16.0, 0.0])


def test_fractal_sample_counts():
    assert fractal_branch_count(0) == 1000
    assert fractal_branch_count(100) == 367
    branches = build_fractal_tree(0, seed=0)
    comps = place_gaussians(branches)
    ds = sample_fractal(comps, 0, seed=0)
    # branch 0 contributes 8 * 1000, branch 100 contributes 8 * 367 = 2936
    per_branch_total = 8 * sum(fractal_branch_count(i) for i in range(127))
    assert per_branch_total == FRACTAL_POINTS_PER_CLASS
    assert len(ds) == FRACTAL_POINTS_PER_CLASS
    assert np.all(ds.labels == 0)


def test_fractal_dataset_shape_and_determinism():
    ds = make_fractal_dataset(seed=1)
    assert ds.dim == 2
    assert len(ds) == 2 * FRACTAL_POINTS_PER_CLASS
    assert np.sum(ds.labels == 0) == FRACTAL_POINTS_PER_CLASS
    again = make_fractal_dataset(seed=1)
    assert np.array_equal(ds.points, again.points)


def test_csv_roundtrip_exact(tmp_path):
    ds = gen_gaussian_1d(1.0, 0.05, 50, seed=4)
    path = tmp_path / "ds.csv"
    write_dataset_csv(path, ds)
    back = read_dataset_csv(path)
    assert np.array_equal(back.points, ds.points)
    assert np.array_equal(back.labels, ds.labels)
    assert path.read_text().splitlines()[0] == "x0,label"


def test_csv_rejects_bad_files(tmp_path):
    with pytest.raises(DataError):
        read_dataset_csv(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        read_dataset_csv(bad)
    short = tmp_path / "short.csv"
    short.write_text("x0,label\n1.0\n")
    with pytest.raises(DataError):
        read_dataset_csv(short)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), np.array([0, 1, 5]))
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 1)), np.array([0, 1]))
