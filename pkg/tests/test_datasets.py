"""Synthetic dataset generation: determinism, ranges, class structure."""

import numpy as np
import pytest

from invlab.datasets import (Dataset, DatasetSpec, IMAGE_SIDE, MIXTURE_SIGMA,
                             generate, mixture_centers)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        DatasetSpec(kind="moons_2d")


def test_counts_validated():
    with pytest.raises(ValueError):
        DatasetSpec(kind="gaussian_mixture_2d", n_train=0)


def test_kind_class_constraints():
    with pytest.raises(ValueError):
        DatasetSpec(kind="spiral_2d", n_classes=3)
    with pytest.raises(ValueError):
        DatasetSpec(kind="shapes_8x8", n_classes=4)


def test_same_spec_bit_identical():
    spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=100, n_test=20,
                       n_classes=3, seed=7)
    a_train, a_test = generate(spec)
    b_train, b_test = generate(spec)
    assert a_train.equals(b_train) and a_test.equals(b_test)


def test_different_seed_differs():
    s1 = DatasetSpec(kind="gaussian_mixture_2d", n_train=50, n_test=10, seed=1)
    s2 = DatasetSpec(kind="gaussian_mixture_2d", n_train=50, n_test=10, seed=2)
    a, _ = generate(s1)
    b, _ = generate(s2)
    assert not np.array_equal(a.latents, b.latents)


def test_mixture_class_means_near_centers():
    spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=2000, n_test=298,
                       n_classes=3, seed=0)
    train, _ = generate(spec)
    centers = mixture_centers(3)
    for c in range(3):
        sel = train.labels == c  # unconditioned items excluded by label
        assert sel.sum() > 100
        mean = train.latents[sel].mean(axis=0)
        assert np.linalg.norm(mean - centers[c]) < 0.1


def test_mixture_six_sigma_box():
    spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=4000, n_test=298,
                       n_classes=5, seed=3)
    train, test = generate(spec)
    centers = mixture_centers(5)
    for ds in (train, test):
        d = np.asarray(ds.latents)[:, None, :] - centers[None, :, :]
        nearest = np.min(np.max(np.abs(d), axis=2), axis=1)
        assert np.all(nearest <= 6.0 * MIXTURE_SIGMA + 1e-12)


def test_null_fraction_near_ten_percent():
    spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=5000, n_test=298, seed=4)
    train, _ = generate(spec)
    frac = float(np.mean(train.labels == -1))
    assert 0.07 < frac < 0.13


def test_split_disjoint_rows():
    spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=300, n_test=100, seed=5)
    train, test = generate(spec)
    assert len(train) == 300 and len(test) == 100
    # continuous draws never coincide across the split
    joined = {tuple(row) for row in train.latents}
    assert not any(tuple(row) in joined for row in test.latents)


def test_spiral_constraints():
    spec = DatasetSpec(kind="spiral_2d", n_train=500, n_test=50, n_classes=2, seed=6)
    train, _ = generate(spec)
    radius = np.linalg.norm(train.latents, axis=1)
    assert radius.max() < 6.0
    labeled = train.labels >= 0
    assert set(np.unique(train.labels[labeled])) <= {0, 1}


def test_shapes_values_in_unit_range():
    spec = DatasetSpec(kind="shapes_8x8", n_train=64, n_test=16, n_classes=3, seed=7)
    train, test = generate(spec)
    assert train.latents.shape == (64, IMAGE_SIDE * IMAGE_SIDE)
    for ds in (train, test):
        assert np.all(ds.latents >= -1.0) and np.all(ds.latents <= 1.0)


def test_shapes_classes_look_different():
    spec = DatasetSpec(kind="shapes_8x8", n_train=120, n_test=16, n_classes=3, seed=8)
    train, _ = generate(spec)
    means = [train.latents[train.labels == c].mean() for c in range(3)]
    assert len(set(np.round(means, 6))) == 3  # coverage differs per shape family


def test_item_accessor():
    spec = DatasetSpec(kind="gaussian_mixture_2d", n_train=10, n_test=5, seed=9)
    train, _ = generate(spec)
    z, label = train.item(0)
    assert z.shape == (2,)
    assert isinstance(label, int)
