"""Random source determinism and Adam update semantics."""

import numpy as np
import pytest

import invlab.autodiff as ad
from invlab.autodiff import DimensionError, Tensor, param
from invlab.optim import OptimizerState, adam_step
from invlab.rng import PRNG_TAG, RandomSource, normal


def test_same_seed_bit_identical():
    a = normal(RandomSource(42), (100,))
    b = normal(RandomSource(42), (100,))
    assert np.array_equal(a.data, b.data)


def test_different_seeds_differ():
    a = normal(RandomSource(1), (64,))
    b = normal(RandomSource(2), (64,))
    assert not np.array_equal(a.data, b.data)


def test_normal_moments():
    # statistical bound at a fixed seed: 1e5 draws
    x = normal(RandomSource(2024), (100_000,)).data
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.02


def test_normal_finite_and_shaped():
    x = normal(RandomSource(3), (7, 5, 2))
    assert x.shape == (7, 5, 2)
    assert np.all(np.isfinite(x.data))


def test_split_streams_are_independent_and_stable():
    r = RandomSource(9)
    a1 = r.split(1).normal_array((16,))
    a2 = r.split(2).normal_array((16,))
    assert not np.array_equal(a1, a2)
    assert np.array_equal(a1, RandomSource(9).split(1).normal_array((16,)))


def test_prng_tag_documented():
    assert "pcg64" in PRNG_TAG and "box-muller" in PRNG_TAG


def test_adam_zero_gradient_keeps_params():
    p = param(np.array([1.0, -2.0]))
    st = OptimizerState([p], learning_rate=0.1)
    adam_step([p], [np.zeros(2)], st)
    assert np.array_equal(p.data, [1.0, -2.0])
    assert st.step_count == 1


def test_adam_first_step_is_almost_lr_sign():
    # bias correction makes the first update ~ lr * sign(g)
    p = param(np.array([0.5]))
    st = OptimizerState([p], learning_rate=0.1)
    adam_step([p], [np.array([1.0])], st)
    delta = p.data[0] - 0.5
    assert abs(delta + 0.1) < 1e-6


def test_adam_deterministic():
    def run():
        p = param(np.array([1.0, 2.0, 3.0]))
        st = OptimizerState([p], learning_rate=0.05)
        for i in range(5):
            adam_step([p], [np.array([0.3, -0.2, 0.1]) * (i + 1)], st)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_adam_shape_mismatch():
    p = param(np.zeros((2, 2)))
    st = OptimizerState([p])
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(3)], st)


def test_adam_moment_shapes_match_params():
    p1 = param(np.zeros((3, 4)))
    p2 = param(np.zeros(5))
    st = OptimizerState([p1, p2])
    assert st.m[0].shape == (3, 4) and st.v[1].shape == (5,)


def test_adam_step_count_increments_once_per_call():
    p = param(np.zeros(2))
    st = OptimizerState([p])
    for expected in (1, 2, 3):
        adam_step([p], [np.ones(2)], st)
        assert st.step_count == expected


def test_adam_descends_a_quadratic():
    p = param(np.array([4.0]))
    st = OptimizerState([p], learning_rate=0.2)
    for _ in range(200):
        with ad.Tape():
            loss = ad.mean_squared(p)
            g = ad.backward(loss)
        adam_step([p], [g.of(p)], st)
    assert abs(p.data[0]) < 1e-2
