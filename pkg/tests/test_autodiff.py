"""Numeric core: primitive semantics, backward rules, tape behavior."""

import numpy as np
import pytest

import invlab.autodiff as ad
from invlab.autodiff import (ContractError, DimensionError, NumericDomainError,
                             Tape, Tensor, backward, param)
from invlab.rng import RandomSource

from helpers import assert_grad_close, finite_difference, taped_scalar

N_TRIALS = 20


def rnd(rng, *shape):
    return rng.uniform(shape) * 4.0 - 2.0  # inputs in [-2, 2]


# ---------------------------------------------------------------------------
# forward semantics
# ---------------------------------------------------------------------------

def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[3.0, 4.0], [5.0, 6.0]])
    assert np.array_equal(ad.matmul(a, b).data, b.data)


def test_matmul_hand_computed():
    out = ad.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert np.array_equal(out.data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as err:
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    assert "(2, 3)" in str(err.value)


def test_add_zero_is_identity():
    x = Tensor([1.0, -2.0, 3.0])
    assert np.array_equal(ad.add(x, 0.0).data, x.data)


def test_mul_by_scalar():
    assert np.array_equal(ad.mul(Tensor([1.0, 2.0, 3.0]), 2.0).data, [2.0, 4.0, 6.0])


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_div_near_zero_divisor_rejected():
    with pytest.raises(NumericDomainError):
        ad.div(Tensor([1.0]), Tensor([1e-13]))
    with pytest.raises(NumericDomainError):
        ad.div(Tensor([1.0]), 0.0)


def test_silu_zero_and_asymptote():
    assert ad.silu(Tensor([0.0])).data[0] == 0.0
    assert abs(ad.silu(Tensor([20.0])).data[0] - 20.0) < 1e-6


def test_layer_norm_constant_row_maps_to_bias():
    x = Tensor([5.0, 5.0, 5.0, 5.0])
    out = ad.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    assert np.allclose(out.data, 0.0)


def test_layer_norm_row_mean_is_bias_mean():
    rng = RandomSource(5)
    x = Tensor(rnd(rng, 6, 8))
    out = ad.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)))
    assert np.all(np.abs(out.data.mean(axis=-1)) < 1e-6)


def test_mean_squared_values():
    assert ad.mean_squared(Tensor([0.0, 0.0, 0.0])).item() == 0.0
    assert ad.mean_squared(Tensor([1.0, -1.0, 1.0, -1.0])).item() == 1.0


def test_mean_squared_matches_scalar_loop():
    rng = RandomSource(6)
    x = rnd(rng, 8)
    expected = sum(float(v) * float(v) for v in x) / 8.0
    assert ad.mean_squared(Tensor(x)).item() == pytest.approx(expected, rel=1e-13)


def test_mean_squared_empty_rejected():
    with pytest.raises(NumericDomainError):
        ad.mean_squared(Tensor(np.zeros((0,))))


# ---------------------------------------------------------------------------
# backward contract
# ---------------------------------------------------------------------------

def test_backward_requires_scalar_taped_loss():
    p = param(np.ones(3))
    with Tape():
        vec = ad.mul(p, 2.0)
        with pytest.raises(ContractError):
            backward(vec)
    with pytest.raises(ContractError):
        backward(Tensor(1.0))


def test_sum_gradient_is_ones():
    p = param(np.array([1.0, 2.0, 3.0]))
    _, grads = taped_scalar(lambda t: ad.sum_all(t), [p])
    assert np.array_equal(grads.of(p), np.ones(3))


def test_detached_parameter_gets_exact_zeros():
    p = param(np.ones((2, 2)))
    q = param(np.full((2, 2), 3.0))
    _, grads = taped_scalar(lambda a, b: ad.mean_squared(a), [p, q])
    assert np.array_equal(grads.of(q), np.zeros((2, 2)))


def test_tape_replay_bit_determinism():
    rng = RandomSource(7)
    w = param(rnd(rng, 4, 4))
    x = Tensor(rnd(rng, 3, 4))

    def run():
        with Tape():
            out = ad.silu(ad.matmul(x, w))
            loss = ad.mean_squared(out)
            return backward(loss).of(w)

    assert np.array_equal(run(), run())


def test_nested_tapes_rejected():
    with Tape():
        with pytest.raises(ContractError):
            with Tape():
                pass


# ---------------------------------------------------------------------------
# finite-difference checks, >= 20 random trials per primitive
# ---------------------------------------------------------------------------

def _fd_case(make_loss, arrays, rng):
    tensors = [param(a) for a in arrays]
    _, grads = taped_scalar(make_loss, tensors)
    for which, t in enumerate(tensors):
        numeric = finite_difference(
            lambda *arrs: float(make_loss(*[Tensor(a) for a in arrs]).item()),
            [a.copy() for a in arrays], which)
        assert_grad_close(grads.of(t), numeric)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_matmul(trial):
    rng = RandomSource(100 + trial)
    _fd_case(lambda a, b: ad.mean_squared(ad.matmul(a, b)),
             [rnd(rng, 3, 4), rnd(rng, 4, 2)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_sum_of_matmul(trial):
    rng = RandomSource(130 + trial)
    _fd_case(lambda a, b: ad.sum_all(ad.matmul(a, b)),
             [rnd(rng, 2, 3), rnd(rng, 3, 3)], rng)


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_elementwise_tensor_tensor(op, trial):
    rng = RandomSource(hash(op) % 1000 + trial)
    a = rnd(rng, 5)
    b = rnd(rng, 5)
    if op == "div":
        b = np.sign(b) * (np.abs(b) + 0.5)  # keep divisors away from zero
    fn = getattr(ad, op)
    _fd_case(lambda x, y: ad.mean_squared(fn(x, y)), [a, b], rng)


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div"])
def test_fd_elementwise_scalar(op):
    for trial in range(N_TRIALS):
        rng = RandomSource(900 + trial)
        fn = getattr(ad, op)
        scalar = 1.7 if op == "div" else -0.8
        _fd_case(lambda x: ad.mean_squared(fn(x, scalar)), [rnd(rng, 4)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_silu(trial):
    rng = RandomSource(200 + trial)
    _fd_case(lambda x: ad.mean_squared(ad.silu(x)), [rnd(rng, 6)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_layer_norm(trial):
    rng = RandomSource(300 + trial)
    _fd_case(lambda x, g, b: ad.mean_squared(ad.layer_norm(x, g, b)),
             [rnd(rng, 3, 5), rnd(rng, 5), rnd(rng, 5)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_mean_squared(trial):
    rng = RandomSource(400 + trial)
    _fd_case(lambda x: ad.mean_squared(x), [rnd(rng, 7)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_neg(trial):
    rng = RandomSource(450 + trial)
    _fd_case(lambda x: ad.mean_squared(ad.neg(x)), [rnd(rng, 5)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_concat_last(trial):
    rng = RandomSource(500 + trial)
    _fd_case(lambda a, b: ad.mean_squared(ad.concat_last(a, b)),
             [rnd(rng, 3, 2), rnd(rng, 3, 4)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_add_bias(trial):
    rng = RandomSource(600 + trial)
    _fd_case(lambda x, b: ad.mean_squared(ad.add_bias(x, b)),
             [rnd(rng, 4, 3), rnd(rng, 3)], rng)


@pytest.mark.parametrize("trial", range(N_TRIALS))
def test_fd_three_layer_network(trial):
    rng = RandomSource(700 + trial)
    x = rnd(rng, 2, 3)

    def net(w1, b1, w2, b2, w3):
        h = ad.silu(ad.add_bias(ad.matmul(Tensor(x), w1), b1))
        h = ad.silu(ad.add_bias(ad.matmul(h, w2), b2))
        return ad.mean_squared(ad.matmul(h, w3))

    _fd_case(net, [rnd(rng, 3, 4), rnd(rng, 4), rnd(rng, 4, 4),
                   rnd(rng, 4), rnd(rng, 4, 2)], rng)


def test_fanout_gradient_accumulates():
    # y = x*x + x used twice; grad should be 2x + 1
    p = param(np.array([1.5, -0.5]))
    _, grads = taped_scalar(lambda x: ad.sum_all(ad.add(ad.mul(x, x), x)), [p])
    assert np.allclose(grads.of(p), 2.0 * p.data + 1.0)


def test_tensors_are_immutable():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0
