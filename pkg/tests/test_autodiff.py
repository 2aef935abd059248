import math
import zlib

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from daglab import autodiff as ad
from daglab.autodiff import AdamState, Tape, Tensor

from _oracles import primitive_gradient_error

mpmath.mp.dps = 50


@pytest.mark.parametrize("kind", sorted(ad.PRIMITIVES))
def test_primitive_matches_central_differences(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = max(primitive_gradient_error(kind, rng) for _ in range(25))
    assert worst <= 1e-4


def test_matmul_hand_example():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    b = Tensor([[5.0], [6.0]])
    with Tape() as tape:
        y = ad.sum_(ad.matmul(a, b))
    ga, gb = tape.gradient(y, [a, b])
    np.testing.assert_array_equal(ga, [[5.0, 6.0], [5.0, 6.0]])
    np.testing.assert_array_equal(gb, [[4.0], [6.0]])


def test_unreachable_leaf_gets_zero_gradient():
    x, unused = Tensor(np.ones(3)), Tensor(np.full((2, 2), 7.0))
    with Tape() as tape:
        tape.watch(unused)
        y = ad.sum_(ad.mul(x, x))
    gx, gu = tape.gradient(y, [x, unused])
    np.testing.assert_array_equal(gx, 2.0 * np.ones(3))
    np.testing.assert_array_equal(gu, np.zeros((2, 2)))


def test_shared_input_accumulates():
    x = Tensor(np.array([1.5, -2.0]))
    with Tape() as tape:
        y = ad.sum_(ad.add(ad.mul(x, x), x))
    (g,) = tape.gradient(y, [x])
    np.testing.assert_allclose(g, 2 * x.values + 1)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)))
    with Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(ad.ShapeError):
        ad.backward(tape, y)


def test_shape_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
    with pytest.raises(ad.ShapeError):
        ad.reshape(Tensor(np.ones(6)), (4, 2))


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_log_domain_and_nonfinite():
    with pytest.raises(ad.DomainError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(ad.NonFiniteError):
        ad.exp(Tensor([800.0]))


def test_replay_is_bit_identical():
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(3, 4)))
    x = Tensor(rng.normal(size=(7, 3)))
    with Tape() as tape:
        h = ad.leaky_relu(ad.matmul(x, w))
        y = ad.mean(ad.tanh(h))
    first = tape.replay()
    second = tape.replay()
    assert first[y.node_id] == y.values
    assert all(np.array_equal(first[k], second[k]) for k in first)


def test_replay_with_new_leaf_values():
    x = Tensor(np.array([2.0]))
    with Tape() as tape:
        y = ad.mul(x, x)
    assert tape.replay({x.node_id: np.array([3.0])})[y.node_id][0] == 9.0


def test_records_are_independent_and_nested():
    x = Tensor(np.array([1.0, 2.0]))
    with Tape() as outer:
        a = ad.sum_(ad.mul(x, x))
        with Tape() as inner:
            b = ad.sum_(ad.exp(Tensor(np.zeros(2))))
        assert not outer.owns(b)
        assert inner.owns(b)
    (g,) = outer.gradient(a, [x])
    np.testing.assert_array_equal(g, [2.0, 4.0])


@pytest.mark.parametrize("target", [0, 1])
@pytest.mark.parametrize("logit", [-700.0, -40.0, -1e-3, 0.0, 2.5, 40.0, 700.0])
def test_bce_matches_high_precision(logit, target):
    out = ad.bce_from_logits(Tensor([[logit]]), target)
    l = mpmath.mpf(logit)
    # -log s(l) = log(1 + e^-l), -log(1 - s(l)) = log(1 + e^l)
    exact = mpmath.log1p(mpmath.exp(-l)) if target == 1 else mpmath.log1p(mpmath.exp(l))
    assert math.isfinite(float(out.values))
    assert float(out.values) == pytest.approx(float(exact), rel=1e-14, abs=1e-300)


def test_softplus_oracle():
    # -log sigmoid(10) = softplus(-10)
    out = float(ad.bce_from_logits(Tensor([[10.0]]), 1).values)
    exact = mpmath.log1p(mpmath.exp(-10))
    assert out == pytest.approx(float(exact), rel=1e-15)


def test_bce_per_row_targets_average_the_two_halves():
    rng = np.random.default_rng(1)
    real, fake = rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    stacked = ad.bce_from_logits(Tensor(np.vstack([real, fake])), np.vstack([np.ones((5, 1)), np.zeros((5, 1))]))
    halves = float(ad.bce_from_logits(Tensor(real), 1).values) + float(ad.bce_from_logits(Tensor(fake), 0).values)
    assert 2 * float(stacked.values) == pytest.approx(halves, rel=1e-14)


def test_bce_rejects_other_labels():
    with pytest.raises(ValueError):
        ad.bce_from_logits(Tensor([[0.0]]), 0.5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-700, 700)))
def test_bce_gradient_is_bounded(logits):
    x = Tensor(logits)
    for target in (0, 1):
        with Tape() as tape:
            y = ad.bce_from_logits(x, target)
        (g,) = tape.gradient(y, [x])
        assert np.all(np.isfinite(g))
        assert np.all(np.abs(g) <= 1.0 / logits.size + 1e-15)


def test_adam_first_step_oracle():
    p = Tensor(np.array([1.0, -2.0, 0.5]))
    g = np.array([0.3, -0.1, 0.0])
    state = AdamState()
    ad.adam_step([p], [g], state)
    # t = 1: m_hat = g, v_hat = g^2, so each coordinate moves by lr * g / (|g| + eps)
    expected = np.array([1.0, -2.0, 0.5]) - 2e-4 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p.values, expected, rtol=0, atol=1e-15)
    assert state.step == 1


def test_adam_two_steps_match_reference_recursion():
    rng = np.random.default_rng(2)
    p0 = rng.normal(size=4)
    gs = [rng.normal(size=4) for _ in range(2)]
    p = Tensor(p0.copy())
    state = AdamState(lr=0.01, beta1=0.5, beta2=0.9, epsilon=1e-8)
    for g in gs:
        ad.adam_step([p], [g], state)
    m = v = np.zeros(4)
    ref = p0.copy()
    for t, g in enumerate(gs, start=1):
        m = 0.5 * m + 0.5 * g
        v = 0.9 * v + 0.1 * g * g
        ref = ref - 0.01 * (m / (1 - 0.5**t)) / (np.sqrt(v / (1 - 0.9**t)) + 1e-8)
    np.testing.assert_allclose(p.values, ref, rtol=1e-15)


def test_adam_rejects_mismatched_shapes():
    with pytest.raises(ad.ShapeError):
        ad.adam_step([Tensor(np.zeros(3))], [np.zeros(4)], AdamState())


def test_glorot_bounds():
    rng = np.random.default_rng(0)
    w = ad.glorot_uniform(64, 32, rng)
    bound = math.sqrt(6 / 96)
    assert w.shape == (64, 32)
    assert np.max(np.abs(w)) <= bound
    assert np.var(w) == pytest.approx(bound**2 / 3, rel=0.05)
