import math

import numpy as np
import pytest

from stepsum import autodiff as ad
from stepsum.autodiff import (
    Adam,
    AdamState,
    AutodiffError,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    backward,
    cross_entropy,
    layer_norm,
    matmul,
    softmax,
    sum_all,
)
from stepsum.gradcheck import check_gradients


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[3.0, 4.0], [5.0, 6.0]])
    out = matmul(eye, m)
    np.testing.assert_array_equal(out.data, m.data)


def test_matmul_inner_product():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    fails = check_gradients(lambda: sum_all(matmul(a, b)), {"a": a, "b": b},
                            rtol=1e-6)
    assert fails == []


def test_softmax_uniform():
    out = softmax(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_large_values_no_overflow():
    big = 1e8
    out = softmax(Tensor([big, big - 1000.0]))
    assert out.data[0] == pytest.approx(1.0)
    assert out.data[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    fails = check_gradients(
        lambda: sum_all(ad.mul(softmax(x), Tensor([0.3, -1.0, 2.0]))),
        {"x": x}, rtol=1e-6)
    assert fails == []


def test_softmax_rejects_bad_axis():
    with pytest.raises(ShapeError):
        softmax(Tensor([[1.0, 2.0]]), axis=2)


def test_layer_norm_constant_row_collapses_to_bias():
    x = Tensor([[7.0, 7.0, 7.0]])
    out = layer_norm(x, Tensor(np.ones(3)), Tensor([1.0, 2.0, 3.0]), eps=1e-12)
    np.testing.assert_allclose(out.data, [[1.0, 2.0, 3.0]], atol=1e-5)


def test_layer_norm_already_normalized_row():
    x = Tensor([[1.0, -1.0]])
    out = layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-14)
    np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-6)


def test_layer_norm_gradient():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(2, 6)), requires_grad=True)
    gain = Tensor(rng.normal(size=6), requires_grad=True)
    bias = Tensor(rng.normal(size=6), requires_grad=True)
    probe = Tensor(rng.normal(size=(2, 6)))
    fails = check_gradients(
        lambda: sum_all(ad.mul(layer_norm(x, gain, bias), probe)),
        {"x": x, "gain": gain, "bias": bias}, rtol=1e-5)
    assert fails == []


def test_cross_entropy_uniform_two_classes():
    out = cross_entropy(Tensor([0.5, 0.5]), 1)
    assert out.item() == pytest.approx(math.log(2), rel=1e-12)


def test_cross_entropy_confident():
    out = cross_entropy(Tensor([40.0, -40.0]), 0)
    assert out.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_hand_computed_value_and_gradient():
    logits = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    exp = np.exp([1.0, 2.0, 3.0])
    p = exp / exp.sum()
    with Tape() as tape:
        loss = cross_entropy(logits, 1)
        backward(tape, loss)
    assert loss.item() == pytest.approx(-math.log(p[1]), rel=1e-12)
    want = p.copy()
    want[1] -= 1.0
    np.testing.assert_allclose(logits.grad, want, rtol=1e-12)


def test_cross_entropy_rejects_out_of_range_target():
    with pytest.raises(AutodiffError):
        cross_entropy(Tensor([0.0, 1.0]), 2)


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        backward(tape, sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_square_rule():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        backward(tape, sum_all(ad.mul(x, x)))
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ad.mul(x, x)
        with pytest.raises(ShapeError):
            backward(tape, y)


def test_backward_rejects_unreachable_loss():
    x = Tensor([1.0], requires_grad=True)
    loose = Tensor(np.asarray(3.0))
    with Tape() as tape:
        sum_all(x)
        with pytest.raises(AutodiffError):
            backward(tape, loose)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = sum_all(x)
        backward(tape, loss)
        backward(tape, loss)
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_backward_does_not_mutate_forward_values():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    with Tape() as tape:
        y = softmax(ad.matmul(x, x))
        snapshot = y.data.copy()
        backward(tape, sum_all(ad.mul(y, y)))
    np.testing.assert_array_equal(y.data, snapshot)


def test_non_finite_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])
    with pytest.raises(NonFiniteError):
        Tensor([np.inf])


def test_ops_outside_tape_do_not_record():
    x = Tensor([1.0], requires_grad=True)
    y = sum_all(x)  # no tape active
    assert y.item() == 1.0
    assert x.grad is None


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_every_op_random_shapes(seed):
    from stepsum.acceptance import _op_cases

    for name, params, loss_fn in _op_cases(seed):
        fails = check_gradients(loss_fn, params)
        assert fails == [], f"{name} failed at seed {seed}: {fails[0]}"


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(42)
        a = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        with Tape() as tape:
            loss = sum_all(ad.mul(softmax(matmul(a, b)), a))
            backward(tape, loss)
        return loss.item(), a.grad.copy(), b.grad.copy()

    l1, ga1, gb1 = run()
    l2, ga2, gb2 = run()
    assert l1 == l2
    assert np.array_equal(ga1, ga2)
    assert np.array_equal(gb1, gb2)


# -- Adam -------------------------------------------------------------------


def test_adam_first_step_moves_by_learning_rate():
    p = Tensor(np.full(4, 10.0), requires_grad=True)
    p.grad = np.ones(4)
    st = AdamState.for_param(p, learning_rate=0.25)
    adam_step(p, st)
    # bias correction makes mhat/sqrt(vhat) equal 1 on the first step
    np.testing.assert_allclose(p.data, 10.0 - 0.25, rtol=1e-7)
    assert st.step == 1


def test_adam_zero_grad_keeps_param_but_counts_step():
    p = Tensor([5.0], requires_grad=True)
    p.grad = np.zeros(1)
    st = AdamState.for_param(p, learning_rate=0.5)
    adam_step(p, st)
    assert p.data[0] == 5.0
    assert st.step == 1


def test_adam_missing_grad_rejected():
    p = Tensor([1.0], requires_grad=True)
    st = AdamState.for_param(p, learning_rate=0.1)
    with pytest.raises(AutodiffError):
        adam_step(p, st)


def test_adam_two_runs_bitwise_identical():
    def run():
        p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        st = AdamState.for_param(p, learning_rate=0.05)
        for step in range(3):
            p.grad = np.array([0.1, -0.2, 0.3]) * (step + 1)
            adam_step(p, st)
        return p.data.copy()

    assert np.array_equal(run(), run())


def test_adam_wrapper_skips_gradless_params():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([2.0], requires_grad=True)
    opt = Adam({"a": a, "b": b}, learning_rate=0.1)
    a.grad = np.ones(1)
    opt.step()
    assert a.data[0] != 1.0
    assert b.data[0] == 2.0
    opt.zero_grad()
    assert a.grad is None
