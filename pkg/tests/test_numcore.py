from __future__ import annotations

import math

import numpy as np
import pytest

from tass import numcore as nc
from tass.errors import ContractError, DimensionError, DomainError, LabelIndexError, StaleTapeError
from tass.numcore import Tape, Tensor, backward, finite_diff_check


def test_matmul_identity_and_dot():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nc.matmul(Tensor(np.eye(2)), m).data, m.data)
    assert nc.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences(rng):
    a, b = Tensor(rng.standard_normal((3, 3))), Tensor(rng.standard_normal((3, 3)))
    for x in (a, b):
        report = finite_diff_check(lambda _x: nc.sum_all(nc.matmul(a, b)), x, step=1e-5, tolerance=1e-6)
        assert report.passed
        assert report.n_checked == 9


@pytest.mark.parametrize(
    ("logits", "expected"),
    [
        ([0.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25]),
        ([math.log(1.0), math.log(3.0)], [0.25, 0.75]),
    ],
)
def test_softmax_examples(logits, expected):
    np.testing.assert_allclose(nc.softmax_lastdim(Tensor([logits])).data[0], expected, atol=1e-12)


def test_softmax_is_stable_for_large_logits():
    out = nc.softmax_lastdim(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0
    assert out[1] < 1e-300


def test_softmax_rows_sum_to_one(rng):
    out = nc.softmax_lastdim(Tensor(5 * rng.standard_normal((50, 7)))).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(out >= 0)


def test_softmax_rejects_empty_trailing_axis():
    with pytest.raises(DimensionError):
        nc.softmax_lastdim(Tensor(np.zeros((2, 0))))


def test_elementwise_rejects_broadcasting():
    with pytest.raises(DimensionError):
        nc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((1, 3))))
    with pytest.raises(DimensionError):
        nc.mul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))


def test_mean_axis_divides_by_true_extent():
    x = Tensor([[1.0, 2.0, 6.0]])
    assert nc.mean_axis(x, axis=-1).data.tolist() == [3.0]


def test_concat_lastdim_and_scalar_scale():
    out = nc.concat_lastdim(Tensor([[1.0]]), Tensor([[2.0, 3.0]]))
    assert out.data.tolist() == [[1.0, 2.0, 3.0]]
    assert nc.scalar_scale(out, -2.0).data.tolist() == [[-2.0, -4.0, -6.0]]


def test_cross_entropy_uniform_logits_give_log_c():
    loss = nc.cross_entropy(Tensor(np.zeros((3, 5))), [0, 2, 4])
    assert loss.item() == pytest.approx(math.log(5), abs=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(LabelIndexError):
        nc.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_js_divergence_hand_value():
    js = nc.js_divergence(Tensor([1.0, 0.0]), Tensor([0.5, 0.5])).item()
    assert js == pytest.approx(0.2158, abs=1e-4)


def test_js_divergence_identity_symmetry_and_range(rng):
    for _ in range(100):
        p = rng.dirichlet(np.ones(6))
        q = rng.dirichlet(np.ones(6))
        assert nc.js_divergence(Tensor(p), Tensor(p)).item() == pytest.approx(0.0, abs=1e-12)
        forward = nc.js_divergence(Tensor(p), Tensor(q)).item()
        assert forward == pytest.approx(nc.js_divergence(Tensor(q), Tensor(p)).item(), abs=1e-12)
        assert 0.0 <= forward <= math.log(2) + 1e-12


def test_js_divergence_disjoint_supports_reach_log_two():
    assert nc.js_divergence(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("bad", [[0.5, 0.6], [1.2, -0.2]])
def test_js_divergence_rejects_non_distributions(bad):
    with pytest.raises(DomainError):
        nc.js_divergence(Tensor(bad), Tensor([0.5, 0.5]))


def test_backward_populates_leaf_gradients():
    x = Tensor([[1.0, 2.0]], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(nc.tanh(x))
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 1.0 - np.tanh(x.data) ** 2)


def test_second_backward_is_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(nc.mul(x, x))
    backward(loss, tape)
    with pytest.raises(StaleTapeError):
        backward(loss, tape)


def test_recording_on_consumed_tape_is_rejected():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(x)
        backward(loss, tape)
        with pytest.raises(StaleTapeError):
            nc.tanh(x)


def test_detached_loss_is_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(x)
    with pytest.raises(StaleTapeError):
        backward(loss.detach(), tape)


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = nc.tanh(x)
    with pytest.raises(ContractError):
        backward(y, tape)


def test_unused_leaf_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([3.0, 4.0], requires_grad=True)
    with Tape() as tape:
        nc.tanh(unused)
        loss = nc.sum_all(x)
    backward(loss, tape)
    np.testing.assert_array_equal(unused.grad, [0.0, 0.0])


def test_tape_replays_in_reverse_order():
    x = Tensor([0.5], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(nc.sigmoid(nc.tanh(x)))
    assert tape.ops == ["tanh", "sigmoid", "sum_all"]
    backward(loss, tape)
    s = 1.0 / (1.0 + math.exp(-math.tanh(0.5)))
    assert x.grad[0] == pytest.approx(s * (1 - s) * (1 - math.tanh(0.5) ** 2), rel=1e-12)


def test_no_tape_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with Tape() as tape, nc.no_tape():
        nc.tanh(x)
    assert len(tape) == 0


def test_masked_passes_gradient_through_kept_entries():
    x = Tensor([0.3, 0.01, 0.5], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(nc.masked(x, x.data >= 0.025))
    backward(loss, tape)
    assert x.grad.tolist() == [1.0, 0.0, 1.0]


def test_take_accumulates_repeated_indices():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(nc.take(x, [0, 0, 1], axis=0))
    backward(loss, tape)
    assert x.grad.tolist() == [[2.0, 2.0], [1.0, 1.0]]


def test_maximum_routes_ties_to_first_operand():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([1.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = nc.sum_all(nc.maximum(a, b))
    backward(loss, tape)
    assert a.grad.tolist() == [1.0, 0.0]
    assert b.grad.tolist() == [0.0, 1.0]


def test_logsumexp_is_stable_and_differentiates_to_softmax(rng):
    out = nc.logsumexp_lastdim(Tensor([[1e4, 0.0], [-1e4, -1e4]])).data
    np.testing.assert_allclose(out, [[1e4], [-1e4 + math.log(2.0)]], rtol=1e-12)
    x = Tensor(rng.standard_normal((3, 5)))
    weights = Tensor(rng.standard_normal((3, 1)))
    report = finite_diff_check(lambda t: nc.sum_all(nc.mul(nc.logsumexp_lastdim(t), weights)), x)
    assert report.passed


def test_renormalize_rejects_empty_mass():
    with pytest.raises(DomainError):
        nc.renormalize_lastdim(Tensor([0.0, 0.0]))


def test_finite_diff_check_flags_a_wrong_adjoint():
    def broken(x: Tensor) -> Tensor:
        y = nc.record("broken_square", x.data**2, (x,), lambda g: (g * x.data,))
        return nc.sum_all(y)

    report = finite_diff_check(broken, Tensor([1.0, 2.0]), label="broken")
    assert not report.passed
    assert report.n_failed == 2
    assert report.label == "broken"


def test_finite_diff_check_restores_input():
    x = Tensor([0.1, -0.4])
    before = x.data.copy()
    finite_diff_check(lambda t: nc.sum_all(nc.tanh(t)), x)
    np.testing.assert_array_equal(x.data, before)
    assert not x.requires_grad
