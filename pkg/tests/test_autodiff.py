"""
Tests for the autodiff module.
"""

import numpy as np
import pytest
from scipy import sparse

from decision_tsp.autodiff import (
    ParamStore,
    Tape,
    Tensor,
    add,
    backward,
    bce_with_logits,
    concat,
    layer_norm,
    matmul,
    mean_all,
    mul,
    numerical_gradient,
    relative_error,
    relu,
    reshape,
    select,
    sigmoid,
    sparse_matmul,
    sum_all,
)
from decision_tsp.exceptions import AutodiffError, DataError, ShapeError


def check_gradients(build_loss, params: ParamStore, tolerance: float = 1e-6):
    """Compare taped gradients of build_loss() with central differences for every parameter."""
    with Tape():
        loss = build_loss()
    backward(loss, params)
    for name, tensor in params.items():
        numeric = numerical_gradient(lambda: build_loss().item(), tensor.data)
        assert relative_error(params.grads[name], numeric) < tolerance, name


class TestTensor:
    """Test cases for Tensor and Tape bookkeeping."""

    def test_item_requires_scalar(self):
        """Test that item() rejects non-scalar tensors."""
        assert Tensor(3.5).item() == 3.5
        with pytest.raises(ShapeError):
            Tensor(np.ones(2)).item()

    def test_no_recording_without_tape(self):
        """Test that primitives run eagerly and record nothing outside a tape."""
        params = ParamStore({"w": np.ones((2, 2))})
        out = matmul(Tensor(np.eye(2)), params["w"])
        assert out.tape is None
        np.testing.assert_array_equal(out.data, np.ones((2, 2)))

    def test_no_recording_for_constants(self):
        """Test that operations on tensors without gradients are not recorded."""
        with Tape() as tape:
            add(Tensor(np.ones(3)), Tensor(np.ones(3)))
        assert len(tape) == 0

    def test_operator_overloads(self):
        """Test arithmetic operators against numpy."""
        a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])
        np.testing.assert_array_equal((a @ b).data, [[11.0]])
        np.testing.assert_array_equal((a + 1.0).data, [[2.0, 3.0]])
        np.testing.assert_array_equal((a - a).data, [[0.0, 0.0]])
        np.testing.assert_array_equal((2.0 * a).data, [[2.0, 4.0]])
        np.testing.assert_array_equal((-a).data, [[-1.0, -2.0]])

    def test_backward_visits_each_node_once_in_reverse(self):
        """Test that the replay visits every recorded node exactly once, last first."""
        params = ParamStore({"w": np.array([[0.5, -1.0]])})
        with Tape() as tape:
            loss = sum_all(relu(mul(params["w"], 2.0)))
        backward(loss, params)
        assert tape.visit_order == list(range(len(tape) - 1, -1, -1))

    def test_backward_twice_raises(self):
        """Test that replaying a consumed tape is an error."""
        params = ParamStore({"w": np.ones(3)})
        with Tape():
            loss = sum_all(params["w"])
        backward(loss, params)
        with pytest.raises(AutodiffError):
            backward(loss, params)

    def test_backward_without_tape_raises(self):
        """Test that a loss computed outside a tape cannot be differentiated."""
        params = ParamStore({"w": np.ones(3)})
        with pytest.raises(AutodiffError):
            backward(sum_all(params["w"]), params)

    def test_backward_requires_scalar(self):
        """Test that a non-scalar loss is rejected."""
        params = ParamStore({"w": np.ones(3)})
        with Tape():
            out = mul(params["w"], 2.0)
        with pytest.raises(AutodiffError):
            backward(out, params)


class TestPrimitives:
    """Test cases for primitive forward values and gradients."""

    def test_matmul_identity_and_zero(self):
        """Test the identity and zero products."""
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), a).data, a)
        np.testing.assert_array_equal(matmul(a, np.zeros((2, 1))).data, np.zeros((2, 1)))

    def test_matmul_shape_mismatch(self):
        """Test that inner dimensions must agree."""
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_matmul_gradient(self):
        """Test matmul gradients of sum(output) against finite differences."""
        rng = np.random.default_rng(0)
        params = ParamStore({"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(4, 2))})
        check_gradients(lambda: sum_all(matmul(params["a"], params["b"])), params)

    def test_sparse_matmul_gradient(self):
        """Test products with a constant sparse matrix."""
        rng = np.random.default_rng(1)
        matrix = sparse.csr_matrix(np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]))
        params = ParamStore({"x": rng.normal(size=(3, 2))})
        np.testing.assert_allclose(sparse_matmul(matrix, params["x"]).data, matrix.toarray() @ params["x"].data)
        check_gradients(lambda: sum_all(mul(sparse_matmul(matrix, params["x"]), 1.5)), params)

    def test_elementwise_gradients(self):
        """Test activations, broadcasting add and mul."""
        rng = np.random.default_rng(2)
        params = ParamStore({"x": rng.normal(size=(3, 4)), "b": rng.normal(size=4), "s": rng.normal(size=(3, 1))})

        def loss():
            h = add(mul(params["x"], params["s"]), params["b"])
            return mean_all(add(mul(sigmoid(h), h), relu(h)))

        check_gradients(loss, params)

    def test_structural_gradients(self):
        """Test concat, select and reshape."""
        rng = np.random.default_rng(3)
        params = ParamStore({"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 5))})

        def loss():
            joined = concat([params["a"], params["b"]], axis=1)
            blocks = reshape(joined, (2, 4, 2))
            return sum_all(mul(select(blocks, 1), select(blocks, 3)))

        check_gradients(loss, params)

    def test_add_broadcast_error(self):
        """Test that incompatible shapes raise a shape error."""
        with pytest.raises(ShapeError):
            add(np.ones((2, 3)), np.ones((4,)))


class TestLayerNorm:
    """Test cases for layer normalization."""

    def test_constant_row_is_zero(self):
        """Test that a constant row normalizes to zero."""
        out = layer_norm(np.full((1, 4), 3.0), np.ones(4), np.zeros(4))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_standardized_row_unchanged(self):
        """Test that [-1, 1] stays put as eps goes to zero."""
        out = layer_norm(np.array([[-1.0, 1.0]]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-9)

    def test_row_mean_equals_bias_mean(self):
        """Test that with unit gain the output row mean is the bias mean."""
        rng = np.random.default_rng(4)
        bias = rng.normal(size=8)
        out = layer_norm(rng.normal(size=(2, 8)), np.ones(8), bias)
        np.testing.assert_allclose(out.data.mean(axis=1), [bias.mean()] * 2, atol=1e-9)

    def test_gradient(self):
        """Test gradients for input, gain and bias."""
        rng = np.random.default_rng(5)
        params = ParamStore({"x": rng.normal(size=(3, 6)), "g": rng.normal(size=6), "b": rng.normal(size=6)})
        weights = rng.normal(size=(3, 6))
        check_gradients(lambda: sum_all(mul(layer_norm(params["x"], params["g"], params["b"]), weights)), params,
                        tolerance=1e-5)

    def test_invalid_eps(self):
        """Test that eps must be positive."""
        with pytest.raises(ShapeError):
            layer_norm(np.ones((1, 2)), np.ones(2), np.zeros(2), eps=0.0)


class TestBCE:
    """Test cases for the logit cross-entropy loss."""

    def test_zero_logit(self):
        """Test that logit 0 with label 1 costs ln 2."""
        assert bce_with_logits(np.zeros(1), np.ones(1)).item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_saturation(self):
        """Test that a confident correct logit costs almost nothing."""
        assert bce_with_logits(np.array([20.0]), np.array([1.0])).item() < 1e-8

    def test_large_logits_are_finite(self):
        """Test the stable form on extreme logits."""
        loss = bce_with_logits(np.array([1000.0, -1000.0]), np.array([0.0, 1.0])).item()
        assert loss == pytest.approx(1000.0)

    def test_gradient_closed_form(self):
        """Test that the gradient equals (sigmoid(x) - y) / k."""
        rng = np.random.default_rng(6)
        labels = np.array([1.0, 0.0, 1.0, 0.0, 0.0])
        params = ParamStore({"x": rng.normal(size=5) * 3.0})
        with Tape():
            loss = bce_with_logits(params["x"], labels)
        backward(loss, params)
        expected = (1.0 / (1.0 + np.exp(-params["x"].data)) - labels) / 5
        np.testing.assert_allclose(params.grads["x"], expected, atol=1e-9)
        check_gradients(lambda: bce_with_logits(params["x"], labels), params)

    def test_non_binary_labels(self):
        """Test that labels must be 0 or 1."""
        with pytest.raises(DataError):
            bce_with_logits(np.zeros(2), np.array([0.5, 1.0]))

    def test_nonnegative(self):
        """Test that the loss is never negative."""
        rng = np.random.default_rng(7)
        for _ in range(10):
            logits = rng.normal(size=8) * 5
            labels = rng.integers(0, 2, size=8).astype(float)
            assert bce_with_logits(logits, labels).item() >= 0.0


class TestParamStore:
    """Test cases for ParamStore."""

    def test_lexicographic_order(self):
        """Test that iteration is sorted by name."""
        store = ParamStore({"b": np.zeros(1), "a": np.zeros(2), "c/w0": np.zeros(3)})
        assert store.names() == ["a", "b", "c/w0"]
        assert [name for name, _ in store.items()] == ["a", "b", "c/w0"]

    def test_gradient_slots_match_shapes(self):
        """Test that every gradient slot mirrors its parameter."""
        store = ParamStore({"w": np.zeros((2, 3)), "b": np.zeros(3)})
        for name, tensor in store.items():
            assert store.grads[name].shape == tensor.shape

    def test_sum_gives_ones_and_unreached_gives_zero(self):
        """Test the all-ones gradient of a sum and zeros for unused parameters."""
        store = ParamStore({"used": np.full((2, 2), 3.0), "unused": np.ones(4)})
        with Tape():
            loss = sum_all(store["used"])
        backward(loss, store)
        np.testing.assert_array_equal(store.grads["used"], np.ones((2, 2)))
        np.testing.assert_array_equal(store.grads["unused"], np.zeros(4))

    def test_assign_checks_shape(self):
        """Test that assignment keeps the parameter shape."""
        store = ParamStore({"w": np.zeros(3)})
        store.assign("w", [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(store["w"].data, [1.0, 2.0, 3.0])
        with pytest.raises(ShapeError):
            store.assign("w", np.zeros(4))

    def test_duplicate_name(self):
        """Test that names are unique."""
        store = ParamStore({"w": np.zeros(1)})
        with pytest.raises(KeyError):
            store.add("w", np.zeros(1))

    def test_copy_is_independent(self):
        """Test that copies do not share storage."""
        store = ParamStore({"w": np.zeros(2)})
        clone = store.copy()
        clone["w"].data[0] = 5.0
        assert store["w"].data[0] == 0.0
