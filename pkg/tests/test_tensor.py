"""Tensor op semantics and finite-difference gradient agreement."""

import math

import numpy as np
import pytest

from convseq import tensor
from convseq.tensor import (
    Tensor,
    ShapeError,
    add,
    check_gradients,
    layer_norm,
    matmul,
    mul,
    relu,
    scale,
    sigmoid,
    softmax,
    tensor_sum,
)

from oracles import matmul_oracle


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_allclose(matmul(a, b).data, [[3, 4], [5, 6]])

    def test_zero(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[0.0], [0.0]])
        np.testing.assert_allclose(matmul(a, b).data, [[0.0]])

    def test_hand_computed(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        got = matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, [[19, 22], [43, 50]])
        np.testing.assert_allclose(got, matmul_oracle(a, b))

    def test_random_against_oracle(self, rng):
        for _ in range(20):
            a = rng.standard_normal((3, 5))
            b = rng.standard_normal((5, 4))
            np.testing.assert_allclose(
                matmul(Tensor(a), Tensor(b)).data, matmul_oracle(a, b), atol=1e-12
            )

    def test_transpose_b(self, rng):
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal((4, 5))
        np.testing.assert_allclose(
            matmul(Tensor(a), Tensor(b), transpose_b=True).data, a @ b.T
        )

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


class TestSoftmax:
    def test_constant_input_is_uniform(self):
        x = Tensor([5.5, 5.5, 5.5])
        np.testing.assert_allclose(softmax(x, 0).data, [1 / 3, 1 / 3, 1 / 3])

    def test_closed_form_ratio(self):
        x = Tensor([0.0, math.log(2.0)])
        np.testing.assert_allclose(softmax(x, 0).data, [1 / 3, 2 / 3])

    def test_large_logits_stable(self):
        y = softmax(Tensor([1000.0, 0.0]), 0).data
        assert np.all(np.isfinite(y))
        np.testing.assert_allclose(y, [1.0, 0.0], atol=1e-12)

    def test_sums_to_one(self, rng):
        for _ in range(50):
            x = Tensor(rng.standard_normal((4, 6)) * rng.uniform(0.1, 50))
            y = softmax(x, 1).data
            np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(y > 0)

    def test_axis_out_of_bounds(self):
        with pytest.raises(ShapeError):
            softmax(Tensor([1.0, 2.0]), 2)


class TestLayerNorm:
    def test_constant_rows_give_zero(self):
        x = Tensor(np.full((3, 4), 2.5))
        gamma = Tensor(np.ones(4))
        beta = Tensor(np.zeros(4))
        np.testing.assert_allclose(layer_norm(x, gamma, beta, eps=1e-6).data, 0.0)

    def test_two_point_closed_form(self):
        # mean 2, population std 1 -> normalized [-1, 1]; tiny eps stands in
        # for the eps = 0 limit without tripping the guard.
        x = Tensor([[1.0, 3.0]])
        y = layer_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-15)
        np.testing.assert_allclose(y.data, [[-1.0, 1.0]], atol=1e-7)

    def test_zero_gamma_broadcasts_beta(self, rng):
        x = Tensor(rng.standard_normal((3, 4)))
        beta = Tensor(rng.standard_normal(4))
        y = layer_norm(x, Tensor(np.zeros(4)), beta, eps=1e-6)
        np.testing.assert_allclose(y.data, np.broadcast_to(beta.data, (3, 4)))

    def test_eps_zero_guarded(self):
        x = Tensor([[1.0]])
        with pytest.raises(ValueError, match="eps"):
            layer_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)), eps=0.0)

    def test_normalizes_mean_and_variance(self, rng):
        x = Tensor(rng.standard_normal((5, 8)) * 3 + 7)
        y = layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-12).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)


class TestElementwise:
    def test_sigmoid_symmetry_point(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_relu_sign_split(self):
        np.testing.assert_allclose(relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])

    def test_mul_annihilator(self, rng):
        x = Tensor(rng.standard_normal((3, 3)))
        np.testing.assert_allclose(mul(x, Tensor(np.zeros((3, 3)))).data, 0.0)

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_scale(self):
        np.testing.assert_allclose(scale(Tensor([1.0, -2.0]), 3.0).data, [3.0, -6.0])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        tensor_sum(x).backward()
        np.testing.assert_allclose(x.grad, np.ones((3, 4)))

    def test_quadratic_closed_form(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        tensor_sum(mul(x, x)).backward()
        np.testing.assert_allclose(x.grad, [2.0, -4.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            mul(x, x).backward()

    def test_off_path_parameters_get_zero_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        unused = Tensor([5.0], requires_grad=True)
        tensor_sum(x).backward(parameters=[x, unused])
        np.testing.assert_allclose(unused.grad, [0.0])

    def test_grad_accumulates_across_disjoint_subgraphs(self, rng):
        # backward through a sum of two subgraphs equals independent passes
        x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        y = Tensor(rng.standard_normal((2, 3)), requires_grad=True)

        loss_a = tensor_sum(mul(x, x))
        loss_b = tensor_sum(sigmoid(y))
        x.zero_grad(); y.zero_grad()
        add(loss_a, loss_b).backward()
        gx, gy = x.grad.copy(), y.grad.copy()

        x.zero_grad(); y.zero_grad()
        tensor_sum(mul(x, x)).backward()
        tensor_sum(sigmoid(y)).backward()
        np.testing.assert_allclose(gx, x.grad)
        np.testing.assert_allclose(gy, y.grad)

    def test_diamond_graph_reuse(self):
        # x used twice: d/dx sum(x*x + x) = 2x + 1
        x = Tensor([3.0], requires_grad=True)
        tensor_sum(add(mul(x, x), x)).backward()
        np.testing.assert_allclose(x.grad, [7.0])


class TestFiniteDifferences:
    """Every differentiable op matches central differences (step 1e-5)."""

    def test_random_ops_pass(self, rng):
        for _ in range(5):
            a = Tensor(rng.standard_normal((4, 6)) * 0.7, requires_grad=True)
            b = Tensor(rng.standard_normal((6, 3)) * 0.7, requires_grad=True)
            g = Tensor(rng.standard_normal(3), requires_grad=True)
            be = Tensor(rng.standard_normal(3), requires_grad=True)

            def f():
                h = sigmoid(matmul(a, b))
                h = layer_norm(h, g, be, eps=1e-3)
                return tensor_sum(mul(softmax(h, 1), relu(h)))

            assert check_gradients(f, [a, b, g, be]) < 1e-4

    def test_composed_graph_against_finite_differences(self, rng):
        x = Tensor(rng.standard_normal((2, 5)), requires_grad=True)

        def f():
            return tensor_sum(mul(sigmoid(x), scale(x, 0.5)))

        assert check_gradients(f, [x]) < 1e-4


class TestEmbedConcatReshape:
    def test_embed_gathers_rows(self, rng):
        table = Tensor(rng.standard_normal((5, 3)))
        out = tensor.embed(table, [0, 4, 4])
        np.testing.assert_allclose(out.data, table.data[[0, 4, 4]])

    def test_embed_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            tensor.embed(Tensor(np.zeros((5, 3))), [5])

    def test_embed_scatter_adds_repeated_ids(self):
        table = Tensor(np.zeros((3, 2)), requires_grad=True)
        tensor_sum(tensor.embed(table, [1, 1])).backward()
        np.testing.assert_allclose(table.grad, [[0, 0], [2, 2], [0, 0]])

    def test_concat_roundtrip_grads(self, rng):
        a = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 3)), requires_grad=True)

        def f():
            return tensor_sum(sigmoid(tensor.concat([a, b], axis=1)))

        assert check_gradients(f, [a, b]) < 1e-4

    def test_reshape_preserves_values(self, rng):
        x = Tensor(rng.standard_normal((2, 6)))
        np.testing.assert_allclose(
            tensor.reshape(x, (2, 3, 2)).data, x.data.reshape(2, 3, 2)
        )
