"""Matrix kernels: matmul, row softmax, sigmoid, two-layer MLP."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mera.errors import DimensionError, ParamLookupError, ParameterError
from mera.matrix import matmul, sigmoid, softmax_rows
from mera.autodiff import mlp2_forward
from mera.params import ParameterStore

from conftest import make_mlp_params
from oracles import matmul_triple_loop

formula = pytest.mark.formula


class TestMatmul:
    @formula
    def test_identity_is_neutral(self, rng):
        m = rng.standard_normal((2, 5))
        assert np.array_equal(matmul(np.eye(2), m), m)

    @formula
    def test_hand_arithmetic(self):
        out = matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        assert np.array_equal(out, [[3.0], [7.0]])

    @formula
    def test_matches_triple_loop(self, rng):
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        assert np.allclose(matmul(a, b), matmul_triple_loop(a, b), atol=1e-12, rtol=0)

    def test_shape_mismatch_names_both(self):
        with pytest.raises(DimensionError, match=r"2x3 @ 4x2"):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    @given(
        a=hnp.arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
        b=hnp.arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
        c=hnp.arrays(np.float64, (2, 3), elements=st.floats(-10, 10)),
    )
    @settings(max_examples=50, deadline=None)
    def test_associativity(self, a, b, c):
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.allclose(left, right, atol=1e-9, rtol=0)


class TestSoftmaxRows:
    @formula
    def test_equal_values_give_uniform(self):
        for temp in (0.1, 1.0, 42.0):
            out = softmax_rows(np.full((2, 4), 3.25), temperature=temp)
            assert np.allclose(out, 0.25, atol=1e-15, rtol=0)

    @formula
    def test_argmax_saturation(self):
        out = softmax_rows(np.array([[10.0, 0.0]]), temperature=0.1)
        assert out[0, 0] >= 1.0 - 1e-40

    @formula
    def test_matches_direct_formula(self):
        row = np.array([[1.0, 2.0, 3.0]])
        direct = np.exp(row) / np.exp(row).sum()
        assert np.allclose(softmax_rows(row, 1.0), direct, atol=1e-12, rtol=0)

    def test_non_positive_temperature(self):
        with pytest.raises(ParameterError):
            softmax_rows(np.ones((1, 2)), temperature=0.0)
        with pytest.raises(ParameterError):
            softmax_rows(np.ones((1, 2)), temperature=-1.0)

    @given(
        x=hnp.arrays(np.float64, (4, 6), elements=st.floats(-500, 500)),
        temp=st.floats(1e-3, 1e3),
    )
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, x, temp):
        out = softmax_rows(x, temp)
        assert np.all(np.abs(out.sum(axis=1) - 1.0) <= 1e-12)

    def test_temperature_limits(self, rng):
        x = rng.standard_normal((3, 5))  # distinct entries almost surely
        hot = softmax_rows(x, 1e3)
        assert np.allclose(hot, 0.2, atol=1e-3)
        cold = softmax_rows(x, 1e-3)
        onehot = np.zeros_like(x)
        onehot[np.arange(3), x.argmax(axis=1)] = 1.0
        assert np.allclose(cold, onehot, atol=1e-9)


class TestSigmoid:
    @formula
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    @formula
    def test_symmetry(self, rng):
        for x in rng.standard_normal(20) * 10:
            assert abs(sigmoid(x) + sigmoid(-x) - 1.0) <= 1e-15

    @formula
    def test_at_two(self):
        assert abs(sigmoid(2.0) - 0.880797) <= 1e-6

    def test_stability_at_extremes(self):
        assert sigmoid(1000.0) == 1.0
        assert sigmoid(-1000.0) == 0.0
        arr = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert np.isfinite(arr).all()


class TestMlp2Forward:
    @formula
    def test_zero_parameters_give_zero(self):
        params = ParameterStore()
        params.add("p.W1", np.zeros((3, 4)))
        params.add("p.b1", np.zeros((1, 4)))
        params.add("p.W2", np.zeros((4, 2)))
        params.add("p.b2", np.zeros((1, 2)))
        out = mlp2_forward(np.ones((5, 3)), params, "p")
        assert np.array_equal(out, np.zeros((5, 2)))

    @formula
    def test_identity_relu_passthrough(self, rng):
        params = ParameterStore()
        params.add("p.W1", np.eye(4))
        params.add("p.b1", np.zeros((1, 4)))
        params.add("p.W2", np.eye(4))
        params.add("p.b2", np.zeros((1, 4)))
        x = np.abs(rng.standard_normal((3, 4)))
        assert np.allclose(mlp2_forward(x, params, "p"), x, atol=1e-15, rtol=0)

    @formula
    def test_matches_two_step_oracle(self, rng):
        params = make_mlp_params(4, 6, 2, "p", rng)
        x = rng.standard_normal((3, 4))
        hidden = np.maximum(x @ params.value("p.W1") + params.value("p.b1"), 0.0)
        expected = hidden @ params.value("p.W2") + params.value("p.b2")
        assert np.allclose(mlp2_forward(x, params, "p"), expected, atol=1e-12, rtol=0)

    def test_missing_parameter(self, rng):
        params = make_mlp_params(4, 6, 2, "p", rng)
        with pytest.raises(ParamLookupError):
            mlp2_forward(np.ones((1, 4)), params, "missing")


class TestParameterStore:
    def test_unique_names_enforced(self, rng):
        store = ParameterStore()
        store.add("w", rng.standard_normal((2, 2)))
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", rng.standard_normal((2, 2)))

    def test_gradient_shape_tracks_value(self, rng):
        store = ParameterStore()
        store.add("w", rng.standard_normal((3, 5)))
        assert store.grad("w").shape == (3, 5)
        from mera.errors import DimensionError
        with pytest.raises(DimensionError):
            store.accumulate_grad("w", np.ones((2, 2)))

    def test_zero_grad_leaves_values(self, rng):
        store = ParameterStore()
        value = rng.standard_normal((2, 3))
        store.add("w", value.copy())
        store.accumulate_grad("w", np.ones((2, 3)))
        store.zero_grad()
        assert np.array_equal(store.value("w"), value)
        assert np.array_equal(store.grad("w"), np.zeros((2, 3)))
