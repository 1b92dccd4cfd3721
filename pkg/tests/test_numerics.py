import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import scalar_mlp_loss
from fedtoga import kernels
from fedtoga.errors import ContractError
from fedtoga.numerics import (Batch, LogisticModel, MLPModel, QuadraticModel, finite_diff_grad,
                              grad, init_params, loss, normalize_to_radius)


@pytest.mark.parametrize("v, rho, expected", [
    ((3.0, 4.0), 0.1, (0.06, 0.08)),
    ((0.0, 0.0), 0.1, (0.0, 0.0)),
    ((5.0,), 2.0, (2.0,)),
])
def test_normalize_examples(v, rho, expected):
    out = normalize_to_radius(np.array(v), rho, 1e-12)
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=0)


finite_vecs = arrays(np.float64, st.integers(1, 8),
                     elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False))


@given(finite_vecs, st.floats(1e-3, 10.0))
def test_normalized_norm_is_rho(v, rho):
    out = normalize_to_radius(v, rho)
    if np.linalg.norm(v) > 1e-12:
        assert abs(np.linalg.norm(out) - rho) <= 1e-10 * rho
    else:
        assert not out.any()


@given(finite_vecs, st.floats(1e-3, 1e3), st.floats(0.01, 5.0))
def test_normalize_scale_invariant(v, lam, rho):
    if np.linalg.norm(v) <= 1e-9:
        return
    np.testing.assert_allclose(normalize_to_radius(lam * v, rho), normalize_to_radius(v, rho),
                               rtol=1e-10, atol=1e-10 * rho)


def test_quadratic_loss_and_grad(empty_batch):
    q = QuadraticModel(np.eye(2), [1.0, 1.0])
    assert loss(q, np.zeros(2), empty_batch) == 1.0
    np.testing.assert_array_equal(grad(q, np.zeros(2), empty_batch), [-1.0, -1.0])
    q2 = QuadraticModel(np.diag([2.0, 1.0]), [0.0, 0.0])
    np.testing.assert_array_equal(grad(q2, np.ones(2)), [2.0, 1.0])


def test_quadratic_rejects_bad_matrices():
    with pytest.raises(ContractError):
        QuadraticModel([[1.0, 0.5], [0.0, 1.0]], [0, 0])
    with pytest.raises(ContractError):
        QuadraticModel(np.diag([1.0, -1.0]), [0, 0])


def test_logistic_uniform_predictor():
    g = np.random.default_rng(4)
    batch = Batch(g.standard_normal((7, 3)), g.integers(0, 2, 7))
    assert loss(LogisticModel(3), np.zeros(3), batch) == pytest.approx(np.log(2), abs=1e-15)


def test_logistic_grad_single_sample():
    batch = Batch(np.array([[1.0, 0.0]]), np.array([1]))
    np.testing.assert_allclose(grad(LogisticModel(2), np.zeros(2), batch), [-0.5, 0.0], atol=1e-15)


def test_mlp_loss_matches_scalar_reimplementation(seed0_batch):
    model = MLPModel((3, 4, 3))
    p = init_params(model, np.random.default_rng(0))
    expected = scalar_mlp_loss(p, seed0_batch.inputs, seed0_batch.labels, model.widths)
    assert loss(model, p, seed0_batch) == pytest.approx(expected, rel=1e-13)


def test_finite_diff_examples(empty_batch):
    q = QuadraticModel(np.eye(2), [1.0, 1.0])
    np.testing.assert_allclose(finite_diff_grad(q, np.zeros(2), empty_batch, 1e-5), [-1, -1], atol=1e-9)
    flat = QuadraticModel(np.zeros((2, 2)), [3.0, -2.0])
    np.testing.assert_array_equal(finite_diff_grad(flat, np.array([0.5, 0.5])), [0.0, 0.0])


def test_mlp_fd_matches_grad(seed0_batch):
    model = MLPModel((3, 4, 3))
    p = init_params(model, np.random.default_rng(0))
    a = grad(model, p, seed0_batch)
    b = finite_diff_grad(model, p, seed0_batch)
    assert np.abs(a - b).max() <= 1e-4 * np.abs(a).max()


def test_dimension_mismatch(seed0_batch):
    with pytest.raises(ContractError):
        loss(MLPModel((3, 4, 3)), np.zeros(5), seed0_batch)
    with pytest.raises(ContractError):
        grad(QuadraticModel(np.eye(2), [0, 0]), np.zeros(3))


def test_mlp_needs_hidden_layer():
    with pytest.raises(ContractError):
        MLPModel((3, 2))


def test_pure_and_bitwise_repeatable(seed0_batch):
    model = MLPModel((3, 5, 3))
    p = init_params(model, np.random.default_rng(9))
    assert loss(model, p, seed0_batch) == loss(model, p, seed0_batch)
    assert np.array_equal(grad(model, p, seed0_batch), grad(model, p, seed0_batch))


@pytest.mark.parametrize("widths,bias", [((3, 5, 3), True), ((3, 4, 6, 2), True), ((3, 4), False)])
def test_numpy_and_jit_kernels_agree(seed0_batch, widths, bias):
    g = np.random.default_rng(11)
    X, y = seed0_batch.inputs, seed0_batch.labels % widths[-1]
    p = g.uniform(-1, 1, kernels.mlp_param_count(widths, bias))
    w = np.array(widths, dtype=np.int64)
    l1, g1 = kernels.mlp_loss_grad_np(p, X, y, w, bias)
    l2, g2 = kernels.mlp_loss_grad_jit(p, X, y, w, bias)
    assert l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(g1, g2, rtol=1e-10, atol=1e-14)
    assert kernels.mlp_loss_jit(p, X, y, w, bias) == pytest.approx(l1, rel=1e-12)
    np.testing.assert_allclose(kernels.mlp_logits_np(p, X, w, bias),
                               kernels.mlp_logits_jit(p, X, w, bias), rtol=1e-12, atol=1e-14)


def test_logistic_kernels_agree(seed0_batch):
    X, y = seed0_batch.inputs, seed0_batch.labels % 2
    w = np.array([0.3, -1.2, 2.0])
    l1, g1 = kernels.logistic_loss_grad_np(w, X, y)
    l2, g2 = kernels.logistic_loss_grad_loops(w, X, y)
    assert l1 == pytest.approx(l2, rel=1e-13)
    np.testing.assert_allclose(g1, g2, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_oracle_property(seed):
    g = np.random.default_rng(seed)
    batch = Batch(g.standard_normal((6, 3)), g.integers(0, 3, 6))
    for model in (MLPModel((3, 4, 3)), LogisticModel(3, 3), LogisticModel(3, 2)):
        y = batch.labels % model.num_classes
        b = Batch(batch.inputs, y)
        p = g.uniform(-1.5, 1.5, model.num_params)
        a = grad(model, p, b)
        fd = finite_diff_grad(model, p, b)
        assert np.abs(a - fd).max() / (1 + np.abs(a).max()) <= 1e-4
