import math

import mpmath
import numpy as np
import pytest

from feelgen.data import LabeledDataset
from feelgen.errors import DimensionError, ParameterError
from feelgen.model import (ModelSpec, accuracy, fedprox_grad, gmir_grad, gmir_value, grad, hvp, loss,
                           per_sample_grads, per_sample_losses, predict)
from feelgen.numerics import finite_diff_grad

LOGISTIC = ModelSpec(4, 3)
MLP = ModelSpec(4, 3, hidden=5)


def batch(spec, m, seed):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.standard_normal((m, spec.feature_dim)), rng.integers(0, spec.classes, m))


def params(spec, seed, scale=0.5):
    return scale * np.random.default_rng(seed + 1000).standard_normal(spec.param_dim)


def test_param_dims():
    assert ModelSpec(20, 5).param_dim == 105
    assert ModelSpec(20, 5, hidden=32).param_dim == 21 * 32 + 33 * 5
    with pytest.raises(ParameterError):
        ModelSpec(3, 1)
    with pytest.raises(DimensionError):
        ModelSpec(3, 2).unpack(np.zeros(5))


@pytest.mark.parametrize("classes", [2, 3, 5, 10])
def test_loss_at_zero_is_log_classes(classes):
    spec = ModelSpec(6, classes)
    b = batch(spec, 37, classes)
    assert loss(spec, spec.zeros(), b) == math.log(classes)


def test_confident_correct_prediction_has_tiny_loss():
    spec = ModelSpec(1, 2)
    # logits (0, 40) for label 1: loss = log(1 + e^-40)
    w = np.array([0.0, 40.0, 0.0, 0.0])
    b = LabeledDataset(np.array([[1.0]]), np.array([1]))
    assert loss(spec, w, b) == pytest.approx(math.log1p(math.exp(-40)), rel=1e-9)
    assert loss(spec, w, b) < 1e-15
    wrong = LabeledDataset(np.array([[1.0]]), np.array([0]))
    assert loss(spec, w, wrong) == pytest.approx(40.0, rel=1e-12)


def test_loss_against_high_precision_oracle():
    spec = LOGISTIC
    b = batch(spec, 3, 11)
    w = params(spec, 11, scale=2.0)
    wm, bv = spec.unpack(w)
    mpmath.mp.dps = 50
    total = mpmath.mpf(0)
    for x, y in zip(b.features, b.labels):
        z = [mpmath.fsum(mpmath.mpf(float(wm[c, k])) * mpmath.mpf(float(x[k])) for k in range(4)) + mpmath.mpf(float(bv[c]))
             for c in range(3)]
        total += mpmath.log(mpmath.fsum(mpmath.exp(zc) for zc in z)) - z[y]
    assert loss(spec, w, b) == pytest.approx(float(total / 3), rel=1e-12)


def test_large_logits_stay_finite():
    spec = ModelSpec(2, 3)
    b = batch(spec, 10, 2)
    w = params(spec, 2, scale=1e4)
    assert np.all(np.isfinite(per_sample_losses(spec, w, b)))
    assert np.all(np.isfinite(grad(spec, w, b)))


def test_batch_validation():
    spec = LOGISTIC
    with pytest.raises(DimensionError):
        loss(spec, spec.zeros(), LabeledDataset(np.zeros((2, 3)), np.zeros(2, dtype=int)))
    with pytest.raises(ParameterError):
        loss(spec, spec.zeros(), LabeledDataset(np.zeros((1, 4)), np.array([3])))


@pytest.mark.parametrize("seed", range(100))
def test_logistic_gradient_matches_finite_differences(seed):
    spec = LOGISTIC
    b, w = batch(spec, 8, seed), params(spec, seed)
    fd = finite_diff_grad(lambda v: loss(spec, v, b), w, 1e-5)
    np.testing.assert_allclose(grad(spec, w, b), fd, atol=1e-7, rtol=1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_mlp_gradient_matches_finite_differences(seed):
    spec = MLP
    b, w = batch(spec, 8, seed), params(spec, seed)
    fd = finite_diff_grad(lambda v: loss(spec, v, b), w, 1e-5)
    np.testing.assert_allclose(grad(spec, w, b), fd, atol=1e-7, rtol=1e-5)


@pytest.mark.parametrize("spec", [LOGISTIC, MLP])
def test_per_sample_grads_average_to_batch_grad(spec):
    b, w = batch(spec, 9, 4), params(spec, 4)
    ps = per_sample_grads(spec, w, b)
    assert ps.shape == (9, spec.param_dim)
    np.testing.assert_allclose(ps.mean(axis=0), grad(spec, w, b), atol=1e-14)


def test_zero_features_gradient_closed_form():
    # with x = 0 only the bias moves: d/db = softmax(b) - onehot(y)
    spec = ModelSpec(3, 4)
    b = LabeledDataset(np.zeros((4, 3)), np.array([0, 1, 1, 3]))
    g = grad(spec, spec.zeros(), b)
    np.testing.assert_array_equal(g[:12], np.zeros(12))
    np.testing.assert_allclose(g[12:], [0.25 - 0.25, 0.25 - 0.5, 0.25, 0.25 - 0.25], atol=1e-16)


def test_gradient_vanishes_at_optimum():
    # bias-only problem: optimum is b = log of class frequencies
    spec = ModelSpec(1, 3)
    labels = np.array([0, 0, 1, 2, 2, 2])
    b = LabeledDataset(np.zeros((6, 1)), labels)
    w = np.concatenate([np.zeros(3), np.log([2 / 6, 1 / 6, 3 / 6])])
    assert np.linalg.norm(grad(spec, w, b)) < 1e-15


@pytest.mark.parametrize("spec, tol", [(LOGISTIC, 1e-6), (MLP, 1e-4)])
@pytest.mark.parametrize("seed", range(5))
def test_hvp_matches_gradient_differences(spec, tol, seed):
    b, w = batch(spec, 6, seed), params(spec, seed)
    v = np.random.default_rng(seed + 7).standard_normal(spec.param_dim)
    fd = finite_diff_grad(lambda u: float(grad(spec, u, b) @ v), w, 1e-5)
    np.testing.assert_allclose(hvp(spec, w, b, v), fd, atol=tol, rtol=tol)


@pytest.mark.parametrize("spec", [LOGISTIC, MLP])
def test_hvp_is_symmetric(spec):
    b, w = batch(spec, 6, 3), params(spec, 3)
    rng = np.random.default_rng(5)
    u, v = rng.standard_normal((2, spec.param_dim))
    assert float(u @ hvp(spec, w, b, v)) == pytest.approx(float(v @ hvp(spec, w, b, u)), rel=1e-5)
    assert hvp(spec, w, b, np.zeros(spec.param_dim)).tolist() == [0.0] * spec.param_dim


def test_gmir_reduces_to_loss():
    spec = LOGISTIC
    b, w = batch(spec, 7, 1), params(spec, 1)
    assert gmir_value(spec, w, w, b, 3.0) == loss(spec, w, b)
    np.testing.assert_array_equal(gmir_grad(spec, w, w, b, 3.0), grad(spec, w, b))
    w0 = params(spec, 2)
    assert gmir_value(spec, w, w0, b, 0.0) == loss(spec, w, b)
    np.testing.assert_array_equal(gmir_grad(spec, w, w0, b, 0.0), grad(spec, w, b))
    with pytest.raises(ParameterError):
        gmir_grad(spec, w, w0, b, -1.0)


@pytest.mark.parametrize("spec, tol", [(LOGISTIC, 1e-6), (MLP, 1e-4)])
@pytest.mark.parametrize("seed", range(5))
def test_gmir_gradient_matches_finite_differences(spec, tol, seed):
    b, w, w0 = batch(spec, 6, seed), params(spec, seed), params(spec, seed + 50)
    fd = finite_diff_grad(lambda u: gmir_value(spec, u, w0, b, 0.7), w, 1e-5)
    np.testing.assert_allclose(gmir_grad(spec, w, w0, b, 0.7), fd, atol=tol, rtol=tol)


@pytest.mark.parametrize("seed", range(5))
def test_fedprox_gradient_matches_finite_differences(seed):
    spec = LOGISTIC
    b, w, ref = batch(spec, 6, seed), params(spec, seed), params(spec, seed + 9)
    mu = 0.3
    f = lambda u: loss(spec, u, b) + 0.5 * mu * float((u - ref) @ (u - ref))  # noqa: E731
    np.testing.assert_allclose(fedprox_grad(spec, w, ref, b, mu), finite_diff_grad(f, w, 1e-5), atol=1e-7)
    np.testing.assert_array_equal(fedprox_grad(spec, w, ref, b, 0.0), grad(spec, w, b))


def test_predict_tie_breaks_to_lowest_index():
    spec = ModelSpec(2, 4)
    assert predict(spec, spec.zeros(), np.ones((3, 2))).tolist() == [0, 0, 0]
    w = np.zeros(spec.param_dim)
    w[-4:] = [0.0, 1.0, 1.0, 0.5]
    assert predict(spec, w, np.zeros((1, 2))).tolist() == [1]


def test_predict_scale_invariant():
    spec = LOGISTIC
    b, w = batch(spec, 50, 6), params(spec, 6)
    np.testing.assert_array_equal(predict(spec, w, b.features), predict(spec, 3.7 * w, b.features))


def test_accuracy_hand_count():
    spec = ModelSpec(2, 2)
    # logit_1 - logit_0 = x[0]: predicts class 1 when x[0] > 0
    w = np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
    x = np.array([[1.0, 0.0], [-1.0, 0.0], [2.0, 5.0], [-3.0, 1.0]])
    ds = LabeledDataset(x, np.array([1, 1, 0, 0]))
    assert accuracy(spec, w, ds) == 0.5
    assert accuracy(spec, w, LabeledDataset(x, np.array([1, 0, 1, 0]))) == 1.0
