"""Softmax classifiers over flat parameter vectors.

Two architectures share one flat layout:

* logistic: ``W`` (C x f) row-major, then bias ``b`` (C).
* mlp: ``W1`` (h x f), ``b1`` (h), ``W2`` (C x h), ``b2`` (C), tanh hidden layer.

All functions are pure and operate on a whole batch at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import DimensionError, ParameterError


class Batch(Protocol):
    features: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class ModelSpec:
    feature_dim: int
    classes: int
    hidden: int = 0  # 0 selects the logistic model

    def __post_init__(self):
        if self.feature_dim < 1 or self.classes < 2 or self.hidden < 0:
            raise ParameterError(f"invalid model dimensions {self}")

    @property
    def arch(self) -> str:
        return "mlp" if self.hidden else "logistic"

    @property
    def param_dim(self) -> int:
        f, c, h = self.feature_dim, self.classes, self.hidden
        if h:
            return (f + 1) * h + (h + 1) * c
        return (f + 1) * c

    def zeros(self) -> np.ndarray:
        return np.zeros(self.param_dim)

    def unpack(self, w: np.ndarray) -> tuple[np.ndarray, ...]:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.param_dim,):
            raise DimensionError(f"expected {self.param_dim} parameters, got shape {w.shape}")
        f, c, h = self.feature_dim, self.classes, self.hidden
        if not h:
            return w[: c * f].reshape(c, f), w[c * f:]
        o = 0
        w1 = w[o:o + h * f].reshape(h, f); o += h * f
        b1 = w[o:o + h]; o += h
        w2 = w[o:o + c * h].reshape(c, h); o += c * h
        return w1, b1, w2, w[o:]


def _xy(spec: ModelSpec, b: Batch) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(b.features, dtype=np.float64)
    y = np.asarray(b.labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != spec.feature_dim or len(y) != len(x):
        raise DimensionError(f"batch shape {x.shape} does not match feature_dim={spec.feature_dim}")
    if len(y) == 0:
        raise ParameterError("empty batch")
    if y.min() < 0 or y.max() >= spec.classes:
        raise ParameterError("label out of range")
    return x, y


def _forward(spec: ModelSpec, w, x: np.ndarray):
    parts = spec.unpack(w)
    if spec.hidden:
        w1, b1, w2, b2 = parts
        h = np.tanh(x @ w1.T + b1)
        return h @ w2.T + b2, h
    wm, bv = parts
    return x @ wm.T + bv, None


def logits(spec: ModelSpec, w, features) -> np.ndarray:
    return _forward(spec, w, np.atleast_2d(np.asarray(features, dtype=np.float64)))[0]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))


def per_sample_losses(spec: ModelSpec, w, b: Batch) -> np.ndarray:
    x, y = _xy(spec, b)
    z, _ = _forward(spec, w, x)
    return -_log_softmax(z)[np.arange(len(y)), y]


def loss(spec: ModelSpec, w, b: Batch) -> float:
    """Mean softmax cross-entropy."""
    losses = per_sample_losses(spec, w, b)
    # centring on one sample keeps a constant batch exact
    ref = float(losses[0])
    return ref + math.fsum(losses - ref) / len(losses)


def _backprop(spec: ModelSpec, w, x: np.ndarray, y: np.ndarray, *, per_sample: bool) -> np.ndarray:
    z, h = _forward(spec, w, x)
    ls = _log_softmax(z)
    delta = np.exp(ls)
    delta[np.arange(len(y)), y] -= 1.0
    m = len(y)
    if not spec.hidden:
        if per_sample:
            gw = np.einsum("bc,bf->bcf", delta, x).reshape(m, -1)
            return np.concatenate([gw, delta], axis=1)
        return np.concatenate([(delta.T @ x).ravel(), delta.sum(axis=0)]) / m
    _, _, w2, _ = spec.unpack(w)
    delta1 = (delta @ w2) * (1.0 - h * h)
    if per_sample:
        return np.concatenate([
            np.einsum("bh,bf->bhf", delta1, x).reshape(m, -1), delta1,
            np.einsum("bc,bh->bch", delta, h).reshape(m, -1), delta,
        ], axis=1)
    return np.concatenate([
        (delta1.T @ x).ravel(), delta1.sum(axis=0), (delta.T @ h).ravel(), delta.sum(axis=0),
    ]) / m


def grad(spec: ModelSpec, w, b: Batch) -> np.ndarray:
    x, y = _xy(spec, b)
    return _backprop(spec, w, x, y, per_sample=False)


def per_sample_grads(spec: ModelSpec, w, b: Batch) -> np.ndarray:
    """(batch, param_dim) matrix of per-example gradients."""
    x, y = _xy(spec, b)
    return _backprop(spec, w, x, y, per_sample=True)


def hvp(spec: ModelSpec, w, b: Batch, v) -> np.ndarray:
    """Hessian of the mean loss times ``v``.

    Exact for the logistic model. For the MLP a forward difference of
    :func:`grad` along ``v`` is used, with the perturbation scaled so its
    norm is ``1e-6 * (1 + ||w||)``.
    """
    x, y = _xy(spec, b)
    w = np.asarray(w, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != w.shape:
        raise DimensionError("direction and parameters differ in shape")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return np.zeros_like(w)
    if spec.hidden:
        h = 1e-6 * (1.0 + float(np.linalg.norm(w))) / vnorm
        g0 = _backprop(spec, w, x, y, per_sample=False)
        return (_backprop(spec, w + h * v, x, y, per_sample=False) - g0) / h
    z, _ = _forward(spec, w, x)
    s = np.exp(_log_softmax(z))
    vw, vb = spec.unpack(v)
    dz = x @ vw.T + vb
    ds = s * (dz - np.sum(s * dz, axis=1, keepdims=True))
    return np.concatenate([(ds.T @ x).ravel(), ds.sum(axis=0)]) / len(y)


def gmir_residual(spec: ModelSpec, w, w0, b: Batch) -> float:
    """Inner product of the batch gradient with the displacement from the prior."""
    return float(grad(spec, w, b) @ (np.asarray(w) - np.asarray(w0)))


def gmir_value(spec: ModelSpec, w, w0, b: Batch, beta: float) -> float:
    if beta < 0:
        raise ParameterError(f"beta must be non-negative, got {beta}")
    r = gmir_residual(spec, w, w0, b)
    return loss(spec, w, b) + beta * r * r


def gmir_grad(spec: ModelSpec, w, w0, b: Batch, beta: float) -> np.ndarray:
    """Gradient of loss + beta * (grad(w) . (w - w0))**2."""
    if beta < 0:
        raise ParameterError(f"beta must be non-negative, got {beta}")
    g = grad(spec, w, b)
    if beta == 0:
        return g
    disp = np.asarray(w, dtype=np.float64) - np.asarray(w0, dtype=np.float64)
    r = float(g @ disp)
    if r == 0.0:
        return g
    return g + 2.0 * beta * r * (hvp(spec, w, b, disp) + g)


def fedprox_grad(spec: ModelSpec, w, w_ref, b: Batch, mu_prox: float) -> np.ndarray:
    if mu_prox < 0:
        raise ParameterError(f"mu_prox must be non-negative, got {mu_prox}")
    g = grad(spec, w, b)
    if mu_prox == 0:
        return g
    return g + mu_prox * (np.asarray(w, dtype=np.float64) - np.asarray(w_ref, dtype=np.float64))


def predict(spec: ModelSpec, w, features) -> np.ndarray:
    """Arg-max class per row; ties resolve to the lowest index."""
    return np.argmax(logits(spec, w, features), axis=1)


def accuracy(spec: ModelSpec, w, ds: Batch) -> float:
    if len(ds.labels) == 0:
        return float("nan")
    return float(np.mean(predict(spec, w, ds.features) == np.asarray(ds.labels)))
