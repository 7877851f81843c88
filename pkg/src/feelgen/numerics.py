"""Deterministic numeric kernels: seeded substreams, a symmetric eigensolver,
Gaussian and Dirichlet sampling, and a central-difference gradient oracle."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError, ParameterError, SymmetryError

_MASK64 = (1 << 64) - 1
SYMMETRY_TOL = 1e-12


def stream_id(*tags: object) -> int:
    """Hash an ordered tuple of tags (ints, strings) into a 64-bit stream id."""
    h = hashlib.blake2b(digest_size=8)
    for tag in tags:
        h.update(repr(tag).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random substream.

    Backed by the counter-based Philox generator keyed on ``(seed, stream_id)``,
    so two streams with the same pair always produce the same samples no
    matter which thread draws them or in what order.
    """

    seed: int
    stream_id: int = 0

    @classmethod
    def derive(cls, seed: int, *tags: object) -> "RngStream":
        return cls(seed & _MASK64, stream_id(*tags) if tags else 0)

    def child(self, *tags: object) -> "RngStream":
        return RngStream(self.seed, stream_id(self.stream_id, *tags))

    def generator(self) -> np.random.Generator:
        key = (self.seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))


def _as_square(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    return a


def check_symmetric(m, tol: float = SYMMETRY_TOL) -> np.ndarray:
    a = _as_square(m)
    if a.size and np.max(np.abs(a - a.T)) > tol:
        raise SymmetryError(f"matrix is not symmetric within {tol:g}")
    return a


def jacobi_eigh(m, *, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted descending
    and eigenvectors as columns.
    """
    a = check_symmetric(m).copy()
    n = a.shape[0]
    v = np.eye(n)
    if n <= 1:
        return np.diag(a).copy(), v
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(a, -1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :]
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise NumericError("Jacobi eigensolver did not converge")
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def sym_eigvals(m) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, descending."""
    return jacobi_eigh(m)[0]


def spectral_norm(m) -> float:
    """Largest singular value (operator 2-norm) of a square matrix."""
    a = _as_square(m)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def gauss_vector(rng: RngStream, d: int, sigma: float) -> np.ndarray:
    if sigma < 0 or not math.isfinite(sigma):
        raise ParameterError(f"sigma must be finite and non-negative, got {sigma}")
    if d < 0:
        raise ParameterError(f"length must be non-negative, got {d}")
    if sigma == 0:
        return np.zeros(d)
    return sigma * rng.generator().standard_normal(d)


def dirichlet_sample(rng: RngStream | np.random.Generator, alpha: float, k: int) -> np.ndarray:
    """Draw from Dir(alpha * 1_k) by normalising Gamma(alpha) draws."""
    if not alpha > 0 or not math.isfinite(alpha):
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if k < 1:
        raise ParameterError(f"k must be at least 1, got {k}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    if k == 1:
        return np.ones(1)
    for _ in range(100):
        g = gen.standard_gamma(alpha, size=k)
        total = g.sum()
        if total > 0 and math.isfinite(total):
            p = g / total
            # renormalise once more so the simplex constraint holds to rounding
            return p / p.sum()
    # every gamma draw underflowed: fall back to a vertex of the simplex
    p = np.zeros(k)
    p[gen.integers(k)] = 1.0
    return p


def finite_diff_grad(f: Callable[[np.ndarray], float], w, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    w = np.asarray(w, dtype=np.float64)
    g = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e.flat[i] = eps
        hi, lo = f(w + e), f(w - e)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        g.flat[i] = (hi - lo) / (2.0 * eps)
    return g
