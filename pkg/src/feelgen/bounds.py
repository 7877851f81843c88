"""Empirical estimates of the assumption constants and closed-form
information-theoretic generalization bounds for CFL and DFL."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import model as M
from .data import ClientPartition, heterogeneity
from .errors import ParameterError, UndefinedBoundError
from .model import ModelSpec
from .numerics import RngStream

MIN_PROBES = 10


@dataclass(frozen=True)
class BoundConstants:
    """Every quantity the bounds consume.

    ``sigma_sq`` is the aggregate noise variance for CFL and the sum of the
    per-device variances for DFL. ``eta`` lists the step sizes of rounds
    1..T, so ``T == len(eta)``.
    """

    R: float
    L: float
    xi: tuple[float, ...]
    D: tuple[float, ...]
    sigma_sq: float
    lam: float = 0.0
    d: int = 1
    n: int = 1
    eta: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(x) for x in self.xi))
        object.__setattr__(self, "D", tuple(float(x) for x in self.D))
        object.__setattr__(self, "eta", tuple(float(x) for x in self.eta))
        if len(self.xi) != len(self.D) or not self.xi:
            raise ParameterError("xi and D need one entry per client")
        scalars = (self.R, self.L, self.sigma_sq, self.lam, self.d, self.n)
        if min(scalars) < 0 or min(self.xi) < 0 or min(self.D) < 0 or (self.eta and min(self.eta) < 0):
            raise ParameterError("bound constants must be non-negative")
        if not self.lam < 1:
            raise ParameterError(f"lambda must lie in [0, 1), got {self.lam}")
        if self.n < 1:
            raise ParameterError("n must be at least 1")

    @property
    def N(self) -> int:
        return len(self.xi)

    @property
    def T(self) -> int:
        return len(self.eta)

    def replace(self, **changes) -> "BoundConstants":
        values = asdict(self)
        values.update(changes)
        return BoundConstants(**values)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(N=self.N, T=self.T, xi=list(self.xi), D=list(self.D), eta=list(self.eta))
        return out


def _client_term(c: BoundConstants) -> float:
    """sum_i xi_i^2 + L^2 (4 D_i^2 + 1)."""
    return math.fsum(x * x + c.L * c.L * (4.0 * d * d + 1.0) for x, d in zip(c.xi, c.D))


def _require_noise(c: BoundConstants) -> None:
    if not c.sigma_sq > 0:
        raise UndefinedBoundError("bound requires positive channel-noise variance")


def bound_cfl_sq(c: BoundConstants) -> float:
    _require_noise(c)
    coef = c.R**2 * _client_term(c) / (c.sigma_sq * c.N**3 * c.n)
    return math.fsum(coef * e * e for e in c.eta)


def bound_cfl(c: BoundConstants) -> float:
    """Bound on |gen| for the final CFL iterate."""
    return math.sqrt(bound_cfl_sq(c))


def v_series(c: BoundConstants) -> list[float]:
    """V(0..T), with the first step size reused for V(0)."""
    if not c.eta:
        return [0.0]
    s = _client_term(c)
    etas = (c.eta[0],) + c.eta
    return [e * e * s for e in etas]


def bound_dfl_sq(c: BoundConstants) -> float:
    _require_noise(c)
    big_n, n, r2 = c.N, c.n, c.R**2
    v = v_series(c)
    lam2 = c.lam * c.lam
    # lam2 ** k for k = 0..T
    powers = [1.0]
    for _ in range(c.T):
        powers.append(powers[-1] * lam2)
    mix_coef = 2.0 * r2 / (c.sigma_sq * big_n**3 * n)
    dim_coef = 2.0 * r2 * c.d / (big_n**3 * n)
    own_coef = 2.0 * r2 / (c.sigma_sq * big_n * n)
    terms = []
    for t in range(1, c.T + 1):
        for k in range(1, t + 1):
            terms.append(mix_coef * powers[k] * v[t - k])
            terms.append(dim_coef * powers[k])
        terms.append(own_coef * v[t])
    return math.fsum(terms)


def bound_dfl(c: BoundConstants) -> float:
    """Bound on |gen| for the final DFL average model."""
    return math.sqrt(bound_dfl_sq(c))


def bound_generic(mi: Sequence[float], R: float, n: int, N: int) -> float:
    """Mutual-information bound sqrt(2 R^2 / (n N) * sum_i I_i)."""
    mi = [float(x) for x in mi]
    if any(x < 0 for x in mi):
        raise ParameterError("mutual information values must be non-negative")
    if n < 1 or N < 1:
        raise ParameterError("n and N must be positive")
    return math.sqrt(2.0 * R * R / (n * N) * math.fsum(mi))


@dataclass(frozen=True)
class EstimatedConstants:
    R: float
    L: float
    xi: tuple[float, ...]
    D: tuple[float, ...]
    probes: int
    note: str = ("R is half the observed per-sample loss range over probe models, an empirical "
                 "proxy since cross-entropy is unbounded")


def probe_params(spec: ModelSpec, count: int, rng: RngStream, scale: float = 1.0) -> list[np.ndarray]:
    if count < MIN_PROBES:
        raise ParameterError(f"need at least {MIN_PROBES} probe models, got {count}")
    gen = rng.generator()
    return [scale * gen.standard_normal(spec.param_dim) for _ in range(count)]


def estimate_constants(spec: ModelSpec, part: ClientPartition, probes: int | Sequence[np.ndarray] = MIN_PROBES,
                       rng: RngStream | None = None, checkpoints: Sequence[np.ndarray] = (),
                       probe_scale: float = 1.0) -> EstimatedConstants:
    """Estimate R, L, xi_i and D_i by evaluating probe models on every sample.

    ``probes`` is either a count of Gaussian probes around the origin (at
    least ten) or an explicit list of parameter vectors. Trained
    ``checkpoints`` are appended to the probe set.
    """
    if part.n_clients == 0 or any(len(c) == 0 for c in part.clients):
        raise ParameterError("partition has an empty client")
    if isinstance(probes, int):
        ws = probe_params(spec, probes, rng or RngStream.derive(0, "probes"), probe_scale)
    else:
        ws = [np.asarray(w, dtype=np.float64) for w in probes]
    ws = ws + [np.asarray(w, dtype=np.float64) for w in checkpoints]
    if not ws:
        raise ParameterError("no probe models")
    lo, hi, lip = math.inf, -math.inf, 0.0
    xi = np.zeros(part.n_clients)
    for w in ws:
        for i, client in enumerate(part.clients):
            losses = M.per_sample_losses(spec, w, client)
            grads = M.per_sample_grads(spec, w, client)
            lo, hi = min(lo, float(losses.min())), max(hi, float(losses.max()))
            lip = max(lip, float(np.sqrt((grads**2).sum(axis=1)).max()))
            centred = grads - grads.mean(axis=0)
            xi[i] = max(xi[i], math.sqrt(float((centred**2).sum(axis=1).mean())))
    return EstimatedConstants((hi - lo) / 2.0, lip, tuple(xi), tuple(heterogeneity(part)), len(ws))
