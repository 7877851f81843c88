"""Round-by-round CFL and DFL training over noisy channels."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .channel import ChannelSpec, transmit
from .data import ClientPartition, LabeledDataset, heterogeneity
from .errors import ConfigError, ParameterError
from .model import ModelSpec
from .numerics import RngStream
from .topology import MixingMatrix, lam

log = logging.getLogger(__name__)

METHODS = ("fedsgd", "fedprox", "fedgmir")
LR_SCHEDULES = ("constant", "inv_sqrt")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "cfl"
    method: str = "fedsgd"
    rounds: int = 300
    lr: float = 0.05
    lr_schedule: str = "constant"
    batch_size: int = 32
    beta: float = 1.0
    beta_decay: float = 1.0
    mu_prox: float = 0.01
    eval_every: int = 10
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in ("cfl", "dfl"):
            raise ConfigError(f"mode must be 'cfl' or 'dfl', got {self.mode!r}", key="mode")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}", key="method")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}", key="lr_schedule")
        if self.rounds < 0:
            raise ConfigError("rounds must be non-negative", key="rounds")
        if not self.lr > 0:
            raise ConfigError("lr must be positive", key="lr")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1", key="batch_size")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative", key="beta")
        if not 0 < self.beta_decay <= 1:
            raise ConfigError("beta_decay must lie in (0, 1]", key="beta_decay")
        if self.mu_prox < 0:
            raise ConfigError("mu_prox must be non-negative", key="mu_prox")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1", key="eval_every")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1", key="workers")

    def eta(self, t: int) -> float:
        """Learning rate of round ``t`` (1-based)."""
        if self.lr_schedule == "inv_sqrt":
            return self.lr / math.sqrt(t)
        return self.lr

    def eta_schedule(self) -> list[float]:
        return [self.eta(t) for t in range(1, self.rounds + 1)]

    def beta_at(self, t: int) -> float:
        return self.beta * self.beta_decay ** (t - 1)

    def eval_rounds(self) -> list[int]:
        pts = list(range(0, self.rounds + 1, self.eval_every))
        if pts[-1] != self.rounds:
            pts.append(self.rounds)
        return pts


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    train_loss: float
    test_loss: float
    test_acc: float
    gap: float

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.train_loss, self.test_loss, self.test_acc))


@dataclass
class RunResult:
    params: np.ndarray
    metrics: list[RoundMetrics]
    constants: dict
    device_params: np.ndarray | None = None
    diverged: bool = False
    wall_clock: float = 0.0
    eta: list[float] = field(default_factory=list)

    @property
    def final(self) -> RoundMetrics | None:
        return self.metrics[-1] if self.metrics else None


class BatchSampler:
    """Per-device minibatches from a fresh permutation each epoch.

    The permutation for (device, epoch) comes from its own substream, so the
    batch of any round is a pure function of the seed.
    """

    def __init__(self, seed: int, sizes: Sequence[int], batch_size: int):
        self.seed = seed
        self.sizes = list(sizes)
        self.batch_size = batch_size
        self._cache: dict[int, tuple[int, np.ndarray]] = {}

    def batches_per_epoch(self, device: int) -> int:
        return -(-self.sizes[device] // self.batch_size)

    def permutation(self, device: int, epoch: int) -> np.ndarray:
        cached = self._cache.get(device)
        if cached is None or cached[0] != epoch:
            perm = RngStream.derive(self.seed, "batch", device, epoch).generator().permutation(self.sizes[device])
            self._cache[device] = cached = (epoch, perm)
        return cached[1]

    def indices(self, device: int, t: int) -> np.ndarray:
        """Sample indices for round ``t`` (1-based)."""
        nb = self.batches_per_epoch(device)
        epoch, pos = divmod(t - 1, nb)
        perm = self.permutation(device, epoch)
        return perm[pos * self.batch_size:(pos + 1) * self.batch_size]


def local_gradient(method: str, spec: ModelSpec, w_eval, w_anchor, batch, beta_t: float = 0.0,
                   mu_prox: float = 0.0, w0=None) -> np.ndarray:
    """Gradient of the device's local objective for the chosen method."""
    if method == "fedsgd":
        return M.grad(spec, w_eval, batch)
    if method == "fedprox":
        return M.fedprox_grad(spec, w_eval, w_anchor, batch, mu_prox)
    if method == "fedgmir":
        prior = spec.zeros() if w0 is None else w0
        return M.gmir_grad(spec, w_eval, prior, batch, beta_t)
    raise ConfigError(f"unknown method {method!r}", key="method")


def evaluate(spec: ModelSpec, w, train: ClientPartition, test: LabeledDataset, t: int = 0) -> RoundMetrics:
    if len(test) == 0:
        raise ParameterError("test set is empty")
    with np.errstate(over="ignore", invalid="ignore"):
        client_losses = [M.loss(spec, w, c) for c in train.clients]
        train_loss = client_losses[0] + math.fsum(x - client_losses[0] for x in client_losses) / len(client_losses)
        test_loss = M.loss(spec, w, test)
        acc = M.accuracy(spec, w, test)
    return RoundMetrics(t, train_loss, test_loss, acc, test_loss - train_loss)


def _ordered_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    acc = vectors[0].copy()
    for v in vectors[1:]:
        acc += v
    return acc


class _DeviceMap:
    """Maps a per-device function over devices, optionally on a thread pool."""

    def __init__(self, workers: int):
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def __call__(self, fn: Callable[[int], np.ndarray], n: int) -> list[np.ndarray]:
        if self.pool is None:
            return [fn(i) for i in range(n)]
        return list(self.pool.map(fn, range(n)))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.pool is not None:
            self.pool.shutdown()


def _batch(sampler: BatchSampler, part: ClientPartition, i: int, t: int) -> LabeledDataset:
    if len(part.clients[i]) == 0:
        raise ParameterError(f"client {i} holds no data")
    return part.clients[i].subset(sampler.indices(i, t))


def _record(result_metrics, spec, w, part, test, t) -> bool:
    m = evaluate(spec, w, part, test, t)
    result_metrics.append(m)
    return m.finite


def run_cfl(cfg: TrainConfig, spec: ModelSpec, part: ClientPartition, test: LabeledDataset,
            channel: ChannelSpec) -> RunResult:
    """Server-side averaging of device gradients plus one aggregate noise draw per round."""
    start = time.perf_counter()
    n_dev = part.n_clients
    sampler = BatchSampler(cfg.seed, [len(c) for c in part.clients], cfg.batch_size)
    w = spec.zeros()
    w0 = spec.zeros()
    evals = set(cfg.eval_rounds())
    metrics: list[RoundMetrics] = []
    diverged = not _record(metrics, spec, w, part, test, 0)
    sigma = channel.nominal_sigma()
    with _DeviceMap(cfg.workers) as dmap, np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, cfg.rounds + 1):
            if diverged:
                break
            beta_t = cfg.beta_at(t)
            w_t = w

            def device_step(i: int) -> np.ndarray:
                return local_gradient(cfg.method, spec, w_t, w_t, _batch(sampler, part, i, t),
                                      beta_t, cfg.mu_prox, w0)

            # warm the permutation cache serially so threads only read it
            for i in range(n_dev):
                sampler.indices(i, t)
            grads = dmap(device_step, n_dev)
            w = w_t - (cfg.eta(t) / n_dev) * _ordered_sum(grads)
            w = transmit(w, channel, RngStream.derive(cfg.seed, "cfl-noise", t))
            if not np.all(np.isfinite(w)):
                diverged = True
                log.warning("CFL run diverged at round %d", t)
                break
            if t in evals:
                diverged = not _record(metrics, spec, w, part, test, t)
    constants = {"lambda": None, "D": heterogeneity(part).tolist(), "sigma": sigma,
                 "sigma_sq": sigma**2}
    return RunResult(w, metrics, constants, None, diverged, time.perf_counter() - start,
                     cfg.eta_schedule())


def _device_channels(channel: ChannelSpec | Sequence[ChannelSpec], n: int) -> list[ChannelSpec]:
    if isinstance(channel, ChannelSpec):
        return [channel] * n
    chans = list(channel)
    if len(chans) != n:
        raise ParameterError(f"need {n} per-device channels, got {len(chans)}")
    return chans


def mix(theta: np.ndarray, models: Sequence[np.ndarray], i: int) -> np.ndarray:
    """Row ``i`` of theta applied to the device models, summed in index order."""
    acc = None
    for j, wj in enumerate(models):
        c = theta[i, j]
        if c == 0.0:
            continue
        acc = c * wj if acc is None else acc + c * wj
    return acc


def average_model(models: Sequence[np.ndarray]) -> np.ndarray:
    return _ordered_sum(list(models)) / len(models)


def run_dfl(cfg: TrainConfig, spec: ModelSpec, part: ClientPartition, test: LabeledDataset,
            mixing: MixingMatrix, channel: ChannelSpec | Sequence[ChannelSpec]) -> RunResult:
    """Gossip mixing, a local step at each device's own model, and per-device noise.

    Metrics are reported for the average of the device models.
    """
    start = time.perf_counter()
    n_dev = part.n_clients
    if mixing.n != n_dev:
        raise ParameterError(f"mixing matrix is {mixing.n}x{mixing.n} for {n_dev} devices")
    chans = _device_channels(channel, n_dev)
    sampler = BatchSampler(cfg.seed, [len(c) for c in part.clients], cfg.batch_size)
    models = [spec.zeros() for _ in range(n_dev)]
    w0 = spec.zeros()
    evals = set(cfg.eval_rounds())
    metrics: list[RoundMetrics] = []
    diverged = not _record(metrics, spec, average_model(models), part, test, 0)
    theta = mixing.theta
    with _DeviceMap(cfg.workers) as dmap, np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, cfg.rounds + 1):
            if diverged:
                break
            eta, beta_t = cfg.eta(t), cfg.beta_at(t)
            prev = models
            for i in range(n_dev):
                sampler.indices(i, t)

            def device_step(i: int) -> np.ndarray:
                mixed = mix(theta, prev, i)
                g = local_gradient(cfg.method, spec, prev[i], mixed, _batch(sampler, part, i, t),
                                   beta_t, cfg.mu_prox, w0)
                return transmit(mixed - eta * g, chans[i], RngStream.derive(cfg.seed, "dfl-noise", i, t))

            models = dmap(device_step, n_dev)
            if not all(np.all(np.isfinite(m)) for m in models):
                diverged = True
                log.warning("DFL run diverged at round %d", t)
                break
            if t in evals:
                diverged = not _record(metrics, spec, average_model(models), part, test, t)
    sigmas = [c.nominal_sigma() for c in chans]
    constants = {"lambda": lam(mixing), "D": heterogeneity(part).tolist(), "sigma": sigmas,
                 "sigma_sq": float(sum(s * s for s in sigmas))}
    return RunResult(average_model(models), metrics, constants, np.stack(models), diverged,
                     time.perf_counter() - start, cfg.eta_schedule())
