"""Synthetic Gaussian-mixture data, Dirichlet label-skew partitions and the
per-client heterogeneity measure."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ParameterError
from .numerics import RngStream, dirichlet_sample

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class MixtureSpec:
    """Isotropic Gaussian class-conditionals sharing one standard deviation."""

    means: np.ndarray  # (C, feature_dim)
    std: float = 1.0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 2:
            raise ParameterError("need a (C, feature_dim) array of class means with C >= 2")
        if not self.std > 0:
            raise ParameterError(f"std must be positive, got {self.std}")
        if len({m.tobytes() for m in means}) != means.shape[0]:
            raise ParameterError("class means must be distinct")
        object.__setattr__(self, "means", means)

    @property
    def classes(self) -> int:
        return self.means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]


def default_mixture(classes: int = 5, feature_dim: int = 20, radius: float = 3.0, std: float = 1.0,
                    rng: RngStream | None = None) -> MixtureSpec:
    """Class means drawn uniformly on the sphere of the given radius."""
    gen = (rng or RngStream.derive(0, "mixture")).generator()
    dirs = gen.standard_normal((classes, feature_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return MixtureSpec(radius * dirs, std)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # (m, feature_dim)
    labels: np.ndarray  # (m,) int

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ParameterError("features and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class ClientPartition:
    clients: tuple[LabeledDataset, ...]
    label_marginals: np.ndarray  # (N, C)

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def samples_per_client(self) -> int:
        return len(self.clients[0])

    def pooled(self) -> LabeledDataset:
        return LabeledDataset(np.concatenate([c.features for c in self.clients]),
                              np.concatenate([c.labels for c in self.clients]))


def _check_simplex(p, k: int) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (k,) or np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ParameterError(f"expected a probability vector of length {k}")
    return p


def sample_features(spec: MixtureSpec, labels: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    noise = gen.standard_normal((len(labels), spec.feature_dim))
    return spec.means[labels] + spec.std * noise


def gen_synthetic(spec: MixtureSpec, total: int, class_probs, rng: RngStream) -> LabeledDataset:
    if total < 0:
        raise ParameterError(f"total must be non-negative, got {total}")
    p = _check_simplex(class_probs, spec.classes)
    gen = rng.generator()
    labels = gen.choice(spec.classes, size=total, p=p).astype(np.int64)
    return LabeledDataset(sample_features(spec, labels, gen), labels)


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Round non-negative weights to integer counts summing to ``total``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        raise ParameterError("weights must have positive mass")
    exact = total * w / w.sum()
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short:
        # ties go to the lower index
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _rebalance(demand: np.ndarray, supply: np.ndarray) -> np.ndarray:
    """Cap per-class demand at supply, then refill each client's shortfall.

    ``demand`` is (N, C) with rows summing to n; ``supply`` is (C,). A client
    that loses samples of an over-requested class is refilled from the class
    it already holds most of among those with stock left.
    """
    counts = demand.copy()
    for c in np.flatnonzero(counts.sum(axis=0) > supply):
        counts[:, c] = largest_remainder(counts[:, c].astype(float), int(supply[c]))
    deficit = demand.sum(axis=1) - counts.sum(axis=1)
    stock = supply - counts.sum(axis=0)
    for i in range(len(counts)):
        while deficit[i] > 0:
            avail = np.flatnonzero(stock > 0)
            c = avail[np.argmax(counts[i, avail])]
            take = min(deficit[i], stock[c])
            counts[i, c] += take
            stock[c] -= take
            deficit[i] -= take
    return counts


def dirichlet_partition(ds: LabeledDataset, n_clients: int, alpha: float, n: int,
                        rng: RngStream, classes: int | None = None) -> ClientPartition:
    """Label-skewed split into ``n_clients`` datasets of exactly ``n`` samples.

    For each class a Dir(alpha) vector over clients gives that class's share
    at every client. A client's label mix is its share row weighted by class
    supply, rounded to ``n`` samples by largest remainder. Classes requested
    beyond their supply are capped and the shortfall is refilled from the
    client's own dominant class with stock left.
    """
    if n_clients < 1 or n < 1:
        raise ParameterError("need at least one client and one sample per client")
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    if len(ds) < n_clients * n:
        raise CapacityError(f"source has {len(ds)} samples, partition needs {n_clients * n}")
    n_cls = classes if classes is not None else int(ds.labels.max()) + 1
    supply = np.bincount(ds.labels, minlength=n_cls)
    gen = rng.generator()

    shares = np.stack([dirichlet_sample(gen, alpha, n_clients) for _ in range(n_cls)], axis=1)
    mass = shares * supply[None, :]
    demand = np.zeros((n_clients, n_cls), dtype=np.int64)
    for i in range(n_clients):
        row = mass[i] if mass[i].sum() > 0 else supply.astype(float)
        demand[i] = largest_remainder(row, n)
    counts = _rebalance(demand, supply)

    pools = {c: gen.permutation(np.flatnonzero(ds.labels == c)) for c in range(n_cls)}
    cursor = np.zeros(n_cls, dtype=np.int64)
    clients = []
    for i in range(n_clients):
        idx = []
        for c in range(n_cls):
            k = counts[i, c]
            idx.append(pools[c][cursor[c]:cursor[c] + k])
            cursor[c] += k
        idx = gen.permutation(np.concatenate(idx))
        clients.append(ds.subset(idx))
    marginals = counts / counts.sum(axis=1, keepdims=True)
    return ClientPartition(tuple(clients), marginals)


def heterogeneity(p: ClientPartition) -> np.ndarray:
    """Total-variation distance of each client's label marginal from the mean marginal."""
    q = np.asarray(p.label_marginals, dtype=np.float64)
    # centred on the first client so identical marginals give exactly zero
    mean = q[0] + (q - q[0]).mean(axis=0)
    return 0.5 * np.abs(q - mean).sum(axis=1)


def mixture_marginal(p: ClientPartition) -> np.ndarray:
    q = np.asarray(p.label_marginals, dtype=np.float64).mean(axis=0)
    return q / q.sum()


def global_test_set(spec: MixtureSpec, p: ClientPartition, m: int, rng: RngStream) -> LabeledDataset:
    if m < 1:
        raise ParameterError(f"test set size must be positive, got {m}")
    return gen_synthetic(spec, m, mixture_marginal(p), rng)
