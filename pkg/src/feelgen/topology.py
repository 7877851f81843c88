"""Communication graphs, Metropolis mixing matrices and their spectral value."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConnectivityError, ParameterError
from .numerics import RngStream, spectral_norm, sym_eigvals

KINDS = ("complete", "ring", "star", "erdos_renyi")
ER_RESAMPLES = 100


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ParameterError(f"invalid edge ({i}, {j}) for n={self.n}")

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "Graph":
        return cls(n, frozenset((min(i, j), max(i, j)) for i, j in pairs if i != j))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def components(self) -> list[list[int]]:
        parent = list(range(self.n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        groups: dict[int, list[int]] = {}
        for v in range(self.n):
            groups.setdefault(find(v), []).append(v)
        return sorted(groups.values())

    def is_connected(self) -> bool:
        return len(self.components()) == 1


def _er_edges(n: int, p: float, gen: np.random.Generator) -> set[tuple[int, int]]:
    iu, ju = np.triu_indices(n, k=1)
    keep = gen.random(iu.size) < p
    return {(int(i), int(j)) for i, j in zip(iu[keep], ju[keep])}


def build_graph(kind: str, n: int, p: float | None = None, rng: RngStream | None = None) -> Graph:
    """Build one of the supported undirected topologies on ``n`` nodes.

    Erdős–Rényi graphs are redrawn up to 100 times until connected. If every
    draw is disconnected, the components of the last draw are chained
    together through one randomly chosen node each, in a random component
    order, which keeps the repaired graph as sparse as the draw allows.
    """
    if n < 2:
        raise ParameterError(f"graph needs at least 2 nodes, got {n}")
    if kind == "complete":
        return Graph.from_pairs(n, ((i, j) for i in range(n) for j in range(i + 1, n)))
    if kind == "ring":
        return Graph.from_pairs(n, ((i, (i + 1) % n) for i in range(n)))
    if kind == "star":
        return Graph.from_pairs(n, ((0, j) for j in range(1, n)))
    if kind != "erdos_renyi":
        raise ParameterError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    if p is None or not (0 < p <= 1):
        raise ParameterError(f"edge probability must lie in (0, 1], got {p}")
    gen = (rng or RngStream(0)).generator()
    g = Graph(n, frozenset())
    for _ in range(ER_RESAMPLES):
        g = Graph(n, frozenset(_er_edges(n, p, gen)))
        if g.is_connected():
            return g
    comps = g.components()
    order = gen.permutation(len(comps))
    reps = [int(gen.choice(comps[c])) for c in order]
    repaired = set(g.edges)
    repaired.update((min(a, b), max(a, b)) for a, b in zip(reps, reps[1:]))
    g = Graph(n, frozenset(repaired))
    if not g.is_connected():
        raise ConnectivityError("Erdős–Rényi repair failed to connect the graph")
    return g


@dataclass(frozen=True)
class MixingMatrix:
    theta: np.ndarray
    lambda_value: float = field(default=float("nan"))

    @property
    def n(self) -> int:
        return self.theta.shape[0]


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis–Hastings weights: 1/(1 + max(deg_i, deg_j)) on each edge."""
    if not g.is_connected():
        raise ConnectivityError(f"graph with {len(g.components())} components has no contracting mixing matrix")
    deg = g.degrees()
    if len(g.edges) == g.n * (g.n - 1) // 2:
        # every weight is 1/n; assigning it directly keeps the rows bitwise equal
        return MixingMatrix(np.full((g.n, g.n), 1.0 / g.n), 0.0)
    theta = np.zeros((g.n, g.n))
    for i, j in g.edges:
        theta[i, j] = theta[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    theta[np.diag_indices(g.n)] = 1.0 - theta.sum(axis=1)
    return MixingMatrix(theta, spectral_value(theta))


def spectral_value(theta) -> float:
    """max(|second eigenvalue|, |smallest eigenvalue|) of a mixing matrix."""
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.shape[0]
    # exact averaging matrix has rank one; skip eigen-rounding noise
    if n and np.max(np.abs(theta - 1.0 / n)) <= 4 * np.finfo(float).eps:
        return 0.0
    ev = sym_eigvals(theta)
    if abs(ev[0] - 1.0) > 1e-9:
        raise ParameterError(f"leading eigenvalue {ev[0]!r} is not 1; matrix is not doubly stochastic")
    if len(ev) == 1:
        return 0.0
    return float(max(abs(ev[1]), abs(ev[-1])))


def lam(m: MixingMatrix) -> float:
    return m.lambda_value if np.isfinite(m.lambda_value) else spectral_value(m.theta)


def single_node() -> MixingMatrix:
    return MixingMatrix(np.ones((1, 1)), 0.0)


def check_mixing(m: MixingMatrix, g: Graph | None = None, tol: float = 1e-9) -> list[str]:
    """Return a list of violated invariants (empty when the matrix is valid)."""
    t = m.theta
    n = t.shape[0]
    problems = []
    if np.max(np.abs(t - t.T)) > 1e-12:
        problems.append("not symmetric")
    if np.max(np.abs(t.sum(axis=1) - 1)) > tol:
        problems.append("row sums differ from 1")
    if np.max(np.abs(t.sum(axis=0) - 1)) > tol:
        problems.append("column sums differ from 1")
    if np.min(t) < 0:
        problems.append("negative entry")
    if g is not None:
        adj = np.zeros((n, n), dtype=bool)
        for i, j in g.edges:
            adj[i, j] = adj[j, i] = True
        off = ~np.eye(n, dtype=bool)
        if np.any(t[off & ~adj] != 0):
            problems.append("weight on a non-edge")
        if np.any(t[adj] <= 0):
            problems.append("non-positive weight on an edge")
    if not 0 <= lam(m) < 1:
        problems.append("spectral value outside [0, 1)")
    return problems


def contraction_check(m: MixingMatrix, k_max: int) -> list[tuple[int, float, float]]:
    """Rows of (k, ||theta^k - P||_2, lambda^k) for k = 1..k_max."""
    if k_max < 1:
        raise ParameterError(f"k_max must be at least 1, got {k_max}")
    n = m.n
    p = np.full((n, n), 1.0 / n)
    lv = lam(m)
    rows = []
    power = np.eye(n)
    for k in range(1, k_max + 1):
        power = power @ m.theta
        rows.append((k, spectral_norm(power - p), lv**k))
    return rows
