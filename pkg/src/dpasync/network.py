"""Random array topologies and Metropolis-Hastings consensus weights."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

MAX_GRAPH_TRIES = 10_000


class ConnectivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class Topology:
    adjacency: np.ndarray  # bool (n, n), symmetric, False diagonal
    weights: np.ndarray  # float (n, n), symmetric doubly stochastic

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighborhood(self, i: int) -> np.ndarray:
        """Indices of node ``i``'s neighbors including ``i`` itself, ascending."""
        mask = self.adjacency[i].copy()
        mask[i] = True
        return np.flatnonzero(mask)

    @classmethod
    def from_adjacency(cls, adjacency) -> "Topology":
        adjacency = np.asarray(adjacency, dtype=bool)
        return cls(adjacency, metropolis_hastings_weights(adjacency))


def is_connected(adjacency) -> bool:
    adjacency = np.asarray(adjacency, dtype=bool)
    n = adjacency.shape[0]
    if n == 0:
        return True
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adjacency[i] & ~seen):
            seen[j] = True
            queue.append(j)
    return bool(seen.all())


def random_connected_graph(n: int, c: float, rng: np.random.Generator,
                           max_tries: int = MAX_GRAPH_TRIES) -> np.ndarray:
    """Erdos-Renyi G(n, c) adjacency, resampled until connected."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    if not 0.05 <= c <= 1.0:
        raise ValueError(f"connectivity must lie in [0.05, 1], got {c}")
    iu = np.triu_indices(n, k=1)
    for _ in range(max_tries):
        adj = np.zeros((n, n), dtype=bool)
        adj[iu] = rng.random(iu[0].size) < c
        adj |= adj.T
        if is_connected(adj):
            return adj
    raise ConnectivityError(f"no connected graph with n={n}, c={c} after {max_tries} samples")


def metropolis_hastings_weights(adjacency) -> np.ndarray:
    """w_nm = 1 / (1 + max(deg_n, deg_m)) on edges; the diagonal takes the remainder."""
    adj = np.asarray(adjacency, dtype=bool)
    deg = adj.sum(axis=1)
    w = np.where(adj, 1.0 / (1.0 + np.maximum.outer(deg, deg)), 0.0)
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def random_topology(n: int, c: float, rng: np.random.Generator) -> Topology:
    return Topology.from_adjacency(random_connected_graph(n, c, rng))
