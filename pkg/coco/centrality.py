"""
Closeness, betweenness and eigenvector centrality on snapshots.

All three measures use the unweighted topology and are computed per
connected component: all-pairs BFS distances come from
scipy.sparse.csgraph, betweenness is a level-synchronous Brandes
accumulation run for every source at once, and eigenvector centrality is a
power iteration per component.
"""

import logging
import threading
from dataclasses import dataclass
from datetime import date
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from coco.errors import UnknownEntityError
from coco.temporal_graph import GraphKind, StaticGraph, TemporalGraph

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class CentralityTriple:
    closeness: float = 0.0
    betweenness: float = 0.0
    eigenvector: float = 0.0


ZERO_TRIPLE = CentralityTriple()


@dataclass(frozen=True)
class EigenvectorResult:
    values: Dict[str, float]
    converged: bool
    iterations: int


def _components(adjacency: sparse.csr_matrix) -> List[np.ndarray]:
    """Node index arrays of every connected component with at least one edge."""
    n = adjacency.shape[0]
    if n == 0:
        return []
    _, labels = csgraph.connected_components(adjacency, directed=False)
    order = np.argsort(labels, kind="stable")
    groups = np.split(order, np.cumsum(np.bincount(labels))[:-1])
    return [g for g in groups if len(g) > 1]


def _distances(sub: sparse.csr_matrix) -> np.ndarray:
    return csgraph.shortest_path(sub, method="D", directed=False, unweighted=True).astype(np.int64)


def _closeness(levels: np.ndarray, n: int) -> np.ndarray:
    r = levels.shape[0]
    totals = levels.sum(axis=1).astype(np.float64)
    return ((r - 1) / (n - 1)) * ((r - 1) / totals)


def _betweenness_sums(sub: sparse.csr_matrix, levels: np.ndarray) -> np.ndarray:
    """
    Sum over sources of Brandes dependencies for one connected component.

    Row s of sigma holds shortest-path counts from source s; both sweeps
    advance one BFS level at a time for all sources together.
    """
    depth = int(levels.max())
    sigma = np.where(levels == 0, 1.0, 0.0)
    for k in range(1, depth + 1):
        frontier = np.where(levels == k - 1, sigma, 0.0)
        reached = np.asarray(sub @ frontier.T).T
        sigma = np.where(levels == k, reached, sigma)

    delta = np.zeros_like(sigma)
    for k in range(depth - 1, 0, -1):
        ahead = np.where(levels == k + 1, (1.0 + delta) / sigma, 0.0)
        pulled = np.asarray(sub @ ahead.T).T
        delta = np.where(levels == k, sigma * pulled, delta)
    return delta.sum(axis=0)


def _power_iteration(sub: sparse.csr_matrix, tol: float, max_iter: int) -> Tuple[np.ndarray, bool, int]:
    """
    Leading eigenvector of a connected component, max-entry 1.

    Iterates on A + I: same Perron vector as A, without the oscillation
    of bipartite components.
    """
    r = sub.shape[0]
    shifted = sub + sparse.identity(r, format="csr")
    x = np.ones(r)
    for iteration in range(1, max_iter + 1):
        y = np.asarray(shifted @ x).ravel()
        y /= y.max()
        if np.abs(y - x).max() < tol:
            return y, True, iteration
        x = y
    return x, False, max_iter


def closeness_values(graph: StaticGraph) -> np.ndarray:
    n = len(graph.nodes)
    values = np.zeros(n)
    if n < 2:
        return values
    adjacency = graph.adjacency()
    for idx in _components(adjacency):
        values[idx] = _closeness(_distances(adjacency[idx][:, idx]), n)
    return values


def closeness(graph: StaticGraph, node: str) -> float:
    """
    Wasserman-Faust closeness: ((r-1)/(n-1)) * ((r-1)/sum of distances),
    r the reachable set including the node, n the snapshot node count.
    """
    return float(closeness_values(graph)[graph.index_of(node)])


def betweenness_values(graph: StaticGraph) -> np.ndarray:
    n = len(graph.nodes)
    values = np.zeros(n)
    if n < 3:
        return values
    adjacency = graph.adjacency()
    for idx in _components(adjacency):
        sub = adjacency[idx][:, idx]
        values[idx] = _betweenness_sums(sub, _distances(sub))
    return values / ((n - 1) * (n - 2))


def betweenness(graph: StaticGraph) -> Dict[str, float]:
    """Brandes betweenness normalized by (n-1)(n-2)/2 undirected pairs; 0 when n < 3."""
    return dict(zip(graph.nodes, betweenness_values(graph).tolist()))


def eigenvector_values(graph: StaticGraph, tol: float = DEFAULT_TOL,
                       max_iter: int = DEFAULT_MAX_ITER) -> Tuple[np.ndarray, bool, int]:
    if tol <= 0:
        raise ValueError("tol must be positive")
    values = np.zeros(len(graph.nodes))
    converged, iterations = True, 0
    adjacency = graph.adjacency()
    for idx in _components(adjacency):
        vector, ok, used = _power_iteration(adjacency[idx][:, idx], tol, max_iter)
        values[idx] = vector
        converged = converged and ok
        iterations = max(iterations, used)
    if not converged:
        logger.warning(f"Eigenvector centrality did not converge within {max_iter} iterations "
                       f"(village {graph.village_id!r}, date {graph.date})")
    return values, converged, iterations


def eigenvector(graph: StaticGraph, tol: float = DEFAULT_TOL,
                max_iter: int = DEFAULT_MAX_ITER) -> EigenvectorResult:
    """
    Per-component eigenvector centrality, max-entry 1 per component with an
    edge, 0 for isolated nodes. On non-convergence the last iterate is
    returned with converged=False.
    """
    values, converged, iterations = eigenvector_values(graph, tol, max_iter)
    return EigenvectorResult(dict(zip(graph.nodes, values.tolist())), converged, iterations)


def centrality_table(graph: StaticGraph, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> Dict[str, CentralityTriple]:
    """All three measures for every node of a snapshot, sharing one BFS per component."""
    n = len(graph.nodes)
    cc = np.zeros(n)
    bc = np.zeros(n)
    adjacency = graph.adjacency()
    for idx in _components(adjacency):
        sub = adjacency[idx][:, idx]
        levels = _distances(sub)
        cc[idx] = _closeness(levels, n)
        if n >= 3:
            bc[idx] = _betweenness_sums(sub, levels) / ((n - 1) * (n - 2))
    ec, _, _ = eigenvector_values(graph, tol, max_iter)
    return {node: CentralityTriple(float(cc[i]), float(bc[i]), float(ec[i]))
            for i, node in enumerate(graph.nodes)}


class SnapshotCache:
    """
    Centrality tables keyed by (village, graph kind, snapshot date).

    Safe for concurrent use: a miss computes outside the lock and the first
    insert wins, so duplicate work is possible but results are identical.
    """

    def __init__(self, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        self.tol = tol
        self.max_iter = max_iter
        self._tables: Dict[Tuple[str, GraphKind, date], Dict[str, CentralityTriple]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._tables)

    def table(self, graph: TemporalGraph, when: date) -> Dict[str, CentralityTriple]:
        key = (graph.village_id, graph.kind, graph.clamp(when))
        with self._lock:
            cached = self._tables.get(key)
            if cached is not None:
                self.hits += 1
                return cached
            self.misses += 1
        computed = centrality_table(graph.snapshot(when), self.tol, self.max_iter)
        with self._lock:
            return self._tables.setdefault(key, computed)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


def centralities_asof(graph: TemporalGraph, farmer_id: str, when: date,
                      cache: Optional[SnapshotCache] = None) -> CentralityTriple:
    """
    Centrality triple of a farmer on snapshot(graph, when).

    Raises:
        UnknownEntityError: Farmer not in the graph's village
    """
    if not graph.has_farmer(farmer_id):
        raise UnknownEntityError(f"farmer {farmer_id!r} is not in village {graph.village_id!r}")
    if cache is None:
        table = centrality_table(graph.snapshot(when))
    else:
        table = cache.table(graph, when)
    return table.get(farmer_id, ZERO_TRIPLE)
