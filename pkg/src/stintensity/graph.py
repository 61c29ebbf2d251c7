"""Spatio-temporal neighbour graph over source bins and its Laplacian."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import DimensionError, SourceGrid, ValidationError, penalty_value


@dataclass(frozen=True)
class AdjacencySpec:
    region_edges: frozenset
    temporal_wraparound: bool = True

    def __post_init__(self):
        edges = set()
        for pair in self.region_edges:
            a, b = tuple(pair)
            if a == b:
                raise ValidationError(f"self-adjacency for region {a!r}", "region_edges")
            edges.add(frozenset((a, b)))
        object.__setattr__(self, "region_edges", frozenset(edges))

    def validate(self, grid: SourceGrid):
        known = set(grid.regions)
        for pair in self.region_edges:
            for r in pair:
                if r not in known:
                    raise ValidationError(f"adjacency references unknown region {r!r}", "region_edges")

    def sorted_edges(self, grid: SourceGrid):
        """Edges as ``(k, l)`` region-index pairs with ``k < l``, sorted."""
        out = []
        for pair in self.region_edges:
            a, b = sorted(grid.region_index(r) for r in pair)
            out.append((a, b))
        return sorted(out)


def load_adjacency(path, temporal_wraparound: bool = True) -> AdjacencySpec:
    """Read an edge-list file: two region codes per line, ``#`` comments."""
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected two region codes", "adjacency")
        edges.append(tuple(parts))
    return AdjacencySpec(frozenset(edges), temporal_wraparound)


@dataclass(frozen=True)
class Laplacian:
    matrix: sp.csr_matrix
    w_s: float
    w_t: float
    edges: np.ndarray  # (E, 2) source-index pairs j < k
    weights: np.ndarray  # (E,)

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, v):
        return self.matrix @ v


def graph_edges(grid: SourceGrid, adj: AdjacencySpec):
    """Source-bin edge list as ``(pairs, is_temporal)``."""
    T = grid.time_slots
    pairs, temporal = [], []
    for r in range(grid.n_regions):
        base = r * T
        for t in range(T - 1):
            pairs.append((base + t, base + t + 1))
            temporal.append(True)
        if adj.temporal_wraparound and T > 2:
            pairs.append((base, base + T - 1))
            temporal.append(True)
    for a, b in adj.sorted_edges(grid):
        for t in range(T):
            pairs.append((a * T + t, b * T + t))
            temporal.append(False)
    return np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(temporal, dtype=bool)


def build_laplacian(grid: SourceGrid, adj: AdjacencySpec, w_s: float, w_t: float) -> Laplacian:
    """Combinatorial Laplacian ``D - W`` with spatial weight ``w_s`` and temporal ``w_t``.

    With ``T == 2`` the wrap-around edge would duplicate the single temporal
    edge, so it is only added for ``T > 2``.
    """
    if not (w_s > 0 and np.isfinite(w_s)):
        raise ValidationError("spatial weight must be positive", "w_s")
    if not (w_t > 0 and np.isfinite(w_t)):
        raise ValidationError("temporal weight must be positive", "w_t")
    adj.validate(grid)
    pairs, temporal = graph_edges(grid, adj)
    w = np.where(temporal, float(w_t), float(w_s))
    n = grid.n
    if len(pairs):
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        W = sp.coo_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n)).tocsr()
    else:
        W = sp.csr_matrix((n, n))
    deg = np.asarray(W.sum(axis=1)).ravel()
    L = (sp.diags(deg) - W).tocsr()
    L.sort_indices()
    return Laplacian(L, float(w_s), float(w_t), pairs, w)


def penalty(L: Laplacian, theta) -> float:
    """Smoothness penalty ``0.5 * theta^T L theta``."""
    return penalty_value(L, theta)


def penalty_edges(L: Laplacian, theta) -> float:
    """Same penalty summed over edges: ``0.5 * sum w_jk (theta_j - theta_k)^2``."""
    theta = np.asarray(theta, dtype=float)
    if theta.size != L.shape[0]:
        raise DimensionError("theta length does not match the graph")
    if not len(L.edges):
        return 0.0
    d = theta[L.edges[:, 0]] - theta[L.edges[:, 1]]
    return 0.5 * float(np.sum(L.weights * d * d))
