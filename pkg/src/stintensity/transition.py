"""Column-stochastic source-to-detector transition matrices."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .model import (
    NO_LOCATION,
    PRECISE,
    SELF_DECLARED,
    DetectorLayout,
    DimensionError,
    SourceGrid,
    ValidationError,
    kinds_of,
)

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class KindFractions:
    precise: float = 0.03
    self_declared: float = 0.47
    no_location: float = 0.50

    def __post_init__(self):
        vals = (self.precise, self.self_declared, self.no_location)
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValidationError("kind fractions must lie in [0, 1]", "fractions")
        if abs(sum(vals) - 1.0) > STOCHASTIC_TOL:
            raise ValidationError(f"kind fractions sum to {sum(vals)!r}, not 1", "fractions")

    def as_tuple(self):
        return self.precise, self.self_declared, self.no_location


@dataclass(frozen=True)
class MisDeclareMatrix:
    """``M[r, s]`` = Pr(declared region r | actual region s)."""

    M: np.ndarray
    regions: tuple

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        k = len(self.regions)
        if M.shape != (k, k):
            raise DimensionError(f"M must be {k}x{k}, got {M.shape}")
        if np.any(M < 0) or np.any(M > 1):
            raise ValidationError("M entries must lie in [0, 1]", "M")
        if np.max(np.abs(M.sum(axis=0) - 1.0)) > STOCHASTIC_TOL:
            raise ValidationError("M must be column stochastic", "M")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "regions", tuple(self.regions))

    @classmethod
    def identity(cls, regions) -> "MisDeclareMatrix":
        return cls(np.eye(len(regions)), tuple(regions))


class TransitionMatrix:
    """Sparse m x n matrix of ``Pr(detector i | source j)``.

    Any column-stochastic matrix is accepted.  Row subsets (see
    :meth:`restrict`) are sub-stochastic and carry ``stochastic=False``.
    """

    def __init__(self, matrix, stochastic: bool = True):
        A = sp.csc_matrix(matrix, dtype=float)
        A.eliminate_zeros()
        A.sort_indices()
        if A.nnz and (A.data.min() < 0 or A.data.max() > 1):
            raise ValidationError("transition entries must lie in [0, 1]", "P")
        colsum = np.asarray(A.sum(axis=0)).ravel()
        if stochastic and colsum.size and np.max(np.abs(colsum - 1.0)) > STOCHASTIC_TOL:
            raise ValidationError(
                f"P is not column stochastic (max deviation {np.max(np.abs(colsum - 1.0)):.3g})", "P"
            )
        self.matrix = A
        self.stochastic = stochastic
        self._csr = A.tocsr()

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self):
        return self.matrix.nnz

    def __matmul__(self, v):
        return self._csr @ v

    @property
    def T(self):
        return self.matrix.T

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    def restrict(self, rows) -> "TransitionMatrix":
        return TransitionMatrix(self._csr[np.asarray(rows)], stochastic=False)

    def to_coo_csv(self, path):
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "value"])
            for k in order:
                w.writerow([int(coo.row[k]), int(coo.col[k]), repr(float(coo.data[k]))])

    @classmethod
    def from_coo_csv(cls, path, shape, stochastic=True) -> "TransitionMatrix":
        rows, cols, vals = [], [], []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(int(rec["row"]))
                cols.append(int(rec["col"]))
                vals.append(float(rec["value"]))
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=shape), stochastic)


def estimate_misdeclare(pairs: Iterable, regions, smoothing: float = 0.5) -> MisDeclareMatrix:
    """Estimate M from ``(declared, actual)`` pairs or ``(declared, actual, count)`` triples.

    ``M[r, s] = (c(r, s) + a) / (sum_r' c(r', s) + a * K)`` with smoothing ``a``.
    """
    if smoothing < 0:
        raise ValidationError("smoothing must be non-negative", "smoothing")
    regions = tuple(regions)
    index = {r: k for k, r in enumerate(regions)}
    K = len(regions)
    C = np.zeros((K, K))
    for rec in pairs:
        declared, actual = rec[0], rec[1]
        count = rec[2] if len(rec) > 2 else 1
        if declared not in index or actual not in index:
            bad = declared if declared not in index else actual
            raise ValidationError(f"unknown region {bad!r} in paired records", "region")
        if count < 0:
            raise ValidationError("pair counts must be non-negative", "count")
        C[index[declared], index[actual]] += count
    colsum = C.sum(axis=0) + smoothing * K
    empty = colsum <= 0
    if np.any(empty):
        names = [regions[k] for k in np.flatnonzero(empty)]
        raise ValidationError(f"degenerate column(s) with no pairs and no smoothing: {names}", "M")
    return MisDeclareMatrix((C + smoothing) / colsum, regions)


def read_pair_counts(path):
    """Read ``declared,actual,count`` CSV triples."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append((rec["declared"], rec["actual"], int(rec["count"])))
    return out


def write_pair_counts(path, triples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["declared", "actual", "count"])
        for d, a, c in triples:
            w.writerow([d, a, int(c)])


def build_transition(
    grid: SourceGrid, layout: DetectorLayout, frac: KindFractions, M: MisDeclareMatrix
) -> TransitionMatrix:
    if layout.grid != grid:
        raise DimensionError("detector layout was built for a different grid")
    if tuple(M.regions) != grid.regions:
        raise DimensionError("mis-declare matrix regions differ from the grid regions")
    e1, e2, e3 = frac.as_tuple()
    R, T, n = grid.n_regions, grid.time_slots, grid.n
    j = np.arange(n)
    s, t = np.divmod(j, T)
    rows, cols, vals = [j], [j], [np.full(n, e1)]
    # self-declared rows: detector (r, t) for every r, value e2 * M[r, s]
    r_idx = np.repeat(np.arange(R)[None, :], n, axis=0)
    rows.append((n + r_idx * T + t[:, None]).ravel())
    cols.append(np.repeat(j, R))
    vals.append((e2 * M.M[r_idx, s[:, None]]).ravel())
    rows.append(2 * n + t)
    cols.append(j)
    vals.append(np.full(n, e3))
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(layout.m, n)
    )
    return TransitionMatrix(A)


def restrict_kinds(P: TransitionMatrix, layout: DetectorLayout, kinds) -> TransitionMatrix:
    """Rows of ``P`` for the given detector kinds, in layout order."""
    return P.restrict(kinds_of(layout, kinds))


__all__ = [
    "KindFractions",
    "MisDeclareMatrix",
    "TransitionMatrix",
    "estimate_misdeclare",
    "build_transition",
    "restrict_kinds",
    "read_pair_counts",
    "write_pair_counts",
    "PRECISE",
    "SELF_DECLARED",
    "NO_LOCATION",
]
