import numpy as np
import pytest
import scipy.sparse as sp

from stintensity.datasets import load_regions, us_adjacency, us_grid
from stintensity.graph import build_laplacian
from stintensity.model import DetectorLayout, PopulationField
from stintensity.synthetic import synthetic_misdeclare_pairs, synthetic_population
from stintensity.transition import KindFractions, build_transition, estimate_misdeclare


def random_stochastic(rng, m, n, density=1.0):
    """Dense-ish random column-stochastic m x n matrix as CSC."""
    A = rng.random((m, n)) * (rng.random((m, n)) < density)
    # every column needs at least one entry
    A[rng.integers(0, m, n), np.arange(n)] += rng.random(n) + 0.1
    return sp.csc_matrix(A / A.sum(axis=0))


def chain_laplacian(n, w=1.0):
    W = sp.diags([np.full(n - 1, w), np.full(n - 1, w)], [-1, 1], shape=(n, n))
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def random_laplacian(rng, n, p=0.2):
    W = np.triu(rng.random((n, n)) * (rng.random((n, n)) < p), 1)
    W = W + W.T
    return sp.csr_matrix(np.diag(W.sum(axis=1)) - W)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class UsScale:
    """49 regions x 24 hours with the bundled synthetic inputs."""

    def __init__(self):
        self.grid = us_grid(24)
        self.layout = DetectorLayout(self.grid)
        self.adj = us_adjacency()
        self.regions, self.centroids = load_regions()
        self.z = synthetic_population(self.grid)
        self.pop = PopulationField.from_counts(self.z)
        pairs = synthetic_misdeclare_pairs(self.grid, self.adj, self.z)
        self.M = estimate_misdeclare(pairs, self.grid.regions, 0.5)
        self.frac = KindFractions()
        self.P = build_transition(self.grid, self.layout, self.frac, self.M)

    def laplacian(self, w_s=1.0, w_t=1.0):
        return build_laplacian(self.grid, self.adj, w_s, w_t)


@pytest.fixture(scope="session")
def us_scale():
    return UsScale()


def grid_search_min(psi, P, x, lam=1.0, w=1.0, lo=-5.0, hi=5.0, step=1e-3, chunk=200):
    """Exhaustive minimum of the n=2 objective with a single-edge Laplacian."""
    P = np.asarray(P.toarray() if sp.issparse(P) else P, dtype=float)
    x = np.asarray(x, dtype=float)
    axis = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
    e2 = np.exp(axis + psi[1])
    pos = x > 0
    best = np.inf
    for start in range(0, axis.size, chunk):
        e1 = np.exp(axis[start:start + chunk] + psi[0])[:, None]
        val = 0.5 * lam * w * (axis[start:start + chunk, None] - axis[None, :]) ** 2
        for i in range(P.shape[0]):
            h = P[i, 0] * e1 + P[i, 1] * e2
            val += h
            if pos[i]:
                val -= x[i] * np.log(h)
        best = min(best, float(val.min()))
    return best
