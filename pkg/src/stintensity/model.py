"""Source/detector bin structures and the penalized Poisson likelihood.

Source bins are (region, slot) cells indexed region-major, ``j = r * T + t``.
Detector bins follow the three-kind layout: precise bins ``(r, t)``, then
self-declared bins ``(r, t)``, then one no-location bin per slot.

The objective drops the ``log(x!)`` constant, so its values are comparable
only for a fixed count vector.  Use :func:`poisson_loglik` when likelihoods
from different count vectors have to be compared.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

PRECISE, SELF_DECLARED, NO_LOCATION = 1, 2, 3
KINDS = (PRECISE, SELF_DECLARED, NO_LOCATION)


class DimensionError(ValueError):
    pass


class ValidationError(ValueError):
    """Invalid input value.  ``field`` names the offending input when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class SourceGrid:
    regions: tuple
    time_slots: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        regions = tuple(self.regions)
        object.__setattr__(self, "regions", regions)
        if self.time_slots < 1:
            raise ValidationError("time_slots must be positive", "time_slots")
        if len(set(regions)) != len(regions):
            raise ValidationError("duplicate region identifiers", "regions")
        object.__setattr__(self, "_index", {r: k for k, r in enumerate(regions)})

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n(self) -> int:
        return len(self.regions) * self.time_slots

    def region_index(self, region) -> int:
        try:
            return self._index[region]
        except KeyError:
            raise ValidationError(f"unknown region {region!r}", "region") from None

    def index(self, region, slot: int) -> int:
        if not 0 <= slot < self.time_slots:
            raise ValidationError(f"slot {slot} outside [0, {self.time_slots})", "slot")
        return self.region_index(region) * self.time_slots + slot

    def unindex(self, j: int):
        if not 0 <= j < self.n:
            raise DimensionError(f"source index {j} outside [0, {self.n})")
        r, t = divmod(j, self.time_slots)
        return self.regions[r], t

    def as_matrix(self, v) -> np.ndarray:
        """View a length-n vector as a (regions, slots) array."""
        v = np.asarray(v)
        if v.shape != (self.n,):
            raise DimensionError(f"expected length {self.n}, got {v.shape}")
        return v.reshape(self.n_regions, self.time_slots)


@dataclass(frozen=True)
class DetectorLayout:
    """Three-kind detector layout over a :class:`SourceGrid`."""

    grid: SourceGrid

    @property
    def m(self) -> int:
        return (2 * self.grid.n_regions + 1) * self.grid.time_slots

    def kind_slice(self, kind: int) -> slice:
        n = self.grid.n
        if kind == PRECISE:
            return slice(0, n)
        if kind == SELF_DECLARED:
            return slice(n, 2 * n)
        if kind == NO_LOCATION:
            return slice(2 * n, 2 * n + self.grid.time_slots)
        raise ValidationError(f"unknown detector kind {kind!r}", "kind")

    def index(self, kind: int, region, slot: int) -> int:
        if kind == NO_LOCATION:
            if region not in (None, ""):
                raise ValidationError("no-location bins carry no region", "region")
            if not 0 <= slot < self.grid.time_slots:
                raise ValidationError(f"slot {slot} out of range", "slot")
            return 2 * self.grid.n + slot
        if region in (None, ""):
            raise ValidationError(f"kind {kind} bins need a region", "region")
        return self.kind_slice(kind).start + self.grid.index(region, slot)

    def unindex(self, i: int):
        """Return ``(kind, region, slot)``; region is None for kind 3."""
        n = self.grid.n
        if not 0 <= i < self.m:
            raise DimensionError(f"detector index {i} outside [0, {self.m})")
        if i >= 2 * n:
            return NO_LOCATION, None, i - 2 * n
        kind = PRECISE if i < n else SELF_DECLARED
        region, slot = self.grid.unindex(i % n)
        return kind, region, slot

    def slots(self) -> np.ndarray:
        """Time slot of every detector bin."""
        T = self.grid.time_slots
        per_kind = np.tile(np.arange(T), self.grid.n_regions)
        return np.concatenate([per_kind, per_kind, np.arange(T)])

    def kinds(self) -> np.ndarray:
        n, T = self.grid.n, self.grid.time_slots
        return np.repeat([PRECISE, SELF_DECLARED, NO_LOCATION], [n, n, T])


@dataclass(frozen=True)
class CountVector:
    x: np.ndarray
    layout: DetectorLayout | None = None

    def __post_init__(self):
        x = np.array(self.x, dtype=np.int64)
        if x.ndim != 1:
            raise DimensionError("counts must be a vector")
        if np.any(x < 0):
            raise ValidationError("counts must be non-negative", "count")
        if self.layout is not None and x.size != self.layout.m:
            raise DimensionError(f"expected {self.layout.m} counts, got {x.size}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @classmethod
    def zeros(cls, layout: DetectorLayout) -> "CountVector":
        return cls(np.zeros(layout.m, dtype=np.int64), layout)

    def kind(self, k: int) -> np.ndarray:
        if self.layout is None:
            raise ValidationError("count vector has no detector layout")
        return self.x[self.layout.kind_slice(k)]

    @property
    def total(self) -> int:
        return int(self.x.sum())

    def __len__(self):
        return self.x.size


@dataclass(frozen=True)
class PopulationField:
    """Log population intensity ``psi = log(max(z, floor))`` over source bins."""

    psi: np.ndarray
    note: str = ""

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        if psi.ndim != 1 or not np.all(np.isfinite(psi)):
            raise ValidationError("psi must be a finite vector", "psi")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_counts(cls, z, floor: float = 0.5) -> "PopulationField":
        z = np.asarray(z, dtype=float)
        if floor <= 0:
            raise ValidationError("population floor must be positive", "floor")
        if np.any(z < 0):
            raise ValidationError("population counts must be non-negative", "z")
        n_floored = int(np.sum(z < floor))
        g = np.maximum(z, floor)
        return cls(np.log(g), note=f"g = max(z, {floor}); {n_floored} bins floored")

    @property
    def g(self) -> np.ndarray:
        return np.exp(self.psi)

    def __len__(self):
        return self.psi.size


@dataclass(frozen=True)
class ModelState:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise ValidationError("theta must be a finite vector", "theta")
        object.__setattr__(self, "theta", theta)

    @property
    def intensity(self) -> np.ndarray:
        return np.exp(self.theta)


def _vec(v, name):
    if isinstance(v, PopulationField):
        return v.psi
    if isinstance(v, ModelState):
        return v.theta
    if isinstance(v, CountVector):
        return v.x
    a = np.asarray(v, dtype=float)
    if a.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional")
    return a


def _mat(P):
    return getattr(P, "matrix", P)


def link_eta(theta, psi) -> np.ndarray:
    """Product link in log space: ``eta_j = exp(theta_j + psi_j)``."""
    theta, psi = _vec(theta, "theta"), _vec(psi, "psi")
    if theta.shape != psi.shape:
        raise DimensionError(f"theta has length {theta.size}, psi {psi.size}")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(psi))):
        raise ValidationError("theta and psi must be finite")
    with np.errstate(over="ignore"):
        return np.exp(theta + psi)


def detector_intensity(P, eta) -> np.ndarray:
    A = _mat(P)
    eta = _vec(eta, "eta")
    if A.shape[1] != eta.size:
        raise DimensionError(f"P has {A.shape[1]} columns, eta has {eta.size} entries")
    return np.asarray(A @ eta).ravel()


def _check_shapes(theta, psi, A, x, L):
    n = theta.size
    if psi.size != n or A.shape[1] != n:
        raise DimensionError("theta, psi and P columns disagree")
    if A.shape[0] != x.size:
        raise DimensionError(f"P has {A.shape[0]} rows, x has {x.size} entries")
    if L is not None and _mat(L).shape != (n, n):
        raise DimensionError("Laplacian shape does not match theta")


def _neg_loglik_terms(x, h):
    # x log h with the 0 log 0 = 0 convention; inf when h = 0 < x
    pos = x > 0
    with np.errstate(divide="ignore"):
        xlogh = np.where(pos, x * np.log(np.where(pos, h, 1.0)), 0.0)
    return h - xlogh


def objective(theta, psi, P, x, L=None, lam: float = 1.0) -> float:
    """Penalized negative log-likelihood (without the ``log x!`` constant).

    Returns ``inf`` when some bin has ``h_i = 0`` but ``x_i > 0`` or the
    intensities overflow; callers treat that as a diverged evaluation.
    """
    theta, psi, x = _vec(theta, "theta"), _vec(psi, "psi"), _vec(x, "x")
    A = _mat(P)
    _check_shapes(theta, psi, A, x, L)
    if lam < 0:
        raise ValidationError("lambda must be non-negative", "lam")
    h = detector_intensity(A, link_eta(theta, psi))
    val = float(np.sum(_neg_loglik_terms(x, h)))
    if L is not None and lam > 0:
        val += lam * penalty_value(L, theta)
    return val if np.isfinite(val) else np.inf


def gradient(theta, psi, P, x, L=None, lam: float = 1.0) -> np.ndarray:
    """``lam * L theta - H P^T (r - 1)`` with ``r_i = x_i / h_i`` (0 where x_i = 0)."""
    theta, psi, x = _vec(theta, "theta"), _vec(psi, "psi"), _vec(x, "x")
    A = _mat(P)
    _check_shapes(theta, psi, A, x, L)
    eta = link_eta(theta, psi)
    h = detector_intensity(A, eta)
    g = -eta * _backproject_residual(A, x, h)
    if L is not None and lam > 0:
        g += lam * np.asarray(_mat(L) @ theta).ravel()
    return g


def _backproject_residual(A, x, h):
    pos = x > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(pos, x / np.where(pos, h, 1.0), 0.0)
    return np.asarray(A.T @ (r - 1.0)).ravel()


def objective_and_gradient(theta, psi, P, x, L=None, lam: float = 1.0):
    """Both quantities from one forward projection; used by the optimizer."""
    A = _mat(P)
    eta = link_eta(theta, psi)
    h = np.asarray(A @ eta).ravel()
    val = float(np.sum(_neg_loglik_terms(x, h)))
    g = -eta * _backproject_residual(A, x, h)
    if L is not None and lam > 0:
        Lt = np.asarray(_mat(L) @ theta).ravel()
        val += 0.5 * lam * float(theta @ Lt)
        g += lam * Lt
    if not np.isfinite(val):
        return np.inf, g
    return val, g


def penalty_value(L, theta) -> float:
    theta = _vec(theta, "theta")
    A = _mat(L)
    if A.shape != (theta.size, theta.size):
        raise DimensionError("Laplacian shape does not match theta")
    return 0.5 * float(theta @ (A @ theta))


def poisson_loglik(x, h) -> float:
    """Exact Poisson log-likelihood ``sum(x log h - h - log x!)``."""
    x = _vec(x, "x")
    h = np.asarray(h, dtype=float)
    if x.shape != h.shape:
        raise DimensionError("x and h lengths differ")
    return float(-np.sum(_neg_loglik_terms(x, h)) - np.sum(gammaln(x + 1.0)))


def as_sparse(P) -> sp.csc_matrix:
    return sp.csc_matrix(_mat(P))


def kinds_of(layout: DetectorLayout, kinds: Sequence[int]) -> np.ndarray:
    """Detector row indices belonging to the given kinds, in layout order."""
    return np.concatenate([np.arange(layout.m)[layout.kind_slice(k)] for k in kinds])
