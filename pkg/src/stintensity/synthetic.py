"""Synthetic ground truth, count generation and the six-estimator comparison.

The ground truth is a temporally constant, equal-weight mixture of two
spatial Gaussians evaluated at region centroids.  Its amplitude is
calibrated so the expected number of generated events matches a target
total; with column-stochastic ``P`` that total is ``sum(f * g)``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from .cv import CvPlan, select_weights
from .graph import Laplacian, build_laplacian
from .model import (
    NO_LOCATION,
    PRECISE,
    SELF_DECLARED,
    CountVector,
    DetectorLayout,
    PopulationField,
    SourceGrid,
    ValidationError,
    detector_intensity,
)
from .optimize import OptimizerConfig, fit, initialize_theta
from .transition import KindFractions, TransitionMatrix, restrict_kinds

# Kind-wise totals of the reference synthetic run: 56 precise, 1106
# self-declared, 1030 without location.
REFERENCE_KIND_TOTALS = (56, 1106, 1030)
REFERENCE_TOTAL = sum(REFERENCE_KIND_TOTALS)

ESTIMATORS = (
    "scaled_x1",
    "scaled_x1_over_z1",
    "fit_x1",
    "fit_x1_plus_x2_as_precise",
    "fit_x1_x2",
    "fit_full",
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Two equally weighted spatial Gaussian components.

    ``components`` holds ``(mode_region, sigma)`` pairs, sigma in degrees
    of latitude/longitude.  ``scale`` multiplies the mixture; use
    :func:`calibrate_scale` to pick it from a target event total.
    """

    components: tuple = (("WA", 8.0), ("NY", 8.0))
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.components) != 2:
            raise ValidationError("exactly two mixture components are required", "components")
        if any(s <= 0 for _, s in self.components):
            raise ValidationError("component scales must be positive", "components")
        if not self.scale > 0:
            raise ValidationError("scale must be positive", "scale")


def generate_truth(spec: SyntheticSpec, grid: SourceGrid, centroids) -> np.ndarray:
    missing = [r for r in grid.regions if r not in centroids]
    if missing:
        raise ValidationError(f"missing centroids for regions {missing}", "centroids")
    for mode, _ in spec.components:
        if mode not in centroids:
            raise ValidationError(f"missing centroid for mode region {mode!r}", "components")
    pts = np.array([centroids[r] for r in grid.regions], dtype=float)
    spatial = np.zeros(grid.n_regions)
    for mode, sigma in spec.components:
        d2 = np.sum((pts - np.asarray(centroids[mode], dtype=float)) ** 2, axis=1)
        spatial += 0.5 * np.exp(-d2 / (2.0 * sigma**2))
    return spec.scale * np.repeat(spatial, grid.time_slots)


def calibrate_scale(f_shape, g, target_total: float = REFERENCE_TOTAL) -> float:
    """Factor ``c`` such that ``sum(c * f_shape * g) == target_total``."""
    mass = float(np.sum(np.asarray(f_shape) * np.asarray(g)))
    if not mass > 0:
        raise ValidationError("cannot calibrate a zero-mass intensity", "f")
    return target_total / mass


def sample_counts(f, psi, P, seed, layout: DetectorLayout | None = None) -> CountVector:
    """Independent Poisson counts with mean ``P (f * g)``."""
    g = PopulationField(psi).g if not isinstance(psi, PopulationField) else psi.g
    h = detector_intensity(P, np.asarray(f, dtype=float) * g)
    rng = np.random.default_rng(seed)
    return CountVector(rng.poisson(h), layout)


def relative_error(f, f_hat) -> float:
    """``||f - f_hat||^2 / ||f||^2``."""
    f = np.asarray(f, dtype=float)
    f_hat = np.asarray(f_hat, dtype=float)
    return float(np.sum((f - f_hat) ** 2) / np.sum(f**2))


@dataclass
class BenchResult:
    errors: dict
    kind_totals: tuple
    seed: int | None = None
    weights: tuple | None = None
    flags: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict, repr=False)


def _penalized_fit(x, P, psi, L, config):
    theta0 = initialize_theta(x, P, psi, config.init_floor, config.lsqr_iter_lim)
    res = fit(theta0, psi, P, x, L, 1.0, config)
    return res.intensity, res


def run_baselines(
    f,
    x: CountVector,
    z1,
    psi,
    P: TransitionMatrix,
    L: Laplacian,
    frac: KindFractions = KindFractions(),
    config: OptimizerConfig = OptimizerConfig(),
    seed=None,
    keep_estimates: bool = False,
) -> BenchResult:
    """Score the six estimators against the truth ``f``.

    ``L`` carries the graph weights shared by all regularized estimators.
    """
    layout = x.layout
    if layout is None:
        raise ValidationError("counts need a detector layout", "x")
    psi = psi.psi if isinstance(psi, PopulationField) else np.asarray(psi, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    x1, x2, x3 = (x.kind(k).astype(float) for k in (PRECISE, SELF_DECLARED, NO_LOCATION))
    e1, e2, _ = frac.as_tuple()
    flags = {}
    est = {}

    est["scaled_x1"] = x1 / (e1 * np.mean(z1))

    zero = z1 <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        est["scaled_x1_over_z1"] = np.where(zero, 0.0, x1 / (e1 * np.where(zero, 1.0, z1)))
    if np.any(zero):
        flags["scaled_x1_over_z1"] = f"{int(zero.sum())} bins with z1 = 0 set to 0"

    P1 = restrict_kinds(P, layout, [PRECISE])
    P12 = restrict_kinds(P, layout, [PRECISE, SELF_DECLARED])
    # x2 pretended precise: kind-1 rows with the combined fraction
    P_merged = TransitionMatrix(P1.matrix * ((e1 + e2) / e1), stochastic=False)
    x12 = np.concatenate([x1, x2])

    fits = {
        "fit_x1": (x1, P1),
        "fit_x1_plus_x2_as_precise": (x1 + x2, P_merged),
        "fit_x1_x2": (x12, P12),
        "fit_full": (x.x.astype(float), P),
    }
    for name, (counts, Pk) in fits.items():
        f_hat, res = _penalized_fit(counts, Pk, psi, L, config)
        est[name] = f_hat
        if not res.converged:
            flags[name] = f"{res.reason} after {res.iterations} iterations (|grad|={res.grad_norm:.2e})"

    errors = {name: relative_error(f, est[name]) for name in ESTIMATORS}
    return BenchResult(
        errors=errors,
        kind_totals=(int(x1.sum()), int(x2.sum()), int(x3.sum())),
        seed=seed,
        weights=(L.w_s, L.w_t),
        flags=flags,
        estimates=est if keep_estimates else {},
    )


def run_replicate(
    setup,
    seed: int,
    weights=None,
    plan: CvPlan = CvPlan(),
    config: OptimizerConfig = OptimizerConfig(),
    count_scale: float = 1.0,
    n_jobs: int = 1,
) -> BenchResult:
    """Draw one replicate from a benchmark setup and score all estimators.

    ``setup`` carries ``grid``, ``layout``, ``adjacency``, ``truth``,
    ``population``, ``z1``, ``P`` and ``frac``.  Without ``weights`` they
    are chosen by cross-validation on the full counts, seeded by ``seed``.
    """
    truth = setup.truth * count_scale
    x = sample_counts(truth, setup.population, setup.P, seed, setup.layout)
    builder = functools.partial(build_laplacian, setup.grid, setup.adjacency)
    if weights is None:
        plan = CvPlan(plan.holdout_fraction, plan.num_splits, plan.grid, seed)
        weights = select_weights(x, setup.population, setup.P, builder, plan, config, n_jobs).selected
    L = builder(*weights)
    return run_baselines(truth, x, setup.z1, setup.population, setup.P, L, setup.frac, config, seed)


def synthetic_population(grid: SourceGrid, total: float = 1.0e6, region_sd: float = 1.0, seed: int = 7):
    """Population counts: log-normal region sizes times a sinusoidal diurnal curve."""
    rng = np.random.default_rng(seed)
    region = rng.lognormal(0.0, region_sd, grid.n_regions)
    t = np.arange(grid.time_slots)
    # evening peak, early-morning trough for 24 hourly slots
    diurnal = 1.0 + 0.6 * np.cos(2 * np.pi * (t - 21) / grid.time_slots)
    mean = np.outer(region, diurnal).ravel()
    mean *= total / mean.sum()
    return rng.poisson(mean)


def synthetic_misdeclare_pairs(grid: SourceGrid, adjacency, population, n_pairs: int = 200_000, seed: int = 11):
    """Paired (declared, actual, count) records from a hand-built declaration model.

    Posts are mostly declared at their true region, with leakage to border
    regions and to two hub regions (CA, NY); DC absorbs declarations from
    MD and VA, and WI from IL.
    """
    rng = np.random.default_rng(seed)
    R = grid.n_regions
    idx = {r: k for k, r in enumerate(grid.regions)}
    nbrs = {k: [] for k in range(R)}
    for a, b in adjacency.sorted_edges(grid):
        nbrs[a].append(b)
        nbrs[b].append(a)
    hubs = [idx[h] for h in ("CA", "NY") if h in idx]
    extra = {("MD", "DC"): 0.10, ("VA", "DC"): 0.06, ("IL", "WI"): 0.04}
    pop = np.asarray(population, dtype=float).reshape(R, grid.time_slots).sum(axis=1)
    per_region = rng.multinomial(n_pairs, pop / pop.sum())
    out = []
    for s in range(R):
        p = np.zeros(R)
        p[s] = 0.80
        for k in nbrs[s]:
            p[k] += 0.10 / max(len(nbrs[s]), 1)
        if not nbrs[s]:
            p[s] += 0.10
        for h in hubs:
            p[h] += 0.05
        for (actual, declared), w in extra.items():
            if grid.regions[s] == actual and declared in idx:
                p[idx[declared]] += w
        p /= p.sum()
        counts = rng.multinomial(per_region[s], p)
        for r in np.flatnonzero(counts):
            out.append((grid.regions[r], grid.regions[s], int(counts[r])))
    return out
