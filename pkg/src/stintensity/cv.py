"""Graph-weight selection by Poisson thinning cross-validation.

Each event is routed to the hold-out set independently with probability
``p``.  Under the Poisson model both halves are again Poisson, with
intensities ``(1 - p) h`` and ``p h``, so a fit on the training half is
rescaled by ``p / (1 - p)`` before scoring the hold-out half.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import CountVector, ValidationError, _mat, _vec, poisson_loglik
from .optimize import OptimizerConfig, fit, initialize_theta

log = logging.getLogger(__name__)


def default_weight_grid(lo: float = -3.0, hi: float = 3.0, step: float = 0.5):
    """All ``(w_s, w_t)`` pairs over ``{10^lo, 10^(lo+step), ..., 10^hi}``."""
    k = int(round((hi - lo) / step))
    vals = [10.0 ** (lo + i * step) for i in range(k + 1)]
    return [(ws, wt) for ws in vals for wt in vals]


@dataclass(frozen=True)
class CvPlan:
    holdout_fraction: float = 0.2
    num_splits: int = 5
    grid: tuple = tuple(default_weight_grid())
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.holdout_fraction < 1:
            raise ValidationError("holdout fraction must lie in (0, 1)", "holdout_fraction")
        if self.num_splits < 1:
            raise ValidationError("need at least one split", "num_splits")
        if not len(self.grid):
            raise ValidationError("weight grid is empty", "grid")
        object.__setattr__(self, "grid", tuple((float(a), float(b)) for a, b in self.grid))


@dataclass
class CvReport:
    grid: list
    scores: np.ndarray  # (num_splits, len(grid)); -inf where a fit diverged
    mean: np.ndarray
    std: np.ndarray
    selected_index: int
    tie_note: str = ""
    flags: dict = field(default_factory=dict)

    @property
    def selected(self):
        return self.grid[self.selected_index]

    def to_dict(self):
        points = []
        for k, (ws, wt) in enumerate(self.grid):
            points.append(
                {
                    "w_s": ws,
                    "w_t": wt,
                    "mean_score": _num(self.mean[k]),
                    "std": _num(self.std[k]),
                    "selected": k == self.selected_index,
                    **({"flag": self.flags[k]} if k in self.flags else {}),
                }
            )
        ws, wt = self.selected
        return {"selected": {"w_s": ws, "w_t": wt}, "tie_note": self.tie_note, "points": points}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def thin_counts(x, p: float, seed=None):
    """Split counts into ``(train, holdout)`` by independent per-event thinning."""
    if not 0 < p < 1:
        raise ValidationError("holdout probability must lie in (0, 1)", "p")
    layout = getattr(x, "layout", None)
    xv = np.asarray(_vec(x, "x"), dtype=np.int64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hold = rng.binomial(xv, p)
    return CountVector(xv - hold, layout), CountVector(hold, layout)


def select_index(mean, grid):
    """Argmax of ``mean``; exact ties go to the larger ``w_s * w_t``, then grid order."""
    mean = np.asarray(mean, dtype=float)
    best = np.max(mean)
    tied = [k for k in range(len(grid)) if mean[k] == best]
    if len(tied) == 1:
        return tied[0], ""
    prod = [grid[k][0] * grid[k][1] for k in tied]
    pick = tied[int(np.argmax(prod))]
    return pick, f"{len(tied)} grid points tied at the best score; picked the largest w_s*w_t"


def _score_split(args):
    train, hold, psi, A, builder, points, p, config = args
    out = np.full(len(points), -np.inf)
    try:
        theta0 = initialize_theta(train, A, psi, config.init_floor, config.lsqr_iter_lim)
    except ValidationError:
        return out
    for k, (ws, wt) in enumerate(points):
        try:
            res = fit(theta0, psi, A, train, builder(ws, wt), 1.0, config)
        except ValidationError:
            continue
        if not np.isfinite(res.objective):
            continue
        h = np.asarray(A @ np.exp(res.theta + psi)).ravel()
        out[k] = poisson_loglik(hold, h * (p / (1.0 - p)))
    return out


def select_weights(
    x,
    psi,
    P,
    grid_builder,
    plan: CvPlan = CvPlan(),
    config: OptimizerConfig = OptimizerConfig(),
    n_jobs: int = 1,
) -> CvReport:
    """Pick ``(w_s, w_t)`` maximizing the mean held-out Poisson log-likelihood.

    ``grid_builder(w_s, w_t)`` returns the Laplacian for one grid point.
    With ``n_jobs > 1`` splits are scored in worker processes; the builder
    must then be picklable.
    """
    A = _mat(P)
    psi = np.asarray(_vec(psi, "psi"), dtype=float)
    points = list(plan.grid)
    p = plan.holdout_fraction
    seeds = np.random.SeedSequence(plan.seed).spawn(plan.num_splits)
    tasks = []
    for ss in seeds:
        train, hold = thin_counts(x, p, np.random.default_rng(ss))
        tasks.append((train.x.astype(float), hold.x, psi, A, grid_builder, points, p, config))
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            rows = list(ex.map(_score_split, tasks))
    else:
        rows = [_score_split(t) for t in tasks]
    scores = np.vstack(rows)

    flags = {}
    mean = np.full(len(points), -np.inf)
    std = np.full(len(points), np.nan)
    for k in range(len(points)):
        ok = np.isfinite(scores[:, k])
        if not ok.any():
            flags[k] = "all fits diverged"
            continue
        if not ok.all():
            flags[k] = f"{int((~ok).sum())} of {ok.size} fits diverged"
        mean[k] = scores[ok, k].mean()
        std[k] = scores[ok, k].std()
    idx, note = select_index(mean, points)
    log.info("cv selected w_s=%g w_t=%g", *points[idx])
    return CvReport(points, scores, mean, std, idx, note, flags)
