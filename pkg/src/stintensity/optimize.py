"""Least-squares initialization and limited-memory BFGS for the penalized objective."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr, splu

from .model import ValidationError, _mat, _vec

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
LINE_SEARCH_FAILURE = "line_search_failure"

# iterations between preconditioner refactorizations
PRECOND_REFRESH = 5


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 40
    init_floor: float = 1e-4
    lsqr_iter_lim: int = 5000

    def __post_init__(self):
        if self.memory < 1:
            raise ValidationError("memory must be positive", "memory")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be positive", "max_iters")
        if not self.grad_tol > 0:
            raise ValidationError("grad_tol must be positive", "grad_tol")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValidationError("need 0 < c1 < c2 < 1", "c1")
        if not self.init_floor > 0:
            raise ValidationError("init_floor must be positive", "init_floor")


@dataclass
class FitResult:
    theta: np.ndarray
    objective: float
    iterations: int
    grad_norm: float
    reason: str
    trace: list = field(default_factory=list)
    n_evals: int = 0

    @property
    def intensity(self) -> np.ndarray:
        return np.exp(self.theta)

    @property
    def converged(self) -> bool:
        return self.reason == CONVERGED


def least_squares_eta(x, P, iter_lim: int = 5000):
    """Minimum-norm solution of ``min ||x - P eta||_2``.

    Returns ``(eta, ok)``; on solver non-convergence ``eta = P^T x`` and
    ``ok`` is False.
    """
    A = _mat(P)
    x = np.asarray(_vec(x, "x"), dtype=float)
    res = lsqr(A, x, atol=1e-14, btol=1e-14, iter_lim=iter_lim)
    eta, istop = res[0], res[1]
    if istop == 7 or not np.all(np.isfinite(eta)):
        log.warning("lsqr did not converge (istop=%d); falling back to P^T x", istop)
        return np.asarray(A.T @ x).ravel(), False
    return eta, True


def initialize_theta(x, P, psi, floor: float = 1e-4, iter_lim: int = 5000) -> np.ndarray:
    """``theta0 = log(max(floor, eta_ls)) - psi``."""
    if not floor > 0:
        raise ValidationError("floor must be positive", "floor")
    psi = _vec(psi, "psi")
    eta, _ = least_squares_eta(x, P, iter_lim)
    if eta.size != psi.size:
        raise ValidationError("P columns and psi length disagree", "psi")
    return np.log(np.maximum(floor, eta)) - psi


def _cubic_min(a, fa, ga, b, fb, gb):
    # minimizer of the cubic interpolating (a, fa, ga), (b, fb, gb); None if ill-posed
    with np.errstate(all="ignore"):
        d1 = ga + gb - 3 * (fa - fb) / (a - b)
        disc = d1 * d1 - ga * gb
        if not disc >= 0:
            return None
        d2 = np.copysign(np.sqrt(disc), b - a)
        out = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2 * d2)
    return out if np.isfinite(out) else None


def _armijo(fa, a, f0, g0, c1):
    # sufficient decrease; below the rounding noise of f0 a non-increase suffices
    if not np.isfinite(fa):
        return False
    if fa <= f0 + c1 * a * g0:
        return True
    return fa <= f0 and -c1 * a * g0 <= 16 * np.finfo(float).eps * abs(f0)


def _zoom(phi, f0, g0, lo, hi, c1, c2, budget):
    a_lo, f_lo, g_lo = lo
    a_hi, f_hi, g_hi = hi
    for _ in range(budget):
        a = None
        if np.isfinite(f_hi):
            a = _cubic_min(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi)
        lo_b, hi_b = sorted((a_lo, a_hi))
        width = hi_b - lo_b
        if a is None or not (lo_b + 0.1 * width <= a <= hi_b - 0.1 * width):
            a = 0.5 * (a_lo + a_hi)
        fa, ga, state = phi(a)
        if not _armijo(fa, a, f0, g0, c1) or fa > f_lo or (fa == f_lo and a_lo > 0):
            a_hi, f_hi, g_hi = a, fa, ga
        else:
            if abs(ga) <= -c2 * g0:
                return a, state, True
            if ga * (a_hi - a_lo) >= 0:
                a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
            a_lo, f_lo, g_lo = a, fa, ga
        if abs(a_hi - a_lo) <= 1e-16 * max(1.0, abs(a_lo)):
            break
    # fall back to the best sufficient-decrease point found, if any
    if a_lo > 0:
        return a_lo, phi(a_lo)[2], False
    return None, None, False


def strong_wolfe(phi, f0, g0, alpha0=1.0, c1=1e-4, c2=0.9, budget=40, alpha_max=1e10):
    """Line search for a step satisfying the strong Wolfe conditions.

    ``phi(a)`` returns ``(f, directional derivative, state)``.  Returns
    ``(alpha, state, ok)``.  When the conditions cannot be met, ``ok`` is
    False and ``alpha`` is the best decreasing step seen (None if there was
    none).
    """
    prev = (0.0, f0, g0)
    a = alpha0
    for k in range(budget):
        fa, ga, state = phi(a)
        if not _armijo(fa, a, f0, g0, c1) or (k > 0 and fa >= prev[1]):
            return _zoom(phi, f0, g0, prev, (a, fa, ga), c1, c2, budget)
        if abs(ga) <= -c2 * g0:
            return a, state, True
        if ga >= 0:
            return _zoom(phi, f0, g0, (a, fa, ga), prev, c1, c2, budget)
        prev = (a, fa, ga)
        a = min(2.0 * a, alpha_max)
    return prev[0] or None, (phi(prev[0])[2] if prev[0] else None), False


def lbfgs(fun, x0, config: OptimizerConfig = OptimizerConfig(), precond=None) -> FitResult:
    """Minimize ``fun(x) -> (f, grad)`` by L-BFGS with a strong-Wolfe line search.

    ``precond(x)``, if given, returns a function applying an approximate
    inverse Hessian at ``x``; it seeds the two-loop recursion in place of
    the usual scaled identity.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n_evals = 1
    if not np.isfinite(f):
        raise ValidationError("objective is not finite at the starting point", "theta0")
    trace = [f]
    hist = deque(maxlen=config.memory)
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    reason = MAX_ITERS
    it = 0
    dinv, refreshed = None, 0
    last_restart = -config.memory - 1
    while it < config.max_iters:
        if gnorm <= config.grad_tol:
            reason = CONVERGED
            break
        if precond is not None and (dinv is None or it - refreshed >= PRECOND_REFRESH):
            dinv, refreshed = precond(x), it
        d = _two_loop(g, hist, dinv)
        slope = float(g @ d)
        if slope >= 0:
            hist.clear()
            d = -g if dinv is None else -dinv(g)
            slope = float(g @ d)
        alpha0 = 1.0 if hist or dinv is not None else min(1.0, 1.0 / gnorm)

        def phi(a, x=x, d=d):
            nonlocal n_evals
            n_evals += 1
            xa = x + a * d
            fa, ga = fun(xa)
            return fa, float(ga @ d), (xa, fa, ga)

        alpha, state, ok = strong_wolfe(phi, f, slope, alpha0, config.c1, config.c2, config.max_line_search)
        if state is not None:
            x_new, f_new, g_new = state
            s, y = x_new - x, g_new - g
            sy = float(s @ y)
            if sy > 1e-12 * float(np.sqrt((s @ s) * (y @ y))):
                hist.append((s, y, 1.0 / sy))
            x, f, g = x_new, f_new, g_new
            trace.append(f)
            gnorm = float(np.max(np.abs(g)))
            it += 1
        if not ok:
            # one restart from a fresh model, unless the last one was recent
            stale = hist or (precond is not None and refreshed != it)
            if it - last_restart <= config.memory or not stale:
                reason = CONVERGED if gnorm <= config.grad_tol else LINE_SEARCH_FAILURE
                break
            last_restart = it
            hist.clear()
            dinv = None
    else:
        if gnorm <= config.grad_tol:
            reason = CONVERGED
    return FitResult(x, f, it, gnorm, reason, trace, n_evals)


def _two_loop(g, hist, dinv=None):
    q = -g.copy()
    if not hist:
        return q if dinv is None else dinv(q)
    alphas = []
    for s, y, rho in reversed(hist):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = hist[-1]
    if dinv is None:
        q *= float(s @ y) / float(y @ y)
    else:
        q = dinv(q) * (float(s @ y) / float(y @ dinv(y)))
    for (s, y, rho), a in zip(hist, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def fit(theta0, psi, P, x, L=None, lam: float = 1.0, config: OptimizerConfig = OptimizerConfig()) -> FitResult:
    """Minimize the penalized negative log-likelihood over ``theta``.

    Raises :class:`ValidationError` if the objective is infinite at ``theta0``.
    """
    psi = np.asarray(_vec(psi, "psi"), dtype=float)
    x = np.asarray(_vec(x, "x"), dtype=float)
    A = _mat(P)
    Lm = None if L is None else _mat(L)
    if lam < 0:
        raise ValidationError("lambda must be non-negative", "lam")
    theta0 = np.asarray(_vec(theta0, "theta0"), dtype=float)
    if A.shape != (x.size, theta0.size) or psi.size != theta0.size:
        raise ValidationError("inconsistent shapes between theta0, psi, P and x", "theta0")
    if not np.all(np.isfinite(theta0)):
        raise ValidationError("theta0 must be finite", "theta0")
    At = A.T.tocsr()
    A = A.tocsr()
    A2t = A.multiply(A).T.tocsr()

    edges = getattr(L, "edges", None)
    if edges is not None and len(edges):
        ej, ek, ew = edges[:, 0], edges[:, 1], 0.5 * lam * L.weights

        def pen(theta):
            # edge form: no cancellation, unlike theta @ (L @ theta)
            d = theta[ej] - theta[ek]
            return float(ew @ (d * d))
    else:
        pen = None

    def fun(theta):
        return _fast_objective_and_gradient(theta, psi, A, At, x, Lm, lam, pen)

    def precond(theta):
        # (lam L + diag of expected information)^-1
        with np.errstate(over="ignore", divide="ignore"):
            eta = np.exp(theta + psi)
            d = eta * eta * (A2t @ (1.0 / (A @ eta)))
        d = np.where(np.isfinite(d), np.maximum(d, 1e-12), 1.0)
        if Lm is None or lam == 0:
            return lambda v: v / d
        lu = splu((lam * Lm + sp.diags(d)).tocsc())
        return lu.solve

    return lbfgs(fun, theta0, config, precond)


def _fast_objective_and_gradient(theta, psi, A, At, x, L, lam, pen=None):
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        eta = np.exp(theta + psi)
        h = A @ eta
        pos = x > 0
        hp = h[pos]
        val = float(np.sum(h) - np.sum(x[pos] * np.log(hp)))
        r = np.zeros_like(h)
        r[pos] = x[pos] / hp
        g = -eta * (At @ (r - 1.0))
        if L is not None and lam > 0:
            Lt = L @ theta
            val += pen(theta) if pen is not None else 0.5 * lam * float(theta @ Lt)
            g += lam * Lt
    if not np.isfinite(val) or not np.all(np.isfinite(g)):
        return np.inf, g
    return val, g


__all__ = [
    "OptimizerConfig",
    "FitResult",
    "initialize_theta",
    "least_squares_eta",
    "fit",
    "lbfgs",
    "strong_wolfe",
]
