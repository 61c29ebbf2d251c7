import math

import numpy as np
import pytest
import scipy.sparse as sp

from stintensity.model import ValidationError, objective
from stintensity.optimize import (
    CONVERGED,
    OptimizerConfig,
    fit,
    initialize_theta,
    lbfgs,
    least_squares_eta,
    strong_wolfe,
)

from conftest import chain_laplacian, grid_search_min, random_laplacian, random_stochastic


class TestInitialize:
    def test_identity_projection(self):
        theta0 = initialize_theta([4, 9], sp.eye(2), [0.0, 0.0])
        np.testing.assert_allclose(theta0, [math.log(4), math.log(9)], rtol=1e-12)

    def test_floor_everywhere(self):
        theta0 = initialize_theta(np.zeros(5), sp.eye(5), np.zeros(5), floor=1e-4)
        np.testing.assert_allclose(theta0, math.log(1e-4), rtol=1e-15)

    def test_subtracts_psi(self):
        theta0 = initialize_theta([4, 9], sp.eye(2), [1.0, -2.0])
        np.testing.assert_allclose(theta0, [math.log(4) - 1, math.log(9) + 2], rtol=1e-12)

    def test_exact_recovery(self, rng):
        for _ in range(5):
            P = random_stochastic(rng, 60, 25)
            eta = rng.uniform(0.5, 20, 25)
            est, ok = least_squares_eta(P @ eta, P)
            assert ok
            np.testing.assert_allclose(est, eta, rtol=1e-6)

    def test_fallback_on_budget(self, rng):
        P = random_stochastic(rng, 40, 30)
        x = rng.poisson(3.0, 40).astype(float)
        eta, ok = least_squares_eta(x, P, iter_lim=1)
        assert not ok
        np.testing.assert_allclose(eta, P.T @ x)

    def test_bad_floor(self):
        with pytest.raises(ValidationError):
            initialize_theta([1], sp.eye(1), [0.0], floor=0.0)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(memory=0), dict(max_iters=0), dict(grad_tol=0.0), dict(c1=0.9, c2=0.5), dict(init_floor=-1.0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            OptimizerConfig(**kwargs)


class TestFit:
    def test_scalar_mle(self):
        res = fit([0.0], [0.0], sp.eye(1), [5], None, 0.0)
        assert res.converged
        assert res.theta[0] == pytest.approx(math.log(5), abs=1e-6)

    def test_closed_form_identity(self, rng):
        x = rng.integers(0, 30, 40)
        z = rng.integers(1, 500, 40)
        psi = np.log(z.astype(float))
        res = fit(initialize_theta(x, sp.eye(40), psi), psi, sp.eye(40), x, None, 0.0)
        pos = x > 0
        np.testing.assert_allclose(res.intensity[pos], x[pos] / z[pos], rtol=1e-6)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_grid_search_oracle(self, seed):
        rng = np.random.default_rng(seed)
        P = random_stochastic(rng, 3, 2)
        psi = rng.normal(0, 0.5, 2)
        x = rng.integers(1, 20, 3)
        res = fit(initialize_theta(x, P, psi), psi, P, x, chain_laplacian(2), 1.0)
        assert abs(res.objective - grid_search_min(psi, P, x)) <= 1e-3
        # the fit can only beat a grid point, up to rounding
        assert res.objective <= grid_search_min(psi, P, x) + 1e-9

    def test_properties(self, rng):
        P = random_stochastic(rng, 80, 50, density=0.3)
        psi = rng.normal(0, 1, 50)
        x = rng.poisson(P @ np.exp(rng.normal(0, 1, 50) + psi))
        L = random_laplacian(rng, 50)
        theta0 = initialize_theta(x, P, psi)
        res = fit(theta0, psi, P, x, L, 1.0)
        assert res.reason == CONVERGED
        assert res.grad_norm <= 1e-6
        assert np.all(res.intensity > 0)
        assert np.all(np.diff(res.trace) <= 0)
        assert res.objective <= objective(theta0, psi, P, x, L, 1.0)
        assert res.objective == pytest.approx(objective(res.theta, psi, P, x, L, 1.0), rel=1e-12)
        again = fit(theta0, psi, P, x, L, 1.0)
        assert np.array_equal(res.theta, again.theta)

    def test_edge_form_laplacian(self, us_scale, rng):
        # the Laplacian object and its bare matrix give the same optimum
        grid = us_scale.grid
        x = rng.poisson(0.3, us_scale.layout.m)
        L = us_scale.laplacian(0.1, 10.0)
        theta0 = initialize_theta(x, us_scale.P, us_scale.pop.psi)
        a = fit(theta0, us_scale.pop.psi, us_scale.P, x, L, 1.0)
        b = fit(theta0, us_scale.pop.psi, us_scale.P, x, L.matrix, 1.0)
        assert a.converged and b.converged
        assert a.theta.size == grid.n
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-4)

    def test_infinite_start(self):
        P = sp.csc_matrix(np.array([[1.0], [0.0]]))
        with pytest.raises(ValidationError):
            fit([0.0], [0.0], P, [1, 1], None, 0.0)

    def test_nonfinite_theta0(self):
        with pytest.raises(ValidationError):
            fit([np.nan], [0.0], sp.eye(1), [1], None, 0.0)

    def test_max_iters(self, rng):
        P = random_stochastic(rng, 30, 20)
        x = rng.poisson(5.0, 30)
        res = fit(np.zeros(20), np.zeros(20), P, x, None, 0.0, OptimizerConfig(max_iters=1))
        assert res.iterations == 1
        assert res.reason == "max_iters"


def test_lbfgs_quadratic(rng):
    A = rng.normal(size=(20, 20))
    H = A @ A.T + np.eye(20)
    b = rng.normal(size=20)
    res = lbfgs(lambda v: (0.5 * v @ H @ v - b @ v, H @ v - b), np.zeros(20))
    assert res.converged
    # smallest eigenvalue of H is >= 1, so the error is bounded by the gradient norm
    np.testing.assert_allclose(res.theta, np.linalg.solve(H, b), atol=1e-6 * np.sqrt(20))


def test_strong_wolfe_conditions():
    # phi(a) = (a - 3)^2
    def phi(a):
        return (a - 3) ** 2, 2 * (a - 3), a

    f0, g0 = 9.0, -6.0
    alpha, _, ok = strong_wolfe(phi, f0, g0, 1.0, 1e-4, 0.9)
    assert ok
    fa, ga, _ = phi(alpha)
    assert fa <= f0 + 1e-4 * alpha * g0
    assert abs(ga) <= 0.9 * abs(g0)
