from __future__ import annotations

import numpy as np
import pytest

from shaplm import (
    PenalizedProblem,
    ProfiledDesign,
    SolverOptions,
    block_coordinate_descent,
    build_design,
    delaunay_graph,
    kkt_residual,
    oracle_fit,
    random_spanning_tree,
    soft_threshold,
    solve_spline_block,
    tree_incidence,
)
from shaplm.solver import SplineBlockFactor

from _oracles import joint_objective, prox_gradient_solve


def joint_instance(seed, n=40, p=2, q=6):
    """A random doubly penalised instance with realistic tree-design columns."""
    rng = np.random.default_rng(seed)
    loc = rng.random((n, 2))
    g = delaunay_graph(loc)
    tts = [tree_incidence(random_spanning_tree(g, (seed, k))) for k in range(p)]
    X = rng.standard_normal((n, p))
    Xt = build_design(X, tts)
    Bt = rng.standard_normal((n, q))
    A = rng.standard_normal((q, q))
    D = A.T @ A / q
    w = np.abs(rng.standard_normal(n * p)) + 0.2
    w[n - 1 :: n] = 0.0  # mean coordinates stay unpenalised
    w[rng.integers(0, n * p, 3)] = np.inf
    rho = float(rng.uniform(0.0, 0.1))
    lam = float(rng.uniform(0.005, 0.05))
    prob = PenalizedProblem(
        y=rng.standard_normal(n), Btilde=Bt, D=D, Xtilde=Xt,
        rho=rho, lam=lam, penalty_weights=w,
    )
    return prob


class TestSoftThreshold:
    def test_scalar_values(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-0.5, 1.0) == 0.0
        assert soft_threshold(-3.0, 1.0) == -2.0

    def test_vector(self):
        np.testing.assert_allclose(
            soft_threshold(np.array([2.0, -2.0, 0.3]), 0.5), [1.5, -1.5, 0.0]
        )


class TestSplineBlock:
    def test_orthonormal_rho_zero(self, rng):
        B, _ = np.linalg.qr(rng.standard_normal((30, 5)))
        D = np.eye(5)
        r = rng.standard_normal(30)
        np.testing.assert_allclose(solve_spline_block(B, D, 0.0, r), B.T @ r, atol=1e-12)

    def test_zero_target(self, rng):
        B = rng.standard_normal((20, 4))
        D = np.eye(4)
        np.testing.assert_allclose(solve_spline_block(B, D, 0.5, np.zeros(20)), 0.0)

    def test_normal_equations(self, rng):
        n, q = 25, 6
        B = rng.standard_normal((n, q))
        A = rng.standard_normal((q, q))
        D = A.T @ A
        r = rng.standard_normal(n)
        rho = 0.07
        psi = solve_spline_block(B, D, rho, r)
        expect = np.linalg.solve(B.T @ B + 2.0 * n * rho * D, B.T @ r)
        np.testing.assert_allclose(psi, expect, atol=1e-10)

    def test_factor_reuse(self, rng):
        n, q = 25, 6
        B = rng.standard_normal((n, q))
        D = np.eye(q)
        fac = SplineBlockFactor(B, D, 0.1)
        r = rng.standard_normal(n)
        np.testing.assert_allclose(fac.solve(r), solve_spline_block(B, D, 0.1, r))
        M = rng.standard_normal((q, 3))
        np.testing.assert_allclose(
            fac.apply_inv(M), np.linalg.solve(B.T @ B + 2 * n * 0.1 * D, M), atol=1e-10
        )


class TestProfiledDesign:
    def test_matches_dense_smoother(self, rng):
        n, m, q = 30, 8, 5
        y = rng.standard_normal(n)
        X = rng.standard_normal((n, m))
        B = rng.standard_normal((n, q))
        D = np.eye(q)
        rho = 0.04
        design = ProfiledDesign(y, X, B, D, rho)
        S = np.eye(n) - B @ np.linalg.solve(B.T @ B + 2 * n * rho * D, B.T)
        np.testing.assert_allclose(design.SX, S @ X, atol=1e-10)
        np.testing.assert_allclose(design.sy, S @ y, atol=1e-10)
        np.testing.assert_allclose(design.norms, np.einsum("ij,ij->j", X, S @ X), atol=1e-10)

    def test_no_spline_is_identity(self, rng):
        y = rng.standard_normal(10)
        X = rng.standard_normal((10, 4))
        design = ProfiledDesign(y, X)
        np.testing.assert_allclose(design.SX, X)
        np.testing.assert_allclose(design.sy, y)


class TestCoordinateDescent:
    def test_huge_lambda_zeroes_penalized_block(self):
        prob = joint_instance(0)
        prob = PenalizedProblem(
            y=prob.y, Btilde=prob.Btilde, D=prob.D, Xtilde=prob.Xtilde,
            rho=prob.rho, lam=1e6, penalty_weights=prob.penalty_weights,
        )
        res = block_coordinate_descent(prob)
        penalized = np.isfinite(prob.penalty_weights) & (prob.penalty_weights > 0)
        assert np.all(res.theta[penalized] == 0.0)
        # free coordinates are still fit
        assert np.any(res.theta[prob.penalty_weights == 0.0] != 0.0)

    def test_single_coordinate_closed_form(self, rng):
        n = 50
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        lam, w = 0.03, 1.4
        prob = PenalizedProblem(
            y=y, Btilde=None, D=None, Xtilde=x[:, None],
            rho=0.0, lam=lam, penalty_weights=np.array([w]),
        )
        res = block_coordinate_descent(prob)
        expect = soft_threshold(x @ y, n * lam * w) / (x @ x)
        assert res.theta[0] == pytest.approx(expect, abs=1e-12)

    def test_objective_trace_monotone(self):
        prob = joint_instance(1)
        res = block_coordinate_descent(prob)
        diffs = np.diff(res.objective_trace)
        assert np.all(diffs <= 1e-12)
        assert res.objective == pytest.approx(res.objective_trace[-1])

    def test_kkt_certificate(self):
        for seed in range(5):
            prob = joint_instance(seed)
            res = block_coordinate_descent(prob)
            assert res.converged
            assert res.kkt_residual < 1e-6
            assert kkt_residual(prob, res.psi, res.theta) == pytest.approx(
                res.kkt_residual, rel=1e-6, abs=1e-12
            )

    def test_kkt_large_away_from_optimum(self):
        prob = joint_instance(2)
        res = block_coordinate_descent(prob)
        bad = res.theta + 0.5
        assert kkt_residual(prob, res.psi, bad) > 1e-2

    def test_exact_zeros(self):
        prob = joint_instance(3)
        res = block_coordinate_descent(prob)
        small = np.abs(res.theta) < 1e-10
        assert np.all(res.theta[small] == 0.0)

    def test_matches_prox_gradient_oracle(self):
        worst = 0.0
        for seed in range(20):
            prob = joint_instance(seed)
            res = block_coordinate_descent(prob, SolverOptions(tol=1e-12, max_iter=50000))
            psi_o, th_o = prox_gradient_solve(
                prob.y, prob.Btilde, prob.Xtilde, prob.D, prob.rho, prob.lam,
                prob.penalty_weights, n_iter=60_000, tol=1e-16,
            )
            obj_cd = joint_objective(
                prob.y, prob.Btilde, prob.Xtilde, prob.D, prob.rho, prob.lam,
                prob.penalty_weights, res.psi, res.theta,
            )
            obj_or = joint_objective(
                prob.y, prob.Btilde, prob.Xtilde, prob.D, prob.rho, prob.lam,
                prob.penalty_weights, psi_o, th_o,
            )
            worst = max(worst, abs(obj_cd - obj_or) / max(1.0, abs(obj_or)))
        assert worst <= 1e-8

    def test_column_permutation_invariance(self, rng):
        prob = joint_instance(4)
        res = block_coordinate_descent(prob, SolverOptions(tol=1e-10))
        perm = rng.permutation(prob.Xtilde.shape[1])
        prob_p = PenalizedProblem(
            y=prob.y, Btilde=prob.Btilde, D=prob.D, Xtilde=prob.Xtilde[:, perm],
            rho=prob.rho, lam=prob.lam, penalty_weights=prob.penalty_weights[perm],
        )
        res_p = block_coordinate_descent(prob_p, SolverOptions(tol=1e-10))
        assert res_p.objective == pytest.approx(res.objective, rel=1e-8)
        np.testing.assert_allclose(res_p.theta, res.theta[perm], atol=1e-6)

    def test_warm_start_same_answer(self, rng):
        prob = joint_instance(5)
        cold = block_coordinate_descent(prob)
        warm = block_coordinate_descent(prob, theta0=rng.standard_normal(prob.Xtilde.shape[1]))
        assert warm.objective == pytest.approx(cold.objective, rel=1e-9)

    def test_active_set_toggle_agrees(self):
        prob = joint_instance(6)
        opts = dict(tol=1e-12, max_iter=80000)
        a = block_coordinate_descent(prob, SolverOptions(active_set=True, **opts))
        b = block_coordinate_descent(prob, SolverOptions(active_set=False, **opts))
        assert a.objective == pytest.approx(b.objective, rel=1e-10)
        assert np.array_equal(a.theta != 0.0, b.theta != 0.0)
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-5)

    def test_design_reuse_and_guard(self):
        prob = joint_instance(7)
        design = ProfiledDesign(prob.y, prob.Xtilde, prob.Btilde, prob.D, prob.rho)
        res = block_coordinate_descent(prob, design=design)
        base = block_coordinate_descent(prob)
        assert res.objective == pytest.approx(base.objective, rel=1e-10)
        other = joint_instance(8)
        with pytest.raises(ValueError):
            block_coordinate_descent(other, design=design)

    def test_strong_rule_path_matches_cold(self):
        prob = joint_instance(9)
        lam_hi = prob.lam * 4.0
        hi = PenalizedProblem(
            y=prob.y, Btilde=prob.Btilde, D=prob.D, Xtilde=prob.Xtilde,
            rho=prob.rho, lam=lam_hi, penalty_weights=prob.penalty_weights,
        )
        res_hi = block_coordinate_descent(hi)
        warm = block_coordinate_descent(
            prob, theta0=res_hi.theta, lam_prev=lam_hi
        )
        cold = block_coordinate_descent(prob)
        assert warm.objective == pytest.approx(cold.objective, rel=1e-9)

    def test_no_spline_block(self, rng):
        n, m = 30, 6
        X = rng.standard_normal((n, m))
        y = rng.standard_normal(n)
        w = np.ones(m)
        prob = PenalizedProblem(
            y=y, Btilde=None, D=None, Xtilde=X, rho=0.0, lam=0.05, penalty_weights=w
        )
        res = block_coordinate_descent(prob)
        assert res.psi.shape == (0,)
        psi_o, th_o = prox_gradient_solve(y, None, X, None, 0.0, 0.05, w, n_iter=60_000)
        obj_cd = joint_objective(y, None, X, None, 0.0, 0.05, w, res.psi, res.theta)
        obj_or = joint_objective(y, None, X, None, 0.0, 0.05, w, psi_o, th_o)
        assert obj_cd == pytest.approx(obj_or, abs=1e-10)

    def test_invalid_inputs(self, rng):
        with pytest.raises(ValueError):
            PenalizedProblem(
                y=np.ones(5), Btilde=None, D=None, Xtilde=np.ones((4, 2)),
                rho=0.0, lam=0.1, penalty_weights=np.ones(2),
            )
        with pytest.raises(ValueError):
            PenalizedProblem(
                y=np.ones(5), Btilde=None, D=None, Xtilde=np.ones((5, 2)),
                rho=0.0, lam=0.1, penalty_weights=-np.ones(2),
            )
        with pytest.raises(ValueError):
            PenalizedProblem(
                y=np.ones(5), Btilde=None, D=None, Xtilde=np.ones((5, 2)),
                rho=0.0, lam=-0.1, penalty_weights=np.ones(2),
            )


class TestOracleFit:
    def test_orthonormal_rho_zero(self, rng):
        E, _ = np.linalg.qr(rng.standard_normal((30, 6)))
        y = rng.standard_normal(30)
        np.testing.assert_allclose(
            oracle_fit(E, np.eye(6), 0.0, y), E.T @ y, atol=1e-12
        )

    def test_matches_dense_solve(self, rng):
        n, m = 40, 9
        E = rng.standard_normal((n, m))
        A = rng.standard_normal((m, m))
        Dt = A.T @ A / m
        y = rng.standard_normal(n)
        rho = 0.02
        got = oracle_fit(E, Dt, rho, y)
        expect = np.linalg.solve(E.T @ E + 2.0 * n * rho * Dt, E.T @ y)
        np.testing.assert_allclose(got, expect, atol=1e-10)

    def test_matches_restricted_solver(self):
        # lam = 0 with the inactive block pinned is exactly the ridge problem
        # on [Btilde, X_active]
        prob = joint_instance(10)
        res = block_coordinate_descent(prob, SolverOptions(tol=1e-12, max_iter=50000))
        active = np.flatnonzero(res.theta != 0.0)
        w = np.full(prob.Xtilde.shape[1], np.inf)
        w[active] = 0.0
        restricted = PenalizedProblem(
            y=prob.y, Btilde=prob.Btilde, D=prob.D, Xtilde=prob.Xtilde,
            rho=prob.rho, lam=0.0, penalty_weights=w,
        )
        res_r = block_coordinate_descent(restricted, SolverOptions(tol=1e-13, max_iter=80000))
        q = prob.Btilde.shape[1]
        E = np.hstack([prob.Btilde, prob.Xtilde[:, active]])
        Dt = np.zeros((E.shape[1], E.shape[1]))
        Dt[:q, :q] = prob.D
        coef = oracle_fit(E, Dt, prob.rho, prob.y)
        np.testing.assert_allclose(res_r.psi, coef[:q], atol=1e-6)
        np.testing.assert_allclose(res_r.theta[active], coef[q:], atol=1e-6)
