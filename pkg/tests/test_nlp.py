import csv

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from hybridmpc import nlp


def quadratic(Q, c):
    Q = np.asarray(Q, float)
    c = np.asarray(c, float)
    return lambda z: (0.5 * z @ Q @ z + c @ z, Q @ z + c)


def affine(A, b):
    """g(z) = A z - b <= 0."""
    A = np.atleast_2d(np.asarray(A, float))
    b = np.atleast_1d(np.asarray(b, float))
    return lambda z: (A @ z - b, A)


def qp(Q, c, lo, hi, A=None, b=None):
    n = len(c)
    if A is None:
        return nlp.NlpProblem(n, quadratic(Q, c), lo, hi)
    A = np.atleast_2d(A)
    return nlp.NlpProblem(n, quadratic(Q, c), lo, hi, affine(A, b), A.shape[0], affine=True)


def kkt_2d_one_constraint(Q, c, a, b):
    """Closed-form minimiser of 1/2 z'Qz + c'z  s.t.  a'z <= b (unbounded box)."""
    Qi = np.linalg.inv(Q)
    z = -Qi @ c
    if a @ z <= b:
        return z, 0.0
    lam = (a @ z - b) / (a @ Qi @ a)
    return z - lam * Qi @ a, lam


class TestSolve:
    def test_clipped_unconstrained_minimum(self):
        prob = nlp.NlpProblem(1, lambda z: ((z[0] - 3) ** 2, 2 * (z - 3)), [0.0], [2.0])
        res = nlp.solve(prob, np.array([0.5]))
        assert res.status == nlp.OPTIMAL
        assert res.z[0] == 2.0
        assert res.objective == pytest.approx(1.0)

    def test_symmetric_kkt(self):
        prob = qp(2 * np.eye(2), [0, 0], [-10, -10], [10, 10], A=[[-1, -1]], b=[-1])
        res = nlp.solve(prob, np.array([3.0, -2.0]))
        assert res.status == nlp.OPTIMAL
        np.testing.assert_allclose(res.z, [0.5, 0.5], atol=1e-6)
        assert res.multipliers[0] == pytest.approx(1.0, abs=1e-5)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_closed_form_kkt(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.normal(size=(2, 2))
        Q = M @ M.T + 0.5 * np.eye(2)
        c = rng.normal(size=2) * 3
        a = rng.normal(size=2)
        b = float(rng.normal())
        z_star, lam = kkt_2d_one_constraint(Q, c, a, b)
        prob = qp(Q, c, [-1e3, -1e3], [1e3, 1e3], A=[a], b=[b])
        res = nlp.solve(prob, rng.normal(size=2))
        assert res.status == nlp.OPTIMAL
        np.testing.assert_allclose(res.z, z_star, atol=1e-6)

    def test_initial_point_clipped(self):
        prob = qp(np.eye(2), [0, 0], [1, 1], [2, 2])
        res = nlp.solve(prob, np.array([50.0, -50.0]))
        assert np.all(res.z >= 1) and np.all(res.z <= 2)

    def test_nonfinite_initial_point(self):
        prob = qp(np.eye(1), [0], [-1], [1])
        with pytest.raises(nlp.EvaluationError):
            nlp.solve(prob, np.array([np.nan]))

    def test_evaluation_error_carries_iterate(self):
        def f(z):
            if z[0] < 0.5:
                return np.inf, np.array([1.0])
            return z[0], np.array([1.0])
        with pytest.raises(nlp.EvaluationError) as err:
            nlp.solve(nlp.NlpProblem(1, f, [0.0], [1.0]), np.array([1.0]))
        assert err.value.z.shape == (1,)

    def test_infeasible_detected(self):
        # z >= 3 and z <= 1 inside box [-5, 5]
        prob = qp(np.eye(1), [0], [-5], [5], A=[[-1], [1]], b=[-3, 1])
        res = nlp.solve(prob, np.zeros(1))
        assert res.status != nlp.OPTIMAL
        assert res.violation > 1e-3

    def test_options_validated(self):
        with pytest.raises(ValueError):
            nlp.SolverOptions(tol=0)
        with pytest.raises(ValueError):
            nlp.SolverOptions(penalty_growth=1.0)

    def test_trace_written(self, tmp_path):
        path = tmp_path / "trace.csv"
        prob = qp(np.diag([1.0, 10.0]), [1, 1], [-5, -5], [5, 5], A=[[1, 1]], b=[-1])
        nlp.solve(prob, np.array([2.0, 2.0]), nlp.SolverOptions(trace_path=str(path)))
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["iteration", "merit", "residual"]
        assert len(rows) > 2


class TestKkt:
    def test_unconstrained_minimum(self):
        prob = qp(np.diag([2.0, 3.0]), [-2.0, 3.0], [-10, -10], [10, 10])
        assert nlp.kkt_residual(prob, np.array([1.0, -1.0])) <= 1e-12

    def test_interior_zero_multiplier_equals_projected_gradient(self):
        prob = qp(np.eye(2), [0, 0], [-10, -10], [10, 10], A=[[1, 0]], b=[100])
        z = np.array([0.3, -0.2])
        assert nlp.kkt_residual(prob, z, np.zeros(1)) == pytest.approx(0.3)

    def test_multiplier_checks(self):
        prob = qp(np.eye(2), [0, 0], [-1, -1], [1, 1], A=[[1, 0]], b=[0])
        with pytest.raises(ValueError):
            nlp.kkt_residual(prob, np.zeros(2), np.zeros(2))
        with pytest.raises(ValueError):
            nlp.kkt_residual(prob, np.zeros(2), -np.ones(1))

    @given(st.integers(0, 100_000))
    @settings(max_examples=40, deadline=None)
    def test_solutions_certify(self, seed):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 5)), int(rng.integers(0, 4))
        M = rng.normal(size=(n, n))
        Q = M @ M.T + 0.1 * np.eye(n)
        c = rng.normal(size=n)
        lo, hi = -rng.uniform(0.5, 3, n), rng.uniform(0.5, 3, n)
        if m:
            # constraints satisfied at the origin, so the problem is feasible
            A, b = rng.normal(size=(m, n)), rng.uniform(0.1, 1.0, m)
            prob = qp(Q, c, lo, hi, A, b)
        else:
            prob = qp(Q, c, lo, hi)
        opts = nlp.SolverOptions()
        res = nlp.solve(prob, rng.uniform(lo, hi), opts)
        assert res.status == nlp.OPTIMAL
        assert nlp.kkt_residual(prob, res.z, res.multipliers) <= opts.tol
        assert np.all(res.z >= prob.lo) and np.all(res.z <= prob.hi)
        assert res.violation <= opts.violation_tol


class TestProperties:
    @given(st.integers(0, 100_000))
    @example(148)  # a weakly active constraint just inside the feasibility band
    @settings(max_examples=30, deadline=None)
    def test_resolve_from_solution_is_immediate(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        M = rng.normal(size=(n, n))
        Q = M @ M.T + 0.1 * np.eye(n)
        A, b = rng.normal(size=(2, n)), rng.uniform(0.1, 1.0, 2)
        prob = qp(Q, rng.normal(size=n), -np.ones(n), np.ones(n), A, b)
        first = nlp.solve(prob, np.zeros(n))
        assert first.status == nlp.OPTIMAL
        again = nlp.solve(prob, first.z)
        assert again.inner_iterations <= 2
        assert again.status == nlp.OPTIMAL

    @given(st.integers(0, 100_000))
    @settings(max_examples=30, deadline=None)
    def test_merit_decreases_within_each_inner_solve(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        M = rng.normal(size=(n, n))
        prob = qp(M @ M.T + 0.1 * np.eye(n), rng.normal(size=n) * 3, -np.ones(n), np.ones(n),
                  rng.normal(size=(3, n)), rng.uniform(0.0, 0.5, 3))
        res = nlp.solve(prob, rng.uniform(-1, 1, n))
        for _, start, end in res.merit_trace:
            assert end <= start + 1e-12

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        M = rng.normal(size=(4, 4))
        prob = qp(M @ M.T + np.eye(4), rng.normal(size=4), -np.ones(4), np.ones(4), rng.normal(size=(2, 4)), [0.2, 0.1])
        a = nlp.solve(prob, np.zeros(4))
        b = nlp.solve(prob, np.zeros(4))
        assert np.array_equal(a.z, b.z) and a.inner_iterations == b.inner_iterations
        assert np.array_equal(a.multipliers, b.multipliers)

    def test_nonconvex_objective_reaches_a_local_minimum(self):
        # Rosenbrock in a box with a linear cut
        def rosen(z):
            x, y = z
            f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
            g = np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])
            return f, g
        prob = nlp.NlpProblem(2, rosen, [-2, -2], [2, 2], affine([[1, 1]], [1.5]), 1, affine=True)
        res = nlp.solve(prob, np.array([-1.2, 1.0]))
        assert res.status == nlp.OPTIMAL
        assert res.z.sum() <= 1.5 + 1e-6


class TestFiniteDiffCheck:
    def test_quadratic_exact(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(5, 5))
        prob = qp(M @ M.T, rng.normal(size=5), -np.ones(5) * 10, np.ones(5) * 10)
        # central differences are exact on quadratics for any h; a large h keeps rounding small
        assert nlp.finite_diff_check(prob, rng.normal(size=5), h=1e-2) <= 1e-10

    def test_corrupted_gradient_detected(self):
        f = quadratic(np.eye(3), np.zeros(3))

        def bad(z):
            v, g = f(z)
            g = g.copy()
            g[1] += 1.0
            return v, g
        prob = nlp.NlpProblem(3, bad, -np.ones(3), np.ones(3))
        assert nlp.finite_diff_check(prob, np.array([0.1, 0.2, 0.3])) >= 0.1
