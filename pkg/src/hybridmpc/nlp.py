"""Box- and inequality-constrained smooth NLPs.

Augmented Lagrangian over the inequalities g(z) <= 0, with a projected
gradient inner solver on the box. Inner steps use a Barzilai-Borwein trial
length and Armijo backtracking along the projection arc, preconditioned by
the box widths so that all variables move on a comparable scale.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import nnls

Array = np.ndarray

OPTIMAL = "Optimal"
MAX_ITER = "MaxIter"
LINE_SEARCH_FAIL = "LineSearchFail"
INFEASIBLE = "Infeasible"
STALL_STEPS = 10


class EvaluationError(FloatingPointError):
    def __init__(self, message: str, z: Array):
        super().__init__(message)
        self.z = np.array(z, copy=True)


@dataclass
class NlpProblem:
    """min f(z)  s.t.  g(z) <= 0,  lo <= z <= hi.

    ``objective(z)`` returns ``(f, grad)``; ``constraints(z)`` returns
    ``(g, jac)`` with ``jac`` of shape (m, n). When ``affine`` is set the
    Jacobian is read once and reused; ``constraint_values`` may then supply
    g alone more cheaply.
    """

    n: int
    objective: Callable[[Array], tuple]
    lo: Array
    hi: Array
    constraints: Optional[Callable[[Array], tuple]] = None
    n_constraints: int = 0
    affine: bool = False
    constraint_values: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        self.lo = np.broadcast_to(np.asarray(self.lo, float), (self.n,)).copy()
        self.hi = np.broadcast_to(np.asarray(self.hi, float), (self.n,)).copy()
        if np.any(self.lo > self.hi):
            raise ValueError("box bounds must satisfy lo <= hi")


@dataclass
class SolverOptions:
    tol: float = 1e-6
    violation_tol: float = 1e-6
    max_outer: int = 40
    max_inner: int = 20_000
    penalty0: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e8
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    trace_path: Optional[str] = None

    def __post_init__(self):
        if not (self.tol > 0 and self.violation_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty growth factor must exceed 1")


@dataclass
class SolveResult:
    z: Array
    objective: float
    status: str
    kkt: float
    violation: float
    inner_iterations: int
    outer_iterations: int
    multipliers: Array
    merit_trace: list = field(default_factory=list, repr=False)

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


def _project(z, lo, hi):
    return np.minimum(np.maximum(z, lo), hi)


class _Evaluator:
    def __init__(self, problem: NlpProblem):
        self.p = problem
        self.m = problem.n_constraints if problem.constraints is not None else 0
        self._jac = None

    def f(self, z):
        val, grad = self.p.objective(z)
        val = float(val)
        grad = np.asarray(grad, dtype=float)
        if not np.isfinite(val) or not np.all(np.isfinite(grad)):
            raise EvaluationError("non-finite objective or gradient", z)
        return val, grad

    def g(self, z, need_jac=True):
        if self.m == 0:
            return np.zeros(0), np.zeros((0, self.p.n))
        if self.p.affine and self._jac is not None:
            if self.p.constraint_values is not None:
                g = np.asarray(self.p.constraint_values(z), float)
            else:
                g = np.asarray(self.p.constraints(z)[0], float)
            return g, self._jac
        g, J = self.p.constraints(z)
        g = np.asarray(g, float)
        J = np.asarray(J, float).reshape(self.m, self.p.n)
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(J)):
            raise EvaluationError("non-finite constraint values", z)
        if self.p.affine:
            self._jac = J
        return g, J


def _stationarity(z, grad, lo, hi):
    return float(np.max(np.abs(_project(z - grad, lo, hi) - z), initial=0.0))


def kkt_residual(problem: NlpProblem, z: Array, multipliers: Optional[Array] = None) -> float:
    """Infinity norm of (projected-gradient stationarity, complementarity, primal violation)."""
    ev = _Evaluator(problem)
    z = np.asarray(z, dtype=float)
    _, grad = ev.f(z)
    g, J = ev.g(z)
    lam = np.zeros(ev.m) if multipliers is None else np.asarray(multipliers, float)
    if lam.shape != (ev.m,):
        raise ValueError(f"expected {ev.m} multipliers, got {lam.shape}")
    if np.any(lam < 0):
        raise ValueError("multipliers must be non-negative")
    return _kkt(z, grad, g, J, lam, problem.lo, problem.hi)


def _kkt(z, grad, g, J, lam, lo, hi):
    stat = _stationarity(z, grad + J.T @ lam if len(lam) else grad, lo, hi)
    comp = float(np.max(np.abs(lam * g), initial=0.0))
    viol = float(np.max(np.maximum(g, 0.0), initial=0.0))
    return max(stat, comp, viol)


def estimate_multipliers(z, grad, g, J, lo, hi, active_tol=1e-7):
    """Non-negative least-squares multipliers for the nearly active constraints."""
    lam = np.zeros(len(g))
    if len(g) == 0:
        return lam
    act = np.flatnonzero(g >= -active_tol)
    if act.size == 0:
        return lam
    span = np.maximum(hi - lo, 1.0)
    free = (z > lo + 1e-12 * span) & (z < hi - 1e-12 * span)
    # a coordinate at a bound only needs the sign condition; drop it from the fit
    if not free.any():
        return lam
    A = J[np.ix_(act, np.flatnonzero(free))].T
    b = -grad[free]
    sol, _ = nnls(A, b, maxiter=50 * max(A.shape))
    lam[act] = sol
    return lam


def finite_diff_check(problem: NlpProblem, z: Array, h: float = 1e-6) -> float:
    """Largest per-coordinate gradient error against central differences.

    Errors are relative for entries of magnitude above one and absolute below.
    """
    z = np.asarray(z, dtype=float)
    _, grad = problem.objective(z)
    grad = np.asarray(grad, float)
    err = 0.0
    for i in range(problem.n):
        e = np.zeros_like(z)
        e[i] = h
        fp = problem.objective(z + e)[0]
        fm = problem.objective(z - e)[0]
        fd = (fp - fm) / (2.0 * h)
        err = max(err, abs(grad[i] - fd) / max(1.0, abs(fd)))
    return err


class _CurvatureModel:
    """Damped-BFGS model of the objective curvature, in box-width units."""

    def __init__(self, D2):
        self.D2 = D2
        self.reset()

    def reset(self):
        self.B = np.diag(1.0 / self.D2)
        self.fresh = True

    def update(self, s, y):
        sy = float(s @ y)
        if self.fresh and sy > 0:
            # rescale the initial guess to the observed curvature before the first update
            self.B = np.eye(len(s)) * (float(y @ y) / sy)
            self.fresh = False
        Bs = self.B @ s
        sBs = float(s @ Bs)
        if sBs <= 1e-300:
            return
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1.0 - theta) * Bs
            sy = float(s @ y)
        self.B += np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs


def _direction(model, z, grad, lo, hi, D2, J_active, rho, use_model):
    """Two-metric search direction.

    Coordinates at (or within a shrinking band of) a bound with the gradient
    pushing outward take the diagonally scaled gradient step; the remaining
    coordinates take a Newton-like step on the curvature model plus the exact
    Gauss-Newton term of the active penalty.
    """
    width = np.where(np.isfinite(hi - lo), hi - lo, 1.0)
    band = np.minimum(1e-3 * width, _stationarity(z, grad, lo, hi))
    fixed = ((z <= lo + band) & (grad > 0)) | ((z >= hi - band) & (grad < 0))
    d = -D2 * grad
    free = ~fixed
    if use_model and free.any():
        H = model.B.copy()
        if J_active is not None and len(J_active):
            H += rho * (J_active.T @ J_active)
        Hf = H[np.ix_(free, free)]
        try:
            step = -np.linalg.solve(Hf, grad[free])
        except np.linalg.LinAlgError:
            step = None
        if step is not None and np.all(np.isfinite(step)) and float(step @ grad[free]) < 0:
            d[free] = step
    return d, fixed


def _arc_search(merit, z, psi, grad, d, lo, hi, opts):
    """Armijo backtracking along the projection arc z(a) = P(z + a d)."""
    a = 1.0
    for _ in range(opts.max_backtracks):
        zt = _project(z + a * d, lo, hi)
        step = zt - z
        decrease = float(grad @ step)
        if not np.any(step) or decrease >= 0:
            a *= opts.backtrack
            continue
        out = merit(zt)
        if out[0] <= psi + opts.armijo_c * decrease:
            return zt, out
        a *= opts.backtrack
    return None


def solve(problem: NlpProblem, z0: Array, opts: Optional[SolverOptions] = None,
          multipliers0: Optional[Array] = None) -> SolveResult:
    opts = opts or SolverOptions()
    ev = _Evaluator(problem)
    lo, hi = problem.lo, problem.hi
    z = np.asarray(z0, dtype=float).reshape(problem.n)
    if not np.all(np.isfinite(z)):
        raise EvaluationError("initial point is not finite", z)
    z = _project(z, lo, hi)
    width = hi - lo
    D2 = np.where(np.isfinite(width) & (width > 0), width, 1.0) ** 2

    trace = []
    merit_trace = []
    f, grad = ev.f(z)
    g, J = ev.g(z)
    if multipliers0 is not None:
        lam = np.maximum(np.asarray(multipliers0, float), 0.0)
    else:
        # constraints within the feasibility band can carry multipliers; the KKT test below rejects bad fits
        lam = estimate_multipliers(z, grad, g, J, lo, hi, active_tol=10.0 * opts.violation_tol)
    kkt = _kkt(z, grad, g, J, lam, lo, hi)
    viol = float(np.max(np.maximum(g, 0.0), initial=0.0))
    if kkt <= opts.tol and viol <= opts.violation_tol:
        return SolveResult(z, f, OPTIMAL, kkt, viol, 0, 0, lam, merit_trace)

    rho = opts.penalty0
    inner_total = 0
    status = MAX_ITER
    prev_viol = np.inf
    outer = 0
    ls_failed = False

    def merit(z):
        f, grad = ev.f(z)
        if ev.m == 0:
            return f, grad, f, grad, np.zeros(0), J
        g, Jz = ev.g(z)
        shifted = np.maximum(lam + rho * g, 0.0)
        psi = f + (np.sum(shifted ** 2) - np.sum(lam ** 2)) / (2.0 * rho)
        return psi, grad + Jz.T @ shifted, f, grad, g, Jz

    # curvature of f does not depend on the multipliers, so the model persists across outer steps
    model = _CurvatureModel(D2)
    for outer in range(1, opts.max_outer + 1):
        psi, gpsi, f, grad, g, J = merit(z)
        start_psi = psi
        ls_failed = False
        stalled = 0
        for _ in range(opts.max_inner):
            if _stationarity(z, gpsi, lo, hi) <= opts.tol:
                break
            active = (lam + rho * g) > 0.0 if ev.m else np.zeros(0, bool)
            out = None
            for use_model in (True, False):
                d, fixed = _direction(model, z, gpsi, lo, hi, D2, J[active] if ev.m else None, rho, use_model)
                out = _arc_search(merit, z, psi, gpsi, d, lo, hi, opts)
                if out is not None:
                    break
                model.reset()
            inner_total += 1
            if out is None:
                ls_failed = True
                break
            zt, res = out
            # steps lost in rounding mean the curvature model has gone stale near a bound
            stalled = stalled + 1 if psi - res[0] <= 1e-14 * max(1.0, abs(psi)) else 0
            if stalled >= STALL_STEPS:
                model.reset()
                stalled = 0
            else:
                model.update(zt - z, res[3] - grad + (res[5] - J).T @ np.maximum(lam + rho * res[4], 0.0)
                             if ev.m else res[3] - grad)
            z = zt
            psi, gpsi, f, grad, g, J = res
            if opts.trace_path:
                trace.append((inner_total, psi, _stationarity(z, gpsi, lo, hi)))
        merit_trace.append((outer, start_psi, psi))
        if ev.m == 0:
            lam_new = lam
        else:
            lam_new = np.maximum(lam + rho * g, 0.0)
        viol = float(np.max(np.maximum(g, 0.0), initial=0.0))
        kkt = _kkt(z, grad, g, J, lam_new, lo, hi)
        if kkt > opts.tol and ev.m:
            alt = estimate_multipliers(z, grad, g, J, lo, hi, active_tol=10.0 * opts.violation_tol)
            kkt_alt = _kkt(z, grad, g, J, alt, lo, hi)
            if kkt_alt < kkt:
                kkt, lam_new = kkt_alt, alt
        lam = lam_new
        if kkt <= opts.tol and viol <= opts.violation_tol:
            status = OPTIMAL
            break
        if ev.m == 0:
            status = LINE_SEARCH_FAIL if ls_failed else MAX_ITER
            break
        if viol > opts.violation_tol and viol > 0.25 * prev_viol:
            if rho >= opts.penalty_max:
                status = INFEASIBLE
                break
            rho = min(rho * opts.penalty_growth, opts.penalty_max)
        prev_viol = viol
    else:
        status = LINE_SEARCH_FAIL if ls_failed else MAX_ITER
    if status != OPTIMAL and viol > opts.violation_tol and rho >= opts.penalty_max:
        status = INFEASIBLE

    if opts.trace_path:
        with open(opts.trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "merit", "residual"])
            w.writerows(trace)
    return SolveResult(z, f, status, kkt, viol, inner_total, outer, lam, merit_trace)
