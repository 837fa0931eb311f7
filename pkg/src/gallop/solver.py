"""Built-in solver for sparse constrained NLPs.

Augmented-Lagrangian (PHR) outer loop around bound-constrained inner solves.
For constrained problems the inner minimizer is a projected Levenberg-
Marquardt method: the AL Hessian is modelled by mu J^T J over the active
residual rows (plus adaptive damping), factored directly in sparse form,
with constraint rows equilibrated by their Jacobian row norms at the start
point. Near-feasible iterates are polished by Newton feasibility-restoration
steps that solve the linearized constraints exactly at negligible objective
cost. Unconstrained (bound-only) problems fall back to limited-memory
quasi-Newton with gradient projection (scipy's L-BFGS-B).

Multipliers update by the classic first-order rule when an inner solve
reaches its tolerance with sufficient violation decrease; otherwise the
quadratic penalty grows by a fixed factor. Equalities enter as c_eq(x) = 0,
inequalities as c_ineq(x) <= 0, variable bounds are honored throughout.

The solver is deterministic: identical (problem, x0, options) produce
identical iterate sequences. Iteration logs stream to stderr in the format
``iter  objective  violation  stationarity  penalty``. Reported KKT
residuals are measured in the problem's own constraint scaling.

Problems may expose a ``repair(x)`` method returning ``x`` with dependent
variables (e.g. absolute-value slack pairs) reset onto their defining
equalities; the solver applies it after every accepted step.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EvaluationFailure


@dataclass
class SolveOptions:
    max_iterations: int = 60             # outer augmented-Lagrangian iterations
    constraint_tolerance: float = 1e-6   # on problem-scaled constraints
    optimality_tolerance: float = 1e-6
    initial_penalty: float = 10.0
    verbosity: int = 0
    inner_iterations: int = 30           # inner LM steps per outer iteration
    inner_method: str = "auto"           # auto | gauss-newton | lbfgsb
    penalty_factor: float = 10.0         # growth on insufficient decrease
    sufficient_decrease: float = 0.25
    max_penalty: float = 1e8
    multiplier_bound: float = 1e10
    stagnation_limit: int = 5
    safeguard_factor: float = 10.0       # max allowed violation growth per outer step
    violation_floor: float = 1.0         # safeguard baseline for near-feasible iterates
    restoration_threshold: float = 1e-2  # run feasibility restoration below this
    restoration_steps: int = 12
    time_limit: float | None = None

    def __post_init__(self):
        if self.constraint_tolerance <= 0 or self.optimality_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    status: str
    x: np.ndarray
    multipliers: dict
    objective: float
    kkt: dict
    iterations: int
    inner_iterations: int
    wall_time: float
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status in ("Optimal", "Feasible")


@dataclass
class SimpleProblem:
    """Adapter giving plain callables the problem surface the solver expects.

    ``constraints`` returns (c_eq, c_ineq) with the convention c_ineq <= 0;
    ``jacobian`` returns the matching pair of (possibly sparse) matrices.
    """

    n: int
    objective: callable
    gradient: callable
    constraints: callable = None
    jacobian: callable = None
    lb: np.ndarray = None
    ub: np.ndarray = None
    x_scale: np.ndarray = None
    c_scale_eq: np.ndarray = None
    c_scale_ineq: np.ndarray = None
    name: str = "problem"

    def __post_init__(self):
        if self.lb is None:
            self.lb = np.full(self.n, -np.inf)
        if self.ub is None:
            self.ub = np.full(self.n, np.inf)
        if self.constraints is None:
            self.constraints = lambda x: (np.zeros(0), np.zeros(0))
            self.jacobian = lambda x: (np.zeros((0, self.n)), np.zeros((0, self.n)))

    def bounds(self):
        return self.lb, self.ub


def _as_matrix(J):
    if sp.issparse(J):
        return J.tocsr()
    return np.atleast_2d(np.asarray(J, dtype=float))


def _jt_vec(J, v):
    if v.size == 0:
        return 0.0
    return J.T @ v


class _ScaledProblem:
    """Applies variable and constraint scaling around a user problem."""

    def __init__(self, problem):
        self.problem = problem
        self.n = problem.n
        xs = getattr(problem, "x_scale", None)
        self.xs = np.asarray(xs if xs is not None else np.ones(self.n), dtype=float)
        lb, ub = problem.bounds()
        self.lb = np.asarray(lb, dtype=float) / self.xs
        self.ub = np.asarray(ub, dtype=float) / self.xs
        self.fs = float(getattr(problem, "f_scale", 1.0) or 1.0)
        self.se = None
        self.si = None
        self._repair = getattr(problem, "repair", None)

    def _scales(self, m_e, m_i):
        if self.se is None:
            se = getattr(self.problem, "c_scale_eq", None)
            si = getattr(self.problem, "c_scale_ineq", None)
            self.se = np.ones(m_e) if se is None else np.asarray(se, dtype=float)
            self.si = np.ones(m_i) if si is None else np.asarray(si, dtype=float)
        return self.se, self.si

    def x_from(self, y):
        return y * self.xs

    def y_from(self, x):
        return np.asarray(x, dtype=float) / self.xs

    def repair(self, y):
        if self._repair is None:
            return y
        return self.y_from(self._repair(self.x_from(y)))

    def objective(self, y):
        return float(self.problem.objective(self.x_from(y))) / self.fs

    def gradient(self, y):
        return np.asarray(self.problem.gradient(self.x_from(y)),
                          dtype=float) * self.xs / self.fs

    def constraints(self, y):
        c_e, c_i = self.problem.constraints(self.x_from(y))
        c_e = np.atleast_1d(np.asarray(c_e, dtype=float))
        c_i = np.atleast_1d(np.asarray(c_i, dtype=float))
        se, si = self._scales(c_e.size, c_i.size)
        return c_e / se, c_i / si

    def jacobian(self, y):
        J_e, J_i = self.problem.jacobian(self.x_from(y))
        J_e, J_i = _as_matrix(J_e), _as_matrix(J_i)
        se, si = self._scales(J_e.shape[0], J_i.shape[0])
        if sp.issparse(J_e):
            J_e = sp.diags(1.0 / se) @ J_e @ sp.diags(self.xs)
        else:
            J_e = (J_e / se[:, None]) * self.xs[None, :]
        if sp.issparse(J_i):
            J_i = sp.diags(1.0 / si) @ J_i @ sp.diags(self.xs)
        else:
            J_i = (J_i / si[:, None]) * self.xs[None, :]
        return J_e, J_i


def _violation(c_e, c_i, lb=None, ub=None, y=None):
    v = 0.0
    if c_e.size:
        v = max(v, float(np.abs(c_e).max()))
    if c_i.size:
        v = max(v, float(np.maximum(c_i, 0.0).max()))
    if lb is not None and y is not None:
        v = max(v, float(np.maximum(lb - y, 0.0).max(initial=0.0)))
        v = max(v, float(np.maximum(y - ub, 0.0).max(initial=0.0)))
    return v


def _projected_gradient_norm(y, g, lb, ub):
    step = np.clip(y - g, lb, ub) - y
    return float(np.abs(step).max(initial=0.0))


def kkt_residuals(problem, x, multipliers) -> dict:
    """Infinity norms of stationarity, feasibility, and complementarity.

    Stationarity is the projected gradient of the Lagrangian onto the box;
    multipliers is a dict with "eq" and "ineq" arrays (inequality multipliers
    nonnegative for c_ineq <= 0).
    """
    x = np.asarray(x, dtype=float)
    y_e = np.atleast_1d(np.asarray(multipliers.get("eq", np.zeros(0)), dtype=float))
    y_i = np.atleast_1d(np.asarray(multipliers.get("ineq", np.zeros(0)), dtype=float))
    c_e, c_i = problem.constraints(x)
    c_e = np.atleast_1d(np.asarray(c_e, dtype=float))
    c_i = np.atleast_1d(np.asarray(c_i, dtype=float))
    J_e, J_i = problem.jacobian(x)
    J_e, J_i = _as_matrix(J_e), _as_matrix(J_i)
    g = np.asarray(problem.gradient(x), dtype=float)
    if y_e.size:
        g = g + _jt_vec(J_e, y_e)
    if y_i.size:
        g = g + _jt_vec(J_i, y_i)
    lb, ub = problem.bounds()
    stationarity = _projected_gradient_norm(x, g, np.asarray(lb), np.asarray(ub))
    feasibility = _violation(c_e, c_i, np.asarray(lb), np.asarray(ub), x)
    comp = float(np.abs(y_i * c_i).max(initial=0.0))
    return {"stationarity": stationarity, "feasibility": feasibility,
            "complementarity": comp}


class _AugmentedLagrangian:
    """Workspace for one constrained solve in scaled, equilibrated space."""

    def __init__(self, scaled: _ScaledProblem, y0: np.ndarray, opts: SolveOptions):
        self.scaled = scaled
        self.opts = opts
        self.lb, self.ub = scaled.lb, scaled.ub
        self.n = y0.size
        c_e, c_i = scaled.constraints(y0)
        self.m_e, self.m_i = c_e.size, c_i.size
        J_e, J_i = scaled.jacobian(y0)
        self.eq_e = self._row_norms(J_e)
        self.eq_i = self._row_norms(J_i)
        self.lam_e = np.zeros(self.m_e)
        self.lam_i = np.zeros(self.m_i)
        self.mu = float(opts.initial_penalty)
        self.sigma = 1.0
        self.sigma_t = 1e-2
        self.rho = 1.0

    @staticmethod
    def _row_norms(J):
        J = sp.csr_matrix(J)
        if J.shape[0] == 0:
            return np.zeros(0)
        rn = np.sqrt(np.asarray(J.multiply(J).sum(axis=1)).ravel())
        return np.maximum(rn, 1e-3)

    def residuals(self, y):
        """(equilibrated c_eq, equilibrated c_ineq, problem-scaled violation)."""
        c_e, c_i = self.scaled.constraints(y)
        viol = _violation(c_e, c_i)
        return c_e / self.eq_e, c_i / (self.eq_i if self.m_i else 1.0), viol

    def jacobians(self, y):
        J_e, J_i = self.scaled.jacobian(y)
        J_e = sp.diags(1.0 / self.eq_e) @ sp.csr_matrix(J_e) if self.m_e \
            else sp.csr_matrix((0, self.n))
        J_i = sp.diags(1.0 / self.eq_i) @ sp.csr_matrix(J_i) if self.m_i \
            else sp.csr_matrix((0, self.n))
        return J_e, J_i

    def value(self, y):
        """AL value plus residuals; inf when the problem returns non-finite."""
        fx = self.scaled.objective(y)
        ce, ci, viol = self.residuals(y)
        if not (np.isfinite(fx) and np.isfinite(ce).all() and np.isfinite(ci).all()):
            return np.inf, ce, ci, viol
        val = fx
        if self.m_e:
            val += float(self.lam_e @ ce + 0.5 * self.mu * (ce @ ce))
        if self.m_i:
            wi = np.maximum(0.0, self.lam_i + self.mu * ci)
            val += float((wi @ wi - self.lam_i @ self.lam_i) / (2.0 * self.mu))
        return val, ce, ci, viol

    def gradient_blocks(self, y, ce, ci):
        J_e, J_i = self.jacobians(y)
        g = self.scaled.gradient(y)
        we = self.lam_e + self.mu * ce if self.m_e else np.zeros(0)
        wi = np.maximum(0.0, self.lam_i + self.mu * ci) if self.m_i else np.zeros(0)
        if self.m_e:
            g = g + J_e.T @ we
        if self.m_i:
            g = g + J_i.T @ wi
        return g, J_e, J_i, wi

    def lagrangian_stationarity(self, y, ce, ci):
        J_e, J_i = self.jacobians(y)
        g = self.scaled.gradient(y)
        if self.m_e:
            g = g + J_e.T @ self.lam_e
        if self.m_i:
            g = g + J_i.T @ self.lam_i
        comp = float(np.abs(self.lam_i * ci).max(initial=0.0))
        return _projected_gradient_norm(y, g, self.lb, self.ub), comp

    def inner_lm(self, y, gtol, maxiter):
        """Projected Levenberg-Marquardt descent on the AL; returns iterations."""
        val, ce, ci, _ = self.value(y)
        nit = 0
        converged = False
        for nit in range(1, maxiter + 1):
            g, J_e, J_i, wi = self.gradient_blocks(y, ce, ci)
            pg = _projected_gradient_norm(y, g, self.lb, self.ub)
            if pg <= gtol:
                converged = True
                break
            blocks = []
            if self.m_e:
                blocks.append(J_e)
            if self.m_i and (wi > 0).any():
                blocks.append(sp.csr_matrix(J_i)[np.where(wi > 0)[0]])
            at_lo = (y <= self.lb + 1e-12) & (g > 0)
            at_hi = (y >= self.ub - 1e-12) & (g < 0)
            free = np.where(~(at_lo | at_hi))[0]
            if free.size == 0:
                converged = True
                break
            if blocks:
                J = sp.vstack(blocks).tocsc()[:, free]
                JtJ = (self.mu * (J.T @ J)).tocsc()
                dscale = np.maximum(JtJ.diagonal(), 1e-6)
            else:
                JtJ = sp.csc_matrix((free.size, free.size))
                dscale = np.ones(free.size)
            improved = False
            for _ in range(14):
                H = JtJ + sp.diags(self.sigma * dscale, format="csc")
                try:
                    p_f = spla.splu(H).solve(-g[free])
                except RuntimeError:
                    self.sigma = min(self.sigma * 10.0, 1e12)
                    continue
                p = np.zeros(self.n)
                p[free] = p_f
                y_try = self.scaled.repair(np.clip(y + p, self.lb, self.ub))
                d = y_try - y
                pred = -(g @ d + 0.5 * (d[free] @ (JtJ @ d[free]))
                         + 0.5 * self.sigma * (dscale * d[free]) @ d[free])
                val_try, ce_t, ci_t, _ = self.value(y_try)
                if np.isfinite(val_try) and val - val_try > 0:
                    ratio = (val - val_try) / max(pred, 1e-300)
                    y, val, ce, ci = y_try, val_try, ce_t, ci_t
                    if ratio > 0.75:
                        self.sigma = max(self.sigma / 3.0, 1e-12)
                    elif ratio < 0.25:
                        self.sigma = min(self.sigma * 3.0, 1e12)
                    improved = True
                    break
                self.sigma = min(self.sigma * 10.0, 1e12)
            if not improved:
                break
        return y, converged, nit

    def refit_multipliers(self, y, ci):
        """Least-squares dual estimate minimizing the Lagrangian gradient.

        Fits multipliers over the free coordinates only; inequality
        multipliers are restricted to the active set and clipped to be
        nonnegative.
        """
        g = self.scaled.gradient(y)
        J_e, J_i = self.jacobians(y)
        act = np.where(ci >= -1e-8)[0] if self.m_i else np.zeros(0, dtype=int)
        blocks = []
        if self.m_e:
            blocks.append(J_e)
        if act.size:
            blocks.append(sp.csr_matrix(J_i)[act])
        if not blocks:
            return
        at_lo = (y <= self.lb + 1e-12)
        at_hi = (y >= self.ub - 1e-12)
        free = np.where(~(at_lo | at_hi))[0]
        A = sp.vstack(blocks).tocsc()[:, free].T
        lam = spla.lsqr(A, -g[free], atol=1e-12, btol=1e-12)[0]
        lam_e_new = lam[:self.m_e] if self.m_e else np.zeros(0)
        lam_i_new = np.zeros(self.m_i)
        if act.size:
            lam_i_new[act] = np.maximum(0.0, lam[self.m_e:])
        ce2, ci2, _ = self.residuals(y)
        old_stat, _ = self.lagrangian_stationarity(y, ce2, ci2)
        old_e, old_i = self.lam_e, self.lam_i
        self.lam_e, self.lam_i = lam_e_new, lam_i_new
        new_stat, _ = self.lagrangian_stationarity(y, ce2, ci2)
        if new_stat >= old_stat:
            self.lam_e, self.lam_i = old_e, old_i

    def sqp_steps(self, y, gtol, max_steps, verbose=False):
        """Equality-constrained SQP polish near the feasible manifold.

        Each step solves the regularized KKT system on the linearized
        constraints (active inequalities pinned to their boundary), takes a
        backtracking step on an l1 merit, and adopts the KKT multipliers.
        Returns (y, converged, steps).
        """
        nit = 0
        converged = False
        for nit in range(1, max_steps + 1):
            ce, ci, viol = self.residuals(y)
            J_e, J_i = self.jacobians(y)
            g = self.scaled.gradient(y)
            gL = g.copy()
            if self.m_e:
                gL = gL + J_e.T @ self.lam_e
            if self.m_i:
                gL = gL + J_i.T @ self.lam_i
            pg = _projected_gradient_norm(y, gL, self.lb, self.ub)
            comp = float(np.abs(self.lam_i * ci).max(initial=0.0))
            if pg <= gtol and viol <= 1e-8 + gtol * 0.01 and comp <= gtol:
                converged = True
                break

            act = np.where((ci >= -1e-8) | (self.lam_i > 0))[0] if self.m_i \
                else np.zeros(0, dtype=int)
            blocks = []
            rhs_c = []
            if self.m_e:
                blocks.append(J_e)
                rhs_c.append(-ce)
            if act.size:
                blocks.append(sp.csr_matrix(J_i)[act])
                rhs_c.append(-ci[act])
            at_lo = (y <= self.lb + 1e-12) & (gL > 0)
            at_hi = (y >= self.ub - 1e-12) & (gL < 0)
            free = np.where(~(at_lo | at_hi))[0]

            def measures(yv):
                ce_v, ci_v, _ = self.residuals(yv)
                pen = np.abs(ce_v).sum() + np.maximum(ci_v, 0.0).sum()
                fv = self.scaled.objective(yv)
                if not np.isfinite(fv) or not np.isfinite(pen):
                    return np.inf, np.inf
                return fv, pen

            f0, pen0 = measures(y)
            # dual-block regularization: tight only once violations sit at
            # numerical noise, where its leak would mask true descent
            delta = 1e-12 if pen0 <= 1e-9 else 1e-10
            accepted = False
            for _ in range(10):
                if blocks:
                    J = sp.vstack(blocks).tocsc()[:, free]
                    m = J.shape[0]
                    K = sp.bmat([[self.sigma_t * sp.eye(free.size), J.T],
                                 [J, -delta * sp.eye(m)]], format="csc")
                    rhs = np.concatenate([-g[free], np.concatenate(rhs_c)])
                    try:
                        sol = spla.splu(K).solve(rhs)
                    except RuntimeError:
                        self.sigma_t = min(self.sigma_t * 10, 1e8)
                        continue
                    p = np.zeros(self.n)
                    p[free] = sol[:free.size]
                    nu = sol[free.size:]
                else:
                    p = np.zeros(self.n)
                    p[free] = -g[free] / self.sigma_t
                    nu = np.zeros(0)
                self.rho = max(self.rho, 2.0 * float(np.abs(nu).max(initial=0.0)), 1.0)
                phi0 = f0 + self.rho * pen0
                tiny = 1e-14 * max(1.0, abs(phi0))
                step = 1.0
                for _ in range(20):
                    y_try = self.scaled.repair(np.clip(y + step * p, self.lb, self.ub))
                    f_t, pen_t = measures(y_try)
                    # merit decrease, or filter-style: objective progress when
                    # the violation sits at numerical noise
                    if f_t + self.rho * pen_t < phi0 - tiny or \
                            (pen0 <= 1e-9 and f_t < f0 - tiny
                             and pen_t <= max(pen0, 1e-10)):
                        accepted = True
                        break
                    step *= 0.35
                if accepted:
                    y = y_try
                    if self.m_e:
                        self.lam_e = nu[:self.m_e]
                    if act.size:
                        lam_i = np.zeros(self.m_i)
                        lam_i[act] = np.maximum(0.0, nu[self.m_e:])
                        self.lam_i = lam_i
                    if step >= 0.99:
                        self.sigma_t = max(self.sigma_t / 3.0, 1e-8)
                    break
                self.sigma_t = min(self.sigma_t * 10.0, 1e8)
            if not accepted:
                break
        return y, converged, nit

    def restore_feasibility(self, y, target, max_steps):
        """Newton steps onto the linearized constraint manifold.

        Minimum-norm corrections barely move the objective; active
        inequalities are driven to their boundary, satisfied ones are left
        alone. Budgeted, and abandoned on stagnation.
        """
        for _ in range(max_steps):
            ce, ci, viol = self.residuals(y)
            if viol <= target:
                break
            rows = [ce] if self.m_e else []
            J_e, J_i = self.jacobians(y)
            blocks = [J_e] if self.m_e else []
            if self.m_i:
                act = np.where(ci > 0)[0]
                if act.size:
                    rows.append(ci[act])
                    blocks.append(sp.csr_matrix(J_i)[act])
            if not blocks:
                break
            r = np.concatenate(rows)
            J = sp.vstack(blocks).tocsc()
            at_lo = (y <= self.lb + 1e-10)
            at_hi = (y >= self.ub - 1e-10)
            free = np.where(~(at_lo | at_hi))[0]
            Jf = J[:, free]
            m = Jf.shape[0]
            K = sp.bmat([[sp.eye(free.size), Jf.T],
                         [Jf, -1e-10 * sp.eye(m)]], format="csc")
            rhs = np.concatenate([np.zeros(free.size), -r])
            try:
                sol = spla.splu(K).solve(rhs)
            except RuntimeError:
                break
            p = np.zeros(self.n)
            p[free] = sol[:free.size]
            base = np.linalg.norm(r)
            step = 1.0
            accepted = False
            for _ in range(25):
                y_try = self.scaled.repair(np.clip(y + step * p, self.lb, self.ub))
                ce_t, ci_t, _ = self.residuals(y_try)
                r_t = np.concatenate([ce_t, np.maximum(ci_t, 0.0)])
                if np.isfinite(r_t @ r_t) and np.linalg.norm(r_t) < base:
                    y = y_try
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
        return y


def _solve_constrained(problem, scaled, y, opts, t_start):
    al = _AugmentedLagrangian(scaled, y, opts)
    y = scaled.repair(y)
    _, _, viol = al.residuals(y)
    best_y, best_viol = y.copy(), viol
    omega = max(opts.optimality_tolerance, 1e-2)
    inner_total = 0
    stagnation = 0
    status = message = None
    outer = 0

    sqp_stalls = 0
    for outer in range(1, opts.max_iterations + 1):
        _, _, viol_now = al.residuals(y)
        if viol_now <= opts.restoration_threshold:
            # near-feasible: switch to SQP polishing with KKT multipliers
            y_new, sqp_converged, nit = al.sqp_steps(
                y.copy(), opts.optimality_tolerance, opts.inner_iterations)
            inner_total += nit
            moved = not np.array_equal(y_new, y)
            y = y_new
            ce, ci, viol = al.residuals(y)
            if opts.constraint_tolerance < viol:
                y = al.restore_feasibility(y, opts.constraint_tolerance / 10.0,
                                           opts.restoration_steps)
                ce, ci, viol = al.residuals(y)
            al.refit_multipliers(y, ci)
            stat, comp = al.lagrangian_stationarity(y, ce, ci)
            if viol < best_viol:
                best_viol, best_y = viol, y.copy()
            if opts.verbosity >= 1:
                print(f"{outer:4d}s {scaled.objective(y):14.6e}  {viol:10.3e}  "
                      f"{stat:10.3e}  {al.mu:8.1e}", file=sys.stderr)
            if viol <= opts.constraint_tolerance and \
                    stat <= opts.optimality_tolerance and \
                    comp <= max(1e-4, opts.optimality_tolerance * 100):
                status, message = "Optimal", "KKT conditions satisfied"
                break
            sqp_stalls = 0 if moved else sqp_stalls + 1
            if sqp_stalls >= 3:
                status = "Feasible" if viol <= opts.constraint_tolerance \
                    else "MaxIterations"
                message = "SQP polish stalled"
                break
            if opts.time_limit is not None and \
                    time.perf_counter() - t_start > opts.time_limit:
                status = "Feasible" if viol <= opts.constraint_tolerance \
                    else "MaxIterations"
                message = "time limit reached"
                break
            continue

        y_new, inner_converged, nit = al.inner_lm(y.copy(), omega,
                                                  opts.inner_iterations)
        inner_total += nit
        ce, ci, new_viol = al.residuals(y_new)
        if not (np.isfinite(ce).all() and np.isfinite(ci).all()):
            status, message = "Diverged", "non-finite values at accepted iterate"
            break
        if not inner_converged and np.array_equal(y_new, y):
            # inner could not move at all: escalate, give up once the
            # penalty has nowhere left to go
            if al.mu >= opts.max_penalty:
                stagnation += 1
            al.mu = min(al.mu * opts.penalty_factor, opts.max_penalty)

        if new_viol > opts.safeguard_factor * max(best_viol, opts.violation_floor):
            y = best_y.copy()
            al.mu = min(al.mu * opts.penalty_factor, opts.max_penalty)
            stagnation += 1
        else:
            prev_viol = viol
            y, viol = y_new, new_viol
            if inner_converged:
                # first-order multiplier estimate uses the AL minimizer's
                # residuals, before any feasibility polishing
                if viol <= max(opts.constraint_tolerance,
                               opts.sufficient_decrease * prev_viol):
                    al.lam_e = np.clip(al.lam_e + al.mu * ce,
                                       -opts.multiplier_bound, opts.multiplier_bound)
                    al.lam_i = np.clip(np.maximum(0.0, al.lam_i + al.mu * ci),
                                       0.0, opts.multiplier_bound)
                    stagnation = 0
                else:
                    al.mu = min(al.mu * opts.penalty_factor, opts.max_penalty)
                    if al.mu >= opts.max_penalty and viol > opts.constraint_tolerance:
                        stagnation += 1
                omega = max(opts.optimality_tolerance, omega * 0.2)
            if opts.constraint_tolerance < viol <= opts.restoration_threshold:
                y = al.restore_feasibility(y, opts.constraint_tolerance / 10.0,
                                           opts.restoration_steps)
                _, _, viol = al.residuals(y)
            if viol < best_viol:
                best_viol = viol
                best_y = y.copy()

        ce, ci, viol = al.residuals(y)
        stat, comp = al.lagrangian_stationarity(y, ce, ci)
        if opts.verbosity >= 1:
            print(f"{outer:4d}  {scaled.objective(y):14.6e}  {viol:10.3e}  "
                  f"{stat:10.3e}  {al.mu:8.1e}", file=sys.stderr)
        if viol <= opts.constraint_tolerance and stat <= opts.optimality_tolerance \
                and comp <= max(1e-4, opts.optimality_tolerance * 100):
            status, message = "Optimal", "KKT conditions satisfied"
            break
        if stagnation >= opts.stagnation_limit:
            status = "Infeasible" if viol > opts.constraint_tolerance else "Feasible"
            message = "violation stagnated at maximum penalty"
            break
        if opts.time_limit is not None and \
                time.perf_counter() - t_start > opts.time_limit:
            status = "Feasible" if viol <= opts.constraint_tolerance else "MaxIterations"
            message = "time limit reached"
            break

    # best-effort cleanup so near-feasible exits report a clean point
    if status not in ("Diverged",):
        _, _, viol = al.residuals(y)
        if opts.constraint_tolerance < viol <= opts.restoration_threshold:
            y = al.restore_feasibility(y, opts.constraint_tolerance / 10.0,
                                       3 * opts.restoration_steps)
        ce, ci, viol = al.residuals(y)
        al.refit_multipliers(y, ci)
        stat, comp = al.lagrangian_stationarity(y, ce, ci)
        if viol <= opts.constraint_tolerance and \
                stat <= opts.optimality_tolerance and \
                comp <= max(1e-4, opts.optimality_tolerance * 100):
            status, message = "Optimal", "KKT conditions satisfied"
        elif status in (None, "MaxIterations") and viol <= opts.constraint_tolerance:
            status = "Feasible"
            message = message or "feasible at iteration cap"

    if status is None:
        ce, ci, viol = al.residuals(y)
        if viol <= opts.constraint_tolerance:
            status, message = "Feasible", "feasible at iteration cap"
        else:
            status, message = "MaxIterations", "iteration cap with residual violation"

    ce, ci, viol = al.residuals(y)
    stat, comp = al.lagrangian_stationarity(y, ce, ci)
    se, si = scaled._scales(al.m_e, al.m_i)
    multipliers = {"eq": al.lam_e / (al.eq_e * se) if al.m_e else al.lam_e,
                   "ineq": al.lam_i / (al.eq_i * si) if al.m_i else al.lam_i}
    kkt = {"stationarity": stat, "feasibility": viol, "complementarity": comp}
    return y, status, message, multipliers, kkt, outer, inner_total


def _solve_bound_only(scaled, y, opts, t_start):
    omega = opts.optimality_tolerance

    def fun(yv):
        fx = scaled.objective(yv)
        if not np.isfinite(fx):
            return 1e20, np.zeros_like(yv)
        g = scaled.gradient(yv)
        if not np.isfinite(g).all():
            return 1e20, np.zeros_like(yv)
        return fx, g

    res = scipy.optimize.minimize(
        fun, y, jac=True, method="L-BFGS-B",
        bounds=list(zip(scaled.lb, scaled.ub)),
        options={"maxiter": opts.max_iterations * opts.inner_iterations,
                 "maxcor": 30, "ftol": 1e-16, "gtol": omega, "maxls": 60})
    y = np.asarray(res.x)
    g = scaled.gradient(y)
    stat = _projected_gradient_norm(y, g, scaled.lb, scaled.ub)
    if stat <= opts.optimality_tolerance * 10:
        status, message = "Optimal", "projected gradient below tolerance"
    elif res.status == 1:
        status, message = "MaxIterations", "iteration cap"
    else:
        status, message = "Feasible", str(res.message)
    kkt = {"stationarity": stat, "feasibility": 0.0, "complementarity": 0.0}
    return y, status, message, {"eq": np.zeros(0), "ineq": np.zeros(0)}, \
        kkt, 1, int(res.nit)


def solve(problem, x0, opts: SolveOptions | None = None) -> SolveResult:
    """Minimize a constrained problem from x0; see module docstring.

    Raises EvaluationFailure when the problem returns non-finite values at
    the starting point.
    """
    opts = opts or SolveOptions()
    t_start = time.perf_counter()
    scaled = _ScaledProblem(problem)
    y = np.clip(scaled.y_from(np.asarray(x0, dtype=float)), scaled.lb, scaled.ub)

    f0 = scaled.objective(y)
    c_e, c_i = scaled.constraints(y)
    if not (np.isfinite(f0) and np.isfinite(c_e).all() and np.isfinite(c_i).all()):
        raise EvaluationFailure("non-finite objective or constraints at x0")

    m = c_e.size + c_i.size
    method = opts.inner_method
    if method == "auto":
        method = "gauss-newton" if m > 0 else "lbfgsb"

    if method == "gauss-newton" and m > 0:
        y, status, message, multipliers, kkt, outer, inner = _solve_constrained(
            problem, scaled, y, opts, t_start)
    elif m == 0:
        y, status, message, multipliers, kkt, outer, inner = _solve_bound_only(
            scaled, y, opts, t_start)
    else:
        y, status, message, multipliers, kkt, outer, inner = _solve_lbfgsb_al(
            problem, scaled, y, opts, t_start)

    x = scaled.x_from(y)
    return SolveResult(
        status=status,
        x=x,
        multipliers=multipliers,
        objective=float(problem.objective(x)),
        kkt=kkt,
        iterations=outer,
        inner_iterations=inner,
        wall_time=time.perf_counter() - t_start,
        message=message,
    )


def _solve_lbfgsb_al(problem, scaled, y, opts, t_start):
    """Classic AL outer loop with L-BFGS-B inner solves (reference method)."""
    c_e, c_i = scaled.constraints(y)
    m_e, m_i = c_e.size, c_i.size
    lam_e, lam_i = np.zeros(m_e), np.zeros(m_i)
    mu = float(opts.initial_penalty)
    lb, ub = scaled.lb, scaled.ub
    viol = _violation(c_e, c_i)
    best_y, best_viol = y.copy(), viol
    omega = max(opts.optimality_tolerance, 1e-2)
    inner_total = 0
    stagnation = 0
    status = message = None
    outer = 0

    def al_value_grad(yv):
        fx = scaled.objective(yv)
        ce, ci = scaled.constraints(yv)
        if not (np.isfinite(fx) and np.isfinite(ce).all() and np.isfinite(ci).all()):
            return 1e20, np.zeros_like(yv)
        gx = scaled.gradient(yv)
        Je, Ji = scaled.jacobian(yv)
        val = fx
        grad = gx
        if m_e:
            w = lam_e + mu * ce
            val += float(lam_e @ ce + 0.5 * mu * (ce @ ce))
            grad = grad + _jt_vec(Je, w)
        if m_i:
            w = np.maximum(0.0, lam_i + mu * ci)
            val += float((w @ w - lam_i @ lam_i) / (2.0 * mu))
            grad = grad + _jt_vec(Ji, w)
        if not np.isfinite(val) or not np.isfinite(grad).all():
            return 1e20, np.zeros_like(yv)
        return val, grad

    def lag_stat(yv, ce, ci):
        g = scaled.gradient(yv)
        Je, Ji = scaled.jacobian(yv)
        if m_e:
            g = g + _jt_vec(Je, lam_e)
        if m_i:
            g = g + _jt_vec(Ji, lam_i)
        comp = float(np.abs(lam_i * ci).max(initial=0.0))
        return _projected_gradient_norm(yv, g, lb, ub), comp

    for outer in range(1, opts.max_iterations + 1):
        res = scipy.optimize.minimize(
            al_value_grad, y, jac=True, method="L-BFGS-B",
            bounds=list(zip(lb, ub)),
            options={"maxiter": max(opts.inner_iterations, 100), "maxcor": 30,
                     "ftol": 1e-16, "gtol": omega, "maxls": 60})
        y_new = np.asarray(res.x)
        inner_total += int(res.nit)
        inner_converged = res.status == 0 or res.nit == 0
        c_e, c_i = scaled.constraints(y_new)
        if not (np.isfinite(c_e).all() and np.isfinite(c_i).all()):
            status, message = "Diverged", "non-finite values at accepted iterate"
            break
        new_viol = _violation(c_e, c_i)
        if new_viol > opts.safeguard_factor * max(best_viol, opts.violation_floor):
            y = best_y.copy()
            mu = min(mu * opts.penalty_factor, opts.max_penalty)
            stagnation += 1
        else:
            prev_viol = viol
            y, viol = y_new, new_viol
            if inner_converged:
                if new_viol <= max(opts.constraint_tolerance,
                                   opts.sufficient_decrease * prev_viol):
                    lam_e = np.clip(lam_e + mu * c_e,
                                    -opts.multiplier_bound, opts.multiplier_bound)
                    lam_i = np.clip(np.maximum(0.0, lam_i + mu * c_i),
                                    0.0, opts.multiplier_bound)
                    stagnation = 0
                else:
                    mu = min(mu * opts.penalty_factor, opts.max_penalty)
                    if mu >= opts.max_penalty and new_viol > opts.constraint_tolerance:
                        stagnation += 1
                omega = max(opts.optimality_tolerance, omega * 0.2)
            if new_viol < best_viol:
                best_viol = new_viol
                best_y = y.copy()

        c_e, c_i = scaled.constraints(y)
        viol = _violation(c_e, c_i)
        stat, comp = lag_stat(y, c_e, c_i)
        if opts.verbosity >= 1:
            print(f"{outer:4d}  {scaled.objective(y):14.6e}  {viol:10.3e}  "
                  f"{stat:10.3e}  {mu:8.1e}", file=sys.stderr)
        if viol <= opts.constraint_tolerance and stat <= opts.optimality_tolerance \
                and comp <= max(1e-4, opts.optimality_tolerance * 100):
            status, message = "Optimal", "KKT conditions satisfied"
            break
        if stagnation >= opts.stagnation_limit:
            status = "Infeasible" if viol > opts.constraint_tolerance else "Feasible"
            message = "violation stagnated at maximum penalty"
            break
        if opts.time_limit is not None and \
                time.perf_counter() - t_start > opts.time_limit:
            status = "Feasible" if viol <= opts.constraint_tolerance else "MaxIterations"
            message = "time limit reached"
            break

    if status is None:
        if viol <= opts.constraint_tolerance:
            status, message = "Feasible", "feasible at iteration cap"
        else:
            status, message = "MaxIterations", "iteration cap with residual violation"

    c_e, c_i = scaled.constraints(y)
    stat, comp = lag_stat(y, c_e, c_i)
    kkt = {"stationarity": stat, "feasibility": _violation(c_e, c_i),
           "complementarity": comp}
    se, si = scaled._scales(m_e, m_i)
    multipliers = {"eq": lam_e / se if m_e else lam_e,
                   "ineq": lam_i / si if m_i else lam_i}
    return y, status, message, multipliers, kkt, outer, inner_total
