"""Dense SQP solver for small constrained nonlinear programs.

Layout: minimize f(z) subject to c_eq(z) = 0, c_in(z) <= 0 and box bounds.
Each iteration builds a convex QP from a damped-BFGS Lagrangian Hessian and
linearized constraints, solves it with a dual active-set method
(Goldfarb-Idnani flavour: start at the unconstrained optimum, add violated
constraints one at a time, drop blocking ones), and globalizes with an
l1-merit backtracking line search. Infeasible subproblems are retried in an
elastic form where a scalar relaxation variable scales the constraint
right-hand sides.

All randomness (multistart sampling) flows through one seeded generator, so
results are reproducible bit for bit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import EvaluatorFailure, InfeasibleSubproblem

logger = logging.getLogger(__name__)


@dataclass
class NlpSpec:
    """Problem description handed to the solver.

    Constraint convention: equalities c_eq(z) = 0, inequalities c_in(z) <= 0.
    ``linear_eq`` / ``linear_in`` flag rows whose Jacobians are constant; the
    solver evaluates those rows' derivatives once and reuses them.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    jacobians: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    linear_eq: np.ndarray | None = None
    linear_in: np.ndarray | None = None
    # Optional closed-form block minimizer (e.g. exact slack values); applied
    # after each accepted step and kept only when it does not worsen the merit.
    repair: Callable[[np.ndarray], np.ndarray] | None = None
    # Optional terminal improvement (e.g. rounding convex-combination weights
    # onto the best vertex); applied once at exit, kept only when it does not
    # worsen (violation, objective).
    finalize: Callable[[np.ndarray], np.ndarray] | None = None
    # Known lower bound on the objective. A feasible point attaining it is a
    # certified global optimum; the solver stops there immediately.
    objective_lower_bound: float | None = None
    # Typical magnitude per variable; the initial (and reset) quasi-Newton
    # Hessian is diag(scales**-2), so early steps move each variable on its
    # own scale instead of one unit.
    scales: np.ndarray | None = None


@dataclass
class SolverOptions:
    max_iterations: int = 500
    kkt_tolerance: float = 1e-6
    constraint_tolerance: float = 1e-8
    multistart: int = 1
    seed: int = 0
    qp_iteration_factor: int = 20
    # Inequality rows with values below -working_set_margin are left out of
    # the QP for that iteration (their multipliers are zero anyway); None
    # passes every row. Feasibility and KKT checks always use all rows.
    working_set_margin: float | None = None
    # Optional shortcut for multistart: stop launching new starts once a
    # converged result reaches this objective value (None = run all starts).
    early_stop_objective: float | None = None

    def __post_init__(self):
        if self.kkt_tolerance <= 0 or self.constraint_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")


@dataclass
class SolverResult:
    z: np.ndarray
    objective: float
    kkt_residual: float
    constraint_violation: float
    iterations: int
    status: str  # "converged" | "max_iterations" | "stalled"
    start_index: int = 0
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class QpResult:
    step: np.ndarray
    eq_multipliers: np.ndarray
    in_multipliers: np.ndarray
    lower_multipliers: np.ndarray
    upper_multipliers: np.ndarray


# ---------------------------------------------------------------------------
# dual active-set QP
# ---------------------------------------------------------------------------

class _ActiveSet:
    """Active constraint bookkeeping with incremental Cholesky of N H^-1 N^T.

    Buffers are preallocated and grown geometrically; additions write in
    place instead of reallocating the whole working matrices.
    """

    def __init__(self, h_factor, n, capacity: int = 64):
        self.h_factor = h_factor
        self.n = n
        self.size = 0
        self._cap = capacity
        self._normals = np.empty((capacity, n))  # active ">=" rows
        self._b = np.empty((n, capacity))  # H^-1 N^T, one column per member
        self._chol = np.zeros((capacity, capacity))  # upper factor of N H^-1 N^T
        self._mult = np.empty(capacity)
        self.indices: list = []
        self.is_eq: list[bool] = []

    @property
    def normals(self):
        return self._normals[:self.size]

    @property
    def hinv_nt(self):
        return self._b[:, :self.size]

    @property
    def chol(self):
        return self._chol[:self.size, :self.size]

    @property
    def multipliers(self):
        return self._mult[:self.size]

    @multipliers.setter
    def multipliers(self, values):
        self._mult[:self.size] = values

    def _grow(self, need):
        if need <= self._cap:
            return
        cap = max(2 * self._cap, need)
        for name, shape in (("_normals", (cap, self.n)), ("_b", (self.n, cap)),
                            ("_mult", (cap,))):
            fresh = np.empty(shape)
            old = getattr(self, name)
            if name == "_b":
                fresh[:, :self.size] = old[:, :self.size]
            elif name == "_mult":
                fresh[:self.size] = old[:self.size]
            else:
                fresh[:self.size] = old[:self.size]
            setattr(self, name, fresh)
        fresh = np.zeros((cap, cap))
        fresh[:self.size, :self.size] = self._chol[:self.size, :self.size]
        self._chol = fresh
        self._cap = cap

    def try_add(self, index, normal, is_eq, multiplier) -> bool:
        y = scipy.linalg.cho_solve(self.h_factor, normal)
        q = self.size
        self._grow(q + 1)
        if q == 0:
            rho_sq = float(normal @ y)
            if rho_sq <= 1e-13 * max(1.0, float(normal @ normal)):
                return False
            self._chol[0, 0] = math.sqrt(rho_sq)
        else:
            s_col = self.normals @ y
            r = scipy.linalg.solve_triangular(self.chol, s_col, trans=1)
            rho_sq = float(normal @ y) - float(r @ r)
            if rho_sq <= 1e-13 * max(1.0, float(normal @ normal)):
                return False  # linearly dependent on the active set
            self._chol[:q, q] = r
            self._chol[q, :q] = 0.0
            self._chol[q, q] = math.sqrt(rho_sq)
        self._normals[q] = normal
        self._b[:, q] = y
        self._mult[q] = multiplier
        self.indices.append(index)
        self.is_eq.append(is_eq)
        self.size = q + 1
        return True

    def drop(self, position):
        q = self.size
        reduced = _chol_delete(self.chol.copy(), position)
        self._normals[position:q - 1] = self._normals[position + 1:q]
        self._b[:, position:q - 1] = self._b[:, position + 1:q]
        self._mult[position:q - 1] = self._mult[position + 1:q]
        del self.indices[position]
        del self.is_eq[position]
        self.size = q - 1
        if not self.size:
            return
        if reduced is not None:
            self._chol[:self.size, :self.size] = reduced
            return
        # fall back to a fresh factorization, ridged if necessary
        s = self.normals @ self.hinv_nt
        s = 0.5 * (s + s.T)
        ridge = 0.0
        scale = max(float(np.trace(s)) / s.shape[0], 1.0)
        for _ in range(40):
            try:
                self._chol[:self.size, :self.size] = scipy.linalg.cholesky(
                    s + ridge * np.eye(s.shape[0]), lower=False)
                return
            except np.linalg.LinAlgError:
                ridge = max(2.0 * ridge, 1e-14 * scale)
        raise InfeasibleSubproblem("active set lost positive definiteness")

    def directions(self, normal):
        """Primal direction z and dual direction r for a candidate normal."""
        y = scipy.linalg.cho_solve(self.h_factor, normal)
        if self.size == 0:
            return y, np.empty(0)
        s_col = self.normals @ y
        r = scipy.linalg.cho_solve((self.chol, False), s_col)
        z = y - self.hinv_nt @ r
        return z, r

    def batch_init_equalities(self, a_eq, b_eq, d):
        """Install all equality rows at once (one blocked solve each).

        Returns the equality-feasible minimizer; raises InfeasibleSubproblem
        when the rows are linearly dependent. Must be called on an empty set.
        """
        m = a_eq.shape[0]
        b_block = scipy.linalg.cho_solve(self.h_factor, a_eq.T)
        s = a_eq @ b_block
        s = 0.5 * (s + s.T)
        try:
            chol = scipy.linalg.cholesky(s, lower=False)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleSubproblem("dependent equality rows") from exc
        lam = scipy.linalg.cho_solve((chol, False), b_eq - a_eq @ d)
        d = d + b_block @ lam
        self._grow(m)
        self._normals[:m] = a_eq
        self._b[:, :m] = b_block
        self._chol[:m, :m] = chol
        self._mult[:m] = lam
        self.indices = [("eq", i, 1.0) for i in range(m)]
        self.is_eq = [True] * m
        self.size = m
        return d


def _chol_delete(r: np.ndarray, j: int) -> np.ndarray | None:
    """Upper Cholesky factor of S with row/column j removed, via Givens.

    O(q^2) instead of refactorizing; returns None when the reduced factor is
    numerically rank deficient (caller refactorizes with a ridge).
    """
    r = np.delete(r, j, axis=1)
    q = r.shape[1]
    for k in range(j, q):
        a, b = r[k, k], r[k + 1, k]
        rad = math.hypot(a, b)
        if rad <= 0.0:
            return None
        c, s = a / rad, b / rad
        block = np.array([[c, s], [-s, c]]) @ r[k:k + 2, k:]
        r[k:k + 2, k:] = block
        if r[k, k] < 0.0:  # keep a positive diagonal
            r[k, k:] = -r[k, k:]
    out = r[:q, :]
    if q and np.min(np.diag(out)) <= 1e-150:
        return None
    return out


def _ensure_spd(h: np.ndarray, floor: float = 1e-10):
    """Cholesky factor of H, ridging it up if needed; returns (factor, H_used)."""
    h = 0.5 * (h + h.T)
    ridge = 0.0
    scale = max(float(np.max(np.abs(h))), 1.0)
    for _ in range(60):
        try:
            factor = scipy.linalg.cho_factor(h + ridge * np.eye(h.shape[0]),
                                             lower=False)
            if ridge:
                h = h + ridge * np.eye(h.shape[0])
            return factor, h
        except np.linalg.LinAlgError:
            ridge = max(2.0 * ridge, floor, 1e-12 * scale)
    raise np.linalg.LinAlgError("could not regularize Hessian")


def solve_qp(h: np.ndarray, g: np.ndarray,
             a_eq: np.ndarray | None = None, b_eq: np.ndarray | None = None,
             a_in: np.ndarray | None = None, b_in: np.ndarray | None = None,
             lower: np.ndarray | None = None, upper: np.ndarray | None = None,
             max_iterations: int | None = None) -> QpResult:
    """Minimize 0.5 d'Hd + g'd s.t. A_eq d = b_eq, A_in d <= b_in, lower <= d <= upper.

    H must be positive definite (a tiny ridge is added when the factorization
    says otherwise). Raises InfeasibleSubproblem when the constraints admit no
    point.
    """
    n = g.shape[0]
    a_eq = np.empty((0, n)) if a_eq is None else np.atleast_2d(a_eq)
    b_eq = np.empty(0) if b_eq is None else np.atleast_1d(b_eq)
    a_in = np.empty((0, n)) if a_in is None else np.atleast_2d(a_in)
    b_in = np.empty(0) if b_in is None else np.atleast_1d(b_in)

    # Unified ">=" convention: general inequalities become -A d >= -b; bound
    # rows are kept implicit (their residuals are plain vector loads).
    ge_normals = -a_in
    ge_rhs = -b_in
    n_eq, n_in = a_eq.shape[0], a_in.shape[0]
    lo_vec = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    hi_vec = np.full(n, np.inf) if upper is None else np.asarray(upper, float)

    factor, _ = _ensure_spd(h)
    d = -scipy.linalg.cho_solve(factor, g)
    active = _ActiveSet(factor, n)

    finite_b = [np.abs(b_eq[np.isfinite(b_eq)]), np.abs(ge_rhs),
                np.abs(lo_vec[np.isfinite(lo_vec)]),
                np.abs(hi_vec[np.isfinite(hi_vec)])]
    scale = max([1.0] + [float(np.max(v)) for v in finite_b if v.size])
    tol = 1e-10 * scale
    limit = max_iterations or max(200, 20 * (n + n_eq + 1))
    iterations = 0

    def bound_normal(idx):
        e = np.zeros(n)
        e[idx % n] = 1.0 if idx < n else -1.0
        return e

    def most_violated():
        """(violation, tag, normal, rhs) across general rows and bounds."""
        best, entry = tol, None
        if ge_rhs.size:
            resid = ge_rhs - ge_normals @ d
            j = int(np.argmax(resid))
            if resid[j] > best:
                best, entry = resid[j], (("in", j), ge_normals[j],
                                         float(ge_rhs[j]))
        lo_resid = lo_vec - d
        j = int(np.argmax(lo_resid))
        if lo_resid[j] > best:
            best, entry = lo_resid[j], (("in", n_in + j), bound_normal(j),
                                        float(lo_vec[j]))
        hi_resid = d - hi_vec
        j = int(np.argmax(hi_resid))
        if hi_resid[j] > best:
            best, entry = hi_resid[j], (("in", n_in + n + j),
                                        bound_normal(n + j), float(-hi_vec[j]))
        return entry

    def step_to(index, normal, rhs, is_eq):
        nonlocal d, iterations
        u_plus = 0.0  # multiplier of the incoming constraint, built up stepwise
        while True:
            iterations += 1
            if iterations > limit:
                raise InfeasibleSubproblem("active-set iteration limit")
            slack = rhs - float(normal @ d)
            if slack <= tol:
                if u_plus > 0.0 and not active.try_add(index, normal, is_eq, u_plus):
                    raise InfeasibleSubproblem("degenerate active set")
                return
            z, r = active.directions(normal)
            z_dot = float(normal @ z)
            # Dual blocking test over inequality members only.
            t1, block = math.inf, -1
            for j in range(active.size):
                if active.is_eq[j] or r[j] <= 1e-12:
                    continue
                ratio = active.multipliers[j] / r[j]
                if ratio < t1:
                    t1, block = ratio, j
            t2 = slack / z_dot if z_dot > 1e-12 else math.inf
            t = min(t1, t2)
            if not math.isfinite(t):
                raise InfeasibleSubproblem("no feasible point for QP constraints")
            d = d + t * z
            u_plus += t
            if active.size:
                active.multipliers = active.multipliers - t * r
            if t2 <= t1:
                if not active.try_add(index, normal, is_eq, u_plus):
                    raise InfeasibleSubproblem("degenerate active set")
                return
            active.drop(block)

    # Phase 0: install all equalities in one blocked solve; fall back to the
    # sequential path if the rows turn out dependent.
    if n_eq:
        try:
            d = active.batch_init_equalities(a_eq, b_eq, d)
        except InfeasibleSubproblem:
            active = _ActiveSet(factor, n)
            d = -scipy.linalg.cho_solve(factor, g)
            for i in range(n_eq):
                normal, rhs, sign = a_eq[i], float(b_eq[i]), 1.0
                if float(normal @ d) > rhs:
                    normal, rhs, sign = -normal, -rhs, -1.0
                step_to(("eq", i, sign), normal, rhs, True)

    # Main loop: chase the most violated inequality or bound.
    while True:
        iterations += 1
        if iterations > limit:
            raise InfeasibleSubproblem("active-set iteration limit")
        entry = most_violated()
        if entry is None:
            break
        tag, normal, rhs = entry
        step_to(tag, normal, rhs, False)

    lam_eq = np.zeros(n_eq)
    lam_in = np.zeros(n_in)
    lam_lo = np.zeros(n)
    lam_hi = np.zeros(n)
    for j in range(active.size):
        tag = active.indices[j]
        mult = active.multipliers[j]
        if tag[0] == "eq":
            # Multiplier of A_eq d - b_eq = 0; undo the feasibility sign flip.
            lam_eq[tag[1]] = -tag[2] * mult
        else:
            idx = tag[1]
            if idx < n_in:
                lam_in[idx] = mult
            elif idx < n_in + n:
                lam_lo[idx - n_in] = mult
            else:
                lam_hi[idx - n_in - n] = mult
    return QpResult(d, lam_eq, lam_in, lam_lo, lam_hi)


# ---------------------------------------------------------------------------
# SQP driver
# ---------------------------------------------------------------------------

def _merit(f, c_eq, c_in, mu):
    return f + mu * (np.sum(np.abs(c_eq)) + np.sum(np.maximum(c_in, 0.0)))


def _violation(c_eq, c_in):
    v = 0.0
    if c_eq.size:
        v = float(np.max(np.abs(c_eq)))
    if c_in.size:
        v = max(v, float(np.max(np.maximum(c_in, 0.0))))
    return v


class _Evaluator:
    """Wraps the user callbacks: failure capture plus linear-row reuse."""

    def __init__(self, spec: NlpSpec):
        self.spec = spec
        self._jac_linear = None

    def _call(self, fn, z, what):
        try:
            return fn(z)
        except Exception as exc:  # noqa: BLE001 - deliberate broad capture
            logger.error("%s evaluation failed at iterate %s", what, z)
            raise EvaluatorFailure(f"{what} evaluation failed: {exc}",
                                   iterate=z) from exc

    def value(self, z):
        f = float(self._call(self.spec.objective, z, "objective"))
        c_eq, c_in = self._call(self.spec.constraints, z, "constraints")
        return f, np.asarray(c_eq, float), np.asarray(c_in, float)

    def derivatives(self, z):
        g = np.asarray(self._call(self.spec.gradient, z, "gradient"), float)
        j_eq, j_in = self._call(self.spec.jacobians, z, "jacobians")
        j_eq = np.asarray(j_eq, float)
        j_in = np.asarray(j_in, float)
        if self._jac_linear is None:
            self._jac_linear = (j_eq.copy(), j_in.copy())
        else:
            if self.spec.linear_eq is not None and j_eq.size:
                j_eq[self.spec.linear_eq] = self._jac_linear[0][self.spec.linear_eq]
            if self.spec.linear_in is not None and j_in.size:
                j_in[self.spec.linear_in] = self._jac_linear[1][self.spec.linear_in]
        return g, j_eq, j_in


def _kkt_residual(z, g, j_eq, j_in, c_eq, c_in, lam_eq, lam_in, lower, upper):
    grad_l = g.copy()
    if lam_eq.size:
        grad_l += j_eq.T @ lam_eq
    if lam_in.size:
        grad_l += j_in.T @ lam_in
    # Projected-gradient stationarity absorbs the bound multipliers.
    projected = z - grad_l
    if lower is not None:
        projected = np.maximum(projected, lower)
    if upper is not None:
        projected = np.minimum(projected, upper)
    stat = float(np.max(np.abs(projected - z))) if z.size else 0.0
    comp = float(np.max(np.abs(lam_in * c_in))) if c_in.size else 0.0
    return max(stat, comp)


def _elastic_qp(h, g, j_eq, c_eq, j_in, c_in, lo_step, hi_step, qp_limit):
    """Relaxed QP: scale constraint right-hand sides by xi in [0, 1].

    Variable vector (d, xi); xi = 0 is always feasible, the penalty pushes xi
    toward 1 (the original subproblem).
    """
    n = g.shape[0]
    rho = 1e4 * max(1.0, float(np.max(np.abs(g))))
    h_aug = np.zeros((n + 1, n + 1))
    h_aug[:n, :n] = h
    h_aug[n, n] = 2.0 * rho
    g_aug = np.append(g, -2.0 * rho)  # from rho * (1 - xi)^2
    a_eq = np.hstack([j_eq, c_eq[:, None]]) if c_eq.size else None
    b_eq = np.zeros(c_eq.shape[0]) if c_eq.size else None
    a_in = np.hstack([j_in, np.maximum(c_in, 0.0)[:, None]]) if c_in.size else None
    b_in = -np.minimum(c_in, 0.0) if c_in.size else None
    lo = np.append(lo_step, 0.0) if lo_step is not None else None
    hi = np.append(hi_step, 1.0) if hi_step is not None else None
    if lo is None or hi is None:
        lo = np.append(np.full(n, -np.inf), 0.0)
        hi = np.append(np.full(n, np.inf), 1.0)
    result = solve_qp(h_aug, g_aug, a_eq, b_eq, a_in, b_in, lo, hi,
                      max_iterations=qp_limit)
    return QpResult(result.step[:n], result.eq_multipliers,
                    result.in_multipliers, result.lower_multipliers[:n],
                    result.upper_multipliers[:n])


def solve(spec: NlpSpec, options: SolverOptions, z0) -> SolverResult:
    """Run the SQP iteration from z0 (projected into the bounds first)."""
    ev = _Evaluator(spec)
    z = np.asarray(z0, float).copy()
    if spec.lower is not None:
        z = np.maximum(z, spec.lower)
    if spec.upper is not None:
        z = np.minimum(z, spec.upper)

    f, c_eq, c_in = ev.value(z)
    g, j_eq, j_in = ev.derivatives(z)
    n = spec.n
    if spec.scales is not None:
        h0 = np.diag(np.asarray(spec.scales, float) ** -2.0)
    else:
        h0 = np.eye(n)
    h = h0.copy()
    lam_eq = np.zeros(c_eq.shape[0])
    lam_in = np.zeros(c_in.shape[0])
    mu = 1.0
    qp_limit = max(200, options.qp_iteration_factor *
                   (n + c_eq.shape[0] + c_in.shape[0] // 4 + 1))
    status = "max_iterations"
    message = ""
    iteration = 0

    def clip_into_bounds(vec):
        if spec.lower is not None:
            vec = np.maximum(vec, spec.lower)
        if spec.upper is not None:
            vec = np.minimum(vec, spec.upper)
        return vec

    def certified_optimal(value, c_eq_val, c_in_val):
        return (spec.objective_lower_bound is not None
                and value <= spec.objective_lower_bound + 1e-12
                and _violation(c_eq_val, c_in_val)
                <= options.constraint_tolerance)

    for iteration in range(1, options.max_iterations + 1):
        violation = _violation(c_eq, c_in)
        kkt = _kkt_residual(z, g, j_eq, j_in, c_eq, c_in, lam_eq, lam_in,
                            spec.lower, spec.upper)
        if kkt <= options.kkt_tolerance and violation <= options.constraint_tolerance:
            status = "converged"
            break
        if certified_optimal(f, c_eq, c_in):
            status = "converged"
            break
        if spec.finalize is not None and spec.objective_lower_bound is not None:
            # A feasible finalized candidate at the lower bound ends the run.
            z_fin = clip_into_bounds(spec.finalize(z.copy()))
            f_fin, c_eq_fin, c_in_fin = ev.value(z_fin)
            if certified_optimal(f_fin, c_eq_fin, c_in_fin):
                z, f, c_eq, c_in = z_fin, f_fin, c_eq_fin, c_in_fin
                g, j_eq, j_in = ev.derivatives(z)
                status = "converged"
                break

        lo_step = spec.lower - z if spec.lower is not None else None
        hi_step = spec.upper - z if spec.upper is not None else None
        # Working set: rows far on the feasible side contribute nothing to
        # the step; leaving them out keeps the active-set solve small.
        if options.working_set_margin is not None and c_in.size:
            ws = c_in >= -options.working_set_margin
        else:
            ws = slice(None)
        c_ws, j_ws = c_in[ws], j_in[ws]

        accepted = False
        fresh_hessian = False
        while True:  # at most two passes: current Hessian, then a reset one
            try:
                qp = solve_qp(h, g, j_eq if c_eq.size else None,
                              -c_eq if c_eq.size else None,
                              j_ws if c_ws.size else None,
                              -c_ws if c_ws.size else None,
                              lo_step, hi_step, max_iterations=qp_limit)
            except (InfeasibleSubproblem, np.linalg.LinAlgError):
                logger.debug("elastic fallback at iteration %d", iteration)
                try:
                    qp = _elastic_qp(h, g, j_eq, c_eq, j_ws, c_ws,
                                     lo_step, hi_step, qp_limit)
                except (InfeasibleSubproblem, np.linalg.LinAlgError):
                    status = "stalled"
                    message = "QP subproblem failed even in elastic mode"
                    break

            d = qp.step
            lam_eq = qp.eq_multipliers
            lam_in = np.zeros(c_in.shape[0])
            lam_in[ws] = qp.in_multipliers
            step_norm = float(np.max(np.abs(d))) if d.size else 0.0
            if step_norm <= 1e-14 * max(1.0, float(np.max(np.abs(z)))):
                status = "converged" if violation <= options.constraint_tolerance \
                    else "stalled"
                message = "zero step"
                break

            lam_norm = max(
                float(np.max(np.abs(lam_eq))) if lam_eq.size else 0.0,
                float(np.max(np.abs(lam_in))) if lam_in.size else 0.0)
            mu_needed = 1.5 * lam_norm + 1e-2
            if mu < mu_needed:
                mu = mu_needed
            elif mu > 4.0 * mu_needed:  # let an inflated penalty come down
                mu = 2.0 * mu_needed

            phi0 = _merit(f, c_eq, c_in, mu)
            directional = float(g @ d) - mu * (np.sum(np.abs(c_eq)) +
                                               np.sum(np.maximum(c_in, 0.0)))
            alpha = 1.0
            while alpha >= 1e-12:
                z_try = z + alpha * d
                # The repaired candidate doubles as a second-order correction:
                # auxiliary rows are exactly feasible there, so constraint
                # curvature cannot veto an otherwise good step (Maratos).
                candidates = ([spec.repair(z_try.copy()), z_try]
                              if spec.repair is not None else [z_try])
                for z_cand in candidates:
                    f_cand, c_eq_cand, c_in_cand = ev.value(z_cand)
                    phi_cand = _merit(f_cand, c_eq_cand, c_in_cand, mu)
                    if phi_cand <= phi0 + 1e-4 * alpha * directional \
                            + 1e-12 * abs(phi0):
                        accepted = True
                        z_new, f_new = z_cand, f_cand
                        c_eq_new, c_in_new = c_eq_cand, c_in_cand
                        break
                if accepted:
                    break
                alpha *= 0.5
            if accepted or fresh_hessian:
                break
            # Accumulated quasi-Newton curvature can poison the step long
            # before the iterates are optimal; retry once from scratch.
            logger.debug("hessian reset at iteration %d", iteration)
            h = h0.copy()
            fresh_hessian = True

        if status in ("converged", "stalled"):
            break
        if not accepted:
            status = "stalled"
            message = "line search failed"
            break

        g_new, j_eq_new, j_in_new = ev.derivatives(z_new)

        # Damped BFGS on the Lagrangian (Powell's modification keeps H SPD).
        s = z_new - z
        grad_l_old = g + (j_eq.T @ lam_eq if lam_eq.size else 0.0) \
            + (j_in.T @ lam_in if lam_in.size else 0.0)
        grad_l_new = g_new + (j_eq_new.T @ lam_eq if lam_eq.size else 0.0) \
            + (j_in_new.T @ lam_in if lam_in.size else 0.0)
        y = grad_l_new - grad_l_old
        hs = h @ s
        shs = float(s @ hs)
        sy = float(s @ y)
        if shs > 1e-14:
            if sy < 0.2 * shs:
                theta = 0.8 * shs / (shs - sy)
                y = theta * y + (1.0 - theta) * hs
                sy = float(s @ y)
            if sy > 1e-14:
                h = h - np.outer(hs, hs) / shs + np.outer(y, y) / sy
                h = 0.5 * (h + h.T)

        z, f, c_eq, c_in = z_new, f_new, c_eq_new, c_in_new
        g, j_eq, j_in = g_new, j_eq_new, j_in_new

    # The QP keeps bound residuals only to its own tolerance; snap exactly.
    z_final = clip_into_bounds(z)
    changed = not np.array_equal(z_final, z)
    if changed:
        f, c_eq, c_in = ev.value(z_final)
    if spec.finalize is not None:
        z_candidate = clip_into_bounds(spec.finalize(z_final.copy()))
        f_cand, c_eq_cand, c_in_cand = ev.value(z_candidate)
        if (_violation(c_eq_cand, c_in_cand), f_cand) <= \
                (_violation(c_eq, c_in), f):
            z_final = z_candidate
            f, c_eq, c_in = f_cand, c_eq_cand, c_in_cand
            changed = True
    if changed:
        z = z_final
        g, j_eq, j_in = ev.derivatives(z)
    violation = _violation(c_eq, c_in)
    # Any multiplier vector certifies KKT; try the QP estimate and zero.
    kkt = min(
        _kkt_residual(z, g, j_eq, j_in, c_eq, c_in, lam_eq, lam_in,
                      spec.lower, spec.upper),
        _kkt_residual(z, g, j_eq, j_in, c_eq, c_in,
                      np.zeros(lam_eq.shape), np.zeros(lam_in.shape),
                      spec.lower, spec.upper))
    if (kkt <= options.kkt_tolerance
            and violation <= options.constraint_tolerance) \
            or certified_optimal(f, c_eq, c_in):
        status = "converged"
    elif status == "converged":
        status = "stalled"
    return SolverResult(z=z, objective=f, kkt_residual=kkt,
                        constraint_violation=violation, iterations=iteration,
                        status=status, message=message)


def multistart(spec: NlpSpec, options: SolverOptions,
               sampler: Callable[[int, np.random.Generator], np.ndarray]
               ) -> SolverResult:
    """Independent solves from sampled starts; best result wins.

    Selection is by value, never by completion order: converged results beat
    non-converged ones, lower objective beats higher, ties go to the smaller
    start index. With ``early_stop_objective`` set, later starts are skipped
    once a converged result reaches that value (still deterministic because
    starts run in index order).
    """
    rng = np.random.default_rng(options.seed)
    results: list[SolverResult] = []
    for index in range(options.multistart):
        z0 = sampler(index, rng)
        result = solve(spec, options, z0)
        result.start_index = index
        results.append(result)
        logger.debug("start %d: status=%s objective=%.6g", index,
                     result.status, result.objective)
        if (options.early_stop_objective is not None and result.converged
                and result.objective <= options.early_stop_objective):
            break

    converged = [r for r in results if r.converged]
    pool = converged if converged else results
    if converged:
        return min(pool, key=lambda r: (r.objective, r.start_index))
    return min(pool, key=lambda r: (r.constraint_violation, r.objective,
                                    r.start_index))
