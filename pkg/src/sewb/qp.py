"""Dense strictly convex QP solver.

    minimize    0.5 u^T H u + g^T u
    subject to  A_eq u  = b_eq
                A_in u <= b_in
                lb <= u <= ub

The method is the dual active-set algorithm of Goldfarb and Idnani: start
from the unconstrained minimizer, keep the iterate optimal for the current
working set, and add the most violated constraint until none is left.  The
problem is whitened with the Cholesky factor of ``H`` so every working-set
update is an orthogonal projection computed from a fresh QR factorization,
which is cheap at the sizes we care about (tens of variables and rows).

A warm start seeds the working set with the rows that were tight at a
previous solution; rows whose multipliers come out negative are dropped
before the regular iterations resume, so the result is the same optimum a
cold solve reaches.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.optimize import nnls

OPTIMAL = "optimal"
MAX_ITER = "max-iterations"
INFEASIBLE = "infeasible-detected"
# rows this close to tight at the previous solution seed the working set
_WARM_TOL = 1e-4


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        m = self.g.size
        if self.H.shape != (m, m):
            raise ValueError("H must be square and match g")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, m, "equality")
        self.A_in, self.b_in = _rows(self.A_in, self.b_in, m, "inequality")
        self.lb = np.full(m, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(m, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.shape != (m,) or self.ub.shape != (m,):
            raise ValueError("bounds must match the number of variables")
        finite = [self.H, self.g, self.A_eq, self.b_eq, self.A_in]
        if not all(np.all(np.isfinite(a)) for a in finite):
            raise ValueError("QP data must be finite")
        if np.any(np.isnan(self.b_in)) or np.any(self.b_in == -np.inf):
            raise ValueError("inequality bounds must be finite or +inf")

    @property
    def size(self) -> int:
        return self.g.size

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.H @ u + self.g @ u)


def _rows(A, b, m, what):
    if A is None:
        return np.zeros((0, m)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[1] != m or A.shape[0] != b.size:
        raise ValueError(f"{what} rows have inconsistent dimensions")
    return A, b


@dataclass
class QpSolution:
    u: np.ndarray
    status: str
    primal_eq: float
    primal_in: float
    dual: float
    complementarity: float
    iterations: int
    solve_time: float
    lam_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_lb: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_ub: np.ndarray = field(default_factory=lambda: np.zeros(0))
    conflict: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    @property
    def active_in(self) -> np.ndarray:
        return np.flatnonzero(self.lam_in > 0)


class _Stacked:
    """Inequalities in the whitened form ``C y >= d`` with unit-norm rows."""

    def __init__(self, p: QpProblem, L: np.ndarray):
        m = p.size
        rows, rhs, labels = [], [], []
        norms = np.linalg.norm(p.A_in, axis=1)
        for i, (a, b, nrm) in enumerate(zip(p.A_in, p.b_in, norms)):
            if b == np.inf:
                continue
            if nrm == 0.0:
                if b < 0:
                    raise _ZeroRowInfeasible(f"in:{i}")
                continue
            rows.append(-a / nrm)
            rhs.append(-b / nrm)
            labels.append(("in", i, nrm))
        eye = np.eye(m)
        for i in np.flatnonzero(np.isfinite(p.ub)):
            rows.append(-eye[i])
            rhs.append(-p.ub[i])
            labels.append(("ub", i, 1.0))
        for i in np.flatnonzero(np.isfinite(p.lb)):
            rows.append(eye[i])
            rhs.append(p.lb[i])
            labels.append(("lb", i, 1.0))
        self.C_x = np.array(rows).reshape(-1, m)  # original coordinates
        self.d = np.array(rhs, dtype=float)
        self.labels = labels
        # whitened normals: c^T x = c^T L^-T y = (L^-1 c)^T y
        self.C = solve_triangular(L, self.C_x.T, lower=True).T if len(rows) else self.C_x
        eq_norm = np.linalg.norm(p.A_eq, axis=1)
        eq_norm[eq_norm == 0] = 1.0
        self.E_x = p.A_eq / eq_norm[:, None]
        self.e = p.b_eq / eq_norm
        self.E = solve_triangular(L, self.E_x.T, lower=True).T if p.A_eq.shape[0] else self.E_x
        self.eq_norm = eq_norm


class _ZeroRowInfeasible(Exception):
    pass


def _label(lab) -> str:
    kind, i, _ = lab
    return f"{kind}:{i}"


def _working_qr(normals: np.ndarray):
    Q, R = np.linalg.qr(normals.T, mode="reduced")
    return Q, R


def _subproblem(E, e, C, d, active, gw):
    """Minimizer of 0.5|y|^2 + gw.y with equalities and active rows tight."""
    N = np.vstack((E, C[active])) if len(active) else E
    rhs = np.concatenate((e, d[active])) if len(active) else e
    if N.shape[0] == 0:
        return -gw, np.zeros(0)
    Q, R = _working_qr(N)
    if np.min(np.abs(np.diag(R))) < 1e-10 * max(1.0, np.abs(np.diag(R)).max()):
        raise np.linalg.LinAlgError("dependent working set")
    w = solve_triangular(R, rhs, trans="T") + Q.T @ gw
    u = solve_triangular(R, w)
    y = N.T @ u - gw
    return y, u


def solve(
    problem: QpProblem,
    tol: float = 1e-6,
    max_iter: int = 4000,
    warm_start: np.ndarray | None = None,
) -> QpSolution:
    t0 = time.perf_counter()
    p = problem
    m = p.size
    try:
        L = cho_factor(p.H, lower=True)[0]
        L = np.tril(L)
    except np.linalg.LinAlgError as exc:
        raise ValueError("H must be positive definite") from exc
    try:
        S = _Stacked(p, L)
    except _ZeroRowInfeasible as exc:
        return _finish(p, np.zeros(m), INFEASIBLE, 0, t0, None, None, None, conflict=[str(exc)])

    gw = solve_triangular(L, p.g, lower=True)
    E, e, C, d = S.E, S.e, S.C, S.d
    n_eq = E.shape[0]
    iterations = 1

    active: list[int] = []
    if warm_start is not None and C.shape[0]:
        x0 = np.asarray(warm_start, dtype=float)
        slack = S.C_x @ x0 - d
        guess = np.flatnonzero(np.abs(slack) <= _WARM_TOL)
        active = _independent(E, C, guess)
    try:
        y, u = _subproblem(E, e, C, d, active, gw)
    except np.linalg.LinAlgError:
        active = []
        y, u = _subproblem(E, e, C, d, active, gw)
    # drop guessed rows that would break dual feasibility
    while active and u[n_eq:].min() < 0:
        active.pop(int(np.argmin(u[n_eq:])))
        y, u = _subproblem(E, e, C, d, active, gw)
        iterations += 1
    if n_eq and np.abs(E @ y - e).max() > 1e3 * tol:
        return _finish(p, L_solve(L, y), INFEASIBLE, iterations, t0, S, active, u, conflict=["eq:dependent"])

    u_in = list(u[n_eq:])
    status = MAX_ITER
    conflict: list[str] = []
    while iterations < max_iter:
        s = C @ y - d
        if s.size == 0 or s.min() >= -tol:
            status = OPTIMAL
            break
        s[active] = np.inf
        pidx = int(np.argmin(s))
        npv = C[pidx]
        u_plus = 0.0
        while True:
            iterations += 1
            N = np.vstack((E, C[active])) if (n_eq or active) else np.zeros((0, m))
            if N.shape[0] >= m:
                z, r = np.zeros(m), np.linalg.lstsq(N.T, npv, rcond=None)[0]
            elif N.shape[0]:
                Q, R = _working_qr(N)
                z = npv - Q @ (Q.T @ npv)
                r = solve_triangular(R, Q.T @ npv)
            else:
                z, r = npv.copy(), np.zeros(0)
            r_in = r[n_eq:]
            t1, k = np.inf, -1
            for j, rj in enumerate(r_in):
                if rj > 1e-12:
                    ratio = u_in[j] / rj
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ npv)
            t2 = np.inf if zn <= 1e-12 * (npv @ npv) else -(npv @ y - d[pidx]) / zn
            t = min(t1, t2)
            if t == np.inf:
                status = INFEASIBLE
                conflict = [_label(S.labels[pidx])] + [
                    _label(S.labels[active[j]]) for j, rj in enumerate(r_in) if abs(rj) > 1e-12
                ] + [f"eq:{j}" for j, rj in enumerate(r[:n_eq]) if abs(rj) > 1e-12]
                break
            if t2 < np.inf:
                y = y + t * z
            u_in = [uj - t * rj for uj, rj in zip(u_in, r_in)]
            u_plus += t
            if t2 <= t1:
                active.append(pidx)
                u_in.append(u_plus)
                break
            active.pop(k)
            u_in.pop(k)
            if iterations >= max_iter:
                break
        if status == INFEASIBLE or (iterations >= max_iter and status != OPTIMAL):
            break

    lam = np.zeros(C.shape[0])
    for j, uj in zip(active, u_in):
        lam[j] = max(uj, 0.0)
    u_eq = _eq_multipliers(E, C, active, y, gw, lam)
    return _finish(p, L_solve(L, y), status, iterations, t0, S, active, lam, u_eq=u_eq, conflict=conflict)


def L_solve(L, y):
    return solve_triangular(L, y, lower=True, trans="T")


def _independent(E, C, guess) -> list[int]:
    """Greedy subset of ``guess`` whose whitened normals stay linearly independent of E and each other."""
    basis = []
    if E.shape[0]:
        Q, _ = np.linalg.qr(E.T, mode="reduced")
        basis = list(Q.T)
    keep = []
    for i in guess:
        v = C[i].copy()
        for b in basis:
            v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8 * max(np.linalg.norm(C[i]), 1.0):
            basis.append(v / nv)
            keep.append(int(i))
    return keep


def _eq_multipliers(E, C, active, y, gw, lam):
    if not E.shape[0]:
        return np.zeros(0)
    # stationarity: y + gw = E^T mu + C^T lam
    rhs = y + gw - C.T @ lam if C.shape[0] else y + gw
    mu, *_ = np.linalg.lstsq(E.T, rhs, rcond=None)
    return mu


def _finish(p, x, status, iterations, t0, S, active, lam, u_eq=None, conflict=()):
    m = p.size
    lam_in = np.zeros(p.A_in.shape[0])
    lam_lb = np.zeros(m)
    lam_ub = np.zeros(m)
    lam_eq = np.zeros(p.A_eq.shape[0])
    if S is not None and lam is not None and status != INFEASIBLE:
        for (kind, i, nrm), lj in zip(S.labels, lam):
            if kind == "in":
                lam_in[i] = lj / nrm
            elif kind == "ub":
                lam_ub[i] = lj
            else:
                lam_lb[i] = lj
        if u_eq is not None and u_eq.size:
            lam_eq = -u_eq / S.eq_norm
    sol = QpSolution(
        u=x,
        status=status,
        primal_eq=0.0,
        primal_in=0.0,
        dual=0.0,
        complementarity=0.0,
        iterations=int(iterations),
        solve_time=time.perf_counter() - t0,
        lam_eq=lam_eq,
        lam_in=lam_in,
        lam_lb=lam_lb,
        lam_ub=lam_ub,
        conflict=list(conflict),
    )
    res = _residuals_with(p, x, lam_eq, lam_in, lam_lb, lam_ub)
    sol.primal_eq, sol.primal_in, sol.dual, sol.complementarity = res
    return sol


def _violations(p: QpProblem, u: np.ndarray) -> tuple[float, float]:
    eq = float(np.abs(p.A_eq @ u - p.b_eq).max()) if p.A_eq.shape[0] else 0.0
    parts = [0.0]
    if p.A_in.shape[0]:
        parts.append(float(np.max(p.A_in @ u - p.b_in)))
    parts.append(float(np.max(u - p.ub)))
    parts.append(float(np.max(p.lb - u)))
    return eq, max(parts)


def _residuals_with(p, u, lam_eq, lam_in, lam_lb, lam_ub):
    eq, ineq = _violations(p, u)
    grad = p.H @ u + p.g + p.A_eq.T @ lam_eq + p.A_in.T @ lam_in + lam_ub - lam_lb
    dual = float(np.abs(grad).max())
    finite_in = np.isfinite(p.b_in)
    slack_in = np.where(finite_in, p.b_in - p.A_in @ u, 0.0) if p.A_in.shape[0] else np.zeros(0)
    comp = [0.0]
    if slack_in.size:
        comp.append(float(np.abs(lam_in * slack_in).max()))
    fub, flb = np.isfinite(p.ub), np.isfinite(p.lb)
    if fub.any():
        comp.append(float(np.abs(lam_ub[fub] * (p.ub[fub] - u[fub])).max()))
    if flb.any():
        comp.append(float(np.abs(lam_lb[flb] * (u[flb] - p.lb[flb])).max()))
    return eq, ineq, dual, max(comp)


def kkt_residuals(problem: QpProblem, u: np.ndarray, active_tol: float = 1e-6) -> tuple[float, float, float]:
    """Primal equality violation, inequality violation and stationarity residual at ``u``.

    Multipliers are recovered by nonnegative least squares over the rows that
    are tight within ``active_tol``; equality multipliers are free.
    """
    p = problem
    u = np.asarray(u, dtype=float)
    eq, ineq = _violations(p, u)
    m = p.size
    cols = [p.A_eq.T, -p.A_eq.T]
    if p.A_in.shape[0]:
        tight = np.isfinite(p.b_in) & (p.A_in @ u - p.b_in >= -active_tol)
        cols.append(p.A_in[tight].T)
    eye = np.eye(m)
    cols.append(eye[:, np.isfinite(p.ub) & (u - p.ub >= -active_tol)])
    cols.append(-eye[:, np.isfinite(p.lb) & (p.lb - u >= -active_tol)])
    G = np.hstack(cols) if cols else np.zeros((m, 0))
    grad = p.H @ u + p.g
    if G.shape[1] == 0:
        return eq, ineq, float(np.abs(grad).max())
    lam, _ = nnls(G, -grad)
    dual = float(np.abs(grad + G @ lam).max())
    return eq, ineq, dual
