"""Independent reference solvers and problem generators shared across the tests."""

from itertools import combinations

import numpy as np
import pytest

from sewb.qp import QpProblem
from sewb.safety import AciResult, SafetyParams


def random_problem(rng, n=None, n_eq=None, n_in=None, diagonal=False, bounds=None):
    """Feasible strictly convex QP built around a known interior-ish point."""
    n = n or int(rng.integers(2, 7))
    n_eq = int(rng.integers(0, min(2, n - 1) + 1)) if n_eq is None else n_eq
    n_in = int(rng.integers(1, 7)) if n_in is None else n_in
    if diagonal:
        H = np.diag(rng.uniform(0.05, 5.0, n))
    else:
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 2.0
    x0 = rng.normal(size=n)
    A_eq = rng.normal(size=(n_eq, n)) if n_eq else None
    b_eq = A_eq @ x0 if n_eq else None
    A_in = rng.normal(size=(n_in, n))
    b_in = A_in @ x0 + rng.uniform(0.0, 1.0, n_in)
    lb = ub = None
    if bounds if bounds is not None else rng.random() < 0.5:
        lb = x0 - rng.uniform(0.1, 2.0, n)
        ub = x0 + rng.uniform(0.1, 2.0, n)
        # leave a few variables free, like the slack block of the controller
        free = rng.random(n) < 0.3
        lb[free], ub[free] = -np.inf, np.inf
    return QpProblem(H, g, A_eq, b_eq, A_in, b_in, lb, ub), x0


def as_rows(p: QpProblem):
    """All inequalities, bounds included, as ``G u <= h``."""
    G, h = [p.A_in], [p.b_in]
    eye = np.eye(p.size)
    fu, fl = np.isfinite(p.ub), np.isfinite(p.lb)
    G += [eye[fu], -eye[fl]]
    h += [p.ub[fu], -p.lb[fl]]
    G, h = np.vstack(G), np.concatenate(h)
    keep = np.isfinite(h)
    return G[keep], h[keep]


def enumerate_active_sets(p: QpProblem, tol=1e-9):
    """Exhaustive KKT enumeration; returns the minimizer or None when infeasible."""
    G, h = as_rows(p)
    n, n_eq = p.size, p.A_eq.shape[0]
    best, best_x = np.inf, None
    for size in range(0, min(len(h), n - n_eq) + 1):
        for S in combinations(range(len(h)), size):
            A = np.vstack([p.A_eq, G[list(S)]])
            b = np.concatenate([p.b_eq, h[list(S)]])
            k = A.shape[0]
            K = np.block([[p.H, A.T], [A, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-p.g, b]))
            except np.linalg.LinAlgError:
                continue
            if np.linalg.cond(K) > 1e12:
                continue
            x, lam = sol[:n], sol[n:]
            if np.any(lam[n_eq:] < -tol):
                continue
            if len(h) and np.any(G @ x - h > 1e-8):
                continue
            f = 0.5 * x @ p.H @ x + p.g @ x
            if f < best:
                best, best_x = f, x
    return best_x


def feasible_points(p: QpProblem, x0, rng, count=100, radius=1.0):
    """Random feasible points around ``x0``, moving only inside the equality null space."""
    if p.A_eq.shape[0]:
        _, s, Vt = np.linalg.svd(p.A_eq)
        N = Vt[len(s):].T
    else:
        N = np.eye(p.size)
    G, h = as_rows(p)
    pts = []
    tries = 0
    while len(pts) < count and tries < 100 * count:
        tries += 1
        x = x0 + N @ rng.normal(size=N.shape[1]) * rng.uniform(0, radius)
        if not len(h) or np.all(G @ x <= h):
            pts.append(x)
    return pts


def brute_base(res: AciResult, params: SafetyParams):
    """Both planar tangents, each objective written out term by term."""
    n = res.normal[:2] / np.linalg.norm(res.normal[:2])
    h = res.heading
    best, best_l = np.inf, None
    for l2 in (np.array([-n[1], n[0]]), np.array([n[1], -n[0]])):
        l = np.array([l2[0], l2[1], 0.0])
        s = 1.0 if h[0] * l[1] - h[1] * l[0] > 0 else -1.0
        m = -params.k_b1 * res.db_dphi * s
        for p in res.priors:
            m -= params.k_b2 * float(l @ p)
        m += params.k_b3 * abs(float(l @ res.velocity))
        # ties go to the counterclockwise tangent
        if m < best - 1e-12 or (abs(m - best) <= 1e-12 and s > 0):
            best, best_l = m, l
    return best_l, best


def brute_arm(res: AciResult, params: SafetyParams):
    """Scalar loop over the candidate set; first minimum wins."""
    best, idx = np.inf, -1
    for j, l in enumerate(res.candidates):
        m = -params.k_m1 * abs(l[2])
        for p in res.priors:
            m -= params.k_m2 * float(l @ p)
        m += params.k_m3 * abs(float(l @ res.velocity))
        if m < best - 1e-12:
            best, idx = m, j
    return idx, best


def check_aci(res: AciResult, params: SafetyParams):
    assert np.linalg.norm(res.l_star) == pytest.approx(1.0, abs=1e-9)
    assert abs(res.l_star @ res.normal) <= 1e-6 * max(1.0, np.linalg.norm(res.normal))
    if res.context == "base":
        l, m = brute_base(res, params)
        assert np.allclose(res.l_star, l, atol=1e-12) and res.objective == pytest.approx(m, abs=1e-12)
    else:
        n = res.normal / np.linalg.norm(res.normal)
        assert np.allclose(res.candidates @ n, 0.0, atol=1e-9)
        assert np.allclose(np.linalg.norm(res.candidates, axis=1), 1.0)
        idx, m = brute_arm(res, params)
        assert res.index == idx and res.objective == pytest.approx(m, abs=1e-12)
