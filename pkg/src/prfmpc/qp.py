"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

    minimize    1/2 x^T P x + q^T x
    subject to  A x = b,  G x <= h

The method starts from the unconstrained minimiser and adds violated
constraints one at a time while keeping dual feasibility, so it terminates
either at the optimum or with a certificate that some violated constraint
cannot be reached (infeasible). The active-set QR factorisation is recomputed
from scratch at every iteration; problems here have at most a few dozen
variables, so the simplicity wins over incremental Givens updates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular


class QPSolverError(RuntimeError):
    pass


@dataclass
class QPResult:
    status: str  # "optimal" | "infeasible"
    x: np.ndarray | None
    objective: float
    z: np.ndarray | None  # inequality multipliers (>= 0)
    y: np.ndarray | None  # equality multipliers
    iterations: int


def _normalise(M, v, tol):
    norms = np.linalg.norm(M, axis=1)
    keep = norms > tol
    Mn = np.zeros_like(M)
    vn = np.zeros_like(v)
    Mn[keep] = M[keep] / norms[keep, None]
    vn[keep] = v[keep] / norms[keep]
    return Mn, vn, norms, keep


def solve_qp(P, q, G=None, h=None, A=None, b=None, tol=1e-9, max_iter=None) -> QPResult:
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    n = q.size
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
    n_eq, n_in = A.shape[0], G.shape[0]
    if max_iter is None:
        max_iter = 10 * (n + n_eq + n_in) + 50

    try:
        chol = cho_factor(P, lower=True)
    except np.linalg.LinAlgError as exc:
        raise QPSolverError("Hessian is not positive definite") from exc
    L = np.tril(chol[0])
    Linv = solve_triangular(L, np.eye(n), lower=True)

    # rows as n_i^T x >= b_i
    Ge, be, _, keep_e = _normalise(A, b, 1e-14)
    Gi, hi, norms_i, keep_i = _normalise(G, h, 1e-14)
    if np.any(~keep_i & (h < -tol)) or np.any(~keep_e & (np.abs(b) > tol)):
        return QPResult("infeasible", None, np.nan, None, None, 0)
    N = np.vstack([Ge, -Gi])
    rhs = np.concatenate([be, -hi])
    is_eq = np.arange(n_eq + n_in) < n_eq
    usable = np.concatenate([keep_e, keep_i])

    x = -cho_solve(chol, q)
    active: list[int] = []
    sign: dict[int, float] = {}
    u = np.zeros(0)
    it = 0

    def directions(normal):
        if active:
            B = Linv @ (N[active] * np.array([sign[j] for j in active])[:, None]).T
            Q, R = np.linalg.qr(B, mode="complete")
            k = len(active)
            d = Q.T @ (Linv @ normal)
            r = solve_triangular(R[:k, :k], d[:k])
            d2 = d[k:]
            z = Linv.T @ (Q[:, k:] @ d2)
            dnorm = np.linalg.norm(d)
        else:
            d2 = Linv @ normal
            r = np.zeros(0)
            z = Linv.T @ d2
            dnorm = np.linalg.norm(d2)
        in_span = np.linalg.norm(d2) <= 1e-11 * max(dnorm, 1e-300)
        return z, r, in_span

    def add(p, s_sign):
        """Drive constraint p to activity; returns False if impossible."""
        nonlocal x, u, it
        normal = s_sign * N[p]
        target = s_sign * rhs[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > max_iter:
                raise QPSolverError(f"no convergence within {max_iter} iterations")
            z, r, in_span = directions(normal)
            t1, drop = np.inf, None
            for idx, j in enumerate(active):
                if not is_eq[j] and r[idx] > 1e-14:
                    ratio = u_plus[idx] / r[idx]
                    if ratio < t1:
                        t1, drop = ratio, idx
            slack = normal @ x - target
            t2 = np.inf if in_span else -slack / (z @ normal)
            if in_span and is_eq[p] and abs(slack) <= tol:
                return True  # redundant equality
            t = min(t1, t2)
            if not np.isfinite(t):
                return False
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if np.isfinite(t2):
                x = x + t * z
            if t2 <= t1:
                active.append(p)
                sign[p] = s_sign
                u = u_plus
                return True
            active.pop(drop)
            u_plus = np.delete(u_plus, drop)

    for p in range(n_eq):
        if not usable[p]:
            continue
        s = N[p] @ x - rhs[p]
        if not add(p, -1.0 if s > 0 else 1.0):
            return QPResult("infeasible", None, np.nan, None, None, it)

    while True:
        slack = N[n_eq:] @ x - rhs[n_eq:]
        slack[~keep_i] = np.inf
        for j in active:
            if j >= n_eq:
                slack[j - n_eq] = np.inf
        p = int(np.argmin(slack)) if n_in else 0
        if n_in == 0 or slack[p] >= -tol:
            break
        if not add(n_eq + p, 1.0):
            return QPResult("infeasible", None, np.nan, None, None, it)

    y = np.zeros(n_eq)
    z = np.zeros(n_in)
    for idx, j in enumerate(active):
        if is_eq[j]:
            # multiplier of sign*n^T x = sign*b; report for A x = b convention
            y[j] = -sign[j] * u[idx] / np.linalg.norm(A[j])
        else:
            z[j - n_eq] = u[idx] / norms_i[j - n_eq]
    obj = float(0.5 * x @ P @ x + q @ x)
    return QPResult("optimal", x, obj, z, y, it)
