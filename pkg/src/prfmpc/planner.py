"""Shrinking-horizon MPC for the double-integrator ego vehicle.

States are (p1, p2, v1, v2), inputs are accelerations. The QP is solved in
condensed form: states are eliminated through the dynamics and recovered by
forward simulation, so the reported trajectories satisfy the dynamics exactly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .gauss import JointGaussianTrajectory
from .qp import QPSolverError, solve_qp
from .safety import HalfspaceConstraint, MarginTable, RiskAllocation

VARIANTS = ("nominal", "prf")
DEFAULT_INPUT_WEIGHT = 1e-4


class SolverError(RuntimeError):
    pass


def discretize(dt: float):
    """Forward-Euler (A, B) of p' = v, v' = u."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = np.eye(4)
    A[0, 2] = A[1, 3] = dt
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = dt
    return A, B


@dataclass(frozen=True)
class EgoModel:
    dt: float = 0.5
    velocity_bounds: tuple = ((0.0, 30.0), (-5.0, 5.0))
    input_bounds: tuple = ((-10.0, 10.0), (-5.0, 5.0))

    @property
    def A(self) -> np.ndarray:
        return discretize(self.dt)[0]

    @property
    def B(self) -> np.ndarray:
        return discretize(self.dt)[1]

    def step(self, x, u) -> np.ndarray:
        A, B = discretize(self.dt)
        return A @ np.asarray(x, dtype=float) + B @ np.asarray(u, dtype=float)


@dataclass(frozen=True)
class MPCProblem:
    tau: int
    x0: np.ndarray
    horizon: int
    reference: np.ndarray  # (horizon + 1, 4), row t is x_t^ref
    halfspaces: tuple
    variant: str = "nominal"
    ego: EgoModel = field(default_factory=EgoModel)
    input_weight: float = DEFAULT_INPUT_WEIGHT

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "nominal" and any(h.margin != 0.0 for h in self.halfspaces):
            raise ValueError("nominal problems carry no margins")
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(4))
        object.__setattr__(self, "halfspaces", tuple(self.halfspaces))

    @property
    def n_steps(self) -> int:
        return self.horizon - self.tau


@dataclass
class PlanResult:
    status: str  # "feasible" | "infeasible"
    u_seq: np.ndarray | None  # inputs tau..T-1
    x_seq: np.ndarray | None  # states tau+1..T
    objective: float  # tracking + input regularisation
    tracking_cost: float
    solve_time: float

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def build_problem(tau, x0, prediction: JointGaussianTrajectory, table: MarginTable | None,
                  alloc: RiskAllocation, reference, variant, directions, safe_radius: float,
                  ego: EgoModel | None = None,
                  input_weight: float = DEFAULT_INPUT_WEIGHT) -> MPCProblem:
    """One halfspace per future step; ``directions[t]`` is the frozen tangent direction."""
    T = alloc.horizon
    reference = np.asarray(reference, dtype=float)
    if not 0 <= tau < T:
        raise ValueError(f"planning step {tau} outside [0, {T})")
    if prediction.origin_step != tau or prediction.horizon != T:
        raise ValueError("prediction does not span tau+1..T")
    if reference.shape != (T + 1, 4):
        raise ValueError(f"reference must have shape {(T + 1, 4)}, got {reference.shape}")
    if variant == "prf" and (table is None or table.horizon != T):
        raise ValueError("prf variant needs a margin table for the same horizon")
    halfspaces = []
    for t in prediction.steps:
        margin = table.cum(t, tau) if variant == "prf" else 0.0
        halfspaces.append(HalfspaceConstraint(t, directions[t], safe_radius, alloc.gamma_t,
                                              prediction.mean(t), prediction.cov(t), margin))
    return MPCProblem(tau, x0, T, reference, tuple(halfspaces), variant,
                      ego or EgoModel(), input_weight)


def prediction_matrices(ego: EgoModel, n: int):
    """Sx (4n, 4), Su (4n, 2n) with stacked states x_{1..n} = Sx x0 + Su u."""
    A, B = discretize(ego.dt)
    Sx = np.zeros((4 * n, 4))
    Su = np.zeros((4 * n, 2 * n))
    Ak = np.eye(4)
    powers = [Ak]
    for k in range(n):
        Ak = A @ Ak
        powers.append(Ak)
        Sx[4 * k:4 * k + 4] = Ak
    for k in range(n):
        for j in range(k + 1):
            Su[4 * k:4 * k + 4, 2 * j:2 * j + 2] = powers[k - j] @ B
    return Sx, Su


def condensed_qp(problem: MPCProblem):
    """(P, q, const, G, h, Sx, Su): J(u) = 1/2 u'Pu + q'u + const, G u <= h."""
    n = problem.n_steps
    ego = problem.ego
    Sx, Su = prediction_matrices(ego, n)
    free = Sx @ problem.x0
    ref = problem.reference[problem.tau + 1:]
    pos = np.concatenate([[4 * k, 4 * k + 1] for k in range(n)])
    vel = pos + 2
    C = Su[pos]
    e = free[pos] - ref[:, :2].reshape(-1)
    lam = problem.input_weight
    P = 2.0 * (C.T @ C + lam * np.eye(2 * n))
    q = 2.0 * C.T @ e
    const = float(e @ e)

    rows, rhs = [], []
    (u1lo, u1hi), (u2lo, u2hi) = ego.input_bounds
    ulo = np.tile([u1lo, u2lo], n)
    uhi = np.tile([u1hi, u2hi], n)
    eye = np.eye(2 * n)
    rows += [eye, -eye]
    rhs += [uhi, -ulo]
    (v1lo, v1hi), (v2lo, v2hi) = ego.velocity_bounds
    vlo = np.tile([v1lo, v2lo], n)
    vhi = np.tile([v1hi, v2hi], n)
    rows += [Su[vel], -Su[vel]]
    rhs += [vhi - free[vel], -(vlo - free[vel])]
    for h in problem.halfspaces:
        k = h.t - problem.tau - 1
        rows.append((h.m @ Su[4 * k:4 * k + 2])[None, :])
        rhs.append(np.array([h.offset - h.m @ free[4 * k:4 * k + 2]]))
    G = np.vstack(rows)
    hvec = np.concatenate(rhs)
    return P, q, const, G, hvec, Sx, Su


def _rollout(problem, u, Sx, Su):
    # sequential Euler steps keep the dynamics residual at machine precision
    A, B = discretize(problem.ego.dt)
    x = problem.x0
    out = []
    for k in range(problem.n_steps):
        x = A @ x + B @ u[2 * k:2 * k + 2]
        out.append(x)
    return np.array(out)


def solve(problem: MPCProblem, tol: float = 1e-9, max_iter: int | None = None) -> PlanResult:
    start = time.perf_counter()
    P, q, const, G, h, Sx, Su = condensed_qp(problem)
    try:
        res = solve_qp(P, q, G, h, tol=tol, max_iter=max_iter)
    except QPSolverError as exc:
        raise SolverError(str(exc)) from exc
    elapsed = time.perf_counter() - start
    if res.status != "optimal":
        return PlanResult("infeasible", None, None, np.nan, np.nan, elapsed)
    u = res.x
    x_seq = _rollout(problem, u, Sx, Su)
    tracking = float(np.sum((x_seq[:, :2] - problem.reference[problem.tau + 1:, :2]) ** 2))
    objective = tracking + problem.input_weight * float(u @ u)
    return PlanResult("feasible", u.reshape(-1, 2), x_seq, objective, tracking, elapsed)


def check_feasible(problem: MPCProblem, tol: float = 1e-9) -> bool:
    """Phase-1 test: look for the minimum-norm input sequence meeting all constraints."""
    _, _, _, G, h, _, _ = condensed_qp(problem)
    n = G.shape[1]
    try:
        res = solve_qp(np.eye(n), np.zeros(n), G, h, tol=tol)
    except QPSolverError as exc:
        raise SolverError(str(exc)) from exc
    return res.status == "optimal"


def constraint_violation(problem: MPCProblem, u_seq) -> float:
    """Largest violation of bounds and halfspaces by an input sequence (<= 0 if feasible)."""
    _, _, _, G, h, _, _ = condensed_qp(problem)
    u = np.asarray(u_seq, dtype=float).reshape(-1)
    return float(np.max(G @ u - h)) if G.size else 0.0
