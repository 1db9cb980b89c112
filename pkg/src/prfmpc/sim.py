"""Closed-loop Monte Carlo of the lane-change scenario.

Trial i of a batch draws its obstacle noise from a PCG64 stream seeded with
``trial_seed(base_seed, i)`` (a splitmix64 mix), so results do not depend on
how trials are distributed over worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .gauss import conditioning_terms
from .planner import (DEFAULT_INPUT_WEIGHT, EgoModel, MPCProblem, PlanResult, SolverError,
                      build_problem, solve)
from .predictor import OVModel, OVState, predict, simulate_step, simulate_trajectories
from .safety import (MarginTable, RiskAllocation, build_margin_table,
                     legacy_condition_satisfied, tangent_direction)

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(base_seed: int, index: int) -> int:
    return splitmix64(splitmix64(base_seed & MASK64) ^ (index & MASK64))


@dataclass(frozen=True)
class ReferenceSpec:
    """Constant-speed lane change; lateral offset ramps linearly between two
    longitudinal stations (metres)."""

    speed: float = 15.0
    lane_offset: float = 3.5
    start_station: float = 7.5
    end_station: float = 37.5

    def build(self, x_init, dt: float, horizon: int) -> np.ndarray:
        t = np.arange(horizon + 1)
        p1 = x_init[0] + self.speed * dt * t
        span = max(self.end_station - self.start_station, 1e-9)
        frac = np.clip((p1 - self.start_station) / span, 0.0, 1.0)
        p2 = x_init[1] + self.lane_offset * frac
        v2 = np.empty_like(p2)
        v2[:-1] = np.diff(p2) / dt
        v2[-1] = v2[-2] if horizon > 0 else 0.0
        return np.column_stack([p1, p2, np.full_like(p1, self.speed), v2])


@dataclass(frozen=True)
class TrialConfig:
    horizon: int = 9
    epsilon: float = 0.05
    gamma: float = 0.1
    safe_radius: float = 4.0
    ego_init: tuple = (0.0, 0.0, 15.0, 0.0)
    ov_init: tuple = (-7.0, 3.5)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    ov: OVModel = field(default_factory=OVModel)
    ego: EgoModel = field(default_factory=EgoModel)
    input_weight: float = DEFAULT_INPUT_WEIGHT
    solver_tol: float = 1e-9
    solver_max_iter: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (0 < self.epsilon < 1 and 0 < self.gamma < 1):
            raise ValueError("epsilon and gamma must lie in (0, 1)")
        if self.safe_radius <= 0:
            raise ValueError("safe radius must be positive")
        if len(self.ego_init) != 4 or len(self.ov_init) != 2:
            raise ValueError("ego_init needs 4 entries and ov_init 2")
        if abs(self.ov.dt - self.ego.dt) > 1e-15:
            raise ValueError("ego and obstacle must share the sampling time")

    @property
    def alloc(self) -> RiskAllocation:
        return RiskAllocation(self.epsilon, self.horizon, self.gamma)

    def reference_array(self) -> np.ndarray:
        return self.reference.build(self.ego_init, self.ego.dt, self.horizon)


@dataclass
class StepRecord:
    tau: int
    ego_state: np.ndarray
    ov_position: np.ndarray
    problem: MPCProblem
    plan: PlanResult


@dataclass
class TrialResult:
    trial_index: int
    variant: str
    seed: int
    initially_feasible: bool
    rf_ok: bool | None  # None unless initially feasible
    closed_loop_cost: float
    d_min: float
    max_solve_time: float
    failed_step: int | None = None
    solver_failure: bool = False
    ego_states: np.ndarray | None = None
    ov_positions: np.ndarray | None = None
    trace: list | None = None
    table: MarginTable | None = None


@dataclass
class AggregateMetrics:
    """Batch statistics.

    rf_rate and collision_rate are over initially feasible trials; rf_rate_all
    is over all trials. mean_cost is over trials that stayed feasible to the
    end (complete trajectories), mean_cost_all over initially feasible ones.
    mean_d_min is over initially feasible trials.
    """

    variant: str
    n_trials: int
    n_initially_feasible: int
    n_rf_ok: int
    n_solver_failures: int
    rf_rate: float
    rf_rate_all: float
    mean_cost: float
    mean_cost_all: float
    mean_d_min: float
    collision_rate: float
    mean_max_solve_time: float

    TIMING_FIELDS = ("mean_max_solve_time",)

    def deterministic(self) -> dict:
        d = dict(self.__dict__)
        for k in self.TIMING_FIELDS:
            d.pop(k)
        return d


def _mean(values):
    return float(np.mean(values)) if len(values) else math.nan


def _margin_context(cfg: TrialConfig):
    ref = cfg.reference_array()
    obs0 = OVState(np.asarray(cfg.ov_init, dtype=float), 0)
    joint0 = predict(cfg.ov, obs0, cfg.horizon)
    dirs = np.full((cfg.horizon + 1, 2), np.nan)
    for t in joint0.steps:
        dirs[t] = tangent_direction(ref[t, :2], joint0.mean(t))
    table = build_margin_table(joint0, cfg.alloc, dirs)
    return ref, dirs, table


def run_trial(cfg: TrialConfig, variant: str, index: int = 0,
              record_trace: bool = False, check_consistency: bool = True) -> TrialResult:
    """Execute one shrinking-horizon closed loop.

    Infeasibility at tau = 0 marks the trial as not initially feasible;
    later infeasibility freezes the trial with rf_ok = False.
    """
    seed = trial_seed(cfg.seed, index)
    rng = np.random.Generator(np.random.PCG64(seed))
    T = cfg.horizon
    alloc = cfg.alloc
    ref, dirs, table = _margin_context(cfg)
    x = np.asarray(cfg.ego_init, dtype=float)
    ov = OVState(np.asarray(cfg.ov_init, dtype=float), 0)
    ego_states, ov_positions = [x], [ov.position]
    trace = [] if record_trace else None
    solve_times = []
    initially_feasible, rf_ok, failed, solver_failure = True, True, None, False

    for tau in range(T):
        pred = predict(cfg.ov, ov, T)
        if check_consistency and variant == "prf":
            for t in pred.steps:
                if np.max(np.abs(pred.cov(t) - table.sigma[t, tau])) > 1e-9:
                    raise AssertionError(f"predicted covariance at ({t}, {tau}) left the margin table")
        problem = build_problem(tau, x, pred, table, alloc, ref, variant, dirs, cfg.safe_radius,
                                cfg.ego, cfg.input_weight)
        try:
            plan = solve(problem, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
        except SolverError:
            solver_failure = True
            failed = tau
            break
        solve_times.append(plan.solve_time)
        if trace is not None:
            trace.append(StepRecord(tau, x, ov.position, problem, plan))
        if not plan.feasible:
            failed = tau
            if tau == 0:
                initially_feasible = False
            else:
                rf_ok = False
            break
        x = cfg.ego.step(x, plan.u_seq[0])
        ov = simulate_step(cfg.ov, ov, rng)
        ego_states.append(x)
        ov_positions.append(ov.position)

    ego_arr = np.array(ego_states)
    ov_arr = np.array(ov_positions)
    dist = np.linalg.norm(ego_arr[:, :2] - ov_arr, axis=1)
    k = len(ego_arr)
    cost = float(np.sum((ego_arr[1:, :2] - ref[1:k, :2]) ** 2))
    return TrialResult(
        trial_index=index, variant=variant, seed=seed,
        initially_feasible=initially_feasible,
        rf_ok=rf_ok if initially_feasible and not solver_failure else None,
        closed_loop_cost=cost, d_min=float(dist.min()),
        max_solve_time=max(solve_times) if solve_times else math.nan,
        failed_step=failed, solver_failure=solver_failure,
        ego_states=ego_arr, ov_positions=ov_arr, trace=trace,
        table=table if record_trace else None,
    )


def aggregate(results, variant: str, safe_radius: float) -> AggregateMetrics:
    # solver failures are reported separately, not as infeasibility
    feas = [r for r in results if r.initially_feasible and not r.solver_failure]
    ok = [r for r in feas if r.rf_ok]
    n, nf = len(results), len(feas)
    return AggregateMetrics(
        variant=variant,
        n_trials=n,
        n_initially_feasible=nf,
        n_rf_ok=len(ok),
        n_solver_failures=sum(r.solver_failure for r in results),
        rf_rate=len(ok) / nf if nf else math.nan,
        rf_rate_all=len(ok) / n if n else math.nan,
        mean_cost=_mean([r.closed_loop_cost for r in ok]),
        mean_cost_all=_mean([r.closed_loop_cost for r in feas]),
        mean_d_min=_mean([r.d_min for r in feas]),
        collision_rate=(sum(r.d_min < safe_radius for r in feas) / nf) if nf else math.nan,
        mean_max_solve_time=_mean([r.max_solve_time for r in feas]),
    )


def _strip(result: TrialResult) -> TrialResult:
    return replace(result, ego_states=None, ov_positions=None, trace=None, table=None)


def _run_chunk(args):
    cfg, variant, indices = args
    return [_strip(run_trial(cfg, variant, i)) for i in indices]


def run_trials(cfg: TrialConfig, n_trials: int, variant: str, parallelism: int = 1) -> list:
    """TrialResults in index order, without per-step traces."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    indices = list(range(n_trials))
    if parallelism <= 1:
        return _run_chunk((cfg, variant, indices))
    chunks = [indices[k::parallelism] for k in range(parallelism)]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        parts = list(pool.map(_run_chunk, [(cfg, variant, c) for c in chunks]))
    merged = sorted((r for part in parts for r in part), key=lambda r: r.trial_index)
    return merged


def run_batch(cfg: TrialConfig, n_trials: int, variant: str,
              parallelism: int = 1) -> AggregateMetrics:
    return aggregate(run_trials(cfg, n_trials, variant, parallelism), variant, cfg.safe_radius)


def legacy_pairs_satisfied(cfg: TrialConfig, trajectory: np.ndarray) -> bool:
    """Whether the mean-shift/covariance-shrink condition holds at every pair
    2 <= t <= T, 0 <= tau <= t-1 along one obstacle trajectory (positions 0..T).

    At tau = t-1 the later prediction of O_t is the observation itself."""
    T = cfg.horizon
    gamma_t = cfg.alloc.gamma_t
    S = cfg.ov.step_cov
    vbar = cfg.ov.dt * cfg.ov.nominal_velocity
    for t in range(2, T + 1):
        for tau in range(t):
            mu_a = trajectory[tau] + (t - tau) * vbar
            mu_b = trajectory[tau + 1] + (t - tau - 1) * vbar
            if not legacy_condition_satisfied(mu_a, mu_b, (t - tau) * S, (t - tau - 1) * S,
                                              gamma_t):
                return False
    return True


@dataclass
class LegacyStudyRow:
    horizon: int
    n_trials: int
    satisfaction_rate: float
    nominal_rf_rate: float
    prf_rf_rate: float


def _trajectory_for(cfg, index):
    rng = np.random.Generator(np.random.PCG64(trial_seed(cfg.seed, index)))
    ov = OVState(np.asarray(cfg.ov_init, dtype=float), 0)
    out = [ov.position]
    for _ in range(cfg.horizon):
        ov = simulate_step(cfg.ov, ov, rng)
        out.append(ov.position)
    return np.array(out)


def legacy_condition_study(cfg: TrialConfig, horizons, n_trials: int,
                           parallelism: int = 1) -> list:
    """Satisfaction rate of the legacy sufficient condition and closed-loop RF
    rates per horizon. The obstacle trajectory of trial i is the same one the
    closed-loop trial i experiences."""
    rows = []
    for T in horizons:
        if not 2 <= T:
            raise ValueError("horizons must be >= 2")
        c = replace(cfg, horizon=T)
        sat = sum(legacy_pairs_satisfied(c, _trajectory_for(c, i)) for i in range(n_trials))
        nominal = run_batch(c, n_trials, "nominal", parallelism)
        prf = run_batch(c, n_trials, "prf", parallelism)
        rows.append(LegacyStudyRow(T, n_trials, sat / n_trials, nominal.rf_rate, prf.rf_rate))
    return rows


@dataclass
class InclusionProbe:
    """pair_frequency[t, tau] for 0 <= tau <= t-2 (NaN elsewhere)."""

    n_samples: int
    gamma_bar: float
    gamma: float
    pair_frequency: np.ndarray
    joint_frequency: float

    def pairs(self):
        T = self.pair_frequency.shape[0] - 1
        return [(t, tau) for t in range(2, T + 1) for tau in range(t - 1)]


def inclusion_probe(cfg: TrialConfig, n_samples: int, margin_scale: float = 1.0,
                    seed: int | None = None) -> InclusionProbe:
    """Empirical frequency of the one-step containment event
    l_hat_{t|tau+1} <= l_{t|tau} + c(t, tau) over sampled obstacle trajectories.

    The step-(tau+1) moments come from conditioning the step-tau prediction
    on the sampled O_{tau+1}; the joint frequency requires every pair at once
    along the same trajectory.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    T = cfg.horizon
    alloc = cfg.alloc
    ref, dirs, table = _margin_context(cfg)
    c_table = table.c * margin_scale
    rng = np.random.Generator(np.random.PCG64(trial_seed(cfg.seed if seed is None else seed, 0)))
    start = OVState(np.asarray(cfg.ov_init, dtype=float), 0)
    paths = simulate_trajectories(cfg.ov, start, T, rng, n_samples)
    freq = np.full((T + 1, T + 1), np.nan)
    all_ok = np.ones(n_samples, dtype=bool)
    r = cfg.safe_radius
    g = alloc.gamma_t
    for tau in range(T - 1):
        # prediction at tau from each sampled o_tau; moments shift with o_tau only
        base = predict(cfg.ov, OVState(np.zeros(2), tau), T)
        o_tau = paths[:, tau]
        o_next = paths[:, tau + 1]
        for t in range(tau + 2, T + 1):
            m = dirs[t]
            gain, cond_cov = conditioning_terms(base, t, 1)
            mu_now = o_tau + base.mean(t)
            mu_hat = mu_now + (o_next - (o_tau + base.mean(tau + 1))) @ gain.T
            s_now = math.sqrt(m @ base.cov(t) @ m)
            s_hat = math.sqrt(max(m @ cond_cov @ m, 0.0))
            # levels at x = 0; x cancels in the difference
            l_now = -(mu_now @ m) + r * np.linalg.norm(m) + g * s_now
            l_hat = -(mu_hat @ m) + r * np.linalg.norm(m) + g * s_hat
            ok = l_hat <= l_now + c_table[t, tau]
            freq[t, tau] = ok.mean()
            all_ok &= ok
    return InclusionProbe(n_samples, alloc.gamma_bar, cfg.gamma, freq, float(all_ok.mean()))
