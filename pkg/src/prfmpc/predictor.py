"""Ideal predictor and ground-truth motion of the obstacle vehicle.

The obstacle is a single integrator whose velocity is redrawn every step,
O_{t+1} = O_t + dt * v_t with v_t ~ N(v_bar, Q) i.i.d. Prediction uses the
same generative model, so it is distribution-consistent and conditionally
invariant by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gauss import Gaussian, JointGaussianTrajectory, condition, sample


class EmptyHorizonError(ValueError):
    pass


@dataclass(frozen=True)
class OVModel:
    nominal_velocity: np.ndarray = field(default_factory=lambda: np.array([15.0, 0.0]))
    velocity_cov: np.ndarray = field(default_factory=lambda: np.diag([1.0, 0.25]))
    dt: float = 0.5

    def __post_init__(self):
        v = np.asarray(self.nominal_velocity, dtype=float).reshape(2)
        q = np.asarray(self.velocity_cov, dtype=float).reshape(2, 2)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        Gaussian(v, q)  # validates symmetry / PSD
        object.__setattr__(self, "nominal_velocity", v)
        object.__setattr__(self, "velocity_cov", q)

    @property
    def step_cov(self) -> np.ndarray:
        """Covariance of one position increment, dt^2 Q."""
        return self.dt ** 2 * self.velocity_cov


@dataclass(frozen=True)
class OVState:
    position: np.ndarray
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))


def predict(model: OVModel, obs: OVState, horizon: int) -> JointGaussianTrajectory:
    """Joint Gaussian prediction of positions obs.step+1..horizon."""
    n = horizon - obs.step
    if n < 1:
        raise EmptyHorizonError(f"observation at step {obs.step} leaves no horizon up to {horizon}")
    k = np.arange(1, n + 1)
    means = obs.position + np.outer(k, model.dt * model.nominal_velocity)
    shared = np.minimum.outer(k, k).astype(float)
    return JointGaussianTrajectory(obs.step, horizon, means, np.kron(shared, model.step_cov))


def simulate_step(model: OVModel, state: OVState, rng: np.random.Generator) -> OVState:
    v = sample(Gaussian(model.nominal_velocity, model.velocity_cov), rng)
    return OVState(state.position + model.dt * v, state.step + 1)


def simulate_trajectories(model: OVModel, start: OVState, horizon: int,
                          rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorised ground truth: array (n, horizon - start.step + 1, 2) incl. the start."""
    steps = horizon - start.step
    v = sample(Gaussian(model.nominal_velocity, model.velocity_cov), rng, size=(n, steps))
    out = np.empty((n, steps + 1, 2))
    out[:, 0] = start.position
    out[:, 1:] = start.position + np.cumsum(model.dt * v, axis=1)
    return out


def verify_conditional_invariance(model: OVModel, tau: int, t: int, tolerance: float,
                                  horizon: int | None = None, test_values=None,
                                  predictor=predict) -> bool:
    """Check that conditioning the step-tau prediction on O_{tau+1} = o matches
    predicting afresh from o at step tau+1, for a grid of values o.

    ``predictor`` can be swapped for a deliberately broken one in tests.
    """
    horizon = t if horizon is None else horizon
    if not tau + 1 < t <= horizon:
        raise ValueError("need tau + 1 < t <= horizon")
    origin = OVState(np.zeros(2), tau)
    joint = predictor(model, origin, horizon)
    if test_values is None:
        centre = joint.mean(tau + 1)
        offsets = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-2.0, 0.5], [3.0, -1.5]])
        test_values = centre + offsets
    for o in np.atleast_2d(test_values):
        lhs = condition(joint, t, 1, o)
        rhs = predictor(model, OVState(o, tau + 1), horizon).marginal(t)
        if np.max(np.abs(lhs.mean - rhs.mean)) > tolerance:
            return False
        if np.max(np.abs(lhs.cov - rhs.cov)) > tolerance:
            return False
    return True
