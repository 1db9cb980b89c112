"""Tangent-halfspace safety constraints and recursive-feasibility margins."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .gauss import (JointGaussianTrajectory, SingularCovarianceError, advance, condition,
                    conditional_mean_distribution, std_normal_quantile)


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RiskAllocation:
    """Uniform split of the collision risk over the full horizon, plus the
    per-pair budget for the recursive-feasibility violation tolerance."""

    epsilon: float
    horizon: int
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0 or not 0.0 < self.gamma < 1.0:
            raise ValueError("epsilon and gamma must lie in (0, 1)")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def per_step(self) -> float:
        return self.epsilon / self.horizon

    @property
    def n_pairs(self) -> int:
        # (t, tau) with 2 <= t <= T and 0 <= tau <= t - 2
        return (self.horizon - 1) * self.horizon // 2

    @property
    def gamma_bar(self) -> float:
        if self.horizon < 2:
            raise ValueError("no inclusion pairs for horizon < 2")
        return 2.0 * self.gamma / ((self.horizon - 1) * self.horizon)

    @cached_property
    def gamma_t(self) -> float:
        return std_normal_quantile(1.0 - self.per_step)

    @cached_property
    def gamma_gamma_bar(self) -> float:
        return std_normal_quantile(1.0 - self.gamma_bar)


@dataclass(frozen=True)
class HalfspaceConstraint:
    """Chance constraint at step t linearised along direction m.

    Feasible positions satisfy m^T p <= offset, where offset already
    includes the safe radius, the quantile back-off and the margin.
    """

    t: int
    m: np.ndarray
    r: float
    gamma_t: float
    mu: np.ndarray
    sigma: np.ndarray
    margin: float = 0.0

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).reshape(2)
        if not np.linalg.norm(m) > 0.0:
            raise DegenerateGeometryError("halfspace direction must be nonzero")
        if self.margin < 0.0:
            raise ValueError("margin must be non-negative")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).reshape(2))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float).reshape(2, 2))

    @property
    def projected_std(self) -> float:
        return float(np.sqrt(max(self.m @ self.sigma @ self.m, 0.0)))

    @property
    def offset(self) -> float:
        return float(self.m @ self.mu - self.r * np.linalg.norm(self.m)
                     - self.gamma_t * self.projected_std - self.margin)

    def tightened_level(self, x) -> float:
        return nominal_level(self, x) + self.margin


def tangent_direction(x_ref, mu0) -> np.ndarray:
    """Vector from the reference position to the obstacle mean predicted at step 0."""
    m = np.asarray(mu0, dtype=float)[:2] - np.asarray(x_ref, dtype=float)[:2]
    if not np.linalg.norm(m) > 0.0:
        raise DegenerateGeometryError("reference position coincides with the obstacle mean")
    return m


def _level(m, x, mu, sigma, r, gamma_t):
    x = np.asarray(x, dtype=float)[:2]
    return float(m @ (x - mu) + r * np.linalg.norm(m)
                 + gamma_t * np.sqrt(max(m @ sigma @ m, 0.0)))


def nominal_level(h: HalfspaceConstraint, x) -> float:
    """l(x); non-positive means the per-step chance constraint holds."""
    return _level(h.m, x, h.mu, h.sigma, h.r, h.gamma_t)


def realized_level(h: HalfspaceConstraint, x, mu_next, sigma_next) -> float:
    """Level function rebuilt from next-step conditional moments, same m and r."""
    return _level(h.m, x, np.asarray(mu_next, dtype=float), np.asarray(sigma_next, dtype=float),
                  h.r, h.gamma_t)


def _margin(m, sigma_now, sigma_next, sigma_shift, alloc):
    s_now = np.sqrt(max(m @ sigma_now @ m, 0.0))
    s_next = np.sqrt(max(m @ sigma_next @ m, 0.0))
    s_shift = np.sqrt(max(m @ sigma_shift @ m, 0.0))
    value = -alloc.gamma_t * (s_now - s_next) + alloc.gamma_gamma_bar * s_shift
    return max(float(value), 0.0)


def _joints_from(joint_at_0: JointGaussianTrajectory, upto: int):
    joints = [joint_at_0]
    for _ in range(upto):
        j = joints[-1]
        d = j.dim
        if not np.any(j.covariance[:, :d]):
            # deterministic first step: dropping it is the exact conditional
            j = JointGaussianTrajectory(j.origin_step + 1, j.horizon, j.means[1:],
                                        j.covariance[d:, d:])
        else:
            j = advance(j, j.means[0])
        joints.append(j)
    return joints


def _next_step_covs(joint: JointGaussianTrajectory, t: int):
    """(Sigma_hat, Sigma_shift) for O_t after observing the first step of ``joint``.

    A deterministic next position (zero covariance) carries no information;
    PSD forces the cross terms to zero too, so nothing changes.
    """
    try:
        sigma_hat = condition(joint, t, 1, joint.means[0]).cov
        sigma_shift = conditional_mean_distribution(joint, t, 1).cov
    except SingularCovarianceError:
        first = joint.steps[0]
        if np.any(joint.cov(first)) or np.any(joint.cross(t, first)):
            raise
        return joint.cov(t), np.zeros((2, 2))
    return sigma_hat, sigma_shift


def margin_step(joint_at_0: JointGaussianTrajectory, t: int, i: int,
                alloc: RiskAllocation, m) -> float:
    """Tightening c(t, i) that makes the step-i set contained in the step-(i+1)
    set with probability >= 1 - gamma_bar.

    Step-i covariances come from iterated conditioning of the step-0 joint;
    they are value-independent, so conditioning on the means is enough.
    """
    if not 0 <= i <= t - 2 or t > joint_at_0.horizon:
        raise ValueError(f"invalid pair (t={t}, i={i})")
    joint_i = _joints_from(joint_at_0, i - joint_at_0.origin_step)[-1]
    m = np.asarray(m, dtype=float)
    sigma_hat, sigma_shift = _next_step_covs(joint_i, t)
    return _margin(m, joint_i.cov(t), sigma_hat, sigma_shift, alloc)


@dataclass(frozen=True)
class MarginTable:
    """c[t, i] for 2 <= t <= T, 0 <= i <= t-2 (NaN elsewhere) and the step-i
    covariances sigma[t, i] used to build them."""

    horizon: int
    c: np.ndarray
    sigma: np.ndarray

    def cum(self, t: int, tau: int) -> float:
        if tau >= t - 1:
            return 0.0
        return float(np.sum(self.c[t, tau:t - 1]))

    def scaled(self, factor: float) -> "MarginTable":
        return MarginTable(self.horizon, self.c * factor, self.sigma)


def _direction_rows(m_per_t, horizon):
    if isinstance(m_per_t, dict):
        rows = np.full((horizon + 1, 2), np.nan)
        for t, m in m_per_t.items():
            rows[t] = m
        return rows
    return np.asarray(m_per_t, dtype=float)


def build_margin_table(joint_at_0: JointGaussianTrajectory, alloc: RiskAllocation,
                       m_per_t) -> MarginTable:
    """Margins for every (t, i) pair; ``m_per_t`` is a dict or an array indexed by t."""
    if joint_at_0.origin_step != 0:
        raise ValueError("margins are precomputed from the step-0 prediction")
    T = joint_at_0.horizon
    dirs = _direction_rows(m_per_t, T)
    c = np.full((T + 1, T + 1), np.nan)
    sigma = np.full((T + 1, T + 1, 2, 2), np.nan)
    joints = _joints_from(joint_at_0, max(T - 1, 0))
    for i, joint in enumerate(joints):
        for t in joint.steps:
            sigma[t, i] = joint.cov(t)
            if t - i >= 2:
                sigma_hat, sigma_shift = _next_step_covs(joint, t)
                c[t, i] = _margin(dirs[t], joint.cov(t), sigma_hat, sigma_shift, alloc)
    return MarginTable(T, c, sigma)


def legacy_condition_satisfied(mu_a, mu_b, sigma_a, sigma_b, gamma_t: float) -> bool:
    """Mean shift bounded by the shrinkage of sqrt(Frobenius norm) of the covariance.

    Equality counts as satisfied.
    """
    shift = np.linalg.norm(np.asarray(mu_a, dtype=float) - np.asarray(mu_b, dtype=float))
    shrink = (np.sqrt(np.linalg.norm(np.asarray(sigma_a, dtype=float), "fro"))
              - np.sqrt(np.linalg.norm(np.asarray(sigma_b, dtype=float), "fro")))
    return bool(shift <= gamma_t * shrink)


def inclusion_holds(now: HalfspaceConstraint, mu_next, sigma_next, c: float) -> bool:
    """One-step containment event: the realized next-step level never exceeds
    the current level plus c (x cancels, so any point can be used)."""
    x = now.mu
    return realized_level(now, x, mu_next, sigma_next) <= nominal_level(now, x) + c
