"""Gaussian algebra used by the predictor, the safety margins and the tests.

Covers standard-normal CDF/quantile, joint Gaussian trajectories over a
shrinking horizon, conditioning via the projection theorem, and sampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SYM_TOL = 1e-12
PSD_FLOOR = -1e-10
SINGULAR_EIG = 1e-12


class SingularCovarianceError(ValueError):
    pass


def std_normal_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


# Acklam's rational approximation, relative error ~1e-9 before refinement
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def std_normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF.

    Acklam's approximation followed by one Halley step on the erfc-based CDF.
    The upper half is handled by symmetry (``1 - p`` is exact for p >= 0.5).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile argument must lie in (0, 1), got {p!r}")
    if p > 0.5:
        return -std_normal_quantile(1.0 - p)
    if p == 0.5:
        return 0.0
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x = num / den
    else:
        q = p - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x = num / den
    e = std_normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def _min_eig(mat):
    return float(np.linalg.eigvalsh(mat).min()) if mat.size else 0.0


def _check_cov(cov, what="covariance"):
    if cov.shape[0] != cov.shape[1]:
        raise ValueError(f"{what} must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0.0, atol=SYM_TOL):
        raise ValueError(f"{what} is not symmetric")
    if _min_eig(cov) < PSD_FLOOR:
        raise ValueError(f"{what} is not positive semidefinite")


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean {mean.shape} and cov {cov.shape} dimensions disagree")
        _check_cov(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class JointGaussianTrajectory:
    """Joint distribution of predicted positions at steps origin_step+1..horizon.

    ``means`` has one row per step; ``covariance`` is the stacked
    (n*d, n*d) matrix whose (i, j) block is the cross-covariance between
    steps origin_step+1+i and origin_step+1+j.
    """

    origin_step: int
    horizon: int
    means: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariance, dtype=float)
        n = self.horizon - self.origin_step
        if n < 1:
            raise ValueError("joint trajectory needs at least one future step")
        if means.shape[0] != n:
            raise ValueError(f"expected {n} mean rows, got {means.shape[0]}")
        d = means.shape[1]
        if cov.shape != (n * d, n * d):
            raise ValueError(f"stacked covariance must be {(n * d, n * d)}, got {cov.shape}")
        _check_cov(cov, "stacked covariance")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def steps(self) -> range:
        return range(self.origin_step + 1, self.horizon + 1)

    def _slot(self, t):
        if not self.origin_step < t <= self.horizon:
            raise IndexError(f"step {t} outside ({self.origin_step}, {self.horizon}]")
        i = t - self.origin_step - 1
        return slice(i * self.dim, (i + 1) * self.dim)

    def mean(self, t) -> np.ndarray:
        self._slot(t)
        return self.means[t - self.origin_step - 1]

    def cov(self, t) -> np.ndarray:
        s = self._slot(t)
        return self.covariance[s, s]

    def cross(self, t1, t2) -> np.ndarray:
        return self.covariance[self._slot(t1), self._slot(t2)]

    def marginal(self, t) -> Gaussian:
        return Gaussian(self.mean(t), self.cov(t))


def _inverse(block, step):
    w_min = _min_eig(block)
    if w_min <= 0.0:
        raise SingularCovarianceError(f"conditioning covariance at step {step} is singular")
    if w_min <= SINGULAR_EIG:
        block = block + SINGULAR_EIG * np.eye(block.shape[0])
    if block.shape == (2, 2):
        a, b, c, d = block[0, 0], block[0, 1], block[1, 0], block[1, 1]
        det = a * d - b * c
        return np.array([[d, -b], [-c, a]]) / det
    return np.linalg.inv(block)


def _check_offset(joint, t, a):
    c = joint.origin_step + a
    if not joint.origin_step < c < t <= joint.horizon:
        raise ValueError(
            f"need origin {joint.origin_step} < conditioning step {c} < t={t} <= {joint.horizon}"
        )
    return c


def conditioning_terms(joint: JointGaussianTrajectory, t: int, a: int):
    """Gain K and value-independent conditional covariance for O_t given O_{origin+a}.

    The conditional mean is ``mean(t) + K @ (value - mean(origin + a))``.
    """
    c = _check_offset(joint, t, a)
    cross = joint.cross(t, c)
    gain = cross @ _inverse(joint.cov(c), c)
    cond_cov = joint.cov(t) - gain @ cross.T
    return gain, 0.5 * (cond_cov + cond_cov.T)


def condition(joint: JointGaussianTrajectory, t: int, a: int, value) -> Gaussian:
    gain, cond_cov = conditioning_terms(joint, t, a)
    c = joint.origin_step + a
    value = np.asarray(value, dtype=float)
    return Gaussian(joint.mean(t) + gain @ (value - joint.mean(c)), cond_cov)


def conditional_mean_distribution(joint: JointGaussianTrajectory, t: int, a: int) -> Gaussian:
    """Distribution of E[O_t | O_{origin+a}] induced by the randomness of O_{origin+a}."""
    c = _check_offset(joint, t, a)
    cross = joint.cross(t, c)
    explained = cross @ _inverse(joint.cov(c), c) @ cross.T
    return Gaussian(joint.mean(t), 0.5 * (explained + explained.T))


def advance(joint: JointGaussianTrajectory, observed) -> JointGaussianTrajectory:
    """Condition the whole joint on its first step taking the value ``observed``.

    Returns the joint over origin+2..horizon, i.e. the prediction one planning
    step later under conditional invariance. The covariance does not depend on
    ``observed``.
    """
    if joint.horizon - joint.origin_step < 2:
        raise ValueError("nothing left to predict after conditioning on the last step")
    d = joint.dim
    first = joint.origin_step + 1
    s11 = joint.covariance[:d, :d]
    s21 = joint.covariance[d:, :d]
    gain = s21 @ _inverse(s11, first)
    cov = joint.covariance[d:, d:] - gain @ s21.T
    shift = gain @ (np.asarray(observed, dtype=float) - joint.means[0])
    means = joint.means[1:] + shift.reshape(-1, d)
    return JointGaussianTrajectory(first, joint.horizon, means, 0.5 * (cov + cov.T))


def sample(g: Gaussian, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from ``g`` with ``rng``; ``size`` adds leading sample dimensions."""
    w, v = np.linalg.eigh(g.cov)
    if w.size and w.min() < PSD_FLOOR:
        raise np.linalg.LinAlgError("covariance is indefinite")
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    shape = (g.dim,) if size is None else tuple(np.atleast_1d(size)) + (g.dim,)
    z = rng.standard_normal(shape)
    return g.mean + z @ factor.T
