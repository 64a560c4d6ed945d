"""Scaled unscented transform: sigma points, weights, moment propagation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .belief import GaussianBelief, cholesky_sqrt
from .errors import ContractError, PropagationError

#: Spread parameter default; small values keep the points near the mean.
DEFAULT_ALPHA = 0.05

#: Distribution-shape weight default, the usual choice for Gaussian beliefs.
DEFAULT_BETA = 2.0


@dataclass(frozen=True)
class SigmaSet:
    """2n+1 deterministic points with mean and covariance weights.

    The points reproduce the generating belief exactly under the mean
    weights, and the covariance weights reproduce its covariance. The mean
    weights sum to 1 and the covariance weights to 2 - alpha^2 + beta.
    """

    points: np.ndarray  # (2n+1, n)
    mean_weights: np.ndarray  # (2n+1,)
    cov_weights: np.ndarray  # (2n+1,)
    alpha: float
    beta: float
    lam: float

    @property
    def n(self) -> int:
        return self.points.shape[1]


def sigma_points(b: GaussianBelief, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA) -> SigmaSet:
    """Sigma points of a belief with spread alpha**2 * n around the mean."""
    if not 0.0 < alpha <= 1.0:
        raise ContractError(f"alpha must lie in (0, 1], got {alpha}")
    if beta < 0.0:
        raise ContractError(f"beta must be nonnegative, got {beta}")
    n = b.dim
    scaled = alpha * alpha * n  # n + lambda, guaranteed positive
    lam = scaled - n
    spread = alpha * np.sqrt(n)
    chol = cholesky_sqrt(b.cov)

    points = np.tile(b.mean, (2 * n + 1, 1))
    points[1 : n + 1] += spread * chol.T
    points[n + 1 :] -= spread * chol.T

    inv = 1.0 / (alpha * alpha)
    wing = inv / (2.0 * n)
    mean_w = np.full(2 * n + 1, wing)
    mean_w[0] = 1.0 - inv
    cov_w = mean_w.copy()
    cov_w[0] = (1.0 - alpha * alpha + beta) + (1.0 - inv)
    return SigmaSet(
        points=points,
        mean_weights=mean_w,
        cov_weights=cov_w,
        alpha=alpha,
        beta=beta,
        lam=lam,
    )


def propagate_points(f_cl: Callable[[np.ndarray], np.ndarray], s: SigmaSet) -> np.ndarray:
    """Push every sigma point through the closed-loop map."""
    out = np.empty_like(s.points)
    for i in range(s.points.shape[0]):
        out[i] = np.asarray(f_cl(s.points[i]), dtype=float).reshape(-1)
    if not np.isfinite(out).all():
        raise PropagationError("closed-loop map produced non-finite sigma points")
    return out


def moments_from_points(propagated: np.ndarray, s: SigmaSet, noise_cov: np.ndarray) -> GaussianBelief:
    """Weighted mean/covariance of propagated points, plus additive noise.

    The covariance estimate is symmetrized and floored into a valid belief;
    a warning is logged if the raw estimate was indefinite.
    """
    mean = s.mean_weights @ propagated
    spread = propagated - mean
    cov = np.einsum("i,ij,ik->jk", s.cov_weights, spread, spread) + noise_cov
    return GaussianBelief(mean, cov)


def ut_propagate(
    f_cl: Callable[[np.ndarray], np.ndarray], s: SigmaSet, noise_cov: np.ndarray
) -> GaussianBelief:
    """One-step predicted belief of the closed loop x+ = f_cl(x) + w."""
    return moments_from_points(propagate_points(f_cl, s), s, noise_cov)
