"""Gaussian belief states, covariance factorization helpers, ellipse level sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateCovarianceError

logger = logging.getLogger(__name__)

#: Smallest eigenvalue tolerated in a belief covariance.
EPS_PD = 1e-9


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    # 0.5*(M + M.T) is exactly symmetric in floating point.
    return 0.5 * (mat + mat.T)


def psd_floor(mat: np.ndarray, eps: float = EPS_PD) -> np.ndarray:
    """Clamp the eigenvalues of a symmetric matrix to at least ``eps``.

    Leaves the (symmetrized) input untouched when all eigenvalues already
    clear the floor, so the operation is exactly idempotent on valid inputs.
    """
    sym = _symmetrize(np.asarray(mat, dtype=float))
    w = np.linalg.eigvalsh(sym)
    if w.min() >= eps:
        return sym
    w, v = np.linalg.eigh(sym)
    w_clamped = np.maximum(w, eps)
    return _symmetrize((v * w_clamped) @ v.T)


def cholesky_sqrt(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor S with S @ S.T == cov.

    Raises
    ------
    DegenerateCovarianceError
        If the smallest eigenvalue sits below the PD floor (a small slack
        absorbs eigensolver round-off on matrices floored exactly at EPS_PD).
    """
    sym = _symmetrize(np.asarray(cov, dtype=float))
    w_min = np.linalg.eigvalsh(sym).min()
    if w_min < 0.5 * EPS_PD:
        raise DegenerateCovarianceError(
            f"covariance has eigenvalue {w_min:.3e} below the PD floor {EPS_PD:.1e}"
        )
    return np.linalg.cholesky(sym)


@dataclass(frozen=True)
class GaussianBelief:
    """State mean and symmetric positive-definite covariance at one stage."""

    mean: np.ndarray
    cov: np.ndarray

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float)).reshape(-1)
        cov = np.asarray(cov, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ContractError(f"covariance must be square, got shape {cov.shape}")
        if cov.shape[0] != mean.shape[0]:
            raise ContractError(
                f"mean has dim {mean.shape[0]} but covariance is {cov.shape[0]}x{cov.shape[1]}"
            )
        sym = _symmetrize(cov)
        w_min = np.linalg.eigvalsh(sym).min()
        if w_min < EPS_PD:
            logger.warning(
                "belief covariance repaired: min eigenvalue %.3e floored to %.1e",
                w_min,
                EPS_PD,
            )
            sym = psd_floor(sym, EPS_PD)
        mean.setflags(write=False)
        sym.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", sym)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class EllipseLevelSet:
    """Quadratic-form level set {x : (x-c)^T S^{-1} (x-c) = level}."""

    center: np.ndarray
    shape: np.ndarray
    level: float

    def __init__(self, center, shape, level):
        center = np.atleast_1d(np.asarray(center, dtype=float)).reshape(-1)
        shape = _symmetrize(np.asarray(shape, dtype=float))
        level = float(level)
        if level <= 0.0:
            raise ContractError(f"ellipse level must be positive, got {level}")
        if np.linalg.eigvalsh(shape).min() <= 0.0:
            raise ContractError("ellipse shape matrix must be positive definite")
        center.setflags(write=False)
        shape.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "level", level)


def one_sigma_ellipse(b: GaussianBelief) -> EllipseLevelSet:
    """Level-1 covariance ellipse of a belief."""
    return EllipseLevelSet(b.mean, b.cov, 1.0)


def ellipse_at_level(b: GaussianBelief, level: float) -> EllipseLevelSet:
    """Covariance ellipse of a belief at an arbitrary positive level."""
    return EllipseLevelSet(b.mean, b.cov, level)
