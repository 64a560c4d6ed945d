"""Stage-local linearization of the nonlinear dynamics (the RL step)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, LinearizationError
from .models import SystemModel, eval_dynamics

logger = logging.getLogger(__name__)

#: Relative step for central finite differences.
FD_STEP = 1e-6

#: Fixed-point residual above which linearize_at_goal warns.
GOAL_RESIDUAL_WARN = 1e-6


@dataclass(frozen=True)
class LinearModel:
    """Time-invariant linearization z(t+1) = A z(t) + B u(t) + d + w(t).

    Valid on the remaining horizon [k, N-1]. ``r`` is the dynamics value at
    the linearization point (``lin_state``, ``lin_input``) and
    d = r - A @ lin_state - B @ lin_input.
    """

    A: np.ndarray
    B: np.ndarray
    r: np.ndarray
    d: np.ndarray
    k: int
    N: int
    lin_state: np.ndarray
    lin_input: np.ndarray

    def __post_init__(self):
        if not 0 <= self.k < self.N:
            raise ContractError(f"stage k={self.k} outside [0, N={self.N})")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def _fd_jacobian(model: SystemModel, x: np.ndarray, u: np.ndarray, wrt: str) -> np.ndarray:
    base = x if wrt == "x" else u
    cols = []
    for i in range(base.shape[0]):
        h = FD_STEP * max(1.0, abs(base[i]))
        lo, hi = base.copy(), base.copy()
        lo[i] -= h
        hi[i] += h
        if wrt == "x":
            f_hi = eval_dynamics(model, hi, u)
            f_lo = eval_dynamics(model, lo, u)
        else:
            f_hi = eval_dynamics(model, x, hi)
            f_lo = eval_dynamics(model, x, lo)
        cols.append((f_hi - f_lo) / (2.0 * h))
    return np.column_stack(cols)


def linearize_at(model: SystemModel, mu, nu, k: int, N: int) -> LinearModel:
    """Linearize the dynamics at a (state, input) point for horizon [k, N].

    Uses the model's analytic Jacobians when both are supplied, otherwise
    central finite differences.
    """
    if not k < N:
        raise ContractError(f"need k < N, got k={k}, N={N}")
    mu = np.atleast_1d(np.asarray(mu, dtype=float)).reshape(-1)
    nu = np.atleast_1d(np.asarray(nu, dtype=float)).reshape(-1)
    if model.jacobian_x is not None and model.jacobian_u is not None:
        A = np.asarray(model.jacobian_x(mu, nu), dtype=float).reshape(model.n, model.n)
        B = np.asarray(model.jacobian_u(mu, nu), dtype=float).reshape(model.n, model.m)
    else:
        A = _fd_jacobian(model, mu, nu, "x")
        B = _fd_jacobian(model, mu, nu, "u")
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise LinearizationError(f"non-finite Jacobian entries at stage {k}")
    r = eval_dynamics(model, mu, nu)
    d = r - A @ mu - B @ nu
    return LinearModel(A=A, B=B, r=r, d=d, k=k, N=N, lin_state=mu, lin_input=nu)


def linearize_at_goal(model: SystemModel, mu_f, nu_f, k: int, N: int) -> LinearModel:
    """Linearize at the terminal target point instead of the current belief.

    The caller supplies the input ``nu_f`` meant to hold the target fixed;
    a warning is logged when f(mu_f, nu_f) is not a fixed point.
    """
    mu_f = np.atleast_1d(np.asarray(mu_f, dtype=float)).reshape(-1)
    nu_f = np.atleast_1d(np.asarray(nu_f, dtype=float)).reshape(-1)
    residual = float(np.linalg.norm(eval_dynamics(model, mu_f, nu_f) - mu_f))
    if residual > GOAL_RESIDUAL_WARN:
        logger.warning(
            "goal point is not a fixed point: |f(mu_f, nu_f) - mu_f| = %.3e", residual
        )
    return linearize_at(model, mu_f, nu_f, k, N)
