"""Nonlinear system models: generic interface, registry, Duffing benchmark."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .belief import psd_floor
from .errors import ConfigError, ContractError

Dynamics = Callable[[np.ndarray, np.ndarray], np.ndarray]
Jacobian = Callable[[np.ndarray, np.ndarray], np.ndarray]
NoiseCov = Callable[[int], np.ndarray]


@dataclass(frozen=True)
class SystemModel:
    """Discrete-time stochastic system x(t+1) = f(x(t), u(t)) + w(t).

    ``dynamics`` maps a state vector and an input vector to the next state,
    noise-free. ``noise_cov`` maps a stage index to the n x n process noise
    covariance. Analytic Jacobians are optional; callers fall back to finite
    differences when they are absent. ``dynamics_batch``, when provided, must
    accept (M, n) states and (M, m) inputs and is used to vectorize Monte
    Carlo rollouts. Instances are immutable and dynamics evaluation is pure,
    so models are safe to share across concurrent workers.
    """

    n: int
    m: int
    dynamics: Dynamics
    noise_cov: NoiseCov
    jacobian_x: Optional[Jacobian] = None
    jacobian_u: Optional[Jacobian] = None
    dynamics_batch: Optional[Dynamics] = None
    name: str = ""

    def noise_at(self, t: int) -> np.ndarray:
        """Stage-t noise covariance, symmetrized with tiny negatives clipped."""
        w = np.asarray(self.noise_cov(t), dtype=float)
        if w.shape != (self.n, self.n):
            raise ContractError(
                f"noise covariance at stage {t} has shape {w.shape}, expected {(self.n, self.n)}"
            )
        sym = 0.5 * (w + w.T)
        w_min = np.linalg.eigvalsh(sym).min()
        if w_min < -1e-12:
            raise ContractError(
                f"noise covariance at stage {t} has eigenvalue {w_min:.3e} < -1e-12"
            )
        if w_min < 0.0:
            sym = psd_floor(sym, 0.0)
        return sym


def eval_dynamics(model: SystemModel, x, u) -> np.ndarray:
    """Evaluate the noise-free dynamics at a single (state, input) pair."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
    u = np.atleast_1d(np.asarray(u, dtype=float)).reshape(-1)
    if x.shape[0] != model.n:
        raise ContractError(f"state has dim {x.shape[0]}, model expects {model.n}")
    if u.shape[0] != model.m:
        raise ContractError(f"input has dim {u.shape[0]}, model expects {model.m}")
    out = np.asarray(model.dynamics(x, u), dtype=float).reshape(-1)
    if out.shape[0] != model.n:
        raise ContractError(f"dynamics returned dim {out.shape[0]}, expected {model.n}")
    return out


@dataclass(frozen=True)
class DuffingParams:
    """Parameters of the discrete Duffing-type benchmark.

    ``tau`` is the step size, ``delta``/``zeta``/``gamma_damp`` the linear,
    cubic and damping coefficients, ``sigma_w`` the noise intensity feeding
    the velocity state (variance tau * sigma_w**2 per step).
    """

    tau: float
    delta: float
    zeta: float
    gamma_damp: float
    sigma_w: float = 1.0


def duffing_model(p: DuffingParams) -> SystemModel:
    """Two-state Duffing-type oscillator with control and noise on state 2."""
    if not p.tau > 0.0:
        raise ConfigError(f"tau must be positive, got {p.tau}")
    if p.sigma_w < 0.0:
        raise ConfigError(f"sigma_w must be nonnegative, got {p.sigma_w}")
    tau, delta, zeta, gam = p.tau, p.delta, p.zeta, p.gamma_damp

    def f(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        u0 = u[..., 0]
        y1 = x1 + tau * x2
        y2 = x2 - tau * (delta * x1 + zeta * x1**3 + gam * x2) + tau * u0
        return np.stack([y1, y2], axis=-1)

    def jac_x(x, u):
        x1 = float(np.asarray(x, dtype=float).reshape(-1)[0])
        return np.array(
            [
                [1.0, tau],
                [-tau * (delta + 3.0 * zeta * x1 * x1), 1.0 - tau * gam],
            ]
        )

    def jac_u(x, u):
        return np.array([[0.0], [tau]])

    w_mat = np.diag([0.0, tau * p.sigma_w**2])

    return SystemModel(
        n=2,
        m=1,
        dynamics=f,
        noise_cov=lambda t: w_mat,
        jacobian_x=jac_x,
        jacobian_u=jac_u,
        dynamics_batch=f,
        name="duffing",
    )


def _build_duffing(params: dict) -> SystemModel:
    known = {"tau", "delta", "zeta", "gamma", "gamma_damp", "sigma_w"}
    unknown = set(params) - known
    if unknown:
        raise ConfigError(f"unknown duffing parameter(s): {sorted(unknown)}")
    try:
        p = DuffingParams(
            tau=float(params["tau"]),
            delta=float(params["delta"]),
            zeta=float(params["zeta"]),
            gamma_damp=float(params.get("gamma_damp", params.get("gamma", 0.0))),
            sigma_w=float(params.get("sigma_w", 1.0)),
        )
    except KeyError as exc:
        raise ConfigError(f"duffing parameter missing: {exc.args[0]}") from exc
    return duffing_model(p)


_MODEL_BUILDERS: dict[str, Callable[[dict], SystemModel]] = {"duffing": _build_duffing}


def register_model(name: str, builder: Callable[[dict], SystemModel]) -> None:
    """Register a model factory under a config-selectable name."""
    _MODEL_BUILDERS[name] = builder


def build_model(name: str, params: dict) -> SystemModel:
    """Instantiate a registered model by name; unknown names are config errors."""
    try:
        builder = _MODEL_BUILDERS[name]
    except KeyError:
        raise ConfigError(
            f"unknown system model '{name}'; registered: {sorted(_MODEL_BUILDERS)}"
        ) from None
    return builder(params)
