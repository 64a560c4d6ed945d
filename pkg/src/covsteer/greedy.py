"""Greedy nonlinear covariance steering loop.

Each stage runs three steps from the current belief: relinearize the
dynamics, solve the remaining-horizon covariance steering problem and keep
only its first control law, then predict the next belief by pushing sigma
points through the resulting closed loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .belief import GaussianBelief
from .errors import ConfigError, ContractError, SteeringInfeasibleError
from .lgcs import SteeringSolution, StageLaw, first_law, solve_lgcs
from .lifted import build_lifted
from .linearize import linearize_at, linearize_at_goal
from .models import SystemModel
from .unscented import SigmaSet, moments_from_points, propagate_points, sigma_points

logger = logging.getLogger(__name__)

LINEARIZATION_MODES = ("at_belief", "at_goal")


@dataclass(frozen=True)
class GreedyConfig:
    """Horizon, goal belief, transform and solver settings for one run."""

    N: int
    goal: GaussianBelief
    alpha: float = 0.05
    beta: float = 2.0
    tol_eq: float = 1e-7
    tol_psd: float = 1e-7
    max_iter: int = 50_000
    linearization: str = "at_belief"
    goal_input: Optional[np.ndarray] = None
    soften: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ContractError(f"horizon must be >= 1, got {self.N}")
        if self.linearization not in LINEARIZATION_MODES:
            raise ConfigError(
                f"linearization mode '{self.linearization}' not in {LINEARIZATION_MODES}"
            )


@dataclass
class StageDiagnostics:
    """Per-stage solver summary kept on the run."""

    t: int
    status: str
    cost: float
    mean_residual: float
    psd_violation: float
    iterations: int
    slack: float


@dataclass
class GreedyRun:
    """Executed policy and predicted belief trajectory."""

    k_start: int
    N: int
    laws: List[StageLaw] = field(default_factory=list)
    beliefs: List[GaussianBelief] = field(default_factory=list)
    nu_hats: List[np.ndarray] = field(default_factory=list)
    diagnostics: List[StageDiagnostics] = field(default_factory=list)
    sigma_sets: List[SigmaSet] = field(default_factory=list)
    propagated_points: List[np.ndarray] = field(default_factory=list)

    @property
    def softened_stages(self) -> int:
        return sum(1 for d in self.diagnostics if d.slack > 0.0)


def _stage_solution(
    model: SystemModel,
    belief: GaussianBelief,
    nu_hat: np.ndarray,
    t: int,
    cfg: GreedyConfig,
) -> SteeringSolution:
    if cfg.linearization == "at_goal":
        goal_input = (
            np.zeros(model.m) if cfg.goal_input is None else np.asarray(cfg.goal_input, float)
        )
        lm = linearize_at_goal(model, cfg.goal.mean, goal_input, t, cfg.N)
    else:
        lm = linearize_at(model, belief.mean, nu_hat, t, cfg.N)
    noise = [model.noise_at(s) for s in range(t, cfg.N)]
    ls = build_lifted(lm, noise)
    return solve_lgcs(
        ls,
        belief,
        cfg.goal,
        tol_eq=cfg.tol_eq,
        tol_psd=cfg.tol_psd,
        max_iter=cfg.max_iter,
        soften=cfg.soften,
    )


def greedy_steer(
    model: SystemModel,
    b0: GaussianBelief,
    cfg: GreedyConfig,
    k_start: int = 0,
) -> GreedyRun:
    """Run the greedy loop from stage ``k_start`` to the terminal stage.

    Raises :class:`SteeringInfeasibleError` when a stage subproblem cannot be
    solved (and softening is disabled or also fails).
    """
    if not 0 <= k_start < cfg.N:
        raise ContractError(f"k_start={k_start} outside [0, N={cfg.N})")
    if b0.dim != model.n:
        raise ContractError(f"initial belief dim {b0.dim} does not match model n={model.n}")
    if cfg.goal.dim != model.n:
        raise ContractError("goal belief dimension does not match the model")

    run = GreedyRun(k_start=k_start, N=cfg.N)
    belief = b0
    nu_hat = np.zeros(model.m)
    run.beliefs.append(belief)

    for t in range(k_start, cfg.N):
        run.nu_hats.append(nu_hat)
        sol = _stage_solution(model, belief, nu_hat, t, cfg)
        if sol.status != "optimal":
            raise SteeringInfeasibleError(stage=t, status=sol.status)
        law = first_law(sol)
        run.laws.append(law)
        run.diagnostics.append(
            StageDiagnostics(
                t=t,
                status=sol.status,
                cost=sol.cost,
                mean_residual=sol.mean_residual,
                psd_violation=sol.psd_violation,
                iterations=sol.iterations,
                slack=sol.slack,
            )
        )
        if sol.slack > 0.0:
            logger.warning("stage %d solved with covariance slack %.3e", t, sol.slack)

        def f_cl(x, _law=law):
            return model.dynamics(x, _law.upsilon + _law.K @ x)

        sig = sigma_points(belief, cfg.alpha, cfg.beta)
        pushed = propagate_points(f_cl, sig)
        belief = moments_from_points(pushed, sig, model.noise_at(t))
        run.sigma_sets.append(sig)
        run.propagated_points.append(pushed)
        run.beliefs.append(belief)

        # Expected input at the next stage under the plan just solved; for
        # the final stage there is no next input.
        m = model.m
        if sol.input_plan.shape[0] >= 2 * m:
            nu_hat = np.asarray(sol.input_plan[m : 2 * m], dtype=float)
        else:
            nu_hat = np.zeros(m)

    return run
