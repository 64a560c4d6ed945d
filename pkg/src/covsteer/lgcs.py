"""Linearized Gaussian covariance steering over one remaining horizon.

Solves, in the convexified decision variables (causal gain matrix L, input
offset stack nu),

    minimize    E[u' u]
    subject to  terminal mean equals the goal mean,
                terminal covariance bounded above by the goal covariance,

for the stacked linear system held by a :class:`~covsteer.lifted.LiftedSystem`.

Solver notes
------------
The cost and both constraints depend on (L, nu) only through two images:

* ``ubar = L @ g + nu`` with ``g`` the stacked open-loop mean, i.e. the
  expected input plan (nu is free, so ubar is a free variable), and
* ``Y = L @ resp``, where ``resp = [free_resp @ S0, noise_resp @ F]`` stacks
  the responses to the whitened initial state and the whitened stage noises.

Causality of L makes Y exactly a "staircase" matrix: input block row i may
touch the initial-state columns and noise columns of stages before i, and any
such staircase Y is reachable (the whitened responses have full row rank
stage by stage). The terminal mean constraint is affine in ubar alone and is
solved in closed form (minimum-norm least squares). The covariance bound
becomes a unit spectral-norm ball on the whitened terminal response, affine
in Y. That part is solved by operator splitting: alternate a closed-form
regularized least-squares step in Y (one small Gram factorization per noise
stage, reused across iterations) with a projection onto the spectral ball by
singular-value clipping, plus standard scaled dual updates. A causal L is
recovered from the converged Y by block-row minimum-norm solves, and the
returned solution is certified by independently re-evaluating the terminal
moments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .belief import GaussianBelief, cholesky_sqrt
from .errors import ContractError, PolicyExtractionError
from .lifted import LiftedSystem

logger = logging.getLogger(__name__)

#: Absolute stop tolerance on the splitting residuals.
STOP_TOL = 1e-8

#: Unscaled dual norm beyond which the subproblem is declared infeasible.
DUAL_BLOWUP = 1e8

#: Consecutive non-improving iterations (with large residual) before giving up.
STALL_LIMIT = 500

#: Penalty weight per unit of covariance slack, times trace(goal.cov)/n.
SOFTEN_PENALTY = 1e6


def causal_mask(H: int, n: int, m: int) -> np.ndarray:
    """Boolean support pattern of a causal gain matrix (block col H is zero)."""
    mask = np.zeros((H * m, (H + 1) * n), dtype=bool)
    for i in range(H):
        mask[i * m : (i + 1) * m, : (i + 1) * n] = True
    return mask


@dataclass(frozen=True)
class CausalGainMatrix:
    """Block-lower-triangular feedback variable of the convexified program."""

    mat: np.ndarray
    H: int
    n: int
    m: int

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=float)
        expect = (self.H * self.m, (self.H + 1) * self.n)
        if mat.shape != expect:
            raise ContractError(f"gain matrix shape {mat.shape}, expected {expect}")
        outside = mat[~causal_mask(self.H, self.n, self.m)]
        if outside.size and np.abs(outside).max() > 1e-9:
            raise ContractError("gain matrix has entries outside the causal pattern")
        cleaned = np.where(causal_mask(self.H, self.n, self.m), mat, 0.0)
        cleaned.setflags(write=False)
        object.__setattr__(self, "mat", cleaned)

    def block(self, i: int, j: int) -> np.ndarray:
        return self.mat[i * self.m : (i + 1) * self.m, j * self.n : (j + 1) * self.n]


@dataclass(frozen=True)
class StageLaw:
    """Affine control law u = upsilon + K x executed at one stage."""

    K: np.ndarray
    upsilon: np.ndarray
    t: int


@dataclass
class SteeringSolution:
    """Result of one covariance steering solve."""

    L: CausalGainMatrix
    nu: np.ndarray
    cost: float
    mean_residual: float
    psd_violation: float
    iterations: int
    status: str
    stage: int
    slack: float = 0.0
    input_plan: np.ndarray = field(default=None, repr=False)
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")


def _as_gain(L, ls: LiftedSystem) -> np.ndarray:
    if isinstance(L, CausalGainMatrix):
        return L.mat
    return np.asarray(L, dtype=float).reshape(ls.H * ls.m, (ls.H + 1) * ls.n)


def _mean_stack(ls: LiftedSystem, b: GaussianBelief) -> np.ndarray:
    return ls.free_resp @ b.mean + ls.noise_resp @ ls.offsets


def _resp_factor(ls: LiftedSystem, b: GaussianBelief) -> np.ndarray:
    s0 = cholesky_sqrt(b.cov)
    return np.hstack([ls.free_resp @ s0, ls.noise_resp @ ls.noise_factor])


def expected_input_plan(L, nu, ls: LiftedSystem, b: GaussianBelief) -> np.ndarray:
    """Mean of the stacked input under the policy (L, nu) from belief b."""
    mat = _as_gain(L, ls)
    return mat @ _mean_stack(ls, b) + np.asarray(nu, dtype=float).reshape(-1)


def predicted_cost(L, nu, ls: LiftedSystem, b: GaussianBelief) -> float:
    """Expected total squared input E[u' u] under the policy (L, nu)."""
    mat = _as_gain(L, ls)
    ubar = expected_input_plan(mat, nu, ls, b)
    l_free = mat @ ls.free_resp
    l_noise = mat @ ls.noise_resp
    return float(
        ubar @ ubar
        + np.trace(l_free @ b.cov @ l_free.T)
        + np.trace(l_noise @ ls.noise_block_cov @ l_noise.T)
    )


def terminal_moments(L, nu, ls: LiftedSystem, b: GaussianBelief):
    """Terminal state mean and covariance under the policy (L, nu)."""
    mat = _as_gain(L, ls)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    g = _mean_stack(ls, b)
    pick = ls.terminal_pick
    mean = pick @ (g + ls.input_resp @ (mat @ g) + ls.input_resp @ nu)
    resp = _resp_factor(ls, b)
    m_fac = pick @ (resp + ls.input_resp @ (mat @ resp))
    return mean, m_fac @ m_fac.T


def spectral_feasible(m_fac: np.ndarray, sigma_f: np.ndarray, tol: float = 1e-9) -> bool:
    """Terminal bound check via the whitened spectral norm."""
    lf = cholesky_sqrt(sigma_f)
    white = scipy.linalg.solve_triangular(lf, m_fac, lower=True)
    return float(np.linalg.svd(white, compute_uv=False)[0]) <= 1.0 + tol


def schur_feasible(m_fac: np.ndarray, sigma_f: np.ndarray, tol: float = 1e-9) -> bool:
    """Terminal bound check via the block matrix [[sigma_f, M], [M', I]]."""
    n, r = m_fac.shape
    block = np.block([[sigma_f, m_fac], [m_fac.T, np.eye(r)]])
    return float(np.linalg.eigvalsh(block).min()) >= -tol


def transform_gains(gains, upsilon, ls: LiftedSystem):
    """Map stage-feedback variables (K stack, upsilon stack) to (L, nu)."""
    gains = _as_gain(gains, ls)
    upsilon = np.asarray(upsilon, dtype=float).reshape(-1)
    t_mat = np.eye(gains.shape[1]) - ls.input_resp @ gains
    l_mat = scipy.linalg.solve_triangular(t_mat.T, gains.T, lower=False, unit_diagonal=True).T
    nu = upsilon + l_mat @ (ls.input_resp @ upsilon)
    return CausalGainMatrix(l_mat, ls.H, ls.n, ls.m), nu


def recover_laws(L, nu, ls: LiftedSystem):
    """Per-stage affine laws from (L, nu) by block forward substitution."""
    mat = _as_gain(L, ls)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    t_big = np.eye(mat.shape[1]) + ls.input_resp @ mat
    gains = scipy.linalg.solve_triangular(t_big.T, mat.T, lower=False, unit_diagonal=True).T
    t_small = np.eye(mat.shape[0]) + mat @ ls.input_resp
    ups = scipy.linalg.solve_triangular(t_small, nu, lower=True, unit_diagonal=True)
    laws = []
    n, m = ls.n, ls.m
    for i in range(ls.H):
        laws.append(
            StageLaw(
                K=gains[i * m : (i + 1) * m, i * n : (i + 1) * n].copy(),
                upsilon=ups[i * m : (i + 1) * m].copy(),
                t=ls.k + i,
            )
        )
    return laws


def first_law(sol: SteeringSolution) -> StageLaw:
    """First control law of an optimal solution; it is memoryless by structure."""
    if sol.status != "optimal":
        raise PolicyExtractionError(
            f"cannot extract a law from a solution with status '{sol.status}'"
        )
    m, n = sol.L.m, sol.L.n
    return StageLaw(K=sol.L.mat[:m, :n].copy(), upsilon=sol.nu[:m].copy(), t=sol.stage)


def _clip_spectral(mat: np.ndarray, radius: float = 1.0) -> np.ndarray:
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    return (u * np.minimum(s, radius)) @ vt


class _StageProblem:
    """Whitened reduced data for one covariance steering solve."""

    def __init__(self, ls: LiftedSystem, b: GaussianBelief, goal_cov: np.ndarray):
        self.ls = ls
        n, m, H = ls.n, ls.m, ls.H
        self.resp = _resp_factor(ls, b)
        self.mean_stack = _mean_stack(ls, b)
        self.term_input = ls.terminal_pick @ ls.input_resp  # n x mH
        lf = cholesky_sqrt(goal_cov)
        self.white_open = scipy.linalg.solve_triangular(
            lf, ls.terminal_pick @ self.resp, lower=True
        )  # n x (n + R)
        self.white_input = scipy.linalg.solve_triangular(lf, self.term_input, lower=True)

        # Column q of the whitened terminal response may receive feedback only
        # from input block rows >= suffix_of_col[q].
        ranks = ls.noise_ranks
        suffix = [0] * n
        for j, r in enumerate(ranks):
            suffix.extend([j + 1] * r)
        self.suffix_of_col = np.asarray(suffix, dtype=int)
        self.n_col = self.white_open.shape[1]

        # Suffix Gram matrices of the whitened input blocks and their eigen pairs.
        blocks = self.white_input.reshape(n, H, m)
        grams = np.zeros((H + 1, n, n))
        for s in range(H - 1, -1, -1):
            d_s = blocks[:, s, :]
            grams[s] = grams[s + 1] + d_s @ d_s.T
        self.grams = grams
        self.gram_w, self.gram_v = np.linalg.eigh(grams)

    def uncontrollable_floor(self) -> np.ndarray:
        """Whitened Gram of the terminal response restricted to directions no
        feedback can touch; a lower bound on the whitened terminal covariance."""
        floor = np.zeros((self.ls.n, self.ls.n))
        w_scale = max(1.0, float(self.gram_w.max(initial=0.0)))
        for s in range(self.ls.H + 1):
            cols = self.suffix_of_col == s
            if not cols.any():
                continue
            null = self.gram_w[s] <= 1e-12 * w_scale
            if not null.any():
                continue
            v_null = self.gram_v[s][:, null]
            c_perp = v_null @ (v_null.T @ self.white_open[:, cols])
            floor += c_perp @ c_perp.T
        return floor

    def per_col(self, arr: np.ndarray) -> np.ndarray:
        return arr[self.suffix_of_col]

    def shrink_maps(self, rho: float) -> np.ndarray:
        """Per-suffix maps rho*Om(2I + rho*Om)^{-1} applied in the x-step."""
        gain = rho * self.gram_w / (2.0 + rho * self.gram_w)
        return np.einsum("sij,sj,skj->sik", self.gram_v, gain, self.gram_v)

    def materialize_rows(self, rho: float, t_mat: np.ndarray) -> np.ndarray:
        """Whitened-noise response Y of the x-step solution for targets t_mat."""
        n, m, H = self.ls.n, self.ls.m, self.ls.H
        y_mat = np.zeros((H * m, self.n_col))
        for s in range(H):
            cols = self.suffix_of_col == s
            if not cols.any():
                continue
            solve = (self.gram_v[s] * (rho / (2.0 + rho * self.gram_w[s]))) @ self.gram_v[s].T
            y_mat[s * m :, cols] = self.white_input[:, s * m :].T @ (solve @ t_mat[:, cols])
        return y_mat


def _recover_causal_gain(prob: _StageProblem, y_mat: np.ndarray) -> CausalGainMatrix:
    """Minimum-norm causal L with L @ resp == Y, block row by block row."""
    ls = prob.ls
    n, m, H = ls.n, ls.m, ls.H
    ranks = ls.noise_ranks
    mat = np.zeros((H * m, (H + 1) * n))
    col_hi = n
    for i in range(H):
        rows = prob.resp[: (i + 1) * n, :col_hi]
        target = y_mat[i * m : (i + 1) * m, :col_hi]
        sol, *_ = np.linalg.lstsq(rows.T, target.T, rcond=None)
        mat[i * m : (i + 1) * m, : (i + 1) * n] = sol.T
        if i < len(ranks):
            col_hi += ranks[i]
    return CausalGainMatrix(mat, H, n, m)


def _solve_fixed(
    ls: LiftedSystem,
    b_init: GaussianBelief,
    goal_mean: np.ndarray,
    goal_cov: np.ndarray,
    tol_eq: float,
    tol_psd: float,
    max_iter: int,
    over_relax: float = 1.7,
    rho: float = 1.0,
) -> SteeringSolution:
    n, m, H = ls.n, ls.m, ls.H
    prob = _StageProblem(ls, b_init, goal_cov)

    def failed(status: str, iterations: int) -> SteeringSolution:
        zero = CausalGainMatrix(np.zeros((H * m, (H + 1) * n)), H, n, m)
        return SteeringSolution(
            L=zero,
            nu=np.zeros(H * m),
            cost=float("nan"),
            mean_residual=float("inf"),
            psd_violation=float("inf"),
            iterations=iterations,
            status=status,
            stage=ls.k,
        )

    # Expected input plan: minimum-norm solve of the terminal mean constraint.
    b_mean = goal_mean - ls.terminal_pick @ prob.mean_stack
    ubar, *_ = np.linalg.lstsq(prob.term_input, b_mean, rcond=None)
    mean_gap = np.abs(prob.term_input @ ubar - b_mean).max(initial=0.0)
    if mean_gap > max(tol_eq, 1e-10 * max(1.0, float(np.abs(b_mean).max(initial=0.0)))):
        logger.info("stage %d: terminal mean unreachable (gap %.3e)", ls.k, mean_gap)
        return failed("infeasible", 0)

    lam_goal = float(np.linalg.eigvalsh(goal_cov).max())
    lf = cholesky_sqrt(goal_cov)
    floor = prob.uncontrollable_floor()
    floor_violation = float(np.linalg.eigvalsh(lf @ floor @ lf.T - goal_cov).max())
    if floor_violation > tol_psd:
        logger.info(
            "stage %d: unavoidable terminal covariance excess %.3e > tol %.1e",
            ls.k,
            floor_violation,
            tol_psd,
        )
        return failed("infeasible", 0)

    # Inflating the ball radius by part of tol_psd keeps problems that are
    # feasible only up to the tolerance strictly feasible for the splitting;
    # the certified violation stays below tol_psd/2 after clean convergence.
    radius = 1.0 + tol_psd / (6.0 * max(1.0, lam_goal))
    stop_tol = min(STOP_TOL, tol_psd / (12.0 * max(1.0, lam_goal)))

    c_mat = prob.white_open
    shrink = prob.per_col(prob.shrink_maps(rho))
    grams_pc = prob.per_col(prob.grams)
    z_mat = _clip_spectral(c_mat, radius)
    u_mat = np.zeros_like(z_mat)

    def finish(iterations: int, r_prim: float, r_dual: float) -> SteeringSolution:
        t_fin = z_mat - u_mat - c_mat
        y_mat = prob.materialize_rows(rho, t_fin)
        gain = _recover_causal_gain(prob, y_mat)
        nu = ubar - gain.mat @ prob.mean_stack
        mean, cov = terminal_moments(gain, nu, ls, b_init)
        mean_residual = float(np.abs(mean - goal_mean).max(initial=0.0))
        psd_violation = max(float(np.linalg.eigvalsh(cov - goal_cov).max()), 0.0)
        certified = mean_residual <= tol_eq and psd_violation <= tol_psd
        return SteeringSolution(
            L=gain,
            nu=nu,
            cost=predicted_cost(gain, nu, ls, b_init),
            mean_residual=mean_residual,
            psd_violation=psd_violation,
            iterations=iterations,
            status="optimal" if certified else "max_iter",
            stage=ls.k,
            input_plan=ubar,
            primal_residual=r_prim,
            dual_residual=r_dual,
        )

    r_prim = r_dual = float("nan")
    plateau_mark = float("inf")
    for it in range(1, max_iter + 1):
        t_mat = z_mat - u_mat - c_mat
        v_x = c_mat + np.einsum("qij,jq->iq", shrink, t_mat)
        v_rel = over_relax * v_x + (1.0 - over_relax) * z_mat
        w_mat = v_rel + u_mat
        z_new = _clip_spectral(w_mat, radius)
        u_mat = w_mat - z_new
        dz = z_new - z_mat
        r_prim = float(np.linalg.norm(v_x - z_new))
        r_dual = rho * float(
            np.sqrt(max(np.einsum("iq,qij,jq->", dz, grams_pc, dz), 0.0))
        )
        z_mat = z_new

        if r_prim <= stop_tol and r_dual <= stop_tol:
            return finish(it, r_prim, r_dual)
        if rho * float(np.linalg.norm(u_mat)) > DUAL_BLOWUP:
            logger.info("stage %d: dual blow-up after %d iterations", ls.k, it)
            return failed("infeasible", it)
        # A residual that stops shrinking means the exact problem sits on (or
        # just past) the constraint boundary; let the certificate arbitrate.
        if it % STALL_LIMIT == 0:
            if r_prim > 0.98 * plateau_mark:
                candidate = finish(it, r_prim, r_dual)
                if candidate.status == "optimal":
                    return candidate
                logger.info(
                    "stage %d: residual stalled at %.3e after %d iterations",
                    ls.k,
                    r_prim,
                    it,
                )
                return failed("infeasible", it)
            plateau_mark = r_prim
        # Residual balancing keeps both residuals on the same scale.
        if it % 25 == 0:
            if r_prim > 10.0 * r_dual and rho < 1e8:
                rho *= 2.0
                u_mat *= 0.5
                shrink = prob.per_col(prob.shrink_maps(rho))
            elif r_dual > 10.0 * r_prim and rho > 1e-8:
                rho *= 0.5
                u_mat *= 2.0
                shrink = prob.per_col(prob.shrink_maps(rho))

    return finish(max_iter, r_prim, r_dual)


def solve_lgcs(
    ls: LiftedSystem,
    b_init: GaussianBelief,
    goal: GaussianBelief,
    tol_eq: float = 1e-7,
    tol_psd: float = 1e-7,
    max_iter: int = 50_000,
    soften: bool = False,
) -> SteeringSolution:
    """Solve the stage covariance steering problem from ``b_init`` to ``goal``.

    Returns a solution with status ``optimal`` (feasibility certified by an
    independent terminal-moment evaluation), ``infeasible``, or ``max_iter``.
    With ``soften`` enabled, an infeasible stage is re-solved against the
    smallest inflation ``goal.cov + slack * I`` found by bisection; the slack
    is reported on the solution and priced into its cost.
    """
    if b_init.dim != ls.n or goal.dim != ls.n:
        raise ContractError("belief dimensions do not match the lifted system")
    base = _solve_fixed(ls, b_init, goal.mean, goal.cov, tol_eq, tol_psd, max_iter)
    if base.status != "infeasible" or not soften:
        return base

    logger.info("stage %d: softening the terminal covariance bound", ls.k)
    eye = np.eye(ls.n)

    def probe(slack: float) -> bool:
        trial = _solve_fixed(
            ls, b_init, goal.mean, goal.cov + slack * eye, tol_eq, tol_psd, max_iter=4000
        )
        return trial.status == "optimal"

    trace_scale = float(np.trace(goal.cov)) / ls.n
    hi = max(1e-6, trace_scale)
    attempts = 0
    while not probe(hi):
        hi *= 4.0
        attempts += 1
        if attempts > 40:
            return base
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if probe(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * max(1.0, trace_scale):
            break
    soft = _solve_fixed(
        ls, b_init, goal.mean, goal.cov + hi * eye, tol_eq, tol_psd, max_iter
    )
    soft.slack = hi
    soft.cost = soft.cost + SOFTEN_PENALTY * trace_scale * hi
    return soft
