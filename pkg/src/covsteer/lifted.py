"""Stacked prediction system over the remaining horizon."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .belief import GaussianBelief
from .errors import ContractError
from .linearize import LinearModel

#: Eigenvalues of a stage noise covariance below this are dropped from its factor.
NOISE_RANK_TOL = 1e-12


@dataclass(frozen=True)
class LiftedSystem:
    """Dense stacked maps from initial state, inputs and noise to all states.

    With H = N - k remaining stages, the stacked state vector
    [z(k); ...; z(N)] equals

        free_resp @ z(k) + input_resp @ u_stack + noise_resp @ (w_stack + offsets)

    ``free_resp`` stacks the powers of A (block i equals A^i), ``input_resp``
    and ``noise_resp`` are strictly block lower triangular, ``offsets`` stacks
    H copies of the affine offset d, ``noise_block_cov`` is the block diagonal
    of the per-stage noise covariances, and ``terminal_pick`` selects the last
    block row. ``noise_factor`` is a block-diagonal factor F of
    ``noise_block_cov`` with per-stage rank truncation (F @ F.T equals the
    block covariance); ``noise_ranks`` records the per-stage ranks.
    """

    n: int
    m: int
    k: int
    N: int
    H: int
    free_resp: np.ndarray
    input_resp: np.ndarray
    noise_resp: np.ndarray
    offsets: np.ndarray
    noise_block_cov: np.ndarray
    terminal_pick: np.ndarray
    noise_factor: np.ndarray
    noise_ranks: tuple


def _stage_noise_factor(w: np.ndarray) -> np.ndarray:
    """Reduced factor F with F @ F.T == w, columns for eigenvalues > tolerance."""
    vals, vecs = np.linalg.eigh(0.5 * (w + w.T))
    keep = vals > NOISE_RANK_TOL
    return vecs[:, keep] * np.sqrt(vals[keep])


def build_lifted(lm: LinearModel, noise_covs: Sequence[np.ndarray]) -> LiftedSystem:
    """Assemble the stacked prediction matrices for the horizon [k, N]."""
    H = lm.N - lm.k
    if H < 1:
        raise ContractError(f"remaining horizon must be >= 1, got {H}")
    if len(noise_covs) != H:
        raise ContractError(f"expected {H} noise covariances, got {len(noise_covs)}")
    n, m = lm.n, lm.m
    A, B = lm.A, lm.B

    # Powers of A by repeated multiplication: pow_a[i] = A^i.
    pow_a = np.empty((H + 1, n, n))
    pow_a[0] = np.eye(n)
    for i in range(1, H + 1):
        pow_a[i] = pow_a[i - 1] @ A

    free_resp = pow_a.reshape((H + 1) * n, n)

    input_resp = np.zeros(((H + 1) * n, H * m))
    noise_resp = np.zeros(((H + 1) * n, H * n))
    for i in range(1, H + 1):
        for j in range(i):
            blk = pow_a[i - j - 1]
            input_resp[i * n : (i + 1) * n, j * m : (j + 1) * m] = blk @ B
            noise_resp[i * n : (i + 1) * n, j * n : (j + 1) * n] = blk

    offsets = np.tile(lm.d, H)

    noise_block_cov = np.zeros((H * n, H * n))
    factors = []
    ranks = []
    for j, w in enumerate(noise_covs):
        w = np.asarray(w, dtype=float)
        noise_block_cov[j * n : (j + 1) * n, j * n : (j + 1) * n] = 0.5 * (w + w.T)
        f = _stage_noise_factor(w)
        factors.append(f)
        ranks.append(f.shape[1])
    total_rank = sum(ranks)
    noise_factor = np.zeros((H * n, total_rank))
    col = 0
    for j, f in enumerate(factors):
        noise_factor[j * n : (j + 1) * n, col : col + f.shape[1]] = f
        col += f.shape[1]

    terminal_pick = np.zeros((n, (H + 1) * n))
    terminal_pick[:, H * n :] = np.eye(n)

    return LiftedSystem(
        n=n,
        m=m,
        k=lm.k,
        N=lm.N,
        H=H,
        free_resp=free_resp,
        input_resp=input_resp,
        noise_resp=noise_resp,
        offsets=offsets,
        noise_block_cov=noise_block_cov,
        terminal_pick=terminal_pick,
        noise_factor=noise_factor,
        noise_ranks=tuple(ranks),
    )


def open_loop_moments(ls: LiftedSystem, b: GaussianBelief) -> GaussianBelief:
    """Terminal mean and covariance under zero feedback and zero input."""
    if b.dim != ls.n:
        raise ContractError(f"belief dim {b.dim} does not match lifted system n={ls.n}")
    pick = ls.terminal_pick
    mean = pick @ (ls.free_resp @ b.mean + ls.noise_resp @ ls.offsets)
    cov = pick @ (
        ls.free_resp @ b.cov @ ls.free_resp.T
        + ls.noise_resp @ ls.noise_block_cov @ ls.noise_resp.T
    ) @ pick.T
    return GaussianBelief(mean, cov)
