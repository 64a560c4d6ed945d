"""Monte Carlo validation of an executed steering policy.

Simulates the true nonlinear closed loop under the per-stage affine laws of a
:class:`~covsteer.greedy.GreedyRun` with sampled initial states and noise,
and reports empirical terminal moments.

Determinism contract: sample ``i`` draws from an RNG substream derived only
from ``(seed, i)``; within a substream the draw order is the raw initial
state (n standard variates) followed by the raw noise, stage by stage
(T * n variates). Results are bitwise reproducible for a given
``(samples, seed)`` and do not change when more samples are appended.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .belief import GaussianBelief, cholesky_sqrt
from .errors import ContractError
from .greedy import GreedyRun
from .models import SystemModel

#: Samples whose state infinity-norm passes this are flagged as diverged.
DIVERGENCE_LIMIT = 1e9

#: Samples per processing chunk; fixed so results are independent of threading.
CHUNK = 4096

_QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class McReport:
    """Empirical terminal moments and bookkeeping of one validation run."""

    samples: int
    seed: int
    empirical_mean: np.ndarray
    empirical_cov: np.ndarray
    n_valid: int
    n_diverged: int
    noise_kind: str
    stage_quantiles: Optional[np.ndarray] = None  # (T+1, len(levels), n)
    quantile_levels: tuple = _QUANTILE_LEVELS
    paths: Optional[np.ndarray] = None  # (P, T+1, n)
    path_indices: List[int] = field(default_factory=list)


def _noise_factors(model: SystemModel, k_start: int, N: int) -> np.ndarray:
    factors = np.zeros((N - k_start, model.n, model.n))
    for idx, t in enumerate(range(k_start, N)):
        w = model.noise_at(t)
        vals, vecs = np.linalg.eigh(w)
        factors[idx] = vecs * np.sqrt(np.maximum(vals, 0.0))
    return factors


def _raw_draws(seed: int, indices: range, n: int, steps: int, kind: str):
    """Per-sample standard draws (zero mean, unit variance) for a chunk."""
    x0_raw = np.empty((len(indices), n))
    w_raw = np.empty((len(indices), steps, n))
    half_width = np.sqrt(3.0)
    for row, i in enumerate(indices):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        if kind == "gaussian":
            x0_raw[row] = rng.standard_normal(n)
            w_raw[row] = rng.standard_normal((steps, n))
        else:
            x0_raw[row] = rng.uniform(-half_width, half_width, n)
            w_raw[row] = rng.uniform(-half_width, half_width, (steps, n))
    return x0_raw, w_raw


def _batch_dynamics(model: SystemModel, states: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    if model.dynamics_batch is not None:
        out = np.asarray(model.dynamics_batch(states, inputs), dtype=float)
        if out.shape == states.shape:
            return out
    out = np.empty_like(states)
    for i in range(states.shape[0]):
        out[i] = model.dynamics(states[i], inputs[i])
    return out


def _run_chunk(
    model: SystemModel,
    gains: np.ndarray,
    offs: np.ndarray,
    chol0: np.ndarray,
    mu0: np.ndarray,
    noise_chol: np.ndarray,
    seed: int,
    indices: range,
    kind: str,
    keep_stages: bool,
):
    steps = gains.shape[0]
    n = mu0.shape[0]
    x0_raw, w_raw = _raw_draws(seed, indices, n, steps, kind)
    states = mu0 + x0_raw @ chol0.T
    alive = np.ones(len(indices), dtype=bool)
    trail = np.empty((steps + 1, len(indices), n)) if keep_stages else None
    if keep_stages:
        trail[0] = states
    for t in range(steps):
        inputs = offs[t] + states @ gains[t].T
        states = _batch_dynamics(model, states, inputs) + w_raw[:, t, :] @ noise_chol[t].T
        with np.errstate(invalid="ignore"):
            ok = np.isfinite(states).all(axis=1) & (np.abs(states).max(axis=1) < DIVERGENCE_LIMIT)
        newly_dead = alive & ~ok
        if newly_dead.any():
            states[newly_dead] = 0.0  # frozen; excluded from the estimates
            alive &= ok
        if keep_stages:
            trail[t + 1] = states
    return states, alive, trail


def simulate_closed_loop(
    model: SystemModel,
    run: GreedyRun,
    samples: int,
    seed: int,
    noise_kind: str = "gaussian",
    n_saved_paths: int = 0,
    with_quantiles: bool = False,
    max_workers: Optional[int] = None,
) -> McReport:
    """Estimate terminal moments of the nonlinear closed loop under ``run``.

    ``noise_kind`` is ``"gaussian"`` or ``"uniform"`` (uniform with matched
    first and second moments, for probing distributional robustness).
    Diverged samples are excluded from the moment estimates and counted.
    ``max_workers`` defaults to the COVSTEER_THREADS environment variable.
    """
    if samples < 2:
        raise ContractError(f"need at least 2 samples, got {samples}")
    if noise_kind not in ("gaussian", "uniform"):
        raise ContractError(f"unknown noise kind '{noise_kind}'")
    if len(run.laws) != run.N - run.k_start:
        raise ContractError("run does not cover its horizon; cannot simulate")
    b0: GaussianBelief = run.beliefs[0]
    if b0.dim != model.n:
        raise ContractError("run initial belief does not match the model dimension")

    steps = run.N - run.k_start
    gains = np.stack([law.K for law in run.laws])
    offs = np.stack([law.upsilon for law in run.laws])
    chol0 = cholesky_sqrt(b0.cov)
    noise_chol = _noise_factors(model, run.k_start, run.N)

    if max_workers is None:
        max_workers = int(os.environ.get("COVSTEER_THREADS", "1") or "1")
    max_workers = max(1, max_workers)

    keep_stages = with_quantiles or n_saved_paths > 0
    chunks = [range(lo, min(lo + CHUNK, samples)) for lo in range(0, samples, CHUNK)]

    def work(idx_range):
        return _run_chunk(
            model, gains, offs, chol0, b0.mean, noise_chol, seed, idx_range, noise_kind, keep_stages
        )

    if max_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    terminal = np.concatenate([r[0] for r in results], axis=0)
    alive = np.concatenate([r[1] for r in results], axis=0)
    trail = np.concatenate([r[2] for r in results], axis=1) if keep_stages else None

    n_valid = int(alive.sum())
    if n_valid < 2:
        raise ContractError("fewer than 2 non-diverged samples; cannot form a covariance")
    good = terminal[alive]
    mean = good.mean(axis=0)
    centered = good - mean
    cov = centered.T @ centered / (n_valid - 1)
    cov = 0.5 * (cov + cov.T)

    quantiles = None
    if with_quantiles:
        quantiles = np.quantile(trail[:, alive, :], _QUANTILE_LEVELS, axis=1).transpose(1, 0, 2)
    paths = None
    saved: List[int] = []
    if n_saved_paths > 0:
        saved = list(range(min(n_saved_paths, samples)))
        paths = trail[:, saved, :].transpose(1, 0, 2).copy()

    return McReport(
        samples=samples,
        seed=seed,
        empirical_mean=mean,
        empirical_cov=cov,
        n_valid=n_valid,
        n_diverged=samples - n_valid,
        noise_kind=noise_kind,
        stage_quantiles=quantiles,
        paths=paths,
        path_indices=saved,
    )
