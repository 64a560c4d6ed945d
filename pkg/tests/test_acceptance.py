"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one [PASS]/[FAIL] line (visible with ``pytest -s`` or in the
captured output of failures). The strongly nonlinear benchmark's Monte Carlo
covariance check is a known red: the executed policy steers the true system
far toward the goal, but the small-spread transform cannot track the cubic
stiffness of the wide double-well ensemble, so the true terminal covariance
misses the 15% envelope. The analysis lives in that test's docstring.
"""

import time

import numpy as np
import pytest

from covsteer.belief import GaussianBelief
from covsteer.cli import cmd_steer, cmd_validate
from covsteer.greedy import GreedyConfig, greedy_steer
from covsteer.lgcs import (
    first_law,
    schur_feasible,
    solve_lgcs,
    spectral_feasible,
    terminal_moments,
)
from covsteer.lifted import build_lifted
from covsteer.linearize import linearize_at
from covsteer.models import DuffingParams, duffing_model
from covsteer.montecarlo import simulate_closed_loop
from covsteer.unscented import sigma_points, ut_propagate

from conftest import integrator_model, scalar_lifted

# Quantification of "very close" for the benchmark scenario; exposed here so
# the thresholds are visible alongside the checks that use them.
SEC4_TERMINAL_TOL = 0.05
SEC4_MC_TOL = 0.15

_CHECKED_SOLUTIONS = []  # (label, lifted, belief, goal, solution)


def _report(name: str, ok: bool, detail: str = "") -> bool:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    return ok


# ---------------------------------------------------------------------------
# Scalar steering oracle
# ---------------------------------------------------------------------------


def test_scalar_lgcs_oracle():
    start = time.perf_counter()
    ls = scalar_lifted(a=1.0, b=1.0, d=0.0, w=0.1, H=1)
    b0 = GaussianBelief([0.0], [[1.0]])
    goal = GaussianBelief([1.0], [[0.5]])
    sol = solve_lgcs(ls, b0, goal)
    elapsed = time.perf_counter() - start
    _CHECKED_SOLUTIONS.append(("scalar-oracle", ls, b0, goal, sol))
    gain = first_law(sol).K[0, 0]
    ok = (
        sol.status == "optimal"
        and abs(gain - (-0.3675445)) <= 1e-4
        and abs(sol.cost - 1.1350889) <= 1e-4
        and elapsed < 1.0
    )
    assert _report(
        "scalar LGCS oracle",
        ok,
        f"K={gain:.7f}, cost={sol.cost:.7f}, {elapsed * 1e3:.0f} ms",
    )


# ---------------------------------------------------------------------------
# Linear-Gaussian end-to-end exactness
# ---------------------------------------------------------------------------


def test_linear_gaussian_end_to_end():
    start = time.perf_counter()
    model = integrator_model(w=0.01)
    goal = GaussianBelief([2.0], [[0.5]])
    cfg = GreedyConfig(N=3, goal=goal)
    b0 = GaussianBelief([0.0], [[1.0]])
    run = greedy_steer(model, b0, cfg)
    mu_n = run.beliefs[-1].mean
    cov_n = run.beliefs[-1].cov
    mean_ok = abs(mu_n[0] - 2.0) <= 1e-6
    cov_ok = np.linalg.eigvalsh(cov_n - goal.cov).max() <= 1e-6

    m_samples = 100_000
    rep = simulate_closed_loop(model, run, m_samples, seed=2024)
    rel = 3.0 * np.sqrt(2.0 / m_samples)
    mc_mean_ok = abs(rep.empirical_mean[0] - mu_n[0]) <= rel * max(1.0, abs(mu_n[0]))
    mc_cov_ok = abs(rep.empirical_cov[0, 0] - cov_n[0, 0]) <= rel * cov_n[0, 0]
    elapsed = time.perf_counter() - start

    for t in range(3):
        lm = linearize_at(model, run.beliefs[t].mean, np.zeros(1), t, 3)
        ls = build_lifted(lm, [model.noise_at(s) for s in range(t, 3)])
        sol = solve_lgcs(ls, run.beliefs[t], goal)
        _CHECKED_SOLUTIONS.append((f"linear-e2e-{t}", ls, run.beliefs[t], goal, sol))

    ok = mean_ok and cov_ok and mc_mean_ok and mc_cov_ok and elapsed < 30.0
    assert _report(
        "linear-Gaussian end-to-end exactness",
        ok,
        f"|mu-2|={abs(mu_n[0] - 2):.2e}, cov gap={cov_n[0, 0] - 0.5:.2e}, "
        f"MC cov err={abs(rep.empirical_cov[0, 0] - cov_n[0, 0]):.3e}, {elapsed:.1f} s",
    )


# ---------------------------------------------------------------------------
# Unscented transform
# ---------------------------------------------------------------------------


def test_ut_affine_exactness():
    rng = np.random.default_rng(1234)
    worst = 0.0
    count = 0
    for alpha in (0.05, 0.3, 1.0):
        for _ in range(67):
            if count >= 200:
                break
            n = int(rng.integers(1, 6))
            a = rng.normal(0, 1, (n, n))
            c = rng.normal(0, 1, n)
            raw = rng.normal(0, 1, (n, n))
            cov = raw @ raw.T + 0.3 * np.eye(n)
            w_raw = rng.normal(0, 0.4, (n, n))
            w = w_raw @ w_raw.T
            b = GaussianBelief(rng.normal(0, 1, n), cov)
            out = ut_propagate(lambda x: a @ x + c, sigma_points(b, alpha, 2.0), w)
            err = max(
                np.abs(out.mean - (a @ b.mean + c)).max(),
                np.abs(out.cov - (a @ b.cov @ a.T + w)).max(),
            )
            worst = max(worst, err)
            count += 1
    ok = count == 200 and worst <= 1e-9
    assert _report("UT affine exactness (200 maps)", ok, f"worst error {worst:.2e}")


def test_ut_weight_identities():
    rng = np.random.default_rng(99)
    worst_mean = worst_cov = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        alpha = rng.uniform(0.05, 1.0)
        beta = rng.uniform(0.0, 4.0)
        s = sigma_points(GaussianBelief(np.zeros(n), np.eye(n)), alpha, beta)
        worst_mean = max(worst_mean, abs(s.mean_weights.sum() - 1.0))
        worst_cov = max(worst_cov, abs(s.cov_weights.sum() - (2.0 - alpha**2 + beta)))
    ok = worst_mean <= 1e-12 and worst_cov <= 1e-12
    assert _report(
        "UT weight identities (100 draws)",
        ok,
        f"|sum(gamma)-1|<={worst_mean:.1e}, cov-sum err<={worst_cov:.1e}",
    )


# ---------------------------------------------------------------------------
# Benchmark scenario: wide double-well ensemble steered over one second
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def sec4_run(sec4_model, sec4_beliefs):
    b0, goal = sec4_beliefs
    start = time.perf_counter()
    run = greedy_steer(sec4_model, b0, GreedyConfig(N=100, goal=goal), 0)
    elapsed = time.perf_counter() - start
    return run, elapsed


@pytest.fixture(scope="module")
def sec4_run_n40(sec4_model, sec4_beliefs):
    b0, goal = sec4_beliefs
    start = time.perf_counter()
    run = greedy_steer(sec4_model, b0, GreedyConfig(N=40, goal=goal), 0)
    elapsed = time.perf_counter() - start
    return run, elapsed


def test_sec4_run_all_stages_optimal(sec4_run):
    run, elapsed = sec4_run
    statuses_ok = all(d.status == "optimal" for d in run.diagnostics)
    ok = statuses_ok and run.softened_stages == 0 and elapsed <= 600.0
    assert _report(
        "benchmark N=100: all stages optimal, no slack",
        ok,
        f"{len(run.laws)} stages, {elapsed:.1f} s",
    )


def test_sec4_predicted_terminal_close(sec4_run, sec4_beliefs):
    run, _ = sec4_run
    _, goal = sec4_beliefs
    mean_err = float(np.linalg.norm(run.beliefs[-1].mean - goal.mean))
    lam = float(np.linalg.eigvalsh(run.beliefs[-1].cov - goal.cov).max())
    bound = SEC4_TERMINAL_TOL * float(np.linalg.eigvalsh(goal.cov).max())
    ok = mean_err <= SEC4_TERMINAL_TOL and lam <= bound
    assert _report(
        "benchmark N=100: predicted terminal belief close to goal",
        ok,
        f"|mu_N|={mean_err:.2e}, lam_max={lam:.2e} (bound {bound:.3f})",
    )


def test_sec4_monte_carlo_covariance(sec4_model, sec4_beliefs, sec4_run):
    """KNOWN RED: the true terminal covariance misses the 15% envelope.

    The executed policy steers the true ensemble from diag(6.25, 4) most of
    the way to diag(1.5625, 1), but with the spread parameter 0.05 the
    transform samples the dynamics only 0.07 standard deviations from the
    mean, so the per-stage predictions (and hence the gains) never see the
    cubic stiffness that dominates at |x1| > 2. The shortfall is intrinsic to
    the configured algorithm on this wide double-well ensemble, not a solver
    artifact: an independent brute-force simulation reproduces the same
    empirical covariance to sampling accuracy, and a 25x tighter initial
    ensemble passes this same check with a margin of 500x.
    """
    run, _ = sec4_run
    _, goal = sec4_beliefs
    rep = simulate_closed_loop(sec4_model, run, 10_000, seed=42)
    lam = float(np.linalg.eigvalsh(rep.empirical_cov - goal.cov).max())
    bound = SEC4_MC_TOL * float(np.linalg.eigvalsh(goal.cov).max())
    assert _report(
        "benchmark N=100: Monte Carlo terminal covariance within 15% envelope",
        lam <= bound,
        f"lam_max={lam:.3f} vs bound {bound:.3f}, diverged {rep.n_diverged}",
    )


def test_sec4_reduced_horizon(sec4_model, sec4_beliefs, sec4_run_n40):
    run, elapsed = sec4_run_n40
    _, goal = sec4_beliefs
    statuses_ok = all(d.status == "optimal" for d in run.diagnostics)
    mean_err = float(np.linalg.norm(run.beliefs[-1].mean - goal.mean))
    lam = float(np.linalg.eigvalsh(run.beliefs[-1].cov - goal.cov).max())
    bound = SEC4_TERMINAL_TOL * float(np.linalg.eigvalsh(goal.cov).max())
    ok = (
        statuses_ok
        and run.softened_stages == 0
        and mean_err <= SEC4_TERMINAL_TOL
        and lam <= bound
        and elapsed <= 60.0
    )
    assert _report(
        "benchmark N=40 variant: optimal stages and predicted terminal close, under a minute",
        ok,
        f"{elapsed:.1f} s, |mu_N|={mean_err:.2e}, lam_max={lam:.2e}",
    )


def test_sec4_solutions_recorded(sec4_model, sec4_beliefs, sec4_run):
    # stage re-solves from recorded beliefs feed the self-consistency check
    run, _ = sec4_run
    b0, goal = sec4_beliefs
    for t in (0, 50, 99):
        belief = run.beliefs[t]
        lm = linearize_at(sec4_model, belief.mean, run.nu_hats[t], t, 100)
        ls = build_lifted(lm, [sec4_model.noise_at(s) for s in range(t, 100)])
        sol = solve_lgcs(ls, belief, goal)
        _CHECKED_SOLUTIONS.append((f"benchmark-{t}", ls, belief, goal, sol))
    assert True


# ---------------------------------------------------------------------------
# Solver self-consistency
# ---------------------------------------------------------------------------


def test_solver_self_consistency():
    assert _CHECKED_SOLUTIONS, "earlier acceptance tests must record solutions"
    worst_mean = worst_psd = 0.0
    for label, ls, belief, goal, sol in _CHECKED_SOLUTIONS:
        assert sol.status == "optimal", label
        mean, cov = terminal_moments(sol.L, sol.nu, ls, belief)
        worst_mean = max(worst_mean, float(np.abs(mean - goal.mean).max()))
        worst_psd = max(worst_psd, float(np.linalg.eigvalsh(cov - goal.cov).max()))
    certs_ok = worst_mean <= 1e-7 and worst_psd <= 1e-7

    rng = np.random.default_rng(2718)
    agree = True
    for _ in range(500):
        n = int(rng.integers(1, 4))
        r = int(rng.integers(1, 7))
        raw = rng.normal(0, 1, (n, n))
        sigma_f = raw @ raw.T + 0.4 * np.eye(n)
        m_fac = rng.normal(0, rng.uniform(0.2, 1.3), (n, r))
        if schur_feasible(m_fac, sigma_f) != spectral_feasible(m_fac, sigma_f):
            agree = False
            break
    ok = certs_ok and agree
    assert _report(
        "solver self-consistency",
        ok,
        f"{len(_CHECKED_SOLUTIONS)} solutions, worst mean {worst_mean:.2e}, "
        f"worst psd {worst_psd:.2e}, 500 feasibility checks agree={agree}",
    )


# ---------------------------------------------------------------------------
# Byte determinism of the command line
# ---------------------------------------------------------------------------


def _small_config(tmp_path, out_name):
    text = f"""
[system]
name = "duffing"
tau = 0.01
delta = -1.0
zeta = 0.05
gamma = 0.05
sigma_w = 1.0

[steer]
N = 8
mu0 = [0.0, 0.0]
sigma0 = [[6.25, 0.0], [0.0, 4.0]]
mu_f = [0.0, 0.0]
sigma_f = [[6.5, 0.0], [0.0, 4.2]]

[montecarlo]
samples = 500
seed = 7

[output]
directory = "{(tmp_path / out_name).as_posix()}"
"""
    path = tmp_path / "determinism.toml"
    path.write_text(text)
    return path


def test_cli_byte_determinism(tmp_path):
    cfg = _small_config(tmp_path, "run_a")
    assert cmd_steer(str(cfg), str(tmp_path / "run_a")) == 0
    assert cmd_steer(str(cfg), str(tmp_path / "run_b")) == 0
    steer_ok = all(
        (tmp_path / "run_a" / f).read_bytes() == (tmp_path / "run_b" / f).read_bytes()
        for f in ("policy.json", "beliefs.csv", "ellipses.csv", "sigma_points.csv")
    )
    policy = tmp_path / "run_a" / "policy.json"
    assert cmd_validate(str(cfg), str(policy), 500, 7, str(tmp_path / "val_a")) == 0
    assert cmd_validate(str(cfg), str(policy), 500, 7, str(tmp_path / "val_b")) == 0
    val_ok = all(
        (tmp_path / "val_a" / f).read_bytes() == (tmp_path / "val_b" / f).read_bytes()
        for f in ("mc_report.json", "trajectories.csv")
    )
    assert _report("CLI byte determinism", steer_ok and val_ok)
