"""Batch front end: config parsing, orchestration, figure-data export.

Exit codes: 0 success, 1 usage or config errors, 2 infeasible steering.
All floats are serialized with 17 significant digits so files round-trip
exactly and reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .belief import GaussianBelief, ellipse_at_level, one_sigma_ellipse
from .errors import ConfigError, CovsteerError, SteeringInfeasibleError
from .greedy import GreedyConfig, GreedyRun, greedy_steer
from .lgcs import StageLaw
from .models import SystemModel, build_model
from .montecarlo import simulate_closed_loop

logger = logging.getLogger(__name__)

_FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return _FLOAT_FMT % float(x)


@dataclass
class ExperimentConfig:
    """Parsed configuration with defaults applied."""

    system_name: str
    system_params: dict
    N: int
    mu0: np.ndarray
    sigma0: np.ndarray
    mu_f: np.ndarray
    sigma_f: np.ndarray
    alpha: float = 0.05
    beta: float = 2.0
    linearization: str = "at_belief"
    nu_f: Optional[np.ndarray] = None
    tol_eq: float = 1e-7
    tol_psd: float = 1e-7
    max_iter: int = 50_000
    soften: bool = False
    samples: int = 10_000
    seed: int = 0
    out_dir: str = "out"


def _require(table: dict, key: str, section: str):
    if key not in table:
        raise ConfigError(f"missing key '{key}' in [{section}]")
    return table[key]


def _as_matrix(value, key: str, n: int, require_spd: bool) -> np.ndarray:
    mat = np.asarray(value, dtype=float)
    if mat.shape != (n, n):
        raise ConfigError(f"'{key}' must be a {n}x{n} matrix, got shape {mat.shape}")
    if np.abs(mat - mat.T).max() > 1e-10:
        raise ConfigError(f"'{key}' must be symmetric")
    if require_spd and np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() <= 0.0:
        raise ConfigError(f"'{key}' must be positive definite")
    return mat


def parse_config(path) -> ExperimentConfig:
    """Load and validate a TOML experiment configuration."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None

    system = raw.get("system", {})
    name = _require(system, "name", "system")
    params = {k: v for k, v in system.items() if k != "name"}

    steer = raw.get("steer", {})
    n_horizon = int(_require(steer, "N", "steer"))
    if n_horizon < 1:
        raise ConfigError(f"'N' must be >= 1, got {n_horizon}")
    mu0 = np.asarray(_require(steer, "mu0", "steer"), dtype=float).reshape(-1)
    n = mu0.shape[0]
    sigma0 = _as_matrix(_require(steer, "sigma0", "steer"), "sigma0", n, True)
    mu_f = np.asarray(_require(steer, "mu_f", "steer"), dtype=float).reshape(-1)
    if mu_f.shape[0] != n:
        raise ConfigError(f"'mu_f' has dim {mu_f.shape[0]}, expected {n}")
    sigma_f = _as_matrix(_require(steer, "sigma_f", "steer"), "sigma_f", n, True)
    linearization = str(steer.get("linearization", "at_belief"))
    if linearization not in ("at_belief", "at_goal"):
        raise ConfigError(f"'linearization' must be at_belief or at_goal, got {linearization}")
    nu_f = steer.get("nu_f")
    if nu_f is not None:
        nu_f = np.asarray(nu_f, dtype=float).reshape(-1)

    solver = raw.get("solver", {})
    mc = raw.get("montecarlo", {})
    output = raw.get("output", {})

    return ExperimentConfig(
        system_name=str(name),
        system_params=params,
        N=n_horizon,
        mu0=mu0,
        sigma0=sigma0,
        mu_f=mu_f,
        sigma_f=sigma_f,
        alpha=float(steer.get("alpha", 0.05)),
        beta=float(steer.get("beta", 2.0)),
        linearization=linearization,
        nu_f=nu_f,
        tol_eq=float(solver.get("tol_eq", 1e-7)),
        tol_psd=float(solver.get("tol_psd", 1e-7)),
        max_iter=int(solver.get("max_iter", 50_000)),
        soften=bool(solver.get("soften", False)),
        samples=int(mc.get("samples", 10_000)),
        seed=int(mc.get("seed", 0)),
        out_dir=str(output.get("directory", "out")),
    )


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, np.ndarray):
        return _toml_value(value.tolist())
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value of type {type(value)!r}")


def emit_config(cfg: ExperimentConfig) -> str:
    """Serialize the effective configuration (defaults applied) as TOML."""
    lines = ["[system]", f"name = {json.dumps(cfg.system_name)}"]
    for key in sorted(cfg.system_params):
        lines.append(f"{key} = {_toml_value(cfg.system_params[key])}")
    lines += [
        "",
        "[steer]",
        f"N = {cfg.N}",
        f"mu0 = {_toml_value(cfg.mu0)}",
        f"sigma0 = {_toml_value(cfg.sigma0)}",
        f"mu_f = {_toml_value(cfg.mu_f)}",
        f"sigma_f = {_toml_value(cfg.sigma_f)}",
        f"alpha = {_toml_value(cfg.alpha)}",
        f"beta = {_toml_value(cfg.beta)}",
        f"linearization = {json.dumps(cfg.linearization)}",
    ]
    if cfg.nu_f is not None:
        lines.append(f"nu_f = {_toml_value(cfg.nu_f)}")
    lines += [
        "",
        "[solver]",
        f"tol_eq = {_toml_value(cfg.tol_eq)}",
        f"tol_psd = {_toml_value(cfg.tol_psd)}",
        f"max_iter = {cfg.max_iter}",
        f"soften = {_toml_value(cfg.soften)}",
        "",
        "[montecarlo]",
        f"samples = {cfg.samples}",
        f"seed = {cfg.seed}",
        "",
        "[output]",
        f"directory = {json.dumps(cfg.out_dir)}",
        "",
    ]
    return "\n".join(lines)


def _write_csv(path: Path, header: List[str], rows) -> None:
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _write_beliefs_csv(path: Path, run: GreedyRun, n: int) -> None:
    header = ["t"] + [f"mu{i}" for i in range(n)] + [
        f"sigma{i}{j}" for i in range(n) for j in range(n)
    ]
    rows = []
    for t, b in zip(range(run.k_start, run.N + 1), run.beliefs):
        rows.append([t] + [float(v) for v in b.mean] + [float(v) for v in b.cov.reshape(-1)])
    _write_csv(path, header, rows)


def _write_ellipses_csv(path: Path, run: GreedyRun, cfg: ExperimentConfig, n: int) -> None:
    header = ["t", "kind"] + [f"c{i}" for i in range(n)] + [
        f"s{i}{j}" for i in range(n) for j in range(n)
    ] + ["level"]
    rows = []

    def add(t, kind, ell):
        rows.append(
            [t, kind]
            + [float(v) for v in ell.center]
            + [float(v) for v in ell.shape.reshape(-1)]
            + [float(ell.level)]
        )

    for t, b in zip(range(run.k_start, run.N + 1), run.beliefs):
        add(t, "belief", one_sigma_ellipse(b))
    goal = GaussianBelief(cfg.mu_f, cfg.sigma_f)
    add(run.N, "goal", one_sigma_ellipse(goal))
    # Rings holding the sigma points of the initial and goal beliefs.
    ring_level = 2.0 + (cfg.alpha**2 * n - n)
    if ring_level > 0.0:
        add(run.k_start, "ut_init", ellipse_at_level(run.beliefs[0], ring_level))
        add(run.N, "ut_goal", ellipse_at_level(goal, ring_level))
    _write_csv(path, header, rows)


def _write_sigma_csv(path: Path, run: GreedyRun, n: int) -> None:
    header = ["t", "i"] + [f"x{i}" for i in range(n)] + ["gamma", "delta"]
    rows = []
    for offset, sig in enumerate(run.sigma_sets):
        if offset == 0:
            for i in range(sig.points.shape[0]):
                rows.append(
                    [run.k_start, i]
                    + [float(v) for v in sig.points[i]]
                    + [float(sig.mean_weights[i]), float(sig.cov_weights[i])]
                )
        pushed = run.propagated_points[offset]
        t_next = run.k_start + offset + 1
        for i in range(pushed.shape[0]):
            rows.append(
                [t_next, i]
                + [float(v) for v in pushed[i]]
                + [float(sig.mean_weights[i]), float(sig.cov_weights[i])]
            )
    _write_csv(path, header, rows)


def _policy_payload(run: GreedyRun, cfg: ExperimentConfig, model: SystemModel) -> dict:
    stages = []
    for law, diag in zip(run.laws, run.diagnostics):
        stages.append(
            {
                "stage": law.t,
                "K": [[float(v) for v in row] for row in law.K],
                "upsilon": [float(v) for v in law.upsilon],
                "cost": float(diag.cost),
                "mean_residual": float(diag.mean_residual),
                "psd_violation": float(diag.psd_violation),
                "iterations": int(diag.iterations),
                "status": diag.status,
                "slack": float(diag.slack),
            }
        )
    return {
        "system": cfg.system_name,
        "n": model.n,
        "m": model.m,
        "N": run.N,
        "k_start": run.k_start,
        "mu_f": [float(v) for v in cfg.mu_f],
        "sigma_f": [[float(v) for v in row] for row in cfg.sigma_f],
        "stages": stages,
    }


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def cmd_steer(config_path: str, out_dir: Optional[str], soften: bool = False) -> int:
    cfg = parse_config(config_path)
    if out_dir is not None:
        cfg.out_dir = out_dir
    if soften:
        cfg.soften = True
    return _run_steer(cfg)


def cmd_validate(
    config_path: str,
    policy_path: str,
    samples: Optional[int],
    seed: Optional[int],
    out_dir: Optional[str],
) -> int:
    cfg = parse_config(config_path)
    if out_dir is not None:
        cfg.out_dir = out_dir
    if samples is not None:
        cfg.samples = samples
    if seed is not None:
        cfg.seed = seed
    model = build_model(cfg.system_name, cfg.system_params)
    try:
        payload = json.loads(Path(policy_path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"policy file not found: {policy_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse policy file {policy_path}: {exc}") from None
    if payload.get("n") != model.n or payload.get("m") != model.m:
        print(
            f"policy dims (n={payload.get('n')}, m={payload.get('m')}) do not match "
            f"model (n={model.n}, m={model.m})",
            file=sys.stderr,
        )
        return 1

    laws = [
        StageLaw(
            K=np.asarray(s["K"], dtype=float),
            upsilon=np.asarray(s["upsilon"], dtype=float),
            t=int(s["stage"]),
        )
        for s in payload["stages"]
    ]
    run = GreedyRun(k_start=int(payload["k_start"]), N=int(payload["N"]))
    run.laws = laws
    run.beliefs = [GaussianBelief(cfg.mu0, cfg.sigma0)]

    report = simulate_closed_loop(
        model,
        run,
        samples=cfg.samples,
        seed=cfg.seed,
        n_saved_paths=min(50, cfg.samples),
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(
        out / "mc_report.json",
        {
            "samples": report.samples,
            "seed": report.seed,
            "noise_kind": report.noise_kind,
            "n_valid": report.n_valid,
            "n_diverged": report.n_diverged,
            "empirical_mean": [float(v) for v in report.empirical_mean],
            "empirical_cov": [[float(v) for v in row] for row in report.empirical_cov],
        },
    )
    header = ["sample", "t"] + [f"x{i}" for i in range(model.n)]
    rows = []
    for p, idx in enumerate(report.path_indices):
        for t_off in range(report.paths.shape[1]):
            rows.append(
                [idx, run.k_start + t_off] + [float(v) for v in report.paths[p, t_off]]
            )
    _write_csv(out / "trajectories.csv", header, rows)
    print(
        f"validated with {report.samples} samples (seed {report.seed}): "
        f"{report.n_diverged} diverged"
    )
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covsteer", description="Covariance steering toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    steer = sub.add_parser("steer", help="run the greedy steering loop and export results")
    steer.add_argument("--config", required=True, help="TOML experiment configuration")
    steer.add_argument("--out", default=None, help="output directory (overrides config)")
    steer.add_argument("--soften", action="store_true", help="slacken infeasible stages")

    val = sub.add_parser("validate", help="Monte Carlo validation of an exported policy")
    val.add_argument("--config", required=True, help="TOML experiment configuration")
    val.add_argument("--policy", required=True, help="policy.json from a steer run")
    val.add_argument("--samples", type=int, default=None, help="number of samples")
    val.add_argument("--seed", type=int, default=None, help="RNG seed")
    val.add_argument("--out", default=None, help="output directory (overrides config)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "steer":
            return cmd_steer(args.config, args.out, args.soften)
        return cmd_validate(args.config, args.policy, args.samples, args.seed, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CovsteerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _run_steer(cfg: ExperimentConfig) -> int:
    model = build_model(cfg.system_name, cfg.system_params)
    if cfg.mu0.shape[0] != model.n:
        raise ConfigError(f"'mu0' has dim {cfg.mu0.shape[0]}, model expects {model.n}")
    b0 = GaussianBelief(cfg.mu0, cfg.sigma0)
    goal = GaussianBelief(cfg.mu_f, cfg.sigma_f)
    greedy_cfg = GreedyConfig(
        N=cfg.N,
        goal=goal,
        alpha=cfg.alpha,
        beta=cfg.beta,
        tol_eq=cfg.tol_eq,
        tol_psd=cfg.tol_psd,
        max_iter=cfg.max_iter,
        linearization=cfg.linearization,
        goal_input=cfg.nu_f,
        soften=cfg.soften,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        run = greedy_steer(model, b0, greedy_cfg)
    except SteeringInfeasibleError as exc:
        print(f"infeasible at stage {exc.stage} (status: {exc.status})", file=sys.stderr)
        return 2
    (out / "effective_config.toml").write_text(emit_config(cfg))
    _dump_json(out / "policy.json", _policy_payload(run, cfg, model))
    _write_beliefs_csv(out / "beliefs.csv", run, model.n)
    _write_ellipses_csv(out / "ellipses.csv", run, cfg, model.n)
    _write_sigma_csv(out / "sigma_points.csv", run, model.n)
    worst = max((d.psd_violation for d in run.diagnostics), default=0.0)
    print(
        f"steered {cfg.system_name} over N={cfg.N}: "
        f"{len(run.laws)} stages optimal, worst covariance excess {_fmt(worst)}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
