"""The four run figures: ellipse tube, trajectories, 2-D ellipses, sigma points."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib import cm

from .geometry import ellipse_boundary
from .io import SchemaError, read_beliefs, read_ellipses, read_sigma_points, read_trajectories

FIGURES = ("tube3d", "trajectories", "ellipses2d", "sigma")


@dataclass
class FigureSpec:
    """What to render: input run directory, figure selector, output path."""

    in_dir: str
    figure: str
    out_path: str
    line_width: float = 1.0
    stride: int = 1

    def __post_init__(self):
        if self.figure not in FIGURES:
            raise ValueError(f"unknown figure '{self.figure}'; choose from {FIGURES}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


def _belief_ellipses(records):
    return [r for r in records if r["kind"] == "belief"]


def _ring(records, kind):
    matches = [r for r in records if r["kind"] == kind]
    if not matches:
        raise SchemaError(f"no '{kind}' record in ellipses.csv")
    return matches[0]


def _save(fig, out_path):
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_tube3d(spec: FigureSpec):
    """Belief ellipses stacked along a vertical time axis."""
    records = read_ellipses(spec.in_dir)
    beliefs = _belief_ellipses(records)[:: spec.stride]
    goal = _ring(records, "goal")
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    t_max = max(r["t"] for r in beliefs) if beliefs else 1
    colors = cm.viridis([r["t"] / max(t_max, 1) for r in beliefs])
    for rec, color in zip(beliefs, colors):
        x, y = ellipse_boundary(rec["center"], rec["shape"], rec["level"])
        ax.plot(x, y, zs=rec["t"], zdir="z", color=color, lw=spec.line_width)
    for rec in (beliefs[0], goal) if beliefs else (goal,):
        x, y = ellipse_boundary(rec["center"], rec["shape"], rec["level"])
        ax.plot(x, y, zs=rec["t"], zdir="z", color="black", lw=1.6 * spec.line_width)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_zlabel("t")
    _save(fig, spec.out_path)


def render_trajectories(spec: FigureSpec):
    """Closed-loop sample paths in the state plane."""
    samples, _, states = read_trajectories(spec.in_dir)
    records = read_ellipses(spec.in_dir)
    fig, ax = plt.subplots(figsize=(6, 6))
    by_sample = {}
    for sid, state in zip(samples, states):
        by_sample.setdefault(sid, []).append(state)
    for sid in sorted(by_sample)[:: spec.stride]:
        path = by_sample[sid]
        ax.plot(
            [p[0] for p in path],
            [p[1] for p in path],
            lw=0.6 * spec.line_width,
            alpha=0.6,
        )
    for kind in ("belief", "goal"):
        matches = [r for r in records if r["kind"] == kind]
        if not matches:
            continue
        rec = matches[0] if kind == "belief" else matches[-1]
        x, y = ellipse_boundary(rec["center"], rec["shape"], rec["level"])
        ax.plot(x, y, color="black", lw=1.6 * spec.line_width)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal", adjustable="datalim")
    _save(fig, spec.out_path)


def render_ellipses2d(spec: FigureSpec):
    """All belief ellipses projected on the state plane; first and goal in black."""
    records = read_ellipses(spec.in_dir)
    beliefs = _belief_ellipses(records)
    goal = _ring(records, "goal")
    fig, ax = plt.subplots(figsize=(6, 6))
    t_max = max(r["t"] for r in beliefs) if beliefs else 1
    for rec in beliefs[:: spec.stride]:
        x, y = ellipse_boundary(rec["center"], rec["shape"], rec["level"])
        ax.plot(x, y, color=cm.viridis(rec["t"] / max(t_max, 1)), lw=spec.line_width)
    for rec in (beliefs[0], goal) if beliefs else (goal,):
        x, y = ellipse_boundary(rec["center"], rec["shape"], rec["level"])
        ax.plot(x, y, color="black", lw=1.6 * spec.line_width)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal", adjustable="datalim")
    _save(fig, spec.out_path)


def sigma_scatter_data(in_dir):
    """Split exported sigma points into the start-stage set and all later sets.

    Returns (start_points, later_points, counts_per_stage).
    """
    stages, _, points, _, _ = read_sigma_points(in_dir)
    t0 = min(stages)
    start, later = [], []
    counts = {}
    for t, p in zip(stages, points):
        counts[t] = counts.get(t, 0) + 1
        (start if t == t0 else later).append(p)
    return start, later, counts


def render_sigma(spec: FigureSpec):
    """Sigma-point evolution: start set as red diamonds, later sets as magenta
    circles, plus the black level-(2+lambda) rings of the start and goal."""
    start, later, _ = sigma_scatter_data(spec.in_dir)
    records = read_ellipses(spec.in_dir)
    fig, ax = plt.subplots(figsize=(6, 6))
    if later:
        ax.scatter(
            [p[0] for p in later][:: spec.stride],
            [p[1] for p in later][:: spec.stride],
            s=9.0,
            marker="o",
            color="magenta",
            alpha=0.7,
        )
    ax.scatter(
        [p[0] for p in start],
        [p[1] for p in start],
        s=36.0,
        marker="D",
        color="red",
        zorder=3,
    )
    for kind in ("ut_init", "ut_goal"):
        rec = _ring(records, kind)
        x, y = ellipse_boundary(rec["center"], rec["shape"], rec["level"])
        ax.plot(x, y, color="black", lw=1.6 * spec.line_width)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.set_aspect("equal", adjustable="datalim")
    _save(fig, spec.out_path)


_RENDERERS = {
    "tube3d": render_tube3d,
    "trajectories": render_trajectories,
    "ellipses2d": render_ellipses2d,
    "sigma": render_sigma,
}


def render(spec: FigureSpec):
    """Render one figure selector to its output image."""
    _RENDERERS[spec.figure](spec)
    return spec.out_path
