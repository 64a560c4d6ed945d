"""Readers for the steering run exports (documented CSV schemas only)."""

from __future__ import annotations

from pathlib import Path


class SchemaError(ValueError):
    """A CSV is missing a required column or cannot be read."""


def read_table(path) -> dict:
    """Load a CSV as a mapping column name -> list of strings."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"missing input file: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise SchemaError(f"empty input file: {path}")
    header = lines[0].split(",")
    table = {name: [] for name in header}
    for line in lines[1:]:
        for name, value in zip(header, line.split(",")):
            table[name].append(value)
    return table


def column(table: dict, name: str, path=""):
    if name not in table:
        raise SchemaError(f"missing column '{name}'" + (f" in {path}" if path else ""))
    return table[name]


def floats(table: dict, name: str, path=""):
    return [float(v) for v in column(table, name, path)]


def state_dim(table: dict, prefix: str) -> int:
    n = 0
    while f"{prefix}{n}" in table:
        n += 1
    if n == 0:
        raise SchemaError(f"no '{prefix}*' columns found")
    return n


def read_beliefs(in_dir):
    """beliefs.csv -> (stages, means, covariances)."""
    path = Path(in_dir) / "beliefs.csv"
    table = read_table(path)
    n = state_dim(table, "mu")
    stages = [int(v) for v in column(table, "t", path)]
    rows = len(stages)
    means = [[floats(table, f"mu{i}", path)[r] for i in range(n)] for r in range(rows)]
    covs = [
        [[floats(table, f"sigma{i}{j}", path)[r] for j in range(n)] for i in range(n)]
        for r in range(rows)
    ]
    return stages, means, covs


def read_ellipses(in_dir):
    """ellipses.csv -> list of dicts with t, kind, center, shape, level."""
    path = Path(in_dir) / "ellipses.csv"
    table = read_table(path)
    n = state_dim(table, "c")
    stages = [int(v) for v in column(table, "t", path)]
    kinds = column(table, "kind", path)
    levels = floats(table, "level", path)
    records = []
    for r in range(len(stages)):
        center = [floats(table, f"c{i}", path)[r] for i in range(n)]
        shape = [[floats(table, f"s{i}{j}", path)[r] for j in range(n)] for i in range(n)]
        records.append(
            {"t": stages[r], "kind": kinds[r], "center": center, "shape": shape, "level": levels[r]}
        )
    return records


def read_sigma_points(in_dir):
    """sigma_points.csv -> (stages, indices, points, gammas, deltas)."""
    path = Path(in_dir) / "sigma_points.csv"
    table = read_table(path)
    n = state_dim(table, "x")
    stages = [int(v) for v in column(table, "t", path)]
    indices = [int(v) for v in column(table, "i", path)]
    points = [[floats(table, f"x{i}", path)[r] for i in range(n)] for r in range(len(stages))]
    gammas = floats(table, "gamma", path)
    deltas = floats(table, "delta", path)
    return stages, indices, points, gammas, deltas


def read_trajectories(in_dir):
    """trajectories.csv -> (sample ids, stages, states)."""
    path = Path(in_dir) / "trajectories.csv"
    table = read_table(path)
    n = state_dim(table, "x")
    samples = [int(v) for v in column(table, "sample", path)]
    stages = [int(v) for v in column(table, "t", path)]
    states = [[floats(table, f"x{i}", path)[r] for i in range(n)] for r in range(len(samples))]
    return samples, stages, states
