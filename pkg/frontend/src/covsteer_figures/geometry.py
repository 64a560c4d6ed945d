"""Ellipse boundary discretization from exported (center, shape, level) records."""

from __future__ import annotations

import numpy as np

#: Boundary points per ellipse.
BOUNDARY_POINTS = 128


def ellipse_boundary(center, shape, level, num=BOUNDARY_POINTS):
    """Points on {x : (x-c)' S^{-1} (x-c) = level}, projected to the first two axes.

    Uses the eigendecomposition of the 2x2 leading block of shape*level, so
    rotated covariances come out exact.
    """
    center = np.asarray(center, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if center.shape[0] < 2:
        raise ValueError("ellipse rendering needs at least two state dimensions")
    block = shape[:2, :2] * float(level)
    vals, vecs = np.linalg.eigh(0.5 * (block + block.T))
    vals = np.maximum(vals, 0.0)
    theta = np.linspace(0.0, 2.0 * np.pi, num)
    circle = np.stack([np.cos(theta), np.sin(theta)])
    boundary = (vecs * np.sqrt(vals)) @ circle
    return center[0] + boundary[0], center[1] + boundary[1]
