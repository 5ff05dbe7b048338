"""Geometry primitives on the unit sphere.

Points are carried as ``(N, 3)`` float arrays of unit vectors; a single
point is a length-3 array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-12


def as_points(points, tol: float = 1e-9) -> np.ndarray:
    """Validate and return an ``(N, 3)`` array of unit vectors."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected points of shape (N, 3), got {pts.shape}")
    norms = np.linalg.norm(pts, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("points must lie on the unit sphere")
    return pts


def normalize(vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_uniform_sphere(count: int, seed=None) -> np.ndarray:
    """Draw ``count`` i.i.d. uniform points on the sphere.

    Uses normalized standard Gaussian vectors. ``seed`` may be an integer
    or a :class:`numpy.random.Generator`.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return normalize(rng.standard_normal((count, 3)))


def dot(u, v) -> np.ndarray | float:
    """Inner product of unit vectors, clamped to [-1, 1]."""
    t = np.clip(np.sum(np.asarray(u, float) * np.asarray(v, float), axis=-1), -1.0, 1.0)
    return float(t) if np.ndim(t) == 0 else t


def gram_cosines(a, b) -> np.ndarray:
    """Matrix of clamped inner products between two point sets."""
    return np.clip(np.asarray(a, float) @ np.asarray(b, float).T, -1.0, 1.0)


def geodesic_distance(u, v):
    return np.arccos(dot(u, v))


@dataclass(frozen=True)
class SphereGrid:
    """Quadrature grid: nodes with positive weights summing to 4*pi."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = as_points(self.nodes, tol=UNIT_TOL * 10)
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (nodes.shape[0],):
            raise ValueError("one weight per node required")
        if np.any(weights <= 0):
            raise ValueError("grid weights must be positive")
        if abs(weights.sum() - 4 * np.pi) > 1e-9:
            raise ValueError("grid weights must sum to 4*pi")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.shape[0]

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def fibonacci_grid(n_nodes: int) -> SphereGrid:
    """Spherical Fibonacci lattice with equal weights ``4*pi / n_nodes``."""
    if n_nodes < 2:
        raise ValueError("n_nodes must be >= 2")
    idx = np.arange(n_nodes, dtype=float) + 0.5
    polar = np.arccos(1.0 - 2.0 * idx / n_nodes)
    golden = (1.0 + 5.0**0.5) / 2.0
    azimuth = 2.0 * np.pi * idx / golden
    nodes = np.column_stack(
        (np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar))
    )
    nodes = normalize(nodes)
    weights = np.full(n_nodes, 4.0 * np.pi / n_nodes)
    return SphereGrid(nodes, weights)


def write_points_csv(path, points) -> None:
    pts = as_points(points)
    np.savetxt(path, pts, delimiter=",", fmt="%.17g", header="x,y,z", comments="")


def read_points_csv(path) -> np.ndarray:
    return as_points(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))
