"""Grid evaluation, L2 error and projection onto the PSD cone."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .estimators import MeanEstimate, SecondMomentEstimate, eval_mean, eval_second_moment
from .sphere import SphereGrid


@dataclass(frozen=True)
class GridField:
    """Values of a univariate (``N``) or bivariate (``N x N``) function on a grid."""

    grid: SphereGrid
    values: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        N = len(self.grid)
        if vals.shape not in ((N,), (N, N)):
            raise ValueError(f"values of shape {vals.shape} do not match a grid of {N} nodes")
        if self.symmetric and vals.ndim == 2 and np.max(np.abs(vals - vals.T)) > 1e-9 * max(1.0, np.abs(vals).max()):
            raise ValueError("field tagged symmetric is not symmetric")
        object.__setattr__(self, "values", vals)

    @property
    def bivariate(self) -> bool:
        return self.values.ndim == 2

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values)

    def save(self, nodes_path, values_path) -> None:
        np.savetxt(nodes_path, np.column_stack((self.grid.nodes, self.grid.weights)),
                   delimiter=",", fmt="%.17g", header="x,y,z,weight", comments="")
        np.savetxt(values_path, np.atleast_2d(self.values), delimiter=",", fmt="%.12e")

    @classmethod
    def load(cls, nodes_path, values_path) -> "GridField":
        nodes = np.loadtxt(nodes_path, delimiter=",", skiprows=1, ndmin=2)
        values = np.loadtxt(values_path, delimiter=",", ndmin=2)
        grid = SphereGrid(nodes[:, :3], nodes[:, 3])
        if values.shape[0] == 1 and len(grid) != 1:
            values = values[0]
        return cls(grid, values)


def eval_on_grid(est, grid: SphereGrid) -> GridField:
    """Evaluate a mean estimate (vector) or bivariate estimate (matrix) at grid nodes."""
    if isinstance(est, MeanEstimate):
        return GridField(grid, np.atleast_1d(eval_mean(est, grid.nodes)))
    if isinstance(est, SecondMomentEstimate):
        vals = eval_second_moment(est, grid.nodes, grid.nodes)
        return GridField(grid, vals, symmetric=est.lag == 0)
    raise TypeError(f"cannot evaluate {type(est).__name__} on a grid")


@dataclass(frozen=True)
class Projection:
    field: GridField
    clipped_mass: float
    n_clipped: int
    min_eigenvalue: float


def project_psd(field: GridField, tol: float = 1e-10) -> Projection:
    """Nearest PSD operator in the quadrature inner product.

    The discretized operator ``K_ab = R(x_a, x_b) sqrt(w_a w_b)`` is
    symmetrized, its negative eigenvalues are set to zero, and the result is
    mapped back to kernel values. ``clipped_mass`` is the sum of the removed
    eigenvalue magnitudes.
    """
    if not field.bivariate:
        raise ValueError("PSD projection needs a bivariate field")
    sw = np.sqrt(field.grid.weights)
    K = field.values * np.outer(sw, sw)
    K = 0.5 * (K + K.T)
    try:
        vals, vecs = np.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigendecomposition failed: {exc}") from exc
    neg = vals < 0
    clipped = float(-vals[neg].sum())
    kept = np.clip(vals, 0.0, None)
    Kp = (vecs * kept) @ vecs.T
    Kp = 0.5 * (Kp + Kp.T)
    out = Kp / np.outer(sw, sw)
    min_eig = float(np.linalg.eigvalsh(Kp).min()) if out.shape[0] else 0.0
    if min_eig < -tol * max(1.0, kept.max(initial=0.0)):
        raise np.linalg.LinAlgError(f"projection left eigenvalue {min_eig:.3e} below tolerance")
    return Projection(GridField(field.grid, out, symmetric=True), clipped, int(neg.sum()), min_eig)


def l2_error(a: GridField, b: GridField) -> float:
    """Quadrature L2 distance between two fields on the same grid."""
    if a.grid is not b.grid and not (
        np.array_equal(a.grid.nodes, b.grid.nodes) and np.array_equal(a.grid.weights, b.grid.weights)
    ):
        raise ValueError("fields live on different grids")
    if a.values.shape != b.values.shape:
        raise ValueError("fields have different shapes")
    w = a.grid.weights
    d2 = (a.values - b.values) ** 2
    if d2.ndim == 2:
        return float(np.sqrt(max(w @ d2 @ w, 0.0)))
    return float(np.sqrt(max(w @ d2, 0.0)))


def l2_norm(a: GridField) -> float:
    return l2_error(a, GridField(a.grid, np.zeros_like(a.values)))


def save_grid_field(field: GridField, prefix) -> tuple[Path, Path]:
    prefix = Path(prefix)
    nodes = prefix.with_name(prefix.name + "_nodes.csv")
    values = prefix.with_name(prefix.name + "_values.csv")
    field.save(nodes, values)
    return nodes, values
