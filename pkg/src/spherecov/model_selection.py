"""K-fold cross-validation of the second-moment penalty.

Folds are formed over pair products (entries of ``z``), not replicates: the
product vector is shuffled once, split into ``k`` nearly equal groups, and
each group is predicted from a fit on the others.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .estimators import ConvergenceError, SolverConfig, conjugate_gradient, pair_products, second_moment_ridge
from .gram import DEFAULT_THRESHOLD, KhatriRaoOperator, build_J
from .kernels import ZonalKernel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CVConfig:
    k_folds: int = 4
    eta_grid: tuple = tuple(np.linspace(1.0, 6.0, 11))
    shuffle_seed: int = 0

    def __post_init__(self):
        grid = tuple(float(e) for e in self.eta_grid)
        if not grid:
            raise ValueError("eta grid must be nonempty")
        if any(e <= 0 for e in grid):
            raise ValueError("eta values must be positive")
        if any(b < a for a, b in zip(grid, grid[1:])):
            raise ValueError("eta grid must be increasing")
        if self.k_folds < 2:
            raise ValueError("need at least 2 folds")
        object.__setattr__(self, "eta_grid", grid)


@dataclass
class CVReport:
    eta_grid: list
    scores: list
    selected_eta: float
    per_fold: list
    seed: int
    k_folds: int
    failures: list = field(default_factory=list)

    @property
    def selected_index(self) -> int:
        return int(np.nanargmin(self.scores))

    @property
    def interior(self) -> bool:
        """True when the minimizer is neither grid endpoint."""
        return 0 < self.selected_index < len(self.eta_grid) - 1

    def to_dict(self) -> dict:
        return {
            "eta_grid": self.eta_grid,
            "scores": self.scores,
            "selected_eta": self.selected_eta,
            "per_fold": self.per_fold,
            "seed": self.seed,
            "k_folds": self.k_folds,
            "failures": self.failures,
        }

    def save(self, json_path, csv_path=None) -> None:
        Path(json_path).write_text(json.dumps(self.to_dict(), indent=2))
        if csv_path is not None:
            with open(csv_path, "w") as fh:
                fh.write("eta,score\n")
                for e, s in zip(self.eta_grid, self.scores):
                    fh.write(f"{e:.12g},{s:.12e}\n")


def make_folds(n_items: int, k: int, seed: int) -> list:
    """Random partition of ``range(n_items)`` into ``k`` groups of near-equal size."""
    if k > n_items:
        raise ValueError(f"cannot split {n_items} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n_items)
    return [np.sort(f) for f in np.array_split(perm, k)]


def kfold_cv_second_moment(dataset, kernel: ZonalKernel, cfg: CVConfig = CVConfig(),
                           solver: SolverConfig = SolverConfig(),
                           threshold_frac: float = DEFAULT_THRESHOLD) -> CVReport:
    """Out-of-sample MSE of held-out pair products for each penalty in the grid."""
    dataset.require_pairs()
    r = dataset.constant_r
    if r is None:
        raise ValueError("cross-validation requires a constant number of samples per replicate")
    z = pair_products(dataset)
    L = z.size
    folds = make_folds(L, cfg.k_folds, cfg.shuffle_seed)
    op = KhatriRaoOperator(build_J(dataset.locations, kernel, threshold_frac), r)
    diag_h = op.diagonal()

    per_fold = np.full((len(cfg.eta_grid), cfg.k_folds), np.nan)
    failures = []
    for a, eta in enumerate(cfg.eta_grid):
        ridge = second_moment_ridge(eta, L)
        for f, test in enumerate(folds):
            train = np.ones(L, dtype=bool)
            train[test] = False

            def apply(x, train=train):
                return train * op.matvec(train * x) + ridge * x

            try:
                beta = conjugate_gradient(apply, train * z, solver, diag=train * diag_h + ridge).x
                pred = op.matvec(beta)[test]
                score = float(np.mean((z[test] - pred) ** 2))
            except ConvergenceError as exc:
                score = float("nan")
                log.warning("fold %d at eta=%g failed: %s", f, eta, exc)
            if not np.isfinite(score):
                failures.append({"eta": eta, "fold": f})
                continue
            per_fold[a, f] = score
    if np.all(np.isnan(per_fold)):
        raise ConvergenceError("every cross-validation fold failed")
    with warnings.catch_warnings():
        # rows where every fold failed become NaN
        warnings.simplefilter("ignore", RuntimeWarning)
        scores = np.nanmean(per_fold, axis=1)
    best = int(np.nanargmin(scores))
    return CVReport(
        eta_grid=list(cfg.eta_grid),
        scores=scores.tolist(),
        selected_eta=float(cfg.eta_grid[best]),
        per_fold=per_fold.tolist(),
        seed=cfg.shuffle_seed,
        k_folds=cfg.k_folds,
        failures=failures,
    )
