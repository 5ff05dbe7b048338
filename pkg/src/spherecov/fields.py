"""Sparse Gaussian random fields on the sphere and the sampling model.

A field is a random kernel expansion ``X(u) = sum_q xi_q psi(<u, v_q>)``
with Gaussian weights ``xi ~ N(0, R)``. Observations follow
``W_ij = X_i(U_ij) + eps_ij`` with uniform locations and Gaussian noise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import ZonalKernel, kernel_from_spec, matern_zonal
from .sphere import as_points, gram_cosines, sample_uniform_sphere

log = logging.getLogger(__name__)

# Source weight covariance printed with the reference experiment (5 x 5).
REFERENCE_WEIGHT_COV = np.array(
    [
        [0.812, -0.013, -0.209, -0.416, -0.028],
        [-0.013, 0.974, -0.008, -0.632, -0.372],
        [-0.209, -0.008, 0.909, -0.095, -0.588],
        [-0.416, -0.632, -0.095, 1.000, 0.235],
        [-0.028, -0.372, -0.588, 0.235, 0.929],
    ]
)


def psd_factor(cov) -> np.ndarray:
    """Return ``F`` with ``F @ F.T == cov``.

    Cholesky first; on failure fall back to an eigendecomposition, clipping
    eigenvalues down to ``-1e-12 * trace``. Anything more negative is an error.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    floor = -1e-12 * max(np.trace(cov), np.finfo(float).tiny)
    if vals.min() < floor:
        raise ValueError(f"weight covariance is not PSD (min eigenvalue {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class SourceModel:
    sources: np.ndarray
    weight_cov: np.ndarray
    kernel: ZonalKernel

    def __post_init__(self):
        src = as_points(self.sources)
        cov = np.atleast_2d(np.asarray(self.weight_cov, dtype=float))
        q = src.shape[0]
        if cov.shape != (q, q):
            raise ValueError(f"weight_cov must be {q}x{q}, got {cov.shape}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise ValueError("weight_cov must be symmetric")
        tr = np.trace(cov)
        if q and np.linalg.eigvalsh(cov).min() < -1e-10 * max(abs(tr), 1e-300):
            raise ValueError("weight_cov must be positive semi-definite")
        cos = gram_cosines(src, src)
        np.fill_diagonal(cos, -1.0)
        if q > 1 and cos.max() >= 1.0 - 1e-14:
            raise ValueError("sources must be pairwise distinct")
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "weight_cov", cov)

    @property
    def Q(self) -> int:
        return self.sources.shape[0]

    def design(self, points) -> np.ndarray:
        """Matrix ``[psi(<u_a, v_q>)]`` of shape ``(N, Q)``."""
        return self.kernel(gram_cosines(np.atleast_2d(points), self.sources))

    def to_dict(self) -> dict:
        return {
            "sources": self.sources.tolist(),
            "weight_cov": self.weight_cov.tolist(),
            "kernel": self.kernel.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourceModel":
        return cls(np.asarray(d["sources"]), np.asarray(d["weight_cov"]), kernel_from_spec(d["kernel"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SourceModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def random_weight_cov(Q: int, seed=None) -> np.ndarray:
    """Random correlation-like PSD matrix for source counts without a printed matrix."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((Q, Q + 2))
    cov = a @ a.T / (Q + 2)
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)


def default_source_model(Q: int = 5, nu: float = 2.5, eps: float = 0.4, seed: int = 0,
                         weight_cov=None) -> SourceModel:
    """Reference experiment model: Matérn sources drawn uniformly at random.

    The printed 5 x 5 weight covariance is used when ``Q == 5``. Other source
    counts need an explicit ``weight_cov``, otherwise a random one is drawn
    and a warning is logged.
    """
    rng = np.random.default_rng(seed)
    sources = sample_uniform_sphere(Q, rng)
    if weight_cov is None:
        if Q == REFERENCE_WEIGHT_COV.shape[0]:
            weight_cov = REFERENCE_WEIGHT_COV
        else:
            log.warning("no weight covariance given for Q=%d; drawing a random one", Q)
            weight_cov = random_weight_cov(Q, rng)
    return SourceModel(sources, weight_cov, matern_zonal(nu, eps))


def eval_field(weights, model: SourceModel, points):
    """Field value ``sum_q xi_q psi(<u, v_q>)`` at one or many points."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (model.Q,):
        raise ValueError(f"expected {model.Q} weights, got shape {weights.shape}")
    vals = model.design(points) @ weights
    return float(vals[0]) if np.ndim(points) == 1 else vals


def true_second_moment(model: SourceModel, u, v):
    """``sum_{p,q} R_pq psi(<u, v_p>) psi(<v, v_q>)``; a matrix for point sets."""
    a = model.design(u)
    b = model.design(v)
    vals = a @ model.weight_cov @ b.T
    if np.ndim(u) == 1 and np.ndim(v) == 1:
        return float(vals[0, 0])
    return vals


@dataclass
class Dataset:
    """Replicate-indexed sample locations and noisy values."""

    locations: list
    values: list
    sigma: float = 0.0
    seed: int | None = None
    time_ordered: bool = False
    weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.locations) != len(self.values) or not self.locations:
            raise ValueError("need one value array per replicate and at least one replicate")
        locs, vals = [], []
        for i, (u, w) in enumerate(zip(self.locations, self.values)):
            u = as_points(u)
            w = np.asarray(w, dtype=float).reshape(-1)
            if u.shape[0] != w.shape[0] or u.shape[0] < 1:
                raise ValueError(f"replicate {i}: mismatched or empty samples")
            if u.shape[0] > 1:
                cos = u @ u.T
                np.fill_diagonal(cos, -1.0)
                if cos.max() >= 1.0 - 1e-15:
                    raise ValueError(f"replicate {i}: duplicate sample locations")
            locs.append(u)
            vals.append(w)
        self.locations, self.values = locs, vals

    @property
    def n(self) -> int:
        return len(self.locations)

    @property
    def r_list(self) -> list:
        return [u.shape[0] for u in self.locations]

    @property
    def constant_r(self) -> int | None:
        rs = set(self.r_list)
        return rs.pop() if len(rs) == 1 else None

    @property
    def n_samples(self) -> int:
        return sum(self.r_list)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(replicate_index, points, values)`` concatenated over replicates."""
        rep = np.concatenate([np.full(r, i) for i, r in enumerate(self.r_list)])
        return rep, np.vstack(self.locations), np.concatenate(self.values)

    def require_pairs(self) -> None:
        if min(self.r_list) < 2:
            raise ValueError("second-moment fitting needs at least 2 samples per replicate")

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "r_list": self.r_list,
            "sigma": self.sigma,
            "seed": self.seed,
            "time_ordered": self.time_ordered,
        }

    def save(self, csv_path, meta_path=None) -> None:
        csv_path = Path(csv_path)
        meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
        rep, pts, w = self.stacked()
        with open(csv_path, "w") as fh:
            fh.write("replicate,x,y,z,w\n")
            for i, p, v in zip(rep, pts, w):
                fh.write(f"{i},{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},{v:.17g}\n")
        meta_path.write_text(json.dumps(self.metadata(), indent=2))

    @classmethod
    def load(cls, csv_path, meta_path=None) -> "Dataset":
        csv_path = Path(csv_path)
        meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".json")
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        rep = data[:, 0].astype(int)
        n = int(meta.get("n", rep.max() + 1))
        locs = [data[rep == i, 1:4] for i in range(n)]
        vals = [data[rep == i, 4] for i in range(n)]
        return cls(locs, vals, sigma=float(meta.get("sigma", 0.0)), seed=meta.get("seed"),
                   time_ordered=bool(meta.get("time_ordered", False)))


def _stream(seed, i: int, which: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, which)))


def _sample_replicates(model, weights, r, sigma, seed):
    locs, vals = [], []
    for i, xi in enumerate(weights):
        rng = _stream(seed, i, 0)
        u = sample_uniform_sphere(r, rng)
        w = model.design(u) @ xi
        if sigma > 0:
            w = w + sigma * rng.standard_normal(r)
        locs.append(u)
        vals.append(w)
    return locs, vals


def _check_sizes(n, r, sigma):
    if n < 1 or r < 1:
        raise ValueError("n and r must be positive")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")


def simulate_dataset(model: SourceModel, n: int, r: int, sigma: float, seed: int) -> Dataset:
    """Independent replicates observed at ``r`` uniform locations each."""
    _check_sizes(n, r, sigma)
    factor = psd_factor(model.weight_cov)
    weights = np.array([factor @ _stream(seed, i, 1).standard_normal(model.Q) for i in range(n)])
    locs, vals = _sample_replicates(model, weights, r, sigma, seed)
    return Dataset(locs, vals, sigma=sigma, seed=seed, time_ordered=False, weights=weights)


def simulate_far1(model: SourceModel, n: int, r: int, sigma: float, a: float, seed: int) -> Dataset:
    """Stationary functional AR(1): ``xi_{t+1} = a xi_t + sqrt(1 - a^2) eta_t``.

    Started from the stationary law ``N(0, R)``, so lag-h weight
    autocovariance is ``a^|h| R``. With ``a = 0`` the output coincides with
    :func:`simulate_dataset` for the same seed.
    """
    if not -1.0 < a < 1.0:
        raise ValueError("AR coefficient must satisfy |a| < 1 for stationarity")
    _check_sizes(n, r, sigma)
    factor = psd_factor(model.weight_cov)
    innov = np.array([factor @ _stream(seed, i, 1).standard_normal(model.Q) for i in range(n)])
    weights = np.empty_like(innov)
    weights[0] = innov[0]
    scale = np.sqrt(1.0 - a * a)
    for t in range(1, n):
        weights[t] = a * weights[t - 1] + scale * innov[t]
    locs, vals = _sample_replicates(model, weights, r, sigma, seed)
    return Dataset(locs, vals, sigma=sigma, seed=seed, time_ordered=True, weights=weights)
