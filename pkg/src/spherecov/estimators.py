"""Representer-theorem estimators of the mean, second moment and lag-h moments.

All estimates are finite kernel expansions with knots at the sample
locations. The mean weights solve a dense ridge system; second-moment
weights solve a ridge system on the pair Gram matrix, by conjugate gradient
(constant ``r``) or by a dense solve (ragged ``r_i``).

Ridge constants
---------------
mean            ``eta * n / (4 pi)``, normalized data ``w_ij / sqrt(r_i)``
second moment   ``eta * L / (4 pi)^2``, raw products ``w_ij w_ik``,
                ``L = n r (r - 1)``; the ragged path uses the normalized form
                ``eta * n / (4 pi)^2`` with ``w_ij w_ik / sqrt(r_i (r_i - 1))``
lag h > 0       ``eta * (n - h) r^2 / (4 pi)^2``, raw products, diagonal kept
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .gram import (
    DEFAULT_THRESHOLD,
    KhatriRaoOperator,
    build_H_general,
    build_J,
    build_mean_gram,
    lag_pairs,
    pair_triples,
)
from .kernels import ZonalKernel, kernel_from_spec
from .sphere import gram_cosines

log = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi


class ConvergenceError(RuntimeError):
    """Conjugate gradient failed to reach the target residual."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericalBreakdown(ConvergenceError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int | None = None
    precondition: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def iterations_for(self, size: int) -> int:
        return self.max_iter if self.max_iter is not None else max(10 * int(math.ceil(math.sqrt(size))), 50)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float


def conjugate_gradient(apply_A, b, cfg: SolverConfig = SolverConfig(), diag=None, x0=None) -> CGResult:
    """Preconditioned conjugate gradient for SPD systems.

    ``apply_A`` maps a vector to ``A @ x``. ``diag``, if given, is used as a
    Jacobi preconditioner. Stops when ``||A x - b|| <= tol * ||b||``.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0)
    max_iter = cfg.iterations_for(b.size)
    inv_diag = None
    if diag is not None and cfg.precondition:
        diag = np.asarray(diag, dtype=float)
        if np.all(diag > 0):
            inv_diag = 1.0 / diag
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_A(x) if x0 is not None else b.copy()
    z = r * inv_diag if inv_diag is not None else r
    p = z.copy()
    rz = float(r @ z)
    res = np.linalg.norm(r) / bnorm
    for it in range(1, max_iter + 1):
        if res <= cfg.tol:
            return CGResult(x, it - 1, res)
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp <= 0.0:
            raise NumericalBreakdown(f"CG breakdown at iteration {it} (p'Ap = {pAp})", res, it)
        step = rz / pAp
        x += step * p
        r -= step * Ap
        res = np.linalg.norm(r) / bnorm
        if not np.isfinite(res):
            raise NumericalBreakdown("NaN encountered in CG residual", res, it)
        z = r * inv_diag if inv_diag is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if res <= cfg.tol:
        return CGResult(x, max_iter, res)
    raise ConvergenceError(f"CG did not converge in {max_iter} iterations (residual {res:.3e})", res, max_iter)


# ---------------------------------------------------------------------------
# mean


@dataclass(frozen=True)
class MeanEstimate:
    weights: np.ndarray
    locations: np.ndarray
    sample_scale: np.ndarray
    kernel: ZonalKernel
    eta: float

    @property
    def coefficients(self) -> np.ndarray:
        """Effective kernel coefficients ``alpha_ij / sqrt(r_i)``."""
        return self.weights * self.sample_scale

    def __call__(self, u):
        return eval_mean(self, u)

    def save(self, path) -> None:
        _save_records(path, {"type": "mean", "kernel": self.kernel.to_dict(), "eta": self.eta},
                      np.column_stack((self.locations, self.coefficients)))

    @classmethod
    def from_coefficients(cls, locations, coeffs, kernel, eta):
        coeffs = np.asarray(coeffs, dtype=float)
        return cls(coeffs, np.asarray(locations, dtype=float), np.ones_like(coeffs), kernel, eta)


def fit_mean(dataset, kernel: ZonalKernel, eta: float) -> MeanEstimate:
    """Solve ``(G + eta n / (4 pi) I) alpha = y`` with ``y_ij = w_ij / sqrt(r_i)``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    rep, pts, w = dataset.stacked()
    scale = 1.0 / np.sqrt(np.asarray(dataset.r_list, dtype=float))[rep]
    G = build_mean_gram(dataset, kernel)
    ridge = eta * dataset.n / FOUR_PI
    eig = np.linalg.eigvalsh(G)
    if eig.max() > 0 and eig.max() / max(eig.min(), np.finfo(float).tiny) > 1e14:
        log.debug("mean Gram is ill-conditioned; relying on ridge %.3g", ridge)
    A = G + ridge * np.eye(G.shape[0])
    alpha = sla.solve(A, w * scale, assume_a="pos")
    return MeanEstimate(alpha, pts, scale, kernel, float(eta))


def eval_mean(est: MeanEstimate, u):
    """``sum_i r_i^{-1/2} sum_j alpha_ij psi(<u, u_ij>)``."""
    vals = est.kernel(gram_cosines(np.atleast_2d(u), est.locations)) @ est.coefficients
    return float(vals[0]) if np.ndim(u) == 1 else vals


# ---------------------------------------------------------------------------
# second moment


@dataclass(frozen=True)
class SecondMomentEstimate:
    """``R(u, v) = sum_l c_l psi(<u, a_l>) psi(<v, b_l>)`` over weighted pairs.

    ``beta`` are the raw system weights; ``pair_scale`` converts them to the
    effective coefficients ``c_l`` (ones on the fast path,
    ``1/sqrt(r_i (r_i - 1))`` on the ragged path). Pairs reference rows of
    ``locations`` through ``left`` / ``right``.
    """

    beta: np.ndarray
    pair_scale: np.ndarray
    left: np.ndarray
    right: np.ndarray
    locations: np.ndarray
    kernel: ZonalKernel
    eta: float
    lag: int = 0
    info: dict = field(default_factory=dict, compare=False)

    @property
    def coefficients(self) -> np.ndarray:
        return self.beta * self.pair_scale

    def coefficient_matrix(self) -> np.ndarray:
        """Sample-by-sample coefficient matrix ``M`` with ``R = Psi_u M Psi_v^T``."""
        ns = self.locations.shape[0]
        M = np.zeros((ns, ns))
        np.add.at(M, (self.left, self.right), self.coefficients)
        return M

    def transposed(self) -> "SecondMomentEstimate":
        return replace(self, left=self.right, right=self.left, lag=-self.lag)

    def __call__(self, u, v):
        return eval_second_moment(self, u, v)

    def save(self, path) -> None:
        header = {"type": "second_moment", "kernel": self.kernel.to_dict(), "eta": self.eta,
                  "lag": self.lag, **{k: v for k, v in self.info.items() if k in ("n", "r", "r_list")}}
        recs = np.column_stack((self.locations[self.left], self.locations[self.right], self.coefficients))
        _save_records(path, header, recs)


def _offsets(r_list):
    return np.concatenate(([0], np.cumsum(r_list)[:-1])).astype(int)


def pair_products(dataset) -> np.ndarray:
    """Raw products ``w_ij w_ik`` in vector order (off-diagonal pairs)."""
    i, j, k = pair_triples(dataset.r_list)
    _, _, w = dataset.stacked()
    off = _offsets(dataset.r_list)
    return w[off[i] + j] * w[off[i] + k]


def second_moment_ridge(eta: float, n_pairs: int) -> float:
    return eta * n_pairs / FOUR_PI**2


def second_moment_objective(beta, H, z, eta: float):
    """Objective and gradient in the representer parameterization.

    ``f(beta) = (4 pi)^2 / L ||z - H beta||^2 + eta beta' H beta`` with ``H``
    the unnormalized pair Gram (matrix or operator) and ``z`` raw products.
    """
    beta = np.asarray(beta, dtype=float)
    L = beta.size
    Hb = H @ beta
    resid = z - Hb
    scale = FOUR_PI**2 / L
    value = scale * float(resid @ resid) + eta * float(beta @ Hb)
    grad = -2.0 * scale * (H @ resid) + 2.0 * eta * Hb
    return value, grad


def _solve_fast(op: KhatriRaoOperator, z, ridge, cfg):
    diag = op.diagonal() + ridge
    res = conjugate_gradient(lambda x: op.matvec(x) + ridge * x, z, cfg, diag=diag)
    return res


def fit_second_moment(dataset, kernel: ZonalKernel, eta: float, cfg: SolverConfig = SolverConfig(),
                      threshold_frac: float = DEFAULT_THRESHOLD, method: str = "auto") -> SecondMomentEstimate:
    """Second-order moment estimate from off-diagonal pair products.

    ``method`` is ``"fast"`` (constant ``r``, CG on the Khatri-Rao operator
    built from the thresholded ``J``), ``"dense"`` (exact normalized system,
    any ``r_i >= 2``) or ``"auto"``.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    dataset.require_pairs()
    r = dataset.constant_r
    if method == "auto":
        method = "fast" if r is not None else "dense"
    rep, pts, w = dataset.stacked()
    off = _offsets(dataset.r_list)
    i, j, k = pair_triples(dataset.r_list)
    left, right = off[i] + j, off[i] + k
    z = w[left] * w[right]
    info = {"n": dataset.n, "r_list": dataset.r_list, "method": method, "L": int(z.size)}
    if method == "fast":
        if r is None:
            raise ValueError("fast path requires a constant number of samples per replicate")
        J = build_J(dataset.locations, kernel, threshold_frac)
        op = KhatriRaoOperator(J, r)
        ridge = second_moment_ridge(eta, z.size)
        res = _solve_fast(op, z, ridge, cfg)
        beta, scale = res.x, np.ones_like(z)
        info.update(r=r, ridge=ridge, iterations=res.iterations, residual=res.residual,
                    j_nnz_fraction=J.nnz / float(J.shape[0] ** 2), threshold_frac=threshold_frac)
    elif method == "dense":
        H = build_H_general(dataset, kernel)
        rr = np.asarray(dataset.r_list, dtype=float)
        scale = 1.0 / np.sqrt(rr * (rr - 1.0))[i]
        ridge = eta * dataset.n / FOUR_PI**2
        beta = sla.solve(H + ridge * np.eye(H.shape[0]), z * scale, assume_a="pos")
        info.update(ridge=ridge, r=r)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SecondMomentEstimate(beta, scale, left, right, pts, kernel, float(eta), 0, info)


def fit_lag_autocov(dataset, kernel: ZonalKernel, eta: float, h: int, cfg: SolverConfig = SolverConfig(),
                    threshold_frac: float = DEFAULT_THRESHOLD) -> SecondMomentEstimate:
    """Lag-``h`` second-order moment ``E[X_{t+h}(u) X_t(v)]``.

    Uses all pairs ``(U_{t+h,j}, U_{t,k})`` including ``j == k``. Negative
    lags return the transposed lag ``|h|`` estimate; ``h == 0`` is
    :func:`fit_second_moment`.
    """
    if h == 0:
        return fit_second_moment(dataset, kernel, eta, cfg, threshold_frac)
    n = dataset.n
    if abs(h) > n - 2:
        raise ValueError(f"lag {h} needs more than {n} time points")
    if h < 0:
        return fit_lag_autocov(dataset, kernel, eta, -h, cfg, threshold_frac).transposed()
    if not eta > 0:
        raise ValueError("eta must be positive")
    if not dataset.time_ordered:
        log.debug("fitting a lag-%d moment on a dataset not flagged as time ordered", h)
    r = dataset.constant_r
    if r is None:
        raise ValueError("lag estimation requires a constant number of samples per replicate")
    _, pts, w = dataset.stacked()
    t, j, k = lag_pairs(n, r, h)
    left, right = (t + h) * r + j, t * r + k
    z = w[left] * w[right]
    J = build_J(dataset.locations, kernel, threshold_frac)
    op = KhatriRaoOperator(J, r, lag=h)
    ridge = second_moment_ridge(eta, z.size)
    res = _solve_fast(op, z, ridge, cfg)
    info = {"n": n, "r": r, "method": "fast", "L": int(z.size), "ridge": ridge,
            "iterations": res.iterations, "residual": res.residual}
    return SecondMomentEstimate(res.x, np.ones_like(z), left, right, pts, kernel, float(eta), h, info)


def eval_second_moment(est: SecondMomentEstimate, u, v):
    """Evaluate the fitted bivariate function; matrices for point sets."""
    pu = est.kernel(gram_cosines(np.atleast_2d(u), est.locations))
    pv = est.kernel(gram_cosines(np.atleast_2d(v), est.locations))
    vals = pu @ est.coefficient_matrix() @ pv.T
    if np.ndim(u) == 1 and np.ndim(v) == 1:
        return float(vals[0, 0])
    return vals


def eval_covariance(r_est: SecondMomentEstimate, m_est: MeanEstimate | None, u, v):
    """``R(u, v) - mu(u) mu(v)``."""
    R = eval_second_moment(r_est, u, v)
    if m_est is None:
        return R
    mu_u = np.atleast_1d(eval_mean(m_est, u))
    mu_v = np.atleast_1d(eval_mean(m_est, v))
    out = R - np.outer(mu_u, mu_v)
    return float(out[0, 0]) if np.ndim(R) == 0 else out


# ---------------------------------------------------------------------------
# persistence


def _save_records(path, header: dict, records: np.ndarray) -> None:
    path = Path(path)
    path.with_suffix(".json").write_text(json.dumps(header, indent=2))
    np.savetxt(path.with_suffix(".csv"), records, delimiter=",", fmt="%.17g")


def load_estimate(path):
    """Load a saved mean or second-moment estimate for evaluation."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    recs = np.loadtxt(path.with_suffix(".csv"), delimiter=",", ndmin=2)
    kernel = kernel_from_spec(header["kernel"])
    if header["type"] == "mean":
        return MeanEstimate.from_coefficients(recs[:, :3], recs[:, 3], kernel, header["eta"])
    L = recs.shape[0]
    locs, inverse = np.unique(np.vstack((recs[:, 0:3], recs[:, 3:6])), axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    return SecondMomentEstimate(recs[:, 6], np.ones(L), inverse[:L], inverse[L:], locs, kernel,
                                header["eta"], int(header.get("lag", 0)),
                                {k: header[k] for k in ("n", "r") if k in header})
