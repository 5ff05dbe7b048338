"""Admissible spectral operators and their zonal Green's kernels.

An operator acts diagonally on spherical harmonics with coefficients
``D_l``. The kernel used by every estimator is the zonal Green's kernel of
``D* D``::

    psi(t) = sum_l (2l+1)/(4 pi) * P_l(t) / D_l**2

Matérn kernels are evaluated in closed form and never through the series.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .harmonics import legendre_all, legendre_series

DEFAULT_L_MAX = 256
TAIL_REL_TOL = 1e-6
SUPPORTED_NU = (0.5, 1.5, 2.5)


class InsufficientTruncationError(ValueError):
    """Series tail is too large relative to the kernel value at t = 1."""


@dataclass(frozen=True)
class SpectralOperator:
    """Spectral coefficients ``D_0 .. D_Lmax`` with a growth order ``p``."""

    coeffs: np.ndarray
    growth_order: float
    name: str = "custom"

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 1 or coeffs.size < 2:
            raise ValueError("need at least two spectral coefficients")
        if np.any(coeffs == 0) or not np.all(np.isfinite(coeffs)):
            raise ValueError("spectral coefficients must be finite and nonzero")
        if self.growth_order < 0:
            raise ValueError("growth order must be >= 0")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def L_max(self) -> int:
        return self.coeffs.size - 1

    def growth_bounds(self) -> tuple[float, float]:
        """Empirical ``(C1, C2)`` with ``C1 (1+l)^p <= |D_l| <= C2 (1+l)^p``."""
        ratio = np.abs(self.coeffs) / (1.0 + np.arange(self.coeffs.size)) ** self.growth_order
        return float(ratio.min()), float(ratio.max())


def sobolev_operator(p: float, L_max: int = DEFAULT_L_MAX) -> SpectralOperator:
    """Sobolev operator ``(Id - Laplacian)^{p/2}``: ``D_l = (1 + l(l+1))^{p/2}``."""
    if p <= 1:
        raise ValueError("Sobolev order must exceed 1 for the space to be a RKHS")
    if L_max < 1:
        raise ValueError("L_max must be positive")
    ell = np.arange(L_max + 1, dtype=float)
    return SpectralOperator((1.0 + ell * (ell + 1.0)) ** (p / 2.0), float(p), name="sobolev")


@dataclass(frozen=True)
class ZonalKernel:
    """A function of ``t = <u, v>`` on [-1, 1].

    ``kind`` is ``"series"`` (truncated Legendre expansion) or ``"matern"``
    (closed form). ``meta`` carries the defining parameters.
    """

    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    kind: str
    meta: dict = field(default_factory=dict)

    def __call__(self, t):
        t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
        vals = self.evaluator(t)
        return float(vals) if np.ndim(vals) == 0 else vals

    @property
    def peak(self) -> float:
        """Kernel value at coincidence, ``psi(1)``."""
        return float(self(1.0))

    def gram(self, a, b=None) -> np.ndarray:
        from .sphere import gram_cosines

        return self(gram_cosines(a, a if b is None else b))

    def to_dict(self) -> dict:
        return dict(self.meta)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _tail_bound(op: SpectralOperator) -> float:
    """Upper bound on ``sum_{l > Lmax} (2l+1)/(4pi) / D_l^2`` from growth bounds."""
    p = op.growth_order
    if p <= 1:
        return math.inf
    c1, _ = op.growth_bounds()
    L = op.L_max
    # (2l+1) <= 2(1+l), integral of 2 (1+x)^(1-2p) from L to inf
    return 2.0 * (1.0 + L) ** (2.0 - 2.0 * p) / ((2.0 * p - 2.0) * 4.0 * np.pi * c1 * c1)


def green_kernel_dstar_d(op: SpectralOperator, strict: bool = True) -> ZonalKernel:
    """Zonal Green's kernel of ``D* D`` as a truncated Legendre series.

    With ``strict`` set, an operator whose truncation tail bound exceeds
    ``1e-6 * psi(1)`` is rejected.
    """
    ell = np.arange(op.L_max + 1)
    series = (2 * ell + 1) / (4 * np.pi) / op.coeffs**2
    tail = _tail_bound(op)
    head = float(series.sum())
    if strict and tail > TAIL_REL_TOL * head:
        raise InsufficientTruncationError(
            f"tail bound {tail:.3e} exceeds {TAIL_REL_TOL:g} of psi(1) = {head:.6g}; increase L_max"
        )
    meta = {"kind": op.name, "p": op.growth_order, "L_max": op.L_max, "tail_bound": tail}

    def evaluate(t):
        return legendre_series(series, t)

    kern = ZonalKernel(evaluate, "series", meta)
    object.__setattr__(kern, "legendre_coeffs", series)
    return kern


def matern_profile(nu: float, eps: float) -> Callable[[np.ndarray], np.ndarray]:
    """Closed-form Matérn function ``S(s)`` for half-integer ``nu``."""
    if not any(abs(nu - v) < 1e-12 for v in SUPPORTED_NU):
        raise ValueError(f"unsupported nu={nu}; supported values are {SUPPORTED_NU}")
    if eps <= 0:
        raise ValueError("scale eps must be positive")
    if nu < 1:
        return lambda s: np.exp(-s / eps)
    if nu < 2:
        c = np.sqrt(3.0) / eps
        return lambda s: (1.0 + c * s) * np.exp(-c * s)
    c = np.sqrt(5.0) / eps

    def s52(s):
        return (1.0 + c * s + 5.0 * s * s / (3.0 * eps * eps)) * np.exp(-c * s)

    return s52


def matern_zonal(nu: float = 2.5, eps: float = 0.4) -> ZonalKernel:
    """Spherical Matérn kernel ``psi(t) = S(sqrt(2 - 2t))``.

    The associated operator has spectral growth ``2(nu + 1)``; it is stored
    as metadata only.
    """
    profile = matern_profile(nu, eps)

    def evaluate(t):
        return profile(np.sqrt(np.clip(2.0 - 2.0 * t, 0.0, None)))

    meta = {"kind": "matern", "nu": float(nu), "eps": float(eps), "p": 2.0 * (nu + 1.0)}
    return ZonalKernel(evaluate, "matern", meta)


def kernel_from_spec(spec: dict) -> ZonalKernel:
    """Build a kernel from its JSON description."""
    kind = spec.get("kind")
    if kind == "matern":
        return matern_zonal(float(spec.get("nu", 2.5)), float(spec.get("eps", 0.4)))
    if kind == "sobolev":
        op = sobolev_operator(float(spec["p"]), int(spec.get("L_max", DEFAULT_L_MAX)))
        return green_kernel_dstar_d(op)
    raise ValueError(f"unknown kernel kind {kind!r}")


def zonal_spectral_coeffs(kernel: ZonalKernel, L_max: int, n_nodes: int | None = None,
                          strict: bool = True) -> np.ndarray:
    """Fourier-Legendre coefficients ``c_l = 2 pi int psi(t) P_l(t) dt``.

    The integral is taken in the polar angle (``t = cos theta``), where the
    Matérn profile is analytic, with Gauss-Legendre nodes (at least
    ``4 * L_max``). With ``strict``, a non-positive coefficient raises.
    """
    n_nodes = max(4 * L_max, 512) if n_nodes is None else n_nodes
    if n_nodes < 4 * L_max:
        raise ValueError("need at least 4 * L_max quadrature nodes")
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    theta = 0.5 * np.pi * (x + 1.0)
    w = 0.5 * np.pi * w * np.sin(theta)
    t = np.cos(theta)
    vals = np.asarray(kernel(t)) * w
    coeffs = 2.0 * np.pi * (legendre_all(L_max, t) @ vals)
    scale = abs(coeffs[0])
    bad = np.nonzero(coeffs <= 1e-15 * scale)[0]
    if bad.size:
        msg = f"non-positive spectral coefficients at degrees {bad.tolist()[:10]}"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return coeffs
