"""Legendre polynomials and real orthonormal spherical harmonics.

Real harmonics use unit L2 normalization on the sphere and no
Condon-Shortley phase, so that ``Y_{0,0} = 1/sqrt(4*pi)`` and the addition
theorem holds without sign bookkeeping.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

MAX_DEGREE = 2048


class HarmonicIndex(NamedTuple):
    degree: int
    order: int

    def validate(self) -> "HarmonicIndex":
        if self.degree < 0 or abs(self.order) > self.degree:
            raise ValueError(f"invalid harmonic index {tuple(self)}")
        if self.degree > MAX_DEGREE:
            raise ValueError(f"degree above supported maximum {MAX_DEGREE}")
        return self


def _check_t(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + 1e-12):
        raise ValueError("Legendre argument must lie in [-1, 1]")
    return np.clip(t, -1.0, 1.0)


def legendre_all(max_degree: int, t) -> np.ndarray:
    """Return ``P_0(t), ..., P_L(t)`` stacked along the first axis."""
    if max_degree < 0:
        raise ValueError("degree must be non-negative")
    t = _check_t(t)
    out = np.empty((max_degree + 1,) + t.shape)
    out[0] = 1.0
    if max_degree >= 1:
        out[1] = t
    for ell in range(1, max_degree):
        out[ell + 1] = ((2 * ell + 1) * t * out[ell] - ell * out[ell - 1]) / (ell + 1)
    return out


def legendre_p(degree: int, t):
    """Legendre polynomial ``P_degree(t)`` by upward three-term recurrence."""
    vals = legendre_all(degree, t)[degree]
    return float(vals) if np.ndim(vals) == 0 else vals


def legendre_series(coeffs, t) -> np.ndarray:
    """Evaluate ``sum_l coeffs[l] * P_l(t)`` with Clenshaw's recurrence."""
    coeffs = np.asarray(coeffs, dtype=float)
    t = _check_t(t)
    b1 = np.zeros_like(t)
    b2 = np.zeros_like(t)
    for ell in range(len(coeffs) - 1, 0, -1):
        alpha = (2 * ell + 1) / (ell + 1) * t
        beta = -(ell + 1) / (ell + 2)
        b1, b2 = coeffs[ell] + alpha * b1 + beta * b2, b1
    return coeffs[0] + t * b1 - 0.5 * b2


def _normalized_assoc_legendre(max_degree: int, x: np.ndarray) -> dict:
    """Orthonormal associated Legendre values ``Nbar[(l, m)]`` for m >= 0.

    ``Nbar_l^m(cos theta)`` integrates to ``1/(2*pi)`` in ``d(cos theta)``
    when squared, i.e. it already carries ``sqrt((2l+1)/(4pi) (l-m)!/(l+m)!)``.
    """
    if max_degree > MAX_DEGREE:
        raise ValueError(f"degree above supported maximum {MAX_DEGREE}")
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    table = {}
    diag = np.full_like(x, 1.0 / np.sqrt(4.0 * np.pi))
    for m in range(max_degree + 1):
        if m > 0:
            diag = np.sqrt((2 * m + 1) / (2.0 * m)) * s * diag
        table[(m, m)] = diag
        if m + 1 <= max_degree:
            table[(m + 1, m)] = np.sqrt(2 * m + 3.0) * x * diag
        for ell in range(m + 2, max_degree + 1):
            a = np.sqrt((4.0 * ell * ell - 1.0) / (ell * ell - m * m))
            b = np.sqrt(((ell - 1.0) ** 2 - m * m) / (4.0 * (ell - 1.0) ** 2 - 1.0))
            table[(ell, m)] = a * (x * table[(ell - 1, m)] - b * table[(ell - 2, m)])
    return table


def _angles(points):
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    x = np.clip(pts[:, 2], -1.0, 1.0)
    phi = np.arctan2(pts[:, 1], pts[:, 0])
    return x, phi, single


def real_sph_harm_all(max_degree: int, points) -> np.ndarray:
    """All real harmonics up to ``max_degree`` at ``points``.

    Returns shape ``(N, (L+1)**2)`` with column ``l*l + l + m`` holding
    ``Y_{l,m}``.
    """
    x, phi, _ = _angles(points)
    table = _normalized_assoc_legendre(max_degree, x)
    out = np.empty((x.shape[0], (max_degree + 1) ** 2))
    root2 = np.sqrt(2.0)
    for ell in range(max_degree + 1):
        base = ell * ell + ell
        out[:, base] = table[(ell, 0)]
        for m in range(1, ell + 1):
            out[:, base + m] = root2 * table[(ell, m)] * np.cos(m * phi)
            out[:, base - m] = root2 * table[(ell, m)] * np.sin(m * phi)
    return out


def real_sph_harm(idx, points):
    """Real orthonormal spherical harmonic ``Y_{l,m}`` at one or many points."""
    ell, m = HarmonicIndex(*idx).validate()
    x, phi, single = _angles(points)
    nbar = _normalized_assoc_legendre(ell, x)[(ell, abs(m))]
    if m > 0:
        vals = np.sqrt(2.0) * nbar * np.cos(m * phi)
    elif m < 0:
        vals = np.sqrt(2.0) * nbar * np.sin(-m * phi)
    else:
        vals = nbar
    return float(vals[0]) if single else vals


def addition_theorem_sum(degree: int, u, v):
    """``sum_m Y_{l,m}(u) Y_{l,m}(v)`` computed from the harmonics directly."""
    yu = real_sph_harm_all(degree, u)[:, degree * degree:]
    yv = real_sph_harm_all(degree, v)[:, degree * degree:]
    vals = np.sum(yu * yv, axis=1)
    return float(vals[0]) if np.ndim(u) == 1 and np.ndim(v) == 1 else vals
