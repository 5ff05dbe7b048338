import json

import mpmath
import numpy as np
import pytest

from spherecov.harmonics import legendre_p, real_sph_harm_all
from spherecov.kernels import (
    InsufficientTruncationError,
    SpectralOperator,
    ZonalKernel,
    green_kernel_dstar_d,
    kernel_from_spec,
    matern_zonal,
    sobolev_operator,
    zonal_spectral_coeffs,
)
from spherecov.sphere import sample_uniform_sphere


def mp_matern52(t, eps):
    s = mpmath.sqrt(2 - 2 * mpmath.mpf(t))
    c = mpmath.sqrt(5) * s / eps
    return float((1 + c + 5 * s**2 / (3 * mpmath.mpf(eps) ** 2)) * mpmath.exp(-c))


class TestSobolevOperator:
    def test_first_coefficients(self):
        op = sobolev_operator(2.5)
        np.testing.assert_allclose(op.coeffs[:2], [1.0, 3.0**1.25], rtol=1e-14)

    def test_rejects_low_order(self):
        with pytest.raises(ValueError):
            sobolev_operator(1.0)

    def test_growth_bounds(self):
        c1, c2 = sobolev_operator(2.0).growth_bounds()
        assert 0 < c1 <= c2


class TestGreenKernel:
    def test_identity_operator_sum(self):
        op = SpectralOperator(np.ones(11), 0.0, "identity")
        k = green_kernel_dstar_d(op, strict=False)
        assert k(1.0) == pytest.approx(sum((2 * l + 1) / (4 * np.pi) for l in range(11)), rel=1e-13)

    def test_identity_operator_strict_rejected(self):
        op = SpectralOperator(np.ones(11), 0.0, "identity")
        with pytest.raises(InsufficientTruncationError):
            green_kernel_dstar_d(op)

    def test_truncation_too_short(self):
        with pytest.raises(InsufficientTruncationError):
            green_kernel_dstar_d(sobolev_operator(2.5, L_max=16))

    def test_addition_theorem_route(self):
        op = sobolev_operator(2.5, 256)
        k = green_kernel_dstar_d(op)
        u = sample_uniform_sphere(6, 31)
        v = sample_uniform_sphere(6, 32)
        Yu = real_sph_harm_all(256, u)
        Yv = real_sph_harm_all(256, v)
        deg = np.repeat(np.arange(257), 2 * np.arange(257) + 1)
        via_harmonics = np.sum(Yu * Yv / op.coeffs[deg] ** 2, axis=1)
        direct = k(np.sum(u * v, axis=1))
        np.testing.assert_allclose(direct, via_harmonics, atol=1e-9)

    def test_reproducing_coefficients(self):
        # spectral coefficients of the kernel section are 1 / D_l^2
        op = sobolev_operator(3.0, 256)
        c = zonal_spectral_coeffs(green_kernel_dstar_d(op), 40)
        expect = 1.0 / op.coeffs[:41] ** 2
        np.testing.assert_allclose(c, expect, rtol=1e-10, atol=1e-13 * expect[0])

    @pytest.mark.parametrize("p", [2.5, 3.0, 4.0])
    def test_truncation_stability(self, p):
        t = np.linspace(-1, 1, 20)
        a = green_kernel_dstar_d(sobolev_operator(p, 256))(t)
        b = green_kernel_dstar_d(sobolev_operator(p, 512))(t)
        assert np.abs(a - b).max() < 1e-7

    def test_psd_gram(self):
        k = green_kernel_dstar_d(sobolev_operator(2.5))
        pts = sample_uniform_sphere(50, 2)
        assert np.linalg.eigvalsh(k.gram(pts)).min() >= -1e-10


class TestMatern:
    def test_peak(self, matern):
        assert matern(1.0) == 1.0

    def test_antipodal_value(self, matern):
        assert matern(-1.0) == pytest.approx(mp_matern52(-1, 0.4), rel=1e-12)
        assert matern(-1.0) == pytest.approx(7.52e-4, rel=2e-3)

    @pytest.mark.parametrize("t", [-0.7, -0.1, 0.3, 0.9, 0.999])
    def test_against_mpmath(self, matern, t):
        assert matern(t) == pytest.approx(mp_matern52(t, 0.4), rel=1e-12)

    def test_monotone(self, matern):
        vals = matern(np.linspace(-1, 1, 2001))
        assert np.all(np.diff(vals) >= 0)

    def test_lower_smoothness(self):
        k = matern_zonal(0.5, 0.4)
        assert k(0.0) == pytest.approx(np.exp(-np.sqrt(2) / 0.4), rel=1e-14)

    def test_unsupported_nu(self):
        with pytest.raises(ValueError, match="2.5"):
            matern_zonal(1.0, 0.4)

    def test_psd_gram(self, matern):
        pts = sample_uniform_sphere(50, 3)
        assert np.linalg.eigvalsh(matern.gram(pts)).min() >= -1e-10

    def test_spectral_positive(self, matern):
        c = zonal_spectral_coeffs(matern, 60)
        assert np.all(c > 0)

    def test_spectral_decay_slope(self, matern):
        ell = np.arange(10, 51)
        c = zonal_spectral_coeffs(matern, 50)[ell]
        slope = np.polyfit(np.log1p(ell), np.log(c), 1)[0]
        assert -8.5 <= slope <= -5.5

    def test_metadata_json_roundtrip(self, matern):
        spec = json.loads(matern.to_json())
        assert spec == {"kind": "matern", "nu": 2.5, "eps": 0.4, "p": 7.0}
        again = kernel_from_spec(spec)
        t = np.linspace(-1, 1, 9)
        np.testing.assert_array_equal(again(t), matern(t))


class TestSpectralCoeffs:
    @pytest.mark.parametrize("l0", [0, 3, 12])
    def test_single_band(self, l0):
        k = ZonalKernel(lambda t: (2 * l0 + 1) / (4 * np.pi) * legendre_p(l0, t), "series")
        with pytest.warns(RuntimeWarning):
            c = zonal_spectral_coeffs(k, 20, strict=False)
        expect = np.zeros(21)
        expect[l0] = 1.0
        np.testing.assert_allclose(c, expect, atol=1e-12)

    def test_too_few_nodes(self, matern):
        with pytest.raises(ValueError):
            zonal_spectral_coeffs(matern, 200, n_nodes=100)


def test_kernel_spec_sobolev():
    k = kernel_from_spec({"kind": "sobolev", "p": 3.0})
    assert k.meta["p"] == 3.0


def test_kernel_spec_unknown():
    with pytest.raises(ValueError):
        kernel_from_spec({"kind": "gauss"})
