import numpy as np
import pytest
from scipy import stats

from spherecov.harmonics import real_sph_harm
from spherecov.sphere import (
    SphereGrid,
    dot,
    fibonacci_grid,
    read_points_csv,
    sample_uniform_sphere,
    write_points_csv,
)


class TestUniformSampling:
    def test_single_point_unit_norm(self):
        p = sample_uniform_sphere(1, 3)
        assert p.shape == (1, 3)
        assert abs(np.linalg.norm(p[0]) - 1.0) < 1e-12

    def test_all_points_unit_norm(self):
        pts = sample_uniform_sphere(5000, 1)
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)

    def test_mean_vector_small(self):
        # sd of each mean coordinate is sqrt(1/3 / 1e4); 3 sigma on the norm ~ 0.02
        pts = sample_uniform_sphere(10_000, 7)
        assert np.linalg.norm(pts.mean(axis=0)) < 0.05

    def test_deterministic(self):
        np.testing.assert_array_equal(sample_uniform_sphere(50, 9), sample_uniform_sphere(50, 9))

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError):
            sample_uniform_sphere(0, 1)

    def test_z_coordinate_uniform(self):
        # Archimedes: z is uniform on [-1, 1] for the uniform sphere measure
        z = sample_uniform_sphere(100_000, 11)[:, 2]
        counts, _ = np.histogram(z, bins=50, range=(-1, 1))
        assert stats.chisquare(counts).pvalue > 1e-3


class TestDot:
    def test_self(self):
        u = sample_uniform_sphere(1, 2)[0]
        assert dot(u, u) == 1.0

    def test_antipode(self):
        u = sample_uniform_sphere(1, 2)[0]
        assert dot(u, -u) == -1.0

    def test_orthogonal_axes(self):
        assert dot([1.0, 0, 0], [0, 1.0, 0]) == 0.0

    def test_clamped(self):
        u = np.array([1.0 + 1e-15, 0.0, 0.0])
        assert dot(u, u) <= 1.0


class TestFibonacciGrid:
    def test_two_nodes(self):
        g = fibonacci_grid(2)
        np.testing.assert_allclose(g.weights, [2 * np.pi, 2 * np.pi])

    def test_distinct_nodes(self):
        g = fibonacci_grid(1000)
        cos = g.nodes @ g.nodes.T
        np.fill_diagonal(cos, -1.0)
        assert np.arccos(np.clip(cos.max(), -1, 1)) > 0

    def test_constant_quadrature(self):
        assert abs(fibonacci_grid(777).integrate(np.ones(777)) - 4 * np.pi) < 1e-9

    def test_rejects_small(self):
        with pytest.raises(ValueError):
            fibonacci_grid(1)

    def test_unit_nodes(self):
        g = fibonacci_grid(300)
        np.testing.assert_allclose(np.linalg.norm(g.nodes, axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("ell", [1, 2, 3, 4, 5])
    def test_harmonics_integrate_to_zero(self, ell):
        g = fibonacci_grid(2000)
        for m in range(-ell, ell + 1):
            assert abs(g.integrate(real_sph_harm((ell, m), g.nodes))) < 0.05

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            SphereGrid(np.array([[1.0, 0, 0], [0, 0, 1.0]]), np.array([1.0, 1.0]))


def test_points_csv_roundtrip(tmp_path):
    pts = sample_uniform_sphere(20, 4)
    path = tmp_path / "pts.csv"
    write_points_csv(path, pts)
    np.testing.assert_array_equal(read_points_csv(path), pts)
