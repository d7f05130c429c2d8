import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radscat.grid import (GridError, SpectralCoefficients, WaveFunction, inner_product,
                          inverse_sine_transform, laplacian_radial, load_wavefunction,
                          make_grid, radial_sobolev_check, save_wavefunction,
                          sine_transform)


def random_wave(grid, rng):
    v = rng.standard_normal(grid.n_points) + 1j * rng.standard_normal(grid.n_points)
    v[-1] = 0.0
    return grid.wavefunction(v)


def sine_mode(grid, k):
    return grid.wavefunction(np.sin(k * np.pi * grid.nodes / grid.r_max))


class TestMakeGrid:
    def test_spacing(self):
        g = make_grid(4096, 200.0)
        assert g.spacing == pytest.approx(200.0 / 4096)
        assert g.spacing == pytest.approx(0.04883, abs=1e-5)

    def test_nodes(self):
        g = make_grid(16, 1.0)
        assert g.nodes[0] == pytest.approx(1 / 16)
        assert g.nodes[-1] == pytest.approx(1.0)
        assert len(g.nodes) == 16

    @pytest.mark.parametrize("n, r_max", [(8, 1.0), (16, -1.0), (16, 0.0)])
    def test_rejects_bad_arguments(self, n, r_max):
        with pytest.raises(GridError):
            make_grid(n, r_max)


class TestInnerProduct:
    def test_single_node(self):
        g = make_grid(32, 4.0)
        v = np.zeros(32)
        v[0] = 1.0
        u = g.wavefunction(v)
        assert inner_product(u, u) == pytest.approx(g.spacing)

    def test_sesquilinear(self, rng):
        g = make_grid(64, 5.0)
        u = random_wave(g, rng)
        iu = g.wavefunction(1j * u.values)
        # conjugate-linear in the second slot
        assert inner_product(u, iu) == pytest.approx(-1j * u.norm() ** 2)
        assert inner_product(iu, u) == pytest.approx(1j * u.norm() ** 2)

    def test_sine_modes_orthogonal(self):
        g = make_grid(128, 10.0)
        assert abs(inner_product(sine_mode(g, 3), sine_mode(g, 7))) < 1e-12


class TestSineTransform:
    def test_basis_vector(self):
        g = make_grid(64, 3.0)
        c = sine_transform(sine_mode(g, 1)).coefficients
        assert np.count_nonzero(np.abs(c) > 1e-10 * np.abs(c).max()) == 1
        assert np.argmax(np.abs(c)) == 0

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), n=st.sampled_from([16, 33, 64, 100]))
    def test_round_trip_and_parseval(self, seed, n):
        g = make_grid(n, 7.0)
        u = random_wave(g, np.random.default_rng(seed))
        c = sine_transform(u)
        back = inverse_sine_transform(c)
        assert np.max(np.abs(back.values - u.values)) < 1e-12 * np.max(np.abs(u.values))
        assert np.linalg.norm(c.coefficients) == pytest.approx(u.norm(), rel=1e-12)

    def test_coefficients_type(self):
        g = make_grid(16, 1.0)
        assert isinstance(sine_transform(g.zeros()), SpectralCoefficients)


class TestLaplacian:
    @pytest.mark.parametrize("k", [1, 4, 11])
    def test_sine_eigenfunction(self, k):
        g = make_grid(128, 6.0)
        u = sine_mode(g, k)
        lap = laplacian_radial(u)
        assert np.allclose(lap.values, (k * np.pi / g.r_max) ** 2 * u.values, atol=1e-10)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_positive(self, seed):
        g = make_grid(64, 5.0)
        u = random_wave(g, np.random.default_rng(seed))
        assert inner_product(u, laplacian_radial(u)).real >= 0

    def test_matches_second_difference(self):
        # u = r exp(-(r-5)^2): spectral -u'' against the centered stencil
        errs = []
        for n in (256, 512):
            g = make_grid(n, 10.0)
            r, h = g.nodes, g.spacing
            u = g.wavefunction(r * np.exp(-(r - 5) ** 2))
            full = np.concatenate([[0.0], u.values.real, [0.0]])
            stencil = -(full[2:] - 2 * full[1:-1] + full[:-2]) / h ** 2
            errs.append(np.max(np.abs(laplacian_radial(u).values.real - stencil)[:-1]))
        # second order: halving h quarters the gap
        assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.02)


class TestSobolev:
    def test_gaussian_against_closed_form(self):
        g = make_grid(4096, 200.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        rep = radial_sobolev_check(u)
        # sup_{r>=1} r exp(-r^2/2) at r = 1; ||psi||_{H^1}^2 = 5 sqrt(pi) / 8
        assert rep.sup_weighted == pytest.approx(np.exp(-0.5), rel=1e-3)
        assert rep.h1_norm == pytest.approx(np.sqrt(5 * np.sqrt(np.pi) / 8), rel=1e-8)
        assert rep.ratio < 1.0

    def test_homogeneous(self):
        g = make_grid(1024, 40.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        two = g.wavefunction(2 * u.values)
        assert radial_sobolev_check(two).ratio == pytest.approx(radial_sobolev_check(u).ratio)

    def test_far_concentration_bounded(self):
        g = make_grid(4096, 200.0)
        gauss = radial_sobolev_check(g.from_function(lambda r: r * np.exp(-r ** 2 / 2)))
        far = radial_sobolev_check(g.from_function(lambda r: r * np.exp(-(r - 50) ** 2 / 2)))
        # direct quadrature of the same quantities
        r = np.linspace(1e-6, 200, 400001)
        u = r * np.exp(-(r - 50) ** 2 / 2)
        du = np.gradient(u, r)
        ratio = np.max(np.abs(u)) / np.sqrt(np.trapezoid(u ** 2 + du ** 2, r))
        assert far.ratio == pytest.approx(ratio, rel=1e-3)
        assert far.ratio <= 2 * max(gauss.ratio, 1.0)


def test_wavefunction_file_round_trip(tmp_path, rng):
    g = make_grid(32, 3.0)
    u = random_wave(g, rng)
    save_wavefunction(u, tmp_path / "u.dat")
    back = load_wavefunction(tmp_path / "u.dat")
    assert isinstance(back, WaveFunction)
    assert back.grid == g
    assert np.array_equal(back.values, u.values)
