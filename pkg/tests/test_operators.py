import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radscat import oracle
from radscat.cutoffs import gaussian, make_cutoff, tanh_projection
from radscat.evolution import evolve, free_model
from radscat.grid import inner_product, make_grid, sine_synthesis
from radscat.observables import second_moment
from radscat.operators import (OperatorError, apply_spatial_cutoff, commutator_expand_verify,
                               default_vector_field, dilation_apply, dilation_flow,
                               dyadic_frequencies, functional_calculus_A, gamma_apply,
                               littlewood_paley, littlewood_paley_sum, sech2_envelope_check,
                               smooth_projection_pm, symmetrization_check,
                               tanh_commutator_check)

from conftest import gaussian_r


def band_limited(grid, rng, j_max=40):
    c = np.zeros(grid.n_points - 1, dtype=complex)
    c[:j_max] = rng.standard_normal(j_max) + 1j * rng.standard_normal(j_max)
    return grid.wavefunction(sine_synthesis(c, grid.spacing))


def rand_hermitian(rng, n):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (X + X.conj().T)


# ---------------------------------------------------------------------------
# spatial cutoffs
# ---------------------------------------------------------------------------

class TestSpatialCutoff:
    def test_support_beyond_grid(self, grid256, rng):
        u = band_limited(grid256, rng)
        out = apply_spatial_cutoff(make_cutoff(1.0), 2 * grid256.r_max, u)
        assert np.all(out.values == 0)

    def test_complementary_pair(self, grid256, rng):
        u = band_limited(grid256, rng)
        F = make_cutoff(1.0, eps=0.2)
        total = apply_spatial_cutoff(F, 10.0, u).values + \
            apply_spatial_cutoff(F.complement(), 10.0, u).values
        assert np.allclose(total, u.values, atol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.1, 100.0))
    def test_contraction(self, seed, scale):
        g = make_grid(128, 20.0)
        u = band_limited(g, np.random.default_rng(seed))
        assert apply_spatial_cutoff(make_cutoff(1.0), scale, u).norm() <= u.norm() * (1 + 1e-14)

    def test_bad_scale(self, grid256):
        with pytest.raises(OperatorError):
            apply_spatial_cutoff(make_cutoff(1.0), 0.0, grid256.zeros())


# ---------------------------------------------------------------------------
# gamma and A
# ---------------------------------------------------------------------------

class TestGamma:
    def test_real_input_has_zero_expectation(self, grid256):
        # packet negligible near the wall so its odd extension is smooth
        u = gaussian_r(grid256, center=12.0, width=2.0)
        assert abs(inner_product(u, gamma_apply(grid256, u))) < 1e-12 * u.norm() ** 2

    def test_symbol_on_outgoing_bump(self):
        g = make_grid(1024, 40.0)
        r = g.nodes
        scaled = []
        for width in (4.0, 8.0):
            bump = make_cutoff(4.0, 4.0 + width, width / 4)(r)
            for k in (2.0, 4.0, 8.0):
                u = g.wavefunction(bump * np.exp(1j * k * r))
                err = (gamma_apply(g, u) - g.wavefunction(k * u.values)).norm() / (k * u.norm())
                scaled.append(err * k * width)
        # relative error = C / (k width) with one constant C
        assert np.ptp(scaled) < 1e-3 * np.mean(scaled)
        assert np.mean(scaled) < 5.0

    def test_expectation_against_dense(self):
        g = make_grid(513, 40.0)
        r = g.nodes
        u = g.wavefunction(r * np.exp(-(r - 10) ** 2) * np.exp(2j * r))
        G = oracle.dense_gamma(g, default_vector_field)
        got = inner_product(gamma_apply(g, u), u) / u.norm() ** 2
        ref = inner_product(G.apply(u), u) / u.norm() ** 2
        assert got == pytest.approx(2.0, abs=1e-6)
        assert abs(got - ref) < 1e-10


class TestDilation:
    def test_gaussian_against_dense(self):
        g = make_grid(513, 40.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        Au = dilation_apply(u)
        ref = oracle.dense_dilation(g).apply(u)
        assert (Au - ref).norm() < 1e-10 * u.norm()
        # real gaussian: <A> is real and vanishes
        assert abs(inner_product(Au, u)) < 1e-12

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_self_adjoint(self, seed):
        g = make_grid(256, 40.0)
        u = band_limited(g, np.random.default_rng(seed))
        assert abs(inner_product(dilation_apply(u), u).imag) < 1e-10 * u.norm() ** 2

    def test_second_moment_rate_is_four_A(self):
        g = make_grid(1024, 80.0)
        u0 = gaussian_r(g, center=5.0, width=1.5, momentum=1.0)
        traj = evolve(u0, 0.0, 5.0, 0.01, free_model(), save_every=0.05, absorb=False)
        x2 = np.array([second_moment(traj.snapshot(i)) for i in range(len(traj))])
        A = np.array([inner_product(dilation_apply(traj.snapshot(i)), traj.snapshot(i)).real
                      for i in range(len(traj))])
        rate = (x2[2:] - x2[:-2]) / (traj.times[2:] - traj.times[:-2])
        assert np.max(np.abs(rate - 4 * A[1:-1])) < 1e-8 * np.max(np.abs(4 * A))


class TestDilationFlow:
    def test_zero_is_identity(self, grid256):
        u = gaussian_r(grid256, 5.0)
        assert dilation_flow(u, 0.0) is u

    @pytest.mark.parametrize("s", [-1.0, -0.4, 0.3, 1.0])
    def test_unitary(self, s):
        g = make_grid(1024, 40.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        assert dilation_flow(u, s).norm() == pytest.approx(u.norm(), abs=1e-8)

    def test_closed_form(self):
        g = make_grid(512, 20.0)
        r = g.nodes
        u = g.wavefunction(r * np.exp(-r ** 2 / 2))
        s = np.log(2.0)
        expect = np.exp(s / 2) * (2 * r) * np.exp(-2 * r ** 2)
        assert np.max(np.abs(dilation_flow(u, s).values - expect)) < 1e-10

    def test_range_guard(self, grid256):
        with pytest.raises(OperatorError):
            dilation_flow(gaussian_r(grid256), 10.0)


# ---------------------------------------------------------------------------
# functional calculus
# ---------------------------------------------------------------------------

class TestFunctionalCalculus:
    def test_identity(self):
        g = make_grid(513, 40.0)
        u = gaussian_r(g, center=10.0, width=2.0, momentum=1.0)
        out = functional_calculus_A(lambda a: np.ones_like(a), u)
        assert (out - u).norm() < 1e-10 * u.norm()

    def test_routes_agree(self):
        g = make_grid(513, 40.0)
        u = gaussian_r(g, center=10.0, width=2.0, momentum=1.0)
        f = gaussian(0.5, 2.0)
        a = functional_calculus_A(f, u)
        b = functional_calculus_A(f, u, method="quadrature")
        assert (a - b).norm() < 1e-9 * u.norm()

    def test_quadrature_needs_fourier_transform(self, grid256):
        with pytest.raises(OperatorError):
            functional_calculus_A(tanh_projection(1, 5.0, 2.0), gaussian_r(grid256),
                                  method="quadrature")

    @settings(max_examples=15, deadline=None)
    @given(center=st.floats(-6, 6), width=st.floats(0.5, 4.0), seed=st.integers(0, 2 ** 32 - 1))
    def test_contraction(self, center, width, seed):
        g = make_grid(256, 40.0)
        u = band_limited(g, np.random.default_rng(seed), j_max=30)
        out = functional_calculus_A(gaussian(center, width), u)
        assert out.norm() <= u.norm() * (1 + 1e-6)

    @pytest.mark.parametrize("center, width", [(0.0, 4.0), (1.0, 3.0), (-2.0, 2.0)])
    def test_gaussian_against_dense(self, center, width):
        g = make_grid(513, 40.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        f = gaussian(center, width)
        ref = oracle.exact_function(oracle.dense_dilation(g), f).apply(u)
        assert (functional_calculus_A(f, u) - ref).norm() < 1e-6 * u.norm()

    @pytest.mark.xfail(strict=True, reason="dense oracle at 512 resolves this profile only "
                       "to about 2.7e-6; see the 1024-point variant")
    def test_tanh_projection_against_dense_512(self):
        g = make_grid(513, 40.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        f = tanh_projection(1, 5.0, np.sqrt(5.0))
        ref = oracle.exact_function(oracle.dense_dilation(g), f).apply(u)
        assert (functional_calculus_A(f, u) - ref).norm() < 1e-6 * u.norm()

    def test_tanh_projection_against_dense_1024(self, monkeypatch):
        monkeypatch.setattr(oracle, "DENSE_CAP", 1024)
        g = make_grid(1025, 60.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        f = tanh_projection(1, 5.0, np.sqrt(5.0))
        ref = oracle.exact_function(oracle.dense_dilation(g), f).apply(u)
        assert (functional_calculus_A(f, u) - ref).norm() < 1e-6 * u.norm()


class TestSmoothProjection:
    @pytest.fixture(scope="class")
    @staticmethod
    def outgoing():
        # packet filtered to an A-spectrum near +10
        g = make_grid(513, 40.0)
        r = g.nodes
        u0 = g.wavefunction(r * np.exp(-(r - 10) ** 2 / 8) * np.exp(1j * r))
        return functional_calculus_A(gaussian(10.0, 1.0), u0).normalized()

    def test_mean_dilation(self, outgoing):
        assert inner_product(dilation_apply(outgoing), outgoing).real == pytest.approx(10.0, abs=0.1)

    @pytest.mark.parametrize("sign, bound", [(1, 0.95), (-1, 0.05)])
    def test_expectations(self, outgoing, sign, bound):
        u = outgoing
        val = inner_product(smooth_projection_pm(sign, 5.0, 1.0, u), u).real
        A = oracle.dense_dilation(u.grid)
        ref = inner_product(oracle.exact_function(A, tanh_projection(sign, 5.0, 1.0)).apply(u),
                            u).real
        assert abs(val - ref) < 1e-4
        assert (val >= bound) if sign > 0 else (val <= bound)

    def test_width_below_threshold(self, outgoing):
        with pytest.raises(OperatorError):
            smooth_projection_pm(1, 5.0, 0.5, outgoing)


# ---------------------------------------------------------------------------
# Littlewood-Paley
# ---------------------------------------------------------------------------

class TestLittlewoodPaley:
    def mode(self, g, j):
        return g.wavefunction(np.sin(j * np.pi * g.nodes / g.r_max))

    def test_center_mode_kept(self, grid256):
        M = grid256.wavenumbers[31]
        u = self.mode(grid256, 32)
        assert np.max(np.abs(littlewood_paley(M, u).values - u.values)) < 1e-10

    def test_low_mode_removed(self, grid256):
        M = grid256.wavenumbers[31]
        u = self.mode(grid256, 4)
        assert np.max(np.abs(littlewood_paley(M, u).values)) < 1e-12

    def test_partition_of_unity(self, grid256, rng):
        c = np.zeros(grid256.n_points - 1, dtype=complex)
        c[1:200] = rng.standard_normal(199)
        u = grid256.wavefunction(sine_synthesis(c, grid256.spacing))
        assert np.max(np.abs(littlewood_paley_sum(u).values - u.values)) < 1e-10
        assert dyadic_frequencies(grid256).size >= 7

    def test_outside_band(self, grid256):
        with pytest.raises(OperatorError):
            littlewood_paley(1e6, grid256.zeros())


# ---------------------------------------------------------------------------
# dense algebraic verifiers
# ---------------------------------------------------------------------------

class TestCommutatorExpansion:
    def test_commuting_case(self, rng):
        A = np.diag(np.arange(1.0, 17.0))
        B = np.diag(rng.standard_normal(16))
        rep = commutator_expand_verify(B, A, gaussian(8.0, 3.0), 3)
        assert np.max(np.abs(rep.exact)) < 1e-14
        assert np.max(np.abs(rep.expansion)) < 1e-14
        assert rep.remainder_norm < 1e-14

    def test_remainder_decreases_and_bounded(self, rng):
        A = np.diag(np.arange(1.0, 17.0))
        B = rand_hermitian(rng, 16)
        f = gaussian(8.0, 6.0)
        reps = [commutator_expand_verify(B, A, f, n) for n in (2, 3, 4)]
        assert all(r.within_bound for r in reps)
        norms = [r.remainder_norm for r in reps]
        assert norms[0] > norms[1] > norms[2]

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_adjoint_form_consistency(self, rng, n):
        A = rand_hermitian(rng, 16)
        B = rand_hermitian(rng, 16)
        rep = commutator_expand_verify(B, A, gaussian(0.0, 2.0), n)
        R = rep.remainder
        # expansion - adjoint expansion = -(R_n + R_n^*) for hermitian A, B
        gap = rep.expansion - rep.adjoint_expansion + R + R.conj().T
        assert np.max(np.abs(gap)) < 1e-12 * max(1.0, np.max(np.abs(rep.exact)))


class TestSymmetrization:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_random(self, seed):
        rng = np.random.default_rng(seed)
        F, G = rng.standard_normal((2, 32, 32)) + 1j * rng.standard_normal((2, 32, 32))
        assert symmetrization_check(F, G).relative <= 1e-12

    def test_diagonal(self, rng):
        F = np.diag(rng.standard_normal(32))
        G = np.diag(rng.standard_normal(32))
        assert symmetrization_check(F, G).relative <= 1e-15

    def test_projection(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((32, 8)))
        P = Q @ Q.T
        G = rng.standard_normal((32, 32))
        assert symmetrization_check(P, G).relative <= 1e-12


class TestTanhCommutator:
    @pytest.mark.xfail(strict=True, reason="the 1/(R ch^2) kernel misses the exact kernel "
                       "sin(2/R)/(sh^2 + cos^2(1/R)) by an O(1) factor; see notes")
    def test_literal_kernel_r1(self):
        r256 = tanh_commutator_check(1.0, make_grid(257, 32.0))
        r512 = tanh_commutator_check(1.0, make_grid(513, 32.0))
        assert r256.residual_literal <= 5e-3
        assert r512.residual_literal <= 0.5 * r256.residual_literal

    def test_exact_kernel(self):
        for n in (257, 513):
            assert tanh_commutator_check(4.0, make_grid(n, 32.0)).residual_exact < 1e-4

    def test_zero_vector(self):
        g = make_grid(257, 32.0)
        rep = tanh_commutator_check(4.0, g, test_vector=g.zeros())
        assert rep.norm_lhs == 0.0
        assert rep.residual_literal == 0.0 and rep.residual_exact == 0.0

    def test_width_guard(self):
        with pytest.raises(OperatorError):
            tanh_commutator_check(0.5, make_grid(257, 32.0))

    def test_sech2_envelope(self):
        rep = sech2_envelope_check(25.0, 5.0)
        assert rep.sup_negative_region <= 5.0 * np.exp(-10.0) * 1.1
        assert rep.holds
