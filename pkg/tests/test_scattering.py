import json

import numpy as np
import pytest

from radscat import oracle
from radscat.evolution import (Potential, eigenstates_linear, evolve, free_model, ground_state,
                               saturated_model, static_model)
from radscat.grid import WaveFunction, make_grid
from radscat.observables import FAIL, PASS, ProbeError
from radscat.scattering import (DecompositionError, EnergyWindow, WindowError,
                                ac_reconstruction_residuals, asymptotic_decompose, bound_projection,
                                cauchy_rate_report, channel_wave_operator, chebyshev_coefficients,
                                cook_integrand, energy_window, geometric_times, wls_exclusion_check)

WELL = Potential("exp_well", (3.0, 1.0))
SAMPLES = [12.5, 25.0, 50.0, 100.0]


def zero_potential(r):
    return np.zeros_like(r)


def windowed_packet(grid, V, k=0.8, window=(0.1, 1.5), eps=0.2):
    r = grid.nodes
    u = WaveFunction(grid, r * np.exp(-(r - 10) ** 2 / 18) * np.exp(1j * k * r))
    s = energy_window(u, EnergyWindow(window[0], window[1], eps=eps), V)
    return s * (1.0 / s.norm())


@pytest.fixture(scope="module")
def well_grid():
    return make_grid(2048, 400.0)


@pytest.fixture(scope="module")
def well_states(well_grid):
    return eigenstates_linear(WELL, well_grid, 1)


@pytest.fixture(scope="module")
def mixture_run(well_grid, well_states):
    psi0 = windowed_packet(well_grid, WELL) + well_states.states[0] * 0.6
    return evolve(psi0, 0.0, 100.0, 0.01, static_model(WELL), save_every=0.5,
                  metadata={"energy_window": (0.1, 1.5)})


@pytest.fixture(scope="module")
def scattering_run(well_grid):
    return evolve(windowed_packet(well_grid, WELL), 0.0, 100.0, 0.01, static_model(WELL),
                  save_every=0.5, metadata={"energy_window": (0.1, 1.5)})


@pytest.fixture(scope="module")
def bound_run(well_states):
    return evolve(well_states.states[0], 0.0, 100.0, 0.01, static_model(WELL), save_every=0.5,
                  metadata={"energy_window": (0.1, 1.5)})


@pytest.fixture(scope="module")
def free_windowed_run(well_grid):
    psi0 = windowed_packet(well_grid, zero_potential, k=1.0, window=(0.25, 2.0))
    return evolve(psi0, 0.0, 100.0, 0.01, free_model(), save_every=0.5, absorb=False,
                  metadata={"energy_window": (0.25, 2.0)})


# ---------------------------------------------------------------------------
# energy windows
# ---------------------------------------------------------------------------

class TestEnergyWindow:
    def test_sine_mode_inside_window_is_unchanged(self):
        g = make_grid(256, 40.0)
        k = g.wavenumbers[20]
        u = WaveFunction(g, np.sin(k * g.nodes) + 0j)
        out = energy_window(u, EnergyWindow(0.5 * k ** 2, 2.0 * k ** 2, eps=0.1), zero_potential)
        assert (out - u).norm() <= 1e-10 * u.norm()

    def test_sine_mode_outside_window_is_removed(self):
        g = make_grid(256, 40.0)
        k = g.wavenumbers[20]
        u = WaveFunction(g, np.sin(k * g.nodes) + 0j)
        out = energy_window(u, EnergyWindow(2.0 * k ** 2, 4.0 * k ** 2, eps=0.1), zero_potential)
        assert out.norm() <= 1e-10 * u.norm()

    def test_bound_state_is_removed(self):
        g = make_grid(256, 40.0)
        psi = eigenstates_linear(WELL, g, 1).states[0]
        assert energy_window(psi, EnergyWindow(0.1, 1.5, eps=0.2), WELL).norm() <= 1e-8

    @pytest.mark.parametrize("eta, cap", [(2.0, 1.0), (1.0, 1.0), (0.0, 1.0), (-1.0, 1.0)])
    def test_invalid_window(self, eta, cap):
        with pytest.raises(WindowError):
            EnergyWindow(eta, cap)

    def test_unknown_method(self):
        with pytest.raises(WindowError):
            EnergyWindow(0.1, 1.0, method="lanczos")

    def test_dense_refused_above_cap(self):
        g = make_grid(oracle.DENSE_CAP * 2, 100.0)
        with pytest.raises(WindowError):
            EnergyWindow(0.1, 1.0, method="dense").resolve_method(g)

    def test_auto_method(self):
        assert EnergyWindow(0.1, 1.0).resolve_method(make_grid(256, 40.0)) == "dense"
        assert EnergyWindow(0.1, 1.0).resolve_method(make_grid(2048, 40.0)) == "chebyshev"

    def test_window_outside_spectrum(self):
        g = make_grid(256, 40.0)
        u = g.wavefunction(g.nodes * np.exp(-(g.nodes - 10) ** 2))
        with pytest.raises(WindowError):
            energy_window(u, EnergyWindow(1e5, 2e5, method="chebyshev"), zero_potential)

    def test_chebyshev_matches_dense(self):
        g = make_grid(256, 40.0)
        r = g.nodes
        u = g.wavefunction(r * np.exp(-(r - 10) ** 2 / 8) * np.exp(0.8j * r))
        dense = energy_window(u, EnergyWindow(0.1, 1.5, method="dense", eps=0.2), WELL)
        cheb = energy_window(u, EnergyWindow(0.1, 1.5, method="chebyshev", eps=0.2), WELL)
        assert (dense - cheb).norm() <= 1e-8 * u.norm()

    def test_window_is_contraction(self, rng):
        g = make_grid(256, 40.0)
        u = g.wavefunction(rng.standard_normal(g.n_points) + 1j * rng.standard_normal(g.n_points))
        out = energy_window(u, EnergyWindow(0.3, 3.0), WELL)
        assert out.norm() <= u.norm() * (1 + 1e-12)

    def test_chebyshev_series_converges(self):
        c = chebyshev_coefficients(np.exp, -1.0, 1.0, tol=1e-12)
        x = np.linspace(-1, 1, 11)
        approx = np.polynomial.chebyshev.chebval(x, c)
        assert np.max(np.abs(approx - np.exp(x))) <= 1e-11


# ---------------------------------------------------------------------------
# bound cluster
# ---------------------------------------------------------------------------

class TestBoundProjection:
    def test_eigenstate_projects_to_unit_vector(self, well_states):
        a, pb = bound_projection(well_states.states[0], well_states)
        assert abs(abs(a[0]) - 1.0) <= 1e-12
        assert (pb - well_states.states[0]).norm() <= 1e-12

    def test_orthogonal_data_projects_to_zero(self, well_grid, well_states):
        psi = well_states.states[0]
        r = well_grid.nodes
        u = well_grid.wavefunction(r * np.exp(-(r - 5) ** 2))
        u = u - psi * complex(np.vdot(psi.values, u.values) * well_grid.spacing)
        a, pb = bound_projection(u, well_states)
        assert np.all(np.abs(a) <= 1e-12) and pb.norm() <= 1e-12

    def test_coefficients_rotate_with_energy(self, well_states):
        g = make_grid(256, 40.0)
        es = eigenstates_linear(WELL, g, 1)
        r = g.nodes
        u = g.wavefunction(r * np.exp(-(r - 2) ** 2))
        a0, _ = bound_projection(u, es)
        H = oracle.dense_hamiltonian(WELL, g)
        for t in (1.0, 5.0, 20.0):
            at, _ = bound_projection(oracle.exact_propagate(H, u, t), es)
            assert abs(abs(at[0]) - abs(a0[0])) <= 1e-8
            assert abs(at[0] - a0[0] * np.exp(-1j * es.energies[0] * t)) <= 1e-8

    def test_accepts_pairs(self, well_states):
        pairs = list(well_states)
        a1, _ = bound_projection(well_states.states[0], pairs)
        a2, _ = bound_projection(well_states.states[0], well_states)
        np.testing.assert_allclose(a1, a2)


# ---------------------------------------------------------------------------
# Cook's method
# ---------------------------------------------------------------------------

class TestCook:
    def test_free_potential_piece_vanishes(self, free_windowed_run):
        rep = cook_integrand(free_windowed_run, 0.8)
        assert np.all(rep.series["F1V"] == 0)
        assert rep.verdict == PASS

    def test_bound_state_potential_piece_decays_fast(self, bound_run):
        rep = cook_integrand(bound_run, 0.8, fit_from=5.0)
        assert rep.values["F1V_slope"] < -10

    def test_alpha_out_of_range(self, bound_run):
        with pytest.raises(ProbeError):
            cook_integrand(bound_run, 0.3)

    def test_requires_window_metadata(self, well_states):
        tr = evolve(well_states.states[0], 0.0, 2.0, 0.01, static_model(WELL), save_every=1.0)
        with pytest.raises(ProbeError):
            cook_integrand(tr, 0.8)


# ---------------------------------------------------------------------------
# wave operators and decomposition
# ---------------------------------------------------------------------------

class TestWaveOperator:
    def test_geometric_times(self):
        np.testing.assert_allclose(geometric_times(12.5, 100.0), SAMPLES)
        np.testing.assert_allclose(geometric_times(10.0, 79.0), [10.0, 20.0, 40.0])

    def test_free_channel_recovers_initial_data(self, free_windowed_run):
        wo = channel_wave_operator(free_windowed_run, 0.8, SAMPLES)
        assert (wo.phi_plus - free_windowed_run.snapshot(0)).norm() <= 1e-3

    def test_bound_state_has_no_free_channel(self, bound_run):
        wo = channel_wave_operator(bound_run, 0.8, SAMPLES)
        assert wo.phi_plus.norm() <= 1e-3

    def test_scattering_cauchy_ratios(self, mixture_run):
        wo = channel_wave_operator(mixture_run, 0.8, SAMPLES)
        assert wo.verdict == PASS
        assert np.all(wo.ratios <= 0.5)
        rep = cauchy_rate_report(wo)
        assert rep.verdict == PASS

    def test_needs_two_geometric_times(self, mixture_run):
        with pytest.raises(DecompositionError):
            channel_wave_operator(mixture_run, 0.8, [25.0])
        with pytest.raises(DecompositionError):
            channel_wave_operator(mixture_run, 0.8, [10.0, 25.0, 50.0])

    def test_missing_snapshot(self, mixture_run):
        with pytest.raises(DecompositionError):
            channel_wave_operator(mixture_run, 0.8, [12.25 / 4, 12.25 / 2, 12.25, 24.5, 49.0, 98.0, 196.0])


class TestDecomposition:
    def test_free_data_leaves_nothing_localized(self, free_windowed_run):
        d = asymptotic_decompose(free_windowed_run, 0.8, sample_times=SAMPLES)
        assert d.localized.norm() <= 1e-3
        assert d.verdict == PASS

    def test_mixture_matches_bound_cluster(self, mixture_run, well_states):
        d = asymptotic_decompose(mixture_run, 0.8, sample_times=SAMPLES, eigenstates=well_states)
        assert d.reconstruction_residual <= 1e-2
        assert abs(d.mass_localized - 0.36) <= 0.02

    def test_reconstruction_residuals_decrease(self, mixture_run, well_states):
        wo = channel_wave_operator(mixture_run, 0.8, SAMPLES)
        res = ac_reconstruction_residuals(mixture_run, wo.phi_plus, well_states, [25.0, 50.0, 100.0])
        assert res[-1] <= 1e-2 and np.all(np.diff(res) < 0)

    def test_soliton_plus_radiation(self):
        g = make_grid(4096, 240.0)
        r = g.nodes
        m = saturated_model()
        sol = ground_state(m, 15.0, g)
        rad = g.wavefunction(0.01 * r * np.exp(-(r - 30) ** 2 / 50) * np.exp(1j * r))
        tr = evolve(sol + rad, 0.0, 50.0, 0.005, m, save_every=0.25)
        d = asymptotic_decompose(tr, 0.8, sample_times=[6.25, 12.5, 25.0, 50.0])
        assert abs(d.mass_localized - sol.mass()) <= 0.05 * sol.mass()
        assert abs(d.mass_free - rad.mass()) <= 0.05 * rad.mass()

    def test_non_converging_sequence_raises(self, bound_run):
        # the snapshot at 0.5 still overlaps the well; the sequence is not monotone
        with pytest.raises(DecompositionError):
            asymptotic_decompose(bound_run, 0.8, sample_times=[0.5, 1.0, 2.0])

    def test_export(self, mixture_run, well_states, tmp_path):
        d = asymptotic_decompose(mixture_run, 0.8, sample_times=SAMPLES, eigenstates=well_states)
        d.export(tmp_path)
        summary = json.loads((tmp_path / "decomposition.json").read_text())
        assert summary["verdict"] == d.verdict
        assert (tmp_path / "phi_plus.dat").exists() and (tmp_path / "localized.dat").exists()


# ---------------------------------------------------------------------------
# weak-localization exclusion
# ---------------------------------------------------------------------------

class TestWLSExclusion:
    def test_free_packet_passes(self, free_windowed_run):
        assert wls_exclusion_check(free_windowed_run).verdict == PASS

    def test_scattering_packet_passes(self, scattering_run):
        assert wls_exclusion_check(scattering_run).verdict == PASS

    def test_bound_contamination_fails(self, mixture_run):
        assert wls_exclusion_check(mixture_run).verdict == FAIL

    def test_removing_bound_cluster_restores_pass(self, mixture_run, well_states):
        _, pb = bound_projection(mixture_run.snapshot(0), well_states)
        clean = mixture_run.snapshot(0) - pb
        tr = evolve(clean, 0.0, 100.0, 0.01, static_model(WELL), save_every=0.5,
                    metadata={"energy_window": (0.1, 1.5)})
        assert wls_exclusion_check(tr).verdict == PASS

    def test_nonlinear_model_refused(self):
        g = make_grid(256, 40.0)
        m = saturated_model()
        tr = evolve(ground_state(m, 15.0, g), 0.0, 1.0, 0.005, m, save_every=0.5)
        with pytest.raises(ProbeError):
            wls_exclusion_check(tr)

    def test_needs_ballistic_regime(self, bound_run):
        with pytest.raises(ProbeError):
            wls_exclusion_check(bound_run)
