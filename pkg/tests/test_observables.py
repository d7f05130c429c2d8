import numpy as np
import pytest

from radscat import oracle
from radscat.cutoffs import make_cutoff
from radscat.evolution import (Potential, eigenstates_linear, evolve, free_model, ground_state,
                               saturated_model, static_model, time_dependent_model)
from radscat.grid import make_grid
from radscat.observables import (FAIL, PASS, EstimateReport, ProbeError,
                                 ap_plus_series, bounded_verdict, dilation_observable,
                                 exterior_decay_check, exterior_observable, gamma_limit,
                                 heisenberg_identity_check, heisenberg_order_check,
                                 kinetic_observable, maximal_velocity_diag, morawetz_scan,
                                 pres1_integral, prob_gamma_series, radius_squared_observable,
                                 regularity_probe, scaling_derivative_norms,
                                 second_microlocal_series, virial_check, weak_localization_diag)
from radscat.scattering import EnergyWindow, energy_window

from conftest import gaussian_r

WELL = Potential("exp_well", (3.0, 1.0))
WINDOW = (0.1, 1.5)


def windowed(grid, V):
    r = grid.nodes
    u = grid.wavefunction(r * np.exp(-(r - 10) ** 2 / 18) * np.exp(0.8j * r))
    return energy_window(u, EnergyWindow(*WINDOW, eps=0.2), V).normalized()


# ---------------------------------------------------------------------------
# shared runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def free_run():
    g = make_grid(8192, 3000.0)
    u0 = gaussian_r(g).normalized()
    return evolve(u0, 0.0, 400.0, 0.5, free_model(), save_every=1.0, absorb=False)


@pytest.fixture(scope="module")
def windowed_free_run():
    g = make_grid(8192, 3000.0)
    u0 = windowed(g, lambda r: 0 * r)
    return evolve(u0, 0.0, 400.0, 0.5, free_model(), save_every=1.0, absorb=False,
                  metadata={"energy_window": WINDOW})


@pytest.fixture(scope="module")
def bound_run():
    g = make_grid(1024, 60.0)
    psi = eigenstates_linear(WELL, g, 1).states[0]
    return evolve(psi, 0.0, 100.0, 0.0025, static_model(WELL), save_every=1.0,
                  metadata={"energy_window": WINDOW})


@pytest.fixture(scope="module")
def soliton_run():
    g = make_grid(1024, 60.0)
    m = saturated_model(3.0, 2.0)
    return evolve(ground_state(m, 15.0, g), 0.0, 50.0, 0.005, m, save_every=0.5)


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------

class TestReport:
    def test_verdict_validated(self):
        with pytest.raises(ValueError):
            EstimateReport("x", {}, verdict="MAYBE")

    def test_serializations(self):
        rep = EstimateReport("x", {"a": 1}, {"t": np.arange(3.0), "y": np.ones(3)},
                             {"v": 0.5}, PASS, 0.1)
        assert rep.series_csv().splitlines()[0].split(",") == ["t", "y"]
        assert "PASS" in rep.to_record()
        assert rep.summary()["verdict"] == PASS

    def test_bounded_verdict(self):
        t = np.linspace(1, 100, 100)
        assert bounded_verdict(t, np.ones_like(t))[0] == PASS
        assert bounded_verdict(t, t)[0] == FAIL


# ---------------------------------------------------------------------------
# Heisenberg and virial identities
# ---------------------------------------------------------------------------

class TestHeisenberg:
    @pytest.fixture(scope="class")
    @staticmethod
    def free_pair():
        g = make_grid(256, 40.0)
        u = gaussian_r(g, center=8.0, width=np.sqrt(2.0), momentum=1.0)
        return [evolve(u, 0.0, 2.0, dt, free_model(), absorb=False) for dt in (0.01, 0.005)]

    @pytest.fixture(scope="class")
    @staticmethod
    def saturated_pair():
        g = make_grid(256, 40.0)
        u = gaussian_r(g, center=8.0, width=np.sqrt(2.0), momentum=1.0) * 2.0
        return [evolve(u, 0.0, 2.0, dt, saturated_model(), absorb=False) for dt in (0.01, 0.005)]

    def test_free_kinetic_conserved(self, free_pair):
        rep = heisenberg_identity_check(free_pair[0], kinetic_observable())
        assert rep.values["max_residual"] <= 1e-10
        assert np.max(np.abs(rep.series["commutator"])) <= 1e-10

    def test_free_second_moment(self, free_pair):
        rep = heisenberg_identity_check(free_pair[0], radius_squared_observable())
        # the free scheme is exact in time, so only round-off remains
        assert rep.values["max_residual"] <= 1e-9 * rep.values["scale"]

    def test_saturated_exterior_cutoff_second_order(self, saturated_pair):
        rep = heisenberg_order_check(*saturated_pair, exterior_observable(10.0, 0.5))
        assert rep.verdict == PASS

    def test_multiplication_observable_has_no_nonlinear_term(self, saturated_pair):
        # W is real, so -2 Im(phi psi, W psi) vanishes for any real phi
        rep = heisenberg_identity_check(saturated_pair[0], exterior_observable(10.0, 0.5))
        assert rep.values["max_nonlinear_term"] <= 1e-12 * rep.values["scale"]

    def test_nonlinear_term_essential_for_dilation(self, saturated_pair):
        coarse, fine = saturated_pair
        assert heisenberg_order_check(coarse, fine, dilation_observable()).verdict == PASS
        rep = heisenberg_identity_check(coarse, dilation_observable())
        assert rep.values["max_residual_without_nonlinear"] > 1e3 * rep.values["max_residual"]

    def test_tolerance_verdict(self, free_pair):
        rep = heisenberg_identity_check(free_pair[0], kinetic_observable(), tolerance=1e-8)
        assert rep.verdict == PASS


class TestVirial:
    def test_free_quadratic(self, free_run):
        rep = virial_check(free_run.slice(200.0), tolerance=1e-6)
        assert rep.verdict == PASS
        assert rep.values["curvature_relative_error"] <= 1e-6

    def test_bound_state_both_sides_vanish(self, bound_run):
        rep = virial_check(bound_run)
        assert np.max(np.abs(rep.series["rhs"])) <= 1e-5
        assert rep.values["max_residual"] <= 1e-5

    def test_scattering_state_second_order(self):
        g = make_grid(512, 60.0)
        u = gaussian_r(g, center=8.0, width=1.5, momentum=1.0)
        res = [virial_check(evolve(u, 0.0, 4.0, dt, static_model(WELL), save_every=0.1,
                                   absorb=False)).values["max_residual"]
               for dt in (0.01, 0.005)]
        # the cadence term is common; the dt-dependent part shrinks
        assert res[1] <= res[0]

    def test_needs_linear_model(self, soliton_run):
        with pytest.raises(ProbeError):
            virial_check(soliton_run)


# ---------------------------------------------------------------------------
# propagation estimates
# ---------------------------------------------------------------------------

class TestProbGamma:
    def test_free_increases_then_plateaus(self, free_run):
        rep = prob_gamma_series(free_run, 0.8)
        y = rep.series["prob_gamma"]
        assert rep.verdict == PASS
        assert y[-1] > y[0]
        assert abs(y[-1] - y[-50]) <= 0.01 * y[-1]

    def test_bound_state_vanishes(self, bound_run):
        y = prob_gamma_series(bound_run, 0.8).series["prob_gamma"]
        assert abs(y[-1]) <= 1e-8

    def test_real_data_starts_at_zero(self, free_run):
        rep = prob_gamma_series(free_run, 0.8, t_min=0.0)
        assert abs(rep.values["initial"]) <= 1e-12

    def test_alpha_range(self, free_run):
        with pytest.raises(ProbeError):
            prob_gamma_series(free_run, 0.2)


class TestPres1:
    def test_windowed_free_converges(self, windowed_free_run):
        rep = pres1_integral(windowed_free_run, 0.8)
        assert rep.verdict == PASS
        assert rep.values["increment_ratio"] < 0.5

    def test_bound_state_integrand_decays_fast(self, bound_run):
        rep = pres1_integral(bound_run, 0.8)
        t, y = rep.series["t"], rep.series["integrand"]
        # above the round-off floor (~1e-13) the decay is exponential in t^alpha
        late = (t >= 20) & (y > 1e-12)
        slope = np.polyfit(np.log(t[late]), np.log(y[late]), 1)[0]
        assert slope < -10
        # straight in log(y) against t^alpha
        fit = np.polyfit(t[late] ** 0.8, np.log(y[late]), 1)
        assert np.max(np.abs(np.polyval(fit, t[late] ** 0.8) - np.log(y[late]))) < 1.0

    def test_zero_data(self):
        g = make_grid(256, 40.0)
        z = evolve(g.zeros(), 0.0, 10.0, 0.01, free_model(), save_every=1.0,
                   metadata={"energy_window": WINDOW})
        rep = pres1_integral(z, 0.8)
        assert rep.values["integral"] == 0.0
        assert rep.verdict == PASS

    def test_needs_window(self, free_run):
        with pytest.raises(ProbeError):
            pres1_integral(free_run, 0.8)


class TestGammaLimit:
    def test_free(self, free_run):
        rep = gamma_limit(free_run)
        assert rep.values["gamma"] > 0
        assert rep.values["relative_spread"] <= 0.05

    def test_bound_state(self, bound_run):
        rep = gamma_limit(bound_run)
        assert rep.verdict == PASS
        assert rep.values["gamma"] <= rep.values["zero_threshold"]
        assert rep.values["classification"] == 0.0

    def test_mixture_matches_free_component(self):
        g = make_grid(2048, 400.0)
        packet = windowed(g, WELL)
        bound = eigenstates_linear(WELL, g, 1).states[0]
        model = static_model(WELL)
        alone = gamma_limit(evolve(packet, 0.0, 100.0, 0.01, model, save_every=1.0))
        mixed = gamma_limit(evolve(packet + bound * 0.6, 0.0, 100.0, 0.01, model,
                                   save_every=1.0))
        assert mixed.values["gamma"] == pytest.approx(alone.values["gamma"], rel=0.05)


class TestWeakLocalization:
    def test_bound_state(self, bound_run):
        assert weak_localization_diag(bound_run).verdict == PASS

    def test_free_packet_is_not_localized(self, free_run):
        assert weak_localization_diag(free_run).verdict == FAIL

    def test_soliton(self, soliton_run):
        assert weak_localization_diag(soliton_run).verdict == PASS


class TestScalingNorms:
    def test_gaussian_against_dense(self):
        g = make_grid(513, 40.0)
        u = g.from_function(lambda r: r * np.exp(-r ** 2 / 2))
        # r (x . grad psi) = (r d/dr - 1) u = (i A - 3/2) u
        A = oracle.dense_dilation(g)
        v = 1j * A.apply(u).values - 1.5 * u.values
        ref = np.linalg.norm(v) * np.sqrt(g.spacing)
        norms = scaling_derivative_norms(u, 1)
        assert norms[0] == pytest.approx(u.norm(), rel=1e-12)
        assert norms[1] == pytest.approx(ref, rel=1e-8)

    def test_dilation_invariant_tail(self):
        g = make_grid(16384, 400.0)
        r = g.nodes
        # u = r^{-1/2} is annihilated by A, so (x . grad) psi = -3/2 psi;
        # the truncation is smooth in log r to keep r F' bounded
        chi = make_cutoff(np.log(2.0), np.log(300.0), 1.0)
        u = g.wavefunction(r ** -0.5 * chi(np.log(r)))
        n0, n1 = scaling_derivative_norms(u, 1)
        # direct quadrature of r (x . grad psi) = r u' - u in y = log r
        y = np.linspace(np.log(1.5), np.log(400.0), 400001)
        ry = np.exp(y)
        uu = ry ** -0.5 * chi(y)
        du = ry ** -0.5 * (chi.derivative(y) - 0.5 * chi(y))   # r u'
        ref = np.sqrt(np.trapezoid((du - uu) ** 2 * ry, y))
        assert n1 == pytest.approx(ref, rel=1e-3)
        assert 1.2 < n1 / n0 < 2.0

    def test_zero(self, grid256):
        assert scaling_derivative_norms(grid256.zeros(), 3) == [0.0] * 4


class TestMaximalVelocity:
    def test_low_energy_gaussian(self, free_run):
        rep = maximal_velocity_diag(free_run, 5.0, E=6.0)
        assert rep.verdict == PASS
        t = rep.series["t"]
        assert np.all(rep.series["tail_norm"][t >= 5] <= 1e-3)

    def test_bound_state(self, bound_run):
        rep = maximal_velocity_diag(bound_run, 5.0, E=6.0)
        t, tail = rep.series["t"], rep.series["tail_norm"]
        assert rep.verdict == PASS
        assert np.all(tail[t >= 5] <= 1e-6)

    def test_fast_packet_fails(self):
        g = make_grid(4096, 400.0)
        u = gaussian_r(g, center=10.0, momentum=5.0)
        traj = evolve(u, 0.0, 20.0, 0.02, free_model(), save_every=1.0, absorb=False)
        rep = maximal_velocity_diag(traj, 2.0, E=1.0)
        assert rep.verdict == FAIL

    def test_needs_energy(self, free_run):
        with pytest.raises(ProbeError):
            maximal_velocity_diag(free_run, 5.0)


class TestRegularity:
    def test_smooth_bump(self):
        g = make_grid(8192, 40.0)
        u0 = g.wavefunction(g.nodes * np.exp(-(g.nodes - 5) ** 2))
        rep = regularity_probe(u0, [4, 8, 16, 32, 64], 10.0)
        assert rep.values["slope"] <= -2

    def test_band_guard(self):
        g = make_grid(256, 40.0)
        with pytest.raises(ProbeError):
            regularity_probe(gaussian_r(g, 5.0), [1e5], 10.0)


class TestMorawetz:
    def test_bound_state_constant(self, bound_run):
        rep = morawetz_scan(bound_run, [1, 2, 4, 8])
        assert rep.verdict == PASS
        assert rep.values["direct_full"] == pytest.approx(rep.values["direct_half"], rel=1e-6)

    def test_soliton_bounded(self, soliton_run):
        assert morawetz_scan(soliton_run, [1, 2, 4, 8]).verdict == PASS

    def test_free_grows_linearly(self, free_run):
        rep = morawetz_scan(free_run, [1, 2, 4, 8])
        assert rep.verdict == FAIL
        assert rep.values["direct_full"] / rep.values["direct_half"] == pytest.approx(2.0, rel=0.05)


class TestAPPlus:
    def test_sech2_envelope(self, bound_run):
        rep = ap_plus_series(bound_run.slice(4.0), 25.0, 5.0)
        assert rep.values["envelope_sup_negative"] <= 5.0 * np.exp(-10.0) * 1.1
        assert rep.values["envelope_ok"] == 1.0

    def test_bound_state_time_average(self):
        g = make_grid(512, 30.0)
        psi = eigenstates_linear(WELL, g, 1).states[0]
        traj = evolve(psi, 0.0, 40.0, 0.0025, static_model(WELL), save_every=2.0)
        rep = ap_plus_series(traj, 16.0)
        assert rep.verdict == PASS
        assert rep.values["C_fit"] >= -1e-6 * rep.values["tail_fit"] * 40.0

    def test_outgoing_packet_increasing(self):
        g = make_grid(2048, 200.0)
        u = gaussian_r(g, center=10.0, momentum=2.0)
        traj = evolve(u, 0.0, 10.0, 0.01, free_model(), save_every=1.0, absorb=False)
        rep = ap_plus_series(traj, 16.0)
        assert rep.values["increasing"] == 1.0

    def test_guards(self, bound_run):
        with pytest.raises(ProbeError):
            ap_plus_series(bound_run, 16.0, R=0.5)
        with pytest.raises(ProbeError):
            ap_plus_series(bound_run, 2.0)


class TestSecondMicrolocal:
    def test_free_plateau_is_free_mass(self, windowed_free_run):
        rep = second_microlocal_series(windowed_free_run, 0.9, 0.2)
        assert rep.values["final"] == pytest.approx(windowed_free_run.snapshot(0).mass(), rel=1e-3)

    def test_bound_state(self, bound_run):
        rep = second_microlocal_series(bound_run, 0.9, 0.2)
        assert rep.values["final"] <= 1e-10

    def test_order_of_exponents(self, bound_run):
        with pytest.raises(ProbeError):
            second_microlocal_series(bound_run, 0.5, 0.6)


class TestExteriorDecay:
    def test_saturated_bounded(self):
        g = make_grid(1024, 100.0)
        u = g.wavefunction(2.0 * g.nodes * np.exp(-g.nodes ** 2 / 2))
        traj = evolve(u, 0.0, 50.0, 0.005, saturated_model(), save_every=1.0)
        assert exterior_decay_check(traj, 0.8, 1.2).verdict == PASS

    def test_free_zero(self, free_run):
        rep = exterior_decay_check(free_run, 0.8, 1.2)
        assert rep.values["max"] == 0.0 and rep.verdict == PASS

    def test_time_dependent_envelope(self):
        g = make_grid(1024, 100.0)
        V = Potential("breathing", (1.0, 3.0, 1.0, 0.5))
        model = time_dependent_model(V, q=3.0, envelope=5.0, beta0=2.4)
        u = gaussian_r(g, center=5.0, momentum=1.0)
        traj = evolve(u, 0.0, 50.0, 0.01, model, save_every=1.0)
        rep = exterior_decay_check(traj, 0.8, 2.4)
        assert rep.verdict == PASS
        # the envelope C t^{-q alpha} caps the weighted series
        assert rep.values["max"] <= 5.0
