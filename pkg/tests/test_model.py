import numpy as np
import pytest

from qbmc.model import (
    GridOverflowError,
    GridSpec,
    PhysicalParams,
    PotentialSpec,
    WaveFunction,
    apply_kinetic_half,
    apply_potential,
    make_coherent_state,
    observables,
)


def strang_deterministic(psi, potential, params, dt, n_steps, t0=0.0, extra_q2=0.0):
    """Plain deterministic split-operator evolution for test purposes."""
    t = t0
    for _ in range(n_steps):
        psi = apply_kinetic_half(psi, 0.5 * dt, params)
        psi = apply_potential(psi, dt, t + 0.5 * dt, potential, params, extra_q2)
        psi = apply_kinetic_half(psi, 0.5 * dt, params)
        t += dt
    return psi


class TestPhysicalParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            PhysicalParams(hbar=-1)
        with pytest.raises(ValueError):
            PhysicalParams(gamma=-0.1)
        with pytest.raises(ValueError):
            PhysicalParams(noise_shift_mode="bogus")

    def test_regime_warning(self):
        p = PhysicalParams(hbar=0.2, kT=0.3, Lambda=5.0)  # kT < hbar*Lambda
        with pytest.warns(UserWarning, match="high-temperature"):
            p.check_regime()

    def test_regime_ok_is_silent(self, production_params, recwarn):
        production_params.check_regime()
        assert len(recwarn) == 0


class TestPotential:
    def test_duffing_formula(self):
        pot = PotentialSpec(variant="duffing", g=0.3, drive_freq=1.0)
        q = np.array([-1.0, 0.5, 2.0])
        t = 0.7
        expected = q**4 / 4 - q**2 / 2 + 0.3 * q * np.cos(t)
        np.testing.assert_allclose(pot.evaluate(q, t), expected, rtol=1e-15)

    def test_harmonic_formula(self):
        pot = PotentialSpec(variant="harmonic", omega=2.0)
        np.testing.assert_allclose(pot.evaluate(1.5, 0.0, mass=3.0), 0.5 * 3 * 4 * 2.25)

    def test_polynomial(self):
        pot = PotentialSpec(variant="polynomial", coeffs=(1.0, 0.0, 2.0))
        np.testing.assert_allclose(pot.evaluate(2.0, 0.0), 1.0 + 8.0)


class TestGridSpec:
    def test_power_of_two_required(self):
        with pytest.raises(ValueError):
            GridSpec(-1, 1, 100)

    def test_momentum_grid(self):
        g = GridSpec(-2.0, 2.0, 16)
        p = g.momenta(hbar=0.5)
        assert p[0] == 0.0
        np.testing.assert_allclose(g.p_max(0.5), 0.5 * np.pi / g.dq)
        np.testing.assert_allclose(p[1], 0.5 * 2 * np.pi / 4.0)


class TestCoherentState:
    def test_default_experiment_initial_state(self, production_params):
        grid = GridSpec(-2.5, 2.5, 2048)
        psi = make_coherent_state(0.1, 0.1, production_params, grid)
        obs = observables(psi, production_params.hbar)
        assert abs(obs.mean_q - 0.1) < 1e-9
        assert abs(obs.mean_p - 0.1) < 1e-9

    def test_minimum_uncertainty(self, small_grid):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        psi = make_coherent_state(0.0, 0.0, params, small_grid)
        obs = observables(psi, params.hbar)
        np.testing.assert_allclose(obs.uncertainty_product, params.hbar / 2, rtol=1e-10)

    def test_moments_match_independent_quadrature(self, small_grid):
        # oracle: dense trapezoid quadrature of the analytic state
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        q0, p0 = 0.5, -0.3
        psi = make_coherent_state(q0, p0, params, small_grid)
        obs = observables(psi, params.hbar)
        qq = np.linspace(-4, 4, 40001)
        sigma = np.sqrt(params.hbar / 2)
        amp = np.exp(-((qq - q0) ** 2) / (4 * sigma**2))
        dens = amp**2 / np.trapezoid(amp**2, qq)
        mean_q_oracle = np.trapezoid(qq * dens, qq)
        assert abs(obs.mean_q - mean_q_oracle) < 1e-8
        assert abs(obs.mean_p - p0) < 1e-8

    def test_width_and_conjugate_width(self, small_grid):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        sigma = 0.2
        psi = make_coherent_state(0.0, 0.0, params, small_grid, sigma_q=sigma)
        obs = observables(psi, params.hbar)
        np.testing.assert_allclose(np.sqrt(obs.var_q), sigma, rtol=1e-9)
        np.testing.assert_allclose(np.sqrt(obs.var_p), params.hbar / (2 * sigma), rtol=1e-9)

    def test_grid_overflow(self, production_params):
        grid = GridSpec(-1.0, 1.0, 256)
        with pytest.raises(GridOverflowError):
            make_coherent_state(0.9, 0.0, production_params, grid, sigma_q=0.3)

    def test_invalid_sigma(self, production_params, small_grid):
        with pytest.raises(ValueError):
            make_coherent_state(0.0, 0.0, production_params, small_grid, sigma_q=-1.0)


class TestObservables:
    def test_real_even_state(self, small_grid):
        q = small_grid.q
        psi = WaveFunction(small_grid, np.exp(-(q**2))).normalized()
        obs = observables(psi, 0.05)
        assert abs(obs.mean_q) < 1e-10
        assert abs(obs.mean_p) < 1e-12

    def test_two_gaussian_superposition_variance(self, small_grid):
        # analytic: for centers +-1 with negligible overlap,
        # var_q = 1 + sigma_q^2
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        a = make_coherent_state(-1.0, 0.0, params, small_grid)
        b = make_coherent_state(1.0, 0.0, params, small_grid)
        cat = WaveFunction(small_grid, a.amps + b.amps).normalized()
        obs = observables(cat, params.hbar)
        sigma2 = params.hbar / 2
        assert abs(obs.var_q - (1.0 + sigma2)) < 0.01 * (1.0 + sigma2)

    def test_plain_vs_symmetrized_qp(self, small_grid):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        psi = make_coherent_state(0.4, 0.2, params, small_grid)
        plain = observables(psi, params.hbar).mean_qp
        sym = observables(psi, params.hbar, symmetrized_qp=True).mean_qp
        np.testing.assert_allclose(plain.imag, params.hbar / 2, rtol=1e-8)
        np.testing.assert_allclose(sym.real, plain.real, rtol=1e-12)
        assert sym.imag == 0.0

    def test_norm_reported_unnormalized(self, small_grid):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        psi = make_coherent_state(0.0, 0.0, params, small_grid)
        scaled = WaveFunction(small_grid, 3.0 * psi.amps)
        obs = observables(scaled, params.hbar)
        np.testing.assert_allclose(obs.norm, 3.0, rtol=1e-12)
        np.testing.assert_allclose(obs.mean_q, 0.0, atol=1e-12)

    def test_nan_aborts(self, small_grid):
        psi = WaveFunction(small_grid, np.full(small_grid.n, np.nan, dtype=complex))
        with pytest.raises(FloatingPointError):
            observables(psi, 0.05)


class TestElementarySteps:
    def test_kinetic_inverse(self, small_grid):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        psi = make_coherent_state(0.3, 0.4, params, small_grid)
        back = apply_kinetic_half(apply_kinetic_half(psi, 0.01, params), -0.01, params)
        assert np.abs(back.amps - psi.amps).max() < 1e-12

    def test_unitarity(self, small_grid, duffing):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        psi = make_coherent_state(0.0, 0.0, params, small_grid)
        stepped = apply_potential(apply_kinetic_half(psi, 1e-3, params), 1e-3, 0.0, duffing, params, 0.1)
        assert abs(stepped.norm_squared() - 1.0) < 1e-12

    def test_free_packet_spreading(self):
        # width^2(t) = sigma^2 + (hbar t / (2 m sigma))^2
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        grid = GridSpec(-6.0, 6.0, 512)
        free = PotentialSpec(variant="polynomial", coeffs=())
        sigma = 0.25
        psi = make_coherent_state(0.0, 0.0, params, grid, sigma_q=sigma)
        t_final, dt = 2.0, 1e-3
        psi = strang_deterministic(psi, free, params, dt, int(t_final / dt))
        obs = observables(psi, params.hbar)
        expected = sigma**2 + (params.hbar * t_final / (2 * params.mass * sigma)) ** 2
        assert abs(obs.var_q - expected) < 1e-3 * expected

    def test_harmonic_classical_motion(self, harmonic):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        grid = GridSpec(-4.0, 4.0, 512)
        q0, p0 = 0.7, 0.4
        psi = make_coherent_state(q0, p0, params, grid)
        dt = 1e-3
        for frac in (0.25, 0.5, 1.0):
            t_target = frac * 2 * np.pi
            psi_t = strang_deterministic(
                make_coherent_state(q0, p0, params, grid), harmonic, params, dt, int(round(t_target / dt))
            )
            obs = observables(psi_t, params.hbar)
            expected_q = q0 * np.cos(t_target) + p0 * np.sin(t_target)
            assert abs(obs.mean_q - expected_q) < 1e-3 * max(abs(expected_q), 0.1)

    def test_parity_preserved(self, small_grid):
        # even V, even initial state, no noise: <q>(t) stays 0
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        pot = PotentialSpec(variant="polynomial", coeffs=(0.0, 0.0, -0.5, 0.0, 0.25))
        psi = make_coherent_state(0.0, 0.0, params, small_grid)
        psi = strang_deterministic(psi, pot, params, 1e-3, 500)
        assert abs(observables(psi, params.hbar).mean_q) < 1e-8

    def test_grid_refinement_consistency(self, harmonic):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        vals = []
        for n in (512, 1024):
            grid = GridSpec(-4.0, 4.0, n)
            psi = make_coherent_state(0.5, 0.3, params, grid)
            psi = strang_deterministic(psi, harmonic, params, 1e-3, 1000)
            obs = observables(psi, params.hbar)
            vals.append((obs.mean_q, obs.mean_p, obs.var_q))
        np.testing.assert_allclose(vals[0], vals[1], atol=1e-6)

    def test_boundary_leak_indicator(self, small_grid):
        params = PhysicalParams(hbar=0.05, kT=1.0, Lambda=5.0)
        centered = make_coherent_state(0.0, 0.0, params, small_grid)
        assert centered.boundary_leak() < 1e-6
        q = small_grid.q
        flat = WaveFunction(small_grid, np.ones(small_grid.n, dtype=complex)).normalized()
        assert flat.boundary_leak() > 1e-6
