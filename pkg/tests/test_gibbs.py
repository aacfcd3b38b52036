import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

import oracles
from bose2d.errors import DivergenceError, TruncationError, UsageError
from bose2d.fock import enumerate_sector
from bose2d.gibbs import (
    free_energy_functional,
    free_energy_noninteracting,
    gibbs_state,
    initial_caps,
    partial_trace_reduction,
    reduced_density_matrix,
    thermal_weights,
    truncation_control,
    vacuum_weights,
)
from bose2d.model import ModeSet, Potential, bose_occupations, bose_particle_number, coupling_schedule

SINGLE = ModeSet.ball(0)


def caps_for(S, zero, other):
    caps = [other] * len(S)
    caps[S.zero_index] = zero
    return tuple(caps)


@pytest.fixture(scope="module")
def small_solution():
    S = ModeSet.ball(1)
    w = Potential.gaussian(1.0, 0.02)
    return gibbs_state(S, w, 1.0, 3.0, 1 / 3, caps_for(S, 10, 3))


class TestGibbsState:
    def test_single_mode_free(self):
        sol = gibbs_state(SINGLE, Potential.zero(), 1.0, 1.0, 0.0, (200,), nu=-1.0, E0=0.0)
        assert sol.partition_function == pytest.approx(1 / (1 - math.exp(-1)), rel=1e-12)
        assert sol.partition_function == pytest.approx(1.58198, abs=5e-6)
        assert sol.free_energy == pytest.approx(-0.45868, abs=5e-6)
        assert sol.mean_particle_number == pytest.approx(bose_particle_number(SINGLE, 1.0, 1.0), rel=1e-12)

    def test_single_mode_interacting_series(self):
        nu, E0 = coupling_schedule(SINGLE, Potential.constant(1.0), 1.0, 1.0, 1.0)
        sol = gibbs_state(SINGLE, Potential.constant(1.0), 1.0, 1.0, 1.0, (60,))
        assert sol.partition_function == pytest.approx(oracles.single_mode_series_z(1.0, 1.0, 1.0, nu), rel=1e-10)
        assert sol.E0 == E0

    @pytest.mark.parametrize("T, lam", [(1.0, 0.5), (2.5, 0.2)])
    def test_matches_dense_oracle(self, T, lam):
        S = ModeSet.ball(1)
        caps = caps_for(S, 4, 2)
        sol = gibbs_state(S, Potential.gaussian(1.0, 0.02), 1.0, T, lam, caps)
        dense = oracles.DenseFock([tuple(m) for m in S], caps)
        H = dense.hamiltonian(oracles.gaussian_w(1.0, 0.02), lam)
        rho, log_z = dense.gibbs(H, sol.nu, T)
        assert sol.log_z == pytest.approx(log_z, rel=1e-11)
        ref = oracles.thermal_via_expm(H, dense.number(), sol.nu, T)
        np.testing.assert_allclose(rho, ref, atol=1e-10)
        np.testing.assert_allclose(reduced_density_matrix(sol, 1).matrix, dense.one_body(rho), atol=1e-11)

    def test_divergent_free_state(self):
        with pytest.raises(DivergenceError):
            gibbs_state(SINGLE, Potential.zero(), 1.0, 1.0, 0.0, (10,), nu=0.1, E0=0.0)

    def test_block_limit(self):
        S = ModeSet.ball(1)
        with pytest.raises(TruncationError):
            gibbs_state(S, Potential.gaussian(1.0, 0.02), 1.0, 2.0, 0.5, caps_for(S, 12, 4), max_block_dim=10)

    def test_sector_shares_sum_to_one(self, small_solution):
        assert small_solution.sector_shares.sum() == pytest.approx(1.0, abs=1e-13)
        assert small_solution.probabilities.sum() == pytest.approx(1.0, abs=1e-13)

    def test_free_energy_decreases_with_T(self):
        S = ModeSet.ball(1)
        w = Potential.gaussian(1.0, 0.02)
        Fs = [gibbs_state(S, w, 1.0, T, 0.3, caps_for(S, 12, 3), nu=-0.5, E0=0.0).free_energy for T in (0.5, 1, 2, 3)]
        assert all(b < a for a, b in zip(Fs, Fs[1:]))


class TestFreeEnergyClosedForm:
    def test_single_mode(self):
        assert free_energy_noninteracting(SINGLE, 1.0, 1.0) == pytest.approx(math.log(1 - math.exp(-1)), rel=1e-14)

    def test_matches_high_precision(self):
        S = ModeSet.ball(2)
        for T in (0.3, 4.0, 50.0):
            assert free_energy_noninteracting(S, 1.0, T) == pytest.approx(
                oracles.free_energy([m.kinetic for m in S], 1.0, T), rel=1e-13
            )

    def test_zero_temperature_limit(self):
        vals = [free_energy_noninteracting(SINGLE, 1.0, T) for T in (1.0, 0.1, 0.01)]
        assert all(v < 0 for v in vals) and abs(vals[-1]) < 1e-40

    def test_additive(self):
        S = ModeSet.ball(1)
        parts = free_energy_noninteracting(SINGLE, 1.0, 2.0) + 4 * (
            free_energy_noninteracting(ModeSet.from_pairs([(0, 0), (1, 0), (-1, 0)]), 1.0, 2.0)
            - free_energy_noninteracting(SINGLE, 1.0, 2.0)
        ) / 2
        assert free_energy_noninteracting(S, 1.0, 2.0) == pytest.approx(parts, rel=1e-14)


class TestFunctional:
    def test_gibbs_value(self, small_solution):
        F = free_energy_functional(small_solution.probabilities, small_solution)
        assert F == pytest.approx(small_solution.free_energy, rel=1e-8)

    def test_vacuum(self, small_solution):
        assert free_energy_functional(vacuum_weights(small_solution), small_solution) == pytest.approx(small_solution.E0)

    @pytest.mark.parametrize("factor", [0.9, 1.1])
    def test_temperature_perturbation(self, small_solution, factor):
        p = thermal_weights(small_solution, small_solution.T * factor)
        assert free_energy_functional(p, small_solution) > small_solution.free_energy

    def test_random_perturbations(self, small_solution):
        rng = np.random.default_rng(1)
        base = small_solution.probabilities
        F = small_solution.free_energy
        for _ in range(25):
            p = base * np.exp(0.3 * rng.standard_normal(base.shape))
            p /= p.sum()
            assert free_energy_functional(p, small_solution) > F

    def test_unnormalized_rejected(self, small_solution):
        with pytest.raises(UsageError):
            free_energy_functional(2 * small_solution.probabilities, small_solution)


class TestReducedDensityMatrices:
    def test_pure_two_particle_state(self):
        S = ModeSet.ball(1)
        basis = enumerate_sector(S, 2)
        gamma = np.zeros((len(basis), len(basis)))
        i = basis.index((1, 0, 0, 0, 1))
        gamma[i, i] = 1.0
        g1 = partial_trace_reduction(gamma, basis, 1)
        np.testing.assert_allclose(g1, np.diag([1.0, 0, 0, 0, 1.0]), atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_identity_and_scalar_cases(self, n):
        basis = enumerate_sector(3, n)
        rng = np.random.default_rng(n)
        X = rng.standard_normal((len(basis), len(basis)))
        g = X @ X.T
        np.testing.assert_allclose(partial_trace_reduction(g, basis, n), g, atol=1e-12)
        assert partial_trace_reduction(g, basis, 0).item() == pytest.approx(np.trace(g))

    def test_k_above_n(self):
        basis = enumerate_sector(3, 1)
        with pytest.raises(UsageError):
            partial_trace_reduction(np.eye(3), basis, 2)

    def test_routes_agree(self, small_solution):
        for k in (1, 2, 3):
            a = reduced_density_matrix(small_solution, k, "correlator").matrix
            b = reduced_density_matrix(small_solution, k, "partial_trace").matrix
            np.testing.assert_allclose(a, b, atol=1e-10)

    def test_trace_identity_and_psd(self, small_solution):
        for k in (1, 2, 3):
            dm = reduced_density_matrix(small_solution, k)
            assert dm.trace == pytest.approx(small_solution.expected_binomial(k), abs=1e-10)
            assert dm.is_hermitian(1e-12)
            assert dm.min_eigenvalue() >= -1e-10 * dm.trace
        assert reduced_density_matrix(small_solution, 1).trace == pytest.approx(
            small_solution.mean_particle_number, abs=1e-10
        )

    def test_two_body_matches_dense_correlators(self):
        S = ModeSet.ball(1)
        caps = caps_for(S, 3, 2)
        sol = gibbs_state(S, Potential.gaussian(1.0, 0.02), 1.0, 1.5, 0.5, caps)
        dense = oracles.DenseFock([tuple(m) for m in S], caps)
        rho, _ = dense.gibbs(dense.hamiltonian(oracles.gaussian_w(1.0, 0.02), 0.5), sol.nu, 1.5)
        dm = reduced_density_matrix(sol, 2)
        occ = dm.basis.states
        ref = np.array([[dense.correlator(a, b, rho) for b in occ] for a in occ])
        np.testing.assert_allclose(dm.matrix, ref, atol=1e-11)

    def test_free_one_body_is_bose_einstein(self):
        S = ModeSet.ball(1)
        res = truncation_control(S, Potential.zero(), 1.0, 2.0, 0.0, nu=-1.0, E0=0.0)
        g1 = reduced_density_matrix(res.solution, 1).matrix
        np.testing.assert_allclose(g1, np.diag(bose_occupations(S, 1.0, 2.0)), rtol=1e-8, atol=1e-14)

    def test_k_too_large(self):
        sol = gibbs_state(SINGLE, Potential.zero(), 1.0, 1.0, 0.0, (2,), nu=-1.0, E0=0.0)
        with pytest.raises(UsageError):
            reduced_density_matrix(sol, 3)

    @settings(max_examples=10)
    @given(st.floats(0.5, 4.0), st.floats(0.05, 1.0))
    def test_routes_agree_property(self, T, lam):
        S = ModeSet.from_pairs([(0, 0), (1, 0), (-1, 0)])
        sol = gibbs_state(S, Potential.gaussian(1.0, 0.02), 1.0, T, lam, (3, 6, 3))
        for k in (1, 2):
            a = reduced_density_matrix(sol, k, "correlator")
            b = reduced_density_matrix(sol, k, "partial_trace")
            np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-10)
            assert a.trace == pytest.approx(sol.expected_binomial(k), abs=1e-10)


class TestTruncationControl:
    def test_initial_caps(self):
        S = ModeSet.ball(1)
        assert initial_caps(S, 1.0, 4.0) == caps_for(S, 32, 4)

    def test_single_mode_free_exact(self):
        res = truncation_control(SINGLE, Potential.zero(), 1.0, 4.0, 0.0, nu=-1.0, E0=0.0)
        assert res.converged
        exact = -math.log1p(-math.exp(-0.25))
        assert abs(math.expm1(res.solution.log_z - exact)) <= 1e-8
        assert res.solution.tail <= 1e-10

    def test_positive_nu_converges(self):
        res = truncation_control(SINGLE, Potential.constant(1.0), 1.0, 1.0, 1.0, nu=2.0, E0=0.0)
        assert res.converged and res.solution.nu > 0

    def test_tighter_tolerance_never_shrinks_caps(self):
        S = ModeSet.ball(1)
        w = Potential.gaussian(1.0, 0.02)
        loose = truncation_control(S, w, 1.0, 2.0, 0.5, eps_z=1e-6)
        tight = truncation_control(S, w, 1.0, 2.0, 0.5, eps_z=1e-7)
        assert all(b >= a for a, b in zip(loose.caps, tight.caps))

    def test_budget(self):
        with pytest.raises(TruncationError) as exc:
            truncation_control(ModeSet.ball(1), Potential.gaussian(1.0, 0.02), 1.0, 4.0, 0.25, max_states=100)
        assert "history" in exc.value.diagnostics
