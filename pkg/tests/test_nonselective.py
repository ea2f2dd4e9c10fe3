"""Record-averaged master equation and trajectory-ensemble averaging."""

import math

import numpy as np
import pytest

from contmeas import (
    ConfigurationError,
    DensityMatrix,
    DimensionMismatchError,
    HermitianOperator,
    MasterEqConfig,
    NoiseStream,
    StateVector,
    ensemble_average,
    me_derivative,
    run_ensemble,
    run_me,
    run_selective,
    trace_distance,
)

SX = HermitianOperator(np.array([[0, 1], [1, 0]], dtype=complex))
SZ = HermitianOperator(np.array([[1, 0], [0, -1]], dtype=complex))
H0 = HermitianOperator(np.zeros((2, 2), dtype=complex))

UP = StateVector(np.array([1, 0], dtype=complex))
DOWN = StateVector(np.array([0, 1], dtype=complex))
PLUS_RHO = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)


class TestMasterEqConfig:
    def test_generator_bound_value(self):
        cfg = MasterEqConfig(SX, SZ, kappa=1.0, hbar=1.0, dt=0.02)
        assert cfg.generator_bound() == pytest.approx(4.0)

    def test_step_size_refused_at_bound(self):
        with pytest.raises(ConfigurationError, match="dt_me"):
            MasterEqConfig(SX, SZ, kappa=1.0, hbar=1.0, dt=0.03)

    def test_with_auto_dt(self):
        cfg = MasterEqConfig.with_auto_dt(SX, SZ, kappa=1.0, hbar=1.0)
        assert cfg.dt == pytest.approx(0.005)

    def test_dimension_mismatch(self):
        h3 = HermitianOperator(np.eye(3, dtype=complex))
        with pytest.raises(DimensionMismatchError):
            MasterEqConfig(h3, SZ, kappa=1.0, hbar=1.0, dt=1e-3)


class TestMeDerivative:
    def test_stationary_state(self):
        rho = np.diag([0.25, 0.75]).astype(complex)
        cfg = MasterEqConfig(SZ, SZ, kappa=1.0, hbar=1.0, dt=1e-3)
        assert np.array_equal(me_derivative(rho, cfg), np.zeros((2, 2)))

    def test_dephasing_rate_is_two_kappa(self):
        cfg = MasterEqConfig(H0, SZ, kappa=1.0, hbar=1.0, dt=1e-3)
        deriv = me_derivative(PLUS_RHO, cfg)
        assert deriv[0, 1] == pytest.approx(-1.0, rel=1e-14)
        assert deriv[0, 0] == pytest.approx(0.0, abs=1e-15)

    def test_maximally_mixed_is_stationary(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        h = HermitianOperator(raw + raw.conj().T)
        cfg = MasterEqConfig(h, SZ, kappa=0.7, hbar=1.0, dt=1e-4)
        deriv = me_derivative(0.5 * np.eye(2, dtype=complex), cfg)
        assert np.allclose(deriv, 0.0, atol=1e-15)

    def test_trace_free_and_hermitian(self):
        rng = np.random.default_rng(11)
        cfg = MasterEqConfig(SX, SZ, kappa=1.0, hbar=1.0, dt=1e-3)
        for _ in range(5):
            raw = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            rho = raw @ raw.conj().T
            rho /= np.trace(rho)
            deriv = me_derivative(rho, cfg)
            assert abs(np.trace(deriv)) < 1e-12
            assert np.allclose(deriv, deriv.conj().T, atol=1e-12)


class TestRunMe:
    def test_unitary_limit_preserves_purity(self):
        rho0 = DensityMatrix(PLUS_RHO)
        cfg = MasterEqConfig(SZ, SX, kappa=0.0, hbar=1.0, dt=0.01)
        res = run_me(rho0, cfg, 1.0, save_stride=100)
        assert abs(res.final_state.purity() - 1.0) < 1e-9

    def test_dephasing_envelope(self):
        cfg = MasterEqConfig(H0, SZ, kappa=1.0, hbar=1.0, dt=1e-3)
        res = run_me(DensityMatrix(PLUS_RHO), cfg, 1.0, save_stride=250)
        for t, state in zip(res.times, res.states):
            expected = 0.5 * math.exp(-2.0 * t)
            assert abs(state.matrix[0, 1]) == pytest.approx(expected, rel=1e-6)

    def test_rotating_coherence_keeps_envelope(self):
        cfg = MasterEqConfig(SZ, SZ, kappa=0.5, hbar=1.0, dt=1e-3)
        res = run_me(DensityMatrix(PLUS_RHO), cfg, 0.5, save_stride=500)
        final = res.final_state.matrix
        assert abs(final[0, 1]) == pytest.approx(0.5 * math.exp(-0.5), rel=1e-6)
        assert final[0, 0].real == pytest.approx(0.5, abs=1e-12)

    def test_diagonal_state_is_exactly_static(self):
        rho0 = np.diag([0.3, 0.7]).astype(complex)
        cfg = MasterEqConfig(H0, SZ, kappa=1.0, hbar=1.0, dt=1e-2)
        res = run_me(rho0, cfg, 0.1)
        for state in res.states:
            assert np.array_equal(state.matrix, rho0)

    def test_samples_stay_physical(self):
        cfg = MasterEqConfig(SX, SZ, kappa=1.0, hbar=1.0, dt=2e-3)
        res = run_me(DensityMatrix(PLUS_RHO), cfg, 1.0, save_stride=50)
        for state in res.states:
            assert abs(np.trace(state.matrix) - 1.0) < 1e-9
            assert np.linalg.eigvalsh(state.matrix)[0] > -1e-8

    def test_time_grid_validation(self):
        cfg = MasterEqConfig(SX, SZ, kappa=1.0, hbar=1.0, dt=1e-3)
        with pytest.raises(ConfigurationError):
            run_me(DensityMatrix(PLUS_RHO), cfg, -1.0)
        with pytest.raises(ConfigurationError):
            run_me(DensityMatrix(PLUS_RHO), cfg, 0.00055)


class TestEnsembleAverage:
    def test_needs_two_trajectories(self):
        traj = run_selective(UP, H0, SZ, 1.0, 1.0, 1e-3, 5, stream=NoiseStream(0, 0))
        with pytest.raises(ConfigurationError):
            ensemble_average([traj])

    def test_mismatched_grids_rejected(self):
        t1 = run_selective(UP, H0, SZ, 1.0, 1.0, 1e-3, 5, stream=NoiseStream(0, 0))
        t2 = run_selective(UP, H0, SZ, 1.0, 1.0, 1e-3, 6, stream=NoiseStream(0, 1))
        with pytest.raises(DimensionMismatchError):
            ensemble_average([t1, t2])

    def test_repeated_trajectory_is_projector(self):
        traj = run_selective(UP, SX, SZ, 1.0, 1.0, 1e-3, 10,
                             stream=NoiseStream(5, 0), save_stride=5)
        avg = ensemble_average([traj, traj])
        for i in range(avg.times.size):
            rho = avg.rho_mean[i]
            assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-10)
            assert np.allclose(avg.rho_se[i], 0.0, atol=1e-12)

    def test_orthogonal_eigenstates_average_to_mixed(self):
        t_up = run_selective(UP, H0, SZ, 1.0, 1.0, 1e-3, 10, stream=NoiseStream(1, 0))
        t_dn = run_selective(DOWN, H0, SZ, 1.0, 1.0, 1e-3, 10, stream=NoiseStream(1, 1))
        avg = ensemble_average([t_up, t_dn])
        assert np.allclose(avg.rho_mean[-1], 0.5 * np.eye(2), atol=1e-12)

    def test_agrees_with_master_equation(self):
        dt, n_steps = 2e-3, 250
        trajs = [
            run_selective(UP, SX, SZ, 1.0, 1.0, dt, n_steps,
                          stream=NoiseStream(77, i), save_stride=n_steps)
            for i in range(100)
        ]
        avg = ensemble_average(trajs)
        cfg = MasterEqConfig(SX, SZ, kappa=1.0, hbar=1.0, dt=dt)
        res = run_me(DensityMatrix(np.outer(UP.amplitudes, UP.amplitudes)),
                     cfg, dt * n_steps, save_stride=n_steps)
        td = trace_distance(avg.rho_mean[-1], res.final_state.matrix)
        assert td < 0.1

    def test_average_purity_non_increasing(self):
        stats = run_ensemble(UP, SX, SZ, 1.0, 1.0, 2e-3, 200, 400,
                             master_seed=55, save_stride=25)
        purities = [
            np.trace(stats.rho_mean[i] @ stats.rho_mean[i]).real
            for i in range(stats.times.size)
        ]
        for earlier, later in zip(purities, purities[1:]):
            assert later <= earlier + 2e-3
