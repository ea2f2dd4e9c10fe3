"""State, operator, and density-matrix contracts."""

import math

import numpy as np
import pytest

from contmeas import (
    DensityMatrix,
    DiagonalGridOperator,
    GridWavefunction,
    HermiticityError,
    HermitianOperator,
    InvalidStateError,
    StateVector,
    ZeroNormError,
    apply,
    double_commutator,
    expectation,
    fidelity,
    gaussian_packet,
    kinetic_operator,
    norm2,
    position_operator,
    trace_distance,
    variance,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def sv(*amps):
    return StateVector(np.array(amps, dtype=complex))


class TestStateVector:
    def test_norm2_basis_state(self):
        assert norm2(sv(1, 0)) == 1.0

    def test_norm2_unit_vector(self):
        assert norm2(sv(3 / 5, 4j / 5)) == pytest.approx(1.0, abs=1e-15)

    def test_norm2_sum_of_squares(self):
        assert norm2(sv(1, 1)) == 2.0

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidStateError):
            sv(np.nan, 0)
        with pytest.raises(InvalidStateError):
            sv(np.inf, 1)

    def test_rejects_dim_below_two(self):
        with pytest.raises(InvalidStateError):
            sv(1.0)

    def test_normalized_zero_norm(self):
        with pytest.raises(ZeroNormError):
            sv(0, 0).normalized()

    def test_amplitudes_immutable(self):
        s = sv(1, 0)
        with pytest.raises(ValueError):
            s.amplitudes[0] = 2.0


class TestExpectationVariance:
    def test_eigenstate(self):
        a = HermitianOperator(SZ)
        assert expectation(a, sv(1, 0)) == pytest.approx(1.0)
        assert variance(a, sv(1, 0)) == 0.0

    def test_symmetric_superposition(self):
        a = HermitianOperator(SZ)
        s = sv(1, 1)
        assert expectation(a, s) == pytest.approx(0.0, abs=1e-15)
        assert variance(a, s) == pytest.approx(1.0)

    def test_sigma_x_eigenstate(self):
        a = HermitianOperator(SX)
        assert expectation(a, sv(1, 1)) == pytest.approx(1.0)

    def test_shifted_spectrum_variance(self):
        a = HermitianOperator(np.diag([2.0, 0.0]).astype(complex))
        assert variance(a, sv(1, 1)) == pytest.approx(1.0)

    def test_scale_invariance(self):
        a = HermitianOperator(SX)
        s1 = sv(0.3, 0.7j)
        s2 = StateVector((2.5 - 1.5j) * s1.amplitudes)
        assert expectation(a, s2) == pytest.approx(expectation(a, s1), abs=1e-12)

    def test_zero_norm_rejected(self):
        a = HermitianOperator(SZ)
        with pytest.raises(ZeroNormError):
            expectation(a, sv(0, 0))
        with pytest.raises(ZeroNormError):
            variance(a, sv(0, 0))

    def test_variance_clips_roundoff(self):
        a = HermitianOperator(SZ)
        v = variance(a, sv(1, 1e-9))
        assert v >= 0.0


class TestApply:
    def test_identity(self):
        a = HermitianOperator(np.eye(2, dtype=complex))
        s = sv(0.6, 0.8j)
        out = apply(a, s)
        assert np.allclose(out.amplitudes, s.amplitudes)

    def test_diagonal(self):
        a = HermitianOperator(np.diag([1.0, 2.0]).astype(complex))
        out = apply(a, sv(1, 1))
        assert np.allclose(out.amplitudes, [1.0, 2.0])

    def test_dimension_mismatch(self):
        a = HermitianOperator(np.eye(3, dtype=complex))
        with pytest.raises(Exception):
            apply(a, sv(1, 0))


class TestHermitianOperator:
    def test_rejects_non_hermitian_citing_entry(self):
        m = np.array([[0, 1], [1.3, 0]], dtype=complex)
        with pytest.raises(HermiticityError) as err:
            HermitianOperator(m)
        msg = str(err.value)
        assert "max asymmetry" in msg
        assert "(0,1)" in msg or "(1,0)" in msg

    def test_never_symmetrizes(self):
        # a barely-asymmetric matrix is still rejected, not repaired
        m = np.array([[0, 1], [1 + 1e-10, 0]], dtype=complex)
        with pytest.raises(HermiticityError):
            HermitianOperator(m)

    def test_accepts_below_tolerance(self):
        m = np.array([[0, 1], [1 + 1e-13, 0]], dtype=complex)
        HermitianOperator(m)

    def test_eigensystem_sorted(self):
        a = HermitianOperator(SX)
        w, v = a.eigensystem()
        assert np.allclose(w, [-1.0, 1.0])
        assert np.allclose(v @ np.diag(w) @ v.conj().T, SX)


class TestDoubleCommutator:
    def test_commuting_is_zero(self):
        a = HermitianOperator(SZ)
        rho = np.diag([0.3, 0.7]).astype(complex)
        assert np.allclose(double_commutator(a, rho), 0.0)

    def test_off_diagonals_times_four(self):
        a = HermitianOperator(SZ)
        rho = 0.5 * (np.eye(2) + SX)
        out = double_commutator(a, rho)
        assert np.allclose(out, np.array([[0, 2], [2, 0]]))

    def test_identity_observable_is_zero(self):
        a = HermitianOperator(np.eye(2, dtype=complex))
        rho = 0.5 * (np.eye(2) + 0.3 * SX + 0.2 * SZ)
        assert np.allclose(double_commutator(a, rho), 0.0)


class TestFidelity:
    def test_self_is_one(self):
        s = sv(0.6, 0.8j)
        assert fidelity(s, s) == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        assert fidelity(sv(1, 0), sv(0, 1)) == 0.0

    def test_phase_invariance(self):
        s = sv(0.6, 0.8)
        s2 = StateVector(np.exp(1.7j) * s.amplitudes)
        assert fidelity(s, s2) == pytest.approx(1.0)

    def test_symmetric_and_scale_invariant(self):
        s1, s2 = sv(1, 0.5j), sv(0.2, 1)
        f12 = fidelity(s1, s2)
        f21 = fidelity(s2, s1)
        f_scaled = fidelity(StateVector(3.0 * s1.amplitudes), s2)
        assert f12 == pytest.approx(f21)
        assert f12 == pytest.approx(f_scaled)
        assert 0.0 <= f12 <= 1.0


class TestGridWavefunction:
    def test_power_of_two_enforced(self):
        with pytest.raises(InvalidStateError):
            GridWavefunction(np.ones(100, dtype=complex), -1.0, 1.0)

    def test_norm2_includes_spacing(self):
        psi = GridWavefunction(np.ones(8, dtype=complex), 0.0, 2.0)
        assert psi.norm2() == pytest.approx(2.0)

    def test_gaussian_moments_match_closed_form(self):
        # spacing <= sigma/8 and >= 8 sigma of clearance: 1e-6 relative
        var_q = 1.0
        psi = gaussian_packet(512, -25.0, 25.0, mean_q=1.5, mean_p=2.0,
                              var_q=var_q, hbar=1.0)
        assert psi.spacing <= math.sqrt(var_q) / 8.0
        q_op = position_operator(psi)
        assert expectation(q_op, psi) == pytest.approx(1.5, rel=1e-6)
        assert variance(q_op, psi) == pytest.approx(1.0, rel=1e-6)
        p = psi.wavenumbers()  # hbar = 1: momentum = k
        w = psi.momentum_density()
        mean_p = (p * w).sum()
        var_p = (w * (p - mean_p) ** 2).sum()
        assert mean_p == pytest.approx(2.0, rel=1e-6)
        assert var_p == pytest.approx(0.25 / var_q, rel=1e-6)

    def test_packet_with_correlation(self):
        psi = gaussian_packet(512, -25.0, 25.0, 0.0, 0.0, var_q=1.0,
                              cov_qp=0.4, hbar=1.0)
        p = psi.wavenumbers()
        w = psi.momentum_density()
        mean_p = (p * w).sum()
        var_p = (w * (p - mean_p) ** 2).sum()
        assert var_p == pytest.approx(0.25 + 0.4**2, rel=1e-6)

    def test_kinetic_operator_is_momentum_diagonal(self):
        psi = gaussian_packet(64, -10.0, 10.0, 0.0, 0.0, 1.0)
        kin = kinetic_operator(psi, mass=2.0, hbar=1.0)
        assert isinstance(kin, DiagonalGridOperator)
        assert kin.space == "momentum"
        k = psi.wavenumbers()
        assert np.allclose(kin.samples, (k**2) / 4.0)


class TestDensityMatrix:
    def test_valid_pure_state(self):
        rho = DensityMatrix.from_state(sv(1, 1))
        assert rho.purity() == pytest.approx(1.0)
        assert np.trace(rho.matrix).real == pytest.approx(1.0)

    def test_rejects_bad_trace(self):
        with pytest.raises(InvalidStateError):
            DensityMatrix(np.diag([0.6, 0.6]).astype(complex))

    def test_rejects_non_hermitian(self):
        m = np.array([[0.5, 0.1], [0.3, 0.5]], dtype=complex)
        with pytest.raises(HermiticityError):
            DensityMatrix(m)

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(InvalidStateError):
            DensityMatrix(np.diag([1.1, -0.1]).astype(complex))

    def test_trace_distance_orthogonal_states(self):
        r1 = DensityMatrix.from_state(sv(1, 0))
        r2 = DensityMatrix.from_state(sv(0, 1))
        assert trace_distance(r1, r2) == pytest.approx(1.0)

    def test_trace_distance_self(self):
        r = DensityMatrix.from_state(sv(1, 1))
        assert trace_distance(r, r) == 0.0
