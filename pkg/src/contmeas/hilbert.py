"""States, operators, and the elementary functionals built on them.

Two representations are supported throughout the package: finite-dimensional
complex vectors with dense Hermitian matrices, and periodic one-dimensional
grids with operators diagonal in either position or momentum space. Values
are immutable after construction and every function here is pure, so the
types can be shared freely between concurrent trajectory workers.

Unnormalized states are first-class citizens: their squared norm is a
statistical weight, not an error. Operations that need a direction
(expectations, fidelities) normalize internally.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DimensionMismatchError,
    HermiticityError,
    InvalidStateError,
    ZeroNormError,
)

HERMITICITY_TOL = 1e-12
DENSITY_HERMITICITY_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-10
DENSITY_EIG_FLOOR = -1e-8


def _frozen_complex_vector(values, name):
    arr = np.array(values, dtype=np.complex128)
    if arr.ndim != 1:
        raise InvalidStateError(f"{name} must be a 1-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


class StateVector:
    """Pure state of a finite-dimensional system.

    Parameters
    ----------
    amplitudes : array_like of complex, shape (d,)
        Basis coefficients, d >= 2. The vector need not be normalized;
        its squared norm carries statistical meaning in the linear
        (record-weighted) picture.
    """

    __slots__ = ("amplitudes",)

    def __init__(self, amplitudes):
        arr = _frozen_complex_vector(amplitudes, "amplitudes")
        if arr.size < 2:
            raise InvalidStateError("a state needs basis dimension >= 2")
        self.amplitudes = arr

    @property
    def dim(self):
        return self.amplitudes.size

    def norm2(self):
        """Squared norm, sum of |c_i|^2."""
        return float(np.real(np.vdot(self.amplitudes, self.amplitudes)))

    @property
    def is_normalized(self):
        return abs(math.sqrt(self.norm2()) - 1.0) < 1e-12

    def normalized(self):
        """Unit-norm copy. Raises ZeroNormError on a zero vector."""
        n2 = self.norm2()
        if n2 <= 0.0:
            raise ZeroNormError("cannot normalize a zero-norm state")
        return StateVector(self.amplitudes / math.sqrt(n2))

    def __repr__(self):
        return f"StateVector(dim={self.dim}, norm2={self.norm2():.6g})"


class GridWavefunction:
    """Wavefunction sampled on a uniform periodic position grid.

    The grid holds ``n`` samples on [q_min, q_max) with spacing
    ``(q_max - q_min)/n``; the point count must be a power of two so the
    momentum-space (FFT-diagonal) operators apply exactly. The squared
    norm is the Riemann sum ``spacing * sum(|psi|^2)``.
    """

    __slots__ = ("samples", "q_min", "q_max")

    def __init__(self, samples, q_min, q_max):
        arr = _frozen_complex_vector(samples, "samples")
        n = arr.size
        if n < 2 or (n & (n - 1)) != 0:
            raise InvalidStateError(f"grid size must be a power of two >= 2, got {n}")
        q_min = float(q_min)
        q_max = float(q_max)
        if not (math.isfinite(q_min) and math.isfinite(q_max) and q_max > q_min):
            raise InvalidStateError("grid needs finite q_max > q_min")
        self.samples = arr
        self.q_min = q_min
        self.q_max = q_max

    @property
    def n_points(self):
        return self.samples.size

    @property
    def spacing(self):
        return (self.q_max - self.q_min) / self.samples.size

    @property
    def positions(self):
        return self.q_min + self.spacing * np.arange(self.samples.size)

    def wavenumbers(self):
        """Angular wavenumbers of the FFT modes (momentum = hbar * k)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.samples.size, d=self.spacing)

    def norm2(self):
        s = self.samples
        return float(self.spacing * np.real(np.vdot(s, s)))

    def normalized(self):
        n2 = self.norm2()
        if n2 <= 0.0:
            raise ZeroNormError("cannot normalize a zero-norm wavefunction")
        return GridWavefunction(self.samples / math.sqrt(n2), self.q_min, self.q_max)

    def with_samples(self, samples):
        """Same grid, new sample values."""
        return GridWavefunction(samples, self.q_min, self.q_max)

    def momentum_density(self):
        """Probability weights over the FFT momentum modes (sum to 1)."""
        tilde = np.fft.fft(self.samples, norm="ortho")
        w = np.abs(tilde) ** 2
        total = w.sum()
        if total <= 0.0:
            raise ZeroNormError("zero-norm wavefunction has no momentum density")
        return w / total

    def __repr__(self):
        return (
            f"GridWavefunction(n={self.n_points}, "
            f"box=[{self.q_min:.4g},{self.q_max:.4g}), norm2={self.norm2():.6g})"
        )


def gaussian_packet(n_points, q_min, q_max, mean_q, mean_p, var_q, cov_qp=0.0, hbar=1.0):
    """Normalized Gaussian wave packet with prescribed moments.

    Builds the pure Gaussian state with position mean ``mean_q``, momentum
    mean ``mean_p``, position variance ``var_q`` and symmetrized
    position-momentum covariance ``cov_qp``. The momentum variance follows
    from purity, Var(p) = (hbar^2/4 + cov_qp^2) / var_q.

    The packet should sit at least 8 standard deviations away from both
    grid edges for the periodic representation to reproduce the moments
    faithfully; the grid must resolve the width (spacing <= sigma_q / 8).
    """
    if var_q <= 0.0:
        raise InvalidStateError("var_q must be positive")
    dq = (float(q_max) - float(q_min)) / n_points
    q = float(q_min) + dq * np.arange(n_points)
    x = q - float(mean_q)
    alpha = (1.0 - 2.0j * cov_qp / hbar) / (4.0 * var_q)
    psi = np.exp(-alpha * x * x + 1j * float(mean_p) * x / hbar)
    return GridWavefunction(psi, q_min, q_max).normalized()


class HermitianOperator:
    """Dense Hermitian operator on a finite-dimensional space.

    The constructor rejects (never symmetrizes) any matrix whose maximum
    entrywise deviation from its own adjoint reaches 1e-12. The spectral
    decomposition is computed once on first use and cached, which makes
    exact exponential factors cheap inside stepping loops.
    """

    __slots__ = ("matrix", "_eig", "_unitaries")

    def __init__(self, matrix):
        arr = np.array(matrix, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatchError(f"operator must be square, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise DimensionMismatchError("operator must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise InvalidStateError("operator contains non-finite entries")
        asym = np.abs(arr - arr.conj().T)
        worst = float(asym.max())
        if worst >= HERMITICITY_TOL:
            i, j = np.unravel_index(int(np.argmax(asym)), asym.shape)
            raise HermiticityError(
                f"matrix is not Hermitian: max asymmetry {worst:.3e} at entry ({i},{j})"
            )
        arr.setflags(write=False)
        self.matrix = arr
        self._eig = None
        self._unitaries = {}

    @property
    def dim(self):
        return self.matrix.shape[0]

    def eigensystem(self):
        """Eigenvalues (ascending) and eigenvector columns, cached."""
        if self._eig is None:
            w, v = np.linalg.eigh(self.matrix)
            w.setflags(write=False)
            v.setflags(write=False)
            self._eig = (w, v)
        return self._eig

    def spectral_range(self):
        w, _ = self.eigensystem()
        return float(w[-1] - w[0])

    def unitary_factor(self, dt, hbar):
        """exp(-i * self * dt / hbar), built in the eigenbasis and cached."""
        key = (float(dt), float(hbar))
        u = self._unitaries.get(key)
        if u is None:
            w, v = self.eigensystem()
            phase = np.exp(-1j * w * key[0] / key[1])
            u = (v * phase) @ v.conj().T
            u.setflags(write=False)
            self._unitaries[key] = u
        return u

    def gaussian_factor(self, kappa, dt, a):
        """exp(-kappa * dt * (self - a)^2), exact in the eigenbasis."""
        w, v = self.eigensystem()
        damp = np.exp(-kappa * dt * (w - a) ** 2)
        return (v * damp) @ v.conj().T

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim})"


class DiagonalGridOperator:
    """Grid operator diagonal in position or momentum space.

    ``samples`` holds the real diagonal values, over the position grid for
    ``space="position"`` or over the FFT momentum modes for
    ``space="momentum"``. Hermiticity is exact by construction.
    """

    __slots__ = ("samples", "space")

    def __init__(self, samples, space):
        if space not in ("position", "momentum"):
            raise DimensionMismatchError(f"unknown grid-operator space {space!r}")
        arr = np.array(samples, dtype=np.float64)
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise InvalidStateError("grid operator samples must be a finite 1-d array")
        arr.setflags(write=False)
        self.samples = arr
        self.space = space

    @property
    def dim(self):
        return self.samples.size

    def spectral_range(self):
        return float(self.samples.max() - self.samples.min())

    def __repr__(self):
        return f"DiagonalGridOperator(space={self.space!r}, n={self.dim})"


def position_operator(psi):
    """Position observable for the grid carrying ``psi``."""
    return DiagonalGridOperator(psi.positions, "position")


def kinetic_operator(psi, mass, hbar):
    """Free kinetic energy p^2/2m for the grid carrying ``psi``."""
    if mass <= 0.0:
        raise InvalidStateError("mass must be positive")
    p = hbar * psi.wavenumbers()
    return DiagonalGridOperator(p * p / (2.0 * mass), "momentum")


def _require_same_dim(op, state):
    if op.dim != (state.dim if isinstance(state, StateVector) else state.n_points):
        raise DimensionMismatchError(
            f"operator dimension {op.dim} does not match state"
        )


def norm2(state):
    """Squared norm of a state in either representation."""
    return state.norm2()


def apply(op, state):
    """Apply an operator; the result keeps the representation of ``state``."""
    if isinstance(state, StateVector):
        if not isinstance(op, HermitianOperator):
            raise DimensionMismatchError("finite-dimensional states need a matrix operator")
        _require_same_dim(op, state)
        return StateVector(op.matrix @ state.amplitudes)
    if isinstance(state, GridWavefunction):
        if not isinstance(op, DiagonalGridOperator):
            raise DimensionMismatchError("grid states need a diagonal grid operator")
        _require_same_dim(op, state)
        if op.space == "position":
            return state.with_samples(op.samples * state.samples)
        tilde = np.fft.fft(state.samples, norm="ortho")
        return state.with_samples(np.fft.ifft(op.samples * tilde, norm="ortho"))
    raise InvalidStateError(f"unsupported state type {type(state).__name__}")


def _diagonal_weights(op, state):
    """Probability weights of ``state`` in the diagonal basis of ``op``."""
    if op.space == "position":
        w = np.abs(state.samples) ** 2
    else:
        w = np.abs(np.fft.fft(state.samples, norm="ortho")) ** 2
    total = w.sum()
    return w, total


def expectation(op, state):
    """Normalized expectation value <psi|op|psi> / <psi|psi>.

    Real by construction for Hermitian input; the vanishing imaginary
    part is discarded. Raises ZeroNormError on a zero-norm state.
    """
    n2 = state.norm2()
    if n2 <= 0.0:
        raise ZeroNormError("expectation needs a state with positive norm")
    if isinstance(state, StateVector):
        _require_same_dim(op, state)
        val = np.vdot(state.amplitudes, op.matrix @ state.amplitudes)
        return float(np.real(val)) / n2
    _require_same_dim(op, state)
    w, total = _diagonal_weights(op, state)
    return float((op.samples * w).sum() / total)


def variance(op, state):
    """<op^2> - <op>^2 on the normalized state, clipped to zero at -1e-12."""
    n2 = state.norm2()
    if n2 <= 0.0:
        raise ZeroNormError("variance needs a state with positive norm")
    if isinstance(state, StateVector):
        _require_same_dim(op, state)
        opsi = op.matrix @ state.amplitudes
        mean = float(np.real(np.vdot(state.amplitudes, opsi))) / n2
        second = float(np.real(np.vdot(opsi, opsi))) / n2
    else:
        _require_same_dim(op, state)
        w, total = _diagonal_weights(op, state)
        mean = float((op.samples * w).sum() / total)
        second = float((op.samples**2 * w).sum() / total)
    var = second - mean * mean
    if var < 0.0:
        if var < -1e-12:
            raise InvalidStateError(f"variance came out {var:.3e}, below the -1e-12 floor")
        var = 0.0
    return var


def _overlap(s1, s2):
    if isinstance(s1, StateVector) and isinstance(s2, StateVector):
        if s1.dim != s2.dim:
            raise DimensionMismatchError("states have different dimensions")
        return complex(np.vdot(s1.amplitudes, s2.amplitudes))
    if isinstance(s1, GridWavefunction) and isinstance(s2, GridWavefunction):
        if s1.n_points != s2.n_points:
            raise DimensionMismatchError("wavefunctions live on different grids")
        return complex(s1.spacing * np.vdot(s1.samples, s2.samples))
    raise DimensionMismatchError("cannot overlap states of different representations")


def fidelity(s1, s2):
    """|<s1|s2>|^2 / (|s1|^2 |s2|^2), in [0, 1] up to rounding."""
    n1 = s1.norm2()
    n2 = s2.norm2()
    if n1 <= 0.0 or n2 <= 0.0:
        raise ZeroNormError("fidelity needs states with positive norm")
    val = abs(_overlap(s1, s2)) ** 2 / (n1 * n2)
    return float(min(val, 1.0))


def double_commutator(a_op, rho):
    """[A, [A, rho]] as a dense matrix.

    In the eigenbasis of A, entry (m, n) equals (a_m - a_n)^2 rho_mn,
    which is the decoherence superoperator of the record-averaged dynamics.
    """
    a = a_op.matrix if isinstance(a_op, HermitianOperator) else np.asarray(a_op)
    r = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if a.shape != r.shape:
        raise DimensionMismatchError(
            f"operator shape {a.shape} does not match density matrix shape {r.shape}"
        )
    a2 = a @ a
    return a2 @ r - 2.0 * (a @ r @ a) + r @ a2


class DensityMatrix:
    """Mixed state of a finite-dimensional system.

    The constructor checks Hermiticity (1e-10), unit trace (1e-10) and
    positivity (smallest eigenvalue >= -1e-8); pass ``check=False`` only
    for matrices already validated upstream.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix, check=True):
        arr = np.array(matrix, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatchError(f"density matrix must be square, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidStateError("density matrix contains non-finite entries")
        if check:
            herm = float(np.abs(arr - arr.conj().T).max())
            if herm >= DENSITY_HERMITICITY_TOL:
                raise HermiticityError(
                    f"density matrix asymmetry {herm:.3e} exceeds {DENSITY_HERMITICITY_TOL}"
                )
            tr = complex(np.trace(arr))
            if abs(tr - 1.0) >= DENSITY_TRACE_TOL:
                raise InvalidStateError(f"density matrix trace {tr:.12g} is not 1")
            smallest = float(np.linalg.eigvalsh(arr)[0])
            if smallest < DENSITY_EIG_FLOOR:
                raise InvalidStateError(
                    f"density matrix has eigenvalue {smallest:.3e} below {DENSITY_EIG_FLOOR}"
                )
        arr.setflags(write=False)
        self.matrix = arr

    @classmethod
    def from_state(cls, state):
        """Projector onto a (possibly unnormalized) pure state."""
        n2 = state.norm2()
        if n2 <= 0.0:
            raise ZeroNormError("cannot form a density matrix from a zero-norm state")
        c = state.amplitudes
        return cls(np.outer(c, c.conj()) / n2, check=False)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def purity(self):
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def __repr__(self):
        return f"DensityMatrix(dim={self.dim}, purity={self.purity():.6g})"


def trace_distance(rho1, rho2):
    """(1/2) * trace norm of the difference of two density matrices."""
    m1 = rho1.matrix if isinstance(rho1, DensityMatrix) else np.asarray(rho1)
    m2 = rho2.matrix if isinstance(rho2, DensityMatrix) else np.asarray(rho2)
    if m1.shape != m2.shape:
        raise DimensionMismatchError("density matrices have different shapes")
    eigs = np.linalg.eigvalsh(m1 - m2)
    return float(0.5 * np.abs(eigs).sum())
