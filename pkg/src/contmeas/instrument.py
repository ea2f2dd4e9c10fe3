"""Per-slice measurement instruments and brute-force record statistics.

One time slice of the monitoring process is the Gaussian instrument

    M(a) = c * exp(-kappa dt (A - a)^2),      c = (2 kappa dt / pi)^(1/4),

whose outcome operators M(a)^dag M(a) integrate to the identity against
the plain Lebesgue measure da. Two bookkeeping conventions for the same
measure appear in this package and convert by one scalar per slice:

* normalized kernels (the ``c`` included, as in :func:`kraus` and
  :func:`propagator_for_record`) pair with the measure ``da``;
* bare kernels exp(-kappa dt (A - a)^2) (as in the linear stepping of the
  unraveling module) pair with the measure ``c^2 da`` per slice, which is
  exactly the per-point weight a :class:`RecordLattice` carries.

Either way the total probability of all readout sequences is 1, which the
lattice enumeration below verifies by brute force.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    DimensionMismatchError,
    EnumerationSizeError,
    InvalidStateError,
)
from .hilbert import (
    DiagonalGridOperator,
    GridWavefunction,
    HermitianOperator,
    StateVector,
)
from .unraveling import MeasurementRecord, strength_value

ENUMERATION_GUARD = 10_000_000


@dataclass(frozen=True)
class GaussianInstrument:
    """One time slice of Gaussian monitoring of observable A.

    Parameters
    ----------
    a_op : HermitianOperator
        Monitored observable (matrix representation).
    kappa : float
        Measurement strength, 1/([A]^2 time).
    dt : float
        Slice duration.
    """

    a_op: HermitianOperator
    kappa: float
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", strength_value(self.kappa, allow_zero=False))
        if self.dt <= 0.0 or not math.isfinite(self.dt):
            raise ConfigurationError([("dt", "must be a positive finite number")])
        if not isinstance(self.a_op, HermitianOperator):
            raise ConfigurationError([("a_op", "instrument needs a matrix observable")])

    @property
    def normalization(self):
        """c = (2 kappa dt / pi)^(1/4)."""
        return (2.0 * self.kappa * self.dt / math.pi) ** 0.25

    @property
    def readout_sigma(self):
        """Std of one readout around an eigenvalue, 1 / (2 sqrt(kappa dt))."""
        return 1.0 / (2.0 * math.sqrt(self.kappa * self.dt))

    def kraus(self, a):
        """M(a) = c * exp(-kappa dt (A - a)^2) as a dense matrix."""
        if not math.isfinite(a):
            raise InvalidStateError("readout value must be finite")
        w, v = self.a_op.eigensystem()
        damp = self.normalization * np.exp(-self.kappa * self.dt * (w - a) ** 2)
        return (v * damp) @ v.conj().T

    def outcome_weights(self, a):
        """Diagonal of M(a)^dag M(a) in the eigenbasis of A."""
        w, _ = self.a_op.eigensystem()
        c2 = self.normalization**2
        return c2 * np.exp(-2.0 * self.kappa * self.dt * (w - a) ** 2)

    def coherence_factors(self):
        """Record-averaged per-slice damping exp(-(kappa dt / 2)(a_m - a_n)^2).

        Averaging M(a) rho M(a)^dag over the readout leaves populations in
        the eigenbasis of A untouched and multiplies each coherence by this
        factor; composing it over slices is the closed form against which
        the master-equation integrator is checked.
        """
        w, _ = self.a_op.eigensystem()
        diff = w[:, None] - w[None, :]
        return np.exp(-0.5 * self.kappa * self.dt * diff**2)

    def average_map(self, rho):
        """Apply the record-averaged slice map in the eigenbasis of A."""
        w, v = self.a_op.eigensystem()
        rho_eig = v.conj().T @ rho @ v
        rho_eig = rho_eig * self.coherence_factors()
        return v @ rho_eig @ v.conj().T


def kraus(inst, a):
    """Module-level alias for :meth:`GaussianInstrument.kraus`."""
    return inst.kraus(a)


def gaussian_factor_samples(values, kappa, dt, a):
    """Bare position-diagonal measurement factor exp(-kappa dt (q - a)^2)."""
    return np.exp(-kappa * dt * (np.asarray(values) - a) ** 2)


@dataclass(frozen=True)
class RecordLattice:
    """Uniform readout lattice a_j = a_min + j * spacing, j = 0..n-1.

    The per-point record-measure weight is ``spacing * c^2`` (bare-kernel
    convention); against normalized Kraus operators the weight is plain
    ``spacing``. For trustworthy quadrature the lattice should span at
    least 6 readout standard deviations beyond every eigenvalue of the
    monitored observable.
    """

    a_min: float
    spacing: float
    n_points: int

    def __post_init__(self):
        if not (math.isfinite(self.a_min) and math.isfinite(self.spacing)):
            raise ConfigurationError([("lattice", "bounds must be finite")])
        if self.spacing <= 0.0:
            raise ConfigurationError([("lattice.spacing", "must be positive")])
        if self.n_points < 1:
            raise ConfigurationError([("lattice.points", "must be at least 1")])

    @classmethod
    def spanning(cls, inst, n_sigmas=6.0, points_per_sigma=20.0):
        """Lattice covering every eigenvalue of A plus n_sigmas readout widths."""
        w, _ = inst.a_op.eigensystem()
        sigma = inst.readout_sigma
        lo = float(w[0]) - n_sigmas * sigma
        hi = float(w[-1]) + n_sigmas * sigma
        spacing = sigma / points_per_sigma
        n = int(math.ceil((hi - lo) / spacing)) + 1
        return cls(lo, spacing, n)

    @property
    def values(self):
        return self.a_min + self.spacing * np.arange(self.n_points)

    def measure_weight(self, inst):
        """Per-point weight spacing * c^2 of the bare-kernel record measure."""
        return self.spacing * inst.normalization**2

    def span_sigmas(self, inst):
        """Worst-case covered width, in readout sigmas, around the eigenvalues."""
        w, _ = inst.a_op.eigensystem()
        vals = self.values
        sigma = inst.readout_sigma
        left = (float(w[0]) - vals[0]) / sigma
        right = (vals[-1] - float(w[-1])) / sigma
        return min(left, right)


def completeness_defect(inst, lattice=None):
    """Max deviation of the summed outcome operators from the identity.

    With ``lattice=None`` the Gaussian integral is evaluated in closed
    form: int da M(a)^dag M(a) = 1 on every eigenvalue, so the defect is
    exactly zero. With a lattice the integral is replaced by the Riemann
    sum over the lattice points, and the defect measures truncation plus
    quadrature error, the quantity that certifies a lattice before it is
    used for enumeration.
    """
    if lattice is None:
        return 0.0
    w, _ = inst.a_op.eigensystem()
    vals = lattice.values
    damp = np.exp(-2.0 * inst.kappa * inst.dt * (w[:, None] - vals[None, :]) ** 2)
    sums = lattice.measure_weight(inst) * damp.sum(axis=1)
    return float(np.abs(sums - 1.0).max())


def propagator_for_record(inst, h, hbar, record):
    """Time-ordered product over the record of (unitary x Kraus) factors.

    Returns the operator that maps the initial state to the unnormalized
    conditional state, with the normalization constant c included in every
    slice. Replaying the same record through the bare-kernel linear
    stepping of the unraveling module gives the same state divided by
    c^n_slices; that scalar is the entire conversion between the two
    conventions.
    """
    if not isinstance(record, MeasurementRecord):
        raise InvalidStateError("propagator needs a MeasurementRecord")
    if len(record) >= 2 and not math.isclose(record.dt, inst.dt, rel_tol=1e-9):
        raise ConfigurationError([("record", "record spacing does not match the instrument dt")])
    if h.dim != inst.a_op.dim:
        raise DimensionMismatchError("Hamiltonian and observable dimensions differ")
    u = h.unitary_factor(inst.dt, hbar)
    out = np.eye(inst.a_op.dim, dtype=np.complex128)
    for a_k in record.values:
        out = u @ (inst.kraus(a_k) @ out)
    return out


@dataclass
class EnumerationResult:
    """Brute-force distribution over every readout sequence on a lattice.

    ``probabilities`` has one axis per slice, indexed by lattice point;
    entry [j1, ..., jn] is the probability of the readout sequence
    (a_{j1}, ..., a_{jn}) including its measure weight, so the array sums
    to 1 up to quadrature error.
    """

    lattice: RecordLattice
    n_steps: int
    probabilities: np.ndarray

    @property
    def total_probability(self):
        return float(self.probabilities.sum())

    def marginal(self, slice_index):
        """Marginal distribution of one slice (sums to the total)."""
        axes = tuple(i for i in range(self.n_steps) if i != slice_index)
        return self.probabilities.sum(axis=axes)

    def marginal_moments(self, slice_index):
        """Mean and variance of one slice's readout under the marginal."""
        p = self.marginal(slice_index)
        p = p / p.sum()
        vals = self.lattice.values
        mean = float((p * vals).sum())
        var = float((p * (vals - mean) ** 2).sum())
        return mean, var

    def records(self):
        """Iterate (readout tuple, probability) rows of the full table."""
        vals = self.lattice.values
        it = np.nditer(self.probabilities, flags=["multi_index"])
        for p in it:
            yield tuple(float(vals[j]) for j in it.multi_index), float(p)


def enumerate_record_distribution(psi0, inst, h, hbar, n_steps, lattice):
    """Probability of every lattice readout sequence, by direct propagation.

    Propagates the initial state through each slice factor level by level
    (the chunked product over U M(a_j)) and collects the squared norms at
    the last level. Refuses joint lattices beyond 10^7 sequences.
    """
    if n_steps < 1:
        raise ConfigurationError([("n_steps", "enumeration needs at least one slice")])
    size = lattice.n_points**n_steps
    if size > ENUMERATION_GUARD:
        raise EnumerationSizeError(
            f"{lattice.n_points} lattice points over {n_steps} slices is "
            f"{size} sequences, beyond the {ENUMERATION_GUARD} guard"
        )
    if lattice.span_sigmas(inst) < 6.0:
        warnings.warn(
            "record lattice spans fewer than 6 readout sigmas; "
            "enumeration will miss Gaussian mass",
            stacklevel=2,
        )
    psi = psi0.normalized().amplitudes
    d = psi.size
    vals = lattice.values
    w, v = inst.a_op.eigensystem()
    u = h.unitary_factor(inst.dt, hbar)
    # Per-point slice factors U M(a_j), built in the eigenbasis in one sweep.
    damp = inst.normalization * np.exp(-inst.kappa * inst.dt * (vals[:, None] - w[None, :]) ** 2)
    factors = np.einsum("ij,aj,kj->aik", u @ v, damp, v.conj())

    # Propagate the state tree level by level; for the last slice only the
    # squared norms are needed, and since the unitary factors drop out of a
    # norm, ||U M(a) psi||^2 = sum_j damp(a, j)^2 |(V^dag psi)_j|^2.
    states = psi[None, :]
    for _ in range(n_steps - 1):
        states = np.einsum("aik,pk->pai", factors, states).reshape(-1, d)
    weights = np.abs(states @ v.conj()) ** 2
    norms = weights @ (damp**2).T
    shape = (lattice.n_points,) * n_steps
    probabilities = norms.reshape(shape) * lattice.spacing**n_steps
    return EnumerationResult(lattice=lattice, n_steps=n_steps, probabilities=probabilities)


@dataclass(frozen=True)
class CorridorSpec:
    """Sharp readout corridor: center path and half width in units of A."""

    center_path: np.ndarray
    half_width: float

    def __post_init__(self):
        path = np.array(self.center_path, dtype=np.float64)
        if path.ndim != 1 or path.size < 1 or not np.all(np.isfinite(path)):
            raise ConfigurationError([("corridor.center_path", "must be a finite 1-d array")])
        if not (self.half_width > 0.0 and math.isfinite(self.half_width)):
            raise ConfigurationError([("corridor.half_width", "must be positive")])
        path.setflags(write=False)
        object.__setattr__(self, "center_path", path)


@dataclass
class CorridorResult:
    """Probability that every slice's readout stays inside the corridor."""

    probability: float
    empty_at_step: int | None
    final_state: object

    @property
    def emptied(self):
        return self.empty_at_step is not None


def corridor_probability(psi0, spec, h, a_op, hbar, dt):
    """Sharp-corridor probability via per-slice spectral projectors.

    Each slice projects onto the eigenvalues of A inside
    [center - half_width, center + half_width] (indicator multiplication
    in position space on a grid), then applies the unitary factor. If the
    window contains no spectrum at some slice the probability is 0 and the
    step index is flagged.
    """
    if dt <= 0.0:
        raise ConfigurationError([("dt", "must be positive")])
    n_steps = spec.center_path.size
    if isinstance(psi0, StateVector):
        w, v = a_op.eigensystem()
        u = h.unitary_factor(dt, hbar)
        psi = psi0.normalized().amplitudes
        for k in range(n_steps):
            inside = np.abs(w - spec.center_path[k]) <= spec.half_width
            if not inside.any():
                return CorridorResult(0.0, k, None)
            proj = (v * inside.astype(np.float64)) @ v.conj().T
            psi = u @ (proj @ psi)
        prob = float(np.real(np.vdot(psi, psi)))
        return CorridorResult(prob, None, StateVector(psi))
    if isinstance(psi0, GridWavefunction):
        if not (isinstance(h, DiagonalGridOperator) and h.space == "momentum"):
            raise ConfigurationError([("h", "grid corridors need a momentum-diagonal Hamiltonian")])
        if not (isinstance(a_op, DiagonalGridOperator) and a_op.space == "position"):
            raise ConfigurationError([("a_op", "grid corridors need a position-diagonal observable")])
        kin_phase = np.exp(-1j * h.samples * dt / hbar)
        psi = psi0.normalized()
        s = psi.samples
        for k in range(n_steps):
            inside = np.abs(a_op.samples - spec.center_path[k]) <= spec.half_width
            if not inside.any():
                return CorridorResult(0.0, k, None)
            s = inside.astype(np.float64) * s
            s = np.fft.ifft(kin_phase * np.fft.fft(s, norm="ortho"), norm="ortho")
        out = psi.with_samples(s)
        return CorridorResult(out.norm2(), None, out)
    raise InvalidStateError(f"unsupported state type {type(psi0).__name__}")
