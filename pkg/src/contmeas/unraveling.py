"""Selective continuous-measurement dynamics.

Two equivalent pictures of the same diffusive monitoring process live here.
The nonlinear picture advances a normalized state with an Euler-Maruyama
step and emits the measurement readout as expectation plus white noise.
The linear picture advances an unnormalized state with exact split factors,
a Gaussian measurement damping followed by the unitary factor, and carries
the squared norm as the statistical weight of the readout sequence.

The record-noise coefficient is fixed to 1 / (2 sqrt(kappa)):
``a_k = <A> + dW / (2 sqrt(kappa) dt)``, giving the readout variance
1 / (4 kappa dt) per slice. This is the only choice dimensionally
consistent with the Gaussian damping exponent ``kappa dt (A - a)^2``
(kappa carries units 1 / ([A]^2 time)), and the only one under which the
linear and nonlinear pictures produce the same record statistics; the
adjudication test in the suite shows the alternative 1 / (2 kappa)
breaks the per-slice variance by the factor kappa.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    InvalidStateError,
    ModeError,
    StepSizeError,
    ZeroNormError,
)
from .hilbert import (
    DiagonalGridOperator,
    GridWavefunction,
    HermitianOperator,
    StateVector,
    expectation,
    fidelity,
    variance,
)

STEP_GUARD_WARN = 0.1
STEP_GUARD_REFUSE = 1.0

NONLINEAR = "nonlinear"
LINEAR_WITH_RECORD = "linear_with_record"


@dataclass(frozen=True)
class MeasurementStrength:
    """Validated measurement-strength constant, units 1/([A]^2 * time)."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not math.isfinite(v) or v <= 0.0:
            raise ConfigurationError([("kappa", "must be a positive finite number")])
        object.__setattr__(self, "value", v)


def strength_value(kappa, allow_zero=True):
    """Coerce a MeasurementStrength or plain number to a float kappa."""
    v = kappa.value if isinstance(kappa, MeasurementStrength) else float(kappa)
    if not math.isfinite(v) or v < 0.0 or (v == 0.0 and not allow_zero):
        raise ConfigurationError([("kappa", "must be positive and finite")])
    return v


@dataclass(frozen=True)
class MeasurementRecord:
    """Readout sequence of one trajectory: a_k at uniformly spaced t_k."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64)
        a = np.array(self.values, dtype=np.float64)
        if t.ndim != 1 or a.ndim != 1 or t.size != a.size:
            raise InvalidStateError("record times and values must be 1-d and equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a))):
            raise InvalidStateError("record contains non-finite entries")
        if t.size >= 2:
            gaps = np.diff(t)
            if gaps.min() <= 0.0:
                raise InvalidStateError("record times must be strictly increasing")
            if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-12):
                raise InvalidStateError("record times must be uniformly spaced")
        t.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", a)

    def __len__(self):
        return self.values.size

    @property
    def dt(self):
        if self.times.size >= 2:
            return float(self.times[1] - self.times[0])
        if self.times.size == 1:
            return float(self.times[0])
        return None


@dataclass
class TrajectoryResult:
    """One trajectory: saved states plus per-step readout bookkeeping.

    ``states`` holds the state at every save point (always normalized;
    the statistical weight of a linear run lives in ``log_weights``, the
    running ln of the squared norm of the unnormalized evolution).
    ``record`` always covers every step regardless of the save stride.
    """

    times: np.ndarray
    states: list
    record: MeasurementRecord
    mean_a: np.ndarray
    var_a: np.ndarray
    log_weights: np.ndarray
    mode: str
    save_stride: int = 1

    @property
    def final_state(self):
        return self.states[-1]


def check_step_size(a_op, kappa, dt):
    """Validity guard kappa * dt * range(A)^2; warn above 0.1, refuse above 1."""
    kappa = strength_value(kappa)
    product = kappa * dt * a_op.spectral_range() ** 2
    if product > STEP_GUARD_REFUSE:
        raise StepSizeError(
            f"kappa*dt*range(A)^2 = {product:.3g} exceeds 1; reduce the step"
        )
    if product > STEP_GUARD_WARN:
        warnings.warn(
            f"kappa*dt*range(A)^2 = {product:.3g} exceeds 0.1; "
            "per-slice back-action is no longer weak",
            stacklevel=3,
        )
    return product


def _em_step_arrays(psi, hm, am, kappa, hbar, dt, dw):
    """Euler-Maruyama update on a raw amplitude array (any norm)."""
    apsi = am @ psi
    n2 = float(np.real(np.vdot(psi, psi)))
    if n2 <= 0.0:
        raise ZeroNormError("state collapsed to zero norm")
    m = float(np.real(np.vdot(psi, apsi))) / n2
    cpsi = apsi - m * psi
    c2psi = (am @ cpsi) - m * cpsi
    out = (
        psi
        + dt * ((-1j / hbar) * (hm @ psi) - 0.5 * kappa * c2psi)
        + math.sqrt(kappa) * dw * cpsi
    )
    if not np.all(np.isfinite(out)):
        raise StepSizeError("nonlinear step produced non-finite amplitudes")
    return out


def step_nonlinear(psi, h, a_op, kappa, hbar, dt, dw, mode="renorm"):
    """One Euler-Maruyama step of the normalized stochastic wave equation.

    psi' = psi + [-(i/hbar) H - (kappa/2)(A - <A>)^2] psi dt
               + sqrt(kappa) (A - <A>) psi dW

    with <A> taken on the normalized state. In mode ``"renorm"`` (default)
    the result is renormalized and the input must be normalized; mode
    ``"raw"`` leaves the result unnormalized, which makes the ensemble
    mean of the squared norm a constant-in-time martingale up to an
    O(dt^2) positive drift per step.
    """
    if mode not in ("renorm", "raw"):
        raise ModeError(f"unknown nonlinear step mode {mode!r}")
    kappa = strength_value(kappa)
    if dt <= 0.0:
        raise ConfigurationError([("dt", "must be positive")])
    if kappa > 0.0:
        check_step_size(a_op, kappa, dt)
    if isinstance(psi, StateVector):
        if mode == "renorm" and abs(psi.norm2() - 1.0) > 1e-9:
            raise InvalidStateError("renorm mode needs a normalized input state")
        out = _em_step_arrays(psi.amplitudes, h.matrix, a_op.matrix, kappa, hbar, dt, dw)
        result = StateVector(out)
        return result.normalized() if mode == "renorm" else result
    if isinstance(psi, GridWavefunction):
        if mode == "renorm" and abs(psi.norm2() - 1.0) > 1e-9:
            raise InvalidStateError("renorm mode needs a normalized input state")
        out = _em_grid_step(psi, h, a_op, kappa, hbar, dt, dw)
        result = psi.with_samples(out)
        return result.normalized() if mode == "renorm" else result
    raise InvalidStateError(f"unsupported state type {type(psi).__name__}")


def _em_grid_step(psi, h, a_op, kappa, hbar, dt, dw):
    """Single Euler-Maruyama update on grid samples.

    Defined for completeness and for single-step checks; long grid runs go
    through the exact split factors in run_selective, because the explicit
    Euler treatment of the spectral kinetic term amplifies high-momentum
    modes over many steps.
    """
    if not (isinstance(h, DiagonalGridOperator) and isinstance(a_op, DiagonalGridOperator)):
        raise ModeError("grid stepping needs diagonal grid operators")
    if a_op.space != "position":
        raise ModeError("the monitored grid observable must be position-diagonal")
    s = psi.samples
    dq = psi.spacing
    n2 = float(dq * np.real(np.vdot(s, s)))
    if n2 <= 0.0:
        raise ZeroNormError("state collapsed to zero norm")
    w = np.abs(s) ** 2
    m = float(dq * (a_op.samples * w).sum()) / n2
    cs = (a_op.samples - m) * s
    c2s = (a_op.samples - m) * cs
    if h.space == "momentum":
        hs = np.fft.ifft(h.samples * np.fft.fft(s, norm="ortho"), norm="ortho")
    else:
        hs = h.samples * s
    out = s + dt * ((-1j / hbar) * hs - 0.5 * kappa * c2s) + math.sqrt(kappa) * dw * cs
    if not np.all(np.isfinite(out)):
        raise StepSizeError("nonlinear step produced non-finite amplitudes")
    return out


def emit_record(psi, a_op, kappa, dt, dw):
    """Readout of one slice: a_k = <A> + dW / (2 sqrt(kappa) dt)."""
    kappa = strength_value(kappa, allow_zero=False)
    if dt <= 0.0:
        raise ConfigurationError([("dt", "must be positive")])
    m = expectation(a_op, psi)
    return m + dw / (2.0 * math.sqrt(kappa) * dt)


def step_linear(psi, h, a_op, kappa, hbar, dt, a_k):
    """One exact split step of the unnormalized linear evolution.

    Applies the Gaussian measurement factor exp(-kappa dt (A - a_k)^2)
    first, then the unitary factor exp(-i H dt / hbar), each exact in its
    own diagonal basis. With a real readout the measurement factor can
    only shrink the norm; equality holds exactly on an eigenstate of A
    whose eigenvalue equals ``a_k``.
    """
    kappa = strength_value(kappa)
    if not math.isfinite(a_k):
        raise InvalidStateError("record value must be finite")
    if dt <= 0.0:
        raise ConfigurationError([("dt", "must be positive")])
    if isinstance(psi, StateVector):
        damped = a_op.gaussian_factor(kappa, dt, a_k) @ psi.amplitudes if kappa > 0.0 else psi.amplitudes
        out = h.unitary_factor(dt, hbar) @ damped
        result = StateVector(out)
    elif isinstance(psi, GridWavefunction):
        if not (isinstance(h, DiagonalGridOperator) and h.space == "momentum"):
            raise ModeError("grid linear stepping needs a momentum-diagonal Hamiltonian")
        if not (isinstance(a_op, DiagonalGridOperator) and a_op.space == "position"):
            raise ModeError("grid linear stepping needs a position-diagonal observable")
        s = psi.samples
        if kappa > 0.0:
            s = np.exp(-kappa * dt * (a_op.samples - a_k) ** 2) * s
        s = np.fft.ifft(np.exp(-1j * h.samples * dt / hbar) * np.fft.fft(s, norm="ortho"), norm="ortho")
        result = psi.with_samples(s)
    else:
        raise InvalidStateError(f"unsupported state type {type(psi).__name__}")
    n2 = result.norm2()
    if not math.isfinite(n2):
        raise StepSizeError("linear step produced non-finite amplitudes")
    if 0.0 < n2 < 1e-150:
        warnings.warn(
            "linear-step norm fell below 1e-150; carry log-weights instead of raw norms",
            stacklevel=2,
        )
    return result


def record_weight(traj):
    """Squared final norm of a linear run, exp(log_weight).

    This is the probability density of the trajectory's readout sequence
    with respect to the per-slice record measure (spacing times the
    squared instrument normalization per slice; see the instrument
    module for the conversion constants).
    """
    if traj.mode != LINEAR_WITH_RECORD:
        raise ModeError("record weights exist only for linear-mode trajectories")
    return float(math.exp(traj.log_weights[-1]))


def _save_slots(n_steps, save_stride):
    slots = list(range(0, n_steps + 1, save_stride))
    if slots[-1] != n_steps:
        slots.append(n_steps)
    return slots


def run_selective(psi0, h, a_op, kappa, hbar, dt, n_steps, mode=NONLINEAR,
                  stream=None, save_stride=1):
    """Run one monitored trajectory and collect states, record, weights.

    Parameters
    ----------
    psi0 : StateVector or GridWavefunction
        Initial state; normalized internally.
    mode : str
        ``"nonlinear"`` advances the normalized state (Euler-Maruyama on
        finite dimensions, exact split factors on grids) and emits the
        readout from the running expectation. ``"linear_with_record"``
        drives the exact split factors with the same self-emitted readout
        and accumulates ln of the squared norm as the record weight.
    stream : NoiseStream
        Source of the Wiener increments, one per step. Not consumed when
        kappa is 0 and the motion is purely unitary on a grid.
    save_stride : int
        States and expectation values are kept every this many steps
        (the final step is always kept). The record keeps every step.

    Notes
    -----
    On grids both modes use the split factors, measurement first, then
    the spectral kinetic factor; the explicit Euler form of the nonlinear
    equation is unstable against high-momentum roundoff over long runs.
    The two schemes agree to first order in dt, which is exactly the
    content of replay_equivalence on finite dimensions.
    """
    if mode not in (NONLINEAR, LINEAR_WITH_RECORD):
        raise ModeError(f"unknown trajectory mode {mode!r}")
    kappa = strength_value(kappa)
    if n_steps < 0:
        raise ConfigurationError([("n_steps", "must be non-negative")])
    if save_stride < 1:
        raise ConfigurationError([("save_stride", "must be at least 1")])
    if n_steps > 0 and kappa > 0.0 and stream is None:
        raise ConfigurationError([("stream", "a noise stream is required")])
    if dt <= 0.0:
        raise ConfigurationError([("dt", "must be positive")])
    if kappa > 0.0:
        check_step_size(a_op, kappa, dt)

    grid = isinstance(psi0, GridWavefunction)
    psi = psi0.normalized()

    slots = _save_slots(n_steps, save_stride)
    states = []
    mean_a = np.empty(len(slots))
    var_a = np.empty(len(slots))
    log_weights = np.zeros(len(slots))
    times = np.array([k * dt for k in slots])
    rec_values = np.empty(n_steps) if kappa > 0.0 else np.empty(0)
    rec_times = dt * np.arange(1, n_steps + 1) if kappa > 0.0 else np.empty(0)

    if grid:
        _require_grid_ops(h, a_op)
        runner = _grid_stepper(psi, h, a_op, kappa, hbar, dt)
    else:
        runner = _matrix_stepper(psi, h, a_op, kappa, hbar, dt, mode)

    slot_iter = iter(enumerate(slots))
    next_idx, next_slot = next(slot_iter)
    logw = 0.0
    state = psi
    for k in range(n_steps + 1):
        if k == next_slot:
            states.append(state)
            mean_a[next_idx] = expectation(a_op, state)
            var_a[next_idx] = variance(a_op, state)
            log_weights[next_idx] = logw if mode == LINEAR_WITH_RECORD else 0.0
            nxt = next(slot_iter, None)
            if nxt is None:
                next_idx, next_slot = -1, -1
            else:
                next_idx, next_slot = nxt
        if k == n_steps:
            break
        dw = stream.next_increment(dt) if kappa > 0.0 else 0.0
        state, a_k, step_logw = runner(state, dw)
        logw += step_logw
        if kappa > 0.0:
            rec_values[k] = a_k

    record = MeasurementRecord(rec_times, rec_values)
    return TrajectoryResult(
        times=times,
        states=states,
        record=record,
        mean_a=mean_a,
        var_a=var_a,
        log_weights=log_weights,
        mode=mode,
        save_stride=save_stride,
    )


def _require_grid_ops(h, a_op):
    if not (isinstance(h, DiagonalGridOperator) and h.space == "momentum"):
        raise ModeError("grid trajectories need a momentum-diagonal Hamiltonian")
    if not (isinstance(a_op, DiagonalGridOperator) and a_op.space == "position"):
        raise ModeError("grid trajectories need a position-diagonal observable")


def _matrix_stepper(psi, h, a_op, kappa, hbar, dt, mode):
    hm = h.matrix
    am = a_op.matrix
    two_sqrt_k_dt = 2.0 * math.sqrt(kappa) * dt if kappa > 0.0 else None
    unitary = h.unitary_factor(dt, hbar)

    def advance(state, dw):
        psi_arr = state.amplitudes
        if kappa > 0.0:
            m = float(np.real(np.vdot(psi_arr, am @ psi_arr)))
            a_k = m + dw / two_sqrt_k_dt
        else:
            a_k = None
        if mode == NONLINEAR:
            out = _em_step_arrays(psi_arr, hm, am, kappa, hbar, dt, dw)
            n2 = float(np.real(np.vdot(out, out)))
            if n2 <= 0.0:
                raise StepSizeError("nonlinear step annihilated the state")
            return StateVector(out / math.sqrt(n2)), a_k, 0.0
        damped = a_op.gaussian_factor(kappa, dt, a_k) @ psi_arr if kappa > 0.0 else psi_arr
        out = unitary @ damped
        n2 = float(np.real(np.vdot(out, out)))
        if not (n2 > 0.0 and math.isfinite(n2)):
            raise StepSizeError("linear step annihilated the state; reduce dt")
        return StateVector(out / math.sqrt(n2)), a_k, math.log(n2)

    return advance


def _grid_stepper(psi, h, a_op, kappa, hbar, dt):
    q = a_op.samples
    dq = psi.spacing
    kin_phase = np.exp(-1j * h.samples * dt / hbar)
    two_sqrt_k_dt = 2.0 * math.sqrt(kappa) * dt if kappa > 0.0 else None

    def advance(state, dw):
        s = state.samples
        if kappa > 0.0:
            w = np.abs(s) ** 2
            m = float((q * w).sum() / w.sum())
            a_k = m + dw / two_sqrt_k_dt
            s = np.exp(-kappa * dt * (q - a_k) ** 2) * s
        else:
            a_k = None
        s = np.fft.ifft(kin_phase * np.fft.fft(s, norm="ortho"), norm="ortho")
        n2 = float(dq * np.real(np.vdot(s, s)))
        if not (n2 > 0.0 and math.isfinite(n2)):
            raise StepSizeError("grid step annihilated the state; reduce dt")
        out = state.with_samples(s / math.sqrt(n2))
        return out, a_k, math.log(n2)

    return advance


def replay_equivalence(psi0, h, a_op, kappa, hbar, dt, n_steps, stream):
    """Infidelity between a nonlinear run and its linear replay.

    Runs the nonlinear mode, captures its readout record, replays the
    record through step_linear from the same initial state, and returns
    1 - fidelity of the two final states. Averaged over trajectories this
    shrinks linearly with dt, which is the measured sense in which the
    two pictures are the same process.
    """
    kappa = strength_value(kappa, allow_zero=False)
    traj = run_selective(
        psi0, h, a_op, kappa, hbar, dt, n_steps,
        mode=NONLINEAR, stream=stream, save_stride=max(n_steps, 1),
    )
    psi = psi0.normalized()
    for a_k in traj.record.values:
        psi = step_linear(psi, h, a_op, kappa, hbar, dt, a_k)
        psi = psi.normalized()
    return 1.0 - fidelity(traj.final_state, psi)


def _em_batch_step(psis, hm, am, kappa, hbar, dt, dws, renorm):
    """Vectorized Euler-Maruyama update on a (B, d) block of amplitudes.

    Expectation values are always taken on the normalized rows, so the
    raw (renorm=False) variant realizes the same equation with the norm
    left free. Returns (updated block, per-row <A> before the step).
    """
    ap = psis @ am.T
    n2 = np.einsum("bi,bi->b", psis.conj(), psis).real
    m = np.einsum("bi,bi->b", psis.conj(), ap).real / n2
    cp = ap - m[:, None] * psis
    out = psis + dt * ((-1j / hbar) * (psis @ hm.T) - (0.5 * kappa) * ((cp @ am.T) - m[:, None] * cp))
    if kappa > 0.0:
        out = out + (math.sqrt(kappa) * dws)[:, None] * cp
    if renorm:
        out = out / np.sqrt(np.einsum("bi,bi->b", out.conj(), out).real)[:, None]
    return out, m
