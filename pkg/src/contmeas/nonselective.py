"""Record-averaged dynamics as a density-matrix master equation.

Averaging one Gaussian measurement slice over its readout multiplies each
coherence in the eigenbasis of A by exp(-(kappa dt / 2)(a_m - a_n)^2).
Expanding that factor to first order in dt gives the continuous generator

    d rho / dt = -(i/hbar) [H, rho] - (kappa/2) [A, [A, rho]],

so the kappa/2 in front of the double commutator is fixed by the
instrument average, not by convention (docs/master_equation.md carries
the four-line derivation). The equation is an ordinary linear ODE and is
integrated with a classical fixed-step 4th-order scheme; it doubles as
the ensemble-average oracle for the stochastic trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionMismatchError, StepSizeError
from .hilbert import DensityMatrix, HermitianOperator, double_commutator
from .unraveling import strength_value

GENERATOR_STEP_LIMIT = 0.1


def _spectral_norm(op):
    w, _ = op.eigensystem()
    return float(max(abs(w[0]), abs(w[-1])))


@dataclass(frozen=True)
class MasterEqConfig:
    """Operators and step size of one master-equation integration.

    The constructor refuses a step size with ``bound * dt >= 0.1`` where
    ``bound = 2 |H| / hbar + 2 kappa |A|^2`` bounds the generator norm,
    keeping the fixed-step integration inside its accuracy budget.
    """

    h: HermitianOperator
    a_op: HermitianOperator
    kappa: float
    hbar: float
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", strength_value(self.kappa))
        if self.hbar <= 0.0 or not math.isfinite(self.hbar):
            raise ConfigurationError([("hbar", "must be a positive finite number")])
        if self.dt <= 0.0 or not math.isfinite(self.dt):
            raise ConfigurationError([("dt_me", "must be a positive finite number")])
        if self.h.dim != self.a_op.dim:
            raise DimensionMismatchError("Hamiltonian and observable dimensions differ")
        if self.generator_bound() * self.dt >= GENERATOR_STEP_LIMIT:
            raise ConfigurationError(
                [("dt_me",
                  f"generator bound {self.generator_bound():.3g} times dt "
                  f"{self.dt:.3g} reaches {GENERATOR_STEP_LIMIT}; reduce the step")]
            )

    def generator_bound(self):
        return 2.0 * _spectral_norm(self.h) / self.hbar + 2.0 * self.kappa * _spectral_norm(self.a_op) ** 2

    @classmethod
    def with_auto_dt(cls, h, a_op, kappa, hbar, target=0.02):
        """Config with dt chosen as target / generator_bound."""
        probe = 2.0 * _spectral_norm(h) / hbar + 2.0 * strength_value(kappa) * _spectral_norm(a_op) ** 2
        dt = target / probe if probe > 0.0 else target
        return cls(h, a_op, kappa, hbar, dt)


def me_derivative(rho, cfg):
    """Right-hand side -(i/hbar)[H, rho] - (kappa/2)[A, [A, rho]].

    Trace-free and Hermiticity-preserving by construction; accepts a
    DensityMatrix or a raw matrix and returns a raw matrix.
    """
    r = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if r.shape != cfg.h.matrix.shape:
        raise DimensionMismatchError("density matrix does not match the configured operators")
    comm = cfg.h.matrix @ r - r @ cfg.h.matrix
    return (-1j / cfg.hbar) * comm - (0.5 * cfg.kappa) * double_commutator(cfg.a_op, r)


@dataclass
class MasterEqResult:
    """Sampled solution rho(t_k) of one master-equation run."""

    times: np.ndarray
    states: list

    @property
    def final_state(self):
        return self.states[-1]


def run_me(rho0, cfg, t_final, save_stride=1):
    """Integrate the master equation to t_final with fixed-step RK4.

    ``t_final`` must be a whole number of steps. Every saved sample is
    validated: trace within 1e-9 of 1 and smallest eigenvalue above
    -1e-8, else the run aborts with a step-size error.
    """
    if t_final <= 0.0:
        raise ConfigurationError([("t_final", "must be positive")])
    n_steps = int(round(t_final / cfg.dt))
    if n_steps < 1 or abs(n_steps * cfg.dt - t_final) > 1e-9 * max(1.0, abs(t_final)):
        raise ConfigurationError(
            [("t_final", f"must be a whole number of dt_me={cfg.dt} steps")]
        )
    if save_stride < 1:
        raise ConfigurationError([("save_stride", "must be at least 1")])

    if isinstance(rho0, DensityMatrix):
        rho = np.array(rho0.matrix, dtype=np.complex128)
    else:
        rho = np.array(rho0, dtype=np.complex128)
        DensityMatrix(rho)  # reject invalid raw input up front

    slots = list(range(0, n_steps + 1, save_stride))
    if slots[-1] != n_steps:
        slots.append(n_steps)
    times = np.array([k * cfg.dt for k in slots])

    states = []
    slot_iter = iter(slots)
    next_slot = next(slot_iter)
    dt = cfg.dt
    for k in range(n_steps + 1):
        if k == next_slot:
            states.append(_validated_sample(rho, k, dt))
            next_slot = next(slot_iter, -1)
        if k == n_steps:
            break
        k1 = me_derivative(rho, cfg)
        k2 = me_derivative(rho + 0.5 * dt * k1, cfg)
        k3 = me_derivative(rho + 0.5 * dt * k2, cfg)
        k4 = me_derivative(rho + dt * k3, cfg)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return MasterEqResult(times=times, states=states)


def _validated_sample(rho, step, dt):
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > 1e-9:
        raise StepSizeError(
            f"trace drifted to {tr:.12g} at t={step * dt:.6g}; reduce dt_me"
        )
    smallest = float(np.linalg.eigvalsh(rho)[0])
    if smallest < -1e-8:
        raise StepSizeError(
            f"negative eigenvalue {smallest:.3e} at t={step * dt:.6g}; reduce dt_me"
        )
    return DensityMatrix(rho, check=False)


@dataclass
class EnsembleDensity:
    """Trajectory-averaged density matrix series with standard errors.

    ``rho_se`` holds, per entry, sqrt((Var(Re) + Var(Im)) / N), the
    standard error of the complex sample mean.
    """

    times: np.ndarray
    rho_mean: np.ndarray
    rho_se: np.ndarray
    n_trajectories: int

    def state(self, index):
        return DensityMatrix(self.rho_mean[index])


def ensemble_average(trajectories):
    """Average pure-state projectors over a set of trajectories.

    All trajectories must share the same saved time grid. Returns the
    per-time mean of |psi><psi| with a per-entry standard error.
    """
    if len(trajectories) < 2:
        raise ConfigurationError([("trajectories", "ensemble averaging needs at least 2")])
    times = trajectories[0].times
    for traj in trajectories[1:]:
        if traj.times.shape != times.shape or not np.allclose(traj.times, times):
            raise DimensionMismatchError("trajectories are saved on different time grids")
    n = len(trajectories)
    d = trajectories[0].states[0].dim
    t_count = times.size
    mean = np.zeros((t_count, d, d), dtype=np.complex128)
    sq_re = np.zeros((t_count, d, d))
    sq_im = np.zeros((t_count, d, d))
    for traj in trajectories:
        for t_idx, state in enumerate(traj.states):
            c = state.amplitudes
            dyad = np.outer(c, c.conj()) / state.norm2()
            mean[t_idx] += dyad
            sq_re[t_idx] += dyad.real**2
            sq_im[t_idx] += dyad.imag**2
    mean /= n
    var_re = np.maximum(sq_re / n - mean.real**2, 0.0) * (n / (n - 1))
    var_im = np.maximum(sq_im / n - mean.imag**2, 0.0) * (n / (n - 1))
    se = np.sqrt((var_re + var_im) / n)
    return EnsembleDensity(times=times, rho_mean=mean, rho_se=se, n_trajectories=n)
