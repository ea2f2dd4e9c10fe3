"""Gaussian-moment oracle for position monitoring of a free particle.

With H = p^2/2m and the position observable monitored at strength kappa,
a Gaussian pure state stays Gaussian, so five numbers evolve: the means
of q and p and the covariances s_qq, s_qp, s_pp. Substituting the ansatz
into the nonlinear stochastic wave equation gives (docs/moment_equations.md
carries the derivation)

    d<q>  = (<p>/m) dt + 2 sqrt(kappa) s_qq dW
    d<p>  =              2 sqrt(kappa) s_qp dW
    ds_qq/dt = 2 s_qp / m        - 4 kappa s_qq^2
    ds_qp/dt = s_pp / m          - 4 kappa s_qq s_qp
    ds_pp/dt = kappa hbar^2      - 4 kappa s_qp^2

The covariance flow is deterministic (the same for every noise
realization) and conserves the purity combination
s_qq s_pp - s_qp^2 = hbar^2/4. Its fixed point is the localized steady
state; it is found numerically by root-finding here, never taken from a
remembered formula, and pinned by the kappa = 0 free-spreading closed
form plus the fixed-point persistence checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, OracleConvergenceError, StepSizeError
from .hilbert import (
    GridWavefunction,
    gaussian_packet,
    kinetic_operator,
    position_operator,
)
from .noise import NoiseStream
from .unraveling import LINEAR_WITH_RECORD, NONLINEAR, run_selective

HEISENBERG_SLACK = 1e-9


@dataclass(frozen=True)
class GaussianState:
    """First and second moments of a Gaussian wave packet.

    ``cov_qp`` is the symmetrized covariance <{dq, dp}>/2. Both variances
    must be positive; the Heisenberg floor is checked against hbar where
    the dynamics needs it (the dataclass itself does not know hbar).
    """

    mean_q: float
    mean_p: float
    var_q: float
    cov_qp: float
    var_p: float

    def __post_init__(self):
        vals = (self.mean_q, self.mean_p, self.var_q, self.cov_qp, self.var_p)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigurationError([("gaussian_state", "moments must be finite")])
        if self.var_q <= 0.0 or self.var_p <= 0.0:
            raise ConfigurationError([("gaussian_state", "variances must be positive")])

    def covariance_det(self):
        return self.var_q * self.var_p - self.cov_qp**2

    def purity_defect(self, hbar):
        """Deviation of the covariance determinant from the pure value."""
        return self.covariance_det() - 0.25 * hbar**2


@dataclass(frozen=True)
class FreeParticleParams:
    """Mass, measurement strength and hbar of one monitored free particle.

    kappa = 0 is allowed and means free motion (needed for the
    free-spreading closed-form checks); the localized steady state only
    exists for kappa > 0.
    """

    mass: float
    kappa: float
    hbar: float = 1.0

    def __post_init__(self):
        if not (self.mass > 0.0 and math.isfinite(self.mass)):
            raise ConfigurationError([("mass", "must be a positive finite number")])
        if not (self.kappa >= 0.0 and math.isfinite(self.kappa)):
            raise ConfigurationError([("kappa", "must be non-negative and finite")])
        if not (self.hbar > 0.0 and math.isfinite(self.hbar)):
            raise ConfigurationError([("hbar", "must be a positive finite number")])


def covariance_flow(var_q, cov_qp, var_p, params):
    """Time derivatives (ds_qq, ds_qp, ds_pp) of the covariance triple."""
    m, k, hb = params.mass, params.kappa, params.hbar
    return (
        2.0 * cov_qp / m - 4.0 * k * var_q * var_q,
        var_p / m - 4.0 * k * var_q * cov_qp,
        k * hb * hb - 4.0 * k * cov_qp * cov_qp,
    )


def _check_heisenberg(state, params):
    if state.covariance_det() < 0.25 * params.hbar**2 - HEISENBERG_SLACK:
        raise ConfigurationError(
            [("gaussian_state",
              f"covariance determinant {state.covariance_det():.6g} violates "
              f"the Heisenberg floor for hbar={params.hbar}")]
        )


def moment_step(state, params, dt, dw):
    """Advance the Gaussian moments by one step.

    The deterministic covariance flow is integrated with one classical
    4th-order substep (it is a smooth ODE, and the purity combination is
    conserved far below the 1e-8 contract); the means take their
    stochastic update with the noise coefficients evaluated at the start
    of the step, matching the convention of the wave-equation stepping.
    """
    _check_heisenberg(state, params)
    if dt <= 0.0 or not math.isfinite(dt):
        raise ConfigurationError([("dt", "must be a positive finite number")])
    m, k = params.mass, params.kappa

    c0 = (state.var_q, state.cov_qp, state.var_p)
    k1 = covariance_flow(*c0, params)
    k2 = covariance_flow(*(c0[i] + 0.5 * dt * k1[i] for i in range(3)), params)
    k3 = covariance_flow(*(c0[i] + 0.5 * dt * k2[i] for i in range(3)), params)
    k4 = covariance_flow(*(c0[i] + dt * k3[i] for i in range(3)), params)
    var_q, cov_qp, var_p = (
        c0[i] + (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(3)
    )

    sqrt_k = math.sqrt(k)
    mean_q = state.mean_q + (state.mean_p / m) * dt + 2.0 * sqrt_k * state.var_q * dw
    mean_p = state.mean_p + 2.0 * sqrt_k * state.cov_qp * dw

    out = (mean_q, mean_p, var_q, cov_qp, var_p)
    if not all(math.isfinite(v) for v in out):
        raise StepSizeError("moment update produced non-finite values")
    return GaussianState(*out)


def free_spreading_var_q(state, params, t):
    """Closed-form Var(q)(t) of free motion (kappa = 0)."""
    m = params.mass
    return state.var_q + (2.0 * t / m) * state.cov_qp + (t * t / (m * m)) * state.var_p


def stationary_covariance(params):
    """Localized steady-state covariances, by numeric root-finding.

    Solves the covariance flow for its fixed point in nondimensional
    variables (lengths in sqrt(hbar/(m kappa)), mixed moments in hbar,
    momenta in sqrt(hbar^3 m kappa)), so the 1e-12 residual contract is
    meaningful at any parameter values. Returns (s_qq*, s_qp*, s_pp*)
    with positive variances, saturated purity and positive q-p
    correlation; anything else is a convergence failure.
    """
    if params.kappa <= 0.0:
        raise ConfigurationError([("kappa", "the localized steady state needs kappa > 0")])
    s_qq = math.sqrt(params.hbar / (params.mass * params.kappa))
    s_qp = params.hbar
    s_pp = math.sqrt(params.hbar**3 * params.mass * params.kappa)
    unit = FreeParticleParams(mass=1.0, kappa=1.0, hbar=1.0)

    def residual(x):
        return np.array(covariance_flow(x[0], x[1], x[2], unit))

    sol = optimize.root(residual, x0=np.array([1.0, 0.5, 1.0]), method="hybr", tol=1e-14)
    res = float(np.abs(residual(sol.x)).max())
    if not sol.success or res >= 1e-12:
        raise OracleConvergenceError(
            f"covariance fixed-point search did not converge (residual {res:.3e})"
        )
    x_qq, x_qp, x_pp = (float(v) for v in sol.x)
    det_defect = abs(x_qq * x_pp - x_qp**2 - 0.25)
    if x_qq <= 0.0 or x_pp <= 0.0 or x_qp <= 0.0 or det_defect >= 1e-10:
        raise OracleConvergenceError(
            "covariance fixed point is unphysical "
            f"(qq={x_qq:.6g}, qp={x_qp:.6g}, pp={x_pp:.6g}, purity defect {det_defect:.3e})"
        )
    return (x_qq * s_qq, x_qp * s_qp, x_pp * s_pp)


@dataclass
class OracleTrajectory:
    """Moment series of one noise realization of the oracle."""

    times: np.ndarray
    mean_q: np.ndarray
    mean_p: np.ndarray
    var_q: np.ndarray
    cov_qp: np.ndarray
    var_p: np.ndarray

    def state(self, index):
        return GaussianState(
            self.mean_q[index], self.mean_p[index],
            self.var_q[index], self.cov_qp[index], self.var_p[index],
        )


def run_oracle(state0, params, dt, n_steps, stream, save_stride=1):
    """Iterate moment_step, consuming one increment per step.

    Uses the same (seed, stream, counter) discipline as the grid
    trajectories, so a grid run and an oracle run handed streams with the
    same address see the identical noise path.
    """
    if n_steps < 0:
        raise ConfigurationError([("n_steps", "must be non-negative")])
    if save_stride < 1:
        raise ConfigurationError([("save_stride", "must be at least 1")])
    slots = list(range(0, n_steps + 1, save_stride))
    if slots[-1] != n_steps:
        slots.append(n_steps)
    arrays = {name: np.empty(len(slots)) for name in
              ("mean_q", "mean_p", "var_q", "cov_qp", "var_p")}
    times = np.array([k * dt for k in slots])

    state = state0
    slot_iter = iter(enumerate(slots))
    next_idx, next_slot = next(slot_iter)
    for k in range(n_steps + 1):
        if k == next_slot:
            arrays["mean_q"][next_idx] = state.mean_q
            arrays["mean_p"][next_idx] = state.mean_p
            arrays["var_q"][next_idx] = state.var_q
            arrays["cov_qp"][next_idx] = state.cov_qp
            arrays["var_p"][next_idx] = state.var_p
            nxt = next(slot_iter, None)
            next_idx, next_slot = nxt if nxt is not None else (-1, -1)
        if k == n_steps:
            break
        dw = stream.next_increment(dt) if params.kappa > 0.0 else 0.0
        state = moment_step(state, params, dt, dw)
    return OracleTrajectory(times=times, **arrays)


@dataclass(frozen=True)
class GridConfig:
    """Periodic grid for the free-particle runs: n points over [-box/2, box/2)."""

    n_points: int
    box: float

    def __post_init__(self):
        n = self.n_points
        if n < 2 or (n & (n - 1)) != 0:
            raise ConfigurationError([("grid.points", "must be a power of two >= 2")])
        if not (self.box > 0.0 and math.isfinite(self.box)):
            raise ConfigurationError([("grid.box", "must be a positive finite number")])

    @property
    def spacing(self):
        return self.box / self.n_points

    @property
    def q_min(self):
        return -0.5 * self.box

    @property
    def q_max(self):
        return 0.5 * self.box


def check_grid_resolution(grid, params):
    """Refuse grids that cannot resolve the localized steady state.

    The spacing must be at most an eighth of the stationary width and the
    box at least sixteen stationary widths, so the packet keeps eight
    standard deviations of clearance from the periodic seam.
    """
    s_qq, _, _ = stationary_covariance(params)
    sigma = math.sqrt(s_qq)
    problems = []
    if grid.spacing > sigma / 8.0:
        problems.append(
            ("grid.points",
             f"spacing {grid.spacing:.4g} exceeds an eighth of the stationary width {sigma:.4g}")
        )
    if grid.box < 16.0 * sigma:
        problems.append(
            ("grid.box", f"box {grid.box:.4g} is below 16 stationary widths {16 * sigma:.4g}")
        )
    if problems:
        raise ConfigurationError(problems)
    return sigma


@dataclass
class GridMomentSeries:
    """Position and momentum moments measured on saved grid states."""

    times: np.ndarray
    mean_q: np.ndarray
    mean_p: np.ndarray
    var_q: np.ndarray
    var_p: np.ndarray


def grid_moments(traj, mass, hbar):
    """Extract moment series from a saved grid trajectory."""
    first = traj.states[0]
    q = first.positions
    p = hbar * first.wavenumbers()
    out = GridMomentSeries(
        times=traj.times,
        mean_q=np.empty(traj.times.size),
        mean_p=np.empty(traj.times.size),
        var_q=np.empty(traj.times.size),
        var_p=np.empty(traj.times.size),
    )
    for idx, state in enumerate(traj.states):
        w = np.abs(state.samples) ** 2
        w = w / w.sum()
        mq = float((q * w).sum())
        out.mean_q[idx] = mq
        out.var_q[idx] = float((w * (q - mq) ** 2).sum())
        wp = state.momentum_density()
        mp = float((p * wp).sum())
        out.mean_p[idx] = mp
        out.var_p[idx] = float((wp * (p - mp) ** 2).sum())
    return out


@dataclass
class SeedComparison:
    """Grid-versus-oracle moment series for one seed."""

    seed: int
    times: np.ndarray
    grid: GridMomentSeries
    oracle: OracleTrajectory

    def late_time_var_q_rel_dev(self, reference):
        return abs(self.grid.var_q[-1] - reference) / reference


@dataclass
class FreeParticleReport:
    """Everything the free-particle cross-validation produced."""

    params: FreeParticleParams
    grid_config: GridConfig
    stationary: tuple
    comparisons: list
    oracle_purity_defect_max: float

    def worst_late_time_rel_dev(self):
        s_qq = self.stationary[0]
        return max(c.late_time_var_q_rel_dev(s_qq) for c in self.comparisons)


def grid_vs_oracle(params, grid, state0, dt, n_steps, seeds, master_seed=0,
                   save_stride=10):
    """Run matched-noise grid and oracle trajectories and compare moments.

    For every seed the grid unraveling (split-step spectral kinetic factor
    plus position-diagonal measurement factors) and the moment oracle
    consume the identical increment sequence, so the comparison is
    path-by-path, not statistical. Also tracks the worst oracle purity
    defect across all seeds and steps.
    """
    if params.kappa <= 0.0:
        raise ConfigurationError([("kappa", "grid_vs_oracle needs kappa > 0")])
    check_grid_resolution(grid, params)
    stationary = stationary_covariance(params)

    psi0 = gaussian_packet(
        grid.n_points, grid.q_min, grid.q_max,
        state0.mean_q, state0.mean_p, state0.var_q, state0.cov_qp, params.hbar,
    )
    h = kinetic_operator(psi0, params.mass, params.hbar)
    a_op = position_operator(psi0)

    comparisons = []
    purity_defect_max = 0.0
    for seed in seeds:
        grid_stream = NoiseStream(master_seed, stream_id=seed)
        oracle_stream = NoiseStream(master_seed, stream_id=seed)
        traj = run_selective(
            psi0, h, a_op, params.kappa, params.hbar, dt, n_steps,
            mode=NONLINEAR, stream=grid_stream, save_stride=save_stride,
        )
        oracle = run_oracle(state0, params, dt, n_steps, oracle_stream, save_stride)
        moments = grid_moments(traj, params.mass, params.hbar)
        defect = np.abs(
            oracle.var_q * oracle.var_p - oracle.cov_qp**2 - 0.25 * params.hbar**2
        ).max()
        purity_defect_max = max(purity_defect_max, float(defect))
        comparisons.append(
            SeedComparison(seed=seed, times=traj.times, grid=moments, oracle=oracle)
        )
    return FreeParticleReport(
        params=params,
        grid_config=grid,
        stationary=stationary,
        comparisons=comparisons,
        oracle_purity_defect_max=purity_defect_max,
    )


def free_spreading_check(params, grid, state0, dt, n_steps, save_stride=10):
    """Max relative deviation of grid Var(q)(t) from the closed form at kappa=0.

    The split-step propagation of a free particle is exact in time, so
    the deviation measures only the grid representation of the packet.
    """
    free = FreeParticleParams(mass=params.mass, kappa=0.0, hbar=params.hbar)
    psi0 = gaussian_packet(
        grid.n_points, grid.q_min, grid.q_max,
        state0.mean_q, state0.mean_p, state0.var_q, state0.cov_qp, free.hbar,
    )
    h = kinetic_operator(psi0, free.mass, free.hbar)
    a_op = position_operator(psi0)
    traj = run_selective(
        psi0, h, a_op, 0.0, free.hbar, dt, n_steps,
        mode=NONLINEAR, stream=None, save_stride=save_stride,
    )
    moments = grid_moments(traj, free.mass, free.hbar)
    worst = 0.0
    for idx, t in enumerate(moments.times):
        exact = free_spreading_var_q(state0, free, float(t))
        worst = max(worst, abs(moments.var_q[idx] - exact) / exact)
    return worst
