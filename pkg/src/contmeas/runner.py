"""Experiment orchestration: ensembles, dispatch, reproducible artifacts.

Ensembles are reduced in fixed blocks of 500 trajectories. Trajectory i
always draws from the noise stream addressed (master_seed, i), blocks are
always [0,500), [500,1000), ..., and partial sums are combined in block
order, so the output bytes do not depend on how many worker processes the
blocks were farmed out to. Wall-clock data (timestamps) is confined to
manifest.json.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import TRAJECTORY_MODES, GridSystem, LatticeSpec, MatrixSystem, config_echo
from .errors import ConfigurationError
from .freeparticle import grid_vs_oracle
from .hilbert import (
    DensityMatrix,
    gaussian_packet,
    kinetic_operator,
    position_operator,
    trace_distance,
)
from .instrument import (
    GaussianInstrument,
    RecordLattice,
    completeness_defect,
    enumerate_record_distribution,
)
from .noise import NoiseStream
from .nonselective import MasterEqConfig, run_me
from .output import (
    read_csv,
    run_header,
    utc_now,
    write_csv,
    write_json,
    write_manifest,
)
from .unraveling import _em_batch_step, _save_slots, run_selective

BLOCK = 500
_CHUNK = 2048
_RECORD_TABLE_CAP = 100_000


@dataclass
class EnsembleStats:
    """Blockwise-reduced statistics of a trajectory ensemble.

    ``rho_mean`` is the average dyad of the normalized states at the
    saved times; ``rho_se`` the per-entry standard error combining real
    and imaginary scatter. ``norm2_*`` track the squared norm of the raw
    (unnormalized) states and are the martingale statistic when the
    ensemble is run with ``renorm=False``.
    """

    times: np.ndarray
    rho_mean: np.ndarray
    rho_se: np.ndarray
    mean_a: np.ndarray
    mean_a_se: np.ndarray
    mean_var_a: np.ndarray
    norm2_mean: np.ndarray
    norm2_se: np.ndarray
    final_mean_a: np.ndarray
    n_trajectories: int
    renormalized: bool

    def density(self, index):
        return DensityMatrix(self.rho_mean[index], check=False)


def _ensemble_block(task):
    """Partial sums over one fixed block of trajectories (picklable worker)."""
    (master_seed, start, size, psi0, hm, am, kappa, hbar, dt,
     n_steps, slots, renorm) = task
    d = psi0.size
    am2 = am @ am
    psis = np.tile(psi0, (size, 1))
    streams = [NoiseStream(master_seed, stream_id=start + j) for j in range(size)]
    slot_pos = {step: i for i, step in enumerate(slots)}
    n_slots = len(slots)

    rho_sum = np.zeros((n_slots, d, d), dtype=np.complex128)
    re2_sum = np.zeros((n_slots, d, d))
    im2_sum = np.zeros((n_slots, d, d))
    mean_a_sum = np.zeros(n_slots)
    mean_a_sq = np.zeros(n_slots)
    var_a_sum = np.zeros(n_slots)
    norm2_sum = np.zeros(n_slots)
    norm2_sq = np.zeros(n_slots)
    final_a = np.zeros(size)

    dws = None
    chunk_base = 0
    for k in range(n_steps + 1):
        idx = slot_pos.get(k)
        if idx is not None:
            n2 = np.einsum("bi,bi->b", psis.conj(), psis).real
            psin = psis / np.sqrt(n2)[:, None]
            dy = psin[:, :, None] * psin[:, None, :].conj()
            rho_sum[idx] = dy.sum(axis=0)
            re2_sum[idx] = (dy.real**2).sum(axis=0)
            im2_sum[idx] = (dy.imag**2).sum(axis=0)
            m = np.einsum("bi,bi->b", psin.conj(), psin @ am.T).real
            a2 = np.einsum("bi,bi->b", psin.conj(), psin @ am2.T).real
            mean_a_sum[idx] = m.sum()
            mean_a_sq[idx] = (m**2).sum()
            var_a_sum[idx] = (a2 - m**2).sum()
            norm2_sum[idx] = n2.sum()
            norm2_sq[idx] = (n2**2).sum()
            if k == n_steps:
                final_a[:] = m
        if k == n_steps:
            break
        if dws is None or k - chunk_base >= dws.shape[1]:
            chunk_base = k
            n_new = min(_CHUNK, n_steps - k)
            dws = np.stack([s.increments(n_new, dt) for s in streams])
        psis, _ = _em_batch_step(psis, hm, am, kappa, hbar, dt,
                                 dws[:, k - chunk_base], renorm)
    return (rho_sum, re2_sum, im2_sum, mean_a_sum, mean_a_sq, var_a_sum,
            norm2_sum, norm2_sq, final_a)


def run_ensemble(psi0, h, a_op, kappa, hbar, dt, n_steps, n_trajectories,
                 master_seed, save_stride=1, jobs=1, renorm=True):
    """Run an ensemble of nonlinear trajectories and reduce their statistics.

    The reduction is independent of ``jobs``: trajectory i is driven by
    stream (master_seed, i), the block layout is fixed, and partials are
    combined in block order.
    """
    if n_trajectories < 2:
        raise ConfigurationError([("n_trajectories", "an ensemble needs at least 2")])
    if jobs < 1:
        raise ConfigurationError([("jobs", "must be at least 1")])
    psi = psi0.normalized().amplitudes
    slots = _save_slots(n_steps, save_stride)
    tasks = []
    start = 0
    while start < n_trajectories:
        size = min(BLOCK, n_trajectories - start)
        tasks.append((master_seed, start, size, psi, h.matrix, a_op.matrix,
                      float(kappa), float(hbar), float(dt), int(n_steps),
                      tuple(slots), bool(renorm)))
        start += size

    if jobs == 1 or len(tasks) == 1:
        partials = [_ensemble_block(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_ensemble_block, t) for t in tasks]
            partials = [f.result() for f in futures]

    n = n_trajectories
    acc = [np.zeros_like(p) for p in partials[0][:8]]
    for part in partials:
        for i in range(8):
            acc[i] += part[i]
    (rho_sum, re2_sum, im2_sum, mean_a_sum, mean_a_sq, var_a_sum,
     norm2_sum, norm2_sq) = acc
    final_a = np.concatenate([p[8] for p in partials])

    bessel = n / (n - 1)
    rho_mean = rho_sum / n
    var_re = np.clip((re2_sum / n - rho_mean.real**2) * bessel, 0.0, None)
    var_im = np.clip((im2_sum / n - rho_mean.imag**2) * bessel, 0.0, None)
    rho_se = np.sqrt((var_re + var_im) / n)
    mean_a = mean_a_sum / n
    mean_a_se = np.sqrt(np.clip((mean_a_sq / n - mean_a**2) * bessel, 0.0, None) / n)
    norm2_mean = norm2_sum / n
    norm2_se = np.sqrt(np.clip((norm2_sq / n - norm2_mean**2) * bessel, 0.0, None) / n)

    return EnsembleStats(
        times=np.array([k * dt for k in slots]),
        rho_mean=rho_mean,
        rho_se=rho_se,
        mean_a=mean_a,
        mean_a_se=mean_a_se,
        mean_var_a=var_a_sum / n,
        norm2_mean=norm2_mean,
        norm2_se=norm2_se,
        final_mean_a=final_a,
        n_trajectories=n,
        renormalized=renorm,
    )


def _matrix_objects(cfg):
    if not isinstance(cfg.system, MatrixSystem):
        raise ConfigurationError([("system", f"mode {cfg.mode} needs a finite-dimensional system")])
    s = cfg.system
    return s.initial_state, s.hamiltonian, s.observable


def _grid_objects(cfg):
    if not isinstance(cfg.system, GridSystem):
        raise ConfigurationError([("system", f"mode {cfg.mode} needs a grid system")])
    s = cfg.system
    g = s.grid
    packet = s.initial_state
    psi0 = gaussian_packet(
        g.n_points, g.q_min, g.q_max,
        packet.mean_q, packet.mean_p, packet.var_q, packet.cov_qp, cfg.hbar,
    )
    h = kinetic_operator(psi0, s.mass, cfg.hbar)
    a_op = position_operator(psi0)
    return psi0, h, a_op


def _density_columns(d):
    cols = ["step", "t"]
    for i in range(d):
        for j in range(d):
            cols += [f"rho_re_{i}_{j}", f"rho_im_{i}_{j}"]
    return cols


def _density_rows(slots, times, rhos, ses=None):
    rows = []
    for idx, step in enumerate(slots):
        row = [step, float(times[idx])]
        rho = rhos[idx]
        for i in range(rho.shape[0]):
            for j in range(rho.shape[1]):
                row += [float(rho[i, j].real), float(rho[i, j].imag)]
        if ses is not None:
            se = ses[idx]
            row += [float(se[i, j]) for i in range(se.shape[0]) for j in range(se.shape[1])]
        rows.append(row)
    return rows


def read_density_csv(path):
    """Read a density CSV back into (steps, times, rho array of (S, d, d))."""
    _, columns, data = read_csv(path)
    n_entries = sum(1 for c in columns if c.startswith("rho_re_"))
    d = math.isqrt(n_entries)
    if d * d != n_entries or n_entries == 0:
        raise ConfigurationError([("density_csv", f"{path} has no square rho block")])
    steps = data[:, 0].astype(int)
    times = data[:, 1]
    pairs = data[:, 2:2 + 2 * d * d]
    rho = pairs[:, 0::2] + 1j * pairs[:, 1::2]
    return steps, times, rho.reshape(-1, d, d)


def run_trajectory_experiment(cfg, out_dir, filename="trajectory.csv"):
    """One monitored trajectory to trajectory.csv (columns fixed by contract)."""
    if cfg.is_grid:
        psi0, h, a_op = _grid_objects(cfg)
    else:
        psi0, h, a_op = _matrix_objects(cfg)
    traj = run_selective(
        psi0, h, a_op, cfg.kappa, cfg.hbar, cfg.dt, cfg.n_steps,
        mode=TRAJECTORY_MODES[cfg.mode], stream=NoiseStream(cfg.master_seed, stream_id=0),
        save_stride=cfg.save_stride,
    )
    slots = _save_slots(cfg.n_steps, cfg.save_stride)
    linear = cfg.mode == "linear-replay"
    rows = []
    for idx, step in enumerate(slots):
        a_k = float(traj.record.values[step - 1]) if step > 0 else float("nan")
        logw = float(traj.log_weights[idx])
        rows.append([
            step, float(traj.times[idx]), a_k,
            float(traj.mean_a[idx]), float(traj.var_a[idx]),
            math.exp(logw) if linear else 1.0, logw,
        ])
    path = os.path.join(out_dir, filename)
    header = run_header(cfg.mode, cfg.master_seed,
                        {"kappa": cfg.kappa, "dt": cfg.dt, "n_steps": cfg.n_steps})
    write_csv(path, ["step", "t", "a", "mean_A", "var_A", "norm2", "log_weight"],
              rows, header)
    return [path]


def run_ensemble_experiment(cfg, out_dir, jobs=1):
    """Ensemble statistics to ensemble_mean.csv and ensemble_density.csv."""
    if cfg.mode != "nonlinear":
        raise ConfigurationError(
            [("mode", "ensembles run in nonlinear mode; use n_trajectories=1 for linear-replay")]
        )
    psi0, h, a_op = _matrix_objects(cfg)
    stats = run_ensemble(
        psi0, h, a_op, cfg.kappa, cfg.hbar, cfg.dt, cfg.n_steps,
        cfg.n_trajectories, cfg.master_seed, save_stride=cfg.save_stride, jobs=jobs,
    )
    slots = _save_slots(cfg.n_steps, cfg.save_stride)
    header = run_header(cfg.mode, cfg.master_seed,
                        {"kappa": cfg.kappa, "dt": cfg.dt,
                         "n_trajectories": cfg.n_trajectories})

    mean_path = os.path.join(out_dir, "ensemble_mean.csv")
    rows = [
        [step, float(stats.times[i]), float(stats.mean_a[i]), float(stats.mean_a_se[i]),
         float(stats.mean_var_a[i]), float(stats.norm2_mean[i]), float(stats.norm2_se[i])]
        for i, step in enumerate(slots)
    ]
    write_csv(mean_path,
              ["step", "t", "mean_A", "se_mean_A", "mean_var_A", "norm2_mean", "se_norm2"],
              rows, header)

    dens_path = os.path.join(out_dir, "ensemble_density.csv")
    d = stats.rho_mean.shape[1]
    cols = _density_columns(d) + [f"rho_se_{i}_{j}" for i in range(d) for j in range(d)]
    write_csv(dens_path, cols,
              _density_rows(slots, stats.times, stats.rho_mean, stats.rho_se), header)
    return [mean_path, dens_path]


def run_me_experiment(cfg, out_dir):
    """Master-equation evolution to me_density.csv."""
    psi0, h, a_op = _matrix_objects(cfg)
    rho0 = DensityMatrix.from_state(psi0)
    me_cfg = MasterEqConfig(h=h, a_op=a_op, kappa=cfg.kappa, hbar=cfg.hbar, dt=cfg.dt)
    result = run_me(rho0, me_cfg, cfg.n_steps * cfg.dt, save_stride=cfg.save_stride)
    slots = _save_slots(cfg.n_steps, cfg.save_stride)
    path = os.path.join(out_dir, "me_density.csv")
    header = run_header(cfg.mode, cfg.master_seed, {"kappa": cfg.kappa, "dt": cfg.dt})
    rhos = [s.matrix for s in result.states]
    write_csv(path, _density_columns(rhos[0].shape[0]),
              _density_rows(slots, result.times, rhos), header)
    return [path]


def lattice_from_spec(spec, inst):
    """Concrete readout lattice for an instrument from a LatticeSpec request."""
    w, _ = inst.a_op.eigensystem()
    sigma = inst.readout_sigma
    lo = float(w[0]) - spec.span_sigmas * sigma
    hi = float(w[-1]) + spec.span_sigmas * sigma
    spacing = (hi - lo) / (spec.n_points - 1)
    return RecordLattice(lo, spacing, spec.n_points)


def run_enumeration_experiment(cfg, out_dir):
    """Brute-force record distribution to enumeration.json."""
    psi0, h, a_op = _matrix_objects(cfg)
    inst = GaussianInstrument(a_op=a_op, kappa=cfg.kappa, dt=cfg.dt)
    lattice = lattice_from_spec(cfg.lattice or LatticeSpec(), inst)
    result = enumerate_record_distribution(psi0, inst, h, cfg.hbar, cfg.n_steps, lattice)
    payload = {
        "header": run_header(cfg.mode, cfg.master_seed),
        "lattice": {
            "a_min": lattice.a_min,
            "spacing": lattice.spacing,
            "points": lattice.n_points,
            "span_sigmas": lattice.span_sigmas(inst),
        },
        "n_steps": cfg.n_steps,
        "kappa": cfg.kappa,
        "dt": cfg.dt,
        "completeness_defect": completeness_defect(inst, lattice),
        "total_probability": result.total_probability,
        "slice_moments": [
            dict(zip(("mean", "variance"), result.marginal_moments(i)))
            for i in range(cfg.n_steps)
        ],
    }
    size = lattice.n_points**cfg.n_steps
    if size <= _RECORD_TABLE_CAP:
        payload["records"] = [
            {"readout": list(readout), "probability": p}
            for readout, p in result.records()
        ]
    else:
        payload["records_omitted"] = (
            f"{size} sequences exceed the {_RECORD_TABLE_CAP} table cap; "
            "slice moments and marginals summarize the distribution"
        )
        payload["first_slice_marginal"] = [float(p) for p in result.marginal(0)]
    path = os.path.join(out_dir, "enumeration.json")
    write_json(path, payload)
    return [path]


def run_free_particle_experiment(cfg, out_dir, figures=True):
    """Grid-versus-oracle moment report to free_particle.csv (+ figure)."""
    if not isinstance(cfg.system, GridSystem):
        raise ConfigurationError([("system", "mode free-particle needs a grid system")])
    params = cfg.free_particle_params()
    report = grid_vs_oracle(
        params, cfg.system.grid, cfg.system.initial_state, cfg.dt, cfg.n_steps,
        seeds=cfg.seeds, master_seed=cfg.master_seed, save_stride=cfg.save_stride,
    )
    s_qq, s_qp, s_pp = report.stationary
    header = run_header(cfg.mode, cfg.master_seed, {
        "kappa": cfg.kappa, "mass": cfg.system.mass, "dt": cfg.dt,
        "stationary_var_q": s_qq, "stationary_cov_qp": s_qp, "stationary_var_p": s_pp,
        "worst_late_rel_dev_var_q": report.worst_late_time_rel_dev(),
        "oracle_purity_defect_max": report.oracle_purity_defect_max,
    })
    rows = []
    for comp in report.comparisons:
        for i, t in enumerate(comp.times):
            g, o = comp.grid, comp.oracle
            rows.append([
                comp.seed, i, float(t),
                float(g.mean_q[i]), float(o.mean_q[i]),
                float(g.mean_p[i]), float(o.mean_p[i]),
                float(g.var_q[i]), float(o.var_q[i]),
                float(g.var_p[i]), float(o.var_p[i]),
                abs(float(g.var_q[i]) - float(o.var_q[i])),
            ])
    path = os.path.join(out_dir, "free_particle.csv")
    write_csv(path, ["seed", "save_index", "t",
                     "mean_q_grid", "mean_q_oracle", "mean_p_grid", "mean_p_oracle",
                     "var_q_grid", "var_q_oracle", "var_p_grid", "var_p_oracle",
                     "abs_dev_var_q"],
              rows, header)
    files = [path]
    if figures:
        from .plots import save_free_particle_figure
        fig_path = os.path.join(out_dir, "free_particle.png")
        save_free_particle_figure(fig_path, report)
        files.append(fig_path)
    return files


def run_compare_experiment(cfg, out_dir, jobs=1, figures=True):
    """Trace distance between ensemble average and ME run to compare.csv."""
    psi0, h, a_op = _matrix_objects(cfg)

    if cfg.ensemble_dir is not None:
        steps_e, times_e, rho_e = read_density_csv(
            os.path.join(cfg.ensemble_dir, "ensemble_density.csv"))
    else:
        stats = run_ensemble(
            psi0, h, a_op, cfg.kappa, cfg.hbar, cfg.dt, cfg.n_steps,
            cfg.n_trajectories, cfg.master_seed, save_stride=cfg.save_stride, jobs=jobs,
        )
        steps_e = np.array(_save_slots(cfg.n_steps, cfg.save_stride))
        times_e, rho_e = stats.times, stats.rho_mean

    if cfg.me_dir is not None:
        steps_m, times_m, rho_m = read_density_csv(
            os.path.join(cfg.me_dir, "me_density.csv"))
    else:
        me_cfg = MasterEqConfig(h=h, a_op=a_op, kappa=cfg.kappa, hbar=cfg.hbar, dt=cfg.dt)
        result = run_me(DensityMatrix.from_state(psi0), me_cfg,
                        cfg.n_steps * cfg.dt, save_stride=cfg.save_stride)
        steps_m = np.array(_save_slots(cfg.n_steps, cfg.save_stride))
        times_m = result.times
        rho_m = np.array([s.matrix for s in result.states])

    common, idx_e, idx_m = np.intersect1d(steps_e, steps_m, return_indices=True)
    if common.size == 0:
        raise ConfigurationError(
            [("compare", "ensemble and ME runs share no saved steps")])
    if not np.allclose(times_e[idx_e], times_m[idx_m], rtol=1e-9, atol=1e-12):
        raise ConfigurationError(
            [("compare", "ensemble and ME time grids disagree at shared steps")])

    rows = []
    dists = np.empty(common.size)
    for row_i, (step, ie, im_) in enumerate(zip(common, idx_e, idx_m)):
        da = DensityMatrix(rho_e[ie], check=False)
        db = DensityMatrix(rho_m[im_], check=False)
        dists[row_i] = trace_distance(da, db)
        rows.append([int(step), float(times_e[ie]), float(dists[row_i])])
    path = os.path.join(out_dir, "compare.csv")
    header = run_header(cfg.mode, cfg.master_seed,
                        {"kappa": cfg.kappa, "dt": cfg.dt,
                         "n_trajectories": cfg.n_trajectories,
                         "max_trace_distance": float(dists.max())})
    write_csv(path, ["step", "t", "trace_distance"], rows, header)
    files = [path]
    if figures:
        from .plots import save_compare_figure
        fig_path = os.path.join(out_dir, "compare.png")
        save_compare_figure(fig_path, times_e[idx_e], dists, cfg.n_trajectories)
        files.append(fig_path)
    return files


def run_experiment(cfg, jobs=1, out_dir=None, figures=True, trajectory_name="trajectory.csv"):
    """Dispatch a validated config, write its outputs and manifest.json.

    Returns the manifest payload. On a module error the manifest is still
    written (with the error recorded) before the exception propagates.
    """
    target = out_dir if out_dir is not None else cfg.out_dir
    os.makedirs(target, exist_ok=True)
    started = utc_now()
    echo = config_echo(cfg)
    try:
        if cfg.mode in TRAJECTORY_MODES and cfg.n_trajectories == 1:
            files = run_trajectory_experiment(cfg, target, filename=trajectory_name)
        elif cfg.mode in TRAJECTORY_MODES:
            files = run_ensemble_experiment(cfg, target, jobs=jobs)
        elif cfg.mode == "me":
            files = run_me_experiment(cfg, target)
        elif cfg.mode == "rpi-enumerate":
            files = run_enumeration_experiment(cfg, target)
        elif cfg.mode == "free-particle":
            files = run_free_particle_experiment(cfg, target, figures=figures)
        elif cfg.mode == "compare":
            files = run_compare_experiment(cfg, target, jobs=jobs, figures=figures)
        else:
            raise ConfigurationError([("mode", f"unhandled mode {cfg.mode!r}")])
    except Exception as exc:
        write_manifest(target, cfg.mode, cfg.master_seed, echo, [],
                       started, utc_now(), error=f"{type(exc).__name__}: {exc}")
        raise
    return write_manifest(target, cfg.mode, cfg.master_seed, echo, files,
                          started, utc_now())
