"""JSON run configuration: parsing, validation, operator and state files.

Validation is aggregated: every violation found is collected as a
(field path, message) pair and reported in one ConfigurationError, so a
config with three mistakes names all three.

File formats (all JSON):

* config: one object, fields documented on :class:`SimConfig`;
* operator file: ``{"matrix": [[[re, im], ...], ...]}`` row-major;
* state file: ``{"amplitudes": [[re, im], ...]}``.

Operator and state entries inside a config may be a file path (resolved
relative to the config file) or the same nested-array payload inline.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, HermiticityError, InvalidStateError
from .freeparticle import FreeParticleParams, GaussianState, GridConfig
from .hilbert import HermitianOperator, StateVector

MODES = ("nonlinear", "linear-replay", "rpi-enumerate", "me", "free-particle", "compare")

# Config mode -> trajectory stepping mode of the unraveling module.
TRAJECTORY_MODES = {"nonlinear": "nonlinear", "linear-replay": "linear_with_record"}

MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class LatticeSpec:
    """Readout lattice request: half-width in readout sigmas and point count."""

    span_sigmas: float = 6.0
    n_points: int = 121

    def __post_init__(self):
        if not (self.span_sigmas > 0.0 and math.isfinite(self.span_sigmas)):
            raise ConfigurationError([("lattice.span", "must be positive")])
        if self.n_points < 2:
            raise ConfigurationError([("lattice.points", "must be at least 2")])


@dataclass(frozen=True)
class MatrixSystem:
    """Finite-dimensional system: operators as dense Hermitian matrices."""

    dim: int
    hamiltonian: HermitianOperator
    observable: HermitianOperator
    initial_state: StateVector


@dataclass(frozen=True)
class GridSystem:
    """Free particle on a periodic grid with a Gaussian initial packet."""

    grid: GridConfig
    mass: float
    initial_state: GaussianState


@dataclass(frozen=True)
class SimConfig:
    """Validated run configuration.

    JSON fields: ``mode``, ``system`` (either ``{"dim", "hamiltonian",
    "observable", "initial_state"?}`` or ``{"grid": {"points", "box"},
    "mass", "initial_state"?}``), ``kappa``, ``hbar``?, ``dt``,
    ``n_steps``, ``n_trajectories``?, ``master_seed``?, ``save_stride``?,
    ``out_dir``?, ``lattice``? (``{"span", "points"}``), ``seeds``?,
    ``ensemble_dir``?, ``me_dir``?.
    """

    mode: str
    system: object
    kappa: float
    hbar: float
    dt: float
    n_steps: int
    n_trajectories: int = 1
    master_seed: int = 0
    save_stride: int = 1
    out_dir: str = "out"
    lattice: LatticeSpec | None = None
    seeds: tuple = (0, 1, 2)
    ensemble_dir: str | None = None
    me_dir: str | None = None

    @property
    def is_grid(self):
        return isinstance(self.system, GridSystem)

    def free_particle_params(self):
        if not self.is_grid:
            raise ConfigurationError([("system", "free-particle parameters need a grid system")])
        return FreeParticleParams(mass=self.system.mass, kappa=self.kappa, hbar=self.hbar)


def complex_matrix_from_pairs(data, path, violations):
    """Decode a row-major [re, im] nested array into a complex square matrix."""
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError):
        violations.append((path, "must be a nested array of [re, im] pairs"))
        return None
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        violations.append((path, "must be a square row-major array of [re, im] pairs"))
        return None
    return arr[..., 0] + 1j * arr[..., 1]


def complex_vector_from_pairs(data, path, violations):
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError):
        violations.append((path, "must be an array of [re, im] pairs"))
        return None
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        violations.append((path, "must be an array of [re, im] pairs"))
        return None
    return arr[:, 0] + 1j * arr[:, 1]


def pairs_from_complex(arr):
    """Encode a complex array as nested [re, im] pairs (for JSON output)."""
    arr = np.asarray(arr)
    out = np.stack([arr.real, arr.imag], axis=-1)
    return out.tolist()


def load_json_file(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _resolve_entry(value, base_dir, path, key, violations):
    """Return the payload under ``key``, following a file path if given."""
    if isinstance(value, str):
        full = value if os.path.isabs(value) else os.path.join(base_dir, value)
        if not os.path.isfile(full):
            violations.append((path, f"file not found: {full}"))
            return None
        try:
            data = load_json_file(full)
        except json.JSONDecodeError as exc:
            violations.append((path, f"not valid JSON: {exc}"))
            return None
        if not isinstance(data, dict) or key not in data:
            violations.append((path, f'file must be an object with an "{key}" entry'))
            return None
        return data[key]
    return value


def _load_operator(value, base_dir, path, violations, dim=None):
    payload = _resolve_entry(value, base_dir, path, "matrix", violations)
    if payload is None:
        return None
    matrix = complex_matrix_from_pairs(payload, path, violations)
    if matrix is None:
        return None
    if dim is not None and matrix.shape[0] != dim:
        violations.append((path, f"dimension {matrix.shape[0]} does not match system dim {dim}"))
        return None
    try:
        return HermitianOperator(matrix)
    except HermiticityError as exc:
        violations.append((path, str(exc)))
        return None


def _load_state(value, base_dir, path, violations, dim):
    payload = _resolve_entry(value, base_dir, path, "amplitudes", violations)
    if payload is None:
        return None
    vec = complex_vector_from_pairs(payload, path, violations)
    if vec is None:
        return None
    if dim is not None and vec.size != dim:
        violations.append((path, f"length {vec.size} does not match system dim {dim}"))
        return None
    try:
        return StateVector(vec).normalized()
    except InvalidStateError as exc:
        violations.append((path, str(exc)))
        return None


def _number(raw, path, violations, *, positive=False, nonnegative=False):
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        violations.append((path, "must be a number"))
        return None
    v = float(raw)
    if not math.isfinite(v):
        violations.append((path, "must be finite"))
        return None
    if positive and v <= 0.0:
        violations.append((path, "must be positive"))
        return None
    if nonnegative and v < 0.0:
        violations.append((path, "must be non-negative"))
        return None
    return v


def _integer(raw, path, violations, *, minimum=None, maximum=None):
    if isinstance(raw, bool) or not isinstance(raw, int):
        violations.append((path, "must be an integer"))
        return None
    if minimum is not None and raw < minimum:
        violations.append((path, f"must be at least {minimum}"))
        return None
    if maximum is not None and raw > maximum:
        violations.append((path, f"must be at most {maximum}"))
        return None
    return raw


def _parse_matrix_system(spec, base_dir, violations):
    dim = None
    if "dim" in spec:
        dim = _integer(spec["dim"], "system.dim", violations, minimum=2)
    else:
        violations.append(("system.dim", "missing required field"))
    ham = obs = None
    if "hamiltonian" in spec:
        ham = _load_operator(spec["hamiltonian"], base_dir, "system.hamiltonian", violations, dim)
    else:
        violations.append(("system.hamiltonian", "missing required field"))
    if "observable" in spec:
        obs = _load_operator(spec["observable"], base_dir, "system.observable", violations, dim)
    else:
        violations.append(("system.observable", "missing required field"))
    if dim is None or ham is None or obs is None:
        return None
    if "initial_state" in spec:
        psi0 = _load_state(spec["initial_state"], base_dir, "system.initial_state", violations, dim)
        if psi0 is None:
            return None
    else:
        amp = np.zeros(dim, dtype=np.complex128)
        amp[0] = 1.0
        psi0 = StateVector(amp)
    return MatrixSystem(dim=dim, hamiltonian=ham, observable=obs, initial_state=psi0)


def _parse_grid_system(spec, base_dir, violations, hbar=1.0):
    grid_raw = spec.get("grid")
    grid = None
    if not isinstance(grid_raw, dict):
        violations.append(("system.grid", "must be an object with points and box"))
    else:
        points = _integer(grid_raw.get("points"), "system.grid.points", violations, minimum=2)
        box = _number(grid_raw.get("box"), "system.grid.box", violations, positive=True)
        if points is not None and box is not None:
            try:
                grid = GridConfig(n_points=points, box=box)
            except ConfigurationError as exc:
                violations.extend(
                    (f"system.grid.{p.split('.')[-1]}", m) for p, m in exc.violations
                )
    mass = _number(spec.get("mass", None), "system.mass", violations, positive=True) \
        if "mass" in spec else _missing("system.mass", violations)

    state_raw = spec.get("initial_state", {})
    state = None
    if not isinstance(state_raw, dict):
        violations.append(("system.initial_state", "must be an object of packet moments"))
    else:
        mean_q = _number(state_raw.get("mean_q", 0.0), "system.initial_state.mean_q", violations)
        mean_p = _number(state_raw.get("mean_p", 0.0), "system.initial_state.mean_p", violations)
        var_q = _number(state_raw.get("var_q", 0.5), "system.initial_state.var_q",
                        violations, positive=True)
        cov_qp = _number(state_raw.get("cov_qp", 0.0), "system.initial_state.cov_qp", violations)
        var_p = state_raw.get("var_p")
        if None not in (mean_q, mean_p, var_q, cov_qp):
            if var_p is None:
                var_p_val = None
            else:
                var_p_val = _number(var_p, "system.initial_state.var_p", violations, positive=True)
                if var_p_val is None:
                    return None
            try:
                state = _packet_state(mean_q, mean_p, var_q, cov_qp, var_p_val, hbar)
            except ConfigurationError as exc:
                violations.extend(("system.initial_state", m) for _, m in exc.violations)
    if grid is None or mass is None or state is None:
        return None
    return GridSystem(grid=grid, mass=mass, initial_state=state)


def _packet_state(mean_q, mean_p, var_q, cov_qp, var_p, hbar):
    """Gaussian moments with Var(p) defaulting to the pure-state value."""
    if var_p is None:
        var_p = (0.25 * hbar**2 + cov_qp**2) / var_q
    return GaussianState(mean_q, mean_p, var_q, cov_qp, var_p)


def _missing(path, violations):
    violations.append((path, "missing required field"))
    return None


def parse_config_data(data, base_dir="."):
    """Validate an already-decoded config object. See :func:`parse_config`."""
    violations = []
    if not isinstance(data, dict):
        raise ConfigurationError([("config", "top level must be a JSON object")])
    known = {
        "mode", "system", "kappa", "hbar", "dt", "n_steps", "n_trajectories",
        "master_seed", "save_stride", "out_dir", "lattice", "seeds",
        "ensemble_dir", "me_dir",
    }
    for key in data:
        if key not in known:
            violations.append((key, "unknown field"))

    mode = data.get("mode")
    if mode is None:
        violations.append(("mode", "missing required field"))
    elif mode not in MODES:
        violations.append(("mode", f"must be one of {', '.join(MODES)}"))

    kappa = _number(data.get("kappa"), "kappa", violations, positive=True) \
        if "kappa" in data else _missing("kappa", violations)
    hbar = _number(data.get("hbar", 1.0), "hbar", violations, positive=True)

    system = None
    sys_raw = data.get("system")
    if not isinstance(sys_raw, dict):
        violations.append(("system", "missing or not an object"))
    elif "grid" in sys_raw:
        system = _parse_grid_system(sys_raw, base_dir, violations,
                                    hbar=hbar if hbar is not None else 1.0)
    else:
        system = _parse_matrix_system(sys_raw, base_dir, violations)
    dt = _number(data.get("dt"), "dt", violations, positive=True) \
        if "dt" in data else _missing("dt", violations)
    n_steps = _integer(data.get("n_steps"), "n_steps", violations, minimum=1) \
        if "n_steps" in data else _missing("n_steps", violations)
    n_traj = _integer(data.get("n_trajectories", 1), "n_trajectories", violations, minimum=1)
    seed = _integer(data.get("master_seed", 0), "master_seed", violations,
                    minimum=0, maximum=MAX_SEED)
    stride = _integer(data.get("save_stride", 1), "save_stride", violations, minimum=1)
    out_dir = data.get("out_dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        violations.append(("out_dir", "must be a non-empty string"))

    lattice = None
    if "lattice" in data:
        lat_raw = data["lattice"]
        if not isinstance(lat_raw, dict):
            violations.append(("lattice", "must be an object with span and points"))
        else:
            span = _number(lat_raw.get("span", 6.0), "lattice.span", violations, positive=True)
            points = _integer(lat_raw.get("points", 121), "lattice.points", violations, minimum=2)
            if span is not None and points is not None:
                lattice = LatticeSpec(span_sigmas=span, n_points=points)

    seeds = (0, 1, 2)
    if "seeds" in data:
        raw = data["seeds"]
        if (not isinstance(raw, list) or not raw
                or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in raw)):
            violations.append(("seeds", "must be a non-empty list of non-negative integers"))
        else:
            seeds = tuple(raw)

    for key in ("ensemble_dir", "me_dir"):
        if key in data and not isinstance(data[key], str):
            violations.append((key, "must be a path string"))

    if mode == "rpi-enumerate" and system is not None and isinstance(system, GridSystem):
        violations.append(("system", "enumeration needs a finite-dimensional system"))
    if mode in ("me", "compare") and isinstance(system, GridSystem):
        violations.append(("system", f"mode {mode} needs a finite-dimensional system"))
    if mode == "free-particle" and system is not None and not isinstance(system, GridSystem):
        violations.append(("system", "mode free-particle needs a grid system"))

    if violations:
        raise ConfigurationError(violations)
    return SimConfig(
        mode=mode,
        system=system,
        kappa=kappa,
        hbar=hbar,
        dt=dt,
        n_steps=n_steps,
        n_trajectories=n_traj,
        master_seed=seed,
        save_stride=stride,
        out_dir=out_dir,
        lattice=lattice,
        seeds=seeds,
        ensemble_dir=data.get("ensemble_dir"),
        me_dir=data.get("me_dir"),
    )


def config_echo(cfg):
    """Self-contained JSON form of a validated config.

    Operators and states are inlined as [re, im] nested arrays, so the
    echo reproduces the run even if the operator files it was parsed from
    move. Together with the seed this is the whole input of a run.
    """
    if isinstance(cfg.system, GridSystem):
        s = cfg.system.initial_state
        system = {
            "grid": {"points": cfg.system.grid.n_points, "box": cfg.system.grid.box},
            "mass": cfg.system.mass,
            "initial_state": {
                "mean_q": s.mean_q, "mean_p": s.mean_p,
                "var_q": s.var_q, "cov_qp": s.cov_qp, "var_p": s.var_p,
            },
        }
    else:
        system = {
            "dim": cfg.system.dim,
            "hamiltonian": pairs_from_complex(cfg.system.hamiltonian.matrix),
            "observable": pairs_from_complex(cfg.system.observable.matrix),
            "initial_state": pairs_from_complex(cfg.system.initial_state.amplitudes),
        }
    echo = {
        "mode": cfg.mode,
        "system": system,
        "kappa": cfg.kappa,
        "hbar": cfg.hbar,
        "dt": cfg.dt,
        "n_steps": cfg.n_steps,
        "n_trajectories": cfg.n_trajectories,
        "master_seed": cfg.master_seed,
        "save_stride": cfg.save_stride,
        "out_dir": cfg.out_dir,
    }
    if cfg.lattice is not None:
        echo["lattice"] = {"span": cfg.lattice.span_sigmas, "points": cfg.lattice.n_points}
    if cfg.mode == "free-particle":
        echo["seeds"] = list(cfg.seeds)
    if cfg.ensemble_dir is not None:
        echo["ensemble_dir"] = cfg.ensemble_dir
    if cfg.me_dir is not None:
        echo["me_dir"] = cfg.me_dir
    return echo


def parse_config(path):
    """Parse and validate a JSON config file.

    Returns a :class:`SimConfig` or raises one ConfigurationError whose
    ``violations`` list carries every (field path, message) found.
    """
    try:
        data = load_json_file(path)
    except FileNotFoundError:
        raise ConfigurationError([("config", f"file not found: {path}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError([("config", f"not valid JSON: {exc}")]) from None
    return parse_config_data(data, base_dir=os.path.dirname(os.path.abspath(path)))
