"""Run configuration: YAML ingestion, fail-closed validation, unit conversion.

Config files use laboratory units (GHz, ns); everything downstream works
in angular frequency (rad/ns).  Unknown keys are rejected so a typo in a
tolerance name cannot silently fall back to a default.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError
from .model import TWO_PI, AnnealSchedule, IsingSpec, builtin_problem
from .spectral import BathSpec, sigma_z_couplings
from .stepping import StepperOptions

OUTPUT_DIR_ENV = "OPENANNEAL_OUTDIR"


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters in config units (GHz, ns)."""

    problem: str
    temperature_GHz: float
    t_f_ns: float = 1000.0
    g2: float = 1e-3
    omega_c_GHz: float = 4.0
    schedule: str = "linear"
    n_trajectories: int = 1000
    master_seed: int = 0
    workers: int = 1
    grid_points: int = 101
    levels: int = 1
    chunk_size: int = 32
    tol_deg: float = 1e-8
    tol_bohr: float = 1e-8
    dt_safety: float = 0.05
    m_levels: int | None = None
    rebuild_every: int = 1
    bootstrap_B: int = 1000
    s_star: float | None = None
    output_dir: str = "out"

    def schedule_obj(self) -> AnnealSchedule:
        if self.schedule == "linear":
            return AnnealSchedule.linear()
        return load_schedule_csv(self.schedule)

    def spec(self) -> IsingSpec:
        """The annealing problem with this config's schedule and t_f."""
        sched = self.schedule_obj()
        try:
            if _is_builtin(self.problem):
                base = builtin_problem(self.problem)
                return dataclasses.replace(base, schedule=sched,
                                           t_f=self.t_f_ns)
            n, h, J = load_problem_file(self.problem)
            return IsingSpec(n=n, h=h, J=J, schedule=sched, t_f=self.t_f_ns)
        except ValueError as exc:
            raise ConfigError(f"problem '{self.problem}': {exc}") from exc

    def bath(self, spec: IsingSpec) -> BathSpec:
        """Independent Ohmic dephasing baths, one per qubit."""
        return BathSpec(
            g2=self.g2,
            beta=1.0 / (TWO_PI * self.temperature_GHz),
            omega_c=TWO_PI * self.omega_c_GHz,
            coupling_ops=sigma_z_couplings(spec.n),
        )

    def stepper(self) -> StepperOptions:
        return StepperOptions(
            eta=self.dt_safety,
            rebuild_every=self.rebuild_every,
            m_levels=self.m_levels,
            tol_deg=self.tol_deg,
            tol_bohr=self.tol_bohr,
        )

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_points)

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_DIR_ENV) or self.output_dir


def _is_builtin(name: str) -> bool:
    try:
        builtin_problem(name)
        return True
    except ValueError:
        return False


def _pos(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0


def _nonneg(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0


def _int_ge(lo):
    return lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= lo


def _frac(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0.0 < v < 1.0


def _opt(check):
    return lambda v: v is None or check(v)


def _name(v):
    return isinstance(v, str) and len(v) > 0


_CHECKS: dict[str, tuple] = {
    "problem": (_name, "a builtin name or a file path"),
    "temperature_GHz": (_pos, "a positive number (GHz)"),
    "t_f_ns": (_pos, "a positive number (ns)"),
    "g2": (_nonneg, "a nonnegative number"),
    "omega_c_GHz": (_pos, "a positive number (GHz)"),
    "schedule": (_name, "'linear' or a schedule CSV path"),
    "n_trajectories": (_int_ge(1), "an integer >= 1"),
    "master_seed": (_int_ge(0), "an integer >= 0"),
    "workers": (_int_ge(1), "an integer >= 1"),
    "grid_points": (_int_ge(2), "an integer >= 2"),
    "levels": (_int_ge(1), "an integer >= 1"),
    "chunk_size": (_int_ge(1), "an integer >= 1"),
    "tol_deg": (_frac, "a number in (0, 1)"),
    "tol_bohr": (_frac, "a number in (0, 1)"),
    "dt_safety": (lambda v: _pos(v) and v <= 1.0, "a number in (0, 1]"),
    "m_levels": (_opt(_int_ge(1)), "null or an integer >= 1"),
    "rebuild_every": (_int_ge(1), "an integer >= 1"),
    "bootstrap_B": (_int_ge(100), "an integer >= 100"),
    "s_star": (_opt(lambda v: isinstance(v, (int, float))
                    and not isinstance(v, bool) and 0.0 <= v <= 1.0),
               "null or a number in [0, 1]"),
    "output_dir": (_name, "a nonempty path"),
}

_REQUIRED = ("problem", "temperature_GHz")
_FLOAT_FIELDS = ("temperature_GHz", "t_f_ns", "g2", "omega_c_GHz", "tol_deg",
                 "tol_bohr", "dt_safety")


def parse_config(path: str | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Load, merge, and validate a run configuration.

    path points at a YAML mapping (optional); overrides (typically CLI
    flags) win over the file; defaults fill the rest.  Unknown keys,
    missing required keys, out-of-range values, and missing referenced
    files are all errors naming the offending key.
    """
    raw: dict = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                loaded = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"config file {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must be a YAML mapping")
        raw = loaded

    unknown = sorted(set(raw) - set(_CHECKS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    data = dict(raw)
    if overrides:
        for key, val in overrides.items():
            if val is not None:
                data[key] = val

    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"missing required config key: {key}")

    merged = {}
    for key in _CHECKS:
        if key in data:
            merged[key] = data[key]
        elif key not in _REQUIRED:
            merged[key] = getattr(RunConfig, "__dataclass_fields__")[key].default

    for key, (check, expected) in _CHECKS.items():
        val = merged[key]
        if not check(val):
            raise ConfigError(
                f"config key '{key}': expected {expected}, got {val!r}")

    for key in _FLOAT_FIELDS:
        merged[key] = float(merged[key])
    if merged["s_star"] is not None:
        merged["s_star"] = float(merged["s_star"])

    cfg = RunConfig(**merged)
    if not _is_builtin(cfg.problem) and not os.path.isfile(cfg.problem):
        raise ConfigError(
            f"config key 'problem': '{cfg.problem}' is neither a builtin "
            "problem nor an existing file")
    if cfg.schedule != "linear" and not os.path.isfile(cfg.schedule):
        raise ConfigError(
            f"config key 'schedule': file not found: {cfg.schedule}")
    return cfg


def emit_config(cfg: RunConfig) -> str:
    """Serialize a config so that parse_config reads it back unchanged."""
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=True,
                          default_flow_style=False)


def load_problem_file(path: str):
    """Read a problem YAML: {n, h: [...], J: [[i, j, value], ...]}."""
    if not os.path.isfile(path):
        raise ConfigError(f"problem file not found: {path}")
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"problem file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"problem file {path} must be a YAML mapping")
    extra = sorted(set(doc) - {"n", "h", "J"})
    if extra:
        raise ConfigError(
            f"problem file {path}: unknown keys: {', '.join(extra)}")
    n = doc.get("n")
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError(f"problem file {path}: 'n' must be an integer >= 1")
    h = doc.get("h")
    if (not isinstance(h, list) or len(h) != n
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       for v in h)):
        raise ConfigError(
            f"problem file {path}: 'h' must be a list of {n} numbers")
    J = {}
    for row in doc.get("J", []) or []:
        if (not isinstance(row, list) or len(row) != 3
                or not all(isinstance(v, (int, float))
                           and not isinstance(v, bool) for v in row)
                or not isinstance(row[0], int) or not isinstance(row[1], int)):
            raise ConfigError(
                f"problem file {path}: each J entry must be [i, j, value]")
        key = (row[0], row[1])
        if key in J:
            raise ConfigError(
                f"problem file {path}: duplicate coupling J[{key[0]},{key[1]}]")
        J[key] = float(row[2])
    return n, np.asarray(h, dtype=float), J


def load_schedule_csv(path: str) -> AnnealSchedule:
    """Read a schedule CSV with header s,A_GHz,B_GHz into rad/ns knots."""
    if not os.path.isfile(path):
        raise ConfigError(f"schedule file not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["s", "A_GHz", "B_GHz"]:
            raise ConfigError(
                f"schedule file {path}: header must be 's,A_GHz,B_GHz'")
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ConfigError(
                    f"schedule file {path} row {line_no}: expected 3 columns")
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ConfigError(
                    f"schedule file {path} row {line_no}: {exc}") from exc
            rows.append((line_no, vals))
    if len(rows) < 2:
        raise ConfigError(f"schedule file {path}: need at least two rows")
    for (prev_no, prev), (line_no, cur) in zip(rows, rows[1:]):
        if cur[0] <= prev[0]:
            raise ConfigError(
                f"schedule file {path} row {line_no}: s={cur[0]!r} does not "
                f"increase past row {prev_no}")
    if rows[0][1][0] != 0.0:
        raise ConfigError(
            f"schedule file {path} row {rows[0][0]}: first s must be 0")
    if rows[-1][1][0] != 1.0:
        raise ConfigError(
            f"schedule file {path} row {rows[-1][0]}: last s must be 1")
    knots = np.array([vals for _, vals in rows])
    return AnnealSchedule(knots[:, 0], TWO_PI * knots[:, 1],
                          TWO_PI * knots[:, 2])
