"""Command-line entry point: solve-ame, run-trajectories, compare, bench.

Every subcommand reads an optional YAML config plus flag overrides,
writes round-trippable CSV files (17 significant digits) into the output
directory, and renders a PNG figure next to each delimited output.
Exit codes: 0 success, 1 configuration error, 2 numerical-validity abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import plots
from .ame import AMEResult, adiabatic_diagnostic, solve_ame
from .config import OUTPUT_DIR_ENV, RunConfig, parse_config
from .ensemble import (EnsembleResult, benchmark_scaling, jump_statistics,
                       run_ensemble)
from .errors import ConfigError, ValidityError
from .model import chain_problem

log = logging.getLogger(__name__)

_FMT = "%.17g"


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _FMT % value


def write_csv(path: str, header, rows) -> str:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(c) for c in row) + "\n")
    return path


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as config errors (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


def _add_common_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="FILE", help="YAML config file")
    flags = [
        ("--problem", "problem", str, "builtin name or problem file"),
        ("--temperature-ghz", "temperature_GHz", float, "bath temperature"),
        ("--t-f-ns", "t_f_ns", float, "anneal duration in ns"),
        ("--g2", "g2", float, "bath coupling strength g^2"),
        ("--omega-c-ghz", "omega_c_GHz", float, "bath cutoff frequency"),
        ("--schedule", "schedule", str, "'linear' or schedule CSV"),
        ("--trajectories", "n_trajectories", int, "trajectory count R"),
        ("--seed", "master_seed", int, "master RNG seed"),
        ("--workers", "workers", int, "worker process count"),
        ("--grid-points", "grid_points", int, "sample grid size"),
        ("--levels", "levels", int, "tracked level count"),
        ("--chunk-size", "chunk_size", int, "trajectories per chunk"),
        ("--eta", "dt_safety", float, "step-bound safety factor"),
        ("--m-levels", "m_levels", int, "spectral truncation"),
        ("--rebuild-every", "rebuild_every", int, "steps per frozen frame"),
        ("--tol-deg", "tol_deg", float, "degeneracy tolerance"),
        ("--tol-bohr", "tol_bohr", float, "frequency binning tolerance"),
        ("--bootstrap-b", "bootstrap_B", int, "bootstrap resample count"),
        ("--s-star", "s_star", float, "jump-statistics split point"),
        ("--output-dir", "output_dir", str, "output directory"),
    ]
    for flag, dest, typ, help_text in flags:
        p.add_argument(flag, dest=dest, type=typ, default=None,
                       help=help_text)


def _load_config(args) -> RunConfig:
    overrides = {key: getattr(args, key, None) for key in (
        "problem", "temperature_GHz", "t_f_ns", "g2", "omega_c_GHz",
        "schedule", "n_trajectories", "master_seed", "workers", "grid_points",
        "levels", "chunk_size", "dt_safety", "m_levels", "rebuild_every",
        "tol_deg", "tol_bohr", "bootstrap_B", "s_star", "output_dir")}
    return parse_config(args.config, overrides)


def _outdir(cfg: RunConfig) -> str:
    path = cfg.resolved_output_dir()
    os.makedirs(path, exist_ok=True)
    return path


def _ame_rows(res: AMEResult):
    for i, s in enumerate(res.grid_s):
        yield (s, *res.populations[i], res.trace_errs[i])


def _write_ame(res: AMEResult, out: str) -> str:
    L = res.populations.shape[1]
    header = ["s"] + [f"pop_{i}" for i in range(L)] + ["trace_err"]
    return write_csv(os.path.join(out, "ame.csv"), header, _ame_rows(res))


def _write_ensemble(ens: EnsembleResult, out: str) -> str:
    L = ens.means.shape[1]
    header = ["s"]
    for i in range(L):
        header += [f"mean_pop_{i}", f"stderr_pop_{i}"]
    rows = []
    for g, s in enumerate(ens.grid_s):
        row = [s]
        for i in range(L):
            row += [ens.means[g, i], ens.stderrs[g, i]]
        rows.append(row)
    return write_csv(os.path.join(out, "ensemble.csv"), header, rows)


def _write_jump_log(ens: EnsembleResult, out: str) -> str:
    header = ["trajectory_id", "s_jump", "channel_alpha", "omega",
              "pre_gs_overlap", "post_gs_overlap"]
    rows = []
    for tid, traj in enumerate(ens.events):
        for ev in traj:
            rows.append((tid, ev.s_jump, ev.channel, ev.omega,
                         ev.pre_gs_overlap, ev.post_gs_overlap))
    return write_csv(os.path.join(out, "jumps.csv"), header, rows)


def _write_jump_hist(stats, out: str) -> str:
    rows = zip(stats.hist_values, stats.hist_counts)
    return write_csv(os.path.join(out, "jump_histogram.csv"),
                     ["net_jumps", "count"], rows)


def _run_ame(cfg: RunConfig) -> AMEResult:
    spec = cfg.spec()
    bath = cfg.bath(spec)
    ratio = adiabatic_diagnostic(spec, n_scan=51, m_levels=cfg.m_levels)
    log.info("adiabatic validity ratio: %.3g", ratio)
    return solve_ame(spec, bath, cfg.grid(), levels=cfg.levels,
                     opts=cfg.stepper())


def _run_ensemble(cfg: RunConfig) -> EnsembleResult:
    spec = cfg.spec()
    bath = cfg.bath(spec)
    return run_ensemble(spec, bath, cfg.n_trajectories, cfg.workers,
                        cfg.master_seed, cfg.grid(), levels=cfg.levels,
                        opts=cfg.stepper(), chunk_size=cfg.chunk_size,
                        bootstrap_B=cfg.bootstrap_B)


def _cmd_solve_ame(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    res = _run_ame(cfg)
    csv_path = _write_ame(res, out)
    fig_path = plots.save_ame_figure(res, os.path.join(out, "ame.png"))
    print(f"wrote {csv_path} and {fig_path}")
    print(f"final ground-state population: {res.populations[-1, 0]:.6f} "
          f"(max trace drift {res.trace_err:.2e})")
    return 0


def _cmd_run_trajectories(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    ens = _run_ensemble(cfg)
    stats = jump_statistics(ens.events, cfg.s_star)
    paths = [
        _write_ensemble(ens, out),
        _write_jump_log(ens, out),
        _write_jump_hist(stats, out),
        plots.save_ensemble_figure(ens, os.path.join(out, "ensemble.png")),
        plots.save_jump_figure(stats, os.path.join(out, "jump_histogram.png")),
    ]
    print("wrote " + ", ".join(paths))
    total = sum(len(t) for t in ens.events)
    print(f"R={ens.R} trajectories, {total} jumps "
          f"({stats.toward} toward GS, {stats.outward} out, "
          f"{stats.unclassified} unclassified)")
    mean = ens.means[-1, 0]
    err = ens.stderrs[-1, 0]
    print(f"final ground-state population: {mean:.6f} +- {err:.6f}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    res = _run_ame(cfg)
    ens = _run_ensemble(cfg)
    stats = jump_statistics(ens.events, cfg.s_star)
    _write_ame(res, out)
    _write_ensemble(ens, out)
    _write_jump_log(ens, out)
    _write_jump_hist(stats, out)

    L = res.populations.shape[1]
    header = ["s"]
    for i in range(L):
        header += [f"ame_pop_{i}", f"mean_pop_{i}", f"stderr_pop_{i}",
                   f"abs_dev_{i}"]
    header.append("pass")
    rows = []
    n_fail = 0
    for g, s in enumerate(res.grid_s):
        row = [s]
        ok = True
        for i in range(L):
            dev = abs(res.populations[g, i] - ens.means[g, i])
            row += [res.populations[g, i], ens.means[g, i],
                    ens.stderrs[g, i], dev]
            if not dev < 3.0 * ens.stderrs[g, i] + 1e-12:
                ok = False
        row.append("1" if ok else "0")
        n_fail += 0 if ok else 1
        rows.append(row)
    csv_path = write_csv(os.path.join(out, "compare.csv"), header, rows)
    fig_path = plots.save_compare_figure(res, ens,
                                         os.path.join(out, "compare.png"))
    print(f"wrote {csv_path} and {fig_path}")
    n = res.grid_s.size
    print(f"deviation within 3 stderr at {n - n_fail}/{n} grid points")
    return 0


def _cmd_bench(args) -> int:
    if getattr(args, "problem", None) is None and args.config is None:
        # the benchmark builds its own chain family; the problem key only
        # matters for the other subcommands
        args.problem = "chain8"
    cfg = _load_config(args)
    out = _outdir(cfg)
    if args.n_max <= args.n_min:
        raise ConfigError("--n-max must exceed --n-min")
    sched = cfg.schedule_obj()
    specs = [chain_problem(n, schedule=sched, t_f=cfg.t_f_ns)
             for n in range(args.n_min, args.n_max + 1)]
    report = benchmark_scaling(specs, cfg.bath,
                               sigma_target=args.sigma_target,
                               pilot_R=args.pilot_r,
                               master_seed=cfg.master_seed,
                               opts=cfg.stepper())
    text = report.to_text()
    txt_path = os.path.join(out, "bench.txt")
    with open(txt_path, "w") as fh:
        fh.write(text + "\n")
    rows = []
    for i in range(report.ns.size):
        row = [report.ns[i], report.dims[i], report.t_ame_step[i],
               report.t_traj_step[i],
               report.t_ame_step[i] / report.t_traj_step[i]]
        rows.append(row)
    csv_path = write_csv(os.path.join(out, "bench.csv"),
                         ["n", "N", "t_ame_step", "t_traj_step", "ratio"],
                         rows)
    fig_path = plots.save_bench_figure(report, os.path.join(out, "bench.png"))
    print(text)
    print(f"wrote {txt_path}, {csv_path} and {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="openanneal",
                     description="Adiabatic master-equation and quantum-jump "
                                 "trajectory simulator for Ising annealing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-ame", parents=[], help="density-matrix solve")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_solve_ame)

    p = sub.add_parser("run-trajectories", help="quantum-jump ensemble")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_run_trajectories)

    p = sub.add_parser("compare",
                       help="trajectory ensemble against the direct solve")
    _add_common_flags(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("bench", help="cost-scaling benchmark over chains")
    _add_common_flags(p)
    p.add_argument("--n-min", type=int, default=2, help="smallest chain")
    p.add_argument("--n-max", type=int, default=8, help="largest chain")
    p.add_argument("--sigma-target", type=float, default=0.01,
                   help="target standard error for the R(N) schedule")
    p.add_argument("--pilot-r", type=int, default=0,
                   help="pilot trajectories per size for the variance fit "
                        "(0 skips it)")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except ValidityError as exc:
        print(f"validity error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
