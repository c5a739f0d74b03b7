"""Trajectory orchestration, averaging statistics, and cost benchmarking.

Trajectories are split into fixed-size chunks by index; the chunk layout
depends only on (R, chunk_size), never on the worker count, and each
trajectory owns an RNG stream derived from (master_seed, index).  Chunk
results are reassembled in index order and reduced over a fixed-shape
array, so ensemble output is bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ame import apply_generator
from .lindblad import build_frame
from .model import IsingSpec
from .spectral import BathSpec
from .stepping import StepperOptions, Timeline
from .trajectory import (JumpEvent, _ChunkRunner, _rk4, _shifted_generator,
                         trajectory_seed)

log = logging.getLogger(__name__)

_STATS_STREAM = 1   # seed-stream tag for statistics RNGs (vs 0 for trajectories)


def stats_rng(master_seed: int) -> np.random.Generator:
    """RNG for bootstrap statistics, independent of all trajectory streams."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((master_seed, _STATS_STREAM))))


@dataclass(frozen=True)
class EnsembleResult:
    """Averaged trajectory populations with error statistics."""

    grid_s: np.ndarray
    means: np.ndarray        # (n_grid, levels)
    stderrs: np.ndarray      # (n_grid, levels); NaN when R = 1
    R: int
    samples: np.ndarray      # (R, n_grid, levels) raw per-trajectory samples
    events: tuple            # per-trajectory tuples of JumpEvent
    net_jumps: np.ndarray    # (R,) net toward-GS jump counts
    final_ci: np.ndarray | None   # (levels, 2) bootstrap 2-sigma interval at s=1
    snapshots: np.ndarray | None  # (R, dim) states at the snapshot grid point
    max_leak: float

    @property
    def n_jumps(self) -> np.ndarray:
        return np.array([len(ev) for ev in self.events])


def _classify(ev: JumpEvent) -> int:
    """+1 toward the ground state, -1 out of it, 0 unclassified."""
    delta = ev.post_gs_overlap - ev.pre_gs_overlap
    if delta > 0.5:
        return 1
    if delta < -0.5:
        return -1
    return 0


def _chunk_fail(a: int, b: int, exc: Exception):
    msg = f"trajectory chunk [{a}, {b}) failed: {exc}"
    try:
        raise type(exc)(msg) from exc
    except TypeError:
        raise RuntimeError(msg) from exc


def _run_worker(spec, bath, opts, grid, levels, master_seed, jobs,
                snap_gi, psi0):
    """Run this worker's chunks over one shared timeline and frame cache."""
    tl = Timeline(spec, bath, opts, grid)
    out = []
    for a, b in jobs:
        seeds = [trajectory_seed(master_seed, k) for k in range(a, b)]
        runner = _ChunkRunner(tl, seeds, levels=levels, psi0=psi0,
                              snapshot_grid_index=snap_gi)
        try:
            out.append(runner.run())
        except Exception as exc:
            _chunk_fail(a, b, exc)
    return out


def run_ensemble(spec: IsingSpec, bath: BathSpec, R: int, workers: int,
                 master_seed: int, sample_grid, levels: int = 1,
                 opts: StepperOptions | None = None, chunk_size: int = 32,
                 psi0: np.ndarray | None = None,
                 snapshot_s: float | None = None,
                 bootstrap_B: int = 1000,
                 compute_ci: bool = True) -> EnsembleResult:
    """Run R trajectories over `workers` processes and average them.

    Standard errors are the sample standard error of the mean, NaN at
    R = 1.  The bootstrap interval covers the final-time populations.
    snapshot_s must coincide with a sample-grid point; the normalized
    state of every trajectory at that point is then retained.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    if chunk_size < 1:
        raise ValueError("chunk_size must be at least 1")
    opts = opts or StepperOptions()
    grid = np.asarray(sample_grid, dtype=float)

    snap_gi = None
    if snapshot_s is not None:
        hits = np.flatnonzero(np.abs(grid - snapshot_s) <= 1e-12)
        if hits.size == 0:
            raise ValueError("snapshot_s must be one of the sample-grid points")
        snap_gi = int(hits[0])

    bounds = list(range(0, R, chunk_size)) + [R]
    jobs = [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]

    # chunks are dealt round-robin; their contents depend only on the
    # chunk layout, so the assignment affects scheduling, never results
    results = [None] * len(jobs)
    if workers == 1:
        results = _run_worker(spec, bath, opts, grid, levels, master_seed,
                              jobs, snap_gi, psi0)
    else:
        groups = [list(range(w, len(jobs), workers)) for w in range(workers)]
        groups = [g for g in groups if g]
        ctx = multiprocessing.get_context(
            "fork" if "fork" in multiprocessing.get_all_start_methods()
            else "spawn")
        with ProcessPoolExecutor(max_workers=len(groups), mp_context=ctx) as pool:
            futures = [
                pool.submit(_run_worker, spec, bath, opts, grid, levels,
                            master_seed, [jobs[i] for i in group],
                            snap_gi, psi0)
                for group in groups
            ]
            for group, fut in zip(groups, futures):
                for i, res in zip(group, fut.result()):
                    results[i] = res

    samples = np.concatenate([res.samples for res in results], axis=0)
    events = tuple(tuple(ev) for res in results for ev in res.events)
    max_leak = max(res.max_leak for res in results)
    snapshots = None
    if snap_gi is not None:
        snapshots = np.concatenate([res.snapshots for res in results], axis=0)

    # fixed-shape reductions over the index axis: identical for any worker count
    means = np.sum(samples, axis=0) / R
    if R > 1:
        ss = np.sum((samples - means[None, :, :]) ** 2, axis=0)
        stderrs = np.sqrt(ss / (R * (R - 1)))
    else:
        stderrs = np.full_like(means, np.nan)

    net_jumps = np.array(
        [sum(_classify(ev) for ev in traj) for traj in events], dtype=np.int64)

    final_ci = None
    if compute_ci and R >= 2:
        rng = stats_rng(master_seed)
        final_ci = np.empty((samples.shape[2], 2))
        for lvl in range(samples.shape[2]):
            _, interval = bootstrap_ci(samples[:, -1, lvl], bootstrap_B, rng=rng)
            final_ci[lvl] = interval

    return EnsembleResult(
        grid_s=grid.copy(),
        means=means,
        stderrs=stderrs,
        R=R,
        samples=samples,
        events=events,
        net_jumps=net_jumps,
        final_ci=final_ci,
        snapshots=snapshots,
        max_leak=max_leak,
    )


def bootstrap_ci(samples, B: int = 1000, rng: np.random.Generator | None = None,
                 seed: int = 0):
    """Bootstrap the mean of 1-D samples: (sigma of the mean, 2-sigma interval).

    Resamples with replacement B times; deterministic given the RNG (or
    the seed when no RNG is passed).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("bootstrap needs at least 2 samples")
    if B < 100:
        raise ValueError("B must be at least 100")
    if rng is None:
        rng = stats_rng(seed)
    n = x.size
    boot = np.empty(B)
    for i in range(B):
        boot[i] = np.mean(x[rng.integers(0, n, size=n)])
    sigma = float(np.std(boot, ddof=1))
    center = float(np.mean(x))
    return sigma, (center - 2.0 * sigma, center + 2.0 * sigma)


def reconstruct_density(states, basis: np.ndarray | None = None) -> np.ndarray:
    """Average outer product (1/K) sum |psi_k><psi_k| of normalized states.

    basis, if given, is a matrix whose orthonormal columns define the
    output basis (e.g. instantaneous eigenvectors); default computational.
    """
    psis = np.asarray(states, dtype=complex)
    if psis.ndim == 1:
        psis = psis[None, :]
    if psis.ndim != 2 or psis.shape[0] < 1:
        raise ValueError("states must be a nonempty (K, dim) array")
    norms = np.linalg.norm(psis, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("states must be nonzero")
    if np.any(np.abs(norms - 1.0) > 1e-8):
        raise ValueError("states must be normalized")
    psis = psis / norms[:, None]
    rho = np.einsum("ka,kb->ab", psis, psis.conj()) / psis.shape[0]
    if basis is not None:
        basis = np.asarray(basis)
        if basis.shape[0] != rho.shape[0]:
            raise ValueError("basis dimension does not match the states")
        rho = basis.conj().T @ rho @ basis
    return rho


@dataclass(frozen=True)
class JumpStatistics:
    """Aggregated jump classification over an ensemble's logs."""

    net_per_trajectory: np.ndarray
    hist_values: np.ndarray    # sorted distinct net counts
    hist_counts: np.ndarray
    toward: int
    outward: int
    unclassified: int
    s_star: float | None
    # (before s*, after s*) totals; None when s_star is None
    toward_split: tuple[int, int] | None
    outward_split: tuple[int, int] | None


def jump_statistics(logs, s_star: float | None = None) -> JumpStatistics:
    """Classify jumps by ground-state overlap change and histogram them.

    A jump is toward-GS when the overlap rises by more than 0.5, out-of-GS
    when it falls by more than 0.5, else unclassified.  s_star splits the
    time-resolved counts (typically at the minimum gap).
    """
    net = []
    toward = outward = unclassified = 0
    t_split = [0, 0]
    o_split = [0, 0]
    for traj in logs:
        n = 0
        for ev in traj:
            c = _classify(ev)
            n += c
            if c > 0:
                toward += 1
            elif c < 0:
                outward += 1
            else:
                unclassified += 1
            if s_star is not None and c != 0:
                side = 0 if ev.s_jump < s_star else 1
                (t_split if c > 0 else o_split)[side] += 1
        net.append(n)
    net = np.asarray(net, dtype=np.int64)
    if net.size:
        values, counts = np.unique(net, return_counts=True)
    else:
        values = np.zeros(0, dtype=np.int64)
        counts = np.zeros(0, dtype=np.int64)
    return JumpStatistics(
        net_per_trajectory=net,
        hist_values=values,
        hist_counts=counts,
        toward=toward,
        outward=outward,
        unclassified=unclassified,
        s_star=s_star,
        toward_split=tuple(t_split) if s_star is not None else None,
        outward_split=tuple(o_split) if s_star is not None else None,
    )


@dataclass(frozen=True)
class CostReport:
    """Measured per-step costs and the fitted trajectory-count schedule."""

    ns: np.ndarray            # qubit counts
    dims: np.ndarray          # Hilbert dimensions N
    t_ame_step: np.ndarray    # seconds per apply_generator call
    t_traj_step: np.ndarray   # seconds per no-jump RK4 step
    ame_fit: tuple[float, float]    # (k1, exponent): t ~ k1 * N^p
    traj_fit: tuple[float, float]   # (k2, exponent)
    ratio_slope: float        # d log(t_ame/t_traj) / d log N
    sigma_target: float
    lam_B: np.ndarray | None  # single-trajectory variance of the GS population
    x: float | None           # fitted self-averaging exponent
    Lambda_B: float | None
    R_schedule: np.ndarray | None
    N_star: float | None

    def to_text(self) -> str:
        lines = [
            "cost scaling report",
            f"  target stderr: {self.sigma_target:g}",
            "  n  N      t_ame_step[s]  t_traj_step[s]  ratio",
        ]
        for i in range(self.ns.size):
            ratio = self.t_ame_step[i] / self.t_traj_step[i]
            lines.append(
                f"  {self.ns[i]:<2d} {self.dims[i]:<6d} "
                f"{self.t_ame_step[i]:<14.3e} {self.t_traj_step[i]:<15.3e} "
                f"{ratio:.2f}")
        k1, p1 = self.ame_fit
        k2, p2 = self.traj_fit
        lines.append(f"  fit: t_ame ~ {k1:.3e} * N^{p1:.2f}; "
                     f"t_traj ~ {k2:.3e} * N^{p2:.2f}")
        lines.append(f"  log-log slope of the step-time ratio: "
                     f"{self.ratio_slope:.3f}")
        if self.lam_B is None:
            lines.append("  variance pilot: skipped")
        elif self.x is None:
            lines.append("  variance pilot: degenerate (constant observable); "
                         "x undefined")
        else:
            lines.append(f"  lambda_B fit: Lambda_B={self.Lambda_B:.3e}, "
                         f"x={self.x:.3f}, N*={self.N_star:.1f}")
            sched = ", ".join(
                f"R({self.dims[i]})={self.R_schedule[i]}"
                for i in range(self.dims.size))
            lines.append(f"  trajectory counts for target stderr: {sched}")
        return "\n".join(lines)


def _min_time(fn, *args) -> float:
    """Best-of-several per-call wall time with automatic repetition."""
    reps = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn(*args)
        elapsed = time.perf_counter() - t0
        if elapsed >= 0.025:
            break
        reps *= 10 if elapsed < 0.0025 else 2
    best = elapsed / reps
    for _ in range(4):
        t0 = time.perf_counter()
        for _ in range(reps):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / reps)
    return best


def _loglog_fit(N: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Fit y ~ k * N^p; returns (k, p)."""
    slope, intercept = np.polyfit(np.log(N), np.log(y), 1)
    return float(np.exp(intercept)), float(slope)


def benchmark_scaling(specs, bath_for, sigma_target: float = 0.01,
                      s_probe: float = 0.5, pilot_R: int = 0,
                      master_seed: int = 0,
                      opts: StepperOptions | None = None) -> CostReport:
    """Measure per-step AME vs trajectory cost across a problem family.

    specs is a sequence of IsingSpec with increasing size; bath_for maps a
    spec to its BathSpec.  Timings are serial (single worker) minima of
    repeated calls at the mid-anneal frame.  pilot_R > 0 additionally runs
    small ensembles to estimate the single-trajectory variance lambda_B(N)
    and the self-averaging exponent x, giving the trajectory-count
    schedule R(N) = ceil(Lambda_B N^-x / sigma^2) clamped at 1.
    """
    opts = opts or StepperOptions()
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("need at least two problem sizes")
    ns = np.array([sp.n for sp in specs])
    dims = np.array([sp.dim for sp in specs])

    t_ame = np.empty(len(specs))
    t_traj = np.empty(len(specs))
    for i, sp in enumerate(specs):
        bath = bath_for(sp)
        frame = build_frame(sp, bath, s_probe, opts.tol_deg, opts.tol_bohr,
                            opts.m_levels)
        rho = np.eye(sp.dim, dtype=complex) / sp.dim
        t_ame[i] = _min_time(apply_generator, rho, frame)
        A = _shifted_generator(frame)
        phi = np.zeros(frame.eig.m, dtype=complex)
        phi[0] = 1.0
        dt = 0.1 / frame.heff_norm if frame.heff_norm > 0.0 else 1.0
        t_traj[i] = _min_time(_rk4, A, phi, dt)

    ame_fit = _loglog_fit(dims, t_ame)
    traj_fit = _loglog_fit(dims, t_traj)
    ratio_slope = float(np.polyfit(np.log(dims),
                                   np.log(t_ame / t_traj), 1)[0])

    lam_B = x = Lambda_B = R_schedule = N_star = None
    if pilot_R >= 2:
        lam_B = np.empty(len(specs))
        for i, sp in enumerate(specs):
            ens = run_ensemble(sp, bath_for(sp), pilot_R, 1, master_seed,
                               np.array([0.0, 1.0]), levels=1, opts=opts,
                               compute_ci=False)
            lam_B[i] = float(np.var(ens.samples[:, -1, 0], ddof=1))
        pos = lam_B > 0.0
        if np.count_nonzero(pos) >= 2:
            Lambda_B, negx = _loglog_fit(dims[pos], lam_B[pos])
            x = -negx
            R_schedule = np.maximum(
                1, np.ceil(Lambda_B * dims.astype(float) ** (-x)
                           / sigma_target ** 2)).astype(np.int64)
            if x > 0.0:
                N_star = float((Lambda_B / sigma_target ** 2) ** (1.0 / x))
            else:
                N_star = math.inf
        else:
            log.warning("variance pilot produced no usable lambda_B values; "
                        "x left undefined")

    return CostReport(
        ns=ns, dims=dims, t_ame_step=t_ame, t_traj_step=t_traj,
        ame_fit=ame_fit, traj_fit=traj_fit, ratio_slope=ratio_slope,
        sigma_target=sigma_target, lam_B=lam_B, x=x, Lambda_B=Lambda_B,
        R_schedule=R_schedule, N_star=N_star,
    )
