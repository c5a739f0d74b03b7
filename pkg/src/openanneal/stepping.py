"""Shared adaptive time discretization for the master-equation and
trajectory propagators.

Time is split into blocks.  At each block start the local step bound
    dt = eta * min(|H_eff|/|dH_eff/dt|, 1/|H_eff|, |lam/(lam^2 - dlam/dt)|)
is refreshed (derivatives by central finite differences in s), then up to
rebuild_every equal steps are taken with the jump-operator set frozen at the
block midpoint.  Blocks always land exactly on requested grid times, so both
solvers sample on identical grids and share discretization error character.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lindblad import DENSE_CAP, LindbladSet, build_frame
from .model import IsingSpec, eval_schedule
from .spectral import BathSpec


@dataclass(frozen=True)
class StepperOptions:
    """Numerical knobs shared by both propagators."""

    eta: float = 0.05
    rebuild_every: int = 1
    m_levels: int | None = None
    tol_deg: float = 1e-8
    tol_bohr: float = 1e-8
    fd_delta: float = 1e-6  # central-difference spacing in s

    def __post_init__(self):
        if not 0.0 < self.eta:
            raise ValueError("eta must be positive")
        if self.rebuild_every < 1:
            raise ValueError("rebuild_every must be >= 1")
        if not 0.0 < self.fd_delta < 1e-2:
            raise ValueError("fd_delta out of range")


@dataclass(frozen=True)
class StepBound:
    """The three local bound terms (in ns) and the resulting step."""

    h_term: float
    norm_term: float
    lam_term: float
    dt: float


def step_bound(heff_norm: float, hdot_norm: float, lam: float, lam_dot: float,
               eta: float = 0.05) -> StepBound:
    """Evaluate the local step bound; zero denominators give +inf terms."""
    h_term = heff_norm / hdot_norm if hdot_norm > 0.0 else math.inf
    norm_term = 1.0 / heff_norm if heff_norm > 0.0 else math.inf
    if lam == 0.0:
        lam_term = math.inf
    else:
        denom = lam * lam - lam_dot
        lam_term = abs(lam / denom) if denom != 0.0 else math.inf
    return StepBound(h_term, norm_term, lam_term, eta * min(h_term, norm_term, lam_term))


@dataclass(frozen=True)
class Block:
    """A run of n_steps equal steps sharing one frozen frame."""

    t0: float
    dt: float
    n_steps: int
    frame: LindbladSet
    t_end: float
    grid_index: int | None  # sample-grid index reached at t_end, if any


_BOUND_STRIDE = 16   # blocks between step-bound refreshes
_CACHE_BUDGET = 6e8  # rough frame-cache memory budget in bytes


def _frame_bytes(frame: LindbladSet) -> int:
    """Rough retained size of one cached frame."""
    n = 4096
    for arr in (frame.eig.vectors, frame.M, frame.E, frame.G, frame.heff,
                frame.w_simple, frame.mp_bin):
        n += arr.nbytes
    return n


class Timeline:
    """Deterministic block schedule over [0, t_f] landing on grid times."""

    def __init__(self, spec: IsingSpec, bath: BathSpec, opts: StepperOptions,
                 grid_s: np.ndarray):
        self.spec = spec
        self.bath = bath
        self.opts = opts
        grid_s = np.asarray(grid_s, dtype=float)
        if grid_s.size < 2 or grid_s[0] != 0.0 or grid_s[-1] != 1.0 \
                or np.any(np.diff(grid_s) <= 0.0):
            raise ValueError("grid must run from s=0 to s=1, strictly increasing")
        self.grid_s = grid_s
        self.grid_t = grid_s * spec.t_f
        # frames are cached by the schedule values (A, B): time points with
        # identical Hamiltonians share one frame, so static runs build once
        self._frame_cache: dict[tuple[float, float], LindbladSet] = {}
        self._cache_cap: int | None = None

    def frame_at(self, t: float) -> LindbladSet:
        """Jump-operator set at absolute time t."""
        s = float(t) / self.spec.t_f
        A, B, _, _ = eval_schedule(self.spec.schedule, s)
        key = (A, B)
        frame = self._frame_cache.get(key)
        if frame is None:
            o = self.opts
            frame = build_frame(self.spec, self.bath, s,
                                o.tol_deg, o.tol_bohr, o.m_levels)
            if self._cache_cap is None:
                self._cache_cap = int(
                    max(512, min(200_000, _CACHE_BUDGET / _frame_bytes(frame))))
            if len(self._frame_cache) >= self._cache_cap:
                self._frame_cache.clear()
            self._frame_cache[key] = frame
        return frame

    def _local_bound(self, s: float) -> StepBound:
        """Step bound at s from central finite differences of the frames."""
        o = self.opts
        t_f = self.spec.t_f
        s_lo, s_hi = max(s - o.fd_delta, 0.0), min(s + o.fd_delta, 1.0)
        f_lo, f_hi = self.frame_at(s_lo * t_f), self.frame_at(s_hi * t_f)
        half = 0.5 * (s_hi - s_lo)
        hnorm = 0.5 * (f_lo.heff_norm + f_hi.heff_norm)
        hdot = self._hdot_norm(s, f_lo, f_hi, half)
        lam = 0.5 * (f_lo.lam_bound + f_hi.lam_bound)
        lam_dot = (f_hi.lam_bound - f_lo.lam_bound) / (2.0 * half * t_f)
        return step_bound(hnorm, hdot, lam, lam_dot, o.eta)

    def _hdot_norm(self, s: float, f_lo: LindbladSet, f_hi: LindbladSet,
                   ds: float) -> float:
        """Estimate |dH_eff/dt| (rad/ns^2) by central differences in s."""
        t_f = self.spec.t_f
        if self.spec.dim <= DENSE_CAP and not f_lo.eig.truncated:
            diff = (f_hi.heff_matrix() - f_lo.heff_matrix()) / (2.0 * ds * t_f)
            return float(np.linalg.norm(diff, 2))
        # too large for dense differencing: analytic bound on the
        # Hamiltonian part plus the finite-differenced decay-matrix scale
        _, _, dA, dB = eval_schedule(self.spec.schedule, s)
        h_part = (abs(dA) * self.spec.x_norm + abs(dB) * self.spec.z_norm) / t_f
        g_part = abs(f_hi.lam_bound - f_lo.lam_bound) / (2.0 * ds * t_f)
        return h_part + 0.5 * g_part

    def blocks(self, t_start: float = 0.0, t_stop: float | None = None):
        """Yield Blocks covering [t_start, t_stop]; grid times end blocks."""
        o = self.opts
        t_f = self.spec.t_f
        if t_stop is None:
            t_stop = t_f
        for g in range(self.grid_t.size - 1):
            seg_lo, seg_hi = self.grid_t[g], self.grid_t[g + 1]
            if seg_hi <= t_start or seg_lo >= t_stop:
                continue
            t = max(seg_lo, t_start)
            t_next = min(seg_hi, t_stop)
            bound = None
            since_refresh = 0
            while t < t_next:
                if bound is None or since_refresh >= _BOUND_STRIDE:
                    bound = self._local_bound(t / t_f)
                    since_refresh = 0
                since_refresh += 1
                remaining = t_next - t
                full_span = o.rebuild_every * bound.dt
                if not math.isfinite(bound.dt) \
                        or remaining <= full_span + 1e-12 * t_f:
                    # last block of the segment: absorb rounding into dt
                    n = 1
                    if math.isfinite(bound.dt):
                        n = min(o.rebuild_every,
                                max(1, math.ceil(remaining / bound.dt)))
                    t_end = t_next
                    dt = remaining / n
                else:
                    n = o.rebuild_every
                    dt = bound.dt
                    t_end = t + n * dt
                frame = self.frame_at(0.5 * (t + t_end))
                on_grid = t_end == t_next and t_next == seg_hi
                yield Block(t, dt, n, frame, t_end,
                            grid_index=(g + 1) if on_grid else None)
                t = t_end
