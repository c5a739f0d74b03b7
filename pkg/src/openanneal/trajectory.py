"""Quantum-jump unravelling of the adiabatic master equation.

Between jumps the unnormalized state follows the non-Hermitian effective
Hamiltonian, so its squared norm is the no-jump survival probability.  A
segment ends when that norm crosses a threshold r = 1 - u drawn once per
segment; the crossing time is located by bisection inside the offending
step, the jump channel is selected by inverse-CDF search over the
per-operator rates, and a fresh threshold is drawn.

All propagation happens in the instantaneous eigenbasis of blockwise
frozen frames supplied by stepping.Timeline; frame changes are basis
rotations through the computational basis.  The engine propagates a whole
chunk of trajectories as one matrix so the per-step work is a single
m x (m, B) product.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidityError
from .lindblad import LindbladSet, build_frame
from .model import IsingSpec
from .spectral import BathSpec
from .stepping import StepBound, StepperOptions, Timeline, step_bound

log = logging.getLogger(__name__)

NORM_TOL = 1e-10      # how close |psi| must be to 1 at normalized entry points
BISECT_RTOL = 1e-10   # relative norm^2 tolerance when locating a crossing
CONTRACT_TOL = 1e-10  # allowed relative norm growth per step
_TRAJ_STREAM = 0      # seed-stream tag for trajectory RNGs
_END_PAD = 1e-12      # relative pad for "crossing exactly at t_f"


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent per-trajectory RNG stream: mix(master_seed, index).

    The mixing function is SeedSequence((master_seed, stream_tag, index));
    statistics RNGs use a different stream tag, so trajectory draws never
    collide with bootstrap draws.
    """
    return np.random.SeedSequence((master_seed, _TRAJ_STREAM, index))


@dataclass(frozen=True)
class JumpEvent:
    """One recorded jump."""

    s_jump: float
    channel: int          # mixed-channel index (equals alpha for diagonal baths)
    omega: float          # Bohr-bin frequency of the chosen operator (rad/ns)
    pre_gs_overlap: float
    post_gs_overlap: float


@dataclass
class TrajectoryState:
    """Unnormalized state between jumps, with its threshold and RNG.

    psi lives in the computational basis; its squared norm is the
    survival probability of the current no-jump segment and stays in
    (r, 1] between jump events.
    """

    psi: np.ndarray
    s: float
    r: float
    rng: np.random.Generator
    events: list[JumpEvent] = field(default_factory=list)

    @property
    def norm2(self) -> float:
        return float(np.real(np.vdot(self.psi, self.psi)))


@dataclass(frozen=True)
class TrajectoryResult:
    """Per-grid level populations and the jump log of one trajectory."""

    grid_s: np.ndarray
    populations: np.ndarray   # (n_grid, levels), from the normalized state
    events: tuple[JumpEvent, ...]
    final_psi: np.ndarray     # normalized computational state at s = 1

    @property
    def n_jumps(self) -> int:
        return len(self.events)


def _rk4(A, phi, dt):
    """One classical RK4 step of dphi/dt = A phi."""
    k1 = A @ phi
    k2 = A @ (phi + (0.5 * dt) * k1)
    k3 = A @ (phi + (0.5 * dt) * k2)
    k4 = A @ (phi + dt * k3)
    return phi + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _shifted_generator(frame: LindbladSet) -> np.ndarray:
    """-i (heff - gauge_c I), the propagation generator in the frame."""
    A = frame.heff.copy()
    idx = np.arange(A.shape[0])
    A[idx, idx] -= frame.gauge_c
    A *= -1j
    return A


def _norm2(col: np.ndarray) -> float:
    return float(np.real(np.vdot(col, col)))


def _channel_probabilities(lset: LindbladSet, phi: np.ndarray) -> np.ndarray:
    """dp_i/dt = <phi|A_i^dag A_i|phi> for each kept operator, in-frame.

    Amplitudes are first summed within source manifolds, squared norms are
    then summed within destination manifolds, and the manifold-pair totals
    are accumulated per Bohr bin.
    """
    if lset.operator_count == 0:
        return np.zeros(0)
    starts = lset.eig.manifold_starts[:-1]
    X = lset.E * phi[None, None, :]
    S = np.add.reduceat(X, starts, axis=2)
    T = np.add.reduceat(np.abs(S) ** 2, starts, axis=1)
    n_bins = lset.bin_freqs.size
    flat = lset.mp_bin.ravel()
    dp_bins = np.empty((T.shape[0], n_bins))
    for c in range(T.shape[0]):
        dp_bins[c] = np.bincount(flat, weights=T[c].ravel(), minlength=n_bins)
    oc, ob = lset.op_arrays
    return dp_bins[oc, ob]


def _apply_op(lset: LindbladSet, channel: int, bin_idx: int,
              phi: np.ndarray) -> np.ndarray:
    """Apply the (channel, bin) jump operator to an in-frame state."""
    out = np.zeros_like(phi)
    bn = lset.bins[bin_idx]
    E = lset.E[channel]
    for p, q in zip(bn.mp_rows, bn.mp_cols):
        sp = lset.eig.manifold_slice(int(p))
        sq = lset.eig.manifold_slice(int(q))
        out[sp] += E[sp, sq] @ phi[sq]
    return out


def _select_index(dp: np.ndarray, u: float) -> int:
    """Inverse-CDF channel selection; ties break toward the lower index."""
    nz = np.flatnonzero(dp > 0.0)
    cum = np.cumsum(dp[nz])
    k = int(np.searchsorted(cum, u * cum[-1], side="left"))
    return int(nz[min(k, nz.size - 1)])


def compute_jump_rate(psi: np.ndarray, lset: LindbladSet):
    """Total jump rate and per-operator rates for a normalized state.

    Returns (lam, dp) with dp ordered like lset.op_index.
    """
    psi = np.asarray(psi)
    if abs(np.linalg.norm(psi) - 1.0) > NORM_TOL:
        raise ValueError("state must be normalized to 1e-10")
    phi = lset.eig.vectors.conj().T @ psi
    dp = _channel_probabilities(lset, phi)
    return float(dp.sum()), dp


def max_timestep(lset: LindbladSet, hdot_norm: float, lam: float,
                 lam_dot: float, eta: float = 0.05) -> StepBound:
    """Local step bound for the given frame; see stepping.step_bound."""
    if lam < 0.0:
        raise ValueError("lam must be nonnegative")
    return step_bound(lset.heff_norm, hdot_norm, lam, lam_dot, eta)


def drift_term(psi: np.ndarray, lset: LindbladSet) -> np.ndarray:
    """Deterministic nonlinear drift 1/2 (<G> - G) psi for a normalized state.

    Diagnostic only; production propagation realizes this implicitly by
    propagate-then-renormalize.
    """
    psi = np.asarray(psi)
    if abs(np.linalg.norm(psi) - 1.0) > NORM_TOL:
        raise ValueError("state must be normalized to 1e-10")
    phi = lset.eig.vectors.conj().T @ psi
    g = lset.G @ phi
    expect = float(np.real(np.vdot(phi, g)))
    return 0.5 * (lset.eig.vectors @ (expect * phi - g))


def init_trajectory(spec: IsingSpec, bath: BathSpec, seed_stream,
                    opts: StepperOptions | None = None,
                    psi0: np.ndarray | None = None) -> TrajectoryState:
    """Fresh trajectory state at s = 0 with its first threshold drawn."""
    o = opts or StepperOptions()
    rng = np.random.Generator(np.random.PCG64(seed_stream))
    if psi0 is None:
        frame = build_frame(spec, bath, 0.0, o.tol_deg, o.tol_bohr, o.m_levels)
        if frame.eig.manifold_slice(0).stop > 1:
            log.warning("initial ground state is degenerate; "
                        "starting from the lowest eigenvector")
        psi = frame.eig.vectors[:, 0].astype(complex)
    else:
        psi = np.asarray(psi0, dtype=complex)
        nrm = np.linalg.norm(psi)
        if nrm == 0.0:
            raise ValueError("psi0 must be nonzero")
        psi = psi / nrm
    r = 1.0 - rng.random()
    return TrajectoryState(psi=psi, s=0.0, r=r, rng=rng)


def _bisect_crossing(A: np.ndarray, col: np.ndarray, dt: float,
                     target: float):
    """Locate tau in (0, dt] where the squared norm hits target."""
    lo, hi = 0.0, dt
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        pm = _rk4(A, col, mid)
        n2 = _norm2(pm)
        if abs(n2 - target) <= BISECT_RTOL * target:
            return mid, pm
        if n2 > target:
            lo = mid
        else:
            hi = mid
    raise ValidityError("crossing-time bisection failed to converge")


def evolve_no_jump(state: TrajectoryState, spec: IsingSpec, bath: BathSpec,
                   s_end: float = 1.0, opts: StepperOptions | None = None,
                   timeline: Timeline | None = None):
    """Propagate the unnormalized state until norm^2 <= r or s = s_end.

    Returns (state, crossed).  When crossed is True the state sits at the
    bisected crossing time with norm^2 within relative 1e-10 of r and no
    jump applied; otherwise it sits at s_end.  The norm must not grow by
    more than 1e-10 in any step (contractivity).
    """
    if s_end < state.s:
        raise ValueError("s_end must not precede the current time")
    tl = timeline or Timeline(spec, bath, opts or StepperOptions(),
                              np.array([0.0, 1.0]))
    t_f = spec.t_f
    t0, t1 = state.s * t_f, s_end * t_f
    if t1 <= t0:
        return state, False
    n2_ref = state.norm2
    phi = None
    cur = None
    for block in tl.blocks(t0, t1):
        nxt = block.frame
        if cur is None:
            phi = nxt.eig.vectors.conj().T @ state.psi
        else:
            phi = nxt.eig.vectors.conj().T @ (cur.eig.vectors @ phi)
        n2r = _norm2(phi)
        if n2r == 0.0:
            raise ValidityError("state left the truncated subspace")
        phi *= math.sqrt(n2_ref / n2r)
        cur = nxt
        A = _shifted_generator(cur)
        check = cur.operator_count > 0
        for k in range(block.n_steps):
            prev = phi
            phi = _rk4(A, phi, block.dt)
            n2 = _norm2(phi)
            if n2 > n2_ref * (1.0 + 2.0 * CONTRACT_TOL):
                raise ValidityError("norm grew during a no-jump step")
            if check and n2 <= state.r:
                tau, ptau = _bisect_crossing(A, prev, block.dt, state.r)
                t_abs = block.t0 + k * block.dt + tau
                state.psi = cur.eig.vectors @ ptau
                state.s = t_abs / t_f
                return state, True
            n2_ref = n2
    state.psi = cur.eig.vectors @ phi
    state.s = s_end
    return state, False


def select_and_apply_jump(state: TrajectoryState, lset: LindbladSet):
    """Sample a jump channel, apply it, renormalize, redraw the threshold.

    Mutates and returns the state; the RNG draw order is fixed as one
    uniform for the channel, then one for the new threshold.
    """
    phi = lset.eig.vectors.conj().T @ state.psi
    nrm = np.linalg.norm(phi)
    if nrm == 0.0:
        raise ValidityError("state left the truncated subspace")
    phi_hat = phi / nrm
    dp = _channel_probabilities(lset, phi_hat)
    lam = float(dp.sum())
    if lam <= 0.0:
        raise ValidityError("jump triggered with zero total rate")
    u = state.rng.random()
    oi = _select_index(dp, u)
    ch, b = lset.op_index[oi]
    pre = float(np.abs(phi_hat[0]) ** 2)
    post_phi = _apply_op(lset, ch, b, phi_hat)
    nn = np.linalg.norm(post_phi)
    if nn == 0.0:
        raise ValidityError("jump operator annihilated the state")
    post_phi /= nn
    event = JumpEvent(
        s_jump=state.s,
        channel=int(ch),
        omega=float(lset.bin_freqs[b]),
        pre_gs_overlap=pre,
        post_gs_overlap=float(np.abs(post_phi[0]) ** 2),
    )
    state.psi = lset.eig.vectors @ post_phi
    state.events.append(event)
    state.r = 1.0 - state.rng.random()
    return state, event


@dataclass
class _ChunkResult:
    samples: np.ndarray              # (B, n_grid, levels)
    events: list[list[JumpEvent]]
    final_states: np.ndarray         # (B, full_dim), normalized
    snapshots: np.ndarray | None     # (B, full_dim) at the snapshot grid point
    max_leak: float


class _ChunkRunner:
    """Batched waiting-time propagation of one chunk of trajectories.

    All columns share the deterministic block schedule of the timeline,
    whose step bound uses the state-independent rate bound |G|, so no
    column ever outruns its own bound.  Per-column RNG streams keep the
    chunk's trajectories independent of how chunks are assigned to
    workers.
    """

    def __init__(self, timeline: Timeline, seed_streams, levels: int = 1,
                 psi0: np.ndarray | None = None,
                 snapshot_grid_index: int | None = None):
        self.tl = timeline
        self.seeds = list(seed_streams)
        self.levels = int(levels)
        self.psi0 = psi0
        self.snap_gi = snapshot_grid_index
        self.max_leak = 0.0
        self._leak_warned = False

    def _absorb_leak(self, out: np.ndarray, ref_n2: np.ndarray) -> np.ndarray:
        """Rescale rotated columns to their pre-rotation norms.

        Basis rotations between truncated frames are not isometries; the
        lost weight is treated as gauge and restored so the squared norm
        keeps meaning the survival probability.
        """
        n2 = np.sum(np.abs(out) ** 2, axis=0)
        if np.any(n2 == 0.0):
            raise ValidityError("state left the truncated subspace")
        leak = float(np.max(1.0 - n2 / ref_n2))
        if leak > self.max_leak:
            self.max_leak = leak
        if leak > 1e-3 and not self._leak_warned:
            log.warning("truncated-basis rotation lost %.2e of the norm; "
                        "consider raising m_levels", leak)
            self._leak_warned = True
        return out * np.sqrt(ref_n2 / n2)

    def run(self) -> _ChunkResult:
        tl = self.tl
        spec = tl.spec
        t_f = spec.t_f
        f0 = tl.frame_at(0.0)
        m = f0.eig.m
        if self.levels > m:
            raise ValueError("levels exceeds the available spectrum")
        B = len(self.seeds)
        rngs = [np.random.Generator(np.random.PCG64(ss)) for ss in self.seeds]
        r = np.array([1.0 - g.random() for g in rngs])

        if self.psi0 is None:
            if f0.eig.manifold_slice(0).stop > 1:
                log.warning("initial ground state is degenerate; "
                            "starting from the lowest eigenvector")
            phi = np.zeros((m, B), dtype=complex)
            phi[0, :] = 1.0
        else:
            p0 = np.asarray(self.psi0, dtype=complex)
            nrm = np.linalg.norm(p0)
            if nrm == 0.0:
                raise ValueError("psi0 must be nonzero")
            col = f0.eig.vectors.conj().T @ (p0 / nrm)
            cn = np.linalg.norm(col)
            if cn == 0.0:
                raise ValidityError("psi0 lies outside the truncated subspace")
            phi = np.repeat((col / cn)[:, None], B, axis=1)
        norms2 = np.ones(B)

        n_grid = tl.grid_s.size
        L = self.levels
        samples = np.empty((B, n_grid, L))
        samples[:, 0, :] = (np.abs(phi[:L, :]) ** 2).T
        events: list[list[JumpEvent]] = [[] for _ in range(B)]
        final_states = np.empty((B, spec.dim), dtype=complex)
        snapshots = None
        if self.snap_gi == 0:
            snapshots = (f0.eig.vectors @ phi).T.copy()

        cur = f0
        for block in tl.blocks():
            if block.frame is not cur:
                out = block.frame.eig.vectors.conj().T @ (cur.eig.vectors @ phi)
                phi = self._absorb_leak(out, norms2)
                cur = block.frame
            A = _shifted_generator(cur)
            has_ops = cur.operator_count > 0
            for k in range(block.n_steps):
                prev = phi
                phi = _rk4(A, phi, block.dt)
                n2 = np.sum(np.abs(phi) ** 2, axis=0)
                if np.any(n2 > norms2 * (1.0 + 2.0 * CONTRACT_TOL)):
                    raise ValidityError("norm grew during a no-jump step")
                if has_ops:
                    for j in np.flatnonzero(n2 <= r):
                        t0 = block.t0 + k * block.dt
                        col, cn2 = self._handle_crossing(
                            prev[:, j], t0, block.dt, A, cur,
                            rngs[j], r, j, events[j])
                        phi[:, j] = col
                        n2[j] = cn2
                norms2 = n2
            if block.grid_index is not None:
                gi = block.grid_index
                psi_t = cur.eig.vectors @ phi
                gf = tl.frame_at(block.t_end)
                phi_g = gf.eig.vectors.conj().T @ psi_t
                samples[:, gi, :] = (np.abs(phi_g[:L, :]) ** 2 / norms2).T
                if gi == self.snap_gi or gi == n_grid - 1:
                    hat = (psi_t / np.sqrt(norms2)).T
                    if gi == self.snap_gi:
                        snapshots = hat.copy()
                    if gi == n_grid - 1:
                        final_states[:, :] = hat
        return _ChunkResult(samples, events, final_states, snapshots,
                            self.max_leak)

    def _handle_crossing(self, col0, t0, dt, A, cur, rng, r, j, ev_list):
        """Resolve one threshold crossing inside the step starting at t0.

        Bisects the crossing time, rebuilds the frame there, applies the
        selected jump, and finishes the step; repeats if the fresh segment
        crosses its new threshold within the remainder.
        """
        tl = self.tl
        t_f = tl.spec.t_f
        t_end = t0 + dt
        col = col0.copy()
        t_here = t0
        while True:
            tau, ctau = _bisect_crossing(A, col, t_end - t_here, r[j])
            t_jump = t_here + tau
            if t_jump >= t_f * (1.0 - _END_PAD):
                # crossing lands at the end of the run: stop without a jump
                return ctau, _norm2(ctau)
            jf = tl.frame_at(t_jump)
            psi_t = cur.eig.vectors @ ctau
            phi_j = jf.eig.vectors.conj().T @ psi_t
            nj = np.linalg.norm(phi_j)
            if nj == 0.0:
                raise ValidityError("state left the truncated subspace")
            leak = 1.0 - nj * nj / _norm2(ctau)
            if leak > self.max_leak:
                self.max_leak = leak
            phi_hat = phi_j / nj
            dp = _channel_probabilities(jf, phi_hat)
            lam = float(dp.sum())
            if lam <= 0.0:
                raise ValidityError("jump triggered with zero total rate")
            u = rng.random()
            oi = _select_index(dp, u)
            ch, b = jf.op_index[oi]
            pre = float(np.abs(phi_hat[0]) ** 2)
            post = _apply_op(jf, ch, b, phi_hat)
            nn = np.linalg.norm(post)
            if nn == 0.0:
                raise ValidityError("jump operator annihilated the state")
            post /= nn
            ev_list.append(JumpEvent(
                s_jump=t_jump / t_f,
                channel=int(ch),
                omega=float(jf.bin_freqs[b]),
                pre_gs_overlap=pre,
                post_gs_overlap=float(np.abs(post[0]) ** 2),
            ))
            r[j] = 1.0 - rng.random()
            back = cur.eig.vectors.conj().T @ (jf.eig.vectors @ post)
            nb = np.linalg.norm(back)
            if nb == 0.0:
                raise ValidityError("state left the truncated subspace")
            col = back / nb
            t_here = t_jump
            if t_end - t_here <= 0.0:
                return col, 1.0
            end = _rk4(A, col, t_end - t_here)
            n2e = _norm2(end)
            if n2e > r[j]:
                return end, n2e


def run_trajectory(spec: IsingSpec, bath: BathSpec, seed_stream,
                   sample_grid, levels: int = 1,
                   opts: StepperOptions | None = None,
                   psi0: np.ndarray | None = None) -> TrajectoryResult:
    """One full waiting-time trajectory sampled on the given s grid.

    seed_stream is the per-trajectory stream from trajectory_seed (or any
    int/SeedSequence); results are fully deterministic given the stream
    and the numerical options.
    """
    tl = Timeline(spec, bath, opts or StepperOptions(),
                  np.asarray(sample_grid, dtype=float))
    runner = _ChunkRunner(tl, [seed_stream], levels=levels, psi0=psi0)
    out = runner.run()
    return TrajectoryResult(
        grid_s=tl.grid_s.copy(),
        populations=out.samples[0],
        events=tuple(out.events[0]),
        final_psi=out.final_states[0],
    )


def bernoulli_trajectory(spec: IsingSpec, bath: BathSpec, seed_stream,
                         opts: StepperOptions | None = None,
                         psi0: np.ndarray | None = None,
                         substeps: int = 1):
    """Per-step Bernoulli jump sampling; test-mode cross-check only.

    Draws one uniform per step against p = lam * dt (first-order in dt),
    so it is both slower and less accurate than the waiting-time path.
    Returns (events, final normalized computational state).
    """
    o = opts or StepperOptions()
    tl = Timeline(spec, bath, o, np.array([0.0, 1.0]))
    t_f = spec.t_f
    rng = np.random.Generator(np.random.PCG64(seed_stream))
    f0 = tl.frame_at(0.0)
    if psi0 is None:
        phi = np.zeros(f0.eig.m, dtype=complex)
        phi[0] = 1.0
    else:
        p0 = np.asarray(psi0, dtype=complex)
        phi = f0.eig.vectors.conj().T @ (p0 / np.linalg.norm(p0))
        phi /= np.linalg.norm(phi)
    events: list[JumpEvent] = []
    cur = f0
    for block in tl.blocks():
        if block.frame is not cur:
            phi = block.frame.eig.vectors.conj().T @ (cur.eig.vectors @ phi)
            nrm = np.linalg.norm(phi)
            if nrm == 0.0:
                raise ValidityError("state left the truncated subspace")
            phi /= nrm
            cur = block.frame
        A = _shifted_generator(cur)
        dt = block.dt / substeps
        for k in range(block.n_steps * substeps):
            if cur.operator_count > 0:
                dp = _channel_probabilities(cur, phi)
                lam = float(dp.sum())
                if rng.random() < lam * dt:
                    oi = _select_index(dp, rng.random())
                    ch, b = cur.op_index[oi]
                    pre = float(np.abs(phi[0]) ** 2)
                    phi = _apply_op(cur, ch, b, phi)
                    phi /= np.linalg.norm(phi)
                    events.append(JumpEvent(
                        s_jump=(block.t0 + k * dt) / t_f,
                        channel=int(ch),
                        omega=float(cur.bin_freqs[b]),
                        pre_gs_overlap=pre,
                        post_gs_overlap=float(np.abs(phi[0]) ** 2),
                    ))
                    continue
            phi = _rk4(A, phi, dt)
            phi /= np.linalg.norm(phi)
    return events, cur.eig.vectors @ phi
