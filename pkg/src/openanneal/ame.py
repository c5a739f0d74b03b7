"""Density-matrix reference solver for the adiabatic master equation.

The density matrix is propagated in the instantaneous eigenbasis of the
blockwise frozen frames from stepping.Timeline, using the same classical
RK4 stepping as the trajectory engine so both share discretization error
character.  Each step symmetrizes rho; trace and positivity are
monitored and the run aborts if either drifts past 1e-6.
"""

from __future__ import annotations

import logging

import numpy as np

from dataclasses import dataclass

from .errors import ValidityError
from .lindblad import LindbladSet, eigendecompose_and_bin
from .model import IsingSpec, build_hamiltonian, hamiltonian_derivative
from .spectral import BathSpec
from .stepping import StepperOptions, Timeline

log = logging.getLogger(__name__)

TRACE_WARN = 1e-8   # trace drift above this breaks the quiet invariant
TRACE_ABORT = 1e-6
NEG_ABORT = 1e-6    # most negative eigenvalue allowed before aborting


@dataclass(frozen=True)
class AMEResult:
    """Populations on the sample grid plus run diagnostics."""

    grid_s: np.ndarray
    populations: np.ndarray   # (n_grid, levels)
    trace_errs: np.ndarray    # |Tr rho - 1| at each grid point
    min_eig: float            # most negative rho eigenvalue seen at grid points
    rho_final: np.ndarray     # computational-basis density matrix at s = 1
    snapshot: np.ndarray | None = None

    @property
    def trace_err(self) -> float:
        return float(np.max(self.trace_errs))


def _complex_op_slices(lset: LindbladSet):
    """[(channel, [(dest slice, source slice), ...]), ...] for complex bins."""
    out = []
    for b in lset.complex_bins:
        bn = lset.bins[b]
        pairs = [(lset.eig.manifold_slice(int(p)), lset.eig.manifold_slice(int(q)))
                 for p, q in zip(bn.mp_rows, bn.mp_cols)]
        for c in range(lset.n_channels):
            if lset.kept[c, b]:
                out.append((c, pairs))
    return out


def _frame_rhs(sigma: np.ndarray, lset: LindbladSet, complex_ops) -> np.ndarray:
    """Right-hand side of the master equation in the eigenbasis."""
    heff = lset.heff
    out = -1j * (heff @ sigma - sigma @ heff.conj().T)
    d = np.diagonal(sigma)
    idx = np.arange(sigma.shape[0])
    out[idx, idx] += lset.w_simple @ d
    for c, pairs in complex_ops:
        E = lset.E[c]
        for sp, sq in pairs:
            blk = E[sp, sq]
            for sp2, sq2 in pairs:
                out[sp, sp2] += blk @ sigma[sq, sq2] @ E[sp2, sq2].conj().T
    return out


def apply_generator(rho: np.ndarray, lset: LindbladSet) -> np.ndarray:
    """Master-equation right-hand side for a computational-basis rho.

    Returns -i(H_eff rho - rho H_eff^dag) + sum_i A_i rho A_i^dag.  The
    output is traceless and maps Hermitian rho to Hermitian matrices.
    With a truncated spectrum, weight outside the kept subspace is
    annihilated.
    """
    rho = np.asarray(rho)
    n = lset.eig.full_dim
    if rho.shape != (n, n):
        raise ValueError("density matrix dimension does not match the frame")
    V = lset.eig.vectors
    sigma = V.conj().T @ rho @ V
    rhs = _frame_rhs(sigma, lset, _complex_op_slices(lset))
    return V @ rhs @ V.conj().T


def _rk4_op(f, y, dt):
    k1 = f(y)
    k2 = f(y + (0.5 * dt) * k1)
    k3 = f(y + (0.5 * dt) * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def solve_ame(spec: IsingSpec, bath: BathSpec, sample_grid, levels: int = 1,
              opts: StepperOptions | None = None,
              rho0: np.ndarray | None = None,
              snapshot_grid_index: int | None = None) -> AMEResult:
    """Integrate the master equation and sample level populations.

    Starts from the instantaneous ground state at s = 0 unless rho0 is
    given (computational basis, trace 1).  Populations are
    <eps_a(s)|rho|eps_a(s)> for a < levels on the grid.
    """
    tl = Timeline(spec, bath, opts or StepperOptions(),
                  np.asarray(sample_grid, dtype=float))
    f0 = tl.frame_at(0.0)
    m = f0.eig.m
    L = int(levels)
    if L < 1 or L > m:
        raise ValueError("levels must be in [1, available spectrum]")

    if rho0 is None:
        sigma = np.zeros((m, m), dtype=complex)
        sigma[0, 0] = 1.0
    else:
        rho0 = np.asarray(rho0, dtype=complex)
        if rho0.shape != (spec.dim, spec.dim):
            raise ValueError("rho0 has the wrong dimension")
        if abs(np.trace(rho0).real - 1.0) > 1e-10 or abs(np.trace(rho0).imag) > 1e-10:
            raise ValueError("rho0 must have unit trace")
        V = f0.eig.vectors
        sigma = V.conj().T @ rho0 @ V
        tr = float(np.trace(sigma).real)
        if tr <= 0.0:
            raise ValidityError("rho0 lies outside the truncated subspace")
        sigma /= tr
        sigma = 0.5 * (sigma + sigma.conj().T)

    n_grid = tl.grid_s.size
    populations = np.empty((n_grid, L))
    trace_errs = np.zeros(n_grid)
    populations[0] = np.real(np.diagonal(sigma))[:L]
    min_eig = float(np.min(np.linalg.eigvalsh(sigma)))
    snapshot = None
    if snapshot_grid_index == 0:
        snapshot = f0.eig.vectors @ sigma @ f0.eig.vectors.conj().T

    cur = f0
    ops = _complex_op_slices(cur)
    for block in tl.blocks():
        if block.frame is not cur:
            W = block.frame.eig.vectors.conj().T @ cur.eig.vectors
            tr_ref = float(np.trace(sigma).real)
            sigma = W @ sigma @ W.conj().T
            tr = float(np.trace(sigma).real)
            if tr <= 0.0:
                raise ValidityError("state left the truncated subspace")
            sigma *= tr_ref / tr
            cur = block.frame
            ops = _complex_op_slices(cur)
        rhs = lambda y: _frame_rhs(y, cur, ops)  # noqa: E731
        for _ in range(block.n_steps):
            sigma = _rk4_op(rhs, sigma, block.dt)
            sigma = 0.5 * (sigma + sigma.conj().T)
            err = abs(float(np.trace(sigma).real) - 1.0)
            if err > TRACE_ABORT:
                raise ValidityError(
                    f"trace drifted by {err:.3e} at t={block.t0:.6g} ns")
        if block.grid_index is not None:
            gi = block.grid_index
            gf = tl.frame_at(block.t_end)
            Wg = gf.eig.vectors.conj().T @ cur.eig.vectors
            sg = Wg @ sigma @ Wg.conj().T
            populations[gi] = np.real(np.diagonal(sg))[:L]
            trace_errs[gi] = abs(float(np.trace(sigma).real) - 1.0)
            low = float(np.min(np.linalg.eigvalsh(0.5 * (sg + sg.conj().T))))
            min_eig = min(min_eig, low)
            if low < -NEG_ABORT:
                raise ValidityError(
                    f"rho eigenvalue {low:.3e} at s={tl.grid_s[gi]:.6g}")
            if gi == snapshot_grid_index:
                snapshot = cur.eig.vectors @ sigma @ cur.eig.vectors.conj().T
    if np.max(trace_errs) > TRACE_WARN:
        log.warning("trace drift reached %.3e; consider lowering eta",
                    float(np.max(trace_errs)))

    rho_final = cur.eig.vectors @ sigma @ cur.eig.vectors.conj().T
    return AMEResult(
        grid_s=tl.grid_s.copy(),
        populations=populations,
        trace_errs=trace_errs,
        min_eig=min_eig,
        rho_final=rho_final,
        snapshot=snapshot,
    )


def adiabatic_diagnostic(spec: IsingSpec, n_scan: int = 101,
                         m_levels: int | None = None) -> float:
    """Validity ratio max|<a|dH/ds|b>| / (min gap)^2 t_f over a scan grid.

    A ratio of order 1 or larger means the anneal is too fast for the
    weak-coupling master equation to be trustworthy; it is logged as a
    warning.
    """
    worst = 0.0
    min_gap = np.inf
    for s in np.linspace(0.0, 1.0, int(n_scan)):
        eig, _ = eigendecompose_and_bin(build_hamiltonian(spec, s),
                                        m_levels=m_levels, s=s)
        V = eig.vectors
        dH = hamiltonian_derivative(spec, s)
        elem = V.conj().T @ (dH @ V)
        worst = max(worst, float(np.max(np.abs(elem))))
        if eig.m >= 2:
            gap = float(eig.energies[1] - eig.energies[0])
            min_gap = min(min_gap, gap)
    if min_gap <= 0.0 or not np.isfinite(min_gap):
        ratio = np.inf
    else:
        ratio = worst / (min_gap * min_gap * spec.t_f)
    if ratio >= 1.0:
        log.warning("adiabatic validity ratio %.3g >= 1; "
                    "master-equation results may be unreliable", ratio)
    return float(ratio)
