"""Eigenbasis jump-operator construction for the adiabatic master equation.

At each time the driven Hamiltonian is diagonalized, levels are grouped into
degenerate manifolds, level pairs are grouped into Bohr-frequency bins, and
one jump operator per (channel, bin) is formed with the bath rate absorbed
as an amplitude.  The operator set is stored as dense per-channel amplitude
matrices in the instantaneous eigenbasis together with a bin-id matrix over
level pairs; everything downstream (rates, decay matrix, generator, jump
application) reads this structure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .errors import ValidityError
from .model import IsingSpec, build_hamiltonian
from .spectral import BathSpec, diagonalize_gamma

log = logging.getLogger(__name__)

# Frobenius norm below which a (channel, bin) operator is discarded
DROP_NORM = 1e-14

# largest dimension we are willing to diagonalize densely
DENSE_CAP = 4096

# fixed Lanczos start vector seed for the sparse path
_LANCZOS_SEED = 987654321


@dataclass(frozen=True)
class EigenSystem:
    """Instantaneous eigendecomposition with degenerate-manifold grouping.

    energies are ascending; vectors holds eigenvectors as columns (full_dim x m).
    Manifolds are contiguous runs of near-degenerate levels; manifold_id maps
    each level to its manifold and manifold_starts has one extra trailing
    boundary for segment reductions.
    """

    s: float
    energies: np.ndarray
    vectors: np.ndarray
    manifold_id: np.ndarray
    manifold_starts: np.ndarray
    full_dim: int

    @property
    def m(self) -> int:
        return self.energies.size

    @property
    def n_manifolds(self) -> int:
        return self.manifold_starts.size - 1

    @property
    def truncated(self) -> bool:
        return self.m < self.full_dim

    def manifold_slice(self, p: int) -> slice:
        return slice(int(self.manifold_starts[p]), int(self.manifold_starts[p + 1]))


@dataclass(frozen=True)
class BohrBin:
    """One Bohr-frequency bin: manifold pairs (p, q) with omega ~ E_q - E_p."""

    frequency: float
    mp_rows: np.ndarray  # destination manifolds p (operator maps q -> p)
    mp_cols: np.ndarray  # source manifolds q
    n_level_pairs: int

    def level_pairs(self, eig: EigenSystem) -> tuple[np.ndarray, np.ndarray]:
        """Materialize the member level pairs (a, b) of this bin."""
        rows, cols = [], []
        for p, q in zip(self.mp_rows, self.mp_cols):
            sl_p, sl_q = eig.manifold_slice(p), eig.manifold_slice(q)
            a = np.arange(sl_p.start, sl_p.stop)
            b = np.arange(sl_q.start, sl_q.stop)
            aa, bb = np.meshgrid(a, b, indexing="ij")
            rows.append(aa.ravel())
            cols.append(bb.ravel())
        return np.concatenate(rows), np.concatenate(cols)


def _cluster_1d(values: np.ndarray, tol: float, weights: np.ndarray | None = None):
    """Group scalar values whose sorted gaps are <= tol.

    Returns (ids, centers) with centers ascending and ids mapping each input
    to its cluster; centers are weighted means.
    """
    order = np.argsort(values, kind="stable")
    sv = values[order]
    if sv.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    new_cluster = np.empty(sv.size, dtype=bool)
    new_cluster[0] = True
    new_cluster[1:] = np.diff(sv) > tol
    cid_sorted = np.cumsum(new_cluster) - 1
    ids = np.empty(values.size, dtype=np.int64)
    ids[order] = cid_sorted
    w = np.ones_like(values) if weights is None else weights.astype(float)
    totals = np.bincount(ids, weights=w * values)
    counts = np.bincount(ids, weights=w)
    return ids, totals / counts


def eigendecompose_and_bin(
    H,
    tol_deg: float = 1e-8,
    tol_bohr: float = 1e-8,
    m_levels: int | None = None,
    s: float = float("nan"),
) -> tuple[EigenSystem, list[BohrBin]]:
    """Diagonalize H, group degenerate manifolds, and bin Bohr frequencies.

    tol_deg and tol_bohr are relative to max|energy|.  m_levels keeps only
    the lowest levels (spectral truncation); beyond DENSE_CAP dimensions a
    sparse Lanczos solve is used and m_levels becomes mandatory.
    """
    dim = H.shape[0]
    want = dim if m_levels is None else min(int(m_levels), dim)
    if want < 1:
        raise ValueError("m_levels must be at least 1")
    if dim > DENSE_CAP and want == dim:
        raise ValueError(
            f"dense diagonalization of dimension {dim} refused; set m_levels"
        )
    if dim > DENSE_CAP:
        rng = np.random.Generator(np.random.PCG64(_LANCZOS_SEED))
        v0 = rng.standard_normal(dim)
        k = min(want, dim - 1)
        Hs = H.tocsc() if sp.issparse(H) else sp.csc_matrix(H)
        # shift so no eigenvalue sits exactly at zero, where the Lanczos
        # iteration cannot keep the corresponding component alive
        shift = float(np.abs(Hs).sum(axis=1).max()) + 1.0
        vals, vecs = sp.linalg.eigsh(Hs + shift * sp.identity(dim, format="csc"),
                                     k=k, which="SA", v0=v0)
        vals = vals - shift
        order = np.argsort(vals, kind="stable")
        energies, vectors = vals[order], vecs[:, order]
    else:
        dense = H.toarray() if sp.issparse(H) else np.asarray(H)
        if want < dim:
            energies, vectors = scipy.linalg.eigh(dense, subset_by_index=[0, want - 1])
        else:
            energies, vectors = np.linalg.eigh(dense)

    scale = max(float(np.max(np.abs(energies))), 1e-300)
    abs_deg = tol_deg * scale
    abs_bohr = tol_bohr * scale

    # degenerate manifolds: runs of consecutive levels with gaps <= abs_deg
    new_m = np.empty(energies.size, dtype=bool)
    new_m[0] = True
    new_m[1:] = np.diff(energies) > abs_deg
    manifold_id = np.cumsum(new_m) - 1
    starts = np.flatnonzero(new_m)
    manifold_starts = np.append(starts, energies.size)
    n_m = starts.size

    counts = np.diff(manifold_starts).astype(float)
    e_man = np.add.reduceat(energies, starts) / counts

    # Bohr frequencies over ordered manifold pairs; omega(p<-q) = E_q - E_p
    freq = e_man[None, :] - e_man[:, None]
    pair_w = np.outer(counts, counts)
    bin_ids_flat, centers = _cluster_1d(freq.ravel(), abs_bohr, pair_w.ravel())
    mp_bin = bin_ids_flat.reshape(n_m, n_m)

    min_gap = np.min(np.diff(centers)) if centers.size > 1 else np.inf
    if min_gap < 10.0 * abs_bohr:
        log.warning(
            "Bohr bins separated by %.3e, within 10x the binning tolerance %.3e; "
            "operator assignment may drift between rebuilds", min_gap, abs_bohr,
        )

    order = np.argsort(bin_ids_flat, kind="stable")
    sorted_ids = bin_ids_flat[order]
    edges = np.searchsorted(sorted_ids, np.arange(centers.size + 1))
    bins = []
    for b, center in enumerate(centers):
        members = order[edges[b]:edges[b + 1]]
        ps, qs = members // n_m, members % n_m
        n_pairs = int(np.sum(counts[ps] * counts[qs]))
        bins.append(BohrBin(float(center), ps, qs, n_pairs))

    eig = EigenSystem(
        s=float(s),
        energies=energies,
        vectors=vectors,
        manifold_id=manifold_id,
        manifold_starts=manifold_starts,
        full_dim=dim,
    )
    return eig, bins


@dataclass(frozen=True)
class LindbladSet:
    """Jump-operator set at one time, in the instantaneous eigenbasis.

    E[c] holds the rate-absorbed amplitudes of channel c over level pairs
    (a, b); the operator for (channel, bin) is E[c] masked to that bin's
    pairs.  M holds the bare coupling matrix elements per physical channel.
    G = sum_i A_i^dag A_i is the decay matrix (block-diagonal over
    manifolds) and heff = diag(E) + H_LS - i/2 G.  gauge_c is the spectral
    midpoint used by propagators as a global phase shift.
    """

    eig: EigenSystem
    bins: tuple[BohrBin, ...]
    bath: BathSpec
    mp_bin: np.ndarray
    bin_freqs: np.ndarray
    M: np.ndarray
    E: np.ndarray
    kept: np.ndarray
    op_index: tuple[tuple[int, int], ...]
    G: np.ndarray
    heff: np.ndarray
    w_simple: np.ndarray
    complex_bins: tuple[int, ...]
    gauge_c: float
    heff_norm: float
    lam_bound: float

    @property
    def n_channels(self) -> int:
        return self.E.shape[0]

    @property
    def operator_count(self) -> int:
        return len(self.op_index)

    @property
    def bin_id(self) -> np.ndarray:
        """Bin index per level pair (a, b)."""
        mid = self.eig.manifold_id
        return self.mp_bin[mid[:, None], mid[None, :]]

    @cached_property
    def op_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """op_index split into (channel, bin) integer arrays."""
        if not self.op_index:
            empty = np.zeros(0, dtype=np.intp)
            return empty, empty
        idx = np.asarray(self.op_index, dtype=np.intp)
        return idx[:, 0], idx[:, 1]

    def eigen_operator(self, channel: int, bin_idx: int) -> np.ndarray:
        """Rate-absorbed operator matrix in the eigenbasis (m x m)."""
        mask = self.bin_id == bin_idx
        return np.where(mask, self.E[channel], 0.0)

    def bare_eigen_operator(self, alpha: int, bin_idx: int) -> np.ndarray:
        """Pre-rate-absorption operator of physical channel alpha (m x m)."""
        mask = self.bin_id == bin_idx
        return np.where(mask, self.M[alpha], 0.0)

    def operator_matrix(self, channel: int, bin_idx: int) -> np.ndarray:
        """Rate-absorbed operator in the computational basis (dense)."""
        V = self.eig.vectors
        return V @ self.eigen_operator(channel, bin_idx) @ V.conj().T

    def operators(self):
        """Yield (channel, omega, computational-basis matrix) for kept ops."""
        for ch, b in self.op_index:
            yield ch, float(self.bin_freqs[b]), self.operator_matrix(ch, b)

    def heff_matrix(self) -> np.ndarray:
        """Effective Hamiltonian in the computational basis (dense)."""
        V = self.eig.vectors
        return V @ self.heff @ V.conj().T


def _matrix_elements(vectors: np.ndarray, op: np.ndarray) -> np.ndarray:
    """V^dag op V with a fast path for diagonal (1-D) operators."""
    if op.ndim == 1:
        return vectors.conj().T @ (op[:, None] * vectors)
    return vectors.conj().T @ op @ vectors


def _fat_manifolds(eig: EigenSystem) -> list[slice]:
    sizes = np.diff(eig.manifold_starts)
    return [eig.manifold_slice(p) for p in np.flatnonzero(sizes > 1)]


def _masked_gram(stack: np.ndarray, eig: EigenSystem) -> np.ndarray:
    """sum_c E_c^dag E_c restricted to within-manifold blocks (dense m x m)."""
    g = np.zeros((eig.m, eig.m), dtype=complex)
    diag = np.einsum("cab,cab->b", stack, stack.conj()).real
    np.fill_diagonal(g, diag)
    for sl in _fat_manifolds(eig):
        block = np.einsum("cax,cay->xy", stack[:, :, sl].conj(), stack[:, :, sl])
        g[sl, sl] = block
    return g


def build_lindblad_set(eig: EigenSystem, bins: list[BohrBin], bath: BathSpec) -> LindbladSet:
    """Assemble the rate-absorbed jump-operator set for one time slice.

    Independent identical baths evaluate the scalar rate at each bin
    frequency; a gamma_matrix hook switches to per-bin rate-matrix
    diagonalization with channel mixing.  Operators with Frobenius norm
    below DROP_NORM are dropped.
    """
    n_alpha = bath.n_channels
    for op in bath.coupling_ops:
        if op.ndim == 1 and op.shape != (eig.full_dim,):
            raise ValueError("diagonal coupling operator has wrong dimension")
        if op.ndim == 2 and op.shape != (eig.full_dim, eig.full_dim):
            raise ValueError("coupling operator has wrong dimension")

    M = np.stack([_matrix_elements(eig.vectors, op) for op in bath.coupling_ops])
    mid = eig.manifold_id
    mp_bin = np.empty((eig.n_manifolds, eig.n_manifolds), dtype=np.int64)
    for b, bn in enumerate(bins):
        mp_bin[bn.mp_rows, bn.mp_cols] = b
    bin_freqs = np.array([bn.frequency for bn in bins])
    bin_id = mp_bin[mid[:, None], mid[None, :]]

    if bath.gamma_matrix is None:
        rates = np.asarray(bath.rate(bin_freqs), dtype=float)
        if np.any(rates < 0.0):
            raise ValidityError("negative bath rate encountered")
        E = np.sqrt(rates)[bin_id][None, :, :] * M
    else:
        if bath.lamb_shift is not None:
            raise NotImplementedError("Lamb shift with correlated baths is not supported")
        E = np.zeros_like(M)
        for b, omega in enumerate(bin_freqs):
            diag = diagonalize_gamma(np.asarray(bath.gamma_matrix(float(omega))))
            if diag.rates.size != n_alpha:
                raise ValueError("gamma_matrix size does not match channel count")
            mask = bin_id == b
            # A_i = sqrt(gamma'_i) sum_alpha conj(u_{i,alpha}) L_alpha per bin
            mixed = np.einsum("ia,axy->ixy", diag.u.conj(), M * mask[None, :, :])
            E += np.sqrt(diag.rates)[:, None, None] * mixed

    # drop operators with negligible Frobenius norm
    n_bins = len(bins)
    frob2 = np.stack([
        np.bincount(bin_id.ravel(), weights=(np.abs(E[c]) ** 2).ravel(), minlength=n_bins)
        for c in range(E.shape[0])
    ])
    kept = frob2 > DROP_NORM ** 2
    drop_mask = ~kept[:, bin_id]
    E = np.where(drop_mask, 0.0, E)
    op_index = tuple(
        (c, b) for c in range(E.shape[0]) for b in range(n_bins) if kept[c, b]
    )

    G = _masked_gram(E, eig)

    heff = np.diag(eig.energies.astype(complex))
    if bath.lamb_shift is not None:
        s_vals = np.array([bath.lamb_shift(float(w)) for w in bin_freqs])
        s_mat = s_vals[bin_id]
        hls = np.zeros((eig.m, eig.m), dtype=complex)
        np.fill_diagonal(hls, np.einsum("ab,cab->b", s_mat, np.abs(M) ** 2))
        for sl in _fat_manifolds(eig):
            # the weight s_mat[a, x] is constant over x within the manifold
            w_col = s_mat[:, sl.start]
            hls[sl, sl] = np.einsum("cax,a,cay->xy", M[:, :, sl].conj(), w_col, M[:, :, sl])
        heff = heff + hls
        hls_norm = float(np.max(np.abs(np.diag(hls).real))) if eig.m else 0.0
        for sl in _fat_manifolds(eig):
            hls_norm = max(hls_norm, float(np.linalg.norm(hls[sl, sl], 2)))
    else:
        hls_norm = 0.0
    heff = heff - 0.5j * G

    # simple pairs: singleton bin consisting of one 1x1 manifold pair
    sizes = np.diff(eig.manifold_starts)
    mp_count = np.bincount(mp_bin.ravel(), minlength=n_bins)
    singleton = (sizes[:, None] == 1) & (sizes[None, :] == 1)
    mp_simple = singleton & (mp_count[mp_bin] == 1)
    simple_mask = mp_simple[mid[:, None], mid[None, :]]
    w_simple = np.where(simple_mask, np.einsum("cab->ab", np.abs(E) ** 2), 0.0)
    complex_bins = tuple(
        b for b in range(n_bins)
        if np.any(kept[:, b])
        and not (mp_count[b] == 1 and mp_simple[bins[b].mp_rows[0], bins[b].mp_cols[0]])
    )

    g_norm = float(np.max(G.diagonal().real)) if eig.m else 0.0
    for sl in _fat_manifolds(eig):
        g_norm = max(g_norm, float(np.linalg.norm(G[sl, sl], 2)))
    e = eig.energies
    gauge_c = float(0.5 * (e[0] + e[-1]))
    heff_norm = float(0.5 * (e[-1] - e[0]) + hls_norm + 0.5 * g_norm)

    return LindbladSet(
        eig=eig,
        bins=tuple(bins),
        bath=bath,
        mp_bin=mp_bin,
        bin_freqs=bin_freqs,
        M=M,
        E=E,
        kept=kept,
        op_index=op_index,
        G=G,
        heff=heff,
        w_simple=w_simple,
        complex_bins=complex_bins,
        gauge_c=gauge_c,
        heff_norm=heff_norm,
        lam_bound=g_norm,
    )


def build_effective_hamiltonian(lset: LindbladSet) -> np.ndarray:
    """Dense H_eff = H_S + H_LS - (i/2) sum_i A_i^dag A_i (computational basis)."""
    return lset.heff_matrix()


def build_frame(
    spec: IsingSpec,
    bath: BathSpec,
    s: float,
    tol_deg: float = 1e-8,
    tol_bohr: float = 1e-8,
    m_levels: int | None = None,
) -> LindbladSet:
    """Convenience: Hamiltonian -> eigensystem -> jump-operator set at s."""
    H = build_hamiltonian(spec, s)
    eig, bins = eigendecompose_and_bin(H, tol_deg, tol_bohr, m_levels, s=s)
    return build_lindblad_set(eig, bins, bath)
