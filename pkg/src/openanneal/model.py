"""Transverse-field Ising problems and piecewise-linear anneal schedules.

Internal units are angular frequency (rad/ns) for energies and ns for time.
Quantities quoted in GHz elsewhere are converted with omega = 2*pi*f before
they reach this module.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class AnnealSchedule:
    """Piecewise-linear schedule: knots (s, A, B) with A, B in rad/ns."""

    s: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("schedule needs at least two knots")
        if A.shape != s.shape or B.shape != s.shape:
            raise ValueError("schedule knot arrays must have equal length")
        if s[0] != 0.0 or s[-1] != 1.0:
            raise ValueError("schedule must start at s=0 and end at s=1")
        if np.any(np.diff(s) <= 0.0):
            raise ValueError("schedule knots must be strictly increasing in s")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def linear(cls, a0: float = TWO_PI, b0: float = TWO_PI) -> "AnnealSchedule":
        """Stand-in linear ramp A(s) = a0*(1-s), B(s) = b0*s."""
        return cls(np.array([0.0, 1.0]), np.array([a0, 0.0]), np.array([0.0, b0]))

    @classmethod
    def constant(cls, a: float, b: float) -> "AnnealSchedule":
        """Time-independent schedule, useful for static problems."""
        return cls(np.array([0.0, 1.0]), np.array([a, a]), np.array([b, b]))

    @classmethod
    def from_knots(cls, knots) -> "AnnealSchedule":
        """Build from an iterable of (s, A, B) rows."""
        arr = np.asarray(knots, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError("knots must be rows of (s, A, B)")
        return cls(arr[:, 0], arr[:, 1], arr[:, 2])


def eval_schedule(schedule: AnnealSchedule, s):
    """Evaluate (A, B, dA/ds, dB/ds) at s in [0, 1].

    At interior knots the right-segment slope is returned; at s=1 the
    left-segment slope.  Accepts a scalar or an array.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
        raise ValueError(f"schedule evaluated outside [0, 1]: s={s}")
    ks = schedule.s
    # segment index: right-continuous choice, clipped so s=1 uses the last segment
    idx = np.clip(np.searchsorted(ks, s_arr, side="right") - 1, 0, ks.size - 2)
    ds = ks[idx + 1] - ks[idx]
    dA = (schedule.A[idx + 1] - schedule.A[idx]) / ds
    dB = (schedule.B[idx + 1] - schedule.B[idx]) / ds
    A = schedule.A[idx] + dA * (s_arr - ks[idx])
    B = schedule.B[idx] + dB * (s_arr - ks[idx])
    if np.isscalar(s) or s_arr.ndim == 0:
        return float(A), float(B), float(dA), float(dB)
    return A, B, dA, dB


@dataclass(frozen=True)
class IsingSpec:
    """An annealing problem: fields h, couplings J, schedule, and anneal time.

    The driven Hamiltonian is
        H(s) = A(s) * (-sum_i sigma^x_i)
             + B(s) * (-sum_i h_i sigma^z_i + sum_{i<j} J_ij sigma^z_i sigma^z_j).

    Basis convention: computational state k assigns qubit i the bit
    (k >> i) & 1, with sigma^z eigenvalue +1 for bit 0.
    """

    n: int
    h: np.ndarray
    J: dict[tuple[int, int], float] = field(default_factory=dict)
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule.linear)
    t_f: float = 1000.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one qubit")
        h = np.asarray(self.h, dtype=float)
        if h.shape != (self.n,):
            raise ValueError(f"h must have shape ({self.n},), got {h.shape}")
        J = {}
        for (i, j), val in dict(self.J).items():
            if i == j:
                raise ValueError(f"self-coupling J[{i},{j}] not allowed")
            a, b = (i, j) if i < j else (j, i)
            if not (0 <= a < b < self.n):
                raise ValueError(f"coupling J[{i},{j}] out of range for n={self.n}")
            if (a, b) in J:
                raise ValueError(f"duplicate coupling J[{a},{b}]")
            J[(a, b)] = float(val)
        if not self.t_f > 0.0:
            raise ValueError("t_f must be positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)

    @property
    def dim(self) -> int:
        return 2 ** self.n

    @cached_property
    def z_diag(self) -> np.ndarray:
        """Diagonal of the problem part -sum h_i sz_i + sum J_ij sz_i sz_j."""
        k = np.arange(self.dim, dtype=np.int64)
        z = 1.0 - 2.0 * ((k[:, None] >> np.arange(self.n)) & 1)  # (dim, n) of +-1
        diag = -(z @ self.h)
        for (i, j), val in self.J.items():
            diag += val * z[:, i] * z[:, j]
        return diag

    @cached_property
    def x_sum(self) -> sp.csr_matrix:
        """Sparse sum_i sigma^x_i (the driver enters with a minus sign)."""
        dim, n = self.dim, self.n
        k = np.arange(dim, dtype=np.int64)
        rows = np.concatenate([k ^ (1 << i) for i in range(n)])
        cols = np.tile(k, n)
        vals = np.ones(dim * n)
        return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))

    @cached_property
    def x_norm(self) -> float:
        """Operator norm of sum_i sigma^x_i (exactly n)."""
        return float(self.n)

    @cached_property
    def z_norm(self) -> float:
        """Operator norm of the diagonal problem part."""
        return float(np.max(np.abs(self.z_diag)))


def build_hamiltonian(spec: IsingSpec, s: float) -> sp.csr_matrix:
    """Sparse Hermitian H(s) in the computational basis (rad/ns)."""
    A, B, _, _ = eval_schedule(spec.schedule, s)
    H = -A * spec.x_sum + sp.diags(B * spec.z_diag, format="csr")
    return H.tocsr()


def hamiltonian_derivative(spec: IsingSpec, s: float) -> sp.csr_matrix:
    """Sparse dH/ds at s (right-sided at knots, left-sided at s=1)."""
    _, _, dA, dB = eval_schedule(spec.schedule, s)
    return (-dA * spec.x_sum + sp.diags(dB * spec.z_diag, format="csr")).tocsr()


def chain_problem(n: int, schedule: AnnealSchedule | None = None,
                  t_f: float = 1000.0) -> IsingSpec:
    """Ferromagnetic chain with a weak boundary field h_0 = 1/4."""
    h = np.zeros(n)
    h[0] = 0.25
    J = {(i, i + 1): -1.0 for i in range(n - 1)}
    return IsingSpec(n, h, J, schedule or AnnealSchedule.linear(), t_f)


def _gadget8() -> IsingSpec:
    # 4x4 bipartite block: qubits 0-3 each coupled to qubits 4-7
    h = np.array([-2.0, -2.0, 2.0, -3.0, 1.0, 3.0, -3.0, 3.0]) / 3.0
    threeJ = [
        [1.0, -3.0, -1.0, -1.0],
        [-1.0, -2.0, 2.0, -3.0],
        [-2.0, -1.0, -3.0, -2.0],
        [-3.0, -3.0, -1.0, -3.0],
    ]
    J = {(i, 4 + j): threeJ[i][j] / 3.0 for i in range(4) for j in range(4)}
    return IsingSpec(8, h, J, AnnealSchedule.linear(), 1000.0)


def _probe16() -> IsingSpec:
    # two bipartite 8-cells with opposing local fields, bridged on one side
    h = np.concatenate([np.full(8, 0.44), np.full(8, -1.0)])
    J = {}
    for i in range(4):
        for j in range(4):
            J[(i, 4 + j)] = -1.0
            J[(8 + i, 12 + j)] = -1.0
    for i in range(4):
        J[(4 + i, 12 + i)] = -1.0
    return IsingSpec(16, h, J, AnnealSchedule.linear(), 1000.0)


_BUILTINS = {
    "chain8": lambda: chain_problem(8),
    "gadget8": _gadget8,
    "probe16": _probe16,
}


def builtin_problem(name: str) -> IsingSpec:
    """Look up a named builtin problem instance.

    Besides the registered names, any ``chain<n>`` with 1 <= n <= 16 maps to
    the corresponding ferromagnetic chain.
    """
    try:
        factory = _BUILTINS[name]
    except KeyError:
        m = re.fullmatch(r"chain(\d{1,2})", name)
        if m and 1 <= int(m.group(1)) <= 16:
            n = int(m.group(1))
            return chain_problem(n)
        valid = ", ".join(sorted(_BUILTINS))
        raise ValueError(
            f"unknown builtin problem {name!r}; valid names: {valid}, chain<n>")
    return factory()
