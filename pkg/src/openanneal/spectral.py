"""Ohmic bath spectral functions and rate-matrix diagonalization.

Rates follow the KMS-symmetric Ohmic form
    gamma(omega) = 2*pi*g2 * omega * exp(-|omega|/omega_c) / (1 - exp(-beta*omega))
with the omega -> 0 limit 2*pi*g2/beta.  beta is inverse temperature in
internal units (1/(rad/ns)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidityError

TWO_PI = 2.0 * np.pi

# below this |beta*omega| the Bose factor is evaluated by series expansion
_SMALL_X = 1e-5


def sigma_z_couplings(n: int) -> tuple[np.ndarray, ...]:
    """Default dephasing-type couplings: one sigma^z per qubit.

    Operators are returned as 1-D diagonals; build_lindblad_set treats 1-D
    arrays as diagonal operators and 2-D arrays as dense matrices.
    """
    k = np.arange(2 ** n, dtype=np.int64)
    return tuple(1.0 - 2.0 * ((k >> i) & 1).astype(float) for i in range(n))


@dataclass(frozen=True)
class BathSpec:
    """Bath parameters and system-side coupling operators.

    g2 is the dimensionless coupling strength g^2, beta the inverse
    temperature (internal units), omega_c the Ohmic cutoff (rad/ns).
    Each bath attaches independently to one coupling operator; rate_fn
    replaces the Ohmic form when supplied, gamma_matrix supplies a full
    Hermitian PSD rate matrix for correlated baths, and lamb_shift is an
    optional S(omega) used to build the Lamb-shift Hamiltonian.
    """

    g2: float
    beta: float
    omega_c: float
    coupling_ops: tuple[np.ndarray, ...]
    rate_fn: Callable[[float], float] | None = None
    gamma_matrix: Callable[[float], np.ndarray] | None = None
    lamb_shift: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.g2 < 0.0:
            raise ValueError("g2 must be non-negative")
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")
        if not self.omega_c > 0.0:
            raise ValueError("omega_c must be positive")
        if len(self.coupling_ops) == 0:
            raise ValueError("need at least one coupling operator")
        object.__setattr__(self, "coupling_ops", tuple(np.asarray(op) for op in self.coupling_ops))

    @property
    def n_channels(self) -> int:
        return len(self.coupling_ops)

    def rate(self, omega):
        """Scalar bath rate at Bohr frequency omega (vectorized)."""
        if self.rate_fn is not None:
            return np.vectorize(self.rate_fn, otypes=[float])(omega) if np.ndim(omega) else float(self.rate_fn(float(omega)))
        return gamma_ohmic(omega, self)


def gamma_ohmic(omega, bath: BathSpec):
    """KMS-symmetric Ohmic rate; accepts a scalar or array of frequencies."""
    w = np.asarray(omega, dtype=float)
    x = bath.beta * w
    cutoff = np.exp(-np.abs(w) / bath.omega_c)
    pref = TWO_PI * bath.g2
    small = np.abs(x) < _SMALL_X
    with np.errstate(over="ignore", invalid="ignore"):
        bose = np.where(small, 1.0, -np.expm1(-np.where(small, 1.0, x)))
        generic = pref * w / bose
    # series of x/(1-exp(-x)) around x=0: 1 + x/2 + x^2/12
    series = (pref / bath.beta) * (1.0 + x / 2.0 + x * x / 12.0)
    out = np.where(small, series, generic) * cutoff
    out = np.where(np.isfinite(out), out, 0.0)  # deep negative-frequency underflow
    if np.ndim(omega) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class DiagonalizedGamma:
    """Eigenrates and mixing unitary of a rate matrix at one frequency.

    Satisfies u @ gamma @ u.conj().T == diag(rates); rates are sorted in
    descending order and clamped to zero within -1e-12 of zero.
    """

    rates: np.ndarray
    u: np.ndarray


def diagonalize_gamma(gamma: np.ndarray) -> DiagonalizedGamma:
    """Diagonalize a Hermitian PSD rate matrix into channel eigenrates."""
    g = np.asarray(gamma)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("rate matrix must be square")
    scale = max(1.0, float(np.max(np.abs(g)))) if g.size else 1.0
    if np.max(np.abs(g - g.conj().T)) > 1e-10 * scale:
        raise ValueError("rate matrix must be Hermitian")
    w, v = np.linalg.eigh(g)
    clamp = 1e-12 * scale
    if np.min(w) < -clamp:
        raise ValidityError(
            f"rate matrix has negative eigenrate {np.min(w):.3e}; bath is not CP"
        )
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]  # descending rates
    return DiagonalizedGamma(rates=w[order], u=v[:, order].conj().T)
