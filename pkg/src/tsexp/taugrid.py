"""Periodic grid calculus on the fast variable tau in [0, 2*pi).

A TauField samples a vector-valued 2*pi-periodic function on the uniform
grid tau_l = 2*pi*l/n_tau and carries the matching discrete Fourier
coefficients.  The module provides the averaging projector, the mean-free
antiderivative (Fourier division by i*k), application of operator-valued
coefficients g((h/eps) d_tau) as Fourier multipliers, and trigonometric
evaluation off the grid.

Sign convention: the symbol of the operator argument is fixed so that the
phi_0 multiplier at scale sigma is the backward shift tau -> tau - sigma,
i.e. the exact flow of d_t + (1/eps) d_tau = 0 over sigma*eps.  Mode k is
therefore multiplied by g(-i*k*sigma).  The two redundant modes +-n/2
carry half weight each so real fields stay real.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from tsexp.phi import phi_scalar

DEFAULT_N_TAU = 64


def fourier_modes(n_tau: int) -> np.ndarray:
    """Integer mode numbers in FFT layout; the Nyquist slot reads -n/2."""
    return np.fft.fftfreq(n_tau, d=1.0 / n_tau).astype(int)


class TauField:
    """Samples of a dim-vector periodic function of tau, plus its DFT.

    values has shape (dim, n_tau); column l is the sample at
    tau_l = 2*pi*l/n_tau.  Instances are immutable: the sample array is
    marked read-only and coefficients are computed once on demand.
    """

    __slots__ = ("values", "_coeffs")

    def __init__(self, values: np.ndarray, _coeffs: np.ndarray | None = None):
        values = np.atleast_2d(np.asarray(values))
        if values.ndim != 2:
            raise ValueError("values must be a (dim, n_tau) array")
        if values.shape[1] % 2 != 0:
            raise ValueError("n_tau must be even")
        values = values.copy()
        values.flags.writeable = False
        self.values = values
        self._coeffs = _coeffs

    @classmethod
    def from_coeffs(cls, coeffs: np.ndarray, real: bool = True) -> "TauField":
        coeffs = np.atleast_2d(np.asarray(coeffs, dtype=complex))
        values = np.fft.ifft(coeffs, axis=1) * coeffs.shape[1]
        if real:
            values = values.real
        return cls(values, _coeffs=coeffs.copy())

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], n_tau: int = DEFAULT_N_TAU) -> "TauField":
        """Sample fn on the grid; fn maps a (n_tau,) array of nodes to (dim, n_tau) or (n_tau,)."""
        return cls(fn(nodes(n_tau)))

    @property
    def n_tau(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    @property
    def coeffs(self) -> np.ndarray:
        """DFT coefficients c with f(tau_l) = sum_k c_k exp(i k tau_l), FFT layout."""
        if self._coeffs is None:
            self._coeffs = np.fft.fft(self.values, axis=1) / self.n_tau
        return self._coeffs

    @property
    def nodes(self) -> np.ndarray:
        return nodes(self.n_tau)

    def __repr__(self) -> str:  # pragma: no cover
        return f"TauField(dim={self.dim}, n_tau={self.n_tau}, real={self.is_real})"


def nodes(n_tau: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n_tau) / n_tau


def average(f: TauField) -> np.ndarray:
    """Averaging projector: the zero-mode coefficient, i.e. the node mean."""
    out = f.coeffs[:, 0]
    return out.real if f.is_real else out


def linv(f: TauField, mean_tol: float = 1e-12) -> TauField:
    """Mean-free antiderivative in tau: divide mode k != 0 by i*k.

    Only defined on (I - Pi)-projected data; rejects input whose mean
    exceeds mean_tol relative to the field size.  The symmetrized Nyquist
    pair integrates to sin((n/2) tau)/(n/2), which vanishes at every node,
    so that slot is zeroed.
    """
    scale = max(1.0, float(np.max(np.abs(f.values))) if f.values.size else 1.0)
    mean = np.max(np.abs(average(f)))
    if mean > mean_tol * scale:
        raise ValueError(f"linv requires a mean-free field; |mean| = {mean:.3e}")
    k = fourier_modes(f.n_tau).astype(float)
    mult = np.zeros(f.n_tau, dtype=complex)
    mult[1:] = 1.0 / (1j * k[1:])
    mult[f.n_tau // 2] = 0.0
    coeffs = f.coeffs * mult
    out = TauField.from_coeffs(coeffs, real=f.is_real)
    return out


def dtau(f: TauField) -> TauField:
    """Spectral derivative d/dtau (Nyquist slot symmetrized to zero)."""
    k = fourier_modes(f.n_tau).astype(float)
    mult = 1j * k
    mult[f.n_tau // 2] = 0.0
    return TauField.from_coeffs(f.coeffs * mult, real=f.is_real)


@dataclass(frozen=True)
class MultiplierSpec:
    """Operator-valued coefficient as a combination sum_m alpha_m phi_{k_m}(gamma_m z).

    terms is a tuple of (alpha, order, gamma) with gamma in [0, 1].
    Instances support + and scalar *, so tableau entries compose naturally.
    """

    terms: tuple[tuple[float, int, float], ...]

    def __call__(self, z) -> complex | np.ndarray:
        zs = np.asarray(z, dtype=complex)
        out = np.zeros(zs.shape, dtype=complex)
        flat_out = out.ravel()
        flat_z = zs.ravel()
        for i, w in enumerate(flat_z):
            flat_out[i] = sum(a * phi_scalar(k, g * w) for a, k, g in self.terms)
        if np.isscalar(z) or np.ndim(z) == 0:
            return complex(out)
        return out

    @property
    def at_zero(self) -> float:
        """Value at z = 0: sum alpha_m / k_m!."""
        return sum(a / math.factorial(k) for a, k, _ in self.terms)

    def __add__(self, other: "MultiplierSpec") -> "MultiplierSpec":
        return MultiplierSpec(self.terms + other.terms)

    def __sub__(self, other: "MultiplierSpec") -> "MultiplierSpec":
        return self + (-1.0) * other

    def __rmul__(self, alpha: float) -> "MultiplierSpec":
        return MultiplierSpec(tuple((alpha * a, k, g) for a, k, g in self.terms))

    @property
    def is_zero(self) -> bool:
        return all(a == 0.0 for a, _, _ in self.terms)


def phi_multiplier(order: int, gamma: float = 1.0, alpha: float = 1.0) -> MultiplierSpec:
    """The single-term spec alpha * phi_order(gamma z)."""
    return MultiplierSpec(((alpha, order, gamma),))


ZERO_MULTIPLIER = MultiplierSpec(())


def multiplier_table(g, scale: float, n_tau: int) -> np.ndarray:
    """Per-mode multiplier values g(-i k scale) in FFT layout.

    The Nyquist slot is set to the mean of the two redundant modes
    k = +-n/2, which preserves conjugate symmetry for real data.  g may be
    a MultiplierSpec or any callable on complex arguments.
    """
    k = fourier_modes(n_tau).astype(float)
    z = -1j * k * scale
    tab = np.asarray(g(z), dtype=complex)
    ny = n_tau // 2
    z_ny = -1j * (ny * scale)
    tab[ny] = 0.5 * (complex(g(z_ny)) + complex(g(-z_ny)))
    return tab


def apply_multiplier(g, scale: float, f: TauField) -> TauField:
    """Apply g((scale) d_tau) as a Fourier multiplier to f.

    With g = phi_0 this is the backward shift by scale; a full period
    scale = 2*pi reproduces f.
    """
    tab = multiplier_table(g, scale, f.n_tau)
    return TauField.from_coeffs(f.coeffs * tab, real=f.is_real)


def evaluate_at(f: TauField, tau_star: float) -> np.ndarray:
    """Trigonometric interpolation at tau_star, symmetrizing the Nyquist pair.

    At a grid node this reproduces the stored sample; for real fields the
    result is real.
    """
    n = f.n_tau
    k = fourier_modes(n)
    waves = np.exp(1j * k * tau_star)
    waves[n // 2] = math.cos((n // 2) * tau_star)
    out = f.coeffs @ waves
    return out.real if f.is_real else out


def stack_fields(fields: Sequence[TauField]) -> TauField:
    return TauField(np.vstack([f.values for f in fields]))


def split_field(f: TauField, dims: Sequence[int]) -> list[TauField]:
    out, row = [], 0
    for d in dims:
        out.append(TauField(f.values[row : row + d]))
        row += d
    return out
