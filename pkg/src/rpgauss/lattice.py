"""Periodic lattice, discrete Fourier transforms and spectral multipliers.

The torus [-L/2, L/2)^D is discretized with N sites per axis (N even), so
site positions are x_j = -L/2 + h*j with h = L/N.  The transform convention
is the Riemann-sum discretization of  fhat(p) = integral exp(-i p x) f(x) dx,

    fhat(p) = h^D sum_x exp(-i p.x) f(x),      p in {2 pi k / L},

with k per axis running over [-N/2, N/2) in FFT order.  The inverse is
(1/L^D) sum_p exp(i p.x) fhat(p), so the round trip is exact and discrete
Parseval holds:  h^D sum_x |f|^2 = (1/L^D) sum_p |fhat|^2.

Fields carry their K components in the leading axis; all transforms act on
the trailing D axes, so arbitrary batch axes may be prepended.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "LatticeSpec",
    "LatticeField",
    "build_lattice",
    "dft_forward",
    "dft_inverse",
    "laplacian_power",
]


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic grid: D dimensions, N sites per axis, side L, K components."""

    D: int
    N: int
    L: float
    K: int

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.D

    @property
    def n_sites(self) -> int:
        return self.N**self.D

    @property
    def volume(self) -> float:
        return self.L**self.D

    def axis_coords(self) -> np.ndarray:
        """Site positions along one axis, -L/2 + h*j."""
        return -self.L / 2 + self.h * np.arange(self.N)

    def axis_momenta(self) -> np.ndarray:
        """Momenta 2 pi k / L along one axis, in FFT order (Nyquist negative)."""
        return 2 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    def momentum_grid(self) -> np.ndarray:
        """All lattice momenta, shape (N^D, D), FFT ordering flattened C-style."""
        axes = np.meshgrid(*([self.axis_momenta()] * self.D), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)

    def psq(self) -> np.ndarray:
        """|p|^2 on the full momentum grid, shape (N,)*D."""
        return _psq(self)

    def position_grid(self) -> np.ndarray:
        """All site positions, shape (N^D, D)."""
        axes = np.meshgrid(*([self.axis_coords()] * self.D), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=-1)


@lru_cache(maxsize=32)
def _psq(spec: LatticeSpec) -> np.ndarray:
    p = spec.axis_momenta()
    out = np.zeros(spec.shape)
    for d in range(spec.D):
        out = out + (p**2).reshape((-1,) + (1,) * (spec.D - 1 - d))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _origin_phase(spec: LatticeSpec) -> np.ndarray:
    # exp(-i p x_0) with x_0 = -L/2 collapses to (-1)^k per axis.
    k = np.rint(np.fft.fftfreq(spec.N) * spec.N).astype(int)
    s = np.ones(spec.shape)
    sign = (-1.0) ** k
    for d in range(spec.D):
        s = s * sign.reshape((-1,) + (1,) * (spec.D - 1 - d))
    s.setflags(write=False)
    return s


@dataclass
class LatticeField:
    """A real K-component field sampled on the lattice, shape (K,) + (N,)*D."""

    spec: LatticeSpec
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        expected = (self.spec.K,) + self.spec.shape
        if self.data.shape != expected:
            raise ValueError(
                f"field shape {self.data.shape} does not match lattice {expected}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("field contains non-finite entries")

    def pairing(self, g_values: np.ndarray) -> float:
        """<g, phi> = h^D sum_x g(x).phi(x) for g sampled like this field."""
        return float(self.spec.h**self.spec.D * np.sum(g_values * self.data))


def build_lattice(D: int, N: int, L: float, K: int) -> LatticeSpec:
    """Validated lattice constructor.  N must be even so the momentum grid
    is symmetric under p -> -p up to the Nyquist mode."""
    if D < 1:
        raise ValueError(f"dimension must be >= 1, got {D}")
    if N < 2 or N % 2 != 0:
        raise ValueError(f"sites per axis must be even and >= 2, got {N}")
    if not L > 0:
        raise ValueError(f"side length must be positive, got {L}")
    if K < 1:
        raise ValueError(f"field components must be >= 1, got {K}")
    return LatticeSpec(D=D, N=N, L=float(L), K=K)


def _spatial_axes(spec: LatticeSpec, data: np.ndarray) -> tuple:
    return tuple(range(data.ndim - spec.D, data.ndim))


def dft_forward(spec: LatticeSpec, data: np.ndarray) -> np.ndarray:
    """Forward transform on the trailing D axes: fhat(p) = h^D sum e^{-ipx} f."""
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite input to dft_forward")
    axes = _spatial_axes(spec, data)
    return spec.h**spec.D * np.fft.fftn(data, axes=axes) * _origin_phase(spec)


def dft_inverse(spec: LatticeSpec, data: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft_forward`; returns a complex array."""
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite input to dft_inverse")
    axes = _spatial_axes(spec, data)
    return np.fft.ifftn(data * _origin_phase(spec), axes=axes) / spec.h**spec.D


def apply_multiplier(spec: LatticeSpec, data: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    """Apply a Fourier multiplier m(p) to a real field; returns a real array.

    The multiplier must satisfy m(-p) = conj(m(p)) on the grid (true for any
    even real multiplier), so the result of the round trip is real up to
    rounding and the imaginary part is discarded.
    """
    out = dft_inverse(spec, multiplier * dft_forward(spec, data))
    return np.ascontiguousarray(out.real)


def laplacian_power(spec: LatticeSpec, data: np.ndarray, j: int) -> np.ndarray:
    """(nabla^2)^j as the Fourier multiplier (-p^2)^j with exact grid momenta."""
    if j < 0:
        raise ValueError("Laplacian power must be >= 0")
    if j == 0:
        return np.asarray(data, dtype=float)
    return apply_multiplier(spec, data, (-_psq(spec)) ** j)
