"""The free Gaussian measure: covariance quadrature, sampling, mollification.

The measure is the centered Gaussian with covariance

    C(f, g) = (2 pi)^-D  integral  conj(fhat(p)) ghat(p) / (p^2 + 1)  dp,

diagonal in the K field components.  On the lattice the integral becomes the
momentum sum (1/L^D) sum_p, and the spectral sampler below realizes exactly
that covariance for pairings <g, phi>, so the momentum sum doubles as an
exact oracle for the sampler.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate, special

from .errors import QuadratureError
from .lattice import LatticeField, LatticeSpec, apply_multiplier, dft_forward, dft_inverse
from .testfunctions import TestFunction, eval_fourier

__all__ = [
    "Mollifier",
    "QuadratureConfig",
    "free_covariance",
    "lattice_covariance",
    "sample_gff",
    "sample_batch",
    "derive_rng",
    "mollify",
    "save_field",
    "load_field",
]


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Deterministic RNG stream: root seed plus a counter path.

    Uses numpy's SeedSequence spawn keys, so (seed, path) -> stream is a pure
    function and disjoint paths give statistically independent streams.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


# ---------------------------------------------------------------------------
# Mollifier


class Mollifier:
    """The standard bump exp(-1/(1-|x|^2)) on B(0,1), unit mass, rescaled to
    sigma_lam(x) = lam^D sigma(lam x).

    Its Fourier transform has no closed form; sigma_hat is tabulated once by
    radial Gauss-Legendre quadrature (error well below 1e-8 for the smooth
    integrand) on ``n_table`` nodes and evaluated by cubic interpolation,
    clipped to [-1, 1] which the exact transform satisfies (sigma >= 0 with
    unit integral).  sigma_hat is real and radial; sigma_hat(0) = 1.
    """

    def __init__(self, D: int, lam: float, q_max: float = 64.0,
                 n_table: int = 4096, n_quad: int = 512):
        if lam <= 0:
            raise ValueError("mollifier scale must be positive")
        self.D = D
        self.lam = float(lam)
        self.q_max = float(q_max)
        s, ws = np.polynomial.legendre.leggauss(n_quad)
        s = 0.5 * (s + 1.0)  # [0, 1]
        ws = 0.5 * ws
        prof = _bump_profile(s)
        q = np.linspace(0.0, self.q_max, n_table)
        nu = D / 2 - 1
        kern = _scaled_bessel(nu, np.outer(q, s))
        table = (2 * np.pi) ** (D / 2) * kern @ (ws * prof * s ** (D - 1))
        self._norm = table[0]
        table = table / self._norm
        self._spline = interpolate.CubicSpline(q, table, extrapolate=False)
        self._mult_cache = {}

    @classmethod
    def for_lattice(cls, spec: LatticeSpec, lam: float) -> "Mollifier":
        """Build with a table covering every grid momentum of ``spec``."""
        if 1.0 / lam >= spec.L / 2:
            raise ValueError(
                f"mollifier support 1/lam = {1/lam:g} must be smaller than L/2 = {spec.L/2:g}"
            )
        q_max = np.sqrt(spec.D) * np.pi * spec.N / spec.L / lam * 1.001
        return cls(spec.D, lam, q_max=max(q_max, 1.0))

    def sigma_hat(self, q, tail_zero: bool = False) -> np.ndarray:
        """sigma_hat of the unit-scale profile at radial frequency |q|.

        With ``tail_zero`` frequencies beyond the table are treated as zero
        (the transform decays super-polynomially); otherwise they raise.
        """
        q = np.abs(np.asarray(q, dtype=float))
        out = self._spline(np.minimum(q, self.q_max))
        beyond = q > self.q_max
        if np.any(beyond):
            if not tail_zero:
                raise ValueError(
                    f"sigma_hat requested at q={q.max():g} beyond table end {self.q_max:g}"
                )
            out = np.where(beyond, 0.0, out)
        return np.clip(out, -1.0, 1.0)

    def multiplier(self, spec: LatticeSpec) -> np.ndarray:
        """sigma_hat(p / lam) on the momentum grid of ``spec``, shape (N,)*D."""
        key = (spec, self.lam)
        if key not in self._mult_cache:
            m = self.sigma_hat(np.sqrt(spec.psq()) / self.lam)
            m.setflags(write=False)
            self._mult_cache[key] = m
        return self._mult_cache[key]

    def values(self, spec: LatticeSpec) -> np.ndarray:
        """Real-space sigma_lam sampled on the lattice, centered at 0, (N,)*D.

        The unnormalized q=0 table value equals S_{D-1} times the radial
        integral of the profile, i.e. exactly the profile's mass, so 1/_norm
        is the unit-mass normalization constant.
        """
        x = spec.position_grid()
        r = self.lam * np.linalg.norm(x, axis=-1)
        v = np.where(r < 1.0, _bump_profile(np.minimum(r, 1.0 - 1e-15)), 0.0)
        return self.lam**self.D / self._norm * v.reshape(spec.shape)


def _bump_profile(s: np.ndarray) -> np.ndarray:
    return np.exp(-1.0 / (1.0 - s**2))


def _scaled_bessel(nu: float, z: np.ndarray) -> np.ndarray:
    """J_nu(z) / z^nu, with its analytic limit 1/(2^nu Gamma(nu+1)) at z=0."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-6
    zs = np.where(small, 1.0, z)
    out = special.jv(nu, zs) / zs**nu
    limit = 1.0 / (2.0**nu * special.gamma(nu + 1))
    return np.where(small, limit * (1 - z**2 / (4 * (nu + 1))), out)


def mollify(field: LatticeField, mollifier: Mollifier) -> LatticeField:
    """phi -> phi * sigma_lam via spectral multiplication sigma_hat(p/lam)."""
    spec = field.spec
    if 1.0 / mollifier.lam >= spec.L / 2:
        raise ValueError("mollifier support must fit in half the torus")
    out = apply_multiplier(spec, field.data, mollifier.multiplier(spec))
    return LatticeField(spec=spec, data=out)


# ---------------------------------------------------------------------------
# Covariance quadrature


@dataclass(frozen=True)
class QuadratureConfig:
    """How covariance integrals are evaluated.

    ``lattice-momentum-sum`` sums over the grid momenta of ``lattice``;
    ``radial-adaptive`` integrates over continuum momenta (adaptive 1D
    quadrature for D=1, tensor-product adaptive for D>=2 over a box chosen
    from the integrand decay).
    """

    scheme: str = "lattice-momentum-sum"
    lattice: LatticeSpec | None = None
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    p_max: float | None = None

    def __post_init__(self):
        if self.scheme not in ("lattice-momentum-sum", "radial-adaptive"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.scheme == "lattice-momentum-sum" and self.lattice is None:
            raise ValueError("lattice-momentum-sum needs a lattice")


def free_covariance(f: TestFunction, g: TestFunction, quad: QuadratureConfig) -> float:
    """C(f, g) of the free measure under the configured quadrature."""
    return _covariance_quadrature(f, g, quad, weight=None)


def _covariance_quadrature(f, g, quad, weight) -> float:
    """Shared driver: integrand conj(fhat).W(p).ghat / (p^2+1) with W an
    optional hermitian matrix weight (used by the constraints module)."""
    if quad.scheme == "lattice-momentum-sum":
        spec = quad.lattice
        P = spec.momentum_grid()
        fhat = eval_fourier(f, P)
        ghat = eval_fourier(g, P)
        if weight is not None:
            fhat, ghat = weight(P, fhat, ghat)
        psq = np.sum(P**2, axis=-1)
        vals = np.sum(np.conj(fhat) * ghat, axis=-1) / (psq + 1.0)
        return float(np.sum(vals).real / spec.volume)
    return _continuum_quadrature(f, g, quad, weight)


def _continuum_quadrature(f, g, quad, weight) -> float:
    D = f.D

    def integrand(*p):
        pt = np.array(p)[None, :]
        fhat = eval_fourier(f, pt)
        ghat = eval_fourier(g, pt)
        if weight is not None:
            fhat, ghat = weight(pt, fhat, ghat)
        v = np.sum(np.conj(fhat) * ghat, axis=-1) / (np.sum(pt**2) + 1.0)
        return float(v.real[0])

    norm = (2 * np.pi) ** (-D)
    if D == 1:
        val, err = integrate.quad(
            integrand, -np.inf, np.inf, epsabs=quad.abs_tol, epsrel=quad.rel_tol, limit=400
        )
    else:
        p_max = quad.p_max if quad.p_max is not None else _default_p_max(f, g)
        val, err = integrate.nquad(
            integrand,
            [(-p_max, p_max)] * D,
            opts={"epsabs": quad.abs_tol, "epsrel": quad.rel_tol, "limit": 200},
        )
    val *= norm
    err *= norm
    if err > max(quad.abs_tol, quad.rel_tol * abs(val)):
        raise QuadratureError(
            f"covariance quadrature achieved error {err:.3e} above tolerance",
            estimate=val,
            achieved_error=err,
        )
    return val


def _default_p_max(f, g) -> float:
    wsq = f.width**2 + g.width**2
    return float(np.sqrt(2 * 55.0 / wsq))  # integrand tail below ~1e-24


def lattice_covariance(f: TestFunction, g: TestFunction, spec: LatticeSpec) -> float:
    """Exact lattice covariance of pairings, (1/L^D) sum_p conj(fhat) ghat / (p^2+1).

    This is what :func:`sample_gff` realizes, so it is the sampler's oracle.
    """
    return free_covariance(f, g, QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec))


def lattice_covariance_fhat(fhat: np.ndarray, ghat: np.ndarray, spec: LatticeSpec) -> float:
    """Same momentum sum for precomputed transforms of shape (N^D, K)."""
    psq = np.sum(spec.momentum_grid() ** 2, axis=-1)
    vals = np.sum(np.conj(fhat) * ghat, axis=-1) / (psq + 1.0)
    return float(np.sum(vals).real / spec.volume)


# ---------------------------------------------------------------------------
# Sampling


def sample_batch(spec: LatticeSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n independent free fields at once, shape (n, K) + (N,)*D.

    White noise is colored in momentum space: phihat = what / sqrt(h^D (p^2+1))
    gives E[phihat(p) conj(phihat(p))] = L^D / (p^2 + 1), hence pairings with
    covariance (1/L^D) sum_p conj(fhat) ghat / (p^2+1).  The multiplier is
    even in p, so hermitian symmetry of what survives and the field is real
    (the vanishing imaginary part, including the Nyquist mode's, is dropped).
    """
    w = rng.standard_normal(size=(n, spec.K) + spec.shape)
    what = dft_forward(spec, w)
    mult = 1.0 / np.sqrt(spec.h**spec.D * (spec.psq() + 1.0))
    phi = dft_inverse(spec, what * mult)
    return np.ascontiguousarray(phi.real)


def sample_gff(spec: LatticeSpec, seed: int) -> LatticeField:
    """One free-field sample; a fixed seed gives a bit-identical field."""
    data = sample_batch(spec, derive_rng(seed, 0), 1)[0]
    return LatticeField(spec=spec, data=data)


# ---------------------------------------------------------------------------
# Field snapshots


def save_field(field: LatticeField, path_base: str, seed=None, extra=None) -> None:
    """Write ``path_base``.bin (flat little-endian float64, C order
    (K, N, ..., N)) plus a JSON sidecar with the lattice spec and seed."""
    field.data.astype("<f8").tofile(path_base + ".bin")
    spec = field.spec
    sidecar = {
        "spec": {"D": spec.D, "N": spec.N, "L": spec.L, "K": spec.K},
        "seed": seed,
        "dtype": "<f8",
        "layout": "C order, shape (K,) + (N,)*D",
    }
    if extra:
        sidecar.update(extra)
    tmp = path_base + ".json.tmp"
    with open(tmp, "w") as fh:
        json.dump(sidecar, fh, indent=2)
    os.replace(tmp, path_base + ".json")


def load_field(path_base: str) -> LatticeField:
    with open(path_base + ".json") as fh:
        sidecar = json.load(fh)
    s = sidecar["spec"]
    spec = LatticeSpec(D=s["D"], N=s["N"], L=s["L"], K=s["K"])
    data = np.fromfile(path_base + ".bin", dtype="<f8").reshape((spec.K,) + spec.shape)
    return LatticeField(spec=spec, data=data)
