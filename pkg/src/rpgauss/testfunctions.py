"""Analytic test functions and cylindrical observables.

Two families of smooth localized R^K-valued functions are provided:

* ``gaussian-bump``: A exp(-|x-c|^2 / (2 w^2)) e, whose Fourier transform is
  closed-form, A (2 pi w^2)^{D/2} exp(-w^2 p^2 / 2) exp(-i p.c) e.  Used
  wherever a tight analytic oracle is wanted.
* ``truncated-bump``: the same profile cut off sharply outside the ball
  |x-c| < R, hence genuinely compactly supported.  Its transform is computed
  by product Gauss-Legendre quadrature over the support ball.

A cylindrical observable is F[phi] = f(<g_1,phi>, ..., <g_k,phi>) with f a
bounded continuous outer function from a small closed catalog and g_i test
functions; the pairing is <g,phi> = h^D sum_x g(x).phi(x).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import QuadratureError, SupportError
from .lattice import LatticeSpec

__all__ = [
    "TestFunction",
    "gaussian_bump",
    "truncated_bump",
    "eval_fourier",
    "CosineOuter",
    "BoundedRationalOuter",
    "ClippedPolynomialOuter",
    "CylindricalFunction",
]

GUARD_WIDTHS = 3.0  # guard margin for gaussian-bump tails, in units of w


@dataclass(frozen=True)
class TestFunction:
    """Descriptor of a smooth localized R^K-valued function."""

    family: str
    center: tuple
    width: float
    amplitude: float
    component: tuple
    support_radius: float | None = None

    def __post_init__(self):
        if self.family not in ("gaussian-bump", "truncated-bump"):
            raise ValueError(f"unknown test-function family {self.family!r}")
        if not self.width > 0:
            raise ValueError("width must be positive")
        if self.family == "truncated-bump":
            if self.support_radius is None or not self.support_radius > 0:
                raise ValueError("truncated-bump requires a positive support radius")
        e = np.asarray(self.component, dtype=float)
        if not np.isclose(np.linalg.norm(e), 1.0, atol=1e-12):
            raise ValueError("component vector must have unit norm")

    @property
    def D(self) -> int:
        return len(self.center)

    @property
    def K(self) -> int:
        return len(self.component)

    @property
    def guard_radius(self) -> float:
        """Radius outside which the function is (numerically) negligible."""
        if self.family == "truncated-bump":
            return self.support_radius
        return GUARD_WIDTHS * self.width

    def validate_on(self, spec: LatticeSpec) -> None:
        """Check the support fits strictly inside the torus with its guard."""
        if self.D != spec.D or self.K != spec.K:
            raise SupportError(
                f"test function is (D={self.D}, K={self.K}); lattice is "
                f"(D={spec.D}, K={spec.K})"
            )
        c = np.asarray(self.center)
        if np.any(np.abs(c) + self.guard_radius >= spec.L / 2):
            raise SupportError(
                f"support ball (center {self.center}, radius {self.guard_radius:g}) "
                f"does not fit inside [-L/2, L/2)^D with L={spec.L}"
            )

    def values(self, spec: LatticeSpec) -> np.ndarray:
        """Sample on the lattice, shape (K,) + (N,)*D."""
        self.validate_on(spec)
        x = spec.position_grid()  # (N^D, D)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        prof = self.amplitude * np.exp(-r2 / (2 * self.width**2))
        if self.family == "truncated-bump":
            prof = np.where(r2 < self.support_radius**2, prof, 0.0)
        e = np.asarray(self.component, dtype=float)
        out = e[:, None] * prof[None, :]
        return out.reshape((spec.K,) + spec.shape)

    def scaled(self, factor: float) -> "TestFunction":
        return replace(self, amplitude=self.amplitude * factor)


def gaussian_bump(center, width, amplitude=1.0, component=(1.0,)) -> TestFunction:
    return TestFunction(
        family="gaussian-bump",
        center=tuple(float(c) for c in center),
        width=float(width),
        amplitude=float(amplitude),
        component=tuple(float(e) for e in component),
    )


def truncated_bump(center, width, support_radius, amplitude=1.0, component=(1.0,)) -> TestFunction:
    return TestFunction(
        family="truncated-bump",
        center=tuple(float(c) for c in center),
        width=float(width),
        amplitude=float(amplitude),
        component=tuple(float(e) for e in component),
        support_radius=float(support_radius),
    )


# ---------------------------------------------------------------------------
# Fourier transforms

_GL_ORDER = {1: 160, 2: 80, 3: 40}
_FOURIER_ABS_TOL = 1e-10


def eval_fourier(tf: TestFunction, p: np.ndarray) -> np.ndarray:
    """Fourier transform ghat(p), continuum convention.

    ``p`` has shape (..., D); the result has shape (..., K) and is complex.
    The truncated-bump branch uses fixed-order product Gauss-Legendre
    quadrature over the support ball and raises :class:`QuadratureError`
    (carrying its best estimate) if two quadrature orders disagree by more
    than the 1e-10 absolute target.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if p.shape[-1] != tf.D:
        raise ValueError(f"momentum has dimension {p.shape[-1]}, expected {tf.D}")
    if not np.all(np.isfinite(p)):
        raise ValueError("non-finite momentum")
    if tf.family == "gaussian-bump":
        scalar = _gaussian_fourier_scalar(tf, p)
    else:
        order = _GL_ORDER.get(tf.D)
        if order is None:
            raise NotImplementedError("truncated-bump quadrature supports D <= 3")
        hi = _ball_quadrature(tf, p, order)
        lo = _ball_quadrature(tf, p, int(order * 0.7))
        err = float(np.max(np.abs(hi - lo)))
        if err > _FOURIER_ABS_TOL:
            raise QuadratureError(
                f"ball quadrature for {tf.family} reached |delta|={err:.3e} "
                f"(target {_FOURIER_ABS_TOL:.0e})",
                estimate=hi,
                achieved_error=err,
            )
        scalar = hi
    e = np.asarray(tf.component, dtype=float)
    return scalar[..., None] * e


def _gaussian_fourier_scalar(tf: TestFunction, p: np.ndarray) -> np.ndarray:
    w = tf.width
    psq = np.sum(p**2, axis=-1)
    phase = np.exp(-1j * p @ np.asarray(tf.center))
    return tf.amplitude * (2 * np.pi * w**2) ** (tf.D / 2) * np.exp(-(w**2) * psq / 2) * phase


def _gl_nodes(order: int):
    return np.polynomial.legendre.leggauss(order)


def _ball_quadrature(tf: TestFunction, p: np.ndarray, order: int) -> np.ndarray:
    """integral over |y| < R of A exp(-y^2/2w^2) exp(-i p.y) dy, times the
    translation phase exp(-i p.c).

    The ball is parameterized axis by axis (y_d = s_d(t) t_d with the radius
    shrinking as outer coordinates grow), which keeps the integrand smooth
    and lets plain Gauss-Legendre meet a tight tolerance.
    """
    R = tf.support_radius
    t, wts = _gl_nodes(order)
    theta = 0.5 * np.pi * t  # y = A sin(theta) keeps the nested radii analytic
    D = tf.D
    grids = np.meshgrid(*([theta] * D), indexing="ij")
    wgrids = np.meshgrid(*([0.5 * np.pi * wts] * D), indexing="ij")
    half = np.full(grids[0].shape, R)
    ys = []
    jac = np.ones_like(grids[0])
    for d in range(D):
        y = half * np.sin(grids[d])
        ys.append(y)
        jac = jac * half * np.cos(grids[d]) * wgrids[d]
        half = half * np.cos(grids[d])
    y_pts = np.stack([y.ravel() for y in ys], axis=-1)  # (Q, D)
    jac = jac.ravel()
    prof = tf.amplitude * np.exp(-np.sum(y_pts**2, axis=-1) / (2 * tf.width**2))
    phases = np.exp(-1j * p @ y_pts.T)  # (..., Q)
    inner = phases @ (jac * prof)
    return inner * np.exp(-1j * p @ np.asarray(tf.center))


# ---------------------------------------------------------------------------
# Outer functions (bounded continuous, closed catalog)


@dataclass(frozen=True)
class CosineOuter:
    """f(t) = amplitude * cos(weights . t + bias);  ||f||_inf = |amplitude|."""

    amplitude: float = 1.0
    weights: tuple = (1.0,)
    bias: float = 0.0

    kind = "cosine"

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        s = np.asarray(t) @ np.asarray(self.weights)
        return self.amplitude * np.cos(s + self.bias)


@dataclass(frozen=True)
class BoundedRationalOuter:
    """f(t) = amplitude * s / (1 + s^2) with s = weights . t; sup = |amp|/2."""

    amplitude: float = 1.0
    weights: tuple = (1.0,)

    kind = "bounded-rational"

    @property
    def sup_norm(self) -> float:
        return abs(self.amplitude) / 2

    def __call__(self, t: np.ndarray) -> np.ndarray:
        s = np.asarray(t) @ np.asarray(self.weights)
        return self.amplitude * s / (1 + s**2)


@dataclass(frozen=True)
class ClippedPolynomialOuter:
    """f(t) = clip(poly(s), -bound, bound) with s = weights . t.

    ``coeffs`` are ascending polynomial coefficients in s.
    """

    coeffs: tuple
    bound: float
    weights: tuple = (1.0,)

    kind = "clipped-polynomial"

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError("clip bound must be positive")

    @property
    def sup_norm(self) -> float:
        return self.bound

    def __call__(self, t: np.ndarray) -> np.ndarray:
        s = np.asarray(t) @ np.asarray(self.weights)
        v = np.polynomial.polynomial.polyval(s, np.asarray(self.coeffs))
        return np.clip(v, -self.bound, self.bound)


@dataclass(frozen=True)
class CylindricalFunction:
    """F[phi] = outer(<g_1,phi>, ..., <g_k,phi>)."""

    outer: object
    inner: tuple

    def __post_init__(self):
        object.__setattr__(self, "inner", tuple(self.inner))
        k = len(np.asarray(self.outer.weights))
        if k != len(self.inner):
            raise ValueError(
                f"outer function takes {k} arguments, got {len(self.inner)} inner functions"
            )

    @property
    def sup_norm(self) -> float:
        return self.outer.sup_norm

    def validate_on(self, spec: LatticeSpec) -> None:
        for g in self.inner:
            g.validate_on(spec)

    def inner_values(self, spec: LatticeSpec) -> np.ndarray:
        """Stacked lattice samples of the inner functions, (k, K) + (N,)*D."""
        return np.stack([g.values(spec) for g in self.inner])

    def evaluate_pairings(self, t: np.ndarray) -> np.ndarray:
        """Apply the outer function to pairing values t of shape (..., k)."""
        return self.outer(t)

    def evaluate(self, field) -> float:
        """F[phi] for a single LatticeField."""
        spec = field.spec
        t = np.array([field.pairing(g.values(spec)) for g in self.inner])
        return float(self.outer(t))
