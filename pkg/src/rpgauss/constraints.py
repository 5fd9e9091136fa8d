"""Linear constant-coefficient constraints on the Gaussian field.

A constraint is a differential operator D applied pointwise, D[phi](x) = 0.
In momentum space each operator is the matrix symbol D(p) = sum_alpha
coeff(alpha) (i p)^alpha.  Three covariances realize the constrained theory:

* projected: test functions are projected onto the pointwise kernel of the
  stacked symbols before the free covariance integral,
* penalized at strength a with mollifier scale lam (infinite volume): the
  per-momentum K x K matrix inverse
      [ (p^2+1) I + a sigma_hat(p/lam)^2 sum_i D_i(p)^dag D_i(p) ]^{-1},
* penalized at finite volume (penalty restricted to the ball B(0,r)): the
  exact Gaussian with precision  P + a S  on the lattice, solved matrix-free.

The convergence sweep tabulates all three along a cutoff schedule; the gaps
shrink like O(1/a).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import SolverError
from .free import Mollifier, QuadratureConfig, _covariance_quadrature, free_covariance
from .interaction import CutoffSchedule, extract_limit
from .lattice import LatticeSpec, dft_forward, dft_inverse
from .regions import Ball
from .testfunctions import TestFunction, eval_fourier

__all__ = [
    "DiffOperator",
    "ConstraintSet",
    "symbol_matrix",
    "projector",
    "constrained_covariance",
    "penalized_covariance",
    "lattice_penalized_exact",
    "theorem2_sweep",
    "identity_constraint",
    "divergence_constraint",
    "laplacian_constraint",
]


@dataclass(frozen=True)
class DiffOperator:
    """Constant-coefficient linear differential operator.

    ``terms`` maps a multi-index alpha (length D tuple) to a real matrix of
    shape (rows, K); the operator is sum_alpha coeff(alpha) * d^alpha.
    """

    name: str
    terms: tuple  # ((alpha, matrix-as-nested-tuple), ...)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("operator needs at least one term")
        shapes = {np.asarray(m).shape for _, m in self.terms}
        if len(shapes) != 1:
            raise ValueError("all coefficient matrices must share one shape")
        lens = {len(a) for a, _ in self.terms}
        if len(lens) != 1:
            raise ValueError("all multi-indices must have the same length")

    @property
    def D(self) -> int:
        return len(self.terms[0][0])

    @property
    def rows(self) -> int:
        return np.asarray(self.terms[0][1]).shape[0]

    @property
    def K(self) -> int:
        return np.asarray(self.terms[0][1]).shape[1]

    def symbol(self, p: np.ndarray) -> np.ndarray:
        """D(p) = sum_alpha coeff(alpha) (i p)^alpha, shape (..., rows, K)."""
        p = np.asarray(p, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite momentum")
        out = np.zeros(p.shape[:-1] + (self.rows, self.K), dtype=complex)
        for alpha, mat in self.terms:
            mono = np.ones(p.shape[:-1], dtype=complex)
            for d, a in enumerate(alpha):
                if a:
                    mono = mono * (1j * p[..., d]) ** a
            out += mono[..., None, None] * np.asarray(mat, dtype=float)
        return out


def symbol_matrix(op: DiffOperator, p: np.ndarray) -> np.ndarray:
    return op.symbol(p)


def _as_terms(terms):
    return tuple(
        (tuple(int(a) for a in alpha), tuple(tuple(float(x) for x in row) for row in np.atleast_2d(mat)))
        for alpha, mat in terms
    )


def identity_constraint(D: int, K: int) -> DiffOperator:
    """kappa = phi (kills every component)."""
    return DiffOperator(name="identity", terms=_as_terms([((0,) * D, np.eye(K))]))


def divergence_constraint(D: int) -> DiffOperator:
    """kappa = sum_d d_d phi_d for a K=D vector field."""
    terms = []
    for d in range(D):
        alpha = tuple(1 if i == d else 0 for i in range(D))
        row = np.zeros((1, D))
        row[0, d] = 1.0
        terms.append((alpha, row))
    return DiffOperator(name="divergence", terms=_as_terms(terms))


def laplacian_constraint(D: int, K: int = 1) -> DiffOperator:
    """kappa = lap phi, one row per component."""
    terms = []
    for d in range(D):
        alpha = tuple(2 if i == d else 0 for i in range(D))
        terms.append((alpha, np.eye(K)))
    return DiffOperator(name="laplacian", terms=_as_terms(terms))


@dataclass(frozen=True)
class ConstraintSet:
    """A finite family of linear constraints with a shared rank tolerance.

    The rank tolerance decides which singular values of the stacked symbol
    count as zero when building the kernel projector; momenta whose smallest
    retained singular value sits within a factor 10 of the cut are flagged
    (the projector is discontinuous at rank drops, e.g. p = 0, but those are
    measure-zero sets the quadratures are insensitive to).
    """

    ops: tuple
    tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.ops:
            ks = {op.K for op in self.ops}
            if len(ks) != 1:
                raise ValueError("all operators must act on the same K components")
        if not 0 < self.tol <= 1e-6:
            raise ValueError("rank tolerance must lie in (0, 1e-6]")

    @property
    def K(self) -> int:
        return self.ops[0].K if self.ops else 0

    @property
    def total_rows(self) -> int:
        return sum(op.rows for op in self.ops)

    def stacked_symbol(self, p: np.ndarray) -> np.ndarray:
        """All symbols stacked vertically, shape (..., total_rows, K)."""
        return np.concatenate([op.symbol(p) for op in self.ops], axis=-2)

    def projector(self, p: np.ndarray, return_flags: bool = False):
        """Orthogonal projector onto the intersection of the symbol kernels.

        Computed from the SVD of the stacked symbol at each momentum;
        momenta where all symbols vanish get the identity.
        """
        p = np.atleast_2d(np.asarray(p, dtype=float))
        K = self.K
        if not self.ops:
            eye = np.broadcast_to(np.eye(K, dtype=complex), p.shape[:-1] + (K, K))
            return (eye, np.zeros(p.shape[:-1], bool)) if return_flags else eye
        A = self.stacked_symbol(p)
        _, s, Vh = np.linalg.svd(A, full_matrices=True)
        smax = s[..., 0]
        s_full = np.zeros(p.shape[:-1] + (K,))
        s_full[..., : s.shape[-1]] = s
        null = s_full <= (self.tol * smax)[..., None]
        Pi = np.einsum("...ji,...j,...jk->...ik", np.conj(Vh), null.astype(float), Vh)
        if not return_flags:
            return Pi
        kept = np.where(null, np.inf, s_full)
        smallest_kept = kept.min(axis=-1)
        flags = np.isfinite(smallest_kept) & (smallest_kept < 10 * self.tol * np.maximum(smax, 1e-300))
        return Pi, flags

    def penalty_matrix(self, p: np.ndarray) -> np.ndarray:
        """sum_i D_i(p)^dag D_i(p), hermitian PSD, shape (..., K, K)."""
        A = self.stacked_symbol(p)
        return np.einsum("...ri,...rk->...ik", np.conj(A), A)

    def symbol_grid(self, spec: LatticeSpec) -> np.ndarray:
        """Stacked symbol on the momentum grid, shape (total_rows, K) + (N,)*D."""
        return _symbol_grid(self, spec)

    def apply(self, spec: LatticeSpec, fields: np.ndarray) -> np.ndarray:
        """kappa[phi] on the lattice for a batch, (B, K)+(N,)*D -> (B, rows)+(N,)*D."""
        S = self.symbol_grid(spec)
        phihat = dft_forward(spec, fields)
        khat = np.einsum("rk...,bk...->br...", S, phihat)
        return np.ascontiguousarray(dft_inverse(spec, khat).real)

    def apply_adjoint(self, spec: LatticeSpec, kappa: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`apply` w.r.t. the plain site dot product."""
        S = self.symbol_grid(spec)
        khat = dft_forward(spec, kappa)
        phihat = np.einsum("rk...,br...->bk...", np.conj(S), khat)
        return np.ascontiguousarray(dft_inverse(spec, phihat).real)


@lru_cache(maxsize=16)
def _symbol_grid_cached(cs_key, spec: LatticeSpec):
    cs, = cs_key
    P = spec.momentum_grid()
    S = cs.stacked_symbol(P)  # (N^D, rows, K)
    S = np.moveaxis(S, 0, -1).reshape((cs.total_rows, cs.K) + spec.shape)
    S.setflags(write=False)
    return S


def _symbol_grid(cs: ConstraintSet, spec: LatticeSpec):
    return _symbol_grid_cached((cs,), spec)


def projector(cs: ConstraintSet, p: np.ndarray, return_flags: bool = False):
    return cs.projector(p, return_flags=return_flags)


# ---------------------------------------------------------------------------
# Covariances


def constrained_covariance(f: TestFunction, g: TestFunction, cs: ConstraintSet,
                           quad: QuadratureConfig) -> float:
    """Projected covariance: free integrand with Pi(p) applied to both transforms."""
    if not cs.ops:
        return free_covariance(f, g, quad)

    def weight(P, fhat, ghat):
        Pi = cs.projector(P)
        pf = np.einsum("...ik,...k->...i", Pi, fhat)
        pg = np.einsum("...ik,...k->...i", Pi, ghat)
        return pf, pg

    return _covariance_quadrature(f, g, quad, weight)


def penalized_covariance(f: TestFunction, g: TestFunction, cs: ConstraintSet,
                         a: float, mollifier: Mollifier, quad: QuadratureConfig) -> float:
    """Infinite-volume penalized covariance: per-momentum hermitian solve of

        [ (p^2+1) I + a sigma_hat(p/lam)^2 sum_i D_i(p)^dag D_i(p) ] u = ghat.
    """
    if a < 0:
        raise ValueError("penalty strength must be >= 0")
    if a == 0 or not cs.ops:
        return free_covariance(f, g, quad)
    K = cs.K
    lam = mollifier.lam

    if quad.scheme == "lattice-momentum-sum":
        spec = quad.lattice
        P = spec.momentum_grid()
        fhat = eval_fourier(f, P)
        ghat = eval_fourier(g, P)
        psq = np.sum(P**2, axis=-1)
        sig2 = mollifier.sigma_hat(np.sqrt(psq) / lam) ** 2
        A = (psq + 1.0)[:, None, None] * np.eye(K) + (a * sig2)[:, None, None] * cs.penalty_matrix(P)
        try:
            u = np.linalg.solve(A, ghat[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:  # pragma: no cover - matrix is HPD
            raise SolverError(f"penalized node solve failed: {exc}") from exc
        return float(np.sum(np.conj(fhat) * u).real / spec.volume)

    def weight(P, fhat, ghat):
        psq = np.sum(P**2, axis=-1)
        sig2 = mollifier.sigma_hat(np.sqrt(psq) / lam, tail_zero=True) ** 2
        A = (psq + 1.0)[:, None, None] * np.eye(K) + (a * sig2)[:, None, None] * cs.penalty_matrix(P)
        u = np.linalg.solve(A, ghat[..., None])[..., 0]
        # fold the resolvent into ghat and cancel the driver's 1/(p^2+1)
        return fhat, u * (psq + 1.0)[:, None]

    return _covariance_quadrature(f, g, quad, weight)


def lattice_penalized_exact(f: TestFunction, g: TestFunction, cs: ConstraintSet,
                            a: float, mollifier: Mollifier | None, r: float,
                            spec: LatticeSpec, method: str = "auto",
                            tol: float = 1e-10, maxiter: int = 5000) -> float:
    """Finite-volume penalized covariance by exact Gaussian linear algebra.

    The Gaussian has precision  A = P + a S  with P the free lattice precision
    (symbol p^2 + 1) and S the penalty form of the constraints, mollified and
    restricted to the ball B(0, r).  Returns <v_f, A^{-1} v_g> with pairing
    vectors v = h^D * (lattice samples), which reduces to the momentum-sum
    free covariance at a = 0 and to the infinite-volume formula when the ball
    covers the torus.

    Solved matrix-free by conjugate gradients preconditioned with the free
    covariance; ``method='dense'`` assembles A explicitly (small lattices).
    """
    f.validate_on(spec)
    g.validate_on(spec)
    if a < 0:
        raise ValueError("penalty strength must be >= 0")
    if r >= np.sqrt(spec.D) * spec.L / 2:
        # the ball covers the whole torus; the penalty acts everywhere
        mask = np.ones(spec.shape, dtype=bool)
    else:
        mask = Ball(center=(0.0,) * spec.D, radius=float(r)).mask(spec)
    hD = spec.h**spec.D
    psq1 = spec.psq() + 1.0
    smooth = None if mollifier is None else mollifier.multiplier(spec)

    def apply_A(batch: np.ndarray) -> np.ndarray:
        # batch (B, K) + shape
        free_part = dft_inverse(spec, psq1 * dft_forward(spec, batch)).real
        if a == 0 or not cs.ops:
            return hD * free_part
        u = batch if smooth is None else dft_inverse(spec, smooth * dft_forward(spec, batch)).real
        kappa = cs.apply(spec, u) * mask
        v = cs.apply_adjoint(spec, kappa)
        if smooth is not None:
            v = dft_inverse(spec, smooth * dft_forward(spec, v)).real
        return hD * (free_part + a * v)

    n = spec.K * spec.n_sites
    v_g = hD * g.values(spec)
    v_f = hD * f.values(spec)

    if method == "auto":
        method = "dense" if n <= 512 else "cg"
    if method == "dense":
        eye = np.eye(n).reshape((n, spec.K) + spec.shape)
        A = apply_A(eye).reshape(n, n)
        u = np.linalg.solve(A, v_g.ravel())
    else:
        op = LinearOperator((n, n), matvec=lambda x: apply_A(
            x.reshape((1, spec.K) + spec.shape)).ravel())
        precond = LinearOperator((n, n), matvec=lambda x: (
            dft_inverse(spec, dft_forward(spec, x.reshape((spec.K,) + spec.shape)) / psq1).real
            / hD).ravel())
        u, info = cg(op, v_g.ravel(), rtol=tol, atol=0.0, maxiter=maxiter, M=precond)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge (info={info})")
    return float(v_f.ravel() @ u)


# ---------------------------------------------------------------------------
# Theorem-2 convergence sweeps


@dataclass
class SweepRow:
    n: int
    a: float
    lam: float
    r: float
    C_aLr: float
    C_aLinf: float
    C_kappa: float

    @property
    def gap_volume(self) -> float:
        return abs(self.C_aLr - self.C_aLinf)

    @property
    def gap_penalty(self) -> float:
        return abs(self.C_aLinf - self.C_kappa)

    @property
    def gap_total(self) -> float:
        return abs(self.C_aLr - self.C_kappa)


@dataclass
class SweepResult:
    rows: list
    converged: bool
    limit_message: str

    def column(self, name):
        return [getattr(row, name) for row in self.rows]


def theorem2_sweep(f: TestFunction, g: TestFunction, cs: ConstraintSet,
                   schedule: CutoffSchedule, spec: LatticeSpec,
                   n_values=None, gap_tolerance: float = 1e-3) -> SweepResult:
    """Tabulate C_{a,lam,r}, C_{a,lam,inf} and C_kappa along the schedule.

    The a_n, lam_n, r_n come from the schedule (a is required here); the gap
    |C_{a,lam,r} - C_kappa| is fed to the convergence diagnostic.
    """
    if schedule.a is None:
        raise ValueError("theorem-2 sweep needs a penalty-strength law a_n")
    if n_values is None:
        n_values = range(1, 7)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    c_kappa = constrained_covariance(f, g, cs, quad)
    rows = []
    for n in n_values:
        pt = schedule.at(n)
        moll = Mollifier.for_lattice(spec, pt.lam)
        c_inf = penalized_covariance(f, g, cs, pt.a, moll, quad)
        c_fin = lattice_penalized_exact(f, g, cs, pt.a, moll, pt.r, spec)
        rows.append(SweepRow(n=n, a=pt.a, lam=pt.lam, r=pt.r,
                             C_aLr=c_fin, C_aLinf=c_inf, C_kappa=c_kappa))
    gaps = [row.gap_total for row in rows]
    if len(gaps) >= 4:
        lim = extract_limit(gaps, tolerance=gap_tolerance)
        converged = lim.converged and (abs(lim.value) <= gap_tolerance if lim.value is not None else False)
        message = lim.message
    else:
        converged = gaps[-1] <= gap_tolerance
        message = "short sweep: compared final gap against tolerance"
    return SweepResult(rows=rows, converged=converged, limit_message=message)
