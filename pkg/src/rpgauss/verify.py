"""Symmetry and structure verifiers.

Three checks on the regularized measure:

* reflection positivity: the Gram matrix G_ij = <Theta(F_i) F_j> over
  cylindricals supported in the upper half-space {x_D > 2 delta} must be
  positive semidefinite (up to Monte Carlo error); for the free measure and
  cosine observables G has a closed form through the Gaussian characteristic
  functional E exp(i<h,phi>) = exp(-C(h,h)/2) and must be PSD exactly,
* invariance gaps: |<F_T> - <F>| on shared seeds against the schedule bound
  ||f||_inf * c0 * M_n r_n^{D-1} / lam_n,
* the Markov property: conditional covariance across a separating band
  vanishes for a local precision matrix, by exact Schur-complement algebra.

Transforms are restricted to the exact symmetries of the torus lattice:
translations by lattice vectors, axis permutations, axis flips, and the
time reflection Theta which flips the last coordinate.

The Markov check swaps the nearest-neighbor discrete-Laplacian precision
(-lap_h + 1) in for the spectral symbol p^2 + 1: the latter is not strictly
local in position space on the grid, so conditional independence across a
one-site band holds exactly only for the discrete stencil.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import lil_matrix
from scipy.sparse.csgraph import connected_components

from .errors import SeparationError, SupportError
from .free import Mollifier, lattice_covariance
from .interaction import Lagrangian, SchedulePoint, ratio_from_blocks, run_weighted_chains
from .lattice import LatticeSpec
from .regions import Ball, HalfSpace
from .testfunctions import CosineOuter, CylindricalFunction, TestFunction

__all__ = [
    "EuclideanTransform",
    "translation",
    "axis_permutation",
    "axis_flip",
    "time_reflection",
    "apply_transform",
    "transform_field_data",
    "MCParams",
    "rp_gram",
    "RPGramResult",
    "invariance_gap",
    "calibrate_invariance_constant",
    "InvarianceResult",
    "markov_check",
]


# ---------------------------------------------------------------------------
# Euclidean transforms (lattice-exact subgroup)


@dataclass(frozen=True)
class EuclideanTransform:
    """An exact lattice symmetry of the torus.

    kind 'translation' carries integer step counts per axis; 'permutation' a
    permutation p with T(x)_i = x_{p(i)}; 'flip' the reflected axis index.
    The time reflection Theta is the flip of the last axis.
    """

    kind: str
    steps: tuple | None = None
    perm: tuple | None = None
    axis: int | None = None

    def __post_init__(self):
        if self.kind == "translation":
            if self.steps is None:
                raise ValueError("translation needs integer lattice steps")
        elif self.kind == "permutation":
            if self.perm is None or sorted(self.perm) != list(range(len(self.perm))):
                raise ValueError("permutation must be a permutation of 0..D-1")
        elif self.kind == "flip":
            if self.axis is None:
                raise ValueError("flip needs an axis")
        else:
            raise ValueError(f"unknown transform kind {self.kind!r}")

    def is_identity(self) -> bool:
        if self.kind == "translation":
            return all(s == 0 for s in self.steps)
        if self.kind == "permutation":
            return tuple(self.perm) == tuple(range(len(self.perm)))
        return False

    def point(self, x: np.ndarray, spec: LatticeSpec) -> np.ndarray:
        """T(x), wrapped back into [-L/2, L/2)^D."""
        x = np.asarray(x, dtype=float)
        if self.kind == "translation":
            y = x + spec.h * np.asarray(self.steps, dtype=float)
        elif self.kind == "permutation":
            y = x[..., list(self.perm)]
        else:
            y = x.copy()
            y[..., self.axis] = -y[..., self.axis]
        # wrap only out-of-range coordinates so in-range ones stay bit-exact
        wrapped = (y + spec.L / 2) % spec.L - spec.L / 2
        return np.where((y >= -spec.L / 2) & (y < spec.L / 2), y, wrapped)


def translation(steps) -> EuclideanTransform:
    return EuclideanTransform(kind="translation", steps=tuple(int(s) for s in steps))


def axis_permutation(perm) -> EuclideanTransform:
    return EuclideanTransform(kind="permutation", perm=tuple(int(p) for p in perm))


def axis_flip(axis: int) -> EuclideanTransform:
    return EuclideanTransform(kind="flip", axis=int(axis))


def time_reflection(D: int) -> EuclideanTransform:
    """Theta: (x_1, ..., x_D) -> (x_1, ..., -x_D)."""
    return axis_flip(D - 1)


def apply_transform(tf, T: EuclideanTransform, spec: LatticeSpec):
    """Transform a TestFunction or CylindricalFunction: centers map by T.

    The profiles are radial, so only centers move; the transformed object is
    validated against the torus guard margins.  F_T[phi] = F[T^{-1} phi] is
    realized by transforming every inner function.
    """
    if isinstance(tf, CylindricalFunction):
        inner = tuple(apply_transform(g, T, spec) for g in tf.inner)
        return CylindricalFunction(outer=tf.outer, inner=inner)
    if not isinstance(tf, TestFunction):
        raise TypeError(f"cannot transform {type(tf).__name__}")
    c = T.point(np.asarray(tf.center), spec)
    out = replace(tf, center=tuple(float(v) for v in c))
    out.validate_on(spec)
    return out


def transform_field_data(data: np.ndarray, T: EuclideanTransform, spec: LatticeSpec) -> np.ndarray:
    """(T phi)(x) = phi(T^{-1} x) for sampled fields, exact on the grid.

    ``data`` has shape (..., N, ..., N) with D trailing spatial axes.
    """
    ax0 = data.ndim - spec.D
    if T.kind == "translation":
        return np.roll(data, shift=tuple(T.steps), axis=tuple(range(ax0, data.ndim)))
    if T.kind == "permutation":
        inv = np.argsort(np.asarray(T.perm))
        axes = list(range(ax0)) + [ax0 + int(inv[i]) for i in range(spec.D)]
        return np.transpose(data, axes)
    # axis flip: site x_k -> -x_k is the index map k -> (N - k) mod N
    idx = (-np.arange(spec.N)) % spec.N
    return np.take(data, idx, axis=ax0 + T.axis)


# ---------------------------------------------------------------------------
# Reflection positivity


@dataclass(frozen=True)
class MCParams:
    samples: int
    seed: int


@dataclass
class RPGramResult:
    gram: np.ndarray
    gram_raw: np.ndarray
    min_eigenvalue: float
    stderr: float
    entry_stderr: np.ndarray
    method: str
    region: str
    delta: float


def _upper_half_space_check(F_list, delta: float, spec: LatticeSpec) -> None:
    for i, F in enumerate(F_list):
        for g in F.inner:
            lo = g.center[spec.D - 1] - g.guard_radius
            if lo <= 2 * delta:
                raise SupportError(
                    f"observable {i}: inner function support reaches "
                    f"x_D = {lo:g} <= 2 delta = {2*delta:g}; reflection "
                    f"positivity needs support in the upper half-space"
                )


def _rp_region(spec: LatticeSpec, r: float, delta: float, mode: str):
    ball = Ball(center=(0.0,) * spec.D, radius=r)
    if mode == "full-ball":
        return ball
    if mode == "split":
        ax = spec.D - 1
        upper = ball & HalfSpace(axis=ax, offset=2 * delta, sign=+1)
        lower = ball & HalfSpace(axis=ax, offset=-2 * delta, sign=-1)
        return upper | lower
    raise ValueError(f"unknown reflection-positivity region mode {mode!r}")


def rp_gram(F_list, L: Lagrangian, point: SchedulePoint, spec: LatticeSpec,
            mc: MCParams, region_mode: str = "full-ball",
            method: str = "mc") -> RPGramResult:
    """Gram matrix G_ij = <Theta(F_i) . F_j> under the regularized measure.

    All entries are estimated on one shared sample stream, so the Gram keeps
    its square structure sample by sample.  The symmetrized Gram's minimum
    eigenvalue carries a leave-one-block-out jackknife standard error.

    ``method='closed-form'`` evaluates the free-measure Gram exactly through
    the Gaussian characteristic functional (cosine outers, zero Lagrangian).
    """
    delta = point.delta
    _upper_half_space_check(F_list, delta, spec)
    if method == "closed-form":
        return _rp_gram_closed_form(F_list, L, point, spec, region_mode)
    if method != "mc":
        raise ValueError(f"unknown rp_gram method {method!r}")

    theta = time_reflection(spec.D)
    refl = [apply_transform(F, theta, spec) for F in F_list]
    m = len(F_list)
    moll = Mollifier.for_lattice(spec, point.lam)
    region = _rp_region(spec, point.r, delta, region_mode)

    # pairings of every distinct inner function, then outer products per pair
    gs = [F.inner_values(spec) for F in refl] + [F.inner_values(spec) for F in F_list]
    hD = spec.h**spec.D
    sum_axes_field = tuple(range(1, 2 + spec.D))

    def obs_fn(fields):
        ts = [hD * np.tensordot(fields, g, axes=(sum_axes_field, sum_axes_field)) for g in gs]
        vals_r = [refl[i].evaluate_pairings(ts[i]) for i in range(m)]
        vals_f = [F_list[j].evaluate_pairings(ts[m + j]) for j in range(m)]
        cols = [vals_r[i] * vals_f[j] for i in range(m) for j in range(m)]
        return np.stack(cols, axis=-1)

    S_fw, S_w, _ = run_weighted_chains(spec, L, region, moll, mc.samples, mc.seed,
                                       obs_fn, m * m)
    value, entry_stderr = ratio_from_blocks(S_fw, S_w)
    G_raw = value.reshape(m, m)
    G = 0.5 * (G_raw + G_raw.T)

    # jackknife of the symmetrized minimum eigenvalue
    tot_fw, tot_w = S_fw.sum(axis=0), S_w.sum()
    nb = len(S_w)
    loo_eigs = np.empty(nb)
    for b in range(nb):
        Gb = ((tot_fw - S_fw[b]) / (tot_w - S_w[b])).reshape(m, m)
        loo_eigs[b] = np.linalg.eigvalsh(0.5 * (Gb + Gb.T))[0]
    min_eig = float(np.linalg.eigvalsh(G)[0])
    stderr = float(np.sqrt((nb - 1) / nb * np.sum((loo_eigs - loo_eigs.mean()) ** 2)))
    return RPGramResult(
        gram=G, gram_raw=G_raw, min_eigenvalue=min_eig, stderr=stderr,
        entry_stderr=entry_stderr.reshape(m, m), method="mc",
        region=region_mode, delta=delta,
    )


def _combined_inner(F: CylindricalFunction):
    """(weights, inner) pairs defining h = sum_a w_a g_a for a cosine observable."""
    return list(zip(np.asarray(F.outer.weights, dtype=float), F.inner))


def _rp_gram_closed_form(F_list, L, point, spec, region_mode) -> RPGramResult:
    if not L.is_zero():
        raise ValueError("the closed-form Gram exists only for the free measure (L = 0)")
    for F in F_list:
        if not isinstance(F.outer, CosineOuter):
            raise ValueError("the closed-form Gram needs cosine outer functions")
    theta = time_reflection(spec.D)
    m = len(F_list)
    refl = [apply_transform(F, theta, spec) for F in F_list]

    def cov(Fa, Fb):
        # C(h_a, h_b) for combined test functions h = sum w_a g_a
        total = 0.0
        for wa, ga in _combined_inner(Fa):
            for wb, gb in _combined_inner(Fb):
                total += wa * wb * lattice_covariance(ga, gb, spec)
        return total

    # E cos(X + b_i) cos(Y + b_j)
    #   = [cos(b_i - b_j) exp(-Var(X-Y)/2) + cos(b_i + b_j) exp(-Var(X+Y)/2)] / 2
    G = np.empty((m, m))
    var_r = [cov(refl[i], refl[i]) for i in range(m)]
    var_f = [cov(F_list[j], F_list[j]) for j in range(m)]
    for i in range(m):
        for j in range(m):
            cross = cov(refl[i], F_list[j])
            v_minus = var_r[i] + var_f[j] - 2 * cross
            v_plus = var_r[i] + var_f[j] + 2 * cross
            bi, bj = F_list[i].outer.bias, F_list[j].outer.bias
            amp = F_list[i].outer.amplitude * F_list[j].outer.amplitude
            G[i, j] = 0.5 * amp * (
                np.cos(bi - bj) * np.exp(-v_minus / 2)
                + np.cos(bi + bj) * np.exp(-v_plus / 2)
            )
    G_sym = 0.5 * (G + G.T)
    return RPGramResult(
        gram=G_sym, gram_raw=G, min_eigenvalue=float(np.linalg.eigvalsh(G_sym)[0]),
        stderr=0.0, entry_stderr=np.zeros((m, m)), method="closed-form",
        region=region_mode, delta=point.delta,
    )


# ---------------------------------------------------------------------------
# Invariance gaps


@dataclass
class InvarianceResult:
    gap: float
    stderr: float
    bound: float
    value: float
    value_transformed: float
    c0: float


def _joint_ratio_diff(S_fw: np.ndarray, S_w: np.ndarray):
    """Jackknife of ratio(obs_1) - ratio(obs_0) on shared blocks."""
    tot_fw, tot_w = S_fw.sum(axis=0), S_w.sum()
    vals = tot_fw / tot_w
    diff = vals[1] - vals[0]
    nb = len(S_w)
    loo = (tot_fw[None, :] - S_fw) / (tot_w - S_w)[:, None]
    loo_diff = loo[:, 1] - loo[:, 0]
    stderr = float(np.sqrt((nb - 1) / nb * np.sum((loo_diff - loo_diff.mean()) ** 2)))
    return float(vals[0]), float(vals[1]), float(diff), stderr


def invariance_gap(F: CylindricalFunction, T: EuclideanTransform, L: Lagrangian,
                   point: SchedulePoint, spec: LatticeSpec, mc: MCParams,
                   c0: float = 1.0) -> InvarianceResult:
    """Gap |<F_T> - <F>| on shared seeds, with the schedule bound.

    bound = ||f||_inf * c0 * M_n * r_n^{D-1} / lam_n; c0 is the calibration
    constant (see :func:`calibrate_invariance_constant`), recorded in the
    result.  An exact lattice symmetry of measure and region gives gap = 0
    bit-for-bit because the two estimates share every sample.
    """
    if T.kind not in ("translation", "permutation", "flip"):
        raise ValueError("invariance transforms are translations and hyperoctahedral maps")
    F.validate_on(spec)
    F_T = apply_transform(F, T, spec)
    moll = Mollifier.for_lattice(spec, point.lam)
    region = Ball(center=(0.0,) * spec.D, radius=point.r)
    hD = spec.h**spec.D
    sum_axes_field = tuple(range(1, 2 + spec.D))
    g0 = F.inner_values(spec)
    g1 = F_T.inner_values(spec)

    def obs_fn(fields):
        t0 = hD * np.tensordot(fields, g0, axes=(sum_axes_field, sum_axes_field))
        t1 = hD * np.tensordot(fields, g1, axes=(sum_axes_field, sum_axes_field))
        return np.stack([F.evaluate_pairings(t0), F_T.evaluate_pairings(t1)], axis=-1)

    S_fw, S_w, _ = run_weighted_chains(spec, L, region, moll, mc.samples, mc.seed, obs_fn, 2)
    v0, v1, diff, stderr = _joint_ratio_diff(S_fw, S_w)
    bound = F.sup_norm * c0 * point.M * point.r ** (spec.D - 1) / point.lam
    return InvarianceResult(gap=abs(diff), stderr=stderr, bound=bound,
                            value=v0, value_transformed=v1, c0=c0)


def calibrate_invariance_constant(F, T, L, point, spec, mc, safety: float = 1.5) -> float:
    """Measure c0 once at a reference schedule point.

    c0 = safety * (observed gap + 2 stderr) / (||f||_inf M r^{D-1} / lam),
    so later bounds inherit a recorded, reproducible constant instead of an
    uncontrolled absolute one.
    """
    res = invariance_gap(F, T, L, point, spec, mc, c0=1.0)
    ratio = F.sup_norm * point.M * point.r ** (spec.D - 1) / point.lam
    return float(safety * (res.gap + 2 * res.stderr) / ratio)


# ---------------------------------------------------------------------------
# Markov property


def _dense_precision(spec: LatticeSpec) -> np.ndarray:
    """Nearest-neighbor precision (-lap_h + 1) as a dense matrix over sites."""
    n = spec.n_sites
    A = lil_matrix((n, n))
    inv_h2 = 1.0 / spec.h**2
    idx = np.arange(n).reshape(spec.shape)
    A.setdiag(2 * spec.D * inv_h2 + 1.0)
    for ax in range(spec.D):
        nb = np.roll(idx, 1, axis=ax).ravel()
        for i, j in zip(idx.ravel(), nb):
            A[i, j] -= inv_h2
            A[j, i] -= inv_h2
    return A


def _band_mask(spec: LatticeSpec, band_width: int) -> np.ndarray:
    """Two slabs along axis 0 (a single slab never separates the torus)."""
    mask = np.zeros(spec.shape, dtype=bool)
    if band_width > 0:
        sl = [slice(None)] * spec.D
        sl[0] = slice(0, band_width)
        mask[tuple(sl)] = True
        sl[0] = slice(spec.N // 2, spec.N // 2 + band_width)
        mask[tuple(sl)] = True
    return mask


def markov_check(spec: LatticeSpec, band_width: int, probes=None) -> float:
    """Max |Cov(phi(x), phi(y) | phi on the band)| across the separating band.

    The band is two slabs of the given width along axis 0 (at index 0 and
    N/2), splitting the torus into two components.  Probes default to one
    site in the middle of each component; custom probes are (x, y) pairs of
    site multi-indices that must lie on opposite sides.  The conditional
    precision of the non-band sites is the corresponding principal block of
    the precision matrix, so the conditional covariance is its inverse.

    ``band_width = 0`` conditions on nothing and returns the (positive)
    marginal covariance; widths >= 1 that fail to disconnect the probes
    raise :class:`SeparationError`.
    """
    if spec.K != 1:
        raise ValueError("the Markov check is defined for scalar fields (K = 1)")
    if spec.n_sites > 4096:
        raise ValueError("lattice too large for a dense Schur complement (N^D <= 4096)")
    if band_width < 0 or 2 * band_width >= spec.N // 2:
        raise ValueError("band width must satisfy 0 <= width < N/4")

    band = _band_mask(spec, band_width).ravel()
    rest = ~band
    A = _dense_precision(spec).tocsr()

    side = np.zeros(spec.shape, dtype=int)
    sl = [slice(None)] * spec.D
    sl[0] = slice(band_width, spec.N // 2)
    side[tuple(sl)] = 1
    sl[0] = slice(spec.N // 2 + band_width, spec.N)
    side[tuple(sl)] = 2
    side = side.ravel()

    if probes is None:
        mid = [spec.N // 2] * (spec.D - 1)
        x = tuple([spec.N // 4] + mid)
        y = tuple([3 * spec.N // 4] + mid)
        probes = [(x, y)]
    flat_probes = []
    for x, y in probes:
        xi = int(np.ravel_multi_index(tuple(x), spec.shape))
        yi = int(np.ravel_multi_index(tuple(y), spec.shape))
        if band[xi] or band[yi]:
            raise SeparationError("probe sites must not lie on the band")
        flat_probes.append((xi, yi))

    if band_width >= 1:
        sub = A[rest][:, rest]
        n_comp, labels = connected_components(sub, directed=False)
        full_labels = np.full(spec.n_sites, -1)
        full_labels[rest] = labels
        for xi, yi in flat_probes:
            if full_labels[xi] == full_labels[yi]:
                raise SeparationError(
                    f"band of width {band_width} does not separate probes "
                    f"{np.unravel_index(xi, spec.shape)} and {np.unravel_index(yi, spec.shape)}"
                )
        if side[[xi for xi, _ in flat_probes]].min() == 0:
            raise SeparationError("probes must sit strictly between the slabs")

    A_rr = A[rest][:, rest].toarray()
    pos = np.cumsum(rest) - 1  # full index -> index within the rest block
    rhs = np.zeros((A_rr.shape[0], len(flat_probes)))
    for c, (xi, _) in enumerate(flat_probes):
        rhs[pos[xi], c] = 1.0
    sol = np.linalg.solve(A_rr, rhs)
    worst = 0.0
    for c, (_, yi) in enumerate(flat_probes):
        worst = max(worst, abs(float(sol[pos[yi], c])))
    return worst
