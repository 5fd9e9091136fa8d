"""Regularized interacting expectations.

The central object is the reweighted ratio

    ( sum_s F[phi_s] W_s ) / ( sum_s W_s ),
    W_s = exp( - h^D sum_{x in region} L(jet of mollified phi_s at x) ),

over i.i.d. free-field samples phi_s, which discretizes the cutoff
interacting expectation with interaction region B(0, r) and ultraviolet
mollifier scale lam.  The jet consists of Laplacian powers of the mollified
field, (phi_lam, lap phi_lam, ..., lap^l phi_lam).

Also here: the bounding transform L -> L/(eps L + 1) with its eps selection,
cutoff schedules with the sufficiency condition M_n r_n^{D-1} / lam_n -> 0,
and convergence-diagnosed limit extraction (the constructive surrogate for a
Banach limit; oscillating sequences are reported as non-convergent, never
silently averaged).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError, SampleBudgetError
from .free import Mollifier, derive_rng, sample_batch
from .lattice import LatticeSpec, apply_multiplier, laplacian_power
from .regions import Region
from .testfunctions import CylindricalFunction

__all__ = [
    "Lagrangian",
    "PolynomialLagrangian",
    "BoundedLagrangian",
    "ShiftedLagrangian",
    "ConstraintPenaltyLagrangian",
    "bound_lagrangian",
    "action_integral",
    "GrowthLaw",
    "CutoffSchedule",
    "SchedulePoint",
    "check_schedule",
    "EstimatorResult",
    "estimate_ratio",
    "extract_limit",
    "select_epsilon",
]


# ---------------------------------------------------------------------------
# Lagrangian catalog


class Lagrangian:
    """A measurable semibounded function of the field jet.

    Subclasses either implement ``pointwise(jet)`` on arrays of shape
    (jet_order+1, K, ...) or override ``density`` entirely.  ``lower_bound``
    is finite for every catalog member; ``sup_bound`` is None when unbounded.
    """

    jet_order: int = 0
    lower_bound: float = 0.0
    sup_bound: float | None = None

    def pointwise(self, jet: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def density(self, fields: np.ndarray, spec: LatticeSpec,
                mollifier: Mollifier | None) -> np.ndarray:
        """Local Lagrangian density per site for a batch of fields.

        ``fields`` has shape (B, K) + (N,)*D; the result (B,) + (N,)*D.
        """
        smooth = fields
        if mollifier is not None:
            smooth = apply_multiplier(spec, fields, mollifier.multiplier(spec))
        jet = [smooth]
        for j in range(1, self.jet_order + 1):
            jet.append(laplacian_power(spec, jet[-1], 1))
        # stack to (jet_order+1, K, B) + (N,)*D so pointwise sees (jet, component, ...)
        return self.pointwise(np.stack(jet).swapaxes(1, 2))

    def shifted(self, c: float) -> "Lagrangian":
        return ShiftedLagrangian(self, c)

    def is_zero(self) -> bool:
        return False


@dataclass
class ZeroLagrangian(Lagrangian):
    """L = 0; estimate_ratio degenerates to plain Monte Carlo."""

    jet_order = 0
    lower_bound = 0.0
    sup_bound = 0.0

    def pointwise(self, jet):
        return np.zeros(jet.shape[2:])

    def is_zero(self):
        return True


class PolynomialLagrangian(Lagrangian):
    """Sum of monomials in jet entries, optionally clipped from above.

    ``terms`` is a list of (jet_index, component, power, coeff); the value is
    min(sum coeff * jet[jet_index, component]^power, clip) when a clip bound
    is given.  With all powers even and coefficients nonnegative the lower
    bound is 0 and needs no declaration.
    """

    def __init__(self, terms, clip=None, lower_bound=None):
        self.terms = [(int(j), int(c), int(p), float(a)) for j, c, p, a in terms]
        self.clip = None if clip is None else float(clip)
        self.jet_order = max((j for j, _, _, _ in self.terms), default=0)
        if lower_bound is None:
            if all(p % 2 == 0 and a >= 0 for _, _, p, a in self.terms):
                lower_bound = 0.0
            else:
                raise ValueError(
                    "lower_bound must be given for terms that are not even "
                    "powers with nonnegative coefficients"
                )
        self.lower_bound = min(float(lower_bound), self.clip) if self.clip is not None \
            else float(lower_bound)
        self.sup_bound = self.clip

    def pointwise(self, jet):
        out = np.zeros(jet.shape[2:])
        for j, c, p, a in self.terms:
            out = out + a * jet[j, c] ** p
        if self.clip is not None:
            out = np.minimum(out, self.clip)
        return out


class ShiftedLagrangian(Lagrangian):
    """base + c; estimate_ratio is exactly invariant under this shift."""

    def __init__(self, base: Lagrangian, c: float):
        self.base = base
        self.c = float(c)
        self.jet_order = base.jet_order
        self.lower_bound = base.lower_bound + self.c
        self.sup_bound = None if base.sup_bound is None else base.sup_bound + self.c

    def density(self, fields, spec, mollifier):
        return self.base.density(fields, spec, mollifier) + self.c

    def is_zero(self):
        return self.c == 0 and self.base.is_zero()


class BoundedLagrangian(Lagrangian):
    """The bounding transform L -> L / (eps L + 1) for L >= 0.

    Monotone in L, bounded by 1/eps, and increases pointwise to L as eps
    decreases to 0.
    """

    def __init__(self, base: Lagrangian, eps: float):
        if eps <= 0:
            raise ValueError("eps must be positive (eps=0 is the identity)")
        if base.lower_bound < -1e-12:
            raise ValueError("base Lagrangian must be nonnegative; shift it first")
        self.base = base
        self.eps = float(eps)
        self.jet_order = base.jet_order
        self.lower_bound = 0.0
        cap = 1.0 / self.eps
        self.sup_bound = cap if base.sup_bound is None else min(cap, _transform(base.sup_bound, eps))

    def density(self, fields, spec, mollifier):
        v = self.base.density(fields, spec, mollifier)
        return v / (self.eps * v + 1.0)


def _transform(x, eps):
    return x / (eps * x + 1.0)


class ConstraintPenaltyLagrangian(Lagrangian):
    """L = strength * sum_i |kappa_i[phi]|^2 with kappa_i linear differential
    constraints applied to the mollified field.

    With ``bounded`` each constraint component is softened to
    kappa / (1 + kappa^2) before squaring, giving sup <= strength * rows / 4.
    This is the penalty route for constraints without an analytic target;
    linear constraints also have the exact Gaussian path in the constraints
    module.
    """

    def __init__(self, constraint_set, strength: float, bounded: bool = False):
        if strength < 0:
            raise ValueError("penalty strength must be >= 0")
        self.constraint_set = constraint_set
        self.strength = float(strength)
        self.bounded = bounded
        self.jet_order = 0
        self.lower_bound = 0.0
        rows = constraint_set.total_rows
        self.sup_bound = strength * rows / 4.0 if bounded else None

    def density(self, fields, spec, mollifier):
        smooth = fields
        if mollifier is not None:
            smooth = apply_multiplier(spec, fields, mollifier.multiplier(spec))
        kappa = self.constraint_set.apply(spec, smooth)  # (B, rows) + shape
        if self.bounded:
            kappa = kappa / (1.0 + kappa**2)
        return self.strength * np.sum(kappa**2, axis=-spec.D - 1)


def bound_lagrangian(L: Lagrangian, eps: float) -> Lagrangian:
    """Shift L by its lower bound and apply L -> L/(eps L + 1).

    eps = 0 returns the (shifted) Lagrangian unchanged; the ratio estimator
    is invariant under the shift.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    base = L if L.lower_bound == 0 else L.shifted(-L.lower_bound)
    if eps == 0:
        return base
    return BoundedLagrangian(base, eps)


def action_integral(field, L: Lagrangian, region: Region,
                    mollifier: Mollifier | None = None) -> float:
    """h^D sum over region sites of the Lagrangian density of the mollified jet."""
    spec = field.spec
    mask = region.mask(spec)
    dens = L.density(field.data[None], spec, mollifier)[0]
    return float(spec.h**spec.D * np.sum(dens[mask]))


# ---------------------------------------------------------------------------
# Cutoff schedules


@dataclass(frozen=True)
class GrowthLaw:
    """n -> base * geo_base^n * n^exponent * log(n+1)^log_power."""

    base: float
    exponent: float = 0.0
    log_power: float = 0.0
    geo_base: float = 1.0

    def __post_init__(self):
        if self.base <= 0:
            raise ValueError("growth-law base must be positive")
        if self.geo_base <= 0:
            raise ValueError("growth-law geometric base must be positive")

    def __call__(self, n) -> float:
        n = np.asarray(n, dtype=float)
        out = self.base * n**self.exponent * np.log(n + 1.0) ** self.log_power
        if self.geo_base != 1.0:
            out = out * self.geo_base**n
        return out

    @property
    def nondecreasing(self) -> bool:
        if self.geo_base > 1.0:
            return self.exponent >= 0 and self.log_power >= 0
        if self.geo_base < 1.0:
            return False
        return self.exponent > 0 or (self.exponent == 0 and self.log_power >= 0)

    @property
    def diverges(self) -> bool:
        if self.geo_base != 1.0:
            return self.geo_base > 1.0 and self.exponent >= 0 and self.log_power >= 0
        return self.exponent > 0 or (self.exponent == 0 and self.log_power > 0)


@dataclass(frozen=True)
class SchedulePoint:
    n: int
    r: float
    lam: float
    M: float
    a: float | None = None

    @property
    def delta(self) -> float:
        """Half-space margin, tied to 1/lam as in the construction."""
        return 1.0 / self.lam


@dataclass(frozen=True)
class CutoffSchedule:
    """Closed-form laws for ball radius r_n, mollifier scale lam_n, Lagrangian
    bound M_n, and (for constraint runs) penalty strength a_n."""

    D: int
    r: GrowthLaw
    lam: GrowthLaw
    M: GrowthLaw
    a: GrowthLaw | None = None

    def __post_init__(self):
        for name, law, must_diverge in (
            ("r", self.r, True), ("lam", self.lam, True), ("M", self.M, False),
            ("a", self.a, True),
        ):
            if law is None:
                continue
            if not law.nondecreasing:
                raise ValueError(f"schedule law {name} must be nondecreasing")
            if must_diverge and not law.diverges:
                raise ValueError(f"schedule law {name} must diverge")

    def at(self, n: int) -> SchedulePoint:
        if n < 1:
            raise ValueError("schedule index starts at 1")
        return SchedulePoint(
            n=n,
            r=float(self.r(n)),
            lam=float(self.lam(n)),
            M=float(self.M(n)),
            a=None if self.a is None else float(self.a(n)),
        )

    def ratio_exponents(self):
        """(geo, exponent, log_power) of M_n r_n^{D-1} / lam_n."""
        g = self.M.geo_base * self.r.geo_base ** (self.D - 1) / self.lam.geo_base
        e = self.M.exponent + (self.D - 1) * self.r.exponent - self.lam.exponent
        q = self.M.log_power + (self.D - 1) * self.r.log_power - self.lam.log_power
        return g, e, q


@dataclass(frozen=True)
class ScheduleCheck:
    passed: bool
    reason: str
    monotone_from: int | None = None


def check_schedule(schedule: CutoffSchedule, n_numeric: int = 10_000) -> ScheduleCheck:
    """Verify the sufficiency condition M_n r_n^{D-1} / lam_n -> 0.

    Symbolic on the growth exponents, plus a numeric monotone-decrease check
    of the ratio for n <= ``n_numeric`` which records the index n0 past which
    the ratio is nonincreasing.
    """
    g, e, q = schedule.ratio_exponents()
    if g > 1 or (g == 1 and (e > 0 or (e == 0 and q >= 0))):
        return ScheduleCheck(
            passed=False,
            reason=f"ratio grows like {g:g}^n n^{e:g} log^{q:g}(n); it does not tend to 0",
        )
    n = np.arange(1, n_numeric + 1, dtype=float)
    ratio = schedule.M(n) * schedule.r(n) ** (schedule.D - 1) / schedule.lam(n)
    increases = np.nonzero(np.diff(ratio) > 0)[0]
    n0 = 1 if increases.size == 0 else int(increases[-1] + 2)
    if n0 > n_numeric // 2:
        return ScheduleCheck(
            passed=False,
            reason=f"ratio still increasing at n={n0}; log corrections dominate too long",
            monotone_from=n0,
        )
    return ScheduleCheck(passed=True, reason="ok", monotone_from=n0)


# ---------------------------------------------------------------------------
# Ratio estimation


@dataclass
class EstimatorResult:
    value: float
    stderr: float
    n_samples: int
    ess: float
    n_blocks: int
    diagnostics: dict = field(default_factory=dict)


def _block_sizes(samples: int):
    if samples < 2:
        raise ValueError("need at least 2 samples")
    block = max(1, int(round(math.sqrt(samples))))
    n_blocks = samples // block
    sizes = [block] * n_blocks
    rem = samples - block * n_blocks
    for i in range(rem):
        sizes[i % n_blocks] += 1
    if len(sizes) < 2:
        sizes = [samples - samples // 2, samples // 2]
    return sizes


def run_weighted_chains(spec: LatticeSpec, L: Lagrangian, region: Region | None,
                        mollifier: Mollifier | None, samples: int, seed: int,
                        obs_fn, n_obs: int):
    """Shared Monte Carlo driver.

    Blocks (= jackknife blocks = seed-disjoint chains) of size ~sqrt(samples)
    are drawn from streams derived as (seed, block_index), so a fixed
    (seed, samples) pair reproduces the identical field stream across calls.
    Returns per-block sums (S_fw, S_w, S_w2) in fixed block order.
    """
    sizes = _block_sizes(samples)
    mask = None if region is None else region.mask(spec)
    S_fw = np.zeros((len(sizes), n_obs))
    S_w = np.zeros(len(sizes))
    S_w2 = np.zeros(len(sizes))
    hD = spec.h**spec.D
    spatial = tuple(range(-spec.D, 0))
    for b, size in enumerate(sizes):
        fields = sample_batch(spec, derive_rng(seed, b), size)
        if L.is_zero():
            w = np.ones(size)
        else:
            dens = L.density(fields, spec, mollifier)
            if mask is not None:
                dens = dens * mask
            action = hD * np.sum(dens, axis=spatial)
            w = np.exp(-action)
        obs = np.atleast_2d(np.asarray(obs_fn(fields)))
        if obs.shape != (size, n_obs):
            obs = obs.reshape(size, n_obs)
        S_fw[b] = (w[:, None] * obs).sum(axis=0)
        S_w[b] = w.sum()
        S_w2[b] = (w**2).sum()
    return S_fw, S_w, S_w2


def ratio_from_blocks(S_fw: np.ndarray, S_w: np.ndarray):
    """Ratio estimate with leave-one-block-out jackknife standard errors."""
    tot_fw = S_fw.sum(axis=0)
    tot_w = S_w.sum()
    if tot_w == 0:
        raise DegenerateWeightsError(
            "all reweighting factors underflowed to zero; the penalty is too "
            "strong for reweighting -- use the exact Gaussian solve "
            "(constraints.lattice_penalized_exact) instead"
        )
    value = tot_fw / tot_w
    nb = len(S_w)
    loo_w = tot_w - S_w
    with np.errstate(invalid="ignore", divide="ignore"):
        loo = (tot_fw[None, :] - S_fw) / loo_w[:, None]
    loo = np.where(np.isfinite(loo), loo, value[None, :])
    stderr = np.sqrt((nb - 1) / nb * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return value, stderr


def estimate_ratio(F: CylindricalFunction, L: Lagrangian, spec: LatticeSpec,
                   region: Region | None, mollifier: Mollifier | None,
                   samples: int, seed: int) -> EstimatorResult:
    """Reweighted Monte Carlo estimate of the interacting expectation of F."""
    F.validate_on(spec)
    g = F.inner_values(spec)  # (k, K) + shape
    hD = spec.h**spec.D
    k = len(F.inner)
    sum_axes = tuple(range(1, 2 + spec.D))

    def obs_fn(fields):
        t = hD * np.tensordot(fields, g, axes=(sum_axes, sum_axes))  # (B, k)
        return F.evaluate_pairings(t)[:, None]

    S_fw, S_w, S_w2 = run_weighted_chains(spec, L, region, mollifier, samples, seed, obs_fn, 1)
    value, stderr = ratio_from_blocks(S_fw, S_w)
    tot_w, tot_w2 = S_w.sum(), S_w2.sum()
    ess = tot_w**2 / tot_w2 if tot_w2 > 0 else 0.0
    return EstimatorResult(
        value=float(value[0]),
        stderr=float(stderr[0]),
        n_samples=samples,
        ess=float(ess),
        n_blocks=len(S_w),
        diagnostics={"ess_fraction": float(ess) / samples},
    )


# ---------------------------------------------------------------------------
# Limit extraction and the eps selection


@dataclass
class LimitResult:
    value: float | None
    converged: bool
    tail_differences: list
    message: str


def extract_limit(results, tolerance: float = 1e-3, tail: int = 3) -> LimitResult:
    """Convergence-diagnosed limit of a sequence of estimates.

    Declares convergence when the last ``tail`` successive differences fall
    below max(tolerance, combined standard errors) and returns the tail
    average; otherwise returns a non-convergent status carrying the tail.
    """
    if len(results) < 4:
        raise ValueError("need at least 4 entries to diagnose a limit")
    values = np.array([getattr(r, "value", r) for r in results], dtype=float)
    errs = np.array([getattr(r, "stderr", 0.0) for r in results], dtype=float)
    diffs = np.abs(np.diff(values))
    bars = np.maximum(tolerance, np.hypot(errs[:-1], errs[1:]))
    ok = diffs[-tail:] <= bars[-tail:]
    tail_diffs = diffs[-tail:].tolist()
    if np.all(ok):
        return LimitResult(
            value=float(values[-(tail + 1):].mean()),
            converged=True,
            tail_differences=tail_diffs,
            message="converged: tail differences below tolerance",
        )
    return LimitResult(
        value=None,
        converged=False,
        tail_differences=tail_diffs,
        message="non-convergent: tail differences exceed tolerance",
    )


def partition_discrepancy(L: Lagrangian, eps: float, spec: LatticeSpec, region: Region,
                          mollifier: Mollifier | None, samples: int, seed: int):
    """Monte Carlo estimate of |Z(bounded) - Z| / Z on shared samples.

    The bounded Lagrangian is below the original, so the discrepancy is a
    nonnegative pathwise quantity; returns (estimate, stderr).
    """
    Lb = bound_lagrangian(L, eps)
    L0 = bound_lagrangian(L, 0.0)
    sizes = _block_sizes(samples)
    mask = region.mask(spec)
    hD = spec.h**spec.D
    spatial = tuple(range(-spec.D, 0))
    S_d = np.zeros(len(sizes))
    S_w = np.zeros(len(sizes))
    for b, size in enumerate(sizes):
        fields = sample_batch(spec, derive_rng(seed, b), size)
        a0 = hD * np.sum(L0.density(fields, spec, mollifier) * mask, axis=spatial)
        ab = hD * np.sum(Lb.density(fields, spec, mollifier) * mask, axis=spatial)
        w = np.exp(-a0)
        S_d[b] = np.sum(np.exp(-ab) - w)
        S_w[b] = w.sum()
    value, stderr = ratio_from_blocks(S_d[:, None], S_w)
    return float(value[0]), float(stderr[0])


def select_epsilon(n: int, L: Lagrangian, spec: LatticeSpec, region: Region,
                   mollifier: Mollifier | None, samples: int, seed: int,
                   eps_start: float = 1.0, max_halvings: int = 40,
                   bisection_steps: int = 6):
    """Pick eps_n so the partition-function discrepancy is < 1/n at 95% confidence.

    The discrepancy is monotone in eps, so halve until the criterion holds,
    then bisect back up toward the largest passing eps.  Raises
    :class:`SampleBudgetError` when halving exhausts its budget, which means
    the Monte Carlo noise floor is above the 1/n target.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    target = 1.0 / n

    def passes(eps):
        d, se = partition_discrepancy(L, eps, spec, region, mollifier, samples, seed)
        return d + 1.96 * se < target, d, se

    hi = eps_start
    ok, d, se = passes(hi)
    if ok:
        return hi, d, se
    lo = hi
    for _ in range(max_halvings):
        lo /= 2.0
        ok, d, se = passes(lo)
        if ok:
            break
    else:
        raise SampleBudgetError(
            f"discrepancy {d:.3g} +- {se:.3g} still above 1/n = {target:.3g} "
            f"after {max_halvings} halvings; increase the sample budget"
        )
    best = (lo, d, se)
    hi_fail = lo * 2.0
    for _ in range(bisection_steps):
        mid = math.sqrt(best[0] * hi_fail)  # geometric bisection
        ok, d, se = passes(mid)
        if ok:
            best = (mid, d, se)
        else:
            hi_fail = mid
    return best
