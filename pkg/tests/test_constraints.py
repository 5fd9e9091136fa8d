import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpgauss.constraints import (ConstraintSet, DiffOperator, constrained_covariance,
                                 divergence_constraint, identity_constraint,
                                 laplacian_constraint, lattice_penalized_exact,
                                 penalized_covariance, symbol_matrix, theorem2_sweep)
from rpgauss.free import Mollifier, QuadratureConfig, free_covariance
from rpgauss.interaction import CutoffSchedule, GrowthLaw
from rpgauss.lattice import build_lattice
from rpgauss.testfunctions import gaussian_bump

SPEC2 = build_lattice(D=2, N=32, L=8.0, K=2)
QUAD2 = QuadratureConfig(scheme="lattice-momentum-sum", lattice=SPEC2)


# ---------------------------------------------------------------------------
# Symbols


def test_divergence_symbol():
    op = divergence_constraint(2)
    p = np.array([0.7, -1.3])
    S = symbol_matrix(op, p)
    assert S.shape == (1, 1, 2)
    assert np.allclose(S[0, 0], [1j * 0.7, -1j * 1.3])


def test_identity_symbol():
    op = identity_constraint(2, 2)
    S = symbol_matrix(op, np.array([[0.3, 0.4], [5.0, -2.0]]))
    assert np.allclose(S, np.eye(2))


def test_laplacian_symbol():
    op = laplacian_constraint(2, K=1)
    p = np.array([1.0, 2.0])
    S = symbol_matrix(op, p)
    assert np.allclose(S[0], -5.0)


def test_diffoperator_validation():
    with pytest.raises(ValueError):
        DiffOperator(name="empty", terms=())
    with pytest.raises(ValueError):
        DiffOperator(name="ragged", terms=(((0,), ((1.0,),)), ((1,), ((1.0, 2.0),))))


# ---------------------------------------------------------------------------
# Projectors


def test_projector_identity_constraint_is_zero():
    cs = ConstraintSet(ops=(identity_constraint(2, 2),))
    Pi = cs.projector(np.array([[0.4, 0.9], [0.0, 0.0], [3.0, -1.0]]))
    assert np.max(np.abs(Pi)) < 1e-12


def test_projector_divergence_example():
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    Pi = cs.projector(np.array([1.0, 0.0]))[0]
    assert np.allclose(Pi, np.diag([0.0, 1.0]), atol=1e-12)


def test_projector_zero_symbol_gives_identity():
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    Pi = cs.projector(np.zeros((1, 2)))[0]
    assert np.allclose(Pi, np.eye(2))


def test_projector_transverse_closed_form():
    # divergence kernel = transverse projector I - p p^T / |p|^2
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    rng = np.random.default_rng(0)
    p = rng.standard_normal((50, 2))
    Pi = cs.projector(p)
    oracle = np.eye(2) - p[:, :, None] * p[:, None, :] / np.sum(p**2, axis=1)[:, None, None]
    assert np.max(np.abs(Pi - oracle)) < 1e-10


def test_projector_near_cut_flags():
    cs = ConstraintSet(ops=(divergence_constraint(2),), tol=1e-10)
    _, flags = cs.projector(np.array([[1.0, 0.0], [0.0, 0.0]]), return_flags=True)
    assert not flags.any()  # clean rank structure at both points


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projector_algebra_property(seed):
    rng = np.random.default_rng(seed)
    cs = ConstraintSet(ops=(divergence_constraint(2), laplacian_constraint(2, K=2)))
    p = rng.standard_normal((20, 2)) * 3
    Pi = cs.projector(p)
    assert np.max(np.abs(Pi @ Pi - Pi)) < 1e-10
    assert np.max(np.abs(Pi - np.conj(np.swapaxes(Pi, -1, -2)))) < 1e-10
    S = cs.stacked_symbol(p)
    assert np.max(np.abs(S @ Pi)) < 1e-10


# ---------------------------------------------------------------------------
# Covariances

F1 = gaussian_bump((0.0, 0.0), 0.5, component=(1.0, 0.0))
G1 = gaussian_bump((0.5, -0.3), 0.6, component=(0.6, 0.8))


def test_constrained_identity_is_zero():
    cs = ConstraintSet(ops=(identity_constraint(2, 2),))
    assert constrained_covariance(F1, G1, cs, QUAD2) == pytest.approx(0.0, abs=1e-14)


def test_constrained_empty_equals_free_byte_identical():
    cs = ConstraintSet(ops=())
    assert constrained_covariance(F1, G1, cs, QUAD2) == free_covariance(F1, G1, QUAD2)


def test_constrained_divergence_vs_transverse_oracle():
    # independent oracle: apply I - p p^T/p^2 explicitly inside the momentum sum
    from rpgauss.testfunctions import eval_fourier

    cs = ConstraintSet(ops=(divergence_constraint(2),))
    got = constrained_covariance(F1, F1, cs, QUAD2)
    P = SPEC2.momentum_grid()
    fhat = eval_fourier(F1, P)
    psq = np.sum(P**2, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        proj = np.eye(2) - P[:, :, None] * P[:, None, :] / psq[:, None, None]
    proj[psq == 0] = np.eye(2)
    pf = np.einsum("mij,mj->mi", proj, fhat)
    oracle = float(np.sum(np.conj(pf) * pf).real / (psq + 1.0) @ np.ones(1)) \
        if False else float(np.sum((np.abs(pf) ** 2).sum(axis=-1) / (psq + 1.0)).real / SPEC2.volume)
    assert abs(got - oracle) < 1e-8 * abs(oracle)


def test_constrained_between_zero_and_free():
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    c = constrained_covariance(F1, F1, cs, QUAD2)
    assert 0.0 <= c <= free_covariance(F1, F1, QUAD2)


def test_penalized_a_zero_is_free():
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    moll = Mollifier.for_lattice(SPEC2, 4.0)
    assert penalized_covariance(F1, G1, cs, 0.0, moll, QUAD2) == free_covariance(F1, G1, QUAD2)


def test_penalized_identity_1d_scaling():
    # K=1 identity constraint: integrand 1/(p^2 + 1 + a sigma_hat^2);
    # value -> 0 with a * value bounded
    spec = build_lattice(D=1, N=128, L=16.0, K=1)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    cs = ConstraintSet(ops=(identity_constraint(1, 1),))
    moll = Mollifier.for_lattice(spec, 8.0)
    f = gaussian_bump((0.0,), 1.0)
    vals = [penalized_covariance(f, f, cs, a, moll, quad) for a in (1e2, 1e4, 1e6)]
    assert vals[0] > vals[1] > vals[2] > 0
    scaled = [a * v for a, v in zip((1e2, 1e4, 1e6), vals)]
    assert max(scaled) < 10 * min(scaled)  # a * value stays bounded

    # node-level oracle at a = 100
    from rpgauss.testfunctions import eval_fourier
    P = spec.momentum_grid()
    fhat = eval_fourier(f, P)[:, 0]
    psq = P[:, 0] ** 2
    sig2 = moll.sigma_hat(np.abs(P[:, 0]) / 8.0) ** 2
    oracle = float(np.sum(np.abs(fhat) ** 2 / (psq + 1 + 100.0 * sig2)).real / spec.volume)
    assert penalized_covariance(f, f, cs, 100.0, moll, quad) == pytest.approx(oracle, rel=1e-12)


def test_penalized_monotone_in_a():
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    moll = Mollifier.for_lattice(SPEC2, 32.0)
    vals = [penalized_covariance(F1, F1, cs, a, moll, QUAD2) for a in (0.0, 1.0, 10.0, 100.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(v >= 0 for v in vals)


def test_penalized_gap_decreases_along_a():
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    moll = Mollifier.for_lattice(SPEC2, 32.0)
    ck = constrained_covariance(F1, F1, cs, QUAD2)
    gaps = [abs(penalized_covariance(F1, F1, cs, a, moll, QUAD2) - ck)
            for a in (1e1, 1e2, 1e3, 1e4)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


# ---------------------------------------------------------------------------
# Finite-volume exact solve


def test_lattice_exact_a_zero_is_free_momentum_sum():
    spec = build_lattice(D=1, N=64, L=8.0, K=1)
    cs = ConstraintSet(ops=())
    f = gaussian_bump((0.3,), 0.5)
    g = gaussian_bump((-0.4,), 0.5)
    got = lattice_penalized_exact(f, g, cs, 0.0, None, 2.0, spec)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    assert got == pytest.approx(free_covariance(f, g, quad), rel=1e-11)


def test_lattice_exact_full_torus_matches_momentum_sum():
    spec = build_lattice(D=1, N=128, L=16.0, K=1)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    cs = ConstraintSet(ops=(identity_constraint(1, 1),))
    moll = Mollifier.for_lattice(spec, 16.0)
    f = gaussian_bump((0.0,), 1.0)
    got = lattice_penalized_exact(f, f, cs, 50.0, moll, spec.L, spec)
    want = penalized_covariance(f, f, cs, 50.0, moll, quad)
    assert abs(got - want) < 1e-6 * abs(want)


def test_lattice_exact_dense_oracle():
    # D=1, K=1 identity constraint, small N: dense-matrix inversion oracle
    spec = build_lattice(D=1, N=16, L=8.0, K=1)
    cs = ConstraintSet(ops=(identity_constraint(1, 1),))
    f = gaussian_bump((0.5,), 0.6)
    g = gaussian_bump((-0.5,), 0.6)
    a, r = 7.0, 2.0
    got = lattice_penalized_exact(f, g, cs, a, None, r, spec, method="cg", tol=1e-13)

    # independent dense assembly: A = h (F^H diag(p^2+1) F / L + a diag(mask) )
    # with F the plain momentum transform matrix of dft_forward
    N, h = spec.N, spec.h
    x = spec.axis_coords()
    p = spec.axis_momenta()
    E = np.exp(-1j * np.outer(p, x)) * h  # fhat = E @ f
    T = (E.conj().T @ np.diag(p**2 + 1) @ E).real / spec.volume / h**2
    mask = (np.abs(x) < r).astype(float)
    A = h * (T + a * np.diag(mask))
    u = np.linalg.solve(A, h * g.values(spec)[0])
    oracle = float(h * f.values(spec)[0] @ u)
    assert abs(got - oracle) < 1e-10 * max(1.0, abs(oracle))


def test_lattice_exact_cg_matches_dense_path():
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    spec = build_lattice(D=2, N=16, L=8.0, K=2)
    moll = Mollifier.for_lattice(spec, 4.0)
    a = lattice_penalized_exact(F1, G1, cs, 100.0, moll, 3.0, spec, method="cg")
    b = lattice_penalized_exact(F1, G1, cs, 100.0, moll, 3.0, spec, method="dense")
    assert a == pytest.approx(b, abs=1e-12)


def test_lattice_exact_rejects_negative_a():
    with pytest.raises(ValueError):
        lattice_penalized_exact(F1, G1, ConstraintSet(ops=()), -1.0, None, 2.0, SPEC2)


# ---------------------------------------------------------------------------
# Theorem-2 sweeps


def _schedule(D, a_geo=10.0):
    return CutoffSchedule(D=D, r=GrowthLaw(2.0, 0.15), lam=GrowthLaw(4.0, 0.5),
                          M=GrowthLaw(1.0), a=GrowthLaw(1.0, geo_base=a_geo))


def test_sweep_identity_converges_to_zero():
    spec = build_lattice(D=1, N=64, L=16.0, K=1)
    cs = ConstraintSet(ops=(identity_constraint(1, 1),))
    f = gaussian_bump((0.0,), 1.0)
    sched = CutoffSchedule(D=1, r=GrowthLaw(6.0, 0.05), lam=GrowthLaw(4.0, 0.5),
                           M=GrowthLaw(1.0), a=GrowthLaw(10.0, geo_base=10.0))
    sw = theorem2_sweep(f, f, cs, sched, spec, n_values=range(1, 7))
    c_ff = abs(sw.rows[0].C_kappa) + free_covariance(
        f, f, QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec))
    assert all(r.C_kappa == pytest.approx(0.0, abs=1e-14) for r in sw.rows)
    assert sw.rows[-1].gap_total < 1e-3 * c_ff
    gaps = [r.gap_total for r in sw.rows]
    assert all(x > y for x, y in zip(gaps, gaps[1:]))


def test_sweep_empty_constraints_all_equal_free():
    spec = build_lattice(D=1, N=64, L=16.0, K=1)
    cs = ConstraintSet(ops=())
    f = gaussian_bump((0.3,), 1.0)
    g = gaussian_bump((-0.5,), 0.8)
    sched = _schedule(1)
    sw = theorem2_sweep(f, g, cs, sched, spec, n_values=range(1, 5))
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    c0 = free_covariance(f, g, quad)
    for row in sw.rows:
        assert row.C_aLinf == c0
        assert row.C_kappa == c0
        assert row.C_aLr == pytest.approx(c0, rel=1e-10)


def test_sweep_divergence_monotone_gaps():
    spec = build_lattice(D=2, N=16, L=8.0, K=2)
    cs = ConstraintSet(ops=(divergence_constraint(2),))
    f = gaussian_bump((0.0, 0.0), 0.5, component=(1.0, 0.0))
    sched = CutoffSchedule(D=2, r=GrowthLaw(2.0, 0.1), lam=GrowthLaw(4.0, 0.4),
                           M=GrowthLaw(1.0), a=GrowthLaw(1.0, geo_base=10.0))
    sw = theorem2_sweep(f, f, cs, sched, spec, n_values=range(1, 7))
    gaps = [r.gap_penalty for r in sw.rows]
    assert all(x > y for x, y in zip(gaps, gaps[1:]))


def test_sweep_requires_a_law():
    sched = CutoffSchedule(D=1, r=GrowthLaw(2.0, 0.15), lam=GrowthLaw(4.0, 0.5),
                           M=GrowthLaw(1.0))
    with pytest.raises(ValueError):
        theorem2_sweep(gaussian_bump((0.0,), 1.0), gaussian_bump((0.0,), 1.0),
                       ConstraintSet(ops=()), sched,
                       build_lattice(D=1, N=32, L=16.0, K=1))
