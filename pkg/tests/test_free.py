import numpy as np
import pytest
from scipy.special import erfc

from rpgauss.free import (Mollifier, QuadratureConfig, derive_rng, free_covariance,
                          lattice_covariance, load_field, mollify, sample_batch,
                          sample_gff, save_field)
from rpgauss.lattice import LatticeField, build_lattice
from rpgauss.testfunctions import gaussian_bump
from rpgauss.verify import apply_transform, axis_flip, axis_permutation, translation

RADIAL = QuadratureConfig(scheme="radial-adaptive")


def test_covariance_closed_form_1d():
    # (1/2pi) int (2 pi w^2) e^{-w^2 p^2} / (p^2+1) dp = pi e erfc(1) at w = 1
    f = gaussian_bump((0.0,), 1.0)
    val = free_covariance(f, f, RADIAL)
    oracle = np.pi * np.e * erfc(1.0)
    assert abs(val - oracle) < 1e-10 * oracle


def test_covariance_2d_separable_oracle():
    # 2D integrand factorizes only through the radial measure; oracle by a
    # dense polar Riemann sum of (2 pi w^2)^2 e^{-w^2 p^2} / (p^2+1)
    w = 0.8
    f = gaussian_bump((0.0, 0.0), w)
    val = free_covariance(f, f, RADIAL)
    r = np.linspace(0, 30, 400001)
    integrand = (2 * np.pi * w**2) ** 2 * np.exp(-(w**2) * r**2) / (r**2 + 1) * r
    oracle = np.trapz(integrand, r) * 2 * np.pi / (2 * np.pi) ** 2
    assert abs(val - oracle) < 1e-8 * abs(oracle)


def test_lattice_sum_close_to_continuum():
    f = gaussian_bump((0.0,), 1.0)
    spec = build_lattice(D=1, N=512, L=32.0, K=1)
    lat = lattice_covariance(f, f, spec)
    cont = free_covariance(f, f, RADIAL)
    assert abs(lat - cont) < 1e-6 * cont  # periodization tail


def test_covariance_symmetric_and_bilinear():
    spec = build_lattice(D=1, N=64, L=8.0, K=1)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    f = gaussian_bump((0.5,), 0.5)
    g = gaussian_bump((-0.4,), 0.6)
    assert free_covariance(f, g, quad) == pytest.approx(free_covariance(g, f, quad), rel=1e-12)
    assert free_covariance(f.scaled(2.0), g, quad) == pytest.approx(
        2 * free_covariance(f, g, quad), rel=1e-12)


def test_covariance_matrix_psd():
    spec = build_lattice(D=1, N=64, L=8.0, K=1)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    fs = [gaussian_bump((c,), 0.5) for c in (-1.0, -0.3, 0.4, 1.1)]
    C = np.array([[free_covariance(a, b, quad) for b in fs] for a in fs])
    assert np.linalg.eigvalsh(C).min() >= -1e-10


def test_covariance_euclidean_invariance():
    spec = build_lattice(D=2, N=32, L=8.0, K=1)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    f = gaussian_bump((0.5, -0.2), 0.4)
    g = gaussian_bump((-0.3, 0.6), 0.5)
    base = free_covariance(f, g, quad)
    for T in (translation((2, -3)), axis_flip(0), axis_permutation((1, 0))):
        val = free_covariance(apply_transform(f, T, spec), apply_transform(g, T, spec), quad)
        assert val == pytest.approx(base, rel=1e-10)


def test_covariance_upper_bound():
    # |C(f,f)| <= (1/2pi)^D int |fhat|^2 dp  (drop the 1/(p^2+1) damping)
    f = gaussian_bump((0.0,), 0.7)
    val = free_covariance(f, f, RADIAL)
    # int (2 pi w^2) e^{-w^2 p^2} dp / (2 pi) = w sqrt(pi)
    assert 0 < val <= 0.7 * np.sqrt(np.pi)


def test_component_diagonal():
    spec = build_lattice(D=1, N=64, L=8.0, K=2)
    quad = QuadratureConfig(scheme="lattice-momentum-sum", lattice=spec)
    f = gaussian_bump((0.0,), 0.5, component=(1.0, 0.0))
    g = gaussian_bump((0.0,), 0.5, component=(0.0, 1.0))
    assert free_covariance(f, g, quad) == 0.0
    assert free_covariance(f, f, quad) == pytest.approx(free_covariance(g, g, quad), rel=1e-12)


# ---------------------------------------------------------------------------
# Sampler


def test_sampler_is_deterministic():
    spec = build_lattice(D=1, N=64, L=8.0, K=1)
    a = sample_gff(spec, 123)
    b = sample_gff(spec, 123)
    assert np.array_equal(a.data, b.data)
    c = sample_gff(spec, 124)
    assert not np.array_equal(a.data, c.data)


def test_derive_rng_streams_disjoint():
    a = derive_rng(7, 0).standard_normal(4)
    b = derive_rng(7, 1).standard_normal(4)
    a2 = derive_rng(7, 0).standard_normal(4)
    assert np.array_equal(a, a2)
    assert not np.array_equal(a, b)


def test_sampler_pairing_covariance_matches_momentum_sum():
    spec = build_lattice(D=1, N=64, L=8.0, K=1)
    f = gaussian_bump((0.4,), 0.5)
    g = gaussian_bump((-0.6,), 0.5)
    S = 40000
    fields = sample_batch(spec, derive_rng(11, 0), S)
    hD = spec.h
    tf = hD * np.tensordot(fields, f.values(spec), axes=((1, 2), (0, 1)))
    tg = hD * np.tensordot(fields, g.values(spec), axes=((1, 2), (0, 1)))
    c_ff, c_gg = lattice_covariance(f, f, spec), lattice_covariance(g, g, spec)
    c_fg = lattice_covariance(f, g, spec)
    emp = np.mean(tf * tg)
    se = np.sqrt((c_ff * c_gg + c_fg**2) / S)
    assert abs(emp - c_fg) < 4 * se
    assert abs(np.mean(tf)) < 4 * np.sqrt(c_ff / S)


# ---------------------------------------------------------------------------
# Mollifier


def test_sigma_hat_normalization_and_bounds():
    m = Mollifier(D=2, lam=4.0, q_max=32.0)
    q = np.linspace(0, 32, 500)
    s = m.sigma_hat(q)
    assert abs(s[0] - 1.0) < 1e-12
    assert np.all(np.abs(s) <= 1.0)


def test_mollifier_real_space_unit_mass():
    spec = build_lattice(D=2, N=128, L=8.0, K=1)
    m = Mollifier.for_lattice(spec, 2.0)
    v = m.values(spec)
    assert abs(spec.h**2 * v.sum() - 1.0) < 1e-3  # Riemann-sum mass


def test_mollify_preserves_constants():
    spec = build_lattice(D=1, N=64, L=8.0, K=1)
    m = Mollifier.for_lattice(spec, 4.0)
    field = LatticeField(spec=spec, data=np.full((1, 64), 1.7))
    out = mollify(field, m)
    assert np.allclose(out.data, 1.7, atol=1e-12)


def test_mollify_matches_direct_convolution():
    # smooth field: spectral multiplication == cyclic real-space convolution
    # (agreement is limited by aliasing of sigma_hat beyond the grid Nyquist,
    # so the grid must resolve the mollifier scale well)
    spec = build_lattice(D=1, N=512, L=16.0, K=1)
    m = Mollifier.for_lattice(spec, 1.0)
    g = gaussian_bump((0.0,), 1.0)
    field = LatticeField(spec=spec, data=g.values(spec))
    out = mollify(field, m)
    kern = m.values(spec)
    conv = spec.h * np.real(np.fft.ifft(np.fft.fft(np.fft.ifftshift(kern)) *
                                        np.fft.fft(field.data[0])))
    assert np.max(np.abs(out.data[0] - conv)) < 1e-6


def test_mollification_contracts_covariance():
    spec = build_lattice(D=1, N=128, L=8.0, K=1)
    m = Mollifier.for_lattice(spec, 2.0)
    f = gaussian_bump((0.0,), 0.5)
    fields = sample_batch(spec, derive_rng(5, 0), 200)
    from rpgauss.lattice import apply_multiplier
    smooth = apply_multiplier(spec, fields, m.multiplier(spec))
    t = spec.h * np.tensordot(fields, f.values(spec), axes=((1, 2), (0, 1)))
    ts = spec.h * np.tensordot(smooth, f.values(spec), axes=((1, 2), (0, 1)))
    assert np.var(ts) <= np.var(t)


def test_mollifier_support_must_fit():
    spec = build_lattice(D=1, N=32, L=2.0, K=1)
    with pytest.raises(ValueError):
        Mollifier.for_lattice(spec, 0.5)  # support 1/lam = 2 >= L/2


def test_sigma_hat_tail_handling():
    m = Mollifier(D=1, lam=1.0, q_max=8.0)
    with pytest.raises(ValueError):
        m.sigma_hat(9.0)
    assert m.sigma_hat(9.0, tail_zero=True) == 0.0


# ---------------------------------------------------------------------------
# Snapshots


def test_field_snapshot_round_trip(tmp_path):
    spec = build_lattice(D=2, N=16, L=4.0, K=2)
    field = sample_gff(spec, 77)
    base = str(tmp_path / "snap")
    save_field(field, base, seed=77)
    back = load_field(base)
    assert back.spec == spec
    assert np.array_equal(back.data, field.data)
    import json
    sidecar = json.loads((tmp_path / "snap.json").read_text())
    assert sidecar["seed"] == 77
    assert sidecar["dtype"] == "<f8"
