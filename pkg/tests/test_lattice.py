import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rpgauss.lattice import (LatticeField, apply_multiplier, build_lattice, dft_forward,
                             dft_inverse, laplacian_power)


def test_build_lattice_rejects_odd_n():
    with pytest.raises(ValueError):
        build_lattice(D=1, N=31, L=8.0, K=1)


def test_build_lattice_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_lattice(D=1, N=32, L=-1.0, K=1)
    with pytest.raises(ValueError):
        build_lattice(D=0, N=32, L=8.0, K=1)


def test_spacing_and_volume():
    spec = build_lattice(D=2, N=16, L=8.0, K=3)
    assert spec.h == 0.5
    assert spec.n_sites == 256
    assert spec.volume == 64.0
    assert spec.shape == (16, 16)


def test_dft_round_trip():
    spec = build_lattice(D=2, N=16, L=8.0, K=2)
    rng = np.random.default_rng(0)
    f = rng.standard_normal((spec.K,) + spec.shape)
    back = dft_inverse(spec, dft_forward(spec, f))
    assert np.max(np.abs(back - f)) < 1e-12


def test_parseval():
    spec = build_lattice(D=2, N=16, L=8.0, K=1)
    rng = np.random.default_rng(1)
    f = rng.standard_normal((spec.K,) + spec.shape)
    lhs = spec.h**spec.D * np.sum(f**2)
    fhat = dft_forward(spec, f)
    rhs = np.sum(np.abs(fhat) ** 2) / spec.volume
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]), st.sampled_from([4, 8, 16]))
def test_round_trip_and_parseval_property(seed, D, N):
    spec = build_lattice(D=D, N=N, L=4.0, K=1)
    f = np.random.default_rng(seed).standard_normal((1,) + spec.shape)
    fhat = dft_forward(spec, f)
    assert np.max(np.abs(dft_inverse(spec, fhat) - f)) < 1e-12
    lhs = spec.h**spec.D * np.sum(f**2)
    rhs = np.sum(np.abs(fhat) ** 2) / spec.volume
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_constant_field_transform():
    # constant field: all weight in the zero mode, fhat(0) = L^D * value
    spec = build_lattice(D=1, N=32, L=8.0, K=1)
    f = np.full((1, 32), 2.5)
    fhat = dft_forward(spec, f)
    zero = np.argmin(np.abs(spec.axis_momenta()))
    assert abs(fhat[0, zero] - 2.5 * spec.volume) < 1e-10
    rest = np.delete(fhat[0], zero)
    assert np.max(np.abs(rest)) < 1e-10


def test_delta_field_transform():
    # unit mass at the origin: fhat(p) = h^D for every p (origin-centered grid)
    spec = build_lattice(D=1, N=32, L=8.0, K=1)
    f = np.zeros((1, 32))
    origin = spec.N // 2
    assert spec.axis_coords()[origin] == 0.0
    f[0, origin] = 1.0
    fhat = dft_forward(spec, f)
    assert np.max(np.abs(fhat - spec.h)) < 1e-12


def test_momentum_grid_symmetric_up_to_nyquist():
    spec = build_lattice(D=1, N=8, L=4.0, K=1)
    p = np.sort(spec.axis_momenta())
    # every momentum except the unpaired Nyquist mode has its negative present
    for v in p:
        if abs(abs(v) - np.pi * spec.N / spec.L) < 1e-12 and v < 0:
            continue
        assert np.any(np.abs(p + v) < 1e-12)


def test_laplacian_power_matches_symbol():
    spec = build_lattice(D=2, N=16, L=8.0, K=1)
    rng = np.random.default_rng(2)
    f = rng.standard_normal((1,) + spec.shape)
    lap2 = laplacian_power(spec, f, 2)
    fhat = dft_forward(spec, f)
    oracle = dft_inverse(spec, spec.psq() ** 2 * fhat).real
    assert np.max(np.abs(lap2 - oracle)) < 1e-9


def test_apply_multiplier_real():
    spec = build_lattice(D=1, N=16, L=4.0, K=1)
    rng = np.random.default_rng(3)
    f = rng.standard_normal((1,) + spec.shape)
    out = apply_multiplier(spec, f, np.ones(spec.shape))
    assert out.dtype == np.float64
    assert np.max(np.abs(out - f)) < 1e-12


def test_field_pairing_is_riemann_sum():
    spec = build_lattice(D=1, N=16, L=4.0, K=1)
    data = np.ones((1,) + spec.shape)
    field = LatticeField(spec=spec, data=data)
    g = np.ones((1,) + spec.shape)
    assert abs(field.pairing(g) - spec.volume) < 1e-12


def test_field_rejects_nonfinite():
    spec = build_lattice(D=1, N=16, L=4.0, K=1)
    data = np.ones((1,) + spec.shape)
    data[0, 3] = np.nan
    with pytest.raises(ValueError):
        LatticeField(spec=spec, data=data)
