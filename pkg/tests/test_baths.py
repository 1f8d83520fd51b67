"""Bath spectral functions, correlators, and the two-level-system sampler."""

import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from hypothesis import given, settings
from hypothesis import strategies as st

from noisychain.baths import (
    FlatNoise,
    OhmicBath,
    TlsBath,
    boson_correlators,
    noise_power,
    power_spectral_density,
    principal_value_transform,
    sample_tls_bath,
    spectral_function,
    support_halfwidth,
    tls_spectral_density,
)
from noisychain.lattice import FreqGrid


def test_ohmic_coupling_density_value():
    bath = OhmicBath(alpha=0.1, cutoff=5.0, temperature=1.0)
    # alpha * omega * exp(-omega/cutoff) at omega = 1
    assert spectral_function(bath, 1.0) == pytest.approx(0.08187307530779818, rel=1e-12)


def test_ohmic_coupling_density_is_odd():
    bath = OhmicBath(alpha=0.3, cutoff=2.0, temperature=0.5)
    w = np.linspace(-10.0, 10.0, 101)
    assert np.allclose(spectral_function(bath, w), -spectral_function(bath, -w))


def test_ohmic_power_spectrum_zero_frequency_limit():
    # S(0) = 2 * alpha * T, taken analytically rather than via coth overflow
    bath = OhmicBath(alpha=0.0125, cutoff=3.0, temperature=40.0)
    assert power_spectral_density(bath, 0.0) == pytest.approx(1.0, rel=1e-12)
    assert power_spectral_density(bath, 1e-9) == pytest.approx(1.0, rel=1e-6)


def test_ohmic_zero_temperature():
    bath = OhmicBath(alpha=0.2, cutoff=4.0, temperature=0.0)
    w = np.linspace(-8.0, 8.0, 41)
    assert np.allclose(power_spectral_density(bath, w),
                       np.abs(spectral_function(bath, w)))
    # absorption from an empty bath is forbidden at T = 0
    assert noise_power(bath, -1.0) == pytest.approx(0.0, abs=1e-15)


def test_detailed_balance():
    bath = OhmicBath(alpha=0.15, cutoff=5.0, temperature=2.0)
    beta = 0.5
    for w in (0.3, 1.0, 2.7):
        ratio = noise_power(bath, w) / noise_power(bath, -w)
        assert ratio == pytest.approx(np.exp(beta * w), rel=1e-10)


def test_flat_noise_levels():
    bath = FlatNoise(level=0.6, halfwidth=3.0)
    assert power_spectral_density(bath, 0.0) == pytest.approx(1.2)
    assert noise_power(bath, 1.0) == pytest.approx(0.6)
    assert noise_power(bath, 10.0) == pytest.approx(0.0)


def test_bath_parameter_validation():
    with pytest.raises(ValueError):
        OhmicBath(alpha=-0.1, cutoff=1.0, temperature=1.0)
    with pytest.raises(ValueError):
        OhmicBath(alpha=0.1, cutoff=0.0, temperature=1.0)
    with pytest.raises(ValueError):
        OhmicBath(alpha=0.1, cutoff=1.0, temperature=-1.0)


def test_principal_value_against_quadrature():
    # P int f(nu)/(omega - nu) dnu; adaptive Cauchy quadrature as reference
    grid = np.linspace(-40.0, 40.0, 8001)
    f = 1.0 / (1.0 + grid**2)
    transformed = np.asarray(principal_value_transform(f, grid))
    for w in (0.5, 1.5):
        i = int(np.argmin(np.abs(grid - w)))
        ref = -quad(lambda nu: 1.0 / (1.0 + nu**2), -40.0, 40.0,
                    weight="cauchy", wvar=float(grid[i]))[0]
        assert transformed[i] == pytest.approx(ref, rel=1e-4)
    # odd integrand: the transform vanishes at the origin
    assert abs(transformed[4000]) < 1e-10


def test_principal_value_needs_three_points():
    with pytest.raises(ValueError):
        principal_value_transform(np.array([1.0, 1.0]), np.array([0.0, 1.0]))


def test_tls_spectral_density_peak_and_weight():
    omegas = np.linspace(0.0, 4.0, 8001)
    bath = TlsBath(levels=((2.0, 0.3),))
    dens = tls_spectral_density(bath, omegas, smearing=0.02)
    i = int(np.argmin(np.abs(omegas - 2.0)))
    assert dens[i] == pytest.approx(2.0 * 0.3**2 / 0.02, rel=1e-6)
    weight = np.trapezoid(dens, omegas) / (2.0 * np.pi)
    assert weight == pytest.approx(0.3**2, rel=0.01)


def test_tls_sampler_is_deterministic():
    a = sample_tls_bath(0.3, 40, (1.0, 3.0), seed=7)
    b = sample_tls_bath(0.3, 40, (1.0, 3.0), seed=7)
    assert a.levels == b.levels
    c = sample_tls_bath(0.3, 40, (1.0, 3.0), seed=8)
    assert a.levels != c.levels


def test_tls_sampler_reproduces_target_rate():
    target = 0.3
    band = (1.0, 3.0)
    bath = sample_tls_bath(target, 40, band, seed=7)
    # total weight is exact by construction
    total = sum(g * g for _, g in bath.levels)
    assert total == pytest.approx(target * (band[1] - band[0]) / (2.0 * np.pi), rel=1e-12)
    # smeared density averages to the flat target inside the band
    w = np.linspace(1.2, 2.8, 401)
    dens = tls_spectral_density(bath, w, smearing=0.05)
    assert np.mean(dens) == pytest.approx(target, rel=0.10)


def test_tls_sampler_band_validation():
    with pytest.raises(ValueError):
        sample_tls_bath(0.3, 10, (0.0, 2.0), seed=1)
    with pytest.raises(ValueError):
        sample_tls_bath(0.3, 10, (3.0, 1.0), seed=1)
    with pytest.raises(ValueError):
        sample_tls_bath(-0.1, 10, (1.0, 2.0), seed=1)


def test_tls_bath_temperature_cap():
    # sampled levels only stay empty while k_B T is well below the band floor
    with pytest.raises(ValueError, match="temperature"):
        TlsBath(levels=((1.0, 0.1),), temperature=0.5)
    TlsBath(levels=((1.0, 0.1),), temperature=0.05)  # at the cap, fine


def test_boson_correlators_structure():
    bath = OhmicBath(alpha=0.05, cutoff=2.0, temperature=1.0)
    half = support_halfwidth(bath)
    grid = FreqGrid(-half, half, 4001)
    corr = boson_correlators(bath, grid)
    w = grid.omegas
    sr = corr.retarded[:, 0, 0]
    # Im Sigma+ = -J/2, Keldysh = -i S
    assert np.allclose(sr.imag, -0.5 * spectral_function(bath, w), atol=1e-12)
    assert np.allclose(corr.keldysh[:, 0, 0],
                       -1j * power_spectral_density(bath, w), atol=1e-12)
    # odd Im part makes the dispersive Re part even in omega
    assert np.allclose(sr.real, sr.real[::-1], atol=1e-10)


def test_boson_correlators_narrow_grid_warns():
    bath = OhmicBath(alpha=0.05, cutoff=2.0, temperature=1.0)
    grid = FreqGrid(-4.0, 4.0, 201)  # 2 cutoffs per side, too narrow
    with pytest.warns(UserWarning):
        boson_correlators(bath, grid)


@settings(max_examples=40, deadline=None)
@given(
    alpha=st.floats(min_value=1e-3, max_value=1.0),
    cutoff=st.floats(min_value=0.1, max_value=20.0),
    temperature=st.floats(min_value=0.0, max_value=50.0),
    w=st.floats(min_value=-30.0, max_value=30.0),
)
def test_noise_power_nonnegative_and_symmetries(alpha, cutoff, temperature, w):
    bath = OhmicBath(alpha=alpha, cutoff=cutoff, temperature=temperature)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # coth overflow near w = 0 is benign
        assert noise_power(bath, w) >= 0.0
        assert power_spectral_density(bath, w) == pytest.approx(
            power_spectral_density(bath, -w), rel=1e-9, abs=1e-300)
        assert spectral_function(bath, w) == pytest.approx(
            -spectral_function(bath, -w), rel=1e-9, abs=1e-300)
