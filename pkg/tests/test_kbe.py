"""Two-time integrator: decay laws, memory kernels, guards, late-time spectra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisychain.baths import TlsBath, sample_tls_bath
from noisychain.errors import CapacityError
from noisychain.harness import find_spectral_peaks
from noisychain.kbe import (
    InitialState,
    analytic_gk,
    kbe_integrate,
    late_time_spectrum,
    markov_self_energy,
    occupations,
    tls_memory_self_energy,
)
from noisychain.lattice import FreqGrid, build_chain


def _lone_site():
    return build_chain(1, 0.0, 0.0, boundary="open")


def test_markov_exponential_decay():
    gamma = 1.0
    run = kbe_integrate(_lone_site(), markov_self_energy([gamma]),
                        InitialState.single_site(1, 0), 2.0, 1e-3)
    t = run.t_grid
    n, _ = occupations(run)
    assert np.max(np.abs(n[:, 0] - np.exp(-gamma * t))) < 1e-6
    # retarded propagator envelope decays at half the population rate
    gr = np.abs(run.retarded[:, 0, 0, 0])
    assert np.max(np.abs(gr - np.exp(-0.5 * gamma * t))) < 1e-6


def test_matches_commuting_closed_form():
    h = build_chain(3, 0.0, 1.0)
    rates = [0.3, 0.3, 0.3]
    ini = InitialState.single_site(3, 0)
    run = kbe_integrate(h, markov_self_energy(rates), ini, 2.0, 0.01)
    m = run.n_times
    worst = 0.0
    for i, j in ((m - 1, m - 1), (m - 1, m // 2), (m // 2, m // 4), (m - 1, 0)):
        ref = analytic_gk(h, rates, ini, run.t_grid[i], run.t_grid[j])
        worst = max(worst, float(np.max(np.abs(run.keldysh_at(i, j) - ref))))
    assert worst < 1e-4


def test_closed_form_requires_commuting_rates():
    h = build_chain(3, 0.0, 1.0)
    ini = InitialState.single_site(3, 0)
    with pytest.raises(ValueError, match="commute"):
        analytic_gk(h, [0.5, 0.1, 0.1], ini, 1.0, 0.5)


def test_closed_form_time_ordering():
    h = build_chain(2, 0.0, 1.0)
    ini = InitialState.single_site(2, 0)
    a = analytic_gk(h, [0.2, 0.2], ini, 1.0, 0.4)
    b = analytic_gk(h, [0.2, 0.2], ini, 0.4, 1.0)
    assert np.allclose(b, -a.conj().T, atol=1e-14)


def test_single_tls_rabi_oscillation():
    # one qubit resonant with one TLS: occupation cos^2(g t)
    h = build_chain(1, 1.0, 0.0, boundary="open")
    bath = TlsBath(levels=((1.0, 0.05),))
    run = kbe_integrate(h, tls_memory_self_energy([bath]),
                        InitialState.single_site(1, 0), 20.0, 0.01)
    n, _ = occupations(run)
    assert np.max(np.abs(n[:, 0] - np.cos(0.05 * run.t_grid) ** 2)) < 5e-5


def test_memory_kernels_single_level():
    bath = TlsBath(levels=((1.0, 0.1),))
    sigma = tls_memory_self_energy([bath, None])
    sr, sk = sigma.kernels(0.1, 31)
    lags = 0.1 * np.arange(31)
    expected = -0.01j * np.exp(-1j * lags)
    assert np.allclose(sr[:, 0], expected, atol=1e-14)
    # empty levels at T = 0: hole factor 1, Keldysh kernel equals retarded
    assert np.allclose(sk[:, 0], sr[:, 0], atol=1e-14)
    assert not np.any(sr[:, 1]) and not np.any(sk[:, 1])


def test_kernel_envelope_tracks_flat_band():
    # many levels across a band: |kernel(0)| = rate * width / 2pi, fast decay
    width = 2.0
    bath = sample_tls_bath(0.1, 200, (1.5, 3.5), seed=5)
    sigma = tls_memory_self_energy([bath])
    sr, _ = sigma.kernels(0.01, 4001)
    env = np.abs(sr[:, 0])
    assert env[0] == pytest.approx(0.1 * width / (2.0 * np.pi), rel=1e-12)
    # dephased tail: beyond a few inverse bandwidths the envelope is small
    tail = env[int(10.0 / width / 0.01):]
    assert np.sqrt(np.mean(tail**2)) < 0.20 * env[0]


def test_empty_bath_matches_zero_rate():
    h = build_chain(2, 0.5, 1.0)
    ini = InitialState.single_site(2, 0)
    mem = kbe_integrate(h, tls_memory_self_energy([TlsBath(levels=()),
                                                   TlsBath(levels=())]),
                        ini, 1.0, 0.01)
    mark = kbe_integrate(h, markov_self_energy([0.0, 0.0]), ini, 1.0, 0.01)
    assert np.max(np.abs(mem.keldysh - mark.keldysh)) < 1e-8
    # closed system: total occupation conserved
    _, n_tot = occupations(mem)
    assert np.max(np.abs(n_tot - 1.0)) < 1e-8


def test_stability_guard():
    h = build_chain(1, 10.0, 0.0, boundary="open")
    with pytest.raises(ValueError, match="dt"):
        kbe_integrate(h, markov_self_energy([0.1]),
                      InitialState.single_site(1, 0), 10.0, 0.1)


def test_memory_capacity_guard():
    with pytest.raises(CapacityError):
        kbe_integrate(_lone_site(), markov_self_energy([0.0]),
                      InitialState.single_site(1, 0), 1000.0, 0.1)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        kbe_integrate(_lone_site(), markov_self_energy([0.1]),
                      InitialState.single_site(1, 0), 1.05, 0.1)
    with pytest.raises(ValueError):
        kbe_integrate(_lone_site(), markov_self_energy([0.1]),
                      InitialState.single_site(1, 0), -1.0, 0.1)


def test_two_time_accessors():
    h = build_chain(2, 0.0, 1.0)
    run = kbe_integrate(h, markov_self_energy([0.1, 0.1]),
                        InitialState.single_site(2, 0), 1.0, 0.05)
    # retarded vanishes for t < t'; Keldysh mirrors anti-hermitially
    assert not np.any(run.retarded_at(3, 7))
    assert np.allclose(run.keldysh_at(3, 7), -run.keldysh_at(7, 3).conj().T,
                       atol=1e-14)


def test_occupations_stay_physical():
    h = build_chain(4, 1.0, 0.8)
    run = kbe_integrate(h, markov_self_energy([0.2] * 4),
                        InitialState.single_site(4, 1), 8.0, 0.02)
    n, n_tot = occupations(run)
    # excursions below zero sit at the integrator's O(dt^2) error scale
    assert np.all(n > -1e-4) and np.all(n < 1.0 + 1e-4)
    # pure decay channels: the total can only go down
    assert np.all(np.diff(n_tot) < 1e-12)


def test_late_time_spectrum_line():
    # relaxed single level: Lorentzian at the level, window-limited width
    gamma = 0.25
    run = kbe_integrate(_lone_site(), markov_self_energy([gamma]),
                        InitialState.single_site(1, 0), 40.0, 0.04)
    grid = FreqGrid(-2.0, 2.0, 801)
    spec = late_time_spectrum(run, grid)
    a = (1j * (spec.retarded - spec.advanced))[:, 0, 0].real
    peaks = find_spectral_peaks(grid.omegas, a)
    assert len(peaks) == 1
    assert peaks[0].position == pytest.approx(0.0, abs=grid.spacing)
    # the cos^2 window broadens the bare gamma; bracket rather than pin
    assert gamma < peaks[0].fwhm < 2.0 * gamma


def test_late_time_distribution_handoff():
    # empty decay channels drain the site; the final slice then satisfies
    # the empty-band relation K = (G+ - G-), window broadening cancelling
    run = kbe_integrate(_lone_site(), markov_self_energy([0.25]),
                        InitialState.single_site(1, 0), 40.0, 0.04)
    grid = FreqGrid(-2.0, 2.0, 801)
    spec = late_time_spectrum(run, grid)
    diff = spec.keldysh - (spec.retarded - spec.advanced)
    rel = np.max(np.abs(diff)) / np.max(np.abs(spec.keldysh))
    assert rel < 1e-2


def test_narrow_band_crossover_to_markov():
    # broad flat band at weak coupling: structured environment relaxes the
    # qubit at the flat-band golden-rule rate
    h = build_chain(1, 2.5, 0.0, boundary="open")
    bath = sample_tls_bath(0.05, 200, (0.5, 4.5), seed=2)
    run = kbe_integrate(h, tls_memory_self_energy([bath]),
                        InitialState.single_site(1, 0), 16.0, 0.01)
    n, _ = occupations(run)
    dev = np.max(np.abs(n[:, 0] - np.exp(-0.05 * run.t_grid)))
    assert dev < 0.05


def test_initial_state_validation():
    with pytest.raises(ValueError):
        InitialState.single_site(3, 5)
    ini = InitialState.single_site(3, 1)
    occ = ini.occupation_matrix()
    assert np.allclose(np.diag(occ), [0.0, 1.0, 0.0])


@settings(max_examples=10, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=3),
    rate=st.floats(min_value=0.0, max_value=0.5),
    site=st.integers(min_value=0, max_value=2),
)
def test_integrator_keeps_occupations_bounded(n, rate, site):
    h = build_chain(n, 0.5, 0.5)
    run = kbe_integrate(h, markov_self_energy([rate] * n),
                        InitialState.single_site(n, site % n), 2.0, 0.02)
    occ, n_tot = occupations(run)
    assert np.all(occ > -1e-4) and np.all(occ < 1.0 + 1e-4)
    assert np.all(np.diff(n_tot) < 1e-10)
