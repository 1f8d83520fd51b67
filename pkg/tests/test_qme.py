"""Spin-register master equations and the exact few-level reference."""

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from noisychain import qme
from noisychain.baths import FlatNoise, TlsBath
from noisychain.errors import CapacityError
from noisychain.lattice import FreqGrid, build_chain


def _dense(superop):
    import scipy.sparse as sp

    return np.asarray(superop.todense()) if sp.issparse(superop) else np.asarray(superop)


def test_fermion_anticommutators():
    n = 4
    dim = 2**n
    ops = [qme.jw_fermion(i, n) for i in range(n)]
    eye = np.eye(dim)
    for i in range(n):
        for j in range(n):
            acc = ops[i] @ ops[j].conj().T + ops[j].conj().T @ ops[i]
            expected = eye if i == j else 0.0
            assert np.max(np.abs(acc - expected)) < 1e-12
            acc2 = ops[i] @ ops[j] + ops[j] @ ops[i]
            assert np.max(np.abs(acc2)) < 1e-12


def test_spin_register_spectrum_is_subset_sums():
    h = build_chain(4, 0.7, 1.1)
    single = np.linalg.eigvalsh(h.matrix)
    many = np.linalg.eigvalsh(qme.spin_hamiltonian(h))
    subset_sums = sorted(
        sum(single[i] for i in range(4) if mask >> i & 1) for mask in range(16)
    )
    assert np.allclose(np.sort(many), subset_sums, atol=1e-10)


def test_single_site_dephasing_rate():
    # coherence of one spin decays at exactly gamma2star
    gen = qme.LindbladGenerator(n_sites=1, hamiltonian=np.zeros((2, 2)),
                                gamma1=0.0, gamma2star=0.3)
    plus = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
    t = np.linspace(0.0, 5.0, 26)
    rhos = qme.lindblad_evolve(gen, plus, t)
    coh = rhos[:, 0, 1].real
    assert np.max(np.abs(coh - 0.5 * np.exp(-0.3 * t))) < 1e-10


def test_single_site_decay_rates():
    # excited population decays at gamma1, coherence at gamma1/2
    gen = qme.LindbladGenerator(n_sites=1, hamiltonian=np.zeros((2, 2)),
                                gamma1=0.4, gamma2star=0.0)
    rho0 = np.array([[0.3, 0.4], [0.4, 0.7]], dtype=complex)
    t = np.linspace(0.0, 5.0, 26)
    rhos = qme.lindblad_evolve(gen, rho0, t)
    assert np.max(np.abs(rhos[:, 1, 1].real - 0.7 * np.exp(-0.4 * t))) < 1e-10
    assert np.max(np.abs(rhos[:, 0, 1] - 0.4 * np.exp(-0.2 * t))) < 1e-10


def test_zero_rates_reduce_to_unitary():
    h = build_chain(3, 0.5, 1.0)
    hs = qme.spin_hamiltonian(h)
    gen = qme.LindbladGenerator(n_sites=3, hamiltonian=hs, gamma1=0.0, gamma2star=0.0)
    rng = np.random.default_rng(3)
    m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho0 = m @ m.conj().T
    rho0 /= np.trace(rho0).real
    t_grid = np.linspace(0.0, 4.0, 41)
    rhos = qme.lindblad_evolve(gen, rho0, t_grid)
    worst = 0.0
    for k, t in enumerate(t_grid):
        u = sla.expm(-1j * hs * t)
        worst = max(worst, float(np.max(np.abs(rhos[k] - u @ rho0 @ u.conj().T))))
    assert worst < 1e-8


def test_flat_noise_redfield_is_dephasing_lindblad():
    # white noise: the Redfield generator collapses to pure dephasing at
    # half the noise level
    h = build_chain(2, 1.0, 0.6)
    level = 0.4
    br = qme.bloch_redfield_generator(h, FlatNoise(level=level, halfwidth=1e8))
    lb = qme.LindbladGenerator(n_sites=2, hamiltonian=qme.spin_hamiltonian(h),
                               gamma1=0.0, gamma2star=level / 2.0)
    assert np.max(np.abs(_dense(br.superoperator()) - _dense(lb.superoperator()))) < 1e-8


def test_steady_state_routes_agree():
    gen = qme.LindbladGenerator(
        n_sites=2, hamiltonian=qme.spin_hamiltonian(build_chain(2, 0.5, 0.6)),
        gamma1=0.3, gamma2star=0.1)
    rho_w = qme.steady_state(gen, np.eye(4) / 4.0, warmup_time=80.0)
    rho_n, ev = qme.null_steady_state(gen)
    assert abs(ev) < 1e-10
    assert np.max(np.abs(rho_w - rho_n)) < 1e-8
    # decay-only fixed point is the vacuum
    assert rho_n[0, 0].real == pytest.approx(1.0, abs=1e-8)


def test_regression_correlator_equal_time():
    gen = qme.LindbladGenerator(
        n_sites=2, hamiltonian=qme.spin_hamiltonian(build_chain(2, 0.5, 0.6)),
        gamma1=0.0, gamma2star=0.25)
    rho_ss, _ = qme.null_steady_state(gen)
    a = qme.jw_fermion(0, 2)
    b = a.conj().T
    tau = np.linspace(0.0, 2.0, 21)
    fwd, rev = qme.regression_correlator(gen, rho_ss, a, b, tau)
    direct = np.trace(a @ b @ rho_ss)
    assert fwd[0] == pytest.approx(direct, abs=1e-12)
    assert rev[0] == pytest.approx(direct, abs=1e-12)


def test_regression_correlator_needs_zero_start():
    gen = qme.LindbladGenerator(n_sites=1, hamiltonian=np.zeros((2, 2)),
                                gamma1=0.1, gamma2star=0.0)
    a = qme.jw_fermion(0, 1)
    with pytest.raises(ValueError):
        qme.regression_correlator(gen, np.eye(2) / 2.0, a, a.conj().T,
                                  np.linspace(1.0, 2.0, 11))


def test_dephased_site_line_shape():
    # single dephased level: line at the onsite energy, hermitian spectral
    # weight, near-unit weight (window and grid tails eat a few percent)
    h = build_chain(1, 1.0, 0.0, boundary="open")
    gen = qme.LindbladGenerator(n_sites=1, hamiltonian=qme.spin_hamiltonian(h),
                                gamma1=0.0, gamma2star=0.2)
    tau = np.arange(0.0, 400.0001, 0.05)
    grid = FreqGrid(-1.0, 3.0, 2001)
    gg = qme.qme_greens(gen, (0, 0), tau, 50.0, grid)
    assert gg.sites == (0,)
    a = gg.spectral
    assert np.max(np.abs(a - np.conj(np.swapaxes(a, 1, 2)))) < 1e-12
    diag = a[:, 0, 0].real
    assert grid.omegas[int(np.argmax(diag))] == pytest.approx(1.0, abs=grid.spacing)
    norm = np.trapezoid(diag, grid.omegas) / (2.0 * np.pi)
    assert 0.85 < norm < 1.05


def test_exact_tls_rabi():
    h = build_chain(1, 1.0, 0.0, boundary="open")
    bath = TlsBath(levels=((1.0, 0.2),))
    t = np.linspace(0.0, 10.0, 201)
    traj = qme.exact_tls_evolve(h, [bath], 0, t)
    assert np.max(np.abs(traj.qubit_occupations[:, 0] - np.cos(0.2 * t) ** 2)) < 1e-10
    # single excitation: the total is conserved exactly
    assert np.max(np.abs(traj.total - 1.0)) < 1e-12


def test_exact_tls_rejects_multi_excitation():
    from noisychain.kbe import InitialState

    h = build_chain(2, 1.0, 0.0, boundary="open")
    # preparation hamiltonian -1 everywhere: a sharp Fermi sea fills both sites
    ini = InitialState(ini_matrix=-np.eye(2))
    with pytest.raises(ValueError, match="single-excitation"):
        qme.exact_tls_evolve(h, [TlsBath(levels=()), TlsBath(levels=())], ini,
                             np.linspace(0.0, 1.0, 11))


def test_generator_validation():
    with pytest.raises(ValueError):
        qme.LindbladGenerator(n_sites=2, hamiltonian=np.zeros((2, 2)),
                              gamma1=0.1, gamma2star=0.0)
    with pytest.raises(ValueError):
        qme.LindbladGenerator(n_sites=2, hamiltonian=np.zeros((4, 4)),
                              gamma1=-0.1, gamma2star=0.0)
    with pytest.raises(ValueError):
        qme.LindbladGenerator(n_sites=2, hamiltonian=np.zeros((4, 4)),
                              gamma1=np.array([0.1, 0.2, 0.3]), gamma2star=0.0)


def test_evolve_validates_state_and_grid():
    gen = qme.LindbladGenerator(n_sites=1, hamiltonian=np.zeros((2, 2)),
                                gamma1=0.1, gamma2star=0.0)
    good = np.eye(2) / 2.0
    with pytest.raises(ValueError, match="hermitian"):
        qme.lindblad_evolve(gen, np.array([[0.5, 0.3], [0.0, 0.5]]), np.linspace(0, 1, 5))
    with pytest.raises(ValueError, match="trace"):
        qme.lindblad_evolve(gen, 2.0 * good, np.linspace(0, 1, 5))
    with pytest.raises(ValueError, match="uniform"):
        qme.lindblad_evolve(gen, good, np.array([0.0, 0.1, 0.3]))


def test_register_capacity_guards():
    gen = qme.LindbladGenerator(n_sites=9, hamiltonian=np.zeros((512, 512)),
                                gamma1=0.1, gamma2star=0.0)
    with pytest.raises(CapacityError):
        gen.superoperator()
    with pytest.raises(CapacityError):
        qme.bloch_redfield_generator(build_chain(6, 1.0, 0.5),
                                     FlatNoise(level=0.1, halfwidth=1e6))
    with pytest.raises(CapacityError):
        qme.jw_fermion(0, 13)


@settings(max_examples=10, deadline=None)
@given(
    onsite=st.floats(min_value=-1.0, max_value=1.0),
    hopping=st.floats(min_value=0.0, max_value=1.0),
    gamma1=st.floats(min_value=0.0, max_value=0.5),
    gamma2star=st.floats(min_value=0.0, max_value=0.5),
)
def test_evolution_preserves_state_structure(onsite, hopping, gamma1, gamma2star):
    h = build_chain(2, onsite, hopping)
    gen = qme.LindbladGenerator(n_sites=2, hamiltonian=qme.spin_hamiltonian(h),
                                gamma1=gamma1, gamma2star=gamma2star)
    rho0 = np.diag([0.1, 0.2, 0.3, 0.4]).astype(complex)
    rhos = qme.lindblad_evolve(gen, rho0, np.linspace(0.0, 3.0, 16))
    for rho in rhos:
        assert abs(np.trace(rho).real - 1.0) < 1e-9
        assert np.max(np.abs(rho - rho.conj().T)) < 1e-9
        assert np.min(np.linalg.eigvalsh(rho)) > -1e-8
