"""Spin-register master equations and exact small-system references.

The chain maps onto a register of 2^N spins through the Jordan-Wigner
string; site densities map onto (sigma^z + 1)/2, so a bath coupled to the
site density acts on the spin side through sigma^z/2 (the identity part
commutes out of every dissipator). Generators built here keep that
normalization so their linewidths line up with the frequency-domain solver
without any rescaling.

Superoperators use row-major vec: vec(A rho B) = kron(A, B.T) vec(rho).
Dense propagation is used through N = 5 registers, sparse stepping through
N = 8; beyond that construction refuses rather than thrash.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.sparse.linalg import expm_multiply

from .baths import FlatNoise, OhmicBath, TlsBath, WideBandBath, noise_power, support_halfwidth
from .errors import CapacityError

__all__ = [
    "JW_MAX_SITES",
    "DENSE_MAX_SITES",
    "SPARSE_MAX_SITES",
    "jw_fermion",
    "spin_hamiltonian",
    "LindbladGenerator",
    "BlochRedfieldGenerator",
    "bloch_redfield_generator",
    "lindblad_evolve",
    "steady_state",
    "null_steady_state",
    "regression_correlator",
    "QmeGreens",
    "qme_greens",
    "TlsTrajectory",
    "exact_tls_evolve",
]

JW_MAX_SITES = 12
DENSE_MAX_SITES = 5
SPARSE_MAX_SITES = 8
EXACT_MAX_SPINS = 16

_SZ = sp.csr_matrix(np.diag([1.0, -1.0]))
_SM = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))  # lowers |1> -> |0>
_ID = sp.identity(2, format="csr")


def _kron_chain(factors):
    out = factors[0]
    for f in factors[1:]:
        out = sp.kron(out, f, format="csr")
    return out


def _jw_sparse(site, n_sites):
    factors = [_SZ] * site + [_SM] + [_ID] * (n_sites - site - 1)
    return _kron_chain(factors)


def _site_pauli(op, site, n_sites):
    factors = [_ID] * n_sites
    factors[site] = op
    return _kron_chain(factors)


def jw_fermion(site, n_sites):
    """Dense annihilation operator of one site in the 2^N spin register.

    Jordan-Wigner string of sigma^z on the sites to the left; basis bit 1
    means occupied. Hard-capped at 12 sites; the dense matrix alone is a
    quarter gigabyte there.
    """

    if n_sites < 1:
        raise ValueError("n_sites must be positive")
    if n_sites > JW_MAX_SITES:
        raise CapacityError(f"jw_fermion supports at most {JW_MAX_SITES} sites")
    if not 0 <= site < n_sites:
        raise ValueError(f"site {site} outside register of {n_sites}")
    return np.asarray(_jw_sparse(site, n_sites).todense(), dtype=complex)


def spin_hamiltonian(h):
    """Spin-register image of a quadratic chain Hamiltonian.

    sum_ij t_ij c_i^dag c_j with the Jordan-Wigner fermions; equals the
    direct Pauli construction identically because the string operators
    cancel on nearest products.
    """

    n = h.n_sites
    if n > JW_MAX_SITES:
        raise CapacityError(f"spin_hamiltonian supports at most {JW_MAX_SITES} sites")
    cs = [_jw_sparse(i, n) for i in range(n)]
    dim = 2**n
    out = sp.csr_matrix((dim, dim), dtype=complex)
    rows, cols = np.nonzero(h.matrix)
    for i, j in zip(rows, cols):
        out = out + h.matrix[i, j] * (cs[i].conj().T @ cs[j])
    return np.asarray(out.todense(), dtype=complex)


def _register_guard(n_sites, dense_only=False):
    cap = DENSE_MAX_SITES if dense_only else SPARSE_MAX_SITES
    if n_sites > cap:
        raise CapacityError(
            f"register of {n_sites} sites exceeds the supported {cap}"
        )
    return n_sites > DENSE_MAX_SITES  # True -> sparse backend


@dataclass
class LindbladGenerator:
    """Dephasing-plus-decay Lindblad generator on the spin register.

    Dissipators: rate gamma1 on sigma^- (decay) and gamma2star/2 on sigma^z
    (pure dephasing) per site; with this normalization a single-site
    coherence decays at exactly gamma2star and an excited population at
    gamma1.
    """

    n_sites: int
    hamiltonian: np.ndarray
    gamma1: np.ndarray
    gamma2star: np.ndarray
    _superop: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.hamiltonian = np.asarray(self.hamiltonian, dtype=complex)
        dim = 2**self.n_sites
        if self.hamiltonian.shape != (dim, dim):
            raise ValueError("hamiltonian dimension does not match n_sites")
        self.gamma1 = np.broadcast_to(
            np.asarray(self.gamma1, dtype=float), (self.n_sites,)
        ).copy()
        self.gamma2star = np.broadcast_to(
            np.asarray(self.gamma2star, dtype=float), (self.n_sites,)
        ).copy()
        if np.any(self.gamma1 < 0) or np.any(self.gamma2star < 0):
            raise ValueError("rates must be nonnegative")

    def superoperator(self):
        if self._superop is not None:
            return self._superop
        sparse = _register_guard(self.n_sites)
        n = self.n_sites
        dim = 2**n
        hs = sp.csr_matrix(self.hamiltonian)
        ident = sp.identity(dim, format="csr")
        lv = -1j * (sp.kron(hs, ident) - sp.kron(ident, hs.T))
        for i in range(n):
            if self.gamma1[i] > 0:
                sm = _jw_sparse_pauli(_SM, i, n)
                num = (sm.conj().T @ sm).tocsr()
                lv = lv + self.gamma1[i] * (
                    sp.kron(sm, sm.conj())
                    - 0.5 * sp.kron(num, ident)
                    - 0.5 * sp.kron(ident, num.T)
                )
            if self.gamma2star[i] > 0:
                sz = _jw_sparse_pauli(_SZ, i, n)
                lv = lv + 0.5 * self.gamma2star[i] * (
                    sp.kron(sz, sz.conj()) - sp.kron(ident, ident)
                )
        self._superop = lv.tocsr() if sparse else np.asarray(lv.todense())
        return self._superop


def _jw_sparse_pauli(op, site, n_sites):
    # bare single-site embedding: the model is defined on the spin register,
    # so the decay jump is sigma^-, not the string-dressed fermion; site
    # occupations obey identical closed equations either way
    return _site_pauli(op, site, n_sites)


@dataclass
class BlochRedfieldGenerator:
    """Nonsecular Redfield generator with optional Lamb shifts.

    Stored in the energy eigenbasis: coupling operators A_n and their
    half-transformed partners Lambda_n, plus the unitary that rotates back
    to the site register.
    """

    n_sites: int
    hamiltonian: np.ndarray
    energies: np.ndarray
    transform: np.ndarray
    coupling_ops: list
    lambda_ops: list
    secular: bool = False
    _superop: object = field(default=None, repr=False, compare=False)

    def superoperator(self):
        if self._superop is not None:
            return self._superop
        _register_guard(self.n_sites, dense_only=True)
        dim = 2**self.n_sites
        ident = np.eye(dim)
        h_eig = np.diag(self.energies)
        lv = -1j * (np.kron(h_eig, ident) - np.kron(ident, h_eig.T))
        for a_op, lam in zip(self.coupling_ops, self.lambda_ops):
            lv = lv + np.kron(lam, a_op.T)
            lv = lv + np.kron(a_op, np.conj(lam))
            lv = lv - np.kron(a_op @ lam, ident)
            lv = lv - np.kron(ident, (lam.conj().T @ a_op).T)
        if self.secular:
            gaps = self.energies[:, None] - self.energies[None, :]
            flat = gaps.reshape(-1)
            tol = 1e-8 * max(1.0, float(np.max(np.abs(self.energies))))
            mask = np.abs(flat[:, None] - flat[None, :]) <= tol
            lv = lv * mask
        rot = np.kron(self.transform, np.conj(self.transform))
        self._superop = rot @ lv @ rot.conj().T
        return self._superop


def _half_transform(bath, gap, cache):
    """C(gap)/2 - (i/2pi) P int C(nu)/(gap - nu) d nu for one gap."""

    key = round(float(gap), 12)
    if key in cache:
        return cache[key]
    c_here = float(noise_power(bath, np.asarray(key)))
    half = support_halfwidth(bath)
    if abs(key) < half:
        def regular(nu):
            d = key - nu
            if d == 0.0:
                return 0.0
            return (float(noise_power(bath, np.asarray(nu))) - c_here) / d

        pv, _ = quad(regular, -half, half, points=[key], limit=400)
        pv += c_here * np.log(abs((key + half) / (half - key)))
    else:
        def plain(nu):
            return float(noise_power(bath, np.asarray(nu))) / (key - nu)

        pv, _ = quad(plain, -half, half, limit=400)
    value = 0.5 * c_here - 1j * pv / (2.0 * np.pi)
    cache[key] = value
    return value


def bloch_redfield_generator(h, baths, secular=False, lamb_shift=True):
    """Redfield generator of density-coupled baths on the spin register.

    Coupling operators are sigma^z_i/2 (the site density minus its identity
    part). Each eigenbasis element picks up the half Fourier transform of
    the bath correlation at its own gap: C(gap)/2 plus, when lamb_shift is
    on, -i/(2 pi) times the principal-value integral of C across the bath
    support. The principal values are what moves peak positions; dropping
    them leaves pure linewidths.
    """

    n = h.n_sites
    _register_guard(n, dense_only=True)
    if isinstance(baths, (OhmicBath, FlatNoise)) or baths is None:
        baths = [baths] * n
    baths = list(baths)
    if len(baths) != n:
        raise ValueError("need one bath entry per site (or a single bath)")
    hs = spin_hamiltonian(h)
    energies, v = np.linalg.eigh(hs)
    gaps = energies[:, None] - energies[None, :]
    coupling_ops = []
    lambda_ops = []
    for i, bath in enumerate(baths):
        if bath is None:
            continue
        if not isinstance(bath, (OhmicBath, FlatNoise)):
            raise TypeError(f"unsupported bath type {type(bath).__name__}")
        a_site = 0.5 * np.asarray(_site_pauli(_SZ, i, n).todense(), dtype=complex)
        a_eig = v.conj().T @ a_site @ v
        if lamb_shift:
            cache = {}
            theta = np.empty_like(gaps, dtype=complex)
            for (a, b), gap in np.ndenumerate(gaps):
                theta[a, b] = _half_transform(bath, gap, cache)
        else:
            theta = 0.5 * noise_power(bath, gaps)
        coupling_ops.append(a_eig)
        lambda_ops.append(a_eig * theta)
    return BlochRedfieldGenerator(
        n_sites=n,
        hamiltonian=hs,
        energies=energies,
        transform=np.asarray(v, dtype=complex),
        coupling_ops=coupling_ops,
        lambda_ops=lambda_ops,
        secular=secular,
    )


def _check_density_matrix(rho, dim):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError("density matrix dimension mismatch")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("density matrix must be hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-8:
        raise ValueError("density matrix must have unit trace")
    if np.min(np.linalg.eigvalsh(rho)) < -1e-8:
        raise ValueError("density matrix must be positive semidefinite")
    return rho


def _uniform_spacing(t_grid, what):
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValueError(f"{what} must be a 1d array")
    if t_grid.size == 1:
        return t_grid, 0.0
    steps = np.diff(t_grid)
    if np.any(steps <= 0):
        raise ValueError(f"{what} must be strictly increasing")
    if np.max(np.abs(steps - steps[0])) > 1e-9 * max(steps[0], 1e-30):
        raise ValueError(f"{what} must be uniform for propagator stepping")
    return t_grid, float(steps[0])


def lindblad_evolve(gen, rho0, t_grid):
    """Density matrices along a uniform time grid under gen's generator."""

    dim = gen.hamiltonian.shape[0]
    rho0 = _check_density_matrix(rho0, dim)
    t_grid, dt = _uniform_spacing(t_grid, "t_grid")
    lv = gen.superoperator()
    v = rho0.reshape(-1)
    out = np.empty((t_grid.size, dim, dim), dtype=complex)
    if sp.issparse(lv):
        if t_grid[0] > 0:
            v = expm_multiply(lv * t_grid[0], v)
        if t_grid.size == 1:
            out[0] = v.reshape(dim, dim)
            return out
        traj = expm_multiply(
            lv * dt,
            v,
            start=0.0,
            stop=float(t_grid.size - 1),
            num=t_grid.size,
            endpoint=True,
        )
        for k in range(t_grid.size):
            out[k] = traj[k].reshape(dim, dim)
        return out
    if t_grid[0] > 0:
        v = sla.expm(lv * t_grid[0]) @ v
    out[0] = v.reshape(dim, dim)
    if t_grid.size > 1:
        prop = sla.expm(lv * dt)
        for k in range(1, t_grid.size):
            v = prop @ v
            out[k] = v.reshape(dim, dim)
    return out


def steady_state(gen, rho0, warmup_time, residual_tol=1e-7):
    """Steady state by straight time evolution, with a residual warning."""

    dim = gen.hamiltonian.shape[0]
    rho0 = _check_density_matrix(rho0, dim)
    lv = gen.superoperator()
    v = rho0.reshape(-1)
    if sp.issparse(lv):
        v = expm_multiply(lv * float(warmup_time), v)
        residual = float(np.max(np.abs(lv @ v)))
    else:
        v = sla.expm(lv * float(warmup_time)) @ v
        residual = float(np.max(np.abs(lv @ v)))
    if residual > residual_tol:
        warnings.warn(
            f"steady-state residual {residual:.2e} above {residual_tol:.0e}; "
            "increase warmup_time",
            stacklevel=2,
        )
    rho = v.reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def null_steady_state(gen):
    """Verification utility: steady state from the generator's null space."""

    lv = gen.superoperator()
    if sp.issparse(lv):
        lv = np.asarray(lv.todense())
    vals, vecs = np.linalg.eig(lv)
    idx = int(np.argmin(np.abs(vals)))
    dim = int(round(np.sqrt(lv.shape[0])))
    rho = vecs[:, idx].reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr) < 1e-12:
        raise ValueError("null vector has zero trace; not a state")
    rho = rho / tr
    if np.min(np.linalg.eigvalsh(rho)) < -1e-8:
        raise ValueError("null vector is not a positive state")
    return rho, vals[idx]


def regression_correlator(gen, rho_ss, a, b, tau_grid):
    """Two-time correlators by quantum regression from a stationary state.

    Returns (forward, reverse): forward[k] = <A(tau_k) B(0)> and
    reverse[k] = <A(0) B(tau_k)>, both propagated with the same generator.
    """

    dim = gen.hamiltonian.shape[0]
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    tau_grid, dtau = _uniform_spacing(tau_grid, "tau_grid")
    if tau_grid[0] != 0.0:
        raise ValueError("tau_grid must start at 0")
    lv = gen.superoperator()
    x = (b @ rho_ss).reshape(-1)
    y = (rho_ss @ a).reshape(-1)
    ra = a.T.reshape(-1)
    rb = b.T.reshape(-1)
    fwd = np.empty(tau_grid.size, dtype=complex)
    rev = np.empty(tau_grid.size, dtype=complex)
    if sp.issparse(lv):
        cols = np.stack([x, y], axis=1)
        for k in range(tau_grid.size):
            fwd[k] = ra @ cols[:, 0]
            rev[k] = rb @ cols[:, 1]
            if k + 1 < tau_grid.size:
                cols = expm_multiply(lv * dtau, cols)
        return fwd, rev
    prop = sla.expm(lv * dtau) if tau_grid.size > 1 else None
    cols = np.stack([x, y], axis=1)
    for k in range(tau_grid.size):
        fwd[k] = ra @ cols[:, 0]
        rev[k] = rb @ cols[:, 1]
        if prop is not None and k + 1 < tau_grid.size:
            cols = prop @ cols
    return fwd, rev


@dataclass
class QmeGreens:
    """Master-equation Green functions for a site pair, time and frequency."""

    sites: tuple
    tau_grid: np.ndarray
    greater: np.ndarray
    lesser: np.ndarray
    omegas: np.ndarray
    retarded: np.ndarray
    keldysh: np.ndarray
    spectral: np.ndarray
    rho_ss: np.ndarray


def _half_hann(tau_grid):
    t_w = tau_grid[-1]
    return np.cos(0.5 * np.pi * tau_grid / t_w) ** 2


def qme_greens(gen, pair, tau_grid, warmup_time, grid, rho0=None):
    """Steady-state Green functions of a site pair from quantum regression.

    Correlators <c_n(tau) c_m^dag(0)> and <c_m^dag(0) c_n(tau)> (with the
    Jordan-Wigner strings inside the operators) are windowed with a
    half-Hann cos^2 taper and Fourier transformed one-sidedly onto grid's
    frequencies; the spectral weight is assembled hermitially from the two
    orderings. tau_grid should extend to roughly 20 inverse linewidths for
    clean line shapes; shorter windows are legal and leave the lines
    window-limited.
    """

    n_sites = gen.n_sites
    if n_sites > SPARSE_MAX_SITES:
        raise CapacityError(f"qme_greens supports at most {SPARSE_MAX_SITES} sites")
    sites = (pair[0],) if pair[0] == pair[1] else (pair[0], pair[1])
    for s in sites:
        if not 0 <= s < n_sites:
            raise ValueError(f"site {s} outside register of {n_sites}")
    tau_grid, dtau = _uniform_spacing(np.asarray(tau_grid, dtype=float), "tau_grid")
    if tau_grid[0] != 0.0 or tau_grid.size < 8:
        raise ValueError("tau_grid must start at 0 with a reasonable length")
    dim = 2**n_sites
    if rho0 is None:
        rho0 = np.eye(dim) / dim
    rho_ss = steady_state(gen, rho0, warmup_time)

    cs = [jw_fermion(s, n_sites) for s in sites]
    lv = gen.superoperator()
    n_tau = tau_grid.size
    s_count = len(sites)
    greater = np.empty((n_tau, s_count, s_count), dtype=complex)
    lesser = np.empty((n_tau, s_count, s_count), dtype=complex)
    cols = np.empty((dim * dim, 2 * s_count), dtype=complex)
    for pi, c_op in enumerate(cs):
        cols[:, 2 * pi] = (c_op.conj().T @ rho_ss).reshape(-1)
        cols[:, 2 * pi + 1] = (rho_ss @ c_op.conj().T).reshape(-1)
    meters = [c.T.reshape(-1) for c in cs]
    dense = not sp.issparse(lv)
    prop = sla.expm(lv * dtau) if dense and n_tau > 1 else None
    for k in range(n_tau):
        for qi, meter in enumerate(meters):
            vals = meter @ cols
            for pi in range(s_count):
                greater[k, qi, pi] = -1j * vals[2 * pi]
                lesser[k, qi, pi] = 1j * vals[2 * pi + 1]
        if k + 1 < n_tau:
            cols = prop @ cols if dense else expm_multiply(lv * dtau, cols)

    window = _half_hann(tau_grid)
    wts = np.full(n_tau, dtau)
    wts[0] *= 0.5
    wts[-1] *= 0.5
    omegas = grid.omegas
    ret_t = (greater - lesser).reshape(n_tau, -1)
    kel_t = (greater + lesser).reshape(n_tau, -1)
    ww = (window * wts)[:, None]
    retarded = np.empty((omegas.size, s_count, s_count), dtype=complex)
    keldysh_half = np.empty_like(retarded)
    chunk = 512
    for start in range(0, omegas.size, chunk):
        stop = min(start + chunk, omegas.size)
        phase = np.exp(1j * np.outer(omegas[start:stop], tau_grid))
        retarded[start:stop] = (phase @ (ret_t * ww)).reshape(stop - start, s_count, s_count)
        keldysh_half[start:stop] = (phase @ (kel_t * ww)).reshape(
            stop - start, s_count, s_count
        )
    swap = np.conj(np.swapaxes(retarded, 1, 2))
    spectral = 1j * (retarded - swap)
    keldysh = keldysh_half - np.conj(np.swapaxes(keldysh_half, 1, 2))
    return QmeGreens(
        sites=sites,
        tau_grid=tau_grid,
        greater=greater,
        lesser=lesser,
        omegas=omegas,
        retarded=retarded,
        keldysh=keldysh,
        spectral=spectral,
        rho_ss=rho_ss,
    )


@dataclass
class TlsTrajectory:
    """Occupations from the exact single-excitation evolution."""

    t_grid: np.ndarray
    qubit_occupations: np.ndarray
    tls_occupations: np.ndarray
    site: int

    @property
    def total(self):
        return self.qubit_occupations.sum(axis=1) + self.tls_occupations.sum(axis=1)


def _excited_site(ini, n_sites):
    if isinstance(ini, (int, np.integer)):
        site = int(ini)
        if not 0 <= site < n_sites:
            raise ValueError(f"site {site} outside chain of {n_sites}")
        return site
    occ = ini.occupation_matrix()
    diag = np.diag(occ).real
    site = int(np.argmax(diag))
    target = np.zeros_like(occ)
    target[site, site] = 1.0
    if np.max(np.abs(occ - target)) > 1e-8:
        raise ValueError(
            "initial state outside the single-excitation sector: need exactly "
            "one fully occupied site"
        )
    return site


def exact_tls_evolve(h, baths, ini, t_grid):
    """Exact unitary dynamics of the chain plus its TLS environments.

    Valid for one excitation above the vacuum: the string-dressed spin model
    and the quadratic tunneling model coincide in that sector, so the
    evolution is an eigensolve in the (N + total levels)-dimensional space.
    ini is a site index or an initial-state descriptor occupying exactly one
    site; the TLS levels start empty.
    """

    from .kbe import InitialState  # local import, kbe pulls no qme symbols

    n = h.n_sites
    baths = list(baths)
    if len(baths) != n:
        raise ValueError("need one baths entry per site")
    for b in baths:
        if b is not None and not isinstance(b, TlsBath):
            raise TypeError("exact_tls_evolve supports TlsBath entries only")
    n_levels = sum(len(b.levels) for b in baths if b is not None)
    if n + n_levels > EXACT_MAX_SPINS:
        raise CapacityError(
            f"{n + n_levels} total spins exceed the supported {EXACT_MAX_SPINS}"
        )
    if not isinstance(ini, (int, np.integer, InitialState)):
        raise ValueError("ini must be a site index or InitialState")
    site = _excited_site(ini, n)

    dim = n + n_levels
    hs = np.zeros((dim, dim))
    hs[:n, :n] = h.matrix.real
    col = n
    for i, bath in enumerate(baths):
        if bath is None:
            continue
        for eps, g in bath.levels:
            hs[col, col] = eps
            hs[i, col] = g
            hs[col, i] = g
            col += 1
    energies, u = np.linalg.eigh(hs)
    t_grid = np.asarray(t_grid, dtype=float)
    amp0 = u[site, :].conj()  # initial amplitudes in the eigenbasis
    phases = np.exp(-1j * np.outer(t_grid, energies))
    psi = (phases * amp0[None, :]) @ u.T
    occ = np.abs(psi) ** 2
    return TlsTrajectory(
        t_grid=t_grid,
        qubit_occupations=occ[:, :n],
        tls_occupations=occ[:, n:],
        site=site,
    )
