"""Extended Dicke Hamiltonian on a truncated Fock space times N spins.

Basis ordering is Fock index major, spin configuration minor. Within the
spin register site 0 is the most significant bit; bit value 1 is the
excited state ``|e>`` with ``sigma_z = +1``. Index 0 is therefore
``|n=0> (x) |g g ... g>``.

Parameters are ordinary frequencies in Hz; assembled operators are in
rad/s (hbar = 1), so eigenvalues are angular energies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp

TWO_PI = 2 * np.pi
#: Largest total Hilbert-space dimension the builders will allocate.
DIMENSION_CAP = 2_000_000


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the extended Dicke model, all in Hz.

    ``g`` may be a scalar (uniform coupling) or a length-N vector.
    """

    omega_c: float
    omega_0: float
    g: np.ndarray
    J: np.ndarray
    n_max: int = 0

    def __post_init__(self):
        J = np.array(self.J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError(f"J must be a square matrix, got shape {J.shape}")
        N = J.shape[0]
        g = np.array(self.g, dtype=float)
        if g.ndim == 0:
            g = np.full(N, float(g))
        if g.shape != (N,):
            raise ValueError(f"g has shape {g.shape}, expected ({N},)")
        scale = max(np.max(np.abs(J)), 1.0)
        if not np.allclose(J, J.T, rtol=0, atol=1e-12 * scale):
            raise ValueError("J must be symmetric")
        if np.any(np.diag(J) != 0):
            raise ValueError("J must have a zero diagonal")
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError(f"n_max must be a non-negative integer, got {self.n_max!r}")
        if self.omega_c == 0:
            raise ValueError("omega_c must be non-zero")
        J = 0.5 * (J + J.T)
        J.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "n_max", int(self.n_max))
        object.__setattr__(self, "omega_c", float(self.omega_c))
        object.__setattr__(self, "omega_0", float(self.omega_0))

    @classmethod
    def uniform(cls, N, omega_c, omega_0, g, J=None, n_max=0):
        """Uniform ``g``; ``J`` may be None, a scalar (all-to-all) or a matrix."""
        if J is None:
            J = np.zeros((N, N))
        elif np.ndim(J) == 0:
            J = float(J) * (1 - np.eye(N))
        return cls(omega_c, omega_0, np.full(N, float(g)), J, n_max)

    @property
    def N(self):
        return self.J.shape[0]

    @property
    def dimension(self):
        return (self.n_max + 1) * 2**self.N

    @property
    def G(self):
        """Collective coupling ``sqrt(sum g_i^2)`` (``sqrt(N) g`` when uniform)."""
        return float(np.sqrt(np.sum(self.g**2)))

    def with_cutoff(self, n_max):
        return ModelParams(self.omega_c, self.omega_0, self.g, self.J, n_max)

    def scaled(self, g_scale=1.0, J_scale=1.0, omega_0=None):
        w0 = self.omega_0 if omega_0 is None else omega_0
        return ModelParams(self.omega_c, w0, self.g * g_scale, self.J * J_scale, self.n_max)


@dataclass(frozen=True)
class OperatorRep:
    """A Hermitian operator in rad/s on the Fock (x) spin product space."""

    matrix: sp.csr_matrix
    N: int
    n_max: int

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def toarray(self):
        return self.matrix.toarray()

    def expectation(self, psi):
        psi = np.asarray(psi)
        return float(np.real(np.vdot(psi, self.matrix @ psi)))


def _check_dimension(N, n_max, cap=DIMENSION_CAP):
    dim = (n_max + 1) * 2**N
    if dim > cap:
        raise MemoryError(
            f"Hilbert space dimension {dim} (N={N}, n_max={n_max}) exceeds cap {cap}"
        )
    return dim


def _bit(N, i):
    return 1 << (N - 1 - i)


def spin_states(N):
    """Popcount-friendly array of spin configuration indices."""
    return np.arange(2**N, dtype=np.int64)


def spin_sz_diagonal(N, i):
    """Diagonal of ``sigma_z`` on site ``i`` over the spin register."""
    s = spin_states(N)
    return np.where(s & _bit(N, i), 1.0, -1.0)


def spin_flip(N, mask):
    """Permutation matrix flipping the bits in ``mask``."""
    s = spin_states(N)
    return sp.csr_matrix((np.ones(len(s)), (s ^ mask, s)), shape=(len(s), len(s)))


def spin_xx_operator(N, coeffs):
    """``sum_{i<j} coeffs[i, j] sigma_x^i sigma_x^j`` on the spin register (real, sparse)."""
    dim = 2**N
    s = spin_states(N)
    rows, cols, vals = [], [], []
    for i in range(N):
        for j in range(i + 1, N):
            c = coeffs[i, j]
            if c == 0:
                continue
            rows.append(s ^ (_bit(N, i) | _bit(N, j)))
            cols.append(s)
            vals.append(np.full(dim, c))
    if not rows:
        return sp.csr_matrix((dim, dim))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )


def spin_x_field(N, h):
    """``sum_i h_i sigma_x^i`` on the spin register."""
    dim = 2**N
    s = spin_states(N)
    nz = [i for i in range(N) if h[i] != 0]
    if not nz:
        return sp.csr_matrix((dim, dim))
    rows = np.concatenate([s ^ _bit(N, i) for i in nz])
    cols = np.tile(s, len(nz))
    vals = np.concatenate([np.full(dim, h[i]) for i in nz])
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


def _ladder(n_max):
    return sp.diags(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1, shape=(n_max + 1,) * 2, format="csr")


def build_operators(N, n_max, cap=DIMENSION_CAP):
    """Operator table on the full ``(n_max+1) * 2**N`` space (dimensionless).

    Keys: ``a``, ``adag``, ``n``, ``sx``, ``sy``, ``sz``, ``sp``, ``sm``
    (lists over ions), ``Sx``, ``Sy``, ``Sz`` and ``parity``.
    """
    if N < 1 or n_max < 0:
        raise ValueError("need N >= 1 and n_max >= 0")
    _check_dimension(N, n_max, cap)
    If = sp.identity(n_max + 1, format="csr")
    Is = sp.identity(2**N, format="csr")
    a = sp.kron(_ladder(n_max), Is, format="csr")
    s = spin_states(N)

    def lift(op):
        return sp.kron(If, op, format="csr")

    sx, sy, sz, spl, smi = [], [], [], [], []
    for i in range(N):
        b = _bit(N, i)
        up = (s & b) != 0
        sz_i = spin_sz_diagonal(N, i)
        sx.append(lift(spin_flip(N, b)))
        sz.append(lift(sp.diags(sz_i, format="csr")))
        # sigma^+ |g> = |e>: column s (bit clear) -> row s|b
        plus = sp.csr_matrix((np.ones(np.sum(~up)), (s[~up] | b, s[~up])), shape=(2**N,) * 2)
        spl.append(lift(plus))
        smi.append(lift(plus.T.tocsr()))
        sy.append(lift((-1j * plus + 1j * plus.T).tocsr()))
    half = 0.5
    ops = {
        "a": a,
        "adag": a.T.tocsr(),
        "n": (a.T @ a).tocsr(),
        "sx": sx,
        "sy": sy,
        "sz": sz,
        "sp": spl,
        "sm": smi,
        "Sx": half * sum(sx[1:], sx[0]),
        "Sy": half * sum(sy[1:], sy[0]),
        "Sz": half * sum(sz[1:], sz[0]),
        "parity": sp.diags(parity_diagonal(N, n_max), format="csr"),
    }
    return ops


def parity_diagonal(N, n_max):
    """Diagonal of ``P = exp(i pi a^dag a) (x) prod_i sigma_z^i``."""
    s = spin_states(N)
    excited = np.array([bin(x).count("1") for x in s])
    spin = (-1.0) ** (N - excited)
    fock = (-1.0) ** np.arange(n_max + 1)
    return np.kron(fock, spin)


@dataclass(frozen=True)
class HamiltonianTerms:
    """Pieces of H in rad/s for time-dependent assembly.

    ``H(s_g, s_J, w0) = cavity + w0 * dipole + s_g * field + s_g**2 * p2 + s_J * dd``
    where ``dipole`` is ``2 pi S_z`` so that ``w0`` is given in Hz.
    """

    cavity: sp.csr_matrix
    dipole: sp.csr_matrix
    field: sp.csr_matrix
    p2: sp.csr_matrix
    dd: sp.csr_matrix
    params: ModelParams

    def assemble(self, g_scale=1.0, J_scale=1.0, omega_0=None):
        w0 = self.params.omega_0 if omega_0 is None else omega_0
        H = self.cavity + w0 * self.dipole
        if g_scale:
            H = H + g_scale * self.field + g_scale**2 * self.p2
        if J_scale:
            H = H + J_scale * self.dd
        return H.tocsr()


def hamiltonian_terms(params: ModelParams, cap=DIMENSION_CAP) -> HamiltonianTerms:
    N, n_max = params.N, params.n_max
    _check_dimension(N, n_max, cap)
    g = params.g
    wc = params.omega_c
    If = sp.identity(n_max + 1, format="csr")
    Is = sp.identity(2**N, format="csr")
    a = _ladder(n_max)
    num = sp.diags(np.arange(n_max + 1, dtype=float), format="csr")
    Sz = sp.diags(0.5 * sum(spin_sz_diagonal(N, i) for i in range(N)), format="csr")
    X = spin_x_field(N, g)
    # sum_{ij} g_i g_j sx_i sx_j / (4 wc): i=j part is a constant sum g_i^2 / (4 wc)
    p2_spin = spin_xx_operator(N, np.outer(g, g) / (2 * wc)) + (np.sum(g**2) / (4 * wc)) * Is
    dd_spin = spin_xx_operator(N, params.J / 2)
    return HamiltonianTerms(
        cavity=TWO_PI * wc * sp.kron(num, Is, format="csr"),
        dipole=TWO_PI * sp.kron(If, Sz, format="csr"),
        field=TWO_PI * 0.5 * sp.kron(a + a.T, X, format="csr"),
        p2=TWO_PI * sp.kron(If, p2_spin, format="csr"),
        dd=TWO_PI * sp.kron(If, dd_spin, format="csr"),
        params=params,
    )


def build_hamiltonian(params: ModelParams, cap=DIMENSION_CAP) -> OperatorRep:
    """Full extended Dicke Hamiltonian (rad/s).

    ``H = wc a^dag a + w0 S_z + sum_i g_i (a + a^dag) sx_i / 2
    + sum_{ij} g_i g_j sx_i sx_j / (4 wc) + 1/4 sum_{i != j} J_ij sx_i sx_j``.
    """
    H = hamiltonian_terms(params, cap).assemble()
    return OperatorRep(H, params.N, params.n_max)


# -- collective spin sectors ---------------------------------------------------


def spin_matrices(s):
    """``(Sx, Sy, Sz)`` for spin ``s`` in the basis ``m = -s, ..., s``."""
    m = np.arange(-s, s + 1)
    dim = len(m)
    # S+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>
    c = np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1))
    Sp = np.zeros((dim, dim))
    Sp[np.arange(1, dim), np.arange(dim - 1)] = c
    Sx = 0.5 * (Sp + Sp.T)
    Sy = -0.5j * (Sp - Sp.T)
    return Sx, Sy, np.diag(m.astype(float))


def multiplicity(N, s):
    """Number of spin-``s`` irreps in N spin-1/2 particles."""
    k = N / 2 - s
    if k < 0 or abs(k - round(k)) > 1e-9:
        return 0
    k = int(round(k))
    return comb(N, k) - (comb(N, k - 1) if k >= 1 else 0)


def total_spins(N):
    return [N / 2 - k for k in range(int(N // 2) + 1)]


@dataclass(frozen=True)
class Sector:
    s: float
    multiplicity: int
    hamiltonian: np.ndarray  # rad/s, dims (n_max+1)(2s+1), Fock major

    @property
    def spin_dim(self):
        return int(round(2 * self.s + 1))


@dataclass(frozen=True)
class CollectiveBlocks:
    N: int
    n_max: int
    sectors: list = field(default_factory=list)

    def spectrum(self):
        """All eigenvalues with multiplicities, ascending (rad/s)."""
        vals = [np.repeat(np.linalg.eigvalsh(sec.hamiltonian), sec.multiplicity) for sec in self.sectors]
        return np.sort(np.concatenate(vals))


def build_collective_blocks(omega_c, omega_0, g, J0, N, n_max) -> CollectiveBlocks:
    """Total-spin sectors for uniform ``g`` and all-to-all ``J_ij = J0 / N``.

    ``H_s = wc a^dag a + w0 S_z + g (a + a^dag) S_x + (g^2/wc + J0/N) S_x^2 - J0/4``.
    """
    a = _ladder(n_max).toarray()
    num = np.diag(np.arange(n_max + 1, dtype=float))
    If = np.eye(n_max + 1)
    chi = g**2 / omega_c + J0 / N
    sectors = []
    for s in total_spins(N):
        Sx, _, Sz = spin_matrices(s)
        Is = np.eye(len(Sz))
        H = (
            omega_c * np.kron(num, Is)
            + omega_0 * np.kron(If, Sz)
            + g * np.kron(a + a.T, Sx)
            + np.kron(If, chi * Sx @ Sx - 0.25 * J0 * Is)
        )
        sectors.append(Sector(s, multiplicity(N, s), TWO_PI * H))
    return CollectiveBlocks(N, n_max, sectors)


# -- S_x distribution ----------------------------------------------------------


def mx_values(N):
    """Possible ``S_x`` eigenvalues ``-N/2, ..., N/2``."""
    return np.arange(N + 1) - N / 2


def walsh_hadamard(coeffs, N):
    """Rotate spin-register amplitudes (last axis) into the ``sigma_x`` product basis.

    Output index bit 0 means ``sigma_x = +1`` on that site.
    """
    c = np.asarray(coeffs)
    lead = c.shape[:-1]
    c = c.reshape(lead + (2,) * N)
    for ax in range(len(lead), len(lead) + N):
        a0 = np.take(c, 0, axis=ax)
        a1 = np.take(c, 1, axis=ax)
        c = np.stack([a0 + a1, a0 - a1], axis=ax) / np.sqrt(2)
    return c.reshape(lead + (2**N,))


def _mx_of_index(N):
    pop = np.array([bin(x).count("1") for x in range(2**N)])
    return N / 2 - pop


def mx_projectors(N):
    """Dense projectors ``P_{m_x}`` on the spin register, keyed by ``m_x``."""
    Hd = walsh_hadamard(np.eye(2**N), N)  # rows: sigma_x basis vectors in the z basis
    mx = _mx_of_index(N)
    out = {}
    for m in mx_values(N):
        V = Hd[mx == m]
        out[float(m)] = V.T @ V
    return out


def mx_distribution(psi, N, n_max):
    """``p(m_x)`` of a pure state on the full space (Fock traced out)."""
    amps = np.asarray(psi).reshape(n_max + 1, 2**N)
    w = np.sum(np.abs(walsh_hadamard(amps, N)) ** 2, axis=0)
    mx = _mx_of_index(N)
    return np.array([w[mx == m].sum() for m in mx_values(N)])


def mx_distribution_block(psi, s, n_max, N):
    """``p(m_x)`` for a state living in the spin-``s`` sector, padded to ``-N/2..N/2``."""
    Sx, _, _ = spin_matrices(s)
    ev, U = np.linalg.eigh(Sx)
    amps = np.asarray(psi).reshape(n_max + 1, len(ev)) @ U
    w = np.sum(np.abs(amps) ** 2, axis=0)
    p = np.zeros(N + 1)
    idx = np.rint(ev + N / 2).astype(int)
    np.add.at(p, idx, w)
    return p


def triplet_minus_state():
    """``(|ee> - |gg>)/sqrt(2)`` on the two-spin register."""
    v = np.zeros(4)
    v[3] = 1 / np.sqrt(2)
    v[0] = -1 / np.sqrt(2)
    return v


def reduced_spin_state(psi_or_rho, N, n_max):
    """Spin density matrix with the Fock mode traced out."""
    x = np.asarray(psi_or_rho)
    d = 2**N
    if x.ndim == 1:
        A = x.reshape(n_max + 1, d)
        return A.T @ A.conj()
    R = x.reshape(n_max + 1, d, n_max + 1, d)
    return np.einsum("iaib->ab", R)


def photon_number(psi_or_rho, N, n_max):
    x = np.asarray(psi_or_rho)
    n = np.arange(n_max + 1)
    d = 2**N
    if x.ndim == 1:
        pops = np.sum(np.abs(x.reshape(n_max + 1, d)) ** 2, axis=1)
    else:
        pops = np.real(np.diag(x)).reshape(n_max + 1, d).sum(axis=1)
    return float(pops @ n)


def apply_sigma_plus(psi, N, n_max, i):
    """``sigma_+^i psi`` without building the operator."""
    amps = np.asarray(psi).reshape(n_max + 1, 2**N)
    s = spin_states(N)
    b = _bit(N, i)
    out = np.zeros_like(amps)
    low = (s & b) == 0
    out[:, s[low] | b] = amps[:, s[low]]
    return out.ravel()


def fock_populations(psi, N, n_max):
    return np.sum(np.abs(np.asarray(psi).reshape(n_max + 1, 2**N)) ** 2, axis=1)
