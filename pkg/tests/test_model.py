from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionqed.couplings import CouplingReport, CouplingStats, Validity, invert_model_sign
from ionqed.model import (
    TWO_PI,
    ModelParams,
    build_collective_blocks,
    build_hamiltonian,
    build_operators,
    multiplicity,
    mx_distribution,
    mx_projectors,
    total_spins,
    walsh_hadamard,
)

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SZ = np.diag([-1.0, 1.0])  # index 0 = ground, 1 = excited


def _site(op, i, N):
    out = np.eye(1)
    for k in range(N):
        out = np.kron(out, op if k == i else np.eye(2))
    return out


def dense_oracle(wc, w0, g, J, N, n_max):
    """Independent product-basis construction, Fock factor first (rad/s)."""
    a = np.diag(np.sqrt(np.arange(1, n_max + 1)), 1)
    If, Is = np.eye(n_max + 1), np.eye(2**N)
    sx = [_site(SX, i, N) for i in range(N)]
    sz = [_site(SZ, i, N) for i in range(N)]
    H = wc * np.kron(a.T @ a, Is) + w0 * np.kron(If, sum(sz) / 2)
    for i in range(N):
        H += g[i] / 2 * np.kron(a + a.T, sx[i])
        for j in range(N):
            H += g[i] * g[j] / (4 * wc) * np.kron(If, sx[i] @ sx[j])
            if i != j:
                H += J[i, j] / 4 * np.kron(If, sx[i] @ sx[j])
    return TWO_PI * H


def random_params(rng, N, n_max, scale=1.0):
    g = rng.uniform(0.1, 1.0, N) * scale
    J = rng.normal(0, 0.5, (N, N)) * scale
    J = J + J.T
    np.fill_diagonal(J, 0)
    return ModelParams(rng.uniform(0.5, 2), rng.uniform(-1, 1), g, J, n_max)


def test_trivial_operators():
    ops = build_operators(1, 1)
    np.testing.assert_allclose(np.linalg.eigvalsh(ops["n"].toarray()), [0, 0, 1, 1])
    np.testing.assert_allclose(np.linalg.eigvalsh(ops["Sz"].toarray()), [-0.5, -0.5, 0.5, 0.5])


@pytest.mark.parametrize("N", range(1, 7))
def test_spin_algebra(N):
    ops = build_operators(N, 0)
    Sx, Sy, Sz = (ops[k].toarray() for k in ("Sx", "Sy", "Sz"))
    assert np.max(np.abs(Sx @ Sy - Sy @ Sx - 1j * Sz)) < 1e-12


def test_ladder_elements():
    n_max = 7
    ops = build_operators(1, n_max)
    ad = ops["adag"].toarray().reshape(n_max + 1, 2, n_max + 1, 2)[:, 0, :, 0]
    for n in range(1, n_max + 1):
        assert ad[n, n - 1] == pytest.approx(np.sqrt(n), rel=1e-15)


def test_decoupled_spectrum():
    p = ModelParams.uniform(3, 1.3, 0.7, 0.0, n_max=3)
    ev = np.linalg.eigvalsh(build_hamiltonian(p).toarray()) / TWO_PI
    expected = sorted(1.3 * n + 0.7 * (k - 1.5) for n in range(4) for k in range(4) for _ in range(comb(3, k)))
    np.testing.assert_allclose(ev, expected, atol=1e-12)
    assert ev[0] == pytest.approx(-3 * 0.7 / 2)


def test_single_ion_is_rabi_plus_constant():
    wc, w0, g, n_max = 1.0, 0.8, 0.6, 12
    p = ModelParams.uniform(1, wc, w0, g, n_max=n_max)
    a = np.diag(np.sqrt(np.arange(1, n_max + 1)), 1)
    rabi = wc * np.kron(a.T @ a, np.eye(2)) + w0 * np.kron(np.eye(n_max + 1), SZ / 2)
    rabi += g / 2 * np.kron(a + a.T, SX) + g**2 / (4 * wc) * np.eye(2 * (n_max + 1))
    np.testing.assert_allclose(build_hamiltonian(p).toarray(), TWO_PI * rabi, atol=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_hand_assembled_oracle(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 2, 4, scale=0.3)
    H = build_hamiltonian(p).toarray()
    H0 = dense_oracle(p.omega_c, p.omega_0, p.g, p.J, 2, 4)
    assert np.max(np.abs(H - H0)) < 1e-12 * max(1, np.abs(H0).max())
    np.testing.assert_allclose(np.linalg.eigvalsh(H), np.linalg.eigvalsh(H0), atol=1e-12 * np.abs(H0).max())


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), N=st.integers(1, 4), n_max=st.integers(0, 4))
def test_parity_commutes(seed, N, n_max):
    p = random_params(np.random.default_rng(seed), N, n_max)
    H = build_hamiltonian(p).matrix
    P = build_operators(N, n_max)["parity"]
    C = (H @ P - P @ H).toarray()
    assert np.max(np.abs(C)) < 1e-10


def test_two_ion_sectors():
    blocks = build_collective_blocks(1.0, 1.0, 0.7, 0.0, 2, 3)
    spins = {sec.s: sec for sec in blocks.sectors}
    assert set(spins) == {1.0, 0.0}
    assert spins[1.0].multiplicity == 1 and spins[0.0].multiplicity == 1
    no_g = build_collective_blocks(1.0, 1.0, 0.0, 0.0, 2, 3)
    s0 = {sec.s: sec for sec in no_g.sectors}[0.0]
    np.testing.assert_allclose(spins[0.0].hamiltonian, s0.hamiltonian, atol=1e-12)


@pytest.mark.parametrize("N", range(1, 13))
def test_dimension_count(N):
    assert sum(int(2 * s + 1) * multiplicity(N, s) for s in total_spins(N)) == 2**N


@pytest.mark.parametrize("N", [2, 3, 4])
def test_collective_matches_full(N):
    wc, w0, g, J0, n_max = 1.0, 0.9, 0.45, -0.6, 5
    full = ModelParams.uniform(N, wc, w0, g, J=J0 / N, n_max=n_max)
    ev = np.linalg.eigvalsh(build_hamiltonian(full).toarray())
    blocks = build_collective_blocks(wc, w0, g, J0, N, n_max).spectrum()
    np.testing.assert_allclose(blocks, ev, atol=1e-8)


@pytest.mark.parametrize("N", range(1, 7))
def test_mx_projector_completeness(N):
    P = mx_projectors(N)
    total = sum(P.values())
    assert np.max(np.abs(total - np.eye(2**N))) < 1e-12
    for m, Pm in P.items():
        assert np.trace(Pm) == pytest.approx(comb(N, int(N / 2 - m)))


def test_single_ion_projectors():
    P = mx_projectors(1)
    plus = np.array([1, 1]) / np.sqrt(2)
    minus = np.array([1, -1]) / np.sqrt(2)
    np.testing.assert_allclose(P[0.5], np.outer(plus, plus), atol=1e-15)
    np.testing.assert_allclose(P[-0.5], np.outer(minus, minus), atol=1e-15)


def test_aligned_state_distribution():
    N = 4
    psi_spin = np.ones(2**N) / 2 ** (N / 2)  # every spin along +x
    psi = np.concatenate([psi_spin, np.zeros(2**N)])
    p = mx_distribution(psi, N, 1)
    assert p[-1] == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(walsh_hadamard(psi_spin, N)[0], 1.0, atol=1e-12)


def _report(p):
    stats = CouplingStats(np.zeros(p.N), 0.0, np.arange(1, p.N), np.zeros(p.N - 1), None, None)
    return CouplingReport(p.g, p.omega_c, p.omega_0, p.J, p.J, stats, Validity(0, 0, True))


@pytest.mark.parametrize("N", [1, 2, 3])
def test_sign_inverted_spectrum_is_negated(N):
    p = random_params(np.random.default_rng(N), N, 3)
    r = invert_model_sign(_report(p))
    q = ModelParams(r.omega_c, r.omega_0, r.g, r.J, p.n_max)
    ev = np.linalg.eigvalsh(build_hamiltonian(p).toarray())
    ev_inv = np.linalg.eigvalsh(build_hamiltonian(q).toarray())
    np.testing.assert_allclose(np.sort(-ev), ev_inv, atol=1e-10 * np.abs(ev).max())


def test_ground_energy_variational():
    p = ModelParams.uniform(2, 1.0, 1.0, 1.5, J=-0.5)
    energies = [np.linalg.eigvalsh(build_hamiltonian(p.with_cutoff(n)).toarray())[0] for n in range(0, 25, 2)]
    assert np.all(np.diff(energies) <= 1e-12 * abs(energies[0]))


def test_invalid_params():
    with pytest.raises(ValueError):
        ModelParams(1.0, 1.0, [0.1, 0.1], [[0, 1], [0.5, 0]])
    with pytest.raises(ValueError):
        ModelParams(1.0, 1.0, [0.1, 0.1], [[1, 0], [0, 0]])
    with pytest.raises(MemoryError):
        build_operators(20, 3)
