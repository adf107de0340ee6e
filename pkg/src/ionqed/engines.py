"""Numerical backends: eigensolvers, time evolution, master equation, spectra.

Everything here works in angular units (rad/s, hbar = 1). Model
parameters still come in as :class:`~ionqed.model.ModelParams` in Hz.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, IntegrationError
from .model import (
    DIMENSION_CAP,
    TWO_PI,
    ModelParams,
    OperatorRep,
    build_operators,
    fock_populations,
    hamiltonian_terms,
    parity_diagonal,
)

log = logging.getLogger(__name__)

#: Hilbert-space size up to which dense diagonalization is used.
DENSE_LIMIT = 2500
#: Relative energy window treated as degenerate when canonicalizing eigenvectors.
DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class EigenResult:
    """Lowest eigenpairs. ``values`` in rad/s ascending, ``vectors[:, k]`` the states."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    parities: np.ndarray | None = None
    n_max: int | None = None

    @property
    def ground_energy(self):
        return float(self.values[0])

    @property
    def ground_state(self):
        return self.vectors[:, 0]

    @property
    def gap(self):
        return float(self.values[1] - self.values[0]) if len(self.values) > 1 else np.nan


def _as_matrix(H):
    if isinstance(H, OperatorRep):
        return H.matrix
    return H


def _canonicalize(vals, vecs, parity=None, rtol=DEGENERACY_RTOL):
    """Deterministic representatives for degenerate clusters, then a sign/phase fix."""
    vecs = vecs.copy()
    k = len(vals)
    scale = max(1.0, float(np.max(np.abs(vals))))
    pars = np.full(k, np.nan)
    i = 0
    while i < k:
        j = i
        while j + 1 < k and vals[j + 1] - vals[i] < rtol * scale:
            j += 1
        if parity is not None:
            block = vecs[:, i : j + 1]
            M = block.conj().T @ (parity[:, None] * block)
            pv, R = np.linalg.eigh(0.5 * (M + M.conj().T))
            vecs[:, i : j + 1] = block @ R
            pars[i : j + 1] = np.rint(pv)
            if j > i:
                vals[i : j + 1] = np.mean(vals[i : j + 1])
        i = j + 1
    for n in range(k):
        v = vecs[:, n]
        mags = np.abs(v)
        lead = np.flatnonzero(mags >= mags.max() * (1 - 1e-9))[0]
        vecs[:, n] = v * (np.conj(v[lead]) / mags[lead])
    if np.isrealobj(vecs) or np.allclose(vecs.imag, 0, atol=1e-14):
        vecs = vecs.real.copy()
    return vals, vecs, (pars if parity is not None else None)


def lowest_eigenpairs(H, k=1, tol=1e-8, seed=0, parity=None, dense_limit=DENSE_LIMIT, max_restarts=4):
    """``k`` lowest eigenpairs of a Hermitian operator.

    Dense ``eigh`` below ``dense_limit``, otherwise Lanczos (``eigsh``)
    from a seeded start vector. Near-degenerate clusters are rotated onto
    parity eigenstates (when a parity diagonal is given, or derivable from an
    :class:`OperatorRep`) and ordered by parity, then each vector gets its
    largest component made real positive.

    Raises
    ------
    ConvergenceError
        If any residual ``||H v - E v||`` exceeds ``tol * max(1, max|E|)``
        after ``max_restarts`` attempts.
    """
    if parity is None and isinstance(H, OperatorRep):
        parity = parity_diagonal(H.N, H.n_max)
    M = _as_matrix(H)
    dim = M.shape[0]
    if not 0 < k <= dim:
        raise ValueError(f"k={k} must lie in [1, {dim}]")
    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(max_restarts + 1):
        if dim <= dense_limit or k >= dim - 1:
            A = M.toarray() if sp.issparse(M) else np.asarray(M)
            vals, vecs = np.linalg.eigh(A)
            vals, vecs = vals[:k].copy(), vecs[:, :k]
        else:
            v0 = rng.standard_normal(dim)
            try:
                vals, vecs = sla.eigsh(M, k=k, which="SA", v0=v0, tol=0, maxiter=50 * dim)
            except sla.ArpackNoConvergence as exc:
                vals, vecs = exc.eigenvalues, exc.eigenvectors
                if len(vals) < k:
                    continue
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
        vals, vecs, pars = _canonicalize(vals, vecs, parity)
        res = np.linalg.norm(M @ vecs - vecs * vals, axis=0)
        scale = max(1.0, float(np.max(np.abs(vals))))
        if best is None or res.max() < best[2].max():
            best = (vals, vecs, res, pars)
        if res.max() <= tol * scale:
            break
    else:
        raise ConvergenceError(
            f"eigensolver residual {best[2].max():.3e} above tolerance",
            {"residuals": best[2].tolist(), "values": best[0].tolist(), "dimension": dim},
        )
    vals, vecs, res, pars = best
    return EigenResult(vals, vecs, res, pars)


def solve_params(params: ModelParams, k=1, tol=1e-8, seed=0, cap=DIMENSION_CAP):
    """Eigenpairs of the full Hamiltonian at the cutoff stored in ``params``."""
    H = hamiltonian_terms(params, cap).assemble()
    r = lowest_eigenpairs(H, k=k, tol=tol, seed=seed, parity=parity_diagonal(params.N, params.n_max))
    return EigenResult(r.values, r.vectors, r.residuals, r.parities, params.n_max)


def converge_fock_cutoff(params: ModelParams, tol=1e-8, k=1, n_start=None, seed=0, cap=DIMENSION_CAP,
                         top_population=1e-8):
    """Double the Fock cutoff until the ground energy is stable.

    Stops at the first ``n`` with ``|E_G(n) - E_G(2n)| < tol * 2 pi max(wc, w0, G)``
    and top-level ground-state population below ``top_population``.

    Returns
    -------
    n_max : int
    result : EigenResult
        Eigenpairs at ``n_max``.
    """
    if not np.any(params.g):
        p0 = params.with_cutoff(0)
        return 0, solve_params(p0, k=min(k, p0.dimension), tol=tol, seed=seed, cap=cap)
    scale = TWO_PI * max(abs(params.omega_c), abs(params.omega_0), params.G)
    n = max(int(n_start if n_start is not None else params.n_max), 2)
    history = []
    cur = solve_params(params.with_cutoff(n), k=k, tol=tol, seed=seed, cap=cap)
    while True:
        n2 = 2 * n
        if (n2 + 1) * 2**params.N > cap:
            raise ConvergenceError(
                f"dimension cap reached before Fock cutoff converged (last n_max={n})",
                {"history": history, "n_max": n},
            )
        nxt = solve_params(params.with_cutoff(n2), k=k, tol=tol, seed=seed, cap=cap)
        dE = abs(cur.ground_energy - nxt.ground_energy)
        top = fock_populations(cur.ground_state, params.N, n)[-1]
        history.append({"n_max": n, "E_G": cur.ground_energy, "dE": dE, "top_population": float(top)})
        log.debug("cutoff %d: dE=%.3e top=%.3e", n, dE, top)
        if dE < tol * scale and top < top_population:
            return n, cur
        n, cur = n2, nxt


# -- schedules ---------------------------------------------------------------

SHAPES = ("constant", "linear", "sin2")
KNOBS = ("g_scale", "J_scale", "omega_0")


@dataclass(frozen=True)
class Segment:
    """One piece of a parameter path.

    ``start`` and ``end`` map knob names (``g_scale``, ``J_scale``,
    ``omega_0`` in Hz) to values; unspecified knobs keep the model's final
    values. A ``constant`` segment holds ``end`` for its whole duration, so
    consecutive constant segments describe quenches.
    """

    duration: float
    end: dict
    start: dict | None = None
    shape: str = "constant"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown segment shape {self.shape!r}; choose from {SHAPES}")
        if not self.duration >= 0:
            raise ValueError("segment duration must be non-negative")
        for d in (self.end, self.start or {}):
            bad = set(d) - set(KNOBS)
            if bad:
                raise ValueError(f"unknown schedule knobs {sorted(bad)}")
        if self.shape != "constant" and self.start is None:
            raise ValueError("ramp segments need a start point")

    def profile(self, tau):
        if self.shape == "linear":
            return tau
        if self.shape == "sin2":
            return np.sin(0.5 * np.pi * tau) ** 2
        return 1.0

    def values(self, tau, defaults):
        f = self.profile(tau)
        out = {}
        for key in KNOBS:
            b = self.end.get(key, defaults[key])
            if self.shape == "constant":
                out[key] = b
            else:
                a = self.start.get(key, defaults[key])
                out[key] = a + (b - a) * f
        return out


@dataclass(frozen=True)
class Schedule:
    segments: tuple

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        if not self.duration > 0:
            raise ValueError("schedule duration must be positive")

    @property
    def duration(self):
        return float(sum(s.duration for s in self.segments))

    @property
    def boundaries(self):
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    @classmethod
    def ramp(cls, duration, shape="sin2", knobs=("g_scale", "J_scale")):
        """Ramp the chosen knobs from zero to their final values."""
        return cls((Segment(duration, end={k: 1.0 for k in knobs}, start={k: 0.0 for k in knobs}, shape=shape),))

    @classmethod
    def constant(cls, duration, **values):
        return cls((Segment(duration, end=values),))

    @classmethod
    def bang_bang(cls, omega_1, hold):
        """Quench ``omega_0`` to ``omega_1`` (Hz), hold, quench back (applied by the caller)."""
        return cls((Segment(hold, end={"omega_0": omega_1}),))

    def to_dict(self):
        return {
            "duration_s": self.duration,
            "segments": [
                {"duration_s": s.duration, "shape": s.shape, "start": s.start, "end": s.end}
                for s in self.segments
            ],
        }


def _defaults(params):
    return {"g_scale": 1.0, "J_scale": 1.0, "omega_0": params.omega_0}


class _Generator:
    """Fast ``H(knobs) @ x`` from precomputed terms."""

    def __init__(self, terms):
        self.t = terms

    def matrix(self, v):
        return self.t.assemble(v["g_scale"], v["J_scale"], v["omega_0"])

    def apply(self, v, x):
        t = self.t
        s = v["g_scale"]
        y = t.cavity @ x + v["omega_0"] * (t.dipole @ x)
        if s:
            y = y + s * (t.field @ x) + s * s * (t.p2 @ x)
        if v["J_scale"]:
            y = y + v["J_scale"] * (t.dd @ x)
        return y


def _check_norm(psi, tol, where):
    drift = abs(np.linalg.norm(psi) - 1)
    if drift > tol:
        raise IntegrationError(f"norm drift {drift:.2e} after {where}")


def evolve_schedule(params: ModelParams, schedule: Schedule, psi0, tol=1e-10, terms=None, norm_tol=1e-8):
    """Integrate ``i dpsi/dt = H(t) psi`` along ``schedule``.

    Constant segments use the exact propagator via ``expm_multiply``;
    ramps use adaptive DOP853 with ``rtol = tol``.
    """
    psi = np.asarray(psi0, dtype=complex).copy()
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValueError("initial state must be normalized")
    terms = terms or hamiltonian_terms(params)
    gen = _Generator(terms)
    defaults = _defaults(params)
    for idx, seg in enumerate(schedule.segments):
        if seg.duration == 0:
            continue
        if seg.shape == "constant":
            H = gen.matrix(seg.values(1.0, defaults))
            psi = sla.expm_multiply(-1j * seg.duration * H, psi)
        else:
            T = seg.duration

            def rhs(t, y, seg=seg, T=T):
                return -1j * gen.apply(seg.values(t / T, defaults), y)

            sol = solve_ivp(rhs, (0.0, T), psi, method="DOP853", rtol=tol, atol=tol * 1e-2)
            if not sol.success:
                raise IntegrationError(f"segment {idx}: {sol.message}")
            psi = sol.y[:, -1]
        _check_norm(psi, norm_tol, f"segment {idx}")
    return psi


# -- master equation -----------------------------------------------------------


@dataclass(frozen=True)
class LindbladSpec:
    """Dephasing time ``T2`` per ion (s, None for none) and heating rate (quanta/s)."""

    T2: float | None = None
    heating: float = 0.0

    def __post_init__(self):
        if self.T2 is not None and not self.T2 > 0:
            raise ValueError("T2 must be positive or None")
        if self.heating < 0:
            raise ValueError("heating rate must be non-negative")


def lindblad_evolve(params: ModelParams, spec: LindbladSpec, schedule: Schedule, rho0, tol=1e-8,
                    terms=None, trace_tol=1e-6, positivity_tol=1e-6):
    """Integrate the master equation with dephasing and one-way heating.

    Dissipators: ``D[sqrt(1/(2 T2)) sigma_z^i]`` on each ion (single-ion
    coherence decays as ``exp(-t/T2)``) and ``D[sqrt(heating) a^dag]``.
    """
    rho = np.array(rho0, dtype=complex)
    d = rho.shape[0]
    if abs(np.trace(rho) - 1) > 1e-10 or not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ValueError("rho0 must be Hermitian with unit trace")
    terms = terms or hamiltonian_terms(params)
    gen = _Generator(terms)
    defaults = _defaults(params)
    N, n_max = params.N, params.n_max
    ops = build_operators(N, n_max)
    # sigma_z are diagonal: D[c sz] rho = c^2 (sz rho sz - rho)
    zdiag = [o.diagonal() for o in ops["sz"]]
    gamma_phi = 0.0 if spec.T2 is None else 1.0 / (2 * spec.T2)
    adag = ops["adag"]
    a = ops["a"]
    aad = (a @ adag).toarray().real if spec.heating else None

    def rhs(t, y, seg, T):
        r = y.reshape(d, d)
        v = seg.values(t / T if T else 1.0, defaults)
        Hr = gen.apply(v, r)
        dr = -1j * (Hr - gen.apply(v, r.conj().T).conj().T)
        if gamma_phi:
            for z in zdiag:
                dr += gamma_phi * (z[:, None] * r * z[None, :] - r)
        if spec.heating:
            dr += spec.heating * ((adag @ r) @ a - 0.5 * (aad @ r + r @ aad))
        dr = 0.5 * (dr + dr.conj().T)
        return dr.ravel()

    for idx, seg in enumerate(schedule.segments):
        if seg.duration == 0:
            continue
        T = seg.duration
        sol = solve_ivp(rhs, (0.0, T), rho.ravel(), method="DOP853", rtol=tol, atol=tol * 1e-2, args=(seg, T))
        if not sol.success:
            raise IntegrationError(f"segment {idx}: {sol.message}")
        rho = sol.y[:, -1].reshape(d, d)
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        if abs(tr - 1) > trace_tol:
            raise IntegrationError(f"trace drift {abs(tr - 1):.2e} after segment {idx}")
        lam = np.linalg.eigvalsh(rho).min()
        if lam < -positivity_tol:
            raise IntegrationError(f"density matrix eigenvalue {lam:.2e} after segment {idx}")
    return rho


# -- spectra -------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralLines:
    """Transition frequencies (rad/s) and weights ``w_p |<k|A^dag|p>|^2``."""

    frequencies: np.ndarray
    weights: np.ndarray
    leaked_weight: float = 0.0
    sum_rule: float = 0.0

    def evaluate(self, omega, gamma):
        omega = np.asarray(omega, dtype=float)
        out = np.empty(omega.shape)
        step = max(1, 2_000_000 // max(1, len(self.frequencies)))
        for s in range(0, len(omega), step):
            diff = omega[s : s + step, None] - self.frequencies[None, :]
            out[s : s + step] = (gamma / (gamma**2 + diff**2)) @ self.weights
        return out


def spectral_lines(state, H, A, k_max, eig: EigenResult | None = None, seed=0, leak_warn=0.01, prune=1e-14):
    """Eigenbasis transition lines for probe ``A`` in state ``state`` (psi or rho).

    Only upward transitions ``E_k > E_p`` contribute.
    """
    M = _as_matrix(H)
    if eig is None:
        eig = lowest_eigenpairs(H, k=min(k_max, M.shape[0]), seed=seed)
    V = eig.vectors
    E = eig.values
    x = np.asarray(state)
    if x.ndim == 1:
        amp = V.conj().T @ x
        w = np.abs(amp) ** 2
        total = float(np.vdot(x, x).real)
    else:
        w = np.real(np.einsum("ip,ij,jp->p", V.conj(), x, V))
        total = float(np.trace(x).real)
    leaked = total - float(w.sum())
    if leaked > leak_warn:
        warnings.warn(f"{leaked:.3%} of the state lies outside the retained eigenspace", stacklevel=2)
    Adag = A.conj().T if not sp.issparse(A) else A.conj().T.tocsr()
    T = V.conj().T @ (Adag @ V)  # T[k, p] = <k|A^dag|p>
    dE = E[:, None] - E[None, :]  # E_k - E_p
    thr = DEGENERACY_RTOL * max(1.0, float(np.max(np.abs(E))))
    mask = (dE > thr) & (w[None, :] > 0)
    strengths = (np.abs(T) ** 2) * w[None, :]
    freqs = dE[mask]
    weights = strengths[mask]
    # drop numerically empty lines; they carry no weight but cost evaluation time
    keep = weights > prune * max(float(weights.max(initial=0.0)), 1e-300)
    return SpectralLines(freqs[keep], weights[keep], leaked, float(weights.sum()))


def lorentzian_spectrum(state, H, A, omega, gamma, k_max, eig=None, seed=0):
    """``S(omega) = sum w_p |<k|A^dag|p>|^2 gamma / (gamma^2 + (omega - E_k + E_p)^2)``.

    All frequencies in rad/s. Returns ``(S, lines)``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    lines = spectral_lines(state, H, A, k_max, eig=eig, seed=seed)
    return lines.evaluate(omega, gamma), lines
