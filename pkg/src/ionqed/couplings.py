"""Laser tone sets -> effective cavity-QED parameters.

The x-axis bichromatic pair addresses the x COM mode, which plays the
cavity photon: it fixes the dipole-field couplings ``g_i`` and the
effective frequencies ``omega_c``, ``omega_0``. Tones along y generate a
virtual-phonon spin-spin matrix ``D``. The residual dipole-dipole matrix
is ``J_ij = D_ij - g_i g_j / omega_c``.

All frequencies are ordinary frequencies in Hz.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit

from .chain import ChainConfig, PhononSpectrum, phonon_spectra
from .errors import ResonanceError

log = logging.getLogger(__name__)

#: Warn when a field-tone detuning exceeds this fraction of nu_x.
FIELD_DETUNING_RATIO = 1e-2
#: Beat notes closer than this many couplings (eta * Omega) to a mode are rejected.
#: At the threshold the single-ion virtual occupation (eta Omega / 2 Delta)^2 is 1/16.
RESONANCE_GUARD = 2.0
#: Maximum allowed COM occupation estimate.
OCCUPATION_BOUND = 0.1


def _profile(rabi, N):
    r = np.asarray(rabi, dtype=float)
    if r.ndim == 0:
        return np.full(N, float(r))
    if r.shape != (N,):
        raise ValueError(f"per-ion Rabi profile must have length {N}, got shape {r.shape}")
    return r.copy()


def _is_uniform(rabi):
    r = np.atleast_1d(np.asarray(rabi, dtype=float))
    return np.allclose(r, r[0], rtol=1e-12, atol=0)


@dataclass(frozen=True)
class FieldToneConfig:
    """Bichromatic pair along x: Rabi frequency and the two sideband detunings (Hz)."""

    rabi: float | np.ndarray
    delta_b: float
    delta_r: float


@dataclass(frozen=True)
class SpinTone:
    """One y-axis tone; ``delta`` is measured from the y COM frequency."""

    rabi: float | np.ndarray
    delta: float


@dataclass(frozen=True)
class SpinToneConfig:
    tones: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(self.tones))

    @classmethod
    def of(cls, *pairs):
        """``SpinToneConfig.of((rabi, delta), ...)``."""
        return cls(tuple(SpinTone(r, d) for r, d in pairs))


@dataclass(frozen=True)
class CouplingStats:
    """Summary of a residual coupling matrix.

    ``alpha`` and ``J0`` describe the fit ``J_r ~ J0 / r**alpha`` to the
    distance-averaged magnitudes; both are ``None`` when undefined.
    """

    mean_fields: np.ndarray
    spread: float
    distances: np.ndarray
    profile: np.ndarray
    alpha: float | None
    J0: float | None


@dataclass(frozen=True)
class Validity:
    """COM-mode occupation estimate for the y tones.

    ``ratio`` is the adopted estimate, ``printed_bound`` the literal
    ``eta^2 Omega^2 N / Delta^2`` expression, kept for reference.
    """

    ratio: float
    printed_bound: float
    passed: bool


@dataclass(frozen=True)
class CouplingReport:
    """Effective model parameters produced by the designer.

    The engineered lab Hamiltonian equals ``sign * H_cQED(omega_c, omega_0, g, J)``.
    """

    g: np.ndarray
    omega_c: float
    omega_0: float
    D: np.ndarray
    J: np.ndarray
    stats: CouplingStats
    validity: Validity
    sign: int = 1
    warnings: tuple = field(default=())

    @property
    def N(self):
        return len(self.g)

    def to_dict(self):
        N = self.N
        s = self.stats
        return {
            "N": N,
            "sign": int(self.sign),
            "units": "Hz",
            "g_hz": [float(x) for x in self.g],
            "omega_c_hz": float(self.omega_c),
            "omega_0_hz": float(self.omega_0),
            "g_over_omega_c": float(np.mean(self.g) / self.omega_c),
            "D_hz": {"dims": [N, N], "data": [float(x) for x in self.D.ravel()]},
            "J_hz": {"dims": [N, N], "data": [float(x) for x in self.J.ravel()]},
            "stats": {
                "mean_fields_hz": [float(x) for x in s.mean_fields],
                "spread_hz": float(s.spread),
                "spread_over_omega_0": float(s.spread / abs(self.omega_0)) if self.omega_0 else None,
                "distances": [int(r) for r in s.distances],
                "profile_hz": [float(x) for x in s.profile],
                "alpha": None if s.alpha is None else float(s.alpha),
                "J0_hz": None if s.J0 is None else float(s.J0),
            },
            "validity": {
                "com_occupation": float(self.validity.ratio),
                "printed_bound": float(self.validity.printed_bound),
                "passed": bool(self.validity.passed),
            },
            "warnings": list(self.warnings),
        }

    def to_json(self, **kwargs):
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d):
        N = d["N"]
        s = d["stats"]
        stats = CouplingStats(
            mean_fields=np.array(s["mean_fields_hz"]),
            spread=s["spread_hz"],
            distances=np.array(s["distances"], dtype=int),
            profile=np.array(s["profile_hz"]),
            alpha=s["alpha"],
            J0=s["J0_hz"],
        )
        v = d["validity"]
        return cls(
            g=np.array(d["g_hz"]),
            omega_c=d["omega_c_hz"],
            omega_0=d["omega_0_hz"],
            D=np.array(d["D_hz"]["data"]).reshape(N, N),
            J=np.array(d["J_hz"]["data"]).reshape(N, N),
            stats=stats,
            validity=Validity(v["com_occupation"], v["printed_bound"], v["passed"]),
            sign=d["sign"],
            warnings=tuple(d.get("warnings", ())),
        )


def design_field_coupling(tones: FieldToneConfig, spectrum_x: PhononSpectrum):
    """Dipole-field couplings and effective frequencies from the x tone pair.

    ``g_i = eta_COM * xi_COM(i) * Omega_x(i)``,
    ``omega_c = (delta_b + delta_r) / 2``, ``omega_0 = (delta_b - delta_r) / 2``.

    Returns
    -------
    g : ndarray
        Per-ion couplings in Hz.
    omega_c, omega_0 : float
        Effective photon and dipole frequencies in Hz.
    """
    if spectrum_x.lamb_dicke is None:
        raise ValueError("spectrum_x needs Lamb-Dicke parameters")
    N = spectrum_x.N
    nu_x = spectrum_x.freqs[0]
    for name in ("delta_b", "delta_r"):
        ratio = abs(getattr(tones, name)) / nu_x
        if ratio > FIELD_DETUNING_RATIO:
            warnings.warn(
                f"|{name}|/nu_x = {ratio:.3g} is not small; the single-mode picture degrades",
                stacklevel=2,
            )
    omega_c = 0.5 * (tones.delta_b + tones.delta_r)
    omega_0 = 0.5 * (tones.delta_b - tones.delta_r)
    if omega_c <= 0:
        raise ValueError(f"effective photon frequency must be positive, got {omega_c} Hz")
    eta = spectrum_x.lamb_dicke[0]
    xi = spectrum_x.modes[:, 0]
    g = eta * xi * _profile(tones.rabi, N)
    return g, float(omega_c), float(omega_0)


def spin_spin_matrix(tones: SpinToneConfig, spectrum_y: PhononSpectrum, guard=RESONANCE_GUARD):
    """Virtual-phonon interaction matrix from the y tones, in Hz.

    ``D_ij = sum_{m,n} 2 eta_n^2 Omega_m(i) Omega_m(j) nu_n xi_n(i) xi_n(j) / (mu_m^2 - nu_n^2)``
    with beat notes ``mu_m = nu_y + delta_m``.

    Raises
    ------
    ResonanceError
        If ``|mu_m - nu_n| < guard * eta_n * max|Omega_m|`` for some tone and mode.
    """
    if spectrum_y.lamb_dicke is None:
        raise ValueError("spectrum_y needs Lamb-Dicke parameters")
    N = spectrum_y.N
    nu = spectrum_y.angular
    eta = spectrum_y.lamb_dicke
    xi = spectrum_y.modes
    nu_y = nu[0]
    D = np.zeros((N, N))
    mus = []
    for m, tone in enumerate(tones.tones):
        om = 2 * np.pi * _profile(tone.rabi, N)
        mu = nu_y + 2 * np.pi * tone.delta
        mus.append((mu, np.max(np.abs(om))))
        gap = np.abs(mu - nu)
        coupling = eta * np.max(np.abs(om))
        bad = np.flatnonzero(gap < guard * coupling)
        if bad.size:
            n = int(bad[0])
            raise ResonanceError(
                f"tone {m} (delta={tone.delta:g} Hz) is within {guard:g} couplings of y mode {n} "
                f"({spectrum_y.freqs[n]:.6g} Hz)"
            )
        w = 2 * eta**2 * nu / (mu**2 - nu**2)
        # sum_n w_n xi_n(i) xi_n(j), scaled by Omega(i) Omega(j)
        D += np.outer(om, om) * ((xi * w) @ xi.T)
    for a in range(len(mus)):
        for b in range(a + 1, len(mus)):
            sep = abs(mus[a][0] - mus[b][0])
            if sep < 10 * eta[0] * max(mus[a][1], mus[b][1]):
                warnings.warn(
                    f"tones {a} and {b} are separated by only {sep / (2 * np.pi):.4g} Hz; "
                    "cross terms may not average out",
                    stacklevel=2,
                )
    D = 0.5 * (D + D.T)
    return D / (2 * np.pi)


def residual_dipole_matrix(D, g, omega_c):
    """``J_ij = D_ij - g_i g_j / omega_c`` off the diagonal, zero on it."""
    D = np.asarray(D, dtype=float)
    g = np.asarray(g, dtype=float)
    J = D - np.outer(g, g) / omega_c
    J = 0.5 * (J + J.T)
    np.fill_diagonal(J, 0.0)
    return J


def _power_law(r, J0, alpha):
    return J0 / r**alpha


def fit_power_law(r, values):
    """Least-squares fit of ``values ~ J0 / r**alpha`` in linear space.

    Seeded by a straight-line fit in log-log space. Returns ``(alpha, J0)``.
    """
    r = np.asarray(r, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(r) == 1:
        return 0.0, float(v[0])
    slope, intercept = np.polyfit(np.log(r), np.log(v), 1)
    p0 = (np.exp(intercept), -slope)
    try:
        (J0, alpha), _ = curve_fit(_power_law, r, v, p0=p0, maxfev=10_000)
    except RuntimeError:
        J0, alpha = p0
    return float(alpha), float(J0)


def coupling_statistics(J):
    """Mean fields, their spread and the distance profile of ``J``.

    ``mean_fields[i] = sum_{j != i} J_ij`` and
    ``spread = sqrt(sum_i mean_fields[i]^2 / N)`` (not mean-centred).
    ``profile[r-1]`` is the mean of ``|J_ij|`` over pairs with ``|i-j| = r``.
    The power-law prefactor carries the sign of the nearest-neighbour couplings.
    """
    J = np.asarray(J, dtype=float)
    N = J.shape[0]
    mean_fields = J.sum(axis=1) - np.diag(J)
    spread = float(np.sqrt(np.mean(mean_fields**2)))
    distances = np.arange(1, N)
    profile = np.array([np.mean(np.abs(np.diagonal(J, r))) for r in distances])
    keep = profile > 0
    if N > 1 and not keep.all() and keep.any():
        warnings.warn(
            f"distance(s) {distances[~keep].tolist()} have zero mean coupling; excluded from fit",
            stacklevel=2,
        )
    alpha = J0 = None
    if keep.any():
        alpha, J0 = fit_power_law(distances[keep], profile[keep])
        nn = np.sum(np.diagonal(J, 1)) if N > 1 else 0.0
        if nn < 0:
            J0 = -J0
    return CouplingStats(mean_fields, spread, distances, profile, alpha, J0)


def com_occupation_check(tones: SpinToneConfig, spectrum_y: PhononSpectrum, N=None):
    """Estimate the virtual COM-phonon population created by the y tones.

    ``ratio = sum_m N * (eta_COM * Omega_m / (2 sqrt(N) Delta_m))^2``; passes
    below :data:`OCCUPATION_BOUND`.
    """
    N = spectrum_y.N if N is None else N
    eta = spectrum_y.lamb_dicke[0]
    xi_bar = 1 / np.sqrt(N)
    ratio = 0.0
    printed = 0.0
    for tone in tones.tones:
        om = np.sqrt(np.mean(_profile(tone.rabi, N) ** 2))
        ratio += N * (eta * xi_bar * om / (2 * tone.delta)) ** 2
        printed += (eta * om / tone.delta) ** 2 * N
    return Validity(float(ratio), float(printed), bool(ratio < OCCUPATION_BOUND))


def invert_model_sign(report: CouplingReport) -> CouplingReport:
    """Re-express the report as ``-H_cQED``.

    Every frequency and matrix is negated and ``sign`` flips, so the lab
    Hamiltonian ``sign * H_cQED`` is unchanged. Applying it twice is the identity.
    """
    s = report.stats
    stats = CouplingStats(
        mean_fields=-s.mean_fields,
        spread=s.spread,
        distances=s.distances,
        profile=s.profile,
        alpha=s.alpha,
        J0=None if s.J0 is None else -s.J0,
    )
    return replace(
        report,
        g=-report.g,
        omega_c=-report.omega_c,
        omega_0=-report.omega_0,
        D=-report.D,
        J=-report.J,
        stats=stats,
        sign=-report.sign,
    )


def _com_tone_index(tones: SpinToneConfig):
    return int(np.argmin([abs(t.delta) for t in tones.tones]))


def _check_profile_pairing(field: FieldToneConfig, spin: SpinToneConfig):
    if not spin.tones:
        return
    com = spin.tones[_com_tone_index(spin)]
    if _is_uniform(field.rabi) and _is_uniform(com.rabi):
        return
    N = max(np.size(field.rabi), np.size(com.rabi))
    a = _profile(field.rabi, N)
    b = _profile(com.rabi, N)
    a = a / np.max(np.abs(a))
    b = b / np.max(np.abs(b))
    if not np.allclose(a, b, rtol=1e-9, atol=1e-12):
        raise ValueError(
            "non-uniform Rabi profiles: the x tones and the COM y tone must share the same "
            "spatial profile so the P^2 term keeps its g_i g_j / omega_c form"
        )


def design_couplings(
    config: ChainConfig,
    field: FieldToneConfig,
    spin: SpinToneConfig,
    *,
    inverted=False,
    spectra=None,
) -> CouplingReport:
    """Run the full designer pipeline.

    With ``inverted=True`` the x tones are taken as sign-flipped in the lab
    (``Omega_x -> -Omega_x``, detunings negated) while ``spin`` holds the lab
    y tones as given. The lab Hamiltonian is then ``-H_cQED`` with
    ``D = -D_lab``; the report carries ``sign = -1``.
    """
    if spectra is None:
        spectra = phonon_spectra(config)
    _check_profile_pairing(field, spin)
    caught = []
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        g, omega_c, omega_0 = design_field_coupling(field, spectra["x"])
        D = spin_spin_matrix(spin, spectra["y"]) if spin.tones else np.zeros((config.N,) * 2)
        if inverted:
            D = -D
        J = residual_dipole_matrix(D, g, omega_c)
        stats = coupling_statistics(J)
        validity = (
            com_occupation_check(spin, spectra["y"], config.N)
            if spin.tones
            else Validity(0.0, 0.0, True)
        )
        caught = [str(x.message) for x in w]
    for msg in caught:
        log.warning(msg)
    if not validity.passed:
        caught.append(
            f"COM occupation estimate {validity.ratio:.3g} exceeds {OCCUPATION_BOUND}"
        )
    return CouplingReport(
        g=g,
        omega_c=omega_c,
        omega_0=omega_0,
        D=D,
        J=J,
        stats=stats,
        validity=validity,
        sign=-1 if inverted else 1,
        warnings=tuple(caught),
    )


def match_p2_term(field: FieldToneConfig, spin: SpinToneConfig, spectra, tone=None):
    """Rescale one y tone so the mean off-diagonal ``D`` equals that of ``g_i g_j / omega_c``.

    ``D`` is quadratic in the tone's Rabi frequency, so a single rescale is
    exact. Returns ``(new SpinToneConfig, scale factor)``.
    """
    if tone is None:
        tone = _com_tone_index(spin)
    g, omega_c, _ = design_field_coupling(field, spectra["x"])
    N = len(g)
    off = ~np.eye(N, dtype=bool)
    target = np.mean(np.outer(g, g)[off]) / omega_c
    only = SpinToneConfig((spin.tones[tone],))
    current = np.mean(spin_spin_matrix(only, spectra["y"])[off])
    scale = np.sqrt(target / current)
    tones = list(spin.tones)
    tones[tone] = SpinTone(np.asarray(tones[tone].rabi) * scale, tones[tone].delta)
    if np.ndim(tones[tone].rabi) == 0:
        tones[tone] = SpinTone(float(tones[tone].rabi), tones[tone].delta)
    return SpinToneConfig(tuple(tones)), float(scale)


def report_to_dict_list(report):
    """Flat ``asdict`` view (arrays left as ndarrays); handy for debugging."""
    return asdict(report)
