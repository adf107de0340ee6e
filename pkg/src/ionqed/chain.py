"""Equilibrium configuration and phonon modes of a linear ion chain.

Positions are dimensionless axial coordinates in units of

    l = (q^2 / (4 pi eps0 M (2 pi nu_z)^2))^(1/3)

so that the potential energy reads ``sum_i u_i^2/2 + sum_{i<j} 1/|u_i - u_j|``.
Frequencies at the public surface are ordinary frequencies in Hz.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants

from .errors import ChainInstabilityError, ConvergenceError

AXES = ("x", "y", "z")

#: Ca-40 single ion, 39.962591 u atomic mass minus one electron.
CA40_MASS_AMU = 39.962591 - constants.m_e / constants.atomic_mass
#: Default drive wavelength, the Ca+ S-D quadrupole line.
DEFAULT_WAVELENGTH = 729e-9

MAX_NEWTON_ITER = 10_000


@dataclass(frozen=True)
class ChainConfig:
    """Physical input for the ion chain.

    Parameters
    ----------
    N : int
        Number of ions.
    mass : float
        Ion mass in atomic mass units.
    trap_freqs : tuple of float
        ``(nu_x, nu_y, nu_z)`` in Hz. A linear chain needs ``nu_z < nu_x < nu_y``.
    wavevectors : tuple of float
        ``(k_x, k_y)`` in 1/m for the lasers driving the transverse axes.
    """

    N: int
    mass: float
    trap_freqs: tuple
    wavevectors: tuple = (2 * np.pi / DEFAULT_WAVELENGTH, 2 * np.pi / DEFAULT_WAVELENGTH)

    def __post_init__(self):
        object.__setattr__(self, "trap_freqs", tuple(float(f) for f in self.trap_freqs))
        object.__setattr__(self, "wavevectors", tuple(float(k) for k in self.wavevectors))
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass!r}")
        if len(self.trap_freqs) != 3 or min(self.trap_freqs) <= 0:
            raise ValueError("trap_freqs must be three positive frequencies (nu_x, nu_y, nu_z)")
        nu_x, nu_y, nu_z = self.trap_freqs
        if not nu_z < nu_x < nu_y:
            raise ValueError(
                f"trap ordering nu_z < nu_x < nu_y violated: {self.trap_freqs}"
            )
        if len(self.wavevectors) != 2 or min(self.wavevectors) <= 0:
            raise ValueError("wavevectors must be two positive magnitudes (k_x, k_y)")

    @classmethod
    def from_wavelength(cls, N, mass, trap_freqs, wavelength=DEFAULT_WAVELENGTH):
        """Build a config with both transverse lasers at ``wavelength`` (meters)."""
        k = 2 * np.pi / wavelength
        return cls(N=N, mass=mass, trap_freqs=trap_freqs, wavevectors=(k, k))

    @property
    def mass_kg(self):
        return self.mass * constants.atomic_mass

    def trap_freq(self, axis):
        return self.trap_freqs[AXES.index(axis)]

    def wavevector(self, axis):
        if axis == "z":
            return None
        return self.wavevectors[AXES.index(axis)]


@dataclass(frozen=True)
class PhononSpectrum:
    """Normal modes along one axis.

    ``modes[:, n]`` is the mode vector of mode ``n``; ``freqs[n]`` its
    frequency in Hz. For transverse axes mode 0 is the centre-of-mass
    mode (highest frequency); for the axial axis mode 0 is also the
    centre-of-mass mode (lowest frequency).
    """

    axis: str
    freqs: np.ndarray
    modes: np.ndarray
    lamb_dicke: np.ndarray | None = field(default=None)

    @property
    def N(self):
        return len(self.freqs)

    @property
    def angular(self):
        """Mode frequencies in rad/s."""
        return 2 * np.pi * self.freqs

    @property
    def com_index(self):
        return 0


def length_scale(config: ChainConfig) -> float:
    """Axial length unit in meters."""
    omega_z = 2 * np.pi * config.trap_freqs[2]
    k_e = 1.0 / (4 * np.pi * constants.epsilon_0)
    return (k_e * constants.e**2 / (config.mass_kg * omega_z**2)) ** (1.0 / 3.0)


def _inverse_distances(u):
    d = u[:, None] - u[None, :]
    np.fill_diagonal(d, np.inf)
    return d, 1.0 / np.abs(d)


def _gradient(u):
    d, inv = _inverse_distances(u)
    # d/du_i of sum_{j} 1/|u_i - u_j| = -sum_j sign(d_ij)/d_ij^2
    return u - np.sum(np.sign(d) * inv**2, axis=1)


def _energy(u):
    _, inv = _inverse_distances(u)
    return 0.5 * np.sum(u**2) + 0.5 * np.sum(inv)


def _hessian(u):
    _, inv = _inverse_distances(u)
    c = inv**3
    h = -2 * c
    np.fill_diagonal(h, 1 + 2 * np.sum(c, axis=1))
    return h


def equilibrium_positions(config: ChainConfig, tol=1e-12, max_iter=MAX_NEWTON_ITER):
    """Minimize the dimensionless Coulomb-plus-harmonic potential.

    Damped Newton iteration from an evenly spaced initial guess.

    Returns
    -------
    positions : ndarray
        Dimensionless coordinates, ascending.
    scale : float
        Length unit in meters.

    Raises
    ------
    ConvergenceError
        If the gradient norm is still above ``tol`` after ``max_iter`` steps.
    """
    N = config.N
    scale = length_scale(config)
    if N == 1:
        return np.zeros(1), scale
    # spacing of a large-N chain scales roughly as N^0.56
    u = np.linspace(-1.0, 1.0, N) * 0.5 * N**0.56 * (1 + 1.0 / N)
    grad = _gradient(u)
    energy = _energy(u)
    for it in range(max_iter):
        gnorm = np.linalg.norm(grad)
        if gnorm < tol:
            break
        step = np.linalg.solve(_hessian(u), grad)
        t = 1.0
        while True:
            trial = u - t * step
            if np.all(np.diff(trial) > 0):
                e_trial = _energy(trial)
                if e_trial <= energy + 1e-14 * abs(energy) or t < 1e-12:
                    break
            t *= 0.5
            if t < 1e-16:
                raise ConvergenceError(
                    "line search failed in equilibrium minimization",
                    {"iterations": it, "gradient_norm": gnorm},
                )
        u, energy = trial, e_trial
        grad = _gradient(u)
    else:
        raise ConvergenceError(
            f"equilibrium positions did not converge in {max_iter} iterations",
            {"iterations": max_iter, "gradient_norm": float(np.linalg.norm(grad))},
        )
    # symmetrize away rounding noise; the exact minimum is reflection symmetric
    u = 0.5 * (u - u[::-1])
    return u, scale


def mode_matrix(config: ChainConfig, positions, axis):
    """Dimensionless dynamical matrix ``A`` in units of ``(2 pi nu_z)^2``."""
    u = np.asarray(positions, dtype=float)
    _, inv = _inverse_distances(u)
    c = inv**3
    if axis == "z":
        A = -2 * c
        np.fill_diagonal(A, 1 + 2 * np.sum(c, axis=1))
    elif axis in ("x", "y"):
        ratio = config.trap_freq(axis) / config.trap_freqs[2]
        A = c.copy()
        np.fill_diagonal(A, ratio**2 - np.sum(c, axis=1))
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return A


def _fix_signs(vectors, rel=1e-9):
    out = vectors.copy()
    for n in range(out.shape[1]):
        col = out[:, n]
        mags = np.abs(col)
        # first component within rounding of the max decides; keeps mirror modes stable
        lead = np.flatnonzero(mags >= mags.max() * (1 - rel))[0]
        if col[lead] < 0:
            out[:, n] = -col
    return out


def normal_modes(config: ChainConfig, positions, axis) -> PhononSpectrum:
    """Eigen-decompose the dynamical matrix along ``axis``.

    Transverse modes are sorted by descending frequency, axial modes by
    ascending frequency, so the COM mode is first in both cases.

    Raises
    ------
    ChainInstabilityError
        If any eigenvalue is non-positive.
    """
    A = mode_matrix(config, positions, axis)
    lam, vec = np.linalg.eigh(A)
    if np.any(lam <= 0):
        raise ChainInstabilityError(axis, lam)
    order = np.argsort(lam)
    if axis != "z":
        order = order[::-1]
    lam, vec = lam[order], vec[:, order]
    vec = _fix_signs(vec)
    freqs = config.trap_freqs[2] * np.sqrt(lam)
    return PhononSpectrum(axis=axis, freqs=freqs, modes=vec)


def lamb_dicke_params(config: ChainConfig, spectrum: PhononSpectrum) -> PhononSpectrum:
    """Attach ``eta_n = k sqrt(hbar / (2 M omega_n))`` to each mode."""
    k = config.wavevector(spectrum.axis)
    if k is None:
        raise ValueError(f"no drive wavevector configured for axis {spectrum.axis!r}")
    eta = k * np.sqrt(constants.hbar / (2 * config.mass_kg * spectrum.angular))
    return replace(spectrum, lamb_dicke=eta)


def phonon_spectra(config: ChainConfig, positions=None):
    """Both transverse spectra with Lamb-Dicke parameters attached.

    Returns a dict ``{"x": PhononSpectrum, "y": PhononSpectrum}``.
    """
    if positions is None:
        positions, _ = equilibrium_positions(config)
    return {
        ax: lamb_dicke_params(config, normal_modes(config, positions, ax))
        for ax in ("x", "y")
    }
