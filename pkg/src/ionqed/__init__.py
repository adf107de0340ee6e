"""Trapped-ion simulator of ultrastrong-coupling cavity QED.

Pipeline: ion chain modes -> laser tone design -> extended Dicke model ->
eigensolvers and dynamics -> preparation, spectra and phase diagnostics.
"""

__version__ = "0.1.0"

from .chain import ChainConfig, PhononSpectrum, equilibrium_positions, normal_modes, phonon_spectra
from .couplings import CouplingReport, FieldToneConfig, SpinTone, SpinToneConfig, design_couplings
from .errors import ChainInstabilityError, ConfigError, ConvergenceError, IntegrationError, ResonanceError
from .model import ModelParams, build_collective_blocks, build_hamiltonian, build_operators

__all__ = [
    "ChainConfig",
    "PhononSpectrum",
    "equilibrium_positions",
    "normal_modes",
    "phonon_spectra",
    "CouplingReport",
    "FieldToneConfig",
    "SpinTone",
    "SpinToneConfig",
    "design_couplings",
    "ChainInstabilityError",
    "ConfigError",
    "ConvergenceError",
    "IntegrationError",
    "ResonanceError",
    "ModelParams",
    "build_collective_blocks",
    "build_hamiltonian",
    "build_operators",
]
