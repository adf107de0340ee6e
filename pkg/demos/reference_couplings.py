"""Design the effective model for ten Ca-40 ions and print what comes out.

Run: python3 demos/reference_couplings.py
"""

import numpy as np

from ionqed.chain import CA40_MASS_AMU, ChainConfig, phonon_spectra
from ionqed.couplings import (
    FieldToneConfig,
    SpinToneConfig,
    coupling_statistics,
    design_couplings,
    match_p2_term,
    spin_spin_matrix,
)

chain = ChainConfig.from_wavelength(10, CA40_MASS_AMU, (5.0e6, 5.5e6, 1.0e6), 729e-9)
spectra = phonon_spectra(chain)
print("x band (MHz):", np.round(spectra["x"].freqs / 1e6, 4))
print(f"eta_COM x={spectra['x'].lamb_dicke[0]:.4f}  y={spectra['y'].lamb_dicke[0]:.4f}")

field = FieldToneConfig(15.4e3, 0.41e3, 0.0)
com = (139e3, 14e3)
far = (1.0e6, 1.7e6)

rep = design_couplings(chain, field, SpinToneConfig.of(com), spectra=spectra)
print(f"\nomega_c={rep.omega_c:.1f} Hz omega_0={rep.omega_0:.1f} Hz g/omega_c={rep.g[0] / rep.omega_c:.4f}")
off = ~np.eye(10, dtype=bool)
print(f"COM tone: mean D={np.mean(rep.D[off]):.1f} Hz, spread/omega_0={rep.stats.spread / rep.omega_0:.3f}")
print(f"COM occupation estimate {rep.validity.ratio:.3f} (bound 0.1)")

# the spread is dominated by the mismatch between mean D and g^2/omega_c
spin, scale = match_p2_term(field, SpinToneConfig.of(com), spectra)
tuned = design_couplings(chain, field, spin, spectra=spectra)
print(f"COM Rabi x{scale:.3f} cancels the mean: spread/omega_0={tuned.stats.spread / tuned.omega_0:.3f}")

D_far = spin_spin_matrix(SpinToneConfig.of(far), spectra["y"])
np.fill_diagonal(D_far, 0.0)
s = coupling_statistics(D_far)
print(f"\nfar tone alone: J ~ {s.J0:.1f} Hz / r^{s.alpha:.3f}")

both = design_couplings(chain, field, SpinToneConfig.of(com, far), spectra=spectra)
print(f"both tones: mean field {np.mean(both.stats.mean_fields):.1f} Hz")
att = design_couplings(chain, field, SpinToneConfig.of((112e3, -11e3), far), inverted=True, spectra=spectra)
print(f"attractive set (inverted model): J0={att.stats.J0:.1f} Hz, sign={att.sign}")
