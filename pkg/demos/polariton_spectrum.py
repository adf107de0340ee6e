"""Probe spectrum of six dipoles coupled to the cavity mode, for growing G.

Bright polaritons split by about G at weak coupling; the lower one
stops short of zero at strong coupling while the dark line drifts down.

Run: python3 demos/polariton_spectrum.py
"""

import numpy as np

from ionqed.model import ModelParams
from ionqed.protocols import exact_ground_state, probe_spectrum

N, omega = 6, 205.0
freqs = np.linspace(0.0, 2 * omega, 20001)
print(" G/wc   n_max  peaks (nu - w0)/wc           strongest line")
for G in (0.2, 0.5, 1.0, 2.0):
    p = ModelParams.uniform(N, omega, omega, G * omega / np.sqrt(N))
    st = exact_ground_state(p)
    sr = probe_spectrum(st, frequencies=freqs, gamma=4.0)
    dark = sr.line_frequencies[np.argmax(sr.line_weights)]
    print(f" {G:4.1f}  {st.params.n_max:5d}  {np.array2string(np.round(sr.relative(), 3)):28s} "
          f"{(dark - omega) / omega:+.4f}")
