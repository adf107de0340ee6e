"""Two dipoles: photon number of the ground state as the coupling grows.

Without direct interaction the cavity fills and then empties again as
the dipoles lock into an anti-aligned state; a strong ferroelectric
coupling keeps it filling.

Run: python3 demos/subradiance.py
"""

import numpy as np

from ionqed.protocols import subradiance_curve

wc = 125.0
g = np.arange(0.0, 4.01, 0.5)
for J12 in (0.0, -3.5 * wc):
    c = subradiance_curve(wc, wc, g * wc, J12, prepared=False)
    print(f"J12/wc={J12 / wc:+.1f}")
    for gi, n, ov, nm in zip(g, c.photons_exact, c.overlap_T, c.n_max):
        print(f"  g/wc={gi:3.1f}  <n>={n:7.3f}  overlap with |T>={ov:.4f}  n_max={nm}")
