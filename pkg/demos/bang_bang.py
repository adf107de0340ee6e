"""Quench-hold-quench preparation of the six-ion ground state at g = omega_c.

Run: python3 demos/bang_bang.py   (about a minute)
"""

from ionqed.model import ModelParams
from ionqed.protocols import bangbang_prepare

p = ModelParams.uniform(6, 205.0, 205.0, 205.0)
r = bangbang_prepare(p, T_max=7e-3)
print(f"no hold: F={r.initial_fidelity:.3f}")
print(f"grid best: omega_1={r.grid_best[0]:.1f} Hz, T={r.grid_best[1] * 1e3:.3f} ms, F={r.grid_best[2]:.4f}")
print(f"refined:   omega_1={r.omega_1:.1f} Hz, T={r.T * 1e3:.3f} ms, F={r.fidelity:.4f} ({r.evaluations} evaluations)")
