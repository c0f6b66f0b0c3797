"""How nonlinearity labels, pulse curves and cycle noise look in numbers.

Run: python3 demos/device_curves.py
"""

import numpy as np

from cimtrain import device as dev

print("Nonlinearity label -> curve parameter A (as a fraction of the pulse range)")
for label in (0.5, 1, 2, 3, 6, 9):
    print(f"  label {label:>4}: A/p_max = {dev.nl_label_to_a(label, 1):.4f}")

print("\nConductance after p pulses, normalized to [0, 1], 100-pulse range")
pulses = np.array([0, 10, 25, 50, 75, 100])
print("  p       " + "".join(f"{p:>8d}" for p in pulses))
for label in (1, 3, 6):
    a = dev.nl_label_to_a(label, 100)
    curve = dev.UpdateCurve(a, a, 0.0, 1.0, 100)
    print(f"  LTP NL{label}  " + "".join(f"{g:8.3f}" for g in dev.ltp_conductance(pulses, curve)))
    print(f"  LTD NL{label}  " + "".join(f"{g:8.3f}" for g in dev.ltd_conductance(pulses, curve)))

print("\nCatalog devices")
for name, spec in dev.load_catalog().items():
    if spec.is_sram:
        print(f"  {name:<22} digital, {spec.weight_bits}-bit weights")
        continue
    g_min, g_max = dev.conductance_bounds(spec)
    print(f"  {name:<22} {spec.num_states:>4} states  G {g_min:.3g}..{g_max:.3g} S  "
          f"NL {spec.nl_ltp:+.2f}/{spec.nl_ltd:+.2f}  write {spec.write_voltage_ltp} V, "
          f"{spec.write_pulse_width:.3g} s")

print("\nCycle-to-cycle noise: spread of one pulse applied to 10,000 cells at mid range")
curve = dev.UpdateCurve(np.inf, np.inf, 0.0, 1.0, 100)
rng = np.random.default_rng(0)
g0 = np.full(10_000, 0.5)
for sigma in (0.01, 0.03, 0.05):
    g = dev.update_conductance(g0, np.ones(10_000, dtype=int), curve, c2c_sigma=sigma, rng=rng)
    print(f"  sigma {sigma:.2f}: mean step {np.mean(g - g0):.4f}, std {np.std(g - g0):.4f}")
