"""Placing VGG-8 onto 128x128 arrays and checking the mapped math.

Run: python3 demos/mapping_walkthrough.py
"""

import numpy as np

from cimtrain import mapping as mp
from cimtrain.topology import Conv2d, vgg8

fp = mp.build_floorplan(vgg8())
print(f"VGG-8 floorplan: {fp.tiles} tiles x {fp.pes_per_tile} PEs x {fp.arrays_per_pe} arrays")
print(f"{'layer':>5} {'kind':>5} {'arrays':>7} {'dup':>4} {'PEs':>4} {'util':>6}")
for row in fp.summary_rows():
    print(f"{row['layer']:>5} {row['kind']:>5} {row['arrays_used']:>7} {row['duplication']:>4} "
          f"{row['pes']:>4} {row['utilization']:6.1%}")
print(f"chip memory utilization: {fp.memory_utilization:.2%}")

print("\nA 3x3 conv layer read through the arrays, compared with np.einsum")
rng = np.random.default_rng(0)
layer = Conv2d(4, 8, 3)
x = rng.normal(size=(2, 4, 6, 6))
w = rng.normal(size=layer.weight_shape)
y = mp.mapped_forward(layer, x, w, array_rows=16)
xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
ref = np.zeros_like(y)
for i in range(6):
    for j in range(6):
        ref[:, :, i, j] = np.einsum("bcyx,yxcn->bn", xp[:, :, i:i + 3, j:j + 3], w)
print(f"  max |mapped - einsum| = {np.max(np.abs(y - ref)):.2e}")

e = rng.normal(size=y.shape)
dx = mp.mapped_error(layer, e, w, x.shape)
print(f"  transposed-read error tensor shape {dx.shape}")

plan = mp.unroll_gradient_matrices(e[0], layer)
print(f"  gradient plan: error matrix {plan.error_matrix.shape}, "
      f"{plan.schedule_length} activation vectors, duplication {plan.duplication}")

print("\nWith a 6-bit ADC on the partial sums")
adc = mp.ADCModel(6)
y_adc = mp.mapped_forward(layer, np.abs(x), w, adc=adc, array_rows=16)
y_ref = mp.mapped_forward(layer, np.abs(x), w, array_rows=16)
print(f"  relative error {np.linalg.norm(y_adc - y_ref) / np.linalg.norm(y_ref):.3%}")
