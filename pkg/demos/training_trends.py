"""Accuracy of the desk CNN on the digits set under device nonidealities.

Each setting trains for a few epochs on one seed; pass --epochs and --seeds
for the longer version used by the acceptance suite (15 epochs, 3 seeds).

Run: python3 demos/training_trends.py [--epochs 6] [--seeds 1]
"""

import argparse

import numpy as np

from cimtrain import data
from cimtrain.device import DeviceSpec
from cimtrain.network import BatchSchedule, QuantNet, TrainOptions, train
from cimtrain.topology import desk_cnn

parser = argparse.ArgumentParser()
parser.add_argument("--epochs", type=int, default=6)
parser.add_argument("--seeds", type=int, default=1)
args = parser.parse_args()
splits = data.digits(seed=0)


def device(nl, c2c=0.0, d2d=0.0):
    return DeviceSpec("demo", r_on=1e5, on_off_ratio=100, num_states=256, nl_ltp=nl, nl_ltd=-nl,
                      c2c_sigma=c2c, d2d_sigma=d2d)


def accuracy(spec, momentum=0.9):
    accs = []
    for seed in range(args.seeds):
        net = QuantNet(desk_cnn(), spec, seed=seed, options=TrainOptions(lr=0.5, momentum=momentum))
        accs.append(train(net, *splits, BatchSchedule(16, args.epochs), seed=seed)[-1].accuracy)
    return float(np.median(accs))


print("Strong nonlinearity (NL 6), with and without momentum")
print(f"  momentum 0.9: {accuracy(device(6)):.3f}")
print(f"  plain SGD   : {accuracy(device(6), None):.3f}")

print("Cycle-to-cycle noise at NL 1")
for sigma in (0.0, 0.01, 0.03, 0.05):
    print(f"  c2c {sigma:.2f}: {accuracy(device(1, c2c=sigma)):.3f}")

print("Device-to-device spread at NL 1")
for sigma in (0.0, 0.5):
    print(f"  d2d {sigma:.1f}: {accuracy(device(1, d2d=sigma)):.3f}")
