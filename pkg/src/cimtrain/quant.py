"""Fixed-point quantization for integer-style training.

Every tensor class (weights, activations, errors, gradients) is snapped to a
symmetric uniform grid ``k * step`` with ``|k| <= 2**(bits-1) - 1`` and
``step = range / (2**(bits-1) - 1)``, so zero and both range ends are grid
levels. One-bit grids use ``{-range, 0, range}``. Ranges are powers of two
chosen per tensor by :func:`pow2_range` unless fixed by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def max_code(bits: int) -> int:
    if bits < 1:
        raise ValueError("bits must be >= 1")
    return max(2 ** (bits - 1) - 1, 1)


def grid_step(bits: int, value_range: float) -> float:
    return float(value_range) / max_code(bits)


@dataclass
class QuantTensor:
    codes: np.ndarray  # signed integer levels
    step: float
    bits: int

    @property
    def values(self) -> np.ndarray:
        return self.codes * self.step

    @property
    def shape(self):
        return self.codes.shape


def pow2_range(t) -> float:
    """Smallest power of two bounding ``max |t|`` (1.0 for an all-zero tensor)."""
    peak = float(np.max(np.abs(t), initial=0.0))
    if peak == 0.0 or not np.isfinite(peak):
        return 1.0
    return float(2.0 ** np.ceil(np.log2(peak)))


def quantize(t, bits: int, value_range: float | None = None, mode: str = "nearest",
             rng: np.random.Generator | None = None) -> QuantTensor:
    """Snap ``t`` onto the ``bits``-bit grid spanning ``[-value_range, value_range]``.

    ``mode="stochastic"`` rounds up with probability equal to the fractional
    position between neighbouring levels, which is unbiased inside the range.
    """
    t = np.asarray(t, dtype=float)
    if value_range is None:
        value_range = pow2_range(t)
    top = max_code(bits)
    step = grid_step(bits, value_range)
    scaled = np.clip(t / step, -top, top)
    if mode == "nearest":
        codes = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    elif mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic rounding needs a random generator")
        low = np.floor(scaled)
        codes = low + (rng.random(scaled.shape) < (scaled - low))
    else:
        raise ValueError(f"unknown rounding mode {mode!r}")
    codes = np.clip(codes, -top, top).astype(np.int64)
    return QuantTensor(codes=codes, step=step, bits=bits)


def quantize_values(t, bits, value_range=None, mode="nearest", rng=None) -> np.ndarray:
    return quantize(t, bits, value_range, mode, rng).values
