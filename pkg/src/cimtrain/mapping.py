"""Mapping of network layers onto synaptic arrays.

A conv layer ``K x K x D x N`` becomes ``K*K`` submatrices of ``D x N``, one
per kernel position. Stacked in ``(ky, kx)`` order they form the unrolled
``(K*K*D) x N`` weight matrix used by :func:`im2col`. Large matrices are cut
into array-sized tiles; partial sums of tiles are combined by adder trees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, CapacityError, MappingError
from .quant import max_code, pow2_range
from .topology import NetworkTopology, is_weighted


# -- tensor unrolling ----------------------------------------------------------

def im2col(x, kernel: int, stride: int = 1, padding: int = 0):
    """``(B, C, H, W)`` -> ``(B, Ho*Wo, K*K*C)`` with columns ordered (ky, kx, c)."""
    b, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    cols = np.empty((b, ho, wo, kernel, kernel, c), dtype=x.dtype)
    for ky in range(kernel):
        for kx in range(kernel):
            patch = x[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride]
            cols[:, :, :, ky, kx, :] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(b, ho * wo, kernel * kernel * c), (ho, wo)


def col2im(cols, x_shape, kernel: int, stride: int = 1, padding: int = 0):
    """Adjoint of :func:`im2col` (overlapping contributions are summed)."""
    b, c, h, w = x_shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    cols = cols.reshape(b, ho, wo, kernel, kernel, c)
    out = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for ky in range(kernel):
        for kx in range(kernel):
            out[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += \
                cols[:, :, :, ky, kx, :].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


# -- submatrices and partitioning ----------------------------------------------

@dataclass
class SubmatrixMap:
    kind: str
    weight_shape: tuple
    submatrices: dict  # (ky, kx) -> D x N array, or (0, 0) -> in x out for fc

    @property
    def count(self) -> int:
        return len(self.submatrices)


def map_kernels(layer, weights=None) -> SubmatrixMap:
    if not is_weighted(layer):
        raise MappingError(f"cannot map a {layer.kind} layer onto arrays")
    shape = layer.weight_shape
    if weights is None:
        weights = np.zeros(shape)
    weights = np.asarray(weights)
    if weights.shape != shape:
        raise MappingError(f"weights {weights.shape} do not match layer {shape}")
    if layer.kind == "fc":
        return SubmatrixMap("fc", shape, {(0, 0): weights.copy()})
    k = layer.kernel
    subs = {(ky, kx): weights[ky, kx].copy() for ky in range(k) for kx in range(k)}
    return SubmatrixMap("conv", shape, subs)


def reassemble(smap: SubmatrixMap) -> np.ndarray:
    if smap.kind == "fc":
        return smap.submatrices[(0, 0)].copy()
    out = np.empty(smap.weight_shape)
    for (ky, kx), sub in smap.submatrices.items():
        out[ky, kx] = sub
    return out


@dataclass
class ArrayGrid:
    rows: int
    cols: int
    array_rows: int
    array_cols: int
    tiles: list  # (row_start, row_stop, col_start, col_stop)

    @property
    def shape(self):
        return (math.ceil(self.rows / self.array_rows), math.ceil(self.cols / self.array_cols))

    @property
    def num_arrays(self) -> int:
        return len(self.tiles)

    @property
    def utilization(self) -> float:
        return self.rows * self.cols / (self.num_arrays * self.array_rows * self.array_cols)


def partition_matrix(rows: int, cols: int, array_rows: int, array_cols: int) -> ArrayGrid:
    if min(rows, cols, array_rows, array_cols) < 1:
        raise MappingError("matrix and array dimensions must be positive")
    tiles = [(r, min(r + array_rows, rows), c, min(c + array_cols, cols))
             for r in range(0, rows, array_rows) for c in range(0, cols, array_cols)]
    return ArrayGrid(rows, cols, array_rows, array_cols, tiles)


def compute_duplication(submatrix_rows: int, array_rows: int) -> int:
    if submatrix_rows < 1 or array_rows < 1:
        raise MappingError("row counts must be positive")
    return max(array_rows // submatrix_rows, 1)


# -- ADC -----------------------------------------------------------------------

class ADCModel:
    """Nonlinear ADC with level placement profiled on sample partial sums.

    If a calibration set has no more distinct values than the ADC has levels,
    those values become the levels and conversion is lossless. Otherwise levels
    sit at evenly spaced quantiles. An uncalibrated ADC profiles the first
    data it converts.
    """

    def __init__(self, bits: int = 6, levels=None):
        if bits < 1:
            raise MappingError("ADC bits must be >= 1")
        self.bits = bits
        self.levels = None if levels is None else np.sort(np.asarray(levels, dtype=float))

    @property
    def num_levels(self) -> int:
        return 2 ** self.bits

    def calibrate(self, samples):
        samples = np.asarray(samples, dtype=float).ravel()
        distinct = np.unique(samples)
        if distinct.size <= self.num_levels:
            self.levels = distinct
        else:
            probs = (np.arange(self.num_levels) + 0.5) / self.num_levels
            self.levels = np.unique(np.quantile(samples, probs))
        return self

    def __call__(self, partial_sums):
        ps = np.asarray(partial_sums, dtype=float)
        if self.levels is None:
            self.calibrate(ps)
        levels = self.levels
        if levels.size == 1:
            return np.full_like(ps, levels[0])
        mids = 0.5 * (levels[1:] + levels[:-1])
        return levels[np.searchsorted(mids, ps)]


# -- array reads ---------------------------------------------------------------

def forward_read(G, x, adc: ADCModel | None = None):
    """Row-driven read: ``out_c = sum_r x[r] G[r, c]``."""
    out = np.asarray(x) @ np.asarray(G)
    return out if adc is None else adc(out)


def transposed_read(G, v, transposable: bool = True, adc: ADCModel | None = None):
    """Column-driven read: ``out_r = sum_c G[r, c] v[c]``."""
    if not transposable:
        raise CapabilityError("array is not transposable")
    out = np.asarray(G) @ np.asarray(v)
    return out if adc is None else adc(out)


def _row_chunks(row_blocks, array_rows):
    """Split each block ``(start, stop)`` into array-height chunks."""
    chunks = []
    for start, stop in row_blocks:
        for r in range(start, stop, array_rows):
            chunks.append((r, min(r + array_rows, stop)))
    return chunks


def cim_matmul(x, W, row_blocks=None, array_rows: int = 128, adc: ADCModel | None = None,
               input_bits: int = 8):
    """``x @ W`` computed the way a set of mapped arrays produces it.

    Rows of ``W`` are grouped into ``row_blocks`` (one per submatrix) and cut
    into array-height chunks. With an ADC, inputs are applied bit-serially
    (sign-magnitude, ``input_bits``), each chunk's per-bit column sums pass
    through the ADC and the digital side shift-adds bits and sums chunks.
    Without an ADC the result is exact.
    """
    x = np.asarray(x, dtype=float)
    W = np.asarray(W, dtype=float)
    if adc is None:
        return x @ W
    if row_blocks is None:
        row_blocks = [(0, W.shape[0])]
    chunks = _row_chunks(row_blocks, array_rows)
    scale = pow2_range(x) / max_code(input_bits)
    q = np.clip(np.rint(x / scale), -max_code(input_bits), max_code(input_bits)).astype(np.int64)
    mag, sign = np.abs(q), np.sign(q)
    nbits = max(int(max_code(input_bits)).bit_length(), 1)
    planes = []
    for bit in range(nbits):
        plane = (mag >> bit) & 1
        for s in (1, -1):
            planes.append((bit, s, (plane * (sign == s)).astype(float)))
    if adc.levels is None:
        adc.calibrate(np.concatenate([
            (p[..., r0:r1] @ W[r0:r1]).ravel() for _, _, p in planes for r0, r1 in chunks]))
    out = np.zeros(x.shape[:-1] + (W.shape[1],))
    for bit, s, plane in planes:
        for r0, r1 in chunks:
            out += s * (2.0 ** bit) * adc(plane[..., r0:r1] @ W[r0:r1])
    return out * scale


def conv_row_blocks(layer):
    if layer.kind == "fc":
        return [(0, layer.in_features)]
    d = layer.in_channels
    return [(i * d, (i + 1) * d) for i in range(layer.kernel * layer.kernel)]


def unrolled_weights(layer, weights) -> np.ndarray:
    """Weight tensor as the stacked submatrix matrix ``(K*K*D) x N``."""
    if layer.kind == "fc":
        return np.asarray(weights)
    return np.asarray(weights).reshape(-1, layer.out_channels)


def mapped_forward(layer, x, weights, adc=None, input_bits=8, array_rows=128):
    """Layer output through the mapped arrays; ``x`` is NCHW or (B, in)."""
    W = unrolled_weights(layer, weights)
    blocks = conv_row_blocks(layer)
    if layer.kind == "fc":
        return cim_matmul(x, W, blocks, array_rows, adc, input_bits)
    cols, (ho, wo) = im2col(x, layer.kernel, layer.stride, layer.padding)
    out = cim_matmul(cols, W, blocks, array_rows, adc, input_bits)
    return out.reshape(x.shape[0], ho, wo, -1).transpose(0, 3, 1, 2)


def mapped_error(layer, err, weights, x_shape, adc=None, input_bits=8, array_cols=128):
    """Error at the layer input via transposed reads of the same arrays.

    Each output-error vector drives the array columns; row sums give the
    input error of every kernel position, summed back over the sliding
    windows.
    """
    W = unrolled_weights(layer, weights)
    n_out = W.shape[1]
    col_blocks = [(0, n_out)]
    if layer.kind == "fc":
        return cim_matmul(err, W.T, col_blocks, array_cols, adc, input_bits)
    b = err.shape[0]
    e = err.transpose(0, 2, 3, 1).reshape(b, -1, n_out)
    dcols = cim_matmul(e, W.T, col_blocks, array_cols, adc, input_bits)
    return col2im(dcols, x_shape, layer.kernel, layer.stride, layer.padding)


# -- weight-gradient unrolling -------------------------------------------------

@dataclass
class GradientMatrixPlan:
    """Error matrix stored in SRAM CIM arrays plus the activation schedule."""

    error_matrix: np.ndarray  # (Ho*Wo) x C_out, one column per error channel
    schedule: list  # (ky, kx, c_in) per applied activation vector
    duplication: int
    kernel: int
    stride: int
    padding: int

    @property
    def schedule_length(self) -> int:
        return len(self.schedule)


def unroll_gradient_matrices(error, layer, sram_rows: int = 128, sram_cols: int = 128,
                             sram_arrays: int | None = None) -> GradientMatrixPlan:
    """Plan gradient computation for one image.

    ``error`` is the layer-output error, ``(C_out, Ho, Wo)`` for conv or
    ``(out,)`` for fc. ``sram_arrays`` caps the SRAM CIM capacity; ``None``
    means it is sized to fit this layer.
    """
    error = np.asarray(error, dtype=float)
    if layer.kind == "fc":
        if error.shape != (layer.out_features,):
            raise MappingError(f"fc error shape {error.shape} != ({layer.out_features},)")
        emat = error.reshape(1, -1)
        schedule = [(0, 0, c) for c in range(layer.in_features)]
        k, s, p = 1, 1, 0
    else:
        if error.ndim != 3 or error.shape[0] != layer.out_channels:
            raise MappingError(f"conv error shape {error.shape} incompatible with layer")
        emat = error.reshape(layer.out_channels, -1).T
        k, s, p = layer.kernel, layer.stride, layer.padding
        schedule = [(ky, kx, c) for ky in range(k) for kx in range(k) for c in range(layer.in_channels)]
    grid = partition_matrix(emat.shape[0], emat.shape[1], sram_rows, sram_cols)
    if sram_arrays is not None and grid.num_arrays > sram_arrays:
        raise CapacityError(
            f"error matrix {emat.shape} needs {grid.num_arrays} SRAM arrays, {sram_arrays} available",
            shortfall=grid.num_arrays - sram_arrays)
    # copies along the rows of one array, times whole spare array groups
    dup = compute_duplication(emat.shape[0], sram_rows) if emat.shape[0] <= sram_rows else 1
    if sram_arrays is not None:
        dup *= max(sram_arrays // grid.num_arrays, 1)
    return GradientMatrixPlan(emat, schedule, dup, k, s, p)


def apply_gradient_plan(plan: GradientMatrixPlan, activation) -> np.ndarray:
    """Weight gradient of one image: each scheduled activation vector is
    applied to the stored error matrix."""
    a = np.asarray(activation, dtype=float)
    if a.ndim == 1:
        return np.outer(a, plan.error_matrix[0])
    cols, (ho, wo) = im2col(a[None], plan.kernel, plan.stride, plan.padding)
    vectors = cols[0].T  # (K*K*C_in) x (Ho*Wo), one row per schedule entry
    if vectors.shape[1] != plan.error_matrix.shape[0]:
        raise MappingError("activation windows do not match the error map")
    grad = vectors @ plan.error_matrix
    c_in = a.shape[0]
    return grad.reshape(plan.kernel, plan.kernel, c_in, -1)


# -- floorplan -----------------------------------------------------------------

@dataclass
class LayerPlacement:
    layer_index: int
    kind: str
    submatrix_rows: int
    submatrix_cols: int
    num_submatrices: int
    arrays: int
    duplication: int
    used_cells: int
    pes: int
    tiles: int
    first_tile: int
    first_pe: int


@dataclass
class Floorplan:
    array_rows: int
    array_cols: int
    arrays_per_pe: int
    pes_per_tile: int
    tiles: int
    placements: list = field(default_factory=list)
    cells_per_weight: int = 1
    share_tiles: bool = False

    @property
    def array_cells(self) -> int:
        return self.array_rows * self.array_cols

    @property
    def total_arrays(self) -> int:
        return self.tiles * self.pes_per_tile * self.arrays_per_pe

    @property
    def used_arrays(self) -> int:
        return sum(p.arrays for p in self.placements)

    @property
    def used_cells(self) -> int:
        return sum(p.used_cells for p in self.placements)

    @property
    def memory_utilization(self) -> float:
        return self.used_cells / (self.total_arrays * self.array_cells)

    def placement(self, layer_index: int) -> LayerPlacement:
        for p in self.placements:
            if p.layer_index == layer_index:
                return p
        raise MappingError(f"layer {layer_index} is not placed")

    def summary_rows(self):
        rows = []
        for p in self.placements:
            alloc = p.pes * self.arrays_per_pe * self.array_cells
            rows.append({
                "layer": p.layer_index, "kind": p.kind, "arrays_used": p.arrays,
                "duplication": p.duplication, "pes": p.pes,
                "utilization": p.used_cells / alloc,
            })
        return rows


def build_floorplan(net: NetworkTopology, array_rows: int = 128, array_cols: int = 128,
                    arrays_per_pe: int = 9, pes_per_tile: int = 4,
                    tiles_per_chip: int | None = None, cells_per_weight: int = 1,
                    share_tiles: bool = False) -> Floorplan:
    """Greedy placement in topology order.

    Each layer gets whole PEs (no PE or array holds two layers). Layers open
    new tiles unless ``share_tiles`` lets a tile's free PEs take the next
    layer. ``tiles_per_chip=None`` sizes the chip to fit.
    """
    placements = []
    tile_cursor, pe_in_tile = 0, 0
    for idx, layer, _, _ in net.weighted():
        if layer.kind == "conv":
            rows, n_sub = layer.in_channels, layer.kernel * layer.kernel
        else:
            rows, n_sub = layer.in_features, 1
        cols = layer.weight_shape[-1] * cells_per_weight
        grid = partition_matrix(rows, cols, array_rows, array_cols)
        dup = compute_duplication(rows, array_rows) if (layer.kind == "conv" and rows <= array_rows) else 1
        used = 0
        for r0, r1, c0, c1 in grid.tiles:
            used += min(dup * (r1 - r0), array_rows) * (c1 - c0)
        arrays = grid.num_arrays * n_sub
        pes = math.ceil(arrays / arrays_per_pe)
        if not share_tiles or pe_in_tile == 0:
            if pe_in_tile:
                tile_cursor += 1
            pe_in_tile = 0
        first_tile, first_pe = tile_cursor, pe_in_tile
        total_pe = pe_in_tile + pes
        tile_cursor += (total_pe - 1) // pes_per_tile
        pe_in_tile = total_pe % pes_per_tile
        if pe_in_tile == 0:
            tile_cursor += 1
        placements.append(LayerPlacement(
            idx, layer.kind, rows, cols, n_sub, arrays, dup, used * n_sub, pes,
            math.ceil(pes / pes_per_tile), first_tile, first_pe))
    tiles = tile_cursor + (1 if pe_in_tile else 0)
    if tiles_per_chip is not None and tiles > tiles_per_chip:
        raise CapacityError(
            f"network needs {tiles} tiles but the chip has {tiles_per_chip} (short by {tiles - tiles_per_chip})",
            shortfall=tiles - tiles_per_chip)
    return Floorplan(array_rows, array_cols, arrays_per_pe, pes_per_tile, tiles,
                     placements, cells_per_weight, share_tiles)
