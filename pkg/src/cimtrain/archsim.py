"""Hardware cost model for on-chip training.

Every absolute number comes from a :class:`CostTable` of per-component unit
costs (J, s, mm², W). Step costs are assembled from those units and from the
activity statistics of an :class:`~cimtrain.reporting.EpochTrace`:

* ``feed_forward`` and ``error``: bit-serial array reads (transposed for the
  error step), adder trees, global-buffer traffic, H-tree hops and DRAM.
* ``weight_gradient``: the layer-output error is written into SRAM compute
  arrays and every unrolled activation vector is applied to it.
* ``weight_update``: per-batch gradient accumulation followed by pulse
  programming of the synaptic arrays.

Per-image costs for the first three steps and a per-batch cost for the update
roll up to an epoch as ``batches * (B*FF + B*ERR + B*GRAD + UPDATE)``. The
four steps never overlap.

Laws used where only a trend is known:

* ADC latency ``t = t_base + k / I`` with ``I`` the mean column current,
  capped at ``adc_latency_ceiling`` (also used when ``I = 0``).
* Write energy per pulse ``V² · G_mean · t_pulse``.
* Leakage: constant power per instantiated component times wall-clock latency.
* Mux/driver area grows as ``1 + r_ref / r_on``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import device as dev
from .errors import CIMError, ConfigError, TraceError
from .mapping import Floorplan, conv_row_blocks, partition_matrix, unrolled_weights, compute_duplication
from .topology import NetworkTopology

COMPONENTS = ("adc", "accumulation", "buffer", "interconnect", "dram", "array", "other")
PEAK_COMPONENTS = ("adc", "accumulation", "array", "other")
STEPS = ("feed_forward", "error", "weight_gradient", "weight_update")
AREA_COMPONENTS = ("array", "adc", "accumulation", "buffer", "interconnect", "other",
                   "gradient_unit")


class CostError(CIMError):
    module = "archsim"


# -- cost table ------------------------------------------------------------------

@dataclass(frozen=True)
class CostTable:
    """Unit costs. Suffixes give the unit of each entry."""

    adc_energy: float  # J per conversion
    adc_power: float  # W while converting
    adc_latency_base: float  # s
    adc_current_coeff: float  # s*A, the k in k / I
    adc_latency_ceiling: float  # s
    adc_area: float  # mm² per ADC
    cols_per_adc: int
    read_voltage: float  # V
    switch_energy: float  # J per driven line
    switch_latency: float  # s per cycle
    switch_area: float  # mm² per array
    decoder_energy: float  # J per cycle
    decoder_latency: float  # s per cycle
    decoder_area: float  # mm² per array
    shift_add_energy: float  # J per column per cycle
    shift_add_latency: float  # s per cycle
    shift_add_area: float  # mm² per array
    adder_energy: float  # J per add
    adder_latency: float  # s per tree stage
    adder_area: float  # mm² per adder
    accum_energy: float  # J per accumulated element
    accum_latency: float  # s per accumulation pass
    accum_area: float  # mm² per accumulation lane
    accum_bus_bits: int  # accumulation-buffer port width
    buffer_read_energy: float  # J per bit
    buffer_write_energy: float  # J per bit
    buffer_latency: float  # s per access
    buffer_bus_bits: int
    buffer_area: float  # mm² per bit
    pe_buffer_bits: int
    tile_buffer_bits: int
    htree_energy: float  # J per bit per hop
    htree_latency: float  # s per hop per access
    htree_area: float  # mm² per tile
    dram_energy: float  # J per bit
    dram_bandwidth: float  # bit/s
    sram_write_energy: float  # J per bit
    sram_write_latency: float  # s per row
    sram_cell_area: float  # mm²
    sram_cell_current: float  # A, read current of a stored one
    envm_cell_area: float  # mm²
    mux_area: float  # mm² per array at r_on = r_ref
    r_ref: float  # ohm
    write_group_rows: int
    leak_adc: float  # W per ADC
    leak_array: float  # W per array periphery
    leak_buffer: float  # W per bit
    leak_sram_cell: float  # W per cell

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise ConfigError(f.name, f"cost entry must be a finite number, got {v!r}")
            if v < 0:
                raise ConfigError(f.name, f"cost entry must be >= 0, got {v}")
        for name in ("cols_per_adc", "buffer_bus_bits", "accum_bus_bits", "write_group_rows"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError(name, "must be a positive integer")
        if self.dram_bandwidth <= 0:
            raise ConfigError("dram_bandwidth", "must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "CostTable":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown cost entry")
        return replace(self, **kw)


def _cost_records(path=None) -> dict:
    if path is None:
        text = resources.files("cimtrain.catalog").joinpath("costs.json").read_text()
    else:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"cost table not found: {p}")
        text = p.read_text()
    data = json.loads(text)
    if "base" not in data:
        # a bare flat table
        data = {"base": data, "overlays": {}}
    return data


def load_costs(path=None, device: str | None = None) -> CostTable:
    """Default (or file) table with the named device's overlay applied.

    The file holds ``{"base": {...}, "overlays": {"<device>": {...}}}``; a
    flat object is read as a base table without overlays.
    """
    data = _cost_records(path)
    record = dict(data["base"])
    if device is not None:
        record.update(data.get("overlays", {}).get(device, {}))
    known = {f.name for f in fields(CostTable)}
    unknown = set(record) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown cost entry")
    missing = known - set(record)
    if missing:
        raise ConfigError(sorted(missing)[0], "missing cost entry")
    ints = {"cols_per_adc", "buffer_bus_bits", "accum_bus_bits", "write_group_rows", "pe_buffer_bits",
            "tile_buffer_bits"}
    return CostTable(**{k: int(v) if k in ints else float(v) for k, v in record.items()})


# -- results -------------------------------------------------------------------

def _zeros():
    return {c: 0.0 for c in COMPONENTS}


@dataclass
class StepCost:
    """Latency and energy of one step, broken down by component.

    Component entries sum to ``latency`` and ``dynamic_energy``; leakage is
    reported separately.
    """

    step: str
    latency_by: dict = field(default_factory=_zeros)
    energy_by: dict = field(default_factory=_zeros)
    leakage_energy: float = 0.0
    ops: float = 0.0

    @property
    def latency(self) -> float:
        return math.fsum(self.latency_by.values())

    @property
    def dynamic_energy(self) -> float:
        return math.fsum(self.energy_by.values())

    @property
    def energy(self) -> float:
        return self.dynamic_energy + self.leakage_energy

    def add(self, latency=None, energy=None, scale_latency=1.0, scale_energy=1.0):
        for k, v in (latency or {}).items():
            self.latency_by[k] += scale_latency * v
        for k, v in (energy or {}).items():
            self.energy_by[k] += scale_energy * v

    def scaled(self, factor: float) -> "StepCost":
        return StepCost(self.step, {k: v * factor for k, v in self.latency_by.items()},
                        {k: v * factor for k, v in self.energy_by.items()},
                        self.leakage_energy * factor, self.ops * factor)


@dataclass
class ReadCost:
    latency_by: dict
    energy_by: dict
    ops: float

    @property
    def latency(self) -> float:
        return math.fsum(self.latency_by.values())

    @property
    def energy(self) -> float:
        return math.fsum(self.energy_by.values())


@dataclass
class EpochCost:
    """Epoch totals from per-step costs and the batch formula."""

    steps: dict  # step -> StepCost (per image, or per batch for the update)
    batch_size: int
    batches: int
    leakage_power: float = 0.0

    def weight(self, step: str) -> int:
        return self.batches * (1 if step == "weight_update" else self.batch_size)

    def step_latency(self, step: str) -> float:
        return self.weight(step) * self.steps[step].latency

    def step_dynamic_energy(self, step: str) -> float:
        return self.weight(step) * self.steps[step].dynamic_energy

    @property
    def latency_by(self) -> dict:
        return {c: math.fsum(self.weight(s) * self.steps[s].latency_by[c] for s in STEPS)
                for c in COMPONENTS}

    @property
    def energy_by(self) -> dict:
        return {c: math.fsum(self.weight(s) * self.steps[s].energy_by[c] for s in STEPS)
                for c in COMPONENTS}

    @property
    def latency(self) -> float:
        return math.fsum(self.step_latency(s) for s in STEPS)

    @property
    def dynamic_energy(self) -> float:
        return math.fsum(self.step_dynamic_energy(s) for s in STEPS)

    @property
    def leakage_energy(self) -> float:
        return self.leakage_power * self.latency

    @property
    def energy(self) -> float:
        return self.dynamic_energy + self.leakage_energy

    @property
    def ops(self) -> float:
        return math.fsum(self.weight(s) * self.steps[s].ops for s in STEPS)

    def share(self, step: str, what: str = "latency") -> float:
        if what == "latency":
            total = self.latency
            return self.step_latency(step) / total if total else 0.0
        total = self.dynamic_energy
        return self.step_dynamic_energy(step) / total if total else 0.0


@dataclass(frozen=True)
class PeakMetrics:
    peak_latency: float
    peak_energy: float
    peak_tops: float
    peak_tops_per_watt: float
    total_tops: float
    total_tops_per_watt: float


@dataclass(frozen=True)
class BufferRequirement:
    global_bits: int
    accumulation_bits: float
    accumulated_precision: int

    @property
    def total_bits(self) -> float:
        return self.global_bits + self.accumulation_bits


# -- primitives ----------------------------------------------------------------

def adc_latency(current, costs: CostTable) -> float:
    """``t_base + k / I``, capped at the ceiling; ``I <= 0`` gives the ceiling."""
    if current <= 0:
        return costs.adc_latency_ceiling
    return min(costs.adc_latency_base + costs.adc_current_coeff / current,
               costs.adc_latency_ceiling)


def write_pulse_energy(voltage: float, conductance: float, pulse_width: float) -> float:
    return voltage * voltage * conductance * pulse_width


def array_read_cost(conductance, activity, costs: CostTable, readout="parallel",
                    cycles: int = 1) -> ReadCost:
    """Cost of applying one input vector to one array.

    ``activity`` is the probability that an input line is driven in a bit
    cycle (per row, or a scalar for all rows); ``cycles`` is the number of
    input bit cycles. Parallel readout senses all rows at once, sequential
    readout one active row per cycle. Inputs with no active line skip the
    read entirely.
    """
    G = np.atleast_2d(np.asarray(conductance, dtype=float))
    rows, cols = G.shape
    a = np.broadcast_to(np.asarray(activity, dtype=float), (rows,))
    if np.any(a < 0) or np.any(a > 1):
        raise CostError("activity must lie in [0, 1]")
    readout = dev.Readout(readout)
    lat, en = _zeros(), _zeros()
    active = a > 0
    n_active = int(np.count_nonzero(active))
    ops = 2.0 * cols * n_active
    if n_active == 0:
        return ReadCost(lat, en, 0.0)
    mux = math.ceil(cols / costs.cols_per_adc)
    periph_t = costs.decoder_latency + costs.switch_latency + costs.shift_add_latency
    v = costs.read_voltage
    if readout is dev.Readout.PARALLEL:
        i_col = v * (a @ G)
        t = adc_latency(float(i_col.mean()), costs)
        lat["adc"] = cycles * mux * t
        lat["other"] = cycles * periph_t
        en["adc"] = cycles * cols * (costs.adc_energy + costs.adc_power * t)
        en["array"] = cycles * v * float(i_col.sum()) * t
        en["other"] = cycles * (costs.decoder_energy + costs.switch_energy * float(a.sum())
                                + costs.shift_add_energy * cols)
    else:
        i_rows = v * a[active, None] * G[active]  # per active row, per column
        t = np.array([adc_latency(float(m), costs) for m in i_rows.mean(axis=1)])
        lat["adc"] = cycles * mux * float(t.sum())
        lat["other"] = cycles * n_active * periph_t
        en["adc"] = cycles * cols * float(np.sum(costs.adc_energy + costs.adc_power * t))
        en["array"] = cycles * v * float(np.sum(i_rows.sum(axis=1) * t))
        en["other"] = cycles * (n_active * costs.decoder_energy
                                + costs.switch_energy * float(a.sum())
                                + n_active * costs.shift_add_energy * cols)
    return ReadCost(lat, en, ops)


def global_buffer_bits(act_sizes, err_sizes, grad_sizes, bits: int) -> int:
    return int(max(list(act_sizes) + list(err_sizes) + list(grad_sizes))) * int(bits)


def accumulation_buffer_bits(array_cells: int, precision: int, ratio: float = 1.0) -> float:
    return 2 * array_cells * precision * ratio


def accumulated_precision(gradient_bits: int, batch_size: int) -> int:
    return int(gradient_bits) + max(math.ceil(math.log2(batch_size)), 0)


def buffer_requirement(net: NetworkTopology, floorplan: Floorplan, batch_size: int = 1,
                       ratio: float = 1.0) -> BufferRequirement:
    """Global buffer (largest activation, error or gradient tensor) and the
    accumulation buffer bound for ``ratio`` arrays accumulated at once."""
    acts, errs, grads = [], [], []
    for _, layer, in_shape, out_shape in net.weighted():
        acts.append(int(np.prod(in_shape)))
        errs.append(int(np.prod(out_shape)))
        grads.append(int(np.prod(layer.weight_shape)))
    bits = max(net.activation_bits, net.error_bits, net.gradient_bits)
    prec = accumulated_precision(net.gradient_bits, batch_size)
    return BufferRequirement(global_buffer_bits(acts, errs, grads, bits),
                             accumulation_buffer_bits(floorplan.array_cells, prec, ratio), prec)


def accumulation_schedule(batch_size: int, n_arrays: int, ratio: float, t_read: float,
                          t_acc: float, t_write: float, e_read: float = 0.0,
                          e_acc: float = 0.0, e_write: float = 0.0):
    """Gradient accumulation of one layer: ``(latency, energy)``.

    Each array group costs ``B * (t_read + t_acc + t_write)``; ``floor(ratio)``
    groups run concurrently, so ``ceil(n_arrays / c)`` rounds are sequential.
    """
    if batch_size < 1 or n_arrays < 1 or ratio < 1:
        raise CostError("batch size, array count and ratio must be >= 1")
    c = int(math.floor(ratio))
    rounds = math.ceil(n_arrays / c)
    latency = rounds * batch_size * (t_read + t_acc + t_write)
    energy = n_arrays * batch_size * (e_read + e_acc + e_write)
    return latency, energy


def epoch_rollup(steps: dict, batch_size: int, batches: int,
                 leakage_power: float = 0.0) -> EpochCost:
    missing = [s for s in STEPS if s not in steps]
    if missing:
        raise CostError(f"missing step costs: {missing}")
    return EpochCost(dict(steps), int(batch_size), int(batches), leakage_power)


def _peak(d: dict) -> float:
    return math.fsum(d[c] for c in PEAK_COMPONENTS)


def peak_metrics(epoch: EpochCost, ops: float | None = None) -> PeakMetrics:
    """Peak figures use only in-array computation components."""
    ops = epoch.ops if ops is None else ops
    peak_lat = _peak(epoch.latency_by)
    peak_en = _peak(epoch.energy_by)

    def ratio(n, d):
        return n / d / 1e12 if d > 0 else 0.0

    return PeakMetrics(peak_lat, peak_en, ratio(ops, peak_lat), ratio(ops, peak_en),
                       ratio(ops, epoch.latency), ratio(ops, epoch.energy))


# -- per-layer geometry ----------------------------------------------------------

def _layer_dims(layer, in_shape, out_shape):
    """``(positions, rows, cols, kernel_positions, in_channels)`` of the unrolled layer."""
    if layer.kind == "fc":
        return 1, layer.in_features, layer.out_features, 1, layer.in_features
    positions = int(out_shape[1] * out_shape[2])
    k2 = layer.kernel * layer.kernel
    return positions, k2 * layer.in_channels, layer.out_channels, k2, layer.in_channels


def _tiles(layer, matrix, array_rows, array_cols):
    """Array-sized blocks of the unrolled matrix, cut per submatrix."""
    out = []
    for r0, r1 in conv_row_blocks(layer):
        for a in range(r0, r1, array_rows):
            b = min(a + array_rows, r1)
            for c in range(0, matrix.shape[1], array_cols):
                out.append(matrix[a:b, c:c + array_cols])
    return out


def _htree_hops(tiles: int) -> int:
    return max(1, math.ceil(math.log2(max(tiles, 1))) + 1)


def _tree_stages(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0


class CostModel:
    """Evaluates step costs of one network on one floorplan."""

    def __init__(self, net: NetworkTopology, floorplan: Floorplan, costs: CostTable,
                 device: dev.DeviceSpec, ratio: float = 1.0, weight_range=(-1.0, 1.0)):
        if ratio < 1:
            raise ConfigError("buffer_overhead_constraint", "must be >= 1")
        self.net = net
        self.fp = floorplan
        self.costs = costs
        self.device = device
        self.ratio = ratio
        self.weight_range = tuple(weight_range)
        self.layers = {idx: (layer, i, o) for idx, layer, i, o in net.weighted()}
        self.first = min(self.layers) if self.layers else None
        self.hops = _htree_hops(floorplan.tiles)
        self.sram_arrays = self._gradient_unit_arrays()

    # geometry helpers

    def _gradient_grid(self, idx):
        layer, i, o = self.layers[idx]
        positions = _layer_dims(layer, i, o)[0]
        return partition_matrix(positions, layer.weight_shape[-1] * self.net.error_bits,
                                self.fp.array_rows, self.fp.array_cols)

    def _gradient_unit_arrays(self) -> int:
        return max((self._gradient_grid(i).num_arrays for i in self.layers), default=0)

    def conductance_matrix(self, idx, weights) -> np.ndarray:
        """Stored conductances of a layer in unrolled form (columns per cell)."""
        layer = self.layers[idx][0]
        w = unrolled_weights(layer, np.asarray(weights, dtype=float))
        w = np.clip(w, *self.weight_range)
        d = self.device
        if d.is_sram:
            p_max = 2 ** d.weight_bits - 1
            lo, hi = self.weight_range
            codes = np.rint((w - lo) / (hi - lo) * p_max).astype(np.int64)
            cpw = d.sram_cells_per_weight
            bits = np.stack([(codes >> b) & 1 for b in range(cpw)], axis=-1)
            g_on = self.costs.sram_cell_current / self.costs.read_voltage
            return g_on * bits.reshape(w.shape[0], -1).astype(float)
        g_min, g_max = dev.conductance_bounds(d)
        return np.asarray(dev.weight_to_conductance(w, g_min, g_max, self.weight_range), dtype=float)

    def leakage_power(self) -> float:
        c = self.costs
        fp = self.fp
        adcs = 2 * math.ceil(fp.array_cols / c.cols_per_adc)
        p = fp.total_arrays * (c.leak_array + adcs * c.leak_adc)
        p += self.sram_arrays * (c.leak_array + adcs * c.leak_adc
                                 + fp.array_cells * c.leak_sram_cell)
        if self.device.is_sram:
            p += fp.total_arrays * fp.array_cells * c.leak_sram_cell
        p += self._buffer_bits() * c.leak_buffer
        return p

    def _buffer_bits(self) -> float:
        fp = self.fp
        req = buffer_requirement(self.net, fp, 1, self.ratio)
        return (req.global_bits + req.accumulation_bits + fp.tiles * self.costs.tile_buffer_bits
                + fp.tiles * fp.pes_per_tile * self.costs.pe_buffer_bits)

    def _move(self, cost: StepCost, read_bits=0.0, write_bits=0.0, dram_bits=0.0):
        c = self.costs
        moved = read_bits + write_bits
        accesses = math.ceil(moved / c.buffer_bus_bits)
        cost.add({"buffer": accesses * c.buffer_latency,
                  "interconnect": accesses * self.hops * c.htree_latency,
                  "dram": dram_bits / c.dram_bandwidth},
                 {"buffer": read_bits * c.buffer_read_energy + write_bits * c.buffer_write_energy,
                  "interconnect": moved * self.hops * c.htree_energy,
                  "dram": dram_bits * c.dram_energy})

    def _array_pass(self, cost: StepCost, tiles, activity, cycles, vectors, reads):
        """``vectors`` inputs through ``tiles`` in parallel, ``reads`` sequential reads."""
        readout = self.device.readout
        slow = None
        for tile in tiles:
            rc = array_read_cost(tile, activity, self.costs, readout, cycles)
            cost.add(energy=rc.energy_by, scale_energy=vectors)
            if slow is None or rc.latency > slow.latency:
                slow = rc
        if slow is not None:
            cost.add(latency=slow.latency_by, scale_latency=reads)

    def _adder(self, cost: StepCost, adds_per_vector, stages, vectors, reads):
        c = self.costs
        cost.add({"accumulation": reads * stages * c.adder_latency},
                 {"accumulation": vectors * adds_per_vector * c.adder_energy})

    # steps

    def feed_forward(self, trace) -> StepCost:
        cost = StepCost("feed_forward")
        net, fp = self.net, self.fp
        for lt in trace.layers:
            layer, i_shape, o_shape = self._layer(lt)
            pos, rows, cols, k2, _ = _layer_dims(layer, i_shape, o_shape)
            a = _fraction(lt.act_ones_fraction, "act_ones_fraction")
            G = self.conductance_matrix(lt.layer_index, lt.new_weights)
            tiles = _tiles(layer, G, fp.array_rows, fp.array_cols)
            dup = fp.placement(lt.layer_index).duplication
            reads = math.ceil(pos / dup)
            self._array_pass(cost, tiles, a, net.activation_bits, pos, reads)
            row_tiles = sum(math.ceil((r1 - r0) / fp.array_rows) for r0, r1 in conv_row_blocks(layer))
            self._adder(cost, (row_tiles - 1) * G.shape[1], _tree_stages(row_tiles), pos, reads)
            if a > 0:
                cost.ops += 2.0 * pos * rows * cols
            in_bits = int(np.prod(i_shape)) * net.activation_bits
            out_bits = int(np.prod(o_shape)) * net.activation_bits
            self._move(cost, in_bits, out_bits, dram_bits=in_bits)
        return cost

    def error(self, trace) -> StepCost:
        cost = StepCost("error")
        net, fp = self.net, self.fp
        for lt in trace.layers:
            if lt.layer_index == self.first:
                continue
            layer, i_shape, o_shape = self._layer(lt)
            pos, rows, cols, k2, d_in = _layer_dims(layer, i_shape, o_shape)
            e = _fraction(lt.err_ones_fraction, "err_ones_fraction")
            G = self.conductance_matrix(lt.layer_index, lt.new_weights)
            tiles = [t.T for t in _tiles(layer, G, fp.array_rows, fp.array_cols)]
            self._array_pass(cost, tiles, e, net.error_bits, pos, pos)
            col_tiles = math.ceil(G.shape[1] / fp.array_cols)
            adds = (col_tiles - 1) * rows + (k2 - 1) * d_in
            self._adder(cost, adds, _tree_stages(col_tiles) + _tree_stages(k2), pos, pos)
            if e > 0:
                cost.ops += 2.0 * pos * rows * cols
            out_bits = int(np.prod(o_shape)) * net.error_bits
            in_bits = int(np.prod(i_shape)) * net.error_bits
            self._move(cost, out_bits, in_bits, dram_bits=out_bits)
        return cost

    def weight_gradient(self, trace) -> StepCost:
        cost = StepCost("weight_gradient")
        net, fp, c = self.net, self.fp, self.costs
        g_on = c.sram_cell_current / c.read_voltage
        for lt in trace.layers:
            layer, i_shape, o_shape = self._layer(lt)
            pos, rows, cols, k2, _ = _layer_dims(layer, i_shape, o_shape)
            a = _fraction(lt.act_ones_fraction, "act_ones_fraction")
            e = _fraction(lt.err_ones_fraction, "err_ones_fraction")
            grid = self._gradient_grid(lt.layer_index)
            dup = compute_duplication(pos, fp.array_rows) if pos <= fp.array_rows else 1
            dup *= max(self.sram_arrays // grid.num_arrays, 1)
            # error matrix written once per image, duplicated copies included
            written_rows = max(min(dup * (r1 - r0), fp.array_rows) for r0, r1, _, _ in grid.tiles)
            bits = pos * cols * net.error_bits * dup
            cost.add({"array": written_rows * c.sram_write_latency},
                     {"array": bits * c.sram_write_energy})
            # every unrolled activation vector is applied to the stored errors
            vectors = rows
            reads = math.ceil(vectors / dup)
            tiles = [np.full((r1 - r0, c1 - c0), g_on * e) for r0, r1, c0, c1 in grid.tiles]
            self._array_pass(cost, tiles, a, net.activation_bits, vectors, reads)
            row_tiles = grid.shape[0]
            self._adder(cost, (row_tiles - 1) * cols * net.error_bits, _tree_stages(row_tiles),
                        vectors, reads)
            if a > 0 and e > 0:
                cost.ops += 2.0 * vectors * pos * cols
            act_bits = int(np.prod(i_shape)) * net.activation_bits
            err_bits = int(np.prod(o_shape)) * net.error_bits
            grad_bits = int(np.prod(layer.weight_shape)) * net.gradient_bits
            self._move(cost, act_bits + err_bits, grad_bits,
                       dram_bits=act_bits + err_bits + grad_bits)
        return cost

    def weight_update(self, trace, batch_size: int | None = None) -> StepCost:
        cost = StepCost("weight_update")
        net, fp, c, d = self.net, self.fp, self.costs, self.device
        b = batch_size or trace.batch_size
        if not b:
            raise TraceError("trace has no batch size")
        prec = accumulated_precision(net.gradient_bits, b)
        p_max = 2 ** d.weight_bits - 1 if d.is_sram else d.p_max
        for lt in trace.layers:
            layer, _, _ = self._layer(lt)
            place = fp.placement(lt.layer_index)
            old = unrolled_weights(layer, np.asarray(lt.old_weights, dtype=float))
            new = unrolled_weights(layer, np.asarray(lt.new_weights, dtype=float))
            n = dev.pulses_for_delta(new - old, self.weight_range, p_max)
            # accumulation of B gradients per array group
            cells = place.used_cells / place.arrays
            group_bits = cells * prec
            t_rw = math.ceil(group_bits / c.accum_bus_bits) * c.buffer_latency
            acc_lat, _ = accumulation_schedule(b, place.arrays, self.ratio, t_rw, c.accum_latency,
                                               t_rw)
            _, e_buf = accumulation_schedule(b, place.arrays, self.ratio, 0, 0, 0,
                                             group_bits * c.buffer_read_energy, 0.0,
                                             group_bits * c.buffer_write_energy)
            _, e_acc = accumulation_schedule(b, place.arrays, self.ratio, 0, 0, 0,
                                             0.0, cells * c.accum_energy, 0.0)
            cost.add({"accumulation": acc_lat}, {"buffer": e_buf, "accumulation": e_acc})
            grad_bits = old.size * net.gradient_bits
            cost.add({"dram": b * grad_bits / c.dram_bandwidth},
                     {"dram": b * grad_bits * c.dram_energy})
            lat, en = self._program(layer, n, new)
            cost.add({"array": lat}, {"array": en})
        return cost

    def _program(self, layer, n, new_weights):
        """Latency and energy of writing pulse counts ``n`` (unrolled form)."""
        c, d, fp = self.costs, self.device, self.fp
        group = c.write_group_rows
        conc = int(math.floor(self.ratio))
        if d.is_sram:
            cpw = d.sram_cells_per_weight
            changed = n != 0
            energy = float(np.count_nonzero(changed)) * cpw * c.sram_write_energy
            per_array = []
            for t in _tiles(layer, changed.astype(float), fp.array_rows,
                            max(fp.array_cols // cpw, 1)):
                per_array.append(float(np.count_nonzero(t.any(axis=1))) * c.sram_write_latency)
        else:
            g_min, g_max = dev.conductance_bounds(d)
            g = np.asarray(dev.weight_to_conductance(np.clip(new_weights, *self.weight_range),
                                                     g_min, g_max, self.weight_range))
            g_mean = float(g.mean())
            pw = d.write_pulse_width
            up = float(np.sum(np.where(n > 0, n, 0)))
            down = float(np.sum(np.where(n < 0, -n, 0)))
            energy = (up * write_pulse_energy(d.write_voltage_ltp, g_mean, pw)
                      + down * write_pulse_energy(d.write_voltage_ltd, g_mean, pw))
            per_array = []
            for t in _tiles(layer, np.abs(n).astype(float), fp.array_rows, fp.array_cols):
                worst = [t[r:r + group].max() for r in range(0, t.shape[0], group)]
                per_array.append(pw * float(np.sum(worst)))
        # arrays written ``conc`` at a time
        per_array.sort(reverse=True)
        latency = math.fsum(per_array[k] for k in range(0, len(per_array), conc))
        return latency, energy

    def _layer(self, lt):
        try:
            return self.layers[lt.layer_index]
        except KeyError:
            raise TraceError(f"trace layer {lt.layer_index} is not a weighted layer") from None

    def step_cost(self, step: str, trace, batch_size: int | None = None) -> StepCost:
        if step not in STEPS:
            raise CostError(f"unknown step {step!r}")
        if trace is None or not getattr(trace, "layers", None):
            raise TraceError("epoch trace is missing or empty")
        if step == "weight_update":
            cost = self.weight_update(trace, batch_size)
        else:
            cost = getattr(self, step)(trace)
        cost.leakage_energy = self.leakage_power() * cost.latency
        return cost

    def epoch(self, trace, batch_size: int | None = None, batches: int | None = None) -> EpochCost:
        b = batch_size or trace.batch_size
        steps = {s: self.step_cost(s, trace, b) for s in STEPS}
        return epoch_rollup(steps, b, batches if batches is not None else trace.batches,
                            self.leakage_power())

    def area(self) -> dict:
        return area_rollup(self.fp, self.costs, self.device, self.net, self.ratio)


def _fraction(v, name):
    if v is None or not np.isfinite(v):
        raise TraceError(f"trace field {name} is missing")
    if not 0.0 <= v <= 1.0:
        raise TraceError(f"trace field {name}={v} outside [0, 1]")
    return float(v)


def step_cost(step: str, trace, floorplan: Floorplan, costs: CostTable, net: NetworkTopology,
              device: dev.DeviceSpec, batch_size: int | None = None, ratio: float = 1.0) -> StepCost:
    return CostModel(net, floorplan, costs, device, ratio).step_cost(step, trace, batch_size)


def mux_factor(r_on: float | None, r_ref: float) -> float:
    """Mux/driver sizing factor; ``None`` (SRAM) means no analog drivers."""
    return 1.0 if not r_on else 1.0 + r_ref / r_on


def area_rollup(floorplan: Floorplan, costs: CostTable, device: dev.DeviceSpec,
                net: NetworkTopology | None = None, ratio: float = 1.0) -> dict:
    """Chip area by component (mm²); ``net`` sizes buffers and the gradient unit."""
    c, fp = costs, floorplan
    adcs = 2 * math.ceil(fp.array_cols / c.cols_per_adc)
    cell = c.sram_cell_area if device.is_sram else c.envm_cell_area
    area = {k: 0.0 for k in AREA_COMPONENTS}
    n = fp.total_arrays
    area["array"] = n * (fp.array_cells * cell + c.mux_area * mux_factor(device.r_on, c.r_ref))
    area["adc"] = n * adcs * c.adc_area
    area["other"] = n * (c.switch_area + c.decoder_area + c.shift_add_area)
    # adder trees inside every PE and tile
    adders = fp.tiles * fp.pes_per_tile * (fp.arrays_per_pe - 1) * fp.array_cols
    adders += fp.tiles * (fp.pes_per_tile - 1) * fp.array_cols
    area["accumulation"] = adders * c.adder_area + fp.array_cells * math.floor(ratio) * c.accum_area
    area["interconnect"] = fp.tiles * c.htree_area
    local_bits = fp.tiles * (c.tile_buffer_bits + fp.pes_per_tile * c.pe_buffer_bits)
    area["buffer"] = local_bits * c.buffer_area
    if net is not None:
        model = CostModel(net, fp, c, device, ratio)
        req = buffer_requirement(net, fp, 1, ratio)
        area["buffer"] += (req.global_bits + req.accumulation_bits) * c.buffer_area
        m = model.sram_arrays
        area["gradient_unit"] = m * (fp.array_cells * c.sram_cell_area + adcs * c.adc_area
                                     + c.switch_area + c.decoder_area + c.shift_add_area)
    return area
