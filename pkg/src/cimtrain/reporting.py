"""Per-epoch traces, distribution statistics and CSV report emission.

Output layout (``<out>`` is the configured output directory)::

    <out>/NeuroSim_Results_Each_Epoch/Breakdown_Epoch_<i>.csv   i = 1..E
    <out>/NeuroSim_Output.csv
    <out>/PythonWrapper_Output.csv
    <out>/Weight_dist.csv
    <out>/Delta_dist.csv
    <out>/Input_activity.csv

Numbers are written with Python's shortest round-trip float repr so a
re-parsed value equals the in-memory one exactly.
"""

from __future__ import annotations

import csv
import math
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quant import QuantTensor

BREAKDOWN_DIR = "NeuroSim_Results_Each_Epoch"
SUMMARY_FILES = ("NeuroSim_Output.csv", "PythonWrapper_Output.csv", "Weight_dist.csv",
                 "Delta_dist.csv", "Input_activity.csv")


@dataclass
class LayerTrace:
    layer_index: int
    activations: QuantTensor  # layer input, last iteration
    errors: QuantTensor  # error at the layer output, last iteration
    old_weights: np.ndarray
    new_weights: np.ndarray
    act_ones_fraction: float
    err_ones_fraction: float

    @property
    def delta_weights(self) -> np.ndarray:
        return self.new_weights - self.old_weights


@dataclass
class EpochTrace:
    epoch: int
    layers: list
    loss: float = float("nan")
    accuracy: float = float("nan")
    batches: int = 0
    batch_size: int = 0

    def layer(self, index: int) -> LayerTrace:
        for lt in self.layers:
            if lt.layer_index == index:
                return lt
        raise KeyError(index)


def input_activity(t: QuantTensor) -> float:
    """Fraction of one-bits across the magnitude bits of a fixed-point tensor."""
    nbits = max(t.bits - 1, 1)
    mag = np.abs(np.asarray(t.codes, dtype=np.int64))
    if mag.size == 0:
        return 0.0
    ones = 0
    for b in range(nbits):
        ones += int(np.count_nonzero((mag >> b) & 1))
    return ones / (mag.size * nbits)


@dataclass
class LayerDistribution:
    layer_index: int
    weight_mean: float
    weight_std: float
    delta_mean: float
    delta_std: float
    activation_size: int
    weight_size: int


def distribution_summary(trace: EpochTrace, activation_sizes: dict | None = None):
    """Per-layer weight/delta statistics plus size-normalized network means.

    Returns ``(layers, normalized)`` where ``normalized`` holds
    ``sum(mean * activation_size * weight_size)`` for weights, deltas and input
    activity. ``activation_sizes`` overrides the per-sample input size taken
    from the trace.
    """
    layers = []
    norm_w = norm_d = norm_a = 0.0
    for lt in trace.layers:
        w = np.asarray(lt.new_weights, dtype=float)
        d = np.asarray(lt.delta_weights, dtype=float)
        if activation_sizes is not None:
            a_size = int(activation_sizes[lt.layer_index])
        else:
            shape = lt.activations.shape
            a_size = int(np.prod(shape[1:])) if len(shape) > 1 else int(np.prod(shape))
        dist = LayerDistribution(lt.layer_index, float(w.mean()), float(w.std()),
                                 float(d.mean()), float(d.std()), a_size, int(w.size))
        layers.append(dist)
        norm_w += dist.weight_mean * a_size * w.size
        norm_d += dist.delta_mean * a_size * w.size
        norm_a += lt.act_ones_fraction * a_size * w.size
    return layers, {"weight_mean": norm_w, "delta_mean": norm_d, "input_activity": norm_a}


# -- epoch reports -----------------------------------------------------------------

@dataclass
class EpochReport:
    epoch: int
    accuracy: float
    loss: float
    area: dict
    latency_by_component: dict
    energy_by_component: dict
    latency_by_step: dict
    energy_by_step: dict
    peak_latency_by_component: dict
    peak_energy_by_component: dict
    latency: float
    dynamic_energy: float
    leakage_energy: float
    peak: object  # archsim.PeakMetrics
    memory_utilization: float
    weights: list = field(default_factory=list)  # LayerDistribution per layer
    normalized: dict = field(default_factory=dict)
    activity: list = field(default_factory=list)  # (layer, act ones, err ones)
    floorplan: list = field(default_factory=list)  # Floorplan.summary_rows()

    @property
    def total_area(self) -> float:
        return math.fsum(self.area.values())


def build_epoch_report(trace: EpochTrace, model, batch_size: int | None = None,
                       batches: int | None = None) -> EpochReport:
    """Cost an epoch trace with an :class:`archsim.CostModel` and collect statistics."""
    from . import archsim

    ep = model.epoch(trace, batch_size, batches)
    peak = archsim.peak_metrics(ep)
    lat_c, en_c = ep.latency_by, ep.energy_by
    layers, normalized = distribution_summary(trace)
    return EpochReport(
        epoch=trace.epoch, accuracy=float(trace.accuracy), loss=float(trace.loss),
        area=model.area(),
        latency_by_component=lat_c, energy_by_component=en_c,
        latency_by_step={s: ep.step_latency(s) for s in archsim.STEPS},
        energy_by_step={s: ep.step_dynamic_energy(s) for s in archsim.STEPS},
        peak_latency_by_component={c: lat_c[c] for c in archsim.PEAK_COMPONENTS},
        peak_energy_by_component={c: en_c[c] for c in archsim.PEAK_COMPONENTS},
        latency=ep.latency, dynamic_energy=ep.dynamic_energy, leakage_energy=ep.leakage_energy,
        peak=peak, memory_utilization=model.fp.memory_utilization,
        weights=layers, normalized=normalized,
        activity=[(lt.layer_index, lt.act_ones_fraction, lt.err_ones_fraction)
                  for lt in trace.layers],
        floorplan=model.fp.summary_rows(),
    )


# -- CSV emission ----------------------------------------------------------------------

class ReportError(OSError):
    module = "reporting"


def fmt(x) -> str:
    """Shortest round-trip decimal, padded to at least six significant digits."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return repr(x)
    s = repr(x)
    mant = s.split("e")[0].lstrip("-").replace(".", "").lstrip("0")
    if len(mant) >= 6:
        return s
    return f"{x:#.6g}"


BREAKDOWN_COLUMNS = ("section", "name", "value", "unit")
OUTPUT_COLUMNS = ("epoch", "area_mm2", "latency_s", "dynamic_energy_j", "leakage_energy_j",
                  "peak_latency_s", "peak_dynamic_energy_j", "tops", "tops_per_w",
                  "peak_tops", "peak_tops_per_w", "memory_utilization")
WRAPPER_COLUMNS = ("epoch", "accuracy", "loss")
DIST_COLUMNS = ("epoch", "layer", "mean", "std", "network_normalized_mean")
ACTIVITY_COLUMNS = ("epoch", "layer", "activation_ones_fraction", "error_ones_fraction",
                    "network_normalized_activity")


def _section(rows, section, values: dict, unit):
    for name, v in values.items():
        rows.append((section, name, fmt(v), unit))
    rows.append((section, "total", fmt(math.fsum(values.values())), unit))


def breakdown_rows(r: EpochReport):
    rows = []
    _section(rows, "area", r.area, "mm2")
    _section(rows, "latency_by_component", r.latency_by_component, "s")
    _section(rows, "energy_by_component", r.energy_by_component, "J")
    _section(rows, "latency_by_step", r.latency_by_step, "s")
    _section(rows, "energy_by_step", r.energy_by_step, "J")
    _section(rows, "peak_latency_by_component", r.peak_latency_by_component, "s")
    _section(rows, "peak_energy_by_component", r.peak_energy_by_component, "J")
    for p in r.floorplan:
        for key, unit in (("arrays_used", "arrays"), ("duplication", "x"), ("pes", "PEs"),
                          ("utilization", "fraction")):
            rows.append(("floorplan", f"layer{p['layer']}.{key}", fmt(p[key]), unit))
    rows.append(("summary", "leakage_energy", fmt(r.leakage_energy), "J"))
    rows.append(("summary", "tops", fmt(r.peak.total_tops), "TOPS"))
    rows.append(("summary", "tops_per_w", fmt(r.peak.total_tops_per_watt), "TOPS/W"))
    rows.append(("summary", "peak_tops", fmt(r.peak.peak_tops), "TOPS"))
    rows.append(("summary", "peak_tops_per_w", fmt(r.peak.peak_tops_per_watt), "TOPS/W"))
    return rows


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _dist_rows(reports, which):
    rows = []
    for r in reports:
        norm = r.normalized["weight_mean" if which == "weight" else "delta_mean"]
        for d in r.weights:
            mean, std = ((d.weight_mean, d.weight_std) if which == "weight"
                         else (d.delta_mean, d.delta_std))
            rows.append((r.epoch, d.layer_index, fmt(mean), fmt(std), fmt(norm)))
    return rows


def report_files(reports) -> dict:
    """Relative path -> file text for the full report set."""
    if not reports:
        raise ValueError("at least one epoch report is required")
    files = {}
    for r in reports:
        files[f"{BREAKDOWN_DIR}/Breakdown_Epoch_{r.epoch}.csv"] = _csv_text(
            BREAKDOWN_COLUMNS, breakdown_rows(r))
    files["NeuroSim_Output.csv"] = _csv_text(OUTPUT_COLUMNS, [
        (r.epoch, fmt(r.total_area), fmt(r.latency), fmt(r.dynamic_energy),
         fmt(r.leakage_energy), fmt(r.peak.peak_latency), fmt(r.peak.peak_energy),
         fmt(r.peak.total_tops), fmt(r.peak.total_tops_per_watt), fmt(r.peak.peak_tops),
         fmt(r.peak.peak_tops_per_watt), fmt(r.memory_utilization)) for r in reports])
    files["PythonWrapper_Output.csv"] = _csv_text(
        WRAPPER_COLUMNS, [(r.epoch, fmt(r.accuracy), fmt(r.loss)) for r in reports])
    files["Weight_dist.csv"] = _csv_text(DIST_COLUMNS, _dist_rows(reports, "weight"))
    files["Delta_dist.csv"] = _csv_text(DIST_COLUMNS, _dist_rows(reports, "delta"))
    files["Input_activity.csv"] = _csv_text(ACTIVITY_COLUMNS, [
        (r.epoch, layer, fmt(a), fmt(e), fmt(r.normalized["input_activity"]))
        for r in reports for layer, a, e in r.activity])
    return files


def emit_reports(reports, out_dir) -> list:
    """Write every report file under ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    files = report_files(reports)
    written = []
    try:
        (out / BREAKDOWN_DIR).mkdir(parents=True, exist_ok=True)
        for rel, text in files.items():
            path = out / rel
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            written.append(path)
    except OSError as exc:
        raise ReportError(f"cannot write reports under {out}: {exc.strerror or exc}") from exc
    return written


def read_csv(path) -> list:
    """Rows of an emitted file as dicts of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
