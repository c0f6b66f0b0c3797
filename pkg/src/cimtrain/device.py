"""Behavioral models of analog synaptic devices.

Conductance follows a saturating exponential in the programming pulse index
``p`` (0 <= p <= p_max)::

    G_LTP(p) = B (1 - exp(-p / A)) + G_min
    G_LTD(p) = -B_d (1 - exp((p - p_max) / A_d)) + G_max
    B = (G_max - G_min) / (1 - exp(-p_max / A))

Both curves run from ``G_min`` at ``p = 0`` to ``G_max`` at ``p = p_max``.
Potentiation moves a cell to higher ``p`` on the LTP curve, depression to lower
``p`` on the LTD curve. The state of a cell is its conductance only; the pulse
index is recovered by inverting whichever curve the next update uses.

Nonlinearity labels (``NL = 3`` etc.) are converted to the shape parameter
``A`` through :func:`nl_label_to_a`. The label is ``NL_SCALE`` times the
largest vertical gap between the normalized curve and its chord::

    label = 10 * max_x (y(x) - x),   y(x) = (1 - exp(-x/a)) / (1 - exp(-1/a))

with ``x = p / p_max`` and ``a = A / p_max``. A few reference points:

    =====  ==========
    label  A / p_max
    =====  ==========
    0.5    2.49
    1      1.24
    2      0.602
    3      0.382
    4      0.265
    5      0.189
    6      0.133
    9      0.0205
    =====  ==========
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DeviceError, DomainError

NL_SCALE = 10.0
NL_MAX = 9.0
# labels below this are treated as the bottom of the calibrated table
NL_MIN = 1e-6

_LOG_A_LO = math.log(1e-3)
_LOG_A_HI = math.log(1e9)


class DeviceKind(str, Enum):
    ANALOG_ENVM = "analog_envm"
    SRAM = "sram"


class Readout(str, Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class DeviceSpec:
    """One synaptic technology.

    ``nl_ltd`` holds the magnitude of the depression label; the sign printed
    in the source table is kept in ``nl_ltd_negative``. Curve shape only uses
    the magnitude.
    """

    name: str
    kind: DeviceKind = DeviceKind.ANALOG_ENVM
    r_on: float | None = None
    on_off_ratio: float | None = None
    num_states: int | None = None
    nl_ltp: float = 0.0
    nl_ltd: float = 0.0
    nl_ltd_negative: bool = True
    c2c_sigma: float = 0.0
    d2d_sigma: float = 0.0
    write_voltage_ltp: float = 0.0
    write_voltage_ltd: float = 0.0
    write_pulse_width: float = 0.0
    sram_cells_per_weight: int | None = None
    weight_bits: int | None = None
    technology_node: str = "32nm"
    readout: Readout = Readout.PARALLEL
    table_i: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", DeviceKind(self.kind))
        object.__setattr__(self, "readout", Readout(self.readout))
        if self.nl_ltd < 0:
            object.__setattr__(self, "nl_ltd", -self.nl_ltd)
            object.__setattr__(self, "nl_ltd_negative", True)
        if self.kind is DeviceKind.SRAM:
            if not self.sram_cells_per_weight or self.sram_cells_per_weight < 1:
                raise DeviceError(f"{self.name}: sram_cells_per_weight must be >= 1")
            if self.weight_bits is None:
                object.__setattr__(self, "weight_bits", self.sram_cells_per_weight)
            if self.num_states is None:
                object.__setattr__(self, "num_states", 2 ** self.weight_bits)
            return
        if self.r_on is None or not self.r_on > 0:
            raise DeviceError(f"{self.name}: r_on must be > 0")
        if self.on_off_ratio is None or not self.on_off_ratio >= 1:
            raise DeviceError(f"{self.name}: on_off_ratio must be >= 1")
        if self.num_states is None or self.num_states < 2:
            raise DeviceError(f"{self.name}: num_states must be >= 2")
        if self.c2c_sigma < 0 or self.d2d_sigma < 0:
            raise DeviceError(f"{self.name}: variation sigmas must be >= 0")
        if self.nl_ltp < 0:
            raise DeviceError(f"{self.name}: nl_ltp must be >= 0")
        if self.nl_ltp > NL_MAX or self.nl_ltd > NL_MAX:
            raise DeviceError(f"{self.name}: nonlinearity label above {NL_MAX}")

    @property
    def p_max(self) -> int:
        return int(self.num_states) - 1

    @property
    def is_sram(self) -> bool:
        return self.kind is DeviceKind.SRAM

    def to_dict(self) -> dict:
        out = {}
        for key in (
            "kind", "r_on", "on_off_ratio", "num_states", "nl_ltp", "nl_ltd",
            "c2c_sigma", "d2d_sigma", "write_voltage_ltp", "write_voltage_ltd",
            "write_pulse_width", "sram_cells_per_weight", "weight_bits",
            "technology_node", "readout",
        ):
            value = getattr(self, key)
            if isinstance(value, Enum):
                value = value.value
            if value is not None:
                out[key] = value
        if self.nl_ltd_negative and self.nl_ltd:
            out["nl_ltd"] = -self.nl_ltd
        return out

    @classmethod
    def from_dict(cls, name: str, record: dict) -> "DeviceSpec":
        record = dict(record)
        record.pop("name", None)
        ltd = record.get("nl_ltd", 0.0)
        if ltd is not None:
            record["nl_ltd_negative"] = ltd < 0
            record["nl_ltd"] = abs(ltd)
        known = set(cls.__dataclass_fields__)
        unknown = set(record) - known
        if unknown:
            raise DeviceError(f"{name}: unknown device fields {sorted(unknown)}")
        return cls(name=name, **record)


def load_catalog(path: str | Path | None = None) -> dict[str, DeviceSpec]:
    """Read a device catalog (JSON object of name -> record)."""
    if path is None:
        text = resources.files("cimtrain.catalog").joinpath("devices.json").read_text()
    else:
        text = Path(path).read_text()
    records = json.loads(text)
    return {name: DeviceSpec.from_dict(name, rec) for name, rec in records.items()}


def get_device(name: str, catalog: dict[str, DeviceSpec] | None = None) -> DeviceSpec:
    catalog = load_catalog() if catalog is None else catalog
    try:
        return catalog[name]
    except KeyError:
        raise DeviceError(f"unknown device {name!r}; known: {sorted(catalog)}") from None


def conductance_bounds(spec: DeviceSpec) -> tuple[float, float]:
    if spec.is_sram:
        raise DeviceError(f"{spec.name}: SRAM cells have no analog conductance range")
    g_max = 1.0 / spec.r_on
    return g_max / spec.on_off_ratio, g_max


# -- normalized curves: x = p / p_max in [0, 1], a = A / p_max ----------------

def _ltp_norm(x, a):
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    finite = np.isfinite(a)
    a_safe = np.where(finite, a, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        curved = np.expm1(-x / a_safe) / np.expm1(-1.0 / a_safe)
    return np.where(finite, curved, x)


def _ltp_norm_inv(y, a):
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    finite = np.isfinite(a)
    a_safe = np.where(finite, a, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        curved = -a_safe * np.log1p(y * np.expm1(-1.0 / a_safe))
    return np.where(finite, curved, y)


def _ltd_norm(x, a):
    return 1.0 - _ltp_norm(1.0 - np.asarray(x, dtype=float), a)


def _ltd_norm_inv(y, a):
    return 1.0 - _ltp_norm_inv(1.0 - np.asarray(y, dtype=float), a)


def chord_deviation(a_norm):
    """Largest gap between the normalized LTP curve and its chord."""
    a = np.asarray(a_norm, dtype=float)
    finite = np.isfinite(a)
    a_safe = np.where(finite, a, 1.0)
    # stationary point of y(x) - x
    x_star = -a_safe * np.log(-a_safe * np.expm1(-1.0 / a_safe))
    x_star = np.clip(x_star, 0.0, 1.0)
    dev = _ltp_norm(x_star, a_safe) - x_star
    return np.where(finite, dev, 0.0)


def a_to_nl_label(a, p_max: int):
    """Inverse of :func:`nl_label_to_a`."""
    out = NL_SCALE * chord_deviation(np.asarray(a, dtype=float) / p_max)
    return float(out) if np.ndim(out) == 0 else out


def nl_label_to_a(nl_label, p_max: int):
    """Curve parameter ``A`` (pulse units) for a nonlinearity label.

    Accepts scalars or arrays; the sign of the label is ignored. Labels must
    lie in ``(0, NL_MAX]``.
    """
    if p_max < 1:
        raise DomainError("p_max must be >= 1")
    label = np.abs(np.asarray(nl_label, dtype=float))
    if np.any(label <= 0) or np.any(label > NL_MAX) or not np.all(np.isfinite(label)):
        raise DomainError(f"nonlinearity label outside calibrated range (0, {NL_MAX}]")
    target = np.maximum(label, NL_MIN) / NL_SCALE
    lo = np.full(label.shape, _LOG_A_LO)
    hi = np.full(label.shape, _LOG_A_HI)
    # deviation decreases with a: bisect in log space
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        too_curved = chord_deviation(np.exp(mid)) > target
        lo = np.where(too_curved, mid, lo)
        hi = np.where(too_curved, hi, mid)
    a = np.exp(0.5 * (lo + hi)) * p_max
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class UpdateCurve:
    """Shape of the LTP/LTD curves for one device (``a_*`` may be ``inf``)."""

    a_ltp: float
    a_ltd: float
    g_min: float
    g_max: float
    p_max: int

    def __post_init__(self):
        if not (self.g_max > self.g_min >= 0):
            raise DeviceError("curve requires g_max > g_min >= 0")
        if self.p_max < 1:
            raise DeviceError("curve requires p_max >= 1")
        if not (self.a_ltp > 0 and self.a_ltd > 0):
            raise DeviceError("curve parameters A must be positive")

    @property
    def g_range(self) -> float:
        return self.g_max - self.g_min

    @property
    def b_ltp(self) -> float:
        if math.isinf(self.a_ltp):
            return math.inf
        return self.g_range / -math.expm1(-self.p_max / self.a_ltp)

    @property
    def b_ltd(self) -> float:
        if math.isinf(self.a_ltd):
            return math.inf
        return self.g_range / -math.expm1(-self.p_max / self.a_ltd)


def label_to_curve_param(label: float, p_max: int) -> float:
    """Like :func:`nl_label_to_a` but maps a zero label to a linear device."""
    if label == 0:
        return math.inf
    return nl_label_to_a(label, p_max)


def make_curve(spec: DeviceSpec) -> UpdateCurve:
    g_min, g_max = conductance_bounds(spec)
    p_max = spec.p_max
    return UpdateCurve(
        a_ltp=label_to_curve_param(spec.nl_ltp, p_max),
        a_ltd=label_to_curve_param(spec.nl_ltd, p_max),
        g_min=g_min,
        g_max=g_max,
        p_max=p_max,
    )


def _check_p(p, p_max):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > p_max):
        raise DomainError(f"pulse index outside [0, {p_max}]")
    return p


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def ltp_conductance(p, curve: UpdateCurve, a=None):
    """Conductance after ``p`` potentiation pulses from ``g_min``."""
    p = _check_p(p, curve.p_max)
    a = curve.a_ltp if a is None else a
    y = _ltp_norm(p / curve.p_max, np.asarray(a, dtype=float) / curve.p_max)
    return _scalar(curve.g_min + curve.g_range * y)


def ltd_conductance(p, curve: UpdateCurve, a=None):
    p = _check_p(p, curve.p_max)
    a = curve.a_ltd if a is None else a
    y = _ltd_norm(p / curve.p_max, np.asarray(a, dtype=float) / curve.p_max)
    return _scalar(curve.g_min + curve.g_range * y)


def ltp_pulse_index(g, curve: UpdateCurve, a=None):
    """Effective pulse index of conductance ``g`` on the LTP curve."""
    a = curve.a_ltp if a is None else a
    y = np.clip((np.asarray(g, dtype=float) - curve.g_min) / curve.g_range, 0.0, 1.0)
    x = _ltp_norm_inv(y, np.asarray(a, dtype=float) / curve.p_max)
    return _scalar(np.clip(x, 0.0, 1.0) * curve.p_max)


def ltd_pulse_index(g, curve: UpdateCurve, a=None):
    a = curve.a_ltd if a is None else a
    y = np.clip((np.asarray(g, dtype=float) - curve.g_min) / curve.g_range, 0.0, 1.0)
    x = _ltd_norm_inv(y, np.asarray(a, dtype=float) / curve.p_max)
    return _scalar(np.clip(x, 0.0, 1.0) * curve.p_max)


# -- weights <-> conductance ---------------------------------------------------

def weight_to_conductance(w, g_min: float, g_max: float, weight_range=(-1.0, 1.0)):
    w_min, w_max = weight_range
    w = np.asarray(w, dtype=float)
    if np.any(w < w_min) or np.any(w > w_max):
        raise DomainError(f"weight outside [{w_min}, {w_max}]")
    g = g_min + (w - w_min) * ((g_max - g_min) / (w_max - w_min))
    return _scalar(g)


def conductance_to_weight(g, g_min: float, g_max: float, weight_range=(-1.0, 1.0)):
    w_min, w_max = weight_range
    g = np.asarray(g, dtype=float)
    span = g_max - g_min
    if np.any(g < g_min - 1e-12 * span) or np.any(g > g_max + 1e-12 * span):
        raise DomainError(f"conductance outside [{g_min}, {g_max}]")
    w = w_min + (g - g_min) * ((w_max - w_min) / span)
    return _scalar(w)


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def pulses_for_delta(delta_w, weight_range, p_max: int):
    """Signed pulse count for a desired weight change (positive = LTP)."""
    if p_max < 1:
        raise DomainError("p_max must be >= 1")
    w_min, w_max = weight_range
    step = (w_max - w_min) / p_max
    n = round_half_away(np.asarray(delta_w, dtype=float) / step)
    n = np.clip(n, -p_max, p_max).astype(np.int64)
    return int(n) if n.ndim == 0 else n


# -- cell and array state ------------------------------------------------------

@dataclass(frozen=True)
class CellState:
    conductance: float
    a_ltp_cell: float
    a_ltd_cell: float


@dataclass
class SynapticArrayState:
    """Conductances plus per-cell curve parameters of one logical matrix."""

    conductance: np.ndarray
    a_ltp: np.ndarray
    a_ltd: np.ndarray
    curve: UpdateCurve
    readout: Readout = Readout.PARALLEL
    transposable: bool = True
    weight_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        shape = np.shape(self.conductance)
        if len(shape) != 2 or np.shape(self.a_ltp) != shape or np.shape(self.a_ltd) != shape:
            raise DeviceError("array state must be rectangular with matching parameter maps")

    @property
    def shape(self):
        return self.conductance.shape

    def weights(self) -> np.ndarray:
        g = np.clip(self.conductance, self.curve.g_min, self.curve.g_max)
        return conductance_to_weight(g, self.curve.g_min, self.curve.g_max, self.weight_range)

    def cell(self, r: int, c: int) -> CellState:
        return CellState(float(self.conductance[r, c]), float(self.a_ltp[r, c]), float(self.a_ltd[r, c]))

    def copy(self) -> "SynapticArrayState":
        return replace(self, conductance=self.conductance.copy())


def sample_curve_params(shape, spec: DeviceSpec, rng: np.random.Generator):
    """Per-cell ``A`` maps drawn from Normal(label, d2d_sigma)."""
    p_max = spec.p_max
    out = []
    for label in (spec.nl_ltp, spec.nl_ltd):
        if label == 0:
            out.append(np.full(shape, np.inf))
            continue
        if spec.d2d_sigma > 0:
            labels = rng.normal(label, spec.d2d_sigma, size=shape)
            labels = np.clip(labels, NL_MIN, NL_MAX)
        else:
            labels = np.full(shape, float(label))
        out.append(np.asarray(nl_label_to_a(labels, p_max), dtype=float).reshape(shape))
    return out[0], out[1]


def init_array(rows: int, cols: int, spec: DeviceSpec, seed, weights=None,
               weight_range=(-1.0, 1.0), transposable: bool = True) -> SynapticArrayState:
    if rows < 1 or cols < 1:
        raise DeviceError("array dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    curve = make_curve(spec)
    a_ltp, a_ltd = sample_curve_params((rows, cols), spec, rng)
    if weights is None:
        weights = np.full((rows, cols), 0.5 * (weight_range[0] + weight_range[1]))
    weights = np.asarray(weights, dtype=float).reshape(rows, cols)
    g = np.asarray(weight_to_conductance(weights, curve.g_min, curve.g_max, weight_range), dtype=float)
    return SynapticArrayState(
        conductance=g.reshape(rows, cols), a_ltp=a_ltp, a_ltd=a_ltd, curve=curve,
        readout=spec.readout, transposable=transposable, weight_range=tuple(weight_range),
    )


def _step(g, n, curve, a_ltp, a_ltd):
    """Deterministic move of ``n`` pulses along the appropriate curve."""
    g = np.asarray(g, dtype=float)
    n = np.asarray(n, dtype=float)
    p_max = curve.p_max
    a_ltp = np.broadcast_to(np.asarray(a_ltp, dtype=float) / p_max, g.shape)
    a_ltd = np.broadcast_to(np.asarray(a_ltd, dtype=float) / p_max, g.shape)
    y = np.clip((g - curve.g_min) / curve.g_range, 0.0, 1.0)
    x_up = np.minimum(_ltp_norm_inv(y, a_ltp) + n / p_max, 1.0)
    x_dn = np.maximum(_ltd_norm_inv(y, a_ltd) + n / p_max, 0.0)
    y_new = np.where(n > 0, _ltp_norm(x_up, a_ltp), np.where(n < 0, _ltd_norm(x_dn, a_ltd), y))
    # untouched cells keep their exact conductance
    return np.where(n == 0, g, curve.g_min + curve.g_range * y_new)


def update_conductance(g, n, curve: UpdateCurve, a_ltp=None, a_ltd=None,
                       c2c_sigma: float = 0.0, rng: np.random.Generator | None = None,
                       per_pulse: bool = False):
    """Array form of :func:`apply_pulses`."""
    g = np.asarray(g, dtype=float)
    n = np.asarray(n, dtype=np.int64)
    if np.any(np.abs(n) > curve.p_max):
        raise DomainError(f"|pulses| exceeds p_max={curve.p_max}")
    a_ltp = curve.a_ltp if a_ltp is None else a_ltp
    a_ltd = curve.a_ltd if a_ltd is None else a_ltd
    noisy = c2c_sigma > 0
    if noisy and rng is None:
        raise DeviceError("c2c variation needs a random generator")
    sigma = c2c_sigma * curve.g_range
    if per_pulse and noisy:
        out = np.array(g, dtype=float, copy=True)
        sign = np.sign(n)
        for k in range(int(np.max(np.abs(n), initial=0))):
            active = np.abs(n) > k
            step = np.where(active, sign, 0)
            out = _step(out, step, curve, a_ltp, a_ltd)
            out = out + np.where(active, rng.normal(0.0, sigma, size=out.shape), 0.0)
            out = np.clip(out, curve.g_min, curve.g_max)
        return _scalar(out)
    out = _step(g, n, curve, a_ltp, a_ltd)
    if noisy:
        noise = rng.normal(0.0, 1.0, size=out.shape) * (sigma * np.sqrt(np.abs(n)))
        out = out + noise
    return _scalar(np.clip(out, curve.g_min, curve.g_max))


def apply_pulses(state, n, curve: UpdateCurve, c2c_sigma: float = 0.0,
                 rng: np.random.Generator | None = None, per_pulse: bool = False):
    """Apply signed pulse counts to a :class:`CellState` or array state."""
    if isinstance(state, CellState):
        g = update_conductance(state.conductance, n, curve, state.a_ltp_cell, state.a_ltd_cell,
                               c2c_sigma, rng, per_pulse)
        return replace(state, conductance=float(g))
    if isinstance(state, SynapticArrayState):
        g = update_conductance(state.conductance, n, state.curve, state.a_ltp, state.a_ltd,
                               c2c_sigma, rng, per_pulse)
        return replace(state, conductance=np.asarray(g, dtype=float))
    raise TypeError(f"cannot apply pulses to {type(state).__name__}")
