"""Run configuration: YAML loading, validation and defaults.

A config is a flat YAML mapping. Every key is optional except ``device``;
unknown keys are rejected. Example::

    device: FeFET            # catalog name, or an inline mapping of device fields
    device_overrides: {c2c_sigma: 0.01}
    topology: default        # default | desk_cnn | vgg8 | inline mapping
    dataset: digits          # digits | blobs | path to a CIMT dataset file
    batch_size: 16
    epochs: 10
    seed: 0
    output_dir: results
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import device as dev
from .errors import CIMError, ConfigError
from .topology import BUILTIN_TOPOLOGIES, NetworkTopology

DATASETS = ("digits", "blobs")


@dataclass
class RunConfig:
    device: str | dict = "FeFET"
    device_overrides: dict = field(default_factory=dict)
    topology: str | dict = "default"
    dataset: str = "digits"
    train_samples: int | None = None
    test_samples: int | None = None
    batch_size: int = 16
    epochs: int = 10
    batches_per_epoch: int | None = None
    weight_bits: int | None = None
    activation_bits: int = 8
    error_bits: int = 8
    gradient_bits: int = 8
    array_rows: int = 128
    array_cols: int = 128
    arrays_per_pe: int = 9
    pes_per_tile: int = 4
    tiles_per_chip: int | None = None
    share_tiles: bool = False
    cost_table: str | None = None
    buffer_overhead_constraint: float = 1.0
    seed: int = 0
    output_dir: str = "results"
    momentum: float | None = 0.9
    lr: float = 1.0
    adc_bits: int | None = 6
    readout: str | None = None
    full_precision: bool = False
    stochastic_update: bool = True

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        unknown = set(kw) - _FIELDS
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config key")
        return dataclasses.replace(self, **kw)

    # resolved objects

    def device_spec(self) -> dev.DeviceSpec:
        try:
            if isinstance(self.device, dict):
                rec = dict(self.device)
                name = rec.pop("name", "inline")
                spec = dev.DeviceSpec.from_dict(name, rec)
            else:
                spec = dev.get_device(self.device)
            over = dict(self.device_overrides)
            if self.readout is not None:
                over["readout"] = self.readout
            if "nl" in over:
                nl = over.pop("nl")
                over["nl_ltp"], over["nl_ltd"] = nl, nl
            if over:
                rec = spec.to_dict()
                rec.update(over)
                spec = dev.DeviceSpec.from_dict(spec.name, rec)
        except CIMError as exc:
            raise ConfigError("device", str(exc)) from None
        return spec

    def topology_obj(self) -> NetworkTopology:
        try:
            if isinstance(self.topology, dict):
                topo = NetworkTopology.from_dict(self.topology)
            else:
                topo = BUILTIN_TOPOLOGIES[self.topology]()
            bits = {"activation_bits": self.activation_bits, "error_bits": self.error_bits,
                    "gradient_bits": self.gradient_bits}
            if self.weight_bits is not None:
                bits["weight_bits"] = self.weight_bits
            return dataclasses.replace(topo, **bits)
        except (CIMError, KeyError, TypeError) as exc:
            raise ConfigError("topology", str(exc)) from None


_FIELDS = {f.name for f in fields(RunConfig)}
_POS_INT = ("batch_size", "epochs", "activation_bits", "error_bits", "gradient_bits",
            "array_rows", "array_cols", "arrays_per_pe", "pes_per_tile")
_OPT_POS_INT = ("train_samples", "test_samples", "batches_per_epoch", "weight_bits",
                "tiles_per_chip", "adc_bits")


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: RunConfig) -> None:
    for name in _POS_INT:
        v = getattr(cfg, name)
        if not _is_int(v) or v < 1:
            raise ConfigError(name, f"must be a positive integer, got {v!r}")
    for name in _OPT_POS_INT:
        v = getattr(cfg, name)
        if v is not None and (not _is_int(v) or v < 1):
            raise ConfigError(name, f"must be a positive integer or null, got {v!r}")
    if not _is_int(cfg.seed) or cfg.seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {cfg.seed!r}")
    r = cfg.buffer_overhead_constraint
    if not _is_num(r) or r < 1:
        raise ConfigError("buffer_overhead_constraint", f"must be >= 1, got {r!r}")
    if cfg.momentum is not None and (not _is_num(cfg.momentum) or not 0 <= cfg.momentum < 1):
        raise ConfigError("momentum", f"must be in [0, 1) or null, got {cfg.momentum!r}")
    if not _is_num(cfg.lr) or cfg.lr <= 0:
        raise ConfigError("lr", f"must be > 0, got {cfg.lr!r}")
    if cfg.readout is not None and cfg.readout not in {m.value for m in dev.Readout}:
        raise ConfigError("readout", f"must be 'parallel' or 'sequential', got {cfg.readout!r}")
    for name in ("share_tiles", "full_precision", "stochastic_update"):
        if not isinstance(getattr(cfg, name), bool):
            raise ConfigError(name, "must be true or false")
    if not isinstance(cfg.device, (str, dict)):
        raise ConfigError("device", "must be a catalog name or a mapping")
    if not isinstance(cfg.device_overrides, dict):
        raise ConfigError("device_overrides", "must be a mapping")
    if not isinstance(cfg.topology, (str, dict)):
        raise ConfigError("topology", "must be a built-in name or a mapping")
    if isinstance(cfg.topology, str) and cfg.topology not in BUILTIN_TOPOLOGIES:
        raise ConfigError("topology", f"unknown topology {cfg.topology!r}; "
                                      f"known: {sorted(BUILTIN_TOPOLOGIES)}")
    if not isinstance(cfg.dataset, str):
        raise ConfigError("dataset", "must be a name or a path")
    if cfg.dataset not in DATASETS and not Path(cfg.dataset).is_file():
        raise ConfigError("dataset", f"not a built-in dataset and no such file: {cfg.dataset}")
    if cfg.cost_table is not None and not Path(cfg.cost_table).is_file():
        raise ConfigError("cost_table", f"no such file: {cfg.cost_table}")
    if not isinstance(cfg.output_dir, str) or not cfg.output_dir:
        raise ConfigError("output_dir", "must be a non-empty path")
    cfg.device_spec()
    cfg.topology_obj()


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config key")
    if "device" not in data:
        raise ConfigError("device", "required")
    return RunConfig(**data)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"invalid YAML: {exc}") from None
    return from_dict(data or {})


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
