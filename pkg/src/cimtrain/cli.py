"""Command-line entry point and run orchestration.

    cimtrain run   [--config FILE] [--seed N] [--epochs N] [--device NAME]
                   [--output-dir DIR] [--buffer-overhead-constraint R]
    cimtrain sweep [same flags] --sweep PARAM=V1,V2,...

Exit status: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import archsim, data, device as dev
from .config import RunConfig, from_dict, load_config
from .errors import CIMError, ConfigError
from .mapping import build_floorplan
from .network import BatchSchedule, QuantNet, TrainOptions, train
from .reporting import build_epoch_report, emit_reports

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
DEVICE_FIELDS = {f.name for f in fields(dev.DeviceSpec)} - {"name", "table_i", "kind"} | {"nl"}


@dataclass
class RunResult:
    output_dir: Path
    reports: list = field(default_factory=list)
    traces: list = field(default_factory=list)


def load_data(cfg: RunConfig, topo):
    if cfg.dataset == "digits":
        xtr, ytr, xte, yte = data.digits(seed=cfg.seed)
    else:
        if cfg.dataset == "blobs":
            n_cls = int(np.prod(topo.output_shape))
            x, y = data.blobs(n=600, classes=n_cls, shape=topo.input_shape, seed=cfg.seed)
        else:
            x, y = data.load_dataset(cfg.dataset)
        order = np.random.default_rng(cfg.seed).permutation(len(x))
        n_test = len(x) // 5
        xte, yte = x[order[:n_test]], y[order[:n_test]]
        xtr, ytr = x[order[n_test:]], y[order[n_test:]]
    if xtr.shape[1:] != tuple(topo.input_shape):
        raise ConfigError("dataset", f"sample shape {xtr.shape[1:]} does not match the topology "
                                     f"input {tuple(topo.input_shape)}")
    if cfg.train_samples is not None:
        xtr, ytr = xtr[:cfg.train_samples], ytr[:cfg.train_samples]
    if cfg.test_samples is not None:
        xte, yte = xte[:cfg.test_samples], yte[:cfg.test_samples]
    return xtr, ytr, xte, yte


def prepare(cfg: RunConfig):
    """Everything a run needs, built before any output is written."""
    spec = cfg.device_spec()
    topo = cfg.topology_obj()
    cells = spec.sram_cells_per_weight if spec.is_sram else 1
    fp = build_floorplan(topo, cfg.array_rows, cfg.array_cols, cfg.arrays_per_pe,
                         cfg.pes_per_tile, cfg.tiles_per_chip, cells, cfg.share_tiles)
    costs = archsim.load_costs(cfg.cost_table, device=spec.name)
    model = archsim.CostModel(topo, fp, costs, spec, cfg.buffer_overhead_constraint)
    return spec, topo, fp, model


def run_benchmark(cfg: RunConfig, progress=print) -> RunResult:
    """Floorplan, train with per-epoch tracing, cost every epoch, emit reports."""
    spec, topo, fp, model = prepare(cfg)
    xtr, ytr, xte, yte = load_data(cfg, topo)
    opts = TrainOptions(lr=cfg.lr, momentum=cfg.momentum, full_precision=cfg.full_precision,
                        adc_bits=cfg.adc_bits, array_rows=cfg.array_rows,
                        stochastic_update=cfg.stochastic_update)
    net = QuantNet(topo, None if cfg.full_precision else spec, seed=cfg.seed, options=opts)
    schedule = BatchSchedule(cfg.batch_size, cfg.epochs, cfg.batches_per_epoch)
    result = RunResult(Path(cfg.output_dir))

    def on_epoch(trace):
        report = build_epoch_report(trace, model)
        result.reports.append(report)
        result.traces.append(trace)
        if progress is not None:
            progress(f"epoch {trace.epoch}/{cfg.epochs} accuracy={report.accuracy:.4f} "
                     f"latency={report.latency:.6g}s energy={report.dynamic_energy:.6g}J")

    train(net, xtr, ytr, xte, yte, schedule, seed=cfg.seed, callback=on_epoch)
    emit_reports(result.reports, result.output_dir)
    return result


def parse_grid(text: str):
    """``param=v1,v2,...`` -> ``(param, [values])``; values parsed as YAML scalars."""
    if "=" not in text:
        raise ConfigError("sweep", f"expected PARAM=V1,V2,..., got {text!r}")
    param, _, grid = text.partition("=")
    param = param.strip()
    tokens = [t.strip() for t in grid.split(",") if t.strip()]
    if not tokens:
        raise ConfigError("sweep", f"empty grid for {param!r}")
    return param, [(t, yaml.safe_load(t)) for t in tokens]


def point_config(cfg: RunConfig, param: str, value, index: int, subdir: Path) -> RunConfig:
    seed = int(np.random.SeedSequence([cfg.seed, index]).generate_state(1)[0] % (2 ** 31))
    kw = {"seed": seed, "output_dir": str(subdir)}
    if param in DEVICE_FIELDS and param not in {f.name for f in fields(RunConfig)}:
        kw["device_overrides"] = {**cfg.device_overrides, param: value}
    elif param in {f.name for f in fields(RunConfig)}:
        kw[param] = value
    else:
        raise ConfigError("sweep", f"unknown sweep parameter {param!r}")
    return cfg.replace(**kw)


def sweep(cfg: RunConfig, param: str, grid, progress=print) -> list:
    """One run per grid point under ``<output_dir>/<param>=<value>``.

    Every point is validated before the first run starts.
    """
    root = Path(cfg.output_dir)
    points = [point_config(cfg, param, value, k, root / f"{param}={token}")
              for k, (token, value) in enumerate(grid)]
    for p in points:
        prepare(p)
    results = []
    for (token, _), p in zip(grid, points):
        if progress is not None:
            progress(f"sweep {param}={token}")
        results.append(run_benchmark(p, progress))
    return results


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cimtrain",
                                     description="On-chip training simulation for synaptic arrays")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--device", help="catalog device name")
        p.add_argument("--output-dir")
        p.add_argument("--buffer-overhead-constraint", type=float)
        if name == "sweep":
            p.add_argument("--sweep", required=True, metavar="PARAM=GRID",
                           help="comma-separated values, e.g. c2c_sigma=0,0.01,0.03")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else from_dict({"device": "FeFET"})
    over = {}
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("device", "device"),
                      ("output_dir", "output_dir"),
                      ("buffer_overhead_constraint", "buffer_overhead_constraint")):
        v = getattr(args, flag)
        if v is not None:
            over[key] = v
    return cfg.replace(**over) if over else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        if args.command == "sweep":
            param, grid = parse_grid(args.sweep)
            sweep(cfg, param, grid)
        else:
            run_benchmark(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CIMError as exc:
        print(f"error [{exc.module}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
