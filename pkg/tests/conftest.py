import pytest

VERDICTS = pytest.StashKey[list]()

from cimtrain import data
from cimtrain.cli import prepare
from cimtrain.config import RunConfig
from cimtrain.network import BatchSchedule, QuantNet, TrainOptions, train


def short_run(device="FeFET", epochs=1, batches=20, seed=0):
    """A few batches of the desk run; returns ``(cfg, model, traces)``."""
    cfg = RunConfig(device=device, epochs=epochs, batches_per_epoch=batches, seed=seed)
    spec, topo, _, model = prepare(cfg)
    xtr, ytr, xte, yte = data.digits(seed=seed)
    opts = TrainOptions(lr=cfg.lr, momentum=cfg.momentum, adc_bits=cfg.adc_bits)
    net = QuantNet(topo, spec, seed=seed, options=opts)
    traces = train(net, xtr, ytr, xte[:100], yte[:100],
                   BatchSchedule(cfg.batch_size, epochs, batches), seed=seed)
    return cfg, model, traces


@pytest.fixture(scope="session")
def desk_run():
    return short_run()


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records one PASS/FAIL line for criterion ``n``."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines.append((n, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
