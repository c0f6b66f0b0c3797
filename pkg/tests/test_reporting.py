import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cimtrain import reporting as rp
from cimtrain.quant import QuantTensor, quantize


def qt(codes, bits=8):
    return QuantTensor(np.asarray(codes, dtype=np.int64), 1.0, bits)


# -- activity ---------------------------------------------------------------------

def test_activity_all_zero():
    assert rp.input_activity(qt(np.zeros(100))) == 0.0


def test_activity_full_scale():
    assert rp.input_activity(qt(np.full(50, 127))) == 1.0
    assert rp.input_activity(qt(np.full(50, -127))) == 1.0


def test_activity_uniform_random():
    codes = np.random.default_rng(0).integers(0, 128, 1_000_000)
    assert rp.input_activity(qt(codes)) == pytest.approx(0.5, abs=0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-127, 127), min_size=1, max_size=64))
def test_activity_matches_enumerated_bits(codes):
    ones = sum(format(abs(c), "07b").count("1") for c in codes)
    assert rp.input_activity(qt(codes)) == pytest.approx(ones / (7 * len(codes)))
    assert 0.0 <= rp.input_activity(qt(codes)) <= 1.0


# -- distributions -----------------------------------------------------------------

def layer(idx, old, new, act_shape=(1, 4), frac=0.5):
    acts = quantize(np.ones(act_shape), 8)
    return rp.LayerTrace(idx, acts, acts, np.asarray(old, float), np.asarray(new, float), frac, frac)


def test_constant_weights_and_converged_deltas():
    t = rp.EpochTrace(1, [layer(0, np.full((3, 2), 0.25), np.full((3, 2), 0.25))])
    (d,), _ = rp.distribution_summary(t)
    assert (d.weight_mean, d.weight_std) == (0.25, 0.0)
    assert (d.delta_mean, d.delta_std) == (0.0, 0.0)


def test_normalized_means_by_hand():
    l0 = layer(0, np.zeros((2, 2)), np.full((2, 2), 0.5), act_shape=(1, 3), frac=0.2)
    l1 = layer(2, np.zeros(6), np.full(6, -0.25), act_shape=(1, 10), frac=0.6)
    _, norm = rp.distribution_summary(rp.EpochTrace(1, [l0, l1]))
    assert norm["weight_mean"] == pytest.approx(0.5 * 3 * 4 + (-0.25) * 10 * 6)
    assert norm["delta_mean"] == pytest.approx(0.5 * 3 * 4 + (-0.25) * 10 * 6)
    assert norm["input_activity"] == pytest.approx(0.2 * 12 + 0.6 * 60)


# -- formatting ----------------------------------------------------------------------

@pytest.mark.parametrize("x,text", [(0.5, "0.500000"), (1.0, "1.00000"), (0, "0"),
                                    (0.1234567891, "0.1234567891"), (2.5e-12, "2.50000e-12")])
def test_fmt(x, text):
    assert rp.fmt(x) == text


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trips(x):
    assert float(rp.fmt(x)) == x


# -- emitted files ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def reports(desk_run):
    _, model, traces = desk_run
    return [rp.build_epoch_report(t, model) for t in traces]


def test_file_set(reports, tmp_path):
    paths = rp.emit_reports(reports, tmp_path)
    rel = sorted(str(p.relative_to(tmp_path)) for p in paths)
    want = sorted([f"{rp.BREAKDOWN_DIR}/Breakdown_Epoch_{r.epoch}.csv" for r in reports]
                  + list(rp.SUMMARY_FILES))
    assert rel == want
    assert len(rp.read_csv(tmp_path / "NeuroSim_Output.csv")) == len(reports)


def test_three_epochs_give_eight_files(reports, tmp_path):
    three = [rp.EpochReport(**{**r.__dict__, "epoch": k}) for k in (1, 2, 3) for r in reports[:1]]
    assert len(rp.emit_reports(three, tmp_path)) == 3 + 5


def test_emission_byte_stable(reports, tmp_path):
    rp.emit_reports(reports, tmp_path / "a")
    rp.emit_reports(reports, tmp_path / "b")
    for rel in rp.report_files(reports):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_breakdown_closure_after_reparse(reports, tmp_path):
    rp.emit_reports(reports, tmp_path)
    for r in reports:
        rows = rp.read_csv(tmp_path / rp.BREAKDOWN_DIR / f"Breakdown_Epoch_{r.epoch}.csv")
        sections = defaultdict(dict)
        for row in rows:
            sections[row["section"]][row["name"]] = float(row["value"])
        for name, vals in sections.items():
            if "total" in vals:
                parts = [v for k, v in vals.items() if k != "total"]
                assert math.fsum(parts) == pytest.approx(vals["total"], rel=1e-9), name
        s = sections
        assert s["latency_by_step"]["total"] == pytest.approx(s["latency_by_component"]["total"],
                                                              rel=1e-9)
        assert s["energy_by_step"]["total"] == pytest.approx(s["energy_by_component"]["total"],
                                                             rel=1e-9)
        assert s["peak_latency_by_component"]["total"] <= s["latency_by_component"]["total"]
        assert s["peak_energy_by_component"]["total"] <= s["energy_by_component"]["total"]


def test_emitted_numbers_equal_memory(reports, tmp_path):
    rp.emit_reports(reports, tmp_path)
    out = rp.read_csv(tmp_path / "NeuroSim_Output.csv")
    for row, r in zip(out, reports):
        assert float(row["latency_s"]) == r.latency
        assert float(row["dynamic_energy_j"]) == r.dynamic_energy
    wrap = rp.read_csv(tmp_path / "PythonWrapper_Output.csv")
    assert [float(w["accuracy"]) for w in wrap] == [r.accuracy for r in reports]


def test_unwritable_directory(reports, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(rp.ReportError) as info:
        rp.emit_reports(reports, blocker / "sub")
    assert str(blocker) in str(info.value)


def test_no_reports_rejected():
    with pytest.raises(ValueError):
        rp.report_files([])
