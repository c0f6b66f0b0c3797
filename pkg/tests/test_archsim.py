import math
from dataclasses import fields, replace

import numpy as np
import pytest

from cimtrain import archsim as a
from cimtrain import device as dev
from cimtrain.errors import ConfigError, TraceError
from cimtrain.mapping import Floorplan, build_floorplan
from cimtrain.topology import vgg8


def unit_costs(**kw):
    base = {f.name: 1.0 for f in fields(a.CostTable)}
    base.update(adc_latency_ceiling=100.0, cols_per_adc=1, accum_bus_bits=1, buffer_bus_bits=1,
                write_group_rows=1, pe_buffer_bits=1, tile_buffer_bits=1)
    base.update(kw)
    return a.CostTable(**base)


# -- cost table --------------------------------------------------------------------

def test_default_table_loads_for_every_device():
    for name in dev.load_catalog():
        a.load_costs(device=name)


def test_cost_table_rejects_negative():
    with pytest.raises(ConfigError) as info:
        a.load_costs().with_overrides(adc_energy=-1.0)
    assert info.value.field == "adc_energy"


def test_cost_file_unknown_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"bogus": 1}')
    with pytest.raises(ConfigError):
        a.load_costs(p)


# -- array reads -------------------------------------------------------------------

def test_read_cost_by_hand():
    c = unit_costs(adc_current_coeff=3.25)
    rc = a.array_read_cost([[1.0, 2.0], [3.0, 4.0]], [1.0, 0.5], c)
    # column currents (2.5, 4), mean 3.25 -> ADC time 1 + 3.25 / 3.25 = 2
    # two columns on one ADC each: 2 conversions in series
    assert rc.latency_by["adc"] == pytest.approx(4.0)
    assert rc.latency_by["other"] == pytest.approx(3.0)
    assert rc.latency == pytest.approx(7.0)
    assert rc.energy_by["adc"] == pytest.approx(2 * (1 + 2))
    assert rc.energy_by["array"] == pytest.approx(6.5 * 2)
    assert rc.energy_by["other"] == pytest.approx(1 + 1.5 + 2)
    assert rc.energy == pytest.approx(23.5)
    assert rc.ops == 8


def test_zero_activity_costs_nothing():
    rc = a.array_read_cost(np.ones((4, 4)), 0.0, a.load_costs())
    assert rc.latency == 0 and rc.energy == 0 and rc.ops == 0


def test_zero_current_uses_ceiling():
    c = a.load_costs()
    assert a.adc_latency(0.0, c) == c.adc_latency_ceiling
    rc = a.array_read_cost(np.zeros((2, 2)), 1.0, c)
    assert math.isfinite(rc.latency)


def test_doubling_conductance_halves_current_term():
    c = unit_costs(adc_latency_base=0.0, adc_latency_ceiling=1e9)
    G = np.random.default_rng(0).uniform(0.1, 1, (8, 8))
    t1 = a.array_read_cost(G, 0.5, c).latency_by["adc"]
    t2 = a.array_read_cost(2 * G, 0.5, c).latency_by["adc"]
    assert t2 == pytest.approx(t1 / 2)


def test_sequential_readout_is_per_row():
    c = unit_costs()
    G = np.ones((4, 2))
    seq = a.array_read_cost(G, 1.0, c, readout="sequential")
    par = a.array_read_cost(G, 1.0, c, readout="parallel")
    assert seq.latency_by["other"] == pytest.approx(4 * par.latency_by["other"])
    assert seq.latency > par.latency
    assert seq.ops == par.ops


def test_read_activity_domain():
    with pytest.raises(a.CostError):
        a.array_read_cost(np.ones((2, 2)), 1.5, a.load_costs())


# -- buffers and accumulation ----------------------------------------------------------

def test_global_buffer_max_rule():
    assert a.global_buffer_bits([4096, 2048], [4096, 2048], [1152, 4608], 8) == 4608 * 8


def test_accumulation_buffer_bound():
    assert a.accumulation_buffer_bits(128 * 128, 24, 1) == 2 * 16384 * 24
    assert a.accumulation_buffer_bits(128 * 128, 24, 2) == 2 * a.accumulation_buffer_bits(16384, 24, 1)


def test_accumulated_precision():
    assert a.accumulated_precision(8, 1) == 8
    assert a.accumulated_precision(16, 200) == 24


def test_buffer_requirement_vgg8():
    net = vgg8()
    req = a.buffer_requirement(net, build_floorplan(net), batch_size=200)
    largest = max(max(int(np.prod(i)), int(np.prod(o)), int(np.prod(l.weight_shape)))
                  for _, l, i, o in net.weighted())
    assert req.global_bits == largest * 8
    assert req.accumulation_bits == 2 * 16384 * 16


def test_accumulation_schedule_examples():
    assert a.accumulation_schedule(200, 1, 1, 2, 1, 2)[0] == 1000
    assert a.accumulation_schedule(4, 6, 6, 1, 1, 1)[0] == 4 * 3
    one = a.accumulation_schedule(8, 10, 1, 1, 2, 3)[0]
    two = a.accumulation_schedule(8, 10, 2, 1, 2, 3)[0]
    assert two == one / 2


@pytest.mark.parametrize("n", range(1, 20))
def test_accumulation_latency_non_increasing_in_ratio(n):
    lats = [a.accumulation_schedule(3, n, r, 1, 1, 1)[0] for r in (1, 1.5, 2, 3, 5, 8, 20)]
    assert all(y <= x for x, y in zip(lats, lats[1:]))


# -- rollup and peak ---------------------------------------------------------------

def hand_steps():
    steps = {}
    for k, s in enumerate(a.STEPS, start=1):
        sc = a.StepCost(s)
        sc.latency_by["adc"] = k * 1.0
        sc.latency_by["buffer"] = k * 0.5
        sc.energy_by["array"] = k * 2.0
        sc.energy_by["dram"] = k * 0.25
        sc.ops = 10.0 * k
        steps[s] = sc
    return steps


def test_rollup_formula_by_hand():
    ep = a.epoch_rollup(hand_steps(), batch_size=200, batches=3, leakage_power=2.0)
    per_image = [1.5 * k for k in (1, 2, 3)]
    assert ep.latency == pytest.approx(3 * (200 * sum(per_image) + 1.5 * 4), rel=1e-12)
    assert ep.dynamic_energy == pytest.approx(3 * (200 * 2.25 * 6 + 2.25 * 4), rel=1e-12)
    assert ep.leakage_energy == pytest.approx(2.0 * ep.latency)


def test_batch_one_weights_steps_equally():
    ep = a.epoch_rollup(hand_steps(), batch_size=1, batches=1)
    assert {ep.weight(s) for s in a.STEPS} == {1}


def test_update_share_fixed_steps():
    steps = hand_steps()
    for b in (10, 50, 200):
        share = a.epoch_rollup(steps, b, 1).share("weight_update")
        assert share == pytest.approx(6.0 / (b * 9.0 + 6.0), rel=1e-12)


def test_rollup_requires_all_steps():
    with pytest.raises(a.CostError):
        a.epoch_rollup({"feed_forward": a.StepCost("feed_forward")}, 1, 1)


def test_peak_metrics_definition():
    steps = {s: a.StepCost(s) for s in a.STEPS}
    steps["feed_forward"].latency_by["adc"] = 1e-3
    steps["feed_forward"].energy_by["array"] = 1e-3
    steps["feed_forward"].ops = 1e9
    pm = a.peak_metrics(a.epoch_rollup(steps, 1, 1))
    assert pm.peak_tops == pytest.approx(1.0)
    assert pm.peak_tops_per_watt == pytest.approx(1.0)
    assert pm.total_tops == pytest.approx(1.0)


def test_peak_equals_total_without_movement_costs():
    steps = hand_steps()
    for s in steps.values():
        s.latency_by["buffer"] = 0.0
        s.energy_by["dram"] = 0.0
    ep = a.epoch_rollup(steps, 4, 2)
    pm = a.peak_metrics(ep)
    assert pm.peak_latency == pytest.approx(ep.latency)
    assert pm.peak_energy == pytest.approx(ep.dynamic_energy)


# -- area --------------------------------------------------------------------------

def fefet():
    return dev.get_device("FeFET")


def test_area_two_arrays_by_hand():
    c = unit_costs(envm_cell_area=0.5, mux_area=2.0, r_ref=1e5, adc_area=0.25)
    fp = Floorplan(2, 2, 1, 2, 1)
    area = a.area_rollup(fp, c, fefet())
    mux = 1 + 1e5 / 5e5
    assert area["array"] == pytest.approx(2 * (4 * 0.5 + 2.0 * mux))
    assert area["adc"] == pytest.approx(2 * 2 * 2 * 0.25)
    assert area["other"] == pytest.approx(2 * 3.0)
    assert area["interconnect"] == pytest.approx(1.0)


def test_array_area_doubles_with_array_count():
    c = a.load_costs()
    one = a.area_rollup(Floorplan(128, 128, 9, 4, 1), c, fefet())
    two = a.area_rollup(Floorplan(128, 128, 9, 4, 2), c, fefet())
    assert two["array"] == pytest.approx(2 * one["array"], rel=1e-12)


def test_mux_area_grows_as_r_on_shrinks():
    c = a.load_costs()
    fp = Floorplan(128, 128, 9, 4, 1)
    areas = [a.area_rollup(fp, c, replace(fefet(), r_on=r))["array"] for r in (1e6, 1e5, 1e4, 1e3)]
    assert all(y > x for x, y in zip(areas, areas[1:]))


# -- write energy ----------------------------------------------------------------------

def test_write_energy_ratio_epiram_fefet():
    epi, fe = dev.get_device("EpiRAM"), fefet()
    g = 1e-6
    ratio = (a.write_pulse_energy(epi.write_voltage_ltp, g, epi.write_pulse_width)
             / a.write_pulse_energy(fe.write_voltage_ltp, g, fe.write_pulse_width))
    analytic = (5 ** 2 * 5e-6) / (3.65 ** 2 * 75e-9)
    assert analytic == pytest.approx(125.1, abs=0.05)
    assert ratio == pytest.approx(analytic, rel=0.01)


# -- on a real trace -------------------------------------------------------------------

def test_step_costs_close_over_components(desk_run):
    _, model, traces = desk_run
    for s in a.STEPS:
        sc = model.step_cost(s, traces[-1])
        assert sc.latency == pytest.approx(math.fsum(sc.latency_by.values()), rel=1e-9)
        assert sc.latency > 0 and sc.dynamic_energy > 0


def test_zero_delta_update_programs_nothing(desk_run):
    _, model, traces = desk_run
    t = traces[-1]
    frozen = replace(t, layers=[replace(lt, old_weights=lt.new_weights.copy()) for lt in t.layers])
    sc = model.step_cost("weight_update", frozen)
    assert sc.latency_by["array"] == 0 and sc.energy_by["array"] == 0


def test_missing_trace_errors(desk_run):
    _, model, traces = desk_run
    with pytest.raises(TraceError):
        model.step_cost("feed_forward", None)
    bad = replace(traces[-1], layers=[replace(traces[-1].layers[0], act_ones_fraction=None)])
    with pytest.raises(TraceError):
        model.step_cost("feed_forward", bad)


def test_gradient_step_dominates(desk_run):
    _, model, traces = desk_run
    ep = model.epoch(traces[-1])
    lat = {s: ep.step_latency(s) for s in a.STEPS}
    en = {s: ep.step_dynamic_energy(s) for s in a.STEPS}
    assert max(lat, key=lat.get) == "weight_gradient"
    assert max(en, key=en.get) == "weight_gradient"


def test_ops_independent_of_costs(desk_run):
    cfg, model, traces = desk_run
    cheap = a.CostModel(model.net, model.fp, model.costs.with_overrides(adc_energy=0.0,
                                                                        buffer_latency=0.0),
                        model.device)
    assert cheap.epoch(traces[-1]).ops == model.epoch(traces[-1]).ops


# raising capacities (bus widths, bandwidth, read current or voltage) speeds things up,
# so monotonicity is checked on the cost entries only
CAPACITIES = {"cols_per_adc", "read_voltage", "accum_bus_bits", "buffer_bus_bits",
              "dram_bandwidth", "sram_cell_current", "write_group_rows"}


def test_raising_a_unit_cost_never_lowers_totals(desk_run):
    _, model, traces = desk_run
    t = traces[-1]

    def totals(m):
        ep = m.epoch(t)
        return (ep.latency, ep.dynamic_energy, ep.leakage_energy, math.fsum(m.area().values()))

    base = totals(model)
    for f in fields(a.CostTable):
        if f.name in CAPACITIES:
            continue
        v = getattr(model.costs, f.name)
        bumped = model.costs.with_overrides(**{f.name: type(v)(v * 2 + 1 if isinstance(v, int)
                                                              else v * 2)})
        m = a.CostModel(model.net, model.fp, bumped, model.device, model.ratio)
        for x, y in zip(base, totals(m)):
            assert y >= x * (1 - 1e-12), f.name


def test_ratio_never_raises_update_latency(desk_run):
    _, model, traces = desk_run
    lats = []
    for r in (1, 2, 4, 8):
        m = a.CostModel(model.net, model.fp, model.costs, model.device, r)
        lats.append(m.step_cost("weight_update", traces[-1]).latency_by["accumulation"])
    assert all(y <= x for x, y in zip(lats, lats[1:]))


def test_ratio_below_one_rejected(desk_run):
    _, model, _ = desk_run
    with pytest.raises(ConfigError):
        a.CostModel(model.net, model.fp, model.costs, model.device, 0.5)
