"""Where the time and energy of one training epoch go.

Trains the desk CNN on FeFET cells for one epoch, then costs that epoch's
trace. Also compares per-pulse write energy across catalog devices and
shows how the buffer-overhead-constraint ratio trades area for update time.

Run: python3 demos/cost_breakdown.py
"""

from dataclasses import replace

from cimtrain import archsim, data, device as dev
from cimtrain.cli import prepare
from cimtrain.config import RunConfig
from cimtrain.network import BatchSchedule, QuantNet, TrainOptions, train

cfg = RunConfig(device="FeFET", epochs=1)
spec, topo, fp, model = prepare(cfg)
xtr, ytr, xte, yte = data.digits()
net = QuantNet(topo, spec, seed=0, options=TrainOptions(lr=cfg.lr, adc_bits=cfg.adc_bits))
trace = train(net, xtr, ytr, xte, yte, BatchSchedule(cfg.batch_size, 1), seed=0)[0]
print(f"one epoch on FeFET: test accuracy {trace.accuracy:.3f}")

ep = model.epoch(trace)
print(f"\nepoch latency {ep.latency:.4g} s, dynamic energy {ep.dynamic_energy:.4g} J, "
      f"leakage {ep.leakage_energy:.4g} J")
print("by step:           latency  energy")
for s in archsim.STEPS:
    print(f"  {s:<16} {ep.share(s):7.1%} {ep.share(s, 'energy'):7.1%}")
print("by component:      latency  energy")
lat, en = ep.latency_by, ep.energy_by
for c in archsim.COMPONENTS:
    print(f"  {c:<16} {lat[c] / ep.latency:7.1%} {en[c] / ep.dynamic_energy:7.1%}")
pm = archsim.peak_metrics(ep)
print(f"TOPS {pm.total_tops:.3g} (peak {pm.peak_tops:.3g}), "
      f"TOPS/W {pm.total_tops_per_watt:.3g} (peak {pm.peak_tops_per_watt:.3g})")

area = model.area()
total = sum(area.values())
print(f"\nchip area {total:.3g} mm2: " +
      ", ".join(f"{k} {v / total:.0%}" for k, v in sorted(area.items(), key=lambda kv: -kv[1])))

print("\nper-pulse write energy at a common 1 uS cell conductance")
for name, d in dev.load_catalog().items():
    if not d.is_sram:
        e = archsim.write_pulse_energy(d.write_voltage_ltp, 1e-6, d.write_pulse_width)
        print(f"  {name:<10} {e:.3g} J")

print("\nbuffer-overhead-constraint ratio vs update latency and area")
for r in (1, 2, 4, 8):
    m = archsim.CostModel(topo, fp, model.costs, spec, r)
    upd = m.step_cost("weight_update", trace)
    print(f"  ratio {r}: update latency {upd.latency:.4g} s, area {sum(m.area().values()):.4g} mm2")
