"""Running the command-line harness: one run, then a sweep over C2C noise.

Equivalent shell commands:

    cimtrain run   --config demos/tiny.yaml --output-dir /tmp/cimtrain-demo/run
    cimtrain sweep --config demos/tiny.yaml --output-dir /tmp/cimtrain-demo/sweep \\
                   --sweep c2c_sigma=0,0.01,0.03,0.05

These runs are far too short for the accuracies to show a noise trend;
training_trends.py does that. The point here is the output layout: one
subdirectory per grid point, each with the full report set.

Run: python3 demos/cli_sweep.py
"""

from pathlib import Path

from cimtrain.cli import main
from cimtrain.reporting import read_csv

here = Path(__file__).parent
out = Path("/tmp/cimtrain-demo")
cfg = str(here / "tiny.yaml")

assert main(["run", "--config", cfg, "--output-dir", str(out / "run")]) == 0
for row in read_csv(out / "run" / "NeuroSim_Output.csv"):
    print(f"epoch {row['epoch']}: latency {float(row['latency_s']):.4g} s, "
          f"TOPS/W {float(row['tops_per_w']):.3g}")

assert main(["sweep", "--config", cfg, "--output-dir", str(out / "sweep"),
             "--sweep", "c2c_sigma=0,0.01,0.03,0.05"]) == 0
for point in sorted((out / "sweep").iterdir()):
    acc = read_csv(point / "PythonWrapper_Output.csv")[-1]["accuracy"]
    print(f"{point.name}: final accuracy {float(acc):.3f}")
