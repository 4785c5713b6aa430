"""How reconstruction error grows with sensor noise.

Gaussian noise with standard deviation ``alpha * mean|x|`` (mean over the
training snapshots) is added to the whole field, so models train and are
tested on noisy measurements. Errors are always measured against the clean
field. This runs the desk-scale noise sweep with fewer trials and plots
median error against alpha with interquartile bands.

    python3 demos/03_noise.py

Equivalent CLI call on the full desk-scale config:

    shredkit noise-sweep --config experiments/noise_sweep.json --out runs/noise
"""

import dataclasses
import json
import os

from shredkit import harness as H
from shredkit import plotting

OUT = os.environ.get("SHREDKIT_DEMO_OUT", "demo_output")

with open("experiments/noise_sweep.json") as fh:
    config = H.ExperimentConfig.from_dict(json.load(fh))
config = dataclasses.replace(config, trials=2, alphas=(0.0, 0.25, 1.0), methods=("shred", "qr_pod"))

summaries = H.run_noise_sweep(config)
for s in summaries:
    print(f"alpha {s.alpha:4.2f}  {s.method:6s}  median {s.median:.4f}  IQR [{s.q25:.4f}, {s.q75:.4f}]")

os.makedirs(OUT, exist_ok=True)
path = os.path.join(OUT, "noise.svg")
plotting.write_svg(path, plotting.plot_summaries(summaries, x="alpha"))
H.write_json(os.path.join(OUT, "noise_summary.json"), H.summary_document(config, summaries, "noise"))
print(f"wrote {path}")
