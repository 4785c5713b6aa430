"""Forecast the sensors, then reconstruct the field from the forecast.

Stage one trains an LSTM forecaster on the sensor history and rolls it out
autoregressively past the end of the training data. Stage two feeds the
forecasted measurements to SHRED (which also sees the measured history
before the forecast) and, for comparison, to gappy POD. Several runs with
different seeds give a spread; averaging their state estimates gives the
ensembled forecast.

    python3 demos/04_forecast.py

Writes ``demo_output/forecast.svg``. Takes several minutes on one core.
"""

import dataclasses
import json
import os

import numpy as np

from shredkit import harness as H
from shredkit import plotting

OUT = os.environ.get("SHREDKIT_DEMO_OUT", "demo_output")

with open("experiments/forecast.json") as fh:
    config = H.ExperimentConfig.from_dict(json.load(fh))
config = dataclasses.replace(config, forecast_runs=3)

result = H.run_forecast_experiment(config)
print(" step   time   SHRED median   POD median   ensemble")
for i, t in enumerate(result.target_times):
    print(f"{i + 1:5d} {t:6d}   {result.shred_median[i]:12.4f} {result.pod_median[i]:12.4f} {result.ensemble_errors[i]:10.4f}")

wins = np.mean(result.shred_median < result.pod_median)
print(f"SHRED beats POD at {wins:.0%} of steps")
os.makedirs(OUT, exist_ok=True)
path = os.path.join(OUT, "forecast.svg")
plotting.write_svg(path, plotting.plot_forecast(result))
print(f"wrote {path}")
