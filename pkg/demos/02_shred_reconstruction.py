"""Three random sensors, three estimators.

With only three point sensors, a linear POD estimate can recover at most
three modes of the traveling-wave field. SHRED reads a window of the
sensors' recent history through an LSTM, and the dynamics in that history
pin down much more of the state. The shallow decoder network (SDN) sees
only the current measurement and sits in between.

    python3 demos/02_shred_reconstruction.py

Takes a few minutes on one core. Also writes and reloads a checkpoint.
"""

import os
import time

import numpy as np

from shredkit import checkpoint
from shredkit import harness as H
from shredkit import models as M

OUT = os.environ.get("SHREDKIT_DEMO_OUT", "demo_output")

config = H.ExperimentConfig(
    dataset=H.DatasetSpec(grid=(24, 24), n_times=400, n_modes=6, seed=0),
    lag=30,
    trials=1,
    network=H.NetworkSpec(hidden_size=32, num_layers=2, decoder_sizes=(128, 256)),
    train=M.TrainConfig(max_epochs=150, batch_size=16, learning_rate=3e-3, early_stop_patience=20),
)

for method, placement in (("qr_pod", "qr"), ("qr_pod", "random"), ("sdn", "random"), ("shred", "random")):
    start = time.perf_counter()
    r = H.run_trial(config, H.Cell(method, placement, 3, 0.0), trial=0)
    print(f"{method:7s} {placement:7s} error {r.error:.4f}  ({r.epochs} epochs, {time.perf_counter() - start:.0f} s)")

# The same SHRED model, trained by hand so we can keep it.
data = H.prepare_trial(config, H.Cell("shred", "random", 3, 0.0), trial=0)
model, scaled, epochs = H.fit_network(config, data, "shred", trial=0)
os.makedirs(OUT, exist_ok=True)
path = os.path.join(OUT, "shred.shrd")
checkpoint.save_checkpoint(path, model, seed=0, extra={"epochs": epochs})
again, meta = checkpoint.load_checkpoint(path)

test = data.split.test
a = model.predict(scaled.inputs[test])
b = again.predict(scaled.inputs[test])
print(f"\ncheckpoint {path}: sensors {meta['sensors']}, lag {meta['architecture']['lag']}")
print("reloaded model reproduces predictions bit for bit:", np.array_equal(a, b))

truth = data.clean.snapshots[config.lag + test]
errs = H.per_snapshot_error(a, truth)
print(f"per-snapshot error over {len(test)} test samples: min {errs.min():.3f}, median {np.median(errs):.3f}, max {errs.max():.3f}")
