"""Experiment orchestration: error metric, seeded trials, ensembles and forecasts.

A trial is a pure function of ``(config, cell, trial index)``. Its seed is
``base_seed + trial`` and everything random inside it (split, sensor draw,
noise, network initialisation, batch order) comes from sub-seeds of that
seed keyed by role. The cell's method never enters the lattice, so every
method in a trial sees the same split, sensors and noisy data.
"""

import csv
import dataclasses
import functools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import datasets as ds
from . import models as mdl
from .errors import (CellFailureError, ConfigError, DegenerateTruthError, InvalidArgumentError,
                     ShapeError, ShredkitError)
from .pod import fit_pod, gappy_reconstruct, qr_place_sensors, random_place_sensors

METHODS = ("shred", "sdn", "qr_pod")
PLACEMENTS = ("qr", "random")
DATASET_KINDS = ("traveling_waves", "low_rank", "rotating_blobs", "file")
NAMED_SPLITS = {"sst": ds.SST_LAYOUT, "turbulence": ds.TURBULENCE_LAYOUT}
DETERMINISTIC_ENV = "SHREDKIT_DETERMINISTIC"

_ROLES = {"split": 1, "sensors": 2, "noise": 3, "init": 4, "shuffle": 5,
          "forecaster_init": 6, "forecaster_shuffle": 7}


# ---------------------------------------------------------------------------
# metric


def reconstruction_error(estimates, truths):
    """Mean over snapshots of ``||x_hat - x|| / ||x||``.

    Parameters
    ----------
    estimates, truths : array (T, m) or sequence of state vectors
    """
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truths, dtype=np.float64)
    if est.ndim == 1:
        est, tru = est[None], tru[None] if tru.ndim == 1 else tru
    if est.shape != tru.shape or est.ndim != 2 or est.shape[0] == 0:
        raise ShapeError(f"estimates {est.shape} and truths {tru.shape} must be matching nonempty (T, m)")
    norms = np.linalg.norm(tru, axis=1)
    if np.any(norms == 0):
        raise DegenerateTruthError(f"truth snapshots {np.flatnonzero(norms == 0).tolist()} have zero norm")
    return float(np.mean(np.linalg.norm(est - tru, axis=1) / norms))


def per_snapshot_error(estimates, truths):
    """Relative error of each snapshot, shape (T,)."""
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    tru = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    if est.shape != tru.shape:
        raise ShapeError(f"estimates {est.shape} vs truths {tru.shape}")
    norms = np.linalg.norm(tru, axis=1)
    if np.any(norms == 0):
        raise DegenerateTruthError("a truth snapshot has zero norm")
    return np.linalg.norm(est - tru, axis=1) / norms


# ---------------------------------------------------------------------------
# configuration


def _tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuple(v) for v in value)
    return value


@dataclass(frozen=True)
class DatasetSpec:
    """Which field to build; synthetic generators are seeded, ``file`` loads FLDS."""

    kind: str = "traveling_waves"
    grid: tuple = (32, 32)
    n_times: int = 600
    n_modes: int = 6
    rank: int = 5
    seed: int = 0
    dt: float = 1.0
    max_wavenumber: int = 4
    periods: tuple = (12.0, 90.0)
    path: str = None

    def __post_init__(self):
        object.__setattr__(self, "grid", _tuple(self.grid))
        object.__setattr__(self, "periods", _tuple(self.periods))
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("dataset.path is required when dataset.kind is 'file'")
        if self.kind != "file" and (self.n_times < 2 or any(int(g) < 1 for g in self.grid)):
            raise ConfigError(f"dataset needs n_times >= 2 and a positive grid, got {self.n_times}, {self.grid}")


@functools.lru_cache(maxsize=4)
def build_field(spec):
    """Materialise the field described by ``spec`` (cached per process)."""
    if spec.kind == "traveling_waves":
        modes = ds.random_wave_modes(spec.n_modes, spec.seed, spec.max_wavenumber, spec.periods)
        return ds.gen_traveling_waves(spec.grid, spec.n_times, modes, dt=spec.dt)
    if spec.kind == "low_rank":
        return ds.gen_low_rank(int(np.prod(spec.grid)), spec.n_times, spec.rank, seed=spec.seed)
    if spec.kind == "rotating_blobs":
        return ds.gen_rotating_blobs(spec.grid, spec.n_times, spec.n_modes, seed=spec.seed, dt=spec.dt)
    return ds.load_field_file(spec.path)


@dataclass(frozen=True)
class NetworkSpec:
    hidden_size: int = 64
    num_layers: int = 2
    decoder_sizes: tuple = (350, 400)

    def __post_init__(self):
        object.__setattr__(self, "decoder_sizes", _tuple(self.decoder_sizes))
        if self.hidden_size < 1 or self.num_layers < 1 or any(s < 1 for s in self.decoder_sizes):
            raise ConfigError(f"network sizes must be positive, got {self}")


class Cell(NamedTuple):
    method: str
    placement: str
    n_sensors: int
    alpha: float

    def label(self):
        return f"{self.method}/{self.placement}/s={self.n_sensors}/alpha={self.alpha:g}"


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: dataset, methods, sensing, protocol and training settings.

    Cells are the product ``methods x placements x sensor_counts x alphas``
    unless ``cells`` lists them explicitly as ``(method, placement, sensors,
    alpha)`` entries. ``split`` is ``"interspersed"``, a named temporal layout
    (``"sst"``, ``"turbulence"``) or an explicit layout for
    :func:`datasets.split_temporal`. The QR/POD basis rank is the sensor count,
    capped at ``pod_rank`` when given (extra sensors are fit by least squares).
    ``noise_scope`` is ``"all"`` (the whole dataset is corrupted, so models
    train on noisy data) or ``"test"`` (only test-sample inputs are noisy).
    """

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    methods: tuple = ("shred",)
    placements: tuple = ("random",)
    sensor_counts: tuple = (3,)
    alphas: tuple = (0.0,)
    cells: tuple = None
    lag: int = 50
    trials: int = 32
    base_seed: int = 0
    split: object = "interspersed"
    split_fractions: tuple = (0.7, 0.15, 0.15)
    pod_rank: int = None
    noise_scope: str = "all"
    network: NetworkSpec = field(default_factory=NetworkSpec)
    train: mdl.TrainConfig = field(default_factory=mdl.TrainConfig)
    horizon: int = 25
    forecast_runs: int = 16

    def __post_init__(self):
        for name in ("methods", "placements", "sensor_counts", "alphas", "cells", "split", "split_fractions"):
            object.__setattr__(self, name, _tuple(getattr(self, name)))
        if self.cells is not None:
            object.__setattr__(self, "cells", tuple(Cell(m, p, int(s), float(a)) for m, p, s, a in self.cells))
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.forecast_runs < 1 or self.horizon < 1:
            raise ConfigError("forecast_runs and horizon must be >= 1")
        if self.lag < 1:
            raise ConfigError(f"lag must be >= 1, got {self.lag}")
        for c in self.all_cells():
            if c.method not in METHODS:
                raise ConfigError(f"unknown method {c.method!r}; expected one of {METHODS}")
            if c.placement not in PLACEMENTS:
                raise ConfigError(f"unknown placement {c.placement!r}; expected one of {PLACEMENTS}")
            if c.n_sensors < 1:
                raise ConfigError(f"sensor counts must be >= 1, got {c.n_sensors}")
            if not c.alpha >= 0:
                raise ConfigError(f"noise alphas must be >= 0, got {c.alpha}")
        if isinstance(self.split, str) and self.split not in ("interspersed",) + tuple(NAMED_SPLITS):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.noise_scope not in ("all", "test"):
            raise ConfigError(f"noise_scope must be 'all' or 'test', got {self.noise_scope!r}")
        if self.pod_rank is not None and self.pod_rank < 1:
            raise ConfigError(f"pod_rank must be >= 1, got {self.pod_rank}")

    def all_cells(self):
        if self.cells is not None:
            return list(self.cells)
        return [Cell(m, p, int(s), float(a)) for a in self.alphas for m in self.methods
                for p in self.placements for s in self.sensor_counts]

    @property
    def temporal(self):
        return self.split != "interspersed"

    def split_samples(self, n, seed):
        if self.split == "interspersed":
            return ds.split_interspersed(n, self.split_fractions, sub_seed(seed, "split"))
        layout = NAMED_SPLITS.get(self.split, self.split) if isinstance(self.split, str) else self.split
        return ds.split_temporal(n, layout)

    def to_dict(self):
        out = dataclasses.asdict(self)
        if self.cells is not None:
            out["cells"] = [list(c) for c in self.cells]
        return json.loads(json.dumps(out))

    @classmethod
    def from_dict(cls, doc):
        """Validated config from a plain mapping; unknown keys are rejected."""
        if not isinstance(doc, dict):
            raise ConfigError(f"config must be a mapping, got {type(doc).__name__}")
        doc = dict(doc)
        nested = {"dataset": DatasetSpec, "network": NetworkSpec, "train": mdl.TrainConfig}
        unknown = _unknown_keys(cls, doc, "")
        for key, sub in nested.items():
            if isinstance(doc.get(key), dict):
                unknown += _unknown_keys(sub, doc[key], key)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kwargs = {}
        for key, sub in nested.items():
            if key in doc:
                kwargs[key] = _from_mapping(sub, doc.pop(key), key)
        kwargs.update(_check_keys(cls, doc, "", exclude=nested))
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None


def _unknown_keys(cls, doc, where):
    names = {f.name for f in dataclasses.fields(cls)}
    prefix = f"{where}." if where else ""
    return [prefix + k for k in sorted(set(doc) - names)]


def _check_keys(cls, doc, where, exclude=()):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping, got {type(doc).__name__}")
    names = {f.name for f in dataclasses.fields(cls)} - set(exclude)
    unknown = sorted(set(doc) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    return {k: _tuple(v) for k, v in doc.items()}


def _from_mapping(cls, doc, where):
    kwargs = _check_keys(cls, doc, where)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def sub_seed(seed, role):
    """Independent 32-bit seed for one random stream of a trial."""
    return int(np.random.SeedSequence([int(seed), _ROLES[role]]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class TrialResult:
    method: str
    placement: str
    n_sensors: int
    alpha: float
    trial: int
    seed: int
    error: float
    epochs: int = 0
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not self.error >= 0:
            raise InvalidArgumentError(f"trial error must be nonnegative, got {self.error}")

    @property
    def cell(self):
        return Cell(self.method, self.placement, self.n_sensors, self.alpha)


TRIAL_FIELDS = tuple(f.name for f in dataclasses.fields(TrialResult))


@dataclass
class _TrialData:
    field: ds.FieldSeries  # possibly noisy
    clean: ds.FieldSeries
    split: ds.SplitSpec
    sensors: object
    windows: ds.WindowedDataset
    basis: object = None


def _training_states(data, lag):
    return data.field.snapshots[lag + data.split.train]


def _prepare(config, seed, placement, n_sensors, alpha):
    clean = build_field(config.dataset)
    k = config.lag
    n = ds.n_windowed_samples(clean.n_times, k)
    split = config.split_samples(n, seed)
    if len(split.train) == 0:
        raise InvalidArgumentError("split leaves no training samples")
    noisy = ds.add_noise(clean, ds.NoiseSpec(alpha, sub_seed(seed, "noise")), clean.snapshots[k + split.train])
    test_only = config.noise_scope == "test" and noisy is not clean
    if test_only:
        noisy_test_inputs, noisy = noisy, clean
    basis = None
    if placement == "qr":
        basis = fit_pod(noisy.snapshots[k + split.train], min(n_sensors, len(split.train)))
        basis = dataclasses.replace(basis, valid_indices=clean.valid_indices)
        sensors = qr_place_sensors(basis, n_sensors)
    else:
        sensors = random_place_sensors(clean.grid_size, n_sensors, sub_seed(seed, "sensors"), clean.mask)
    windows = ds.make_windows(ds.sample_sensors(noisy, sensors), noisy, k, split)
    if test_only:
        corrupted = ds.make_windows(ds.sample_sensors(noisy_test_inputs, sensors), clean, k, split)
        inputs = windows.inputs.copy()
        inputs[split.test] = corrupted.inputs[split.test]
        windows = dataclasses.replace(windows, inputs=inputs)
    data = _TrialData(noisy, clean, split, sensors, windows)
    if basis is not None and basis.rank == _pod_rank(config, n_sensors):
        data.basis = basis
    return data


def _pod_rank(config, n_sensors):
    return n_sensors if config.pod_rank is None else min(n_sensors, config.pod_rank)


def _pod_basis(config, data, n_sensors):
    if data.basis is None:
        states = _training_states(data, config.lag)
        r = _pod_rank(config, n_sensors)
        if r > min(states.shape):
            raise InvalidArgumentError(f"POD rank {r} exceeds the {len(states)} training snapshots")
        basis = fit_pod(states, r)
        data.basis = dataclasses.replace(basis, valid_indices=data.clean.valid_indices)
    return data.basis


def _scalers(windows):
    x_in, x_out = windows.subset(ds.TRAIN)
    return ds.fit_scaler(x_in), ds.fit_scaler(x_out)


def _fit_network(config, data, method, seed, context):
    """Train SHRED or SDN on the trial's windows; returns (model, scaled data, epochs)."""
    sensor_scaler, state_scaler = _scalers(data.windows)
    scaled = data.windows.rescaled(sensor_scaler, state_scaler)
    net, s, m = config.network, len(data.sensors), data.clean.n_valid
    if method == "shred":
        model = mdl.build_shred(s, m, config.lag, net.hidden_size, net.num_layers, net.decoder_sizes,
                                seed=sub_seed(seed, "init"))
    else:
        model = mdl.build_sdn(s, m, net.decoder_sizes, seed=sub_seed(seed, "init"))
        scaled = scaled.static()
    model.sensor_scaler, model.state_scaler, model.sensors = sensor_scaler, state_scaler, data.sensors.indices
    train_cfg = dataclasses.replace(config.train, seed=sub_seed(seed, "shuffle"))
    model, history = mdl.train(model, scaled, train_cfg, context=context)
    return model, scaled, len(history)


def _test_estimates(config, data, method, seed, context):
    """Estimates for the test samples plus the epoch count."""
    test = data.split.test
    if len(test) == 0:
        raise InvalidArgumentError("split leaves no test samples")
    n_sensors = len(data.sensors)
    if method == "qr_pod":
        basis = _pod_basis(config, data, n_sensors)
        y = data.windows.inputs[test, -1, :]
        return gappy_reconstruct(basis, data.sensors, y), 0
    model, scaled, epochs = _fit_network(config, data, method, seed, context)
    return model.predict(scaled.inputs[test]), epochs


def prepare_trial(config, cell, trial):
    """Split, noise, sensors and windows for one trial, as :func:`run_trial` sees them."""
    cell = Cell(*cell)
    return _prepare(config, config.base_seed + int(trial), cell.placement, cell.n_sensors, cell.alpha)


def fit_network(config, data, method, trial, context=""):
    """Train SHRED or SDN on prepared trial data; returns ``(model, scaled windows, epochs)``."""
    if method not in ("shred", "sdn"):
        raise InvalidArgumentError(f"{method!r} is not a trainable method")
    return _fit_network(config, data, method, config.base_seed + int(trial), context or f"{method} trial {trial}")


def run_trial(config, cell, trial):
    """Run one cell of ``config`` for trial index ``trial``.

    Error is measured against the noise-free test states.
    """
    cell = Cell(*cell)
    seed = config.base_seed + int(trial)
    start = time.perf_counter()
    data = _prepare(config, seed, cell.placement, cell.n_sensors, cell.alpha)
    context = f"cell {cell.label()}, trial {trial}, seed {seed}"
    estimates, epochs = _test_estimates(config, data, cell.method, seed, context)
    truth = data.clean.snapshots[config.lag + data.split.test]
    err = reconstruction_error(estimates, truth)
    return TrialResult(cell.method, cell.placement, cell.n_sensors, cell.alpha, int(trial), seed, err,
                       epochs, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# execution


def deterministic_requested():
    return os.environ.get(DETERMINISTIC_ENV, "") not in ("", "0")


def resolve_workers(workers=None):
    """Worker count after defaults and the deterministic-mode override."""
    if deterministic_requested():
        return 1
    if workers is None:
        workers = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1
    if workers < 1:
        raise InvalidArgumentError(f"workers must be >= 1, got {workers}")
    return int(workers)


def _call_single_threaded(fn, args):
    # One BLAS thread inside every task keeps floating-point reductions, and
    # so results, identical whatever the worker count.
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        try:
            return True, fn(*args)
        except ShredkitError as exc:
            return False, exc


def _execute(fn, arg_list, workers):
    workers = resolve_workers(workers)
    if workers == 1 or len(arg_list) <= 1:
        return [_call_single_threaded(fn, a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=min(workers, len(arg_list))) as pool:
        futures = [pool.submit(_call_single_threaded, fn, a) for a in arg_list]
        return [f.result() for f in futures]


@dataclass(frozen=True)
class TrialFailure:
    cell: Cell
    trial: int
    seed: int
    cause: str


def run_trials(config, workers=None, cells=None):
    """Every (cell, trial) of ``config``; returns ``(results, failures)`` in cell order."""
    cells = [Cell(*c) for c in (cells if cells is not None else config.all_cells())]
    tasks = [(config, c, t) for c in cells for t in range(config.trials)]
    outcomes = _execute(run_trial, tasks, workers)
    results, failures = [], []
    for (_, c, t), (ok, value) in zip(tasks, outcomes):
        if ok:
            results.append(value)
        else:
            failures.append(TrialFailure(c, t, config.base_seed + t, f"{value.category}: {value}"))
    return results, failures


@dataclass(frozen=True)
class EnsembleSummary:
    method: str
    placement: str
    n_sensors: int
    alpha: float
    n_trials: int
    n_failed: int
    median: float
    q25: float
    q75: float
    errors: tuple = ()

    def __post_init__(self):
        if not self.q25 <= self.median <= self.q75:
            raise InvalidArgumentError(f"quantiles out of order: {self.q25}, {self.median}, {self.q75}")

    @property
    def cell(self):
        return Cell(self.method, self.placement, self.n_sensors, self.alpha)


def summarize_errors(cell, errors, n_failed=0):
    """Median and quartiles (linear interpolation between order statistics)."""
    e = np.asarray(errors, dtype=np.float64)
    q25, med, q75 = np.quantile(e, [0.25, 0.5, 0.75], method="linear")
    return EnsembleSummary(cell.method, cell.placement, int(cell.n_sensors), float(cell.alpha), len(e),
                           int(n_failed), float(med), float(q25), float(q75), tuple(float(v) for v in e))


def summarize(config, results, failures=()):
    out = []
    for c in config.all_cells():
        errs = [r.error for r in results if r.cell == c]
        failed = [f for f in failures if f.cell == c]
        if not errs:
            raise CellFailureError(c.label(), [f.seed for f in failed], [f.cause for f in failed])
        out.append(summarize_errors(c, errs, len(failed)))
    return out


def run_ensemble(config, workers=None, with_trials=False):
    """Trials for every cell and their summaries (one per cell, config order).

    With ``with_trials`` the individual :class:`TrialResult` list is returned
    as well, as ``(summaries, results)``.
    """
    results, failures = run_trials(config, workers)
    summaries = summarize(config, results, failures)
    return (summaries, results) if with_trials else summaries


def run_noise_sweep(config, workers=None, with_trials=False):
    """:func:`run_ensemble` over the noise levels, summaries sorted by (alpha, method)."""
    if not config.alphas and config.cells is None:
        raise InvalidArgumentError("noise sweep needs at least one alpha")
    summaries, results = run_ensemble(config, workers, with_trials=True)
    summaries = sorted(summaries, key=lambda s: (s.alpha, s.method, s.placement, s.n_sensors))
    return (summaries, results) if with_trials else summaries


# ---------------------------------------------------------------------------
# forecasting


@dataclass(frozen=True)
class ForecastRun:
    seed: int
    target_times: np.ndarray
    shred_states: np.ndarray  # (p, m)
    pod_states: np.ndarray
    truth: np.ndarray
    forecast: np.ndarray  # (p, s) physical-unit measurements


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """Per-step errors of every run (rows) and of the ensembled forecast."""

    target_times: np.ndarray
    seeds: tuple
    shred_errors: np.ndarray  # (runs, p)
    pod_errors: np.ndarray
    ensemble_errors: np.ndarray  # (p,)
    pod_ensemble_errors: np.ndarray

    def __post_init__(self):
        p = len(self.target_times)
        for name in ("shred_errors", "pod_errors"):
            if getattr(self, name).shape != (len(self.seeds), p):
                raise ShapeError(f"{name} must be (runs, horizon) = ({len(self.seeds)}, {p})")

    @property
    def horizon(self):
        return len(self.target_times)

    @property
    def shred_median(self):
        return np.median(self.shred_errors, axis=0)

    @property
    def pod_median(self):
        return np.median(self.pod_errors, axis=0)

    def to_dict(self):
        return {
            "target_times": self.target_times.tolist(),
            "seeds": list(self.seeds),
            "shred_errors": self.shred_errors.tolist(),
            "pod_errors": self.pod_errors.tolist(),
            "ensemble_errors": self.ensemble_errors.tolist(),
            "pod_ensemble_errors": self.pod_ensemble_errors.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["target_times"]), tuple(doc["seeds"]),
                   np.asarray(doc["shred_errors"], dtype=np.float64), np.asarray(doc["pod_errors"], dtype=np.float64),
                   np.asarray(doc["ensemble_errors"], dtype=np.float64),
                   np.asarray(doc["pod_ensemble_errors"], dtype=np.float64))


def _forecast_run(config, seed, horizon, oracle):
    placement, n_sensors = config.placements[0], int(config.sensor_counts[0])
    alpha = float(config.alphas[0]) if config.alphas else 0.0
    data = _prepare(config, seed, placement, n_sensors, alpha)
    k, split = config.lag, data.split
    test = split.test
    if horizon > len(test):
        raise InvalidArgumentError(f"horizon {horizon} exceeds the {len(test)} test samples")
    if np.any(np.diff(test[:horizon]) != 1):
        raise InvalidArgumentError("forecasting needs a contiguous test segment")
    context = f"forecast seed {seed}"
    shred, scaled, _ = _fit_network(config, data, "shred", seed, context)
    y_all = shred.sensor_scaler.transform(ds.sample_sensors(data.field, data.sensors).values)
    t0 = k + int(test[0])
    if oracle:
        forecast = y_all[t0: t0 + horizon]
    else:
        win, tgt = mdl.forecaster_train_target(y_all, k)  # sample j targets time k + j
        fdata = ds.WindowedDataset(win, tgt, np.arange(k, len(y_all)), split, k)
        net = config.network
        fc = mdl.build_forecaster(n_sensors, k, net.hidden_size, net.num_layers, seed=sub_seed(seed, "forecaster_init"))
        fc.sensor_scaler, fc.sensors = shred.sensor_scaler, data.sensors.indices
        fc, _ = mdl.train(fc, fdata, dataclasses.replace(config.train, seed=sub_seed(seed, "forecaster_shuffle")),
                          context=context + " (forecaster)")
        forecast = mdl.rollout(fc, y_all[t0 - k: t0], horizon)
    # SHRED window for time t holds y[t-k+1 .. t]: history, then forecasts.
    seq = np.vstack([y_all[t0 - k + 1: t0], forecast])
    windows = np.stack([seq[i: i + k] for i in range(horizon)])
    shred_states = shred.predict(windows)
    measured = shred.sensor_scaler.inverse(forecast)
    pod_states = gappy_reconstruct(_pod_basis(config, data, n_sensors), data.sensors, measured)
    times = np.arange(t0, t0 + horizon)
    return ForecastRun(seed, times, shred_states, pod_states, data.clean.snapshots[times], measured)


def run_forecast_experiment(config, horizon=None, runs=None, workers=None, oracle=False, with_runs=False):
    """Forecast ``horizon`` steps past the end of the training data, ``runs`` times.

    Each run trains a measurement forecaster and a SHRED model, rolls out the
    forecaster from the window preceding the test segment, and reconstructs
    states from the forecasted measurements with SHRED and with gappy POD.
    The ensembled forecast averages the runs' SHRED state estimates per step.
    With ``oracle`` the true measurements replace the forecasts.
    """
    horizon = config.horizon if horizon is None else int(horizon)
    runs = config.forecast_runs if runs is None else int(runs)
    if not config.temporal:
        raise InvalidArgumentError("forecasting needs a temporal split layout")
    if horizon < 1 or runs < 1:
        raise InvalidArgumentError(f"horizon and runs must be >= 1, got {horizon}, {runs}")
    tasks = [(config, config.base_seed + r, horizon, oracle) for r in range(runs)]
    outcomes = _execute(_forecast_run, tasks, workers)
    for ok, value in outcomes:
        if not ok:
            raise value
    out = [v for _, v in outcomes]
    truth = out[0].truth
    shred_err = np.stack([per_snapshot_error(r.shred_states, truth) for r in out])
    pod_err = np.stack([per_snapshot_error(r.pod_states, truth) for r in out])
    ens = per_snapshot_error(np.mean([r.shred_states for r in out], axis=0), truth)
    pod_ens = per_snapshot_error(np.mean([r.pod_states for r in out], axis=0), truth)
    result = ForecastResult(out[0].target_times, tuple(r.seed for r in out), shred_err, pod_err, ens, pod_ens)
    return (result, out) if with_runs else result


# ---------------------------------------------------------------------------
# result files


def write_trial_rows(path, results):
    """One comma-separated row per :class:`TrialResult`, with a header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_FIELDS)
        for r in results:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])


def read_trial_rows(path):
    casts = {f.name: f.type for f in dataclasses.fields(TrialResult)}
    with open(path, newline="") as fh:
        return [TrialResult(**{k: casts[k](v) for k, v in row.items()}) for row in csv.DictReader(fh)]


def summary_document(config, summaries, kind="sensors"):
    """Structured summary consumed by the plot command."""
    return {
        "kind": kind,
        "config": config.to_dict() if config is not None else None,
        "summaries": [dataclasses.asdict(s) | {"errors": list(s.errors)} for s in summaries],
    }


def summaries_from_document(doc):
    try:
        return [EnsembleSummary(**{**s, "errors": tuple(s.get("errors", ()))}) for s in doc["summaries"]]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed summary document: {exc}") from None


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
