"""Spatio-temporal field data: synthetic generators, the field file format,
sensing, noise, scaling, lag windows and train/validation/test splits.

A field series stores only the valid (unmasked) grid locations of every
snapshot. Sensor indices, on the other hand, are flat indices into the full
grid, so they stay meaningful when a mask is present.
"""

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgumentError, ShapeError, StateError

MAGIC = b"FLDS"
VERSION = 1

TRAIN, VALIDATION, TEST = "train", "validation", "test"
LABELS = (TRAIN, VALIDATION, TEST)


@dataclass(frozen=True, eq=False)
class FieldSeries:
    """Temporally ordered snapshots on a (possibly masked) grid.

    Attributes
    ----------
    grid_shape : tuple of int
    snapshots : ndarray, shape (T, n_valid)
        State vectors over valid locations, in physical units.
    mask : ndarray of bool or None
        Flat mask over the grid, True where the location is valid.
    dt : float
        Nominal sampling interval.
    """

    grid_shape: tuple
    snapshots: np.ndarray
    mask: np.ndarray = None
    dt: float = 1.0

    def __post_init__(self):
        grid = tuple(int(d) for d in self.grid_shape)
        snaps = np.array(self.snapshots, dtype=np.float64)
        if snaps.ndim == 1:
            snaps = snaps[None]
        if snaps.ndim != 2 or snaps.shape[0] < 1:
            raise ShapeError(f"snapshots must be a (T >= 1, n_valid) array, got {snaps.shape}")
        size = math.prod(grid)
        mask = None
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool).reshape(-1)
            if mask.size != size:
                raise ShapeError(f"mask has {mask.size} entries for a grid of {size}")
        n_valid = size if mask is None else int(mask.sum())
        if snaps.shape[1] != n_valid:
            raise ShapeError(f"snapshots have {snaps.shape[1]} entries, grid has {n_valid} valid locations")
        snaps.setflags(write=False)
        if mask is not None:
            mask.setflags(write=False)
        object.__setattr__(self, "grid_shape", grid)
        object.__setattr__(self, "snapshots", snaps)
        object.__setattr__(self, "mask", mask)

    @property
    def n_times(self):
        return self.snapshots.shape[0]

    @property
    def n_valid(self):
        return self.snapshots.shape[1]

    @property
    def grid_size(self):
        return math.prod(self.grid_shape)

    @property
    def valid_indices(self):
        """Flat grid index of every state-vector entry."""
        if self.mask is None:
            return np.arange(self.grid_size)
        return np.flatnonzero(self.mask)

    def positions(self, grid_indices):
        """State-vector positions of flat grid indices; masked indices raise."""
        idx = np.asarray(grid_indices, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.grid_size):
            raise InvalidArgumentError(f"grid indices out of range [0, {self.grid_size})")
        if self.mask is None:
            return idx
        if not np.all(self.mask[idx]):
            bad = idx[~self.mask[idx]]
            raise InvalidArgumentError(f"grid indices {bad.tolist()} are masked")
        lookup = np.cumsum(self.mask) - 1
        return lookup[idx]

    def to_grid(self, t=None):
        """Full-grid array(s) with masked locations set to NaN."""
        snaps = self.snapshots if t is None else self.snapshots[t][None]
        full = np.full((snaps.shape[0], self.grid_size), np.nan)
        full[:, self.valid_indices] = snaps
        full = full.reshape((snaps.shape[0], *self.grid_shape))
        return full if t is None else full[0]

    def with_snapshots(self, snapshots):
        return FieldSeries(self.grid_shape, snapshots, self.mask, self.dt)

    def select(self, times):
        return self.with_snapshots(self.snapshots[np.asarray(times)])


# ---------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class WaveMode:
    amplitude: float
    wavevector: tuple
    frequency: float
    phase: float = 0.0


def random_wave_modes(n_modes, seed, max_wavenumber=4, periods=(12.0, 90.0)):
    """Draw ``n_modes`` traveling-wave modes with incommensurate periods (in samples)."""
    rng = np.random.default_rng(seed)
    modes = []
    for _ in range(n_modes):
        while True:
            kv = tuple(int(v) for v in rng.integers(-max_wavenumber, max_wavenumber + 1, size=2))
            if kv != (0, 0):
                break
        period = rng.uniform(*periods)
        modes.append(WaveMode(
            amplitude=float(rng.uniform(0.5, 1.5)),
            wavevector=kv,
            frequency=2.0 * np.pi / period,
            phase=float(rng.uniform(0.0, 2.0 * np.pi)),
        ))
    return modes


def _grid_coords(grid):
    h, w = grid
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return 2.0 * np.pi * yy.ravel() / h, 2.0 * np.pi * xx.ravel() / w


def gen_traveling_waves(grid, T, modes, seed=0, dt=1.0):
    """Sum of plane waves ``a cos(kappa . s - omega t + phi)`` on a periodic grid.

    Grid coordinates span ``[0, 2 pi)`` along each axis so integer wavevectors
    are periodic. ``modes`` is a list of :class:`WaveMode` or an integer
    count, in which case modes are drawn with ``seed``.
    """
    if isinstance(modes, (int, np.integer)):
        modes = random_wave_modes(int(modes), seed)
    if not modes:
        raise InvalidArgumentError("at least one wave mode is required")
    if T < 1:
        raise InvalidArgumentError(f"T must be positive, got {T}")
    sy, sx = _grid_coords(grid)
    t = np.arange(T)[:, None] * dt
    field_ = np.zeros((T, sy.size))
    for m in modes:
        ky, kx = m.wavevector
        field_ += m.amplitude * np.cos(ky * sy + kx * sx - m.frequency * t + m.phase)
    return FieldSeries(tuple(grid), field_, dt=dt)


def gen_low_rank(m, T, r, frequencies=None, seed=0, singular_values=None):
    """Exactly rank-``r`` data ``U diag(sigma) V^T`` with smooth temporal factors."""
    if not 1 <= r <= min(m, T):
        raise InvalidArgumentError(f"rank {r} outside [1, min(m, T) = {min(m, T)}]")
    rng = np.random.default_rng(seed)
    u, _ = np.linalg.qr(rng.standard_normal((m, r)))
    if frequencies is None:
        frequencies = np.arange(1, r + 1)
    frequencies = np.asarray(frequencies, dtype=np.float64)
    if frequencies.size != r:
        raise InvalidArgumentError(f"need {r} temporal frequencies, got {frequencies.size}")
    t = np.arange(T) / T
    phases = rng.uniform(0, 2 * np.pi, size=r)
    temporal = np.sin(2 * np.pi * frequencies[None, :] * t[:, None] + phases)
    v, _ = np.linalg.qr(temporal)
    sigma = np.linspace(1.0, 0.5, r) * np.sqrt(T) if singular_values is None else np.asarray(singular_values, dtype=np.float64)
    if sigma.size != r:
        raise InvalidArgumentError(f"need {r} singular values, got {sigma.size}")
    x = (u * sigma) @ v.T
    return FieldSeries((m,), x.T)


@dataclass(frozen=True)
class Blob:
    radius: float
    angular_rate: float
    width: float
    amplitude: float
    phase: float = 0.0


def gen_rotating_blobs(grid, T, blobs, seed=0, dt=1.0):
    """Gaussian blobs whose centers orbit the grid center.

    ``blobs`` is a list of :class:`Blob` (radius and width in grid cells,
    angular rate in radians per unit time) or an integer count to draw.
    """
    h, w = grid
    if isinstance(blobs, (int, np.integer)):
        rng = np.random.default_rng(seed)
        blobs = [
            Blob(
                radius=float(rng.uniform(0.1, 0.35) * min(h, w)),
                angular_rate=float(2 * np.pi / rng.uniform(20, 80)),
                width=float(rng.uniform(0.05, 0.12) * min(h, w)),
                amplitude=float(rng.uniform(0.5, 1.5)),
                phase=float(rng.uniform(0, 2 * np.pi)),
            )
            for _ in range(int(blobs))
        ]
    if not blobs:
        raise InvalidArgumentError("at least one blob is required")
    for b in blobs:
        if b.width <= 0:
            raise InvalidArgumentError(f"blob width must be positive, got {b.width}")
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    yy, xx = yy.ravel(), xx.ravel()
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    t = np.arange(T)[:, None] * dt
    out = np.zeros((T, h * w))
    for b in blobs:
        ang = b.angular_rate * t + b.phase
        py = cy + b.radius * np.sin(ang)
        px = cx + b.radius * np.cos(ang)
        d2 = (yy[None] - py) ** 2 + (xx[None] - px) ** 2
        out += b.amplitude * np.exp(-d2 / (2.0 * b.width**2))
    return FieldSeries((h, w), out, dt=dt)


# ---------------------------------------------------------------------------
# field file format


def save_field_file(path, series):
    """Write ``series`` in the binary field format (atomic replace)."""
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<B", len(series.grid_shape))]
    parts += [struct.pack("<Q", d) for d in series.grid_shape]
    if series.mask is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(np.packbits(series.mask, bitorder="little").tobytes())
    parts.append(struct.pack("<Q", series.n_times))
    parts.append(np.ascontiguousarray(series.snapshots, dtype="<f8").tobytes())
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".flds-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(parts))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_field_file(path):
    """Read a field file; any corruption raises :class:`FormatError`."""
    with open(path, "rb") as fh:
        buf = fh.read()
    pos = 0

    def need(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated file while reading {what}", pos)
        chunk = buf[pos: pos + n]
        pos += n
        return chunk

    if need(4, "magic") != MAGIC:
        raise FormatError("bad magic", 0)
    (version,) = struct.unpack("<I", need(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (ndim,) = struct.unpack("<B", need(1, "dimension count"))
    if ndim < 1:
        raise FormatError("dimension count must be positive", pos - 1)
    dims = tuple(struct.unpack("<Q", need(8, "dimension"))[0] for _ in range(ndim))
    size = math.prod(dims)
    flag_at = pos
    (flag,) = struct.unpack("<B", need(1, "mask flag"))
    mask = None
    if flag == 1:
        nbytes = (size + 7) // 8
        bits = np.frombuffer(need(nbytes, "mask bits"), dtype=np.uint8)
        mask = np.unpackbits(bits, count=size, bitorder="little").astype(bool)
    elif flag != 0:
        raise FormatError(f"invalid mask flag {flag}", flag_at)
    (count,) = struct.unpack("<Q", need(8, "snapshot count"))
    n_valid = size if mask is None else int(mask.sum())
    payload = need(count * n_valid * 8, "snapshot payload")
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    snaps = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(count, n_valid)
    return FieldSeries(dims, snaps, mask)


# ---------------------------------------------------------------------------
# sensing and noise


@dataclass(frozen=True)
class MeasurementSeries:
    sensors: object  # SensorSet
    values: np.ndarray  # (T, n_sensors)

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.sensors.indices):
            raise ShapeError(f"measurement values {self.values.shape} vs {len(self.sensors.indices)} sensors")


def sample_sensors(series, sensors):
    """Point measurements ``y_t = C x_t`` at the sensor grid indices."""
    pos = series.positions(sensors.indices)
    return MeasurementSeries(sensors, series.snapshots[:, pos].copy())


@dataclass(frozen=True)
class NoiseSpec:
    alpha: float
    seed: int = 0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise InvalidArgumentError(f"noise level must be nonnegative, got {self.alpha}")


def noise_std(spec, reference):
    ref = reference.snapshots if isinstance(reference, FieldSeries) else np.asarray(reference)
    return spec.alpha * float(np.mean(np.abs(ref)))


def add_noise(series, spec, reference):
    """Add white Gaussian noise with std ``alpha * mean(|reference|)``.

    ``reference`` holds the training snapshots (FieldSeries or array).
    """
    if spec.alpha == 0:
        return series
    rng = np.random.default_rng(spec.seed)
    std = noise_std(spec, reference)
    return series.with_snapshots(series.snapshots + rng.normal(0.0, std, size=series.snapshots.shape))


# ---------------------------------------------------------------------------
# scaling


@dataclass
class Scaler:
    """Per-feature affine map of the training range onto [0, 1]."""

    minimum: np.ndarray = None
    maximum: np.ndarray = None

    @property
    def fitted(self):
        return self.minimum is not None

    @property
    def span(self):
        self._check()
        span = self.maximum - self.minimum
        return np.where(span > 0, span, 1.0)

    def _check(self):
        if not self.fitted:
            raise StateError("scaler has not been fit")

    def fit(self, data):
        data = np.asarray(data, dtype=np.float64)
        data = data.reshape(-1, data.shape[-1])
        if data.shape[0] == 0:
            raise InvalidArgumentError("cannot fit a scaler on zero samples")
        self.minimum = data.min(axis=0)
        self.maximum = data.max(axis=0)
        return self

    def transform(self, data):
        self._check()
        return (np.asarray(data, dtype=np.float64) - self.minimum) / self.span

    def inverse(self, data):
        self._check()
        return np.asarray(data, dtype=np.float64) * self.span + self.minimum


def fit_scaler(data):
    return Scaler().fit(data)


def apply_scaler(scaler, data):
    return scaler.transform(data)


def invert_scaler(scaler, data):
    return scaler.inverse(data)


# ---------------------------------------------------------------------------
# splits and windows


@dataclass(frozen=True)
class SplitSpec:
    """Sorted sample indices per label; unlisted samples are unused."""

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    n_samples: int

    def labels(self):
        out = np.full(self.n_samples, "", dtype=object)
        for name in LABELS:
            out[getattr(self, name)] = name
        return out

    def sizes(self):
        return tuple(len(getattr(self, name)) for name in LABELS)

    def __getitem__(self, name):
        return getattr(self, name)


def _largest_remainder(n, fractions):
    raw = np.asarray(fractions, dtype=np.float64) * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def split_interspersed(n_samples, fractions=(0.7, 0.15, 0.15), seed=0):
    """Random partition into train/validation/test of the given fractions.

    Counts are rounded by largest remainder so they always sum to
    ``n_samples``.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or fr[0] <= 0 or not np.isclose(fr.sum(), 1.0, atol=1e-9):
        raise InvalidArgumentError(f"fractions must be three nonnegative numbers summing to 1 with train > 0, got {fractions}")
    if n_samples < 1:
        raise InvalidArgumentError("need at least one sample to split")
    counts = _largest_remainder(n_samples, fr)
    perm = np.random.default_rng(seed).permutation(n_samples)
    a, b = counts[0], counts[0] + counts[1]
    return SplitSpec(np.sort(perm[:a]), np.sort(perm[a:b]), np.sort(perm[b:]), n_samples)


def split_temporal(n_samples, layout):
    """Contiguous segments assigned to labels.

    ``layout`` is a sequence of ``(label, size)`` laid end to end, where
    ``size`` is an int count, a float fraction of ``n_samples`` (floored) or
    ``None`` for "everything left"; or of explicit ``(label, start, stop)``
    ranges, which must not overlap.
    """
    parts = {name: [] for name in LABELS}
    ranges = []
    cursor = 0
    for entry in layout:
        label = entry[0]
        if label not in parts:
            raise InvalidArgumentError(f"unknown split label {label!r}")
        if len(entry) == 3:
            start, stop = int(entry[1]), int(entry[2])
        else:
            size = entry[1]
            if size is None:
                size = n_samples - cursor
            elif isinstance(size, float) and size < 1:
                size = int(math.floor(size * n_samples))
            start, stop = cursor, cursor + int(size)
        if start < 0 or stop < start:
            raise InvalidArgumentError(f"invalid segment {entry}")
        if stop > n_samples:
            raise InvalidArgumentError(f"segment {entry} extends past {n_samples} samples")
        for s0, s1 in ranges:
            if start < s1 and s0 < stop:
                raise InvalidArgumentError(f"segment {entry} overlaps [{s0}, {s1})")
        ranges.append((start, stop))
        parts[label].append(np.arange(start, stop))
        cursor = stop
    arrays = {k: np.sort(np.concatenate(v)) if v else np.zeros(0, dtype=int) for k, v in parts.items()}
    return SplitSpec(arrays[TRAIN], arrays[VALIDATION], arrays[TEST], n_samples)


SST_LAYOUT = ((TRAIN, 0.85), (VALIDATION, 20), (TEST, None))
TURBULENCE_LAYOUT = ((TRAIN, 1000), (VALIDATION, 50), (TRAIN, 100), (TEST, None))


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """Lag windows and their targets.

    ``inputs[j]`` holds the ``k`` measurements at times
    ``target_times[j] - k + 1 ... target_times[j]``.
    """

    inputs: np.ndarray  # (n, k, s)
    targets: np.ndarray  # (n, m)
    target_times: np.ndarray
    split: SplitSpec
    lag: int

    def __len__(self):
        return len(self.target_times)

    def subset(self, label):
        idx = self.split[label]
        return self.inputs[idx], self.targets[idx]

    def static(self):
        """Same samples with only the final measurement of each window as input."""
        return WindowedDataset(self.inputs[:, -1, :], self.targets, self.target_times, self.split, self.lag)

    def rescaled(self, sensor_scaler, state_scaler):
        inputs = self.inputs if sensor_scaler is None else sensor_scaler.transform(self.inputs)
        targets = self.targets if state_scaler is None else state_scaler.transform(self.targets)
        return WindowedDataset(inputs, targets, self.target_times, self.split, self.lag)


def n_windowed_samples(n_times, k):
    if k < 1:
        raise InvalidArgumentError(f"lag must be positive, got {k}")
    if n_times <= k:
        raise InvalidArgumentError(f"series of {n_times} snapshots too short for lag {k}")
    return n_times - k


def make_windows(measurements, states, k, split=None):
    """Emit the ``N - k`` reconstructable samples with targets at times ``k ... N-1``.

    Parameters
    ----------
    measurements : array (N, s) or MeasurementSeries
    states : array (N, m) or FieldSeries
    k : int
        Lag (window length).
    split : SplitSpec, optional
        Defaults to every sample in ``train``.
    """
    y = measurements.values if isinstance(measurements, MeasurementSeries) else np.asarray(measurements, dtype=np.float64)
    x = states.snapshots if isinstance(states, FieldSeries) else np.asarray(states, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if len(y) != len(x):
        raise ShapeError(f"{len(y)} measurement times vs {len(x)} state times")
    n = n_windowed_samples(len(y), k)
    if split is None:
        split = SplitSpec(np.arange(n), np.zeros(0, int), np.zeros(0, int), n)
    if split.n_samples != n:
        raise InvalidArgumentError(f"split covers {split.n_samples} samples, windows give {n}")
    times = np.arange(k, len(y))
    windows = np.lib.stride_tricks.sliding_window_view(y, k, axis=0)[1:]  # (n, s, k)
    windows = np.ascontiguousarray(np.swapaxes(windows, 1, 2))
    return WindowedDataset(windows, x[k:].copy(), times, split, k)
