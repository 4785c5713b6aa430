"""POD bases, sensor placement and gappy-POD reconstruction (the QR/POD baseline)."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .datasets import FieldSeries
from .errors import InvalidArgumentError, ShapeError
from .linalg import SINGULAR_TOL, qr_pivoted, solve_linear, svd_thin, truncate

QR_PIVOT, RANDOM, USER = "qr_pivot", "random", "user"


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Leading left singular vectors of a snapshot matrix.

    ``modes`` has one row per state-vector entry; ``valid_indices`` maps those
    rows to flat grid indices (identity when the grid has no mask).
    """

    modes: np.ndarray
    singular_values: np.ndarray
    mean_removed: bool = False
    mean: np.ndarray = None
    valid_indices: np.ndarray = None

    def __post_init__(self):
        if self.modes.ndim != 2 or self.modes.shape[1] < 1:
            raise ShapeError(f"modes must be (m, r >= 1), got {self.modes.shape}")
        if self.valid_indices is None:
            object.__setattr__(self, "valid_indices", np.arange(self.modes.shape[0]))

    @property
    def rank(self):
        return self.modes.shape[1]

    @property
    def state_dim(self):
        return self.modes.shape[0]

    def rows(self, grid_indices):
        """Mode rows belonging to flat grid indices."""
        idx = np.asarray(grid_indices, dtype=np.int64)
        pos = np.searchsorted(self.valid_indices, idx)
        pos = np.minimum(pos, len(self.valid_indices) - 1)
        if not np.all(self.valid_indices[pos] == idx):
            raise InvalidArgumentError(f"sensor indices {idx[self.valid_indices[pos] != idx].tolist()} are not basis locations")
        return pos

    def energy_fraction(self, total_energy):
        return float(np.sum(self.singular_values**2) / total_energy)


@dataclass(frozen=True)
class SensorSet:
    """Ordered, distinct flat grid indices; the order fixes the measurement layout."""

    indices: tuple
    placement_method: str = USER

    def __post_init__(self):
        idx = tuple(int(i) for i in np.asarray(self.indices).reshape(-1))
        if len(set(idx)) != len(idx):
            raise InvalidArgumentError(f"sensor indices must be distinct, got {idx}")
        if any(i < 0 for i in idx):
            raise InvalidArgumentError(f"sensor indices must be nonnegative, got {idx}")
        if self.placement_method not in (QR_PIVOT, RANDOM, USER):
            raise InvalidArgumentError(f"unknown placement method {self.placement_method!r}")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)


def fit_pod(training_states, r, mean_removed=False):
    """Rank-``r`` POD basis of the training snapshots.

    Parameters
    ----------
    training_states : FieldSeries or array (N, m)
        Snapshots as rows; the data matrix has them as columns.
    r : int
    mean_removed : bool
        Subtract the temporal mean before the SVD (off by default).
    """
    if isinstance(training_states, FieldSeries):
        snaps, valid = training_states.snapshots, training_states.valid_indices
    else:
        snaps, valid = np.asarray(training_states, dtype=np.float64), None
    n, m = snaps.shape
    if not 1 <= r <= min(m, n):
        raise InvalidArgumentError(f"POD rank {r} outside [1, min(m, N) = {min(m, n)}]")
    mean = snaps.mean(axis=0) if mean_removed else None
    data = (snaps - mean) if mean_removed else snaps
    svd = truncate(svd_thin(data.T), r)
    return PodBasis(svd.u, svd.singular_values, mean_removed, mean, valid)


def _candidates(valid_indices, mask):
    if mask is None:
        return np.arange(len(valid_indices))
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    return np.flatnonzero(mask[valid_indices])


def qr_place_sensors(basis, n_sensors, mask=None):
    """Greedy placement from pivoted QR of the transposed modes.

    ``mask`` (flat over the grid, True = allowed) further restricts candidate
    locations. Beyond ``r`` sensors the residual vanishes, so the extra
    picks follow lowest index among the remaining locations.
    """
    cand = _candidates(basis.valid_indices, mask)
    if n_sensors < 1 or n_sensors > len(cand):
        raise InvalidArgumentError(f"cannot place {n_sensors} sensors on {len(cand)} available locations")
    piv = qr_pivoted(basis.modes[cand].T).pivots[:n_sensors]
    return SensorSet(tuple(basis.valid_indices[cand[piv]]), QR_PIVOT)


def random_place_sensors(m, n_sensors, seed, mask=None):
    """Uniform draw without replacement from the ``m`` grid locations (unmasked only)."""
    cand = np.arange(m) if mask is None else np.flatnonzero(np.asarray(mask, dtype=bool).reshape(-1))
    if n_sensors < 1 or n_sensors > len(cand):
        raise InvalidArgumentError(f"cannot place {n_sensors} sensors on {len(cand)} available locations")
    rng = np.random.default_rng(seed)
    return SensorSet(tuple(rng.choice(cand, size=n_sensors, replace=False)), RANDOM)


def gappy_reconstruct(basis, sensors, y):
    """Full-state estimate ``U_r (C U_r)^+ y``.

    ``y`` is one measurement vector or a (T, n_sensors) block; square
    systems are inverted exactly, oversampled ones solved by least squares.
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    block = y[None] if single else y
    if block.shape[1] != len(sensors) or len(sensors) < 1:
        raise InvalidArgumentError(f"measurement size {block.shape[1]} != sensor count {len(sensors)}")
    rows = basis.rows(sensors.indices)
    if basis.mean_removed:
        block = block - basis.mean[rows]
    coeffs = solve_linear(basis.modes[rows], block.T)
    x = (basis.modes @ coeffs).T
    if basis.mean_removed:
        x = x + basis.mean
    return x[0] if single else x


class PlacementObjective(NamedTuple):
    log_abs_det: float
    singular: bool


def placement_objective(basis, sensors):
    """``log |det(C U_r)|`` from the singular values of the square sensed modes."""
    if len(sensors) != basis.rank:
        raise InvalidArgumentError(f"objective needs {basis.rank} sensors, got {len(sensors)}")
    s = svd_thin(basis.modes[basis.rows(sensors.indices)]).singular_values
    if s[-1] <= SINGULAR_TOL * s[0] or s[-1] == 0:
        return PlacementObjective(-np.inf, True)
    return PlacementObjective(float(np.sum(np.log(s))), False)
