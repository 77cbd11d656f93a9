"""Trajectory ingestion, windowing into training pairs, and standardization.

The raw unit is a :class:`Trajectory` (a time grid plus state vectors, read
from CSV).  Windowing slices trajectories into training pairs: a past window
re-anchored so its last sample sits at time 0, a forecast time in (0, 1]
after normalization, and a scalar target.  All pairs of a
:class:`TrainingSet` share one past-window grid; the quadrature weights of
the equivariant kernels rely on that.

Everything here is immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Trajectory",
    "TrainingPair",
    "TrainingSet",
    "Standardizer",
    "load_trajectories",
    "save_trajectories",
    "window_dataset",
    "standardize",
]


class DataError(ValueError):
    """Malformed input data (bad CSV row, broken grid, ...)."""


@dataclass(frozen=True)
class Trajectory:
    """A sampled path: strictly increasing times and one state per sample.

    ``outputs`` holds the optional extra output column of the CSV format;
    it is None when the target is a state coordinate.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[1] < 1:
            raise DataError("states must be (points, n) with n >= 1")
        if times.ndim != 1 or len(times) != len(states):
            raise DataError("times and states must have equal length")
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise DataError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        if self.outputs is not None:
            outputs = np.asarray(self.outputs, dtype=float)
            if outputs.shape != times.shape:
                raise DataError("outputs must match times in length")
            object.__setattr__(self, "outputs", outputs)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class TrainingPair:
    """One (past window, forecast time, target) triple.

    ``past.times`` ends at exactly 0; ``forecast_time`` is nonnegative.
    """

    past: Trajectory
    forecast_time: float
    target: float

    def __post_init__(self):
        if self.past.times[-1] != 0.0:
            raise DataError("past window must be anchored at time 0")
        if self.forecast_time < 0:
            raise DataError("forecast_time must be >= 0")


@dataclass(frozen=True)
class Standardizer:
    """Affine maps applied to targets, forecast times and window states.

    ``time_scale`` is the raw-time length of the forecast horizon; dividing
    raw times by it puts forecast times in [0, 1].  Target and per-coordinate
    state statistics make both zero-mean/unit-variance.  The round trip
    standardize -> destandardize is the identity to 1e-10.
    """

    target_mean: float
    target_std: float
    time_scale: float
    state_means: np.ndarray
    state_stds: np.ndarray

    def __post_init__(self):
        if not self.target_std > 0:
            raise DataError("target_std must be > 0")
        if not self.time_scale > 0:
            raise DataError("time_scale must be > 0")
        object.__setattr__(self, "state_means", np.asarray(self.state_means, dtype=float))
        object.__setattr__(self, "state_stds", np.asarray(self.state_stds, dtype=float))
        if not np.all(self.state_stds > 0):
            raise DataError("state_stds must all be > 0")

    @classmethod
    def identity(cls, n: int, time_scale: float = 1.0) -> "Standardizer":
        return cls(0.0, 1.0, time_scale, np.zeros(n), np.ones(n))

    # -- targets ---------------------------------------------------------
    def standardize_targets(self, y):
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_std

    def destandardize_targets(self, y):
        return np.asarray(y, dtype=float) * self.target_std + self.target_mean

    def destandardize_variance(self, var):
        return np.asarray(var, dtype=float) * self.target_std**2

    # -- states ----------------------------------------------------------
    def transform_states(self, x):
        return (np.asarray(x, dtype=float) - self.state_means) / self.state_stds

    def inverse_transform_states(self, x):
        return np.asarray(x, dtype=float) * self.state_stds + self.state_means

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "target_mean": self.target_mean,
            "target_std": self.target_std,
            "time_scale": self.time_scale,
            "state_means": self.state_means.tolist(),
            "state_stds": self.state_stds.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(
            d["target_mean"],
            d["target_std"],
            d["time_scale"],
            np.array(d["state_means"], dtype=float),
            np.array(d["state_stds"], dtype=float),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Standardizer":
        return cls.from_dict(json.loads(s))


class TrainingSet:
    """Windowed training pairs stored columnwise.

    Distinct past windows are kept once in ``windows`` (count P); every pair
    references one by index.  This grouping is what the kernel engine
    exploits, and it guarantees the shared-grid invariant structurally: all
    pairs point at the single ``window_grid`` array.
    """

    def __init__(self, window_grid, windows, pair_window, times, targets, standardizer):
        self.window_grid = np.asarray(window_grid, dtype=float)
        self.windows = np.asarray(windows, dtype=float)
        self.pair_window = np.asarray(pair_window, dtype=np.int64)
        self.times = np.asarray(times, dtype=float)
        self.targets = np.asarray(targets, dtype=float)
        self.standardizer = standardizer
        if len(self.pair_window) == 0:
            raise DataError("TrainingSet must be nonempty")
        if self.window_grid[-1] != 0.0:
            raise DataError("window grid must end at 0")
        if not (len(self.pair_window) == len(self.times) == len(self.targets)):
            raise DataError("pair columns must have equal length")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def n_pairs(self) -> int:
        return len(self.times)

    @property
    def n_windows(self) -> int:
        return self.windows.shape[0]

    @property
    def state_dim(self) -> int:
        return self.windows.shape[2]

    @property
    def pairs(self) -> list[TrainingPair]:
        """Materialize pair views; the grid array is shared, never copied."""
        out = []
        for k in range(self.n_pairs):
            past = Trajectory(self.window_grid, self.windows[self.pair_window[k]])
            out.append(TrainingPair(past, float(self.times[k]), float(self.targets[k])))
        return out

    def subset(self, indices) -> "TrainingSet":
        indices = np.asarray(indices, dtype=np.int64)
        used, inverse = np.unique(self.pair_window[indices], return_inverse=True)
        return TrainingSet(
            self.window_grid,
            self.windows[used],
            inverse,
            self.times[indices],
            self.targets[indices],
            self.standardizer,
        )

    def grouped_times(self) -> np.ndarray | None:
        """Shared per-window forecast-time vector, or None if irregular.

        When every window carries the same time grid in window-major order,
        Gram assembly can run blockwise.
        """
        n, p = self.n_pairs, self.n_windows
        if p == 0 or n % p != 0:
            return None
        h = n // p
        if not np.array_equal(self.pair_window, np.repeat(np.arange(p), h)):
            return None
        t = self.times.reshape(p, h)
        if not np.all(t == t[0]):
            return None
        return t[0]


def load_trajectories(path, n: int) -> list[Trajectory]:
    """Read trajectories from CSV with header ``traj_id,t,x1..xn[,y]``.

    Rows for one traj_id must be contiguous and sorted by t.  Malformed
    rows, non-monotone times, duplicate times and inconsistent dimensions
    raise :class:`DataError` naming the offending line.  An empty file
    yields an empty list.
    """
    groups: dict[str, list] = {}
    order: list[str] = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        width = len(header)
        has_output = width == n + 3
        if not (width == n + 2 or has_output):
            raise DataError(
                f"{path}: header has {width} columns, expected {n + 2} "
                f"(traj_id,t,x1..x{n}) or {n + 3} (with output column)"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            tid = row[0]
            try:
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if tid not in groups:
                groups[tid] = []
                order.append(tid)
            rows = groups[tid]
            if rows:
                t_prev = rows[-1][0]
                if values[0] == t_prev:
                    raise DataError(f"{path}:{lineno}: duplicate time for traj_id {tid!r}")
                if values[0] < t_prev:
                    raise DataError(f"{path}:{lineno}: non-monotone time for traj_id {tid!r}")
            rows.append(values)

    out = []
    for tid in order:
        arr = np.array(groups[tid], dtype=float)
        times = arr[:, 0]
        states = arr[:, 1 : 1 + n]
        outputs = arr[:, 1 + n] if has_output else None
        out.append(Trajectory(times, states, outputs))
    return out


def save_trajectories(path, trajectories: list[Trajectory]) -> None:
    """Write trajectories in the CSV format read by :func:`load_trajectories`."""
    if trajectories:
        n = trajectories[0].dim
        has_output = trajectories[0].outputs is not None
    else:
        n, has_output = 1, False
    header = ["traj_id", "t"] + [f"x{i + 1}" for i in range(n)] + (["y"] if has_output else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, traj in enumerate(trajectories):
            for i in range(len(traj)):
                row = [str(k), repr(float(traj.times[i]))]
                row += [repr(float(v)) for v in traj.states[i]]
                if has_output:
                    row.append(repr(float(traj.outputs[i])))
                writer.writerow(row)


def _check_equidistant(times: np.ndarray, what: str) -> float:
    steps = np.diff(times)
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=1e-6, atol=0.0):
        raise DataError(f"{what}: grid is not equidistant")
    return dt


def window_dataset(
    trajectories: list[Trajectory],
    output_index,
    past_points: int,
    horizon_points: int,
    stride: int | None = None,
) -> TrainingSet:
    """Slice trajectories into training pairs.

    Each anchor index yields ``horizon_points`` pairs: the past window is the
    ``past_points`` samples ending at the anchor (shifted so the anchor is
    time 0) and pair k targets the output at anchor+k.  Times are then
    divided by horizon_points * dt so the largest forecast time is exactly 1.

    ``output_index`` selects the target: a state coordinate index, or the
    string "y" for the extra output column.  ``stride`` is the anchor step;
    None means disjoint windows (stride = past_points + horizon_points),
    matching the benchmark default.
    """
    if past_points < 1 or horizon_points < 1:
        raise DataError("past_points and horizon_points must be >= 1")
    if stride is None:
        stride = past_points + horizon_points
    if stride < 1:
        raise DataError("stride must be >= 1")
    if not trajectories:
        raise DataError("no trajectories to window")

    n = trajectories[0].dim
    dt = None
    windows, win_times, win_targets = [], [], []
    for k, traj in enumerate(trajectories):
        if traj.dim != n:
            raise DataError(f"trajectory {k}: dimension {traj.dim} != {n}")
        if len(traj) < past_points + horizon_points:
            raise DataError(
                f"trajectory {k}: {len(traj)} points < past+horizon = "
                f"{past_points + horizon_points}"
            )
        step = _check_equidistant(traj.times, f"trajectory {k}")
        if dt is None:
            dt = step
        elif not math.isclose(step, dt, rel_tol=1e-6):
            raise DataError(f"trajectory {k}: sample period {step} != {dt} of trajectory 0")

        if output_index == "y":
            if traj.outputs is None:
                raise DataError(f"trajectory {k}: no output column but output_index='y'")
            target_series = traj.outputs
        else:
            c = int(output_index)
            if not 0 <= c < n:
                raise DataError(f"output_index {c} out of range for dimension {n}")
            target_series = traj.states[:, c]

        first = past_points - 1
        last = len(traj) - 1 - horizon_points
        for anchor in range(first, last + 1, stride):
            states = traj.states[anchor - past_points + 1 : anchor + 1]
            windows.append(states)
            win_times.append(dt * np.arange(1, horizon_points + 1))
            win_targets.append(target_series[anchor + 1 : anchor + 1 + horizon_points])

    time_scale = horizon_points * dt
    grid = np.arange(-(past_points - 1), 1, dtype=float) * dt / time_scale
    grid[-1] = 0.0
    p = len(windows)
    return TrainingSet(
        grid,
        np.stack(windows),
        np.repeat(np.arange(p), horizon_points),
        np.concatenate(win_times) / time_scale,
        np.concatenate(win_targets),
        Standardizer.identity(n, time_scale),
    )


def standardize(training: TrainingSet) -> tuple[TrainingSet, Standardizer]:
    """Zero-mean/unit-variance targets and per-coordinate window states.

    Returns the transformed set and the fitted :class:`Standardizer` (which
    also carries the time scale recorded at windowing).  Raises on constant
    targets.
    """
    y = training.targets
    mu, sd = float(np.mean(y)), float(np.std(y))
    if sd == 0.0:
        raise DataError("target variance is zero; cannot standardize")
    flat = training.windows.reshape(-1, training.state_dim)
    s_mu = flat.mean(axis=0)
    s_sd = flat.std(axis=0)
    s_sd = np.where(s_sd > 0, s_sd, 1.0)
    out = Standardizer(mu, sd, training.standardizer.time_scale, s_mu, s_sd)
    return apply_standardizer(training, out), out


def apply_standardizer(training: TrainingSet, std: Standardizer) -> TrainingSet:
    """Transform a set with an existing standardizer (e.g. test data)."""
    return TrainingSet(
        training.window_grid,
        (training.windows - std.state_means) / std.state_stds,
        training.pair_window,
        training.times,
        std.standardize_targets(training.targets),
        std,
    )
