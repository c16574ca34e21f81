"""Time series containers, CSV ingestion, and time standardization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

MIN_POINTS = 4


class SeriesError(ValueError):
    """Raised for invalid or unusable series input."""


@dataclass(frozen=True)
class TimeSeries:
    """Observations ``values`` at strictly increasing ``times``.

    Immutable after construction; safe to share across workers.
    """

    times: np.ndarray
    values: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.ndim != 1:
            raise SeriesError("times and values must be 1-D")
        if len(times) != len(values):
            raise SeriesError("times and values must have equal length")
        if len(times) < MIN_POINTS:
            raise SeriesError(f"need at least {MIN_POINTS} points, got {len(times)}")
        if not np.all(np.isfinite(times)):
            raise SeriesError("non-finite time stamps")
        if not np.all(np.isfinite(values)):
            raise SeriesError("missing or non-finite values are rejected")
        if np.any(np.diff(times) <= 0):
            raise SeriesError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TimeMap:
    """Affine map between original time stamps and the unit interval."""

    t0: float
    span: float

    def to_unit(self, t):
        return (np.asarray(t, dtype=float) - self.t0) / self.span

    def to_original(self, u):
        return self.t0 + np.asarray(u, dtype=float) * self.span


@dataclass(frozen=True)
class Cycle:
    """One filtration run cut out of a monitoring stream.

    ``phase_bounds`` is a half-open index range into ``series`` marking the
    retained running phase (warm-up/cool-down excluded once trimmed).
    """

    series: TimeSeries
    source_offset: int = 0
    phase_bounds: tuple[int, int] = field(default=None)  # type: ignore[assignment]
    incomplete: bool = False

    def __post_init__(self):
        if self.phase_bounds is None:
            object.__setattr__(self, "phase_bounds", (0, len(self.series)))
        lo, hi = self.phase_bounds
        if not (0 <= lo < hi <= len(self.series)):
            raise SeriesError(f"phase_bounds {self.phase_bounds} outside series")

    def phase_series(self) -> TimeSeries:
        """The retained running phase as its own series."""
        lo, hi = self.phase_bounds
        if (lo, hi) == (0, len(self.series)):
            return self.series
        return TimeSeries(
            self.series.times[lo:hi], self.series.values[lo:hi], self.series.label
        )

    def phase_offset(self) -> int:
        """Index of the first retained sample in the parent stream."""
        return self.source_offset + self.phase_bounds[0]


def affine_to_unit(times: np.ndarray) -> tuple[np.ndarray, TimeMap]:
    """Map an increasing time vector onto [0, 1], keeping the map."""
    times = np.asarray(times, dtype=float)
    t0 = float(times[0])
    span = float(times[-1] - times[0])
    if span <= 0:
        raise SeriesError("degenerate time range")
    scaled = (times - t0) / span
    # pin the endpoints exactly so repeated application is a no-op
    scaled[0] = 0.0
    scaled[-1] = 1.0
    return scaled, TimeMap(t0, span)


def standardize_times(ts: TimeSeries) -> tuple[TimeSeries, TimeMap]:
    """Rescale ``ts.times`` onto [0, 1]; values untouched.

    Returns the rescaled series together with the affine map so results can
    be reported in original units. Idempotent on already-standardized input.
    """
    scaled, tmap = affine_to_unit(ts.times)
    return TimeSeries(scaled, ts.values, ts.label), tmap


def load_series(path, label: Optional[str] = None) -> TimeSeries:
    """Load a series from a comma-delimited file.

    Accepts two numeric columns (time, value) or a single value column with
    implied unit spacing; an optional single header row (or any row with a
    non-numeric cell) is skipped.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SeriesError(f"cannot read {path}: {exc}") from exc

    times, values = [], []
    n_cols = None
    for row in csv.reader(text.splitlines()):
        cells = [c.strip() for c in row if c.strip() != ""]
        if not cells:
            continue
        try:
            nums = [float(c) for c in cells]
        except ValueError:
            continue  # header or junk row
        if n_cols is None:
            n_cols = len(nums)
        if len(nums) != n_cols:
            raise SeriesError(f"inconsistent column count in {path}")
        if n_cols == 1:
            values.append(nums[0])
        else:
            times.append(nums[0])
            values.append(nums[1])

    if len(values) < MIN_POINTS:
        raise SeriesError(
            f"{path}: fewer than {MIN_POINTS} usable rows ({len(values)})"
        )
    if not times:
        times = list(range(len(values)))
    return TimeSeries(np.array(times), np.array(values), label or path.stem)


def save_series(ts: TimeSeries, path) -> None:
    """Write (time, value) rows; round-trips finite doubles bit-exactly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        for t, v in zip(ts.times, ts.values):
            fh.write(f"{t:.17g},{v:.17g}\n")


def cycle_to_dict(cycle: Cycle) -> dict:
    """JSON-ready description of a cycle."""
    return {
        "label": cycle.series.label,
        "source_offset": cycle.source_offset,
        "phase_bounds": list(cycle.phase_bounds),
        "incomplete": cycle.incomplete,
        "n": len(cycle.series),
        "times": [float(t) for t in cycle.series.times],
        "values": [float(v) for v in cycle.series.values],
    }


def cycle_from_dict(d: dict) -> Cycle:
    return Cycle(
        series=TimeSeries(np.array(d["times"]), np.array(d["values"]), d.get("label")),
        source_offset=int(d["source_offset"]),
        phase_bounds=tuple(d["phase_bounds"]),
        incomplete=bool(d.get("incomplete", False)),
    )


def save_cycles(cycles: list[Cycle], path) -> None:
    Path(path).write_text(json.dumps([cycle_to_dict(c) for c in cycles], indent=1))


def load_cycles(path) -> list[Cycle]:
    return [cycle_from_dict(d) for d in json.loads(Path(path).read_text())]


def trim_phase(cycle: Cycle, left: int, right: int) -> Cycle:
    """Narrow the retained phase by ``left``/``right`` samples."""
    lo, hi = cycle.phase_bounds
    return replace(cycle, phase_bounds=(lo + left, hi - right))
