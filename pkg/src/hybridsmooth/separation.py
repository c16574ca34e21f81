"""Splitting a monitoring stream into cycles and trimming their ends.

Cycle boundaries come from inner products of short zero-sum kernels with
the stream: a slope kernel arms the start of a run, an edge kernel (and a
spike kernel) fire on the reset drop that ends it, with starts and ends
forced to alternate.  Scores are compared against multiples of the
stream's robust difference scale, so separation is invariant to level
shifts.  An optional on/off channel bypasses the kernels entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .series import Cycle, SeriesError, TimeSeries, trim_phase


@dataclass(frozen=True)
class Kernel:
    """Zero-sum filter with its role and threshold multiplier.

    start kernels fire where score >= mult * scale; end kernels fire where
    score <= -mult * scale.
    """

    weights: np.ndarray
    role: Literal["start", "end"]
    mult: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if len(w) == 0:
            raise ValueError("kernel must be nonempty")
        if abs(w.sum()) > 1e-9 * np.abs(w).sum():
            raise ValueError("kernel weights must sum to zero")
        if self.mult <= 0 or not np.isfinite(self.mult):
            raise ValueError("threshold multiplier must be positive finite")


@dataclass(frozen=True)
class SeparationConfig:
    kernels: tuple = ()
    trim_fraction: float = 0.1
    min_cycle: int = 10

    def __post_init__(self):
        if not 0.0 <= self.trim_fraction <= 0.25:
            raise ValueError("trim_fraction must lie in [0, 0.25]")
        if not self.kernels:
            object.__setattr__(self, "kernels", default_kernels())


def default_kernels(half_width: int = 6) -> tuple:
    """Slope detector for starts; level-drop and dip detectors for ends."""
    ramp = np.linspace(-1.0, 1.0, 2 * half_width)
    edge = np.concatenate([-np.ones(half_width), np.ones(half_width)])
    spike = np.array([1.0, -2.0, 1.0])
    return (
        Kernel(ramp, "start", 6.0),
        Kernel(edge, "end", 12.0),
        Kernel(spike, "end", 20.0),
    )


def robust_scale(values: np.ndarray) -> float:
    """Scale of typical step-to-step movement, insensitive to the resets."""
    dv = np.diff(values)
    mad = np.median(np.abs(dv - np.median(dv)))
    scale = 1.4826 * float(mad)
    floor = 1e-9 * float(np.ptp(values))
    return max(scale, floor, 1e-300)


def _kernel_events(values: np.ndarray, kernel: Kernel, scale: float) -> np.ndarray:
    """Boolean event mask at stream positions (kernel center convention)."""
    n = len(values)
    mask = np.zeros(n, dtype=bool)
    klen = len(kernel.weights)
    if n < klen:
        return mask
    score = np.correlate(values, kernel.weights, mode="valid")
    positions = np.arange(len(score)) + klen // 2
    if kernel.role == "start":
        hit = score >= kernel.mult * scale
    else:
        hit = score <= -kernel.mult * scale
    mask[positions[hit]] = True
    return mask


def _refine_start(dv: np.ndarray, pos: int, window: int) -> int:
    lo = max(pos - window, 0)
    hi = min(pos + window, len(dv))
    if hi <= lo:
        return pos
    seg = dv[lo:hi]
    top = seg.max()
    if top <= 0:
        return pos
    first = lo + int(np.argmax(seg >= 0.5 * top))
    return first


def _refine_end(dv: np.ndarray, pos: int, window: int) -> int:
    lo = max(pos - window, 0)
    hi = min(pos + window, len(dv))
    if hi <= lo:
        return pos
    return lo + int(np.argmin(dv[lo:hi]))


def separate_cycles(
    stream: TimeSeries,
    config: SeparationConfig = SeparationConfig(),
    onoff: Optional[np.ndarray] = None,
) -> list[Cycle]:
    """Cut the stream into disjoint, ordered cycles.

    With an on/off channel, cycles are simply the maximal on-runs.  An
    unmatched start at the stream end yields a cycle flagged incomplete.
    Returns an empty list when nothing fires.
    """
    values = stream.values
    n = len(values)
    if onoff is not None:
        return _cycles_from_onoff(stream, np.asarray(onoff))

    longest = max(len(k.weights) for k in config.kernels)
    if n < longest:
        raise SeriesError(
            f"stream length {n} shorter than the longest kernel ({longest})"
        )
    scale = robust_scale(values)
    start_mask = np.zeros(n, dtype=bool)
    end_mask = np.zeros(n, dtype=bool)
    for kernel in config.kernels:
        mask = _kernel_events(values, kernel, scale)
        if kernel.role == "start":
            start_mask |= mask
        else:
            end_mask |= mask

    dv = np.diff(values)
    window = longest
    cycles: list[Cycle] = []
    begin: Optional[int] = None
    t = 0
    while t < n:
        if begin is None:
            if start_mask[t]:
                begin = max(_refine_start(dv, t, window), 0)
                if cycles and begin <= cycles[-1].source_offset + len(cycles[-1].series) - 1:
                    begin = cycles[-1].source_offset + len(cycles[-1].series)
                t = max(t, begin) + 1
                continue
        else:
            if end_mask[t]:
                last = _refine_end(dv, t, window)
                if last - begin + 1 >= 4:
                    cycles.append(_make_cycle(stream, begin, last + 1, False))
                    begin = None
                    t = last + 1
                    continue
        t += 1
    if begin is not None and n - begin >= 4:
        cycles.append(_make_cycle(stream, begin, n, True))
    return cycles


def _make_cycle(stream: TimeSeries, lo: int, hi: int, incomplete: bool) -> Cycle:
    label = f"{stream.label or 'stream'}[{lo}:{hi}]"
    series = TimeSeries(stream.times[lo:hi], stream.values[lo:hi], label)
    return Cycle(series=series, source_offset=lo, incomplete=incomplete)


def _cycles_from_onoff(stream: TimeSeries, onoff: np.ndarray) -> list[Cycle]:
    if len(onoff) != len(stream):
        raise SeriesError("on/off channel length mismatch")
    on = onoff > 0.5
    cycles = []
    boundaries = np.flatnonzero(np.diff(on.astype(int)))
    starts = [0] if on[0] else []
    starts += [b + 1 for b in boundaries if on[b + 1]]
    ends = [b + 1 for b in boundaries if on[b]]
    if on[-1]:
        ends.append(len(on))
    for lo, hi in zip(starts, ends):
        if hi - lo >= 4:
            cycles.append(_make_cycle(stream, lo, hi, hi == len(on) and bool(on[-1])))
    return cycles


def trim_cycle(cycle: Cycle, config: SeparationConfig = SeparationConfig()) -> Cycle:
    """Drop the end runs of extreme first differences from the phase.

    Contiguous runs at either end whose |difference| exceeds the top
    ``trim_fraction`` quantile are removed; the interior is untouched.
    Applying the trim twice changes nothing (the second pass sees
    homogeneous ends).
    """
    lo, hi = cycle.phase_bounds
    if hi - lo < 10:
        raise SeriesError("cycle too short to trim (need >= 10 samples)")
    values = cycle.series.values[lo:hi]
    d = np.abs(np.diff(values))
    if config.trim_fraction == 0.0 or np.all(d == d[0]):
        return cycle
    threshold = np.quantile(d, 1.0 - config.trim_fraction)
    left = 0
    while left < len(d) and d[left] > threshold:
        left += 1
    right = 0
    while right < len(d) - left and d[len(d) - 1 - right] > threshold:
        right += 1
    if (hi - lo) - left - right < 4:
        raise SeriesError("cycle too short after trimming")
    return trim_phase(cycle, left, right)
