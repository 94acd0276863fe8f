"""Per-configuration performance traces and windowed aggregation.

A trace holds loss-oriented metric values recorded at strictly increasing
steps in [1, horizon].  Metrics may be recorded at a stride larger than one
step; window means average over recorded points only.  Traces are immutable
after construction and safe to share between workers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import EmptyWindow, StepMismatch, TraceIncomplete

SliceSeries = tuple[np.ndarray, np.ndarray]  # (steps, values), loss-oriented


@dataclass(frozen=True)
class EvalWindow:
    """Closed step interval [end - width, end]."""

    end: int
    width: int

    def __post_init__(self):
        if self.width < 0:
            raise ValueError("window width must be non-negative")
        if self.end - self.width < 1:
            raise ValueError("window must start at step >= 1")

    @property
    def lo(self) -> int:
        return self.end - self.width


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.base is not None:
        arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PerformanceTrace:
    """Loss metric values of one configuration at recorded steps.

    ``slices`` optionally maps a slice id to the (steps, values) series
    restricted to examples of that slice; slice steps must be a subset of the
    aggregate step set.
    """

    config: int
    steps: np.ndarray
    values: np.ndarray
    horizon: int
    slices: Mapping[int, SliceSeries] | None = None

    def __post_init__(self):
        object.__setattr__(self, "steps", _frozen_array(self.steps, np.int64))
        object.__setattr__(self, "values", _frozen_array(self.values, np.float64))
        if self.steps.ndim != 1 or self.steps.shape != self.values.shape:
            raise ValueError("steps and values must be 1-d arrays of equal length")
        if self.steps.size:
            if self.steps[0] < 1 or self.steps[-1] > self.horizon:
                raise ValueError("steps must lie in [1, horizon]")
            if np.any(np.diff(self.steps) <= 0):
                raise ValueError("steps must be strictly increasing")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.slices is not None:
            step_set = set(self.steps.tolist())
            frozen = {}
            for sid, (s_steps, s_values) in self.slices.items():
                s_steps = _frozen_array(s_steps, np.int64)
                s_values = _frozen_array(s_values, np.float64)
                if s_steps.shape != s_values.shape:
                    raise ValueError(f"slice {sid}: steps/values length mismatch")
                if not set(s_steps.tolist()) <= step_set:
                    raise ValueError(f"slice {sid}: steps not a subset of aggregate steps")
                frozen[int(sid)] = (s_steps, s_values)
            object.__setattr__(self, "slices", frozen)

    @property
    def last_step(self) -> int:
        return int(self.steps[-1]) if self.steps.size else 0

    def truncated(self, step: int) -> "PerformanceTrace":
        """Trace restricted to recorded steps <= ``step`` (horizon kept)."""
        keep = self.steps <= step
        slices = None
        if self.slices is not None:
            slices = {
                sid: (s[s <= step], v[s <= step])
                for sid, (s, v) in self.slices.items()
            }
        return PerformanceTrace(
            config=self.config,
            steps=self.steps[keep],
            values=self.values[keep],
            horizon=self.horizon,
            slices=slices,
        )

    def slice_trace(self, slice_id: int) -> "PerformanceTrace":
        """The trace restricted to one slice, as a plain trace."""
        if self.slices is None or slice_id not in self.slices:
            raise KeyError(f"no slice {slice_id} on config {self.config}")
        s, v = self.slices[slice_id]
        return PerformanceTrace(self.config, s, v, self.horizon)


def window_mean(trace: PerformanceTrace, lo: int, hi: int) -> float:
    """Arithmetic mean of recorded values with step in the closed [lo, hi]."""
    mask = (trace.steps >= lo) & (trace.steps <= hi)
    if not mask.any():
        raise EmptyWindow(f"no recorded step of config {trace.config} in [{lo}, {hi}]")
    return float(trace.values[mask].mean())


def final_window_mean(trace: PerformanceTrace, window: EvalWindow) -> float:
    """Ground-truth target: mean over the final evaluation window."""
    if trace.last_step < window.lo:
        raise TraceIncomplete(
            f"config {trace.config} stops at {trace.last_step}, "
            f"before window start {window.lo}"
        )
    return window_mean(trace, window.lo, window.end)


def relative_trace(trace: PerformanceTrace, reference: PerformanceTrace) -> PerformanceTrace:
    """Pointwise difference trace - reference over their overlapping steps.

    Differencing against a shared reference removes time variation common to
    all configurations.  The two traces must record exactly the same steps
    inside the overlap of their step ranges.
    """
    if not trace.steps.size or not reference.steps.size:
        raise StepMismatch("cannot difference an empty trace")
    lo = max(int(trace.steps[0]), int(reference.steps[0]))
    hi = min(int(trace.steps[-1]), int(reference.steps[-1]))
    if lo > hi:
        raise StepMismatch("traces have no overlapping step range")
    a_mask = (trace.steps >= lo) & (trace.steps <= hi)
    b_mask = (reference.steps >= lo) & (reference.steps <= hi)
    a_steps = trace.steps[a_mask]
    b_steps = reference.steps[b_mask]
    if a_steps.shape != b_steps.shape or np.any(a_steps != b_steps):
        raise StepMismatch(
            f"configs {trace.config} and {reference.config} record different "
            f"steps on [{lo}, {hi}]"
        )
    return PerformanceTrace(
        config=trace.config,
        steps=a_steps,
        values=trace.values[a_mask] - reference.values[b_mask],
        horizon=min(trace.horizon, reference.horizon),
    )


# --- trace file format ------------------------------------------------------
# One record per line: config_id,step,metric[,slice_id]; header required.

_HEADER = ["config_id", "step", "metric", "slice_id"]


def write_traces(path, traces: Iterable[PerformanceTrace]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_HEADER)
        for trace in traces:
            for s, v in zip(trace.steps.tolist(), trace.values.tolist()):
                writer.writerow([trace.config, s, repr(v), ""])
            if trace.slices is not None:
                for sid in sorted(trace.slices):
                    s_steps, s_values = trace.slices[sid]
                    for s, v in zip(s_steps.tolist(), s_values.tolist()):
                        writer.writerow([trace.config, s, repr(v), sid])


def read_traces(path, horizon: int | None = None) -> dict[int, PerformanceTrace]:
    """Read a trace file; ``horizon`` defaults to each config's last step."""
    agg: dict[int, list[tuple[int, float]]] = {}
    sliced: dict[int, dict[int, list[tuple[int, float]]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != _HEADER[:3]:
            raise ValueError(f"{path}: missing or malformed header line")
        for row in reader:
            if not row:
                continue
            config, step, metric = int(row[0]), int(row[1]), float(row[2])
            slice_field = row[3].strip() if len(row) > 3 else ""
            if slice_field:
                sliced.setdefault(config, {}).setdefault(int(slice_field), []).append(
                    (step, metric)
                )
            else:
                agg.setdefault(config, []).append((step, metric))
    out = {}
    for config, points in agg.items():
        points.sort()
        steps = np.array([p[0] for p in points], dtype=np.int64)
        values = np.array([p[1] for p in points], dtype=np.float64)
        slices = None
        if config in sliced:
            slices = {}
            for sid, s_points in sliced[config].items():
                s_points.sort()
                slices[sid] = (
                    np.array([p[0] for p in s_points], dtype=np.int64),
                    np.array([p[1] for p in s_points], dtype=np.float64),
                )
        out[config] = PerformanceTrace(
            config=config,
            steps=steps,
            values=values,
            horizon=horizon if horizon is not None else int(steps[-1]),
            slices=slices,
        )
    return out
