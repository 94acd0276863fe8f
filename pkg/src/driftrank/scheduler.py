"""Data-reduction search orchestration and exact cost accounting.

Searches operate on a trace archive: the full-horizon traces of every
configuration trained once on the (possibly sub-sampled) stream.  Because
online training is deterministic, a truncated run's trace is exactly the
prefix of the full run's trace, so pruning decisions replayed on prefixes
are identical to decisions taken while training live (checkpoint/resume
transparency), while costs are counted as the examples a live run would
have processed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DriftRankError,
    EmptyEvaluationWindow,
    InvalidInterval,
    PredictorFailure,
    WindowUnderflow,
)
from .predictors import (
    ConstantPredictor,
    SliceWeights,
    StratifiedPredictor,
    TrajectoryPredictor,
)
from .ranking import Ranking
from .streams import Stream, SubsampleSpec, subsample_cost
from .traces import EvalWindow, PerformanceTrace, final_window_mean

MODES = ("one-shot", "performance-based", "late-start")
PREDICTOR_KINDS = ("constant", "trajectory", "stratified", "perfect")


@dataclass(frozen=True)
class TraceArchive:
    """Full traces of all configurations on one training stream."""

    traces: Mapping[int, PerformanceTrace]
    total_steps: int
    example_steps: np.ndarray  # sorted steps of the training stream examples
    diverged: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "traces", dict(self.traces))
        steps = np.asarray(self.example_steps, dtype=np.int64)
        steps.setflags(write=False)
        object.__setattr__(self, "example_steps", steps)
        object.__setattr__(self, "diverged", frozenset(self.diverged))

    @property
    def configs(self) -> tuple[int, ...]:
        return tuple(sorted(self.traces))

    def examples_up_to(self, step: int) -> int:
        return int(np.searchsorted(self.example_steps, step, side="right"))

    @classmethod
    def from_stream(cls, traces, stream: Stream, diverged=()) -> "TraceArchive":
        return cls(
            traces=traces,
            total_steps=stream.total_steps,
            example_steps=stream.steps,
            diverged=diverged,
        )


@dataclass(frozen=True)
class PredictorSpec:
    """Declarative predictor choice carried by a stopping plan."""

    kind: str = "constant"
    law: str = "inverse_power"
    inner: str = "trajectory"  # stratified only
    n_windows: int = 3
    window_width: int | None = None
    n_starts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "stratified":
            return f"stratified({self.inner})"
        return self.kind


def build_predictor(spec: PredictorSpec, delta: int, slice_weights: SliceWeights | None = None):
    if spec.kind == "constant":
        return ConstantPredictor(delta)
    if spec.kind == "trajectory":
        return TrajectoryPredictor(
            delta, law=spec.law, n_windows=spec.n_windows,
            window_width=spec.window_width, n_starts=spec.n_starts, seed=spec.seed,
        )
    if spec.kind == "stratified":
        if slice_weights is None:
            raise EmptyEvaluationWindow("stratified prediction needs slice weights")
        return StratifiedPredictor(
            delta, slice_weights, inner=spec.inner, law=spec.law,
            n_windows=spec.n_windows, window_width=spec.window_width,
            n_starts=spec.n_starts, seed=spec.seed,
        )
    raise ValueError(f"cannot build predictor {spec.kind!r}")


class PerfectPredictor:
    """Oracle predictor returning the true final metrics (testing aid)."""

    kind = "perfect"

    def __init__(self, metrics: Mapping[int, float]):
        self.metrics = dict(metrics)

    def predict_all(self, traces, configs, t_stop):
        return {c: self.metrics[c] for c in configs}


@dataclass(frozen=True)
class StoppingPlan:
    """One data-reduction schedule: mode, stop parameters, predictor."""

    mode: str
    predictor: PredictorSpec = PredictorSpec()
    t_stop: int | None = None
    t_stops: tuple[int, ...] = ()
    rho: float = 0.5
    start_step: int = 0
    subsample: SubsampleSpec | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "t_stops", tuple(int(t) for t in self.t_stops))
        if self.mode in ("one-shot", "late-start") and self.t_stop is None:
            raise ValueError(f"{self.mode} needs t_stop")
        if self.mode == "performance-based":
            if not 0.0 < self.rho < 1.0:
                raise ValueError("rho must lie in (0, 1)")
            if any(b <= a for a, b in zip(self.t_stops, self.t_stops[1:])):
                raise ValueError("t_stops must be strictly increasing")
        if self.start_step < 0:
            raise ValueError("start_step must be non-negative")


@dataclass(frozen=True)
class SearchOutcome:
    ranking: Ranking
    realized_cost: float
    per_config_stop: Mapping[int, int]
    prediction_log: tuple[tuple[int, dict[int, float]], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "per_config_stop", dict(self.per_config_stop))


def equally_spaced_stops(total_steps: int, spacing: int) -> tuple[int, ...]:
    """Stopping steps at spacing, 2*spacing, ... strictly below the horizon."""
    if spacing < 1:
        raise ValueError("spacing must be positive")
    return tuple(range(spacing, total_steps, spacing))


def _rank_items(predictions: Mapping[int, float]) -> list[int]:
    return sorted(predictions, key=lambda c: (predictions[c], c))


def _predict(predictor, archive: TraceArchive, configs: Sequence[int], t_stop: int):
    """Predictions with the divergence convention: diverged configs rank last."""
    live = [c for c in configs if c not in archive.diverged]
    try:
        predictions = predictor.predict_all(archive.traces, live, t_stop)
    except DriftRankError as exc:
        raise PredictorFailure(t_stop, exc) from exc
    out = dict(predictions)
    for c in configs:
        if c in archive.diverged:
            out[c] = math.inf
    return out


def _counted_cost(archive: TraceArchive, per_config_stop: Mapping[int, int]) -> float:
    """Examples the live runs would process, relative to full-data training.

    The denominator is |configs| * T: the cost of training everything on the
    full, un-sub-sampled stream (the ground-truth reference), so sub-sampled
    archives yield proportionally cheaper searches.
    """
    processed = sum(archive.examples_up_to(stop) for stop in per_config_stop.values())
    return processed / (len(per_config_stop) * archive.total_steps)


def _measured_final(archive: TraceArchive, delta: int) -> dict[int, float]:
    window = EvalWindow(end=archive.total_steps, width=delta)
    out = {}
    for c, trace in archive.traces.items():
        if c in archive.diverged:
            out[c] = math.inf
            continue
        try:
            out[c] = final_window_mean(trace, window)
        except DriftRankError:
            out[c] = math.inf
    return out


def one_shot_search(
    archive: TraceArchive, t_stop: int, delta: int, predictor
) -> SearchOutcome:
    """Stop every configuration at t_stop and rank by predicted performance."""
    if t_stop - delta < 1:
        raise WindowUnderflow(f"t_stop={t_stop} leaves no window of width {delta}")
    if not 1 <= t_stop <= archive.total_steps:
        raise InvalidInterval(f"t_stop={t_stop} outside [1, {archive.total_steps}]")
    configs = archive.configs
    predictions = _predict(predictor, archive, configs, t_stop)
    ranking = tuple(_rank_items(predictions))
    stops = {c: t_stop for c in configs}
    return SearchOutcome(
        ranking=ranking,
        realized_cost=_counted_cost(archive, stops),
        per_config_stop=stops,
        prediction_log=((t_stop, predictions),),
    )


def performance_based_search(
    archive: TraceArchive,
    t_stops: Sequence[int],
    rho: float,
    delta: int,
    predictor,
) -> SearchOutcome:
    """Iteratively stop the predicted-worst fraction rho at each stopping step.

    At each stopping step the remaining configurations are ranked by their
    predicted final performance and the worst ceil(rho * n_remaining) stop
    (always keeping at least one survivor); survivors train to the horizon
    and are ranked by their measured final-window metric.  The final ranking
    is survivors first, then the pruned groups, latest pruned first.
    """
    t_stops = tuple(int(t) for t in t_stops)
    if any(b <= a for a, b in zip(t_stops, t_stops[1:])):
        raise ValueError("t_stops must be strictly increasing")
    if t_stops and t_stops[-1] >= archive.total_steps:
        raise ValueError("stopping steps must lie strictly below the horizon")
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    configs = archive.configs
    remaining = list(configs)
    pruned_groups: list[list[int]] = []
    stops: dict[int, int] = {}
    log = []
    for t in t_stops:
        n_stop = min(math.ceil(rho * len(remaining)), len(remaining) - 1)
        if n_stop <= 0:
            break
        predictions = _predict(predictor, archive, remaining, t)
        log.append((t, predictions))
        order = _rank_items(predictions)
        pruned = order[len(order) - n_stop :]
        pruned_groups.append(pruned)
        for c in pruned:
            stops[c] = t
        remaining = [c for c in order if c not in set(pruned)]
    final_metrics = _measured_final(archive, delta)
    survivor_order = sorted(remaining, key=lambda c: (final_metrics[c], c))
    for c in remaining:
        stops[c] = archive.total_steps
    ranking: list[int] = list(survivor_order)
    for group in reversed(pruned_groups):
        ranking.extend(group)
    return SearchOutcome(
        ranking=tuple(ranking),
        realized_cost=_counted_cost(archive, stops),
        per_config_stop=stops,
        prediction_log=tuple(log),
    )


def late_start_search(
    archive: TraceArchive, start_step: int, t_stop: int, delta: int, predictor
) -> SearchOutcome:
    """One-shot search over runs that skipped the first start_step steps.

    The archive must have been trained on the stream suffix after
    ``start_step``; the counted cost covers only (start_step, t_stop].
    """
    if not 0 <= start_step < t_stop <= archive.total_steps:
        raise InvalidInterval(
            f"need 0 <= start_step < t_stop <= T, got [{start_step}, {t_stop}]"
        )
    if archive.example_steps.size and int(archive.example_steps[0]) <= start_step:
        raise InvalidInterval(
            "archive contains examples at or before the late start step"
        )
    if t_stop - delta < 1:
        raise WindowUnderflow(f"t_stop={t_stop} leaves no window of width {delta}")
    configs = archive.configs
    predictions = _predict(predictor, archive, configs, t_stop)
    ranking = tuple(_rank_items(predictions))
    stops = {c: t_stop for c in configs}
    return SearchOutcome(
        ranking=ranking,
        realized_cost=_counted_cost(archive, stops),
        per_config_stop=stops,
        prediction_log=((t_stop, predictions),),
    )


def stopping_cost(t_stops: Sequence[int], rho: float, total_steps: int) -> float:
    """Closed-form relative cost of performance-based stopping (continuous
    rho, no integer rounding): sum over segments of the surviving fraction."""
    boundaries = list(t_stops) + [total_steps]
    cost = 0.0
    prev = 0
    for i, t in enumerate(boundaries):
        cost += (1.0 - rho) ** i * (t - prev)
        prev = t
    return cost / total_steps


def cost_of_plan(
    plan: StoppingPlan, total_steps: int, class_counts: Mapping[int, int] | None = None
) -> float:
    """Analytic cost prediction for a plan: stopping cost times sub-sampling
    cost.  ``class_counts`` is required when the plan sub-samples."""
    if plan.mode == "one-shot":
        base = plan.t_stop / total_steps
    elif plan.mode == "late-start":
        base = (plan.t_stop - plan.start_step) / total_steps
    else:
        base = stopping_cost(plan.t_stops, plan.rho, total_steps)
    if plan.subsample is not None:
        if class_counts is None:
            raise ValueError("class counts are required to price sub-sampling")
        base *= subsample_cost(class_counts, plan.subsample)
    return base
