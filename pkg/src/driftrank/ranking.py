"""Ranking-quality metrics: pairwise error rate, regret, and regret@k.

All metrics compare a predicted ordering (best first) against the ground
truth built from final-window means of fully trained configurations.
Metrics are loss-oriented: smaller is better.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import KOutOfRange, NonPositiveReference, NotAPermutation, TooFewConfigs

Ranking = tuple[int, ...]


def rank_by_metric(metrics: Mapping[int, float]) -> Ranking:
    """Ascending-metric ordering, ties broken by ascending config id."""
    return tuple(sorted(metrics, key=lambda c: (metrics[c], c)))


@dataclass(frozen=True)
class GroundTruth:
    """Final-window metrics of fully trained configurations."""

    metrics: Mapping[int, float]

    def __post_init__(self):
        if not self.metrics:
            raise ValueError("ground truth needs at least one configuration")
        object.__setattr__(self, "metrics", dict(self.metrics))

    @property
    def ranking(self) -> Ranking:
        return rank_by_metric(self.metrics)


def _metric_arrays(r: Sequence[int], truth: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    if len(r) != len(truth.metrics) or set(r) != set(truth.metrics):
        raise NotAPermutation("ranking must be a permutation of the configuration set")
    predicted = np.array([truth.metrics[c] for c in r], dtype=np.float64)
    ideal = np.array([truth.metrics[c] for c in truth.ranking], dtype=np.float64)
    return predicted, ideal


def pairwise_error_rate(r: Sequence[int], truth: GroundTruth) -> float:
    """Fraction of config pairs ordered by r whose metrics contradict it.

    A pair counts as an error only when the earlier-ranked config has a
    strictly larger metric; exact ties never count.
    """
    predicted, _ = _metric_arrays(r, truth)
    n = predicted.size
    if n < 2:
        raise TooFewConfigs("pairwise error rate needs at least 2 configurations")
    inverted = np.triu(predicted[:, None] > predicted[None, :], k=1).sum()
    return float(inverted) / (n * (n - 1) / 2)


def _positional_excess(predicted: np.ndarray, ideal: np.ndarray) -> np.ndarray:
    # equal values (including matching infinities) cost nothing
    diff = np.where(predicted == ideal, 0.0, predicted - ideal)
    return np.maximum(diff, 0.0)


def regret(r: Sequence[int], truth: GroundTruth) -> float:
    """Mean positive metric excess of r over the ideal ranking, per position."""
    predicted, ideal = _metric_arrays(r, truth)
    return float(_positional_excess(predicted, ideal).mean())


def regret_at_k(r: Sequence[int], truth: GroundTruth, k: int) -> float:
    """Positional regret restricted to the top-k ranks."""
    predicted, ideal = _metric_arrays(r, truth)
    if not 1 <= k <= predicted.size:
        raise KOutOfRange(f"k={k} outside [1, {predicted.size}]")
    return float(_positional_excess(predicted[:k], ideal[:k]).mean())


def normalized_regret_at_k(
    r: Sequence[int], truth: GroundTruth, k: int, reference_mean: float
) -> float:
    """regret@k as a percentage of a reference model's metric."""
    if not reference_mean > 0:
        raise NonPositiveReference("reference metric must be positive")
    return 100.0 * regret_at_k(r, truth, k) / reference_mean
