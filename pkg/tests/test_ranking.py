import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from driftrank.errors import (
    KOutOfRange,
    NonPositiveReference,
    NotAPermutation,
    TooFewConfigs,
)
from driftrank.ranking import (
    GroundTruth,
    normalized_regret_at_k,
    pairwise_error_rate,
    rank_by_metric,
    regret,
    regret_at_k,
)


# Independent oracles: literal pair / position enumeration, no vectorization.

def per_oracle(r, metrics):
    n = len(r)
    wrong = 0
    for i in range(n):
        for j in range(i + 1, n):
            if metrics[r[i]] > metrics[r[j]]:
                wrong += 1
    return wrong / (n * (n - 1) / 2)


def regret_oracle(r, metrics, k=None):
    ideal = sorted(r, key=lambda c: (metrics[c], c))
    k = len(r) if k is None else k
    total = 0.0
    for i in range(k):
        total += max(0.0, metrics[r[i]] - metrics[ideal[i]])
    return total / k


def test_per_perfect_ranking():
    truth = GroundTruth({0: 0.3, 1: 0.1, 2: 0.9})
    assert pairwise_error_rate(truth.ranking, truth) == 0.0


def test_per_reversed_ranking():
    truth = GroundTruth({0: 0.1, 1: 0.2, 2: 0.3, 3: 0.4})
    assert pairwise_error_rate(tuple(reversed(truth.ranking)), truth) == 1.0


def test_per_single_swap():
    truth = GroundTruth({0: 0.1, 1: 0.2, 2: 0.3})  # A=0, B=1, C=2
    assert pairwise_error_rate((1, 0, 2), truth) == pytest.approx(1 / 3)


def test_per_ties_are_not_errors():
    truth = GroundTruth({0: 0.5, 1: 0.5, 2: 0.5})
    assert pairwise_error_rate((2, 1, 0), truth) == 0.0


def test_regret_perfect_and_swapped():
    truth = GroundTruth({0: 0.1, 1: 0.2})
    assert regret(truth.ranking, truth) == 0.0
    assert regret((1, 0), truth) == pytest.approx(0.05)


def test_regret_all_ties():
    truth = GroundTruth({0: 1.0, 1: 1.0, 2: 1.0})
    assert regret((2, 0, 1), truth) == 0.0


def test_regret_at_k_examples():
    truth = GroundTruth({0: 0.1, 1: 0.2, 2: 0.3})
    r = (1, 0, 2)
    assert regret_at_k(truth.ranking, truth, 2) == 0.0
    assert regret_at_k(r, truth, 1) == pytest.approx(0.1)
    assert regret_at_k(r, truth, 3) == pytest.approx(0.1 / 3)


def test_normalized_regret_examples():
    truth = GroundTruth({0: 0.1, 1: 0.1005})
    r = (1, 0)
    # regret@1 = 0.0005, reference 0.5 -> 0.1 percent
    assert normalized_regret_at_k(r, truth, 1, 0.5) == pytest.approx(0.1)
    truth2 = GroundTruth({0: 0.1, 1: 0.101})
    assert normalized_regret_at_k((1, 0), truth2, 1, 0.5) == pytest.approx(0.2)
    assert normalized_regret_at_k(truth.ranking, truth, 1, 0.5) == 0.0


def test_error_conditions():
    truth = GroundTruth({0: 0.1, 1: 0.2})
    with pytest.raises(NotAPermutation):
        pairwise_error_rate((0, 0), truth)
    with pytest.raises(NotAPermutation):
        regret((0,), truth)
    with pytest.raises(TooFewConfigs):
        pairwise_error_rate((0,), GroundTruth({0: 0.5}))
    with pytest.raises(KOutOfRange):
        regret_at_k(truth.ranking, truth, 3)
    with pytest.raises(KOutOfRange):
        regret_at_k(truth.ranking, truth, 0)
    with pytest.raises(NonPositiveReference):
        normalized_regret_at_k(truth.ranking, truth, 1, 0.0)


def test_ground_truth_tie_break_is_deterministic():
    truth = GroundTruth({3: 0.2, 1: 0.2, 2: 0.1})
    assert truth.ranking == (2, 1, 3)


def test_diverged_configs_rank_last_and_tie_cleanly():
    truth = GroundTruth({0: 0.5, 1: math.inf, 2: 0.1, 3: math.inf})
    assert truth.ranking == (2, 0, 1, 3)
    # matching infinities cost nothing; a finite config displaced by inf does
    assert regret(truth.ranking, truth) == 0.0
    assert regret((1, 3, 2, 0), truth) == math.inf


metrics_strategy = st.dictionaries(
    keys=st.integers(0, 20),
    values=st.floats(-100, 100),
    min_size=2,
    max_size=7,
)


@given(metrics=metrics_strategy)
def test_ideal_ranking_has_zero_error(metrics):
    truth = GroundTruth(metrics)
    assert pairwise_error_rate(truth.ranking, truth) == 0.0
    assert regret(truth.ranking, truth) == 0.0


@given(metrics=metrics_strategy, data=st.data())
def test_regret_at_full_k_equals_regret(metrics, data):
    truth = GroundTruth(metrics)
    r = tuple(data.draw(st.permutations(sorted(metrics))))
    assert regret_at_k(r, truth, len(metrics)) == regret(r, truth)


@given(metrics=metrics_strategy, shift=st.floats(-50, 50), data=st.data())
def test_regret_shift_invariant(metrics, shift, data):
    r = tuple(data.draw(st.permutations(sorted(metrics))))
    truth = GroundTruth(metrics)
    shifted = GroundTruth({c: m + shift for c, m in metrics.items()})
    assert regret(r, shifted) == pytest.approx(regret(r, truth), abs=1e-9)
    for k in (1, len(metrics)):
        assert regret_at_k(r, shifted, k) == pytest.approx(regret_at_k(r, truth, k), abs=1e-9)


@given(metrics=metrics_strategy, data=st.data())
def test_per_invariant_under_monotone_transform(metrics, data):
    r = tuple(data.draw(st.permutations(sorted(metrics))))
    truth = GroundTruth(metrics)
    transformed = GroundTruth({c: math.atan(m) * 3 + 1 for c, m in metrics.items()})
    assert pairwise_error_rate(r, transformed) == pairwise_error_rate(r, truth)


@given(metrics=metrics_strategy, data=st.data())
def test_regret_at_1_closed_form(metrics, data):
    r = tuple(data.draw(st.permutations(sorted(metrics))))
    truth = GroundTruth(metrics)
    expected = max(0.0, metrics[r[0]] - min(metrics.values()))
    assert regret_at_k(r, truth, 1) == pytest.approx(expected)


@given(metrics=metrics_strategy, data=st.data())
def test_brute_force_oracle_equivalence(metrics, data):
    r = tuple(data.draw(st.permutations(sorted(metrics))))
    truth = GroundTruth(metrics)
    assert pairwise_error_rate(r, truth) == pytest.approx(per_oracle(r, metrics))
    assert regret(r, truth) == pytest.approx(regret_oracle(r, metrics))
    k = data.draw(st.integers(1, len(metrics)))
    assert regret_at_k(r, truth, k) == pytest.approx(regret_oracle(r, metrics, k))


def test_rank_by_metric_matches_exhaustive_best():
    metrics = {0: 0.4, 1: 0.2, 2: 0.9, 3: 0.2}
    best = min(
        itertools.permutations(metrics),
        key=lambda r: (regret_oracle(r, metrics), r),
    )
    assert rank_by_metric(metrics) == best
