"""Deterministic non-stationary labeled stream simulator.

Generates one example per step t in [1, T].  Cluster mixture weights drift
along piecewise-linear trajectories, every cluster has its own feature
distribution and logistic label model, and a shared piecewise-linear
difficulty signal injects label noise common to all configurations, so that
every learner's loss co-fluctuates over time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import InvalidSpec, MissingClass, TooFewExamples

_WEIGHT_TOL = 1e-6
_PILOT_SIZE = 4096


@dataclass(frozen=True)
class ClusterSpec:
    """Feature distribution and label model of one cluster."""

    center: tuple[float, ...]
    spread: float
    coef: tuple[float, ...]
    intercept: float = 0.0


@dataclass(frozen=True)
class StreamSpec:
    """Generative description of a non-stationary labeled stream."""

    total_steps: int
    clusters: tuple[ClusterSpec, ...]
    mixture_steps: tuple[int, ...]
    mixture_weights: tuple[tuple[float, ...], ...]  # one row per mixture step
    difficulty_steps: tuple[int, ...] = (1,)
    difficulty_values: tuple[float, ...] = (0.0,)
    positive_rate_target: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidSpec("total_steps must be positive")
        if not self.clusters:
            raise InvalidSpec("need at least one cluster")
        dim = len(self.clusters[0].center)
        for i, c in enumerate(self.clusters):
            if len(c.center) != dim or len(c.coef) != dim:
                raise InvalidSpec(f"cluster {i}: inconsistent feature dimension")
            if c.spread < 0:
                raise InvalidSpec(f"cluster {i}: spread must be non-negative")
        if len(self.mixture_steps) != len(self.mixture_weights):
            raise InvalidSpec("one weight row per mixture control step required")
        if not self.mixture_steps:
            raise InvalidSpec("need at least one mixture control step")
        if list(self.mixture_steps) != sorted(set(self.mixture_steps)):
            raise InvalidSpec("mixture control steps must be strictly increasing")
        for step, row in zip(self.mixture_steps, self.mixture_weights):
            if len(row) != len(self.clusters):
                raise InvalidSpec(f"weight row at step {step}: wrong cluster count")
            if min(row) < 0:
                raise InvalidSpec(f"weight row at step {step}: negative weight")
            if abs(sum(row) - 1.0) > _WEIGHT_TOL:
                raise InvalidSpec(f"weight row at step {step}: weights must sum to 1")
        if len(self.difficulty_steps) != len(self.difficulty_values):
            raise InvalidSpec("one difficulty value per control step required")
        if any(not 0.0 <= v < 1.0 for v in self.difficulty_values):
            raise InvalidSpec("difficulty values must lie in [0, 1)")
        if not 0.0 < self.positive_rate_target < 1.0:
            raise InvalidSpec("positive_rate_target must lie in (0, 1)")

    @property
    def feature_dim(self) -> int:
        return len(self.clusters[0].center)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class Example:
    step: int
    features: np.ndarray
    label: int
    true_cluster: int


@dataclass(frozen=True)
class Stream:
    """Materialized stream: one row per example, chronologically ordered."""

    steps: np.ndarray      # int64, strictly increasing original step indices
    features: np.ndarray   # (n, d) float64
    labels: np.ndarray     # int8 in {0, 1}
    clusters: np.ndarray   # int32 true cluster ids
    total_steps: int       # calendar horizon T of the originating spec

    def __post_init__(self):
        for name in ("steps", "features", "labels", "clusters"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return self.steps.size

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield Example(
                step=int(self.steps[i]),
                features=self.features[i],
                label=int(self.labels[i]),
                true_cluster=int(self.clusters[i]),
            )

    def class_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}


def interpolate_signal(steps, values, t: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation, constant beyond the control range."""
    return np.interp(t, np.asarray(steps, dtype=np.float64), np.asarray(values, dtype=np.float64))


def mixture_weights_at(spec: StreamSpec, t: np.ndarray) -> np.ndarray:
    """(len(t), L) interpolated mixture weights, renormalized per step."""
    cols = [
        interpolate_signal(spec.mixture_steps, [row[l] for row in spec.mixture_weights], t)
        for l in range(spec.n_clusters)
    ]
    w = np.stack(cols, axis=1)
    return w / w.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _example_probabilities(spec, clusters, features, noise, offset):
    coef = np.array([c.coef for c in spec.clusters])
    intercept = np.array([c.intercept for c in spec.clusters])
    z = np.einsum("nd,nd->n", features, coef[clusters]) + intercept[clusters] + offset
    p = _sigmoid(z)
    return (1.0 - noise) * p + 0.5 * noise


def _calibrate_offset(spec: StreamSpec, rng: np.random.Generator) -> float:
    """Global intercept offset matching the marginal positive rate target."""
    t = rng.integers(1, spec.total_steps + 1, size=_PILOT_SIZE)
    weights = mixture_weights_at(spec, t.astype(np.float64))
    u = rng.random(_PILOT_SIZE)
    clusters = (u[:, None] > np.cumsum(weights, axis=1)).sum(axis=1).astype(np.int64)
    clusters = np.minimum(clusters, spec.n_clusters - 1)
    centers = np.array([c.center for c in spec.clusters])
    spreads = np.array([c.spread for c in spec.clusters])
    features = centers[clusters] + spreads[clusters, None] * rng.standard_normal(
        (_PILOT_SIZE, spec.feature_dim)
    )
    noise = interpolate_signal(spec.difficulty_steps, spec.difficulty_values, t.astype(np.float64))
    lo, hi = -30.0, 30.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        rate = _example_probabilities(spec, clusters, features, noise, mid).mean()
        if rate < spec.positive_rate_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate(spec: StreamSpec) -> Stream:
    """Materialize the stream; identical output for identical spec."""
    root = np.random.SeedSequence(spec.seed)
    calib_ss, main_ss = root.spawn(2)
    offset = _calibrate_offset(spec, np.random.default_rng(calib_ss))

    rng = np.random.default_rng(main_ss)
    T, d = spec.total_steps, spec.feature_dim
    t = np.arange(1, T + 1, dtype=np.int64)
    weights = mixture_weights_at(spec, t.astype(np.float64))
    u_cluster = rng.random(T)
    clusters = (u_cluster[:, None] > np.cumsum(weights, axis=1)).sum(axis=1)
    clusters = np.minimum(clusters, spec.n_clusters - 1).astype(np.int32)
    centers = np.array([c.center for c in spec.clusters])
    spreads = np.array([c.spread for c in spec.clusters])
    features = centers[clusters] + spreads[clusters, None] * rng.standard_normal((T, d))
    noise = interpolate_signal(spec.difficulty_steps, spec.difficulty_values, t.astype(np.float64))
    p = _example_probabilities(spec, clusters, features, noise, offset)
    labels = (rng.random(T) < p).astype(np.int8)
    return Stream(
        steps=t,
        features=features,
        labels=labels,
        clusters=clusters,
        total_steps=T,
    )


# --- sub-sampling -----------------------------------------------------------

@dataclass(frozen=True)
class SubsampleSpec:
    """Per-class keep fractions."""

    rates: Mapping[int, float]

    def __post_init__(self):
        rates = {int(k): float(v) for k, v in self.rates.items()}
        if any(not 0.0 <= v <= 1.0 for v in rates.values()):
            raise InvalidSpec("keep fractions must lie in [0, 1]")
        object.__setattr__(self, "rates", rates)

    def key(self) -> tuple:
        return tuple(sorted(self.rates.items()))


def apply_subsample(stream: Stream, spec: SubsampleSpec, seed: int) -> Stream:
    """Independently keep each class-y example with probability rates[y].

    Order and original step indices are preserved so that stopping times and
    evaluation windows stay defined in original stream time.
    """
    present = set(np.unique(stream.labels).tolist())
    missing = present - set(spec.rates)
    if missing:
        raise MissingClass(f"no keep fraction for classes {sorted(missing)}")
    rate_lut = np.zeros(max(present) + 1 if present else 1)
    for y, lam in spec.rates.items():
        if 0 <= y < rate_lut.size:
            rate_lut[y] = lam
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    keep = rng.random(len(stream)) < rate_lut[stream.labels]
    return Stream(
        steps=stream.steps[keep],
        features=stream.features[keep],
        labels=stream.labels[keep],
        clusters=stream.clusters[keep],
        total_steps=stream.total_steps,
    )


def subsample_cost(class_counts: Mapping[int, int], spec: SubsampleSpec) -> float:
    """Expected relative training cost of sub-sampling: sum_y count_y * rate_y / T."""
    missing = {y for y, c in class_counts.items() if c > 0} - set(spec.rates)
    if missing:
        raise MissingClass(f"no keep fraction for classes {sorted(missing)}")
    total = sum(class_counts.values())
    if total == 0:
        raise InvalidSpec("class counts are empty")
    return sum(count * spec.rates.get(y, 0.0) for y, count in class_counts.items()) / total


# --- slice assignment -------------------------------------------------------

@dataclass(frozen=True)
class SliceAssignment:
    labels: np.ndarray       # (n,) slice id per example
    centroids: np.ndarray    # (L, d)
    objective: float         # final sum of squared distances
    history: tuple[float, ...] = ()

    def __post_init__(self):
        self.labels.setflags(write=False)
        self.centroids.setflags(write=False)


def _nearest(features: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = (
        (features * features).sum(axis=1)[:, None]
        - 2.0 * features @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    labels = d2.argmin(axis=1)
    return labels, np.maximum(d2[np.arange(len(features)), labels], 0.0)


def assign_to_centroids(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return _nearest(np.asarray(features, dtype=np.float64), centroids)[0].astype(np.int32)


def kmeans_slices(
    features: np.ndarray, n_slices: int, seed: int, max_iters: int = 100
) -> SliceAssignment:
    """Lloyd's iterations with k-means++ seeding; deterministic given seed."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    n = len(features)
    if n_slices < 1:
        raise InvalidSpec("n_slices must be >= 1")
    if n < n_slices:
        raise TooFewExamples(f"{n} examples for {n_slices} slices")
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    # k-means++ seeding
    centroids = np.empty((n_slices, features.shape[1]))
    centroids[0] = features[rng.integers(n)]
    d2 = ((features - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, n_slices):
        total = d2.sum()
        if total <= 0:
            centroids[j] = features[rng.integers(n)]
        else:
            r = rng.random() * total
            centroids[j] = features[np.searchsorted(np.cumsum(d2), r)]
        d2 = np.minimum(d2, ((features - centroids[j]) ** 2).sum(axis=1))

    labels = np.full(n, -1, dtype=np.int64)
    history = []
    for _ in range(max_iters):
        new_labels, dist2 = _nearest(features, centroids)
        for j in range(n_slices):
            mask = new_labels == j
            if mask.any():
                centroids[j] = features[mask].mean(axis=0)
            else:
                # deterministic re-seed: farthest point from its centroid
                far = int(dist2.argmax())
                centroids[j] = features[far]
                new_labels[far] = j
                dist2[far] = 0.0
        _, dist2 = _nearest(features, centroids)
        history.append(float(dist2.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return SliceAssignment(
        labels=labels.astype(np.int32),
        centroids=centroids,
        objective=history[-1],
        history=tuple(history),
    )


# --- persistence ------------------------------------------------------------

def stream_spec_to_dict(spec: StreamSpec) -> dict:
    return {
        "total_steps": spec.total_steps,
        "clusters": [
            {
                "center": list(c.center),
                "spread": c.spread,
                "coef": list(c.coef),
                "intercept": c.intercept,
            }
            for c in spec.clusters
        ],
        "mixture_steps": list(spec.mixture_steps),
        "mixture_weights": [list(row) for row in spec.mixture_weights],
        "difficulty_steps": list(spec.difficulty_steps),
        "difficulty_values": list(spec.difficulty_values),
        "positive_rate_target": spec.positive_rate_target,
        "seed": spec.seed,
    }


def stream_spec_from_dict(doc: Mapping) -> StreamSpec:
    try:
        clusters = tuple(
            ClusterSpec(
                center=tuple(float(x) for x in c["center"]),
                spread=float(c["spread"]),
                coef=tuple(float(x) for x in c["coef"]),
                intercept=float(c.get("intercept", 0.0)),
            )
            for c in doc["clusters"]
        )
        return StreamSpec(
            total_steps=int(doc["total_steps"]),
            clusters=clusters,
            mixture_steps=tuple(int(s) for s in doc["mixture_steps"]),
            mixture_weights=tuple(
                tuple(float(w) for w in row) for row in doc["mixture_weights"]
            ),
            difficulty_steps=tuple(int(s) for s in doc.get("difficulty_steps", (1,))),
            difficulty_values=tuple(float(v) for v in doc.get("difficulty_values", (0.0,))),
            positive_rate_target=float(doc.get("positive_rate_target", 0.5)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"malformed stream spec document: {exc}") from exc


def write_stream(path, stream: Stream) -> None:
    d = stream.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "label", "cluster"] + [f"f{i}" for i in range(d)])
        for i in range(len(stream)):
            writer.writerow(
                [int(stream.steps[i]), int(stream.labels[i]), int(stream.clusters[i])]
                + [repr(float(x)) for x in stream.features[i]]
            )


def read_stream(path, total_steps: int | None = None) -> Stream:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        rows = list(reader)
    steps = np.array([int(r[0]) for r in rows], dtype=np.int64)
    labels = np.array([int(r[1]) for r in rows], dtype=np.int8)
    clusters = np.array([int(r[2]) for r in rows], dtype=np.int32)
    features = np.array([[float(x) for x in r[3 : 3 + d]] for r in rows], dtype=np.float64)
    return Stream(
        steps=steps,
        features=features,
        labels=labels,
        clusters=clusters,
        total_steps=total_steps if total_steps is not None else int(steps[-1]),
    )


def write_slice_assignment(path, labels: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["example_index", "slice_id"])
        for i, sid in enumerate(np.asarray(labels).tolist()):
            writer.writerow([i, int(sid)])


def read_slice_assignment(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        pairs = [(int(r[0]), int(r[1])) for r in reader if r]
    pairs.sort()
    return np.array([sid for _, sid in pairs], dtype=np.int32)
