"""Experiment orchestration: grids, ground-truth oracle, strategy sweeps.

An experiment document fixes a stream spec, a configuration grid, the
evaluation window, one or more strategy sweeps, and a seed list.  For each
seed the oracle trains every configuration on the full stream to obtain the
ground-truth ranking; sweeps then replay data-reduction strategies against
cached trace archives and score them with the ranking metrics.  Everything
is a pure function of (document, seeds): reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    Diverged,
    DriftRankError,
    NonPositiveReference,
    SpecValidationError,
)
from .models import HyperConfig, train_online
from .predictors import SliceWeights, slice_weights_from_assignment
from .ranking import (
    GroundTruth,
    normalized_regret_at_k,
    pairwise_error_rate,
    regret,
    regret_at_k,
)
from .scheduler import (
    PredictorSpec,
    StoppingPlan,
    TraceArchive,
    build_predictor,
    equally_spaced_stops,
    late_start_search,
    one_shot_search,
    performance_based_search,
)
from .streams import (
    Stream,
    StreamSpec,
    SubsampleSpec,
    apply_subsample,
    assign_to_centroids,
    generate,
    kmeans_slices,
    stream_spec_from_dict,
    stream_spec_to_dict,
)
from .traces import EvalWindow, PerformanceTrace, final_window_mean

SLICE_MODES = ("clusters", "kmeans")

# spawn-key tags for deterministic per-purpose seed derivation
_TAG_STREAM, _TAG_SUBSAMPLE, _TAG_INIT, _TAG_KMEANS, _TAG_VARIANCE = range(5)


def derive_seed(root: int, *key: int) -> int:
    """Stable substream seed from a root seed and an integer key path."""
    ss = np.random.SeedSequence(entropy=root, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


def _stable_digest(payload) -> int:
    blob = json.dumps(payload, sort_keys=True).encode()
    return int(hashlib.sha256(blob).hexdigest()[:8], 16)


# --- experiment specification -------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """One strategy curve: a stopping plan family swept over one parameter."""

    name: str
    mode: str
    predictor: PredictorSpec = PredictorSpec()
    t_stops: tuple[int, ...] = ()
    stop_spacings: tuple[int, ...] = ()
    rho: float = 0.5
    start_step: int = 0
    subsample: SubsampleSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "t_stops", tuple(int(t) for t in self.t_stops))
        object.__setattr__(
            self, "stop_spacings", tuple(int(s) for s in self.stop_spacings)
        )
        if self.mode in ("one-shot", "late-start") and not self.t_stops:
            raise SpecValidationError(f"sweep {self.name!r}: needs t_stops")
        if self.mode == "performance-based" and not self.stop_spacings:
            raise SpecValidationError(f"sweep {self.name!r}: needs stop_spacings")

    def plan_points(self, total_steps: int) -> list[tuple[str, StoppingPlan]]:
        points = []
        if self.mode == "performance-based":
            for spacing in self.stop_spacings:
                points.append(
                    (
                        f"spacing={spacing}",
                        StoppingPlan(
                            mode=self.mode,
                            predictor=self.predictor,
                            t_stops=equally_spaced_stops(total_steps, spacing),
                            rho=self.rho,
                            subsample=self.subsample,
                        ),
                    )
                )
        else:
            for t in self.t_stops:
                label = f"t_stop={t}"
                if self.mode == "late-start":
                    label = f"start={self.start_step},{label}"
                points.append(
                    (
                        label,
                        StoppingPlan(
                            mode=self.mode,
                            predictor=self.predictor,
                            t_stop=t,
                            start_step=self.start_step if self.mode == "late-start" else 0,
                            subsample=self.subsample,
                        ),
                    )
                )
        return points


@dataclass(frozen=True)
class ExperimentSpec:
    stream: StreamSpec
    configs: tuple[HyperConfig, ...]
    delta: int
    record_stride: int
    seeds: tuple[int, ...]
    k_values: tuple[int, ...] = (1, 3)
    reference_config: int | None = None
    slice_mode: str = "clusters"
    n_slices: int = 0  # kmeans slice count; 0 means the stream's cluster count
    sweeps: tuple[SweepSpec, ...] = ()

    def __post_init__(self):
        if not self.configs:
            raise SpecValidationError("experiment needs at least one configuration")
        ids = [c.config for c in self.configs]
        if len(set(ids)) != len(ids):
            raise SpecValidationError("configuration ids must be unique")
        if self.delta < 0 or self.stream.total_steps - self.delta < 1:
            raise SpecValidationError("evaluation window does not fit the horizon")
        if self.record_stride < 1:
            raise SpecValidationError("record_stride must be >= 1")
        if not self.seeds:
            raise SpecValidationError("experiment needs at least one seed")
        if self.reference_config is not None and self.reference_config not in ids:
            raise SpecValidationError("reference_config must be one of the configs")
        if any(not 1 <= k <= len(ids) for k in self.k_values):
            raise SpecValidationError("k values must lie in [1, number of configs]")
        if self.slice_mode not in SLICE_MODES:
            raise SpecValidationError(f"slice_mode must be one of {SLICE_MODES}")

    @property
    def total_steps(self) -> int:
        return self.stream.total_steps

    @property
    def eval_window(self) -> EvalWindow:
        return EvalWindow(end=self.total_steps, width=self.delta)

    def resolved_reference(self) -> int:
        if self.reference_config is not None:
            return self.reference_config
        return self.configs[len(self.configs) // 2].config

    def config_map(self) -> dict[int, HyperConfig]:
        return {c.config: c for c in self.configs}


# --- document (de)serialization ------------------------------------------------

_CONFIG_FIELDS = (
    "model_kind",
    "learning_rate",
    "final_learning_rate",
    "weight_decay",
    "embedding_dim",
    "embedding_buckets",
    "lr_schedule",
)


def _config_to_dict(c: HyperConfig) -> dict:
    doc = {"config": c.config}
    for name in _CONFIG_FIELDS:
        doc[name] = getattr(c, name)
    return doc


def _configs_from_doc(doc) -> tuple[HyperConfig, ...]:
    if isinstance(doc, list):
        return tuple(HyperConfig(**{k: v for k, v in d.items()}) for d in doc)
    if isinstance(doc, dict) and "grid" in doc:
        base = dict(doc.get("base", {}))
        grid = doc["grid"]
        keys = list(grid)
        combos = [[]]
        for key in keys:
            combos = [prev + [v] for prev in combos for v in grid[key]]
        out = []
        for i, combo in enumerate(combos):
            fields = dict(base)
            fields.update(dict(zip(keys, combo)))
            out.append(HyperConfig(config=i, **fields))
        return tuple(out)
    raise SpecValidationError("configs must be a list or a {base, grid} document")


def _predictor_from_doc(doc) -> PredictorSpec:
    if isinstance(doc, str):
        return PredictorSpec(kind=doc)
    return PredictorSpec(**doc)


def _predictor_to_dict(p: PredictorSpec) -> dict:
    return {
        "kind": p.kind,
        "law": p.law,
        "inner": p.inner,
        "n_windows": p.n_windows,
        "window_width": p.window_width,
        "n_starts": p.n_starts,
        "seed": p.seed,
    }


def _subsample_from_doc(doc) -> SubsampleSpec | None:
    if doc is None:
        return None
    return SubsampleSpec(rates={int(k): float(v) for k, v in doc.items()})


def experiment_spec_from_dict(doc: Mapping) -> ExperimentSpec:
    try:
        sweeps = tuple(
            SweepSpec(
                name=s["name"],
                mode=s["mode"],
                predictor=_predictor_from_doc(s.get("predictor", "constant")),
                t_stops=tuple(s.get("t_stops", ())),
                stop_spacings=tuple(s.get("stop_spacings", ())),
                rho=float(s.get("rho", 0.5)),
                start_step=int(s.get("start_step", 0)),
                subsample=_subsample_from_doc(s.get("subsample")),
            )
            for s in doc.get("sweeps", [])
        )
        return ExperimentSpec(
            stream=stream_spec_from_dict(doc["stream"]),
            configs=_configs_from_doc(doc["configs"]),
            delta=int(doc["delta"]),
            record_stride=int(doc["record_stride"]),
            seeds=tuple(int(s) for s in doc["seeds"]),
            k_values=tuple(int(k) for k in doc.get("k_values", (1, 3))),
            reference_config=doc.get("reference_config"),
            slice_mode=doc.get("slice_mode", "clusters"),
            n_slices=int(doc.get("n_slices", 0)),
            sweeps=sweeps,
        )
    except SpecValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecValidationError(f"malformed experiment document: {exc}") from exc


def experiment_spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "stream": stream_spec_to_dict(spec.stream),
        "configs": [_config_to_dict(c) for c in spec.configs],
        "delta": spec.delta,
        "record_stride": spec.record_stride,
        "seeds": list(spec.seeds),
        "k_values": list(spec.k_values),
        "reference_config": spec.reference_config,
        "slice_mode": spec.slice_mode,
        "n_slices": spec.n_slices,
        "sweeps": [
            {
                "name": s.name,
                "mode": s.mode,
                "predictor": _predictor_to_dict(s.predictor),
                "t_stops": list(s.t_stops),
                "stop_spacings": list(s.stop_spacings),
                "rho": s.rho,
                "start_step": s.start_step,
                "subsample": None if s.subsample is None else {str(k): v for k, v in s.subsample.rates.items()},
            }
            for s in spec.sweeps
        ],
    }


def load_experiment_spec(path) -> ExperimentSpec:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecValidationError(f"cannot read experiment document {path}: {exc}") from exc
    return experiment_spec_from_dict(doc)


# --- archive persistence --------------------------------------------------------

def _save_archive(path: Path, archive: TraceArchive, fingerprint: str) -> None:
    payload = {
        "example_steps": archive.example_steps,
        "meta": np.frombuffer(
            json.dumps(
                {
                    "fingerprint": fingerprint,
                    "total_steps": archive.total_steps,
                    "configs": list(archive.configs),
                    "diverged": sorted(archive.diverged),
                    "slices": {
                        str(c): sorted(archive.traces[c].slices)
                        if archive.traces[c].slices is not None
                        else None
                        for c in archive.configs
                    },
                }
            ).encode(),
            dtype=np.uint8,
        ),
    }
    for c in archive.configs:
        trace = archive.traces[c]
        payload[f"t{c}_steps"] = trace.steps
        payload[f"t{c}_values"] = trace.values
        if trace.slices is not None:
            for sid, (s, v) in trace.slices.items():
                payload[f"t{c}_s{sid}_steps"] = s
                payload[f"t{c}_s{sid}_values"] = v
    tmp = path.with_suffix(".tmp.npz")
    with open(tmp, "wb") as fh:
        np.savez(fh, **payload)
    tmp.replace(path)


def _load_archive(path: Path, fingerprint: str) -> TraceArchive | None:
    if not path.exists():
        return None
    try:
        with np.load(path) as npz:
            meta = json.loads(bytes(npz["meta"]).decode())
            if meta["fingerprint"] != fingerprint:
                return None
            traces = {}
            for c in meta["configs"]:
                slice_ids = meta["slices"][str(c)]
                slices = None
                if slice_ids is not None:
                    slices = {
                        sid: (npz[f"t{c}_s{sid}_steps"], npz[f"t{c}_s{sid}_values"])
                        for sid in slice_ids
                    }
                traces[c] = PerformanceTrace(
                    config=c,
                    steps=npz[f"t{c}_steps"],
                    values=npz[f"t{c}_values"],
                    horizon=meta["total_steps"],
                    slices=slices,
                )
            return TraceArchive(
                traces=traces,
                total_steps=meta["total_steps"],
                example_steps=npz["example_steps"].copy(),
                diverged=frozenset(meta["diverged"]),
            )
    except (KeyError, ValueError, OSError):
        return None


# --- training -------------------------------------------------------------------

def _train_chunk(args):
    configs, stream, record_stride, slice_ids, init_seeds, start_step = args
    results = []
    for config in configs:
        try:
            trace = train_online(
                config,
                stream,
                record_stride,
                slice_ids=slice_ids,
                init_seed=init_seeds[config.config],
                start_step=start_step,
            )
            results.append((config.config, trace, None))
        except Diverged as exc:
            empty = PerformanceTrace(
                config=config.config,
                steps=np.zeros(0, dtype=np.int64),
                values=np.zeros(0),
                horizon=stream.total_steps,
                slices={},
            )
            results.append((config.config, empty, exc.step))
    return results


def train_archive(
    configs: Sequence[HyperConfig],
    stream: Stream,
    record_stride: int,
    *,
    slice_ids: np.ndarray | None = None,
    init_seeds: Mapping[int, int],
    start_step: int = 0,
    jobs: int = 1,
) -> TraceArchive:
    """Train every configuration to the horizon; diverged runs are kept as
    empty traces and marked, so rankings stay permutations."""
    chunks: list[list[HyperConfig]] = [[] for _ in range(max(1, min(jobs, len(configs))))]
    for i, config in enumerate(configs):
        chunks[i % len(chunks)].append(config)
    tasks = [
        (chunk, stream, record_stride, slice_ids, dict(init_seeds), start_step)
        for chunk in chunks
        if chunk
    ]
    if len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=len(tasks)) as pool:
            chunk_results = list(pool.map(_train_chunk, tasks))
    else:
        chunk_results = [_train_chunk(t) for t in tasks]
    traces, diverged = {}, set()
    for results in chunk_results:
        for config_id, trace, diverged_step in results:
            traces[config_id] = trace
            if diverged_step is not None:
                diverged.add(config_id)
    example_steps = stream.steps[stream.steps > start_step]
    return TraceArchive(
        traces={c: traces[c] for c in sorted(traces)},
        total_steps=stream.total_steps,
        example_steps=example_steps,
        diverged=frozenset(diverged),
    )


# --- per-seed context -------------------------------------------------------------

@dataclass
class SeedContext:
    """Everything derived from (experiment spec, one seed) except training."""

    seed: int
    stream: Stream
    slice_labels: np.ndarray      # full-stream slice assignment
    centroids: np.ndarray | None  # kmeans slice centroids, if applicable
    init_seeds: dict[int, int]
    slice_weights: SliceWeights
    subsample_cache: dict = field(default_factory=dict)


def build_seed_context(spec: ExperimentSpec, seed: int) -> SeedContext:
    stream_seed = derive_seed(spec.stream.seed, seed, _TAG_STREAM)
    stream = generate(replace(spec.stream, seed=stream_seed))
    centroids = None
    if spec.slice_mode == "clusters":
        slice_labels = stream.clusters.astype(np.int64)
    else:
        n_slices = spec.n_slices or spec.stream.n_clusters
        assignment = kmeans_slices(
            stream.features, n_slices, derive_seed(spec.stream.seed, seed, _TAG_KMEANS)
        )
        slice_labels = assignment.labels.astype(np.int64)
        centroids = assignment.centroids
    init_seeds = {
        c.config: derive_seed(spec.stream.seed, seed, _TAG_INIT, c.config)
        for c in spec.configs
    }
    weights = slice_weights_from_assignment(slice_labels, stream.steps, spec.eval_window)
    return SeedContext(
        seed=seed,
        stream=stream,
        slice_labels=slice_labels,
        centroids=centroids,
        init_seeds=init_seeds,
        slice_weights=weights,
    )


def _archive_fingerprint(spec: ExperimentSpec, seed: int, variant: dict) -> str:
    payload = {
        "stream": stream_spec_to_dict(spec.stream),
        "configs": [_config_to_dict(c) for c in spec.configs],
        "record_stride": spec.record_stride,
        "slice_mode": spec.slice_mode,
        "n_slices": spec.n_slices,
        "seed": seed,
        "variant": variant,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def build_variant_archive(
    spec: ExperimentSpec,
    ctx: SeedContext,
    subsample: SubsampleSpec | None = None,
    start_step: int = 0,
    cache_dir=None,
    jobs: int = 1,
) -> TraceArchive:
    """Archive for one training-stream variant, cached by content hash."""
    variant = {
        "subsample": None if subsample is None else sorted(subsample.rates.items()),
        "start_step": start_step,
    }
    fingerprint = _archive_fingerprint(spec, ctx.seed, variant)
    cache_path = None
    if cache_dir is not None:
        cache_path = Path(cache_dir) / f"archive_{fingerprint[:24]}.npz"
        cached = _load_archive(cache_path, fingerprint)
        if cached is not None:
            return cached
    stream = ctx.stream
    slice_labels = ctx.slice_labels
    if subsample is not None:
        sub_seed = derive_seed(
            spec.stream.seed, ctx.seed, _TAG_SUBSAMPLE, _stable_digest(sorted(subsample.rates.items()))
        )
        stream = apply_subsample_cached(ctx, subsample, sub_seed)
        if spec.slice_mode == "clusters":
            slice_labels = stream.clusters.astype(np.int64)
        else:
            slice_labels = assign_to_centroids(stream.features, ctx.centroids).astype(np.int64)
    archive = train_archive(
        spec.configs,
        stream,
        spec.record_stride,
        slice_ids=slice_labels,
        init_seeds=ctx.init_seeds,
        start_step=start_step,
        jobs=jobs,
    )
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        _save_archive(cache_path, archive, fingerprint)
    return archive


def apply_subsample_cached(ctx: SeedContext, subsample: SubsampleSpec, sub_seed: int) -> Stream:
    key = (tuple(sorted(subsample.rates.items())), sub_seed)
    if key not in ctx.subsample_cache:
        ctx.subsample_cache[key] = apply_subsample(ctx.stream, subsample, sub_seed)
    return ctx.subsample_cache[key]


# --- oracle -----------------------------------------------------------------------

@dataclass
class OracleResult:
    truth: GroundTruth
    archive: TraceArchive
    reference_mean: float


def run_oracle(
    spec: ExperimentSpec,
    seed: int,
    *,
    ctx: SeedContext | None = None,
    cache_dir=None,
    jobs: int = 1,
) -> OracleResult:
    """Train every configuration on the full stream; ground truth for one seed.

    Diverged configurations get metric +infinity and rank last, keeping the
    ranking a permutation.
    """
    if ctx is None:
        ctx = build_seed_context(spec, seed)
    archive = build_variant_archive(spec, ctx, cache_dir=cache_dir, jobs=jobs)
    metrics = {}
    for c in archive.configs:
        if c in archive.diverged:
            metrics[c] = math.inf
            continue
        try:
            metrics[c] = final_window_mean(archive.traces[c], spec.eval_window)
        except DriftRankError:
            metrics[c] = math.inf
    truth = GroundTruth(metrics)
    reference_mean = metrics[spec.resolved_reference()]
    return OracleResult(truth=truth, archive=archive, reference_mean=reference_mean)


# --- sweep ------------------------------------------------------------------------

_BASE_COLUMNS = ("sweep", "mode", "predictor", "point", "seed", "cost", "per", "regret")


@dataclass
class ResultTable:
    """One row per (plan point, seed); deterministic byte representation."""

    k_values: tuple[int, ...]
    rows: list[dict] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        cols = list(_BASE_COLUMNS)
        for k in self.k_values:
            cols += [f"regret_at_{k}", f"norm_regret_at_{k}"]
        return cols + ["status", "error"]

    def _format(self, value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([self._format(row.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {"k_values": list(self.k_values), "rows": self.rows},
            sort_keys=True,
            indent=1,
        )

    def write(self, path, fmt: str = "csv") -> None:
        text = self.to_csv() if fmt == "csv" else self.to_json()
        Path(path).write_text(text)

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = []
            k_values = sorted(
                int(name.split("_")[-1])
                for name in reader.fieldnames or []
                if name.startswith("regret_at_")
            )
            for raw in reader:
                row = {}
                for key, value in raw.items():
                    if key in ("sweep", "mode", "predictor", "point", "status", "error"):
                        row[key] = value
                    elif key == "seed":
                        row[key] = int(value) if value else None
                    else:
                        row[key] = float(value) if value else None
                rows.append(row)
        return cls(k_values=tuple(k_values), rows=rows)

    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if r.get("status") == "ok"]

    def aggregate(self) -> list[dict]:
        """Per plan point: mean/std over seeds of cost and every metric."""
        groups: dict[tuple, list[dict]] = {}
        order = []
        for row in self.rows:
            key = (row["sweep"], row["point"])
            if key not in groups:
                groups[key] = []
                order.append(key)
            if row.get("status") == "ok":
                groups[key].append(row)
        metric_cols = ["cost", "per", "regret"] + [
            col for k in self.k_values for col in (f"regret_at_{k}", f"norm_regret_at_{k}")
        ]
        out = []
        for key in order:
            rows = groups[key]
            agg = {
                "sweep": key[0],
                "point": key[1],
                "mode": rows[0]["mode"] if rows else "",
                "predictor": rows[0]["predictor"] if rows else "",
                "n_seeds": len(rows),
            }
            for col in metric_cols:
                values = [r[col] for r in rows if r.get(col) is not None]
                agg[f"mean_{col}"] = float(np.mean(values)) if values else None
                agg[f"std_{col}"] = (
                    float(np.std(values, ddof=1)) if len(values) > 1 else 0.0 if values else None
                )
            out.append(agg)
        return out

    def aggregate_csv(self) -> str:
        rows = self.aggregate()
        if not rows:
            return ""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = list(rows[0])
        writer.writerow(cols)
        for row in rows:
            writer.writerow([self._format(row.get(c)) for c in cols])
        return buf.getvalue()


def _score_row(
    spec: ExperimentSpec, oracle: OracleResult, outcome
) -> dict:
    truth = oracle.truth
    row = {
        "cost": outcome.realized_cost,
        "per": pairwise_error_rate(outcome.ranking, truth),
        "regret": regret(outcome.ranking, truth),
    }
    for k in spec.k_values:
        rk = regret_at_k(outcome.ranking, truth, k)
        row[f"regret_at_{k}"] = rk
        if oracle.reference_mean > 0 and math.isfinite(oracle.reference_mean):
            row[f"norm_regret_at_{k}"] = normalized_regret_at_k(
                outcome.ranking, truth, k, oracle.reference_mean
            )
        else:
            raise NonPositiveReference(
                f"reference metric {oracle.reference_mean} cannot normalize regret"
            )
    return row


def run_plan_point(
    spec: ExperimentSpec,
    ctx: SeedContext,
    plan: StoppingPlan,
    *,
    cache_dir=None,
    jobs: int = 1,
    archive: TraceArchive | None = None,
):
    """Execute one stopping plan against its variant archive."""
    if archive is None:
        archive = build_variant_archive(
            spec,
            ctx,
            subsample=plan.subsample,
            start_step=plan.start_step if plan.mode == "late-start" else 0,
            cache_dir=cache_dir,
            jobs=jobs,
        )
    predictor = build_predictor(plan.predictor, spec.delta, ctx.slice_weights)
    if plan.mode == "one-shot":
        return one_shot_search(archive, plan.t_stop, spec.delta, predictor)
    if plan.mode == "performance-based":
        return performance_based_search(
            archive, plan.t_stops, plan.rho, spec.delta, predictor
        )
    return late_start_search(archive, plan.start_step, plan.t_stop, spec.delta, predictor)


def run_sweep(
    spec: ExperimentSpec,
    *,
    seeds: Sequence[int] | None = None,
    cache_dir=None,
    jobs: int = 1,
) -> ResultTable:
    """Every plan point x seed; failures are recorded per row, not raised."""
    table = ResultTable(k_values=tuple(spec.k_values))
    for seed in seeds if seeds is not None else spec.seeds:
        ctx = build_seed_context(spec, seed)
        oracle = run_oracle(spec, seed, ctx=ctx, cache_dir=cache_dir, jobs=jobs)
        archives: dict[tuple, TraceArchive] = {}
        for sweep in spec.sweeps:
            for label, plan in sweep.plan_points(spec.total_steps):
                base = {
                    "sweep": sweep.name,
                    "mode": plan.mode,
                    "predictor": plan.predictor.label(),
                    "point": label,
                    "seed": seed,
                }
                try:
                    key = (
                        None if plan.subsample is None else tuple(sorted(plan.subsample.rates.items())),
                        plan.start_step if plan.mode == "late-start" else 0,
                    )
                    if key not in archives:
                        archives[key] = build_variant_archive(
                            spec,
                            ctx,
                            subsample=plan.subsample,
                            start_step=key[1],
                            cache_dir=cache_dir,
                            jobs=jobs,
                        )
                    outcome = run_plan_point(
                        spec, ctx, plan, cache_dir=cache_dir, jobs=jobs, archive=archives[key]
                    )
                    row = dict(base)
                    row.update(_score_row(spec, oracle, outcome))
                    row["status"] = "ok"
                    row["error"] = None
                except DriftRankError as exc:
                    row = dict(base)
                    row["status"] = "failed"
                    row["error"] = f"{type(exc).__name__}: {exc}"
                table.rows.append(row)
    return table


# --- seed-variance target ----------------------------------------------------------

def seed_variance_target(
    spec: ExperimentSpec, n_seeds: int, *, cache_dir=None
) -> float:
    """Normalized metric fluctuation due to initialization randomness.

    Trains the reference configuration on one fixed stream under ``n_seeds``
    initialization seeds and returns the mean absolute relative deviation of
    the final-window metric, in percent.  This is the acceptable-regret line
    for the experiment.
    """
    if n_seeds < 2:
        raise ValueError("seed variance needs at least 2 seeds")
    seed0 = spec.seeds[0]
    stream_seed = derive_seed(spec.stream.seed, seed0, _TAG_STREAM)
    stream = generate(replace(spec.stream, seed=stream_seed))
    reference = spec.config_map()[spec.resolved_reference()]
    metrics = []
    for i in range(n_seeds):
        init = derive_seed(spec.stream.seed, seed0, _TAG_VARIANCE, i)
        trace = train_online(reference, stream, spec.record_stride, init_seed=init)
        metrics.append(final_window_mean(trace, spec.eval_window))
    values = np.asarray(metrics)
    mu = float(values.mean())
    if mu <= 0:
        raise NonPositiveReference("reference metric mean must be positive")
    return float(100.0 * np.abs(values - mu).mean() / mu)
