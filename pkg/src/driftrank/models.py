"""Desk-scale online learners producing performance traces.

Training is single-pass progressive validation: for each example the model
predicts, the log loss is recorded, and only then one SGD step is taken, so
the metric at step t depends on parameters trained strictly before t.
Losses are aggregated into recording buckets of ``record_stride`` calendar
steps; a bucket's value is the mean loss over the examples that fell in it.

Two model kinds are supported:

* ``logistic``: linear logistic regression, zero-initialized.
* ``fm``: a factorization-machine-lite with one shared second-order
  embedding table over feature-index buckets, small seeded uniform init.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import _kernels
from .errors import Diverged, StateMismatch
from .streams import Stream
from .traces import PerformanceTrace

MODEL_KINDS = ("logistic", "fm")
LR_SCHEDULES = ("constant", "linear-decay")
FM_INIT_SCALE = 0.01
STATE_FORMAT_VERSION = 1

_EMPTY_F64 = np.zeros(0, dtype=np.float64)
_EMPTY_I64 = np.zeros(0, dtype=np.int64)
_DUMMY_2D = np.zeros((1, 1), dtype=np.float64)
_DUMMY_2D_I = np.zeros((1, 1), dtype=np.int64)


@dataclass(frozen=True)
class HyperConfig:
    """One candidate configuration: model kind plus optimization settings."""

    config: int
    model_kind: str = "logistic"
    learning_rate: float = 1e-2
    final_learning_rate: float | None = None
    weight_decay: float = 0.0
    embedding_dim: int = 4
    embedding_buckets: int = 0  # 0: one table row per feature index
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.lr_schedule == "linear-decay":
            if self.final_learning_rate is None:
                raise ValueError("linear-decay needs final_learning_rate")
            if self.final_learning_rate > self.learning_rate:
                raise ValueError("final_learning_rate must be <= learning_rate")
        if self.model_kind == "fm" and self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")

    @property
    def effective_final_lr(self) -> float:
        if self.lr_schedule == "constant" or self.final_learning_rate is None:
            return self.learning_rate
        return self.final_learning_rate


@dataclass
class ModelState:
    """Mutable training state owned by exactly one run at a time.

    ``step`` is the calendar step up to which the stream has been consumed;
    the pending recording bucket (if any) carries partially accumulated loss
    sums so that checkpoint/resume is bitwise transparent at any cut point.
    """

    model_kind: str
    step: int
    arrays: dict[str, np.ndarray]
    bucket_index: int = -1        # global bucket index of the pending bucket
    bucket_sum: float = 0.0
    bucket_count: int = 0
    slice_sums: np.ndarray = field(default_factory=lambda: _EMPTY_F64.copy())
    slice_counts: np.ndarray = field(default_factory=lambda: _EMPTY_I64.copy())

    @property
    def n_slices(self) -> int:
        return int(self.slice_sums.size)


def _fm_row_map(config: HyperConfig, feature_dim: int) -> np.ndarray:
    rows = config.embedding_buckets if config.embedding_buckets > 0 else feature_dim
    rows = min(rows, feature_dim)
    return (np.arange(feature_dim, dtype=np.int64) % rows).astype(np.int64)


def init_state(
    config: HyperConfig, feature_dim: int, init_seed: int = 0, n_slices: int = 0
) -> ModelState:
    """Fresh state at step 0: zero weights, seeded FM embeddings."""
    arrays = {"w": np.zeros(feature_dim + 1)}
    if config.model_kind == "fm":
        rng = np.random.default_rng(np.random.SeedSequence(init_seed))
        rows = int(_fm_row_map(config, feature_dim).max()) + 1
        arrays["table"] = rng.uniform(
            -FM_INIT_SCALE, FM_INIT_SCALE, size=(rows, config.embedding_dim)
        )
    return ModelState(
        model_kind=config.model_kind,
        step=0,
        arrays=arrays,
        slice_sums=np.zeros(n_slices),
        slice_counts=np.zeros(n_slices, dtype=np.int64),
    )


def advance(
    config: HyperConfig,
    stream: Stream,
    state: ModelState,
    record_stride: int,
    *,
    cut_step: int | None = None,
    slice_ids: np.ndarray | None = None,
    probs_out: np.ndarray | None = None,
) -> PerformanceTrace:
    """Consume stream examples with step in (state.step, cut_step].

    Returns the trace of recording buckets completed by this pass and leaves
    ``state`` at ``cut_step`` with any partial bucket stashed for resumption.
    """
    if record_stride < 1:
        raise ValueError("record_stride must be >= 1")
    cut = stream.total_steps if cut_step is None else int(cut_step)
    if not state.step < cut <= stream.total_steps:
        raise ValueError(f"cut step {cut} outside ({state.step}, {stream.total_steps}]")
    if config.model_kind != state.model_kind:
        raise StateMismatch(
            f"state is for {state.model_kind!r}, config is {config.model_kind!r}"
        )

    i0 = int(np.searchsorted(stream.steps, state.step, side="right"))
    i1 = int(np.searchsorted(stream.steps, cut, side="right"))
    features = np.ascontiguousarray(stream.features[i0:i1])
    labels = stream.labels[i0:i1].astype(np.float64)
    steps = stream.steps[i0:i1].astype(np.int64)

    n_slices = state.n_slices
    if slice_ids is not None:
        ids = np.asarray(slice_ids, dtype=np.int64)
        if ids.shape[0] != len(stream):
            raise ValueError("slice_ids must align with the stream examples")
        ids = ids[i0:i1]
        inferred = int(ids.max()) + 1 if ids.size else 0
        if n_slices == 0:
            n_slices = inferred
            state.slice_sums = np.zeros(n_slices)
            state.slice_counts = np.zeros(n_slices, dtype=np.int64)
        elif inferred > n_slices:
            raise ValueError("slice id exceeds the state's slice count")
    elif n_slices > 0:
        raise ValueError("state tracks slices; slice_ids is required")
    else:
        ids = _EMPTY_I64

    b0 = state.step // record_stride          # bucket containing step state.step + 1
    b_last = (cut - 1) // record_stride
    n_buckets = b_last - b0 + 1
    bucket_sum = np.zeros(n_buckets)
    bucket_cnt = np.zeros(n_buckets, dtype=np.int64)
    if n_slices > 0:
        slice_sum = np.zeros((n_buckets, n_slices))
        slice_cnt = np.zeros((n_buckets, n_slices), dtype=np.int64)
    else:
        slice_sum, slice_cnt = _DUMMY_2D, _DUMMY_2D_I
    if state.bucket_index >= 0:
        if state.bucket_index != b0:
            raise StateMismatch(
                f"pending bucket {state.bucket_index} does not cover step {state.step + 1}"
            )
        bucket_sum[0] = state.bucket_sum
        bucket_cnt[0] = state.bucket_count
        if n_slices > 0:
            slice_sum[0, :] = state.slice_sums
            slice_cnt[0, :] = state.slice_counts

    capture = probs_out if probs_out is not None else _EMPTY_F64
    kernel_args = (
        features,
        labels,
        steps,
        state.arrays["w"],
        config.learning_rate,
        config.effective_final_lr,
        config.lr_schedule == "linear-decay",
        config.weight_decay,
        stream.total_steps,
        record_stride,
        b0,
        bucket_sum,
        bucket_cnt,
        ids if n_slices > 0 else _EMPTY_I64,
        n_slices,
        slice_sum,
        slice_cnt,
        capture,
    )
    if config.model_kind == "logistic":
        status = _kernels.run_logistic(*kernel_args)
    else:
        row_of = _fm_row_map(config, features.shape[1] if features.size else stream.features.shape[1])
        args = list(kernel_args)
        args.insert(4, row_of)
        args.insert(4, state.arrays["table"])
        status = _kernels.run_fm(*args)
    if status > 0:
        raise Diverged(config.config, int(steps[status - 1]))

    # emit buckets fully covered by the cut; stash a trailing partial bucket
    ends = (np.arange(b0, b_last + 1, dtype=np.int64) + 1) * record_stride
    complete = ends <= cut
    emitted = complete & (bucket_cnt > 0)
    trace_steps = ends[emitted]
    trace_values = bucket_sum[emitted] / np.maximum(bucket_cnt[emitted], 1)
    slices = None
    if n_slices > 0:
        slices = {}
        for sid in range(n_slices):
            m = complete & (slice_cnt[:, sid] > 0)
            slices[sid] = (ends[m], slice_sum[m, sid] / np.maximum(slice_cnt[m, sid], 1))
    if not complete[-1]:
        state.bucket_index = b_last
        state.bucket_sum = float(bucket_sum[-1])
        state.bucket_count = int(bucket_cnt[-1])
        if n_slices > 0:
            state.slice_sums = slice_sum[-1, :].copy()
            state.slice_counts = slice_cnt[-1, :].copy()
    else:
        state.bucket_index = -1
        state.bucket_sum = 0.0
        state.bucket_count = 0
        if n_slices > 0:
            state.slice_sums = np.zeros(n_slices)
            state.slice_counts = np.zeros(n_slices, dtype=np.int64)
    state.step = cut

    return PerformanceTrace(
        config=config.config,
        steps=trace_steps,
        values=trace_values,
        horizon=stream.total_steps,
        slices=slices,
    )


def train_online(
    config: HyperConfig,
    stream: Stream,
    record_stride: int,
    *,
    slice_ids: np.ndarray | None = None,
    init_seed: int = 0,
    cut_step: int | None = None,
    start_step: int = 0,
    probs_out: np.ndarray | None = None,
) -> PerformanceTrace:
    """Single-pass progressive validation over the stream.

    ``start_step`` > 0 skips all examples at or before that step (late
    starting); ``cut_step`` truncates the pass.  Raises Diverged when
    parameters leave the finite/stable region.
    """
    if len(stream) == 0:
        raise ValueError("stream is empty")
    n_slices = int(np.asarray(slice_ids).max()) + 1 if slice_ids is not None else 0
    state = init_state(config, stream.features.shape[1], init_seed, n_slices)
    state.step = int(start_step)
    return advance(
        config,
        stream,
        state,
        record_stride,
        cut_step=cut_step,
        slice_ids=slice_ids,
        probs_out=probs_out,
    )


def train_online_stateful(
    config: HyperConfig,
    stream: Stream,
    record_stride: int,
    *,
    slice_ids: np.ndarray | None = None,
    init_seed: int = 0,
    cut_step: int | None = None,
    start_step: int = 0,
) -> tuple[PerformanceTrace, ModelState]:
    """Like train_online but also returns the final checkpointable state."""
    if len(stream) == 0:
        raise ValueError("stream is empty")
    n_slices = int(np.asarray(slice_ids).max()) + 1 if slice_ids is not None else 0
    state = init_state(config, stream.features.shape[1], init_seed, n_slices)
    state.step = int(start_step)
    trace = advance(
        config, stream, state, record_stride, cut_step=cut_step, slice_ids=slice_ids
    )
    return trace, state


def resume(
    config: HyperConfig,
    state: ModelState,
    suffix: Stream,
    record_stride: int,
    *,
    slice_ids: np.ndarray | None = None,
    cut_step: int | None = None,
) -> PerformanceTrace:
    """Continue a checkpointed run over a stream suffix.

    The suffix must start strictly after the state's step; continuing is
    bitwise identical to an uninterrupted run over the full stream.
    """
    if len(suffix) == 0:
        raise ValueError("stream suffix is empty")
    if int(suffix.steps[0]) <= state.step:
        raise StateMismatch(
            f"suffix starts at step {int(suffix.steps[0])}, "
            f"state already covers step {state.step}"
        )
    return advance(
        config, suffix, state, record_stride, cut_step=cut_step, slice_ids=slice_ids
    )


# --- reference math for verification ---------------------------------------

def predict_proba(config: HyperConfig, arrays: Mapping[str, np.ndarray], x: np.ndarray) -> float:
    """Pure-numpy forward pass mirroring the training kernels."""
    w = arrays["w"]
    d = x.size
    z = float(w[:d] @ x + w[d])
    if config.model_kind == "fm":
        table = arrays["table"]
        row_of = _fm_row_map(config, d)
        v = table[row_of]                      # (d, k)
        s = v.T @ x                            # (k,)
        sq = (v * v).T @ (x * x)
        z += 0.5 * float((s * s - sq).sum())
    return float(1.0 / (1.0 + np.exp(-z))) if z >= 0 else float(np.exp(z) / (1.0 + np.exp(z)))


def log_loss(p: float, y: int) -> float:
    pc = min(max(p, _kernels.P_CLAMP), 1.0 - _kernels.P_CLAMP)
    return -np.log(pc) if y else -np.log(1.0 - pc)


def loss_gradients(
    config: HyperConfig, arrays: Mapping[str, np.ndarray], x: np.ndarray, y: int
) -> dict[str, np.ndarray]:
    """Analytic log-loss gradients, matching the kernels' update direction
    (weight decay excluded)."""
    p = predict_proba(config, arrays, x)
    g = p - y
    d = x.size
    grads = {"w": np.concatenate([g * x, [g]])}
    if config.model_kind == "fm":
        table = arrays["table"]
        row_of = _fm_row_map(config, d)
        v = table[row_of]
        s = v.T @ x
        dtable = np.zeros_like(table)
        for f in range(d):
            dtable[row_of[f]] += g * (x[f] * s - x[f] * x[f] * table[row_of[f]])
        grads["table"] = dtable
    return grads


# --- state serialization ----------------------------------------------------

def save_state(state: ModelState, path) -> None:
    """Versioned binary blob; round-trips exactly."""
    meta = {
        "format_version": STATE_FORMAT_VERSION,
        "model_kind": state.model_kind,
        "step": state.step,
        "bucket_index": state.bucket_index,
        "bucket_sum": state.bucket_sum.hex(),
        "bucket_count": state.bucket_count,
        "array_names": sorted(state.arrays),
    }
    payload = {f"arr_{name}": state.arrays[name] for name in state.arrays}
    payload["slice_sums"] = state.slice_sums
    payload["slice_counts"] = state.slice_counts
    payload["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_state(path) -> ModelState:
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["meta"]).decode())
        if meta["format_version"] != STATE_FORMAT_VERSION:
            raise StateMismatch(f"unsupported state format {meta['format_version']}")
        arrays = {name: npz[f"arr_{name}"].copy() for name in meta["array_names"]}
        return ModelState(
            model_kind=meta["model_kind"],
            step=int(meta["step"]),
            arrays=arrays,
            bucket_index=int(meta["bucket_index"]),
            bucket_sum=float.fromhex(meta["bucket_sum"]),
            bucket_count=int(meta["bucket_count"]),
            slice_sums=npz["slice_sums"].copy(),
            slice_counts=npz["slice_counts"].copy(),
        )
