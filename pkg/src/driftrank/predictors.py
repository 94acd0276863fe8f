"""Final-window performance prediction from truncated traces.

Three strategies estimate the final evaluation-window mean from a trace cut
off at ``t_stop``:

* constant: the trailing window mean at the cut.
* trajectory: a parametric law of the data fraction D = t / T, fitted
  jointly across configurations on their pairwise differences so that time
  variation shared by all configurations cancels, then extrapolated to D=1.
* stratified: per-slice predictions reweighted by evaluation-window slice
  counts.

The joint pairwise objective sum_{w,w'} sum_t ((f_w - f_w') - (ybar_w -
ybar_w'))^2 equals n * sum_{w,t} (g_w - gbar)^2 with g_w = f_w - ybar_w, so
it is minimized by alternating a closed-form common-offset update with
independent per-configuration damped Gauss-Newton steps, batched across
configurations.  The objective only pins differences; the configuration
with the smallest id is anchored to its own absolute aggregates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EmptyEvaluationWindow,
    EmptyWindow,
    FitDiverged,
    InsufficientHistory,
    StepMismatch,
    WindowUnderflow,
)
from .laws import get_law
from .traces import EvalWindow, PerformanceTrace, window_mean

DEFAULT_LAW = "inverse_power"
DEFAULT_FIT_WINDOWS = 3
_ANCHOR_WEIGHT = 1.0


# --- constant prediction ----------------------------------------------------

def constant_predict(trace: PerformanceTrace, t_stop: int, delta: int) -> float:
    """Trailing window mean over [t_stop - delta, t_stop]."""
    if t_stop - delta < 1:
        raise WindowUnderflow(f"window [{t_stop - delta}, {t_stop}] starts before step 1")
    return window_mean(trace, t_stop - delta, t_stop)


# --- trajectory prediction ---------------------------------------------------

@dataclass(frozen=True)
class LawFit:
    """Fitted law of one configuration plus its extrapolation to D = 1."""

    config: int
    law: str
    params: tuple[float, ...]
    residual: float
    prediction: float


def trajectory_predict(fit: LawFit) -> float:
    """The fitted law evaluated at full data fraction D = 1."""
    law = get_law(fit.law)
    return float(law.evaluate(np.asarray(fit.params)[None, :], np.ones(1))[0, 0])


def _fit_window_grid(
    traces: Mapping[int, PerformanceTrace],
    t_stop: int,
    width: int,
    n_windows: int,
):
    """Shared recorded-step grid and per-config window aggregates.

    Windows are the ``n_windows`` contiguous blocks of ``width`` steps ending
    at t_stop, ordered oldest first.  Every trace must record the same steps
    inside them.
    """
    configs = sorted(traces)
    horizon = traces[configs[0]].horizon
    bounds = []
    for j in range(n_windows - 1, -1, -1):
        end = t_stop - j * width
        lo = end - width + 1
        if lo < 1:
            raise InsufficientHistory(
                f"fit window [{lo}, {end}] starts before step 1 at t_stop={t_stop}"
            )
        bounds.append((lo, end))

    ref = traces[configs[0]]
    window_steps = []
    for lo, end in bounds:
        mask = (ref.steps >= lo) & (ref.steps <= end)
        steps = ref.steps[mask]
        if steps.size == 0:
            raise InsufficientHistory(f"no recorded steps in fit window [{lo}, {end}]")
        window_steps.append(steps)

    targets = np.empty((len(configs), n_windows))
    for i, c in enumerate(configs):
        trace = traces[c]
        if trace.horizon != horizon:
            raise StepMismatch("traces disagree on the horizon")
        for j, (lo, end) in enumerate(bounds):
            mask = (trace.steps >= lo) & (trace.steps <= end)
            steps = trace.steps[mask]
            if steps.size != window_steps[j].size or np.any(steps != window_steps[j]):
                raise StepMismatch(
                    f"config {c} records different steps in fit window [{lo}, {end}]"
                )
            targets[i, j] = trace.values[mask].mean()

    d_grid = np.concatenate([s.astype(np.float64) for s in window_steps]) / horizon
    averaging = np.zeros((n_windows, d_grid.size))
    offs = 0
    for j, steps in enumerate(window_steps):
        averaging[j, offs : offs + steps.size] = 1.0 / steps.size
        offs += steps.size
    d_mid = np.array([s.astype(np.float64).mean() for s in window_steps]) / horizon
    return configs, targets, d_grid, averaging, d_mid


def _window_means(law, params, d_grid, averaging):
    return law.evaluate(params, d_grid) @ averaging.T


def _window_mean_jac(law, params, d_grid, averaging):
    return np.einsum("fm,nmp->nfp", averaging, law.jacobian(params, d_grid))


def _reduced_theta_step(
    law, params, targets_eff, d_grid, averaging, extra_w, extra_targets, n_iter
):
    """Variable-projection Levenberg step: optimize only the law's nonlinear
    parameters, re-solving the linear coefficients exactly at every trial.

    Far better conditioned than the full-parameter iteration; required to
    drive noiseless fits to exact interpolation so that extrapolation to
    D = 1 is reliable.
    """
    n = params.shape[0]
    k = law.reduced_dim
    sqrt_w = np.sqrt(extra_w)[:, None]
    tstack = np.concatenate([targets_eff, sqrt_w * extra_targets], axis=1)
    nl_lo, nl_hi = law.reduced_lower[None, :], law.reduced_upper[None, :]

    def solve(nl):
        basis = law.reduced_basis(nl, d_grid)                      # (n, L, M)
        design = np.einsum("fm,nlm->nfl", averaging, basis)        # (n, F, L)
        dstack = np.concatenate([design, sqrt_w[:, :, None] * design], axis=1)
        gram = np.einsum("nfl,nfk->nlk", dstack, dstack)
        rhs = np.einsum("nfl,nf->nl", dstack, tstack)
        try:
            coef = np.linalg.solve(gram, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            coef = np.einsum("nlk,nk->nl", np.linalg.pinv(gram), rhs)
        r = np.einsum("nfl,nl->nf", dstack, coef) - tstack
        rss = (r * r).sum(axis=1)
        rss = np.where(np.isfinite(rss), rss, np.inf)
        for row in law.reduced_positive:
            rss = np.where(coef[:, row] > 1e-12, rss, np.inf)
        return coef, r, rss

    nl = np.clip(law.reduced_extract(params), nl_lo, nl_hi)
    coef, r, rss = solve(nl)
    best_nl, best_coef = nl.copy(), coef.copy()
    lam = np.full(n, 1e-3)
    for _ in range(n_iter):
        if np.all(rss < 1e-26):
            break
        eps = 1e-6 * np.maximum(np.abs(nl), 1e-3)
        jac = np.empty((n, r.shape[1], k))
        for dim in range(k):
            nl_p = nl.copy()
            nl_p[:, dim] = np.clip(nl_p[:, dim] + eps[:, dim], nl_lo[0, dim], nl_hi[0, dim])
            dstep = np.where(nl_p[:, dim] != nl[:, dim], nl_p[:, dim] - nl[:, dim], 1.0)
            _, r_p, _ = solve(nl_p)
            jac[:, :, dim] = (r_p - r) / dstep[:, None]
        jac = np.where(np.isfinite(jac), jac, 0.0)
        r_clean = np.where(np.isfinite(r), r, 0.0)
        jtj = np.einsum("nfp,nfq->npq", jac, jac)
        jtr = np.einsum("nfp,nf->np", jac, r_clean)
        diag = np.einsum("npp->np", jtj)
        eye = np.eye(k)
        damped = jtj + lam[:, None, None] * (diag[:, :, None] * eye[None]) + 1e-14 * eye[None]
        try:
            step = np.linalg.solve(damped, jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.einsum("npq,nq->np", np.linalg.pinv(damped), jtr)
        improved = np.zeros(n, dtype=bool)
        for factor in (1.0, 0.3, 0.05):
            cand = np.clip(nl - factor * step, nl_lo, nl_hi)
            coef_c, r_c, rss_c = solve(cand)
            better = rss_c < rss
            nl = np.where(better[:, None], cand, nl)
            coef = np.where(better[:, None], coef_c, coef)
            r = np.where(better[:, None], r_c, r)
            rss = np.where(better, rss_c, rss)
            improved |= better
        best_nl, best_coef = nl, coef
        lam = np.clip(np.where(improved, lam * 0.3, lam * 6.0), 1e-12, 1e9)
    params_out = np.clip(
        law.reduced_assemble(best_coef, best_nl), law.lower[None, :], law.upper[None, :]
    )
    return params_out, rss


def _batched_gauss_newton(
    law, params, targets_eff, d_grid, averaging, extra_w, extra_targets, n_iter
):
    """Damped per-config Gauss-Newton on box-constrained least squares.

    Residuals per config: window means minus ``targets_eff``, plus the same
    residuals against ``extra_targets`` scaled by sqrt(extra_w) (used to
    anchor one config to its absolute aggregates).
    """
    n, p = params.shape
    lo, hi = law.lower[None, :], law.upper[None, :]
    params = np.clip(params, lo, hi)
    sqrt_w = np.sqrt(extra_w)[:, None]

    def residuals(cur):
        means = _window_means(law, cur, d_grid, averaging)
        r1 = means - targets_eff
        r2 = sqrt_w * (means - extra_targets)
        return np.concatenate([r1, r2], axis=1), means

    def rss_of(r):
        out = (r * r).sum(axis=1)
        return np.where(np.isfinite(out), out, np.inf)

    r, _ = residuals(params)
    rss = rss_of(r)
    lam = np.full(n, 1e-3)
    eye = np.eye(p)
    for _ in range(n_iter):
        jm = _window_mean_jac(law, params, d_grid, averaging)
        jac = np.concatenate([jm, sqrt_w[:, :, None] * jm], axis=1)
        jac = np.where(np.isfinite(jac), jac, 0.0)
        r_clean = np.where(np.isfinite(r), r, 0.0)
        jtj = np.einsum("nfp,nfq->npq", jac, jac)
        jtr = np.einsum("nfp,nf->np", jac, r_clean)
        diag = np.einsum("npp->np", jtj)
        damped = jtj + lam[:, None, None] * (diag[:, :, None] * eye[None]) + 1e-12 * eye[None]
        try:
            step = np.linalg.solve(damped, jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.einsum("npq,nq->np", np.linalg.pinv(damped), jtr)
        # full step plus a short backtrack along the same direction; the
        # fractional step makes progress in curved narrow valleys where the
        # full Gauss-Newton step overshoots
        improved = np.zeros(n, dtype=bool)
        for factor in (1.0, 0.3):
            cand = np.clip(params - factor * step, lo, hi)
            r_new, _ = residuals(cand)
            rss_new = rss_of(r_new)
            better = rss_new < rss
            params = np.where(better[:, None], cand, params)
            r = np.where(better[:, None], r_new, r)
            rss = np.where(better, rss_new, rss)
            improved |= better
        lam = np.where(improved, lam * 0.33, lam * 6.0)
        lam = np.clip(lam, 1e-10, 1e8)
        if not improved.any() and lam.min() > 1e6:
            break
    return params, rss


def fit_trajectory_joint(
    traces: Mapping[int, PerformanceTrace],
    law: str = DEFAULT_LAW,
    *,
    t_stop: int,
    delta: int,
    window_width: int | None = None,
    n_windows: int = DEFAULT_FIT_WINDOWS,
    n_starts: int = 10,
    seed: int = 0,
    anchor: int | None = None,
    max_outer: int = 20,
    gn_iters: int = 40,
) -> dict[int, LawFit]:
    """Jointly fit one law per configuration on pairwise trace differences.

    The fit targets are the last ``n_windows`` window aggregates of width
    ``window_width`` (default: the evaluation window width ``delta``) ending
    at ``t_stop``.  ``anchor`` (default: smallest config id) is additionally
    fitted to its absolute aggregates, fixing the additive gauge that the
    pairwise objective leaves free.
    """
    if len(traces) < 2:
        raise InsufficientHistory("joint pairwise fitting needs at least 2 configurations")
    law_obj = get_law(law)
    if n_windows < law_obj.n_params:
        raise InsufficientHistory(
            f"{n_windows} window aggregates cannot determine "
            f"{law_obj.n_params} parameters of {law}"
        )
    width = delta if window_width is None else window_width
    if width < 1:
        raise InsufficientHistory("window width must be at least 1 step")
    configs, targets, d_grid, averaging, d_mid = _fit_window_grid(
        traces, t_stop, width, n_windows
    )
    n = len(configs)
    anchor_idx = 0 if anchor is None else configs.index(anchor)
    extra_w = np.zeros(n)
    extra_w[anchor_idx] = _ANCHOR_WEIGHT

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    inits = law_obj.initial_params(d_mid, targets, rng, n_starts)
    varpro = getattr(law_obj, "varpro_init", None)
    if varpro is not None:
        inits[0] = np.clip(
            varpro(d_grid, averaging, targets), law_obj.lower, law_obj.upper
        )

    theta_step = (
        _reduced_theta_step if getattr(law_obj, "reduced_dim", 0) else _batched_gauss_newton
    )
    scale = max(1.0, float((targets * targets).sum()))
    best = None
    for s in range(n_starts):
        params = inits[s].copy()
        h = np.zeros(targets.shape[1])
        prev_obj = np.inf
        for _ in range(max_outer):
            params, _ = theta_step(
                law_obj, params, targets + h[None, :], d_grid, averaging,
                extra_w, targets, gn_iters,
            )
            g = _window_means(law_obj, params, d_grid, averaging) - targets
            h = g.mean(axis=0)
            obj = float(((g - h[None, :]) ** 2).sum() + _ANCHOR_WEIGHT * (g[anchor_idx] ** 2).sum())
            if not np.isfinite(obj):
                break
            if prev_obj - obj <= 1e-14 * (1.0 + abs(obj)):
                prev_obj = obj
                break
            prev_obj = obj
        if np.isfinite(prev_obj) and (best is None or prev_obj < best[0]):
            best = (prev_obj, params.copy(), h.copy())
        if best is not None and best[0] < 1e-22 * scale:
            break  # essentially exact interpolation; no start can improve

    if best is None:
        raise FitDiverged(f"{law} fit produced no finite solution after {n_starts} starts")
    _, params, h = best
    g = _window_means(law_obj, params, d_grid, averaging) - targets
    per_config_rms = np.sqrt(((g - h[None, :]) ** 2).mean(axis=1))
    predictions = law_obj.evaluate(params, np.ones(1))[:, 0]
    if not np.all(np.isfinite(predictions)):
        raise FitDiverged(f"{law} fit extrapolated to non-finite values")
    return {
        c: LawFit(
            config=c,
            law=law,
            params=tuple(float(x) for x in params[i]),
            residual=float(per_config_rms[i]),
            prediction=float(predictions[i]),
        )
        for i, c in enumerate(configs)
    }


# --- stratified prediction ----------------------------------------------------

@dataclass(frozen=True)
class SliceWeights:
    """Evaluation-window example counts per slice."""

    counts: Mapping[int, int]
    total: int

    def __post_init__(self):
        counts = {int(k): int(v) for k, v in self.counts.items()}
        if any(v < 0 for v in counts.values()):
            raise ValueError("slice counts must be non-negative")
        if sum(counts.values()) != self.total:
            raise ValueError("slice counts must sum to the window total")
        if self.total <= 0:
            raise EmptyEvaluationWindow("evaluation window holds no examples")
        object.__setattr__(self, "counts", counts)

    def fraction(self, slice_id: int) -> float:
        return self.counts.get(slice_id, 0) / self.total

    def active_slices(self) -> tuple[int, ...]:
        return tuple(sorted(s for s, c in self.counts.items() if c > 0))


def slice_weights_from_assignment(
    slice_ids: np.ndarray, steps: np.ndarray, window: EvalWindow
) -> SliceWeights:
    """Exact per-slice example counts inside the evaluation window."""
    slice_ids = np.asarray(slice_ids)
    steps = np.asarray(steps)
    mask = (steps >= window.lo) & (steps <= window.end)
    if not mask.any():
        raise EmptyEvaluationWindow(
            f"no examples with step in [{window.lo}, {window.end}]"
        )
    ids, counts = np.unique(slice_ids[mask], return_counts=True)
    return SliceWeights(
        counts={int(s): int(c) for s, c in zip(ids, counts)},
        total=int(mask.sum()),
    )


def aggregate_sliced(predictions: Mapping[int, float], weights: SliceWeights) -> float:
    """Slice-count weighted mean of per-slice predictions."""
    total = 0.0
    for sid in weights.active_slices():
        if sid not in predictions:
            raise KeyError(f"no prediction for slice {sid} with positive weight")
        total += weights.counts[sid] * predictions[sid]
    return total / weights.total


def stratified_predict(
    trace: PerformanceTrace,
    weights: SliceWeights,
    inner: str,
    t_stop: int,
    delta: int,
    *,
    slice_fits: Mapping[int, LawFit] | None = None,
    fallback: float | None = None,
) -> float:
    """Per-slice inner predictions reweighted by evaluation-window counts.

    Slices without usable history fall back to the configuration's aggregate
    prediction (``fallback``; computed as the aggregate constant prediction
    when omitted and ``inner`` is constant).
    """
    if inner not in ("constant", "trajectory"):
        raise ValueError(f"unknown inner strategy {inner!r}")
    if inner == "constant" and fallback is None:
        fallback = constant_predict(trace, t_stop, delta)
    preds: dict[int, float] = {}
    for sid in weights.active_slices():
        value = None
        if inner == "constant":
            if trace.slices is not None and sid in trace.slices:
                try:
                    value = constant_predict(trace.slice_trace(sid), t_stop, delta)
                except EmptyWindow:
                    value = None
        else:
            if slice_fits is not None and sid in slice_fits:
                value = slice_fits[sid].prediction
        if value is None:
            if fallback is None:
                raise ValueError(
                    f"slice {sid} needs a fallback prediction for inner={inner!r}"
                )
            value = fallback
        preds[sid] = value
    return aggregate_sliced(preds, weights)


def stratified_predict_all(
    traces: Mapping[int, PerformanceTrace],
    weights: SliceWeights,
    inner: str,
    t_stop: int,
    delta: int,
    *,
    law: str = DEFAULT_LAW,
    n_windows: int = DEFAULT_FIT_WINDOWS,
    window_width: int | None = None,
    n_starts: int = 10,
    seed: int = 0,
) -> dict[int, float]:
    """Stratified predictions for every configuration at once.

    For inner trajectory prediction, each slice gets its own joint pairwise
    fit across configurations; slices with insufficient history fall back to
    the aggregate prediction per configuration.
    """
    configs = sorted(traces)
    if inner == "constant":
        fallbacks = {c: constant_predict(traces[c], t_stop, delta) for c in configs}
        return {
            c: stratified_predict(
                traces[c], weights, "constant", t_stop, delta, fallback=fallbacks[c]
            )
            for c in configs
        }
    if inner != "trajectory":
        raise ValueError(f"unknown inner strategy {inner!r}")

    agg_fits = fit_trajectory_joint(
        traces, law, t_stop=t_stop, delta=delta, window_width=window_width,
        n_windows=n_windows, n_starts=n_starts, seed=seed,
    )
    per_slice_fits: dict[int, dict[int, LawFit]] = {}
    for sid in weights.active_slices():
        slice_traces = {}
        for c in configs:
            trace = traces[c]
            if trace.slices is None or sid not in trace.slices:
                slice_traces = None
                break
            slice_traces[c] = trace.slice_trace(sid)
        if slice_traces is None:
            continue
        try:
            per_slice_fits[sid] = fit_trajectory_joint(
                slice_traces, law, t_stop=t_stop, delta=delta,
                window_width=window_width, n_windows=n_windows,
                n_starts=n_starts, seed=seed,
            )
        except (InsufficientHistory, StepMismatch, FitDiverged):
            continue
    out = {}
    for c in configs:
        fits_c = {sid: fits[c] for sid, fits in per_slice_fits.items()}
        out[c] = stratified_predict(
            traces[c], weights, "trajectory", t_stop, delta,
            slice_fits=fits_c, fallback=agg_fits[c].prediction,
        )
    return out


# --- predictor objects used by the scheduler ---------------------------------

class ConstantPredictor:
    kind = "constant"

    def __init__(self, delta: int):
        self.delta = delta

    def predict_all(self, traces, configs: Sequence[int], t_stop: int) -> dict[int, float]:
        return {c: constant_predict(traces[c], t_stop, self.delta) for c in configs}


class TrajectoryPredictor:
    kind = "trajectory"

    def __init__(
        self,
        delta: int,
        law: str = DEFAULT_LAW,
        n_windows: int = DEFAULT_FIT_WINDOWS,
        window_width: int | None = None,
        n_starts: int = 3,
        seed: int = 0,
    ):
        self.delta = delta
        self.law = law
        self.n_windows = n_windows
        self.window_width = window_width
        self.n_starts = n_starts
        self.seed = seed

    def predict_all(self, traces, configs: Sequence[int], t_stop: int) -> dict[int, float]:
        fits = fit_trajectory_joint(
            {c: traces[c] for c in configs}, self.law, t_stop=t_stop, delta=self.delta,
            window_width=self.window_width, n_windows=self.n_windows,
            n_starts=self.n_starts, seed=self.seed,
        )
        return {c: fits[c].prediction for c in configs}


class StratifiedPredictor:
    kind = "stratified"

    def __init__(
        self,
        delta: int,
        weights: SliceWeights,
        inner: str = "trajectory",
        law: str = DEFAULT_LAW,
        n_windows: int = DEFAULT_FIT_WINDOWS,
        window_width: int | None = None,
        n_starts: int = 3,
        seed: int = 0,
    ):
        self.delta = delta
        self.weights = weights
        self.inner = inner
        self.law = law
        self.n_windows = n_windows
        self.window_width = window_width
        self.n_starts = n_starts
        self.seed = seed

    def predict_all(self, traces, configs: Sequence[int], t_stop: int) -> dict[int, float]:
        return stratified_predict_all(
            {c: traces[c] for c in configs}, self.weights, self.inner, t_stop,
            self.delta, law=self.law, n_windows=self.n_windows,
            window_width=self.window_width, n_starts=self.n_starts, seed=self.seed,
        )
