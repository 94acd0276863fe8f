"""Numba inner loops for single-pass online training.

Each kernel processes one example at a time: predict with the current
parameters, record the log loss into its recording bucket, then take one
SGD step.  Kernels return 0 on success or the 1-based index of the example
after which the parameters left the finite/stable region.
"""

import numpy as np
from numba import njit

P_CLAMP = 1e-7
DIVERGENCE_LIMIT = 1e6


@njit(cache=True, fastmath=False)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(cache=True, fastmath=False)
def _log_loss(p, y):
    pc = min(max(p, P_CLAMP), 1.0 - P_CLAMP)
    if y > 0.5:
        return -np.log(pc)
    return -np.log(1.0 - pc)


@njit(cache=True, fastmath=False)
def run_logistic(
    features,      # (n, d) float64
    labels,        # (n,) float64
    steps,         # (n,) int64, original calendar steps
    w,             # (d + 1,) float64, bias last; updated in place
    lr0, lr1, linear_decay, wd, total_steps,
    stride, bucket_base,
    bucket_sum, bucket_cnt,        # local bucket accumulators
    slice_ids, n_slices,           # (n,) int64 or dummy; 0 disables
    slice_sum, slice_cnt,          # (n_buckets, n_slices) or dummy
    probs_out,                     # (n,) float64 or dummy; captures p_t
):
    n, d = features.shape
    denom = max(total_steps - 1, 1)
    for i in range(n):
        t = steps[i]
        x = features[i]
        y = labels[i]
        z = w[d]
        for j in range(d):
            z += w[j] * x[j]
        p = _sigmoid(z)
        if probs_out.size > 0:
            probs_out[i] = p
        loss = _log_loss(p, y)
        b = (t - 1) // stride - bucket_base
        bucket_sum[b] += loss
        bucket_cnt[b] += 1
        if n_slices > 0:
            s = slice_ids[i]
            slice_sum[b, s] += loss
            slice_cnt[b, s] += 1

        lr = lr0
        if linear_decay:
            lr = lr0 + (lr1 - lr0) * (t - 1) / denom
        g = p - y
        maxabs = 0.0
        for j in range(d):
            w[j] -= lr * (g * x[j] + wd * w[j])
            a = abs(w[j])
            if a > maxabs:
                maxabs = a
        w[d] -= lr * g
        if abs(w[d]) > maxabs:
            maxabs = abs(w[d])
        if not (maxabs < DIVERGENCE_LIMIT):
            return i + 1
    return 0


@njit(cache=True, fastmath=False)
def run_fm(
    features, labels, steps,
    w,              # (d + 1,) linear weights, bias last
    table,          # (rows, k) shared second-order embedding table
    row_of,         # (d,) int64 feature index -> table row
    lr0, lr1, linear_decay, wd, total_steps,
    stride, bucket_base,
    bucket_sum, bucket_cnt,
    slice_ids, n_slices,
    slice_sum, slice_cnt,
    probs_out,
):
    n, d = features.shape
    rows, k = table.shape
    denom = max(total_steps - 1, 1)
    s_vec = np.zeros(k)
    sq_vec = np.zeros(k)
    dtable = np.zeros((rows, k))
    for i in range(n):
        t = steps[i]
        x = features[i]
        y = labels[i]

        for j in range(k):
            s_vec[j] = 0.0
            sq_vec[j] = 0.0
        z = w[d]
        for f in range(d):
            xf = x[f]
            z += w[f] * xf
            r = row_of[f]
            for j in range(k):
                v = table[r, j]
                s_vec[j] += xf * v
                sq_vec[j] += xf * xf * v * v
        for j in range(k):
            z += 0.5 * (s_vec[j] * s_vec[j] - sq_vec[j])

        p = _sigmoid(z)
        if probs_out.size > 0:
            probs_out[i] = p
        loss = _log_loss(p, y)
        b = (t - 1) // stride - bucket_base
        bucket_sum[b] += loss
        bucket_cnt[b] += 1
        if n_slices > 0:
            s = slice_ids[i]
            slice_sum[b, s] += loss
            slice_cnt[b, s] += 1

        lr = lr0
        if linear_decay:
            lr = lr0 + (lr1 - lr0) * (t - 1) / denom
        g = p - y
        maxabs = 0.0
        for f in range(d):
            w[f] -= lr * (g * x[f] + wd * w[f])
            a = abs(w[f])
            if a > maxabs:
                maxabs = a
        w[d] -= lr * g
        if abs(w[d]) > maxabs:
            maxabs = abs(w[d])

        for r in range(rows):
            for j in range(k):
                dtable[r, j] = 0.0
        for f in range(d):
            xf = x[f]
            r = row_of[f]
            for j in range(k):
                dtable[r, j] += g * (xf * s_vec[j] - xf * xf * table[r, j])
        for r in range(rows):
            for j in range(k):
                table[r, j] -= lr * (dtable[r, j] + wd * table[r, j])
                a = abs(table[r, j])
                if a > maxabs:
                    maxabs = a
        if not (maxabs < DIVERGENCE_LIMIT):
            return i + 1
    return 0
