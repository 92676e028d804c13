"""Hot numeric kernels: JIT-compiled loops with a pure-numpy fallback.

Backend selection happens once at import.  Numba is used when importable
unless the environment variable ``MANDICAST_DISABLE_NUMBA`` is set to a
truthy value ("1", "true", "yes", "on"); the numpy implementations then
serve every call.  Both paths are written to produce bit-identical outputs
(the fallback restarts its prefix sums per node run so float accumulation
order matches the loops exactly); tests assert that, and
``benchmarks/bench_kernels.py`` compares their speed.

Kernels here are deliberately free of RNG and of Python objects: all
randomness (bootstrap counts, per-node feature subsets) is drawn by callers
and passed in as arrays, which keeps results independent of scheduling and
of the backend.
"""
from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "classification_best_splits",
    "regression_best_splits",
    "tree_apply",
    "svm_epochs",
]


def _numba_disabled() -> bool:
    return os.environ.get("MANDICAST_DISABLE_NUMBA", "").strip().lower() in {
        "1",
        "true",
        "yes",
        "on",
    }


try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False
    _njit = None


# ---------------------------------------------------------------------------
# loop implementations (njit targets; also runnable as plain Python)
# ---------------------------------------------------------------------------

def _classification_best_splits_loop(
    vals_sorted, sort_idx, slot_of, y, w, cnt, tot_w, tot_c, feat_ok, min_leaf
):
    """Best weighted-Gini split per active node, one pass per feature.

    vals_sorted  (F, n) feature values in per-feature ascending order
    sort_idx     (F, n) sample index behind each vals_sorted entry
    slot_of      (n,)   active-node slot per sample, -1 = not in play
    y            (n,)   class codes 0..K-1
    w            (n,)   effective sample weight (class weight x multiplicity)
    cnt          (n,)   integer multiplicity (bootstrap draws; 0 allowed)
    tot_w        (A, K) per-slot weighted class totals
    tot_c        (A,)   per-slot integer sample totals
    feat_ok      (A, F) uint8, 1 where the slot may split on that feature
    min_leaf     minimum integer samples on each side

    Candidate thresholds sit at midpoints between consecutive distinct
    values within a node; ties on the impurity proxy keep the earlier
    (lower feature index, then lower threshold) candidate.  Returns
    (best_feature, best_threshold, best_proxy); feature -1 means no valid
    candidate.
    """
    F, n = vals_sorted.shape
    A, K = tot_w.shape
    best_feat = np.full(A, -1, np.int64)
    best_thr = np.zeros(A)
    best_proxy = np.full(A, -np.inf)
    left_w = np.zeros((A, K))
    left_c = np.zeros(A, np.int64)
    prev_v = np.zeros(A)
    seen = np.zeros(A, np.uint8)
    for f in range(F):
        for a in range(A):
            for k in range(K):
                left_w[a, k] = 0.0
            left_c[a] = 0
            seen[a] = 0
        for j in range(n):
            i = sort_idx[f, j]
            a = slot_of[i]
            if a < 0:
                continue
            if feat_ok[a, f] == 0:
                continue
            v = vals_sorted[f, j]
            if seen[a] == 1 and v > prev_v[a]:
                lc = left_c[a]
                rc = tot_c[a] - lc
                if lc >= min_leaf and rc >= min_leaf:
                    lsum = 0.0
                    l2 = 0.0
                    rsum = 0.0
                    r2 = 0.0
                    for k in range(K):
                        lw = left_w[a, k]
                        rw = tot_w[a, k] - lw
                        lsum += lw
                        l2 += lw * lw
                        rsum += rw
                        r2 += rw * rw
                    proxy = 0.0
                    if lsum > 0.0:
                        proxy += l2 / lsum
                    if rsum > 0.0:
                        proxy += r2 / rsum
                    if proxy > best_proxy[a]:
                        thr = prev_v[a] + 0.5 * (v - prev_v[a])
                        if thr >= v:
                            thr = prev_v[a]
                        best_proxy[a] = proxy
                        best_feat[a] = f
                        best_thr[a] = thr
            left_w[a, y[i]] += w[i]
            left_c[a] += cnt[i]
            prev_v[a] = v
            seen[a] = 1
    return best_feat, best_thr, best_proxy


def _regression_best_splits_loop(
    vals_sorted, sort_idx, slot_of, r, w, cnt, tot_wr, tot_w, tot_c, feat_ok, min_leaf
):
    """Best weighted-SSE-reduction split per active node.

    Same traversal contract as the classification kernel; ``r`` is the
    regression target, ``tot_wr``/``tot_w`` are per-slot sums of w*r and w.
    The proxy maximized is (sum_L wr)^2/W_L + (sum_R wr)^2/W_R.
    """
    F, n = vals_sorted.shape
    A = tot_w.shape[0]
    best_feat = np.full(A, -1, np.int64)
    best_thr = np.zeros(A)
    best_proxy = np.full(A, -np.inf)
    left_wr = np.zeros(A)
    left_w = np.zeros(A)
    left_c = np.zeros(A, np.int64)
    prev_v = np.zeros(A)
    seen = np.zeros(A, np.uint8)
    for f in range(F):
        for a in range(A):
            left_wr[a] = 0.0
            left_w[a] = 0.0
            left_c[a] = 0
            seen[a] = 0
        for j in range(n):
            i = sort_idx[f, j]
            a = slot_of[i]
            if a < 0:
                continue
            if feat_ok[a, f] == 0:
                continue
            v = vals_sorted[f, j]
            if seen[a] == 1 and v > prev_v[a]:
                lc = left_c[a]
                rc = tot_c[a] - lc
                if lc >= min_leaf and rc >= min_leaf:
                    lwr = left_wr[a]
                    lw = left_w[a]
                    rwr = tot_wr[a] - lwr
                    rw = tot_w[a] - lw
                    proxy = 0.0
                    if lw > 0.0:
                        proxy += (lwr * lwr) / lw
                    if rw > 0.0:
                        proxy += (rwr * rwr) / rw
                    if proxy > best_proxy[a]:
                        thr = prev_v[a] + 0.5 * (v - prev_v[a])
                        if thr >= v:
                            thr = prev_v[a]
                        best_proxy[a] = proxy
                        best_feat[a] = f
                        best_thr[a] = thr
            left_wr[a] += w[i] * r[i]
            left_w[a] += w[i]
            left_c[a] += cnt[i]
            prev_v[a] = v
            seen[a] = 1
    return best_feat, best_thr, best_proxy


def _tree_apply_loop(X, feature, threshold, left, right):
    """Leaf node id for every row of X.  Routing is x <= threshold -> left."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        f = feature[node]
        while f >= 0:
            if X[i, f] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            f = feature[node]
        out[i] = node
    return out


def _svm_epochs_loop(Xb, ysign, wex, lam, epochs, wvec):
    """Weighted binary hinge + L2, deterministic epoch-ordered subgradient.

    Pegasos-style schedule eta_t = 1/(lam*t), per-example cost weights
    ``wex`` scaling the hinge term, and the usual 1/sqrt(lam) norm
    projection.  ``wvec`` is updated in place over examples 0..n-1 in
    order, for ``epochs`` full passes.
    """
    n, d = Xb.shape
    limit2 = 1.0 / lam
    t = 0
    for _e in range(epochs):
        for i in range(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = 0.0
            for j in range(d):
                margin += wvec[j] * Xb[i, j]
            margin *= ysign[i]
            scale = 1.0 - eta * lam
            if scale < 0.0:
                scale = 0.0
            for j in range(d):
                wvec[j] *= scale
            if margin < 1.0:
                step = eta * wex[i] * ysign[i]
                for j in range(d):
                    wvec[j] += step * Xb[i, j]
            norm2 = 0.0
            for j in range(d):
                norm2 += wvec[j] * wvec[j]
            if norm2 > limit2:
                factor = math.sqrt(limit2 / norm2)
                for j in range(d):
                    wvec[j] *= factor
    return wvec


# ---------------------------------------------------------------------------
# numpy fallbacks (bit-identical to the loops)
# ---------------------------------------------------------------------------

def _segmented_cumsum(values, starts):
    """Cumulative sums restarted at each run start.

    Restarting (rather than subtracting run-base offsets from one global
    cumsum) keeps float accumulation order identical to the loop kernels,
    which accumulate each node from zero.
    """
    out = np.empty(values.shape, dtype=values.dtype)
    bounds = np.r_[starts, values.shape[0]]
    for r in range(starts.size):
        lo, hi = bounds[r], bounds[r + 1]
        out[lo:hi] = np.cumsum(values[lo:hi], axis=0)
    return out


def _gather_feature(vals_sorted, sort_idx, slot_of, feat_ok, f):
    """Active, feature-allowed samples for feature f, grouped by node slot
    with the global sorted order preserved inside each group."""
    order = sort_idx[f]
    slots = slot_of[order]
    act = slots >= 0
    if not act.any():
        return None
    idx = order[act]
    s = slots[act]
    vals = vals_sorted[f][act]
    ok = feat_ok[s, f].astype(bool)
    if not ok.any():
        return None
    idx = idx[ok]
    s = s[ok]
    vals = vals[ok]
    g = np.argsort(s, kind="stable")
    return idx[g], s[g], vals[g]


def _candidate_geometry(gs, gv):
    m = gs.shape[0]
    starts = np.flatnonzero(np.r_[True, gs[1:] != gs[:-1]])
    is_start = np.zeros(m, bool)
    is_start[starts] = True
    prev = np.empty(m)
    prev[0] = np.nan
    prev[1:] = gv[:-1]
    with np.errstate(invalid="ignore"):
        cand = (~is_start) & (gv > prev)
    return starts, np.flatnonzero(cand)


def _midpoints(gvprev, gvcur):
    thr = gvprev + 0.5 * (gvcur - gvprev)
    return np.where(thr >= gvcur, gvprev, thr)


def _fold_feature_best(
    f, node, proxy, thr, best_feat, best_thr, best_proxy, n_slots
):
    """Fold one feature's candidates into the running per-node best with the
    (lower feature, lower threshold) tie rule."""
    bf = np.full(n_slots, -np.inf)
    np.maximum.at(bf, node, proxy)
    eq = proxy == bf[node]
    fp = np.full(n_slots, proxy.shape[0], np.int64)
    pos = np.arange(proxy.shape[0])
    np.minimum.at(fp, node[eq], pos[eq])
    # strict >: a later feature never displaces an equal-proxy earlier one
    upd = bf > best_proxy
    if upd.any():
        sel = np.flatnonzero(upd)
        best_proxy[sel] = bf[sel]
        best_feat[sel] = f
        best_thr[sel] = thr[fp[sel]]


def _classification_best_splits_numpy(
    vals_sorted, sort_idx, slot_of, y, w, cnt, tot_w, tot_c, feat_ok, min_leaf
):
    F, n = vals_sorted.shape
    A, K = tot_w.shape
    best_feat = np.full(A, -1, np.int64)
    best_thr = np.zeros(A)
    best_proxy = np.full(A, -np.inf)
    for f in range(F):
        got = _gather_feature(vals_sorted, sort_idx, slot_of, feat_ok, f)
        if got is None:
            continue
        gi, gs, gv = got
        m = gi.size
        starts, t = _candidate_geometry(gs, gv)
        if t.size == 0:
            continue
        onehot = np.zeros((m, K))
        onehot[np.arange(m), y[gi]] = w[gi]
        pref_w = _segmented_cumsum(onehot, starts)
        pref_c = _segmented_cumsum(cnt[gi], starts)
        node = gs[t]
        lw = pref_w[t - 1]
        lc = pref_c[t - 1]
        rw = tot_w[node] - lw
        rc = tot_c[node] - lc
        valid = (lc >= min_leaf) & (rc >= min_leaf)
        lsum = lw.sum(axis=1)
        rsum = rw.sum(axis=1)
        l2 = (lw * lw).sum(axis=1)
        r2 = (rw * rw).sum(axis=1)
        proxy = np.where(lsum > 0.0, l2 / np.where(lsum > 0.0, lsum, 1.0), 0.0)
        proxy = proxy + np.where(rsum > 0.0, r2 / np.where(rsum > 0.0, rsum, 1.0), 0.0)
        proxy = np.where(valid, proxy, -np.inf)
        thr = _midpoints(gv[t - 1], gv[t])
        _fold_feature_best(f, node, proxy, thr, best_feat, best_thr, best_proxy, A)
    return best_feat, best_thr, best_proxy


def _regression_best_splits_numpy(
    vals_sorted, sort_idx, slot_of, r, w, cnt, tot_wr, tot_w, tot_c, feat_ok, min_leaf
):
    F, n = vals_sorted.shape
    A = tot_w.shape[0]
    best_feat = np.full(A, -1, np.int64)
    best_thr = np.zeros(A)
    best_proxy = np.full(A, -np.inf)
    for f in range(F):
        got = _gather_feature(vals_sorted, sort_idx, slot_of, feat_ok, f)
        if got is None:
            continue
        gi, gs, gv = got
        starts, t = _candidate_geometry(gs, gv)
        if t.size == 0:
            continue
        pref_wr = _segmented_cumsum(w[gi] * r[gi], starts)
        pref_w = _segmented_cumsum(w[gi], starts)
        pref_c = _segmented_cumsum(cnt[gi], starts)
        node = gs[t]
        lwr = pref_wr[t - 1]
        lw = pref_w[t - 1]
        lc = pref_c[t - 1]
        rwr = tot_wr[node] - lwr
        rw = tot_w[node] - lw
        rc = tot_c[node] - lc
        valid = (lc >= min_leaf) & (rc >= min_leaf)
        proxy = np.where(lw > 0.0, (lwr * lwr) / np.where(lw > 0.0, lw, 1.0), 0.0)
        proxy = proxy + np.where(rw > 0.0, (rwr * rwr) / np.where(rw > 0.0, rw, 1.0), 0.0)
        proxy = np.where(valid, proxy, -np.inf)
        thr = _midpoints(gv[t - 1], gv[t])
        _fold_feature_best(f, node, proxy, thr, best_feat, best_thr, best_proxy, A)
    return best_feat, best_thr, best_proxy


def _tree_apply_numpy(X, feature, threshold, left, right):
    n = X.shape[0]
    node = np.zeros(n, np.int64)
    while True:
        f = feature[node]
        active = f >= 0
        if not active.any():
            return node
        rows = np.flatnonzero(active)
        at = node[rows]
        vals = X[rows, f[rows]]
        node[rows] = np.where(vals <= threshold[at], left[at], right[at])


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

if HAVE_NUMBA and not _numba_disabled():
    BACKEND = "numba"
    _jit = _njit(cache=True, nogil=True)
    classification_best_splits = _jit(_classification_best_splits_loop)
    regression_best_splits = _jit(_regression_best_splits_loop)
    tree_apply = _jit(_tree_apply_loop)
    svm_epochs = _jit(_svm_epochs_loop)
else:
    BACKEND = "numpy"
    classification_best_splits = _classification_best_splits_numpy
    regression_best_splits = _regression_best_splits_numpy
    tree_apply = _tree_apply_numpy
    # sequential per-example updates cannot be vectorized without changing
    # semantics; the fallback is the same loop, uncompiled
    svm_epochs = _svm_epochs_loop
