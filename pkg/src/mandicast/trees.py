"""Flat-array CART trees grown breadth-first on presorted features.

Split search runs one kernel call per tree level (see kernels.py), so the
expensive scan over (feature, sample) happens once per level regardless of
how many nodes that level holds.  Features are argsorted once per training
set and reused by every tree fitted on it - bootstrap resampling is
expressed as integer multiplicity counts, never as row copies.

Growth policy: a node splits whenever any candidate satisfies the min_leaf
constraint and the stopping rules (depth, size, purity) allow, even at zero
impurity gain; parity-style label patterns require such splits, and a chosen
split always separates at least one sample, so growth terminates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

__all__ = [
    "Presorted",
    "ClassificationTree",
    "RegressionTree",
    "presort",
    "grow_classification_tree",
    "grow_regression_tree",
]


@dataclass(frozen=True)
class Presorted:
    """Per-feature stable sort of a training matrix, shared across trees."""

    X: np.ndarray           # (n, F) float64, C-order
    vals_sorted: np.ndarray  # (F, n) float64
    sort_idx: np.ndarray     # (F, n) int64

    @property
    def n_samples(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])


def presort(X: np.ndarray) -> Presorted:
    X = np.ascontiguousarray(X, dtype=np.float64)
    idx = np.argsort(X, axis=0, kind="stable")            # (n, F)
    vals = np.take_along_axis(X, idx, axis=0)
    return Presorted(
        X=X,
        vals_sorted=np.ascontiguousarray(vals.T),
        sort_idx=np.ascontiguousarray(idx.T.astype(np.int64)),
    )


@dataclass
class ClassificationTree:
    feature: np.ndarray      # (nn,) int64, -1 at leaves
    threshold: np.ndarray    # (nn,) float64
    left: np.ndarray         # (nn,) int64
    right: np.ndarray        # (nn,) int64
    leaf_class_w: np.ndarray  # (nn, K) float64, weighted class counts at leaves

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return kernels.tree_apply(X, self.feature, self.threshold, self.left, self.right)

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        """Normalized leaf class distribution per row; uniform for a leaf
        whose training weight vanished entirely."""
        dist = self.leaf_class_w[self.apply(X)]
        total = dist.sum(axis=1, keepdims=True)
        k = dist.shape[1]
        safe = np.where(total > 0.0, total, 1.0)
        out = dist / safe
        empty = (total <= 0.0).ravel()
        if empty.any():
            out[empty] = 1.0 / k
        return out

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.leaf_class_w[self.apply(X)], axis=1)

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray   # (nn,) float64

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return kernels.tree_apply(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf_value[self.apply(X)]

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])


def _feature_masks(n_slots: int, n_features: int, mtry: int | None, rng) -> np.ndarray:
    if mtry is None or mtry >= n_features:
        return np.ones((n_slots, n_features), np.uint8)
    if rng is None:
        raise ValueError("feature subsampling requires an rng")
    pool = np.tile(np.arange(n_features), (n_slots, 1))
    picks = rng.permuted(pool, axis=1)[:, :mtry]
    ok = np.zeros((n_slots, n_features), np.uint8)
    ok[np.arange(n_slots)[:, None], picks] = 1
    return ok


def _slot_array(node_of: np.ndarray, frontier: list[int], n_nodes: int) -> np.ndarray:
    slot_map = np.full(n_nodes, -1, np.int64)
    slot_map[frontier] = np.arange(len(frontier))
    slot_of = np.full(node_of.shape[0], -1, np.int64)
    act = node_of >= 0
    slot_of[act] = slot_map[node_of[act]]
    return slot_of


def _partition(node_of, slot_of, X, split_slots, chosen_f, chosen_thr, child_left, child_right):
    """Route samples of splitting slots to their new child node ids."""
    rows = np.flatnonzero(slot_of >= 0)
    if rows.size == 0:
        return
    sl = slot_of[rows]
    splitting = split_slots[sl]
    rows = rows[splitting]
    sl = sl[splitting]
    vals = X[rows, chosen_f[sl]]
    node_of[rows] = np.where(vals <= chosen_thr[sl], child_left[sl], child_right[sl])


def grow_classification_tree(
    pre: Presorted,
    y: np.ndarray,
    w: np.ndarray,
    cnt: np.ndarray,
    n_classes: int,
    max_depth: int,
    min_leaf: int = 1,
    mtry: int | None = None,
    rng=None,
) -> ClassificationTree:
    """Weighted-Gini CART.  ``w`` is the effective per-sample weight
    (class weight times multiplicity), ``cnt`` the integer multiplicity;
    rows with cnt == 0 are outside the tree (out-of-bag)."""
    n = pre.n_samples
    y = np.ascontiguousarray(y, dtype=np.int64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    cnt = np.ascontiguousarray(cnt, dtype=np.int64)
    if not (cnt > 0).any():
        raise ValueError("tree has no in-bag samples")

    feature: list[int] = [-1]
    threshold: list[float] = [0.0]
    left: list[int] = [-1]
    right: list[int] = [-1]
    leaf_w: dict[int, np.ndarray] = {}

    node_of = np.where(cnt > 0, 0, -1).astype(np.int64)
    frontier = [0]
    depth = 0
    while frontier:
        a_count = len(frontier)
        slot_of = _slot_array(node_of, frontier, len(feature))
        act = slot_of >= 0
        sl = slot_of[act]
        tot_w = np.bincount(
            sl * n_classes + y[act], weights=w[act], minlength=a_count * n_classes
        ).reshape(a_count, n_classes)
        tot_cnt_by_class = np.bincount(
            sl * n_classes + y[act], weights=cnt[act].astype(np.float64),
            minlength=a_count * n_classes,
        ).reshape(a_count, n_classes).astype(np.int64)
        tot_c = tot_cnt_by_class.sum(axis=1)

        pure = (tot_cnt_by_class > 0).sum(axis=1) <= 1
        too_small = tot_c < 2 * min_leaf
        at_depth = depth >= max_depth
        can_split = ~(pure | too_small | at_depth)

        best_feat = np.full(a_count, -1, np.int64)
        best_thr = np.zeros(a_count)
        if can_split.any():
            feat_ok = _feature_masks(a_count, pre.n_features, mtry, rng)
            feat_ok[~can_split] = 0
            bf, bt, _bp = kernels.classification_best_splits(
                pre.vals_sorted, pre.sort_idx, slot_of, y, w, cnt,
                tot_w, tot_c, feat_ok, min_leaf,
            )
            best_feat, best_thr = bf, bt

        split_slots = best_feat >= 0
        chosen_f = np.zeros(a_count, np.int64)
        chosen_thr = np.zeros(a_count)
        child_left = np.zeros(a_count, np.int64)
        child_right = np.zeros(a_count, np.int64)
        next_frontier: list[int] = []
        for s, node in enumerate(frontier):
            if not split_slots[s]:
                leaf_w[node] = tot_w[s]
                continue
            nl = len(feature)
            nr = nl + 1
            feature.extend([-1, -1])
            threshold.extend([0.0, 0.0])
            left.extend([-1, -1])
            right.extend([-1, -1])
            feature[node] = int(best_feat[s])
            threshold[node] = float(best_thr[s])
            left[node] = nl
            right[node] = nr
            chosen_f[s] = best_feat[s]
            chosen_thr[s] = best_thr[s]
            child_left[s] = nl
            child_right[s] = nr
            next_frontier.extend([nl, nr])
        if split_slots.any():
            _partition(
                node_of, slot_of, pre.X, split_slots,
                chosen_f, chosen_thr, child_left, child_right,
            )
        frontier = next_frontier
        depth += 1

    nn = len(feature)
    leaf_class_w = np.zeros((nn, n_classes))
    for node, dist in leaf_w.items():
        leaf_class_w[node] = dist
    return ClassificationTree(
        feature=np.array(feature, np.int64),
        threshold=np.array(threshold),
        left=np.array(left, np.int64),
        right=np.array(right, np.int64),
        leaf_class_w=leaf_class_w,
    )


def grow_regression_tree(
    pre: Presorted,
    target: np.ndarray,
    w: np.ndarray,
    hess: np.ndarray,
    cnt: np.ndarray,
    max_depth: int,
    min_leaf: int = 1,
    leaf_scale: float = 1.0,
    hess_floor: float = 1e-16,
) -> RegressionTree:
    """Weighted-SSE CART on ``target``; leaves take a Newton-style value
    leaf_scale * sum(w*target) / max(sum(w*hess), hess_floor)."""
    y = np.ascontiguousarray(target, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    hess = np.ascontiguousarray(hess, dtype=np.float64)
    cnt = np.ascontiguousarray(cnt, dtype=np.int64)
    if not (cnt > 0).any():
        raise ValueError("tree has no in-bag samples")

    feature: list[int] = [-1]
    threshold: list[float] = [0.0]
    left: list[int] = [-1]
    right: list[int] = [-1]
    leaf_val: dict[int, float] = {}

    wy = w * y
    wy2 = w * y * y
    wh = w * hess

    node_of = np.where(cnt > 0, 0, -1).astype(np.int64)
    frontier = [0]
    depth = 0
    while frontier:
        a_count = len(frontier)
        slot_of = _slot_array(node_of, frontier, len(feature))
        act = slot_of >= 0
        sl = slot_of[act]
        tot_wr = np.bincount(sl, weights=wy[act], minlength=a_count)
        tot_w = np.bincount(sl, weights=w[act], minlength=a_count)
        tot_wr2 = np.bincount(sl, weights=wy2[act], minlength=a_count)
        tot_wh = np.bincount(sl, weights=wh[act], minlength=a_count)
        tot_c = np.bincount(sl, weights=cnt[act].astype(np.float64), minlength=a_count)
        tot_c = tot_c.astype(np.int64)

        with np.errstate(invalid="ignore", divide="ignore"):
            sse = tot_wr2 - np.where(tot_w > 0.0, (tot_wr * tot_wr) / tot_w, 0.0)
        flat = sse <= 0.0
        too_small = tot_c < 2 * min_leaf
        at_depth = depth >= max_depth
        can_split = ~(flat | too_small | at_depth)

        best_feat = np.full(a_count, -1, np.int64)
        best_thr = np.zeros(a_count)
        if can_split.any():
            feat_ok = np.ones((a_count, pre.n_features), np.uint8)
            feat_ok[~can_split] = 0
            bf, bt, _bp = kernels.regression_best_splits(
                pre.vals_sorted, pre.sort_idx, slot_of, y, w, cnt,
                tot_wr, tot_w, tot_c, feat_ok, min_leaf,
            )
            best_feat, best_thr = bf, bt

        split_slots = best_feat >= 0
        chosen_f = np.zeros(a_count, np.int64)
        chosen_thr = np.zeros(a_count)
        child_left = np.zeros(a_count, np.int64)
        child_right = np.zeros(a_count, np.int64)
        next_frontier: list[int] = []
        for s, node in enumerate(frontier):
            if not split_slots[s]:
                denom = tot_wh[s]
                if denom < hess_floor:
                    denom = hess_floor
                leaf_val[node] = leaf_scale * tot_wr[s] / denom
                continue
            nl = len(feature)
            nr = nl + 1
            feature.extend([-1, -1])
            threshold.extend([0.0, 0.0])
            left.extend([-1, -1])
            right.extend([-1, -1])
            feature[node] = int(best_feat[s])
            threshold[node] = float(best_thr[s])
            left[node] = nl
            right[node] = nr
            chosen_f[s] = best_feat[s]
            chosen_thr[s] = best_thr[s]
            child_left[s] = nl
            child_right[s] = nr
            next_frontier.extend([nl, nr])
        if split_slots.any():
            _partition(
                node_of, slot_of, pre.X, split_slots,
                chosen_f, chosen_thr, child_left, child_right,
            )
        frontier = next_frontier
        depth += 1

    nn = len(feature)
    leaf_value = np.zeros(nn)
    for node, value in leaf_val.items():
        leaf_value[node] = value
    return RegressionTree(
        feature=np.array(feature, np.int64),
        threshold=np.array(threshold),
        left=np.array(left, np.int64),
        right=np.array(right, np.int64),
        leaf_value=leaf_value,
    )


def default_mtry(n_features: int) -> int:
    """Square-root feature subsampling size used by the forest."""
    return max(1, int(round(math.sqrt(n_features))))
