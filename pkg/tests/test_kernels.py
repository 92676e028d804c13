"""Split-search kernels: active backend vs numpy fallback vs a slow oracle.

The fallback path promises bit-identical results to the loop kernels, so
every comparison here is exact equality, not approx.
"""
import numpy as np
import pytest

from mandicast import kernels
from mandicast.trees import presort


def _random_problem(rng, n_classes=3):
    n = int(rng.integers(8, 60))
    n_feat = int(rng.integers(1, 6))
    # coarse value grid forces duplicate feature values (runs of equals)
    X = np.round(rng.normal(0, 1, (n, n_feat)) * 2) / 2.0
    pre = presort(np.ascontiguousarray(X))
    y = rng.integers(0, n_classes, n).astype(np.int64)
    w = rng.uniform(0.1, 2.0, n)
    cnt = rng.integers(0, 3, n).astype(np.int64)
    if not (cnt > 0).any():
        cnt[0] = 1
    w = w * cnt
    n_slots = int(rng.integers(1, 4))
    slot_of = np.where(cnt > 0, rng.integers(0, n_slots, n), -1).astype(np.int64)
    for a in range(n_slots):
        if not (slot_of == a).any():
            free = np.flatnonzero(cnt > 0)
            slot_of[free[int(rng.integers(0, free.size))]] = a
    tot_w = np.zeros((n_slots, n_classes))
    tot_c = np.zeros(n_slots, np.int64)
    for i in range(n):
        if slot_of[i] >= 0:
            tot_w[slot_of[i], y[i]] += w[i]
            tot_c[slot_of[i]] += cnt[i]
    feat_ok = (rng.random((n_slots, n_feat)) < 0.8).astype(np.uint8)
    feat_ok[rng.integers(0, n_slots), :] = 1
    min_leaf = int(rng.integers(1, 3))
    return pre, y, w, cnt, slot_of, tot_w, tot_c, feat_ok, min_leaf


def _oracle_classification(pre, y, w, cnt, slot_of, tot_w, tot_c, feat_ok, min_leaf):
    """Per-slot best split by explicit enumeration, accumulating prefix sums
    in the same order as the kernels so proxy floats match exactly."""
    n_feat, n = pre.vals_sorted.shape
    n_slots, K = tot_w.shape
    best = [(-1, 0.0, -np.inf)] * n_slots
    for f in range(n_feat):
        left_w = np.zeros((n_slots, K))
        left_c = np.zeros(n_slots, np.int64)
        prev_v = np.zeros(n_slots)
        seen = np.zeros(n_slots, bool)
        for j in range(n):
            i = pre.sort_idx[f, j]
            a = slot_of[i]
            if a < 0 or feat_ok[a, f] == 0:
                continue
            v = pre.vals_sorted[f, j]
            if seen[a] and v > prev_v[a]:
                lc = left_c[a]
                rc = tot_c[a] - lc
                if lc >= min_leaf and rc >= min_leaf:
                    proxy = 0.0
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
                    if lsum > 0:
                        proxy += l2 / lsum
                    if rsum > 0:
                        proxy += r2 / rsum
                    if proxy > best[a][2]:
                        thr = prev_v[a] + 0.5 * (v - prev_v[a])
                        if thr >= v:
                            thr = prev_v[a]
                        best[a] = (f, thr, proxy)
            left_w[a, y[i]] += w[i]
            left_c[a] += cnt[i]
            prev_v[a] = v
            seen[a] = True
    return best


class TestClassificationSplits:
    def test_backend_matches_numpy_fallback_exactly(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            pre, y, w, cnt, slot_of, tot_w, tot_c, feat_ok, min_leaf = _random_problem(rng)
            got = kernels.classification_best_splits(
                pre.vals_sorted, pre.sort_idx, slot_of, y, w, cnt,
                tot_w, tot_c, feat_ok, min_leaf,
            )
            ref = kernels._classification_best_splits_numpy(
                pre.vals_sorted, pre.sort_idx, slot_of, y, w, cnt,
                tot_w, tot_c, feat_ok, min_leaf,
            )
            for a, b in zip(got, ref):
                assert np.array_equal(a, b)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            pre, y, w, cnt, slot_of, tot_w, tot_c, feat_ok, min_leaf = _random_problem(rng)
            feat, thr, proxy = kernels.classification_best_splits(
                pre.vals_sorted, pre.sort_idx, slot_of, y, w, cnt,
                tot_w, tot_c, feat_ok, min_leaf,
            )
            want = _oracle_classification(
                pre, y, w, cnt, slot_of, tot_w, tot_c, feat_ok, min_leaf
            )
            for a, (wf, wt, wp) in enumerate(want):
                assert feat[a] == wf
                if wf >= 0:
                    assert thr[a] == wt
                    assert proxy[a] == wp

    def test_split_separates_and_respects_min_leaf(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            pre, y, w, cnt, slot_of, tot_w, tot_c, feat_ok, min_leaf = _random_problem(rng)
            feat, thr, _ = kernels.classification_best_splits(
                pre.vals_sorted, pre.sort_idx, slot_of, y, w, cnt,
                tot_w, tot_c, feat_ok, min_leaf,
            )
            for a in range(tot_c.size):
                if feat[a] < 0:
                    continue
                rows = np.flatnonzero(slot_of == a)
                goes_left = pre.X[rows, feat[a]] <= thr[a]
                assert cnt[rows[goes_left]].sum() >= min_leaf
                assert cnt[rows[~goes_left]].sum() >= min_leaf

    def test_no_candidates_on_constant_feature(self):
        X = np.full((10, 2), 3.0)
        pre = presort(X)
        y = np.array([0, 1] * 5, np.int64)
        w = np.ones(10)
        cnt = np.ones(10, np.int64)
        slot_of = np.zeros(10, np.int64)
        tot_w = np.array([[5.0, 5.0, 0.0]])
        tot_c = np.array([10], np.int64)
        feat_ok = np.ones((1, 2), np.uint8)
        feat, _, _ = kernels.classification_best_splits(
            pre.vals_sorted, pre.sort_idx, slot_of, y, w, cnt, tot_w, tot_c, feat_ok, 1
        )
        assert feat[0] == -1


class TestRegressionSplits:
    def _problem(self, rng):
        pre, y, w, cnt, slot_of, tot_w_cls, tot_c, feat_ok, min_leaf = _random_problem(rng)
        r = rng.normal(0, 1, y.size)
        n_slots = tot_c.size
        tot_wr = np.zeros(n_slots)
        tot_w = np.zeros(n_slots)
        for i in range(y.size):
            if slot_of[i] >= 0:
                tot_wr[slot_of[i]] += w[i] * r[i]
                tot_w[slot_of[i]] += w[i]
        return pre, r, w, cnt, slot_of, tot_wr, tot_w, tot_c, feat_ok, min_leaf

    def test_backend_matches_numpy_fallback_exactly(self):
        rng = np.random.default_rng(31)
        for _ in range(60):
            pre, r, w, cnt, slot_of, tot_wr, tot_w, tot_c, feat_ok, min_leaf = self._problem(rng)
            got = kernels.regression_best_splits(
                pre.vals_sorted, pre.sort_idx, slot_of, r, w, cnt,
                tot_wr, tot_w, tot_c, feat_ok, min_leaf,
            )
            ref = kernels._regression_best_splits_numpy(
                pre.vals_sorted, pre.sort_idx, slot_of, r, w, cnt,
                tot_wr, tot_w, tot_c, feat_ok, min_leaf,
            )
            for a, b in zip(got, ref):
                assert np.array_equal(a, b)

    def test_best_split_reduces_weighted_sse(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            pre, r, w, cnt, slot_of, tot_wr, tot_w, tot_c, feat_ok, min_leaf = self._problem(rng)
            feat, thr, _ = kernels.regression_best_splits(
                pre.vals_sorted, pre.sort_idx, slot_of, r, w, cnt,
                tot_wr, tot_w, tot_c, feat_ok, min_leaf,
            )
            for a in range(tot_c.size):
                if feat[a] < 0:
                    continue
                rows = np.flatnonzero(slot_of == a)
                lm = pre.X[rows, feat[a]] <= thr[a]
                for side in (rows[lm], rows[~lm]):
                    assert side.size > 0

                def sse(idx):
                    ww = w[idx]
                    if ww.sum() == 0:
                        return 0.0
                    mu = (ww * r[idx]).sum() / ww.sum()
                    return (ww * (r[idx] - mu) ** 2).sum()

                parent = sse(rows)
                child = sse(rows[lm]) + sse(rows[~lm])
                assert child <= parent + 1e-9


class TestTreeApply:
    def test_backend_matches_numpy_fallback(self):
        rng = np.random.default_rng(41)
        # hand-rolled 7-node tree: root, two internals, four leaves
        feature = np.array([0, 1, 1, -1, -1, -1, -1], np.int64)
        threshold = np.array([0.0, -0.5, 0.5, 0, 0, 0, 0], float)
        left = np.array([1, 3, 5, -1, -1, -1, -1], np.int64)
        right = np.array([2, 4, 6, -1, -1, -1, -1], np.int64)
        X = rng.normal(0, 1, (200, 2))
        got = kernels.tree_apply(X, feature, threshold, left, right)
        ref = kernels._tree_apply_numpy(X, feature, threshold, left, right)
        assert np.array_equal(got, ref)
        # oracle walk
        for i in range(X.shape[0]):
            node = 0
            while feature[node] >= 0:
                node = left[node] if X[i, feature[node]] <= threshold[node] else right[node]
            assert got[i] == node

    def test_boundary_goes_left(self):
        feature = np.array([0, -1, -1], np.int64)
        threshold = np.array([1.5, 0, 0], float)
        left = np.array([1, -1, -1], np.int64)
        right = np.array([2, -1, -1], np.int64)
        X = np.array([[1.5], [1.5000001]])
        out = kernels.tree_apply(X, feature, threshold, left, right)
        assert out.tolist() == [1, 2]


class TestSvmEpochs:
    def _data(self, rng, n=40, d=4):
        X = np.ascontiguousarray(rng.normal(0, 1, (n, d)))
        ysign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        wex = rng.uniform(0.5, 2.0, n)
        return X, ysign, wex

    def test_jitted_matches_python_loop_bitwise(self):
        rng = np.random.default_rng(53)
        for _ in range(10):
            X, ysign, wex = self._data(rng)
            w1 = np.zeros(X.shape[1])
            w2 = np.zeros(X.shape[1])
            kernels.svm_epochs(X, ysign, wex, 0.01, 5, w1)
            kernels._svm_epochs_loop(X, ysign, wex, 0.01, 5, w2)
            assert np.array_equal(w1, w2)

    def test_norm_projection_bound(self):
        rng = np.random.default_rng(59)
        X, ysign, wex = self._data(rng, n=60)
        lam = 0.05
        w = np.zeros(X.shape[1])
        kernels.svm_epochs(X, ysign, wex, lam, 20, w)
        assert np.dot(w, w) <= 1.0 / lam + 1e-9

    def test_learns_a_separable_problem(self):
        rng = np.random.default_rng(61)
        true_w = np.array([1.0, -2.0, 0.5])
        X = np.ascontiguousarray(rng.normal(0, 1, (200, 3)))
        ysign = np.where(X @ true_w > 0, 1.0, -1.0)
        w = np.zeros(3)
        kernels.svm_epochs(X, ysign, np.ones(200), 1e-3, 30, w)
        acc = (np.sign(X @ w) == ysign).mean()
        assert acc > 0.95

    def test_deterministic(self):
        rng = np.random.default_rng(67)
        X, ysign, wex = self._data(rng)
        w1 = np.zeros(X.shape[1])
        w2 = np.zeros(X.shape[1])
        kernels.svm_epochs(X, ysign, wex, 0.01, 8, w1)
        kernels.svm_epochs(X, ysign, wex, 0.01, 8, w2)
        assert np.array_equal(w1, w2)


def test_backend_name_is_exported():
    assert kernels.BACKEND in ("numba", "numpy")
