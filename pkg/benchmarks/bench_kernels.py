"""Compare the JIT and pure-numpy kernel backends on training-shaped inputs.

Both implementations are importable in one process (backend selection only
decides which one the public names point at), so this script times them
side by side and checks their outputs stay bitwise identical.  Run with
MANDICAST_DISABLE_NUMBA unset; with numba disabled there is nothing to
compare against and the script says so.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from mandicast import kernels
from mandicast.trees import grow_classification_tree, presort


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _split_problem(rng, n=2000, F=300, A=8, K=3, mtry=17):
    X = rng.normal(0.0, 1.0, (n, F))
    vals_sorted = np.sort(X.T, axis=1)
    sort_idx = np.argsort(X.T, axis=1, kind="stable").astype(np.int64)
    slot_of = rng.integers(0, A, n).astype(np.int64)
    y = rng.integers(0, K, n).astype(np.int64)
    cnt = rng.poisson(1.0, n).astype(np.int64)
    w = rng.uniform(0.5, 2.0, n) * cnt
    r = rng.normal(0.0, 1.0, n)
    tot_w = np.zeros((A, K))
    tot_c = np.zeros(A, np.int64)
    tot_wr = np.zeros(A)
    tot_w1 = np.zeros(A)
    for i in range(n):
        a = slot_of[i]
        tot_w[a, y[i]] += w[i]
        tot_c[a] += cnt[i]
        tot_wr[a] += w[i] * r[i]
        tot_w1[a] += w[i]
    feat_ok = np.zeros((A, F), np.uint8)
    for a in range(A):
        feat_ok[a, rng.choice(F, mtry, replace=False)] = 1
    return dict(
        vals_sorted=vals_sorted, sort_idx=sort_idx, slot_of=slot_of, y=y,
        w=w, cnt=cnt, r=r, tot_w=tot_w, tot_c=tot_c, tot_wr=tot_wr,
        tot_w1=tot_w1, feat_ok=feat_ok,
    )


def _tuple_equal(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def _rows():
    rng = np.random.default_rng(0)
    p = _split_problem(rng)

    def cls(fn):
        return lambda: fn(
            p["vals_sorted"], p["sort_idx"], p["slot_of"], p["y"], p["w"],
            p["cnt"], p["tot_w"], p["tot_c"], p["feat_ok"], 1,
        )

    def reg(fn):
        return lambda: fn(
            p["vals_sorted"], p["sort_idx"], p["slot_of"], p["r"], p["w"],
            p["cnt"], p["tot_wr"], p["tot_w1"], p["tot_c"], p["feat_ok"], 1,
        )

    yield ("classification_best_splits (n=2000 F=300 A=8)",
           cls(kernels.classification_best_splits),
           cls(kernels._classification_best_splits_numpy),
           _tuple_equal)

    yield ("regression_best_splits     (n=2000 F=300 A=8)",
           reg(kernels.regression_best_splits),
           reg(kernels._regression_best_splits_numpy),
           _tuple_equal)

    Xt = rng.normal(0.0, 1.0, (800, 40))
    yt = rng.integers(0, 3, 800).astype(np.int64)
    tree = grow_classification_tree(
        presort(Xt), yt, np.ones(800), np.ones(800, np.int64), 3, max_depth=12,
    )
    Xq = rng.normal(0.0, 1.0, (200_000, 40))
    yield ("tree_apply                 (200k rows, depth-12 tree)",
           lambda: kernels.tree_apply(
               Xq, tree.feature, tree.threshold, tree.left, tree.right),
           lambda: kernels._tree_apply_numpy(
               Xq, tree.feature, tree.threshold, tree.left, tree.right),
           np.array_equal)

    Xb = np.hstack([rng.normal(0.0, 1.0, (2000, 300)), np.ones((2000, 1))])
    ysign = np.where(rng.random(2000) < 0.5, -1.0, 1.0)
    wex = rng.uniform(0.5, 2.0, 2000)
    yield ("svm_epochs                 (n=2000 d=301, 20 epochs)",
           lambda: kernels.svm_epochs(
               Xb, ysign, wex, 1e-4, 20, np.zeros(301)),
           lambda: kernels._svm_epochs_loop(
               Xb, ysign, wex, 1e-4, 20, np.zeros(301)),
           np.array_equal)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timings keep the best of N runs")
    args = ap.parse_args(argv)

    print(f"backend={kernels.BACKEND} numba_available={kernels.HAVE_NUMBA}")
    if kernels.BACKEND != "numba":
        print("JIT path inactive (numba missing or MANDICAST_DISABLE_NUMBA set); "
              "timing the numpy fallback alone.")
    for name, active, fallback, equal in _rows():
        active()   # warm-up triggers JIT compilation
        t_active, out_a = _best_of(active, args.repeat)
        if kernels.BACKEND != "numba":
            print(f"{name}  numpy {1e3 * t_active:8.2f} ms")
            continue
        t_fb, out_f = _best_of(fallback, args.repeat)
        match = "bitwise-equal" if equal(out_a, out_f) else "MISMATCH"
        print(f"{name}  numba {1e3 * t_active:8.2f} ms  "
              f"numpy {1e3 * t_fb:8.2f} ms  "
              f"speedup {t_fb / t_active:5.1f}x  outputs {match}")


if __name__ == "__main__":
    main()
