"""Release gate: nine checks, one printed verdict line apiece.

Every test computes its measurements first, prints a single
``[criterion N] PASS/FAIL`` line with the measured values and the pinned
bounds, then asserts.  Bounds are literal constants here so a regression
cannot quietly move its own goalposts.
"""
import datetime as dt
import json
from fractions import Fraction

import numpy as np

from mandicast.cli import main as cli_main
from mandicast.evaluation import ConfusionMatrix, alpha_sweep, confusion_from_labels, evaluate
from mandicast.learners import (
    ModelBank,
    ModelSpec,
    _ForestSub,
    class_weights,
    explain,
    logreg_loss_grad,
    train,
)
from mandicast.panel import DirectionLabel, PriceObservation, PriceSeries, align
from mandicast.synthgen import SynthConfig, generate, reference_accuracy
from mandicast.trees import ClassificationTree, grow_classification_tree, presort
from mandicast.windowing import (
    SplitSpec,
    WindowConfig,
    WindowExample,
    build_examples,
    flatten_features,
    split_examples,
)

# 14 markets, 4 calendar years, uneven per-market gaps, strong seasonality:
# a panel hard enough that Stay prevails yet learnable enough that the
# seasonal-state oracle scores balanced >= 0.6 (checked in criterion 3).
_RATES = tuple(0.1 + 0.05 * (m % 7) for m in range(14))
_SPLIT = SplitSpec(dt.date(2015, 6, 30), dt.date(2015, 12, 31), dt.date(2016, 12, 31))


def _learnable_config(seed):
    return SynthConfig(
        n_markets=14,
        start=dt.date(2013, 1, 1),
        end=dt.date(2016, 12, 31),
        seed=seed,
        seasonal_amplitude=0.7,
        market_missing_rates=_RATES,
    )


def _verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}", flush=True)


# ---------------------------------------------------------------------------
# 1. balanced accuracy identity on fixed per-class recalls
# ---------------------------------------------------------------------------

def test_criterion_1_balanced_accuracy_identity(capsys):
    # per-class recalls 204/1000, 157/1000, 736/1000
    cm = ConfusionMatrix(np.array([
        [204, 398, 398],
        [400, 157, 443],
        [132, 132, 736],
    ]))
    recalls_ok = cm.recalls() == (0.204, 0.157, 0.736)
    got = cm.balanced_accuracy
    ok = recalls_ok and abs(got - 0.3657) <= 0.0005
    _verdict(capsys, 1, ok,
             f"recalls (0.204, 0.157, 0.736) -> balanced {got:.6f}, "
             f"target 0.3657 +/- 0.0005")
    assert ok


# ---------------------------------------------------------------------------
# 2. stay-baseline laws
# ---------------------------------------------------------------------------

def test_criterion_2_stay_baseline_laws(capsys):
    laws_ok = True
    raws = []
    for seed in range(5):
        panel, _ = generate(SynthConfig(seed=seed))
        examples = build_examples(panel, WindowConfig(b=7, f=7))
        bank = train(ModelSpec("stay"), examples, 0.5, markets=panel.markets)
        rep = evaluate(bank, examples)
        counts = rep.confusion.counts
        prevalence = counts[int(DirectionLabel.STAY)].sum() / counts.sum()
        laws_ok &= rep.absent_classes == ()          # all three truth classes
        laws_ok &= rep.balanced == 1 / 3             # exact
        laws_ok &= rep.raw == prevalence             # exact
        raws.append(rep.raw)
    band_ok = all(0.55 <= r <= 0.65 for r in raws)
    ok = laws_ok and band_ok
    _verdict(capsys, 2, ok,
             f"balanced == 1/3 and raw == stay prevalence exactly on 5 panels; "
             f"raw range [{min(raws):.4f}, {max(raws):.4f}] within [0.55, 0.65]")
    assert ok


# ---------------------------------------------------------------------------
# 3. learned model clears the stay floor where the generative oracle is strong
# ---------------------------------------------------------------------------

def test_criterion_3_learnability_separation(capsys):
    cfg = _learnable_config(11)
    ref = reference_accuracy(cfg, trials=2)
    panel, _ = generate(cfg)
    examples = build_examples(panel, WindowConfig(b=7, f=7))
    train_ex, _, test_ex = split_examples(examples, _SPLIT)
    spec = ModelSpec("gradboost", {"rounds": 40}, seed=5)
    bank = train(spec, train_ex, 1.0, markets=panel.markets, workers=3)
    rep = evaluate(bank, test_ex)
    ok = ref.balanced >= 0.6 and rep.balanced >= 0.45 and rep.balanced > 1 / 3
    _verdict(capsys, 3, ok,
             f"oracle balanced {ref.balanced:.4f} >= 0.6; gradboost (alpha=1, "
             f"b=7, f=7) test balanced {rep.balanced:.4f} >= 0.45 > 1/3")
    assert ok


# ---------------------------------------------------------------------------
# 4. alpha trades raw accuracy for balanced accuracy
# ---------------------------------------------------------------------------

def test_criterion_4_alpha_tradeoff_shape(capsys):
    grid = [0.0, 0.25, 0.5, 0.75, 1.0]
    bal0, bal1, raw0, raw1 = [], [], [], []
    grid_rows = None
    for s in range(5):
        panel, _ = generate(_learnable_config(s))
        spec = ModelSpec("gradboost", {"rounds": 40}, seed=100 + s)
        alphas = grid if s == 0 else [0.0, 1.0]
        rows = alpha_sweep(panel, _SPLIT, [spec], 7, 7, alphas, workers=3)
        by_alpha = {r.alpha: r for r in rows}
        bal0.append(by_alpha[0.0].test_balanced)
        bal1.append(by_alpha[1.0].test_balanced)
        raw0.append(by_alpha[0.0].test_raw)
        raw1.append(by_alpha[1.0].test_raw)
        if s == 0:
            grid_rows = rows
    d_bal = np.array(bal1) - np.array(bal0)
    d_raw = np.array(raw0) - np.array(raw1)
    m_bal, sd_bal = d_bal.mean(), d_bal.std(ddof=1)
    m_raw, sd_raw = d_raw.mean(), d_raw.std(ddof=1)
    endpoints_ok = (grid_rows[-1].test_balanced > grid_rows[0].test_balanced
                    and grid_rows[0].test_raw >= grid_rows[-1].test_raw)
    ok = endpoints_ok and m_bal > sd_bal and m_raw > sd_raw
    _verdict(capsys, 4, ok,
             f"over 5 seeds: balanced(a=1) - balanced(a=0) = {m_bal:.4f} "
             f"(sd {sd_bal:.4f}); raw(a=0) - raw(a=1) = {m_raw:.4f} "
             f"(sd {sd_raw:.4f}); both margins exceed their seed sd")
    assert ok


# ---------------------------------------------------------------------------
# 5. brute-force oracles: window building and metric tallies
# ---------------------------------------------------------------------------

def _random_panel(rng):
    m = int(rng.integers(1, 5))
    b = int(rng.integers(1, 5))
    f = int(rng.integers(1, 4))
    n_days = b + f + 1 + int(rng.integers(1, 25))
    start = dt.date(2019, 1, 1) + dt.timedelta(days=int(rng.integers(0, 400)))
    eps = float(rng.choice([0.0, 0.003]))
    p_obs = float(rng.uniform(0.5, 1.0))
    series = []
    for i in range(m):
        obs = []
        for d in range(n_days):
            if rng.random() < p_obs:
                obs.append(PriceObservation(
                    start + dt.timedelta(days=d),
                    float(rng.uniform(50.0, 150.0)),
                ))
        series.append(PriceSeries(f"mkt{i}", "onion", tuple(obs)))
    return align(series, start, start + dt.timedelta(days=n_days - 1), eps), b, f


def _window_oracle_matches(panel, b, f):
    """Re-derive every window from raw prices alone and compare exactly."""
    m, n_days = panel.price.shape
    price, eps = panel.price, panel.epsilon
    observed = ~np.isnan(price)
    change = np.zeros((m, n_days))
    mask = np.zeros((m, n_days), bool)
    label = np.full((m, n_days), int(DirectionLabel.STAY), np.int8)
    for i in range(m):
        for d in range(1, n_days):
            if observed[i, d] and observed[i, d - 1]:
                c = (price[i, d] - price[i, d - 1]) / price[i, d - 1]
                change[i, d] = c
                mask[i, d] = True
                label[i, d] = int(DirectionLabel.UP) if c > eps else (
                    int(DirectionLabel.DOWN) if c < -eps else int(DirectionLabel.STAY))
    dates = panel.dates()
    got = build_examples(panel, WindowConfig(b=b, f=f))
    if len(got) != n_days - b - f:
        return False
    for j, a in enumerate(range(b, n_days - f)):
        ex = got[j]
        lo = a - b + 1
        doy = np.array([dates[d].timetuple().tm_yday for d in range(lo, a + 1)], np.int64)
        if not (
            ex.anchor == dates[a]
            and np.array_equal(ex.past_changes, change[:, lo:a + 1])
            and np.array_equal(ex.past_mask, mask[:, lo:a + 1])
            and np.array_equal(ex.future_mask, mask[:, a + 1:a + 1 + f])
            and np.array_equal(ex.future_labels, label[:, a + 1:a + 1 + f])
            and np.array_equal(ex.doy, doy)
        ):
            return False
        flat = np.concatenate([
            change[:, lo:a + 1].ravel(),
            mask[:, lo:a + 1].ravel().astype(float),
            mask[:, a + 1:a + 1 + f].ravel().astype(float),
            doy.astype(float),
        ])
        if not np.array_equal(flatten_features(ex), flat):
            return False
    return True


def _tally_oracle_matches(rng):
    """Pool random masked prediction grids by hand and compare exactly."""
    n, m, f = (int(rng.integers(1, 9)) for _ in range(3))
    truth = rng.integers(0, 3, (n, m, f))
    pred = rng.integers(0, 3, (n, m, f))
    mask = rng.random((n, m, f)) < rng.uniform(0.3, 1.0)
    if not mask.any():
        mask[0, 0, 0] = True
    counts = np.zeros((3, 3), np.int64)
    for i in range(n):
        for j in range(m):
            for k in range(f):
                if mask[i, j, k]:
                    counts[truth[i, j, k], pred[i, j, k]] += 1
    cm = confusion_from_labels(truth[mask], pred[mask])
    if not np.array_equal(cm.counts, counts):
        return False
    raw = np.trace(counts) / counts.sum()
    recalls = tuple(
        float(counts[c, c] / counts[c].sum()) if counts[c].sum() > 0 else None
        for c in range(3)
    )
    present = [r for r in recalls if r is not None]
    return (
        cm.raw_accuracy == raw
        and cm.recalls() == recalls
        and cm.balanced_accuracy == float(sum(present) / len(present))
    )


def test_criterion_5_brute_force_oracles(capsys):
    rng = np.random.default_rng(50)
    windows_ok = all(_window_oracle_matches(*_random_panel(rng)) for _ in range(50))
    tallies_ok = all(_tally_oracle_matches(rng) for _ in range(50))
    ok = windows_ok and tallies_ok
    _verdict(capsys, 5, ok,
             f"window builder == per-anchor enumeration on 50 random panels "
             f"({windows_ok}); metrics == hand tally on 50 random prediction "
             f"sets ({tallies_ok}); both exact")
    assert ok


# ---------------------------------------------------------------------------
# 6. numerical checks: gradient, deviance path, tree capacity
# ---------------------------------------------------------------------------

def _doy_axis(anchor, b):
    return np.array(
        [(anchor - dt.timedelta(days=b - 1 - j)).timetuple().tm_yday for j in range(b)],
        np.int64,
    )


def _noisy_examples(rng, n, b=3):
    """Single-market windows whose label mostly follows the latest change."""
    base = dt.date(2020, 1, 10)
    out = []
    for i in range(n):
        anchor = base + dt.timedelta(days=i)
        past = rng.normal(0.0, 0.1, (1, b))
        label = 0 if past[0, -1] + rng.normal(0.0, 0.05) > 0 else 1
        if rng.random() < 0.4:
            label = 2
        out.append(WindowExample(
            anchor=anchor,
            past_changes=past,
            past_mask=np.ones((1, b), bool),
            future_mask=np.ones((1, 1), bool),
            future_labels=np.full((1, 1), label, np.int8),
            doy=_doy_axis(anchor, b),
        ))
    return out


def test_criterion_6_numerical_checks(capsys):
    # analytic gradient vs central differences at 100 random points
    rng = np.random.default_rng(60)
    worst = 0.0
    for _ in range(100):
        n, nf = 30, 4
        Xb = np.hstack([rng.normal(0.0, 1.0, (n, nf)), np.ones((n, 1))])
        y = rng.integers(0, 3, n)
        sample_w = rng.uniform(0.2, 3.0, n)
        l2 = float(rng.uniform(0.0, 0.5))
        w = rng.normal(0.0, 0.8, (nf + 1) * 3)
        _, g = logreg_loss_grad(w, Xb, y, sample_w, l2)
        g_fd = np.empty_like(g)
        for i in range(w.size):
            h = 1e-6 * max(1.0, abs(w[i]))
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            lp, _ = logreg_loss_grad(wp, Xb, y, sample_w, l2)
            lm, _ = logreg_loss_grad(wm, Xb, y, sample_w, l2)
            g_fd[i] = (lp - lm) / (2.0 * h)
        rel = np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12)
        worst = max(worst, rel)
    fd_ok = worst < 1e-5

    # weighted training deviance never increases, 20 random seeds
    monotone = 0
    for seed in range(20):
        exs = _noisy_examples(np.random.default_rng(seed), 60)
        bank = train(ModelSpec("gradboost", {"rounds": 8}, seed=seed), exs, 0.7)
        path = np.asarray(bank.submodel(0, 0).deviance_path)
        monotone += bool((np.diff(path) <= 1e-12).all())
    deviance_ok = monotone == 20

    # an unbounded-depth tree memorizes consistent data
    rng = np.random.default_rng(66)
    X = rng.normal(0.0, 1.0, (300, 6))
    y = rng.integers(0, 3, 300).astype(np.int64)
    tree = grow_classification_tree(
        presort(X), y, np.ones(300), np.ones(300, np.int64), 3, max_depth=512,
    )
    acc = float((tree.predict_labels(X) == y).mean())
    tree_ok = acc == 1.0

    ok = fd_ok and deviance_ok and tree_ok
    _verdict(capsys, 6, ok,
             f"gradient vs finite differences worst rel err {worst:.2e} < 1e-5; "
             f"deviance non-increasing on {monotone}/20 seeds; unbounded tree "
             f"train accuracy {acc:.3f} == 1.0")
    assert ok


# ---------------------------------------------------------------------------
# 7. class-weight laws at the alpha endpoints
# ---------------------------------------------------------------------------

def test_criterion_7_class_weight_laws(capsys):
    rng = np.random.default_rng(7)
    identity_ok = True
    mass_ok = True
    for _ in range(100):
        counts = rng.integers(1, 400, 3)
        labels = np.repeat(np.arange(3), counts)
        n = int(counts.sum())
        identity_ok &= bool((class_weights(labels, 0.0).weights == 1.0).all())
        w1 = class_weights(labels, 1.0).weights
        # stored weights are the correctly rounded doubles of n / (3 n_c),
        # and in exact arithmetic those values give mean weight 1
        exact = [Fraction(n, 3 * int(c)) for c in counts]
        mass_ok &= all(w1[c] == float(exact[c]) for c in range(3))
        mass_ok &= sum(int(c) * e for c, e in zip(counts, exact)) == n
    ok = identity_ok and mass_ok
    _verdict(capsys, 7, ok,
             f"alpha=0 gives unit weights ({identity_ok}) and alpha=1 gives "
             f"mean weight 1 ({mass_ok}), exactly, on 100 random count triples")
    assert ok


# ---------------------------------------------------------------------------
# 8. byte-identical artifacts across reruns and worker counts
# ---------------------------------------------------------------------------

_PIPELINE_ARTIFACTS = (
    "dataset.mset", "model.mmod", "train_report.txt", "curve.csv", "curve.svg",
)


def _run_pipeline(config, out, workers):
    out.mkdir()
    for args in (
        ["synth", "--config", str(config), "--out", str(out)],
        ["train", "--config", str(config), "--data", str(out / "dataset.mset"),
         "--out", str(out), "--workers", workers],
        ["sweep", "--config", str(config), "--data", str(out / "dataset.mset"),
         "--out", str(out), "--workers", workers],
    ):
        assert cli_main(args) == 0
    return {name: (out / name).read_bytes() for name in _PIPELINE_ARTIFACTS}


def test_criterion_8_pipeline_determinism(capsys, tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "family": "gradboost",
        "hyperparameters": {"rounds": 3, "max_depth": 2},
        "seed": 3,
        "alpha": 0.5,
        "b": 3,
        "f": 2,
        "train_end": "2015-01-31",
        "val_end": "2015-03-31",
        "test_end": "2015-06-30",
        "alpha_grid": [0.0, 1.0],
        "families": ["stay", "gradboost"],
        "synth": {
            "n_markets": 3,
            "start": "2014-01-01",
            "end": "2015-06-30",
            "missing_rate": 0.1,
        },
    }))
    first = _run_pipeline(config, tmp_path / "w1", "1")
    rerun = _run_pipeline(config, tmp_path / "w1b", "1")
    threaded = _run_pipeline(config, tmp_path / "w3", "3")
    capsys.readouterr()
    same_rerun = all(first[k] == rerun[k] for k in _PIPELINE_ARTIFACTS)
    same_workers = all(first[k] == threaded[k] for k in _PIPELINE_ARTIFACTS)
    ok = same_rerun and same_workers
    _verdict(capsys, 8, ok,
             f"synth/train/sweep artifacts byte-identical on rerun "
             f"({same_rerun}) and across --workers 1 vs 3 ({same_workers}) "
             f"for {len(_PIPELINE_ARTIFACTS)} files")
    assert ok


# ---------------------------------------------------------------------------
# 9. co-leaf evidence matches hand enumeration
# ---------------------------------------------------------------------------

def _toy_evidence_bank():
    """1 market, 1 horizon, 4 evidence rows, 3 hand-built trees.

    Two stumps split features 0 and 1 at 0.5; the third tree is a single
    leaf.  Every co-leaf similarity is a sum of uniform 1/3 tree weights,
    and those sums (1/3, 2/3, and the round-to-even tie at 1.0) are exact
    in float64, so similarities can be compared bitwise.
    """
    lw = np.zeros((3, 3))
    lw[1] = lw[2] = [1.0, 1.0, 1.0]

    def stump(feat):
        return ClassificationTree(
            feature=np.array([feat, -1, -1], np.int64),
            threshold=np.array([0.5, 0.0, 0.0]),
            left=np.array([1, -1, -1], np.int64),
            right=np.array([2, -1, -1], np.int64),
            leaf_class_w=lw.copy(),
        )

    leaf = ClassificationTree(
        feature=np.array([-1], np.int64),
        threshold=np.array([0.0]),
        left=np.array([-1], np.int64),
        right=np.array([-1], np.int64),
        leaf_class_w=np.array([[1.0, 1.0, 1.0]]),
    )
    forest = _ForestSub(
        [stump(0), stump(1), leaf], [np.array([], np.int64)] * 3
    )
    X = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
    ])
    base = dt.date(2021, 3, 1)
    anchors = np.array(
        [(base + dt.timedelta(days=i)).toordinal() for i in range(4)], np.int64
    )
    return ModelBank(
        spec=ModelSpec("random_forest", {"trees": 3}),
        alpha=0.0,
        markets=["m0"],
        b=1,
        f=1,
        cyclic_doy=False,
        layout="flat-v1",
        n_features=4,
        class_priors=np.full((1, 1, 3), 1 / 3),
        degenerate=np.zeros((1, 1), np.int8),
        weight_flags=np.zeros((1, 1, 3), np.uint8),
        submodels=[forest],
        evidence_X=X,
        evidence_anchors=anchors,
        evidence_labels=np.zeros((4, 1, 1), np.int8),
        evidence_mask=np.ones((4, 1, 1), bool),
    )


def test_criterion_9_co_leaf_evidence(capsys):
    bank = _toy_evidence_bank()
    # query equals evidence row 1.  Shared leaves: row 1 in all three trees,
    # rows 0 and 3 in two (tied, so the earlier anchor must come first),
    # row 2 only in the single-leaf tree.
    got = explain(bank, np.array([0.0, 1.0, 0.0, 0.0]), (0, 0), top_k=4)
    want = [(1, 1.0), (0, 2 / 3), (3, 2 / 3), (2, 1 / 3)]
    ok = got == want
    _verdict(capsys, 9, ok,
             f"co-leaf similarities {[(i, s) for i, s in got]} == hand "
             f"enumeration {want}; self query ranks first at exactly 1.0")
    assert ok
