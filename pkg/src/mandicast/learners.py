"""Per-output classifier bank: one 3-class sub-model per (market, horizon).

A trained model is a grid of M x f independent sub-models, each fitted only
on the examples whose target at that (market, horizon) cell was observed.
Every family consumes the same alpha-interpolated class weights:

    w_c = (1 - alpha) * 1 + alpha * n / (K * n_c),   K = 3

alpha = 0 leaves examples unweighted (raw-accuracy training), alpha = 1
weights classes to equal total mass (balanced-accuracy training).  Classes
absent from a target vector get the floor-clamped weight and are flagged.

Families: constant Stay, weighted softmax regression, one-vs-rest linear
SVM, random forest, SAMME AdaBoost, and gradient boosting with multinomial
deviance.  The tree families additionally support evidence retrieval: the
similarity of a query to a training example is the (tree-weight weighted)
fraction of trees in which both land in the same leaf.
"""
from __future__ import annotations

import datetime as dt
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import DEFAULT_HYPERPARAMETERS, HYPERPARAMETER_SCHEMA
from .errors import LayoutMismatchError
from .trees import (
    ClassificationTree,
    RegressionTree,
    Presorted,
    default_mtry,
    grow_classification_tree,
    grow_regression_tree,
    presort,
)
from .windowing import WindowExample, features_matrix, feature_length, layout_version, targets_tensor

__all__ = [
    "FAMILIES",
    "TREE_FAMILIES",
    "N_CLASSES",
    "WEIGHT_FLOOR",
    "ClassWeights",
    "ModelSpec",
    "ModelBank",
    "Forecast",
    "class_weights",
    "train",
    "predict",
    "predict_batch",
    "explain",
    "logreg_loss_grad",
]

N_CLASSES = 3
WEIGHT_FLOOR = 1e-6

FAMILIES = ("stay", "logreg", "linear_svm", "random_forest", "adaboost", "gradboost")
TREE_FAMILIES = ("random_forest", "adaboost", "gradboost")

# degenerate-output codes stored per (market, horizon)
DEGEN_NONE = 0
DEGEN_SINGLE_CLASS = 1
DEGEN_NO_TARGETS = 2


# ---------------------------------------------------------------------------
# class weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray          # (3,) float64
    counts: np.ndarray           # (3,) int64
    alpha: float
    absent: tuple[int, ...]      # class codes with zero examples

    def per_example(self, y: np.ndarray) -> np.ndarray:
        return self.weights[y]


def class_weights(labels: np.ndarray, alpha: float) -> ClassWeights:
    """Interpolated class weights over the three direction codes.

    At alpha = 0 every weight is exactly 1; at alpha = 1 the weighted class
    masses are equal and sum(n_c * w_c) equals n.  Absent classes take
    max(1 - alpha, floor) and are reported in ``absent``.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("class_weights needs at least one label")
    if labels.min() < 0 or labels.max() >= N_CLASSES:
        raise ValueError("labels must be direction codes 0, 1, 2")
    counts = np.bincount(labels.astype(np.int64), minlength=N_CLASSES).astype(np.int64)
    n = int(counts.sum())
    weights = np.empty(N_CLASSES)
    absent = []
    for c in range(N_CLASSES):
        if counts[c] > 0:
            weights[c] = (1.0 - alpha) + alpha * n / (N_CLASSES * counts[c])
        else:
            weights[c] = max(1.0 - alpha, WEIGHT_FLOOR)
            absent.append(c)
    return ClassWeights(weights=weights, counts=counts, alpha=float(alpha), absent=tuple(absent))


# ---------------------------------------------------------------------------
# model specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Family plus a complete, validated hyperparameter assignment."""

    family: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        schema = HYPERPARAMETER_SCHEMA[self.family]
        given = dict(self.hyperparameters)
        unknown = set(given) - set(schema)
        if unknown:
            raise ValueError(
                f"{self.family}: unknown hyperparameters {sorted(unknown)}"
            )
        full = dict(DEFAULT_HYPERPARAMETERS[self.family])
        full.update(given)
        for name, value in full.items():
            kind, check, describe = schema[name]
            if kind is int and isinstance(value, bool):
                raise ValueError(f"{self.family}.{name}: got bool, expected int")
            if not isinstance(value, kind):
                if kind is float and isinstance(value, int) and not isinstance(value, bool):
                    value = float(value)
                    full[name] = value
                else:
                    raise ValueError(
                        f"{self.family}.{name}: expected {kind.__name__}, got {value!r}"
                    )
            if not check(value):
                raise ValueError(f"{self.family}.{name}: {value!r} outside {describe}")
        object.__setattr__(self, "hyperparameters", full)

    def digest(self) -> str:
        import hashlib
        import json

        blob = json.dumps(
            {"family": self.family, "hyperparameters": self.hyperparameters},
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# sub-models
# ---------------------------------------------------------------------------

class _ConstantSub:
    """Predicts one class with certainty; used for degenerate outputs."""

    kind = "constant"

    def __init__(self, class_code: int):
        self.class_code = int(class_code)

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((X.shape[0], N_CLASSES))
        out[:, self.class_code] = 1.0
        return out

    def state(self):
        return {"kind": self.kind, "class_code": self.class_code}, {}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(meta["class_code"])


class _StaySub:
    """The persistence baseline: everything stays."""

    kind = "stay"

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((X.shape[0], N_CLASSES))
        out[:, 2] = 1.0
        return out

    def state(self):
        return {"kind": self.kind}, {}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls()


class _LinearSubBase:
    """Shared standardize-then-linear machinery."""

    def __init__(self, mu: np.ndarray, sigma: np.ndarray, W: np.ndarray):
        self.mu = mu
        self.sigma = sigma
        self.W = W  # (F+1, 3), last row is the bias

    def _margins(self, X: np.ndarray) -> np.ndarray:
        Xs = (X - self.mu) / self.sigma
        return Xs @ self.W[:-1] + self.W[-1]

    def state(self):
        return {"kind": self.kind}, {"mu": self.mu, "sigma": self.sigma, "W": self.W}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["mu"], arrays["sigma"], arrays["W"])


class _LogRegSub(_LinearSubBase):
    kind = "logreg"

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return _softmax(self._margins(X))


class _SvmSub(_LinearSubBase):
    kind = "linear_svm"

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        # scores are a softmax over the three one-vs-rest margins
        return _softmax(self._margins(X))


class _ForestSub:
    kind = "random_forest"

    def __init__(self, trees: list[ClassificationTree], oob: list[np.ndarray]):
        self.trees = trees
        self.oob = oob  # retained but unused by prediction

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        acc = np.zeros((X.shape[0], N_CLASSES))
        for tree in self.trees:
            acc += tree.predict_scores(X)
        return acc / len(self.trees)

    def leaf_matrix(self, X: np.ndarray) -> np.ndarray:
        return np.stack([t.apply(X) for t in self.trees])

    def tree_weights(self) -> np.ndarray:
        t = len(self.trees)
        return np.full(t, 1.0 / t)

    def state(self):
        meta = {"kind": self.kind, "n_trees": len(self.trees)}
        arrays = _pack_class_trees(self.trees)
        arrays["oob_cat"] = (
            np.concatenate(self.oob) if self.oob else np.zeros(0, np.int64)
        ).astype(np.int64)
        arrays["oob_offsets"] = np.cumsum([0] + [o.size for o in self.oob]).astype(np.int64)
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        trees = _unpack_class_trees(arrays, meta["n_trees"])
        off = arrays["oob_offsets"]
        oob = [arrays["oob_cat"][off[i] : off[i + 1]] for i in range(meta["n_trees"])]
        return cls(trees, oob)


class _AdaSub:
    kind = "adaboost"

    def __init__(self, trees: list[ClassificationTree], alphas: np.ndarray, priors: np.ndarray):
        self.trees = trees
        self.alphas = alphas
        self.priors = priors  # fallback scores if boosting stopped before round 1

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            return np.tile(self.priors, (X.shape[0], 1))
        votes = np.zeros((X.shape[0], N_CLASSES))
        for tree, a in zip(self.trees, self.alphas):
            labels = tree.predict_labels(X)
            votes[np.arange(X.shape[0]), labels] += a
        return votes / self.alphas.sum()

    def leaf_matrix(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("adaboost model kept no rounds; no evidence trees")
        return np.stack([t.apply(X) for t in self.trees])

    def tree_weights(self) -> np.ndarray:
        return self.alphas / self.alphas.sum()

    def state(self):
        meta = {"kind": self.kind, "n_trees": len(self.trees)}
        arrays = _pack_class_trees(self.trees)
        arrays["alphas"] = self.alphas
        arrays["priors"] = self.priors
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        trees = _unpack_class_trees(arrays, meta["n_trees"])
        return cls(trees, arrays["alphas"], arrays["priors"])


class _GradSub:
    kind = "gradboost"

    def __init__(
        self,
        init_f: np.ndarray,
        trees: list[RegressionTree],
        learning_rate: float,
        deviance_path: np.ndarray,
    ):
        self.init_f = init_f          # (3,) log-prior scores
        self.trees = trees            # round-major: [r0c0, r0c1, r0c2, r1c0, ...]
        self.learning_rate = learning_rate
        self.deviance_path = deviance_path

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        F = np.tile(self.init_f, (X.shape[0], 1))
        for t, tree in enumerate(self.trees):
            F[:, t % N_CLASSES] += self.learning_rate * tree.predict(X)
        return F

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return _softmax(self.decision_function(X))

    def leaf_matrix(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("gradboost model has zero rounds; no evidence trees")
        return np.stack([t.apply(X) for t in self.trees])

    def tree_weights(self) -> np.ndarray:
        t = len(self.trees)
        return np.full(t, 1.0 / t)

    def state(self):
        meta = {
            "kind": self.kind,
            "n_trees": len(self.trees),
            "learning_rate": self.learning_rate,
        }
        arrays = _pack_reg_trees(self.trees)
        arrays["init_f"] = self.init_f
        arrays["deviance_path"] = self.deviance_path
        return meta, arrays

    @classmethod
    def from_state(cls, meta, arrays):
        trees = _unpack_reg_trees(arrays, meta["n_trees"])
        return cls(arrays["init_f"], trees, float(meta["learning_rate"]), arrays["deviance_path"])


_SUB_KINDS = {
    "constant": _ConstantSub,
    "stay": _StaySub,
    "logreg": _LogRegSub,
    "linear_svm": _SvmSub,
    "random_forest": _ForestSub,
    "adaboost": _AdaSub,
    "gradboost": _GradSub,
}


def _pack_class_trees(trees: list[ClassificationTree]) -> dict[str, np.ndarray]:
    sizes = [t.n_nodes for t in trees]
    return {
        "node_offsets": np.cumsum([0] + sizes).astype(np.int64),
        "feature_cat": np.concatenate([t.feature for t in trees]) if trees else np.zeros(0, np.int64),
        "threshold_cat": np.concatenate([t.threshold for t in trees]) if trees else np.zeros(0),
        "left_cat": np.concatenate([t.left for t in trees]) if trees else np.zeros(0, np.int64),
        "right_cat": np.concatenate([t.right for t in trees]) if trees else np.zeros(0, np.int64),
        "leaf_w_cat": (
            np.concatenate([t.leaf_class_w for t in trees])
            if trees
            else np.zeros((0, N_CLASSES))
        ),
    }


def _unpack_class_trees(arrays: dict[str, np.ndarray], n_trees: int) -> list[ClassificationTree]:
    off = arrays["node_offsets"]
    out = []
    for i in range(n_trees):
        lo, hi = off[i], off[i + 1]
        out.append(
            ClassificationTree(
                feature=arrays["feature_cat"][lo:hi],
                threshold=arrays["threshold_cat"][lo:hi],
                left=arrays["left_cat"][lo:hi],
                right=arrays["right_cat"][lo:hi],
                leaf_class_w=arrays["leaf_w_cat"][lo:hi],
            )
        )
    return out


def _pack_reg_trees(trees: list[RegressionTree]) -> dict[str, np.ndarray]:
    sizes = [t.n_nodes for t in trees]
    return {
        "node_offsets": np.cumsum([0] + sizes).astype(np.int64),
        "feature_cat": np.concatenate([t.feature for t in trees]) if trees else np.zeros(0, np.int64),
        "threshold_cat": np.concatenate([t.threshold for t in trees]) if trees else np.zeros(0),
        "left_cat": np.concatenate([t.left for t in trees]) if trees else np.zeros(0, np.int64),
        "right_cat": np.concatenate([t.right for t in trees]) if trees else np.zeros(0, np.int64),
        "leaf_value_cat": np.concatenate([t.leaf_value for t in trees]) if trees else np.zeros(0),
    }


def _unpack_reg_trees(arrays: dict[str, np.ndarray], n_trees: int) -> list[RegressionTree]:
    off = arrays["node_offsets"]
    out = []
    for i in range(n_trees):
        lo, hi = off[i], off[i + 1]
        out.append(
            RegressionTree(
                feature=arrays["feature_cat"][lo:hi],
                threshold=arrays["threshold_cat"][lo:hi],
                left=arrays["left_cat"][lo:hi],
                right=arrays["right_cat"][lo:hi],
                leaf_value=arrays["leaf_value_cat"][lo:hi],
            )
        )
    return out


# ---------------------------------------------------------------------------
# family fitters
# ---------------------------------------------------------------------------

def logreg_loss_grad(
    w_flat: np.ndarray,
    Xb: np.ndarray,
    y: np.ndarray,
    sample_w: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray]:
    """Weighted softmax cross-entropy with L2 on everything but the bias row.

    ``Xb`` carries the bias column last; ``w_flat`` is the (F+1, 3) weight
    matrix raveled C-order.  Returns (loss, gradient raveled the same way).
    """
    d = Xb.shape[1]
    W = w_flat.reshape(d, N_CLASSES)
    total = sample_w.sum()
    P = _softmax(Xb @ W)
    picked = P[np.arange(y.size), y]
    loss = -(sample_w * np.log(np.clip(picked, 1e-300, None))).sum() / total
    loss += 0.5 * l2 * (W[:-1] ** 2).sum()
    Y = np.zeros_like(P)
    Y[np.arange(y.size), y] = 1.0
    G = Xb.T @ ((P - Y) * sample_w[:, None]) / total
    G[:-1] += l2 * W[:-1]
    return float(loss), G.ravel()


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma = np.where(sigma > 0.0, sigma, 1.0)
    return (X - mu) / sigma, mu, sigma


def _with_bias(Xs: np.ndarray) -> np.ndarray:
    return np.hstack([Xs, np.ones((Xs.shape[0], 1))])


def _fit_logreg(X, y, sample_w, hp, rng):
    Xs, mu, sigma = _standardize(X)
    Xb = _with_bias(Xs)
    d = Xb.shape[1]
    W = np.zeros((d, N_CLASSES))
    lr = hp["learning_rate"]
    loss, grad = logreg_loss_grad(W.ravel(), Xb, y, sample_w, hp["l2"])
    for _ in range(hp["epochs"]):
        W_try = W - lr * grad.reshape(d, N_CLASSES)
        new_loss, new_grad = logreg_loss_grad(W_try.ravel(), Xb, y, sample_w, hp["l2"])
        if new_loss > loss:
            lr *= 0.5   # step overshot; halve and retry from the same point
            continue
        W, loss, grad = W_try, new_loss, new_grad
    return _LogRegSub(mu, sigma, W)


def _fit_svm(X, y, sample_w, hp, rng):
    Xs, mu, sigma = _standardize(X)
    Xb = np.ascontiguousarray(_with_bias(Xs))
    d = Xb.shape[1]
    W = np.zeros((d, N_CLASSES))
    for c in range(N_CLASSES):
        ysign = np.where(y == c, 1.0, -1.0)
        wvec = np.zeros(d)
        kernels.svm_epochs(Xb, ysign, sample_w, hp["l2"], hp["epochs"], wvec)
        W[:, c] = wvec
    return _SvmSub(mu, sigma, W)


def _fit_forest(X, y, sample_w, hp, rng):
    pre = presort(X)
    n = X.shape[0]
    mtry = default_mtry(pre.n_features)
    trees = []
    oob = []
    for _ in range(hp["trees"]):
        draws = rng.integers(0, n, size=n)
        cnt = np.bincount(draws, minlength=n).astype(np.int64)
        w_eff = sample_w * cnt
        tree = grow_classification_tree(
            pre, y, w_eff, cnt, N_CLASSES,
            max_depth=hp["max_depth"], min_leaf=hp["min_leaf"],
            mtry=mtry, rng=rng,
        )
        trees.append(tree)
        oob.append(np.flatnonzero(cnt == 0).astype(np.int64))
    return _ForestSub(trees, oob)


def _fit_adaboost(X, y, sample_w, hp, rng):
    pre = presort(X)
    n = X.shape[0]
    ones = np.ones(n, np.int64)
    D = sample_w / sample_w.sum()
    trees = []
    alphas = []
    # SAMME: a round is useful only while weighted error stays below (K-1)/K
    limit = 1.0 - 1.0 / N_CLASSES
    for _ in range(hp["rounds"]):
        tree = grow_classification_tree(
            pre, y, D, ones, N_CLASSES,
            max_depth=hp["max_depth"], min_leaf=hp["min_leaf"],
        )
        pred = tree.predict_labels(pre.X)
        wrong = pred != y
        err = float(D[wrong].sum())
        if err >= limit:
            break
        if err <= 0.0:
            trees.append(tree)
            alphas.append(np.log((1.0 - 1e-10) / 1e-10) + np.log(N_CLASSES - 1.0))
            break
        a = np.log((1.0 - err) / err) + np.log(N_CLASSES - 1.0)
        trees.append(tree)
        alphas.append(a)
        D = D * np.exp(a * wrong)
        D = D / D.sum()
    priors = np.bincount(y, weights=sample_w, minlength=N_CLASSES)
    priors = priors / priors.sum()
    return _AdaSub(trees, np.array(alphas), priors)


def _fit_gradboost(X, y, sample_w, hp, rng):
    pre = presort(X)
    n = X.shape[0]
    total_w = sample_w.sum()
    Y = np.zeros((n, N_CLASSES))
    Y[np.arange(n), y] = 1.0
    prior = np.bincount(y, weights=sample_w, minlength=N_CLASSES) / total_w
    init_f = np.log(np.clip(prior, 1e-12, None))
    F = np.tile(init_f, (n, 1))
    lr = hp["learning_rate"]
    subsample = hp["subsample"]
    leaf_scale = (N_CLASSES - 1.0) / N_CLASSES

    def deviance() -> float:
        P = _softmax(F)
        picked = P[np.arange(n), y]
        return float(-(sample_w * np.log(np.clip(picked, 1e-300, None))).sum() / total_w)

    path = [deviance()]
    trees: list[RegressionTree] = []
    for _ in range(hp["rounds"]):
        if subsample < 1.0:
            take = max(1, int(np.ceil(subsample * n)))
            chosen = rng.permutation(n)[:take]
            cnt = np.zeros(n, np.int64)
            cnt[chosen] = 1
        else:
            cnt = np.ones(n, np.int64)
        P = _softmax(F)
        for c in range(N_CLASSES):
            resid = Y[:, c] - P[:, c]
            hess = P[:, c] * (1.0 - P[:, c])
            tree = grow_regression_tree(
                pre, resid, sample_w, hess, cnt,
                max_depth=hp["max_depth"], min_leaf=hp["min_leaf"],
                leaf_scale=leaf_scale,
            )
            F[:, c] += lr * tree.predict(pre.X)
            trees.append(tree)
        path.append(deviance())
    return _GradSub(init_f, trees, lr, np.array(path))


def _fit_stay(X, y, sample_w, hp, rng):
    return _StaySub()


_FITTERS = {
    "stay": _fit_stay,
    "logreg": _fit_logreg,
    "linear_svm": _fit_svm,
    "random_forest": _fit_forest,
    "adaboost": _fit_adaboost,
    "gradboost": _fit_gradboost,
}


# ---------------------------------------------------------------------------
# the bank
# ---------------------------------------------------------------------------

@dataclass
class ModelBank:
    """M x f sub-models plus everything needed to route features and explain."""

    spec: ModelSpec
    alpha: float
    markets: list[str]
    b: int
    f: int
    cyclic_doy: bool
    layout: str
    n_features: int
    class_priors: np.ndarray        # (M, f, 3) empirical target priors
    degenerate: np.ndarray          # (M, f) int8 codes
    weight_flags: np.ndarray        # (M, f, 3) uint8, 1 where the class weight was floor-clamped
    submodels: list
    evidence_X: np.ndarray          # (n, F) training features
    evidence_anchors: np.ndarray    # (n,) int64 date ordinals
    evidence_labels: np.ndarray     # (n, M, f) int8
    evidence_mask: np.ndarray       # (n, M, f) bool

    @property
    def n_markets(self) -> int:
        return len(self.markets)

    def submodel(self, m: int, k: int):
        return self.submodels[m * self.f + k]

    def anchor_date(self, example_index: int) -> dt.date:
        return dt.date.fromordinal(int(self.evidence_anchors[example_index]))

    def realized_label(self, example_index: int, m: int, k: int) -> int | None:
        if not self.evidence_mask[example_index, m, k]:
            return None
        return int(self.evidence_labels[example_index, m, k])


@dataclass(frozen=True)
class Forecast:
    labels: np.ndarray   # (M, f) int8
    scores: np.ndarray   # (M, f, 3) float64


def _fit_one_output(spec, X, y_col, mask_col, alpha, global_majority, m, k):
    idx = np.flatnonzero(mask_col)
    priors = np.zeros(N_CLASSES)
    flags = np.zeros(N_CLASSES, np.uint8)
    if idx.size == 0:
        return _ConstantSub(global_majority), priors, DEGEN_NO_TARGETS, flags
    y = y_col[idx].astype(np.int64)
    counts = np.bincount(y, minlength=N_CLASSES)
    priors = counts / counts.sum()
    present = np.flatnonzero(counts)
    if present.size == 1:
        return _ConstantSub(int(present[0])), priors, DEGEN_SINGLE_CLASS, flags
    cw = class_weights(y, alpha)
    flags[list(cw.absent)] = 1
    sample_w = cw.per_example(y)
    ss = np.random.SeedSequence(entropy=spec.seed, spawn_key=(m, k))
    rng = np.random.Generator(np.random.PCG64(ss))
    sub = _FITTERS[spec.family](X[idx], y, sample_w, spec.hyperparameters, rng)
    return sub, priors, DEGEN_NONE, flags


def train(
    spec: ModelSpec,
    examples: list[WindowExample],
    alpha: float,
    *,
    markets: list[str] | None = None,
    cyclic_doy: bool = False,
    workers: int = 1,
) -> ModelBank:
    """Fit one sub-model per (market, horizon) cell.

    Each sub-model sees only examples whose target there was observed.
    Results are identical for any workers >= 1: every job derives its own
    RNG stream from (seed, m, k) and jobs share nothing mutable.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if not examples:
        raise ValueError("train needs at least one example")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    m_count = examples[0].n_markets
    b = examples[0].b
    f = examples[0].f
    for ex in examples:
        if ex.n_markets != m_count or ex.b != b or ex.f != f:
            raise ValueError("examples disagree on (markets, b, f) shape")
    if markets is None:
        markets = [f"m{i}" for i in range(m_count)]
    elif len(markets) != m_count:
        raise ValueError(
            f"{len(markets)} market names for {m_count} market rows"
        )

    X = features_matrix(examples, cyclic_doy)
    labels, mask = targets_tensor(examples)
    observed = labels[mask]
    if observed.size == 0:
        raise ValueError("no observed targets in any example")
    global_majority = int(np.argmax(np.bincount(observed.astype(np.int64), minlength=N_CLASSES)))

    jobs = [(m, k) for m in range(m_count) for k in range(f)]

    def run(job):
        m, k = job
        return _fit_one_output(
            spec, X, labels[:, m, k], mask[:, m, k], alpha, global_majority, m, k
        )

    if workers == 1:
        results = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))

    submodels = [r[0] for r in results]
    priors = np.stack([r[1] for r in results]).reshape(m_count, f, N_CLASSES)
    degenerate = np.array([r[2] for r in results], np.int8).reshape(m_count, f)
    weight_flags = np.stack([r[3] for r in results]).reshape(m_count, f, N_CLASSES)

    anchors = np.array([ex.anchor.toordinal() for ex in examples], np.int64)
    return ModelBank(
        spec=spec,
        alpha=float(alpha),
        markets=list(markets),
        b=b,
        f=f,
        cyclic_doy=cyclic_doy,
        layout=layout_version(cyclic_doy),
        n_features=X.shape[1],
        class_priors=priors,
        degenerate=degenerate,
        weight_flags=weight_flags,
        submodels=submodels,
        evidence_X=X,
        evidence_anchors=anchors,
        evidence_labels=labels,
        evidence_mask=mask,
    )


def _check_features(bank: ModelBank, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1 or features.shape[0] != bank.n_features:
        raise LayoutMismatchError(
            f"feature vector of length {features.shape[-1] if features.ndim else 0} "
            f"does not fit layout {bank.layout!r} "
            f"(markets={bank.n_markets}, b={bank.b}, f={bank.f}, "
            f"expected {bank.n_features})"
        )
    return features


def predict(bank: ModelBank, features: np.ndarray) -> Forecast:
    """Scores and argmax labels for every (market, horizon) output.

    Each score triple is normalized; argmax ties resolve in class-code
    order (UP before DOWN before STAY)."""
    features = _check_features(bank, features)
    X1 = features[None, :]
    scores = np.empty((bank.n_markets, bank.f, N_CLASSES))
    for m in range(bank.n_markets):
        for k in range(bank.f):
            scores[m, k] = bank.submodel(m, k).predict_scores(X1)[0]
    labels = np.argmax(scores, axis=2).astype(np.int8)
    return Forecast(labels=labels, scores=scores)


def predict_batch(bank: ModelBank, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict over rows: labels (n, M, f), scores (n, M, f, 3)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != bank.n_features:
        raise LayoutMismatchError(
            f"feature matrix width {X.shape[-1]} does not fit layout "
            f"{bank.layout!r} (expected {bank.n_features})"
        )
    n = X.shape[0]
    scores = np.empty((n, bank.n_markets, bank.f, N_CLASSES))
    for m in range(bank.n_markets):
        for k in range(bank.f):
            scores[:, m, k, :] = bank.submodel(m, k).predict_scores(X)
    labels = np.argmax(scores, axis=3).astype(np.int8)
    return labels, scores


def explain(
    bank: ModelBank,
    features: np.ndarray,
    output: tuple[int, int],
    top_k: int = 3,
) -> list[tuple[int, float]]:
    """Most similar training examples for one (market, horizon) output.

    Similarity is the tree-weighted fraction of trees in which the query
    shares a leaf with the training example.  Ties rank the earlier anchor
    date first.  Only tree families carry this evidence; anything else is
    rejected.
    """
    if bank.spec.family not in TREE_FAMILIES:
        raise ValueError(
            f"family {bank.spec.family!r} keeps no per-leaf evidence; "
            f"explain needs one of {TREE_FAMILIES}"
        )
    m, k = output
    if not (0 <= m < bank.n_markets and 0 <= k < bank.f):
        raise ValueError(f"output {output} outside grid "
                         f"{bank.n_markets} markets x {bank.f} horizons")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    sub = bank.submodel(m, k)
    if isinstance(sub, _ConstantSub):
        raise ValueError(f"output (market={m}, horizon={k}) is degenerate; no evidence trees")
    features = _check_features(bank, features)
    idx = np.flatnonzero(bank.evidence_mask[:, m, k])
    X_train = bank.evidence_X[idx]
    leaves_train = sub.leaf_matrix(X_train)          # (T, n_tr)
    leaf_q = sub.leaf_matrix(features[None, :])[:, 0]  # (T,)
    tw = sub.tree_weights()
    sims = (leaves_train == leaf_q[:, None]).astype(np.float64).T @ tw
    order = np.lexsort((idx, bank.evidence_anchors[idx], -sims))
    take = order[: min(top_k, order.size)]
    return [(int(idx[i]), float(sims[i])) for i in take]
