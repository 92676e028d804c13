"""Pooled evaluation, hyperparameter search, and the alpha trade-off curve.

All outputs of a model bank are scored together: every observed target cell
of every example becomes one prediction in a single 3x3 confusion matrix
(rows are truth, columns are predictions).  Two summary numbers matter:

    raw       fraction of all pooled predictions that are correct
    balanced  mean per-class recall over the classes present in truth

Training with alpha trades one for the other; ``alpha_sweep`` measures the
whole curve and ``emit_curve`` writes it as CSV plus a self-contained SVG,
both byte-deterministic for a given sweep.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .learners import N_CLASSES, ModelBank, ModelSpec, predict_batch, train
from .panel import AlignedPanel, DirectionLabel
from .windowing import (
    SplitSpec,
    WindowConfig,
    WindowExample,
    build_examples,
    features_matrix,
    split_examples,
    targets_tensor,
)

__all__ = [
    "ConfusionMatrix",
    "EvalReport",
    "TuneResult",
    "SweepRow",
    "confusion_from_labels",
    "evaluate",
    "tune",
    "alpha_sweep",
    "emit_curve_csv",
    "emit_curve_svg",
    "format_report",
]

_CLASS_NAMES = ("Up", "Down", "Stay")


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 counts; rows index the true class, columns the predicted one."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (N_CLASSES, N_CLASSES) or (c < 0).any():
            raise ValueError("confusion counts must be a non-negative 3x3 matrix")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def raw_accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("empty confusion matrix has no accuracy")
        return float(np.trace(self.counts)) / self.total

    def recalls(self) -> tuple:
        """Per-class recall; None where the class never occurs in truth."""
        out = []
        for c in range(N_CLASSES):
            row = self.counts[c].sum()
            out.append(float(self.counts[c, c] / row) if row > 0 else None)
        return tuple(out)

    @property
    def absent_classes(self) -> tuple:
        return tuple(c for c in range(N_CLASSES) if self.counts[c].sum() == 0)

    @property
    def balanced_accuracy(self) -> float:
        present = [r for r in self.recalls() if r is not None]
        if not present:
            raise ValueError("confusion matrix has no true class at all")
        return float(sum(present) / len(present))

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion_from_labels(y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError("truth and prediction lengths differ")
    for arr in (y_true, y_pred):
        if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
            raise ValueError("labels must be direction codes 0, 1, 2")
    counts = np.bincount(
        y_true * N_CLASSES + y_pred, minlength=N_CLASSES * N_CLASSES
    ).reshape(N_CLASSES, N_CLASSES)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    raw: float
    balanced: float
    recalls: tuple
    absent_classes: tuple
    n_examples: int
    n_predictions: int
    family: str
    alpha: float
    b: int
    f: int
    spec_digest: str


def evaluate(bank: ModelBank, examples: list[WindowExample]) -> EvalReport:
    """Score a bank on examples, pooling every observed target cell.

    Features are built from each example's own recorded masks, so scoring
    historical windows asks exactly the question training asked.  Cells
    whose outcome was never observed are excluded rather than guessed.
    """
    if not examples:
        raise DataError("evaluate needs at least one example")
    X = features_matrix(examples, bank.cyclic_doy)
    labels, mask = targets_tensor(examples)
    if labels.shape[1] != bank.n_markets or labels.shape[2] != bank.f:
        raise DataError(
            f"examples carry {labels.shape[1]} markets x {labels.shape[2]} horizons, "
            f"model expects {bank.n_markets} x {bank.f}"
        )
    pred, _ = predict_batch(bank, X)
    if not mask.any():
        raise DataError("no observed target cells to evaluate")
    cm = confusion_from_labels(labels[mask], pred[mask])
    return EvalReport(
        confusion=cm,
        raw=cm.raw_accuracy,
        balanced=cm.balanced_accuracy,
        recalls=cm.recalls(),
        absent_classes=cm.absent_classes,
        n_examples=len(examples),
        n_predictions=cm.total,
        family=bank.spec.family,
        alpha=bank.alpha,
        b=bank.b,
        f=bank.f,
        spec_digest=bank.spec.digest(),
    )


def objective(raw: float, balanced: float, alpha: float) -> float:
    return (1.0 - alpha) * raw + alpha * balanced


@dataclass(frozen=True)
class TuneResult:
    best_spec: ModelSpec
    best_b: int
    best_objective: float
    val_report: EvalReport
    table: list   # (b, family, spec_digest, val_raw, val_balanced, objective)


def tune(
    panel: AlignedPanel,
    split: SplitSpec,
    specs: list[ModelSpec],
    b_grid: list[int],
    f: int,
    alpha: float,
    *,
    cyclic_doy: bool = False,
    workers: int = 1,
) -> TuneResult:
    """Grid search over history length and model spec on the validation split.

    Selection maximizes (1 - alpha) * raw + alpha * balanced with strict
    improvement only, so ties keep the smaller b and the earlier spec.
    """
    if not specs:
        raise ValueError("tune needs at least one spec")
    if not b_grid:
        raise ValueError("tune needs at least one b value")
    best = None
    table = []
    for b in sorted(b_grid):
        examples = build_examples(panel, WindowConfig(b=b, f=f))
        train_ex, val_ex, _ = split_examples(examples, split)
        if not train_ex or not val_ex:
            raise DataError(f"b={b}: empty train or validation split")
        for spec in specs:
            bank = train(
                spec, train_ex, alpha,
                markets=panel.markets, cyclic_doy=cyclic_doy, workers=workers,
            )
            report = evaluate(bank, val_ex)
            score = objective(report.raw, report.balanced, alpha)
            table.append((b, spec.family, spec.digest(), report.raw, report.balanced, score))
            if best is None or score > best[0]:
                best = (score, spec, b, report)
    score, spec, b, report = best
    return TuneResult(
        best_spec=spec, best_b=b, best_objective=score,
        val_report=report, table=table,
    )


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    family: str
    b: int
    val_raw: float
    val_balanced: float
    test_raw: float
    test_balanced: float
    spec_digest: str


def alpha_sweep(
    panel: AlignedPanel,
    split: SplitSpec,
    specs: list[ModelSpec],
    b: int,
    f: int,
    alphas: list[float],
    *,
    cyclic_doy: bool = False,
    refit_with_validation: bool = False,
    workers: int = 1,
) -> list[SweepRow]:
    """Train at each alpha and score both validation and test splits.

    With ``refit_with_validation`` the model scored on test is refitted on
    train plus validation; by default the very model that was validated is
    the one tested.
    """
    if not specs or not alphas:
        raise ValueError("alpha_sweep needs at least one spec and one alpha")
    examples = build_examples(panel, WindowConfig(b=b, f=f))
    train_ex, val_ex, test_ex = split_examples(examples, split)
    if not train_ex or not val_ex or not test_ex:
        raise DataError("alpha_sweep needs non-empty train, validation, and test splits")
    rows = []
    for spec in specs:
        for alpha in alphas:
            bank = train(
                spec, train_ex, alpha,
                markets=panel.markets, cyclic_doy=cyclic_doy, workers=workers,
            )
            val = evaluate(bank, val_ex)
            if refit_with_validation:
                bank = train(
                    spec, train_ex + val_ex, alpha,
                    markets=panel.markets, cyclic_doy=cyclic_doy, workers=workers,
                )
            test = evaluate(bank, test_ex)
            rows.append(SweepRow(
                alpha=float(alpha), family=spec.family, b=b,
                val_raw=val.raw, val_balanced=val.balanced,
                test_raw=test.raw, test_balanced=test.balanced,
                spec_digest=spec.digest(),
            ))
    return rows


# ---------------------------------------------------------------------------
# curve artifacts
# ---------------------------------------------------------------------------

def _sorted_rows(rows: list[SweepRow]) -> list[SweepRow]:
    return sorted(rows, key=lambda r: (r.family, r.alpha, r.b))


def emit_curve_csv(rows: list[SweepRow]) -> str:
    lines = ["alpha,family,b,val_raw,val_balanced,test_raw,test_balanced,spec_digest"]
    for r in _sorted_rows(rows):
        lines.append(
            f"{r.alpha:.6f},{r.family},{r.b},"
            f"{r.val_raw:.6f},{r.val_balanced:.6f},"
            f"{r.test_raw:.6f},{r.test_balanced:.6f},{r.spec_digest}"
        )
    return "\n".join(lines) + "\n"


_PALETTE = ("#1f6f8b", "#c14953", "#4a7c59", "#8a6d3b", "#5e548e", "#b26e63")

_W, _H = 800, 600
_ML, _MR, _MT, _MB = 70.0, 160.0, 30.0, 60.0


def _px(alpha: float) -> float:
    return _ML + alpha * (_W - _ML - _MR)

def _py(acc: float) -> float:
    return _H - _MB - acc * (_H - _MT - _MB)


def emit_curve_svg(rows: list[SweepRow]) -> str:
    """Skinny hand-rolled SVG: test accuracy vs alpha, one color per family.

    Solid polyline is raw accuracy, dashed is balanced.  Byte output is a
    pure function of the rows."""
    rows = _sorted_rows(rows)
    families = sorted({r.family for r in rows})
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>',
    ]
    # frame and grid
    for i in range(6):
        acc = i / 5.0
        y = _py(acc)
        parts.append(
            f'<line x1="{_ML:.1f}" y1="{y:.1f}" x2="{_W - _MR:.1f}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{_ML - 8:.1f}" y="{y + 4:.1f}" text-anchor="end" '
            f'font-family="monospace" font-size="12">{acc:.1f}</text>'
        )
    for i in range(5):
        a = i / 4.0
        x = _px(a)
        parts.append(
            f'<line x1="{x:.1f}" y1="{_MT:.1f}" x2="{x:.1f}" y2="{_H - _MB:.1f}" '
            f'stroke="#eeeeee" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_H - _MB + 18:.1f}" text-anchor="middle" '
            f'font-family="monospace" font-size="12">{a:.2f}</text>'
        )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.1f}" y="{_H - 16:.1f}" text-anchor="middle" '
        f'font-family="monospace" font-size="13">class-weight interpolation alpha</text>'
    )
    parts.append(
        f'<text x="18" y="{(_MT + _H - _MB) / 2:.1f}" text-anchor="middle" '
        f'font-family="monospace" font-size="13" '
        f'transform="rotate(-90 18 {(_MT + _H - _MB) / 2:.1f})">test accuracy</text>'
    )
    for fi, family in enumerate(families):
        color = _PALETTE[fi % len(_PALETTE)]
        frows = [r for r in rows if r.family == family]
        raw_pts = " ".join(f"{_px(r.alpha):.2f},{_py(r.test_raw):.2f}" for r in frows)
        bal_pts = " ".join(f"{_px(r.alpha):.2f},{_py(r.test_balanced):.2f}" for r in frows)
        parts.append(
            f'<polyline points="{raw_pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<polyline points="{bal_pts}" fill="none" stroke="{color}" '
            f'stroke-width="2" stroke-dasharray="6 4"/>'
        )
        for r in frows:
            parts.append(
                f'<circle cx="{_px(r.alpha):.2f}" cy="{_py(r.test_raw):.2f}" '
                f'r="3" fill="{color}"/>'
            )
            parts.append(
                f'<circle cx="{_px(r.alpha):.2f}" cy="{_py(r.test_balanced):.2f}" '
                f'r="3" fill="none" stroke="{color}"/>'
            )
        # annotate both ends of the sweep with the raw/balanced values there
        for r in (frows[0], frows[-1]):
            parts.append(
                f'<text x="{_px(r.alpha):.2f}" y="{_py(r.test_raw) - 8:.2f}" '
                f'text-anchor="middle" font-family="monospace" font-size="10" '
                f'fill="{color}">a={r.alpha:.2f} raw={r.test_raw:.3f}</text>'
            )
            parts.append(
                f'<text x="{_px(r.alpha):.2f}" y="{_py(r.test_balanced) + 16:.2f}" '
                f'text-anchor="middle" font-family="monospace" font-size="10" '
                f'fill="{color}">bal={r.test_balanced:.3f}</text>'
            )
        ly = _MT + 16 + 34 * fi
        lx = _W - _MR + 12
        parts.append(
            f'<line x1="{lx:.1f}" y1="{ly:.1f}" x2="{lx + 26:.1f}" y2="{ly:.1f}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<line x1="{lx:.1f}" y1="{ly + 14:.1f}" x2="{lx + 26:.1f}" y2="{ly + 14:.1f}" '
            f'stroke="{color}" stroke-width="2" stroke-dasharray="6 4"/>'
        )
        parts.append(
            f'<text x="{lx + 32:.1f}" y="{ly + 4:.1f}" font-family="monospace" '
            f'font-size="11">{family} raw</text>'
        )
        parts.append(
            f'<text x="{lx + 32:.1f}" y="{ly + 18:.1f}" font-family="monospace" '
            f'font-size="11">{family} balanced</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def format_report(report: EvalReport) -> str:
    """Plain-text evaluation summary for humans and grep."""
    lines = [
        f"family={report.family} alpha={report.alpha:.3f} "
        f"b={report.b} f={report.f} spec={report.spec_digest}",
        f"examples={report.n_examples} pooled_predictions={report.n_predictions}",
        f"raw_accuracy={report.raw:.6f}",
        f"balanced_accuracy={report.balanced:.6f}",
    ]
    for c, name in enumerate(_CLASS_NAMES):
        r = report.recalls[c]
        lines.append(
            f"recall_{name.lower()}={'absent' if r is None else f'{r:.6f}'}"
        )
    if report.absent_classes:
        names = ",".join(_CLASS_NAMES[c] for c in report.absent_classes)
        lines.append(f"absent_in_truth={names}")
    lines.append("confusion rows=truth cols=Up,Down,Stay")
    for c, name in enumerate(_CLASS_NAMES):
        row = " ".join(f"{int(v):8d}" for v in report.confusion.counts[c])
        lines.append(f"  {name:<5}{row}")
    return "\n".join(lines) + "\n"
