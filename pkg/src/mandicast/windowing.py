"""Sliding-window featurization of an aligned panel.

Each example looks back ``b`` change-days across every market and targets the
next ``f`` change-days, again across every market.  Unobserved past changes
are zero-filled with their mask carried alongside; unobserved future targets
are STAY-filled with their mask carried alongside, so a model sees which
entries were real.  The flat feature layout is versioned: models refuse
vectors from a different layout.
"""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass

import numpy as np

from .panel import AlignedPanel, DirectionLabel

__all__ = [
    "WindowConfig",
    "WindowExample",
    "SplitSpec",
    "build_examples",
    "flatten_features",
    "inference_features",
    "feature_length",
    "layout_version",
    "features_matrix",
    "targets_tensor",
    "split_examples",
]

log = logging.getLogger(__name__)

_STAY = int(DirectionLabel.STAY)


@dataclass(frozen=True)
class WindowConfig:
    """b past change-days of context, f future change-days of targets."""

    b: int
    f: int

    def __post_init__(self) -> None:
        if self.b < 1:
            raise ValueError(f"b must be >= 1, got {self.b}")
        if self.f < 1:
            raise ValueError(f"f must be >= 1, got {self.f}")


@dataclass(frozen=True)
class WindowExample:
    """One anchored window over all markets.

    past_changes   (M, b) float64, zero where past_mask is False
    past_mask      (M, b) bool
    future_mask    (M, f) bool, True iff that target day's change is observed
    future_labels  (M, f) int8 DirectionLabel codes, STAY where masked
    doy            (b,) int64 calendar ordinals of the past window's days
    """

    anchor: dt.date
    past_changes: np.ndarray
    past_mask: np.ndarray
    future_mask: np.ndarray
    future_labels: np.ndarray
    doy: np.ndarray

    @property
    def n_markets(self) -> int:
        return int(self.past_changes.shape[0])

    @property
    def b(self) -> int:
        return int(self.past_changes.shape[1])

    @property
    def f(self) -> int:
        return int(self.future_mask.shape[1])

    def last_target_date(self) -> dt.date:
        return self.anchor + dt.timedelta(days=self.f)


def build_examples(panel: AlignedPanel, cfg: WindowConfig) -> list[WindowExample]:
    """Enumerate every valid anchor at stride 1, in date order.

    An anchor is a change-day with b-1 change-day predecessors and f
    change-day successors.  With D change-days (the calendar minus its
    first day) that yields D - b - f + 1 examples.
    """
    n_days = panel.n_days
    n_change_days = n_days - 1
    if cfg.b + cfg.f > n_change_days:
        raise ValueError(
            f"window b={cfg.b} f={cfg.f} needs {cfg.b + cfg.f} change-days, "
            f"panel has {n_change_days}"
        )
    change = np.nan_to_num(panel.change, nan=0.0)
    mask = panel.change_mask
    direction = panel.direction
    doy_axis = panel.day_of_year_axis()
    dates = panel.dates()

    labels_filled = np.where(mask, direction, _STAY).astype(np.int8)

    out: list[WindowExample] = []
    # calendar index a anchors the example; past uses columns a-b+1..a,
    # future uses a+1..a+f, all of which must be change-days (index >= 1)
    for a in range(cfg.b, n_days - cfg.f):
        lo = a - cfg.b + 1
        out.append(
            WindowExample(
                anchor=dates[a],
                past_changes=change[:, lo : a + 1].copy(),
                past_mask=mask[:, lo : a + 1].copy(),
                future_mask=mask[:, a + 1 : a + 1 + cfg.f].copy(),
                future_labels=labels_filled[:, a + 1 : a + 1 + cfg.f].copy(),
                doy=doy_axis[lo : a + 1].copy(),
            )
        )
    return out


def feature_length(n_markets: int, b: int, f: int, cyclic_doy: bool = False) -> int:
    doy_len = 2 * b if cyclic_doy else b
    return 2 * n_markets * b + n_markets * f + doy_len


def layout_version(cyclic_doy: bool = False) -> str:
    return "flat-cyclic-v1" if cyclic_doy else "flat-v1"


def _doy_segment(doy: np.ndarray, cyclic_doy: bool) -> np.ndarray:
    if not cyclic_doy:
        return doy.astype(np.float64)
    theta = 2.0 * np.pi * (doy.astype(np.float64) - 1.0) / 366.0
    return np.concatenate([np.sin(theta), np.cos(theta)])


def flatten_features(ex: WindowExample, cyclic_doy: bool = False) -> np.ndarray:
    """Row-major [past_changes | past_mask | future_mask | doy] vector."""
    return np.concatenate(
        [
            ex.past_changes.ravel(),
            ex.past_mask.ravel().astype(np.float64),
            ex.future_mask.ravel().astype(np.float64),
            _doy_segment(ex.doy, cyclic_doy),
        ]
    )


def inference_features(
    panel: AlignedPanel,
    anchor: dt.date,
    cfg: WindowConfig,
    cyclic_doy: bool = False,
) -> np.ndarray:
    """Features for a true forecast at ``anchor``: the future-mask segment is
    all ones and no future cell is read.  The anchor needs b-1 change-day
    predecessors; it may be the panel's last calendar day."""
    a = panel.day_index(anchor)
    if a < cfg.b:
        raise ValueError(
            f"anchor {anchor} lacks {cfg.b - 1} change-day predecessors in the panel"
        )
    lo = a - cfg.b + 1
    change = np.nan_to_num(panel.change[:, lo : a + 1], nan=0.0)
    mask = panel.change_mask[:, lo : a + 1]
    doy_axis = panel.day_of_year_axis()[lo : a + 1]
    m = panel.n_markets
    return np.concatenate(
        [
            change.ravel(),
            mask.ravel().astype(np.float64),
            np.ones(m * cfg.f),
            _doy_segment(doy_axis, cyclic_doy),
        ]
    )


def features_matrix(examples: list[WindowExample], cyclic_doy: bool = False) -> np.ndarray:
    if not examples:
        raise ValueError("no examples to featurize")
    return np.stack([flatten_features(ex, cyclic_doy) for ex in examples])


def targets_tensor(examples: list[WindowExample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack labels and masks: (n, M, f) int8 and (n, M, f) bool."""
    labels = np.stack([ex.future_labels for ex in examples])
    mask = np.stack([ex.future_mask for ex in examples])
    return labels, mask


@dataclass(frozen=True)
class SplitSpec:
    """Chronological boundaries; each is the last date its split may touch."""

    train_end: dt.date
    val_end: dt.date
    test_end: dt.date

    def __post_init__(self) -> None:
        if not (self.train_end <= self.val_end <= self.test_end):
            raise ValueError(
                f"split boundaries out of order: {self.train_end} / "
                f"{self.val_end} / {self.test_end}"
            )


def split_examples(
    examples: list[WindowExample],
    spec: SplitSpec,
) -> tuple[list[WindowExample], list[WindowExample], list[WindowExample]]:
    """Assign each example by its last target date, so a window straddling a
    boundary lands in the later split and training examples never read
    beyond train_end.  Examples past test_end are dropped."""
    train: list[WindowExample] = []
    val: list[WindowExample] = []
    test: list[WindowExample] = []
    for ex in examples:
        last = ex.last_target_date()
        if last <= spec.train_end:
            train.append(ex)
        elif last <= spec.val_end:
            val.append(ex)
        elif last <= spec.test_end:
            test.append(ex)
    for name, part in (("train", train), ("validation", val), ("test", test)):
        if not part:
            log.warning("split %r is empty for boundaries %s", name, spec)
    return train, val, test
