"""Aligned multi-market price panels and day-over-day direction labels.

A panel places every market's sparse price history on one shared daily
calendar.  From prices it derives fractional day-over-day changes, an
observation mask, and a three-way direction code per cell.  All downstream
featurization reads these grids; nothing else recomputes changes.
"""
from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "DirectionLabel",
    "PriceObservation",
    "PriceSeries",
    "AlignedPanel",
    "align",
    "direction_of",
    "missing_fraction",
    "day_of_year",
]


class DirectionLabel(IntEnum):
    """Movement of a price relative to the previous day.

    The integer codes are frozen; serialized artifacts and confusion-matrix
    axes rely on them.
    """

    UP = 0
    DOWN = 1
    STAY = 2


def direction_of(change: float, epsilon: float = 0.0) -> DirectionLabel:
    """Classify a fractional change: UP above +epsilon, DOWN below -epsilon,
    STAY inside the closed band [-epsilon, +epsilon]."""
    if math.isnan(change):
        raise ValueError("direction_of: change is NaN (unobserved cell)")
    if epsilon < 0:
        raise ValueError("direction_of: epsilon must be >= 0")
    if change > epsilon:
        return DirectionLabel.UP
    if change < -epsilon:
        return DirectionLabel.DOWN
    return DirectionLabel.STAY


def day_of_year(d: dt.date) -> int:
    """Ordinal day within the year: Jan 1 -> 1, Feb 29 -> 60 in leap years,
    Dec 31 -> 365 or 366."""
    return d.timetuple().tm_yday


@dataclass(frozen=True)
class PriceObservation:
    """One observed trading day: price in INR, optional arrivals in tonnes."""

    date: dt.date
    price: float
    arrivals: float | None = None

    def __post_init__(self) -> None:
        if not (self.price > 0):
            raise ValueError(f"price must be positive, got {self.price!r}")
        if self.arrivals is not None and self.arrivals < 0:
            raise ValueError(f"arrivals must be >= 0, got {self.arrivals!r}")


@dataclass(frozen=True)
class PriceSeries:
    """A single market's history for one commodity, strictly date-ascending."""

    market_id: str
    commodity: str
    observations: tuple[PriceObservation, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "observations", tuple(self.observations))
        dates = [o.date for o in self.observations]
        for a, b in zip(dates, dates[1:]):
            if a >= b:
                raise ValueError(
                    f"series {self.market_id!r}: observations not strictly "
                    f"ascending at {a} -> {b}"
                )


@dataclass
class AlignedPanel:
    """M markets x D calendar days of prices, changes, masks and directions.

    price        (M, D) float64, NaN where unobserved
    change       (M, D) float64, (p[d] - p[d-1]) / p[d-1]; NaN where masked
    change_mask  (M, D) bool, True iff both day d and d-1 are observed;
                 column 0 is always False
    direction    (M, D) int8, DirectionLabel codes; -1 where change_mask is
                 False.  The direction mask IS change_mask.
    """

    markets: list[str]
    commodity: str
    start: dt.date
    epsilon: float
    price: np.ndarray
    change: np.ndarray = field(repr=False)
    change_mask: np.ndarray = field(repr=False)
    direction: np.ndarray = field(repr=False)

    @property
    def n_markets(self) -> int:
        return len(self.markets)

    @property
    def n_days(self) -> int:
        return int(self.price.shape[1])

    @property
    def direction_mask(self) -> np.ndarray:
        return self.change_mask

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=self.n_days - 1)

    def dates(self) -> list[dt.date]:
        return [self.start + dt.timedelta(days=i) for i in range(self.n_days)]

    def day_index(self, d: dt.date) -> int:
        i = (d - self.start).days
        if not (0 <= i < self.n_days):
            raise ValueError(f"date {d} outside panel calendar {self.start}..{self.end}")
        return i

    def day_of_year_axis(self) -> np.ndarray:
        """Length-D int array of calendar day ordinals."""
        return np.array([day_of_year(d) for d in self.dates()], dtype=np.int64)

    def market_index(self, market_id: str) -> int:
        try:
            return self.markets.index(market_id)
        except ValueError:
            raise KeyError(f"unknown market {market_id!r}") from None


def align(
    series: list[PriceSeries] | tuple[PriceSeries, ...],
    start: dt.date,
    end: dt.date,
    epsilon: float = 0.0,
) -> AlignedPanel:
    """Place series on the daily calendar [start, end] and derive change grids.

    Row order follows the input series order.  Observations outside the
    calendar are dropped.  Duplicate market ids, an empty range, mixed
    commodities, or a negative epsilon are rejected.
    """
    if end < start:
        raise ValueError(f"empty calendar: end {end} precedes start {start}")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if not series:
        raise ValueError("align requires at least one series")
    ids = [s.market_id for s in series]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate market ids: {dupes}")
    commodities = {s.commodity for s in series}
    if len(commodities) != 1:
        raise ValueError(f"mixed commodities: {sorted(commodities)}")

    n_days = (end - start).days + 1
    m = len(series)
    price = np.full((m, n_days), np.nan)
    for row, s in enumerate(series):
        for obs in s.observations:
            off = (obs.date - start).days
            if 0 <= off < n_days:
                price[row, off] = obs.price

    observed = ~np.isnan(price)
    change = np.full_like(price, np.nan)
    change_mask = np.zeros(price.shape, dtype=bool)
    # column 0 has no predecessor by construction
    both = observed[:, 1:] & observed[:, :-1]
    change_mask[:, 1:] = both
    prev = price[:, :-1]
    cur = price[:, 1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        change[:, 1:] = np.where(both, (cur - prev) / prev, np.nan)

    direction = np.full(price.shape, -1, dtype=np.int8)
    ch = change[:, 1:]
    dir_slice = np.full(ch.shape, -1, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        dir_slice[both & (ch > epsilon)] = int(DirectionLabel.UP)
        dir_slice[both & (ch < -epsilon)] = int(DirectionLabel.DOWN)
        stay = both & ~(ch > epsilon) & ~(ch < -epsilon)
    dir_slice[stay] = int(DirectionLabel.STAY)
    direction[:, 1:] = dir_slice

    return AlignedPanel(
        markets=list(ids),
        commodity=series[0].commodity,
        start=start,
        epsilon=float(epsilon),
        price=price,
        change=change,
        change_mask=change_mask,
        direction=direction,
    )


def missing_fraction(
    panel: AlignedPanel,
    market_id: str,
    start: dt.date | None = None,
    end: dt.date | None = None,
) -> float:
    """Fraction of calendar days in [start, end] with no observed price."""
    row = panel.market_index(market_id)
    lo = panel.day_index(start) if start is not None else 0
    hi = panel.day_index(end) if end is not None else panel.n_days - 1
    if hi < lo:
        raise ValueError(f"empty range {start}..{end}")
    window = panel.price[row, lo : hi + 1]
    return float(np.isnan(window).mean())
