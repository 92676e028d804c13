"""Raw market-feed CSV ingestion and the canonical dataset format.

Raw exports arrive with unstable column names, mixed date styles and a
steady trickle of defect rows.  Parsing is schema-driven and never throws
on a bad row: each one becomes a ParseIssue.  Files missing required
columns are rejected outright.

The canonical on-disk format ("mandiset v1") is line-oriented text:

    mandiset v1 <commodity>
    # provenance sources=<...> digest=<...> stamped=<iso8601 or ->
    <market_id> TAB <YYYY-MM-DD> TAB <price 2dp> TAB <arrivals 3dp or ->
    ...
    # count=<number of observation lines>

Prices are quantized to 2 decimals at build time so save -> load -> save is
byte-identical.  The count footer makes truncation at a line boundary
detectable.
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import urllib.parse
from dataclasses import dataclass, field

from .errors import DataError, FormatVersionError
from .panel import PriceObservation, PriceSeries

__all__ = [
    "RawRecord",
    "ParseIssue",
    "Provenance",
    "CanonicalDataset",
    "DEFAULT_SCHEMA",
    "parse_csv",
    "build_dataset",
    "save_dataset",
    "load_dataset",
    "dumps_dataset",
    "loads_dataset",
]

FORMAT_NAME = "mandiset"
FORMAT_VERSION = "v1"

REQUIRED_FIELDS = ("date", "market", "commodity", "modal_price")
OPTIONAL_FIELDS = ("state", "district", "variety", "min_price", "max_price", "arrivals")

# Column names as they appear in the common public exports.
DEFAULT_SCHEMA = {
    "date": "Price Date",
    "state": "State Name",
    "district": "District Name",
    "market": "Market Name",
    "commodity": "Commodity",
    "variety": "Variety",
    "min_price": "Min Price (Rs./Quintal)",
    "max_price": "Max Price (Rs./Quintal)",
    "modal_price": "Modal Price (Rs./Quintal)",
    "arrivals": "Arrivals (Tonnes)",
}

DEDUP_POLICIES = ("weighted_mean", "mean", "first", "last")


@dataclass(frozen=True)
class RawRecord:
    """One parsed row of a raw market feed."""

    date: dt.date
    market: str
    commodity: str
    modal_price: float
    state: str | None = None
    district: str | None = None
    variety: str | None = None
    min_price: float | None = None
    max_price: float | None = None
    arrivals: float | None = None


@dataclass(frozen=True)
class ParseIssue:
    """A rejected input row: 1-based line number plus the reason."""

    line: int
    reason: str


@dataclass(frozen=True)
class Provenance:
    sources: tuple[str, ...] = ()
    digest: str = ""
    stamped: str | None = None


@dataclass
class CanonicalDataset:
    """Deduplicated per-market series for a single commodity."""

    commodity: str
    series: list[PriceSeries]
    provenance: Provenance = field(default_factory=Provenance)

    @property
    def markets(self) -> list[str]:
        return [s.market_id for s in self.series]

    def n_observations(self) -> int:
        return sum(len(s.observations) for s in self.series)


def _parse_date(text: str) -> dt.date:
    """Accept YYYY-MM-DD and DD/MM/YYYY."""
    text = text.strip()
    if "-" in text:
        return dt.date.fromisoformat(text)
    parts = text.split("/")
    if len(parts) == 3:
        day, month, year = (int(p) for p in parts)
        return dt.date(year, month, day)
    raise ValueError(f"unrecognized date {text!r}")


def _parse_number(text: str) -> float | None:
    text = text.strip()
    if text in ("", "-", "NA", "NR", "null"):
        return None
    return float(text)


def parse_csv(
    source,
    schema: dict[str, str] | None = None,
    delimiter: str = ",",
) -> tuple[list[RawRecord], list[ParseIssue]]:
    """Parse a raw feed into records plus per-row issues.

    ``source`` is a text string or a text file object.  ``schema`` maps the
    logical field names (date, market, commodity, modal_price, and the
    optional ones) to the CSV's column headers.  A file whose header lacks a
    required column is rejected with DataError; a defective row never is.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    unknown = set(schema) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS)
    if unknown:
        raise ValueError(f"schema maps unknown fields: {sorted(unknown)}")
    missing_map = [f for f in REQUIRED_FIELDS if f not in schema]
    if missing_map:
        raise ValueError(f"schema missing required fields: {missing_map}")

    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty file: no header row") from None
    header = [h.strip() for h in header]
    positions: dict[str, int] = {}
    for logical, column in schema.items():
        try:
            positions[logical] = header.index(column)
        except ValueError:
            if logical in REQUIRED_FIELDS:
                raise DataError(
                    f"required column {column!r} (field {logical!r}) absent from header"
                ) from None
            # optional column simply not present in this export

    records: list[RawRecord] = []
    issues: list[ParseIssue] = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue

        def cell(logical: str) -> str:
            pos = positions.get(logical)
            if pos is None or pos >= len(row):
                return ""
            return row[pos].strip()

        try:
            date = _parse_date(cell("date"))
        except (ValueError, TypeError):
            issues.append(ParseIssue(line_no, f"bad date {cell('date')!r}"))
            continue
        market = cell("market")
        if not market:
            issues.append(ParseIssue(line_no, "blank market"))
            continue
        if "\t" in market or "\n" in market or market.startswith("#"):
            issues.append(ParseIssue(line_no, f"unusable market id {market!r}"))
            continue
        commodity = cell("commodity")
        if not commodity:
            issues.append(ParseIssue(line_no, "blank commodity"))
            continue
        try:
            modal = _parse_number(cell("modal_price"))
        except ValueError:
            issues.append(ParseIssue(line_no, f"bad modal price {cell('modal_price')!r}"))
            continue
        if modal is None or modal <= 0:
            issues.append(ParseIssue(line_no, "missing or non-positive modal price"))
            continue
        try:
            lo = _parse_number(cell("min_price"))
            hi = _parse_number(cell("max_price"))
        except ValueError:
            issues.append(ParseIssue(line_no, "bad min/max price"))
            continue
        if (lo is not None and lo > modal) or (hi is not None and modal > hi):
            issues.append(ParseIssue(line_no, f"price order violated: {lo} <= {modal} <= {hi}"))
            continue
        try:
            arrivals = _parse_number(cell("arrivals"))
        except ValueError:
            issues.append(ParseIssue(line_no, f"bad arrivals {cell('arrivals')!r}"))
            continue
        if arrivals is not None and arrivals < 0:
            issues.append(ParseIssue(line_no, f"negative arrivals {arrivals!r}"))
            continue
        records.append(
            RawRecord(
                date=date,
                market=market,
                commodity=commodity,
                modal_price=modal,
                state=cell("state") or None,
                district=cell("district") or None,
                variety=cell("variety") or None,
                min_price=lo,
                max_price=hi,
                arrivals=arrivals,
            )
        )
    return records, issues


def _resolve_day(day_records: list[RawRecord], policy: str) -> tuple[float, float | None]:
    """Collapse same-day records for one market to (price, arrivals)."""
    if policy == "first":
        r = day_records[0]
        return r.modal_price, r.arrivals
    if policy == "last":
        r = day_records[-1]
        return r.modal_price, r.arrivals
    prices = [r.modal_price for r in day_records]
    weights = [r.arrivals for r in day_records]
    have_arrivals = all(w is not None for w in weights)
    total = sum(w for w in weights if w is not None)
    if policy == "weighted_mean" and have_arrivals and total > 0:
        price = sum(p * w for p, w in zip(prices, weights)) / total
    else:
        # plain mean covers policy == "mean" and the missing-arrivals fallback
        price = sum(prices) / len(prices)
    arrivals = total if have_arrivals else None
    return price, arrivals


def build_dataset(
    records: list[RawRecord],
    commodity: str,
    dedup: str = "weighted_mean",
    sources: tuple[str, ...] = (),
    stamped: str | None = None,
) -> CanonicalDataset:
    """Filter one commodity, group by market, resolve same-day duplicates.

    Markets come out sorted by id; observations date-ascending.  Prices are
    quantized to 2 decimals and arrivals to 3 so serialization round-trips
    exactly.  Zero surviving records is an error, not an empty dataset.
    """
    if dedup not in DEDUP_POLICIES:
        raise ValueError(f"unknown dedup policy {dedup!r}; expected one of {DEDUP_POLICIES}")
    want = commodity.strip().casefold()
    by_market: dict[str, dict[dt.date, list[RawRecord]]] = {}
    for r in records:
        if r.commodity.strip().casefold() != want:
            continue
        by_market.setdefault(r.market, {}).setdefault(r.date, []).append(r)
    if not by_market:
        raise DataError(f"no records for commodity {commodity!r}")

    series: list[PriceSeries] = []
    for market in sorted(by_market):
        obs = []
        for date in sorted(by_market[market]):
            price, arrivals = _resolve_day(by_market[market][date], dedup)
            obs.append(
                PriceObservation(
                    date=date,
                    price=round(price, 2),
                    arrivals=None if arrivals is None else round(arrivals, 3),
                )
            )
        series.append(PriceSeries(market_id=market, commodity=commodity, observations=tuple(obs)))

    digest = _content_digest(series)
    prov = Provenance(sources=tuple(sources), digest=digest, stamped=stamped)
    return CanonicalDataset(commodity=commodity, series=series, provenance=prov)


def _content_digest(series: list[PriceSeries]) -> str:
    h = hashlib.sha256()
    for s in series:
        for o in s.observations:
            h.update(f"{s.market_id}|{o.date.isoformat()}|{o.price:.2f}|{o.arrivals}\n".encode())
    return h.hexdigest()[:16]


def _format_arrivals(arrivals: float | None) -> str:
    return "-" if arrivals is None else f"{arrivals:.3f}"


def dumps_dataset(ds: CanonicalDataset) -> str:
    lines = [f"{FORMAT_NAME} {FORMAT_VERSION} {ds.commodity}"]
    prov = ds.provenance
    sources = ";".join(urllib.parse.quote(s, safe="") for s in prov.sources)
    stamped = prov.stamped if prov.stamped is not None else "-"
    lines.append(f"# provenance sources={sources} digest={prov.digest} stamped={stamped}")
    count = 0
    for s in ds.series:
        for o in s.observations:
            lines.append(
                f"{s.market_id}\t{o.date.isoformat()}\t{o.price:.2f}\t{_format_arrivals(o.arrivals)}"
            )
            count += 1
    lines.append(f"# count={count}")
    return "\n".join(lines) + "\n"


def save_dataset(ds: CanonicalDataset, path) -> None:
    data = dumps_dataset(ds)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(data)


def loads_dataset(text: str) -> CanonicalDataset:
    lines = text.splitlines()
    if not lines:
        raise DataError("empty dataset file")
    head = lines[0].split(" ", 2)
    if len(head) < 2 or head[0] != FORMAT_NAME:
        raise FormatVersionError(f"not a {FORMAT_NAME} file: header {lines[0]!r}")
    if head[1] != FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported {FORMAT_NAME} version {head[1]!r}; this build reads {FORMAT_VERSION}"
        )
    if len(head) < 3 or not head[2].strip():
        raise DataError("header missing commodity")
    commodity = head[2]

    prov = Provenance()
    count_declared: int | None = None
    rows: list[tuple[str, dt.date, float, float | None]] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise DataError(f"line {line_no}: blank line inside dataset")
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("count="):
                count_declared = int(body[len("count="):])
                if line_no != len(lines):
                    raise DataError(f"line {line_no}: content after count footer")
            elif body.startswith("provenance "):
                prov = _parse_provenance(body)
            # other comments tolerated
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"line {line_no}: expected 4 tab-separated fields, got {len(parts)}")
        market, date_s, price_s, arr_s = parts
        try:
            date = dt.date.fromisoformat(date_s)
            price = float(price_s)
            arrivals = None if arr_s == "-" else float(arr_s)
        except ValueError as exc:
            raise DataError(f"line {line_no}: {exc}") from None
        rows.append((market, date, price, arrivals))

    if count_declared is None:
        raise DataError("missing count footer: file is truncated or foreign")
    if count_declared != len(rows):
        raise DataError(
            f"count footer says {count_declared} observations, file holds {len(rows)}: truncated"
        )

    blocks: list[tuple[str, list[tuple[dt.date, float, float | None]]]] = []
    seen: set[str] = set()
    for market, date, price, arrivals in rows:
        if not blocks or blocks[-1][0] != market:
            if market in seen:
                raise DataError(f"market {market!r} appears in two separated blocks")
            seen.add(market)
            blocks.append((market, []))
        blocks[-1][1].append((date, price, arrivals))
    if not blocks:
        raise DataError("dataset holds zero observations")
    series: list[PriceSeries] = []
    for market, block in blocks:
        try:
            series.append(
                PriceSeries(
                    market_id=market,
                    commodity=commodity,
                    observations=tuple(
                        PriceObservation(date=d, price=p, arrivals=a) for d, p, a in block
                    ),
                )
            )
        except ValueError as exc:
            raise DataError(str(exc)) from None
    return CanonicalDataset(commodity=commodity, series=series, provenance=prov)


def _parse_provenance(body: str) -> Provenance:
    fields = dict(
        part.split("=", 1) for part in body[len("provenance "):].split(" ") if "=" in part
    )
    sources = tuple(
        urllib.parse.unquote(s) for s in fields.get("sources", "").split(";") if s
    )
    stamped = fields.get("stamped", "-")
    return Provenance(
        sources=sources,
        digest=fields.get("digest", ""),
        stamped=None if stamped == "-" else stamped,
    )


def load_dataset(path) -> CanonicalDataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return loads_dataset(fh.read())
