"""LOBSTER-style message parsing and 15-minute bin aggregation.

Message files are headerless CSV with six columns per row::

    time,event_type,order_id,size,price,direction

with time in seconds after midnight, price in integer 1e-4 currency
units, and direction +1 for buy / -1 for sell.  Order book files carry
40 columns (ask_price_1, ask_size_1, bid_price_1, bid_size_1, ... level 10),
one row per message.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

NEW_LIMIT = 1
CANCEL_PARTIAL = 2
CANCEL_FULL = 3
EXECUTE_VISIBLE = 4
EXECUTE_HIDDEN = 5
CROSS = 6
HALT = 7

_VALID_TYPES = frozenset(range(1, 8))

MESSAGE_COLUMNS = ["time", "event_type", "order_id", "size", "price", "direction"]

BIN_COLUMNS = [
    "stock",
    "day",
    "bin_index",
    "timeHMs",
    "intrIn",
    "volBuyNotional",
    "volSellNotional",
    "volBuyQty",
    "volSellQty",
    "volBuyNrTrades_lit",
    "volSellNrTrades_lit",
    "nrTrades",
    "ntr",
    "volume",
]


class ParseError(ValueError):
    """Malformed message row; carries the 1-based line number."""


class ValidationError(ValueError):
    """Structurally valid file violating a stream invariant."""


@dataclass
class LobEvent:
    time: float
    event_type: int
    order_id: int
    size: int
    price: int
    direction: int


@dataclass
class BookSnapshot:
    """Top-10 book levels; level index 0 is the best price."""

    ask_price: np.ndarray
    ask_size: np.ndarray
    bid_price: np.ndarray
    bid_size: np.ndarray


@dataclass(frozen=True)
class TradingCalendar:
    session_open: float = 34200.0  # 09:30:00
    session_close: float = 57600.0  # 16:00:00
    bin_seconds: float = 900.0
    auction_grace: float = 300.0  # closing prints up to 16:05 fold into the last bin

    @property
    def n_bins(self) -> int:
        return int(round((self.session_close - self.session_open) / self.bin_seconds))

    def bin_start_hm(self, bin_index: int) -> int:
        minutes = int(self.session_open // 60) + bin_index * int(self.bin_seconds // 60)
        return (minutes // 60) * 100 + minutes % 60


@dataclass(frozen=True)
class IntervalConfig:
    open_bins: tuple = (0, 1)
    close_bins: tuple = (24, 25)


DEFAULT_CALENDAR = TradingCalendar()
DEFAULT_INTERVALS = IntervalConfig()


@dataclass
class BinRecord:
    stock: str
    day: str
    bin_index: int
    timeHMs: int
    intrIn: str
    volBuyNotional: float = 0.0
    volSellNotional: float = 0.0
    volBuyQty: int = 0
    volSellQty: int = 0
    volBuyNrTrades_lit: int = 0
    volSellNrTrades_lit: int = 0
    nrTrades: int = 0
    ntr: int = 0
    volume: int = 0


def assign_interval(bin_index: int, config: IntervalConfig = DEFAULT_INTERVALS) -> str:
    if bin_index in config.open_bins:
        return "open"
    if bin_index in config.close_bins:
        return "close"
    return "midday"


def parse_messages(path) -> list:
    """Parse a message CSV into LobEvents, validating domains and time order."""
    events = []
    prev_time = -np.inf
    with open(path, "r", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 6:
                raise ParseError(f"line {lineno}: expected 6 columns, got {len(row)}")
            try:
                t = float(row[0])
                etype = int(row[1])
                oid = int(row[2])
                size = int(row[3])
                price = int(row[4])
                direction = int(row[5])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if etype not in _VALID_TYPES:
                raise ParseError(f"line {lineno}: unknown event type {etype}")
            if direction not in (1, -1):
                raise ParseError(f"line {lineno}: direction must be +1 or -1, got {direction}")
            if etype != HALT and size <= 0:
                raise ParseError(f"line {lineno}: non-positive size {size}")
            if etype != HALT and price <= 0:
                raise ParseError(f"line {lineno}: non-positive price {price}")
            if t < prev_time:
                raise ValidationError(
                    f"line {lineno}: time {t} decreases below {prev_time}"
                )
            prev_time = t
            events.append(LobEvent(t, etype, oid, size, price, direction))
    return events


def write_messages(events: Iterable[LobEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for ev in events:
            writer.writerow(
                [repr(ev.time), ev.event_type, ev.order_id, ev.size, ev.price, ev.direction]
            )


def parse_orderbook(path) -> list:
    """Parse a 40-column order book CSV into BookSnapshots."""
    snaps = []
    with open(path, "r", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 40:
                raise ParseError(f"line {lineno}: expected 40 columns, got {len(row)}")
            vals = np.array([int(v) for v in row], dtype=np.int64).reshape(10, 4)
            snaps.append(
                BookSnapshot(
                    ask_price=vals[:, 0].copy(),
                    ask_size=vals[:, 1].copy(),
                    bid_price=vals[:, 2].copy(),
                    bid_size=vals[:, 3].copy(),
                )
            )
    return snaps


def write_orderbook(snapshots: Iterable[BookSnapshot], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for snap in snapshots:
            row = np.column_stack(
                [snap.ask_price, snap.ask_size, snap.bid_price, snap.bid_size]
            ).ravel()
            writer.writerow([int(v) for v in row])


def _event_arrays(events: Sequence[LobEvent]):
    n = len(events)
    times = np.empty(n, dtype=np.float64)
    types = np.empty(n, dtype=np.int64)
    sizes = np.empty(n, dtype=np.int64)
    prices = np.empty(n, dtype=np.int64)
    dirs = np.empty(n, dtype=np.int64)
    for i, ev in enumerate(events):
        times[i] = ev.time
        types[i] = ev.event_type
        sizes[i] = ev.size
        prices[i] = ev.price
        dirs[i] = ev.direction
    return times, types, sizes, prices, dirs


def bin_events(
    events: Sequence[LobEvent],
    day: str,
    stock: str,
    calendar: TradingCalendar = DEFAULT_CALENDAR,
    intervals: IntervalConfig = DEFAULT_INTERVALS,
    counters: Optional[dict] = None,
) -> list:
    """Aggregate one day's events into the per-bin Table-style statistics.

    Only execution events (types 4 and 5) feed volume and trade counts;
    visible executions additionally feed the lit counters and ntr.
    Out-of-session events are dropped (counted), except prints inside the
    closing-auction grace window, which fold into the final bin.
    """
    n_bins = calendar.n_bins
    records = [
        BinRecord(
            stock=stock,
            day=day,
            bin_index=i,
            timeHMs=calendar.bin_start_hm(i),
            intrIn=assign_interval(i, intervals),
        )
        for i in range(n_bins)
    ]
    if counters is None:
        counters = {}
    counters.setdefault("dropped_out_of_session", 0)
    if not events:
        return records

    times, types, sizes, prices, dirs = _event_arrays(events)

    in_session = (times >= calendar.session_open) & (times < calendar.session_close)
    auction = (times >= calendar.session_close) & (
        times <= calendar.session_close + calendar.auction_grace
    )
    keep = in_session | auction
    counters["dropped_out_of_session"] += int((~keep).sum())

    is_exec = keep & ((types == EXECUTE_VISIBLE) | (types == EXECUTE_HIDDEN))
    if not is_exec.any():
        return records

    t = times[is_exec]
    sz = sizes[is_exec]
    px = prices[is_exec]
    dr = dirs[is_exec]
    lit = types[is_exec] == EXECUTE_VISIBLE

    # canonical order so float accumulations ignore same-timestamp reorderings
    order = np.lexsort((dr, px, sz, t))
    t, sz, px, dr, lit = t[order], sz[order], px[order], dr[order], lit[order]

    bins = np.floor((t - calendar.session_open) / calendar.bin_seconds).astype(np.int64)
    np.clip(bins, 0, n_bins - 1, out=bins)
    buy = dr == 1
    notional = sz.astype(np.float64) * px.astype(np.float64) * 1e-4

    def tally(mask, weights):
        return np.bincount(bins[mask], weights=weights[mask].astype(np.float64), minlength=n_bins)

    vol_buy = tally(buy, sz).astype(np.int64)
    vol_sell = tally(~buy, sz).astype(np.int64)
    ntl_buy = np.bincount(bins[buy], weights=notional[buy], minlength=n_bins)
    ntl_sell = np.bincount(bins[~buy], weights=notional[~buy], minlength=n_bins)
    n_trades = np.bincount(bins, minlength=n_bins).astype(np.int64)
    n_lit = np.bincount(bins[lit], minlength=n_bins).astype(np.int64)
    lit_buy = np.bincount(bins[lit & buy], minlength=n_bins).astype(np.int64)
    lit_sell = np.bincount(bins[lit & ~buy], minlength=n_bins).astype(np.int64)

    for i in range(n_bins):
        rec = records[i]
        rec.volBuyQty = int(vol_buy[i])
        rec.volSellQty = int(vol_sell[i])
        rec.volume = rec.volBuyQty + rec.volSellQty
        rec.volBuyNotional = float(ntl_buy[i])
        rec.volSellNotional = float(ntl_sell[i])
        rec.nrTrades = int(n_trades[i])
        rec.ntr = int(n_lit[i])
        rec.volBuyNrTrades_lit = int(lit_buy[i])
        rec.volSellNrTrades_lit = int(lit_sell[i])
    return records


def bin_last_trade_prices(
    events: Sequence[LobEvent],
    calendar: TradingCalendar = DEFAULT_CALENDAR,
) -> np.ndarray:
    """Last trade price per bin in 1e-4 units, previous bin carried forward.

    Bins before the first trade take the first traded price.  Raises if the
    day has no executions at all.
    """
    n_bins = calendar.n_bins
    prices = np.full(n_bins, np.nan)
    for ev in events:
        if ev.event_type not in (EXECUTE_VISIBLE, EXECUTE_HIDDEN):
            continue
        if ev.time < calendar.session_open:
            continue
        if ev.time > calendar.session_close + calendar.auction_grace:
            continue
        b = int((ev.time - calendar.session_open) // calendar.bin_seconds)
        b = min(max(b, 0), n_bins - 1)
        prices[b] = ev.price
    if np.isnan(prices).all():
        raise ValidationError("no executions in session; cannot build bin prices")
    # forward fill, then backfill the leading gap
    last = np.nan
    for i in range(n_bins):
        if np.isnan(prices[i]):
            prices[i] = last
        else:
            last = prices[i]
    first = prices[~np.isnan(prices)][0]
    prices[np.isnan(prices)] = first
    return prices


def records_to_frame(records: Iterable[BinRecord]) -> pd.DataFrame:
    rows = [
        {col: getattr(rec, col) for col in BIN_COLUMNS}
        for rec in records
    ]
    return pd.DataFrame(rows, columns=BIN_COLUMNS)


def write_bins_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False)


def read_bins_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"stock": str, "day": str})
    missing = [c for c in BIN_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"bins file missing columns: {missing}")
    return df
