"""Price-time-priority book replay with a passive execution agent.

Replay semantics: new limits rest FIFO at their price (marketable ones
walk the opposite side first); cancels reduce or remove by order id
(unknown ids are counted and ignored); visible executions consume the
replayed level front-first, taking any agent order priced at or better
than the print before the historical queue.  Hidden prints touch no
visible queue.  The agent posts its per-bin child quantity at the best
price of its side, one action per step ahead of a fixed number of
replayed orders, and converts the unfilled remainder to a market order
at the bin boundary.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lob_ingest import (
    CANCEL_FULL,
    CANCEL_PARTIAL,
    CROSS,
    DEFAULT_CALENDAR,
    EXECUTE_HIDDEN,
    EXECUTE_VISIBLE,
    HALT,
    LobEvent,
    NEW_LIMIT,
    TradingCalendar,
)

BID = 1
ASK = -1

MARKET_OWNER = "market"
AGENT_OWNER = "agent"


class SessionError(RuntimeError):
    pass


@dataclass
class _Order:
    order_id: int
    side: int
    price: int
    size: int
    seq: int
    owner: str


@dataclass
class Fill:
    maker_order_id: int
    owner: str
    side: int
    price: int
    size: int


class OrderBook:
    """FIFO price-level book; prices are integer 1e-4 currency units."""

    def __init__(self):
        self.levels = {BID: {}, ASK: {}}
        self.by_id = {}
        self.seq = 0
        self.counters = {
            "unknown_cancel": 0,
            "missing_replay_level": 0,
            "replay_shortfall": 0,
            "ignored_events": 0,
        }
        self.last_trade_price: Optional[int] = None

    def best_price(self, side: int) -> Optional[int]:
        prices = self.levels[side]
        if not prices:
            return None
        return max(prices) if side == BID else min(prices)

    def _insert(self, order: _Order) -> None:
        self.levels[order.side].setdefault(order.price, deque()).append(order)
        self.by_id[order.order_id] = order

    def _drop(self, order: _Order) -> None:
        q = self.levels[order.side].get(order.price)
        if q is not None:
            try:
                q.remove(order)
            except ValueError:
                pass
            if not q:
                del self.levels[order.side][order.price]
        self.by_id.pop(order.order_id, None)

    def _consume_queue(self, side: int, price: int, size: int) -> tuple:
        """Take up to ``size`` from the FIFO queue at one level."""
        fills = []
        q = self.levels[side].get(price)
        remaining = size
        while remaining > 0 and q:
            maker = q[0]
            take = min(maker.size, remaining)
            maker.size -= take
            remaining -= take
            fills.append(Fill(maker.order_id, maker.owner, side, price, take))
            if maker.size == 0:
                q.popleft()
                self.by_id.pop(maker.order_id, None)
        if q is not None and not q:
            del self.levels[side][price]
        if fills:
            self.last_trade_price = price
        return fills, remaining

    def add_limit(self, side: int, price: int, size: int, order_id: int,
                  owner: str = MARKET_OWNER) -> list:
        """Insert a limit order, walking the opposite side while marketable."""
        fills = []
        remaining = size
        while remaining > 0:
            opp = self.best_price(-side)
            if opp is None:
                break
            crossing = price >= opp if side == BID else price <= opp
            if not crossing:
                break
            got, remaining = self._consume_queue(-side, opp, remaining)
            fills.extend(got)
        if remaining > 0:
            self.seq += 1
            self._insert(_Order(order_id, side, price, remaining, self.seq, owner))
        return fills

    def cancel(self, order_id: int, size: Optional[int] = None) -> None:
        order = self.by_id.get(order_id)
        if order is None:
            self.counters["unknown_cancel"] += 1
            return
        if size is None or size >= order.size:
            self._drop(order)
        else:
            order.size -= size

    def execute_replay(self, side: int, price: int, size: int) -> list:
        """Apply a historical execution print against the current book.

        Any agent order on the printed side priced at or better than the
        print is consumed first (the replayed aggressor would have hit it
        on the way); the remainder comes from the level at the print price.
        """
        fills = []
        remaining = size
        for agent_order in [o for o in self.by_id.values()
                            if o.owner == AGENT_OWNER and o.side == side]:
            better = (
                agent_order.price < price if side == ASK else agent_order.price > price
            )
            at = agent_order.price == price
            if not (better or at):
                continue
            if better:
                take = min(agent_order.size, remaining)
                if take <= 0:
                    break
                agent_order.size -= take
                remaining -= take
                fills.append(Fill(agent_order.order_id, AGENT_OWNER, side,
                                  agent_order.price, take))
                self.last_trade_price = agent_order.price
                if agent_order.size == 0:
                    self._drop(agent_order)
            if remaining == 0:
                return fills
        q = self.levels[side].get(price)
        if q is None:
            self.counters["missing_replay_level"] += 1
            return fills
        got, remaining = self._consume_queue(side, price, remaining)
        fills.extend(got)
        if remaining > 0:
            self.counters["replay_shortfall"] += 1
        return fills

    def market_order(self, side: int, size: int) -> list:
        """Aggressive order against side ``side``; never leaves a remainder.

        If the visible book runs out, the tail fills at the last touched
        price (infinite-liquidity backstop so parent conservation holds).
        """
        fills = []
        remaining = size
        last_price = None
        while remaining > 0:
            best = self.best_price(side)
            if best is None:
                break
            got, remaining = self._consume_queue(side, best, remaining)
            fills.extend(got)
            if got:
                last_price = got[-1].price
        if remaining > 0:
            price = last_price or self.last_trade_price or 0
            fills.append(Fill(-1, "backstop", side, price, remaining))
        return fills

    def audit(self) -> None:
        """Debug invariant check: sides never cross, FIFO order holds."""
        bb, ba = self.best_price(BID), self.best_price(ASK)
        if bb is not None and ba is not None and bb >= ba:
            raise SessionError(f"book crossed: bid {bb} >= ask {ba}")
        for side in (BID, ASK):
            for price, q in self.levels[side].items():
                seqs = [o.seq for o in q]
                if seqs != sorted(seqs):
                    raise SessionError(f"FIFO order violated at level {price}")
                if any(o.size <= 0 for o in q):
                    raise SessionError(f"non-positive resting size at {price}")

    def snapshot_hash(self) -> str:
        parts = []
        for side in (ASK, BID):
            for price in sorted(self.levels[side]):
                q = self.levels[side][price]
                parts.append(
                    (side, price, tuple((o.order_id, o.size) for o in q))
                )
        return hashlib.sha1(repr(parts).encode()).hexdigest()


def apply_event(book: OrderBook, event: LobEvent) -> list:
    """Replay one historical event; returns fills it caused."""
    et = event.event_type
    if et == NEW_LIMIT:
        return book.add_limit(event.direction, event.price, event.size, event.order_id)
    if et == CANCEL_PARTIAL:
        book.cancel(event.order_id, event.size)
        return []
    if et == CANCEL_FULL:
        book.cancel(event.order_id, None)
        return []
    if et == EXECUTE_VISIBLE:
        return book.execute_replay(event.direction, event.price, event.size)
    if et == EXECUTE_HIDDEN:
        book.last_trade_price = event.price
        return []
    if et in (CROSS, HALT):
        book.counters["ignored_events"] += 1
        return []
    raise SessionError(f"unknown event type {et}")


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer child quantities that sum exactly to ``total``."""
    w = np.asarray(weights, dtype=np.float64)
    raw = w * total
    base = np.floor(raw).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(raw - base))
        base[order[:short]] += 1
    return base


@dataclass
class SessionConfig:
    side: str = "sell"  # parent order direction
    parent_pct: float = 0.01  # fraction of realized day volume
    parent_quantity: Optional[int] = None  # overrides parent_pct when set
    orders_per_step: int = 100
    repost: str = "repost-on-move"  # or "never"
    tick: int = 100

    def validate(self):
        if self.side not in ("sell", "buy"):
            raise SessionError("side must be 'sell' or 'buy'")
        if self.repost not in ("repost-on-move", "never"):
            raise SessionError("repost must be 'repost-on-move' or 'never'")
        if self.orders_per_step < 1:
            raise SessionError("orders_per_step must be >= 1")


@dataclass
class FillReport:
    parent_quantity: int
    passive_filled: int
    cleanup_filled: int
    per_bin: list
    trade_log: list
    counters: dict

    @property
    def fill_ratio(self) -> float:
        if self.parent_quantity == 0:
            return 0.0
        return self.passive_filled / self.parent_quantity

    def to_json(self, path=None) -> str:
        payload = {
            "parent_quantity": self.parent_quantity,
            "passive_filled": self.passive_filled,
            "cleanup_filled": self.cleanup_filled,
            "fill_ratio": self.fill_ratio,
            "per_bin": self.per_bin,
            "counters": self.counters,
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def trade_log_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "bin", "side", "price", "size", "kind"])
            for row in self.trade_log:
                writer.writerow(row)


def run_session(
    events: Sequence[LobEvent],
    weights,
    config: Optional[SessionConfig] = None,
    calendar: TradingCalendar = DEFAULT_CALENDAR,
    equivalence_probe: Optional[list] = None,
    audit: bool = False,
) -> FillReport:
    """Replay a day against a slicing schedule and account the fills.

    One agent action leads each step of ``orders_per_step`` replayed
    events.  Unfilled child quantity converts to a market order at the
    bin boundary, so passive plus cleanup always equals the parent.
    When ``equivalence_probe`` is given, a book-state hash is appended
    after every replayed event (used to verify agent non-interference).
    """
    config = config or SessionConfig()
    config.validate()
    if not events:
        raise SessionError("empty event stream; session covers no bins")

    n_bins = calendar.n_bins
    day_volume = sum(
        ev.size for ev in events if ev.event_type in (EXECUTE_VISIBLE, EXECUTE_HIDDEN)
    )
    parent = (
        config.parent_quantity
        if config.parent_quantity is not None
        else int(round(config.parent_pct * day_volume))
    )
    children = largest_remainder(np.asarray(weights, dtype=np.float64), parent)
    if children.shape[0] != n_bins:
        raise SessionError("schedule weight count does not match bins")

    agent_side = ASK if config.side == "sell" else BID
    cleanup_side = BID if config.side == "sell" else ASK

    # bucket events by bin
    per_bin_events = [[] for _ in range(n_bins)]
    for ev in events:
        b = int((ev.time - calendar.session_open) // calendar.bin_seconds)
        b = min(max(b, 0), n_bins - 1)
        per_bin_events[b].append(ev)

    book = OrderBook()
    agent_oid = -1
    live_order = None
    passive_total = 0
    cleanup_total = 0
    trade_log = []
    per_bin = []
    step = 0

    def post(bin_index: int, qty: int):
        nonlocal agent_oid, live_order
        if qty <= 0:
            return
        best = book.best_price(agent_side)
        if best is None:
            return
        agent_oid -= 1
        fills = book.add_limit(agent_side, best, qty, agent_oid, AGENT_OWNER)
        # posting at the prevailing best of its own side can never cross
        assert not fills
        live_order = book.by_id.get(agent_oid)

    for j in range(n_bins):
        child = int(children[j])
        bin_passive = 0
        bin_events = per_bin_events[j]
        pointer = 0
        first_step = True
        while first_step or pointer < len(bin_events):
            first_step = False
            step += 1
            if child > 0:
                outstanding = child - bin_passive
                live = live_order is not None and live_order.order_id in book.by_id
                if not live and outstanding > 0:
                    post(j, outstanding)
                elif live and config.repost == "repost-on-move":
                    best = book.best_price(agent_side)
                    if best is not None and abs(best - live_order.price) > config.tick:
                        book.cancel(live_order.order_id)
                        live_order = None
                        post(j, outstanding)
            for _ in range(config.orders_per_step):
                if pointer >= len(bin_events):
                    break
                fills = apply_event(book, bin_events[pointer])
                pointer += 1
                if audit:
                    book.audit()
                if equivalence_probe is not None:
                    equivalence_probe.append(book.snapshot_hash())
                for f in fills:
                    if f.owner == AGENT_OWNER:
                        bin_passive += f.size
                        trade_log.append(
                            [step, j, config.side, f.price, f.size, "passive"]
                        )
        # bin boundary: cancel the resting order, market the remainder
        if live_order is not None and live_order.order_id in book.by_id:
            book.cancel(live_order.order_id)
        live_order = None
        remainder = child - bin_passive
        if remainder > 0:
            fills = book.market_order(cleanup_side, remainder)
            for f in fills:
                trade_log.append([step, j, config.side, f.price, f.size, "cleanup"])
            cleanup_total += remainder
        passive_total += bin_passive
        per_bin.append(
            {"bin": j, "child": child, "passive": bin_passive, "cleanup": max(remainder, 0)}
        )

    if passive_total + cleanup_total != parent:
        raise SessionError(
            f"conservation violated: {passive_total} + {cleanup_total} != {parent}"
        )
    return FillReport(
        parent_quantity=parent,
        passive_filled=passive_total,
        cleanup_filled=cleanup_total,
        per_bin=per_bin,
        trade_log=trade_log,
        counters=dict(book.counters),
    )


def fill_advantage(model_report: FillReport, cmem_report: FillReport) -> float:
    """Relative fill-ratio advantage of a model schedule over the benchmark."""
    if cmem_report.fill_ratio == 0:
        raise SessionError("benchmark fill ratio is zero; advantage undefined")
    return (model_report.fill_ratio - cmem_report.fill_ratio) / cmem_report.fill_ratio
