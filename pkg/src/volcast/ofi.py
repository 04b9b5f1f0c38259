"""Order-flow-imbalance predictors from book snapshots and event streams.

Conventions: snapshots are aligned so that ``snapshots[k]`` is the book
state before event ``k`` and ``snapshots[k+1]`` the state after it; a
window over events [a, b) therefore spans ``snapshots[a : b+1]``.  Level
indexing is zero-based in code and in the emitted column names
(``ofi_0`` is the best level).
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .lob_ingest import (
    BookSnapshot,
    CANCEL_FULL,
    CANCEL_PARTIAL,
    DEFAULT_CALENDAR,
    EXECUTE_HIDDEN,
    EXECUTE_VISIBLE,
    LobEvent,
    NEW_LIMIT,
    TradingCalendar,
)

OFI_LEVELS = 10
SIGNED_COLUMNS = [f"ofi_{m}" for m in range(OFI_LEVELS)] + ["best_level", "ofi_cont"]


class OfiError(ValueError):
    pass


def order_flow(prev: BookSnapshot, curr: BookSnapshot, level: int, side: str,
               counters: Optional[dict] = None) -> float:
    """Signed order flow at one depth level between consecutive states.

    Bid side: +size on a price improvement, size delta at an unchanged
    price, -size on a retreat; the ask side mirrors the sign.  A level
    missing from either snapshot contributes zero (counted).
    """
    if side not in ("bid", "ask"):
        raise OfiError(f"side must be 'bid' or 'ask', got {side!r}")
    if side == "bid":
        p0, q0 = prev.bid_price[level], prev.bid_size[level]
        p1, q1 = curr.bid_price[level], curr.bid_size[level]
    else:
        p0, q0 = prev.ask_price[level], prev.ask_size[level]
        p1, q1 = curr.ask_price[level], curr.ask_size[level]
    if p0 <= 0 or p1 <= 0:
        if counters is not None:
            counters["missing_level"] = counters.get("missing_level", 0) + 1
        return 0.0
    if side == "bid":
        if p1 > p0:
            return float(q1)
        if p1 == p0:
            return float(q1 - q0)
        return -float(q1)
    # ask side
    if p1 > p0:
        return -float(q1)
    if p1 == p0:
        return float(q1 - q0)
    return float(q1)


def level_ofi(snapshots: Sequence[BookSnapshot], level: int,
              counters: Optional[dict] = None) -> float:
    """Net signed flow (bid minus ask) for one level over a snapshot window."""
    if len(snapshots) < 2:
        if counters is not None:
            counters["short_window"] = counters.get("short_window", 0) + 1
        return 0.0
    total = 0.0
    for prev, curr in zip(snapshots[:-1], snapshots[1:]):
        total += order_flow(prev, curr, level, "bid", counters)
        total -= order_flow(prev, curr, level, "ask", counters)
    return total


def best_level_ofi(snapshots: Sequence[BookSnapshot],
                   counters: Optional[dict] = None) -> float:
    """Best-level net order flow accumulated over consecutive pairs."""
    return level_ofi(snapshots, 0, counters)


def scaled_multilevel_ofi(snapshots: Sequence[BookSnapshot], m_levels: int = OFI_LEVELS,
                          counters: Optional[dict] = None) -> np.ndarray:
    """Per-level OFI divided by the average visible depth across levels.

    The depth normalizer averages (bid size + ask size) / 2 per level over
    the post-event snapshots of the window and then across levels.
    """
    if len(snapshots) < 2:
        if counters is not None:
            counters["short_window"] = counters.get("short_window", 0) + 1
        return np.zeros(m_levels)
    raw = np.array([level_ofi(snapshots, m, counters) for m in range(m_levels)])
    post = snapshots[1:]
    depth = 0.0
    for snap in post:
        depth += float(snap.bid_size[:m_levels].sum() + snap.ask_size[:m_levels].sum())
    q = depth / (m_levels * 2.0 * len(post))
    if q <= 0:
        raise OfiError("empty book window; depth normalizer is zero")
    return raw / q


def tally_best_level_flows(
    events: Sequence[LobEvent],
    pre_snapshots: Sequence[BookSnapshot],
    counters: Optional[dict] = None,
) -> dict:
    """Classify events into best-level limit/cancel/marketable tallies.

    ``pre_snapshots[k]`` must be the state prevailing when event k
    arrives.  Hidden executions are not visible book flow and are skipped.
    """
    if len(pre_snapshots) < len(events):
        raise OfiError("need one prevailing snapshot per event")
    t = {"L_b": 0, "C_b": 0, "M_b": 0, "L_a": 0, "C_a": 0, "M_a": 0}
    for k, ev in enumerate(events):
        snap = pre_snapshots[k]
        best_bid = int(snap.bid_price[0])
        best_ask = int(snap.ask_price[0])
        if ev.event_type == NEW_LIMIT:
            if ev.direction == 1 and (best_bid <= 0 or ev.price >= best_bid):
                t["L_b"] += ev.size
            elif ev.direction == -1 and (best_ask <= 0 or ev.price <= best_ask):
                t["L_a"] += ev.size
        elif ev.event_type in (CANCEL_PARTIAL, CANCEL_FULL):
            if ev.direction == 1 and ev.price == best_bid:
                t["C_b"] += ev.size
            elif ev.direction == -1 and ev.price == best_ask:
                t["C_a"] += ev.size
        elif ev.event_type == EXECUTE_VISIBLE:
            # direction is the resting side: an executed ask means a marketable buy
            if ev.direction == -1 and ev.price == best_ask:
                t["M_b"] += ev.size
            elif ev.direction == 1 and ev.price == best_bid:
                t["M_a"] += ev.size
        elif ev.event_type == EXECUTE_HIDDEN:
            if counters is not None:
                counters["hidden_skipped"] = counters.get("hidden_skipped", 0) + 1
    return t


def ofi_cont(tallies: dict) -> float:
    """Six-term best-level imbalance from limit/cancel/marketable tallies."""
    return float(
        tallies["L_b"]
        - tallies["C_b"]
        - tallies["M_b"]
        - tallies["L_a"]
        + tallies["C_a"]
        - tallies["M_a"]
    )


def absolutize(frame: pd.DataFrame) -> pd.DataFrame:
    """Append ``abs_``-prefixed magnitude columns for each signed column."""
    out = frame.copy()
    for col in SIGNED_COLUMNS:
        if col in out.columns:
            out[f"abs_{col}"] = out[col].abs()
    return out


def sample_snapshots(snapshots: Sequence[BookSnapshot], times: Sequence[float],
                     sample_seconds: float = 1.0):
    """Downsample a snapshot series to a fixed cadence (book state as-of).

    Used when only order book files exist: per-event alignment is
    unavailable, so flows are computed between sampled states instead.
    Returns (sampled snapshots, sample times).
    """
    if len(snapshots) != len(times):
        raise OfiError("need one timestamp per snapshot")
    if not snapshots:
        return [], []
    out, out_t = [], []
    t = math.floor(times[0])
    k = 0
    n = len(times)
    while t <= times[-1]:
        while k + 1 < n and times[k + 1] <= t:
            k += 1
        if times[k] <= t:
            out.append(snapshots[k])
            out_t.append(float(t))
        t += sample_seconds
    return out, out_t


def compute_ofi_bins_from_snapshots(
    snapshots: Sequence[BookSnapshot],
    times: Sequence[float],
    stock: str,
    day: str,
    calendar: TradingCalendar = DEFAULT_CALENDAR,
    sample_seconds: float = 1.0,
    counters: Optional[dict] = None,
) -> pd.DataFrame:
    """Snapshot-only OFI rows at a sampled cadence.

    Covers the flow family derivable from book states (scaled levels and
    best_level); ofi_cont needs the message stream and is emitted as zero
    with a counter.
    """
    if counters is None:
        counters = {}
    sampled, sample_times = sample_snapshots(snapshots, times, sample_seconds)
    n_bins = calendar.n_bins
    rows = []
    arr_t = np.asarray(sample_times)
    bins = np.floor((arr_t - calendar.session_open) / calendar.bin_seconds).astype(int)
    for j in range(n_bins):
        idx = np.where(bins == j)[0]
        row = {"stock": stock, "day": day, "bin_index": j}
        # include the last pre-bin state so the first in-bin move is seen
        if idx.size:
            a = max(int(idx[0]) - 1, 0)
            b = int(idx[-1]) + 1
            window = sampled[a:b]
        else:
            window = []
        if len(window) < 2:
            for col in SIGNED_COLUMNS:
                row[col] = 0.0
            counters["empty_bins"] = counters.get("empty_bins", 0) + 1
        else:
            try:
                scaled = scaled_multilevel_ofi(window, counters=counters)
            except OfiError:
                scaled = np.zeros(OFI_LEVELS)
            for m in range(OFI_LEVELS):
                row[f"ofi_{m}"] = float(scaled[m])
            row["best_level"] = best_level_ofi(window, counters)
            row["ofi_cont"] = 0.0
            counters["ofi_cont_unavailable"] = counters.get(
                "ofi_cont_unavailable", 0
            ) + 1
        rows.append(row)
    return absolutize(pd.DataFrame(rows))


def compute_ofi_bins(
    events: Sequence[LobEvent],
    snapshots: Sequence[BookSnapshot],
    stock: str,
    day: str,
    calendar: TradingCalendar = DEFAULT_CALENDAR,
    counters: Optional[dict] = None,
) -> pd.DataFrame:
    """One OFI row per bin: scaled levels, best-level flow, and ofi_cont.

    ``snapshots`` must have length ``len(events) + 1`` with the leading
    entry being the pre-stream state.
    """
    if len(snapshots) != len(events) + 1:
        raise OfiError("snapshots must align one-per-event with a leading state")
    if counters is None:
        counters = {}
    n_bins = calendar.n_bins
    times = np.array([ev.time for ev in events])
    bins = np.floor((times - calendar.session_open) / calendar.bin_seconds).astype(int)
    np.clip(bins, 0, n_bins - 1, out=bins)

    rows = []
    for j in range(n_bins):
        idx = np.where(bins == j)[0]
        row = {"stock": stock, "day": day, "bin_index": j}
        if idx.size == 0:
            for col in SIGNED_COLUMNS:
                row[col] = 0.0
            counters["empty_bins"] = counters.get("empty_bins", 0) + 1
        else:
            a, b = int(idx[0]), int(idx[-1]) + 1
            window = snapshots[a : b + 1]
            try:
                scaled = scaled_multilevel_ofi(window, counters=counters)
            except OfiError:
                scaled = np.zeros(OFI_LEVELS)
                counters["zero_depth_bins"] = counters.get("zero_depth_bins", 0) + 1
            for m in range(OFI_LEVELS):
                row[f"ofi_{m}"] = float(scaled[m])
            row["best_level"] = best_level_ofi(window, counters)
            tall = tally_best_level_flows(
                [events[i] for i in range(a, b)], snapshots[a:b], counters
            )
            row["ofi_cont"] = ofi_cont(tall)
        rows.append(row)
    frame = pd.DataFrame(rows)
    return absolutize(frame)
