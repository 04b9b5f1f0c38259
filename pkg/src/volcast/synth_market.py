"""Synthetic multi-stock volume panels and LOB event streams.

The volume generator follows the multiplicative structure
``x = eta_t * s_j * mu_tj * eps_tj`` (daily level, intraday seasonal,
intraday dynamic, iid positive noise) with a latent common factor that
multiplies the daily level across stocks.  Ground-truth components are
kept so estimators downstream can be scored against them.

Event streams are built on top of a generated panel so that binning the
stream reproduces the panel's volume column exactly.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import pandas as pd

from .lob_ingest import (
    BookSnapshot,
    DEFAULT_CALENDAR,
    EXECUTE_HIDDEN,
    EXECUTE_VISIBLE,
    CANCEL_FULL,
    CANCEL_PARTIAL,
    LobEvent,
    NEW_LIMIT,
    TradingCalendar,
)

# sub-stream tags for per-purpose deterministic generators
_STREAM_FACTOR = 0
_STREAM_VOLUME = 1
_STREAM_STATS = 2
_STREAM_EVENTS = 3

TICK = 100  # one cent in 1e-4 currency units


class ConfigError(ValueError):
    pass


def default_seasonal_profile(n_bins: int = 26) -> np.ndarray:
    """U-shaped profile with a closing-auction bump, geometric mean 1."""
    j = np.arange(n_bins, dtype=np.float64)
    center = (n_bins - 1) / 2.0
    log_s = 0.9 * ((j - center) / center) ** 2
    log_s[-1] += 0.55
    log_s -= log_s.mean()
    return np.exp(log_s)


@dataclass
class SynthConfig:
    n_stocks: int = 4
    n_days: int = 30
    seed: int = 0
    seasonal_profile: np.ndarray = field(default_factory=default_seasonal_profile)
    daily_persistence: float = 0.4
    mem_alpha: float = 0.25
    mem_beta: float = 0.55
    common_factor_loading: float = 0.0
    noise_shape: float = 60.0
    outstanding_shares: int = 50_000_000
    price_seed: int = 1_000_000  # $100.00 in 1e-4 units
    base_bin_turnover: float = 4e-5  # mean bin volume as a share of outstanding
    factor_phi: float = 0.6
    level_dispersion: float = 0.25  # cross-stock spread of base levels (lognormal sd)
    trade_size_mean: int = 400
    max_trades_per_bin: int = 24
    start_day: str = "2017-07-03"

    def validate(self) -> None:
        prof = np.asarray(self.seasonal_profile, dtype=np.float64)
        if prof.ndim != 1 or prof.shape[0] != DEFAULT_CALENDAR.n_bins:
            raise ConfigError("seasonal_profile must have one entry per bin")
        if (prof <= 0).any():
            raise ConfigError("seasonal_profile entries must be positive")
        if abs(np.log(prof).mean()) > 1e-9:
            raise ConfigError("seasonal_profile must have geometric mean 1")
        if not (0.0 <= self.daily_persistence < 1.0):
            raise ConfigError("daily_persistence must lie in [0, 1)")
        if self.mem_alpha < 0 or self.mem_beta < 0:
            raise ConfigError("mem_alpha and mem_beta must be non-negative")
        if self.mem_alpha + self.mem_beta >= 1.0:
            raise ConfigError("stationarity requires mem_alpha + mem_beta < 1")
        if not (0.0 <= self.common_factor_loading <= 1.0):
            raise ConfigError("common_factor_loading must lie in [0, 1]")
        if not (self.noise_shape > 0):
            raise ConfigError("noise_shape must be positive")
        if self.outstanding_shares <= 0:
            raise ConfigError("outstanding_shares must be positive")
        if self.price_seed <= 0:
            raise ConfigError("price_seed must be positive")


@dataclass
class GroundTruth:
    stocks: list
    days: list
    seasonal: np.ndarray  # (26,)
    eta: np.ndarray  # (n_stocks, n_days) including the factor effect
    eta_base: np.ndarray  # (n_stocks, n_days) before the factor
    factor: np.ndarray  # (n_days,)
    mu: np.ndarray  # (n_stocks, n_days, 26)
    eps: np.ndarray  # (n_stocks, n_days, 26)
    turnover: np.ndarray  # (n_stocks, n_days, 26) before share rounding
    base_levels: np.ndarray  # (n_stocks,)
    mem_params: tuple  # (omega_m, alpha_m, beta_m)
    daily_params: tuple  # (omega per stock handled via base_levels, alpha_d, beta_d)

    def to_json(self, path) -> None:
        payload = {
            "seasonal": self.seasonal.tolist(),
            "factor": self.factor.tolist(),
            "mem_params": list(self.mem_params),
            "daily_params": list(self.daily_params),
            "stocks": {},
        }
        for i, stock in enumerate(self.stocks):
            payload["stocks"][stock] = {
                "base_level": float(self.base_levels[i]),
                "days": {
                    day: {
                        "eta": float(self.eta[i, t]),
                        "eta_base": float(self.eta_base[i, t]),
                        "mu": self.mu[i, t].tolist(),
                        "eps": self.eps[i, t].tolist(),
                    }
                    for t, day in enumerate(self.days)
                },
            }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)


def _rng(config: SynthConfig, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(stream, index))
    )


def _day_labels(config: SynthConfig) -> list:
    days = pd.bdate_range(config.start_day, periods=config.n_days)
    return [d.strftime("%Y-%m-%d") for d in days]


def generate_volume_panel(config: SynthConfig):
    """Draw the volume panel and return it with its ground-truth components.

    The panel holds integer share volumes; the ground truth keeps the
    real-valued turnover before rounding.
    """
    config.validate()
    n_bins = DEFAULT_CALENDAR.n_bins
    s = np.asarray(config.seasonal_profile, dtype=np.float64)
    n_stocks, n_days = config.n_stocks, config.n_days
    stocks = [f"SYN{i:02d}" for i in range(n_stocks)]
    days = _day_labels(config)

    rng_f = _rng(config, _STREAM_FACTOR)
    factor = np.zeros(n_days)
    phi = config.factor_phi
    innov = rng_f.standard_normal(n_days)
    factor[0] = innov[0]
    for t in range(1, n_days):
        factor[t] = phi * factor[t - 1] + math.sqrt(1.0 - phi * phi) * innov[t]

    alpha_m, beta_m = config.mem_alpha, config.mem_beta
    omega_m = 1.0 - alpha_m - beta_m
    rho = config.daily_persistence

    eta = np.zeros((n_stocks, n_days))
    eta_base = np.zeros((n_stocks, n_days))
    mu = np.zeros((n_stocks, n_days, n_bins))
    eps = np.zeros((n_stocks, n_days, n_bins))
    turnover = np.zeros((n_stocks, n_days, n_bins))
    base_levels = np.zeros(n_stocks)

    for i in range(n_stocks):
        rng = _rng(config, _STREAM_VOLUME, i)
        base = config.base_bin_turnover * math.exp(
            config.level_dispersion * rng.standard_normal()
        )
        base_levels[i] = base
        if math.isinf(config.noise_shape):
            e = np.ones((n_days, n_bins))
        else:
            e = rng.gamma(config.noise_shape, 1.0 / config.noise_shape, (n_days, n_bins))
        eps[i] = e

        # persistence feeds back the factor-adjusted deseasonalized daily
        # level; feeding the raw mean would compound the seasonal mean and
        # the common factor into an explosive loop
        s_mean = float(s.mean())
        mu_prev = 1.0
        ratio_prev = 1.0
        level_prev = base
        eb = base
        for t in range(n_days):
            if t > 0:
                eb = base * (1.0 - rho) + rho * level_prev
            eta_base[i, t] = eb
            fac = math.exp(config.common_factor_loading * factor[t])
            level = eb * fac
            eta[i, t] = level
            for j in range(n_bins):
                m = omega_m + alpha_m * ratio_prev + beta_m * mu_prev
                mu[i, t, j] = m
                x = level * s[j] * m * e[t, j]
                turnover[i, t, j] = x
                ratio_prev = x / (level * s[j])
                mu_prev = m
            level_prev = turnover[i, t].mean() / (s_mean * fac)

    volume = np.rint(turnover * config.outstanding_shares).astype(np.int64)
    rows = []
    for i, stock in enumerate(stocks):
        for t, day in enumerate(days):
            for j in range(n_bins):
                rows.append((stock, day, j, int(volume[i, t, j])))
    panel = pd.DataFrame(rows, columns=["stock", "day", "bin_index", "volume"])
    truth = GroundTruth(
        stocks=stocks,
        days=days,
        seasonal=s.copy(),
        eta=eta,
        eta_base=eta_base,
        factor=factor,
        mu=mu,
        eps=eps,
        turnover=turnover,
        base_levels=base_levels,
        mem_params=(omega_m, alpha_m, beta_m),
        daily_params=(rho, 0.0),
    )
    return panel, truth


def generate_bin_panel(config: SynthConfig, panel: pd.DataFrame) -> pd.DataFrame:
    """Fabricate the full bin-statistic table from a volume panel.

    Cheap alternative to generating and re-binning event streams; the
    auxiliary statistics (trades, notional, buy/sell split) are drawn
    consistently with the volume column.
    """
    from .lob_ingest import BIN_COLUMNS, assign_interval, DEFAULT_INTERVALS

    stocks = sorted(panel["stock"].unique())
    out_frames = []
    for i, stock in enumerate(stocks):
        sub = panel[panel["stock"] == stock].sort_values(["day", "bin_index"])
        rng = _rng(config, _STREAM_STATS, i)
        vol = sub["volume"].to_numpy(np.int64)
        n = vol.shape[0]
        p_buy = np.clip(rng.normal(0.5, 0.06, n), 0.2, 0.8)
        vol_buy = rng.binomial(vol, p_buy)
        vol_sell = vol - vol_buy
        lam = vol / max(config.trade_size_mean, 1)
        nr = np.where(vol > 0, 1 + rng.poisson(lam), 0).astype(np.int64)
        ntr = rng.binomial(nr, 0.85)
        lit_buy = rng.binomial(ntr, np.where(vol > 0, vol_buy / np.maximum(vol, 1), 0.5))
        lit_sell = ntr - lit_buy
        # slow price walk, same scale as price_seed
        walk = rng.normal(0, 0.002, n).cumsum()
        price = config.price_seed * np.exp(walk - walk[0])
        ntl_buy = vol_buy * price * 1e-4
        ntl_sell = vol_sell * price * 1e-4

        df = sub.copy()
        df["timeHMs"] = [DEFAULT_CALENDAR.bin_start_hm(b) for b in df["bin_index"]]
        df["intrIn"] = [assign_interval(b, DEFAULT_INTERVALS) for b in df["bin_index"]]
        df["volBuyQty"] = vol_buy
        df["volSellQty"] = vol_sell
        df["volBuyNotional"] = ntl_buy
        df["volSellNotional"] = ntl_sell
        df["nrTrades"] = nr
        df["ntr"] = ntr
        df["volBuyNrTrades_lit"] = lit_buy
        df["volSellNrTrades_lit"] = lit_sell
        out_frames.append(df)
    out = pd.concat(out_frames, ignore_index=True)
    return out[BIN_COLUMNS]


# ---------------------------------------------------------------------------
# event-stream generation
# ---------------------------------------------------------------------------

class _MiniBook:
    """Internal aggregated book used while authoring a synthetic stream."""

    def __init__(self):
        self.levels = {1: {}, -1: {}}  # side -> price -> deque of [oid, size]
        self.by_id = {}  # oid -> (side, price)

    def best(self, side: int) -> Optional[int]:
        prices = self.levels[side]
        if not prices:
            return None
        return max(prices) if side == 1 else min(prices)

    def add(self, side: int, price: int, size: int, oid: int) -> None:
        self.levels[side].setdefault(price, deque()).append([oid, size])
        self.by_id[oid] = (side, price)

    def front(self, side: int):
        best = self.best(side)
        if best is None:
            return None, None, None
        q = self.levels[side][best]
        return best, q[0][0], q[0][1]

    def consume_front(self, side: int, size: int) -> None:
        best = self.best(side)
        q = self.levels[side][best]
        q[0][1] -= size
        if q[0][1] <= 0:
            oid = q.popleft()[0]
            del self.by_id[oid]
            if not q:
                del self.levels[side][best]

    def reduce(self, oid: int, size: int) -> None:
        side, price = self.by_id[oid]
        q = self.levels[side][price]
        for entry in q:
            if entry[0] == oid:
                entry[1] -= size
                if entry[1] <= 0:
                    q.remove(entry)
                    del self.by_id[oid]
                break
        if not q:
            del self.levels[side][price]

    def remove(self, oid: int) -> int:
        side, price = self.by_id[oid]
        q = self.levels[side][price]
        for entry in q:
            if entry[0] == oid:
                size = entry[1]
                q.remove(entry)
                del self.by_id[oid]
                if not q:
                    del self.levels[side][price]
                return size
        raise KeyError(oid)

    def depth(self, side: int, price: int) -> int:
        q = self.levels[side].get(price)
        return sum(e[1] for e in q) if q else 0

    def snapshot(self, n_levels: int = 10) -> BookSnapshot:
        ask_p = np.zeros(n_levels, dtype=np.int64)
        ask_s = np.zeros(n_levels, dtype=np.int64)
        bid_p = np.zeros(n_levels, dtype=np.int64)
        bid_s = np.zeros(n_levels, dtype=np.int64)
        for k, price in enumerate(sorted(self.levels[-1])[:n_levels]):
            ask_p[k] = price
            ask_s[k] = self.depth(-1, price)
        for k, price in enumerate(sorted(self.levels[1], reverse=True)[:n_levels]):
            bid_p[k] = price
            bid_s[k] = self.depth(1, price)
        return BookSnapshot(ask_p, ask_s, bid_p, bid_s)


@dataclass
class SynthDayStream:
    stock: str
    day: str
    events: list
    snapshots: Optional[list]  # len(events) + 1 when requested; [0] is pre-stream


def _split_volume(rng, total: int, n_parts: int) -> np.ndarray:
    """Split ``total`` shares into ``n_parts`` positive integers summing exactly."""
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    n_parts = int(max(1, min(n_parts, total)))
    probs = rng.dirichlet(np.full(n_parts, 3.0))
    raw = probs * (total - n_parts)
    base = np.floor(raw).astype(np.int64) + 1
    short = total - base.sum()
    if short > 0:
        order = np.argsort(-(raw - np.floor(raw)))
        base[order[: int(short)]] += 1
    return base


def _generate_day_events(
    config: SynthConfig,
    rng: np.random.Generator,
    bin_volumes: np.ndarray,
    with_snapshots: bool,
    calendar: TradingCalendar,
):
    book = _MiniBook()
    events: list = []
    snapshots: Optional[list] = [book.snapshot()] if with_snapshots else None
    oid_counter = 10_000_000
    mid = int(round(config.price_seed / TICK)) * TICK
    half = TICK  # half-spread of one tick

    pending_times: list = []

    def emit(etype, oid, size, price, direction, bin_index):
        events.append(LobEvent(0.0, etype, oid, size, price, direction))
        pending_times.append(bin_index)
        if with_snapshots:
            snapshots.append(book.snapshot())

    def new_oid():
        nonlocal oid_counter
        oid_counter += 1
        return oid_counter

    def safe_quote(side):
        # passive price near the mid that cannot cross the opposite best
        px = mid - side * half
        opp = book.best(-side)
        if opp is not None:
            px = min(px, opp - TICK) if side == 1 else max(px, opp + TICK)
        return px

    def seed_side(side, bin_index):
        # keep three price levels alive per side
        best = safe_quote(side)
        for lvl in range(3):
            price = best - side * lvl * TICK
            if book.depth(side, price) == 0:
                oid = new_oid()
                size = int(rng.integers(300, 1500))
                book.add(side, price, size, oid)
                emit(NEW_LIMIT, oid, size, price, side, bin_index)

    def top_up(side, need, bin_index):
        cur_best = book.best(side)
        price = cur_best if cur_best is not None else safe_quote(side)
        oid = new_oid()
        size = int(need + rng.integers(100, 600))
        book.add(side, price, size, oid)
        emit(NEW_LIMIT, oid, size, price, side, bin_index)

    n_bins = calendar.n_bins
    for j in range(n_bins):
        seed_side(1, j)
        seed_side(-1, j)
        vol = int(bin_volumes[j])
        if vol > 0:
            n_tr = int(min(config.max_trades_per_bin, max(1, vol // config.trade_size_mean)))
            sizes = _split_volume(rng, vol, n_tr)
        else:
            sizes = np.zeros(0, dtype=np.int64)
        p_buy = float(np.clip(rng.normal(0.5, 0.1), 0.15, 0.85))

        for size in sizes:
            size = int(size)
            # occasional noise: resting adds and cancels away from the spread
            if rng.random() < 0.35:
                side = 1 if rng.random() < 0.5 else -1
                ref = book.best(side)
                if ref is not None:
                    price = ref - side * int(rng.integers(1, 4)) * TICK
                    oid = new_oid()
                    sz = int(rng.integers(100, 900))
                    book.add(side, price, sz, oid)
                    emit(NEW_LIMIT, oid, sz, price, side, j)
            if rng.random() < 0.15 and len(book.by_id) > 8:
                oid = int(rng.choice(list(book.by_id)))
                side, price = book.by_id[oid]
                side_orders = sum(len(q) for q in book.levels[side].values())
                if side_orders > 1:
                    resting = next(e[1] for e in book.levels[side][price] if e[0] == oid)
                    if resting > 1 and rng.random() < 0.5:
                        cut = int(rng.integers(1, resting))
                        book.reduce(oid, cut)
                        emit(CANCEL_PARTIAL, oid, cut, price, side, j)
                    else:
                        book.remove(oid)
                        emit(CANCEL_FULL, oid, resting, price, side, j)

            side = 1 if rng.random() < p_buy else -1
            if rng.random() < 0.12:
                # hidden print: consumes no visible queue
                ref = book.best(side)
                price = ref if ref is not None else mid
                emit(EXECUTE_HIDDEN, new_oid(), size, price, side, j)
                continue
            remaining = size
            while remaining > 0:
                price, oid, front_size = book.front(side)
                if price is None or front_size is None:
                    top_up(side, remaining, j)
                    continue
                take = min(front_size, remaining)
                book.consume_front(side, take)
                emit(EXECUTE_VISIBLE, oid, take, price, side, j)
                remaining -= take
                if book.best(side) is None:
                    seed_side(side, j)

        # small mid drift between bins, spread kept at one tick
        if rng.random() < 0.4:
            mid += TICK * int(rng.choice([-1, 1]))
            mid = max(mid, 10 * TICK)

    # assign non-decreasing times: sorted uniforms within each bin
    bins = np.asarray(pending_times, dtype=np.int64)
    times = np.empty(len(events))
    for j in range(n_bins):
        mask = bins == j
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        start = calendar.session_open + j * calendar.bin_seconds
        times[mask] = start + np.sort(rng.uniform(0.0, calendar.bin_seconds - 1e-6, cnt))
    for ev, t in zip(events, times):
        ev.time = float(t)
    return events, snapshots


def generate_events(
    config: SynthConfig,
    panel: pd.DataFrame,
    with_snapshots: bool = False,
    calendar: TradingCalendar = DEFAULT_CALENDAR,
) -> Iterator[SynthDayStream]:
    """Yield one consistent event stream per (stock, day) of the panel.

    The executed shares (types 4 and 5) in each bin sum exactly to the
    panel's volume for that bin, and the authored book never crosses.
    """
    config.validate()
    stocks = sorted(panel["stock"].unique())
    for i, stock in enumerate(stocks):
        sub = panel[panel["stock"] == stock]
        days = sorted(sub["day"].unique())
        for t, day in enumerate(days):
            rng = _rng(config, _STREAM_EVENTS, i * 100_003 + t)
            rows = sub[sub["day"] == day].sort_values("bin_index")
            vols = rows["volume"].to_numpy(np.int64)
            events, snaps = _generate_day_events(
                config, rng, vols, with_snapshots, calendar
            )
            yield SynthDayStream(stock=stock, day=day, events=events, snapshots=snaps)
