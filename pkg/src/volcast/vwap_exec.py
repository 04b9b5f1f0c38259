"""VWAP replication: slicing weights, realized benchmark, tracking error.

Static weights normalize a day-ahead forecast; dynamic weights follow the
bin-by-bin update rule where each bin takes its share of the remaining
forecast scaled by the unallocated fraction, with the last bin closing
the telescoping sum at exactly one.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

FLOOR_FRAC = 1e-9  # interim forecasts floored at this fraction of the day total


class VwapError(ValueError):
    pass


def _floor_forecast(forecast: np.ndarray) -> np.ndarray:
    total = float(np.clip(forecast, 0.0, None).sum())
    if total <= 0:
        raise VwapError("all-zero forecast; weights undefined")
    return np.maximum(forecast, FLOOR_FRAC * total)


def static_weights(forecast) -> np.ndarray:
    """Proportional day-ahead weights; non-positive entries get floored."""
    f = _floor_forecast(np.asarray(forecast, dtype=np.float64))
    return f / f.sum()


def dynamic_weights(forecast_path) -> np.ndarray:
    """Bin-by-bin weights from a per-bin updated forecast matrix.

    ``forecast_path[i]`` holds the forecast vector available before bin i
    (entries j >= i are used).  The last bin receives the unallocated
    remainder, so the weights sum to one at machine precision.
    """
    F = np.asarray(forecast_path, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise VwapError("forecast path must be a square (bins x bins) matrix")
    n = F.shape[0]
    w = np.zeros(n)
    allocated = 0.0
    for i in range(n - 1):
        tail = np.clip(F[i, i:], 0.0, None)
        total = tail.sum()
        if total <= 0:
            warnings.warn(f"zero remaining forecast before bin {i}; spreading residual")
            for j in range(i, n - 1):
                w[j] = (1.0 - allocated) / (n - i)
                allocated += w[j]
            w[n - 1] = 1.0 - allocated
            return w
        tail = np.maximum(tail, FLOOR_FRAC * total)
        w[i] = tail[0] / tail.sum() * (1.0 - allocated)
        allocated += w[i]
    # closure: in left-to-right summation the weights total exactly one
    w[n - 1] = 1.0 - allocated
    return w


def realized_vwap(prices, volumes) -> float:
    """Volume-weighted average of per-bin prices."""
    p = np.asarray(prices, dtype=np.float64)
    v = np.asarray(volumes, dtype=np.float64)
    total = v.sum()
    if total <= 0:
        raise VwapError("zero total volume; VWAP undefined")
    if ((v > 0) & (p <= 0)).any():
        raise VwapError("non-positive price on a traded bin")
    return float((p * v).sum() / total)


def replicated_vwap(prices, weights) -> float:
    p = np.asarray(prices, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    return float((w * p).sum())


def tracking_error(realized: Sequence[float], replicated: Sequence[float]) -> float:
    """Mean absolute relative VWAP gap across days, in basis points."""
    r = np.asarray(realized, dtype=np.float64)
    m = np.asarray(replicated, dtype=np.float64)
    if r.shape != m.shape or r.size == 0:
        raise VwapError("need aligned non-empty VWAP series")
    return float((np.abs(r - m) / r).mean() * 1e4)


@dataclass
class VwapReport:
    stock: str
    mode: str
    source: str
    days: list = field(default_factory=list)
    realized: list = field(default_factory=list)
    replicated: list = field(default_factory=list)

    @property
    def te_bp(self) -> float:
        return tracking_error(self.realized, self.replicated)

    def add_day(self, day: str, realized: float, replicated: float) -> None:
        self.days.append(day)
        self.realized.append(realized)
        self.replicated.append(replicated)

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            {
                "stock": self.stock,
                "day": self.days,
                "realized_vwap": self.realized,
                "replicated_vwap": self.replicated,
            }
        )
        df["abs_rel_gap_bp"] = (
            np.abs(df["realized_vwap"] - df["replicated_vwap"])
            / df["realized_vwap"]
            * 1e4
        )
        return df

    def to_json(self, path=None) -> str:
        payload = {
            "stock": self.stock,
            "mode": self.mode,
            "source": self.source,
            "tracking_error_bp": self.te_bp,
            "n_days": len(self.days),
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def replicate_day(
    prices,
    volumes,
    weights,
) -> tuple:
    """Realized and replicated VWAP for one day under a slice schedule."""
    return realized_vwap(prices, volumes), replicated_vwap(prices, weights)
