"""Predictor panel construction.

The auxiliary recipe is 47 columns: the two time features, nine numeric
bases taken at the previous bin (the eight numeric bin statistics plus
``ntn``, the two-sided trading notional), and the four aggregation
operations applied to each base.  Aggregations follow the previous-day /
trailing-bin conventions so every column is known before the target bin
starts.  Compound naming: ``daily_<base>``, ``intraday_<base>``,
``<base>_2``, ``<base>_8``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Iterable, Optional

import numpy as np
import pandas as pd

KEY_COLUMNS = ["stock", "day", "bin_index"]
TIME_FEATURES = ["timeHMs", "intrIn"]
AUX_BASES = [
    "volBuyNotional",
    "volSellNotional",
    "volBuyQty",
    "volSellQty",
    "volBuyNrTrades_lit",
    "volSellNrTrades_lit",
    "nrTrades",
    "ntr",
    "ntn",
]
OPS = ("daily", "intraday", "past_2", "past_8")
TARGET = "volume"


class FeatureError(ValueError):
    pass


def compound_name(base: str, op: str) -> str:
    if op == "daily":
        return f"daily_{base}"
    if op == "intraday":
        return f"intraday_{base}"
    if op == "past_2":
        return f"{base}_2"
    if op == "past_8":
        return f"{base}_8"
    raise FeatureError(f"unknown operation {op!r}")


@dataclass
class FeatureColumn:
    name: str
    kind: str  # time | basic | compound | cmem | ofi
    op: Optional[str] = None
    base: Optional[str] = None
    transforms: list = field(default_factory=list)


class FeaturePanel:
    """Aligned design panel: keys, predictor columns, and the volume target."""

    def __init__(self, frame: pd.DataFrame, manifest: list, dropped_rows: int = 0):
        self.frame = frame.reset_index(drop=True)
        self.manifest = manifest
        self.dropped_rows = dropped_rows
        names = [c.name for c in manifest]
        if len(names) != len(set(names)):
            raise FeatureError("duplicate feature names in manifest")
        missing = [n for n in names if n not in frame.columns]
        if missing:
            raise FeatureError(f"manifest names missing from frame: {missing}")
        feat = self.frame[[n for n in names if n != "intrIn"]]
        if feat.isna().any().any():
            raise FeatureError("feature panel contains missing values")

    def feature_names(self, kinds: Optional[Iterable[str]] = None) -> list:
        if kinds is None:
            return [c.name for c in self.manifest]
        kinds = set(kinds)
        return [c.name for c in self.manifest if c.kind in kinds]

    def column(self, name: str) -> pd.Series:
        return self.frame[name]

    def to_csv(self, path) -> None:
        self.frame.to_csv(path, index=False)

    def manifest_json(self, path) -> None:
        payload = {
            "dropped_rows": self.dropped_rows,
            "columns": [asdict(c) for c in self.manifest],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, frame_path, manifest_path) -> "FeaturePanel":
        frame = pd.read_csv(frame_path, dtype={"stock": str, "day": str})
        with open(manifest_path) as fh:
            payload = json.load(fh)
        manifest = [FeatureColumn(**c) for c in payload["columns"]]
        return cls(frame, manifest, payload.get("dropped_rows", 0))


def compound(frame: pd.DataFrame, base: str, op: str) -> pd.Series:
    """Apply one aggregation operation to a basic predictor column.

    ``daily``/``intraday`` sum the previous day's bins (all bins or the
    same interval group); ``past_k`` sums the k bins strictly before the
    row, crossing day boundaries within the stock.  Rows without the full
    history come back as NaN.
    """
    if op not in OPS:
        raise FeatureError(f"unknown operation {op!r}")
    if base not in frame.columns:
        raise FeatureError(f"unknown base column {base!r}")
    if not pd.api.types.is_numeric_dtype(frame[base]):
        raise FeatureError(f"base column {base!r} is not numeric")

    df = frame[KEY_COLUMNS + ["intrIn", base]].copy()
    df["_row"] = np.arange(len(df))
    df = df.sort_values(KEY_COLUMNS)
    out = pd.Series(np.nan, index=df.index)

    if op in ("past_2", "past_8"):
        k = 2 if op == "past_2" else 8
        for _, sub in df.groupby("stock", sort=False):
            vals = sub[base].astype(np.float64)
            out.loc[sub.index] = vals.shift(1).rolling(k, min_periods=k).sum()
    else:
        for _, sub in df.groupby("stock", sort=False):
            days = sorted(sub["day"].unique())
            prev_day = {d: days[i - 1] for i, d in enumerate(days) if i > 0}
            if op == "daily":
                totals = sub.groupby("day")[base].sum()
                mapped = sub["day"].map(lambda d: totals.get(prev_day.get(d), np.nan))
            else:
                totals = sub.groupby(["day", "intrIn"])[base].sum()
                mapped = [
                    totals.get((prev_day.get(d), g), np.nan)
                    for d, g in zip(sub["day"], sub["intrIn"])
                ]
            out.loc[sub.index] = np.asarray(mapped, dtype=np.float64)

    # restore the caller's row order
    restored = pd.Series(np.nan, index=np.arange(len(df)))
    restored.iloc[df["_row"].to_numpy()] = out.to_numpy()
    restored.index = frame.index
    return restored


def build_features(bins: pd.DataFrame) -> FeaturePanel:
    """Build the 47-column auxiliary panel from a bin-statistics table."""
    required = KEY_COLUMNS + TIME_FEATURES + [
        "volBuyNotional",
        "volSellNotional",
        "volBuyQty",
        "volSellQty",
        "volBuyNrTrades_lit",
        "volSellNrTrades_lit",
        "nrTrades",
        "ntr",
        TARGET,
    ]
    missing = [c for c in required if c not in bins.columns]
    if missing:
        raise FeatureError(f"bins table missing columns: {missing}")

    df = bins.copy().sort_values(KEY_COLUMNS).reset_index(drop=True)
    df["ntn"] = df["volBuyNotional"] + df["volSellNotional"]

    manifest = [
        FeatureColumn("timeHMs", "time"),
        FeatureColumn("intrIn", "time"),
    ]
    out = df[KEY_COLUMNS + TIME_FEATURES].copy()

    for base in AUX_BASES:
        lagged = pd.Series(np.nan, index=df.index)
        for _, sub in df.groupby("stock", sort=False):
            lagged.loc[sub.index] = sub[base].astype(np.float64).shift(1)
        out[base] = lagged
        manifest.append(FeatureColumn(base, "basic", base=base))

    for base in AUX_BASES:
        for op in OPS:
            name = compound_name(base, op)
            out[name] = compound(df, base, op)
            manifest.append(FeatureColumn(name, "compound", op=op, base=base))

    out[TARGET] = df[TARGET].astype(np.float64)

    feature_names = [c.name for c in manifest if c.name != "intrIn"]
    mask = out[feature_names].notna().all(axis=1)
    dropped = int((~mask).sum())
    out = out[mask]
    return FeaturePanel(out, manifest, dropped_rows=dropped)


def join_ofi(panel: FeaturePanel, ofi_frame: pd.DataFrame) -> FeaturePanel:
    """Merge per-bin OFI statistics as predictors, lagged one bin.

    Like the numeric basics, the OFI of a bin describes flow during that
    bin, so the value entering the design for a target bin is the
    previous bin's.
    """
    value_cols = [c for c in ofi_frame.columns if c not in KEY_COLUMNS]
    merged = panel.frame.merge(ofi_frame, on=KEY_COLUMNS, how="left", validate="1:1")
    for col in value_cols:
        lagged = pd.Series(np.nan, index=merged.index)
        for _, sub in merged.groupby("stock", sort=False):
            lagged.loc[sub.index] = sub[col].astype(np.float64).shift(1)
        merged[col] = lagged
    mask = merged[value_cols].notna().all(axis=1)
    dropped = int((~mask).sum())
    merged = merged[mask]
    manifest = panel.manifest + [FeatureColumn(c, "ofi") for c in value_cols]
    return FeaturePanel(merged, manifest, panel.dropped_rows + dropped)


def log_transform(column) -> np.ndarray:
    """Elementwise log(1 + x); rejects negative input."""
    arr = np.asarray(column, dtype=np.float64)
    if (arr < 0).any():
        raise FeatureError("log transform requires non-negative input")
    return np.log1p(arr)


def normalize_by_outstanding(volume, outstanding_shares):
    if outstanding_shares <= 0:
        raise FeatureError("outstanding shares must be positive")
    return np.asarray(volume, dtype=np.float64) / float(outstanding_shares)


def denormalize_by_outstanding(turnover, outstanding_shares):
    if outstanding_shares <= 0:
        raise FeatureError("outstanding shares must be positive")
    return np.asarray(turnover, dtype=np.float64) * float(outstanding_shares)


@dataclass
class NormalizerState:
    col_min: dict
    col_max: dict
    clip_lo: float
    clip_hi: float
    clip_window_days: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def fit_normalizer(
    train: pd.DataFrame,
    columns: Iterable[str],
    target: str = TARGET,
    clip_window_days: int = 10,
) -> NormalizerState:
    """Capture min/max per column and target clip bounds on training rows.

    Clip bounds come from the trailing ``clip_window_days`` days present
    in the training slice, matching the rolling-outlier rule.
    """
    if len(train) == 0:
        raise FeatureError("empty training window")
    columns = list(columns)
    col_min = {c: float(train[c].min()) for c in columns}
    col_max = {c: float(train[c].max()) for c in columns}
    days = sorted(train["day"].unique())
    tail = set(days[-clip_window_days:])
    tail_rows = train[train["day"].isin(tail)]
    return NormalizerState(
        col_min=col_min,
        col_max=col_max,
        clip_lo=float(tail_rows[target].min()),
        clip_hi=float(tail_rows[target].max()),
        clip_window_days=clip_window_days,
    )


def apply_normalizer(state: NormalizerState, rows: pd.DataFrame) -> pd.DataFrame:
    """Minmax-scale the fitted columns into [0, 1], clipping outliers.

    Values outside the training range land exactly on 0 or 1; a constant
    training column maps to 0.5 everywhere.
    """
    out = rows.copy()
    for col, lo in state.col_min.items():
        hi = state.col_max[col]
        vals = out[col].to_numpy(np.float64)
        if hi > lo:
            out[col] = np.clip((vals - lo) / (hi - lo), 0.0, 1.0)
        else:
            out[col] = np.full(len(vals), 0.5)
    return out


def clip_target(state: NormalizerState, y) -> np.ndarray:
    return np.clip(np.asarray(y, dtype=np.float64), state.clip_lo, state.clip_hi)


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation for lags 0..max_lag (lag 0 is 1)."""
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    if n <= max_lag + 1:
        raise FeatureError("series too short for requested max_lag")
    x = x - x.mean()
    denom = float(x @ x)
    if denom == 0.0:
        raise FeatureError("autocorrelation undefined for constant series")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float(x[k:] @ x[:-k]) / denom
    return out
