"""Training-scheme orchestration and rolling out-of-sample evaluation.

Schemes: SAM fits one model per stock, CAM one per cluster with
cluster-mean feature augmentation, UAM one pooled model.  Targets are
modeled as log(1 + shares) and inverted before scoring; the out-of-sample
R^2 is pooled per test day across stocks and bins on the share scale.
Dynamic mode uses the panel features as built (they condition on the
previous realized bin); static mode freezes the intraday-lag features of
each test day at their first-bin values so nothing realized on the test
day enters the design.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from . import cmem as cmem_mod
from . import gbt as gbt_mod
from . import linear_models as lin
from . import seqnet as seq_mod
from .clustering import ClusterModel
from .features import FeaturePanel, fit_normalizer, clip_target
from .kernels import mem_recursion

SCHEMES = ("SAM", "CAM", "UAM")
MODELS = ("cmem", "ols", "lasso", "ridge", "gbt", "seqnet")
RECIPES = {"cmem_components": 7, "auxiliary": 47, "both": 54}
INTRIN_CODES = {"open": 0, "midday": 1, "close": 2}
DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)


class SchemeError(ValueError):
    pass


@dataclass
class SchemeSpec:
    scheme: str = "SAM"
    model: str = "ridge"
    feature_recipe: str = "both"
    mode: str = "dynamic"
    split: tuple = (20, 5, 5)  # train, validation, test day counts
    cluster_model: Optional[ClusterModel] = None
    seed: int = 0
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    cmem_window_days: int = 10
    gbt_params: Optional[gbt_mod.GbtParams] = None
    seqnet_params: Optional[seq_mod.SeqNetParams] = None
    clip_window_days: int = 10
    include_stock_identity: bool = False  # UAM pooling stays anonymous by default

    def validate(self):
        if self.scheme not in SCHEMES:
            raise SchemeError(f"unknown scheme {self.scheme!r}")
        if self.model not in MODELS:
            raise SchemeError(f"unknown model {self.model!r}")
        if self.feature_recipe not in RECIPES:
            raise SchemeError(f"unknown feature recipe {self.feature_recipe!r}")
        if self.mode not in ("static", "dynamic"):
            raise SchemeError(f"unknown mode {self.mode!r}")
        if self.scheme == "CAM" and self.cluster_model is None:
            raise SchemeError("CAM requires a cluster model")
        if len(self.split) != 3 or min(self.split) < 1:
            raise SchemeError("split must give positive train/validation/test days")


@dataclass
class EvaluationReport:
    scheme: str
    model: str
    recipe: str
    mode: str
    r2_by_day: dict
    skipped_days: list = field(default_factory=list)
    per_stock_r2: Optional[dict] = None
    runtime: float = 0.0  # informational; excluded from serialized reports
    n_features: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.r2_by_day.values())))

    @property
    def std(self) -> float:
        return float(np.std(list(self.r2_by_day.values())))

    def to_json(self, path=None) -> str:
        payload = {
            "scheme": self.scheme,
            "model": self.model,
            "recipe": self.recipe,
            "mode": self.mode,
            "n_features": self.n_features,
            "r2_by_day": self.r2_by_day,
            "skipped_days": self.skipped_days,
            "per_stock_r2": self.per_stock_r2,
            "mean": self.mean,
            "std": self.std,
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def frame(self) -> pd.DataFrame:
        """Per-day R^2 rows for CSV export."""
        return pd.DataFrame(
            {
                "day": list(self.r2_by_day),
                "r2": list(self.r2_by_day.values()),
                "scheme": self.scheme,
                "model": self.model,
                "recipe": self.recipe,
                "mode": self.mode,
            }
        )


def split_days(days, split):
    n_train, n_val, n_test = split
    if len(days) < n_train + n_val + n_test:
        raise SchemeError(
            f"panel has {len(days)} usable days; split needs "
            f"{n_train + n_val + n_test}"
        )
    days = list(days)
    train = days[:n_train]
    val = days[n_train : n_train + n_val]
    test = days[n_train + n_val : n_train + n_val + n_test]
    return train, val, test


def _outstanding_for(outstanding, stock) -> float:
    if isinstance(outstanding, dict):
        return float(outstanding[stock])
    return float(outstanding)


def cmem_component_frame(
    panel_frame: pd.DataFrame,
    outstanding,
    fit_days: list,
    test_days: list,
    mode: str,
) -> pd.DataFrame:
    """Per-row component predictor columns on the share scale.

    One fit per stock on ``fit_days``; the fitted recursions then run
    causally over the whole panel, so train and test rows carry the same
    feature semantics.  Under static mode, test-day dynamic components are
    forward-iterated from the day boundary instead of tracking realized
    bins.
    """
    stocks = sorted(panel_frame["stock"].unique())
    test_set = set(test_days)
    comp_rows = []
    for stock in stocks:
        shares = _outstanding_for(outstanding, stock)
        sub = panel_frame[panel_frame["stock"] == stock]
        pivot = sub.pivot_table(
            index="day", columns="bin_index", values="volume", aggfunc="first"
        ).sort_index()
        all_days = list(pivot.index)
        turnover = pivot.to_numpy(np.float64) / shares
        n_all, n_bins = turnover.shape

        fit_idx = [all_days.index(d) for d in fit_days if d in all_days]
        fit0 = cmem_mod.fit(turnover[fit_idx])
        omega_d, alpha_d, beta_d = fit0.daily_params
        omega_m, alpha_m, beta_m = fit0.intra_params
        s = fit0.seasonal
        xf = np.maximum(turnover, fit0.floor_value)
        vbar = xf.mean(axis=1)
        eta0 = float(vbar[fit_idx].mean()) * fit0.scale_convention["residual_scale"]
        eta = mem_recursion(vbar, omega_d, alpha_d, beta_d, eta0)
        r = (xf / (eta[:, None] * s[None, :])).ravel()
        mu = mem_recursion(r, omega_m, alpha_m, beta_m, 1.0).reshape(n_all, n_bins)
        if mode == "static":
            for di, day in enumerate(all_days):
                if day not in test_set:
                    continue
                for j in range(1, n_bins):
                    mu[di, j] = omega_m + (alpha_m + beta_m) * mu[di, j - 1]

        for di, day in enumerate(all_days):
            for j in range(n_bins):
                e = eta[di] * shares
                m = mu[di, j]
                comp_rows.append(
                    {
                        "stock": stock,
                        "day": day,
                        "bin_index": j,
                        "eta": e,
                        "seas": s[j],
                        "mu": m,
                        "x": e * s[j] * m,
                        "eta_seas": e * s[j],
                        "seas_mu": s[j] * m,
                        "eta_mu": e * m,
                    }
                )
    return pd.DataFrame(comp_rows)


@dataclass
class ModelData:
    frame: pd.DataFrame  # keys, transformed features, y, volume, split tag
    feature_cols: list  # manifest-recipe columns (pre-encoding)
    train_days: list
    val_days: list
    test_days: list
    stocks: list


def prepare_model_data(
    panel: FeaturePanel,
    spec: SchemeSpec,
    outstanding,
) -> ModelData:
    spec.validate()
    frame = panel.frame.copy()
    days = sorted(frame["day"].unique())
    train_days, val_days, test_days = split_days(days, spec.split)
    stocks = sorted(frame["stock"].unique())

    want_cmem = spec.feature_recipe in ("cmem_components", "both") and spec.model != "cmem"
    if want_cmem:
        comp = cmem_component_frame(
            frame,
            outstanding,
            fit_days=train_days + val_days,
            test_days=test_days,
            mode=spec.mode,
        )
        frame = frame.merge(comp, on=["stock", "day", "bin_index"], how="inner")

    if spec.feature_recipe == "cmem_components":
        feature_cols = list(cmem_mod.CMEM_FEATURES)
    elif spec.feature_recipe == "auxiliary":
        feature_cols = panel.feature_names()
    else:
        feature_cols = panel.feature_names() + list(cmem_mod.CMEM_FEATURES)

    keep = frame["day"].isin(train_days + val_days + test_days)
    frame = frame[keep].sort_values(["stock", "day", "bin_index"]).reset_index(drop=True)

    # target: per-stock trailing-window clip on training rows, then log1p
    frame["y"] = np.nan
    for stock in stocks:
        m = frame["stock"] == stock
        trainable = m & frame["day"].isin(train_days + val_days)
        state = fit_normalizer(
            frame[trainable],
            columns=[],
            target="volume",
            clip_window_days=spec.clip_window_days,
        )
        y = frame.loc[m, "volume"].to_numpy(np.float64)
        clipped = np.where(
            frame.loc[m, "day"].isin(train_days + val_days).to_numpy(),
            clip_target(state, y),
            y,
        )
        frame.loc[m, "y"] = np.log1p(clipped)

    # log-transform numeric predictors (time features excluded)
    for col in feature_cols:
        if col in ("timeHMs", "intrIn"):
            continue
        vals = frame[col].to_numpy(np.float64)
        frame[col] = np.log1p(np.clip(vals, 0.0, None))

    tag = np.where(
        frame["day"].isin(train_days),
        "train",
        np.where(frame["day"].isin(val_days), "val", "test"),
    )
    frame["split"] = tag

    if spec.mode == "static":
        frame = _freeze_static_rows(frame, panel, feature_cols, test_days)

    return ModelData(
        frame=frame,
        feature_cols=feature_cols,
        train_days=train_days,
        val_days=val_days,
        test_days=test_days,
        stocks=stocks,
    )


def _freeze_static_rows(frame, panel, feature_cols, test_days):
    """Static mode: test-day lag features pinned at their first-bin values."""
    lag_cols = [
        c.name
        for c in panel.manifest
        if c.kind in ("basic", "compound", "ofi") and c.name in feature_cols
    ]
    if not lag_cols:
        return frame
    out = frame.copy()
    is_test = out["day"].isin(test_days)
    for (stock, day), sub in out[is_test].groupby(["stock", "day"], sort=False):
        first = sub.sort_values("bin_index").iloc[0]
        out.loc[sub.index, lag_cols] = first[lag_cols].to_numpy()
    return out


# ---------------------------------------------------------------------------
# design assembly
# ---------------------------------------------------------------------------

@dataclass
class DesignGroup:
    name: str
    rows: pd.DataFrame
    extra_numeric: list = field(default_factory=list)  # CAM cluster means


def assemble_design(
    spec: SchemeSpec,
    data: ModelData,
) -> list:
    """Group the panel rows per the scheme; CAM adds cluster-mean columns."""
    frame = data.frame
    if spec.scheme == "SAM":
        return [
            DesignGroup(name=s, rows=frame[frame["stock"] == s].copy())
            for s in data.stocks
        ]
    if spec.scheme == "UAM":
        return [DesignGroup(name="pooled", rows=frame.copy())]

    model = spec.cluster_model
    missing = [s for s in data.stocks if s not in model.assignments]
    if missing:
        raise SchemeError(f"no cluster assignment for stocks: {missing}")
    numeric = [c for c in data.feature_cols if c not in ("timeHMs", "intrIn")]
    groups = []
    for cid in sorted(set(model.assignments.values())):
        members = [s for s in data.stocks if model.assignments[s] == cid]
        rows = frame[frame["stock"].isin(members)].copy()
        means = (
            rows.groupby(["day", "bin_index"])[numeric]
            .mean()
            .rename(columns={c: f"cm_{c}" for c in numeric})
            .reset_index()
        )
        orig_index = rows.index
        rows = rows.merge(means, on=["day", "bin_index"], how="left")
        rows.index = orig_index
        groups.append(
            DesignGroup(
                name=f"cluster{cid}",
                rows=rows,
                extra_numeric=[f"cm_{c}" for c in numeric],
            )
        )
    return groups


def encode_design(rows: pd.DataFrame, feature_cols, extra_numeric, model_kind: str,
                  stock_identity: bool = False):
    """Numeric design matrix: one-hot time features for linear models,
    integer codes for trees and the network."""
    cols = []
    names = []
    numeric = [c for c in feature_cols if c not in ("timeHMs", "intrIn")]
    for c in numeric + list(extra_numeric):
        cols.append(rows[c].to_numpy(np.float64))
        names.append(c)
    if stock_identity:
        stocks = sorted(rows["stock"].unique())
        if model_kind in ("ols", "lasso", "ridge"):
            for s in stocks[1:]:
                cols.append((rows["stock"] == s).to_numpy(np.float64))
                names.append(f"stock_{s}")
        else:
            codes = {s: i for i, s in enumerate(stocks)}
            cols.append(rows["stock"].map(codes).to_numpy(np.float64))
            names.append("stock_id")
    if "timeHMs" in feature_cols:
        if model_kind in ("ols", "lasso", "ridge"):
            bins = sorted(rows["bin_index"].unique())
            for b in bins[1:]:  # reference level dropped
                cols.append((rows["bin_index"] == b).to_numpy(np.float64))
                names.append(f"timeHMs_{b}")
        else:
            cols.append(rows["bin_index"].to_numpy(np.float64))
            names.append("timeHMs")
    if "intrIn" in feature_cols:
        # interval dummies are exact sums of the bin dummies, so plain OLS
        # drops them when the full timeHMs one-hot is present
        if model_kind == "ols" and "timeHMs" in feature_cols:
            pass
        elif model_kind in ("ols", "lasso", "ridge"):
            for g in ("midday", "close"):  # 'open' is the reference
                cols.append((rows["intrIn"] == g).to_numpy(np.float64))
                names.append(f"intrIn_{g}")
        else:
            cols.append(rows["intrIn"].map(INTRIN_CODES).to_numpy(np.float64))
            names.append("intrIn")
    X = np.column_stack(cols) if cols else np.zeros((len(rows), 0))
    return X, names


def build_windows(rows: pd.DataFrame, X: np.ndarray, window: int):
    """Per-stock rolling windows over encoded rows for the sequence net.

    Returns (tensor (n, window, p), kept row positions); rows whose stock
    history is shorter than the window are dropped.
    """
    keep = []
    slabs = []
    stock_arr = rows["stock"].to_numpy()
    pos = np.arange(len(rows))
    for s in pd.unique(stock_arr):
        idx = pos[stock_arr == s]
        for i_local in range(window - 1, len(idx)):
            slabs.append(X[idx[i_local + 1 - window : i_local + 1]])
            keep.append(idx[i_local])
    if not slabs:
        raise SchemeError("window longer than every stock history")
    return np.stack(slabs), np.asarray(keep)


class _FittedGroup:
    def __init__(self, kind, model, names, normalizer=None, window=None):
        self.kind = kind
        self.model = model
        self.names = names
        self.normalizer = normalizer
        self.window = window


def _fit_group(spec: SchemeSpec, group: DesignGroup, data: ModelData):
    rows = group.rows
    X, names = encode_design(rows, data.feature_cols, group.extra_numeric, spec.model,
                             stock_identity=spec.include_stock_identity and spec.scheme == "UAM")
    y = rows["y"].to_numpy(np.float64)
    is_train = (rows["split"] == "train").to_numpy()
    is_val = (rows["split"] == "val").to_numpy()
    fit_mask = is_train | is_val

    if spec.model == "ols":
        model = lin.fit_ols(X[fit_mask], y[fit_mask], names=names)
        return _FittedGroup("ols", model, names)
    if spec.model in ("ridge", "lasso"):
        lam = lin.select_lambda(
            spec.lambda_grid,
            (X[is_train], y[is_train]),
            (X[is_val], y[is_val]),
            fitter=spec.model,
        )
        fit_fn = lin.fit_ridge if spec.model == "ridge" else lin.fit_lasso
        model = fit_fn(X[fit_mask], y[fit_mask], lam, names=names)
        return _FittedGroup(spec.model, model, names)
    if spec.model == "gbt":
        params = spec.gbt_params or gbt_mod.GbtParams()
        model = gbt_mod.fit_gbt(X[fit_mask], y[fit_mask], params, feature_names=names)
        return _FittedGroup("gbt", model, names)
    if spec.model == "seqnet":
        params = spec.seqnet_params or seq_mod.SeqNetParams()
        # minmax the encoded matrix into [0,1] with train-row bounds
        lo = np.array([X[is_train, j].min() for j in range(X.shape[1])])
        hi = np.array([X[is_train, j].max() for j in range(X.shape[1])])
        span = np.where(hi > lo, hi - lo, 1.0)
        Xn = np.clip((X - lo) / span, 0.0, 1.0)
        Xn[:, hi == lo] = 0.5
        windows, kept = build_windows(rows, Xn, params.input_window)
        yk = y[kept]
        split_k = rows["split"].to_numpy()[kept]
        tr = split_k == "train"
        va = split_k == "val"
        net, _ = seq_mod.fit_seqnet(
            windows[tr], yk[tr], params, X_val=windows[va], y_val=yk[va]
        )
        return _FittedGroup("seqnet", net, names, normalizer=(lo, span, hi), window=params.input_window)
    raise SchemeError(f"model {spec.model} has no design-based fit")


def _predict_group(fitted: _FittedGroup, spec: SchemeSpec, group: DesignGroup,
                   data: ModelData):
    """Log-scale predictions for the group's test rows; returns (index, yhat)."""
    rows = group.rows
    X, _ = encode_design(rows, data.feature_cols, group.extra_numeric, spec.model,
                         stock_identity=spec.include_stock_identity and spec.scheme == "UAM")
    is_test = (rows["split"] == "test").to_numpy()
    if fitted.kind in ("ols", "ridge", "lasso"):
        yhat = lin.predict(fitted.model, X[is_test])
        return rows.index[is_test], yhat
    if fitted.kind == "gbt":
        yhat = gbt_mod.predict(fitted.model, X[is_test])
        return rows.index[is_test], yhat
    if fitted.kind == "seqnet":
        lo, span, hi = fitted.normalizer
        Xn = np.clip((X - lo) / span, 0.0, 1.0)
        Xn[:, hi == lo] = 0.5
        windows, kept = build_windows(rows, Xn, fitted.window)
        mask = is_test[kept]
        yhat = fitted.model.predict(windows[mask])
        return rows.index[kept[mask]], yhat
    raise SchemeError(f"model {fitted.kind} has no design-based predict")


def pooled_daily_r2(frame: pd.DataFrame, pred_col: str = "pred") -> tuple:
    """Per-day R^2 pooled over stocks and bins on the share scale."""
    r2 = {}
    skipped = []
    for day, sub in frame.groupby("day", sort=True):
        y = sub["volume"].to_numpy(np.float64)
        yhat = sub[pred_col].to_numpy(np.float64)
        ss_tot = float(((y - y.mean()) ** 2).sum())
        if ss_tot == 0:
            warnings.warn(f"constant volume on {day}; day skipped")
            skipped.append(day)
            continue
        r2[day] = 1.0 - float(((y - yhat) ** 2).sum()) / ss_tot
    return r2, skipped


def rolling_evaluate(
    spec: SchemeSpec,
    panel: FeaturePanel,
    outstanding,
) -> EvaluationReport:
    """Fit the scheme on the split and score every test day."""
    start = time.perf_counter()
    spec.validate()
    if spec.model == "cmem":
        # the benchmark follows the rolling trailing-window protocol
        test_frame, _ = _collect_cmem_predictions(spec, panel, outstanding, False)
        n_features = 0
    else:
        data = prepare_model_data(panel, spec, outstanding)
        test_frame = data.frame[data.frame["split"] == "test"].copy()
        groups = assemble_design(spec, data)
        preds = pd.Series(np.nan, index=data.frame.index)
        n_features = 0
        for group in groups:
            fitted = _fit_group(spec, group, data)
            n_features = len(fitted.names)
            idx, yhat = _predict_group(fitted, spec, group, data)
            preds.loc[idx] = yhat
        test_frame["pred_log"] = preds.loc[test_frame.index]
        missing = test_frame["pred_log"].isna()
        if missing.any():
            # seqnet windows can drop the first test rows of a stock
            test_frame = test_frame[~missing]
        test_frame["pred"] = np.clip(np.expm1(test_frame["pred_log"]), 0.0, None)

    r2, skipped = pooled_daily_r2(test_frame)
    per_stock = {}
    for stock, sub in test_frame.groupby("stock", sort=True):
        y = sub["volume"].to_numpy(np.float64)
        yhat = sub["pred"].to_numpy(np.float64)
        ss_tot = float(((y - y.mean()) ** 2).sum())
        if ss_tot > 0:
            per_stock[stock] = 1.0 - float(((y - yhat) ** 2).sum()) / ss_tot

    return EvaluationReport(
        scheme=spec.scheme,
        model=spec.model,
        recipe=spec.feature_recipe,
        mode=spec.mode,
        r2_by_day=r2,
        skipped_days=skipped,
        per_stock_r2=per_stock,
        runtime=time.perf_counter() - start,
        n_features=RECIPES[spec.feature_recipe],
    )


def evaluate_matrix(specs, panel, outstanding):
    """Evaluate several scheme specs and build a comparison table."""
    reports = [rolling_evaluate(s, panel, outstanding) for s in specs]
    return reports, comparison_table(reports)


def comparison_table(reports) -> pd.DataFrame:
    rows = []
    for rep in reports:
        rows.append(
            {
                "Predictors": rep.scheme if rep.model != "cmem" else "Benchmark",
                "Model": rep.model.upper(),
                "Features": rep.recipe,
                "Num": rep.n_features if rep.model != "cmem" else None,
                "Mean": round(rep.mean, 6),
                "Std": round(rep.std, 6),
            }
        )
    return pd.DataFrame(rows, columns=["Predictors", "Model", "Features", "Num", "Mean", "Std"])


# ---------------------------------------------------------------------------
# feature importance
# ---------------------------------------------------------------------------

def collect_predictions(
    spec: SchemeSpec,
    panel: FeaturePanel,
    outstanding,
    with_steps: bool = False,
):
    """Share-scale test-row forecasts, optionally with per-step matrices.

    The step matrix for a (stock, day) has row i equal to the forecasts
    available just before bin i (dynamic-weight input).  For design-based
    models, rows after step i reuse step i's lag features, which keeps
    every entry free of information from bins >= i.
    """
    spec.validate()
    if spec.model == "cmem":
        return _collect_cmem_predictions(spec, panel, outstanding, with_steps)

    data = prepare_model_data(panel, spec, outstanding)
    groups = assemble_design(spec, data)
    fitted_groups = [( _fit_group(spec, g, data), g) for g in groups]
    preds = pd.Series(np.nan, index=data.frame.index)
    for fitted, group in fitted_groups:
        idx, yhat = _predict_group(fitted, spec, group, data)
        preds.loc[idx] = yhat
    test = data.frame[data.frame["split"] == "test"].copy()
    test["pred"] = np.clip(np.expm1(preds.loc[test.index]), 0.0, None)
    test = test[test["pred"].notna()]

    steps = None
    if with_steps:
        if spec.model == "seqnet":
            raise SchemeError("per-step matrices are not built for seqnet")
        lag_cols = _step_lag_columns(panel, data.feature_cols)
        steps = {}
        for fitted, group in fitted_groups:
            rows = group.rows
            test_rows = rows[rows["split"] == "test"]
            for (stock, day), sub in test_rows.groupby(["stock", "day"], sort=False):
                sub = sub.sort_values("bin_index")
                n = len(sub)
                F = np.empty((n, n))
                for i in range(n):
                    frozen = sub.copy()
                    cols = [c for c in lag_cols if c in frozen.columns]
                    frozen.loc[:, cols] = np.tile(
                        sub.iloc[i][cols].to_numpy(), (n, 1)
                    )
                    X, _ = encode_design(
                        frozen, data.feature_cols, group.extra_numeric, spec.model,
                        stock_identity=spec.include_stock_identity
                        and spec.scheme == "UAM",
                    )
                    if fitted.kind in ("ols", "ridge", "lasso"):
                        yhat = lin.predict(fitted.model, X)
                    else:
                        yhat = gbt_mod.predict(fitted.model, X)
                    F[i] = np.clip(np.expm1(yhat), 0.0, None)
                steps[(stock, day)] = F
    return test[["stock", "day", "bin_index", "volume", "pred"]], steps


def _step_lag_columns(panel: FeaturePanel, feature_cols) -> list:
    lag = [
        c.name
        for c in panel.manifest
        if c.kind in ("basic", "compound", "ofi") and c.name in feature_cols
    ]
    # intraday-dynamic component columns condition on the previous bin too
    lag += [c for c in ("mu", "x", "seas_mu", "eta_mu") if c in feature_cols]
    lag += [f"cm_{c}" for c in lag]
    return lag


def _collect_cmem_predictions(spec, panel, outstanding, with_steps):
    frame = panel.frame
    days = sorted(frame["day"].unique())
    train_days, val_days, test_days = split_days(days, spec.split)
    rows = []
    steps = {} if with_steps else None
    for stock in sorted(frame["stock"].unique()):
        shares = _outstanding_for(outstanding, stock)
        sub = frame[frame["stock"] == stock]
        pivot = sub.pivot_table(
            index="day", columns="bin_index", values="volume", aggfunc="first"
        ).sort_index()
        all_days = list(pivot.index)
        turnover = pivot.to_numpy(np.float64) / shares
        for day in test_days:
            if day not in all_days:
                continue
            di = all_days.index(day)
            lo = max(0, di - spec.cmem_window_days)
            history = turnover[lo:di]
            fit_t = cmem_mod.fit(history)
            pred = cmem_mod.forecast(
                fit_t,
                history,
                mode=spec.mode,
                realized_next=turnover[di] if spec.mode == "dynamic" else None,
            )
            realized = pivot.loc[day].to_numpy(np.float64)
            for j in range(turnover.shape[1]):
                rows.append(
                    {
                        "stock": stock,
                        "day": day,
                        "bin_index": j,
                        "volume": realized[j],
                        "pred": max(pred[j] * shares, 0.0),
                    }
                )
            if with_steps:
                steps[(stock, day)] = (
                    cmem_mod.forecast_steps(fit_t, history, turnover[di]) * shares
                )
    return pd.DataFrame(rows), steps


def feature_importance(spec: SchemeSpec, fitted, data=None, n_shuffles: int = 5,
                       seed: int = 0) -> list:
    """Ranked (name, score) pairs using each family's native criterion.

    OLS ranks by |t|, penalized fits by |standardized coefficient| (exact
    zeros dropped), trees by split counts, and the network by permutation
    importance: the mean R^2 drop over ``n_shuffles`` seeded shuffles.
    """
    if isinstance(fitted, _FittedGroup):
        kind, model, names = fitted.kind, fitted.model, fitted.names
    else:
        kind, model = spec.model, fitted
        names = getattr(fitted, "feature_names", None) or getattr(fitted, "names", None)

    if kind == "ols":
        if model.tvalues is None:
            raise SchemeError("OLS fit carries no t-values (no residual dof)")
        pairs = [(n, abs(t)) for n, t in model.tvalues.items()]
    elif kind in ("ridge", "lasso"):
        pairs = [
            (n, abs(b)) for n, b in model.standardized_coefficients().items() if b != 0.0
        ]
    elif kind == "gbt":
        counts = gbt_mod.gbt_importance(model)
        labels = model.feature_names or [f"x{i}" for i in range(len(counts))]
        pairs = [(labels[i], float(counts[i])) for i in range(len(counts))]
    elif kind == "seqnet":
        if data is None:
            raise SchemeError("permutation importance needs (windows, y)")
        windows, y = data
        if names is None:
            names = [f"x{i}" for i in range(windows.shape[2])]
        base = _r2(y, model.predict(windows))
        rng = np.random.default_rng(seed)
        pairs = []
        for f in range(windows.shape[2]):
            drops = []
            for _ in range(n_shuffles):
                shuffled = windows.copy()
                perm = rng.permutation(windows.shape[0])
                shuffled[:, :, f] = shuffled[perm, :, f]
                drops.append(base - _r2(y, model.predict(shuffled)))
            pairs.append((names[f], float(np.mean(drops))))
    else:
        raise SchemeError(f"no importance rule for model kind {kind!r}")
    return sorted(pairs, key=lambda kv: (-kv[1], kv[0]))


def _r2(y, yhat) -> float:
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        return 0.0
    return 1.0 - float(((y - yhat) ** 2).sum()) / ss_tot
