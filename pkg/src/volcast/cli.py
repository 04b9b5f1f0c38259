"""Command-line pipeline: ingest, synth, featurize, train-eval,
backtest-vwap, simulate-fills.

Every command reads one JSON config (see README for the schema), writes
its artifacts under the output directory, and drops a config echo with a
content hash so any report can be reproduced bit-for-bit from the echo
alone.  Wall-clock timings go to a separate ``timings.json`` that is
excluded from determinism guarantees.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd

from . import gbt as gbt_mod
from . import lob_ingest as ingest_mod
from . import matching_engine as me
from . import ofi as ofi_mod
from . import seqnet as seq_mod
from . import synth_market as synth_mod
from . import training_schemes as ts
from . import vwap_exec as vwap_mod
from .clustering import build_cluster_model
from .features import FeaturePanel, build_features, join_ofi

DEFAULT_OUTSTANDING = 50_000_000
DEFAULT_CLUSTER_K = 50  # capped by the universe size at build time


class CliError(RuntimeError):
    pass


def _load_config(path) -> dict:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _config_hash(config: dict) -> str:
    # the output location is not part of a run's scientific identity
    scrubbed = {k: v for k, v in config.items() if k != "out_dir"}
    return hashlib.sha256(
        json.dumps(scrubbed, sort_keys=True).encode()
    ).hexdigest()[:16]


def _echo(config: dict, out_dir: str, command: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    h = _config_hash(config)
    echo = {"command": command, "config": config, "config_sha256": h}
    with open(os.path.join(out_dir, f"{command}_config_echo.json"), "w") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
    return h


def _require(path: str, produced_by: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"missing artifact {path}; run `{produced_by}` first")
    return path


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _synth_config(config: dict, seed: int) -> synth_mod.SynthConfig:
    raw = dict(config.get("synth", {}))
    raw.pop("emit_events", None)
    raw.pop("emit_ofi", None)
    if "seasonal_profile" in raw:
        raw["seasonal_profile"] = np.asarray(raw["seasonal_profile"], dtype=np.float64)
    cfg = synth_mod.SynthConfig(**raw)
    cfg.seed = seed
    return cfg


def _outstanding(config: dict):
    for section in ("train_eval", "synth"):
        v = config.get(section, {}).get("outstanding_shares")
        if v is not None:
            return v
    return DEFAULT_OUTSTANDING


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(config: dict, out_dir: str, seed: int, jobs: int) -> None:
    cfg = _synth_config(config, seed)
    panel, truth = synth_mod.generate_volume_panel(cfg)
    bins = synth_mod.generate_bin_panel(cfg, panel)
    panel.to_csv(os.path.join(out_dir, "panel.csv"), index=False)
    ingest_mod.write_bins_csv(bins, os.path.join(out_dir, "bins.csv"))
    truth.to_json(os.path.join(out_dir, "ground_truth.json"))

    prices = _bin_price_proxy(bins)
    prices.to_csv(os.path.join(out_dir, "prices.csv"), index=False)

    if config.get("synth", {}).get("emit_events", False):
        events_dir = os.path.join(out_dir, "events")
        os.makedirs(events_dir, exist_ok=True)
        want_ofi = config.get("synth", {}).get("emit_ofi", False)
        ofi_frames = []
        for stream in synth_mod.generate_events(cfg, panel, with_snapshots=want_ofi):
            stem = f"{stream.stock}_{stream.day}"
            ingest_mod.write_messages(
                stream.events, os.path.join(events_dir, f"{stem}_messages.csv")
            )
            if stream.snapshots is not None:
                ingest_mod.write_orderbook(
                    stream.snapshots[1:],
                    os.path.join(events_dir, f"{stem}_orderbook.csv"),
                )
                ofi_frames.append(
                    ofi_mod.compute_ofi_bins(
                        stream.events, stream.snapshots, stream.stock, stream.day
                    )
                )
        if ofi_frames:
            pd.concat(ofi_frames, ignore_index=True).to_csv(
                os.path.join(out_dir, "ofi.csv"), index=False
            )


def _bin_price_proxy(bins: pd.DataFrame) -> pd.DataFrame:
    """Average traded price per bin with previous-bin carry-forward.

    Used when no event stream exists; with events the last-trade price
    from the stream takes precedence.
    """
    df = bins.copy().sort_values(["stock", "day", "bin_index"])
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.where(
            df["volume"] > 0,
            (df["volBuyNotional"] + df["volSellNotional"])
            / np.maximum(df["volume"], 1)
            * 1e4,
            np.nan,
        )
    df["price"] = px
    parts = []
    for (stock, day), sub in df.groupby(["stock", "day"], sort=True):
        s = sub["price"].ffill().bfill()
        parts.append(
            pd.DataFrame(
                {
                    "stock": stock,
                    "day": day,
                    "bin_index": sub["bin_index"].to_numpy(),
                    "price": s.to_numpy(),
                }
            )
        )
    return pd.concat(parts, ignore_index=True)


def cmd_ingest(config: dict, out_dir: str, seed: int, jobs: int) -> None:
    section = config.get("ingest", {})
    data_dir = section.get("data_dir") or os.path.join(out_dir, "events")
    pattern = section.get("pattern", "*_messages.csv")
    paths = sorted(glob.glob(os.path.join(data_dir, pattern)))
    if not paths:
        raise CliError(f"no message files matching {pattern} under {data_dir}")

    intervals = ingest_mod.IntervalConfig(
        open_bins=tuple(section.get("open_bins", (0, 1))),
        close_bins=tuple(section.get("close_bins", (24, 25))),
    )

    def one(path):
        stem = os.path.basename(path).replace("_messages.csv", "")
        stock, day = stem.rsplit("_", 1)
        events = ingest_mod.parse_messages(path)
        counters = {}
        records = ingest_mod.bin_events(
            events, day, stock, intervals=intervals, counters=counters
        )
        prices = ingest_mod.bin_last_trade_prices(events)
        return records, counters, stock, day, prices

    results = _pmap(one, paths, jobs)
    frames = []
    price_rows = []
    dropped = 0
    for records, counters, stock, day, prices in results:
        frames.append(ingest_mod.records_to_frame(records))
        dropped += counters.get("dropped_out_of_session", 0)
        for j, p in enumerate(prices):
            price_rows.append({"stock": stock, "day": day, "bin_index": j, "price": p})
    bins = pd.concat(frames, ignore_index=True).sort_values(
        ["stock", "day", "bin_index"]
    )
    ingest_mod.write_bins_csv(bins, os.path.join(out_dir, "bins.csv"))
    pd.DataFrame(price_rows).to_csv(os.path.join(out_dir, "prices.csv"), index=False)
    with open(os.path.join(out_dir, "ingest_counters.json"), "w") as fh:
        json.dump({"dropped_out_of_session": dropped, "files": len(paths)}, fh,
                  sort_keys=True)


def cmd_featurize(config: dict, out_dir: str, seed: int, jobs: int) -> None:
    bins_path = _require(os.path.join(out_dir, "bins.csv"), "synth or ingest")
    bins = ingest_mod.read_bins_csv(bins_path)
    panel = build_features(bins)
    if config.get("featurize", {}).get("with_ofi", False):
        ofi_path = _require(os.path.join(out_dir, "ofi.csv"), "synth with emit_ofi")
        ofi_frame = pd.read_csv(ofi_path, dtype={"stock": str, "day": str})
        panel = join_ofi(panel, ofi_frame)
    panel.to_csv(os.path.join(out_dir, "features.csv"))
    panel.manifest_json(os.path.join(out_dir, "manifest.json"))


def _load_panel(out_dir: str) -> FeaturePanel:
    frame = _require(os.path.join(out_dir, "features.csv"), "featurize")
    manifest = _require(os.path.join(out_dir, "manifest.json"), "featurize")
    return FeaturePanel.from_csv(frame, manifest)


def _build_spec(config: dict, scheme: str, model: str, seed: int,
                panel: FeaturePanel) -> ts.SchemeSpec:
    section = config.get("train_eval", {})
    split = tuple(section.get("split", (20, 5, 5)))
    recipe = section.get("recipe", "both")
    mode = section.get("mode", "dynamic")
    cluster_model = None
    if scheme == "CAM":
        cl = section.get("cluster", {})
        days = sorted(panel.frame["day"].unique())
        window_days = cl.get("window_days", 10)
        train_tail = days[max(0, split[0] - window_days) : split[0]]
        slice_frame = panel.frame[panel.frame["day"].isin(train_tail)]
        stocks = sorted(panel.frame["stock"].unique())
        # the documented default of 50 groups is capped by the universe size
        default_k = min(DEFAULT_CLUSTER_K, len(stocks))
        cluster_model = build_cluster_model(
            slice_frame,
            stocks,
            k=cl.get("k", default_k),
            evr_threshold=cl.get("evr_threshold", 0.80),
            basis=cl.get("basis", "volume"),
            seed=seed,
            window=(window_days, 26),
            feature_columns=panel.feature_names(["basic", "compound"]),
            restarts=cl.get("restarts", 10),
        )
    gbt_params = None
    if "gbt" in section:
        gbt_params = gbt_mod.GbtParams(**section["gbt"])
    seq_params = None
    if "seqnet" in section:
        seq_params = seq_mod.SeqNetParams(**section["seqnet"])
    return ts.SchemeSpec(
        scheme=scheme,
        model=model,
        feature_recipe=recipe,
        mode=mode,
        split=split,
        cluster_model=cluster_model,
        seed=seed,
        lambda_grid=tuple(section.get("lambda_grid", ts.DEFAULT_LAMBDA_GRID)),
        cmem_window_days=section.get("cmem_window_days", 10),
        gbt_params=gbt_params,
        seqnet_params=seq_params,
        include_stock_identity=section.get("include_stock_identity", False),
    )


def cmd_train_eval(config: dict, out_dir: str, seed: int, jobs: int) -> None:
    panel = _load_panel(out_dir)
    outstanding = _outstanding(config)
    section = config.get("train_eval", {})
    schemes = section.get("schemes", ["SAM", "UAM"])
    models = section.get("models", ["ridge"])
    h = _config_hash(config)

    reports_dir = os.path.join(out_dir, "reports")
    os.makedirs(reports_dir, exist_ok=True)
    reports = []
    timings = {}
    for scheme in schemes:
        for model in models:
            if model == "cmem" and scheme != "SAM":
                continue  # the benchmark is univariate; one pass suffices
            spec = _build_spec(config, scheme, model, seed, panel)
            report = ts.rolling_evaluate(spec, panel, outstanding)
            name = f"{scheme}_{model}"
            payload = json.loads(report.to_json())
            payload["config_sha256"] = h
            with open(os.path.join(reports_dir, f"{name}.json"), "w") as fh:
                json.dump(payload, fh, sort_keys=True)
            report.frame().to_csv(os.path.join(reports_dir, f"{name}.csv"), index=False)
            timings[name] = report.runtime
            reports.append(report)
    table = ts.comparison_table(reports)
    table.to_csv(os.path.join(out_dir, "comparison.csv"), index=False)
    with open(os.path.join(out_dir, "timings.json"), "w") as fh:
        json.dump(timings, fh, sort_keys=True)


def cmd_backtest_vwap(config: dict, out_dir: str, seed: int, jobs: int) -> None:
    panel = _load_panel(out_dir)
    prices_path = _require(os.path.join(out_dir, "prices.csv"), "synth or ingest")
    prices = pd.read_csv(prices_path, dtype={"stock": str, "day": str})
    outstanding = _outstanding(config)
    section = config.get("vwap", {})
    model_name = section.get("model", "ridge")
    scheme = section.get("scheme", "UAM")
    mode = section.get("mode", "dynamic")
    h = _config_hash(config)
    dynamic = mode == "dynamic"

    spec = _build_spec(config, scheme if model_name != "cmem" else "SAM",
                       model_name, seed, panel)
    spec.mode = mode
    preds, model_steps = ts.collect_predictions(
        spec, panel, outstanding, with_steps=dynamic
    )
    cmem_spec = _build_spec(config, "SAM", "cmem", seed, panel)
    cmem_spec.mode = mode
    cmem_preds, cmem_steps = ts.collect_predictions(
        cmem_spec, panel, outstanding, with_steps=dynamic
    )

    rows = []
    for (stock, day), sub in preds.groupby(["stock", "day"], sort=True):
        sub = sub.sort_values("bin_index")
        psub = prices[(prices["stock"] == stock) & (prices["day"] == day)]
        if len(psub) != len(sub):
            continue
        px = psub.sort_values("bin_index")["price"].to_numpy(np.float64)
        vol = sub["volume"].to_numpy(np.float64)
        if vol.sum() <= 0:
            continue
        realized = vwap_mod.realized_vwap(px, vol)
        entry = {"stock": stock, "day": day, "realized_vwap": realized}
        csub = cmem_preds[
            (cmem_preds["stock"] == stock) & (cmem_preds["day"] == day)
        ].sort_values("bin_index")
        if dynamic:
            w_model = vwap_mod.dynamic_weights(model_steps[(stock, day)])
            w_cmem = vwap_mod.dynamic_weights(cmem_steps[(stock, day)])
        else:
            w_model = vwap_mod.static_weights(sub["pred"].to_numpy(np.float64))
            w_cmem = vwap_mod.static_weights(csub["pred"].to_numpy(np.float64))
        entry["replicated_model"] = vwap_mod.replicated_vwap(px, w_model)
        entry["replicated_cmem"] = vwap_mod.replicated_vwap(px, w_cmem)
        oracle_w = vwap_mod.static_weights(vol)
        entry["replicated_oracle"] = vwap_mod.replicated_vwap(px, oracle_w)
        rows.append(entry)
    if not rows:
        raise CliError("no overlapping (stock, day) between predictions and prices")
    detail = pd.DataFrame(rows).sort_values(["stock", "day"])
    detail.to_csv(os.path.join(out_dir, "vwap_days.csv"), index=False)

    summary_rows = []
    for stock, sub in detail.groupby("stock", sort=True):
        r = sub["realized_vwap"].to_numpy()
        for label in ("model", "cmem", "oracle"):
            te = vwap_mod.tracking_error(r, sub[f"replicated_{label}"].to_numpy())
            summary_rows.append({"stock": stock, "schedule": label, "te_bp": te})
    bars = pd.DataFrame(summary_rows)
    bars.to_csv(os.path.join(out_dir, "vwap_te_bars.csv"), index=False)
    with open(os.path.join(out_dir, "vwap_summary.json"), "w") as fh:
        json.dump(
            {
                "config_sha256": h,
                "per_schedule_mean_te_bp": {
                    label: float(bars[bars["schedule"] == label]["te_bp"].mean())
                    for label in ("model", "cmem", "oracle")
                },
            },
            fh,
            sort_keys=True,
        )


def cmd_simulate_fills(config: dict, out_dir: str, seed: int, jobs: int) -> None:
    panel = _load_panel(out_dir)
    events_dir = _require(os.path.join(out_dir, "events"), "synth with emit_events")
    outstanding = _outstanding(config)
    section = config.get("fills", {})
    h = _config_hash(config)
    session_cfg = me.SessionConfig(
        side=section.get("side", "sell"),
        parent_pct=section.get("parent_pct", 0.01),
        orders_per_step=section.get("orders_per_step", 100),
        repost=section.get("repost", "repost-on-move"),
    )

    model_name = section.get("model", "ridge")
    scheme = section.get("scheme", "UAM")
    spec = _build_spec(config, scheme if model_name != "cmem" else "SAM",
                       model_name, seed, panel)
    preds, _ = ts.collect_predictions(spec, panel, outstanding)
    cmem_spec = _build_spec(config, "SAM", "cmem", seed, panel)
    cmem_preds, _ = ts.collect_predictions(cmem_spec, panel, outstanding)

    rows = []
    for (stock, day), sub in preds.groupby(["stock", "day"], sort=True):
        path = os.path.join(events_dir, f"{stock}_{day}_messages.csv")
        if not os.path.exists(path):
            continue
        events = ingest_mod.parse_messages(path)
        sub = sub.sort_values("bin_index")
        vol = sub["volume"].to_numpy(np.float64)
        if vol.sum() <= 0:
            continue
        schedules = {
            "model": vwap_mod.static_weights(sub["pred"].to_numpy(np.float64)),
            "cmem": vwap_mod.static_weights(
                cmem_preds[(cmem_preds["stock"] == stock)
                           & (cmem_preds["day"] == day)]
                .sort_values("bin_index")["pred"]
                .to_numpy(np.float64)
            ),
            "oracle": vwap_mod.static_weights(vol),
        }
        entry = {"stock": stock, "day": day}
        for label, w in schedules.items():
            report = me.run_session(events, w, session_cfg)
            entry[f"fill_ratio_{label}"] = report.fill_ratio
            if section.get("emit_trade_logs", False):
                logs_dir = os.path.join(out_dir, "trade_logs")
                os.makedirs(logs_dir, exist_ok=True)
                report.trade_log_csv(
                    os.path.join(logs_dir, f"{stock}_{day}_{label}.csv")
                )
        for label in ("model", "oracle"):
            if entry["fill_ratio_cmem"] > 0:
                entry[f"advantage_{label}"] = (
                    entry[f"fill_ratio_{label}"] - entry["fill_ratio_cmem"]
                ) / entry["fill_ratio_cmem"]
        rows.append(entry)
    if not rows:
        raise CliError("no event files matched the prediction days")
    detail = pd.DataFrame(rows).sort_values(["stock", "day"])
    detail.to_csv(os.path.join(out_dir, "fill_ratios.csv"), index=False)
    adv = {
        label: float(detail[f"advantage_{label}"].mean())
        for label in ("model", "oracle")
        if f"advantage_{label}" in detail
    }
    with open(os.path.join(out_dir, "fill_summary.json"), "w") as fh:
        json.dump({"config_sha256": h, "mean_advantage": adv}, fh, sort_keys=True)


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "train-eval": cmd_train_eval,
    "backtest-vwap": cmd_backtest_vwap,
    "simulate-fills": cmd_simulate_fills,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="volcast",
        description="Intraday volume forecasting and execution backtests",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--out", default=None, help="override config out_dir")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)

    try:
        config = _load_config(args.config)
        seed = args.seed if args.seed is not None else config.get("seed")
        if seed is None:
            raise CliError("seed is mandatory (config 'seed' or --seed)")
        out_dir = args.out or config.get("out_dir")
        if not out_dir:
            raise CliError("output directory required (config 'out_dir' or --out)")
        config["seed"] = int(seed)
        config["out_dir"] = out_dir
        os.makedirs(out_dir, exist_ok=True)
        _echo(config, out_dir, args.command)
        t0 = time.perf_counter()
        COMMANDS[args.command](config, out_dir, int(seed), args.jobs)
        print(f"{args.command}: done in {time.perf_counter() - t0:.1f}s -> {out_dir}")
        return 0
    except (CliError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
