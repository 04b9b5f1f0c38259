import filecmp
import json
import os

from volcast import cli


def _config(out_dir, **overrides):
    cfg = {
        "seed": 5,
        "out_dir": str(out_dir),
        "synth": {
            "n_stocks": 2,
            "n_days": 14,
            "noise_shape": 40.0,
            "common_factor_loading": 0.4,
            "emit_events": True,
        },
        "train_eval": {
            "schemes": ["SAM", "UAM"],
            "models": ["ridge"],
            "recipe": "auxiliary",
            "mode": "dynamic",
            "split": [8, 2, 3],
        },
        "vwap": {"model": "ridge", "scheme": "UAM", "mode": "static"},
        "fills": {
            "model": "ridge",
            "scheme": "UAM",
            "parent_pct": 0.01,
            "orders_per_step": 25,
        },
    }
    cfg.update(overrides)
    return cfg


def _write(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return str(path)


def _run(command, cfg_path, **kw):
    args = [command, "--config", cfg_path]
    for flag, val in kw.items():
        args.extend([f"--{flag}", str(val)])
    return cli.main(args)


class TestPipeline:
    def test_full_pipeline_and_artifacts(self, tmp_path):
        out = tmp_path / "run"
        cfg_path = _write(_config(out), tmp_path / "cfg.json")
        assert _run("synth", cfg_path) == 0
        assert _run("featurize", cfg_path) == 0
        assert _run("train-eval", cfg_path) == 0
        assert _run("backtest-vwap", cfg_path) == 0
        assert _run("simulate-fills", cfg_path) == 0
        for artifact in (
            "bins.csv",
            "panel.csv",
            "prices.csv",
            "features.csv",
            "manifest.json",
            "comparison.csv",
            "reports/SAM_ridge.json",
            "reports/UAM_ridge.json",
            "vwap_days.csv",
            "vwap_te_bars.csv",
            "vwap_summary.json",
            "fill_ratios.csv",
            "fill_summary.json",
        ):
            assert (out / artifact).exists(), artifact
        report = json.loads((out / "reports" / "UAM_ridge.json").read_text())
        assert "config_sha256" in report
        assert len(report["r2_by_day"]) == 3

    def test_missing_upstream_artifact_is_actionable(self, tmp_path, capsys):
        out = tmp_path / "run"
        cfg_path = _write(_config(out), tmp_path / "cfg.json")
        rc = _run("featurize", cfg_path)
        assert rc == 2
        err = capsys.readouterr().err
        assert "bins.csv" in err and "synth or ingest" in err

    def test_seed_is_mandatory(self, tmp_path, capsys):
        cfg = _config(tmp_path / "run")
        del cfg["seed"]
        cfg_path = _write(cfg, tmp_path / "cfg.json")
        assert _run("synth", cfg_path) == 2
        assert "seed" in capsys.readouterr().err

    def test_ingest_roundtrip_on_emitted_events(self, tmp_path):
        out = tmp_path / "run"
        cfg_path = _write(_config(out), tmp_path / "cfg.json")
        assert _run("synth", cfg_path) == 0
        import pandas as pd

        bins_synth = pd.read_csv(out / "bins.csv")
        assert _run("ingest", cfg_path) == 0  # overwrites bins.csv from events
        bins_ingest = pd.read_csv(out / "bins.csv")
        merged = bins_synth.merge(
            bins_ingest, on=["stock", "day", "bin_index"], suffixes=("_a", "_b")
        )
        assert (merged["volume_a"] == merged["volume_b"]).all()


class TestDeterminism:
    def test_rerun_is_byte_identical(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            cfg_path = _write(_config(out), tmp_path / f"cfg_{tag}.json")
            for command in ("synth", "featurize", "train-eval"):
                assert _run(command, cfg_path) == 0
            outs.append(out)

        skip = {"timings.json"}  # wall-clock; excluded from the guarantee
        compared = []
        for root, _, files in os.walk(outs[0]):
            rel = os.path.relpath(root, outs[0])
            for name in files:
                if name in skip:
                    continue
                a = os.path.join(root, name)
                b = os.path.join(outs[1], rel, name)
                compared.append(name)
                if name.endswith("_config_echo.json"):
                    # echoes embed the out_dir path; compare all other keys
                    pa = json.load(open(a))
                    pb = json.load(open(b))
                    pa["config"].pop("out_dir")
                    pb["config"].pop("out_dir")
                    assert pa["command"] == pb["command"]
                    assert pa["config"] == pb["config"]
                else:
                    assert filecmp.cmp(a, b, shallow=False), name
        assert "comparison.csv" in compared
