import numpy as np
import pandas as pd
import pytest

from volcast import gbt as gbt_mod
from volcast import training_schemes as ts
from volcast.clustering import build_cluster_model
from volcast.features import build_features
from volcast.synth_market import SynthConfig, generate_bin_panel, generate_volume_panel


@pytest.fixture(scope="module")
def scheme_setup():
    cfg = SynthConfig(
        n_stocks=4, n_days=20, seed=77, common_factor_loading=0.5, noise_shape=40.0
    )
    panel, _ = generate_volume_panel(cfg)
    bins = generate_bin_panel(cfg, panel)
    feats = build_features(bins)
    return cfg, feats


def _spec(**kw):
    base = dict(
        scheme="SAM",
        model="ridge",
        feature_recipe="auxiliary",
        mode="dynamic",
        split=(12, 3, 4),
        seed=0,
    )
    base.update(kw)
    return ts.SchemeSpec(**base)


class TestSpecValidation:
    def test_cam_requires_cluster(self):
        with pytest.raises(ts.SchemeError, match="cluster"):
            _spec(scheme="CAM").validate()

    def test_bad_names(self):
        with pytest.raises(ts.SchemeError):
            _spec(scheme="XYZ").validate()
        with pytest.raises(ts.SchemeError):
            _spec(model="svm").validate()
        with pytest.raises(ts.SchemeError):
            _spec(feature_recipe="everything").validate()

    def test_recipe_counts(self):
        assert ts.RECIPES["cmem_components"] == 7
        assert ts.RECIPES["auxiliary"] == 47
        assert ts.RECIPES["both"] == 54


class TestAssembleDesign:
    def test_uam_row_count(self, scheme_setup):
        cfg, feats = scheme_setup
        spec = _spec(scheme="UAM")
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        (group,) = ts.assemble_design(spec, data)
        n_days = sum(spec.split)
        assert len(group.rows) == cfg.n_stocks * n_days * 26

    def test_sam_one_group_per_stock(self, scheme_setup):
        cfg, feats = scheme_setup
        spec = _spec(scheme="SAM")
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        groups = ts.assemble_design(spec, data)
        assert [g.name for g in groups] == sorted(feats.frame["stock"].unique())

    def test_cam_cluster_mean_matches_bruteforce(self, scheme_setup):
        cfg, feats = scheme_setup
        stocks = sorted(feats.frame["stock"].unique())
        cm = build_cluster_model(feats.frame, stocks, k=2, seed=1)
        spec = _spec(scheme="CAM", cluster_model=cm)
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        groups = ts.assemble_design(spec, data)
        group = max(groups, key=lambda g: len(g.rows))
        members = sorted(group.rows["stock"].unique())
        col = "nrTrades"
        sample = group.rows.head(120)
        for _, row in sample.iterrows():
            mask = (
                data.frame["stock"].isin(members)
                & (data.frame["day"] == row["day"])
                & (data.frame["bin_index"] == row["bin_index"])
            )
            expected = data.frame.loc[mask, col].mean()
            assert row[f"cm_{col}"] == pytest.approx(expected, rel=1e-12)

    def test_cam_singleton_cluster_duplicates_own_columns(self, scheme_setup):
        cfg, feats = scheme_setup
        stocks = sorted(feats.frame["stock"].unique())
        assignments = {s: (0 if i == 0 else 1) for i, s in enumerate(stocks)}
        cm = build_cluster_model(feats.frame, stocks, k=2, seed=1)
        cm.assignments = assignments
        spec = _spec(scheme="CAM", cluster_model=cm)
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        groups = ts.assemble_design(spec, data)
        singleton = [g for g in groups if g.rows["stock"].nunique() == 1][0]
        for col in ("nrTrades", "ntn_8"):
            np.testing.assert_allclose(
                singleton.rows[f"cm_{col}"], singleton.rows[col], rtol=1e-12
            )

    def test_cam_k1_augments_with_universe_mean(self, scheme_setup):
        cfg, feats = scheme_setup
        stocks = sorted(feats.frame["stock"].unique())
        cm = build_cluster_model(feats.frame, stocks, k=1, seed=3)
        spec = _spec(scheme="CAM", cluster_model=cm)
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        (group,) = ts.assemble_design(spec, data)
        universe = (
            data.frame.groupby(["day", "bin_index"])["nrTrades"].mean().rename("m")
        )
        merged = group.rows.merge(universe, on=["day", "bin_index"], how="left")
        np.testing.assert_allclose(merged["cm_nrTrades"], merged["m"], rtol=1e-12)

    def test_cam_k_equals_n_collapses_to_own_columns(self, scheme_setup):
        cfg, feats = scheme_setup
        stocks = sorted(feats.frame["stock"].unique())
        cm = build_cluster_model(feats.frame, stocks, k=len(stocks), seed=2)
        spec = _spec(scheme="CAM", cluster_model=cm)
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        for group in ts.assemble_design(spec, data):
            np.testing.assert_allclose(
                group.rows["cm_volBuyQty"], group.rows["volBuyQty"], rtol=1e-12
            )

    def test_missing_cluster_assignment_errors(self, scheme_setup):
        cfg, feats = scheme_setup
        stocks = sorted(feats.frame["stock"].unique())
        cm = build_cluster_model(feats.frame, stocks, k=2, seed=1)
        del cm.assignments[stocks[0]]
        spec = _spec(scheme="CAM", cluster_model=cm)
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        with pytest.raises(ts.SchemeError, match="no cluster assignment"):
            ts.assemble_design(spec, data)


class TestScoring:
    def test_perfect_forecast_r2_one(self):
        frame = pd.DataFrame(
            {
                "day": ["d1"] * 4 + ["d2"] * 4,
                "volume": [1.0, 2.0, 3.0, 4.0] * 2,
                "pred": [1.0, 2.0, 3.0, 4.0] * 2,
            }
        )
        r2, skipped = ts.pooled_daily_r2(frame)
        assert r2 == {"d1": 1.0, "d2": 1.0}
        assert skipped == []

    def test_day_mean_forecast_r2_zero(self):
        frame = pd.DataFrame(
            {"day": ["d1"] * 4, "volume": [1.0, 2.0, 3.0, 4.0], "pred": [2.5] * 4}
        )
        r2, _ = ts.pooled_daily_r2(frame)
        assert r2["d1"] == pytest.approx(0.0)

    def test_constant_day_skipped_with_warning(self):
        frame = pd.DataFrame(
            {"day": ["d1"] * 3, "volume": [2.0, 2.0, 2.0], "pred": [2.0, 2.0, 2.0]}
        )
        with pytest.warns(UserWarning, match="skipped"):
            r2, skipped = ts.pooled_daily_r2(frame)
        assert skipped == ["d1"]
        assert r2 == {}

    def test_report_mean_matches_exactly(self):
        rep = ts.EvaluationReport(
            scheme="SAM", model="ridge", recipe="both", mode="dynamic",
            r2_by_day={"a": 0.25, "b": 0.5, "c": 0.75},
        )
        assert rep.mean == np.mean([0.25, 0.5, 0.75])
        assert rep.std == np.std([0.25, 0.5, 0.75])


class TestRollingEvaluate:
    def test_uam_on_single_stock_equals_sam(self, scheme_setup):
        cfg, feats = scheme_setup
        one = feats.frame[feats.frame["stock"] == "SYN00"].copy()
        panel_one = type(feats)(one, feats.manifest, 0)
        rep_sam = ts.rolling_evaluate(_spec(scheme="SAM"), panel_one, cfg.outstanding_shares)
        rep_uam = ts.rolling_evaluate(_spec(scheme="UAM"), panel_one, cfg.outstanding_shares)
        assert rep_sam.r2_by_day == rep_uam.r2_by_day

    def test_static_mode_ignores_test_day_inputs(self, scheme_setup):
        cfg, feats = scheme_setup
        spec = _spec(mode="static", model="ridge")
        base = ts.collect_predictions(spec, feats, cfg.outstanding_shares)[0]

        days = sorted(feats.frame["day"].unique())
        test_days = days[sum(spec.split[:2]) :][: spec.split[2]]
        mutated = feats.frame.copy()
        is_test = mutated["day"].isin(test_days)
        lag_cols = [c.name for c in feats.manifest if c.kind in ("basic", "compound")]
        keep_first = is_test & (mutated["bin_index"] > 0)
        mutated.loc[keep_first, lag_cols] *= 7.7
        mutated_panel = type(feats)(mutated, feats.manifest, 0)
        after = ts.collect_predictions(spec, mutated_panel, cfg.outstanding_shares)[0]
        np.testing.assert_allclose(
            base["pred"].to_numpy(), after["pred"].to_numpy(), rtol=1e-10
        )

    def test_gbt_and_cmem_run(self, scheme_setup):
        cfg, feats = scheme_setup
        rep = ts.rolling_evaluate(
            _spec(model="gbt", scheme="UAM",
                  gbt_params=gbt_mod.GbtParams(n_rounds=20, max_depth=3)),
            feats,
            cfg.outstanding_shares,
        )
        assert len(rep.r2_by_day) == 4
        rep2 = ts.rolling_evaluate(
            _spec(model="cmem", feature_recipe="cmem_components"),
            feats,
            cfg.outstanding_shares,
        )
        assert len(rep2.r2_by_day) == 4
        assert rep2.mean > 0.0

    def test_seqnet_scheme_end_to_end(self, scheme_setup):
        from volcast import seqnet as sn

        cfg, feats = scheme_setup
        spec = _spec(
            scheme="UAM",
            model="seqnet",
            seqnet_params=sn.SeqNetParams(
                input_window=6, mlp_widths=(8,), hidden=6, batch_size=128,
                max_epochs=8, patience=8, seed=3,
            ),
        )
        rep = ts.rolling_evaluate(spec, feats, cfg.outstanding_shares)
        assert len(rep.r2_by_day) == 4
        assert all(np.isfinite(v) for v in rep.r2_by_day.values())

    def test_comparison_table_layout(self, scheme_setup):
        cfg, feats = scheme_setup
        reports = [
            ts.rolling_evaluate(_spec(model="ridge"), feats, cfg.outstanding_shares),
            ts.rolling_evaluate(
                _spec(model="cmem", feature_recipe="cmem_components"),
                feats,
                cfg.outstanding_shares,
            ),
        ]
        table = ts.comparison_table(reports)
        assert list(table.columns) == ["Predictors", "Model", "Features", "Num", "Mean", "Std"]
        assert table.iloc[1]["Predictors"] == "Benchmark"

    def test_insufficient_days_error(self, scheme_setup):
        cfg, feats = scheme_setup
        with pytest.raises(ts.SchemeError, match="usable days"):
            ts.rolling_evaluate(_spec(split=(50, 5, 5)), feats, cfg.outstanding_shares)


class TestStockIdentity:
    def test_uam_optionally_carries_stock_dummies(self, scheme_setup):
        cfg, feats = scheme_setup
        spec = _spec(scheme="UAM", include_stock_identity=True)
        data = ts.prepare_model_data(feats, spec, cfg.outstanding_shares)
        (group,) = ts.assemble_design(spec, data)
        _, names = ts.encode_design(
            group.rows, data.feature_cols, group.extra_numeric, "ridge",
            stock_identity=True,
        )
        assert any(n.startswith("stock_") for n in names)
        _, names_gbt = ts.encode_design(
            group.rows, data.feature_cols, group.extra_numeric, "gbt",
            stock_identity=True,
        )
        assert "stock_id" in names_gbt
        rep = ts.rolling_evaluate(spec, feats, cfg.outstanding_shares)
        assert len(rep.r2_by_day) == 4


class TestStepMatrices:
    def test_diag_matches_dynamic_predictions(self, scheme_setup):
        cfg, feats = scheme_setup
        spec = _spec(model="ridge", scheme="UAM")
        preds, steps = ts.collect_predictions(
            spec, feats, cfg.outstanding_shares, with_steps=True
        )
        for (stock, day), F in list(steps.items())[:2]:
            sub = preds[(preds["stock"] == stock) & (preds["day"] == day)]
            got = sub.sort_values("bin_index")["pred"].to_numpy()
            np.testing.assert_allclose(np.diag(F), got, rtol=1e-10)

    def test_cmem_steps_shape(self, scheme_setup):
        cfg, feats = scheme_setup
        spec = _spec(model="cmem", feature_recipe="cmem_components")
        preds, steps = ts.collect_predictions(
            spec, feats, cfg.outstanding_shares, with_steps=True
        )
        F = next(iter(steps.values()))
        assert F.shape == (26, 26)
        assert (F > 0).all()


class TestFeatureImportance:
    def test_ols_single_informative_ranks_first(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((300, 11))
        y = 2.5 * X[:, 6] + 0.3 * rng.standard_normal(300)
        from volcast import linear_models as lin

        fit = lin.fit_ols(X, y, names=[f"f{j}" for j in range(11)])
        spec = _spec(model="ols")
        ranked = ts.feature_importance(spec, ts._FittedGroup("ols", fit, fit.names))
        assert ranked[0][0] == "f6"
        # oracle: refit without the feature and compare fit quality
        fit_without = lin.fit_ols(np.delete(X, 6, axis=1), y)
        r_with = lin.r_squared(y, lin.predict(fit, X))
        r_without = lin.r_squared(
            y, lin.predict(fit_without, np.delete(X, 6, axis=1))
        )
        assert r_with - r_without > 0.5

    def test_all_zero_lasso_empty_ranking(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((60, 4))
        y = rng.standard_normal(60)
        from volcast import linear_models as lin

        lam = lin.lasso_lambda_max(X, y) * 2
        fit = lin.fit_lasso(X, y, lam)
        ranked = ts.feature_importance(
            _spec(model="lasso"), ts._FittedGroup("lasso", fit, fit.names)
        )
        assert ranked == []

    def test_gbt_ranking_delegates_to_split_counts(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((150, 5))
        y = X[:, 1] + 0.2 * rng.standard_normal(150)
        ens = gbt_mod.fit_gbt(X, y, gbt_mod.GbtParams(n_rounds=8, max_depth=2),
                              feature_names=[f"g{j}" for j in range(5)])
        ranked = ts.feature_importance(
            _spec(model="gbt"), ts._FittedGroup("gbt", ens, ens.feature_names)
        )
        counts = gbt_mod.gbt_importance(ens)
        assert ranked[0][0] == f"g{int(np.argmax(counts))}"
        assert ranked[0][1] == counts.max()

    def test_seqnet_permutation_importance(self):
        from volcast import seqnet as sn

        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, (64, 4, 3))
        y = 3.0 * X[:, -1, 0] + 0.05 * rng.standard_normal(64)
        hp = sn.SeqNetParams(input_window=4, mlp_widths=(16,), hidden=8,
                             max_epochs=200, patience=200, learning_rate=1e-2,
                             val_fraction=0.0, seed=4)
        net, _ = sn.fit_seqnet(X, y, hp)
        ranked = ts.feature_importance(
            _spec(model="seqnet"),
            ts._FittedGroup("seqnet", net, ["a", "b", "c"]),
            data=(X, y),
        )
        assert ranked[0][0] == "a"
        assert ranked[0][1] > 0
