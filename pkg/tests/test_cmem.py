import numpy as np
import pytest

from volcast import cmem
from volcast.synth_market import SynthConfig, generate_volume_panel


def _synth_turnover(seed, n_days=60, **kw):
    cfg = SynthConfig(
        n_stocks=1,
        n_days=n_days,
        seed=seed,
        common_factor_loading=0.0,
        **kw,
    )
    _, truth = generate_volume_panel(cfg)
    return truth


class TestFit:
    def test_degenerate_recovery(self):
        x = np.full((8, 26), 3.2e-5)
        fit = cmem.fit(x)
        np.testing.assert_allclose(fit.seasonal, 1.0, atol=1e-6)
        pred = cmem.forecast(fit, x, mode="static")
        np.testing.assert_allclose(pred, 3.2e-5, rtol=1e-6)

    def test_component_recovery_on_synthetic_panel(self):
        errs, seas = [], []
        for seed in range(300, 310):
            truth = _synth_turnover(seed, mem_alpha=0.25, mem_beta=0.55)
            fit = cmem.fit(truth.turnover[0])
            _, am, bm = fit.intra_params
            errs.append(max(abs(am - 0.25), abs(bm - 0.55)))
            seas.append(
                np.sqrt(((fit.seasonal - truth.seasonal) ** 2).mean())
                / truth.seasonal.mean()
            )
        assert np.median(errs) < 0.1
        assert np.median(seas) < 0.05

    def test_scale_equivariance(self):
        # c in {0.5, 2} rescales floats exactly; c=10 rounds the input, and
        # that 1e-16 perturbation propagates through the optimizer, so the
        # comparison allows a small relative tolerance
        truth = _synth_turnover(17, n_days=30)
        x = truth.turnover[0]
        base = cmem.fit(x)
        for c in (0.5, 2.0):  # float-exact rescalings reproduce the fit exactly
            scaled = cmem.fit(c * x)
            np.testing.assert_array_equal(scaled.eta_path, c * base.eta_path)
            np.testing.assert_array_equal(scaled.seasonal, base.seasonal)
            assert scaled.intra_params == base.intra_params
        scaled = cmem.fit(10.0 * x)  # 10x rounds the input; allow optimizer noise
        np.testing.assert_allclose(scaled.eta_path, 10.0 * base.eta_path, rtol=1e-4)
        np.testing.assert_allclose(scaled.seasonal, base.seasonal, atol=1e-4)
        np.testing.assert_allclose(scaled.intra_params, base.intra_params, atol=1e-4)

    def test_identification_geomean_one(self):
        truth = _synth_turnover(23, n_days=30)
        fit = cmem.fit(truth.turnover[0])
        assert abs(np.log(fit.seasonal).sum()) < 1e-8

    def test_insample_residual_mean_is_one(self):
        truth = _synth_turnover(29, n_days=40)
        x = truth.turnover[0]
        fit = cmem.fit(x)
        eps = np.maximum(x, fit.floor_value) / (
            fit.eta_path[:, None] * fit.seasonal[None, :] * fit.mu_path
        )
        assert abs(eps.mean() - 1.0) < 1e-3

    def test_mu_path_mean_near_one(self):
        truth = _synth_turnover(31, n_days=40)
        fit = cmem.fit(truth.turnover[0])
        assert abs(fit.mu_path.mean() - 1.0) < 0.02

    def test_too_few_days(self):
        with pytest.raises(cmem.CmemError, match="2 training days"):
            cmem.fit(np.ones((1, 26)))

    def test_zero_bins_floored(self):
        truth = _synth_turnover(37, n_days=20)
        x = truth.turnover[0].copy()
        x[3, 5] = 0.0
        fit = cmem.fit(x)
        assert fit.floor_value > 0
        assert np.isfinite(fit.eta_path).all()

    def test_json_roundtrip(self, tmp_path):
        truth = _synth_turnover(41, n_days=15)
        fit = cmem.fit(truth.turnover[0])
        text = fit.to_json(tmp_path / "fit.json")
        back = cmem.CmemFit.from_json(text)
        np.testing.assert_allclose(back.seasonal, fit.seasonal)
        assert back.intra_params == pytest.approx(fit.intra_params)
        assert back.converged == fit.converged


class TestForecast:
    def test_static_equals_dynamic_without_dynamics(self):
        x = np.full((10, 26), 5e-5) * np.linspace(0.9, 1.1, 26)[None, :]
        fit = cmem.fit(x)
        if fit.intra_params[1] + fit.intra_params[2] > 1e-3:
            fit = cmem.CmemFit(
                seasonal=fit.seasonal,
                daily_params=fit.daily_params,
                intra_params=(1.0, 0.0, 0.0),
                eta_path=fit.eta_path,
                mu_path=fit.mu_path,
                scale_convention=fit.scale_convention,
                converged=True,
                n_alternations=fit.n_alternations,
                floor_value=fit.floor_value,
            )
        stat = cmem.forecast(fit, x, mode="static")
        dyn = cmem.forecast(fit, x, mode="dynamic", realized_next=x[-1])
        np.testing.assert_allclose(stat, dyn, rtol=1e-12)

    def test_dynamic_on_static_path_reproduces_static(self):
        truth = _synth_turnover(43, n_days=30)
        x = truth.turnover[0]
        fit = cmem.fit(x)
        stat = cmem.forecast(fit, x, mode="static")
        dyn = cmem.forecast(fit, x, mode="dynamic", realized_next=stat)
        np.testing.assert_allclose(dyn, stat, rtol=1e-10)

    def test_invalid_mode(self):
        truth = _synth_turnover(47, n_days=10)
        fit = cmem.fit(truth.turnover[0])
        with pytest.raises(cmem.CmemError, match="mode"):
            cmem.forecast(fit, truth.turnover[0], mode="sideways")

    def test_static_ignores_next_day_data(self):
        truth = _synth_turnover(53, n_days=30)
        x = truth.turnover[0]
        fit = cmem.fit(x[:20])
        f1 = cmem.forecast(fit, x[:20], mode="static")
        f2 = cmem.forecast(fit, x[:20], mode="static", realized_next=x[20] * 100)
        np.testing.assert_array_equal(f1, f2)

    def test_dynamic_beats_static_out_of_sample(self):
        wins = 0
        for seed in range(500, 510):
            truth = _synth_turnover(seed, n_days=40, mem_alpha=0.3, mem_beta=0.5)
            x = truth.turnover[0]
            r2 = {}
            for mode in ("static", "dynamic"):
                sse, sst = 0.0, 0.0
                for t in range(30, 40):
                    fit = cmem.fit(x[t - 10 : t])
                    pred = cmem.forecast(
                        fit,
                        x[t - 10 : t],
                        mode=mode,
                        realized_next=x[t] if mode == "dynamic" else None,
                    )
                    sse += ((x[t] - pred) ** 2).sum()
                    sst += ((x[t] - x[t].mean()) ** 2).sum()
                r2[mode] = 1 - sse / sst
            if r2["dynamic"] >= r2["static"]:
                wins += 1
        assert wins >= 8

    def test_forecast_steps_consistency(self):
        truth = _synth_turnover(59, n_days=30)
        x = truth.turnover[0]
        fit = cmem.fit(x[:20])
        hist = x[:20]
        F = cmem.forecast_steps(fit, hist, x[20])
        stat = cmem.forecast(fit, hist, mode="static")
        dyn = cmem.forecast(fit, hist, mode="dynamic", realized_next=x[20])
        np.testing.assert_allclose(F[0], stat, rtol=1e-12)
        np.testing.assert_allclose(np.diag(F), dyn, rtol=1e-12)


class TestComponents:
    def test_seven_columns_and_identity(self):
        truth = _synth_turnover(61, n_days=20)
        fit = cmem.fit(truth.turnover[0])
        comps = cmem.insample_components(fit)
        assert sorted(comps) == sorted(cmem.CMEM_FEATURES)
        np.testing.assert_allclose(
            comps["x"], comps["eta"] * comps["seas"] * comps["mu"], rtol=1e-12
        )
        np.testing.assert_allclose(comps["eta_seas"], comps["eta"] * comps["seas"])
        np.testing.assert_allclose(comps["seas_mu"], comps["seas"] * comps["mu"])
        np.testing.assert_allclose(comps["eta_mu"], comps["eta"] * comps["mu"])

    def test_unit_components(self):
        vals = {"eta": 2.0, "seas": 0.5, "mu": 1.0}
        x = vals["eta"] * vals["seas"] * vals["mu"]
        assert x == 1.0
        assert vals["eta"] * vals["seas"] == 1.0
        assert vals["seas"] * vals["mu"] == 0.5
        assert vals["eta"] * vals["mu"] == 2.0

    def test_forecast_components_match_forecast(self):
        truth = _synth_turnover(67, n_days=25)
        x = truth.turnover[0]
        fit = cmem.fit(x[:20])
        for mode in ("static", "dynamic"):
            comps = cmem.forecast_components(
                fit, x[:20], mode=mode,
                realized_next=x[20] if mode == "dynamic" else None,
            )
            pred = cmem.forecast(
                fit, x[:20], mode=mode,
                realized_next=x[20] if mode == "dynamic" else None,
            )
            np.testing.assert_allclose(comps["x"], pred, rtol=1e-12)
