import pytest

from volcast.features import build_features
from volcast.synth_market import SynthConfig, generate_bin_panel, generate_volume_panel


@pytest.fixture(scope="session")
def small_config():
    return SynthConfig(n_stocks=3, n_days=14, seed=2024, common_factor_loading=0.3)


@pytest.fixture(scope="session")
def small_panel(small_config):
    panel, truth = generate_volume_panel(small_config)
    return panel, truth


@pytest.fixture(scope="session")
def small_bins(small_config, small_panel):
    panel, _ = small_panel
    return generate_bin_panel(small_config, panel)


@pytest.fixture(scope="session")
def small_features(small_bins):
    return build_features(small_bins)
