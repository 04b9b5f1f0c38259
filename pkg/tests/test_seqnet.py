import numpy as np
import pytest

from volcast import seqnet as sn


def _toy_data(n=48, window=5, features=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, (n, window, features))
    y = X[:, -1, 0] * 2.0 + X[:, :, 1].mean(axis=1) + 0.05 * rng.standard_normal(n)
    return X, y


class TestGradients:
    def test_gradient_check_small_net(self):
        hp = sn.SeqNetParams(input_window=4, mlp_widths=(8,), hidden=6, seed=3)
        net = sn.SequenceNet(3, hp)
        X, y = _toy_data(n=12, window=4, features=3, seed=1)
        err = sn.seqnet_grad_check(net, X, y, n_samples=64, step=1e-5)
        assert err < 1e-4

    def test_gradient_check_default_blocks(self):
        hp = sn.SeqNetParams(input_window=6, mlp_widths=(16, 8), hidden=8, seed=5)
        net = sn.SequenceNet(4, hp)
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, (10, 6, 4))
        y = rng.standard_normal(10)
        err = sn.seqnet_grad_check(net, X, y, n_samples=96, step=1e-5)
        assert err < 1e-4


class TestForward:
    def test_zero_weight_net_outputs_bias(self):
        hp = sn.SeqNetParams(input_window=4, mlp_widths=(8,), hidden=6, seed=0)
        net = sn.SequenceNet(3, hp)
        for name in net.tensors:
            if name != "head_b":
                net.tensors[name][:] = 0.0
        net.tensors["head_b"][0] = 0.73
        X, _ = _toy_data(n=7, window=4, features=3)
        np.testing.assert_allclose(net.predict(X), 0.73)

    def test_parameter_count_logged(self):
        hp = sn.SeqNetParams(input_window=4, mlp_widths=(8,), hidden=6)
        net = sn.SequenceNet(3, hp)
        manual = sum(v.size for v in net.tensors.values())
        assert net.n_parameters == manual


class TestTraining:
    def test_memorizes_small_dataset(self):
        X, y = _toy_data(n=32, window=4, features=3, seed=7)
        hp = sn.SeqNetParams(
            input_window=4,
            mlp_widths=(32,),
            hidden=16,
            batch_size=32,
            learning_rate=1e-2,
            max_epochs=5000,
            patience=5000,
            val_fraction=0.0,
            seed=11,
        )
        net, history = sn.fit_seqnet(X, y, hp)
        assert history["train_loss"][-1] < 1e-3 or min(history["train_loss"]) < 1e-3

    def test_early_stopping_restores_best_epoch(self):
        X, y = _toy_data(n=60, window=5, features=3, seed=9)
        hp = sn.SeqNetParams(
            input_window=5, mlp_widths=(8,), hidden=6, batch_size=16,
            learning_rate=5e-3, max_epochs=60, patience=6, seed=1,
        )
        net, history = sn.fit_seqnet(X, y, hp)
        best = history["best_epoch"]
        assert best >= 0
        assert history["val_loss"][best] == min(history["val_loss"])

    def test_deterministic_given_seed(self):
        X, y = _toy_data(n=40, window=4, features=2, seed=3)
        hp = sn.SeqNetParams(input_window=4, mlp_widths=(8,), hidden=4,
                             max_epochs=10, seed=21)
        net1, h1 = sn.fit_seqnet(X, y, hp)
        net2, h2 = sn.fit_seqnet(X, y, hp)
        assert h1["train_loss"] == h2["train_loss"]
        for k in net1.tensors:
            np.testing.assert_array_equal(net1.tensors[k], net2.tensors[k])

    def test_divergence_aborts_with_checkpoint(self):
        X, y = _toy_data(n=30, window=4, features=2, seed=5)
        y = y + 1e200  # squared error overflows float64 immediately
        hp = sn.SeqNetParams(input_window=4, mlp_widths=(8,), hidden=4,
                             max_epochs=10, seed=2, val_fraction=0.0)
        with pytest.raises(sn.TrainingDiverged) as exc:
            sn.fit_seqnet(X, y, hp)
        assert isinstance(exc.value.checkpoint, sn.SequenceNet)


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path):
        hp = sn.SeqNetParams(input_window=4, mlp_widths=(8, 4), hidden=5, seed=13)
        net = sn.SequenceNet(3, hp)
        X, _ = _toy_data(n=6, window=4, features=3)
        path = tmp_path / "net.bin"
        net.save(path)
        back = sn.SequenceNet.load(path)
        np.testing.assert_array_equal(back.predict(X), net.predict(X))
        assert back.hp == net.hp
