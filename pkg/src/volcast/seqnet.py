"""Small sequence network for next-bin volume: shared MLP + one LSTM layer.

The per-timestep MLP (tanh layers) embeds each bin's feature vector, a
single LSTM runs over the lookback window, and a linear head maps the
final hidden state to the scalar prediction.  Everything is float64
numpy with hand-written backprop so gradients can be checked against
central finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np


@dataclass
class SeqNetParams:
    input_window: int = 26
    mlp_widths: tuple = (64, 32)
    hidden: int = 32
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10
    val_fraction: float = 0.15
    seed: int = 0


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class SequenceNet:
    """Parameter container with forward, loss, and gradient evaluation."""

    def __init__(self, n_features: int, params: Optional[SeqNetParams] = None):
        self.hp = params or SeqNetParams()
        self.n_features = n_features
        rng = np.random.default_rng(self.hp.seed)
        self.tensors = {}
        d_in = n_features
        for li, width in enumerate(self.hp.mlp_widths):
            self.tensors[f"mlp{li}_W"] = self._init(rng, d_in, width)
            self.tensors[f"mlp{li}_b"] = np.zeros(width)
            d_in = width
        H = self.hp.hidden
        self.tensors["lstm_Wx"] = self._init(rng, d_in, 4 * H)
        self.tensors["lstm_Wh"] = self._init(rng, H, 4 * H)
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0  # forget-gate bias opens the memory path at init
        self.tensors["lstm_b"] = b
        self.tensors["head_w"] = self._init(rng, H, 1).ravel()
        self.tensors["head_b"] = np.zeros(1)

    @staticmethod
    def _init(rng, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_in, fan_out))

    @property
    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    # ---------------- forward ----------------

    def _forward(self, X):
        """X is (B, W, F); returns predictions and the cache for backprop."""
        B, W, F = X.shape
        cache = {"X": X, "mlp": []}
        h = X.reshape(B * W, F)
        for li in range(len(self.hp.mlp_widths)):
            Wm = self.tensors[f"mlp{li}_W"]
            bm = self.tensors[f"mlp{li}_b"]
            out = np.tanh(h @ Wm + bm)
            cache["mlp"].append((h, out))
            h = out
        d = h.shape[1]
        seq = h.reshape(B, W, d)
        H = self.hp.hidden
        Wx = self.tensors["lstm_Wx"]
        Wh = self.tensors["lstm_Wh"]
        b = self.tensors["lstm_b"]
        h_t = np.zeros((B, H))
        c_t = np.zeros((B, H))
        steps = []
        for t in range(W):
            x_t = seq[:, t, :]
            z = x_t @ Wx + h_t @ Wh + b
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = _sigmoid(z[:, 3 * H :])
            c_new = f * c_t + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            steps.append((x_t, h_t, c_t, i, f, g, o, c_new, tanh_c))
            h_t, c_t = h_new, c_new
        cache["seq_shape"] = (B, W, d)
        cache["steps"] = steps
        cache["h_last"] = h_t
        y_hat = h_t @ self.tensors["head_w"] + self.tensors["head_b"][0]
        return y_hat, cache

    def predict(self, X) -> np.ndarray:
        y_hat, _ = self._forward(np.asarray(X, dtype=np.float64))
        return y_hat

    # ---------------- loss + gradients ----------------

    def loss_and_grads(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        B = X.shape[0]
        y_hat, cache = self._forward(X)
        err = y_hat - y
        loss = float((err**2).mean())
        grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}

        d_yhat = 2.0 * err / B
        h_last = cache["h_last"]
        grads["head_w"] += h_last.T @ d_yhat
        grads["head_b"][0] += d_yhat.sum()
        dh = np.outer(d_yhat, self.tensors["head_w"])

        H = self.hp.hidden
        Wx = self.tensors["lstm_Wx"]
        Wh = self.tensors["lstm_Wh"]
        B_, W, d = cache["seq_shape"]
        d_seq = np.zeros((B_, W, d))
        dc = np.zeros_like(dh)
        for t in range(W - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, c_new, tanh_c = cache["steps"][t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c**2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate(
                [
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g**2),
                    do * o * (1.0 - o),
                ],
                axis=1,
            )
            grads["lstm_Wx"] += x_t.T @ dz
            grads["lstm_Wh"] += h_prev.T @ dz
            grads["lstm_b"] += dz.sum(axis=0)
            d_seq[:, t, :] = dz @ Wx.T
            dh = dz @ Wh.T
            dc = dc * f

        dout = d_seq.reshape(B_ * W, d)
        for li in range(len(self.hp.mlp_widths) - 1, -1, -1):
            inp, out = cache["mlp"][li]
            dz = dout * (1.0 - out**2)
            grads[f"mlp{li}_W"] += inp.T @ dz
            grads[f"mlp{li}_b"] += dz.sum(axis=0)
            dout = dz @ self.tensors[f"mlp{li}_W"].T
        return loss, grads

    def loss(self, X, y) -> float:
        y_hat, _ = self._forward(np.asarray(X, dtype=np.float64))
        return float(((y_hat - np.asarray(y, dtype=np.float64)) ** 2).mean())

    # ---------------- persistence ----------------

    def save(self, path) -> None:
        """Flat named-tensor binary: length-prefixed JSON header + raw buffers."""
        header = {"config": asdict(self.hp), "n_features": self.n_features, "tensors": {}}
        offset = 0
        buffers = []
        for name in sorted(self.tensors):
            arr = np.ascontiguousarray(self.tensors[name], dtype=np.float64)
            header["tensors"][name] = {"offset": offset, "shape": list(arr.shape)}
            buffers.append(arr.tobytes())
            offset += arr.nbytes
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for buf in buffers:
                fh.write(buf)

    @classmethod
    def load(cls, path) -> "SequenceNet":
        with open(path, "rb") as fh:
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode())
            raw = fh.read()
        cfg = header["config"]
        cfg["mlp_widths"] = tuple(cfg["mlp_widths"])
        net = cls(header["n_features"], SeqNetParams(**cfg))
        for name, meta in header["tensors"].items():
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(
                raw, dtype=np.float64, count=count, offset=meta["offset"]
            ).reshape(shape)
            net.tensors[name] = arr.copy()
        return net


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def fit_seqnet(
    X,
    y,
    params: Optional[SeqNetParams] = None,
    X_val=None,
    y_val=None,
):
    """Adam training with early stopping on validation loss.

    When no validation split is passed, the tail ``val_fraction`` of the
    samples is held out (or training loss is monitored if that would be
    empty).  Returns the net (restored to the best epoch) and a history
    dict.  Non-finite loss aborts with the last finite checkpoint.
    """
    hp = params or SeqNetParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if X_val is None:
        n_val = int(round(n * hp.val_fraction))
        if n_val > 0:
            X_val, y_val = X[n - n_val :], y[n - n_val :]
            X, y = X[: n - n_val], y[: n - n_val]
            n = X.shape[0]

    net = SequenceNet(X.shape[2], hp)
    rng = np.random.default_rng(hp.seed + 1)
    m = {k: np.zeros_like(v) for k, v in net.tensors.items()}
    v = {k: np.zeros_like(vv) for k, vv in net.tensors.items()}
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    step = 0

    best_val = np.inf
    best_epoch = -1
    best_tensors = {k: t.copy() for k, t in net.tensors.items()}
    history = {"train_loss": [], "val_loss": [], "best_epoch": -1}
    patience_left = hp.patience

    for epoch in range(hp.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            loss, grads = net.loss_and_grads(X[idx], y[idx])
            if not np.isfinite(loss):
                net.tensors = best_tensors
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", checkpoint=net
                )
            step += 1
            for k in net.tensors:
                m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
                v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
                m_hat = m[k] / (1 - beta1**step)
                v_hat = v[k] / (1 - beta2**step)
                net.tensors[k] -= hp.learning_rate * m_hat / (np.sqrt(v_hat) + eps_adam)
            epoch_loss += loss
            n_batches += 1
        history["train_loss"].append(epoch_loss / max(n_batches, 1))

        if X_val is not None and len(X_val):
            val_loss = net.loss(X_val, y_val)
        else:
            val_loss = history["train_loss"][-1]
        history["val_loss"].append(val_loss)

        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_epoch = epoch
            best_tensors = {k: t.copy() for k, t in net.tensors.items()}
            patience_left = hp.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                break

    net.tensors = best_tensors
    history["best_epoch"] = best_epoch
    return net, history


def seqnet_grad_check(net: SequenceNet, X, y, n_samples: int = 64, step: float = 1e-5, seed: int = 0):
    """Max relative error between analytic and central-difference gradients.

    Samples ``n_samples`` coordinates across every parameter block (each
    block always contributes at least one coordinate).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _, grads = net.loss_and_grads(X, y)
    rng = np.random.default_rng(seed)
    names = sorted(net.tensors)
    per_block = max(1, n_samples // len(names))
    worst = 0.0
    for name in names:
        tensor = net.tensors[name]
        flat = tensor.ravel()
        k = min(per_block, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            lp = net.loss(X, y)
            flat[c] = orig - step
            lm = net.loss(X, y)
            flat[c] = orig
            numeric = (lp - lm) / (2 * step)
            analytic = grads[name].ravel()[c]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            worst = max(worst, abs(numeric - analytic) / denom)
    return worst
