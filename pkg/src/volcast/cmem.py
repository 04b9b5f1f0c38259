"""Component multiplicative error benchmark for intraday turnover.

Decomposes turnover as ``x[t,j] = eta[t] * s[j] * mu[t,j] * eps[t,j]``:

* daily level ``eta[t] = omega_d + alpha_d * vbar[t-1] + beta_d * eta[t-1]``
  with ``vbar`` the previous day's mean bin turnover,
* seasonal ``s`` with geometric mean one (identification),
* intraday dynamic ``mu[t,j] = omega_m + alpha_m * r_prev + beta_m * mu_prev``
  where ``r = x / (eta * s)`` and the recursion carries across day
  boundaries; ``omega_m`` is pinned to ``1 - alpha_m - beta_m`` so mu
  targets unit mean.

Estimation minimizes the squared deviation of the standardized residual
from one (the first-moment condition in least-squares form), alternating
between the dynamic parameters and seasonal re-estimation.  The daily
scale is profiled out analytically so the fitted residuals average to
one exactly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .kernels import mem_recursion

CMEM_FEATURES = ["eta", "seas", "mu", "x", "eta_seas", "seas_mu", "eta_mu"]

_STATIONARITY_CAP = 0.998
_PENALTY = 1e8


class CmemError(ValueError):
    pass


@dataclass
class CmemConfig:
    max_alternations: int = 200
    tol: float = 1e-6
    optimizer_maxiter: int = 30


@dataclass
class CmemFit:
    seasonal: np.ndarray
    daily_params: tuple  # (omega_d, alpha_d, beta_d)
    intra_params: tuple  # (omega_m, alpha_m, beta_m)
    eta_path: np.ndarray
    mu_path: np.ndarray  # (n_days, n_bins)
    scale_convention: dict
    converged: bool
    n_alternations: int
    floor_value: float

    def to_json(self, path=None) -> str:
        payload = {
            "seasonal": self.seasonal.tolist(),
            "daily_params": list(self.daily_params),
            "intra_params": list(self.intra_params),
            "eta_path": self.eta_path.tolist(),
            "scale_convention": self.scale_convention,
            "converged": self.converged,
            "n_alternations": self.n_alternations,
            "floor_value": self.floor_value,
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> "CmemFit":
        d = json.loads(text)
        return cls(
            seasonal=np.asarray(d["seasonal"]),
            daily_params=tuple(d["daily_params"]),
            intra_params=tuple(d["intra_params"]),
            eta_path=np.asarray(d["eta_path"]),
            mu_path=np.zeros((0, len(d["seasonal"]))),
            scale_convention=d["scale_convention"],
            converged=d["converged"],
            n_alternations=d["n_alternations"],
            floor_value=d["floor_value"],
        )


def _paths(xb, s, omega_d, alpha_d, beta_d, alpha_m, beta_m):
    """Component paths on the scale-normalized panel.

    The daily-level scale is profiled out by a fixed-point normalization:
    the level is rescaled until the standardized residuals average to one,
    which pins the moment condition exactly and leaves the dynamic
    component with unit mean by the stationarity of its recursion.
    Returns (eta, mu, eps, level_scale).
    """
    n_days, n_bins = xb.shape
    vbar = xb.mean(axis=1)
    eta0 = float(vbar.mean())
    eta = mem_recursion(vbar, omega_d, alpha_d, beta_d, eta0)
    omega_m = max(1.0 - alpha_m - beta_m, 1e-10)
    scale = 1.0
    r = (xb / (eta[:, None] * s[None, :])).ravel()
    mu = np.ones_like(r)
    eps = r.copy()
    for _ in range(12):
        mu = mem_recursion(r, omega_m, alpha_m, beta_m, 1.0)
        eps = r / mu
        m = eps.mean()
        if not np.isfinite(m) or m <= 0:
            return eta, mu.reshape(n_days, n_bins), eps.reshape(n_days, n_bins), np.nan
        scale *= m
        if abs(m - 1.0) < 1e-12:
            break
        r = r / m
    return (
        eta * scale,
        mu.reshape(n_days, n_bins),
        eps.reshape(n_days, n_bins),
        scale,
    )


def _objective(theta, xb, s):
    omega_d, alpha_d, beta_d, alpha_m, beta_m = theta
    penalty = 0.0
    for a, b in ((alpha_d, beta_d), (alpha_m, beta_m)):
        excess = a + b - _STATIONARITY_CAP
        if excess > 0:
            penalty += _PENALTY * excess * excess
    _, _, eps, scale = _paths(xb, s, omega_d, alpha_d, beta_d, alpha_m, beta_m)
    if not np.isfinite(scale):
        return 1e12
    return float(((eps - 1.0) ** 2).sum()) + penalty


def _init_seasonal(xb):
    vbar = xb.mean(axis=1)
    ratios = xb / vbar[:, None]
    log_s = np.log(ratios).mean(axis=0)
    log_s -= log_s.mean()
    return np.exp(log_s)


def fit(x: np.ndarray, config: Optional[CmemConfig] = None) -> CmemFit:
    """Estimate the component model on a (n_days, n_bins) turnover panel."""
    if config is None:
        config = CmemConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise CmemError("expected a (n_days, n_bins) turnover panel")
    n_days, n_bins = x.shape
    if n_days < 2:
        raise CmemError("need at least 2 training days")
    if (x < 0).any() or not np.isfinite(x).all():
        raise CmemError("turnover must be finite and non-negative")

    positive = x[x > 0]
    if positive.size == 0:
        raise CmemError("turnover panel is identically zero")
    floor = float(positive.min())
    x = np.maximum(x, floor)

    scale = float(x.mean())
    xb = x / scale

    s = _init_seasonal(xb)
    theta = np.array([0.4 * xb.mean(axis=1).mean(), 0.3, 0.3, 0.1, 0.5])
    bounds = [
        (1e-10, 10.0),
        (0.0, _STATIONARITY_CAP),
        (0.0, _STATIONARITY_CAP),
        (0.0, _STATIONARITY_CAP),
        (0.0, _STATIONARITY_CAP),
    ]

    converged = False
    alternations = 0
    best_obj = np.inf
    stalled = 0
    for alternations in range(1, config.max_alternations + 1):
        res = minimize(
            _objective,
            theta,
            args=(xb, s),
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.optimizer_maxiter},
        )
        theta_new = res.x
        eta, mu, _, _ = _paths(xb, s, *theta_new)
        s_new = np.exp(np.log(xb / (eta[:, None] * mu)).mean(axis=0))
        s_new /= np.exp(np.log(s_new).mean())
        step = max(
            float(np.abs(theta_new - theta).max()),
            float(np.abs(s_new - s).max()),
        )
        theta, s = theta_new, s_new
        if step < config.tol:
            converged = True
            break
        # a stalled objective means the leftover motion is noise around the
        # optimum; count that as converged rather than burning alternations
        if res.fun >= best_obj - 1e-7 * max(1.0, abs(best_obj)):
            stalled += 1
            if stalled >= 3:
                converged = True
                break
        else:
            stalled = 0
        best_obj = min(best_obj, res.fun)
    if not converged:
        warnings.warn("component fit did not converge; returning best iterate")

    omega_d, alpha_d, beta_d, alpha_m, beta_m = theta
    eta_b, mu, eps, c = _paths(xb, s, *theta)
    # fold the profiled level scale into the daily recursion parameters
    omega_d *= c
    alpha_d *= c

    eta = eta_b * scale
    omega_d *= scale
    omega_m = max(1.0 - alpha_m - beta_m, 1e-10)
    return CmemFit(
        seasonal=s,
        daily_params=(float(omega_d), float(alpha_d), float(beta_d)),
        intra_params=(float(omega_m), float(alpha_m), float(beta_m)),
        eta_path=eta,
        mu_path=mu,
        scale_convention={
            "seasonal_geomean": 1.0,
            "mu_unit_mean": True,
            "train_scale": scale,
            "residual_scale": c,
        },
        converged=converged,
        n_alternations=alternations,
        floor_value=floor,
    )


def _history_state(fit: CmemFit, history: np.ndarray):
    """Run the fitted recursions over a history panel, return terminal state."""
    history = np.maximum(np.asarray(history, dtype=np.float64), fit.floor_value)
    omega_d, alpha_d, beta_d = fit.daily_params
    omega_m, alpha_m, beta_m = fit.intra_params
    s = fit.seasonal
    vbar = history.mean(axis=1)
    eta0 = float(vbar.mean()) * fit.scale_convention.get("residual_scale", 1.0)
    eta = mem_recursion(vbar, omega_d, alpha_d, beta_d, eta0)
    r = (history / (eta[:, None] * s[None, :])).ravel()
    mu = mem_recursion(r, omega_m, alpha_m, beta_m, 1.0)
    eta_next = omega_d + alpha_d * vbar[-1] + beta_d * eta[-1]
    return eta_next, float(r[-1]), float(mu[-1])


def forecast(
    fit: CmemFit,
    history: np.ndarray,
    mode: str = "static",
    realized_next: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Predict the next day's 26 bin turnovers.

    Static mode iterates the dynamic component forward with the residual
    plugged at its unit mean.  Dynamic mode advances the recursion on the
    realized bins of the target day, so the bin-j prediction conditions
    on bins 1..j-1.
    """
    if mode not in ("static", "dynamic"):
        raise CmemError(f"invalid forecast mode {mode!r}")
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2:
        raise CmemError("history must be (n_days, n_bins)")
    n_bins = history.shape[1]
    omega_m, alpha_m, beta_m = fit.intra_params
    s = fit.seasonal
    eta_next, r_last, mu_last = _history_state(fit, history)

    mu_hat = np.empty(n_bins)
    mu_hat[0] = omega_m + alpha_m * r_last + beta_m * mu_last
    if mode == "static":
        for j in range(1, n_bins):
            mu_hat[j] = omega_m + (alpha_m + beta_m) * mu_hat[j - 1]
    else:
        if realized_next is None:
            raise CmemError("dynamic forecast requires the realized bins")
        realized = np.maximum(np.asarray(realized_next, dtype=np.float64), fit.floor_value)
        for j in range(1, n_bins):
            r_prev = realized[j - 1] / (eta_next * s[j - 1])
            mu_hat[j] = omega_m + alpha_m * r_prev + beta_m * mu_hat[j - 1]
    return eta_next * s * mu_hat


def forecast_steps(
    fit: CmemFit,
    history: np.ndarray,
    realized_next: np.ndarray,
) -> np.ndarray:
    """Per-step forecast matrix for the target day.

    Row i holds the forecasts for every bin made just before bin i opens:
    the dynamic component is advanced on realized bins < i and then
    iterated forward with the residual at its unit mean.  Row 0 equals
    the static path and the diagonal equals the dynamic forecast.
    """
    history = np.asarray(history, dtype=np.float64)
    n_bins = history.shape[1]
    s = fit.seasonal
    omega_m, alpha_m, beta_m = fit.intra_params
    eta_next, r_last, mu_last = _history_state(fit, history)
    realized = np.maximum(np.asarray(realized_next, dtype=np.float64), fit.floor_value)

    mu_real = np.empty(n_bins)
    mu_real[0] = omega_m + alpha_m * r_last + beta_m * mu_last
    for j in range(1, n_bins):
        r_prev = realized[j - 1] / (eta_next * s[j - 1])
        mu_real[j] = omega_m + alpha_m * r_prev + beta_m * mu_real[j - 1]

    F = np.empty((n_bins, n_bins))
    for i in range(n_bins):
        mu_path = mu_real.copy()
        for j in range(i + 1, n_bins):
            mu_path[j] = omega_m + (alpha_m + beta_m) * mu_path[j - 1]
        F[i] = eta_next * s * mu_path
    return F


def forecast_components(
    fit: CmemFit,
    history: np.ndarray,
    mode: str = "static",
    realized_next: Optional[np.ndarray] = None,
) -> dict:
    """Per-bin component features for the forecast day (predicted values)."""
    x_hat = forecast(fit, history, mode=mode, realized_next=realized_next)
    eta_next, _, _ = _history_state(fit, history)
    s = fit.seasonal
    mu_hat = x_hat / (eta_next * s)
    eta_col = np.full(s.shape[0], eta_next)
    return {
        "eta": eta_col,
        "seas": s.copy(),
        "mu": mu_hat,
        "x": x_hat,
        "eta_seas": eta_col * s,
        "seas_mu": s * mu_hat,
        "eta_mu": eta_col * mu_hat,
    }


def insample_components(fit: CmemFit) -> dict:
    """Component features over the training window (realized recursions)."""
    eta = fit.eta_path[:, None]
    s = fit.seasonal[None, :]
    mu = fit.mu_path
    x = eta * s * mu
    return {
        "eta": np.broadcast_to(eta, mu.shape).copy(),
        "seas": np.broadcast_to(s, mu.shape).copy(),
        "mu": mu.copy(),
        "x": x,
        "eta_seas": np.broadcast_to(eta * s, mu.shape).copy(),
        "seas_mu": s * mu,
        "eta_mu": eta * mu,
    }
