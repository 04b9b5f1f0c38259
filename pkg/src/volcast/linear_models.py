"""Linear volume regressions: OLS, lasso, and ridge.

Penalized fits standardize columns internally and report coefficients on
the original scale with an unpenalized intercept.  The lasso objective is
``(1/2n)||y - b0 - Xw||^2 + lam * ||w||_1`` solved by cyclic coordinate
descent, so ``lam >= max_j |x_j'(y - ybar)| / n`` (standardized columns)
zeroes every coefficient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .kernels import lasso_cd

KKT_TOL = 1e-6


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design is rank deficient; collinear columns: {self.columns}")


class ConvergenceError(RuntimeError):
    pass


@dataclass
class LinearFit:
    intercept: float
    coefficients: dict
    lam: float
    penalty: str  # none | l1 | l2
    column_standardization: dict  # name -> (mean, sd)
    tvalues: Optional[dict] = None
    iterations: int = 0
    converged: bool = True

    @property
    def names(self) -> list:
        return list(self.coefficients)

    def coef_vector(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        names = self.names if names is None else list(names)
        return np.array([self.coefficients[n] for n in names])

    def standardized_coefficients(self) -> dict:
        out = {}
        for n, b in self.coefficients.items():
            _, sd = self.column_standardization[n]
            out[n] = b * sd
        return out

    def to_json(self, path=None) -> str:
        payload = {
            "intercept": self.intercept,
            "coefficients": self.coefficients,
            "lambda": self.lam,
            "penalty": self.penalty,
            "column_standardization": {
                k: list(v) for k, v in self.column_standardization.items()
            },
            "tvalues": self.tvalues,
            "iterations": self.iterations,
            "converged": self.converged,
        }
        text = json.dumps(payload, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _names(X, names) -> list:
    if names is None:
        return [f"x{j}" for j in range(X.shape[1])]
    names = list(names)
    if len(names) != X.shape[1]:
        raise ValueError("names length does not match design width")
    return names


def _standardize(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd_safe = np.where(sd > 0, sd, 1.0)
    return (X - mean) / sd_safe, mean, sd_safe, sd


def fit_ols(X, y, names=None, ridge_fallback: float = 0.0) -> LinearFit:
    """Least squares with coefficient t-values.

    Exactly collinear designs raise :class:`RankDeficientError` naming the
    dependent columns, unless ``ridge_fallback`` > 0 requests an L2-backed
    solve instead.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    names = _names(X, names)
    n, p = X.shape
    if n < p + 1:
        raise ValueError("need at least columns + 1 rows")

    A = np.column_stack([np.ones(n), X])
    rank = np.linalg.matrix_rank(A)
    if rank < p + 1:
        if ridge_fallback > 0:
            return fit_ridge(X, y, ridge_fallback, names=names)
        _, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        bad = piv[np.where(diag <= diag[0] * 1e-12 * max(A.shape))[0]]
        cols = sorted({names[i - 1] for i in bad if i >= 1})
        raise RankDeficientError(cols or names)

    beta, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ beta
    dof = n - p - 1
    tvalues = None
    if dof > 0:
        sigma2 = float(resid @ resid) / dof
        cov = sigma2 * np.linalg.inv(A.T @ A)
        se = np.sqrt(np.diag(cov))
        with np.errstate(divide="ignore", invalid="ignore"):
            tv = np.where(se > 0, beta / se, 0.0)
        tvalues = {names[j]: float(tv[j + 1]) for j in range(p)}

    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    return LinearFit(
        intercept=float(beta[0]),
        coefficients={names[j]: float(beta[j + 1]) for j in range(p)},
        lam=0.0,
        penalty="none",
        column_standardization={
            names[j]: (float(mean[j]), float(sd[j])) for j in range(p)
        },
        tvalues=tvalues,
    )


def fit_ridge(X, y, lam: float, names=None) -> LinearFit:
    """Closed-form L2 fit on standardized columns, intercept unpenalized."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    names = _names(X, names)
    n, p = X.shape
    Xs, mean, sd_safe, sd = _standardize(X)
    ybar = float(y.mean())
    yc = y - ybar
    G = Xs.T @ Xs + lam * np.eye(p)
    if lam == 0.0:
        rank = np.linalg.matrix_rank(Xs)
        if rank < min(n, p) or p > n:
            return fit_ols(X, y, names=names)  # delegate the error path
    beta_s = np.linalg.solve(G, Xs.T @ yc)
    beta = beta_s / sd_safe
    beta[sd == 0] = 0.0
    intercept = ybar - float(beta @ mean)
    return LinearFit(
        intercept=intercept,
        coefficients={names[j]: float(beta[j]) for j in range(p)},
        lam=float(lam),
        penalty="l2",
        column_standardization={
            names[j]: (float(mean[j]), float(sd[j])) for j in range(p)
        },
    )


def lasso_lambda_max(X, y) -> float:
    """Smallest penalty that zeroes every coefficient (standardized columns)."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    Xs, _, _, _ = _standardize(X)
    yc = y - y.mean()
    return float(np.abs(Xs.T @ yc).max() / X.shape[0])


def fit_lasso(
    X,
    y,
    lam: float,
    names=None,
    max_sweeps: int = 10_000,
    tol: float = 1e-10,
) -> LinearFit:
    """Coordinate-descent lasso; verifies the KKT conditions on exit."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    names = _names(X, names)
    n, p = X.shape
    Xs, mean, sd_safe, sd = _standardize(X)
    ybar = float(y.mean())
    yc = y - ybar

    if lam > 0 and lam >= float(np.abs(Xs.T @ yc).max() / n):
        # at or beyond the activation threshold the exact solution is zero
        return LinearFit(
            intercept=ybar,
            coefficients={names[j]: 0.0 for j in range(p)},
            lam=float(lam),
            penalty="l1",
            column_standardization={
                names[j]: (float(mean[j]), float(sd[j])) for j in range(p)
            },
            iterations=0,
            converged=True,
        )

    w0 = np.zeros(p)
    w, resid, sweeps, last_step = lasso_cd(
        np.ascontiguousarray(Xs), yc.copy(), float(lam), w0, max_sweeps, tol
    )
    if last_step > tol and sweeps >= max_sweeps:
        gap = _lasso_duality_gap(Xs, yc, w, lam)
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps; "
            f"duality gap {gap:.3e}"
        )

    grad = Xs.T @ resid / n
    active = w != 0
    kkt_ok = np.all(np.abs(grad[~active]) <= lam + KKT_TOL) and np.all(
        np.abs(grad[active] - lam * np.sign(w[active])) <= KKT_TOL
    )
    if not kkt_ok:
        gap = _lasso_duality_gap(Xs, yc, w, lam)
        raise ConvergenceError(f"KKT violation at exit; duality gap {gap:.3e}")

    beta = w / sd_safe
    beta[sd == 0] = 0.0
    intercept = ybar - float(beta @ mean)
    return LinearFit(
        intercept=intercept,
        coefficients={names[j]: float(beta[j]) for j in range(p)},
        lam=float(lam),
        penalty="l1",
        column_standardization={
            names[j]: (float(mean[j]), float(sd[j])) for j in range(p)
        },
        iterations=int(sweeps),
        converged=True,
    )


def _lasso_duality_gap(Xs, yc, w, lam) -> float:
    n = Xs.shape[0]
    r = yc - Xs @ w
    primal = float(r @ r) / (2 * n) + lam * float(np.abs(w).sum())
    dual_norm = float(np.abs(Xs.T @ r).max())
    const = 1.0 if dual_norm <= n * lam or dual_norm == 0 else n * lam / dual_norm
    dual = const * float(r @ yc) / n - (const * const) * float(r @ r) / (2 * n)
    return primal - dual


def predict(fit: LinearFit, X, names=None) -> np.ndarray:
    X = _as_matrix(X)
    beta = fit.coef_vector(names if names is not None else fit.names)
    return fit.intercept + X @ beta


def r_squared(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ss_res = float(((y_true - y_pred) ** 2).sum())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0:
        raise ZeroDivisionError("constant target; R^2 undefined")
    return 1.0 - ss_res / ss_tot


def select_lambda(grid, train, validation, fitter="ridge") -> float:
    """Pick the penalty with the best validation R^2; ties favor shrinkage."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty lambda grid")
    X_tr, y_tr = train
    X_va, y_va = validation
    fit_fn = {"ridge": fit_ridge, "lasso": fit_lasso}[fitter]
    best_lam = None
    best_r2 = -np.inf
    for lam in sorted(grid):
        f = fit_fn(X_tr, y_tr, lam)
        r2 = r_squared(y_va, predict(f, X_va))
        if best_lam is None or r2 >= best_r2:
            best_r2, best_lam = r2, lam
    return float(best_lam)
