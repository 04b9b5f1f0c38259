"""Hot numeric kernels with paired numba and pure-numpy implementations.

Each kernel has a ``*_numpy`` variant (vectorized where the recurrence
allows, BLAS-backed otherwise) and a ``*_numba`` variant compiled with
``@njit``.  The module-level names dispatch to the numba build unless
``VOLCAST_DISABLE_NUMBA`` selects the numpy path (see :mod:`volcast._accel`).
``benchmarks/bench_kernels.py`` times the two paths side by side.
"""

import numpy as np
from scipy.signal import lfilter

from ._accel import USE_NUMBA, njit

__all__ = [
    "mem_recursion",
    "lasso_cd",
    "split_scan",
    "assign_nearest",
    "mem_recursion_numpy",
    "lasso_cd_numpy",
    "split_scan_numpy",
    "assign_nearest_numpy",
]


# ---------------------------------------------------------------------------
# multiplicative-error recursion  y[k] = omega + alpha*z[k-1] + beta*y[k-1]
# ---------------------------------------------------------------------------

def mem_recursion_numpy(z, omega, alpha, beta, y0):
    """Linear first-order recursion driven by the lagged series ``z``.

    ``y[0] = y0`` and ``y[k] = omega + alpha*z[k-1] + beta*y[k-1]``.
    Used for both the intraday dynamic component (z = volume ratios) and
    the daily level path (z = previous-day mean turnover).  The recursion
    is linear in the state, so the numpy path is an exact IIR filter.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    out = np.empty(n, dtype=np.float64)
    out[0] = y0
    if n == 1:
        return out
    drive = omega + alpha * z[:-1]
    out[1:], _ = lfilter([1.0], [1.0, -beta], drive, zi=np.array([beta * y0]))
    return out


def _mem_recursion_loop(z, omega, alpha, beta, y0):
    n = z.shape[0]
    out = np.empty(n, dtype=np.float64)
    prev = y0
    out[0] = y0
    for k in range(1, n):
        prev = omega + alpha * z[k - 1] + beta * prev
        out[k] = prev
    return out


# ---------------------------------------------------------------------------
# lasso coordinate descent on standardized columns
# ---------------------------------------------------------------------------

def lasso_cd_numpy(X, y, lam, w, max_sweeps, tol):
    """Cyclic coordinate descent for (1/2n)||y - Xw||^2 + lam*||w||_1.

    ``X`` columns are expected standardized and ``y`` centered; the
    intercept is handled by the caller.  Returns the updated weights, the
    residual, the sweep count, and the final max coordinate step.
    """
    n, p = X.shape
    n_f = float(n)
    w = w.copy()
    r = y - X @ w
    colsq = np.einsum("ij,ij->j", X, X)
    sweeps = 0
    max_step = 0.0
    for sweep in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            cj = colsq[j]
            if cj <= 0.0:
                continue
            wj = w[j]
            rho = X[:, j] @ r + cj * wj
            z = rho / n_f
            if z > lam:
                wn = (z - lam) / (cj / n_f)
            elif z < -lam:
                wn = (z + lam) / (cj / n_f)
            else:
                wn = 0.0
            d = wn - wj
            if d != 0.0:
                r -= X[:, j] * d
                w[j] = wn
                if abs(d) > max_step:
                    max_step = abs(d)
        sweeps = sweep + 1
        if max_step <= tol:
            break
    return w, r, sweeps, max_step


@njit(cache=True)
def _lasso_cd_loop(X, y, lam, w, max_sweeps, tol):
    n, p = X.shape
    n_f = float(n)
    w = w.copy()
    r = y - X @ w
    colsq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        colsq[j] = s
    sweeps = 0
    max_step = 0.0
    for sweep in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            cj = colsq[j]
            if cj <= 0.0:
                continue
            wj = w[j]
            rho = 0.0
            for i in range(n):
                rho += X[i, j] * r[i]
            rho += cj * wj
            z = rho / n_f
            if z > lam:
                wn = (z - lam) / (cj / n_f)
            elif z < -lam:
                wn = (z + lam) / (cj / n_f)
            else:
                wn = 0.0
            d = wn - wj
            if d != 0.0:
                for i in range(n):
                    r[i] -= X[i, j] * d
                w[j] = wn
                if abs(d) > max_step:
                    max_step = abs(d)
        sweeps = sweep + 1
        if max_step <= tol:
            break
    return w, r, sweeps, max_step


# ---------------------------------------------------------------------------
# boosted-tree split scan (squared loss, unit hessians)
# ---------------------------------------------------------------------------

def split_scan_numpy(xs, gs, reg_lambda, reg_gamma, min_leaf):
    """Best split position for one feature, values pre-sorted ascending.

    ``gs`` holds the residuals (negative gradients) aligned with ``xs``.
    Gain is the second-order formula with L2 leaf penalty ``reg_lambda``
    and per-split penalty ``reg_gamma``.  Returns ``(gain, pos)`` where
    the split separates ``xs[:pos+1]`` from ``xs[pos+1:]``; pos = -1 when
    no valid split exists.
    """
    n = xs.shape[0]
    if n < 2:
        return -np.inf, -1
    G = float(gs.sum())
    H = float(n)
    gl = np.cumsum(gs)[:-1]
    hl = np.arange(1, n, dtype=np.float64)
    hr = H - hl
    valid = xs[:-1] != xs[1:]
    valid &= (hl >= min_leaf) & (hr >= min_leaf)
    if not valid.any():
        return -np.inf, -1
    gr = G - gl
    parent = G * G / (H + reg_lambda)
    gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent)
    gain -= reg_gamma
    gain = np.where(valid, gain, -np.inf)
    pos = int(np.argmax(gain))
    return float(gain[pos]), pos


@njit(cache=True)
def _split_scan_loop(xs, gs, reg_lambda, reg_gamma, min_leaf):
    n = xs.shape[0]
    if n < 2:
        return -np.inf, -1
    G = 0.0
    for i in range(n):
        G += gs[i]
    H = float(n)
    parent = G * G / (H + reg_lambda)
    best_gain = -np.inf
    best_pos = -1
    gl = 0.0
    for i in range(n - 1):
        gl += gs[i]
        if xs[i] == xs[i + 1]:
            continue
        hl = float(i + 1)
        hr = H - hl
        if hl < min_leaf or hr < min_leaf:
            continue
        gr = G - gl
        gain = 0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent)
        gain -= reg_gamma
        if gain > best_gain:
            best_gain = gain
            best_pos = i
    return best_gain, best_pos


# ---------------------------------------------------------------------------
# k-means assignment step
# ---------------------------------------------------------------------------

def assign_nearest_numpy(X, centers):
    """Assign each row of X to the nearest center; also return the WCSS."""
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    wcss = float(d2[np.arange(X.shape[0]), labels].sum())
    return labels.astype(np.int64), wcss


@njit(cache=True)
def _assign_nearest_loop(X, centers):
    n, d = X.shape
    k = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    wcss = 0.0
    for i in range(n):
        best = 0
        best_d = np.inf
        for c in range(k):
            dist = 0.0
            for j in range(d):
                diff = X[i, j] - centers[c, j]
                dist += diff * diff
            if dist < best_d:
                best_d = dist
                best = c
        labels[i] = best
        wcss += best_d
    return labels, wcss


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    mem_recursion_numba = njit(cache=True)(_mem_recursion_loop)
    lasso_cd_numba = _lasso_cd_loop
    split_scan_numba = _split_scan_loop
    assign_nearest_numba = _assign_nearest_loop

    mem_recursion = mem_recursion_numba
    lasso_cd = lasso_cd_numba
    split_scan = split_scan_numba
    assign_nearest = assign_nearest_numba
else:
    mem_recursion_numba = None
    lasso_cd_numba = None
    split_scan_numba = None
    assign_nearest_numba = None

    mem_recursion = mem_recursion_numpy
    lasso_cd = lasso_cd_numpy
    split_scan = split_scan_numpy
    assign_nearest = assign_nearest_numpy
