"""Weighted linear regression and ridge-penalized logistic regression (IRLS)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

RIDGE_FALLBACK = 1e-8
DEFAULT_LOGISTIC_RIDGE = 1e-4


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    slopes: np.ndarray
    ridge_fallback: bool = False  # design was rank deficient


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    slopes: np.ndarray
    ridge_lambda: float
    converged: bool = True
    n_iter: int = 0


def _as_features(features, name="features") -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contain non-finite values")
    return x


def _as_weights(w, n: int) -> np.ndarray:
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be positive and finite")
    return w


def _design(x: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((x.shape[0], 1)), x])


def fit_wls(features, target, w) -> LinearModel:
    """Minimize sum_i w_i (y_i - b0 - b.x_i)^2.

    A rank-deficient design is refit with a ridge of 1e-8 on the slopes and
    the returned model is flagged with ``ridge_fallback``.
    """
    x = _as_features(features)
    y = np.asarray(target, dtype=np.float64)
    n, d = x.shape
    if y.shape != (n,):
        raise ValueError(f"target must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("target contains non-finite values")
    if n <= d:
        raise ValueError(f"need more samples than features (n={n}, d={d})")
    w = _as_weights(w, n)
    sw = np.sqrt(w)
    a = _design(x) * sw[:, None]
    b = y * sw
    coef, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    fallback = rank < d + 1
    if fallback:
        pen = np.sqrt(RIDGE_FALLBACK) * np.eye(d + 1)[1:]
        coef, *_ = np.linalg.lstsq(np.vstack([a, pen]), np.concatenate([b, np.zeros(d)]), rcond=None)
    return LinearModel(float(coef[0]), coef[1:].copy(), bool(fallback))


def predict_linear(m: LinearModel, features) -> np.ndarray:
    x = _as_features(features)
    if x.shape[1] != m.slopes.shape[0]:
        raise ValueError(f"model expects {m.slopes.shape[0]} features, got {x.shape[1]}")
    return m.intercept + x @ m.slopes


def _penalized_loglik(a, y, w, beta, lam):
    eta = a @ beta
    ll = w @ (y * eta - np.logaddexp(0.0, eta))
    return ll - 0.5 * lam * (beta[1:] @ beta[1:])


def fit_logistic(
    features,
    target,
    w=None,
    ridge_lambda: float = DEFAULT_LOGISTIC_RIDGE,
    *,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> LogisticModel:
    """Maximize the weighted log-likelihood minus (lambda/2)*||slopes||^2 by IRLS.

    Newton steps are halved until the penalized objective does not decrease.
    Stops when the largest parameter change drops below ``tol``; otherwise the
    best iterate after ``max_iter`` steps is returned with ``converged=False``.
    """
    x = _as_features(features)
    y = np.asarray(target, dtype=np.float64)
    n, d = x.shape
    if y.shape != (n,):
        raise ValueError(f"target must have shape ({n},), got {y.shape}")
    if n < 2:
        raise ValueError("need at least two samples")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic target must be binary 0/1")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    if ridge_lambda == 0 and (y.min() == y.max()):
        raise ValueError("single-class target needs ridge_lambda > 0")
    w = np.ones(n) if w is None else _as_weights(w, n)

    a = _design(x)
    pen = np.full(d + 1, float(ridge_lambda))
    pen[0] = 0.0
    beta = np.zeros(d + 1)
    # start the intercept at the weighted log-odds when it is finite
    ybar = (w @ y) / w.sum()
    if 0 < ybar < 1:
        beta[0] = np.log(ybar / (1 - ybar))
    obj = _penalized_loglik(a, y, w, beta, ridge_lambda)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(a @ beta)
        grad = a.T @ (w * (y - mu)) - pen * beta
        h = (a * (w * mu * (1 - mu))[:, None]).T @ a + np.diag(pen)
        try:
            step = np.linalg.solve(h, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            cand_obj = _penalized_loglik(a, y, w, cand, ridge_lambda)
            if cand_obj >= obj or t < 1e-10:
                break
            t *= 0.5
        change = np.max(np.abs(cand - beta))
        if cand_obj >= obj:
            beta, obj = cand, cand_obj
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"logistic IRLS did not converge in {max_iter} iterations", RuntimeWarning)
    return LogisticModel(float(beta[0]), beta[1:].copy(), float(ridge_lambda), converged, it)


def predict_proba(m: LogisticModel, features) -> np.ndarray:
    """sigmoid(b0 + b.x) per row, unclipped."""
    x = _as_features(features)
    if x.shape[1] != m.slopes.shape[0]:
        raise ValueError(f"model expects {m.slopes.shape[0]} features, got {x.shape[1]}")
    return expit(m.intercept + x @ m.slopes)
