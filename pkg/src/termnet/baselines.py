"""Linear and naive baselines plus LASSO-based feature importance.

All fits expect the same masked sample matrix the neural model trains on;
the caller is responsible for standardizing X before LASSO/PCR.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .losses import Task

MAX_CD_SWEEPS = 2000
CD_TOL = 1e-10
KKT_TOL = 1e-6


@dataclass
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    feature_names: list[str] | None = None
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coefficients + self.intercept

    def to_json(self, path) -> None:
        names = self.feature_names or [f"x{i}" for i in range(self.coefficients.size)]
        payload = {
            "intercept": self.intercept,
            "coefficients": dict(zip(names, self.coefficients.tolist())),
            "meta": self.meta,
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)


def naive_forecast(task: str, history: np.ndarray | None = None) -> np.ndarray | float:
    """Task-specific no-model forecast.

    RETURN: constant +1 (always long). VOLATILITY: previous observation
    carried forward (first element has no predecessor and is NaN).
    VOLume: constant 0.
    """
    if task == Task.RETURN:
        return 1.0 if history is None else np.ones(np.asarray(history).shape)
    if task == Task.VOLUME:
        return 0.0 if history is None else np.zeros(np.asarray(history).shape)
    if task == Task.VOLATILITY:
        if history is None:
            raise ValueError("VOLATILITY naive forecast needs the observed history")
        h = np.asarray(history, dtype=np.float64)
        out = np.full_like(h, np.nan)
        out[1:] = h[:-1]
        return out
    raise ValueError(f"unknown task {task!r}")


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError("X must be (n, p) with matching y")
    return X, y


def ols_fit(X, y, feature_names=None) -> LinearModel:
    """Least squares via normal equations; tiny ridge fallback when singular."""
    X, y = _check_xy(X, y)
    n, p = X.shape
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} rows, got {n}")
    Xa = np.column_stack([np.ones(n), X])
    gram = Xa.T @ Xa
    rhs = Xa.T @ y
    ridged = False
    try:
        beta = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(beta)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        beta = np.linalg.solve(gram + 1e-8 * np.eye(p + 1), rhs)
        ridged = True
    # explicit rank check: solve can silently succeed on near-singular grams
    if not ridged and np.linalg.matrix_rank(Xa) < p + 1:
        beta = np.linalg.solve(gram + 1e-8 * np.eye(p + 1), rhs)
        ridged = True
    return LinearModel(beta[1:], float(beta[0]), feature_names,
                       {"model": "ols", "ridge_fallback": ridged})


def _soft_threshold(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _cd_lasso(X, y, lam, beta0=None):
    """Coordinate descent on (1/2n)||y - Xb||^2 + lam*||b||_1 (centered data)."""
    n, p = X.shape
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    col_sq = (X * X).sum(axis=0) / n
    r = y - X @ beta
    converged = False
    for _ in range(MAX_CD_SWEEPS):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            old = beta[j]
            rho = (X[:, j] @ r) / n + col_sq[j] * old
            new = _soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                r += X[:, j] * (old - new)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta < CD_TOL:
            converged = True
            break
    return beta, converged


def lasso_lambda_grid(X, y, n_points: int = 50) -> np.ndarray:
    """50 log-spaced penalties from lambda_max (all-zero solution) down 4 decades."""
    X, y = _check_xy(X, y)
    n = X.shape[0]
    yc = y - y.mean()
    Xc = X - X.mean(axis=0)
    lam_max = float(np.max(np.abs(Xc.T @ yc)) / n)
    if lam_max == 0.0:
        lam_max = 1.0
    return np.geomspace(lam_max, 1e-4 * lam_max, n_points)


def lasso_fit(X, y, lambdas=None, folds: int = 10, feature_names=None,
              contiguous_folds: bool = True) -> LinearModel:
    """Coordinate-descent LASSO at the CV-minimizing penalty.

    Folds default to contiguous time blocks to respect serial dependence;
    set contiguous_folds=False for interleaved assignment.
    """
    X, y = _check_xy(X, y)
    n, p = X.shape
    if lambdas is None:
        lambdas = lasso_lambda_grid(X, y)
    lambdas = np.sort(np.asarray(lambdas, dtype=np.float64))[::-1]
    folds = min(folds, n)
    if contiguous_folds:
        fold_id = np.minimum(np.arange(n) * folds // n, folds - 1)
    else:
        fold_id = np.arange(n) % folds

    cv_err = np.zeros(lambdas.size)
    for f in range(folds):
        tr, te = fold_id != f, fold_id == f
        xm = X[tr].mean(axis=0)
        mu = y[tr].mean()
        Xtr = X[tr] - xm
        beta = None
        for i, lam in enumerate(lambdas):      # warm start down the path
            beta, _ = _cd_lasso(Xtr, y[tr] - mu, lam, beta)
            pred = (X[te] - xm) @ beta + mu
            cv_err[i] += float(np.sum((y[te] - pred) ** 2))
    cv_err /= n
    best = int(np.argmin(cv_err))

    xm = X.mean(axis=0)
    mu = y.mean()
    beta = None
    for lam in lambdas[: best + 1]:
        beta, converged = _cd_lasso(X - xm, y - mu, lam, beta)
    lam_best = float(lambdas[best])
    return LinearModel(beta, float(mu - xm @ beta), feature_names,
                       {"model": "lasso", "lambda": lam_best, "converged": converged,
                        "cv_error": cv_err.tolist(), "lambda_grid": lambdas.tolist()})


def lasso_kkt_violation(X, y, model: LinearModel) -> float:
    """Worst KKT residual of the stationarity conditions at the fitted solution."""
    X, y = _check_xy(X, y)
    n = X.shape[0]
    lam = model.meta["lambda"]
    r = (y - model.intercept) - X @ model.coefficients
    g = np.abs(X.T @ r) / n
    active = model.coefficients != 0
    worst = 0.0
    if active.any():
        worst = float(np.max(np.abs(g[active] - lam)))
    if (~active).any():
        worst = max(worst, float(np.max(g[~active] - lam)))
    return worst


def pcr_fit(X, y, variance_target: float = 0.90, feature_names=None) -> LinearModel:
    """Regression on the fewest leading principal components reaching the
    variance target, mapped back to feature space."""
    X, y = _check_xy(X, y)
    n, p = X.shape
    xm = X.mean(axis=0)
    Xc = X - xm
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    var = svals ** 2
    total = var.sum()
    if total == 0.0:
        return LinearModel(np.zeros(p), float(y.mean()), feature_names,
                           {"model": "pcr", "n_components": 0})
    ratio = np.cumsum(var) / total
    k = int(np.searchsorted(ratio, variance_target - 1e-12) + 1)
    k = min(k, int(np.sum(svals > svals[0] * 1e-12)))
    k = max(k, 1)
    scores = Xc @ vt[:k].T
    gamma, *_ = np.linalg.lstsq(scores, y - y.mean(), rcond=None)
    beta = vt[:k].T @ gamma
    return LinearModel(beta, float(y.mean() - xm @ beta), feature_names,
                       {"model": "pcr", "n_components": k,
                        "explained_variance": float(ratio[k - 1])})


def feature_importance(models: list[LinearModel], feature_names: list[str]):
    """Across instruments: median rank of |coefficient| plus nonzero counts.

    Rank 1 = smallest magnitude; ties (all the zeros) share the minimum
    rank of their group, so irrelevant features pin to rank 1.
    """
    if not models:
        raise ValueError("need at least one fitted model")
    p = len(feature_names)
    ranks = np.zeros((len(models), p))
    nonzero = np.zeros(p, dtype=np.int64)
    for i, m in enumerate(models):
        c = np.abs(m.coefficients)
        if c.size != p:
            raise ValueError("coefficient/feature count mismatch")
        order = np.argsort(c, kind="stable")
        r = np.empty(p)
        r[order] = np.arange(1, p + 1)
        # ties take the minimum rank of their group
        for v in np.unique(c):
            sel = c == v
            r[sel] = r[sel].min()
        ranks[i] = r
        nonzero += (m.coefficients != 0).astype(np.int64)
    med = np.median(ranks, axis=0)
    order = np.argsort(-med, kind="stable")
    return [(feature_names[j], float(med[j]), int(nonzero[j])) for j in order]


def export_importance_csv(table, path) -> None:
    lines = ["feature,median_rank,nonzero_count"]
    lines += [f"{name},{rank:g},{count}" for name, rank, count in table]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
