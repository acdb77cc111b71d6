"""Training losses and evaluation metrics.

Two flavors live here: plain numpy versions used for evaluation/backtest
reporting, and tape-based versions (suffix ``_t``) used as training
objectives, built from the autodiff operator set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

ANNUALIZATION_DAYS = 252.0
EXP_CLAMP = 50.0


class Task:
    RETURN = "RETURN"
    VOLATILITY = "VOLATILITY"
    VOLUME = "VOLUME"


@dataclass
class LossConfig:
    epsilon: float = 1e-6
    alpha: float = 1.0
    task: str = Task.RETURN

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


# -- numpy metrics ------------------------------------------------------


def _check_lengths(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError("label/forecast length mismatch")
    if y.size == 0:
        raise ValueError("empty input")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _check_lengths(y, yhat)
    return float(np.mean((y - yhat) ** 2))


def mae(y, yhat) -> float:
    y, yhat = _check_lengths(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def sr_loss(y, yhat, epsilon: float = 1e-6) -> float:
    """Differentiable (smoothed-sign) negative Sharpe surrogate."""
    y, yhat = _check_lengths(y, yhat)
    if y.size < 2:
        raise ValueError("need at least 2 observations")
    r = y * np.tanh(yhat / epsilon)
    s = np.sqrt(np.mean((r - r.mean()) ** 2))
    return float(-r.mean() / (s + epsilon))


def mixed_loss(y, yhat, cfg: LossConfig) -> float:
    return mse(y, yhat) + cfg.alpha * sr_loss(y, yhat, cfg.epsilon)


class ClampCounter:
    """Counts exponent-argument clamps applied inside qlike/hmse."""

    def __init__(self):
        self.count = 0


def _clamped_diff(y, yhat, counter: ClampCounter | None):
    d = y - yhat
    n_out = int(np.sum(np.abs(d) > EXP_CLAMP))
    if n_out and counter is not None:
        counter.count += n_out
    return np.clip(d, -EXP_CLAMP, EXP_CLAMP)


def qlike(y, yhat, counter: ClampCounter | None = None) -> float:
    """Quasi-likelihood loss on log realized variances."""
    y, yhat = _check_lengths(y, yhat)
    d = _clamped_diff(y, yhat, counter)
    return float(np.mean(np.exp(d) - d - 1.0))


def hmse(y, yhat, counter: ClampCounter | None = None) -> float:
    """Heteroskedasticity-adjusted MSE on log realized variances."""
    y, yhat = _check_lengths(y, yhat)
    d = _clamped_diff(yhat, y, counter)  # ratio exp(yhat)/exp(y)
    return float(np.mean((1.0 - np.exp(d)) ** 2))


# -- P&L metrics --------------------------------------------------------


def daily_pnl(returns_by_day: list[np.ndarray], signals_by_day: list[np.ndarray]):
    """Per-day sum of return * sign(forecast). Zero forecast means flat.

    Returns (pnl array, empty-day flags).
    """
    if len(returns_by_day) != len(signals_by_day):
        raise ValueError("day count mismatch")
    pnl = np.zeros(len(returns_by_day))
    empty = np.zeros(len(returns_by_day), dtype=bool)
    for i, (r, s) in enumerate(zip(returns_by_day, signals_by_day)):
        r = np.asarray(r, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        if r.size == 0:
            empty[i] = True
            continue
        pnl[i] = float(np.sum(r * np.sign(s)))
    return pnl, empty


def sharpe(pnl) -> float | None:
    """Annualized Sharpe ratio of daily P&L; None when sd is zero."""
    pnl = np.asarray(pnl, dtype=np.float64)
    if pnl.size < 2:
        raise ValueError("need at least 2 days")
    s = pnl.std(ddof=1)
    if s == 0.0:
        return None
    return float(pnl.mean() * np.sqrt(ANNUALIZATION_DAYS) / s)


def ppd(pnl) -> float:
    """Mean daily P&L (multiply by 1e4 for basis-point table entries)."""
    pnl = np.asarray(pnl, dtype=np.float64)
    if pnl.size == 0:
        raise ValueError("empty input")
    return float(pnl.mean())


# -- tape-based training losses ----------------------------------------


def mse_t(yhat: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    d = ad.sub(yhat, y)
    return ad.mean(ad.mul(d, d))


def mae_t(yhat: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    return ad.mean(ad.absolute(ad.sub(yhat, y)))


def sr_loss_t(yhat: ad.Tensor, y: np.ndarray, epsilon: float = 1e-6) -> ad.Tensor:
    r = ad.mul(ad.tanh(ad.scalar_mul(yhat, 1.0 / epsilon)), y)
    denom = ad.add(ad.sd(r), ad.Tensor(epsilon))
    return ad.scalar_mul(ad.div(ad.mean(r), denom), -1.0)


def mixed_loss_t(yhat: ad.Tensor, y: np.ndarray, cfg: LossConfig) -> ad.Tensor:
    out = mse_t(yhat, y)
    if cfg.alpha > 0:
        out = ad.add(out, ad.scalar_mul(sr_loss_t(yhat, y, cfg.epsilon), cfg.alpha))
    return out


def qlike_t(yhat: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    d = ad.clip(ad.sub(ad.Tensor(y), yhat), -EXP_CLAMP, EXP_CLAMP)
    return ad.mean(ad.sub(ad.sub(ad.exp(d), d), ad.Tensor(1.0)))


TRAIN_LOSSES = {
    "MSE": lambda yhat, y, cfg: mse_t(yhat, y),
    "MAE": lambda yhat, y, cfg: mae_t(yhat, y),
    "SR": lambda yhat, y, cfg: sr_loss_t(yhat, y, cfg.epsilon),
    "MIXED": mixed_loss_t,
    "QLIKE": lambda yhat, y, cfg: qlike_t(yhat, y),
}

# Default objective per forecast task.
DEFAULT_TASK_LOSS = {
    Task.RETURN: "MIXED",
    Task.VOLATILITY: "QLIKE",
    Task.VOLUME: "MAE",
}
