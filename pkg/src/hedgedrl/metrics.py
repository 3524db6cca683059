"""Training rewards and evaluation metrics.

Conventions: 250 trading days a year, population standard deviations,
arithmetic annualisation (``mean * 250``) for the Sharpe/Sortino ratios.
Ratios whose denominator vanishes raise :class:`UndefinedMetric`.
"""
from __future__ import annotations

import math
from enum import Enum

import numpy as np

from . import autodiff as ad
from .errors import DomainError, UndefinedMetric

TRADING_DAYS = 250
# standard deviations below this are treated as exactly zero
VOL_TOL = 1e-12


class RewardKind(str, Enum):
    NET_PROFIT = "net_profit"
    SHARPE = "sharpe"
    SORTINO = "sortino"


def _values(path) -> np.ndarray:
    values = np.asarray(getattr(path, "values", path), dtype=float)
    if values.size == 0:
        raise DomainError("empty portfolio path")
    return values


def net_profit(path) -> float:
    values = _values(path)
    return float(values[-1] / values[0] - 1.0)


def annualized_return(path) -> float:
    """Compounded annual growth rate of the value path (one value per day)."""
    values = _values(path)
    n_days = values.size - 1
    if n_days == 0:
        return 0.0
    return float((values[-1] / values[0]) ** (TRADING_DAYS / n_days) - 1.0)


def annualized_sharpe(daily_returns) -> float:
    r = np.asarray(daily_returns, dtype=float)
    if r.size < 2:
        raise DomainError("Sharpe needs at least two returns")
    sd = r.std()
    if sd <= VOL_TOL:
        raise UndefinedMetric("Sharpe ratio undefined: zero volatility")
    return float(r.mean() * TRADING_DAYS / (sd * math.sqrt(TRADING_DAYS)))


def downside_deviation(daily_returns) -> float:
    r = np.asarray(daily_returns, dtype=float)
    neg = r[r < 0]
    if neg.size == 0:
        raise UndefinedMetric("Sortino ratio undefined: no negative returns")
    sd = neg.std()
    if sd <= VOL_TOL:
        raise UndefinedMetric("Sortino ratio undefined: constant downside returns")
    return float(math.sqrt(TRADING_DAYS) * sd)


def sortino(daily_returns) -> float:
    r = np.asarray(daily_returns, dtype=float)
    return float(r.mean() * TRADING_DAYS / downside_deviation(r))


def max_drawdown(path) -> float:
    values = _values(path)
    running = np.maximum.accumulate(values)
    return float(np.max((running - values) / running))


def safe(metric, *args):
    """Metric value or None when undefined; for report tables."""
    try:
        return metric(*args)
    except UndefinedMetric:
        return None


def reward_node(kind, returns: ad.Node) -> ad.Node:
    """Differentiable reward over a node of daily portfolio returns.

    Raises :class:`UndefinedMetric` for degenerate Sharpe/Sortino episodes.
    """
    kind = RewardKind(kind)
    if kind is RewardKind.NET_PROFIT:
        growth = ad.add(returns, 1.0)
        if np.any(growth.value <= 0):
            raise UndefinedMetric("portfolio value hit zero; net profit reward undefined")
        return ad.sub(ad.exp(ad.sum_(ad.log(growth))), 1.0)
    annual_mean = ad.scale(ad.mean(returns), TRADING_DAYS)
    if kind is RewardKind.SHARPE:
        sd = ad.std_dev(returns)
    else:
        idx = np.flatnonzero(returns.value < 0)
        if idx.size < 2:
            raise UndefinedMetric("Sortino reward undefined: fewer than two losing days")
        sd = ad.std_dev(ad.getitem(returns, idx))
    if float(sd.value) <= VOL_TOL:
        raise UndefinedMetric(f"{kind.value} reward undefined: zero deviation")
    return ad.div(annual_mean, ad.scale(sd, math.sqrt(TRADING_DAYS)))


def metrics_row(values, returns) -> dict:
    """Report row: compounded annual return, Sortino, Sharpe, max drawdown."""
    return {
        "return_ann": annualized_return(values),
        "sharpe": safe(annualized_sharpe, returns),
        "sortino": safe(sortino, returns),
        "max_dd": max_drawdown(values),
    }
