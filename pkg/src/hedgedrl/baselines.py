"""Comparison allocators: risky-only, Markowitz, follow-the-winner, follow-the-loser.

Baselines run at leverage 1 and rebalance on a calendar (annual by default).
Each decision is dated ``1 + lag`` trading days before the date it should
take effect, so the simulator applies it exactly on that date.
"""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError, InfeasibleProblem, RangeError
from .metrics import TRADING_DAYS
from .simulator import Decisions

log = logging.getLogger(__name__)

BASELINES = ("risky", "markowitz", "winner", "loser")
MAX_ENUM_ASSETS = 14
FEAS_TOL = 1e-12


@dataclass(frozen=True)
class BaselineConfig:
    lookback: int = TRADING_DAYS       # follow winner / loser window
    cov_window: int = TRADING_DAYS     # Markowitz estimation window
    r_min: float | None = None         # None: trailing equal-weight return
    rebalance: str = "annual"

    def __post_init__(self):
        if self.lookback < 1 or self.cov_window < 2:
            raise ConfigError("lookback must be >= 1 and covariance window >= 2")
        if self.rebalance not in ("annual", "monthly"):
            raise ConfigError("rebalance must be 'annual' or 'monthly'")


@dataclass(frozen=True)
class MarkowitzInput:
    mu: np.ndarray
    sigma: np.ndarray
    r_min: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.shape != (mu.size, mu.size):
            raise ConfigError("covariance shape does not match expected returns")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(sigma).max())):
            raise ConfigError("covariance must be symmetric")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", (sigma + sigma.T) / 2)

    @classmethod
    def from_returns(cls, window, r_min=None) -> "MarkowitzInput":
        """Annualised mean and covariance (population) of a window of daily returns."""
        r = np.asarray(window, dtype=float)
        mu = r.mean(axis=0) * TRADING_DAYS
        dev = r - r.mean(axis=0)
        sigma = dev.T @ dev / len(r) * TRADING_DAYS
        return cls(mu, sigma, float(mu.mean()) if r_min is None else r_min)


def repaired_covariance(sigma: np.ndarray) -> np.ndarray:
    """Diagonal loading of ``1e-8 * trace / l`` when sigma is not positive definite."""
    l = sigma.shape[0]
    load = 1e-8 * max(np.trace(sigma), 1e-300) / l
    low = np.linalg.eigvalsh(sigma).min()
    if low > load:
        return sigma
    if low < -1e-10:
        log.warning("covariance has eigenvalue %.3g; loading the diagonal", low)
    return sigma + (load + max(-low, 0.0)) * np.eye(l)


def _face_minimizer(sigma, mu, support, r_min, active):
    s = np.asarray(support)
    k = len(s)
    rows = [np.ones(k)] + ([mu[s]] if active else [])
    a = np.array(rows)
    m = len(rows)
    kkt = np.zeros((k + m, k + m))
    kkt[:k, :k] = 2 * sigma[np.ix_(s, s)]
    kkt[:k, k:] = a.T
    kkt[k:, :k] = a
    rhs = np.r_[np.zeros(k), 1.0, [r_min] if active else []]
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    if not np.allclose(kkt @ sol, rhs, atol=1e-10):
        return None
    w = np.zeros(len(mu))
    w[s] = sol[:k]
    return w


def markowitz_weights(inp: MarkowitzInput) -> np.ndarray:
    """Long-only minimum-variance weights with a return floor.

    Exact: enumerates every support and whether the return constraint binds,
    solves each face's KKT system and keeps the best feasible candidate.
    """
    mu, l = inp.mu, inp.mu.size
    if l > MAX_ENUM_ASSETS:
        raise ConfigError(f"exact Markowitz supports at most {MAX_ENUM_ASSETS} strategies")
    if inp.r_min > mu.max() + FEAS_TOL:
        raise InfeasibleProblem(f"r_min {inp.r_min:.6g} exceeds the best expected return "
                                f"{mu.max():.6g}")
    sigma = repaired_covariance(inp.sigma)
    best, best_obj = None, np.inf
    for k in range(1, l + 1):
        for support in itertools.combinations(range(l), k):
            for active in (False, True):
                w = _face_minimizer(sigma, mu, support, inp.r_min, active)
                if w is None or w.min() < -1e-12 or mu @ w < inp.r_min - 1e-10:
                    continue
                obj = w @ sigma @ w
                if obj < best_obj - 1e-15:
                    best, best_obj = w, obj
    if best is None:
        raise InfeasibleProblem("no feasible face found")
    best = np.clip(best, 0.0, None)
    return best / best.sum()


def _pick(scores: np.ndarray, kind: str) -> np.ndarray:
    # np.argmax/argmin return the first extreme: ties go to the lowest index
    i = int(np.argmax(scores) if kind == "winner" else np.argmin(scores))
    out = np.zeros(scores.size)
    out[i] = 1.0
    return out


def trailing_cumulative(returns, lookback: int) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    if len(r) < lookback:
        raise RangeError(f"need {lookback} days of history, got {len(r)}")
    return np.prod(1.0 + r[-lookback:], axis=0) - 1.0


def follow_winner(returns, lookback: int = TRADING_DAYS) -> np.ndarray:
    return _pick(trailing_cumulative(returns, lookback), "winner")


def follow_loser(returns, lookback: int = TRADING_DAYS) -> np.ndarray:
    return _pick(trailing_cumulative(returns, lookback), "loser")


def rebalance_dates(calendar: pd.DatetimeIndex, start, end, freq: str = "annual"):
    """``start`` plus the first trading day of every later year (or month) up to ``end``."""
    days = calendar[(calendar >= pd.Timestamp(start)) & (calendar <= pd.Timestamp(end))]
    if len(days) == 0:
        return days
    key = days.year if freq == "annual" else days.year * 12 + days.month
    first = np.r_[True, key[1:] != key[:-1]]
    return days[first]


def baseline_weights(kind: str, history: np.ndarray, cfg: BaselineConfig) -> np.ndarray:
    """Weights from the daily strategy returns available at decision time."""
    l = history.shape[1]
    if kind == "risky":
        return np.full(l, 1.0 / l)
    if kind in ("winner", "loser"):
        return _pick(trailing_cumulative(history, cfg.lookback), kind)
    if kind == "markowitz":
        if len(history) < cfg.cov_window:
            raise RangeError(f"Markowitz needs {cfg.cov_window} days of history, got {len(history)}")
        inp = MarkowitzInput.from_returns(history[-cfg.cov_window:], cfg.r_min)
        try:
            return markowitz_weights(inp)
        except InfeasibleProblem as exc:
            log.warning("%s; using the max-return vertex", exc)
            return _pick(inp.mu, "winner")
    raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


def baseline_allocator(kind: str, returns: pd.DataFrame, effective, lag: int,
                       cfg: BaselineConfig = BaselineConfig()) -> Decisions:
    """Decisions that take effect on each date in ``effective``.

    ``returns`` holds daily strategy returns on the full calendar (a leading
    NaN row is allowed); each decision only reads rows up to its own date.
    """
    calendar = returns.index
    values = returns.to_numpy(dtype=float)
    pos = calendar.get_indexer(pd.DatetimeIndex(effective))
    if (pos < 0).any():
        raise RangeError("rebalance date not on the return calendar")
    dpos = pos - 1 - lag
    if len(dpos) and dpos.min() < 0:
        raise RangeError("rebalance date too early for the action lag")
    weights, leverage = [], []
    for p in dpos:
        hist = values[:p + 1]
        hist = hist[np.isfinite(hist).all(axis=1)]
        weights.append(baseline_weights(kind, hist, cfg))
        leverage.append(0.0 if kind == "risky" else 1.0)
    return Decisions(calendar[dpos], np.array(weights).reshape(len(dpos), -1),
                     np.array(leverage), tuple(returns.columns))


def write_weight_history(rows, path):
    """Rows of ``(date, model, strategy, weight)``; written in the given order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "model", "strategy", "weight"])
        for date, model, strategy, weight in rows:
            w.writerow([pd.Timestamp(date).strftime("%Y-%m-%d"), model, strategy,
                        repr(float(weight))])


def weight_rows(model: str, dates, weights: np.ndarray, strategies):
    for date, row in zip(dates, weights):
        for name, value in zip(strategies, row):
            yield date, model, name, value
