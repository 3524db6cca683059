"""Hedging-overlay portfolio simulation.

Daily portfolio return on day ``d``::

    risky[d] + sum_i exposure[d, i] * strategy[d, i] - cost_rate * turnover[d]

where ``exposure[d]`` is ``leverage * weights`` of the latest decision dated at
or before ``d - 1 - lag`` and turnover is the L1 change in exposure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import autodiff as ad
from .errors import ConfigError, ContractError

CAP_TOL = 1e-9


@dataclass(frozen=True)
class EpisodeConfig:
    lag: int = 1
    cost_rate: float = 0.0005
    leverage_cap: float = 3.0
    initial_value: float = 1.0

    def __post_init__(self):
        if self.lag not in (0, 1):
            raise ConfigError(f"action lag must be 0 or 1, got {self.lag}")
        if self.cost_rate < 0:
            raise ConfigError("cost rate must be >= 0")
        if self.initial_value <= 0:
            raise ConfigError("initial value must be > 0")


@dataclass
class Decisions:
    """Dated allocation decisions: weights ``(n, l)`` and leverage ``(n,)``."""
    dates: pd.DatetimeIndex
    weights: np.ndarray
    leverage: np.ndarray
    strategies: tuple[str, ...] = ()

    def __post_init__(self):
        self.dates = pd.DatetimeIndex(self.dates)
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.leverage = np.asarray(self.leverage, dtype=float).reshape(-1)
        if not (len(self.dates) == len(self.weights) == len(self.leverage)):
            raise ContractError("decision dates, weights and leverage differ in length")
        if len(self.dates) > 1 and not self.dates.is_monotonic_increasing:
            raise ContractError("decision dates must be increasing")

    @property
    def exposures(self) -> np.ndarray:
        return self.leverage[:, None] * self.weights

    def __len__(self):
        return len(self.dates)

    @classmethod
    def concat(cls, parts) -> "Decisions":
        parts = [p for p in parts if len(p)]
        return cls(pd.DatetimeIndex(np.concatenate([p.dates.values for p in parts])),
                   np.vstack([p.weights for p in parts]),
                   np.concatenate([p.leverage for p in parts]), parts[0].strategies)


@dataclass
class PortfolioPath:
    """Values include the starting point: ``values[0]`` precedes ``dates[0]``."""
    start: pd.Timestamp
    dates: pd.DatetimeIndex
    values: np.ndarray
    returns: np.ndarray
    exposures: np.ndarray
    turnover: np.ndarray
    cost: np.ndarray
    blown_up: bool = False
    strategies: tuple[str, ...] = field(default=())

    def to_frame(self) -> pd.DataFrame:
        idx = pd.DatetimeIndex([self.start]).append(self.dates)
        return pd.DataFrame({"value": self.values,
                             "return": np.r_[0.0, self.returns],
                             "turnover": np.r_[0.0, self.turnover],
                             "cost": np.r_[0.0, self.cost]}, index=idx)

    def to_csv(self, path):
        df = self.to_frame()
        df.index = df.index.strftime("%Y-%m-%d")
        df.index.name = "date"
        df.to_csv(path, float_format="%.17g")


def _positions(calendar: pd.DatetimeIndex, dates, what: str) -> np.ndarray:
    pos = calendar.get_indexer(pd.DatetimeIndex(dates))
    if (pos < 0).any():
        bad = pd.DatetimeIndex(dates)[pos < 0][0]
        raise ContractError(f"{what} date {bad:%Y-%m-%d} not on the return calendar")
    return pos


def exposure_schedule(decisions: Decisions, calendar: pd.DatetimeIndex, return_dates,
                      lag: int) -> np.ndarray:
    """Exposure effective on each of ``return_dates``.

    A decision dated ``t`` (calendar position) applies from position
    ``t + 1 + lag`` until superseded; earlier days carry zero exposure.
    """
    dpos = _positions(calendar, decisions.dates, "decision")
    rpos = _positions(calendar, return_dates, "return")
    which = np.searchsorted(dpos + 1 + lag, rpos, side="right") - 1
    exp = decisions.exposures
    out = np.zeros((len(rpos), exp.shape[1]))
    live = which >= 0
    out[live] = exp[which[live]]
    return out


def turnover_of(exposures: np.ndarray, previous=None) -> np.ndarray:
    prev = np.zeros(exposures.shape[1]) if previous is None else np.asarray(previous)
    shifted = np.vstack([prev[None, :], exposures[:-1]])
    return np.abs(exposures - shifted).sum(axis=1)


def simulate(exposures, strategy_returns, risky_returns, cost_rate: float,
             initial_value: float = 1.0, previous=None):
    """Daily returns, turnover and cost drag for a fixed exposure schedule."""
    exposures = np.asarray(exposures, dtype=float)
    turnover = turnover_of(exposures, previous)
    cost = cost_rate * turnover
    daily = np.asarray(risky_returns) + (exposures * np.asarray(strategy_returns)).sum(axis=1) - cost
    values = initial_value * np.concatenate([[1.0], np.cumprod(1.0 + daily)])
    return daily, turnover, cost, values


def path_from_exposures(exposures, dates, start, strategy_returns, risky_returns,
                        config: EpisodeConfig, strategies=()) -> PortfolioPath:
    total = np.abs(exposures).sum(axis=1) if len(exposures) else np.zeros(0)
    if np.any(total > config.leverage_cap + CAP_TOL):
        raise ContractError(f"exposure {total.max():.6f} exceeds leverage cap "
                            f"{config.leverage_cap}")
    daily, turnover, cost, values = simulate(exposures, strategy_returns, risky_returns,
                                             config.cost_rate, config.initial_value)
    return PortfolioPath(pd.Timestamp(start), pd.DatetimeIndex(dates), values, daily,
                         np.asarray(exposures), turnover, cost,
                         blown_up=bool(np.any(values <= 0)), strategies=tuple(strategies))


def run_episode(decisions: Decisions, strategy_returns: pd.DataFrame, risky_returns: pd.Series,
                config: EpisodeConfig, start=None, end=None) -> PortfolioPath:
    """Simulate the overlay on the return days in ``(start, end]``.

    ``start`` defaults to the first decision date; ``end`` to the last
    calendar date. Returns are indexed by date (return earned on that day).
    """
    calendar = strategy_returns.index
    if not calendar.equals(risky_returns.index):
        raise ContractError("strategy and risky return calendars differ")
    if len(decisions) == 0:
        raise ContractError("no decisions to simulate")
    start = decisions.dates[0] if start is None else pd.Timestamp(start)
    end = calendar[-1] if end is None else pd.Timestamp(end)
    if start not in calendar or end not in calendar:
        raise ContractError("episode bounds must lie on the return calendar")
    days = calendar[(calendar > start) & (calendar <= end)]
    exp = exposure_schedule(decisions, calendar, days, config.lag)
    return path_from_exposures(exp, days, start, strategy_returns.loc[days].to_numpy(),
                               risky_returns.loc[days].to_numpy(), config,
                               decisions.strategies or tuple(strategy_returns.columns))


def daily_returns_node(exposures: ad.Node, strategy_returns: np.ndarray,
                       risky_returns: np.ndarray, cost_rate: float) -> ad.Node:
    """Differentiable twin of :func:`simulate` (zero exposure before day 0)."""
    gross = ad.add(ad.sum_(ad.mul(exposures, strategy_returns), axis=1), risky_returns)
    if cost_rate == 0:
        return gross
    first = ad.getitem(exposures, slice(0, 1))
    steps = ad.concat([first, ad.sub(ad.getitem(exposures, slice(1, None)),
                                     ad.getitem(exposures, slice(None, -1)))], axis=0)
    turnover = ad.sum_(ad.abs_(steps), axis=1)
    return ad.sub(gross, ad.scale(turnover, cost_rate))
