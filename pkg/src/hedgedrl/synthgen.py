"""Regime-switching synthetic markets with an observable (noisy) context.

A hidden Markov chain picks the regime each day; the risky asset and the
hedging strategies draw correlated Gaussian returns from that regime's
parameters. Context series are EMA-smoothed one-hot regime indicators plus
Gaussian noise, so they predict the regime to a tunable degree.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError
from .features import ContextPanel, PricePanel

log = logging.getLogger(__name__)

DAILY_RETURN_FLOOR = -0.5
START_DATE = "2000-01-03"


@dataclass(frozen=True)
class RegimeSpec:
    """Per-regime daily parameters; column 0 is the risky asset."""
    means: np.ndarray          # (K, 1 + l)
    vols: np.ndarray           # (K, 1 + l)
    corrs: np.ndarray          # (K, 1 + l, 1 + l)
    transition: np.ndarray     # (K, K)
    context_noise: float = 0.1
    context_signal: float = 1.0
    context_smoothing: float = 0.0
    strategy_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        k, n = means.shape
        for name in ("means", "vols", "corrs", "transition"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.vols.shape != (k, n) or self.corrs.shape != (k, n, n):
            raise ConfigError("regime means/vols/corrs shapes disagree")
        if np.any(self.vols < 0):
            raise ConfigError("volatilities must be >= 0")
        p = self.transition
        if p.shape != (k, k) or np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-12):
            raise ConfigError("transition matrix must be row-stochastic")
        for i, c in enumerate(self.corrs):
            if not np.allclose(c, c.T) or not np.allclose(np.diag(c), 1.0):
                raise ConfigError(f"regime {i}: correlation must be symmetric with unit diagonal")
            if np.linalg.eigvalsh(c).min() < -1e-10:
                raise ConfigError(f"regime {i}: correlation matrix is not PSD")
        if self.context_noise < 0 or not 0 <= self.context_smoothing < 1:
            raise ConfigError("context noise must be >= 0 and smoothing in [0, 1)")
        if not self.strategy_names:
            object.__setattr__(self, "strategy_names", tuple(f"hedge{i + 1}" for i in range(n - 1)))
        if len(self.strategy_names) != n - 1:
            raise ConfigError("one strategy name per non-risky column required")

    @property
    def n_regimes(self) -> int:
        return self.means.shape[0]

    @property
    def n_strategies(self) -> int:
        return self.means.shape[1] - 1

    def stationary(self) -> np.ndarray:
        k = self.n_regimes
        a = np.vstack([self.transition.T - np.eye(k), np.ones((1, k))])
        b = np.r_[np.zeros(k), 1.0]
        pi = np.linalg.lstsq(a, b, rcond=None)[0]
        pi = np.clip(pi, 0, None)
        return pi / pi.sum()


def _chol(corr):
    w, v = np.linalg.eigh(corr)
    return v * np.sqrt(np.clip(w, 0, None))


def sample(spec: RegimeSpec, n_days: int, seed: int):
    """Raw arrays ``(returns (n, 1+l), context (n, K), regimes (n,))``; row 0 has zero return.

    Draw order from one generator: initial regime, transition uniforms,
    return shocks, context noise.
    """
    if n_days < 1:
        raise ConfigError("n_days must be >= 1")
    rng = np.random.default_rng(seed)
    k, n = spec.means.shape
    regimes = np.empty(n_days, dtype=int)
    regimes[0] = rng.choice(k, p=spec.stationary())
    u = rng.random(n_days - 1)
    cum = np.cumsum(spec.transition, axis=1)
    for t in range(1, n_days):
        regimes[t] = min(int(np.searchsorted(cum[regimes[t - 1]], u[t - 1], side="right")), k - 1)

    z = rng.standard_normal((n_days, n))
    factors = np.stack([_chol(c) for c in spec.corrs])          # (K, n, n)
    shocks = np.einsum("tij,tj->ti", factors[regimes], z)
    rets = spec.means[regimes] + spec.vols[regimes] * shocks
    rets[0] = 0.0
    clamped = rets < DAILY_RETURN_FLOOR
    if clamped.any():
        log.warning("clamped %d daily returns at %.0f%%", int(clamped.sum()),
                    100 * DAILY_RETURN_FLOOR)
        rets = np.maximum(rets, DAILY_RETURN_FLOOR)

    indicator = np.eye(k)[regimes]
    if spec.context_smoothing > 0:
        a = spec.context_smoothing
        smooth = np.empty_like(indicator)
        smooth[0] = indicator[0]
        for t in range(1, n_days):
            smooth[t] = a * smooth[t - 1] + (1 - a) * indicator[t]
        indicator = smooth
    noise = rng.standard_normal((n_days, k)) * spec.context_noise
    return rets, spec.context_signal * indicator + noise, regimes


def generate(spec: RegimeSpec, n_days: int, seed: int, start: str = START_DATE):
    """Sample ``(PricePanel, ContextPanel, regimes)`` on a business-day calendar."""
    rets, context, regimes = sample(spec, n_days, seed)
    k = spec.n_regimes
    prices = np.cumprod(1.0 + rets, axis=0)
    dates = pd.bdate_range(start, periods=n_days)
    names = ["risky", *spec.strategy_names]
    price_panel = PricePanel(pd.DataFrame(prices, index=dates, columns=names), "risky",
                             tuple(spec.strategy_names))
    ctx = ContextPanel(pd.DataFrame(context, index=dates,
                                    columns=[f"regime_signal{i + 1}" for i in range(k)]))
    return price_panel, ctx, regimes


def _persistent(k: int, mean_duration: float) -> np.ndarray:
    stay = 1.0 - 1.0 / mean_duration
    off = (1.0 - stay) / (k - 1) if k > 1 else 0.0
    p = np.full((k, k), off)
    np.fill_diagonal(p, stay if k > 1 else 1.0)
    return p


def _corr(n: int, rho: float = 0.0) -> np.ndarray:
    c = np.full((n, n), rho)
    np.fill_diagonal(c, 1.0)
    return c


def separable(mean_duration: float = 10.0, context_noise: float = 0.3,
              context_signal: float = 1.0, n_strategies: int = 4) -> RegimeSpec:
    """Two regimes; a different strategy pays in each, losers bleed."""
    l = n_strategies
    calm = np.full(l, -0.0008)
    stress = np.full(l, -0.0008)
    calm[0], stress[1 % l] = 0.0015, 0.0015
    means = np.array([np.r_[0.0006, calm], np.r_[-0.0010, stress]])
    vols = np.array([np.r_[0.008, np.full(l, 0.006)], np.r_[0.016, np.full(l, 0.006)]])
    return RegimeSpec(means, vols, np.stack([_corr(l + 1)] * 2), _persistent(2, mean_duration),
                      context_noise=context_noise, context_signal=context_signal)


def crisis() -> RegimeSpec:
    """Long calm regime where hedges cost carry; rare crashes where they pay."""
    l = 4
    means = np.array([np.r_[0.0005, np.full(l, -0.0002)],
                      np.r_[-0.0040, 0.0030, 0.0045, 0.0010, 0.0020]])
    vols = np.array([np.r_[0.008, np.full(l, 0.004)], np.r_[0.030, 0.010, 0.020, 0.008, 0.006]])
    corr_calm = _corr(l + 1, 0.1)
    corr_crash = _corr(l + 1, 0.3)
    p = np.array([[0.995, 0.005], [0.05, 0.95]])
    return RegimeSpec(means, vols, np.stack([corr_calm, corr_crash]), p,
                      context_noise=0.2, context_smoothing=0.5)


def dominant(n_strategies: int = 4, drift: float = 0.10) -> RegimeSpec:
    """Noise-free market: strategy 1 earns +drift/yr, the others -drift/yr."""
    l = n_strategies
    means = np.r_[0.0002, drift / 250, np.full(l - 1, -drift / 250)][None, :]
    return RegimeSpec(means, np.zeros((1, l + 1)), _corr(l + 1)[None], np.ones((1, 1)),
                      context_noise=0.0)


def canned_scenarios() -> dict[str, RegimeSpec]:
    return {
        "separable": separable(),
        "crisis": crisis(),
        "no-signal": separable(context_signal=0.0, context_noise=1.0),
        "dominant": dominant(),
    }


PRESET_NAMES = ("separable", "crisis", "no-signal", "dominant")
