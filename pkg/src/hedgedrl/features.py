"""Price/context ingestion and the lagged observation tensors.

Convention: every array is indexed on the *price calendar*. Row ``t`` of the
returns array is ``p_t / p_{t-1} - 1`` (row 0 is NaN) and row ``t`` of the
volatility array uses the ``d`` returns ending at ``t`` (rows ``< d`` are NaN).
An observation at ``t`` therefore needs ``t >= max(lags) + d``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, RangeError


@dataclass(frozen=True)
class PricePanel:
    prices: pd.DataFrame
    risky: str
    strategies: tuple[str, ...]

    def __post_init__(self):
        df = self.prices
        missing = [c for c in (self.risky, *self.strategies) if c not in df.columns]
        if missing:
            raise DataError(f"price panel lacks columns {missing}")
        if not self.strategies:
            raise ConfigError("at least one hedging strategy is required")
        if not df.index.is_monotonic_increasing or df.index.has_duplicates:
            raise DataError("price dates must be strictly increasing")
        cols = df[[self.risky, *self.strategies]]
        if cols.isna().any().any():
            bad = cols.isna().stack()
            date, name = bad[bad].index[0]
            raise DataError(f"missing price for {name} on {date:%Y-%m-%d}")
        check_positive(cols)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.prices.index

    def strategy_prices(self) -> pd.DataFrame:
        return self.prices[list(self.strategies)]

    def risky_prices(self) -> pd.Series:
        return self.prices[self.risky]


@dataclass(frozen=True)
class ContextPanel:
    values: pd.DataFrame

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.values.columns)


@dataclass(frozen=True)
class ObservationSpec:
    lags: tuple[int, ...] = (0, 1, 2, 3, 4, 20, 60)
    vol_window: int = 20
    context_lags: tuple[int, ...] = (0, 1, 2, 3, 4, 20, 60)

    def __post_init__(self):
        for name in ("lags", "context_lags"):
            lags = tuple(getattr(self, name))
            if not lags or lags[0] != 0 or any(b <= a for a, b in zip(lags, lags[1:])):
                raise ConfigError(f"{name} must start at 0 and be strictly increasing: {lags}")
        if self.vol_window < 2:
            raise ConfigError(f"vol window must be >= 2, got {self.vol_window}")

    @property
    def warmup(self) -> int:
        """First price-calendar index at which an observation can be built."""
        return max(self.lags[-1], self.context_lags[-1]) + self.vol_window


@dataclass
class ObservationBatch:
    """Regular tensors A1 (returns), A2 (volatilities) and context matrix C.

    Unbatched shapes: A1, A2 ``(strategies, lags)``; C ``(features, context lags)``.
    Batched variants carry a leading date axis.
    """
    A1: np.ndarray
    A2: np.ndarray
    C: np.ndarray

    @property
    def batched(self) -> bool:
        return self.A1.ndim == 3

    def __len__(self):
        return self.A1.shape[0] if self.batched else 1

    def select(self, idx) -> "ObservationBatch":
        return ObservationBatch(self.A1[idx], self.A2[idx], self.C[idx])


def check_positive(prices: pd.DataFrame):
    bad = prices.le(0) | ~np.isfinite(prices)
    if bad.any().any():
        stacked = bad.stack()
        date, name = stacked[stacked].index[0]
        raise DataError(f"non-positive price for {name} on {pd.Timestamp(date):%Y-%m-%d}")


def compute_returns(prices) -> pd.DataFrame:
    """Simple returns; one row fewer than ``prices``."""
    if isinstance(prices, PricePanel):
        prices = prices.prices[[prices.risky, *prices.strategies]]
    prices = pd.DataFrame(prices)
    if len(prices) < 2:
        raise DataError("need at least two dates to compute returns")
    check_positive(prices)
    return (prices / prices.shift(1) - 1.0).iloc[1:]


def rolling_vol(returns, d: int):
    """Population standard deviation over the ``d`` returns ending at each row."""
    if d < 2:
        raise ConfigError(f"vol window must be >= 2, got {d}")
    if len(returns) < d:
        raise RangeError(f"need at least {d} returns, got {len(returns)}")
    if isinstance(returns, (pd.DataFrame, pd.Series)):
        return returns.rolling(d).std(ddof=0)
    arr = np.asarray(returns, dtype=float)
    out = np.full(arr.shape, np.nan)
    win = np.lib.stride_tricks.sliding_window_view(arr, d, axis=0)
    out[d - 1:] = win.std(axis=-1)
    return out


def derived_context(returns: np.ndarray, vols: np.ndarray) -> np.ndarray:
    """Per-date max strategy return, min strategy return, max strategy volatility."""
    with np.errstate(invalid="ignore"):
        return np.column_stack([returns.max(axis=1), returns.min(axis=1), vols.max(axis=1)])


def assemble_observation(returns, vols, context, t, spec: ObservationSpec) -> ObservationBatch:
    """Observation at price-calendar index ``t`` (int) or indices (1-D array).

    ``returns``/``vols`` are ``(dates, strategies)``; ``context`` is
    ``(dates, p_raw)`` or None. Only rows ``<= t`` are read.
    """
    returns = np.asarray(returns, dtype=float)
    vols = np.asarray(vols, dtype=float)
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=int))
    if ts.min() < spec.warmup:
        raise RangeError(f"observation at {ts.min()} needs index >= {spec.warmup}")
    if ts.max() >= len(returns):
        raise RangeError(f"observation at {ts.max()} beyond {len(returns)} dates")
    lags = np.asarray(spec.lags)
    rows = ts[:, None] - lags[None, :]                      # (B, L)
    a1 = np.transpose(returns[rows], (0, 2, 1))             # (B, l, L)
    a2 = np.transpose(vols[rows], (0, 2, 1))
    extra = derived_context(returns, vols)
    ctx = extra if context is None else np.column_stack([np.asarray(context, float), extra])
    crow = ts[:, None] - np.asarray(spec.context_lags)[None, :]
    c = np.transpose(ctx[crow], (0, 2, 1))                   # (B, p+3, Lc)
    batch = ObservationBatch(a1, a2, c)
    if not (np.isfinite(a1).all() and np.isfinite(a2).all() and np.isfinite(c).all()):
        raise DataError("non-finite value inside observation window")
    return batch.select(0) if scalar else batch


def align_calendars(prices: PricePanel, context: ContextPanel | None,
                    fill_limit: int = 5) -> tuple[PricePanel, ContextPanel | None]:
    """Restrict both panels to their overlapping range on the price calendar.

    Context gaps are forward-filled for at most ``fill_limit`` consecutive dates.
    """
    if context is None or context.values.shape[1] == 0:
        return prices, context
    pidx, cidx = prices.dates, context.values.index
    start, end = max(pidx[0], cidx[0]), min(pidx[-1], cidx[-1])
    if start > end:
        raise DataError("price and context calendars do not overlap")
    pdf = prices.prices.loc[start:end]
    if pdf.empty:
        raise DataError("price and context calendars do not overlap")
    cdf = context.values.reindex(cidx.union(pdf.index)).ffill(limit=fill_limit)
    cdf = cdf.loc[pdf.index]
    if cdf.isna().any().any():
        stacked = cdf.isna().stack()
        date, name = stacked[stacked].index[0]
        raise DataError(f"context {name} has a gap longer than {fill_limit} days at "
                        f"{pd.Timestamp(date):%Y-%m-%d}")
    return (PricePanel(pdf, prices.risky, prices.strategies), ContextPanel(cdf))


SCALE_TOL = 1e-12


@dataclass
class Normalizer:
    """Scales fitted on a training range; applied to raw observation batches.

    A1 is divided by the pooled standard deviation of strategy returns, A2 by
    the pooled mean volatility, and every context row is standardised.
    """
    ret_scale: float
    vol_scale: float
    ctx_mean: np.ndarray
    ctx_std: np.ndarray

    @classmethod
    def fit(cls, features: "Features", end: int) -> "Normalizer":
        lo = features.spec.vol_window
        r = features.returns[1:end + 1]
        v = features.vols[lo:end + 1]
        ctx = features.context_rows()[lo:end + 1]
        ret_scale = float(np.std(r))
        vol_scale = float(np.mean(v))
        std = ctx.std(axis=0)
        # round-off leaves ~1e-17 scales on constant inputs; treat those as zero
        return cls(ret_scale if ret_scale > SCALE_TOL else 1.0,
                   vol_scale if vol_scale > SCALE_TOL else 1.0,
                   ctx.mean(axis=0), np.where(std > SCALE_TOL, std, 1.0))

    @classmethod
    def identity(cls, n_ctx: int) -> "Normalizer":
        return cls(1.0, 1.0, np.zeros(n_ctx), np.ones(n_ctx))

    def apply(self, batch: ObservationBatch) -> ObservationBatch:
        c = (batch.C - self.ctx_mean[..., :, None]) / self.ctx_std[..., :, None]
        return ObservationBatch(batch.A1 / self.ret_scale, batch.A2 / self.vol_scale, c)


@dataclass
class Features:
    """Calendar-aligned numeric arrays derived once from the panels."""
    dates: pd.DatetimeIndex
    strategies: tuple[str, ...]
    returns: np.ndarray          # (T, l)
    vols: np.ndarray             # (T, l)
    risky_returns: np.ndarray    # (T,)
    context: np.ndarray | None   # (T, p_raw)
    spec: ObservationSpec
    context_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        # reductions round differently on strided memory; fix one layout so
        # results never depend on how the source frame was stored
        for name in ("returns", "vols", "risky_returns", "context"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.ascontiguousarray(value, dtype=np.float64))

    def __len__(self):
        return len(self.dates)

    @property
    def n_context_rows(self) -> int:
        return (0 if self.context is None else self.context.shape[1]) + 3

    def context_rows(self) -> np.ndarray:
        extra = derived_context(self.returns, self.vols)
        return extra if self.context is None else np.column_stack([self.context, extra])

    def observe(self, t) -> ObservationBatch:
        return assemble_observation(self.returns, self.vols, self.context, t, self.spec)

    def index_of(self, date) -> int:
        return int(self.dates.get_indexer([pd.Timestamp(date)])[0])


def build_features(prices: PricePanel, context: ContextPanel | None,
                   spec: ObservationSpec, fill_limit: int = 5) -> Features:
    prices, context = align_calendars(prices, context, fill_limit)
    rets = compute_returns(prices)
    padded = pd.concat([pd.DataFrame(np.nan, index=prices.dates[:1], columns=rets.columns), rets])
    strat = padded[list(prices.strategies)].to_numpy()
    vols = rolling_vol(padded[list(prices.strategies)], spec.vol_window).to_numpy()
    ctx = None
    names: tuple[str, ...] = ()
    if context is not None and context.values.shape[1]:
        ctx = context.values.to_numpy(dtype=float)
        names = context.names
    if len(prices.dates) <= spec.warmup:
        raise RangeError(f"{len(prices.dates)} dates do not cover the {spec.warmup}-day warmup")
    return Features(prices.dates, prices.strategies, strat, vols,
                    padded[prices.risky].to_numpy(), ctx, spec, names)


# ---------------------------------------------------------------------------
# CSV


def read_panel_csv(path) -> pd.DataFrame:
    """``date,<name1>,...`` with ISO dates."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path, float_precision="round_trip")
    if df.columns[0] != "date":
        raise DataError(f"{path}: first column must be 'date', got {df.columns[0]!r}")
    try:
        df["date"] = pd.to_datetime(df["date"], format="%Y-%m-%d")
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    df = df.set_index("date")
    if not df.index.is_monotonic_increasing or df.index.has_duplicates:
        raise DataError(f"{path}: dates must be strictly increasing")
    try:
        return df.astype(float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_panel_csv(df: pd.DataFrame, path):
    out = df.copy()
    out.index = out.index.strftime("%Y-%m-%d")
    out.index.name = "date"
    out.to_csv(path, float_format="%.17g")


def load_prices(path, risky: str, strategies) -> PricePanel:
    return PricePanel(read_panel_csv(path), risky, tuple(strategies))


def load_context(path, columns=None) -> ContextPanel:
    df = read_panel_csv(path)
    if columns:
        missing = [c for c in columns if c not in df.columns]
        if missing:
            raise DataError(f"{path}: context columns {missing} not found")
        df = df[list(columns)]
    return ContextPanel(df)
