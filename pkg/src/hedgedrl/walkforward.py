"""Anchored walk-forward evaluation.

Every split trains on ``[anchor, test_start)`` and trades the following test
period; the out-of-sample decisions of all splits are concatenated and run
through the simulator once, giving one stitched path per model.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
import pandas as pd

from .baselines import BaselineConfig, baseline_allocator, rebalance_dates
from .errors import ConfigError, DataError, HedgeError, RangeError, TrainingError
from .features import ContextPanel, Features, Normalizer, ObservationSpec, PricePanel, \
    build_features
from .metrics import metrics_row, net_profit
from .policy import NetworkConfig, PolicyParams
from .simulator import Decisions, EpisodeConfig, PortfolioPath, exposure_schedule, \
    path_from_exposures
from .trainer import TrainResult, TrainerConfig, decide, make_episode, train

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# split plan


@dataclass(frozen=True)
class PlanConfig:
    anchor: str = "2000-01-01"
    first_test_year: int = 2007
    test_months: int = 12
    end: str | None = None            # None: last calendar date
    min_train_years: int = 7

    def __post_init__(self):
        if self.test_months < 1:
            raise ConfigError("test span must be at least one month")
        if self.first_test_year - pd.Timestamp(self.anchor).year < self.min_train_years:
            raise ConfigError(f"first test year {self.first_test_year} leaves less than "
                              f"{self.min_train_years} training years after {self.anchor}")


@dataclass(frozen=True)
class Split:
    """Calendar positions: training uses rows ``[train_start, train_end]``."""
    index: int
    train_start: int
    train_end: int
    test_start: int
    test_end: int


@dataclass(frozen=True)
class SplitPlan:
    calendar: pd.DatetimeIndex
    splits: tuple[Split, ...]
    config: PlanConfig

    def __len__(self):
        return len(self.splits)

    def dates(self, split: Split) -> dict:
        c = self.calendar
        return {"train_start": c[split.train_start], "train_end": c[split.train_end],
                "test_start": c[split.test_start], "test_end": c[split.test_end]}

    def test_days(self) -> pd.DatetimeIndex:
        return self.calendar[self.splits[0].test_start:self.splits[-1].test_end + 1]


def make_splits(calendar: pd.DatetimeIndex, cfg: PlanConfig) -> SplitPlan:
    calendar = pd.DatetimeIndex(calendar)
    anchor = pd.Timestamp(cfg.anchor)
    final = calendar[-1] if cfg.end is None else pd.Timestamp(cfg.end)
    first = pd.Timestamp(f"{cfg.first_test_year}-01-01")
    train_start = int(calendar.searchsorted(anchor))
    if train_start >= len(calendar) or calendar[train_start] >= first:
        raise ConfigError("no training data between the anchor and the first test year")
    if final < first:
        raise ConfigError(f"final date {final:%Y-%m-%d} precedes the first test year")
    splits = []
    k = 0
    while True:
        lo = first + pd.DateOffset(months=k * cfg.test_months)
        if lo > final:
            break
        hi = min(first + pd.DateOffset(months=(k + 1) * cfg.test_months) - pd.Timedelta(days=1),
                 final)
        s = int(calendar.searchsorted(lo))
        e = int(calendar.searchsorted(hi, side="right")) - 1
        k += 1
        if s > e:
            continue
        if s < 1:
            raise ConfigError("test range starts on the first calendar date")
        splits.append(Split(len(splits), train_start, s - 1, s, e))
    if not splits:
        raise ConfigError("plan contains no test dates")
    return SplitPlan(calendar, tuple(splits), cfg)


# ---------------------------------------------------------------------------
# data and models


@dataclass
class WalkData:
    features: Features
    episode: EpisodeConfig

    @classmethod
    def from_panels(cls, prices: PricePanel, context: ContextPanel | None,
                    spec: ObservationSpec, episode: EpisodeConfig, fill_limit: int = 5):
        return cls(build_features(prices, context, spec, fill_limit), episode)

    @property
    def calendar(self) -> pd.DatetimeIndex:
        return self.features.dates

    def strategy_frame(self) -> pd.DataFrame:
        f = self.features
        return pd.DataFrame(f.returns, index=f.dates, columns=list(f.strategies))


@dataclass
class SplitOutput:
    index: int
    decisions: Decisions
    params: PolicyParams | None = None
    train: TrainResult | None = None
    diagnostics: dict = field(default_factory=dict)


class Model(Protocol):
    name: str

    def run_split(self, data: WalkData, split: Split) -> SplitOutput: ...


@dataclass(frozen=True)
class DRLModel:
    name: str = "DRL"
    trainer: TrainerConfig = TrainerConfig()
    use_context: bool = True
    network: tuple = ()            # extra NetworkConfig fields as (key, value) pairs

    def net_config(self, features: Features) -> NetworkConfig:
        spec = features.spec
        return NetworkConfig(len(features.strategies), len(spec.lags), features.n_context_rows,
                             len(spec.context_lags), use_context=self.use_context,
                             **dict(self.network))

    def fit(self, data: WalkData, split: Split):
        f, ep = data.features, data.episode
        norm = Normalizer.fit(f, split.train_end)
        net = replace(self.net_config(f), leverage_cap=ep.leverage_cap)
        episode = make_episode(f, norm, split.train_start, split.train_end, ep.lag,
                               ep.cost_rate, ep.leverage_cap)
        cfg = replace(self.trainer, seed=self.trainer.seed + split.index)
        sel = None
        if cfg.selection == "test":
            sel = make_episode(f, norm, split.test_start - 1, split.test_end, ep.lag,
                               ep.cost_rate, ep.leverage_cap)
        return train(episode, net, cfg, selection_episode=sel), norm, net

    def run_split(self, data: WalkData, split: Split) -> SplitOutput:
        res, norm, net = self.fit(data, split)
        lag = data.episode.lag
        ts = np.arange(split.test_start - 1 - lag, split.test_end - lag)
        weights, leverage = decide(res.params, data.features, norm, ts, net)
        dec = Decisions(data.calendar[ts], weights, leverage, data.features.strategies)
        diag = {"train_reward": res.best_reward, "best_iteration": res.best_iteration,
                "iterations": len(res.rewards)}
        return SplitOutput(split.index, dec, res.params, res, diag)


@dataclass(frozen=True)
class BaselineModel:
    kind: str
    name: str = ""
    config: BaselineConfig = BaselineConfig()

    def run_split(self, data: WalkData, split: Split) -> SplitOutput:
        cal = data.calendar
        eff = rebalance_dates(cal, cal[split.test_start], cal[split.test_end], self.config.rebalance)
        # each decision reads rows up to its own date only
        frame = data.strategy_frame().iloc[:split.test_end + 1]
        dec = baseline_allocator(self.kind, frame, eff, data.episode.lag, self.config)
        return SplitOutput(split.index, dec)


def default_models(trainer: TrainerConfig = TrainerConfig(), baseline=BaselineConfig()):
    return [DRLModel("DRL", trainer, True), DRLModel("DRL no context", trainer, False),
            BaselineModel("risky", "Risky asset", baseline),
            BaselineModel("winner", "Winner", baseline), BaselineModel("loser", "Loser", baseline),
            BaselineModel("markowitz", "Markowitz", baseline)]


def model_name(model) -> str:
    return model.name or model.kind


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class StitchedResult:
    model: str
    path: PortfolioPath
    decisions: Decisions
    splits: list
    plan: SplitPlan
    lag: int = 1

    @property
    def performance(self) -> float:
        return net_profit(self.path)

    def effective_dates(self) -> pd.DatetimeIndex:
        """Date each decision starts to apply."""
        cal = self.plan.calendar
        pos = cal.get_indexer(self.decisions.dates) + 1 + self.lag
        return cal[pos]


def _run_one(args):
    model, data, split = args
    try:
        return model.run_split(data, split)
    except HedgeError as exc:
        # keep the category (config, data, training) and add where it happened
        kind = type(exc) if isinstance(exc, (ConfigError, DataError, RangeError)) else TrainingError
        raise kind(f"{model_name(model)} split {split.index}: {exc}") from exc


def stitch(outputs, data: WalkData, plan: SplitPlan, name: str) -> StitchedResult:
    outputs = sorted(outputs, key=lambda o: o.index)
    decisions = Decisions.concat([o.decisions for o in outputs])
    cal = data.calendar
    days = plan.test_days()
    exposures = exposure_schedule(decisions, cal, days, data.episode.lag)
    pos = cal.get_indexer(days)
    f = data.features
    path = path_from_exposures(exposures, days, cal[pos[0] - 1], f.returns[pos],
                               f.risky_returns[pos], data.episode, f.strategies)
    return StitchedResult(name, path, decisions, outputs, plan, data.episode.lag)


def run_walkforward(model, data: WalkData, plan: SplitPlan, workers: int = 1) -> StitchedResult:
    """Fit ``model`` on every split and stitch the out-of-sample path."""
    last = plan.splits[-1].test_end
    if last >= len(data.calendar):
        raise RangeError("data do not cover the split plan")
    jobs = [(model, data, s) for s in plan.splits]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_one, jobs))
    else:
        outputs = [_run_one(j) for j in jobs]
    return stitch(outputs, data, plan, model_name(model))


def leakage_probe(model: DRLModel, prices: PricePanel, context: ContextPanel | None,
                  spec: ObservationSpec, episode: EpisodeConfig, plan: SplitPlan,
                  split_index: int = 0, seed: int = 0) -> bool:
    """True when scrambling test-range data leaves the split's trained parameters unchanged."""
    split = plan.splits[split_index]
    cutoff = plan.calendar[split.train_end]
    rng = np.random.default_rng(seed)
    df = prices.prices.copy()
    late = df.index > cutoff
    df.loc[late] = df.loc[late].to_numpy() * np.exp(rng.normal(0, 0.05, (late.sum(), df.shape[1])))
    ctx = None
    if context is not None:
        cdf = context.values.copy()
        cl = cdf.index > cutoff
        cdf.loc[cl] = cdf.loc[cl].to_numpy() + rng.normal(0, 1.0, (cl.sum(), cdf.shape[1]))
        ctx = ContextPanel(cdf)
    clean = WalkData.from_panels(prices, context, spec, episode)
    dirty = WalkData.from_panels(PricePanel(df, prices.risky, prices.strategies), ctx, spec, episode)
    a, _, _ = model.fit(clean, split)
    b, _, _ = model.fit(dirty, split)
    return all(np.array_equal(a.params[k], b.params[k]) for k in a.params.arrays)


# ---------------------------------------------------------------------------
# tables


ABLATION_COLUMNS = ["#", "reward", "adversarial", "context", "day_lag", "performance"]


def ablation_grid():
    for reward in ("net_profit", "sortino"):
        for adversarial in (True, False):
            for context in (True, False):
                for lag in (1, 0):
                    yield reward, adversarial, context, lag


def ablation_matrix(prices: PricePanel, context: ContextPanel | None, spec: ObservationSpec,
                    episode: EpisodeConfig, plan_cfg: PlanConfig, trainer: TrainerConfig,
                    workers: int = 1, network: tuple = ()) -> pd.DataFrame:
    """Stitched net profit of all 16 cells, lag-1 group first, each sorted descending."""
    data = {lag: WalkData.from_panels(prices, context, spec, replace(episode, lag=lag))
            for lag in (0, 1)}
    plan = make_splits(data[1].calendar, plan_cfg)
    rows = []
    for reward, adversarial, ctx, lag in ablation_grid():
        model = DRLModel("cell", replace(trainer, reward=reward, adversarial=adversarial), ctx,
                         network)
        res = run_walkforward(model, data[lag], plan, workers)
        rows.append({"reward": reward, "adversarial": "yes" if adversarial else "no",
                     "context": "yes" if ctx else "no", "day_lag": "yes" if lag else "no",
                     "performance": res.performance})
    return format_ablation(rows)


def format_ablation(rows) -> pd.DataFrame:
    df = pd.DataFrame(rows)
    df["_lag"] = (df["day_lag"] == "yes").astype(int)
    # stable sort keeps grid order among equal performances
    df = df.sort_values(["_lag", "performance"], ascending=[False, False], kind="mergesort")
    df = df.drop(columns="_lag").reset_index(drop=True)
    df.insert(0, "#", np.arange(1, len(df) + 1))
    return df[ABLATION_COLUMNS]


COMPARISON_COLUMNS = ["model", "window_years", "return_ann", "sharpe", "sortino", "max_dd"]


def comparison_table(results, windows=(3, 5)) -> pd.DataFrame:
    """Trailing-window metrics of each stitched path (clipped to the path start)."""
    rows = []
    for years in windows:
        for res in results:
            frame = res.path.to_frame()
            cut = frame.index[-1] - pd.DateOffset(years=years)
            start = max(int(frame.index.searchsorted(cut)) - 1, 0)
            window = frame.iloc[start:]
            row = metrics_row(window["value"].to_numpy(), window["return"].to_numpy()[1:])
            rows.append({"model": res.model, "window_years": years, **row})
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)
