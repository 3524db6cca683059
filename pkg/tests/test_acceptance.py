"""Acceptance criteria 1-10. Each test prints one ``criterion N: PASS|FAIL`` line.

The experiment-level criteria (6, 7, 9) train many networks and take minutes.
"""
import filecmp
import itertools
import math
import time

import numpy as np
import pandas as pd
import pytest

from hedgedrl import cli, gradcheck
from hedgedrl.baselines import MarkowitzInput, markowitz_weights
from hedgedrl.errors import UndefinedMetric
from hedgedrl.features import ObservationBatch, ObservationSpec
from hedgedrl.metrics import annualized_sharpe, max_drawdown, net_profit, sortino
from hedgedrl.policy import NetworkConfig, forward, init_params
from hedgedrl.simulator import EpisodeConfig
from hedgedrl.synthgen import canned_scenarios, generate
from hedgedrl.trainer import TrainerConfig, train
from hedgedrl.walkforward import (ABLATION_COLUMNS, DRLModel, PlanConfig, WalkData,
                                  ablation_matrix, leakage_probe, make_splits, run_walkforward)

from test_trainer import dominant_market, flat_market

# desk-scale study setup shared by the lag and context criteria
STUDY_DAYS = 2000
STUDY_PLAN = PlanConfig(anchor="2000-01-01", first_test_year=2005, min_train_years=4)
STUDY_ITERS = 150
SEEDS = range(10)


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_criterion_01_gradients(verdict):
    start = time.perf_counter()
    results = gradcheck.run_checks(seeds=20)
    elapsed = time.perf_counter() - start
    worst = max(results, key=results.get)
    ok = all(v < 1e-4 for v in results.values()) and elapsed < 120
    verdict(1, ok, f"{len(results)} checks x 20 seeds, worst {worst} {results[worst]:.1e}, "
                   f"{elapsed:.0f}s")


def test_criterion_02_simplex_and_leverage(verdict):
    cfg = NetworkConfig(4, 6, 5, 3)
    rng = np.random.default_rng(0)
    worst_sum, min_w, lev_lo, lev_hi = 0.0, 1.0, np.inf, -np.inf
    for draw in range(100):
        params = init_params(cfg, draw)
        # inflate some draws so softmax and the leverage squash saturate
        scale = 10.0 ** rng.uniform(-1, 2)
        params = type(params)({k: v * scale + rng.normal(0, scale, v.shape) * k.endswith("_b")
                               for k, v in params.arrays.items()}, params.seed)
        obs = ObservationBatch(rng.normal(0, 3, (100, 4, 6)), np.abs(rng.normal(0, 3, (100, 4, 6))),
                               rng.normal(0, 3, (100, 5, 3)))
        dec = forward(params, obs, cfg)
        worst_sum = max(worst_sum, np.abs(dec.weights.sum(axis=1) - 1).max())
        min_w = min(min_w, dec.weights.min())
        lev_lo, lev_hi = min(lev_lo, dec.leverage.min()), max(lev_hi, dec.leverage.max())
    ok = worst_sum <= 1e-10 and min_w >= 0 and 0 < lev_lo and lev_hi < 3
    verdict(2, ok, f"10^4 draws, |sum-1| <= {worst_sum:.1e}, min weight {min_w:.1e}, "
                   f"leverage in [{lev_lo:.3g}, {lev_hi:.15g}]")


def _grid(l, n=100):
    pts = [h + (n - sum(h),) for h in itertools.product(range(n + 1), repeat=l - 1) if sum(h) <= n]
    return np.array(pts, dtype=float) / n


def test_criterion_03_markowitz_oracle(verdict):
    start = time.perf_counter()
    grids = {3: _grid(3), 4: _grid(4)}
    rng = np.random.default_rng(2024)
    worst_gap, worst_violation = -np.inf, 0.0
    for i in range(100):
        l = 3 + i % 2
        a = rng.normal(size=(l, l))
        sigma = a @ a.T / l + rng.uniform(0, 0.1) * np.eye(l)
        mu = rng.normal(0.05, 0.05, l)
        inp = MarkowitzInput(mu, sigma, rng.uniform(mu.min(), mu.max()))
        w = markowitz_weights(inp)
        g = grids[l][grids[l] @ mu >= inp.r_min]
        best = np.einsum("ij,jk,ik->i", g, sigma, g).min()
        worst_gap = max(worst_gap, w @ sigma @ w - best)
        worst_violation = max(worst_violation, abs(w.sum() - 1), -w.min(), inp.r_min - mu @ w)
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-4 and worst_violation <= 1e-8 and elapsed < 60
    verdict(3, ok, f"100 instances, objective - grid <= {worst_gap:.2e}, "
                   f"constraint slack {worst_violation:.1e}, {elapsed:.1f}s")


def _oracle_metrics(values):
    rets = [values[i] / values[i - 1] - 1 for i in range(1, len(values))]
    n = len(rets)
    mean = math.fsum(rets) / n
    sd = math.sqrt(math.fsum((r - mean) ** 2 for r in rets) / n)
    neg = [r for r in rets if r < 0]
    out = {"net_profit": values[-1] / values[0] - 1,
           "sharpe": mean * 250 / (sd * math.sqrt(250)) if sd > 0 else None}
    if len(neg) >= 2:
        nm = math.fsum(neg) / len(neg)
        dsd = math.sqrt(math.fsum((r - nm) ** 2 for r in neg) / len(neg))
        out["sortino"] = mean * 250 / (math.sqrt(250) * dsd) if dsd > 0 else None
    else:
        out["sortino"] = None
    peak, mdd = values[0], 0.0
    for v in values:
        peak = max(peak, v)
        mdd = max(mdd, (peak - v) / peak)
    out["max_dd"] = mdd
    return out, np.array(rets)


def test_criterion_04_metric_oracles(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 400))
        values = list(100 * np.cumprod(np.r_[1.0, 1 + rng.normal(0.0004, 0.012, n - 1)]))
        want, rets = _oracle_metrics(values)
        got = {"net_profit": net_profit(values), "max_dd": max_drawdown(values)}
        for name, fn in (("sharpe", annualized_sharpe), ("sortino", sortino)):
            try:
                got[name] = fn(rets)
            except UndefinedMetric:
                got[name] = None
        for k, v in want.items():
            assert (v is None) == (got[k] is None), k
            if v is not None:
                worst = max(worst, abs(got[k] - v) / max(1.0, abs(v)))
    hand = max_drawdown([100, 110, 99, 121])
    ok = worst <= 1e-10 and abs(hand - 0.1) <= 1e-12
    verdict(4, ok, f"1000 paths, worst deviation {worst:.1e}; MDD[100,110,99,121] = {hand:.12g}")


def test_criterion_05_walkforward_structure(verdict):
    spec = canned_scenarios()["separable"]
    days = len(pd.bdate_range("2000-01-03", "2020-06-19"))
    prices, ctx, _ = generate(spec, days, seed=5)
    obs = ObservationSpec()
    data = WalkData.from_panels(prices, ctx, obs, EpisodeConfig(lag=1))
    plan = make_splits(data.calendar, PlanConfig("2000-01-01", 2007, end="2020-06-19"))
    tests = [np.arange(s.test_start, s.test_end + 1) for s in plan.splits]
    oos = np.arange(plan.splits[0].test_start, data.calendar.get_loc(pd.Timestamp("2020-06-19")) + 1)
    partition = np.array_equal(np.concatenate(tests), oos)
    anchored = all(s.train_start == plan.splits[0].train_start and s.train_end == s.test_start - 1
                   for s in plan.splits)
    model = DRLModel("DRL", TrainerConfig(max_iter=20, patience=20))
    probes = [leakage_probe(model, prices, ctx, obs, EpisodeConfig(lag=lag), plan, split_index=i)
              for lag, i in ((1, 0), (0, 6), (1, 13))]
    ok = len(plan) == 14 and partition and anchored and all(probes)
    verdict(5, ok, f"{len(plan)} splits, partition {partition}, anchored {anchored}, "
                   f"leakage probes unchanged {probes}")


def _stitched(prices, ctx, lag, use_context, seed):
    data = WalkData.from_panels(prices, ctx, ObservationSpec(), EpisodeConfig(lag=lag))
    plan = make_splits(data.calendar, STUDY_PLAN)
    model = DRLModel("DRL", TrainerConfig(max_iter=STUDY_ITERS, seed=seed), use_context)
    return run_walkforward(model, data, plan).performance


def test_criterion_06_lag_direction(verdict):
    start = time.perf_counter()
    spec = canned_scenarios()["separable"]
    pairs = []
    for seed in SEEDS:
        prices, ctx, _ = generate(spec, STUDY_DAYS, seed=seed)
        pairs.append((_stitched(prices, ctx, 0, True, seed), _stitched(prices, ctx, 1, True, seed)))
    wins = sum(lag1 <= lag0 for lag0, lag1 in pairs)
    elapsed = time.perf_counter() - start
    ok = wins >= 8 and elapsed < 15 * 60
    verdict(6, ok, f"lag1 <= lag0 in {wins}/10 seeds, {elapsed / 60:.1f} min; "
                   + " ".join(f"({a:.2f},{b:.2f})" for a, b in pairs))


def test_criterion_07_context_direction(verdict):
    start = time.perf_counter()
    out = {}
    for preset in ("separable", "no-signal"):
        spec = canned_scenarios()[preset]
        diffs = []
        for seed in SEEDS:
            prices, ctx, _ = generate(spec, STUDY_DAYS, seed=seed)
            diffs.append(_stitched(prices, ctx, 1, True, seed) - _stitched(prices, ctx, 1, False, seed))
        out[preset] = np.array(diffs)
    wins = int((out["separable"] > 0).sum())
    d = out["no-signal"]
    mean, se = d.mean(), d.std(ddof=1) / math.sqrt(len(d))
    ok = wins >= 8 and abs(mean) <= 2 * se
    verdict(7, ok, f"separable: context wins {wins}/10; no-signal: mean diff {mean:+.3f}, "
                   f"2 SE {2 * se:.3f}; {(time.perf_counter() - start) / 60:.1f} min")


def test_criterion_08_trainer_convergence(verdict):
    hits = []
    for seed in SEEDS:
        _, _, ep, net = dominant_market(400, seed=seed)
        res = train(ep, net, TrainerConfig(max_iter=500, seed=seed))
        hits.append(forward(res.params, ep.obs, net).weights[:, 0].mean())
    _, _, flat_ep, flat_net = flat_market()
    stalled = train(flat_ep, flat_net, TrainerConfig(max_iter=500, patience=50))
    stop_ok = stalled.stopped_early and len(stalled.rewards) == stalled.best_iteration + 52
    good = sum(h > 0.8 for h in hits)
    ok = good >= 9 and stop_ok
    verdict(8, ok, f"dominant weight > 0.8 in {good}/10 seeds (min {min(hits):.3f}); "
                   f"stalled run stopped after {len(stalled.rewards)} iterations, "
                   f"best at {stalled.best_iteration}")


def test_criterion_09_ablation_matrix(verdict, tmp_path):
    start = time.perf_counter()
    prices, ctx, _ = generate(canned_scenarios()["separable"], STUDY_DAYS, seed=0)
    # default trainer settings: 500 iterations, patience 50
    table = ablation_matrix(prices, ctx, ObservationSpec(), EpisodeConfig(), STUDY_PLAN,
                            TrainerConfig())
    table.to_csv(tmp_path / "ablation.csv", index=False)
    back = pd.read_csv(tmp_path / "ablation.csv")
    elapsed = time.perf_counter() - start
    cells = set(map(tuple, back[["reward", "adversarial", "context", "day_lag"]].to_numpy()))
    lag_first = list(back["day_lag"]) == ["yes"] * 8 + ["no"] * 8
    sorted_ok = all(np.all(np.diff(g["performance"].to_numpy()) <= 0)
                    for _, g in back.groupby("day_lag"))
    ok = (list(back.columns) == ABLATION_COLUMNS and len(back) == 16 and len(cells) == 16
          and lag_first and sorted_ok and np.isfinite(back["performance"]).all()
          and elapsed < 30 * 60)
    verdict(9, ok, f"16 cells in {elapsed / 60:.1f} min, lag-1 block first {lag_first}, "
                   f"best {back['performance'].max():.3f}")


def test_criterion_10_determinism(verdict, tmp_path):
    cfg = tmp_path / "cfg.ini"
    cfg.write_text("[data]\nn_days = 1400\nseed = 7\n"
                   "[trainer]\nmax_iter = 15\npatience = 15\n"
                   "[plan]\nfirst_test_year = 2003\nmin_train_years = 3\n"
                   "[run]\nablation = yes\nwindows = 1, 2\n")
    for name in ("a", "b"):
        assert cli.main(["run", str(cfg), "--output", str(tmp_path / name)]) == 0
    csvs = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    same = [filecmp.cmp(tmp_path / "a" / p, tmp_path / "b" / p, shallow=False) for p in csvs]
    ok = len(csvs) > 10 and all(same)
    verdict(10, ok, f"{sum(same)}/{len(csvs)} CSV files byte-identical across two runs")
