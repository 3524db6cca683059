"""Command line: ``hedgedrl run|report|gradcheck|gen-data``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training failure.
Relative output paths resolve against ``$HEDGEDRL_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .baselines import weight_rows, write_weight_history
from .config import ExperimentConfig, apply_overrides, dump_config, load_config
from .errors import ConfigError, DataError, HedgeError, RangeError
from .features import ContextPanel, PricePanel, load_context, load_prices, write_panel_csv
from .policy import save_params
from .report import render, slug
from .synthgen import canned_scenarios, generate
from .walkforward import (BaselineModel, DRLModel, WalkData, ablation_matrix, comparison_table,
                          make_splits, run_walkforward)

log = logging.getLogger("hedgedrl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4
OUTPUT_ENV = "HEDGEDRL_OUTPUT_ROOT"
BASELINE_LABELS = {"risky": "Risky asset", "winner": "Winner", "loser": "Loser",
                   "markowitz": "Markowitz"}


def output_dir(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ENV)
    return path if path.is_absolute() or not root else Path(root) / path


def load_data(cfg: ExperimentConfig) -> tuple[PricePanel, ContextPanel | None]:
    d = cfg.data
    if d.source == "synthetic":
        presets = canned_scenarios()
        if d.preset not in presets:
            raise ConfigError(f"unknown preset {d.preset!r}; choose from {list(presets)}")
        prices, context, _ = generate(presets[d.preset], d.n_days, d.seed)
        return prices, context
    try:
        strategies = d.strategies or None
        if strategies is None:
            header = pd.read_csv(d.prices, nrows=0).columns[1:]
            strategies = tuple(c for c in header if c != d.risky)
        prices = load_prices(d.prices, d.risky, strategies)
        context = load_context(d.context, d.context_columns or None) if d.context else None
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {exc.filename}") from exc
    return prices, context


def build_models(cfg: ExperimentConfig):
    net = cfg.network.overrides()
    models = []
    for name in cfg.run.models:
        if name in ("DRL", "DRL no context"):
            models.append(DRLModel(name, cfg.trainer, name == "DRL", net))
        else:
            models.append(BaselineModel(name, BASELINE_LABELS[name], cfg.baseline))
    return models


def run_experiment(cfg: ExperimentConfig, out: Path) -> dict:
    """Run every requested model and write all artifacts into ``out``."""
    prices, context = load_data(cfg)
    data = WalkData.from_panels(prices, context, cfg.observation, cfg.episode, cfg.data.fill_limit)
    plan = make_splits(data.calendar, cfg.plan)
    models = build_models(cfg)
    for model in models:
        if isinstance(model, DRLModel):
            model.net_config(data.features)  # shape mismatches surface before any work
    out.mkdir(parents=True)
    (out / "config.ini").write_text(dump_config(cfg))
    logs, ckpts = out / "train_logs", out / "checkpoints"

    results, weight_history = [], []
    for model in models:
        res = run_walkforward(model, data, plan, cfg.run.workers)
        results.append(res)
        res.path.to_csv(out / f"stitched_path_{slug(res.model)}.csv")
        weight_history.extend(weight_rows(res.model, res.effective_dates(),
                                          res.decisions.weights, data.features.strategies))
        for split in res.splits:
            if split.train is None:
                continue
            logs.mkdir(exist_ok=True)
            ckpts.mkdir(exist_ok=True)
            stem = f"{slug(res.model)}_split{split.index:02d}"
            split.train.write_log(logs / f"{stem}.csv")
            net = model.net_config(data.features)
            save_params(split.params, ckpts / f"{stem}.npz", net)
    write_weight_history(weight_history, out / "weights.csv")
    table = comparison_table(results, cfg.run.windows)
    table.to_csv(out / "comparison.csv", index=False, float_format="%.17g")

    days = plan.test_days()
    pos = data.calendar.get_indexer(days)
    risky = np.r_[1.0, np.cumprod(1.0 + data.features.risky_returns[pos])]
    dates = pd.DatetimeIndex([data.calendar[pos[0] - 1]]).append(days)
    pd.DataFrame({"date": dates.strftime("%Y-%m-%d"), "value": risky}).to_csv(
        out / "risky_asset.csv", index=False, float_format="%.17g")

    if cfg.run.ablation:
        abl = ablation_matrix(prices, context, cfg.observation, cfg.episode, cfg.plan,
                              cfg.trainer, cfg.run.workers, cfg.network.overrides())
        abl.to_csv(out / "ablation.csv", index=False, float_format="%.17g")
    return {"comparison": table, "results": results}


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, args.set or [])
    out = output_dir(args.output or cfg.run.output)
    staging = out.with_name(out.name + ".incomplete")
    if staging.exists():
        shutil.rmtree(staging)
    try:
        outcome = run_experiment(cfg, staging)
    except BaseException as exc:
        if staging.exists():
            (staging / "INCOMPLETE").write_text(f"run failed: {type(exc).__name__}: {exc}\n")
        raise
    if out.exists():
        shutil.rmtree(out)
    staging.rename(out)
    print(f"wrote {out}")
    print(outcome["comparison"].to_string(index=False))
    return EXIT_OK


def cmd_report(args) -> int:
    table, charts = render(Path(args.results))
    print(table, end="")
    for c in charts:
        print(f"wrote {c}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck
    ok, lines = gradcheck.summary(args.seeds)
    print("\n".join(lines))
    return EXIT_OK if ok else 1


def cmd_gen_data(args) -> int:
    presets = canned_scenarios()
    if args.preset not in presets:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {list(presets)}")
    prices, context, regimes = generate(presets[args.preset], args.days, args.seed)
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csv(prices.prices, out / "prices.csv")
    write_panel_csv(context.values, out / "context.csv")
    # hidden states, for diagnostics only; never read by the models
    write_panel_csv(pd.DataFrame({"regime": regimes}, index=prices.dates), out / "regimes.csv")
    print(f"wrote {out}/prices.csv, context.csv, regimes.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hedgedrl", description="Train, backtest and report "
                                "deep RL allocations over hedging strategies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="walk-forward experiment from an INI config")
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    r.add_argument("--output", help="output directory (overrides run.output)")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="tables and SVG charts from a results directory")
    rep.add_argument("results")
    rep.set_defaults(func=cmd_report)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every gradient")
    g.add_argument("--seeds", type=int, default=20)
    g.set_defaults(func=cmd_gradcheck)

    gd = sub.add_parser("gen-data", help="write a synthetic market as CSV")
    gd.add_argument("--preset", default="separable")
    gd.add_argument("--days", type=int, default=2000)
    gd.add_argument("--seed", type=int, default=0)
    gd.add_argument("--out", default="data")
    gd.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RangeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except HedgeError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
