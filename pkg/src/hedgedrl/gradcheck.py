"""Registered finite-difference checks for every differentiable op and the
policy -> simulator -> reward composite. Used by ``hedgedrl gradcheck``."""
from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .features import ObservationBatch
from .metrics import reward_node
from .policy import NetworkConfig, forward_nodes, init_params
from .simulator import daily_returns_node

TOLERANCE = 1e-4


def _pair(rng):
    return {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=(3, 4))}


OPS = {
    "add": lambda p: ad.sum_(ad.mul(ad.add(p["a"], p["b"]), p["a"])),
    "sub": lambda p: ad.sum_(ad.mul(ad.sub(p["a"], p["b"]), p["b"])),
    "mul": lambda p: ad.sum_(ad.mul(p["a"], p["b"])),
    "div": lambda p: ad.sum_(ad.div(p["a"], ad.add(ad.mul(p["b"], p["b"]), 1.0))),
    "neg_scale": lambda p: ad.sum_(ad.mul(ad.scale(ad.neg(p["a"]), 2.5), p["b"])),
    "relu": lambda p: ad.sum_(ad.mul(ad.relu(p["a"]), p["b"])),
    "tanh": lambda p: ad.sum_(ad.mul(ad.tanh(p["a"]), p["b"])),
    "abs": lambda p: ad.sum_(ad.mul(ad.abs_(p["a"]), p["b"])),
    "exp_log": lambda p: ad.sum_(ad.log(ad.add(ad.exp(p["a"]), ad.mul(p["b"], p["b"])))),
    "sqrt": lambda p: ad.sum_(ad.sqrt(ad.add(ad.mul(p["a"], p["a"]), 1.0))),
    "softmax": lambda p: ad.sum_(ad.mul(ad.softmax(p["a"]), p["b"])),
    "scaled_sigmoid": lambda p: ad.sum_(ad.mul(ad.scaled_sigmoid(p["a"], 3.0), p["b"])),
    "sum": lambda p: ad.sum_(ad.mul(ad.sum_(p["a"], axis=1), ad.sum_(p["b"], axis=1))),
    "mean": lambda p: ad.mul(ad.mean(p["a"]), ad.mean(ad.mul(p["b"], p["b"]))),
    "std_dev": lambda p: ad.add(ad.std_dev(p["a"]), ad.sum_(ad.std_dev(p["b"], axis=0))),
    "min_max": lambda p: ad.add(ad.reduce("min", p["a"]), ad.sum_(ad.reduce("max", p["b"], axis=1))),
    "getitem_concat": lambda p: ad.sum_(ad.mul(ad.concat([p["a"][1:], p["b"][:1]], axis=0),
                                               ad.concat([p["b"][1:], p["a"][:1]], axis=0))),
    "reshape": lambda p: ad.sum_(ad.mul(ad.reshape(p["a"], (-1,)), ad.reshape(p["b"], (-1,)))),
}


def _dense_conv(rng):
    def fn(p):
        h = ad.relu(ad.conv_rowwise(p["x"], p["k"], p["kb"]))
        flat = ad.reshape(h, (h.shape[0], -1))
        return ad.sum_(ad.softmax(ad.dense(flat, p["w"], p["b"])) * np.arange(3.0))

    # fan-in scaled like initialised layers; a saturated softmax leaves gradients
    # below central-difference roundoff
    point = {"x": rng.normal(size=(2, 3, 5)), "k": rng.normal(size=(2, 1, 3)) / np.sqrt(3),
             "kb": rng.normal(size=2) * 0.1, "w": rng.normal(size=(18, 3)) / np.sqrt(18),
             "b": rng.normal(size=3) * 0.1}
    return fn, point


# 53 parameters
COMPOSITE_NET = NetworkConfig(2, 3, 2, 3, asset_filters=1, asset_kernel=2, asset_hidden=2,
                              context_filters=1, context_kernel=2, context_hidden=2,
                              merge_hidden=2)


def _composite(kind):
    def factory(rng):
        cfg, n = COMPOSITE_NET, 12
        obs = ObservationBatch(rng.normal(size=(n, cfg.n_strategies, cfg.n_lags)),
                               np.abs(rng.normal(size=(n, cfg.n_strategies, cfg.n_lags))),
                               rng.normal(size=(n, cfg.n_context_rows, cfg.n_context_lags)))
        strat = rng.normal(0.0005, 0.01, (n, cfg.n_strategies))
        risky = rng.normal(0.0003, 0.01, n)

        def fn(p):
            w, lev = forward_nodes(next(iter(p.values())).tape, p, obs, cfg)
            exposure = ad.mul(ad.reshape(lev, (n, 1)), w)
            return reward_node(kind, daily_returns_node(exposure, strat, risky, 0.001))

        point = dict(init_params(cfg, int(rng.integers(2**31))).arrays)
        # zero biases put dead-unit pre-activations exactly on the relu kink
        for k in point:
            if k.endswith("_b"):
                point[k] = point[k] + rng.normal(0.0, 0.1, point[k].shape)
        return fn, point
    return factory


def registry() -> dict:
    checks = {name: (lambda fn: (lambda rng: (fn, _pair(rng))))(fn) for name, fn in OPS.items()}
    checks["dense_conv"] = _dense_conv
    for kind in ("net_profit", "sharpe", "sortino"):
        checks[f"policy_simulator_{kind}"] = _composite(kind)
    return checks


def run_checks(seeds: int = 20, names=None) -> dict:
    """Worst relative error per check over ``seeds`` random points."""
    out = {}
    for name, factory in registry().items():
        if names is not None and name not in names:
            continue
        worst = 0.0
        for seed in range(seeds):
            fn, point = factory(np.random.default_rng(seed))
            worst = max(worst, ad.grad_check(fn, point, eps=1e-5))
        out[name] = worst
    return out


def summary(seeds: int = 20) -> tuple[bool, list[str]]:
    start = time.perf_counter()
    results = run_checks(seeds)
    lines = [f"{name:<28s} worst rel err {err:.2e}  {'ok' if err < TOLERANCE else 'FAIL'}"
             for name, err in results.items()]
    ok = all(err < TOLERANCE for err in results.values())
    lines.append(f"{len(results)} checks, {seeds} seeds, {time.perf_counter() - start:.1f}s: "
                 f"{'all passed' if ok else 'FAILED'}")
    return ok, lines
