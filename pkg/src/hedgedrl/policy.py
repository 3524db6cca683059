"""Dual-input / dual-output policy network.

Asset branch: row-wise conv over the stacked [A1; A2] plane, then a dense
layer. Context branch: row-wise conv over C, then a dense layer. The merged
representation feeds a softmax head (strategy weights) and a capped sigmoid
head (leverage).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, ShapeError
from .features import ObservationBatch

CHECKPOINT_VERSION = 1

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class NetworkConfig:
    n_strategies: int
    n_lags: int
    n_context_rows: int
    n_context_lags: int
    asset_filters: int = 8
    asset_kernel: int = 3
    asset_hidden: int = 32
    context_filters: int = 4
    context_kernel: int = 3
    context_hidden: int = 16
    merge_hidden: int = 32
    leverage_cap: float = 3.0
    l2: float = 1e-8
    activation: str = "relu"
    use_context: bool = True

    def __post_init__(self):
        widths = ("n_strategies", "n_lags", "n_context_rows", "n_context_lags", "asset_filters",
                  "asset_kernel", "asset_hidden", "context_filters", "context_kernel",
                  "context_hidden", "merge_hidden")
        for name in widths:
            if getattr(self, name) < 1:
                raise ConfigError(f"network {name} must be >= 1")
        if self.asset_kernel > self.n_lags:
            raise ConfigError(f"asset kernel {self.asset_kernel} exceeds {self.n_lags} lags")
        if self.context_kernel > self.n_context_lags:
            raise ConfigError(f"context kernel {self.context_kernel} exceeds "
                              f"{self.n_context_lags} context lags")
        if not self.leverage_cap > 0:
            raise ConfigError("leverage cap must be > 0")
        if self.l2 < 0:
            raise ConfigError("L2 coefficient must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        l = self.n_strategies
        asset_flat = self.asset_filters * 2 * l * (self.n_lags - self.asset_kernel + 1)
        ctx_flat = (self.context_filters * self.n_context_rows
                    * (self.n_context_lags - self.context_kernel + 1))
        return {
            "asset_conv_k": (self.asset_filters, 1, self.asset_kernel),
            "asset_conv_b": (self.asset_filters,),
            "asset_dense_w": (asset_flat, self.asset_hidden),
            "asset_dense_b": (self.asset_hidden,),
            "ctx_conv_k": (self.context_filters, 1, self.context_kernel),
            "ctx_conv_b": (self.context_filters,),
            "ctx_dense_w": (ctx_flat, self.context_hidden),
            "ctx_dense_b": (self.context_hidden,),
            "merge_w": (self.asset_hidden + self.context_hidden, self.merge_hidden),
            "merge_b": (self.merge_hidden,),
            "weights_w": (self.merge_hidden, l),
            "weights_b": (l,),
            "lev_w": (self.merge_hidden, 1),
            "lev_b": (1,),
        }

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


CONTEXT_PARAMS = ("ctx_conv_k", "ctx_conv_b", "ctx_dense_w", "ctx_dense_b")


def is_weight(name: str) -> bool:
    return name.endswith("_w") or name.endswith("_k")


@dataclass
class PolicyParams:
    arrays: dict[str, np.ndarray]
    seed: int | None = None

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.arrays.items()}, self.seed)

    def __getitem__(self, name):
        return self.arrays[name]

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()])


@dataclass
class AllocationDecision:
    weights: np.ndarray
    leverage: float | np.ndarray

    @property
    def exposure(self) -> np.ndarray:
        return np.asarray(self.leverage)[..., None] * self.weights


def init_params(config: NetworkConfig, seed: int) -> PolicyParams:
    """Fan-in scaled Gaussian weights (He for hidden layers), zero biases."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.shapes().items():
        if not is_weight(name):
            arrays[name] = np.zeros(shape)
            continue
        fan_in = shape[-1] if name.endswith("_k") else shape[0]
        gain = 1.0 if name in ("weights_w", "lev_w") else 2.0
        arrays[name] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
    if not config.use_context:
        for name in CONTEXT_PARAMS:
            arrays[name] = np.zeros_like(arrays[name])
    return PolicyParams(arrays, seed)


def zero_params(config: NetworkConfig) -> PolicyParams:
    return PolicyParams({k: np.zeros(s) for k, s in config.shapes().items()})


def _check_obs(obs: ObservationBatch, config: NetworkConfig):
    a_shape = (config.n_strategies, config.n_lags)
    c_shape = (config.n_context_rows, config.n_context_lags)
    if obs.A1.shape[-2:] != a_shape or obs.A2.shape[-2:] != a_shape:
        raise ShapeError(f"regular observation shape {obs.A1.shape[-2:]} != {a_shape}")
    if obs.C.shape[-2:] != c_shape:
        raise ShapeError(f"context observation shape {obs.C.shape[-2:]} != {c_shape}")


def trainable(config: NetworkConfig) -> list[str]:
    names = list(config.shapes())
    return names if config.use_context else [n for n in names if n not in CONTEXT_PARAMS]


def forward_nodes(tape: ad.Tape, nodes: dict, obs: ObservationBatch, config: NetworkConfig):
    """Build the network on ``tape``. ``nodes`` maps parameter names to nodes.

    Returns ``(weights, leverage)`` nodes shaped ``(B, l)`` and ``(B,)``.
    """
    _check_obs(obs, config)
    if not obs.batched:
        obs = ObservationBatch(obs.A1[None], obs.A2[None], obs.C[None])
    act = ACTIVATIONS[config.activation]
    batch = obs.A1.shape[0]

    plane = tape.const(np.concatenate([obs.A1, obs.A2], axis=1))
    h = act(ad.conv_rowwise(plane, nodes["asset_conv_k"], nodes["asset_conv_b"]))
    h = act(ad.dense(ad.reshape(h, (batch, -1)), nodes["asset_dense_w"], nodes["asset_dense_b"]))

    if config.use_context:
        c = act(ad.conv_rowwise(tape.const(obs.C), nodes["ctx_conv_k"], nodes["ctx_conv_b"]))
        c = act(ad.dense(ad.reshape(c, (batch, -1)), nodes["ctx_dense_w"], nodes["ctx_dense_b"]))
    else:
        c = tape.const(np.zeros((batch, config.context_hidden)))

    z = act(ad.dense(ad.concat([h, c], axis=-1), nodes["merge_w"], nodes["merge_b"]))
    weights = ad.softmax(ad.dense(z, nodes["weights_w"], nodes["weights_b"]))
    lev = ad.scaled_sigmoid(ad.dense(z, nodes["lev_w"], nodes["lev_b"]), config.leverage_cap)
    return weights, ad.reshape(lev, (batch,))


def param_nodes(tape: ad.Tape, params: PolicyParams, config: NetworkConfig) -> dict:
    """Trainable arrays become parameter nodes; frozen ones become constants."""
    train = set(trainable(config))
    return {name: (tape.param(v, name=name) if name in train else tape.const(v, name=name))
            for name, v in params.arrays.items()}


def forward(params: PolicyParams, obs: ObservationBatch, config: NetworkConfig) -> AllocationDecision:
    tape = ad.Tape()
    w, lev = forward_nodes(tape, param_nodes(tape, params, config), obs, config)
    if obs.batched:
        return AllocationDecision(w.value, lev.value)
    return AllocationDecision(w.value[0], float(lev.value[0]))


def l2_penalty(nodes: dict, coeff: float) -> ad.Node:
    """``coeff`` times the sum of squared weight entries; biases excluded."""
    if coeff < 0:
        raise ConfigError("L2 coefficient must be >= 0")
    weights = [n for name, n in nodes.items() if is_weight(name)]
    if not weights:
        raise ContractError("no weight arrays to penalise")
    total = ad.sum_(ad.mul(weights[0], weights[0]))
    for n in weights[1:]:
        total = ad.add(total, ad.sum_(ad.mul(n, n)))
    return ad.scale(total, coeff)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: PolicyParams, path, config: NetworkConfig | None = None):
    meta = {"version": CHECKPOINT_VERSION, "seed": params.seed,
            "config": asdict(config) if config is not None else None}
    payload = {f"param/{k}": v for k, v in params.arrays.items()}
    payload["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_params(path) -> tuple[PolicyParams, NetworkConfig | None]:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("param/")}
    cfg = meta.get("config")
    return PolicyParams(arrays, meta.get("seed")), (NetworkConfig(**cfg) if cfg else None)
