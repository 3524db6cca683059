"""Adversarial policy-gradient training with Adam ascent and early stopping.

Every iteration replays the whole training episode in one batched pass:
observations (optionally perturbed) go through the policy, some dates are
replaced by random exploratory actions, the resulting overlay is simulated
on the differentiable path and one Adam step ascends ``reward - L2``.

Randomness: parameter initialisation and the training loop use two child
streams of ``SeedSequence(seed)``. Per iteration the loop draws, in order,
observation noise for A1, A2, C (if adversarial; added after normalisation
so the std is relative to unit-scale features), one uniform per date for the
exploration mask (if p < 1), then Dirichlet weights and uniform leverage for
the explored dates.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError, RangeError, TrainingError, UndefinedMetric
from .features import Features, Normalizer, ObservationBatch
from .metrics import RewardKind, reward_node
from .policy import NetworkConfig, PolicyParams, forward, forward_nodes, init_params, l2_penalty, \
    param_nodes, trainable
from .simulator import daily_returns_node

log = logging.getLogger(__name__)

MIN_TRADABLE_DAYS = 30


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.01
    noise_std: float = 0.002
    max_iter: int = 500
    patience: int = 50
    p_policy: float = 0.9
    anneal: bool = True
    adversarial: bool = True
    reward: str = "net_profit"
    seed: int = 0
    selection: str = "train"      # "test" selects checkpoints on the test episode (leaks; audit only)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if self.noise_std < 0:
            raise ConfigError("noise std must be >= 0")
        if self.max_iter < 1 or self.patience < 1 or self.patience > self.max_iter:
            raise ConfigError("need 1 <= patience <= max_iter")
        if not 0 < self.p_policy <= 1:
            raise ConfigError("policy-action probability must be in (0, 1]")
        if self.selection not in ("train", "test"):
            raise ConfigError("selection must be 'train' or 'test'")
        RewardKind(self.reward)

    def p_at(self, it: int) -> float:
        if not self.anneal or self.max_iter == 1:
            return self.p_policy
        return self.p_policy + (1.0 - self.p_policy) * min(it / (self.max_iter - 1), 1.0)


@dataclass
class Episode:
    """Normalised observations at each decision date and the returns each decision earns."""
    obs: ObservationBatch
    strategy_returns: np.ndarray    # (n, l), the day each decision takes effect
    risky_returns: np.ndarray       # (n,)
    normalizer: Normalizer
    cost_rate: float
    leverage_cap: float

    def __len__(self):
        return len(self.risky_returns)


def make_episode(features: Features, normalizer: Normalizer, start: int, end: int, lag: int,
                 cost_rate: float, leverage_cap: float = 3.0) -> Episode:
    """Daily decisions on calendar positions whose effect lands in ``(start, end]``.

    A decision at ``t`` earns the return of ``t + 1 + lag``, so decisions run
    from ``start - lag`` to ``end - 1 - lag`` (clipped to the warmup).
    """
    first = max(start - lag, features.spec.warmup)
    ts = np.arange(first, end - lag)
    if len(ts) < MIN_TRADABLE_DAYS:
        raise RangeError(f"training range has {max(len(ts), 0)} tradable days, "
                         f"need {MIN_TRADABLE_DAYS} after the {features.spec.warmup}-day warmup")
    eff = ts + 1 + lag
    return Episode(normalizer.apply(features.observe(ts)), features.returns[eff],
                   features.risky_returns[eff], normalizer, cost_rate, leverage_cap)


class ReplayBuffer:
    """(observation, action, next observation) records for the current episode."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.obs = None
        self.actions = None
        self.next_obs = None

    def store(self, obs: ObservationBatch, actions: np.ndarray):
        self.obs = obs
        self.actions = actions
        self.next_obs = obs.select(slice(1, None))

    def __len__(self):
        return 0 if self.actions is None else len(self.actions)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays: dict, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in arrays.items()},
                   {k: np.zeros_like(v) for k, v in arrays.items()}, 0, beta1, beta2, eps)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, iteration=None):
    """Bias-corrected Adam update in the ascent direction. Returns new dicts."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            where = "" if iteration is None else f" at iteration {iteration}"
            raise TrainingError(f"non-finite gradient for {name}{where}")
        if g.shape != params[name].shape:
            raise TrainingError(f"gradient shape {g.shape} != parameter shape for {name}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m, v, out = dict(state.m), dict(state.v), dict(params)
    for name, g in grads.items():
        m[name] = b1 * state.m[name] + (1 - b1) * g
        v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m[name] / (1 - b1 ** t)
        v_hat = v[name] / (1 - b2 ** t)
        out[name] = params[name] + lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out, AdamState(m, v, t, b1, b2, state.eps)


def inject_noise(obs: ObservationBatch, std: float, rng: np.random.Generator) -> ObservationBatch:
    if std < 0:
        raise ConfigError("noise std must be >= 0")
    if std == 0:
        return obs
    return ObservationBatch(obs.A1 + rng.normal(0.0, std, obs.A1.shape),
                            obs.A2 + rng.normal(0.0, std, obs.A2.shape),
                            obs.C + rng.normal(0.0, std, obs.C.shape))


class EarlyStopper:
    """Stops once ``patience`` iterations pass without a strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.best_it = -1

    def update(self, it: int, value: float) -> bool:
        if value > self.best:
            self.best, self.best_it = value, it
        return it - self.best_it > self.patience


@dataclass
class TrainResult:
    params: PolicyParams
    rewards: list = field(default_factory=list)
    best_rewards: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    best_iteration: int = 0
    stopped_early: bool = False
    fallbacks: int = 0

    @property
    def best_reward(self) -> float:
        return self.best_rewards[-1]

    def write_log(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "reward", "best_reward", "grad_norm"])
            for i, (r, b, g) in enumerate(zip(self.rewards, self.best_rewards, self.grad_norms)):
                w.writerow([i, repr(float(r)), repr(float(b)), repr(float(g))])


def _reward(kind: str, daily: ad.Node, warn: list) -> ad.Node:
    try:
        return reward_node(kind, daily)
    except UndefinedMetric as exc:
        if kind == RewardKind.NET_PROFIT:
            raise TrainingError(f"episode reward undefined: {exc}") from exc
        if not warn:
            log.warning("%s; falling back to net profit for this iteration", exc)
        warn.append(1)
        return reward_node(RewardKind.NET_PROFIT, daily)


def _episode_objective(arrays: dict, ep: Episode, obs: ObservationBatch, net: NetworkConfig,
                       kind: str, explore=None, warn=None):
    """Build the episode graph; ``explore`` is ``(mask, random exposures)`` or None."""
    tape = ad.Tape()
    nodes = param_nodes(tape, PolicyParams(arrays), net)
    w, lev = forward_nodes(tape, nodes, obs, net)
    exposure = ad.mul(ad.reshape(lev, (len(ep), 1)), w)
    if explore is not None:
        mask, rand = explore
        keep = (~mask).astype(float)[:, None]
        exposure = ad.add(ad.mul(exposure, keep), rand * (1.0 - keep))
    daily = daily_returns_node(exposure, ep.strategy_returns, ep.risky_returns, ep.cost_rate)
    reward = _reward(kind, daily, warn if warn is not None else [])
    objective = ad.sub(reward, l2_penalty(nodes, net.l2))
    return tape, objective, reward, exposure


def evaluate_reward(params: PolicyParams, ep: Episode, net: NetworkConfig, kind: str) -> float:
    """Clean episode reward: no noise, no exploration."""
    _, _, reward, _ = _episode_objective(params.arrays, ep, ep.obs, net, kind)
    return float(reward.value)


def train(episode: Episode, net: NetworkConfig, cfg: TrainerConfig,
          selection_episode: Episode | None = None, init: PolicyParams | None = None) -> TrainResult:
    """Run the training loop; returns the parameters with the best clean reward.

    ``selection_episode`` (only with ``cfg.selection == "test"``) replaces the
    training episode for checkpoint selection and early stopping.
    """
    if cfg.selection == "test" and selection_episode is None:
        raise ConfigError("test-set selection needs a selection episode")
    init_seq, loop_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init or init_params(net, int(init_seq.generate_state(1)[0]))
    rng = np.random.default_rng(loop_seq)
    names = trainable(net)
    arrays = {k: v.copy() for k, v in params.arrays.items()}
    state = AdamState.zeros_like({k: arrays[k] for k in names}, cfg.beta1, cfg.beta2, cfg.eps)
    stopper = EarlyStopper(cfg.patience)
    buffer = ReplayBuffer()
    result = TrainResult(params.copy())
    n, l = len(episode), net.n_strategies
    sel_ep = selection_episode if cfg.selection == "test" else episode
    warn: list = []

    for it in range(cfg.max_iter):
        p = cfg.p_at(it)
        clean = p >= 1.0 and not cfg.adversarial and sel_ep is episode
        buffer.reset()
        obs = inject_noise(episode.obs, cfg.noise_std, rng) if cfg.adversarial else episode.obs
        explore = None
        if p < 1.0:
            mask = rng.random(n) >= p
            k = int(mask.sum())
            rand = np.zeros((n, l))
            if k:
                weights = rng.dirichlet(np.ones(l), k)
                rand[mask] = weights * rng.uniform(0, net.leverage_cap, k)[:, None]
            explore = (mask, rand)
        try:
            tape, objective, reward, exposure = _episode_objective(arrays, episode, obs, net,
                                                                   cfg.reward, explore, warn)
        except NumericError as exc:
            raise TrainingError(f"iteration {it}: {exc}") from exc
        buffer.store(obs, exposure.value)
        if not np.isfinite(reward.value):
            raise TrainingError(f"non-finite reward at iteration {it}")

        if clean:
            value = float(reward.value)
        else:
            value = evaluate_reward(PolicyParams(arrays), sel_ep, net, cfg.reward)
        stop = stopper.update(it, value)
        if stopper.best_it == it:
            result.params = PolicyParams({k: v.copy() for k, v in arrays.items()}, params.seed)
            result.best_iteration = it

        grads = tape.backward(objective)
        gnorm = float(np.sqrt(sum(float(np.sum(grads[k] ** 2)) for k in names)))
        result.rewards.append(value)
        result.best_rewards.append(stopper.best)
        result.grad_norms.append(gnorm)
        if stop:
            result.stopped_early = True
            break
        if it < cfg.max_iter - 1:
            new, state = adam_step({k: arrays[k] for k in names}, {k: grads[k] for k in names},
                                   state, cfg.learning_rate, it)
            arrays.update(new)
    result.fallbacks = len(warn)
    return result


def decide(params: PolicyParams, features: Features, normalizer: Normalizer, ts,
           net: NetworkConfig):
    """Deterministic policy decisions (weights, leverage) at calendar positions ``ts``."""
    dec = forward(params, normalizer.apply(features.observe(np.asarray(ts))), net)
    return dec.weights, dec.leverage
