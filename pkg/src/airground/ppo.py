"""PPO with the clipped surrogate objective, GAE and an entropy bonus.

A learner is an :class:`~airground.nn.ActorCritic` plus Adam state.  Rollouts
are collected into a write-once :class:`RolloutBuffer` of ``horizon`` steps
for each of ``N`` instances; :func:`ppo_update` then runs a few epochs of
shuffled minibatch steps on the flattened buffer.

Two reward streams are kept apart: the environment reward and the curiosity
reward.  Each gets its own GAE pass (with its own discount and value head)
and the advantages are added before normalisation.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError, LifecycleError, NumericInputError, ShapeError
from .nn import (
    HALF_LOG_2PI_E,
    ActorCritic,
    LrSchedule,
    OptimizerState,
    Params,
    Tape,
    adam_update,
    categorical_entropy,
    gaussian_log_prob,
    log_softmax,
    lr_at,
)

ADV_EPS = 1e-8


@dataclass(frozen=True)
class PpoConfig:
    epsilon: float = 0.2
    entropy_coef: float = 0.03
    gamma: float = 0.99
    lam: float = 0.95
    epochs: int = 3
    minibatch_size: int = 1024
    horizon: int = 512
    value_coef: float = 0.5
    extrinsic_strength: float = 1.0
    normalize_advantages: bool = True

    def validate(self) -> "PpoConfig":
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("must lie in (0, 1)", "epsilon")
        for name in ("gamma", "lam"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError("must lie in (0, 1]", name)
        for name in ("epochs", "minibatch_size", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", name)
        if self.entropy_coef < 0 or self.value_coef < 0 or self.extrinsic_strength < 0:
            raise ConfigError("coefficients must be >= 0")
        return self


# ----------------------------------------------------------------------------
# rollout storage


class RolloutBuffer:
    """Fixed-capacity ``horizon x num_instances`` store, written row by row.

    Each call to :meth:`add` writes one time step for all instances.  Once
    full, the intrinsic rewards may be attached exactly once with
    :meth:`set_intrinsic`; after :meth:`finish` every array is read-only.

    Per-step fields (arrays shaped ``(T, N, ...)``):

    ``obs``, ``next_obs``
        observation the action was chosen from, and the observation that
        followed it (the terminal observation if the stream ended there).
    ``actions``, ``log_prob``, ``value``, ``value_int``
        the sampled action (before clamping), its log-probability and the
        two value estimates at ``obs``.
    ``reward``, ``reward_int``
        environment and curiosity rewards.
    ``done``
        the agent's stream ended after this step.
    ``boot``, ``boot_int``
        value of the terminal observation when the stream was cut off
        rather than ended by the agent (0 otherwise).
    ``valid``
        the step belongs to the agent's stream (a parked UAV does not).
    """

    FIELDS = ("obs", "next_obs", "actions", "log_prob", "value", "value_int", "reward", "done", "boot", "boot_int", "valid")

    def __init__(self, horizon: int, num_instances: int, obs_dim: int, act_shape: tuple[int, ...], discrete: bool):
        self.horizon = horizon
        self.num_instances = num_instances
        self.obs_dim = obs_dim
        self.discrete = discrete
        T, N = horizon, num_instances
        self.obs = np.zeros((T, N, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((T, N, obs_dim), dtype=np.float32)
        self.actions = np.zeros((T, N) + act_shape, dtype=np.int64 if discrete else np.float64)
        self.log_prob = np.zeros((T, N))
        self.value = np.zeros((T, N))
        self.value_int = np.zeros((T, N))
        self.reward = np.zeros((T, N))
        self.reward_int = np.zeros((T, N))
        self.done = np.zeros((T, N), dtype=bool)
        self.boot = np.zeros((T, N))
        self.boot_int = np.zeros((T, N))
        self.valid = np.zeros((T, N), dtype=bool)
        self.last_value = np.zeros(N)
        self.last_value_int = np.zeros(N)
        self.cursor = 0
        self._intrinsic_set = False
        self._finished = False

    @property
    def capacity(self) -> int:
        return self.horizon * self.num_instances

    @property
    def full(self) -> bool:
        return self.cursor == self.horizon

    def add(self, **row) -> None:
        if self.full:
            raise LifecycleError("rollout buffer is full")
        missing = set(self.FIELDS) - row.keys()
        if missing:
            raise ShapeError(f"missing rollout fields: {sorted(missing)}")
        t = self.cursor
        for name in self.FIELDS:
            getattr(self, name)[t] = row[name]
        self.cursor += 1

    def set_last_values(self, value: np.ndarray, value_int: np.ndarray) -> None:
        self.last_value[:] = value
        self.last_value_int[:] = value_int

    def set_intrinsic(self, reward_int: np.ndarray) -> None:
        if not self.full:
            raise LifecycleError("intrinsic rewards are attached to a full buffer")
        if self._intrinsic_set:
            raise LifecycleError("intrinsic rewards were already attached")
        r = np.asarray(reward_int, dtype=float).reshape(self.horizon, self.num_instances)
        if np.any(r < 0):
            raise NumericInputError("intrinsic rewards must be non-negative")
        self.reward_int[:] = np.where(self.valid, r, 0.0)
        self._intrinsic_set = True

    def finish(self) -> None:
        if not self.full:
            raise LifecycleError("buffer is not full")
        for name in self.FIELDS + ("reward_int", "last_value", "last_value_int"):
            getattr(self, name).flags.writeable = False
        self._finished = True

    def flat(self, name: str) -> np.ndarray:
        a = getattr(self, name)
        return a.reshape((self.capacity,) + a.shape[2:])


# ----------------------------------------------------------------------------
# estimators and objective pieces


def compute_gae(rewards, values, dones, bootstrap_value=None, gamma: float = 0.99, lam: float = 0.95):
    """Advantages and returns by the backward TD-residual recursion.

    ``values`` either has one more entry than ``rewards`` along time (the last
    being the bootstrap) or the same length, with ``bootstrap_value`` given.
    Works on ``(T,)`` or ``(T, N)`` inputs.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = rewards.shape[0]
    if bootstrap_value is not None:
        if values.shape != rewards.shape:
            raise ShapeError("values must match rewards when a bootstrap value is passed")
        boot = np.broadcast_to(np.asarray(bootstrap_value, dtype=float), rewards.shape[1:])
        values = np.concatenate([values, boot[None]], axis=0)
    if values.shape != (T + 1,) + rewards.shape[1:] or dones.shape != rewards.shape:
        raise ShapeError(
            f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}"
        )
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values[:T]


def clip_ratio(ratio, epsilon: float):
    r = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon)
    return float(r) if np.ndim(r) == 0 else r


def surrogate_terms(ratio: np.ndarray, advantages: np.ndarray, epsilon: float):
    """Per-sample ``(unclipped, clipped, min)`` surrogate values."""
    s1 = ratio * advantages
    s2 = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantages
    return s1, s2, np.minimum(s1, s2)


def ppo_objective(log_prob_new, log_prob_old, advantages, entropy, config: PpoConfig, value_loss: float = 0.0):
    """Loss to minimise plus diagnostics.

    ``entropy`` is the batch-mean policy entropy; the entropy weight is
    ``config.entropy_coef``.
    """
    lp_new = np.asarray(log_prob_new, dtype=float)
    lp_old = np.asarray(log_prob_old, dtype=float)
    if not (np.all(np.isfinite(lp_new)) and np.all(np.isfinite(lp_old))):
        raise NumericInputError("log-probabilities must be finite")
    adv = np.asarray(advantages, dtype=float)
    ratio = np.exp(lp_new - lp_old)
    _, _, surr = surrogate_terms(ratio, adv, config.epsilon)
    mean_surr = float(np.mean(surr))
    loss = -(mean_surr + config.entropy_coef * float(entropy)) + config.value_coef * float(value_loss)
    diag = {
        "surrogate": mean_surr,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > config.epsilon)),
        "mean_ratio": float(np.mean(ratio)),
    }
    return loss, diag


def policy_entropy(dist: dict[str, np.ndarray]) -> float:
    """Batch-mean entropy of a categorical (``logits``) or diagonal Gaussian (``log_std``)."""
    if "logits" in dist:
        return float(np.mean(categorical_entropy(np.atleast_2d(dist["logits"]))))
    log_std = np.asarray(dist["log_std"], dtype=float)
    return float(log_std.size * HALF_LOG_2PI_E + np.sum(log_std))


def normalize(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + ADV_EPS)


# ----------------------------------------------------------------------------
# acting


def sample_actions(model: ActorCritic, params: Params, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False):
    """Draw actions for a batch; returns ``(actions, log_prob, value, value_int)``.

    Continuous actions are returned unclamped (the environment clamps).
    """
    out = model.forward(params, obs)
    value = out["value"].astype(float)
    value_int = out["value_int"].astype(float) if "value_int" in out else np.zeros_like(value)
    if model.kind == "continuous":
        mean = out["mean"].astype(float)
        log_std = out["log_std"].astype(float)
        if deterministic:
            a = mean.copy()
        else:
            a = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        return a, gaussian_log_prob(a, mean, log_std), value, value_int
    logits = out["logits"].astype(float)
    lp = log_softmax(logits)
    if deterministic:
        a = np.argmax(logits, axis=1)
    else:
        cdf = np.cumsum(np.exp(lp), axis=1)
        u = rng.random(len(logits))[:, None] * cdf[:, -1:]
        a = np.minimum((cdf <= u).sum(axis=1), logits.shape[1] - 1)
    return a.astype(np.int64), lp[np.arange(len(a)), a], value, value_int


# ----------------------------------------------------------------------------
# loss and gradient


def ppo_loss_grads(
    model: ActorCritic,
    params: Params,
    batch: dict[str, np.ndarray],
    config: PpoConfig,
    entropy_coef: float | None = None,
):
    """Loss value, parameter gradients and diagnostics for one minibatch.

    ``batch`` holds ``obs``, ``actions``, ``log_prob`` (old), ``adv``
    (already combined and normalised), ``ret`` and optionally ``ret_int``.
    """
    c = config.entropy_coef if entropy_coef is None else entropy_coef
    tape = Tape()
    out = model.forward(params, batch["obs"], tape)
    dtype = out["value"].dtype
    n = len(batch["obs"])
    adv = np.asarray(batch["adv"], dtype=float)
    d_out: dict[str, np.ndarray] = {}

    if model.kind == "continuous":
        mean = out["mean"].astype(float)
        log_std = out["log_std"].astype(float)
        a = np.asarray(batch["actions"], dtype=float)
        lp = gaussian_log_prob(a, mean, log_std)
        entropy = log_std.size * HALF_LOG_2PI_E + float(np.sum(log_std))
    else:
        logits = out["logits"].astype(float)
        lsm = log_softmax(logits)
        idx = np.asarray(batch["actions"], dtype=np.int64)
        lp = lsm[np.arange(n), idx]
        p = np.exp(lsm)
        h_rows = -(p * lsm).sum(axis=1)
        entropy = float(np.mean(h_rows))

    lp_old = np.asarray(batch["log_prob"], dtype=float)
    if not np.all(np.isfinite(lp)):
        raise NumericInputError("non-finite log-probability")
    ratio = np.exp(lp - lp_old)
    s1, s2, surr = surrogate_terms(ratio, adv, config.epsilon)
    # d(-mean surr)/d lp: the unclipped branch is the active one
    d_lp = np.where(s1 <= s2, -ratio * adv / n, 0.0)

    if model.kind == "continuous":
        std2 = np.exp(2.0 * log_std)
        d_mean = d_lp[:, None] * (a - mean) / std2
        z2 = (a - mean) ** 2 / std2
        d_log_std = (d_lp[:, None] * (z2 - 1.0)).sum(axis=0) - c
        d_out["mean"] = d_mean.astype(dtype)
        d_out["log_std"] = d_log_std.astype(dtype)
    else:
        onehot = np.zeros_like(p)
        onehot[np.arange(n), idx] = 1.0
        d_logits = d_lp[:, None] * (onehot - p)
        # d H_row / d logits = -p (log p + H_row)
        d_logits += (c / n) * p * (lsm + h_rows[:, None])
        d_out["logits"] = d_logits.astype(dtype)

    v = out["value"].astype(float)
    ret = np.asarray(batch["ret"], dtype=float)
    # squared error in units of the head's scale
    s2 = model.value_scale**2
    v_err = v - ret
    value_loss = float(np.mean(v_err**2)) / s2
    d_out["value"] = (config.value_coef * 2.0 * v_err / (n * s2)).astype(dtype)
    if "value_int" in out and "ret_int" in batch:
        vi_err = out["value_int"].astype(float) - np.asarray(batch["ret_int"], dtype=float)
        value_loss_int = float(np.mean(vi_err**2))
        d_out["value_int"] = (config.value_coef * 2.0 * vi_err / n).astype(dtype)
    else:
        value_loss_int = 0.0

    grads = model.backward(params, tape, d_out)
    mean_surr = float(np.mean(surr))
    loss = -(mean_surr + c * entropy) + config.value_coef * (value_loss + value_loss_int)
    stats = {
        "policy_loss": -mean_surr,
        "value_loss": value_loss,
        "value_loss_int": value_loss_int,
        "entropy": float(entropy),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > config.epsilon)),
        "mean_ratio": float(np.mean(ratio)),
        "approx_kl": float(np.mean(lp_old - lp)),
    }
    return loss, grads, stats


# ----------------------------------------------------------------------------
# the update


def buffer_advantages(buffer: RolloutBuffer, config: PpoConfig, curiosity_gamma: float | None = None):
    """Combined advantages plus the two return targets, shaped ``(T, N)``."""
    r = buffer.reward + config.gamma * buffer.boot
    adv, ret = compute_gae(
        r, np.concatenate([buffer.value, buffer.last_value[None]]), buffer.done, None, config.gamma, config.lam
    )
    combined = config.extrinsic_strength * adv
    ret_int = None
    if curiosity_gamma is not None:
        g = curiosity_gamma
        ri = buffer.reward_int + g * buffer.boot_int
        adv_i, ret_int = compute_gae(
            ri, np.concatenate([buffer.value_int, buffer.last_value_int[None]]), buffer.done, None, g, config.lam
        )
        combined = combined + adv_i
    return combined, ret, ret_int


def minibatches(n: int, minibatch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    k = max(1, int(round(n / minibatch_size)))
    return np.array_split(perm, k)


@dataclass
class UpdateHooks:
    """Optional work done on every PPO minibatch (the curiosity update)."""

    on_minibatch: Callable[[np.ndarray], None] | None = None


def ppo_update(
    model: ActorCritic,
    params: Params,
    opt: OptimizerState,
    buffer: RolloutBuffer,
    config: PpoConfig,
    schedule: LrSchedule,
    step: int,
    rng: np.random.Generator,
    curiosity_gamma: float | None = None,
    hooks: UpdateHooks | None = None,
):
    """Epochs of shuffled minibatch Adam steps on a full buffer.

    The learning rate is ``lr_at(schedule, step)`` and the entropy weight
    decays in proportion to it.  ``hooks.on_minibatch`` receives the flat
    indices of each minibatch.  Returns ``(params, opt, stats)``.
    """
    if not buffer.full:
        raise LifecycleError("ppo_update needs a full rollout buffer")
    rate = lr_at(schedule, step)
    frac = rate / schedule.initial_rate if schedule.initial_rate > 0 else 0.0
    coef = config.entropy_coef * frac

    use_int = curiosity_gamma is not None and "vi.w" in params
    adv, ret, ret_int = buffer_advantages(buffer, config, curiosity_gamma if use_int else None)
    valid = np.flatnonzero(buffer.flat("valid"))
    obs = buffer.flat("obs")
    actions = buffer.flat("actions")
    log_prob = buffer.flat("log_prob")
    adv_f = adv.reshape(-1)
    ret_f = ret.reshape(-1)
    ret_int_f = ret_int.reshape(-1) if use_int else None

    totals: dict[str, float] = {}
    count = 0
    if len(valid):
        for _ in range(config.epochs):
            for mb in minibatches(len(valid), config.minibatch_size, rng):
                idx = valid[mb]
                a = adv_f[idx]
                if config.normalize_advantages:
                    a = normalize(a)
                batch = {"obs": obs[idx], "actions": actions[idx], "log_prob": log_prob[idx], "adv": a, "ret": ret_f[idx]}
                if use_int:
                    batch["ret_int"] = ret_int_f[idx]
                _, grads, stats = ppo_loss_grads(model, params, batch, config, coef)
                params, opt = adam_update(params, grads, opt, rate)
                if hooks is not None and hooks.on_minibatch is not None:
                    hooks.on_minibatch(idx)
                for k, v in stats.items():
                    totals[k] = totals.get(k, 0.0) + v
                count += 1
    out = {k: v / count for k, v in totals.items()} if count else {}
    out.update(lr=rate, entropy_coef=coef, samples=int(len(valid)))
    return params, opt, out


# ----------------------------------------------------------------------------
# metrics log

METRIC_COLUMNS = (
    "step",
    "agent",
    "episodes",
    "mean_return",
    "success_rate",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_frac",
    "intrinsic_mean",
    "forward_loss",
    "inverse_loss",
)


class MetricsLog:
    """Tab-separated per-update log; one row per agent per update.

    Columns are :data:`METRIC_COLUMNS`.  Missing numbers are written as
    ``nan``; floats use ``repr`` so the file round-trips exactly.
    """

    def __init__(self, path=None, append: bool = False):
        self.path = path
        self.rows: list[dict] = []
        if path is not None and not (append and os.path.exists(path)):
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\t".join(METRIC_COLUMNS) + "\n")

    def append(self, row: dict) -> None:
        full = {k: row.get(k, math.nan) for k in METRIC_COLUMNS}
        self.rows.append(full)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write("\t".join(_fmt(full[k]) for k in METRIC_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        rows = []
        for raw in reader:
            row: dict = {}
            for k, v in raw.items():
                if k == "agent":
                    row[k] = v
                elif k in ("step", "episodes"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def episode_returns(rows: Iterable[dict], agent: str) -> tuple[np.ndarray, np.ndarray]:
    """``(steps, mean_return)`` series for one agent."""
    sel = [r for r in rows if r["agent"] == agent]
    return np.array([r["step"] for r in sel]), np.array([r["mean_return"] for r in sel])
