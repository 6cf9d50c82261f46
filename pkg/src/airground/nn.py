"""Dense networks with hand-written reverse mode, Adam and LR schedules.

Parameters live in plain ``dict[str, ndarray]`` objects whose insertion order
is the canonical order used by the optimizer and the checkpoint writer.
Every forward pass can record its intermediates on a :class:`Tape`; the
matching ``backward`` consumes the tape and returns gradients keyed like the
parameters.

The only nonlinearity besides the output squashing is the sigmoid gate
``x * sigmoid(x)``, applied to the raw input and after each hidden layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ShapeError, TapeError

Params = dict[str, np.ndarray]

LOG_STD_INIT = -0.5
POLICY_HEAD_SCALE = 0.01
HALF_LOG_2PI_E = 0.5 * math.log(2.0 * math.pi * math.e)
LOG_2PI = math.log(2.0 * math.pi)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def gate(x) -> np.ndarray:
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(float)
    return x * sigmoid(x)


def gate_grad(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """d gate / dx given ``s = sigmoid(x)``."""
    return s * (1.0 + x * (1.0 - s))


class Tape:
    """Intermediate values recorded by a forward pass."""

    def __init__(self) -> None:
        self._store: dict[str, object] = {}

    def put(self, key: str, value) -> None:
        self._store[key] = value

    def get(self, key: str):
        try:
            return self._store[key]
        except KeyError:
            raise TapeError(f"nothing recorded under {key!r}; run the forward pass first") from None

    def __contains__(self, key: str) -> bool:
        return key in self._store


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Mlp:
    """Gated multilayer perceptron.

    ``out`` selects the activation of the final layer: ``"linear"``,
    ``"gate"`` or ``"tanh"``.
    """

    def __init__(self, prefix: str, sizes: Iterable[int], gate_input: bool = True, out: str = "linear"):
        self.prefix = prefix
        self.sizes = list(sizes)
        self.gate_input = gate_input
        self.out = out
        if len(self.sizes) < 2:
            raise ShapeError("an Mlp needs at least input and output sizes")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def names(self) -> list[str]:
        out = []
        for i in range(self.n_layers):
            out += [f"{self.prefix}.w{i}", f"{self.prefix}.b{i}"]
        return out

    def init(self, rng: np.random.Generator, dtype=np.float32, last_scale: float = 1.0) -> Params:
        p: Params = {}
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            w = glorot(rng, a, b, dtype)
            if i == self.n_layers - 1:
                w = (w * last_scale).astype(dtype)
            p[f"{self.prefix}.w{i}"] = w
            p[f"{self.prefix}.b{i}"] = np.zeros(b, dtype=dtype)
        return p

    def forward(self, params: Params, x: np.ndarray, tape: Tape | None = None, key: str | None = None):
        if x.shape[-1] != self.sizes[0]:
            raise ShapeError(f"{self.prefix}: expected input width {self.sizes[0]}, got {x.shape[-1]}")
        cache = []
        h = x
        if self.gate_input:
            s = sigmoid(h)
            cache.append(("gate", h, s))
            h = h * s
        for i in range(self.n_layers):
            w = params[f"{self.prefix}.w{i}"]
            b = params[f"{self.prefix}.b{i}"]
            cache.append(("dense", i, h))
            z = h @ w + b
            last = i == self.n_layers - 1
            act = self.out if last else "gate"
            if act == "gate":
                s = sigmoid(z)
                cache.append(("gate", z, s))
                h = z * s
            elif act == "tanh":
                h = np.tanh(z)
                cache.append(("tanh", h))
            else:
                h = z
        if tape is not None:
            tape.put(key or self.prefix, cache)
        return h

    def backward(self, params: Params, dy: np.ndarray, tape: Tape, key: str | None = None, need_dx: bool = True):
        cache = tape.get(key or self.prefix)
        grads: Params = {}
        g = dy
        for rec in reversed(cache):
            kind = rec[0]
            if kind == "gate":
                _, z, s = rec
                g = g * gate_grad(z, s)
            elif kind == "tanh":
                g = g * (1.0 - rec[1] ** 2)
            else:
                _, i, h = rec
                w = params[f"{self.prefix}.w{i}"]
                grads[f"{self.prefix}.w{i}"] = h.T @ g
                grads[f"{self.prefix}.b{i}"] = g.sum(axis=0)
                if i == 0 and not need_dx:
                    return None, grads
                g = g @ w.T
        return g, grads


# ----------------------------------------------------------------------------
# distributions


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    return -(np.exp(lp) * lp).sum(axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(log_std.size * HALF_LOG_2PI_E + np.sum(log_std))


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    std = np.exp(log_std)
    z = (actions - mean) / std
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * mean.shape[-1] * LOG_2PI


def categorical_log_prob(actions: np.ndarray, logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    return lp[np.arange(len(actions)), actions]


# ----------------------------------------------------------------------------
# actor-critic


@dataclass
class ActorCritic:
    """Shared gated trunk with policy and value heads.

    ``kind`` is ``"continuous"`` (tanh-bounded Gaussian mean plus a
    state-independent log-std) or ``"discrete"`` (logits).  When
    ``intrinsic_value`` is set a second value head estimates curiosity
    returns; it starts at exactly zero.  The extrinsic value head reports
    ``value_scale`` times its raw output so that returns of order 1e3 sit
    within reach of a unit-scale layer.
    """

    obs_dim: int
    act_dim: int
    kind: str = "continuous"
    hidden: tuple[int, ...] = (256, 256)
    intrinsic_value: bool = True
    value_scale: float = 1.0
    trunk: Mlp = field(init=False)

    def __post_init__(self) -> None:
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if not self.value_scale > 0:
            raise ValueError("value_scale must be positive")
        self.trunk = Mlp("trunk", [self.obs_dim, *self.hidden], gate_input=True, out="gate")

    @property
    def feat_dim(self) -> int:
        return self.hidden[-1]

    def init(self, rng: np.random.Generator, dtype=np.float32) -> Params:
        p = self.trunk.init(rng, dtype)
        f = self.feat_dim
        p["pi.w"] = (glorot(rng, f, self.act_dim, dtype) * POLICY_HEAD_SCALE).astype(dtype)
        p["pi.b"] = np.zeros(self.act_dim, dtype=dtype)
        if self.kind == "continuous":
            p["log_std"] = np.full(self.act_dim, LOG_STD_INIT, dtype=dtype)
        p["v.w"] = glorot(rng, f, 1, dtype)
        p["v.b"] = np.zeros(1, dtype=dtype)
        if self.intrinsic_value:
            p["vi.w"] = np.zeros((f, 1), dtype=dtype)
            p["vi.b"] = np.zeros(1, dtype=dtype)
        return p

    def forward(self, params: Params, obs: np.ndarray, tape: Tape | None = None) -> dict[str, np.ndarray]:
        obs = np.asarray(obs, dtype=params["v.w"].dtype)
        squeeze = obs.ndim == 1
        if squeeze:
            obs = obs[None]
        if obs.shape[-1] != self.obs_dim:
            raise ShapeError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        h = self.trunk.forward(params, obs, tape)
        out: dict[str, np.ndarray] = {}
        z = h @ params["pi.w"] + params["pi.b"]
        if self.kind == "continuous":
            out["mean"] = np.tanh(z)
            out["log_std"] = params["log_std"]
        else:
            out["logits"] = z
        out["value"] = self.value_scale * (h @ params["v.w"] + params["v.b"])[:, 0]
        if self.intrinsic_value:
            out["value_int"] = (h @ params["vi.w"] + params["vi.b"])[:, 0]
        if tape is not None:
            tape.put("ac.h", h)
            tape.put("ac.out", out)
        if squeeze:
            out = {k: (v if k == "log_std" else v[0]) for k, v in out.items()}
        return out

    def backward(self, params: Params, tape: Tape, d_out: dict[str, np.ndarray]) -> Params:
        """Gradients given ``d loss / d output`` for any subset of the outputs."""
        h = tape.get("ac.h")
        out = tape.get("ac.out")
        grads: Params = {}
        dh = np.zeros_like(h)
        if "mean" in d_out or "logits" in d_out:
            if self.kind == "continuous":
                dz = d_out["mean"] * (1.0 - out["mean"] ** 2)
            else:
                dz = d_out["logits"]
            grads["pi.w"] = h.T @ dz
            grads["pi.b"] = dz.sum(axis=0)
            dh += dz @ params["pi.w"].T
        else:
            grads["pi.w"] = np.zeros_like(params["pi.w"])
            grads["pi.b"] = np.zeros_like(params["pi.b"])
        if self.kind == "continuous":
            grads["log_std"] = np.asarray(d_out.get("log_std", np.zeros_like(params["log_std"])), dtype=h.dtype)
        for head, key in (("v", "value"), ("vi", "value_int")):
            if f"{head}.w" not in params:
                continue
            dv = d_out.get(key)
            if dv is None:
                grads[f"{head}.w"] = np.zeros_like(params[f"{head}.w"])
                grads[f"{head}.b"] = np.zeros_like(params[f"{head}.b"])
                continue
            dv = dv[:, None] * (self.value_scale if head == "v" else 1.0)
            grads[f"{head}.w"] = h.T @ dv
            grads[f"{head}.b"] = dv.sum(axis=0)
            dh += dv @ params[f"{head}.w"].T
        _, tg = self.trunk.backward(params, dh, tape, need_dx=False)
        grads.update(tg)
        return {k: grads[k] for k in params}


def forward_actor_critic(model: ActorCritic, params: Params, obs: np.ndarray, tape: Tape | None = None):
    """``(distribution parameters, value)`` for one observation or a batch."""
    out = model.forward(params, obs, tape)
    dist = {k: v for k, v in out.items() if k in ("mean", "log_std", "logits")}
    return dist, out["value"]


def backward(model, params: Params, tape: Tape | None, d_out: dict[str, np.ndarray]) -> Params:
    if tape is None:
        raise TapeError("backward called without a recorded forward pass")
    return model.backward(params, tape, d_out)


# ----------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    m: Params
    v: Params
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_update(params: Params, grads: Params, state: OptimizerState, rate: float) -> tuple[Params, OptimizerState]:
    """Bias-corrected Adam step; returns new parameter and state objects."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ShapeError("parameter, gradient and optimizer keys differ")
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new_p: Params = {}
    new_m: Params = {}
    new_v: Params = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} != parameter shape {p.shape}")
        dt = p.dtype
        m = (ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * g).astype(dt)
        v = (ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * g * g).astype(dt)
        step = rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_p[k] = (p - step).astype(dt)
        new_m[k] = m
        new_v[k] = v
    return new_p, OptimizerState(new_m, new_v, t)


@dataclass(frozen=True)
class LrSchedule:
    initial_rate: float
    total_steps: int
    mode: str = "linear"


def lr_at(schedule: LrSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.mode == "constant":
        return schedule.initial_rate
    if schedule.mode != "linear":
        raise ValueError(f"unknown schedule mode {schedule.mode!r}")
    return schedule.initial_rate * max(0.0, 1.0 - step / schedule.total_steps)


def clone(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


def params_equal(a: Params, b: Params) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))
