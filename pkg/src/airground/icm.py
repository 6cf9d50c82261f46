"""Intrinsic curiosity: feature encoder, forward and inverse models.

The forward model regresses the next features from the current features
and the action; its squared error, scaled by ``strength``, is paid to the
agent as an intrinsic reward.  The inverse model recovers the action from a
pair of feature vectors and is the only path by which the encoder learns:
both encoder outputs enter the forward model through a stop-gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn import Mlp, OptimizerState, Params, Tape, adam_update, log_softmax, softmax_rows


@dataclass(frozen=True)
class IcmConfig:
    strength: float = 0.02
    curiosity_gamma: float = 0.99
    learning_rate: float = 3e-4
    forward_weight: float = 0.2


@dataclass
class IcmModel:
    obs_dim: int
    act_dim: int
    kind: str = "continuous"
    feature_dim: int = 128
    hidden: tuple[int, ...] = (256, 256)
    head_hidden: int = 256
    encoder: Mlp = field(init=False)
    fwd: Mlp = field(init=False)
    inv: Mlp = field(init=False)

    def __post_init__(self) -> None:
        self.encoder = Mlp("icm.enc", [self.obs_dim, *self.hidden, self.feature_dim], gate_input=True)
        self.fwd = Mlp("icm.fwd", [self.feature_dim + self.act_dim, self.head_hidden, self.feature_dim])
        self.inv = Mlp("icm.inv", [2 * self.feature_dim, self.head_hidden, self.act_dim])

    def init(self, rng: np.random.Generator, dtype=np.float32) -> Params:
        p = self.encoder.init(rng, dtype)
        p.update(self.fwd.init(rng, dtype))
        p.update(self.inv.init(rng, dtype))
        return p

    def action_input(self, actions: np.ndarray, dtype) -> np.ndarray:
        """One-hot for discrete actions (ids ``0..act_dim-1``), clamped vector otherwise."""
        if self.kind == "discrete":
            a = np.asarray(actions, dtype=np.int64)
            out = np.zeros((len(a), self.act_dim), dtype=dtype)
            out[np.arange(len(a)), a] = 1.0
            return out
        return np.clip(np.asarray(actions, dtype=dtype).reshape(-1, self.act_dim), -1.0, 1.0)


def _batch(x: np.ndarray, dtype) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=dtype)
    return (x[None], True) if x.ndim == 1 else (x, False)


def encode(model: IcmModel, params: Params, obs: np.ndarray, tape: Tape | None = None, key: str | None = None):
    dtype = params["icm.enc.w0"].dtype
    x, single = _batch(obs, dtype)
    if x.shape[-1] != model.obs_dim:
        raise ShapeError(f"observation width {x.shape[-1]} != {model.obs_dim}")
    phi = model.encoder.forward(params, x, tape, key)
    return phi[0] if single else phi


def predict_next(model: IcmModel, params: Params, phi_s, action, tape: Tape | None = None):
    dtype = params["icm.fwd.w0"].dtype
    phi, single = _batch(phi_s, dtype)
    a = model.action_input(np.atleast_1d(action) if model.kind == "discrete" else action, dtype)
    x = np.concatenate([phi, a], axis=1)
    if x.shape[1] != model.fwd.sizes[0]:
        raise ShapeError("feature/action widths do not match the forward model")
    out = model.fwd.forward(params, x, tape)
    return out[0] if single else out


def forward_loss(model: IcmModel, params: Params, phi_s, action, phi_s_next):
    """``0.5 * ||predicted - actual||^2`` per transition (scalar for one)."""
    pred = predict_next(model, params, phi_s, action)
    diff = pred - np.asarray(phi_s_next, dtype=pred.dtype)
    if diff.shape != pred.shape:
        raise ShapeError("next-feature shape mismatch")
    return 0.5 * np.sum(diff * diff, axis=-1)


def predict_action(model: IcmModel, params: Params, phi_s, phi_s_next, tape: Tape | None = None):
    dtype = params["icm.inv.w0"].dtype
    a, single = _batch(phi_s, dtype)
    b, _ = _batch(phi_s_next, dtype)
    out = model.inv.forward(params, np.concatenate([a, b], axis=1), tape)
    return out[0] if single else out


def inverse_loss(model: IcmModel, params: Params, phi_s, phi_s_next, true_action):
    """Cross-entropy (discrete) or mean squared error (continuous) per transition."""
    pred = predict_action(model, params, phi_s, phi_s_next)
    single = pred.ndim == 1
    pred2 = pred[None] if single else pred
    if model.kind == "discrete":
        a = np.atleast_1d(np.asarray(true_action, dtype=np.int64))
        loss = -log_softmax(pred2)[np.arange(len(a)), a]
    else:
        a = model.action_input(true_action, pred2.dtype)
        loss = np.mean((pred2 - a) ** 2, axis=-1)
    return loss[0] if single else loss


def inverse_loss_from_probs(q: np.ndarray, true_action: int) -> float:
    """Cross-entropy of a probability vector against a one-hot action."""
    return float(-np.log(q[int(true_action)]))


def intrinsic_reward(config: IcmConfig, forward_error):
    fe = np.asarray(forward_error)
    if np.any(fe < 0):
        raise ValueError("forward error must be non-negative")
    r = config.strength * fe
    return float(r) if np.ndim(r) == 0 else r


def transition_rewards(model: IcmModel, params: Params, obs, next_obs, actions, config: IcmConfig, chunk: int = 4096):
    """Intrinsic reward for every transition in a flat batch."""
    out = []
    for i in range(0, len(obs), chunk):
        sl = slice(i, i + chunk)
        phi = encode(model, params, obs[sl])
        phi2 = encode(model, params, next_obs[sl])
        out.append(forward_loss(model, params, phi, actions[sl], phi2))
    err = np.concatenate(out) if out else np.zeros(0)
    return intrinsic_reward(config, err.astype(np.float64))


def icm_loss_grads(
    model: IcmModel,
    params: Params,
    obs: np.ndarray,
    next_obs: np.ndarray,
    actions: np.ndarray,
    config: IcmConfig,
    frozen: Params | None = None,
):
    """Total ICM loss and its gradient.

    The forward model sees encoder outputs through a stop-gradient; they are
    computed with ``frozen`` (defaults to ``params``) so a finite-difference
    check can perturb ``params`` while the stopped values stay fixed.
    Returns ``(loss, grads, (mean L_F, mean L_I))``.
    """
    beta = config.forward_weight
    dtype = params["icm.enc.w0"].dtype
    obs = np.asarray(obs, dtype=dtype)
    next_obs = np.asarray(next_obs, dtype=dtype)
    n = len(obs)
    tape = Tape()
    phi = model.encoder.forward(params, obs, tape, "enc_s")
    phi2 = model.encoder.forward(params, next_obs, tape, "enc_s2")
    if frozen is None:
        sg_phi, sg_phi2 = phi, phi2
    else:
        sg_phi = model.encoder.forward(frozen, obs)
        sg_phi2 = model.encoder.forward(frozen, next_obs)

    a_in = model.action_input(actions, dtype)
    pred = model.fwd.forward(params, np.concatenate([sg_phi, a_in], axis=1), tape)
    diff = pred - sg_phi2
    lf = 0.5 * np.sum(diff * diff, axis=1)
    _, g_fwd = model.fwd.backward(params, (beta / n) * diff, tape, need_dx=False)

    inv_out = model.inv.forward(params, np.concatenate([phi, phi2], axis=1), tape)
    if model.kind == "discrete":
        lsm = log_softmax(inv_out)
        idx = np.asarray(actions, dtype=np.int64)
        li = -lsm[np.arange(n), idx]
        d_inv = softmax_rows(inv_out)
        d_inv[np.arange(n), idx] -= 1.0
    else:
        err = inv_out - a_in
        li = np.mean(err * err, axis=1)
        d_inv = 2.0 * err / model.act_dim
    d_inv = d_inv * ((1.0 - beta) / n)
    dx, g_inv = model.inv.backward(params, d_inv.astype(dtype), tape)
    f = model.feature_dim
    _, g_e1 = model.encoder.backward(params, dx[:, :f], tape, "enc_s", need_dx=False)
    _, g_e2 = model.encoder.backward(params, dx[:, f:], tape, "enc_s2", need_dx=False)

    grads: Params = {}
    for k in params:
        if k.startswith("icm.enc."):
            grads[k] = g_e1[k] + g_e2[k]
        elif k.startswith("icm.fwd."):
            grads[k] = g_fwd[k]
        else:
            grads[k] = g_inv[k]
    loss = beta * float(np.mean(lf)) + (1.0 - beta) * float(np.mean(li))
    return loss, grads, (float(np.mean(lf)), float(np.mean(li)))


def icm_update(
    model: IcmModel,
    params: Params,
    opt: OptimizerState,
    batch: dict[str, np.ndarray],
    config: IcmConfig,
):
    """One Adam step at the curiosity learning rate.

    ``batch`` holds ``obs``, ``next_obs`` and ``actions``.
    """
    _, grads, losses = icm_loss_grads(model, params, batch["obs"], batch["next_obs"], batch["actions"], config)
    new_params, new_opt = adam_update(params, grads, opt, config.learning_rate)
    return new_params, new_opt, losses
