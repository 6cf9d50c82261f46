import math

import numpy as np
import pytest

from airground import icm
from airground.config import RunConfig
from airground.errors import ShapeError
from airground.icm import IcmConfig, IcmModel
from airground.nn import OptimizerState, clone
from airground.trainer import Trainer

from _gradcheck import check_icm
from _tiny import TINY


def test_encoder_width_and_zero_network():
    for obs_dim, act_dim, kind in ((68, 4, "continuous"), (33, 8, "discrete")):
        m = IcmModel(obs_dim, act_dim, kind)
        p = m.init(np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(3, obs_dim))
        phi = icm.encode(m, p, x)
        assert phi.shape == (3, 128)
        assert np.array_equal(phi, icm.encode(m, p, x))
        zero = {k: np.zeros_like(v) for k, v in p.items()}
        assert not np.any(icm.encode(m, zero, x))
        with pytest.raises(ShapeError):
            icm.encode(m, p, np.zeros((2, obs_dim + 1)))


def test_forward_loss_examples():
    m = IcmModel(5, 3, "continuous", feature_dim=4, hidden=(6,), head_hidden=6)
    p = m.init(np.random.default_rng(0), np.float64)
    phi = np.random.default_rng(1).normal(size=4)
    a = np.array([0.2, -0.3, 0.9])
    pred = icm.predict_next(m, p, phi, a)
    assert icm.forward_loss(m, p, phi, a, pred) == 0.0
    e = np.zeros(4)
    e[2] = 1.0
    assert icm.forward_loss(m, p, phi, a, pred - e) == pytest.approx(0.5, abs=1e-15)
    target = np.random.default_rng(2).normal(size=4)
    loop = 0.0
    for i in range(4):
        loop += (pred[i] - target[i]) ** 2
    assert abs(icm.forward_loss(m, p, phi, a, target) - 0.5 * loop) <= 1e-12


def test_inverse_loss_examples():
    q = np.full(8, 1 / 8)
    assert icm.inverse_loss_from_probs(q, 3) == pytest.approx(math.log(8), abs=1e-12)
    one = np.zeros(8)
    one[5] = 1.0
    assert icm.inverse_loss_from_probs(one, 5) == 0.0
    m = IcmModel(5, 8, "discrete", feature_dim=4, hidden=(6,), head_hidden=6)
    p = m.init(np.random.default_rng(0), np.float64)
    p = {k: (np.zeros_like(v) if k.startswith("icm.inv.") else v) for k, v in p.items()}
    phi = np.random.default_rng(1).normal(size=(2, 4))
    assert np.allclose(icm.inverse_loss(m, p, phi, phi, [0, 7]), math.log(8), atol=1e-12)
    mc = IcmModel(5, 2, "continuous", feature_dim=4, hidden=(6,), head_hidden=6)
    pc = mc.init(np.random.default_rng(0), np.float64)
    pred = icm.predict_action(mc, pc, phi[0], phi[1])
    assert icm.inverse_loss(mc, pc, phi[0], phi[1], pred) == 0.0


def test_intrinsic_reward_examples():
    cfg = IcmConfig(strength=0.02)
    assert icm.intrinsic_reward(cfg, 0.0) == 0.0
    assert icm.intrinsic_reward(cfg, 4.0) == pytest.approx(0.08, abs=1e-15)
    assert icm.intrinsic_reward(IcmConfig(strength=0.0), 9.0) == 0.0
    with pytest.raises(ValueError):
        icm.intrinsic_reward(cfg, -1.0)


def test_transition_rewards_nonnegative():
    m = IcmModel(33, 8, "discrete")
    p = m.init(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    r = icm.transition_rewards(m, p, rng.normal(size=(300, 33)), rng.normal(size=(300, 33)),
                               rng.integers(0, 8, 300), IcmConfig(strength=0.05), chunk=64)
    assert r.shape == (300,) and np.all(r >= 0)


@pytest.mark.parametrize("kind", ["continuous", "discrete"])
def test_icm_loss_fd(kind):
    assert check_icm(np.random.default_rng(5), kind) <= 1e-4


def test_forward_target_carries_no_encoder_gradient():
    m = IcmModel(5, 8, "discrete", feature_dim=4, hidden=(6,), head_hidden=6)
    p = m.init(np.random.default_rng(0), np.float64)
    rng = np.random.default_rng(1)
    obs, nxt, act = rng.normal(size=(6, 5)), rng.normal(size=(6, 5)), rng.integers(0, 8, 6)
    # forward-only loss (weight 1 on L_F): the encoder must get exactly zero gradient
    _, g, _ = icm.icm_loss_grads(m, p, obs, nxt, act, IcmConfig(forward_weight=1.0 - 1e-12))
    _, g_full, _ = icm.icm_loss_grads(m, p, obs, nxt, act, IcmConfig(forward_weight=0.2))
    _, g_inv_only, _ = icm.icm_loss_grads(m, p, obs, nxt, act, IcmConfig(forward_weight=1e-300))
    for k in p:
        if k.startswith("icm.enc."):
            assert np.max(np.abs(g[k])) <= 1e-10 * max(1.0, np.max(np.abs(g_inv_only[k])))
            # the encoder gradient is the inverse path scaled by (1 - beta)
            assert np.allclose(g_full[k], 0.8 * g_inv_only[k], rtol=1e-10, atol=1e-14)


def _fixed_batch(kind, n=64, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, 10))
    if kind == "discrete":
        act = rng.integers(0, 8, n)
        shift = np.eye(8)[act] @ rng.normal(size=(8, 10))
    else:
        act = rng.uniform(-1, 1, (n, 4))
        shift = act @ rng.normal(size=(4, 10))
    return {"obs": obs, "next_obs": obs + shift, "actions": act}


@pytest.mark.parametrize("kind", ["continuous", "discrete"])
def test_overfit_forward_loss_decreases(kind):
    # forward weight 1: the inverse path is off, so the encoder (trained by that
    # path only) stays fixed and the forward model regresses a fixed target
    m = IcmModel(10, 4 if kind == "continuous" else 8, kind, feature_dim=16, hidden=(32, 32), head_hidden=32)
    p = m.init(np.random.default_rng(0), np.float64)
    enc = {k: v for k, v in p.items() if k.startswith("icm.enc.")}
    opt = OptimizerState.zeros_like(p)
    batch = _fixed_batch(kind)
    cfg = IcmConfig(learning_rate=3e-4, forward_weight=1.0)
    lf = []
    for _ in range(50):
        p, opt, (f, _) = icm.icm_update(m, p, opt, batch, cfg)
        lf.append(f)
    assert all(b < a for a, b in zip(lf, lf[1:]))
    assert all(np.array_equal(p[k], v) for k, v in enc.items())


def test_overfit_inverse_loss_discrete():
    m = IcmModel(10, 8, "discrete", feature_dim=16, hidden=(32, 32), head_hidden=32)
    p = m.init(np.random.default_rng(0), np.float64)
    opt = OptimizerState.zeros_like(p)
    batch = _fixed_batch("discrete")
    cfg = IcmConfig(learning_rate=1e-3)
    for _ in range(200):
        p, opt, (_, li) = icm.icm_update(m, p, opt, batch, cfg)
    assert li < math.log(8) / 2


def test_strength_zero_equals_no_icm_build():
    base = RunConfig().with_overrides(TINY)
    zero = base.with_overrides({"uav.curiosity_strength": "0"})
    a = Trainer(zero, use_icm=True)
    b = Trainer(zero, use_icm=False)
    icm_before = clone(a.state.uav.icm_params)
    for _ in range(4):
        a.iterate()
        b.iterate()
    pa, pb = a.state.uav.params, b.state.uav.params
    for k in pb:
        assert np.array_equal(pa[k], pb[k]), k
    assert not np.any(pa["vi.w"])
    # the curiosity networks still trained
    assert any(not np.array_equal(icm_before[k], a.state.uav.icm_params[k]) for k in icm_before)


def test_positive_strength_changes_training():
    base = RunConfig().with_overrides(TINY)
    a = Trainer(base.with_overrides({"uav.curiosity_strength": "0.5"}))
    b = Trainer(base.with_overrides({"uav.curiosity_strength": "0"}))
    for _ in range(2):
        a.iterate()
        b.iterate()
    assert not np.array_equal(a.state.uav.params["pi.w"], b.state.uav.params["pi.w"])
