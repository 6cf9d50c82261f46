import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airground import ppo
from airground.errors import LifecycleError, NumericInputError, ShapeError
from airground.nn import ActorCritic, LrSchedule, OptimizerState, clone, gaussian_log_prob, params_equal
from airground.ppo import PpoConfig, RolloutBuffer

from _oracles import gae_bruteforce


# -- GAE ---------------------------------------------------------------------


def test_gae_worked_example():
    adv, ret = ppo.compute_gae([1.0, 1.0], [0.5, 0.5, 0.0], [0, 0], gamma=0.99, lam=0.95)
    assert adv[1] == pytest.approx(0.5, abs=1e-15)
    assert adv[0] == pytest.approx(1.46525, abs=1e-12)
    assert np.allclose(ret, adv + 0.5)
    adv2, _ = ppo.compute_gae([1.0, 1.0], [0.5, 0.5], [0, 0], bootstrap_value=0.0, gamma=0.99, lam=0.95)
    assert np.array_equal(adv, adv2)


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(0)
    r = rng.normal(size=12)
    v = rng.normal(size=13)
    d = rng.random(12) < 0.3
    adv, _ = ppo.compute_gae(r, v, d, gamma=0.9, lam=0.0)
    delta = r + 0.9 * v[1:] * (1 - d) - v[:-1]
    assert np.array_equal(adv, delta)


def test_gae_all_done_patterns_short():
    rng = np.random.default_rng(1)
    T = 6
    for mask in range(2**T):
        d = np.array([(mask >> k) & 1 for k in range(T)], dtype=float)
        r = rng.normal(size=T)
        v = rng.normal(size=T + 1)
        adv, _ = ppo.compute_gae(r, v, d, gamma=0.97, lam=0.9)
        assert np.max(np.abs(adv - gae_bruteforce(r, v, d, 0.97, 0.9))) <= 1e-10


def test_gae_bruteforce_random():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        T = int(rng.integers(1, 17))
        r = rng.normal(0, 10, size=T)
        v = rng.normal(0, 10, size=T + 1)
        d = rng.random(T) < rng.random()
        g, lam = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        adv, ret = ppo.compute_gae(r, v, d, gamma=g, lam=lam)
        assert np.max(np.abs(adv - gae_bruteforce(r, v, d, g, lam))) <= 1e-10
        assert np.allclose(ret, adv + v[:-1], atol=1e-12)


def test_gae_batched_columns_independent():
    rng = np.random.default_rng(3)
    r = rng.normal(size=(8, 4))
    v = rng.normal(size=(9, 4))
    d = rng.random((8, 4)) < 0.2
    adv, _ = ppo.compute_gae(r, v, d)
    for j in range(4):
        a1, _ = ppo.compute_gae(r[:, j], v[:, j], d[:, j])
        assert np.array_equal(adv[:, j], a1)


def test_gae_shape_errors():
    with pytest.raises(ShapeError):
        ppo.compute_gae([1.0, 1.0], [0.5, 0.5], [0, 0])
    with pytest.raises(ShapeError):
        ppo.compute_gae([1.0, 1.0], [0.5, 0.5, 0.0], [0])
    with pytest.raises(ShapeError):
        ppo.compute_gae([1.0, 1.0], [0.5, 0.5, 0.1], [0, 0], bootstrap_value=0.0)


# -- objective pieces --------------------------------------------------------


def test_clip_ratio_examples():
    assert ppo.clip_ratio(1.5, 0.2) == 1.2
    assert ppo.clip_ratio(0.5, 0.2) == 0.8
    for eps in (0.1, 0.2, 0.3, 0.9):
        assert ppo.clip_ratio(1.0, eps) == 1.0


def test_objective_single_sample():
    cfg = PpoConfig(entropy_coef=0.0)
    loss, diag = ppo.ppo_objective([math.log(1.5)], [0.0], [2.0], 0.0, cfg)
    assert diag["surrogate"] == pytest.approx(2.4, abs=1e-12)
    assert loss == pytest.approx(-2.4, abs=1e-12)
    assert diag["clip_frac"] == 1.0


def test_objective_on_policy():
    adv = np.array([1.0, -2.0, 0.5, 3.0])
    lp = np.array([-1.0, -0.3, -2.0, -0.7])
    loss, diag = ppo.ppo_objective(lp, lp, adv, 1.2, PpoConfig(entropy_coef=0.1), value_loss=2.0)
    assert diag["surrogate"] == pytest.approx(adv.mean(), abs=1e-15)
    assert diag["clip_frac"] == 0.0 and diag["mean_ratio"] == 1.0
    assert loss == pytest.approx(-(adv.mean() + 0.1 * 1.2) + 0.5 * 2.0, abs=1e-12)


@pytest.mark.parametrize(
    "ratio, adv, expected",
    [
        (5.0, -1.0, -5.0),         # negative advantage, huge ratio: the unclipped term is the smaller
        (5.0, 1.0, 1.2),           # positive advantage, huge ratio: clipped
        (0.1, 1.0, 0.1),           # positive advantage, tiny ratio: unclipped (smaller)
        (0.1, -1.0, 0.8 * -1.0),   # negative advantage, tiny ratio: clipped
        (1.1, 2.0, 2.2),           # inside the band
        (0.9, -2.0, -1.8),
        (1.0, 0.0, 0.0),
    ],
)
def test_objective_case_table(ratio, adv, expected):
    _, diag = ppo.ppo_objective([math.log(ratio)], [0.0], [adv], 0.0, PpoConfig(epsilon=0.2))
    assert diag["surrogate"] == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_objective_rejects_nonfinite():
    with pytest.raises(NumericInputError):
        ppo.ppo_objective([np.nan], [0.0], [1.0], 0.0, PpoConfig())
    with pytest.raises(NumericInputError):
        ppo.ppo_objective([0.0], [-np.inf], [1.0], 0.0, PpoConfig())


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=20),
    st.lists(st.floats(-100, 100), min_size=20, max_size=20),
    st.floats(0.05, 0.95),
)
def test_surrogate_is_pointwise_min(log_ratio, adv, eps):
    ratio = np.exp(np.array(log_ratio))
    a = np.array(adv[: len(ratio)])
    s1, s2, s = ppo.surrogate_terms(ratio, a, eps)
    assert np.array_equal(s, np.minimum(ratio * a, np.clip(ratio, 1 - eps, 1 + eps) * a))
    assert np.all(s <= s1) and np.all(s <= s2)


def test_entropy_examples():
    assert ppo.policy_entropy({"logits": np.zeros((3, 8))}) == pytest.approx(math.log(8), abs=1e-12)
    assert ppo.policy_entropy({"logits": np.array([[100.0] + [0.0] * 7])}) < 1e-38
    assert ppo.policy_entropy({"log_std": np.zeros(4), "mean": np.zeros(4)}) == pytest.approx(5.6758, abs=1e-4)
    assert ppo.policy_entropy({"log_std": np.zeros(4)}) == pytest.approx(2 * math.log(2 * math.pi * math.e), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=300), st.floats(1e-3, 1e3))
def test_advantage_normalisation(values, spread):
    a = np.array(values) * spread
    if np.std(a) < 1e-3:
        return
    z = ppo.normalize(a)
    assert abs(z.mean()) <= 1e-6
    assert 1 - 1e-4 <= z.std() <= 1 + 1e-4


# -- buffer ------------------------------------------------------------------


def _row(rng, N, obs_dim, act_dim, **over):
    row = dict(
        obs=rng.normal(size=(N, obs_dim)),
        next_obs=rng.normal(size=(N, obs_dim)),
        actions=rng.uniform(-1, 1, size=(N, act_dim)),
        log_prob=np.full(N, -1.0),
        value=np.zeros(N),
        value_int=np.zeros(N),
        reward=rng.uniform(-1, 1, size=N),
        done=np.ones(N, dtype=bool),
        boot=np.zeros(N),
        boot_int=np.zeros(N),
        valid=np.ones(N, dtype=bool),
    )
    row.update(over)
    return row


def test_buffer_lifecycle():
    rng = np.random.default_rng(0)
    buf = RolloutBuffer(3, 2, 5, (4,), discrete=False)
    assert buf.capacity == 6 and not buf.full
    with pytest.raises(LifecycleError):
        buf.set_intrinsic(np.zeros(6))
    with pytest.raises(ShapeError):
        buf.add(obs=np.zeros((2, 5)))
    for _ in range(3):
        buf.add(**_row(rng, 2, 5, 4))
    assert buf.full
    with pytest.raises(LifecycleError):
        buf.add(**_row(rng, 2, 5, 4))
    with pytest.raises(NumericInputError):
        buf.set_intrinsic(-np.ones(6))
    buf.set_intrinsic(np.ones(6))
    with pytest.raises(LifecycleError):
        buf.set_intrinsic(np.ones(6))
    buf.finish()
    with pytest.raises(ValueError):
        buf.reward[0, 0] = 1.0
    assert buf.flat("obs").shape == (6, 5)


def test_intrinsic_masked_by_valid():
    rng = np.random.default_rng(0)
    buf = RolloutBuffer(1, 3, 2, (4,), discrete=False)
    buf.add(**_row(rng, 3, 2, 4, valid=np.array([True, False, True])))
    buf.set_intrinsic(np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(buf.reward_int[0], [1.0, 0.0, 3.0])


def _bandit(seed, T=16, N=8, obs_dim=3, act_dim=2, reward=None):
    """A one-step continuous bandit: reward peaks at action (0.5, -0.5)."""
    rng = np.random.default_rng(seed)
    model = ActorCritic(obs_dim, act_dim, "continuous", hidden=(16, 16), value_scale=1.0)
    params = model.init(rng)
    sampler = np.random.default_rng(seed + 100)
    buf = RolloutBuffer(T, N, obs_dim, (act_dim,), discrete=False)
    for _ in range(T):
        obs = rng.normal(size=(N, obs_dim)).astype(np.float32)
        a, lp, v, vi = ppo.sample_actions(model, params, obs, sampler)
        r = -np.sum((np.clip(a, -1, 1) - [0.5, -0.5]) ** 2, axis=1) if reward is None else reward(rng, N)
        buf.add(**_row(rng, N, obs_dim, act_dim, obs=obs, actions=a, log_prob=lp, value=v, value_int=vi, reward=r))
    buf.set_intrinsic(np.zeros(T * N))
    buf.finish()
    return model, params, buf


def _update(model, params, buf, cfg, seed=0, lr=3e-4):
    return ppo.ppo_update(
        model, clone(params), OptimizerState.zeros_like(params), buf, cfg,
        LrSchedule(lr, 10**9, "constant"), 0, np.random.default_rng(seed),
    )


def test_update_requires_full_buffer():
    model = ActorCritic(3, 2, "continuous", hidden=(4,))
    params = model.init(np.random.default_rng(0))
    buf = RolloutBuffer(2, 2, 3, (2,), discrete=False)
    with pytest.raises(LifecycleError):
        _update(model, params, buf, PpoConfig())


def test_zero_advantage_isolation():
    model, params, buf = _bandit(0, reward=lambda rng, n: np.zeros(n))
    # zero rewards and zero stored values: every advantage is exactly 0
    buf2 = RolloutBuffer(buf.horizon, buf.num_instances, buf.obs_dim, (2,), discrete=False)
    for t in range(buf.horizon):
        row = {k: getattr(buf, k)[t] for k in RolloutBuffer.FIELDS}
        row["value"] = np.zeros(buf.num_instances)
        buf2.add(**row)
    buf2.set_intrinsic(np.zeros(buf2.capacity))
    buf2.finish()
    adv, _, _ = ppo.buffer_advantages(buf2, PpoConfig())
    assert not np.any(adv)
    cfg = PpoConfig(epochs=1, minibatch_size=buf2.capacity, entropy_coef=0.03, value_coef=0.0)
    new, _, _ = _update(model, params, buf2, cfg)
    assert [k for k in params if not np.array_equal(new[k], params[k])] == ["log_std"]
    assert np.all(new["log_std"] > params["log_std"])


def test_update_is_deterministic():
    model, params, buf = _bandit(1)
    a, _, sa = _update(model, params, buf, PpoConfig(minibatch_size=32), seed=7)
    b, _, sb = _update(model, params, buf, PpoConfig(minibatch_size=32), seed=7)
    assert params_equal(a, b) and sa == sb


def test_trust_region_on_bandit():
    for seed in range(3):
        model, params, buf = _bandit(seed, T=32)
        cfg = PpoConfig(minibatch_size=64)
        new, _, _ = _update(model, params, buf, cfg, lr=3e-4)
        out = model.forward(new, buf.flat("obs"))
        ratio = np.exp(gaussian_log_prob(buf.flat("actions"), out["mean"], out["log_std"]) - buf.flat("log_prob"))
        inside = np.mean((ratio >= 1 - 2 * cfg.epsilon) & (ratio <= 1 + 2 * cfg.epsilon))
        assert inside >= 0.95


def test_entropy_coefficient_raises_entropy():
    coefs = (0.0, 0.01, 0.03, 0.1)
    for seed in range(5):
        model, params, buf = _bandit(seed, T=32, reward=lambda rng, n: rng.uniform(-1, 1, n))
        ent = []
        for c in coefs:
            new, _, _ = _update(model, params, buf, PpoConfig(minibatch_size=64, entropy_coef=c), lr=1e-3)
            ent.append(ppo.policy_entropy({"log_std": new["log_std"].astype(float)}))
        assert all(b > a for a, b in zip(ent, ent[1:])), (seed, ent)


def test_entropy_coefficient_follows_lr():
    model, params, buf = _bandit(0)
    sched = LrSchedule(3e-4, 1000)
    _, _, stats = ppo.ppo_update(model, params, OptimizerState.zeros_like(params), buf, PpoConfig(entropy_coef=0.03),
                                 sched, 250, np.random.default_rng(0))
    assert stats["lr"] == pytest.approx(2.25e-4)
    assert stats["entropy_coef"] == pytest.approx(0.0225)


def test_minibatches_partition():
    mbs = ppo.minibatches(100, 30, np.random.default_rng(0))
    assert sorted(np.concatenate(mbs).tolist()) == list(range(100))
    assert len(mbs) == 3


def test_sample_actions_discrete_valid():
    model = ActorCritic(5, 8, "discrete", hidden=(6,))
    params = model.init(np.random.default_rng(0))
    a, lp, v, vi = ppo.sample_actions(model, params, np.zeros((500, 5)), np.random.default_rng(1))
    assert a.min() >= 0 and a.max() <= 7 and np.all(np.isfinite(lp))
    assert len(set(a.tolist())) == 8
    det, _, _, _ = ppo.sample_actions(model, params, np.zeros((3, 5)), None, deterministic=True)
    assert len(set(det.tolist())) == 1


def test_metrics_log_round_trip(tmp_path):
    path = tmp_path / "m.tsv"
    log = ppo.MetricsLog(path)
    log.append({"step": 10, "agent": "uav", "episodes": 3, "mean_return": 0.1 + 0.2, "entropy": 1 / 3})
    log.append({"step": 20, "agent": "ugv", "episodes": 1, "mean_return": -15000.1})
    rows = ppo.read_metrics(path)
    assert rows[0]["mean_return"] == 0.1 + 0.2 and rows[0]["entropy"] == 1 / 3
    assert math.isnan(rows[0]["policy_loss"])
    steps, ret = ppo.episode_returns(rows, "ugv")
    assert steps.tolist() == [20] and ret.tolist() == [-15000.1]
