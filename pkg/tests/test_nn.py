import math

import numpy as np
import pytest

from airground import nn
from airground.errors import ShapeError, TapeError
from airground.nn import ActorCritic, LrSchedule, Mlp, OptimizerState, Tape

from _gradcheck import check_ppo, numeric_grads, rel_err


def test_gate_examples():
    assert nn.gate(0.0) == 0.0
    assert abs(nn.gate(20.0) - 20.0) <= 1e-6
    assert abs(nn.gate(-20.0)) <= 1e-6
    x = np.linspace(-5, 5, 11)
    assert np.allclose(nn.gate(x), x / (1 + np.exp(-x)), atol=1e-15, rtol=0)


def test_gate_grad_matches_fd():
    x = np.linspace(-6, 6, 25)
    h = 1e-6
    fd = (nn.gate(x + h) - nn.gate(x - h)) / (2 * h)
    assert np.allclose(nn.gate_grad(x, nn.sigmoid(x)), fd, atol=1e-8)


def test_sigmoid_no_overflow():
    with np.errstate(over="raise"):
        s = nn.sigmoid(np.array([-1000.0, 1000.0]))
    assert s[0] == 0.0 and s[1] == 1.0


def test_zero_network_is_uniform():
    model = ActorCritic(10, 8, "discrete", hidden=(16, 16))
    params = {k: np.zeros_like(v) for k, v in model.init(np.random.default_rng(0), np.float64).items()}
    out = model.forward(params, np.random.default_rng(1).normal(size=(3, 10)))
    assert np.array_equal(out["logits"], np.zeros((3, 8)))
    assert np.array_equal(out["value"], np.zeros(3))
    assert np.allclose(nn.softmax_rows(out["logits"]), 1 / 8)


def test_batch_shapes_and_mismatch():
    model = ActorCritic(7, 4, "continuous", hidden=(8, 8))
    params = model.init(np.random.default_rng(0))
    out = model.forward(params, np.zeros((5, 7)))
    assert out["mean"].shape == (5, 4) and out["value"].shape == (5,)
    single = model.forward(params, np.zeros(7))
    assert single["mean"].shape == (4,) and np.ndim(single["value"]) == 0
    with pytest.raises(ShapeError):
        model.forward(params, np.zeros((5, 6)))


def test_init_layout():
    model = ActorCritic(68, 4, "continuous")
    p = model.init(np.random.default_rng(0))
    assert p["trunk.w0"].shape == (68, 256) and p["trunk.w1"].shape == (256, 256)
    assert np.all(p["log_std"] == -0.5)
    bound = math.sqrt(6 / (68 + 256))
    assert np.abs(p["trunk.w0"]).max() <= bound
    assert np.abs(p["pi.w"]).max() <= 0.01 * math.sqrt(6 / (256 + 4)) + 1e-9
    assert all(not np.any(p[k]) for k in p if k.endswith(".b"))
    assert not np.any(p["vi.w"])


def test_mean_bounded():
    model = ActorCritic(5, 4, "continuous", hidden=(8,))
    p = model.init(np.random.default_rng(0), np.float64)
    p["pi.w"] *= 1e4
    out = model.forward(p, np.random.default_rng(1).normal(size=(200, 5)) * 10)
    assert np.all(np.abs(out["mean"]) <= 1.0)


def test_value_input_jacobian_fd():
    rng = np.random.default_rng(3)
    model = ActorCritic(6, 3, "continuous", hidden=(7, 5))
    params = model.init(rng, np.float64)
    x = rng.normal(size=6)
    # analytic: backprop a unit value gradient through the trunk to the input
    tape = Tape()
    model.forward(params, x[None], tape)
    dh = params["v.w"][:, 0][None] * model.value_scale
    dx, _ = model.trunk.backward(params, dh, tape)
    step = 1e-5
    fd = np.array([
        (model.forward(params, x + step * e)["value"] - model.forward(params, x - step * e)["value"]) / (2 * step)
        for e in np.eye(6)
    ])
    assert rel_err(dx[0], fd) <= 1e-4


def test_zero_loss_zero_grads():
    rng = np.random.default_rng(0)
    model = ActorCritic(6, 8, "discrete", hidden=(5,))
    params = model.init(rng, np.float64)
    tape = Tape()
    out = model.forward(params, rng.normal(size=(4, 6)), tape)
    g = nn.backward(model, params, tape, {k: np.zeros_like(v) for k, v in out.items() if k != "log_std"})
    assert all(not np.any(v) for v in g.values())


def test_linear_layer_closed_form():
    rng = np.random.default_rng(0)
    layer = Mlp("lin", [3, 2], gate_input=False)
    params = layer.init(rng, np.float64)
    x = rng.normal(size=(1, 3))
    y = rng.normal(size=(1, 2))
    tape = Tape()
    out = layer.forward(params, x, tape)
    _, g = layer.backward(params, 2 * (out - y), tape)
    W = params["lin.w0"]
    expected = np.outer(x[0], 2 * (x[0] @ W + params["lin.b0"] - y[0]))
    assert np.max(np.abs(g["lin.w0"] - expected)) <= 1e-12


def test_backward_needs_tape():
    model = ActorCritic(4, 2, "continuous", hidden=(3,))
    params = model.init(np.random.default_rng(0))
    with pytest.raises(TapeError):
        nn.backward(model, params, None, {})
    with pytest.raises(TapeError):
        model.backward(params, Tape(), {"value": np.zeros(1)})


@pytest.mark.parametrize("kind", ["continuous", "discrete"])
@pytest.mark.parametrize("value_scale", [1.0, 1000.0])
def test_ppo_loss_fd(kind, value_scale):
    assert check_ppo(np.random.default_rng(11), kind, value_scale=value_scale) <= 1e-4


def test_value_scale_only_rescales_the_head():
    rng = np.random.default_rng(0)
    a = ActorCritic(5, 2, "continuous", hidden=(4,), value_scale=1.0)
    b = ActorCritic(5, 2, "continuous", hidden=(4,), value_scale=1000.0)
    p = a.init(rng, np.float64)
    x = rng.normal(size=(3, 5))
    assert np.allclose(b.forward(p, x)["value"], 1000.0 * a.forward(p, x)["value"], rtol=1e-14)
    with pytest.raises(ValueError):
        ActorCritic(5, 2, value_scale=0.0)


def test_adam_examples():
    p = {"w": np.array([1.0, -2.0])}
    st = OptimizerState.zeros_like(p)
    same, _ = nn.adam_update(p, {"w": np.zeros(2)}, st, 0.1)
    assert np.array_equal(same["w"], p["w"])
    stepped, st2 = nn.adam_update(p, {"w": np.ones(2)}, st, 0.01)
    assert np.allclose(stepped["w"], p["w"] - 0.01, atol=1e-9)
    assert st2.step == 1
    with pytest.raises(ShapeError):
        nn.adam_update(p, {"w": np.ones(3)}, st, 0.01)
    with pytest.raises(ShapeError):
        nn.adam_update(p, {"v": np.ones(2)}, st, 0.01)


def test_adam_quadratic_converges():
    p = {"w": np.array([3.0])}
    st = OptimizerState.zeros_like(p)
    losses = []
    for _ in range(100):
        losses.append(float(p["w"][0] ** 2))
        p, st = nn.adam_update(p, {"w": 2 * p["w"]}, st, 0.05)
    assert all(b < a for a, b in zip(losses[5:], losses[6:]))


def test_lr_at():
    s = LrSchedule(3e-4, 1000)
    assert nn.lr_at(s, 0) == 0.0003
    assert nn.lr_at(s, 1000) == 0.0
    assert nn.lr_at(s, 5000) == 0.0
    assert nn.lr_at(s, 500) == pytest.approx(1.5e-4, rel=1e-15)
    assert nn.lr_at(LrSchedule(3e-4, 1000, "constant"), 900) == 3e-4
    with pytest.raises(ValueError):
        nn.lr_at(s, -1)


def test_softmax_rows_and_log_prob():
    rng = np.random.default_rng(0)
    logits = rng.normal(0, 30, size=(500, 8))
    p = nn.softmax_rows(logits)
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-12
    assert np.all(np.isfinite(nn.categorical_log_prob(rng.integers(0, 8, 500), logits)))
    assert np.allclose(nn.categorical_entropy(np.zeros((1, 8))), math.log(8), atol=1e-15)


def test_forward_backward_deterministic():
    rng = np.random.default_rng(5)
    model = ActorCritic(6, 8, "discrete", hidden=(9, 9))
    params = model.init(rng)
    x = rng.normal(size=(20, 6)).astype(np.float32)
    runs = []
    for _ in range(2):
        tape = Tape()
        out = model.forward(params, x, tape)
        runs.append((out, model.backward(params, tape, {"logits": out["logits"], "value": out["value"]})))
    for k in runs[0][0]:
        assert np.array_equal(runs[0][0][k], runs[1][0][k])
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k])


def test_numeric_grads_helper_on_quadratic():
    p = {"w": np.array([1.0, 2.0])}
    g = numeric_grads(lambda q: float(np.sum(q["w"] ** 2)), p)
    assert np.allclose(g["w"], [2.0, 4.0], atol=1e-8)
