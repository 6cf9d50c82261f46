import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airground import evalkit as E
from airground import world as W
from airground.env import EnvConfig
from airground.errors import ShapeError, UsageError
from airground.nn import ActorCritic

SVG = "{http://www.w3.org/2000/svg}"


def _record(reason, steps=3, mode="system", seed=0, rng=None):
    rng = rng or np.random.default_rng(seed)
    t = np.arange(steps + 1, dtype=np.float32)[:, None]
    uav = np.hstack([t, rng.normal(size=(steps + 1, 2)).astype(np.float32), np.full((steps + 1, 1), -3.0, np.float32)])
    ugv = np.hstack([t, rng.normal(size=(steps + 1, 2)).astype(np.float32)])
    return E.EpisodeRecord(
        seed=seed, variant="original", steps=steps, done_reason=reason, uav_path=uav, ugv_path=ugv,
        uav_rewards=rng.normal(0, 1000, steps), ugv_rewards=rng.normal(0, 1000, steps), mode=mode,
    )


def test_success_rate_891_of_1000():
    recs = [_record("ugv_arrived")] * 891 + [_record("timeout")] * 109
    m = E.compute_metrics(recs)
    assert m.successes == 891 and m.episodes == 1000
    assert m.success_rate == 0.891
    assert "89.1%" in m.as_table()


def test_zero_and_all_successes():
    m0 = E.compute_metrics([_record("ugv_collision")] * 1000)
    assert m0.success_rate == 0.0 and m0.wilson_low == 0.0 and "0.0%" in m0.as_table()
    m1 = E.compute_metrics([_record("ugv_arrived")] * 50)
    assert m1.success_rate == 1.0 and m1.wilson_high == 1.0
    with pytest.raises(UsageError):
        E.compute_metrics([])


def test_wilson_reference_value():
    # 891/1000 at z = 1.96: centre 0.88962..., half-width 0.01934...
    lo, hi = E.wilson_interval(891, 1000)
    assert lo == pytest.approx(0.870, abs=5e-4) and hi == pytest.approx(0.909, abs=5e-4)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 2000), st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = E.wilson_interval(k, n)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_rates_partition():
    reasons = ["ugv_arrived"] * 5 + ["ugv_collision"] * 3 + ["uav_collision"] * 2 + ["timeout"] * 4
    m = E.compute_metrics([_record(r) for r in reasons])
    assert m.success_rate + m.collision_rate + m.timeout_rate == pytest.approx(1.0, abs=1e-15)
    u = E.compute_metrics([_record(r, mode="uav") for r in ("uav_arrived", "uav_collision", "timeout", "timeout")])
    assert (u.success_rate, u.collision_rate, u.timeout_rate) == (0.25, 0.25, 0.5)


def test_csv_row_count_and_round_trip(tmp_path):
    rec = _record("ugv_arrived", steps=3)
    path = tmp_path / "t.csv"
    E.export_trajectory_csv(rec, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 1 + 8
    assert lines[0] == "t,agent,x,y,z,reward,cum_reward,done_reason"
    back = E.read_trajectory_csv(path)
    assert np.array_equal(back.uav_path, rec.uav_path)
    assert np.array_equal(back.ugv_path, rec.ugv_path)
    assert np.array_equal(back.uav_rewards, rec.uav_rewards)
    assert back.done_reason == rec.done_reason and back.steps == 3
    with pytest.raises(UsageError):
        E.export_trajectory_csv(rec, "")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 40), st.sampled_from(["ugv_arrived", "timeout", "ugv_collision", "uav_collision"]), st.integers(0, 10**6))
def test_csv_round_trip_property(tmp_path_factory, steps, reason, seed):
    rec = _record(reason, steps=steps, seed=seed)
    path = tmp_path_factory.mktemp("csv") / "r.csv"
    E.export_trajectory_csv(rec, path)
    back = E.read_trajectory_csv(path)
    assert np.array_equal(back.uav_path, rec.uav_path) and np.array_equal(back.ugv_path, rec.ugv_path)
    assert back.success == rec.success


def test_metrics_from_csvs_equal_in_memory(tmp_path):
    rng = np.random.default_rng(4)
    recs = [_record(r, steps=int(rng.integers(1, 30)), rng=rng)
            for r in rng.choice(["ugv_arrived", "timeout", "ugv_collision", "uav_collision"], size=40)]
    paths = []
    for k, r in enumerate(recs):
        p = tmp_path / f"{k}.csv"
        E.export_trajectory_csv(r, p)
        paths.append(p)
    assert E.metrics_from_csvs(paths) == E.compute_metrics(recs)


def _svg_root(text):
    return ET.fromstring(text.split("\n", 1)[1])


def test_svg_geometry_only():
    world = W.build_world("original", 0)
    root = _svg_root(E.render_trajectory_svg(world, []))
    assert root.tag == SVG + "svg"
    assert len(root.findall(f".//{SVG}path")) == 0
    assert root.find(f".//{SVG}circle").get("id") == "target"
    assert len(root.findall(f".//{SVG}line")) == len(world.wall_segments)


def test_svg_two_agent_record():
    world = W.build_world("original", 0)
    root = _svg_root(E.render_svg(world, [_record("ugv_arrived")]))
    paths = root.findall(f".//{SVG}path")
    assert sorted(p.get("class") for p in paths) == ["uav", "ugv"]
    assert root.find(f".//{SVG}g[@id='legend']") is not None


def test_svg_curves_two_runs():
    runs = [("icm", [0, 10, 20], [1.0, 2.0, 3.0]), ("no-icm", [0, 10, 20], [1.0, 1.5, np.nan])]
    root = _svg_root(E.render_svg(runs=runs, mode="curves"))
    curves = root.findall(f".//{SVG}path[@class='curve']")
    assert len(curves) == 2
    assert len({c.get("stroke") for c in curves}) == 2
    with pytest.raises(UsageError):
        E.render_svg(mode="pie")


def _zero(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def _policies(seed=0):
    rng = np.random.default_rng(seed)
    uav = ActorCritic(68, 4, "continuous").init(rng)
    ugv = ActorCritic(33, 8, "discrete").init(rng)
    return uav, ugv


def test_inference_deterministic_and_in_seed_order():
    uav, ugv = _policies()
    cfg = EnvConfig(step_limit=60)
    a = E.run_inference(uav, ugv, "original", 5, 3, env_cfg=cfg, batch=2)
    b = E.run_inference(uav, ugv, "original", 5, 3, env_cfg=cfg, batch=4)
    assert [r.seed for r in a] == [r.seed for r in b]
    for x, y in zip(a, b):
        assert x.done_reason == y.done_reason and x.steps == y.steps
        assert np.array_equal(x.uav_path, y.uav_path) and np.array_equal(x.ugv_rewards, y.ugv_rewards)
        assert len(x.uav_path) == x.steps + 1 == len(x.ugv_path)


def test_zero_policies_fail():
    uav, ugv = _policies()
    recs = E.run_inference(_zero(uav), _zero(ugv), "original", 4, 0, env_cfg=EnvConfig(step_limit=50))
    assert E.compute_metrics(recs).success_rate == 0.0


def test_inference_shape_errors():
    uav, ugv = _policies()
    with pytest.raises(ShapeError):
        E.run_inference(ugv, uav, "original", 1, 0)
    with pytest.raises(UsageError):
        E.run_inference(uav, None, "original", 1, 0)
    with pytest.raises(UsageError):
        E.run_inference(uav, ugv, "original", 0, 0)


def test_probe_rows(tmp_path):
    from _tiny import tiny
    from airground.trainer import Trainer

    tr = Trainer(tiny())
    probe = E.Probe(100, episodes=3, mode="uav", path=tmp_path / "p.tsv")
    tr.iterate()
    assert not probe(tr)
    assert E.read_probe(tmp_path / "p.tsv")[0]["global_step"] == 128
    probe.finish(tr)
    assert len(probe.rows) == 1
    assert math.isfinite(E.read_probe(tmp_path / "p.tsv")[0]["success_rate"])
