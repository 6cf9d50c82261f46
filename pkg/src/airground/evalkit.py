"""Evaluation: inference episodes, success metrics, CSV export and SVG plots."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import world as W
from .env import DONE_REASONS, UAV_COLLISION, EnvConfig, EnvPool
from .errors import ShapeError, UsageError
from .nn import ActorCritic, Params
from .ppo import sample_actions
from .rng import stream
from .vehicles import HOLD

WILSON_Z = 1.959963984540054  # two-sided 95%
CSV_HEADER = ("t", "agent", "x", "y", "z", "reward", "cum_reward", "done_reason")


@dataclass
class EpisodeRecord:
    """One evaluation episode.

    Paths hold ``steps + 1`` poses (the start pose first) as float32, so
    that the 9-significant-digit CSV export is lossless.  ``t`` is the step
    index.
    """

    seed: int
    variant: str
    steps: int
    done_reason: str
    uav_path: np.ndarray  # (steps+1, 4): t, x, y, z
    ugv_path: np.ndarray  # (steps+1, 3): t, x, y
    uav_rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ugv_rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mode: str = "system"
    uav_arrival_step: int | None = None  # joint episodes: step at which the UAV parked

    @property
    def return_uav(self) -> float:
        return float(np.sum(self.uav_rewards))

    @property
    def return_ugv(self) -> float:
        return float(np.sum(self.ugv_rewards))

    @property
    def uav_arrived(self) -> bool:
        """The UAV reached the target at some point (joint episodes park it there)."""
        return self.done_reason == "uav_arrived" or self.uav_arrival_step is not None

    @property
    def success(self) -> bool:
        if self.mode == "system":
            return self.done_reason == "ugv_arrived"
        return self.done_reason == "uav_arrived"


@dataclass(frozen=True)
class Metrics:
    episodes: int
    successes: int
    success_rate: float
    mean_steps_success: float
    collision_rate: float
    timeout_rate: float
    uav_arrival_rate: float
    wilson_low: float
    wilson_high: float

    def as_table(self) -> str:
        rows = [
            ("episodes", str(self.episodes)),
            ("successes", str(self.successes)),
            ("success_rate", f"{100 * self.success_rate:.1f}%"),
            ("wilson_95", f"[{100 * self.wilson_low:.1f}%, {100 * self.wilson_high:.1f}%]"),
            ("mean_steps_success", f"{self.mean_steps_success:.1f}"),
            ("collision_rate", f"{100 * self.collision_rate:.1f}%"),
            ("timeout_rate", f"{100 * self.timeout_rate:.1f}%"),
            ("uav_arrival_rate", f"{100 * self.uav_arrival_rate:.1f}%"),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in rows) + "\n"

    def as_keyvalue(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.__dict__.items())


def wilson_interval(successes: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n <= 0:
        raise UsageError("Wilson interval needs at least one trial")
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return min(lo, p), max(hi, p)


def compute_metrics(records: Sequence[EpisodeRecord]) -> Metrics:
    if not records:
        raise UsageError("compute_metrics needs at least one record")
    n = len(records)
    succ = [r for r in records if r.success]
    k = len(succ)
    lo, hi = wilson_interval(k, n)
    coll = sum(r.done_reason in ("uav_collision", "ugv_collision") for r in records)
    tout = sum(r.done_reason == "timeout" for r in records)
    return Metrics(
        episodes=n,
        successes=k,
        success_rate=k / n,
        mean_steps_success=float(np.mean([r.steps for r in succ])) if succ else math.nan,
        collision_rate=coll / n,
        timeout_rate=tout / n,
        uav_arrival_rate=sum(r.uav_arrived for r in records) / n,
        wilson_low=lo,
        wilson_high=hi,
    )


# ----------------------------------------------------------------------------
# inference


def model_for(params: Params) -> ActorCritic:
    """Rebuild the network description from parameter shapes."""
    obs_dim = params["trunk.w0"].shape[0]
    hidden = tuple(params[f"trunk.w{i}"].shape[1] for i in range(len([k for k in params if k.startswith("trunk.w")])))
    act_dim = params["pi.w"].shape[1]
    kind = "continuous" if "log_std" in params else "discrete"
    return ActorCritic(obs_dim, act_dim, kind, hidden=hidden, intrinsic_value="vi.w" in params)


def run_inference(
    uav_params: Params,
    ugv_params: Params | None,
    variant: str | W.EnvVariant,
    episodes: int,
    seed: int,
    env_cfg: EnvConfig | None = None,
    deterministic: bool = True,
    mode: str = "system",
    batch: int = 64,
) -> list[EpisodeRecord]:
    """Run ``episodes`` evaluation episodes without learning.

    ``mode="system"`` runs both agents in the joint environment (success =
    UGV arrival); ``mode="uav"`` runs the UAV alone with the UGV held
    (success = UAV arrival).  Episode ``k`` uses the ``k``-th seed of the
    ``eval`` stream, so records are reproducible and in seed order.
    """
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    if mode not in ("system", "uav"):
        raise UsageError(f"unknown evaluation mode {mode!r}")
    cfg = env_cfg or EnvConfig()
    if not isinstance(variant, W.EnvVariant):
        variant = W.EnvVariant.by_name(variant)
    cfg = dataclasses.replace(cfg, variant=variant)
    uav_model = model_for(uav_params)
    if uav_model.obs_dim != 68 or uav_model.act_dim != 4:
        raise ShapeError("UAV parameters do not match the UAV observation/action sizes")
    joint = mode == "system"
    if joint:
        if ugv_params is None:
            raise UsageError("system evaluation needs UGV parameters")
        ugv_model = model_for(ugv_params)
        if ugv_model.obs_dim != 33 or ugv_model.act_dim != 8:
            raise ShapeError("UGV parameters do not match the UGV observation/action sizes")
    seeds = stream(seed, "eval").integers(0, 2**31 - 1, size=episodes)
    sampler = stream(seed, "eval/sampler")
    n = min(batch, episodes)
    pool = EnvPool(cfg, n, joint=joint)
    slot_episode = list(range(n))
    pool.reset_instances(range(n), [int(s) for s in seeds[:n]])
    next_ep = n
    traces = {i: _new_trace(pool, i) for i in range(n)}
    records: dict[int, EpisodeRecord] = {}
    while len(records) < episodes:
        uo, go = pool.observe()
        a_uav, _, _, _ = sample_actions(uav_model, uav_params, uo, sampler, deterministic)
        if joint:
            a_ugv, _, _, _ = sample_actions(ugv_model, ugv_params, go, sampler, deterministic)
            a_ugv = a_ugv + 1
        else:
            a_ugv = np.full(n, HOLD, dtype=np.int64)
        res = pool.step(a_uav, a_ugv)
        for i in range(n):
            ep = slot_episode[i]
            if ep is None:
                continue
            tr = traces[i]
            k = len(tr["uav"])
            tr["uav"].append((k, *pool.uav_p[i]))
            tr["ugv"].append((k, *pool.ugv_pos[i]))
            tr["ru"].append(res.reward_uav[i])
            tr["rg"].append(res.reward_ugv[i])
            if joint and res.uav_own_terminal[i] and res.done_reason[i] != UAV_COLLISION:
                tr["arrival"] = k
        reset_idx, reset_seeds = [], []
        for i in np.flatnonzero(res.done):
            ep = slot_episode[i]
            if ep is not None:
                tr = traces[i]
                records[ep] = EpisodeRecord(
                    seed=int(seeds[ep]),
                    variant=variant.name,
                    steps=len(tr["ru"]),
                    done_reason=DONE_REASONS[int(res.done_reason[i])],
                    uav_path=np.array(tr["uav"], dtype=np.float32),
                    ugv_path=np.array(tr["ugv"], dtype=np.float32),
                    uav_rewards=np.array(tr["ru"]),
                    ugv_rewards=np.array(tr["rg"]),
                    mode=mode,
                    uav_arrival_step=tr["arrival"],
                )
            if next_ep < episodes:
                slot_episode[i] = next_ep
                reset_idx.append(i)
                reset_seeds.append(int(seeds[next_ep]))
                next_ep += 1
            else:
                slot_episode[i] = None
                reset_idx.append(i)
                reset_seeds.append(0)
        if reset_idx:
            pool.reset_instances(reset_idx, reset_seeds)
            for i in reset_idx:
                traces[i] = _new_trace(pool, i)
    return [records[k] for k in range(episodes)]


class Probe:
    """Periodic success-rate probe for a training run.

    Called after every update (``Trainer(probe=...)`` or a CLI loop); once
    ``global_step`` passes the next multiple of ``every`` it runs
    ``episodes`` deterministic inference episodes and appends a row to
    ``path``.  Returns True (stop) when ``stop_success`` is set and reached.
    Probing draws from its own ``eval`` stream, so it does not perturb
    training.
    """

    HEADER = "global_step\tstage\tsuccess_rate\tcollision_rate\ttimeout_rate\tepisodes\n"

    def __init__(self, every: int, episodes: int = 100, mode: str = "uav",
                 stop_success: float | None = None, path=None):
        if every < 1 or episodes < 1:
            raise UsageError("probe interval and episode count must be >= 1")
        self.every = int(every)
        self.episodes = int(episodes)
        self.mode = mode
        self.stop_success = stop_success
        self.path = path
        self.next_at = self.every
        self.rows: list[tuple[int, str, Metrics]] = []
        self.reached_at: int | None = None
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(self.HEADER)

    def measure(self, trainer) -> Metrics:
        st = trainer.state
        records = run_inference(
            st.uav.params,
            st.ugv.params,
            trainer.cfg.env.variant,
            self.episodes,
            trainer.cfg.train.seed,
            env_cfg=trainer.cfg.env_config(),
            mode=self.mode,
        )
        m = compute_metrics(records)
        self.rows.append((st.global_step, st.stage, m))
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(f"{st.global_step}\t{st.stage}\t{m.success_rate!r}\t{m.collision_rate!r}"
                         f"\t{m.timeout_rate!r}\t{m.episodes}\n")
        if self.stop_success is not None and self.reached_at is None and m.success_rate >= self.stop_success:
            self.reached_at = st.global_step
        return m

    def __call__(self, trainer) -> bool:
        if trainer.state.global_step < self.next_at:
            return False
        while self.next_at <= trainer.state.global_step:
            self.next_at += self.every
        self.measure(trainer)
        return self.reached_at is not None

    def finish(self, trainer) -> None:
        """Probe the final parameters unless that step was just probed."""
        if not self.rows or self.rows[-1][0] != trainer.state.global_step:
            self.measure(trainer)


def read_probe(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return [
        {"global_step": int(r["global_step"]), "stage": r["stage"], "success_rate": float(r["success_rate"]),
         "collision_rate": float(r["collision_rate"]), "timeout_rate": float(r["timeout_rate"]),
         "episodes": int(r["episodes"])}
        for r in rows
    ]


def _new_trace(pool: EnvPool, i: int) -> dict:
    return {
        "uav": [(0, *pool.uav_p[i])],
        "ugv": [(0, *pool.ugv_pos[i])],
        "ru": [],
        "rg": [],
        "arrival": None,
    }


# ----------------------------------------------------------------------------
# CSV


def _g9(v) -> str:
    return format(float(v), ".9g")


def trajectory_rows(record: EpisodeRecord) -> list[list[str]]:
    rows = []
    cu = cg = 0.0
    for k in range(record.steps + 1):
        ru = float(record.uav_rewards[k - 1]) if k else 0.0
        rg = float(record.ugv_rewards[k - 1]) if k else 0.0
        cu += ru
        cg += rg
        reason = record.done_reason if k == record.steps else "running"
        uav_reason = reason
        if record.uav_arrival_step is not None and k >= record.uav_arrival_step:
            uav_reason = "uav_arrived"
        t, x, y, z = record.uav_path[k]
        rows.append([str(int(t)), "uav", _g9(x), _g9(y), _g9(z), repr(ru), repr(cu), uav_reason])
        t, x, y = record.ugv_path[k]
        rows.append([str(int(t)), "ugv", _g9(x), _g9(y), _g9(0.0), repr(rg), repr(cg), reason])
    return rows


def export_trajectory_csv(record: EpisodeRecord, path) -> None:
    if path is None or str(path) == "":
        raise UsageError("an output path is required")
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(trajectory_rows(record))
    except OSError as exc:
        raise OSError(f"{path}: {exc}") from exc


def read_trajectory_csv(path, seed: int = -1, variant: str = "", mode: str = "system") -> EpisodeRecord:
    """Parse a file written by :func:`export_trajectory_csv` back into a record."""
    if path is None or str(path) == "":
        raise UsageError("an input path is required")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise UsageError(f"{path}: unexpected header {header}")
        uav, ugv, ru, rg = [], [], [], []
        reason = "running"
        arrival = None
        for row in reader:
            t, agent, x, y, z, r, _, status = row
            if agent == "uav":
                uav.append((int(t), float(x), float(y), float(z)))
                if int(t):
                    ru.append(float(r))
                if status == "uav_arrived" and arrival is None and mode == "system":
                    arrival = int(t)
            else:
                reason = status
                ugv.append((int(t), float(x), float(y)))
                if int(t):
                    rg.append(float(r))
    return EpisodeRecord(
        seed=seed,
        variant=variant,
        steps=len(uav) - 1,
        done_reason=reason,
        uav_path=np.array(uav, dtype=np.float32),
        ugv_path=np.array(ugv, dtype=np.float32),
        uav_rewards=np.array(ru),
        ugv_rewards=np.array(rg),
        mode=mode,
        uav_arrival_step=arrival,
    )


# ----------------------------------------------------------------------------
# SVG

SVG_NS = "http://www.w3.org/2000/svg"
AGENT_STYLE = {"uav": ("#1f77b4", "UAV"), "ugv": ("#d62728", "UGV")}
CURVE_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_root(width: float, height: float, view: tuple[float, float, float, float]) -> ET.Element:
    root = ET.Element(
        "svg",
        {
            "xmlns": SVG_NS,
            "version": "1.1",
            "width": f"{width:g}",
            "height": f"{height:g}",
            "viewBox": " ".join(f"{v:.6g}" for v in view),
        },
    )
    return root


def _to_text(root: ET.Element) -> str:
    ET.indent(root)
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def render_trajectory_svg(world: W.WorldGeometry, records: Iterable[EpisodeRecord] = (), scale: float = 8.0) -> str:
    """Top view: walls, obstacles, target and one polyline per agent per record."""
    records = list(records)
    segs = world.wall_segments
    xs = np.concatenate([segs[:, :, 0].ravel(), [world.target_position[0]]])
    ys = np.concatenate([segs[:, :, 1].ravel(), [world.target_position[1]]])
    pad = 3.0
    x0, x1 = float(xs.min()) - pad, float(xs.max()) + pad
    y0, y1 = float(ys.min()) - pad, float(ys.max()) + pad
    root = _svg_root((x1 - x0) * scale, (y1 - y0) * scale, (x0, y0, x1 - x0, y1 - y0))
    geo = ET.SubElement(root, "g", {"id": "geometry", "fill": "none", "stroke": "#333333", "stroke-width": "0.25"})
    for (ax, ay), (bx, by) in segs:
        ET.SubElement(geo, "line", {"x1": f"{ax:.6g}", "y1": f"{ay:.6g}", "x2": f"{bx:.6g}", "y2": f"{by:.6g}"})
    for cx, cy, hx, hy, rot in world.obstacles:
        c, s = math.cos(rot), math.sin(rot)
        pts = []
        for u, v in ((hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy)):
            pts.append(f"{cx + c * u - s * v:.6g},{cy + s * u + c * v:.6g}")
        ET.SubElement(geo, "polygon", {"points": " ".join(pts), "fill": "#999999"})
    tx, ty = world.target_position
    ET.SubElement(
        root,
        "circle",
        {"id": "target", "cx": f"{tx:.6g}", "cy": f"{ty:.6g}", "r": f"{world.target_radius:.6g}", "fill": "#2ca02c"},
    )
    for n, rec in enumerate(records):
        for agent, path in (("uav", rec.uav_path), ("ugv", rec.ugv_path)):
            colour, _ = AGENT_STYLE[agent]
            d = " ".join(f"{'M' if k == 0 else 'L'}{p[1]:.6g},{p[2]:.6g}" for k, p in enumerate(path))
            ET.SubElement(
                root,
                "path",
                {"id": f"{agent}-path-{n}", "class": agent, "d": d, "fill": "none", "stroke": colour, "stroke-width": "0.3"},
            )
    if records:
        _legend(root, [(c, label) for c, label in AGENT_STYLE.values()], x0 + 1.0, y0 + 1.0, 1.2)
    return _to_text(root)


def _legend(root: ET.Element, items: Sequence[tuple[str, str]], x: float, y: float, size: float) -> None:
    g = ET.SubElement(root, "g", {"id": "legend", "font-size": f"{size:g}", "font-family": "sans-serif"})
    for k, (colour, label) in enumerate(items):
        yy = y + k * size * 1.4
        ET.SubElement(
            g,
            "line",
            {"x1": f"{x:g}", "y1": f"{yy:g}", "x2": f"{x + 2 * size:g}", "y2": f"{yy:g}", "stroke": colour, "stroke-width": f"{size / 4:g}"},
        )
        t = ET.SubElement(g, "text", {"x": f"{x + 2.5 * size:g}", "y": f"{yy + size / 3:g}"})
        t.text = label


def render_curves_svg(
    runs: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    width: float = 640.0,
    height: float = 400.0,
    title: str = "",
) -> str:
    """Reward-vs-step plot; ``runs`` is ``[(label, steps, values), ...]``."""
    margin = 50.0
    root = _svg_root(width, height, (0.0, 0.0, width, height))
    clean = []
    for label, xs, ys in runs:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ok = np.isfinite(xs) & np.isfinite(ys)
        clean.append((label, xs[ok], ys[ok]))
    allx = np.concatenate([c[1] for c in clean]) if clean else np.zeros(0)
    ally = np.concatenate([c[2] for c in clean]) if clean else np.zeros(0)
    if allx.size:
        xlo, xhi = float(allx.min()), float(allx.max())
        ylo, yhi = float(ally.min()), float(ally.max())
    else:
        xlo, xhi, ylo, yhi = 0.0, 1.0, 0.0, 1.0
    if xhi == xlo:
        xhi = xlo + 1.0
    if yhi == ylo:
        yhi = ylo + 1.0

    def sx(v):
        return margin + (v - xlo) / (xhi - xlo) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - ylo) / (yhi - ylo) * (height - 2 * margin)

    axes = ET.SubElement(root, "g", {"id": "axes", "stroke": "#333333", "stroke-width": "1", "font-size": "11", "font-family": "sans-serif"})
    ET.SubElement(axes, "line", {"x1": f"{margin:g}", "y1": f"{height - margin:g}", "x2": f"{width - margin:g}", "y2": f"{height - margin:g}"})
    ET.SubElement(axes, "line", {"x1": f"{margin:g}", "y1": f"{margin:g}", "x2": f"{margin:g}", "y2": f"{height - margin:g}"})
    for val, anchor_x, anchor_y in ((xlo, sx(xlo), height - margin + 15), (xhi, sx(xhi), height - margin + 15)):
        t = ET.SubElement(axes, "text", {"x": f"{anchor_x:.2f}", "y": f"{anchor_y:.2f}", "stroke": "none"})
        t.text = f"{val:.4g}"
    for val in (ylo, yhi):
        t = ET.SubElement(axes, "text", {"x": "2", "y": f"{sy(val):.2f}", "stroke": "none"})
        t.text = f"{val:.4g}"
    if title:
        t = ET.SubElement(root, "text", {"x": f"{width / 2:g}", "y": "20", "text-anchor": "middle", "font-family": "sans-serif"})
        t.text = title
    items = []
    for k, (label, xs, ys) in enumerate(clean):
        colour = CURVE_COLOURS[k % len(CURVE_COLOURS)]
        d = " ".join(f"{'M' if j == 0 else 'L'}{sx(x):.2f},{sy(y):.2f}" for j, (x, y) in enumerate(zip(xs, ys)))
        ET.SubElement(
            root,
            "path",
            {"id": f"curve-{k}", "class": "curve", "d": d or "M0,0", "fill": "none", "stroke": colour, "stroke-width": "1.5"},
        )
        items.append((colour, label))
    if items:
        _legend(root, items, width - margin - 120, margin, 11.0)
    return _to_text(root)


def render_svg(world=None, records: Iterable[EpisodeRecord] = (), runs=None, mode: str = "trajectory") -> str:
    if mode == "trajectory":
        if world is None:
            raise UsageError("trajectory rendering needs a world")
        return render_trajectory_svg(world, records)
    if mode == "curves":
        return render_curves_svg(runs or [])
    raise UsageError(f"unknown render mode {mode!r}")


def metrics_from_csvs(paths: Iterable, mode: str = "system") -> Metrics:
    return compute_metrics([read_trajectory_csv(p, mode=mode) for p in paths])


def records_summary_csv(records: Sequence[EpisodeRecord]) -> str:
    """One line per episode: seed, steps, done_reason, returns, success."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("episode", "seed", "variant", "steps", "done_reason", "return_uav", "return_ugv", "success"))
    for k, r in enumerate(records):
        w.writerow((k, r.seed, r.variant, r.steps, r.done_reason, repr(r.return_uav), repr(r.return_ugv), int(r.success)))
    return buf.getvalue()
