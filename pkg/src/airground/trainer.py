"""Two-stage training loop, the reward gate between the stages, and checkpoints.

Stage 1 trains the UAV alone while the UGV holds still.  Rewards are fed to
a :class:`StageGate` in windows of ``window_steps`` environment steps; once
``required_consecutive`` windows in a row reach a mean per-step reward of
``threshold`` the trainer moves to stage 2, where both agents learn in the
joint environment.  The simultaneous baseline skips stage 1 entirely.

``global_step`` counts environment steps summed over instances and bounds
the whole run (both stages) through ``train.max_step``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig, describe, format_config
from .env import (
    DONE_REASONS,
    UAV_ACT_DIM,
    UAV_COLLISION,
    UAV_OBS_DIM,
    UGV_ARRIVED,
    UGV_N_ACTIONS,
    UGV_OBS_DIM,
    VectorEnv,
)
from .errors import CheckpointError, LifecycleError
from .icm import IcmConfig, IcmModel, icm_update, transition_rewards
from .nn import ActorCritic, LrSchedule, OptimizerState, Params
from .ppo import MetricsLog, PpoConfig, RolloutBuffer, UpdateHooks, ppo_update, sample_actions
from .rng import get_state, set_state, stream

STAGE1, STAGE2, DONE, GATE_TIMEOUT = "stage1", "stage2", "done", "gate_timeout"


# ----------------------------------------------------------------------------
# the gate


@dataclass(frozen=True)
class StageGate:
    window_steps: int = 10000
    threshold: float = 5000.0
    required_consecutive: int = 50
    reward_counter: int = 0
    window_accumulator: float = 0.0
    window_filled: int = 0


def gate_update(gate: StageGate, window_mean_reward: float) -> tuple[StageGate, bool]:
    """Count a finished window; returns the new gate and whether it passed."""
    if window_mean_reward >= gate.threshold:
        counter = min(gate.reward_counter + 1, gate.required_consecutive)
    else:
        counter = 0
    new = StageGate(gate.window_steps, gate.threshold, gate.required_consecutive, counter, 0.0, 0)
    return new, counter == gate.required_consecutive


def gate_feed(gate: StageGate, rewards: np.ndarray) -> tuple[StageGate, list[tuple[float, int, bool]]]:
    """Add per-step rewards in order; returns closed windows as ``(mean, counter, passed)``."""
    closed = []
    r = np.asarray(rewards, dtype=float).ravel()
    i = 0
    while i < len(r):
        room = gate.window_steps - gate.window_filled
        chunk = r[i : i + room]
        acc = gate.window_accumulator + float(np.sum(chunk))
        filled = gate.window_filled + len(chunk)
        gate = dataclasses.replace(gate, window_accumulator=acc, window_filled=filled)
        i += len(chunk)
        if filled == gate.window_steps:
            mean = acc / gate.window_steps
            gate, passed = gate_update(gate, mean)
            closed.append((mean, gate.reward_counter, passed))
    return gate, closed


# ----------------------------------------------------------------------------
# learners


@dataclass
class Learner:
    """Policy/value network, curiosity module and their optimizer states for one agent."""

    name: str
    model: ActorCritic
    params: Params
    opt: OptimizerState
    ppo: PpoConfig
    schedule: LrSchedule
    icm_model: IcmModel | None = None
    icm_params: Params | None = None
    icm_opt: OptimizerState | None = None
    icm_cfg: IcmConfig | None = None
    updates: int = 0
    sched_origin: int = 0  # global step at which this learner started

    @property
    def discrete(self) -> bool:
        return self.model.kind == "discrete"

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for k, v in self.params.items():
            out[f"{self.name}/p/{k}"] = v
        for k in self.params:
            out[f"{self.name}/m/{k}"] = self.opt.m[k]
            out[f"{self.name}/v/{k}"] = self.opt.v[k]
        if self.icm_params is not None:
            for k, v in self.icm_params.items():
                out[f"{self.name}/icm_p/{k}"] = v
            for k in self.icm_params:
                out[f"{self.name}/icm_m/{k}"] = self.icm_opt.m[k]
                out[f"{self.name}/icm_v/{k}"] = self.icm_opt.v[k]
        return out

    def load_tensors(self, t: dict[str, np.ndarray], meta: dict) -> None:
        n = self.name
        self.params = {k: t[f"{n}/p/{k}"] for k in self.params}
        self.opt = OptimizerState(
            {k: t[f"{n}/m/{k}"] for k in self.params}, {k: t[f"{n}/v/{k}"] for k in self.params}, meta["opt_step"]
        )
        if self.icm_params is not None:
            self.icm_params = {k: t[f"{n}/icm_p/{k}"] for k in self.icm_params}
            self.icm_opt = OptimizerState(
                {k: t[f"{n}/icm_m/{k}"] for k in self.icm_params},
                {k: t[f"{n}/icm_v/{k}"] for k in self.icm_params},
                meta["icm_opt_step"],
            )
        self.updates = meta["updates"]
        self.sched_origin = meta["sched_origin"]

    def meta(self) -> dict:
        return {
            "opt_step": self.opt.step,
            "icm_opt_step": self.icm_opt.step if self.icm_opt is not None else 0,
            "updates": self.updates,
            "sched_origin": self.sched_origin,
        }


def make_learner(cfg: RunConfig, name: str, seed: int, use_icm: bool = True, dtype=np.float32) -> Learner:
    sec = getattr(cfg, name)
    if name == "uav":
        model = ActorCritic(UAV_OBS_DIM, UAV_ACT_DIM, "continuous", intrinsic_value=use_icm, value_scale=sec.value_scale)
    else:
        model = ActorCritic(UGV_OBS_DIM, UGV_N_ACTIONS, "discrete", intrinsic_value=use_icm, value_scale=sec.value_scale)
    params = model.init(stream(seed, f"init/{name}"), dtype)
    ln = Learner(
        name=name,
        model=model,
        params=params,
        opt=OptimizerState.zeros_like(params),
        ppo=sec.ppo(cfg.train.horizon).validate(),
        schedule=sec.schedule(cfg.train.max_step),
    )
    if use_icm:
        im = IcmModel(model.obs_dim, model.act_dim, model.kind)
        ip = im.init(stream(seed, f"init/icm_{name}"), dtype)
        ln.icm_model, ln.icm_params, ln.icm_opt, ln.icm_cfg = im, ip, OptimizerState.zeros_like(ip), sec.icm()
    return ln


# ----------------------------------------------------------------------------
# state


@dataclass
class EpisodeTracker:
    """Running per-instance returns and the episodes finished since the last report."""

    n: int
    ret_uav: np.ndarray = field(init=False)
    ret_ugv: np.ndarray = field(init=False)
    uav_arrived: np.ndarray = field(init=False)
    finished: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.ret_uav = np.zeros(self.n)
        self.ret_ugv = np.zeros(self.n)
        self.uav_arrived = np.zeros(self.n, dtype=bool)

    def record(self, res, joint: bool) -> None:
        self.ret_uav += res.reward_uav
        self.ret_ugv += res.reward_ugv
        self.uav_arrived |= res.uav_own_terminal & (res.done_reason != UAV_COLLISION)
        for i in np.flatnonzero(res.done):
            self.finished.append(
                {
                    "reason": DONE_REASONS[int(res.done_reason[i])],
                    "ret_uav": float(self.ret_uav[i]),
                    "ret_ugv": float(self.ret_ugv[i]),
                    "uav_success": bool(self.uav_arrived[i]),
                    "ugv_success": int(res.done_reason[i]) == UGV_ARRIVED,
                }
            )
            self.ret_uav[i] = 0.0
            self.ret_ugv[i] = 0.0
            self.uav_arrived[i] = False

    def drain(self) -> list[dict]:
        out, self.finished = self.finished, []
        return out


@dataclass
class TrainerState:
    stage: str
    global_step: int
    uav: Learner
    ugv: Learner
    gate: StageGate
    max_step: int
    simultaneous: bool = False
    stage2_start: int | None = None
    window_log: list = field(default_factory=list)  # (window index, mean, counter, passed)


class Trainer:
    """Owns the environment pool, both learners and the run bookkeeping.

    ``probe`` (optional) is called after every update with the trainer and
    may return ``True`` to stop the run early.
    """

    def __init__(
        self,
        cfg: RunConfig,
        use_icm: bool = True,
        metrics: MetricsLog | None = None,
        gate_report: str | None = None,
        verbose: TextIO | None = None,
        probe: Callable[["Trainer"], bool] | None = None,
        checkpoint_path: str | None = None,
    ):
        self.cfg = cfg
        self.checkpoint_path = checkpoint_path
        self.use_icm = use_icm
        seed = cfg.train.seed
        self.seed = seed
        self.env_cfg = cfg.env_config()
        self.metrics = metrics or MetricsLog()
        self.gate_report = gate_report
        self.verbose = verbose
        self.probe = probe
        simultaneous = cfg.train.mode == "simultaneous"
        g = cfg.gate
        self.state = TrainerState(
            stage=STAGE2 if simultaneous else STAGE1,
            global_step=0,
            uav=make_learner(cfg, "uav", seed, use_icm),
            ugv=make_learner(cfg, "ugv", seed, use_icm),
            gate=StageGate(g.window_steps, g.threshold, g.required_consecutive),
            max_step=cfg.train.max_step,
            simultaneous=simultaneous,
            stage2_start=0 if simultaneous else None,
        )
        self.samplers = {"uav": stream(seed, "sampler/uav"), "ugv": stream(seed, "sampler/ugv")}
        self.shufflers = {"uav": stream(seed, "shuffle/uav"), "ugv": stream(seed, "shuffle/ugv")}
        if simultaneous:
            self.state.ugv.sched_origin = 0
            self._set_ugv_schedule()
        self.venv: VectorEnv | None = None
        self.obs: tuple[np.ndarray, np.ndarray] | None = None
        self.tracker = EpisodeTracker(cfg.train.num_instances)
        self.stopped = False
        if self.gate_report is not None:
            with open(self.gate_report, "w", encoding="utf-8") as fh:
                fh.write("window\tend_step\tmean_reward\treward_counter\tpassed\n")

    # -- environment -----------------------------------------------------------

    @property
    def joint(self) -> bool:
        return self.state.stage != STAGE1

    def _ensure_env(self) -> None:
        if self.venv is not None and self.venv.pool.joint == self.joint:
            return
        tag = "env" if not self.joint or self.state.simultaneous else "env2"
        self.venv = VectorEnv(self.env_cfg, self.cfg.train.num_instances, self.seed, joint=self.joint, tag=tag)
        self.obs = self.venv.reset()
        self.tracker = EpisodeTracker(self.cfg.train.num_instances)

    def _set_ugv_schedule(self) -> None:
        ugv = self.state.ugv
        total = max(1, self.state.max_step - ugv.sched_origin)
        ugv.schedule = LrSchedule(ugv.schedule.initial_rate, total, ugv.schedule.mode)

    # -- one iteration -------------------------------------------------------

    def _agents(self) -> list[Learner]:
        return [self.state.uav, self.state.ugv] if self.joint else [self.state.uav]

    def iterate(self) -> list[dict]:
        """Collect one rollout, update the active learners; returns metric rows."""
        if self.state.stage not in (STAGE1, STAGE2):
            raise LifecycleError(f"cannot train in stage {self.state.stage!r}")
        self._ensure_env()
        st = self.state
        n = self.venv.n
        H = self.cfg.train.horizon
        agents = self._agents()
        bufs = {
            ln.name: RolloutBuffer(
                H, n, ln.model.obs_dim, () if ln.discrete else (ln.model.act_dim,), ln.discrete
            )
            for ln in agents
        }
        hold = np.zeros(n, dtype=np.int64)
        gate_rewards = []
        for _ in range(H):
            uo, go = self.obs
            obs_of = {"uav": uo, "ugv": go}
            act = {}
            for ln in agents:
                a, lp, v, vi = sample_actions(ln.model, ln.params, obs_of[ln.name], self.samplers[ln.name])
                act[ln.name] = (a, lp, v, vi)
            ugv_a = act["ugv"][0] + 1 if "ugv" in act else hold
            res = self.venv.step(act["uav"][0], ugv_a)
            st.global_step += n
            self.tracker.record(res, self.joint)
            if st.stage == STAGE1:
                gate_rewards.append(res.reward_uav.copy())
            for ln in agents:
                a, lp, v, vi = act[ln.name]
                if ln.name == "uav":
                    valid = res.uav_active
                    ended = res.uav_terminal | ~valid
                    cut = res.uav_terminal & ~res.uav_own_terminal
                    final = res.final_uav_obs
                    nxt = res.uav_obs
                    reward = res.reward_uav
                else:
                    valid = np.ones(n, dtype=bool)
                    ended = res.done
                    cut = res.done & ~res.ugv_own_terminal
                    final = res.final_ugv_obs
                    nxt = res.ugv_obs
                    reward = res.reward_ugv
                next_obs = nxt.copy()
                if final is not None:
                    next_obs[res.done] = final[res.done]
                boot = np.zeros(n)
                boot_i = np.zeros(n)
                if np.any(cut):
                    _, _, bv, bvi = sample_actions(ln.model, ln.params, next_obs[cut], None, deterministic=True)
                    boot[cut] = bv
                    boot_i[cut] = bvi
                bufs[ln.name].add(
                    obs=obs_of[ln.name],
                    next_obs=next_obs,
                    actions=a,
                    log_prob=lp,
                    value=v,
                    value_int=vi,
                    reward=np.where(valid, reward, 0.0),
                    done=ended,
                    boot=boot,
                    boot_int=boot_i,
                    valid=valid,
                )
            self.obs = (res.uav_obs, res.ugv_obs)

        rows = []
        finished = self.tracker.drain()
        for ln in agents:
            buf = bufs[ln.name]
            last_obs = self.obs[0] if ln.name == "uav" else self.obs[1]
            _, _, lv, lvi = sample_actions(ln.model, ln.params, last_obs, None, deterministic=True)
            if ln.name == "uav":
                # a parked UAV has no stream to bootstrap
                live = ~self.venv.pool.uav_parked
                lv, lvi = np.where(live, lv, 0.0), np.where(live, lvi, 0.0)
            buf.set_last_values(lv, lvi)
            rows.append(self._update(ln, buf, finished))

        if st.stage == STAGE1:
            self._feed_gate(np.stack(gate_rewards))
        if st.global_step >= st.max_step and st.stage == STAGE2:
            st.stage = DONE
        return rows

    def _update(self, ln: Learner, buf: RolloutBuffer, finished: list[dict]) -> dict:
        st = self.state
        icm_stats = {"forward_loss": math.nan, "inverse_loss": math.nan, "intrinsic_mean": math.nan}
        hooks = None
        curiosity_gamma = None
        if ln.icm_model is not None:
            cfg = ln.icm_cfg
            if cfg.strength > 0:
                r_int = transition_rewards(
                    ln.icm_model, ln.icm_params, buf.flat("obs"), buf.flat("next_obs"), buf.flat("actions"), cfg
                )
            else:
                r_int = np.zeros(buf.capacity)
            buf.set_intrinsic(r_int)
            valid = buf.flat("valid")
            icm_stats["intrinsic_mean"] = float(np.mean(r_int[valid])) if np.any(valid) else math.nan
            curiosity_gamma = cfg.curiosity_gamma
            obs_f, next_f, act_f = buf.flat("obs"), buf.flat("next_obs"), buf.flat("actions")
            losses = []

            def on_minibatch(idx: np.ndarray) -> None:
                batch = {"obs": obs_f[idx], "next_obs": next_f[idx], "actions": act_f[idx]}
                ln.icm_params, ln.icm_opt, l = icm_update(ln.icm_model, ln.icm_params, ln.icm_opt, batch, cfg)
                losses.append(l)

            hooks = UpdateHooks(on_minibatch)
        buf.finish()
        sched_step = st.global_step - ln.sched_origin
        ln.params, ln.opt, stats = ppo_update(
            ln.model, ln.params, ln.opt, buf, ln.ppo, ln.schedule, sched_step, self.shufflers[ln.name],
            curiosity_gamma, hooks,
        )
        ln.updates += 1
        if ln.icm_model is not None and losses:
            icm_stats["forward_loss"] = float(np.mean([l[0] for l in losses]))
            icm_stats["inverse_loss"] = float(np.mean([l[1] for l in losses]))
        key = "ret_uav" if ln.name == "uav" else "ret_ugv"
        succ = "uav_success" if ln.name == "uav" else "ugv_success"
        row = {
            "step": st.global_step,
            "agent": ln.name,
            "episodes": len(finished),
            "mean_return": float(np.mean([f[key] for f in finished])) if finished else math.nan,
            "success_rate": float(np.mean([f[succ] for f in finished])) if finished else math.nan,
            "policy_loss": stats.get("policy_loss", math.nan),
            "value_loss": stats.get("value_loss", math.nan),
            "entropy": stats.get("entropy", math.nan),
            "clip_frac": stats.get("clip_frac", math.nan),
            **icm_stats,
        }
        self.metrics.append(row)
        if self.verbose is not None:
            self.verbose.write(
                f"step {row['step']} {ln.name} episodes {row['episodes']} return {row['mean_return']:.1f} "
                f"success {row['success_rate']:.2f} entropy {row['entropy']:.3f}\n"
            )
            self.verbose.flush()
        return row

    def _feed_gate(self, rewards: np.ndarray) -> None:
        st = self.state
        passed_any = False
        st.gate, closed = gate_feed(st.gate, rewards)
        for mean, counter, passed in closed:
            k = len(st.window_log)
            st.window_log.append((k, mean, counter, passed))
            if self.gate_report is not None:
                with open(self.gate_report, "a", encoding="utf-8") as fh:
                    fh.write(f"{k}\t{(k + 1) * st.gate.window_steps}\t{mean!r}\t{counter}\t{int(passed)}\n")
            passed_any |= passed
        if passed_any:
            self.enter_stage2()
        elif st.global_step >= self.cfg.gate.stage1_ceiling or st.global_step >= st.max_step:
            st.stage = GATE_TIMEOUT
            if self.gate_report is not None:
                with open(self.gate_report, "a", encoding="utf-8") as fh:
                    fh.write(
                        f"# gate timeout at step {st.global_step}: counter {st.gate.reward_counter}"
                        f" of {st.gate.required_consecutive}, threshold {st.gate.threshold!r}\n"
                    )

    def enter_stage2(self) -> None:
        st = self.state
        if st.stage != STAGE1:
            raise LifecycleError("stage 2 is entered from stage 1 only")
        st.stage = STAGE2
        st.stage2_start = st.global_step
        st.ugv.sched_origin = st.global_step
        self._set_ugv_schedule()

    # -- driving -------------------------------------------------------------

    def run(self) -> TrainerState:
        every = self.cfg.train.checkpoint_every
        while self.state.stage in (STAGE1, STAGE2) and not self.stopped:
            self.iterate()
            if self.probe is not None and self.probe(self):
                self.stopped = True
            if self.checkpoint_path is not None and self.state.uav.updates % every == 0:
                save_checkpoint(self, self.checkpoint_path)
        return self.state


def run_stage1(trainer: Trainer) -> TrainerState:
    """Train the UAV alone until the gate passes (or the ceiling is hit)."""
    while trainer.state.stage == STAGE1 and not trainer.stopped:
        trainer.iterate()
        if trainer.probe is not None and trainer.probe(trainer):
            trainer.stopped = True
    return trainer.state


def run_stage2(trainer: Trainer) -> TrainerState:
    """Train both agents until ``max_step``."""
    if trainer.state.stage == STAGE1:
        raise LifecycleError("stage 2 requires a passed gate (or the simultaneous baseline)")
    while trainer.state.stage == STAGE2 and not trainer.stopped:
        trainer.iterate()
        if trainer.probe is not None and trainer.probe(trainer):
            trainer.stopped = True
    return trainer.state


# ----------------------------------------------------------------------------
# checkpoints


def _cfg_hash(cfg: RunConfig, use_icm: bool) -> str:
    return ckpt.config_hash({"config": describe(cfg), "use_icm": use_icm})


def checkpoint_bytes(trainer: Trainer) -> bytes:
    st = trainer.state
    tensors = {}
    tensors.update(st.uav.tensors())
    tensors.update(st.ugv.tensors())
    meta = {
        "stage": st.stage,
        "global_step": st.global_step,
        "simultaneous": st.simultaneous,
        "stage2_start": st.stage2_start,
        "gate": dataclasses.asdict(st.gate),
        "window_log": [list(w) for w in st.window_log],
        "learners": {"uav": st.uav.meta(), "ugv": st.ugv.meta()},
        "ugv_schedule_total": st.ugv.schedule.total_steps,
        "rng": {k: get_state(g) for k, g in sorted({**_prefixed("sampler", trainer.samplers), **_prefixed("shuffle", trainer.shufflers)}.items())},
        "use_icm": trainer.use_icm,
        "config_text": format_config(trainer.cfg),
    }
    if trainer.venv is not None:
        v = trainer.venv
        for k, a in v.pool.export_state().items():
            tensors[f"env/{k}"] = a
        tensors["env/episode_counts"] = v.episode_counts
        tensors["track/ret_uav"] = trainer.tracker.ret_uav
        tensors["track/ret_ugv"] = trainer.tracker.ret_ugv
        tensors["track/uav_arrived"] = trainer.tracker.uav_arrived
        meta["env"] = {"joint": v.pool.joint, "tag": v.tag, "rng": [get_state(g) for g in v.rngs]}
    return ckpt.encode(tensors, meta, _cfg_hash(trainer.cfg, trainer.use_icm))


def _prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}/{k}": v for k, v in d.items()}


def save_checkpoint(trainer: Trainer, path) -> None:
    data = checkpoint_bytes(trainer)
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def restore(trainer: Trainer, data: bytes) -> Trainer:
    tensors, meta, _ = ckpt.decode(data, _cfg_hash(trainer.cfg, trainer.use_icm))
    st = trainer.state
    st.stage = meta["stage"]
    st.global_step = meta["global_step"]
    st.simultaneous = meta["simultaneous"]
    st.stage2_start = meta["stage2_start"]
    st.gate = StageGate(**meta["gate"])
    st.window_log = [tuple(w) for w in meta["window_log"]]
    st.uav.load_tensors(tensors, meta["learners"]["uav"])
    st.ugv.load_tensors(tensors, meta["learners"]["ugv"])
    s = st.ugv.schedule
    st.ugv.schedule = LrSchedule(s.initial_rate, meta["ugv_schedule_total"], s.mode)
    for name, g in trainer.samplers.items():
        set_state(g, meta["rng"][f"sampler/{name}"])
    for name, g in trainer.shufflers.items():
        set_state(g, meta["rng"][f"shuffle/{name}"])
    if "env" in meta:
        e = meta["env"]
        v = VectorEnv(trainer.env_cfg, trainer.cfg.train.num_instances, trainer.seed, joint=e["joint"], tag=e["tag"])
        for g, s_ in zip(v.rngs, e["rng"]):
            set_state(g, s_)
        v.pool.import_state({k[4:]: a for k, a in tensors.items() if k.startswith("env/") and k != "env/episode_counts"})
        v.episode_counts[:] = tensors["env/episode_counts"]
        trainer.venv = v
        trainer.obs = v.pool.observe()
        trainer.tracker = EpisodeTracker(v.n)
        trainer.tracker.ret_uav[:] = tensors["track/ret_uav"]
        trainer.tracker.ret_ugv[:] = tensors["track/ret_ugv"]
        trainer.tracker.uav_arrived[:] = tensors["track/uav_arrived"]
    return trainer


def load_checkpoint(path, cfg: RunConfig, use_icm: bool | None = None, **trainer_kwargs) -> Trainer:
    """Rebuild a trainer from a checkpoint written under ``cfg``."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if use_icm is None:
        _, meta, _ = ckpt.decode(data)
        use_icm = meta["use_icm"]
    trainer = Trainer(cfg, use_icm=use_icm, **trainer_kwargs)
    return restore(trainer, data)
