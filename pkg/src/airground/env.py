"""Observations, rewards and the episode state machine for the UAV/UGV pair.

The core is :class:`EnvPool`, which advances ``N`` independent episodes in
lock-step with array operations.  :class:`MineEnv` is a single episode on top
of it (stepping a finished episode is an error) and :class:`VectorEnv` is the
auto-resetting pool used for rollouts.

Episode semantics
-----------------
* UAV-only mode (stage 1): the UGV receives :data:`~airground.vehicles.HOLD`
  and a UAV arrival ends the episode.
* Joint mode (stage 2 and evaluation): a UAV arrival parks the UAV at the
  target; its learning stream stops while the UGV keeps driving.  The
  episode ends when the UGV arrives, either vehicle collides, or the step
  limit is reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from . import world as W
from .errors import BatchError, LifecycleError, NumericInputError
from .rng import stream
from .vehicles import (
    HOLD,
    UavParams,
    UavState,
    UgvParams,
    UgvState,
    matrix_to_quaternion,
    planar_step_arrays,
    rigid_step_arrays,
    ugv_step_arrays,
    yaw_matrix,
    yaw_quaternion,
)

N_BEAMS = 19
BEAM_OFFSETS = np.deg2rad(np.arange(-90.0, 91.0, 10.0))  # left -> right
UAV_OBS_DIM = 68
UGV_OBS_DIM = 33
UAV_ACT_DIM = 4
UGV_N_ACTIONS = 8

DONE_REASONS = ("running", "uav_arrived", "uav_collision", "ugv_arrived", "ugv_collision", "timeout")
RUNNING, UAV_ARRIVED, UAV_COLLISION, UGV_ARRIVED, UGV_COLLISION, TIMEOUT = range(6)

UAV_CASES = ("arrive", "collision", "forward", "approach", "time")
UGV_CASES = ("arrive", "collision", "distance", "follow", "progress", "cross", "time")


@dataclass(frozen=True)
class RewardParams:
    r_arrive_uav: float = 7000.0
    r_collision_uav: float = -7000.0
    r_forward: float = 0.5
    alpha: float = 5000.0
    r_collision_ugv: float = -15000.0
    r_distance: float = 5.0
    r_follow: float = -20.0
    c_r1: float = 4000.0
    c_r2: float = 8000.0
    r_arrive_ugv: float = 3000.0
    r_time: float = -0.1
    theta1: float = 2.0
    theta2: float = 6.0


@dataclass(frozen=True)
class EnvConfig:
    variant: W.EnvVariant = field(default_factory=W.EnvVariant.original)
    layout: W.Layout = field(default_factory=W.Layout)
    rewards: RewardParams = field(default_factory=RewardParams)
    uav: UavParams = field(default_factory=UavParams)
    ugv: UgvParams = field(default_factory=UgvParams)
    uav_mode: str = "planar"
    dt: float = 0.05
    step_limit: int = 1500
    uav_lidar_range: float = 20.0
    ugv_lidar_range: float = 20.0
    scan_pitch_deg: float = 30.0
    uav_start: tuple[float, float, float, float] = (2.0, 0.0, 3.0, 0.0)  # x, y, altitude, yaw
    ugv_start: tuple[float, float, float] = (1.0, 0.0, 0.0)  # x, y, heading
    debug_log: bool = False


# ----------------------------------------------------------------------------
# rewards


def uav_reward_arrays(p: RewardParams, x_cross, d_cross, collision, d_t, x_t, x_prev):
    """Vectorised UAV reward; returns ``(reward, terminal, cases)``.

    ``cases`` is a boolean ``(N, 5)`` matrix over :data:`UAV_CASES`.  A
    collision pre-empts arrival; a terminal step pays only its terminal case
    and the time penalty.
    """
    collision = np.asarray(collision, dtype=bool)
    d_t = np.asarray(d_t, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    x_prev = np.asarray(x_prev, dtype=float)
    arrive = (d_t < p.theta1) & ~collision
    terminal = arrive | collision
    forward = ~terminal & (x_prev < x_t) & (x_t < x_cross)
    approach = ~terminal & (x_t > x_cross)
    r = np.zeros(np.broadcast(d_t, x_t).shape)
    r = np.where(arrive, r + p.r_arrive_uav, r)
    r = np.where(collision, r + p.r_collision_uav, r)
    r = np.where(forward, r + p.r_forward, r)
    r = np.where(approach, r + p.alpha * (d_cross - d_t) / d_cross, r)
    r = r + p.r_time
    always = np.ones_like(arrive)
    cases = np.stack(np.broadcast_arrays(arrive, collision, forward, approach, always), axis=-1)
    return r, terminal, cases


def ugv_reward_arrays(p: RewardParams, x_cross, d_cross, collision, d_t, d_to_uav, x_ugv, x_uav):
    collision = np.asarray(collision, dtype=bool)
    d_t = np.asarray(d_t, dtype=float)
    x_ugv = np.asarray(x_ugv, dtype=float)
    arrive = (d_t < p.theta1) & ~collision
    terminal = arrive | collision
    live = ~terminal
    near = live & (np.asarray(d_to_uav) < p.theta2)
    ahead = live & (x_ugv > np.asarray(x_uav))
    progress = live & (x_ugv < x_cross)
    cross = live & (x_ugv > x_cross)
    r = np.zeros(np.broadcast(d_t, x_ugv).shape)
    r = np.where(arrive, r + p.r_arrive_ugv, r)
    r = np.where(collision, r + p.r_collision_ugv, r)
    r = np.where(near, r + p.r_distance, r)
    r = np.where(ahead, r + p.r_follow, r)
    r = np.where(progress, r + p.c_r1 * x_ugv / x_cross, r)
    r = np.where(cross, r + (p.c_r1 + p.c_r2 * (d_cross - d_t) / d_cross), r)
    r = r + p.r_time
    always = np.ones_like(arrive)
    cases = np.stack(np.broadcast_arrays(arrive, collision, near, ahead, progress, cross, always), axis=-1)
    return r, terminal, cases


def uav_reward(
    params: RewardParams,
    world: W.WorldGeometry,
    prev_state: UavState | None,
    new_state: UavState | None,
    collision: bool,
    d_t: float,
    x_t: float,
    x_prev: float,
) -> tuple[float, bool]:
    if not all(math.isfinite(v) for v in (d_t, x_t, x_prev)):
        raise NumericInputError("reward inputs must be finite")
    r, term, _ = uav_reward_arrays(params, world.x_cross, world.d_cross, collision, d_t, x_t, x_prev)
    return float(r), bool(term)


def ugv_reward(
    params: RewardParams,
    world: W.WorldGeometry,
    ugv_state: UgvState,
    uav_state: UavState,
    collision: bool,
    d_t: float,
    d_to_uav: float,
) -> tuple[float, bool]:
    x_ugv = float(ugv_state.position[0])
    x_uav = float(uav_state.p_w[0])
    if not all(math.isfinite(v) for v in (d_t, d_to_uav, x_ugv, x_uav)):
        raise NumericInputError("reward inputs must be finite")
    r, term, _ = ugv_reward_arrays(params, world.x_cross, world.d_cross, collision, d_t, d_to_uav, x_ugv, x_uav)
    return float(r), bool(term)


# ----------------------------------------------------------------------------
# observations


def _beam_dirs(R: np.ndarray, pitch: float) -> np.ndarray:
    """World-frame unit beam directions ``(N, 19, 3)`` for body rotations ``R``."""
    c = math.cos(pitch)
    body = np.stack(
        [c * np.cos(BEAM_OFFSETS), c * np.sin(BEAM_OFFSETS), np.full(N_BEAMS, math.sin(pitch))], axis=1
    )
    return np.einsum("nij,kj->nki", R, body)


def uav_obs_arrays(walls, wall_h, obstacles, obstacle_h, targets, target_r, p, R, quat, prev_cmd, cfg: EnvConfig):
    n = len(p)
    rays = np.concatenate([_beam_dirs(R, 0.0), _beam_dirs(R, math.radians(cfg.scan_pitch_deg))], axis=1)
    origins = np.broadcast_to(p[:, None, :], rays.shape)
    dist, kind = W.raycast_arrays(
        origins, rays, cfg.uav_lidar_range, walls, wall_h, obstacles, obstacle_h, targets, target_r
    )
    norm = dist / cfg.uav_lidar_range
    scan = np.empty((n, N_BEAMS, 2))
    scan[..., 0] = norm[:, N_BEAMS:]
    scan[..., 1] = kind[:, N_BEAMS:] == W.HIT_TARGET
    return np.concatenate([norm[:, :N_BEAMS], scan.reshape(n, -1), p, quat, prev_cmd], axis=1)


def ugv_ego(ugv_pos, ugv_heading, uav_xy):
    d = uav_xy - ugv_pos
    c, s = np.cos(ugv_heading), np.sin(ugv_heading)
    forward = d[:, 0] * c + d[:, 1] * s
    left = d[:, 0] * s - d[:, 1] * c
    return np.stack([forward, left], axis=1), np.arctan2(left, forward)


def ugv_obs_arrays(walls, wall_h, obstacles, obstacle_h, targets, target_r, pos, heading, uav_xy, prev_ids, cfg):
    n = len(pos)
    ang = heading[:, None] + BEAM_OFFSETS[None, :]
    rays = np.stack([np.cos(ang), np.sin(ang), np.zeros_like(ang)], axis=-1)
    origins = np.concatenate([pos, np.full((n, 1), -cfg.ugv.sensor_height)], axis=1)
    origins = np.broadcast_to(origins[:, None, :], rays.shape)
    # the UGV lidar has no target channel: the target sphere is invisible to it
    far = np.full_like(targets, 1e9)
    dist, _ = W.raycast_arrays(origins, rays, cfg.ugv_lidar_range, walls, wall_h, obstacles, obstacle_h, far, target_r)
    rel, angle = ugv_ego(pos, heading, uav_xy)
    onehot = np.zeros((n, UGV_N_ACTIONS))
    has = prev_ids > 0
    onehot[np.nonzero(has)[0], prev_ids[has] - 1] = 1.0
    return np.concatenate(
        [dist / cfg.ugv_lidar_range, rel, angle[:, None], pos, heading[:, None], onehot], axis=1
    )


def assemble_uav_obs(world: W.WorldGeometry, uav_state: UavState, prev_cmd, cfg: EnvConfig | None = None):
    cfg = cfg or EnvConfig()
    R = uav_state.R[None]
    quat = uav_state.quaternion()[None]
    prev = np.asarray(prev_cmd if prev_cmd is not None else np.zeros(4), dtype=float).reshape(1, 4)
    obs = uav_obs_arrays(
        world.wall_segments, world.wall_height, world.obstacles[None], world.obstacle_height,
        world.target_center[None], world.target_radius, uav_state.p_w[None], R, quat, prev, cfg,
    )
    return obs[0]


def assemble_ugv_obs(world: W.WorldGeometry, ugv_state: UgvState, uav_state: UavState, prev_action, cfg=None):
    cfg = cfg or EnvConfig()
    prev = np.array([0 if prev_action is None else int(prev_action)])
    obs = ugv_obs_arrays(
        world.wall_segments, world.wall_height, world.obstacles[None], world.obstacle_height,
        world.target_center[None], world.target_radius,
        np.asarray(ugv_state.position, dtype=float)[None], np.array([ugv_state.heading]),
        uav_state.p_w[None, :2], prev, cfg,
    )
    return obs[0]


def split_uav_obs(obs: np.ndarray) -> dict[str, np.ndarray]:
    scan = obs[..., 19:57].reshape(obs.shape[:-1] + (19, 2))
    return {
        "ring_lidar": obs[..., :19],
        "scan_lidar": scan[..., 0],
        "target_flag": scan[..., 1],
        "position": obs[..., 57:60],
        "orientation": obs[..., 60:64],
        "prev_action": obs[..., 64:68],
    }


def split_ugv_obs(obs: np.ndarray) -> dict[str, np.ndarray]:
    return {
        "lidar": obs[..., :19],
        "rel_uav": obs[..., 19:21],
        "rel_angle": obs[..., 21],
        "position": obs[..., 22:24],
        "heading": obs[..., 24],
        "prev_action_onehot": obs[..., 25:33],
    }


# ----------------------------------------------------------------------------
# the pool


@dataclass
class PoolStep:
    """Batched transition for ``N`` instances."""

    uav_obs: np.ndarray
    ugv_obs: np.ndarray
    reward_uav: np.ndarray
    reward_ugv: np.ndarray
    done: np.ndarray
    done_reason: np.ndarray
    uav_active: np.ndarray  # the UAV's learning stream produced this transition
    uav_terminal: np.ndarray  # the UAV stream ended on this step (arrival/collision/episode end)
    uav_own_terminal: np.ndarray  # ... and it ended because the UAV arrived or crashed
    ugv_own_terminal: np.ndarray  # the UGV arrived or crashed
    truncated: np.ndarray
    final_uav_obs: np.ndarray | None = None
    final_ugv_obs: np.ndarray | None = None


@dataclass
class StepResult:
    obs: tuple[np.ndarray, np.ndarray]
    reward_uav: float
    reward_ugv: float
    done: bool
    done_reason: str
    uav_active: bool = True


class EnvPool:
    """``N`` episodes advanced together."""

    def __init__(self, cfg: EnvConfig, n: int, joint: bool = True, log: TextIO | None = None):
        if n < 1:
            raise BatchError("pool needs at least one instance")
        self.cfg = cfg
        self.n = n
        self.joint = joint
        self.log = log if cfg.debug_log else None
        self.worlds: list[W.WorldGeometry | None] = [None] * n
        self.walls = None
        nb = len(cfg.layout.obstacle_xs)
        self.obstacles = np.zeros((n, nb, 5))
        self.targets = np.zeros((n, 3))
        self.x_cross = np.zeros(n)
        self.d_cross = np.ones(n)
        self.target_xy = np.zeros((n, 2))
        self.uav_p = np.zeros((n, 3))
        self.uav_v = np.zeros((n, 3))
        self.uav_R = np.tile(np.eye(3), (n, 1, 1))
        self.uav_yaw = np.zeros(n)
        self.uav_prev = np.zeros((n, 4))
        self.uav_parked = np.zeros(n, dtype=bool)
        self.ugv_pos = np.zeros((n, 2))
        self.ugv_heading = np.zeros(n)
        self.ugv_speed = np.zeros(n)
        self.ugv_prev = np.zeros(n, dtype=np.int64)
        self.steps = np.zeros(n, dtype=np.int64)
        self.done = np.ones(n, dtype=bool)
        self.episode_seed = np.zeros(n, dtype=np.int64)
        self.global_step = 0

    # -- lifecycle -----------------------------------------------------------

    def reset_instances(self, idx: Sequence[int], seeds: Sequence[int]) -> None:
        cfg = self.cfg
        for i, seed in zip(idx, seeds):
            world = W.build_world(cfg.variant, int(seed), cfg.layout)
            if self.walls is None:
                self.walls = world.wall_segments
                self.wall_height = world.wall_height
                self.obstacle_height = world.obstacle_height
                self.target_radius = world.target_radius
            self.worlds[i] = world
            self.episode_seed[i] = seed
            self.obstacles[i] = world.obstacles
            self.targets[i] = world.target_center
            self.target_xy[i] = world.target_position
            self.x_cross[i] = world.x_cross
            self.d_cross[i] = world.d_cross
            x, y, alt, yaw = cfg.uav_start
            self.uav_p[i] = (x, y, -alt)
            self.uav_v[i] = 0.0
            self.uav_R[i] = yaw_matrix(yaw)
            self.uav_yaw[i] = yaw
            self.uav_prev[i] = 0.0
            self.uav_parked[i] = False
            gx, gy, gh = cfg.ugv_start
            self.ugv_pos[i] = (gx, gy)
            self.ugv_heading[i] = gh
            self.ugv_speed[i] = 0.0
            self.ugv_prev[i] = 0
            self.steps[i] = 0
            self.done[i] = False

    def observe(self, idx=None) -> tuple[np.ndarray, np.ndarray]:
        sl = slice(None) if idx is None else np.asarray(idx)
        return self._obs(sl)

    def _quat(self, sl):
        if self.cfg.uav_mode == "planar":
            return yaw_quaternion(self.uav_yaw[sl])
        return matrix_to_quaternion(self.uav_R[sl])

    def _obs(self, sl):
        args = (self.walls, self.wall_height, self.obstacles[sl], self.obstacle_height, self.targets[sl], self.target_radius)
        uo = uav_obs_arrays(*args, self.uav_p[sl], self.uav_R[sl], self._quat(sl), self.uav_prev[sl], self.cfg)
        go = ugv_obs_arrays(
            *args, self.ugv_pos[sl], self.ugv_heading[sl], self.uav_p[sl, :2], self.ugv_prev[sl], self.cfg
        )
        for name, lidar in (("uav ring", uo[:, :19]), ("uav scan", uo[:, 19:57:2]), ("ugv", go[:, :19])):
            if not (np.all(lidar >= 0.0) and np.all(lidar <= 1.0)):
                raise NumericInputError(f"{name} lidar reading outside [0, 1]")
        return uo, go

    # -- stepping ------------------------------------------------------------

    def step(self, uav_cmd: np.ndarray, ugv_action: np.ndarray) -> PoolStep:
        cfg = self.cfg
        uav_cmd = np.asarray(uav_cmd, dtype=float)
        ugv_action = np.asarray(ugv_action, dtype=np.int64)
        if uav_cmd.shape != (self.n, 4) or ugv_action.shape != (self.n,):
            raise BatchError(
                f"expected uav actions ({self.n}, 4) and ugv actions ({self.n},), "
                f"got {uav_cmd.shape} and {ugv_action.shape}"
            )
        if not np.all(np.isfinite(uav_cmd)):
            raise NumericInputError("UAV command must be finite")
        if np.any((ugv_action < 0) | (ugv_action > 8)):
            raise BatchError("UGV action ids must be 0 (hold) or 1..8")
        if np.any(self.done):
            raise LifecycleError("cannot step a finished episode; reset it first")
        if not self.joint and np.any(ugv_action != HOLD):
            raise LifecycleError("UAV-only episodes require the UGV hold sentinel")

        cmd = np.clip(uav_cmd, -1.0, 1.0)
        fly = ~self.uav_parked
        prev_x_uav = self.uav_p[:, 0].copy()
        if np.any(fly):
            if cfg.uav_mode == "planar":
                p, yaw, v = planar_step_arrays(self.uav_p[fly], self.uav_yaw[fly], cmd[fly], cfg.dt, cfg.uav)
                self.uav_p[fly], self.uav_yaw[fly], self.uav_v[fly] = p, yaw, v
                c, s = np.cos(yaw), np.sin(yaw)
                R = np.zeros((len(yaw), 3, 3))
                R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1], R[:, 2, 2] = c, -s, s, c, 1.0
                self.uav_R[fly] = R
            else:
                p, v, R = rigid_step_arrays(self.uav_p[fly], self.uav_v[fly], self.uav_R[fly], cmd[fly], cfg.dt, cfg.uav)
                self.uav_p[fly], self.uav_v[fly], self.uav_R[fly] = p, v, R
                self.uav_yaw[fly] = np.arctan2(R[:, 1, 0], R[:, 0, 0])
            self.uav_prev[fly] = cmd[fly]
        self.uav_v[~fly] = 0.0

        pos, heading, speed = ugv_step_arrays(self.ugv_pos, self.ugv_heading, ugv_action, cfg.dt, cfg.ugv)
        self.ugv_pos, self.ugv_heading, self.ugv_speed = pos, heading, speed
        self.ugv_prev = ugv_action.copy()
        self.steps += 1
        self.global_step += 1

        walls = self.walls
        uav_clear = W.clearance_arrays(self.uav_p, walls, self.wall_height, self.obstacles, self.obstacle_height)
        uav_col = (uav_clear <= cfg.uav.body_radius) & fly
        ugv_c = np.concatenate([self.ugv_pos, np.full((self.n, 1), -cfg.ugv.body_radius)], axis=1)
        ugv_clear = W.clearance_arrays(ugv_c, walls, self.wall_height, self.obstacles, self.obstacle_height)
        ugv_col = ugv_clear <= cfg.ugv.body_radius

        d_uav = np.linalg.norm(self.uav_p[:, :2] - self.target_xy, axis=1)
        d_ugv = np.linalg.norm(self.ugv_pos - self.target_xy, axis=1)
        d_pair = np.linalg.norm(self.uav_p[:, :2] - self.ugv_pos, axis=1)
        rp = cfg.rewards
        r_uav, term_uav, cases_uav = uav_reward_arrays(
            rp, self.x_cross, self.d_cross, uav_col, d_uav, self.uav_p[:, 0], prev_x_uav
        )
        r_ugv, term_ugv, cases_ugv = ugv_reward_arrays(
            rp, self.x_cross, self.d_cross, ugv_col, d_ugv, d_pair, self.ugv_pos[:, 0], self.uav_p[:, 0]
        )
        r_uav = np.where(fly, r_uav, 0.0)
        uav_arrived = fly & term_uav & ~uav_col

        reason = np.full(self.n, RUNNING)
        if self.joint:
            ugv_arrived = term_ugv & ~ugv_col
            reason = np.where(ugv_arrived, UGV_ARRIVED, reason)
        else:
            r_ugv = np.zeros(self.n)
            ugv_col = np.zeros(self.n, dtype=bool)
            reason = np.where(uav_arrived, UAV_ARRIVED, reason)
        reason = np.where(ugv_col, UGV_COLLISION, reason)
        reason = np.where(uav_col, UAV_COLLISION, reason)
        truncated = (reason == RUNNING) & (self.steps >= cfg.step_limit)
        reason = np.where(truncated, TIMEOUT, reason)
        done = reason != RUNNING

        uav_terminal = fly & (term_uav | done)
        if self.joint:
            self.uav_parked |= uav_arrived
        self.done = done

        if self.log is not None:
            self._write_log(fly, r_uav, cases_uav, r_ugv, cases_ugv)

        uo, go = self._obs(slice(None))
        return PoolStep(
            uav_obs=uo,
            ugv_obs=go,
            reward_uav=r_uav,
            reward_ugv=r_ugv,
            done=done.copy(),
            done_reason=reason,
            uav_active=fly,
            uav_terminal=uav_terminal,
            uav_own_terminal=fly & term_uav,
            ugv_own_terminal=term_ugv & self.joint,
            truncated=truncated,
        )

    def _write_log(self, fly, r_uav, cases_uav, r_ugv, cases_ugv) -> None:
        for i in range(self.n):
            s = int(self.steps[i])
            if fly[i]:
                names = ",".join(c for c, on in zip(UAV_CASES, cases_uav[i]) if on)
                self.log.write(f"step={s}\tinst={i}\tagent=uav\tcases={names}\treward={float(r_uav[i])!r}\n")
            if self.joint:
                names = ",".join(c for c, on in zip(UGV_CASES, cases_ugv[i]) if on)
                self.log.write(f"step={s}\tinst={i}\tagent=ugv\tcases={names}\treward={float(r_ugv[i])!r}\n")

    # -- snapshots -----------------------------------------------------------

    STATE_ARRAYS = (
        "uav_p", "uav_v", "uav_R", "uav_yaw", "uav_prev", "uav_parked",
        "ugv_pos", "ugv_heading", "ugv_speed", "ugv_prev", "steps", "done", "episode_seed",
    )

    def export_state(self) -> dict[str, np.ndarray]:
        out = {name: getattr(self, name).copy() for name in self.STATE_ARRAYS}
        out["global_step"] = np.array(self.global_step, dtype=np.int64)
        return out

    def import_state(self, state: dict[str, np.ndarray]) -> None:
        """Restore a snapshot; worlds are rebuilt from the episode seeds."""
        live = [i for i in range(self.n) if not state["done"][i]]
        self.reset_instances(live, [int(state["episode_seed"][i]) for i in live])
        for name in self.STATE_ARRAYS:
            getattr(self, name)[...] = state[name]
        self.global_step = int(state["global_step"])

    # -- views ---------------------------------------------------------------

    def uav_state(self, i: int) -> UavState:
        return UavState(p_w=self.uav_p[i].copy(), v_w=self.uav_v[i].copy(), R=self.uav_R[i].copy(), yaw=float(self.uav_yaw[i]))

    def ugv_state(self, i: int) -> UgvState:
        return UgvState(
            position=(float(self.ugv_pos[i, 0]), float(self.ugv_pos[i, 1])),
            heading=float(self.ugv_heading[i]),
            speed=float(self.ugv_speed[i]),
        )


class MineEnv:
    """A single episode."""

    def __init__(self, cfg: EnvConfig | None = None, joint: bool = True, log: TextIO | None = None):
        self.pool = EnvPool(cfg or EnvConfig(), 1, joint=joint, log=log)

    @property
    def world(self) -> W.WorldGeometry:
        return self.pool.worlds[0]

    def reset(self, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        self.pool.reset_instances([0], [seed])
        uo, go = self.pool.observe()
        return uo[0], go[0]

    def step(self, uav_cmd, ugv_action: int | None = HOLD) -> StepResult:
        return env_step(self, uav_cmd, ugv_action)


def env_step(instance: MineEnv, uav_cmd, ugv_action_or_hold: int | None = HOLD) -> StepResult:
    a = HOLD if ugv_action_or_hold is None else int(ugv_action_or_hold)
    res = instance.pool.step(np.asarray(uav_cmd, dtype=float).reshape(1, 4), np.array([a]))
    return StepResult(
        obs=(res.uav_obs[0], res.ugv_obs[0]),
        reward_uav=float(res.reward_uav[0]),
        reward_ugv=float(res.reward_ugv[0]),
        done=bool(res.done[0]),
        done_reason=DONE_REASONS[int(res.done_reason[0])],
        uav_active=bool(res.uav_active[0]),
    )


class VectorEnv:
    """Auto-resetting pool of ``N`` episodes with per-instance seed streams."""

    def __init__(
        self, cfg: EnvConfig, n: int, seed: int, joint: bool = True, log: TextIO | None = None, tag: str = "env"
    ):
        self.pool = EnvPool(cfg, n, joint=joint, log=log)
        self.seed = seed
        self.tag = tag
        self.rngs = [stream(seed, f"{tag}/{i}") for i in range(n)]
        self.episode_counts = np.zeros(n, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.pool.n

    def _next_seed(self, i: int) -> int:
        return int(self.rngs[i].integers(0, 2**31 - 1))

    def reset(self) -> tuple[np.ndarray, np.ndarray]:
        idx = list(range(self.n))
        self.pool.reset_instances(idx, [self._next_seed(i) for i in idx])
        return self.pool.observe()

    def step(self, uav_cmd: np.ndarray, ugv_action: np.ndarray) -> PoolStep:
        res = self.pool.step(uav_cmd, ugv_action)
        finished = np.nonzero(res.done)[0]
        if len(finished):
            res.final_uav_obs = res.uav_obs.copy()
            res.final_ugv_obs = res.ugv_obs.copy()
            self.episode_counts[finished] += 1
            self.pool.reset_instances(finished, [self._next_seed(int(i)) for i in finished])
            uo, go = self.pool.observe(finished)
            res.uav_obs[finished] = uo
            res.ugv_obs[finished] = go
        return res


def vector_env_step(env: VectorEnv, uav_cmds: np.ndarray, ugv_actions: np.ndarray) -> PoolStep:
    return env.step(uav_cmds, ugv_actions)
