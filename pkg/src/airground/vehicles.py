"""Vehicle models: quadrotor rigid body, planar UAV and the discrete-action UGV.

Frames follow :mod:`airground.world`: ``z`` along gravity, so the free-fall
acceleration is ``+g`` on ``z`` and altitude is ``-z``.  A positive yaw turns
the nose from ``+x`` towards ``+y`` (a right turn).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ActionError, NumericInputError, StepError

GRAVITY = 9.81


@dataclass(frozen=True)
class UavParams:
    mass: float = 1.0
    g: float = GRAVITY
    roll_pitch_rate_max: float = math.pi / 2
    yaw_rate_max: float = math.pi
    v_max: float = 5.0
    vz_max: float = 2.0
    h_min: float = 1.0
    h_max: float = 4.0
    body_radius: float = 0.3


@dataclass(frozen=True)
class UgvParams:
    turn_rate: float = math.pi / 2
    body_radius: float = 0.5
    sensor_height: float = 0.3


@dataclass(frozen=True, eq=False)
class UavState:
    p_w: np.ndarray
    v_w: np.ndarray
    R: np.ndarray
    yaw: float = 0.0

    @classmethod
    def at(cls, x: float, y: float, altitude: float, yaw: float = 0.0) -> "UavState":
        return cls(
            p_w=np.array([x, y, -altitude], dtype=float),
            v_w=np.zeros(3),
            R=yaw_matrix(yaw),
            yaw=float(yaw),
        )

    @property
    def altitude(self) -> float:
        return float(-self.p_w[2])

    def quaternion(self) -> np.ndarray:
        return matrix_to_quaternion(self.R[None])[0]


@dataclass(frozen=True)
class UavCommand:
    a: tuple[float, float, float, float]

    def clamped(self) -> np.ndarray:
        a = np.asarray(self.a, dtype=float).reshape(4)
        if not np.all(np.isfinite(a)):
            raise NumericInputError("UAV command must be finite")
        return np.clip(a, -1.0, 1.0)


@dataclass(frozen=True)
class UgvState:
    position: tuple[float, float]
    heading: float = 0.0
    speed: float = 0.0


@dataclass(frozen=True)
class UgvAction:
    id: int
    speed_magnitude: float = field(init=False)
    turning_direction: int = field(init=False)

    def __post_init__(self) -> None:
        if self.id not in UGV_ACTION_TABLE:
            raise ActionError(f"UGV action id must be 1..8, got {self.id}")
        speed, turn = UGV_ACTION_TABLE[self.id]
        object.__setattr__(self, "speed_magnitude", speed)
        object.__setattr__(self, "turning_direction", turn)


# id -> (speed m/s, turn); turn -1 is left, +1 right
UGV_ACTION_TABLE: dict[int, tuple[float, int]] = {
    1: (1.5, -1),
    2: (1.5, 0),
    3: (1.5, 1),
    4: (3.0, -1),
    5: (3.0, 0),
    6: (3.0, 1),
    7: (0.75, -1),
    8: (0.75, 1),
}
UGV_SPEEDS = np.array([0.0] + [UGV_ACTION_TABLE[i][0] for i in range(1, 9)])
UGV_TURNS = np.array([0] + [UGV_ACTION_TABLE[i][1] for i in range(1, 9)], dtype=float)
HOLD = 0  # stage-1 sentinel: the UGV does not move


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(3)
    if not np.all(np.isfinite(w)):
        raise NumericInputError("skew input must be finite")
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rotation_exp(omega: np.ndarray) -> np.ndarray:
    """exp of skew(omega) for a batch ``(N, 3)`` via Rodrigues' formula."""
    theta = np.linalg.norm(omega, axis=-1)
    K = np.zeros(omega.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -omega[..., 2], omega[..., 1]
    K[..., 1, 0], K[..., 1, 2] = omega[..., 2], -omega[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -omega[..., 1], omega[..., 0]
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns of each ``(..., 3, 3)`` matrix."""
    c0 = R[..., :, 0]
    c0 = c0 / np.linalg.norm(c0, axis=-1, keepdims=True)
    c1 = R[..., :, 1] - np.sum(c0 * R[..., :, 1], axis=-1, keepdims=True) * c0
    c1 = c1 / np.linalg.norm(c1, axis=-1, keepdims=True)
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


def matrix_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternions ``(w, x, y, z)`` for a batch of rotation matrices."""
    q = Rotation.from_matrix(R).as_quat()  # x, y, z, w
    q = np.concatenate([q[:, 3:], q[:, :3]], axis=1)
    return q * np.where(q[:, :1] < 0, -1.0, 1.0)


def yaw_quaternion(yaw: np.ndarray) -> np.ndarray:
    half = 0.5 * np.asarray(yaw, dtype=float)
    q = np.zeros(half.shape + (4,))
    q[..., 0] = np.cos(half)
    q[..., 3] = np.sin(half)
    return q * np.where(q[..., :1] < 0, -1.0, 1.0)


def _check_dt(dt: float) -> None:
    if not (0.0 < dt <= 0.1):
        raise StepError(f"dt must lie in (0, 0.1], got {dt}")


# ----------------------------------------------------------------------------
# batched kernels (used by the environment)


def rigid_step_arrays(p, v, R, a, dt: float, params: UavParams):
    """Semi-implicit Euler for ``N`` quadrotors; ``a`` is ``(N, 4)`` in [-1, 1]."""
    a = np.clip(a, -1.0, 1.0)
    rates = np.stack(
        [a[:, 0] * params.roll_pitch_rate_max, a[:, 1] * params.roll_pitch_rate_max, a[:, 2] * params.yaw_rate_max],
        axis=1,
    )
    thrust = params.mass * params.g * (1.0 + a[:, 3])
    acc = -R[:, :, 2] * (thrust / params.mass)[:, None]
    acc[:, 2] += params.g
    v_new = v + dt * acc
    p_new = p + dt * v_new
    R_new = orthonormalize(R @ _rotation_exp(dt * rates))
    return p_new, v_new, R_new


def planar_step_arrays(p, yaw, a, dt: float, params: UavParams):
    """Zero roll/pitch kinematics; returns ``(p, yaw, v)``."""
    a = np.clip(a, -1.0, 1.0)
    c, s = np.cos(yaw), np.sin(yaw)
    fwd = a[:, 0] * params.v_max
    side = a[:, 1] * params.v_max
    v = np.stack([c * fwd - s * side, s * fwd + c * side, -a[:, 3] * params.vz_max], axis=1)
    p_new = p + dt * v
    p_new[:, 2] = np.clip(p_new[:, 2], -params.h_max, -params.h_min)
    yaw_new = wrap_angle(yaw + dt * a[:, 2] * params.yaw_rate_max)
    return p_new, np.atleast_1d(yaw_new), v


def ugv_step_arrays(pos, heading, action_ids, dt: float, params: UgvParams):
    """Discrete UGV kinematics for ``N`` vehicles; id 0 holds still."""
    speed = UGV_SPEEDS[action_ids]
    turn = UGV_TURNS[action_ids]
    h = np.atleast_1d(wrap_angle(heading + turn * params.turn_rate * dt))
    step = speed * dt
    new = pos + np.stack([step * np.cos(h), step * np.sin(h)], axis=1)
    return new, h, speed


# ----------------------------------------------------------------------------
# single-vehicle operations


def step_uav_rigid(state: UavState, cmd: UavCommand, dt: float, params: UavParams = UavParams()) -> UavState:
    _check_dt(dt)
    a = cmd.clamped()
    p, v, R = rigid_step_arrays(state.p_w[None], state.v_w[None], state.R[None], a[None], dt, params)
    yaw = math.atan2(R[0, 1, 0], R[0, 0, 0])
    return UavState(p_w=p[0], v_w=v[0], R=R[0], yaw=yaw)


def step_uav_planar(state: UavState, cmd: UavCommand, dt: float, params: UavParams = UavParams()) -> UavState:
    _check_dt(dt)
    a = cmd.clamped()
    p, yaw, v = planar_step_arrays(state.p_w[None], np.array([state.yaw]), a[None], dt, params)
    return UavState(p_w=p[0], v_w=v[0], R=yaw_matrix(float(yaw[0])), yaw=float(yaw[0]))


def step_ugv(state: UgvState, action: UgvAction | int, dt: float, params: UgvParams = UgvParams()) -> UgvState:
    _check_dt(dt)
    if not isinstance(action, UgvAction):
        action = UgvAction(int(action))
    pos, h, speed = ugv_step_arrays(
        np.asarray(state.position, dtype=float)[None], np.array([state.heading]), np.array([action.id]), dt, params
    )
    return UgvState(position=(float(pos[0, 0]), float(pos[0, 1])), heading=float(h[0]), speed=float(speed[0]))
