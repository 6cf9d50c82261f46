"""Mine-tunnel geometry, raycasting and collision queries.

World frame: ``x`` runs down the tunnel, ``y`` points to the right of a
vehicle facing ``+x`` and ``z`` points along gravity, so the floor is
``z = 0`` and heights are negative ``z`` values.  Walls are vertical
rectangles (a 2D segment extruded over ``z in [-wall_height, 0]``),
obstacles are oriented boxes standing on the floor and the target is a
sphere resting on the floor.

The tunnel is a straight corridor ending in a crossroad at ``x_cross``.
From there two branches leave at ``+/- fork_half_angle``; after
``bend_distance`` metres each branch bends to ``target_branch_angle`` so the
target, placed past the bend, is hidden from every point of the straight
corridor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericInputError
from .rng import stream

GEOMETRY_FORMAT_VERSION = 1

HIT_NONE, HIT_WALL, HIT_OBSTACLE, HIT_TARGET = 0, 1, 2, 3
HIT_KINDS = ("none", "wall", "obstacle", "target")

LEFT, RIGHT = -1, 1


@dataclass(frozen=True)
class EnvVariant:
    """Named environment variant.

    ``target_branch_angle`` is the heading (degrees from the tunnel axis) of
    each branch after its bend.
    """

    name: str = "original"
    corridor_width: float = 10.0
    fork_half_angle: float = 30.0
    obstacle_layout_id: int = 0
    target_branch_angle: float = 120.0

    @classmethod
    def original(cls) -> "EnvVariant":
        return cls()

    @classmethod
    def complex(cls) -> "EnvVariant":
        return cls(
            name="complex",
            corridor_width=15.0,
            fork_half_angle=40.0,
            obstacle_layout_id=1,
            target_branch_angle=135.0,
        )

    @classmethod
    def by_name(cls, name: str) -> "EnvVariant":
        if name == "original":
            return cls.original()
        if name == "complex":
            return cls.complex()
        raise ConfigError(f"unknown variant {name!r} (expected original or complex)", field="name")

    def validate(self) -> None:
        if self.name not in ("original", "complex"):
            raise ConfigError(f"unknown variant {self.name!r}", field="name")
        if not 4.0 <= self.corridor_width <= 30.0:
            raise ConfigError(f"{self.corridor_width} outside [4, 30] m", field="corridor_width")
        if not 10.0 <= self.fork_half_angle <= 80.0:
            raise ConfigError(f"{self.fork_half_angle} outside [10, 80] deg", field="fork_half_angle")
        if self.obstacle_layout_id not in (0, 1):
            raise ConfigError(f"{self.obstacle_layout_id} not in {{0, 1}}", field="obstacle_layout_id")
        if not self.fork_half_angle < self.target_branch_angle <= 150.0:
            raise ConfigError(
                f"{self.target_branch_angle} must lie in (fork_half_angle, 150] deg",
                field="target_branch_angle",
            )


# (branch_length, target_distance) per variant.  The wider complex tunnel
# needs the target further past the bend to stay out of sight.
BRANCH_DEFAULTS = {"original": (25.0, 20.0), "complex": (30.0, 25.0)}


@dataclass(frozen=True)
class Layout:
    """Tunnel dimensions that the named variants leave open.

    Defaults give the full-size tunnel; the desk-scale experiments shorten
    the corridor, drop obstacles or remove the fork through these fields.
    """

    corridor_length: float = 60.0
    fork: bool = True
    bend_distance: float = 10.0
    # None picks the per-variant value from BRANCH_DEFAULTS
    branch_length: float | None = None
    target_distance: float | None = None
    obstacle_xs: tuple[float, ...] = (8.0, 16.0, 24.0, 32.0, 40.0, 48.0)
    obstacle_offset: float = 2.5
    obstacle_across: float = 2.0
    obstacle_along: float = 1.0
    obstacle_height: float = 2.0
    obstacle_jitter: float = 2.0
    wall_height: float = 6.0
    target_radius: float = 1.0
    # straight (fork=False) layouts: how far past x_cross the target sits and the tunnel ends
    straight_target_offset: float = 5.0
    straight_extension: float = 10.0

    def for_variant(self, variant: EnvVariant) -> "Layout":
        branch, target = BRANCH_DEFAULTS.get(variant.name, BRANCH_DEFAULTS["original"])
        return replace(
            self,
            branch_length=branch if self.branch_length is None else self.branch_length,
            target_distance=target if self.target_distance is None else self.target_distance,
        )

    def validate(self) -> None:
        if self.branch_length is None or self.target_distance is None:
            raise ConfigError("resolve the layout with for_variant() first", field="branch_length")
        if self.corridor_length <= 0:
            raise ConfigError("must be > 0", field="corridor_length")
        if self.fork:
            if not 0 < self.bend_distance < self.branch_length:
                raise ConfigError("need 0 < bend_distance < branch_length", field="bend_distance")
            if not self.bend_distance < self.target_distance < self.branch_length:
                raise ConfigError(
                    "target must sit past the bend and inside the branch", field="target_distance"
                )
        else:
            if not 0 < self.straight_target_offset < self.straight_extension:
                raise ConfigError("need 0 < offset < extension", field="straight_target_offset")
        for x in self.obstacle_xs:
            if not 0 < x < self.corridor_length:
                raise ConfigError(f"obstacle x={x} outside the corridor", field="obstacle_xs")
        if self.target_radius <= 0 or self.wall_height <= 0 or self.obstacle_height <= 0:
            raise ConfigError("sizes must be positive", field="target_radius")


@dataclass(frozen=True, eq=False)
class WorldGeometry:
    wall_segments: np.ndarray  # (S, 2, 2)
    obstacles: np.ndarray  # (B, 5): cx, cy, half_along, half_across, rotation [rad]
    corridor_width: float
    corridor_length: float
    fork_half_angle: float
    branch_length: float
    x_cross: float
    target_position: np.ndarray  # (2,)
    target_radius: float
    d_cross: float
    wall_height: float = 6.0
    obstacle_height: float = 2.0
    target_branch: int = LEFT
    mouth_x: float = 0.0
    branch_cells: tuple[np.ndarray, ...] = field(default=())  # convex quads, 4x2 each
    branch_of_cell: tuple[int, ...] = field(default=())
    variant: str = "original"

    @property
    def target_center(self) -> np.ndarray:
        return np.array([self.target_position[0], self.target_position[1], -self.target_radius])

    @property
    def half_width(self) -> float:
        return 0.5 * self.corridor_width

    def branches_containing(self, point: Sequence[float]) -> set[int]:
        """Branch ids (LEFT/RIGHT) whose polygon contains ``point`` (2D)."""
        found = set()
        p = np.asarray(point, dtype=float)
        for quad, b in zip(self.branch_cells, self.branch_of_cell):
            if _point_in_convex(p, quad):
                found.add(b)
        return found

    def in_straight_corridor(self, point: Sequence[float]) -> bool:
        x, y = float(point[0]), float(point[1])
        return 0.0 <= x <= self.mouth_x and abs(y) <= self.half_width

    def to_text(self) -> str:
        return geometry_to_text(self)


@dataclass(frozen=True)
class RayHit:
    distance: float
    hit_kind: str
    normalized_distance: float


# ----------------------------------------------------------------------------
# construction


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _left_normal(u: np.ndarray) -> np.ndarray:
    # normal pointing to the -y side of the travel direction (vehicle's left)
    return np.array([u[1], -u[0]])


def _line_intersection(p0, d0, p1, d1) -> np.ndarray:
    a = np.array([[d0[0], -d1[0]], [d0[1], -d1[1]]])
    t, _ = np.linalg.solve(a, np.asarray(p1) - np.asarray(p0))
    return np.asarray(p0) + t * np.asarray(d0)


def _offset_polyline(points: list[np.ndarray], offset: float) -> list[np.ndarray]:
    """Offset an open polyline sideways with mitre joins.

    Positive ``offset`` moves towards the traveller's left (-y for +x travel).
    """
    dirs = [(b - a) / np.linalg.norm(b - a) for a, b in zip(points[:-1], points[1:])]
    out = [points[0] + offset * _left_normal(dirs[0])]
    for i in range(1, len(points) - 1):
        p0 = points[i] + offset * _left_normal(dirs[i - 1])
        p1 = points[i] + offset * _left_normal(dirs[i])
        out.append(_line_intersection(p0, dirs[i - 1], p1, dirs[i]))
    out.append(points[-1] + offset * _left_normal(dirs[-1]))
    return out


def _segments(poly: list[np.ndarray]) -> list[np.ndarray]:
    return [np.array([a, b]) for a, b in zip(poly[:-1], poly[1:])]


def _rect(center: np.ndarray, u: np.ndarray, half_len: float, half_w: float) -> np.ndarray:
    n = _left_normal(u)
    c = np.asarray(center)
    return np.array(
        [
            c - half_len * u - half_w * n,
            c + half_len * u - half_w * n,
            c + half_len * u + half_w * n,
            c - half_len * u + half_w * n,
        ]
    )


def _point_in_convex(p: np.ndarray, quad: np.ndarray) -> bool:
    signs = []
    for a, b in zip(quad, np.roll(quad, -1, axis=0)):
        e = b - a
        signs.append(e[0] * (p[1] - a[1]) - e[1] * (p[0] - a[0]))
    signs = np.array(signs)
    return bool(np.all(signs >= -1e-12) or np.all(signs <= 1e-12))


def build_world(
    variant: EnvVariant | str | None = None,
    seed: int = 0,
    layout: Layout | None = None,
    target_branch: int | None = None,
) -> WorldGeometry:
    """Build the tunnel for ``variant`` and place the target.

    The branch holding the target is drawn from the seeded stream with
    probability 1/2 each unless ``target_branch`` forces one.
    """
    if isinstance(variant, str):
        variant = EnvVariant.by_name(variant)
    variant = variant or EnvVariant.original()
    layout = (layout or Layout()).for_variant(variant)
    variant.validate()
    layout.validate()
    rng = stream(seed, "world")
    branch = LEFT if rng.random() < 0.5 else RIGHT
    if target_branch is not None:
        if target_branch not in (LEFT, RIGHT):
            raise ConfigError("target_branch must be -1 or 1", field="target_branch")
        branch = target_branch

    h = 0.5 * variant.corridor_width
    L = layout.corridor_length
    walls: list[np.ndarray] = []
    cells: list[np.ndarray] = []
    cell_branch: list[int] = []
    start = np.array([0.0, 0.0])
    cross = np.array([L, 0.0])

    if layout.fork:
        phi = math.radians(variant.fork_half_angle)
        psi = math.radians(variant.target_branch_angle)
        paths = {}
        for side in (LEFT, RIGHT):
            u1 = _unit(side * phi)
            bend = cross + layout.bend_distance * u1
            end = bend + (layout.branch_length - layout.bend_distance) * _unit(side * psi)
            paths[side] = [start, cross, bend, end]
        # outer walls: corridor side wall continuing into the branch's outer side
        left_outer = _offset_polyline(paths[LEFT], h)
        right_outer = _offset_polyline(paths[RIGHT], -h)
        walls += _segments(left_outer) + _segments(right_outer)
        # inner walls meet at the apex on the tunnel axis
        left_inner = _offset_polyline(paths[LEFT][1:], -h)
        right_inner = _offset_polyline(paths[RIGHT][1:], h)
        apex = np.array([L + h / math.sin(phi), 0.0])
        if not (left_inner[1][0] > apex[0] and right_inner[1][0] > apex[0]):
            raise ConfigError("bend_distance too short for the fork apex", field="bend_distance")
        walls.append(np.array([apex, left_inner[1]]))
        walls += _segments(left_inner[1:])
        walls.append(np.array([apex, right_inner[1]]))
        walls += _segments(right_inner[1:])
        # end caps and back wall
        walls.append(np.array([left_outer[-1], left_inner[-1]]))
        walls.append(np.array([right_outer[-1], right_inner[-1]]))
        walls.append(np.array([right_outer[0], left_outer[0]]))
        mouth_x = float(min(left_outer[1][0], right_outer[1][0]))
        for side in (LEFT, RIGHT):
            _, c, b, e = paths[side]
            for a0, a1 in ((c, b), (b, e)):
                u = (a1 - a0) / np.linalg.norm(a1 - a0)
                half_len = 0.5 * np.linalg.norm(a1 - a0)
                # extend legs by h so the cells cover the mitred bend corner
                cells.append(_rect(0.5 * (a0 + a1), u, half_len + (h if a0 is b else 0.0), h))
                cell_branch.append(side)
        if layout.target_distance <= layout.bend_distance:
            target = cross + layout.target_distance * _unit(branch * phi)
        else:
            bend = paths[branch][2]
            target = bend + (layout.target_distance - layout.bend_distance) * _unit(branch * psi)
        fork_deg = variant.fork_half_angle
        branch_len = layout.branch_length
    else:
        end = L + layout.straight_extension
        walls += [
            np.array([[0.0, -h], [end, -h]]),
            np.array([[0.0, h], [end, h]]),
            np.array([[0.0, h], [0.0, -h]]),
            np.array([[end, -h], [end, h]]),
        ]
        mouth_x = L
        target = np.array([L + layout.straight_target_offset, 0.0])
        cells.append(np.array([[L, -h], [end, -h], [end, h], [L, h]]))
        cell_branch.append(branch)
        fork_deg = 0.0
        branch_len = layout.straight_extension

    obstacles = []
    first = 1.0 if variant.obstacle_layout_id == 0 else -1.0
    jitter_rng = stream(seed, "obstacles")
    for i, x in enumerate(layout.obstacle_xs):
        y = first * (-1.0) ** i * layout.obstacle_offset
        if variant.name == "complex":
            dx, dy = jitter_rng.uniform(-1.0, 1.0, size=2) * layout.obstacle_jitter / math.sqrt(2.0)
            x, y = x + dx, y + dy
        obstacles.append([x, y, 0.5 * layout.obstacle_along, 0.5 * layout.obstacle_across, 0.0])
    obstacles_arr = np.array(obstacles, dtype=float).reshape(-1, 5)

    wall_arr = np.array(walls, dtype=float).reshape(-1, 2, 2)
    target = np.asarray(target, dtype=float)
    for arr in (wall_arr, obstacles_arr, target):
        arr.setflags(write=False)
    for c in cells:
        c.setflags(write=False)
    return WorldGeometry(
        wall_segments=wall_arr,
        obstacles=obstacles_arr,
        corridor_width=float(variant.corridor_width),
        corridor_length=float(L),
        fork_half_angle=float(fork_deg),
        branch_length=float(branch_len),
        x_cross=float(L),
        target_position=target,
        target_radius=float(layout.target_radius),
        d_cross=float(np.linalg.norm(target - cross)),
        wall_height=float(layout.wall_height),
        obstacle_height=float(layout.obstacle_height),
        target_branch=int(branch),
        mouth_x=mouth_x,
        branch_cells=tuple(cells),
        branch_of_cell=tuple(cell_branch),
        variant=variant.name,
    )


# ----------------------------------------------------------------------------
# raycasting


def raycast_arrays(
    origins: np.ndarray,
    dirs: np.ndarray,
    max_range: float,
    walls: np.ndarray,
    wall_height: float,
    obstacles: np.ndarray,
    obstacle_height: float,
    targets: np.ndarray,
    target_radius: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched exact raycast.

    ``origins``/``dirs`` are ``(N, K, 3)``; ``walls`` is ``(S, 2, 2)`` shared
    by every instance; ``obstacles`` is ``(N, B, 5)`` and ``targets``
    ``(N, 3)`` (sphere centres).  Returns ``(distance, kind)`` of shape
    ``(N, K)`` with misses reported as ``max_range`` / ``HIT_NONE``.
    """
    N, K, _ = origins.shape
    ox, oy, oz = origins[..., 0], origins[..., 1], origins[..., 2]
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    best = np.full((N, K), np.inf)
    kind = np.zeros((N, K), dtype=np.int8)

    with np.errstate(divide="ignore", invalid="ignore"):
        # walls: 2D ray/segment in the top view, then the height check
        if len(walls):
            ax = walls[:, 0, 0]
            ay = walls[:, 0, 1]
            ex = walls[:, 1, 0] - ax
            ey = walls[:, 1, 1] - ay
            denom = dx[..., None] * ey - dy[..., None] * ex
            rx = ax - ox[..., None]
            ry = ay - oy[..., None]
            t = (rx * ey - ry * ex) / denom
            s = (rx * dy[..., None] - ry * dx[..., None]) / denom
            z = oz[..., None] + t * dz[..., None]
            ok = (
                (np.abs(denom) > 1e-12)
                & (t >= 0.0)
                & (s >= 0.0)
                & (s <= 1.0)
                & (z >= -wall_height)
                & (z <= 0.0)
            )
            tw = np.where(ok, t, np.inf).min(axis=-1)
            upd = tw < best
            best = np.where(upd, tw, best)
            kind[upd] = HIT_WALL

        # obstacles: slab test in each box frame
        if obstacles.shape[1]:
            cx = obstacles[:, None, :, 0]
            cy = obstacles[:, None, :, 1]
            hx = obstacles[:, None, :, 2]
            hy = obstacles[:, None, :, 3]
            c = np.cos(obstacles[:, None, :, 4])
            sn = np.sin(obstacles[:, None, :, 4])
            px = ox[..., None] - cx
            py = oy[..., None] - cy
            lx = c * px + sn * py
            ly = -sn * px + c * py
            ldx = c * dx[..., None] + sn * dy[..., None]
            ldy = -sn * dx[..., None] + c * dy[..., None]
            lz = np.broadcast_to(oz[..., None], lx.shape)
            ldz = np.broadcast_to(dz[..., None], lx.shape)
            t_enter = np.zeros(lx.shape)
            t_exit = np.full(lx.shape, np.inf)
            for p, d, lo, hi in (
                (lx, ldx, -hx, hx),
                (ly, ldy, -hy, hy),
                (lz, ldz, -obstacle_height, 0.0),
            ):
                par = np.abs(d) < 1e-15
                t1 = (lo - p) / d
                t2 = (hi - p) / d
                tn = np.where(par, np.where((p >= lo) & (p <= hi), -np.inf, np.inf), np.minimum(t1, t2))
                tf = np.where(par, np.where((p >= lo) & (p <= hi), np.inf, -np.inf), np.maximum(t1, t2))
                t_enter = np.maximum(t_enter, tn)
                t_exit = np.minimum(t_exit, tf)
            hit = t_enter <= t_exit
            tb = np.where(hit, t_enter, np.inf).min(axis=-1)
            upd = tb < best
            best = np.where(upd, tb, best)
            kind[upd] = HIT_OBSTACLE

        # target sphere
        oc = origins - targets[:, None, :]
        b = np.einsum("nki,nki->nk", oc, dirs)
        cc = np.einsum("nki,nki->nk", oc, oc) - target_radius**2
        disc = b * b - cc
        root = np.sqrt(np.maximum(disc, 0.0))
        t_near = -b - root
        ts = np.where(cc <= 0.0, 0.0, np.where((disc >= 0.0) & (t_near >= 0.0), t_near, np.inf))
        upd = ts < best
        best = np.where(upd, ts, best)
        kind[upd] = HIT_TARGET

    miss = best > max_range
    best = np.where(miss, max_range, best)
    kind[miss] = HIT_NONE
    return best, kind


def _world_arrays(world: WorldGeometry):
    return (
        world.wall_segments,
        world.wall_height,
        world.obstacles[None],
        world.obstacle_height,
        world.target_center[None],
        world.target_radius,
    )


def raycast(
    world: WorldGeometry,
    origin: Sequence[float],
    direction: Sequence[float],
    max_range: float,
) -> RayHit:
    o = np.asarray(origin, dtype=float).reshape(3)
    d = np.asarray(direction, dtype=float).reshape(3)
    if not (np.all(np.isfinite(o)) and np.all(np.isfinite(d)) and math.isfinite(max_range)):
        raise NumericInputError("raycast origin, direction and range must be finite")
    if abs(float(np.linalg.norm(d)) - 1.0) > 1e-9:
        raise NumericInputError("raycast direction must be a unit vector")
    if max_range <= 0:
        raise NumericInputError("max_range must be positive")
    w, wh, obs, oh, tgt, tr = _world_arrays(world)
    dist, kind = raycast_arrays(o[None, None], d[None, None], max_range, w, wh, obs, oh, tgt, tr)
    distance = float(dist[0, 0])
    return RayHit(distance, HIT_KINDS[int(kind[0, 0])], min(distance, max_range) / max_range)


# ----------------------------------------------------------------------------
# collision


def clearance_arrays(
    centers: np.ndarray,
    walls: np.ndarray,
    wall_height: float,
    obstacles: np.ndarray,
    obstacle_height: float,
) -> np.ndarray:
    """Euclidean distance from each ``(N, 3)`` centre to the nearest wall or box."""
    px, py, pz = centers[:, 0], centers[:, 1], centers[:, 2]
    best = np.full(len(centers), np.inf)
    if len(walls):
        a = walls[:, 0]
        e = walls[:, 1] - a
        rx = px[:, None] - a[:, 0]
        ry = py[:, None] - a[:, 1]
        ee = np.einsum("si,si->s", e, e)
        s = np.clip((rx * e[:, 0] + ry * e[:, 1]) / ee, 0.0, 1.0)
        qx = rx - s * e[:, 0]
        qy = ry - s * e[:, 1]
        dz = np.maximum.reduce([np.zeros_like(pz), pz, -wall_height - pz])[:, None]
        best = np.minimum(best, np.sqrt(qx * qx + qy * qy + dz * dz).min(axis=1))
    if obstacles.shape[-2]:
        obs = obstacles if obstacles.ndim == 3 else np.broadcast_to(obstacles, (len(centers),) + obstacles.shape)
        c = np.cos(obs[..., 4])
        sn = np.sin(obs[..., 4])
        rx = px[:, None] - obs[..., 0]
        ry = py[:, None] - obs[..., 1]
        lx = np.abs(c * rx + sn * ry) - obs[..., 2]
        ly = np.abs(-sn * rx + c * ry) - obs[..., 3]
        lz = np.abs(pz[:, None] + 0.5 * obstacle_height) - 0.5 * obstacle_height
        q = np.sqrt(
            np.maximum(lx, 0.0) ** 2 + np.maximum(ly, 0.0) ** 2 + np.maximum(lz, 0.0) ** 2
        )
        best = np.minimum(best, q.min(axis=1))
    return best


def clearance(world: WorldGeometry, center: Sequence[float]) -> float:
    c = np.asarray(center, dtype=float).reshape(1, 3)
    return float(
        clearance_arrays(c, world.wall_segments, world.wall_height, world.obstacles, world.obstacle_height)[0]
    )


def check_collision(world: WorldGeometry, center: Sequence[float], body_radius: float) -> bool:
    c = np.asarray(center, dtype=float).reshape(3)
    if not (np.all(np.isfinite(c)) and math.isfinite(body_radius)):
        raise NumericInputError("collision query must be finite")
    if body_radius <= 0:
        raise NumericInputError("body_radius must be positive")
    return clearance(world, c) <= body_radius


# ----------------------------------------------------------------------------
# text export


def _fmt(v: float) -> str:
    return repr(float(v))


def geometry_to_text(world: WorldGeometry) -> str:
    lines = [f"airground-geometry {GEOMETRY_FORMAT_VERSION}"]
    meta = (
        ("variant", world.variant),
        ("corridor_width", _fmt(world.corridor_width)),
        ("corridor_length", _fmt(world.corridor_length)),
        ("fork_half_angle", _fmt(world.fork_half_angle)),
        ("branch_length", _fmt(world.branch_length)),
        ("x_cross", _fmt(world.x_cross)),
        ("d_cross", _fmt(world.d_cross)),
        ("mouth_x", _fmt(world.mouth_x)),
        ("wall_height", _fmt(world.wall_height)),
        ("obstacle_height", _fmt(world.obstacle_height)),
        ("target_branch", str(world.target_branch)),
    )
    for key, value in meta:
        lines.append(f"meta {key} {value}")
    for seg in world.wall_segments:
        lines.append("wall " + " ".join(_fmt(v) for v in seg.ravel()))
    for ob in world.obstacles:
        lines.append("obstacle " + " ".join(_fmt(v) for v in ob))
    tx, ty = world.target_position
    lines.append(f"target {_fmt(tx)} {_fmt(ty)} {_fmt(world.target_radius)}")
    for quad, b in zip(world.branch_cells, world.branch_of_cell):
        lines.append(f"cell {b} " + " ".join(_fmt(v) for v in quad.ravel()))
    return "\n".join(lines) + "\n"


def geometry_from_text(text: str) -> WorldGeometry:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split()[:1] != ["airground-geometry"]:
        raise ValueError("not an airground geometry file")
    version = int(lines[0].split()[1])
    if version != GEOMETRY_FORMAT_VERSION:
        raise ValueError(f"unsupported geometry version {version}")
    meta: dict[str, str] = {}
    walls, obstacles, cells, cell_b = [], [], [], []
    target = None
    for ln in lines[1:]:
        kind, *rest = ln.split()
        if kind == "meta":
            meta[rest[0]] = rest[1]
        elif kind == "wall":
            walls.append([float(v) for v in rest])
        elif kind == "obstacle":
            obstacles.append([float(v) for v in rest])
        elif kind == "target":
            target = [float(v) for v in rest]
        elif kind == "cell":
            cell_b.append(int(rest[0]))
            cells.append(np.array([float(v) for v in rest[1:]]).reshape(4, 2))
        else:
            raise ValueError(f"unknown primitive {kind!r}")
    if target is None:
        raise ValueError("geometry file has no target line")
    return WorldGeometry(
        wall_segments=np.array(walls, dtype=float).reshape(-1, 2, 2),
        obstacles=np.array(obstacles, dtype=float).reshape(-1, 5),
        corridor_width=float(meta["corridor_width"]),
        corridor_length=float(meta["corridor_length"]),
        fork_half_angle=float(meta["fork_half_angle"]),
        branch_length=float(meta["branch_length"]),
        x_cross=float(meta["x_cross"]),
        target_position=np.array(target[:2]),
        target_radius=target[2],
        d_cross=float(meta["d_cross"]),
        wall_height=float(meta["wall_height"]),
        obstacle_height=float(meta["obstacle_height"]),
        target_branch=int(meta["target_branch"]),
        mouth_x=float(meta["mouth_x"]),
        branch_cells=tuple(cells),
        branch_of_cell=tuple(cell_b),
        variant=meta["variant"],
    )


def with_target(world: WorldGeometry, branch: int, layout: Layout | None = None) -> WorldGeometry:
    """Same tunnel, target moved to the mirror branch position."""
    if branch == world.target_branch:
        return world
    t = np.array([world.target_position[0], -world.target_position[1]])
    t.setflags(write=False)
    return replace(world, target_position=t, target_branch=branch)


def corridor_points(world: WorldGeometry, n: int, rng: np.random.Generator, margin: float = 0.05) -> np.ndarray:
    """Uniform samples of the straight-corridor region (2D)."""
    x = rng.uniform(margin, world.mouth_x - margin, size=n)
    y = rng.uniform(-world.half_width + margin, world.half_width - margin, size=n)
    return np.stack([x, y], axis=1)


def iter_primitives(world: WorldGeometry) -> Iterable[tuple[str, np.ndarray]]:
    for seg in world.wall_segments:
        yield "wall", seg
    for ob in world.obstacles:
        yield "obstacle", ob
