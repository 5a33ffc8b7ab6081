"""Tabletop world: workspaces, object motion patterns, gripper kinematics.

Distances are meters, angles radians, time seconds. The gripper is a
free-flying end effector with velocity caps and a finger-width degree of
freedom; collision geometry is axis-aligned boxes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .geometry import (
    Pose,
    Twist,
    quat_from_axis_angle,
    quat_integrate,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_axis_angle,
)

__all__ = [
    "Box",
    "Workspace",
    "workspace",
    "WORKSPACE_NAMES",
    "MotionKind",
    "MotionPattern",
    "GripperLimits",
    "GripperCommand",
    "WorldState",
    "ObjectMotion",
    "sample_initial_object_pose",
    "object_step",
    "gripper_step",
    "collision_check",
    "boxes_overlap",
    "penetration_depth",
    "gripper_body_box",
]

# Base workspace: 0.40 m cube centered at (0.50, 0.00, 0.30). The extended
# workspace adds 0.15 m flanks on both sides along y.
_BASE_CENTER = np.array([0.50, 0.00, 0.30])
_BASE_HALF = np.array([0.20, 0.20, 0.20])
_FLANK_Y = 0.15

WORKSPACE_NAMES = ("base", "side_a", "side_b", "extended")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its two corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    def contains(self, p) -> bool:
        return bool(np.all(p >= self.lo) and np.all(p <= self.hi))

    @staticmethod
    def from_center(center, extent) -> "Box":
        c = np.asarray(center, dtype=float)
        h = 0.5 * np.asarray(extent, dtype=float)
        return Box(c - h, c + h)


@dataclass(frozen=True)
class Workspace:
    name: str
    bounds: Box


def workspace(name: str) -> Workspace:
    """Named object workspaces: base cube, its two y-flanks, and their union."""
    lo = _BASE_CENTER - _BASE_HALF
    hi = _BASE_CENTER + _BASE_HALF
    if name == "base":
        return Workspace(name, Box(lo, hi))
    if name == "side_a":
        return Workspace(name, Box([lo[0], lo[1] - _FLANK_Y, lo[2]], [hi[0], lo[1], hi[2]]))
    if name == "side_b":
        return Workspace(name, Box([lo[0], hi[1], lo[2]], [hi[0], hi[1] + _FLANK_Y, hi[2]]))
    if name == "extended":
        return Workspace(name, Box([lo[0], lo[1] - _FLANK_Y, lo[2]], [hi[0], hi[1] + _FLANK_Y, hi[2]]))
    raise ValueError(f"unknown workspace {name!r}")


class MotionKind(Enum):
    LINEAR_REGULAR = "linear_regular"
    LINEAR_FAST = "linear_fast"
    RANDOM = "random"
    DISRUPTIVE = "disruptive"


@dataclass(frozen=True)
class MotionPattern:
    """Static description of how the target object moves during an episode."""

    kind: MotionKind = MotionKind.LINEAR_REGULAR
    speed_range: tuple = (0.0, 0.05)       # m/s, linear kinds and disruptive base motion
    rot_step_max: float = math.radians(14.5)  # rad per event per axis, random kind
    rot_event_rate: float = 0.8            # rotation events per second, random kind
    max_random_speed: float = 0.05         # m/s cap, random kind
    persistence_tau: float = 0.5           # s, velocity persistence of the random kind
    disrupt_speed: float = 0.45            # m/s escape speed, >= 0.30 required
    disrupt_prob: float = 1.0              # chance the escape actually triggers
    trigger_window: tuple = (2.0, 6.0)     # s, escape trigger time is sampled here

    def __post_init__(self):
        if self.kind is MotionKind.DISRUPTIVE and self.disrupt_speed < 0.30:
            raise ValueError("disruptive escape speed must be at least 0.30 m/s")


@dataclass(frozen=True)
class GripperLimits:
    max_linear_speed: float = 0.20    # m/s
    max_angular_speed: float = 1.5    # rad/s
    width_min: float = 0.0
    width_max: float = 0.085          # m
    width_slew: float = 0.2           # m/s
    body_extent: tuple = (0.10, 0.10, 0.12)


@dataclass(frozen=True)
class GripperCommand:
    """End-effector twist expressed in the gripper frame, plus the finger action."""

    twist: Twist
    gripper_close: bool = False


@dataclass(frozen=True)
class WorldState:
    object_pose: Pose
    object_twist: Twist
    gripper_pose: Pose
    gripper_width: float
    obstacles: tuple = ()
    time: float = 0.0


def sample_initial_object_pose(ws: Workspace, rng, yaw_range=(-math.pi, math.pi), tilt_max=0.0) -> Pose:
    """Place the object on a uniformly chosen boundary face with a random yaw."""
    lo, hi = ws.bounds.lo, ws.bounds.hi
    pos = lo + rng.random(3) * (hi - lo)
    axis = int(rng.integers(0, 3))
    pos[axis] = hi[axis] if rng.random() < 0.5 else lo[axis]
    yaw = rng.uniform(yaw_range[0], yaw_range[1])
    q = quat_from_axis_angle((0.0, 0.0, 1.0), yaw)
    if tilt_max > 0.0:
        q = quat_multiply(q, quat_from_axis_angle((1.0, 0.0, 0.0), rng.uniform(-tilt_max, tilt_max)))
        q = quat_multiply(q, quat_from_axis_angle((0.0, 1.0, 0.0), rng.uniform(-tilt_max, tilt_max)))
    return Pose(pos, quat_normalize(q))


def _reflect(pos, vel, lo, hi):
    """Specular reflection of a point trajectory at the box faces."""
    pos = pos.copy()
    vel = vel.copy()
    for i in range(3):
        for _ in range(4):
            if pos[i] < lo[i]:
                pos[i] = 2.0 * lo[i] - pos[i]
                vel[i] = -vel[i]
            elif pos[i] > hi[i]:
                pos[i] = 2.0 * hi[i] - pos[i]
                vel[i] = -vel[i]
            else:
                break
    return pos, vel


class ObjectMotion:
    """Per-episode motion generator.

    Samples episode-level parameters (velocity, escape trigger) from the rng at
    construction and advances the object one tick at a time. Disruptive motion
    runs regular linear motion until the trigger, then escapes at disrupt_speed
    until it has both covered the minimum escape room and left the camera's
    view, and halts permanently there (or at the workspace wall, whichever
    comes first).
    """

    _MIN_RANDOM_SPEED = 0.005
    _ESCAPE_MIN_ROOM = 0.35

    def __init__(self, pattern: MotionPattern, ws: Workspace, rng):
        self.pattern = pattern
        self.workspace = ws
        kind = pattern.kind
        if kind in (MotionKind.LINEAR_REGULAR, MotionKind.LINEAR_FAST, MotionKind.DISRUPTIVE):
            direction = _uniform_unit(rng)
            speed = rng.uniform(*pattern.speed_range)
            self.velocity = direction * speed
        else:
            self.velocity = rng.normal(0.0, 0.01, 3)
        self.phase = "base"
        self.trigger_time = None
        self.escape_traveled = 0.0
        if kind is MotionKind.DISRUPTIVE and rng.random() < pattern.disrupt_prob:
            self.trigger_time = rng.uniform(*pattern.trigger_window)

    def step(self, state: WorldState, dt: float, rng, visible: bool = True) -> WorldState:
        pat = self.pattern
        lo, hi = self.workspace.bounds.lo, self.workspace.bounds.hi
        pose = state.object_pose
        q = pose.orientation
        ang = np.zeros(3)

        if pat.kind is MotionKind.RANDOM:
            v = self.velocity
            v = v - (v / pat.persistence_tau) * dt + rng.normal(0.0, 0.05, 3) * math.sqrt(dt)
            speed = float(np.linalg.norm(v))
            if speed > pat.max_random_speed:
                v = v * (pat.max_random_speed / speed)
            elif speed < self._MIN_RANDOM_SPEED:
                v = _uniform_unit(rng) * self._MIN_RANDOM_SPEED if speed == 0.0 else v * (self._MIN_RANDOM_SPEED / speed)
            self.velocity = v
            # rotation arrives as discrete events, not a continuous tumble
            if rng.random() < pat.rot_event_rate * dt:
                steps = rng.uniform(-pat.rot_step_max, pat.rot_step_max, 3)
                dq = quat_multiply(
                    quat_from_axis_angle((0.0, 0.0, 1.0), steps[2]),
                    quat_multiply(
                        quat_from_axis_angle((0.0, 1.0, 0.0), steps[1]),
                        quat_from_axis_angle((1.0, 0.0, 0.0), steps[0]),
                    ),
                )
                q = quat_normalize(quat_multiply(dq, q))
                axis, angle = quat_to_axis_angle(dq)
                ang = axis * (angle / dt)
        elif pat.kind is MotionKind.DISRUPTIVE:
            if self.phase == "base" and self.trigger_time is not None and state.time >= self.trigger_time:
                self.phase = "escape"
                self.velocity = self._escape_velocity(pose.position, rng)
                self.escape_traveled = 0.0
            elif (
                self.phase == "escape"
                and not visible
                and self.escape_traveled >= self._ESCAPE_MIN_ROOM
            ):
                # out of view with the minimum distance covered: come to rest
                self.phase = "stopped"
                self.velocity = np.zeros(3)

        if self.phase == "escape":
            # escape runs straight and clamps at the wall instead of reflecting
            pos = pose.position + self.velocity * dt
            clamped = np.clip(pos, lo, hi)
            if not np.array_equal(clamped, pos):
                pos = clamped
                self.phase = "stopped"
                self.velocity = np.zeros(3)
            else:
                self.escape_traveled += float(np.linalg.norm(self.velocity)) * dt
            vel = self.velocity
        elif self.phase == "stopped":
            pos, vel = pose.position, np.zeros(3)
        else:
            pos, vel = _reflect(pose.position + self.velocity * dt, self.velocity, lo, hi)
            self.velocity = vel

        return replace(
            state,
            object_pose=Pose(pos, q),
            object_twist=Twist(vel.copy(), ang),
            time=state.time + dt,
        )

    def _escape_velocity(self, position, rng):
        """Horizontal escape direction with enough room to travel before the wall."""
        lo, hi = self.workspace.bounds.lo, self.workspace.bounds.hi
        best, best_room = None, -1.0
        for _ in range(32):
            theta = rng.uniform(-math.pi, math.pi)
            d = np.array([math.cos(theta), math.sin(theta), 0.0])
            room = _free_room(position, d, lo, hi)
            if room > best_room:
                best, best_room = d, room
            if room >= self._ESCAPE_MIN_ROOM:
                break
        return best * self.pattern.disrupt_speed


def _free_room(position, direction, lo, hi):
    """Distance from position to the box boundary along direction."""
    t = math.inf
    for i in range(3):
        d = direction[i]
        if d > 1e-12:
            t = min(t, (hi[i] - position[i]) / d)
        elif d < -1e-12:
            t = min(t, (lo[i] - position[i]) / d)
    return max(t, 0.0)


def _uniform_unit(rng):
    v = rng.normal(0.0, 1.0, 3)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.normal(0.0, 1.0, 3)
        n = np.linalg.norm(v)
    return v / n


def object_step(state: WorldState, motion: ObjectMotion, dt: float, rng, visible: bool = True) -> WorldState:
    """Advance the target object one tick; see ObjectMotion."""
    return motion.step(state, dt, rng, visible)


def gripper_step(
    state: WorldState,
    cmd: GripperCommand,
    dt: float,
    limits: GripperLimits = GripperLimits(),
    width_floor: float | None = None,
) -> WorldState:
    """Integrate the commanded gripper twist one tick.

    The twist is expressed in the gripper frame; linear and angular speeds are
    clamped to the limits before integration. The finger width slews toward
    closed or open at the fixed rate; `width_floor` models an object held
    between the fingers.
    """
    v = np.asarray(cmd.twist.linear, dtype=float)
    w = np.asarray(cmd.twist.angular, dtype=float)
    vn = float(np.linalg.norm(v))
    if vn > limits.max_linear_speed:
        v = v * (limits.max_linear_speed / vn)
    wn = float(np.linalg.norm(w))
    if wn > limits.max_angular_speed:
        w = w * (limits.max_angular_speed / wn)

    g = state.gripper_pose
    pos = g.position + quat_rotate(g.orientation, v) * dt
    q = quat_integrate(g.orientation, w, dt)

    lo_w = limits.width_min if width_floor is None else max(limits.width_min, width_floor)
    if cmd.gripper_close:
        width = max(lo_w, state.gripper_width - limits.width_slew * dt)
    else:
        width = min(limits.width_max, state.gripper_width + limits.width_slew * dt)
    return replace(state, gripper_pose=Pose(pos, q), gripper_width=width)


def boxes_overlap(a: Box, b: Box) -> bool:
    """Strict overlap; faces exactly touching do not count."""
    return bool(np.all(a.lo < b.hi) and np.all(b.lo < a.hi))


def penetration_depth(a: Box, b: Box) -> float:
    """Smallest-axis overlap extent, 0.0 when the boxes do not overlap."""
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    ext = hi - lo
    if np.any(ext <= 0.0):
        return 0.0
    return float(np.min(ext))


def gripper_body_box(gripper_pose: Pose, limits: GripperLimits = GripperLimits()) -> Box:
    """World AABB of the gripper body, sitting behind the palm along -approach."""
    ext = np.asarray(limits.body_extent, dtype=float)
    approach = quat_rotate(gripper_pose.orientation, np.array([0.0, 0.0, 1.0]))
    center = gripper_pose.position - approach * (0.5 * ext[2])
    return Box.from_center(center, ext)


def collision_check(
    state: WorldState,
    limits: GripperLimits = GripperLimits(),
    object_extent=(0.05, 0.05, 0.10),
    in_grasp: bool = False,
    penetration_tol: float = 0.005,
) -> bool:
    """True when the gripper body hits an obstacle or rams the object.

    Obstacle contact uses strict box overlap. Object contact only counts as a
    collision when penetration exceeds the tolerance while the gripper is not
    in a grasp-trigger state.
    """
    body = gripper_body_box(state.gripper_pose, limits)
    for obs in state.obstacles:
        if boxes_overlap(body, obs):
            return True
    if not in_grasp:
        obj_box = Box.from_center(state.object_pose.position, object_extent)
        if penetration_depth(body, obj_box) > penetration_tol:
            return True
    return False
