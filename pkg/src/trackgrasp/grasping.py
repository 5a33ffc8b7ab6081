"""Grasp candidate generation, per-tick selection, and attempt mechanics.

A grasp pose is the gripper pose at finger closure: +z is the approach axis
pointing into the object, +x the closing axis. Candidates are generated once
in the object frame (so they ride along rigidly with the object) and projected
through the current object pose estimate every tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Pose,
    geodesic_angle,
    pose_compose,
    pose_inverse,
    quat_rotate,
)
from .geometry import _quat_from_matrix

__all__ = [
    "GraspPool",
    "GraspTolerances",
    "RetryPolicy",
    "AttemptResult",
    "generate_grasp_pool",
    "compute_obj_grasp_transform",
    "project_candidates",
    "select_best_grasp",
    "grasp_trigger",
    "attempt_grasp",
    "detect_grasp_failure",
]

FINGER_DEPTH = 0.04  # m between palm and fingertip contact at closure


@dataclass(frozen=True)
class GraspPool:
    """World-frame candidates at generation time, scores sorted descending."""

    candidates: tuple
    scores: tuple


@dataclass(frozen=True)
class GraspTolerances:
    """True-pose error bounds for a closure to hold the object."""

    delta_pos: float = 0.015
    delta_ang: float = math.radians(15.0)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    backoff_dist: float = 0.05          # m retreat along -approach after a failure
    stabilization_ticks: int = 6        # ticks between closure and lift
    slip_prob: float = 0.0


@dataclass(frozen=True)
class AttemptResult:
    success: bool
    within_tolerance: bool
    slipped: bool


def _local_candidates(object_extent, k: int):
    """Candidate poses in the object frame: one top-down, k-1 side approaches."""
    ex, ey, ez = object_extent[0], object_extent[1], object_extent[2]
    out = []
    # top-down: approach straight down, palm above the top face
    q_top = np.array([1.0, 0.0, 0.0, 0.0])  # 180 deg about x
    out.append(Pose(np.array([0.0, 0.0, 0.5 * ez + FINGER_DEPTH]), q_top))
    for i in range(k - 1):
        theta = 2.0 * math.pi * i / (k - 1)
        c, s = math.cos(theta), math.sin(theta)
        half = min(
            0.5 * ex / abs(c) if abs(c) > 1e-9 else math.inf,
            0.5 * ey / abs(s) if abs(s) > 1e-9 else math.inf,
        )
        pos = np.array([c, s, 0.0]) * (half + FINGER_DEPTH)
        # columns: closing axis, palm normal, approach (toward the center)
        m = np.array(
            [
                [-s, 0.0, -c],
                [c, 0.0, -s],
                [0.0, -1.0, 0.0],
            ]
        )
        out.append(Pose(pos, _quat_from_matrix(m)))
    return out


def _approach_score(candidate_local: Pose) -> float:
    """Higher for approaches closer to vertical; top-down scores 1.0."""
    approach = quat_rotate(candidate_local.orientation, np.array([0.0, 0.0, 1.0]))
    deviation = math.acos(max(-1.0, min(1.0, -approach[2])))
    return 0.5 + 0.5 * math.cos(deviation)


def generate_grasp_pool(object_pose: Pose, object_extent, k: int = 5) -> GraspPool:
    """k world-frame candidates on the object at its current pose."""
    if k < 1:
        raise ValueError("need at least one grasp candidate")
    local = _local_candidates(object_extent, k)
    scored = sorted(
        ((_approach_score(lc), lc) for lc in local),
        key=lambda t: -t[0],
    )
    return GraspPool(
        candidates=tuple(pose_compose(object_pose, lc) for _, lc in scored),
        scores=tuple(s for s, _ in scored),
    )


def compute_obj_grasp_transform(object_pose: Pose, selected: Pose) -> Pose:
    """Object-frame offset of a world-frame grasp pose."""
    return pose_compose(pose_inverse(object_pose), selected)


def project_candidates(offsets, object_pose_estimate: Pose):
    """Re-project object-frame candidate offsets through a pose estimate."""
    return [pose_compose(object_pose_estimate, off) for off in offsets]


def select_best_grasp(
    gripper_pose: Pose,
    candidates,
    scores,
    w_pos: float = 1.0,
    w_rot: float = 0.3,
    w_score: float = 0.05,
) -> int:
    """Index of the cheapest candidate to reach; ties go to the lowest index."""
    best_i = 0
    best_cost = math.inf
    for i, (cand, score) in enumerate(zip(candidates, scores)):
        d = cand.position - gripper_pose.position
        cost = (
            w_pos * math.sqrt(float(d @ d))
            + w_rot * geodesic_angle(gripper_pose.orientation, cand.orientation)
            - w_score * score
        )
        if cost < best_cost:
            best_i, best_cost = i, cost
    return best_i


def grasp_trigger(
    gripper_pose: Pose,
    grasp_pose: Pose,
    eps_pos: float = 0.01,
    eps_ang: float = math.radians(10.0),
) -> bool:
    """True when the gripper is close enough to start closing. Strict bounds."""
    d = gripper_pose.position - grasp_pose.position
    if math.sqrt(float(d @ d)) >= eps_pos:
        return False
    return geodesic_angle(gripper_pose.orientation, grasp_pose.orientation) < eps_ang


def attempt_grasp(world, true_grasp_pose: Pose, tol: GraspTolerances, slip_prob: float, rng) -> AttemptResult:
    """Resolve a closure against the true object pose.

    The closure physically holds only when the gripper sits within the
    tolerances of the true grasp pose; a held object may still slip with
    probability slip_prob.
    """
    d = world.gripper_pose.position - true_grasp_pose.position
    within = (
        math.sqrt(float(d @ d)) <= tol.delta_pos
        and geodesic_angle(world.gripper_pose.orientation, true_grasp_pose.orientation) <= tol.delta_ang
    )
    slipped = bool(within and rng.random() < slip_prob)
    return AttemptResult(success=within and not slipped, within_tolerance=within, slipped=slipped)


def detect_grasp_failure(gripper_width: float, closed_threshold: float = 0.01) -> bool:
    """Closed on nothing: the fingers went below the empty-closure width."""
    return gripper_width < closed_threshold
