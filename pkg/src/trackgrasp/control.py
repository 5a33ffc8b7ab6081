"""Scripted pursuit controller standing in for a learned policy.

Observations are three gripper keypoints (palm and both fingertips), their
errors to the matching keypoints on the grasp target, and the target's
per-tick displacement. Commands are gripper-frame twists produced by a
proportional law with optional velocity feedforward, phased as standoff,
approach, then closure.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import Pose, Twist, quat_conjugate, quat_multiply, quat_rotate, quat_to_axis_angle
from .grasping import grasp_trigger
from .world import GripperCommand

__all__ = [
    "ControlGains",
    "PursuitPhase",
    "Observation",
    "KEYPOINT_OFFSETS",
    "keypoints",
    "build_observation",
    "pursue",
    "recovery_pursue",
]

# palm, left fingertip, right fingertip in the gripper frame: fingertips sit
# at half the nominal opening along the closing axis and 8 cm along approach
KEYPOINT_OFFSETS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.0425, 0.0, 0.08],
        [-0.0425, 0.0, 0.08],
    ]
)


class PursuitPhase(Enum):
    STANDOFF = "standoff"
    APPROACH = "approach"
    CLOSE = "close"


@dataclass(frozen=True)
class ControlGains:
    k_p: float = 2.0            # 1/s proportional position gain
    k_r: float = 2.0            # 1/s orientation gain
    k_ff: float = 1.0           # target-velocity feedforward weight
    max_linear: float = 0.20    # m/s
    max_angular: float = 1.5    # rad/s
    standoff_dist: float = 0.06  # m held along -approach before descending
    approach_speed: float = 0.045  # m/s cap on the closing component while descending


@dataclass(frozen=True)
class Observation:
    """Policy-facing observation built from poses only."""

    keypoints: np.ndarray      # (3,3) gripper keypoints, world frame
    error: np.ndarray          # (3,3) gripper minus target keypoints
    object_delta: np.ndarray   # (3,3) target keypoint displacement since last tick
    gripper_open: bool


def keypoints(pose: Pose) -> np.ndarray:
    """World positions of the three reference keypoints for a pose."""
    out = np.empty((3, 3))
    for i, off in enumerate(KEYPOINT_OFFSETS):
        out[i] = pose.position + quat_rotate(pose.orientation, off)
    return out


def build_observation(target: Pose, gripper: Pose, prev_target: Pose, gripper_open: bool) -> Observation:
    p_g = keypoints(gripper)
    p_o = keypoints(target)
    return Observation(
        keypoints=p_g,
        error=p_g - p_o,
        object_delta=p_o - keypoints(prev_target),
        gripper_open=gripper_open,
    )


def _angular_command(gripper: Pose, target: Pose, k_r: float, cap: float):
    """Gripper-frame angular velocity steering gripper orientation to target."""
    q_err = quat_multiply(quat_conjugate(gripper.orientation), target.orientation)
    axis, angle = quat_to_axis_angle(q_err)
    w = axis * (k_r * angle)
    n = float(np.linalg.norm(w))
    if n > cap:
        w = w * (cap / n)
    return w


def pursue(
    obs: Observation,
    target: Pose,
    gripper: Pose,
    phase: PursuitPhase,
    gains: ControlGains = ControlGains(),
    target_velocity=None,
) -> GripperCommand:
    """Proportional pursuit of the grasp target.

    In the standoff phase the setpoint sits standoff_dist behind the grasp
    pose along its approach axis; in approach and closure it is the grasp pose
    itself with the closing speed component capped. `target_velocity` is added
    as feedforward so a moving target can be matched, not just chased.
    """
    approach_dir = quat_rotate(target.orientation, np.array([0.0, 0.0, 1.0]))
    if phase is PursuitPhase.STANDOFF:
        setpoint = target.position - gains.standoff_dist * approach_dir
    else:
        setpoint = target.position

    v_world = gains.k_p * (setpoint - gripper.position)
    if phase is not PursuitPhase.STANDOFF:
        closing = float(v_world @ approach_dir)
        if closing > gains.approach_speed:
            v_world = v_world + (gains.approach_speed - closing) * approach_dir
    if target_velocity is not None:
        v_world = v_world + gains.k_ff * np.asarray(target_velocity, dtype=float)
    n = float(np.linalg.norm(v_world))
    if n > gains.max_linear:
        v_world = v_world * (gains.max_linear / n)

    # command is expressed in the gripper frame
    qc = quat_conjugate(gripper.orientation)
    v_body = quat_rotate(qc, v_world)
    w_body = _angular_command(gripper, target, gains.k_r, gains.max_angular)
    return GripperCommand(
        twist=Twist(v_body, w_body),
        gripper_close=(phase is PursuitPhase.CLOSE) or grasp_trigger(gripper, target),
    )


def recovery_pursue(recovery_target: Pose, gripper: Pose, gains: ControlGains = ControlGains()) -> GripperCommand:
    """Fly toward a recovery viewpoint; the gripper never closes here."""
    v_world = gains.k_p * (recovery_target.position - gripper.position)
    n = float(np.linalg.norm(v_world))
    if n > gains.max_linear:
        v_world = v_world * (gains.max_linear / n)
    qc = quat_conjugate(gripper.orientation)
    return GripperCommand(
        twist=Twist(
            quat_rotate(qc, v_world),
            _angular_command(gripper, recovery_target, gains.k_r, gains.max_angular),
        ),
        gripper_close=False,
    )
