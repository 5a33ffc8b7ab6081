"""Per-tick reward shaping and the staged coefficient schedule.

Rewards are logged by the harness for analysis; they do not drive the
scripted controller. The grasp bonus is never scaled by stage coefficients;
every other term is base weight times its stage multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "RewardWeights",
    "StageCoefficients",
    "TickEvents",
    "STAGE_THRESHOLDS",
    "stage_table",
    "compute_reward",
    "curriculum_advance",
]

STAGE_THRESHOLDS = (40.0, 60.0, 80.0, 100.0, 130.0)


@dataclass(frozen=True)
class RewardWeights:
    """Base weights; negative values are penalties."""

    grasp: float = 180.0
    dist: float = -1.0
    dist_over: float = -0.25
    align: float = -0.015
    collision: float = -1.5
    view: float = -1.5
    gripper: float = -0.3
    move: float = -0.005
    dist_over_threshold: float = 0.25  # m


@dataclass(frozen=True)
class StageCoefficients:
    stage: int
    lam_dist: float = 1.0
    lam_dist_over: float = 1.0
    lam_align: float = 1.0
    lam_collision: float = 1.0
    lam_view: float = 1.0
    lam_gripper: float = 1.0
    lam_move: float = 1.0
    strict_view_reset: bool = False
    max_object_speed: float = 0.03   # m/s
    control_period: float = 0.05     # s


def stage_table() -> tuple:
    """The six training stages in order."""
    return (
        StageCoefficients(stage=0),
        StageCoefficients(
            stage=1, lam_dist=2.0, lam_dist_over=6.0, lam_align=2.0,
            lam_collision=10.0, lam_view=10.0, strict_view_reset=True,
        ),
        StageCoefficients(
            stage=2, lam_dist=2.0, lam_dist_over=6.0, lam_align=2.0,
            lam_collision=10.0, lam_view=10.0, strict_view_reset=True,
            max_object_speed=0.125,
        ),
        StageCoefficients(
            stage=3, lam_dist=2.0, lam_dist_over=6.0, lam_align=4.0,
            lam_collision=10.0, lam_view=60.0, strict_view_reset=True,
            max_object_speed=0.125,
        ),
        StageCoefficients(
            stage=4, lam_dist=2.0, lam_dist_over=6.0, lam_align=4.0,
            lam_collision=10.0, lam_view=60.0, strict_view_reset=True,
            max_object_speed=0.125, control_period=0.025,
        ),
        StageCoefficients(
            stage=5, lam_dist=2.0, lam_dist_over=6.0, lam_align=8.0,
            lam_collision=80.0, lam_view=80.0, strict_view_reset=True,
            max_object_speed=0.125, control_period=0.025,
        ),
    )


@dataclass(frozen=True)
class TickEvents:
    """Everything the reward needs to know about one control tick."""

    grasped: bool = False
    collided: bool = False
    out_of_view: bool = False
    over_distance: bool = False
    premature_close: bool = False
    keypoint_distance: float = 0.0   # m, mean over the three keypoints
    alignment_error: float = 0.0     # rad
    action_magnitude: float = 0.0    # unitless, cap-normalized twist norm

    def __post_init__(self):
        if self.grasped and self.collided:
            raise ValueError("grasped and collided are mutually exclusive")


def compute_reward(events: TickEvents, coeffs: StageCoefficients, weights: RewardWeights = RewardWeights()) -> float:
    """One tick of shaped reward under a stage's coefficients."""
    r = 0.0
    if events.grasped:
        r += weights.grasp  # never stage-scaled
    r += coeffs.lam_dist * weights.dist * events.keypoint_distance
    if events.over_distance:
        r += coeffs.lam_dist_over * weights.dist_over
    r += coeffs.lam_align * weights.align * events.alignment_error
    if events.collided:
        r += coeffs.lam_collision * weights.collision
    if events.out_of_view:
        r += coeffs.lam_view * weights.view
    if events.premature_close:
        r += coeffs.lam_gripper * weights.gripper
    r += coeffs.lam_move * weights.move * events.action_magnitude
    return r


def curriculum_advance(mean_reward: float, current_stage: int, thresholds=STAGE_THRESHOLDS) -> int:
    """Advance at most one stage when the running mean crosses the threshold.

    The final stage is absorbing.
    """
    if current_stage >= len(thresholds):
        return current_stage
    if mean_reward >= thresholds[current_stage]:
        return current_stage + 1
    return current_stage
