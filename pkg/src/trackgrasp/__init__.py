"""trackgrasp: pose-filtered visual tracking and grasping simulation.

A quaternion-state extended Kalman filter bridges gaps in a noisy 6-DoF
object tracker, drives grasp re-planning against the filtered estimate, and
flies recovery viewpoints when the tracker loses lock. The harness evaluates
the closed loop over seeded scenario suites and emits a fixed metrics schema.
"""

from .config import ConfigError, SimConfig, config_from_mapping, config_to_dict, load_config
from .control import ControlGains, Observation, PursuitPhase, build_observation, pursue, recovery_pursue
from .ekf import (
    FilterDivergence,
    FilterState,
    LossRefeedMode,
    NoiseConfig,
    PoseMeasurement,
    clamped_estimate,
    default_noise,
    ekf_init,
    ekf_predict,
    ekf_update,
    measurement_matrix,
    process_function,
    process_jacobian,
    state_pose,
    state_velocity,
)
from .geometry import Pose, Twist, geodesic_angle, pose_compose, pose_inverse, quat_normalize
from .grasping import (
    GraspPool,
    GraspTolerances,
    RetryPolicy,
    attempt_grasp,
    detect_grasp_failure,
    generate_grasp_pool,
    grasp_trigger,
    project_candidates,
    select_best_grasp,
)
from .harness import (
    EpisodeResult,
    MetricsRow,
    MetricsTable,
    Outcome,
    SCENARIO_NAMES,
    classify_outcome,
    emit_results,
    read_results,
    run_episode,
    run_scenario,
)
from .perception import (
    CameraModel,
    PerceptionConfig,
    RecoveryChoice,
    TrackerMode,
    TrackerState,
    recovery_candidates,
    recovery_viewpoint,
    tracking_step,
    visibility_test,
)
from .reward import RewardWeights, StageCoefficients, TickEvents, compute_reward, curriculum_advance, stage_table
from .world import (
    Box,
    GripperCommand,
    GripperLimits,
    MotionKind,
    MotionPattern,
    ObjectMotion,
    WorldState,
    Workspace,
    collision_check,
    gripper_step,
    object_step,
    sample_initial_object_pose,
    workspace,
)

__version__ = "0.1.0"
