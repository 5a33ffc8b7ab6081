"""Wrist-camera sensing, pose-tracker lock model, and view recovery.

The tracker emits a noisy camera-frame pose while the object stays visible and
its inter-frame motion is small; otherwise it drops to Lost. After loss, a
re-registration step returns the pose once the object is visible again for a
short latency. While the filter is coasting, `recovery_viewpoint` picks the
camera placement that sees the most of the current position uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .ekf import (
    FilterState,
    LossRefeedMode,
    NoiseConfig,
    PoseMeasurement,
    clamped_estimate,
    ekf_predict,
    ekf_update,
    refeed_scale,
    state_pose,
)
from .geometry import (
    Pose,
    geodesic_angle,
    look_at_quat,
    pose_compose,
    pose_inverse,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    quat_rotate,
)

__all__ = [
    "CameraModel",
    "PerceptionConfig",
    "TrackerMode",
    "TrackerState",
    "SensorFrame",
    "RecoveryChoice",
    "camera_world_pose",
    "visibility_test",
    "sense",
    "initial_registration",
    "reregister",
    "tracking_step",
    "recovery_candidates",
    "recovery_viewpoint",
]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole-style frustum camera rigidly mounted on the gripper.

    The optical axis is camera +z; `mount_offset` maps gripper frame to
    camera frame.
    """

    mount_offset: Pose = field(
        default_factory=lambda: Pose(np.array([0.0, 0.0, -0.06]), np.array([0.0, 0.0, 0.0, 1.0]))
    )
    hfov: float = math.radians(70.0)
    vfov: float = math.radians(55.0)
    min_range: float = 0.10
    max_range: float = 1.50


@dataclass(frozen=True)
class PerceptionConfig:
    sigma_pos: float = 0.005            # m, tracking noise
    sigma_rot: float = math.radians(1.0)
    lock_trans: float = 0.02            # m per tick before lock breaks
    lock_rot: float = math.radians(5.0)
    rereg_latency: int = 2              # ticks of visibility before re-registration lands
    rereg_sigma_pos: float = 0.008
    rereg_sigma_rot: float = math.radians(3.0)
    estimate_v_clamp: float = 0.03      # m/s cap on the emitted estimate during loss
    estimate_omega_clamp: float = 0.5   # rad/s
    # maneuver adaptation: a single-frame position innovation above the gate
    # is remembered as maneuver evidence, and if the target then drops out of
    # view within a couple of ticks the velocity covariance is boosted along
    # that innovation direction (scaled by apparent speed). A jump followed
    # by disappearance is the escape signature; the same jump during steady
    # tracking is chase lag and must not perturb the filter.
    maneuver_gate: float = 0.018        # m
    maneuver_weight: float = 1.0
    maneuver_memory: float = 0.13       # s, evidence age limit at loss
    # cap on how far the mean may coast from the last real measurement while
    # unobserved; a fleeing target halts within this radius, so coasting
    # further is always extrapolation error, never information
    loss_coast_leash: float = 0.50      # m


class TrackerMode(Enum):
    LOCKED = "locked"
    LOST = "lost"
    REACQUIRING = "reacquiring"


@dataclass(frozen=True)
class TrackerState:
    mode: TrackerMode
    last_tracked_pose: Pose | None = None        # camera frame
    last_world_measurement: PoseMeasurement | None = None
    loss_tick: int | None = None
    consecutive_loss: int = 0
    reacquire_started: int | None = None
    use_reregistration: bool = False
    last_estimate: Pose | None = None            # world frame, as emitted
    # (direction, apparent speed, timestamp) of the last above-gate jump
    maneuver_evidence: tuple | None = None


@dataclass(frozen=True)
class SensorFrame:
    visible: bool
    measurement: PoseMeasurement | None  # pose in the camera frame
    tick: int
    source: str = "track"


@dataclass(frozen=True)
class RecoveryChoice:
    pose: Pose      # gripper pose to fly to
    score: float    # fraction of uncertainty samples its camera would see
    index: int


def camera_world_pose(gripper_pose: Pose, camera: CameraModel) -> Pose:
    return pose_compose(gripper_pose, camera.mount_offset)


def visibility_test(camera_pose: Pose, point, obstacles=(), camera: CameraModel = CameraModel()) -> bool:
    """Frustum and occlusion test for a world point."""
    rel = np.asarray(point, dtype=float) - camera_pose.position
    q = camera_pose.orientation
    # rotate rel into the camera frame with the conjugate
    pc = quat_rotate((-q[0], -q[1], -q[2], q[3]), rel)
    z = pc[2]
    if z <= 0.0:
        return False
    rng_ = math.sqrt(float(pc @ pc))
    if rng_ < camera.min_range or rng_ > camera.max_range:
        return False
    if abs(math.atan2(pc[0], z)) > 0.5 * camera.hfov:
        return False
    if abs(math.atan2(pc[1], z)) > 0.5 * camera.vfov:
        return False
    for box in obstacles:
        if _segment_hits_box(camera_pose.position, np.asarray(point, dtype=float), box):
            return False
    return True


def _segment_hits_box(a, b, box) -> bool:
    """Slab test for the open segment between a and b against an AABB."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for i in range(3):
        if abs(d[i]) < 1e-12:
            if a[i] <= box.lo[i] or a[i] >= box.hi[i]:
                return False
        else:
            ta = (box.lo[i] - a[i]) / d[i]
            tb = (box.hi[i] - a[i]) / d[i]
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                return False
    return t1 > 0.0 and t0 < 1.0


def _noisy_pose(pose: Pose, sigma_pos: float, sigma_rot: float, rng) -> Pose:
    pos = pose.position + rng.normal(0.0, sigma_pos, 3)
    axis = rng.normal(0.0, 1.0, 3)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        axis = np.array([0.0, 0.0, 1.0])
        n = 1.0
    dq = quat_from_axis_angle(axis / n, rng.normal(0.0, sigma_rot))
    return Pose(pos, quat_normalize(quat_multiply(dq, pose.orientation)))


def object_in_camera(world_object_pose: Pose, camera_pose: Pose) -> Pose:
    return pose_compose(pose_inverse(camera_pose), world_object_pose)


def sense(world, camera: CameraModel, tracker: TrackerState, cfg: PerceptionConfig, rng, tick: int) -> SensorFrame:
    """One camera frame: visibility plus, when the lock holds, a noisy pose.

    A measurement is produced only while the tracker is Locked and the
    camera-frame object motion since the previous frame stays under the lock
    thresholds.
    """
    camera_pose = camera_world_pose(world.gripper_pose, camera)
    visible = visibility_test(camera_pose, world.object_pose.position, world.obstacles, camera)
    if not visible or tracker.mode is not TrackerMode.LOCKED or tracker.last_tracked_pose is None:
        return SensorFrame(visible, None, tick)
    obj_cam = object_in_camera(world.object_pose, camera_pose)
    prev = tracker.last_tracked_pose
    dpos = float(np.linalg.norm(obj_cam.position - prev.position))
    drot = geodesic_angle(obj_cam.orientation, prev.orientation)
    if dpos > cfg.lock_trans or drot > cfg.lock_rot:
        return SensorFrame(visible, None, tick)
    noisy = _noisy_pose(obj_cam, cfg.sigma_pos, cfg.sigma_rot, rng)
    return SensorFrame(visible, PoseMeasurement(noisy, tick), tick)


def initial_registration(world, camera: CameraModel, cfg: PerceptionConfig, rng) -> SensorFrame:
    """Registration measurement granted at episode start (tick 0)."""
    camera_pose = camera_world_pose(world.gripper_pose, camera)
    obj_cam = object_in_camera(world.object_pose, camera_pose)
    noisy = _noisy_pose(obj_cam, cfg.rereg_sigma_pos, cfg.rereg_sigma_rot, rng)
    visible = visibility_test(camera_pose, world.object_pose.position, world.obstacles, camera)
    return SensorFrame(visible, PoseMeasurement(noisy, 0), 0, source="register")


def reregister(
    world,
    camera_pose: Pose,
    ekf_mean_cam: Pose,
    cfg: PerceptionConfig,
    rng,
    elapsed: int,
) -> PoseMeasurement | None:
    """Global re-registration after loss.

    Returns the camera-frame object pose with registration noise once the
    object has been visible for the configured latency; `ekf_mean_cam` is the
    warm start for the search and does not affect the returned pose.
    """
    if elapsed < cfg.rereg_latency:
        return None
    obj_cam = object_in_camera(world.object_pose, camera_pose)
    noisy = _noisy_pose(obj_cam, cfg.rereg_sigma_pos, cfg.rereg_sigma_rot, rng)
    return PoseMeasurement(noisy, elapsed)


def tracking_step(
    frame: SensorFrame,
    tracker: TrackerState,
    filt: FilterState,
    camera_world: Pose,
    dt: float,
    cfg: PerceptionConfig,
    noise: NoiseConfig,
):
    """Fuse one frame into the filter and advance the tracker state machine.

    Returns (tracker, filter, world-frame estimate). With a measurement the
    estimate is the filter posterior; without one the filter coasts (optionally
    re-fed with the last measurement at inflated covariance) and the emitted
    estimate is rate-limited toward the mean.
    """
    # widen process noise only from the second consecutive blind tick:
    # single-tick visibility blips happen constantly near the frustum edge,
    # and inflating on those makes the velocity belief hyper-plastic exactly
    # when the next noisy measurement pair would teach it garbage
    blind = frame.measurement is None and tracker.consecutive_loss >= 1
    q_scale = noise.loss_q_scale if blind else 1.0
    filt = ekf_predict(filt, dt, noise, q_scale=q_scale)

    if frame.measurement is not None:
        meas_cam = frame.measurement.pose
        world_meas = PoseMeasurement(pose_compose(camera_world, meas_cam), frame.tick * dt)
        y_pos = world_meas.pose.position - filt.x[0:3]
        jump = float(np.linalg.norm(y_pos))
        elapsed = world_meas.timestamp - filt.last_update_time
        evidence = tracker.maneuver_evidence
        if jump > cfg.maneuver_gate and dt * 0.5 < elapsed <= dt * 1.5:
            # single-frame jumps only; innovations after a measurement gap
            # are dominated by drift plus registration noise
            evidence = (y_pos / jump, jump / elapsed, world_meas.timestamp)
        filt = ekf_update(filt, world_meas, noise)
        est = state_pose(filt)
        tracker = TrackerState(
            mode=TrackerMode.LOCKED,
            last_tracked_pose=meas_cam,
            last_world_measurement=world_meas,
            loss_tick=None,
            consecutive_loss=0,
            reacquire_started=None,
            use_reregistration=False,
            last_estimate=est,
            maneuver_evidence=evidence,
        )
        return tracker, filt, est

    mode = tracker.mode
    loss_tick = tracker.loss_tick
    reacquire_started = tracker.reacquire_started
    if mode is TrackerMode.LOCKED:
        mode = TrackerMode.LOST
        loss_tick = frame.tick
        reacquire_started = None
    if mode is TrackerMode.LOST and frame.visible:
        mode = TrackerMode.REACQUIRING
        reacquire_started = frame.tick
    elif mode is TrackerMode.REACQUIRING and not frame.visible:
        mode = TrackerMode.LOST
        reacquire_started = None

    consecutive = tracker.consecutive_loss + 1
    if consecutive == 1 and tracker.maneuver_evidence is not None:
        direction, apparent, ev_time = tracker.maneuver_evidence
        if frame.tick * dt - ev_time <= cfg.maneuver_memory:
            # the jump was immediately followed by disappearance: treat it as
            # the onset of an escape and widen velocity belief along it
            boost = cfg.maneuver_weight * apparent * apparent * np.outer(direction, direction)
            P = filt.P.copy()
            P[3:6, 3:6] += boost
            filt = FilterState(x=filt.x, P=P, last_update_time=filt.last_update_time)
    last_wm = tracker.last_world_measurement
    if last_wm is not None and noise.refeed_mode is not LossRefeedMode.OFF:
        if noise.refeed_mode is LossRefeedMode.EVERY_TICK or consecutive == 1:
            filt = ekf_update(filt, last_wm, noise, r_scale=refeed_scale(noise, consecutive))
    if last_wm is not None:
        drift = filt.x[0:3] - last_wm.pose.position
        dist = float(np.linalg.norm(drift))
        if dist > cfg.loss_coast_leash:
            x = filt.x.copy()
            x[0:3] = last_wm.pose.position + drift * (cfg.loss_coast_leash / dist)
            filt = FilterState(x=x, P=filt.P, last_update_time=filt.last_update_time)

    prev = tracker.last_estimate if tracker.last_estimate is not None else state_pose(filt)
    est = clamped_estimate(filt, prev, dt, cfg.estimate_v_clamp, cfg.estimate_omega_clamp)
    tracker = replace(
        tracker,
        mode=mode,
        loss_tick=loss_tick,
        consecutive_loss=consecutive,
        reacquire_started=reacquire_started,
        use_reregistration=True,
        last_estimate=est,
    )
    return tracker, filt, est


_RECOVERY_DIRECTIONS = None


def _recovery_directions():
    """16 fixed view directions: two elevation rings plus straight overhead."""
    global _RECOVERY_DIRECTIONS
    if _RECOVERY_DIRECTIONS is None:
        dirs = []
        for elev_deg, count, phase in ((55.0, 8, 0.0), (30.0, 7, 0.5)):
            el = math.radians(elev_deg)
            for k in range(count):
                az = 2.0 * math.pi * (k + phase) / count
                dirs.append(
                    (math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))
                )
        dirs.append((0.0, 0.0, 1.0))
        _RECOVERY_DIRECTIONS = tuple(np.array(d) for d in dirs)
    return _RECOVERY_DIRECTIONS


def recovery_candidates(
    camera: CameraModel,
    mean_pos,
    current_gripper: Pose,
    radius: float = 0.45,
    bounds=None,
):
    """Deterministic candidate gripper poses whose cameras look at mean_pos.

    16 poses on a sphere of the given radius around the mean, then the current
    gripper pose last. With bounds (lo, hi) each camera position is clamped
    into that box before its look-at orientation is computed.
    """
    mean_pos = np.asarray(mean_pos, dtype=float)
    inv_mount = pose_inverse(camera.mount_offset)
    out = []
    for d in _recovery_directions():
        cam_pos = mean_pos + radius * d
        if bounds is not None:
            cam_pos = np.clip(cam_pos, bounds[0], bounds[1])
        cam_pose = Pose(cam_pos, look_at_quat(cam_pos, mean_pos))
        out.append(pose_compose(cam_pose, inv_mount))
    out.append(current_gripper)
    return out


def recovery_viewpoint(
    filt: FilterState,
    camera: CameraModel,
    current_gripper: Pose,
    rng,
    n_samples: int = 32,
    radius: float = 0.45,
    obstacles=(),
    bounds=None,
) -> RecoveryChoice:
    """Pick the candidate camera placement that sees the most mass of the
    filter's position uncertainty.

    Scores are visible fractions of Gaussian samples drawn from the position
    marginal; ties go to the candidate closest to the current gripper pose.
    """
    mean = filt.x[0:3]
    cov = 0.5 * (filt.P[0:3, 0:3] + filt.P[0:3, 0:3].T)
    samples = rng.multivariate_normal(mean, cov, size=n_samples, check_valid="ignore")
    candidates = recovery_candidates(camera, mean, current_gripper, radius, bounds=bounds)

    best_idx = 0
    best_score = -1.0
    best_disp = math.inf
    for i, grip in enumerate(candidates):
        cam_pose = camera_world_pose(grip, camera)
        score = _visible_fraction(cam_pose, samples, obstacles, camera)
        disp = float(np.linalg.norm(grip.position - current_gripper.position))
        if score > best_score or (score == best_score and disp < best_disp):
            best_idx, best_score, best_disp = i, score, disp
    return RecoveryChoice(candidates[best_idx], best_score, best_idx)


def _visible_fraction(cam_pose: Pose, samples, obstacles, camera: CameraModel) -> float:
    n = 0
    for s in samples:
        if visibility_test(cam_pose, s, obstacles, camera):
            n += 1
    return n / len(samples)
