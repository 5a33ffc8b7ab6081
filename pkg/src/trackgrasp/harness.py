"""Episode loop and scenario evaluation harness.

One episode: sense, fuse into the tracker/filter, re-project grasp candidates
through the pose estimate, pursue (or fly a recovery viewpoint while the
tracker is lost), step the world, and resolve closures with retries. Episodes
terminate on the first of lift success, collision, a sustained
estimate-vs-true divergence, or the time limit.

Scenarios fan seeded episodes over named variants and reduce to a metrics
table with a fixed CSV schema. Episode i runs with seed master_seed + i, and
reduction is by episode index, so results do not depend on worker count.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .config import SimConfig
from .control import (
    PursuitPhase,
    build_observation,
    pursue,
    recovery_pursue,
)
from .ekf import FilterState, PoseMeasurement, ekf_init, ekf_predict, state_pose, state_velocity
from .geometry import (
    Pose,
    Twist,
    geodesic_angle,
    pose_compose,
    pose_inverse,
    quat_rotate,
)
from .grasping import (
    attempt_grasp,
    compute_obj_grasp_transform,
    detect_grasp_failure,
    generate_grasp_pool,
    grasp_trigger,
    project_candidates,
    select_best_grasp,
)
from .perception import (
    SensorFrame,
    TrackerMode,
    TrackerState,
    camera_world_pose,
    initial_registration,
    object_in_camera,
    reregister,
    recovery_viewpoint,
    sense,
    tracking_step,
    visibility_test,
)
from .reward import TickEvents, compute_reward, stage_table
from .world import (
    Box,
    GripperCommand,
    MotionKind,
    MotionPattern,
    ObjectMotion,
    WorldState,
    collision_check,
    gripper_step,
    object_step,
    sample_initial_object_pose,
    workspace,
)

__all__ = [
    "Outcome",
    "EpisodeResult",
    "MetricsRow",
    "MetricsTable",
    "SCENARIO_NAMES",
    "CSV_HEADER",
    "classify_outcome",
    "run_episode",
    "run_scenario",
    "emit_results",
    "read_results",
]

SCENARIO_NAMES = ("speed_sweep", "time_limits", "workspace", "tracking_loss", "ablation")

CSV_HEADER = (
    "scenario,variant,episodes,success_pct,timeout_pct,collision_pct,"
    "tracking_failure_pct,total_failure_pct,mean_time_to_grasp_s"
)

_STANDOFF_DWELL_TICKS = 20
_STANDOFF_POS_TOL = 0.02
_APPROACH_ABORT_ANG = math.radians(15.0)
_APPROACH_ABORT_DIST = 0.12
_TRIGGER_DEBOUNCE_TICKS = 3
# transits toward a fresh estimate run blind for up to ~1 s while the camera
# re-centers; recovery must not preempt them
_RECOVERY_AFTER_LOST_TICKS = 20
# a loss while the velocity belief is this fast means the target bolted, not
# that the camera is mid-transit; searching early wins the race against the
# divergence monitor
_FAST_LOSS_SPEED = 0.12
_RECOVERY_AFTER_FAST_LOSS_TICKS = 8
# below this actual gripper speed a visibility loss cannot be a self-induced
# camera transit either, so the long hysteresis would just burn clock
_SLOW_GRIP_LOSS_SPEED = 0.10
_RECOVERY_HORIZON_TICKS = 20  # 1 s lookahead when planning a search viewpoint
_SEARCH_Z_SPREAD = 0.06       # m, vertical sigma cap for the search cloud
# above this estimated target speed only the top-down candidate is pursued;
# horizontal approaches park the gripper body in a fast mover's path, and
# switching candidates mid-chase resets the settling dwell
_FAST_TARGET_SPEED = 0.06
# hold the top-down candidate while the velocity estimate is still forming:
# rotating toward a side grasp swings the camera off the target
_EARLY_TOPDOWN_TICKS = 24
# do not descend when the target will bounce off a wall this soon
_BOUNCE_HORIZON_S = 1.5
_BOUNCE_MIN_SPEED = 0.08
_LIFT_POS_TOL = 0.01
_BACKOFF_POS_TOL = 0.015
_EMPTY_CLOSE_EPS = 1e-6


class Outcome(Enum):
    SUCCESS = "success"
    TIMEOUT = "timeout"
    COLLISION = "collision"
    TRACKING_FAILURE = "tracking_failure"


def classify_outcome(collision: bool, tracking_failure: bool, success: bool) -> Outcome:
    """Precedence: collision, then tracking failure, then success, else timeout."""
    if collision:
        return Outcome.COLLISION
    if tracking_failure:
        return Outcome.TRACKING_FAILURE
    if success:
        return Outcome.SUCCESS
    return Outcome.TIMEOUT


@dataclass(frozen=True)
class EpisodeResult:
    outcome: Outcome
    time_to_grasp: float | None   # s, set only on success
    end_time: float               # s, when the episode terminated
    retries: int
    loss_ticks: int
    premature_grasps: int
    reward_total: float
    trace: tuple | None = None


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    variant: str
    episodes: int
    success_pct: float
    timeout_pct: float
    collision_pct: float
    tracking_failure_pct: float
    total_failure_pct: float
    mean_time_to_grasp_s: float | None


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple


def _complex_obstacles(cfg: SimConfig):
    off = cfg.episode.complex_wall_offset
    ws = workspace(cfg.episode.workspace).bounds
    walls = []
    for side in (-1.0, 1.0):
        y = side * off
        walls.append(Box([ws.lo[0], y - 0.005, ws.lo[2]], [ws.hi[0], y + 0.005, ws.lo[2] + 0.32]))
    return tuple(walls)


def _held_width(offset: Pose, extent) -> float:
    """Object support width along the selected grasp's closing axis."""
    axis = quat_rotate(offset.orientation, np.array([1.0, 0.0, 0.0]))
    return float(abs(axis[0]) * extent[0] + abs(axis[1]) * extent[1] + abs(axis[2]) * extent[2])


def _approach_axis(pose: Pose):
    return quat_rotate(pose.orientation, np.array([0.0, 0.0, 1.0]))


def _time_to_wall(pos, vel, box) -> float:
    t = math.inf
    for a in range(3):
        if vel[a] > 1e-9:
            t = min(t, (box.hi[a] - pos[a]) / vel[a])
        elif vel[a] < -1e-9:
            t = min(t, (box.lo[a] - pos[a]) / vel[a])
    return t


def _pose7(p: Pose):
    return [round(float(v), 6) for v in (*p.position, *p.orientation)]


def run_episode(cfg: SimConfig, pattern: MotionPattern, seed: int, with_trace: bool = False) -> EpisodeResult:
    """Simulate one grasping episode and classify its outcome."""
    ep = cfg.episode
    rng = np.random.default_rng(seed)
    ws = workspace(ep.workspace)
    obstacles = _complex_obstacles(cfg) if ep.scene == "complex" else ()
    coeffs = stage_table()[ep.stage]
    gains = cfg.control
    limits = cfg.gripper
    dt = ep.dt
    n_ticks = int(round(ep.t_max / dt))
    if abs(n_ticks * dt - ep.t_max) > 1e-9:
        raise ValueError("t_max must be an integral number of ticks")

    object_pose0 = sample_initial_object_pose(ws, rng)
    # search flights may hover around the object workspace but not leave it
    # behind: cap the camera shell at one search radius of padding
    r_pad = ep.recovery_radius
    flight_box = (
        ws.bounds.lo - np.array([r_pad, r_pad, 0.0]),
        ws.bounds.hi + np.array([r_pad, r_pad, r_pad]),
    )
    motion = ObjectMotion(pattern, ws, rng)
    start = Pose(np.asarray(ep.start_position, dtype=float), np.array([1.0, 0.0, 0.0, 0.0]))
    world = WorldState(
        object_pose=object_pose0,
        object_twist=Twist(),
        gripper_pose=start,
        gripper_width=limits.width_max,
        obstacles=obstacles,
        time=0.0,
    )

    # grasp candidates ride rigidly on the object; offsets are object-frame
    pool = generate_grasp_pool(object_pose0, cfg.grasp.object_extent, cfg.grasp.pool_size)
    offsets = [compute_obj_grasp_transform(object_pose0, c) for c in pool.candidates]
    scores = pool.scores

    # initial registration seeds tracker and filter
    frame0 = initial_registration(world, cfg.camera, cfg.perception, rng)
    cam0 = camera_world_pose(world.gripper_pose, cfg.camera)
    world_pose0 = pose_compose(cam0, frame0.measurement.pose)
    filt = ekf_init(world_pose0, cfg.ekf) if ep.ekf_enabled else None
    tracker = TrackerState(
        mode=TrackerMode.LOCKED,
        last_tracked_pose=frame0.measurement.pose,
        last_world_measurement=PoseMeasurement(world_pose0, 0.0),
        last_estimate=world_pose0,
    )
    estimate = world_pose0
    visible_prev = frame0.visible
    baseline_vel = np.zeros(3)

    grasp_state = "pursue"
    phase = PursuitPhase.STANDOFF
    stable_ticks = 0
    trigger_streak = 0
    recovering = False
    recovery_target = None
    recovery_age = 0
    recovery_dwell = 0
    loss_speed = 0.0
    slow_loss = False
    grip_speed_ema = 0.0
    prev_grip_pos = world.gripper_pose.position.copy()
    attempts_used = 0
    attempts_allowed = 1 + cfg.grasp.retry.max_retries
    frozen_sel = None
    attempt_resolved = False
    held_offset = None
    width_floor = None
    holding_ticks = 0
    lift_target = None
    backoff_target = None

    loss_ticks = 0
    premature_grasps = 0
    reward_total = 0.0
    tf_run = 0.0
    outcome = None
    success_time = None
    trace = [] if with_trace else None
    prev_target = None

    for tick in range(1, n_ticks + 1):
        cam_pose = camera_world_pose(world.gripper_pose, cfg.camera)
        frame = sense(world, cfg.camera, tracker, cfg.perception, rng, tick)

        if ep.ekf_enabled:
            if (
                tracker.mode is TrackerMode.REACQUIRING
                and frame.visible
                and frame.measurement is None
            ):
                mean_cam = object_in_camera(state_pose(filt), cam_pose)
                m = reregister(
                    world, cam_pose, mean_cam, cfg.perception, rng,
                    elapsed=tick - tracker.reacquire_started,
                )
                if m is not None:
                    frame = SensorFrame(frame.visible, PoseMeasurement(m.pose, tick), tick, "register")
            tracker, filt, estimate = tracking_step(
                frame, tracker, filt, cam_pose, dt, cfg.perception, cfg.ekf
            )
            target_vel = state_velocity(filt)
        else:
            # baseline: raw tracked pose, frozen on loss, no recovery
            if frame.measurement is not None:
                prev_est = tracker.last_estimate
                estimate = pose_compose(cam_pose, frame.measurement.pose)
                tracker = replace(
                    tracker,
                    mode=TrackerMode.LOCKED,
                    last_tracked_pose=frame.measurement.pose,
                    last_estimate=estimate,
                    consecutive_loss=0,
                )
                delta_v = (
                    (estimate.position - prev_est.position) / dt
                    if prev_est is not None
                    else np.zeros(3)
                )
                baseline_vel = 0.7 * baseline_vel + 0.3 * delta_v
            else:
                if tracker.mode is TrackerMode.LOCKED:
                    tracker = replace(tracker, mode=TrackerMode.LOST, loss_tick=tick)
                tracker = replace(tracker, consecutive_loss=tracker.consecutive_loss + 1)
                baseline_vel = np.zeros(3)
                if frame.visible:
                    # an incremental tracker can resume only if the pose barely moved
                    true_cam = object_in_camera(world.object_pose, cam_pose)
                    est_cam = object_in_camera(estimate, cam_pose)
                    dpos = float(np.linalg.norm(true_cam.position - est_cam.position))
                    drot = geodesic_angle(true_cam.orientation, est_cam.orientation)
                    if dpos <= cfg.perception.lock_trans and drot <= cfg.perception.lock_rot:
                        tracker = replace(
                            tracker, mode=TrackerMode.LOCKED, last_tracked_pose=true_cam
                        )
            target_vel = baseline_vel

        if tracker.mode is not TrackerMode.LOCKED:
            loss_ticks += 1

        # grasp target through the current estimate
        cands = project_candidates(offsets, estimate)
        target_speed = float(np.linalg.norm(target_vel))
        if tracker.consecutive_loss == 1:
            # conditions at the tick contact was lost decide how soon recovery engages
            loss_speed = target_speed
            slow_loss = grip_speed_ema < _SLOW_GRIP_LOSS_SPEED
        lost_thresh = (
            _RECOVERY_AFTER_FAST_LOSS_TICKS
            if loss_speed > _FAST_LOSS_SPEED or slow_loss
            else _RECOVERY_AFTER_LOST_TICKS
        )
        if frozen_sel is not None:
            sel = frozen_sel
        elif (
            target_speed > _FAST_TARGET_SPEED
            or tick <= _EARLY_TOPDOWN_TICKS
            or tracker.mode is not TrackerMode.LOCKED
        ):
            sel = 0  # pool is sorted by score, index 0 is the top-down grasp
        else:
            sel = select_best_grasp(
                world.gripper_pose, cands, scores,
                cfg.grasp.select_w_pos, cfg.grasp.select_w_rot, cfg.grasp.select_w_score,
            )
        target = cands[sel]
        if prev_target is None:
            prev_target = target

        obs = build_observation(target, world.gripper_pose, prev_target, world.gripper_width > 0.05)
        premature_tick = False

        if grasp_state == "lifting":
            v_world = gains.k_p * (lift_target - world.gripper_pose.position)
            n = float(np.linalg.norm(v_world))
            if n > gains.max_linear:
                v_world = v_world * (gains.max_linear / n)
            qc = (-world.gripper_pose.orientation[0], -world.gripper_pose.orientation[1],
                  -world.gripper_pose.orientation[2], world.gripper_pose.orientation[3])
            cmd = GripperCommand(Twist(quat_rotate(qc, v_world), np.zeros(3)), gripper_close=True)
        elif grasp_state == "holding":
            cmd = GripperCommand(Twist(np.zeros(3), np.zeros(3)), gripper_close=True)
        elif grasp_state == "closing":
            cmd = pursue(obs, target, world.gripper_pose, PursuitPhase.CLOSE, gains, target_vel)
        elif grasp_state == "backoff":
            if (
                ep.ekf_enabled
                and tracker.mode is not TrackerMode.LOCKED
                and tracker.consecutive_loss >= lost_thresh
            ):
                # the target vanished mid-retreat; the search flight ascends
                # away from the believed pose anyway, so it doubles as backoff
                grasp_state = "pursue"
            # a mover can chase the retreating gripper down; keep extending
            # the retreat until separation opens up
            if float(np.linalg.norm(estimate.position - world.gripper_pose.position)) < 0.09:
                backoff_target = backoff_target - cfg.grasp.retry.backoff_dist * _approach_axis(
                    world.gripper_pose
                )
            v_world = gains.k_p * (backoff_target - world.gripper_pose.position)
            n = float(np.linalg.norm(v_world))
            if n > gains.max_linear:
                v_world = v_world * (gains.max_linear / n)
            qc = (-world.gripper_pose.orientation[0], -world.gripper_pose.orientation[1],
                  -world.gripper_pose.orientation[2], world.gripper_pose.orientation[3])
            cmd = GripperCommand(Twist(quat_rotate(qc, v_world), np.zeros(3)), gripper_close=False)
        else:  # pursue
            if ep.ekf_enabled and tracker.mode is not TrackerMode.LOCKED:
                if tracker.consecutive_loss >= lost_thresh:
                    recovering = True
            else:
                recovering = False
                recovery_target = None
            if recovering:
                # latch one viewpoint and fly it to completion; re-planning
                # every tick leapfrogs between tied candidates and the sweep
                # never happens
                recovery_age += 1
                if recovery_target is not None:
                    reached = (
                        float(np.linalg.norm(world.gripper_pose.position - recovery_target.position))
                        < _STANDOFF_POS_TOL
                        and geodesic_angle(world.gripper_pose.orientation, recovery_target.orientation)
                        < cfg.grasp.eps_ang
                    )
                    recovery_dwell = recovery_dwell + 1 if reached else 0
                if recovery_target is None or recovery_dwell >= 10 or recovery_age >= 40:
                    # plan against the belief as it will look when the flight
                    # arrives, not the belief right now: the cloud keeps
                    # spreading while the camera is in transit
                    look = filt
                    for _ in range(_RECOVERY_HORIZON_TICKS):
                        look = ekf_predict(look, dt, cfg.ekf, q_scale=cfg.ekf.loss_q_scale)
                    # horizontal-flight world: cap the cloud's vertical spread
                    # so no camera coverage is spent above or below the plane
                    # the target can actually be in
                    P = look.P.copy()
                    if P[2, 2] > _SEARCH_Z_SPREAD ** 2:
                        s = _SEARCH_Z_SPREAD / float(np.sqrt(P[2, 2]))
                        P[2, 0:3] *= s
                        P[0:3, 2] *= s
                        look = FilterState(x=look.x, P=P, last_update_time=look.last_update_time)
                    anchor = tracker.last_world_measurement
                    if anchor is not None:
                        drift = look.x[0:3] - anchor.pose.position
                        dist = float(np.linalg.norm(drift))
                        leash = cfg.perception.loss_coast_leash
                        if dist > leash:
                            x = look.x.copy()
                            x[0:3] = anchor.pose.position + drift * (leash / dist)
                            look = FilterState(x=x, P=look.P, last_update_time=look.last_update_time)
                    # a wide cloud needs a high vantage: scale the camera shell
                    # with the largest principal spread so the footprint grows
                    # with what it has to cover
                    spread = float(np.sqrt(max(np.max(np.linalg.eigvalsh(
                        0.5 * (look.P[0:3, 0:3] + look.P[0:3, 0:3].T))), 0.0)))
                    plan_radius = float(np.clip(ep.recovery_radius + 0.5 * spread,
                                                ep.recovery_radius, 0.90))
                    choice = recovery_viewpoint(
                        look, cfg.camera, world.gripper_pose, rng,
                        n_samples=ep.recovery_samples, radius=plan_radius,
                        obstacles=obstacles, bounds=flight_box,
                    )
                    recovery_target = choice.pose
                    recovery_age = 0
                    recovery_dwell = 0
                cmd = recovery_pursue(recovery_target, world.gripper_pose, gains)
                stable_ticks = 0
                trigger_streak = 0
                phase = PursuitPhase.STANDOFF
            else:
                align = geodesic_angle(world.gripper_pose.orientation, target.orientation)
                bounce_hold = (
                    target_speed > _BOUNCE_MIN_SPEED
                    and _time_to_wall(estimate.position, target_vel, ws.bounds) < _BOUNCE_HORIZON_S
                )
                if phase is PursuitPhase.STANDOFF:
                    standoff_pt = target.position - gains.standoff_dist * _approach_axis(target)
                    near = float(np.linalg.norm(world.gripper_pose.position - standoff_pt)) < _STANDOFF_POS_TOL
                    if align < cfg.grasp.eps_ang and near:
                        stable_ticks += 1
                    else:
                        stable_ticks = 0
                    if stable_ticks >= _STANDOFF_DWELL_TICKS and not bounce_hold:
                        phase = PursuitPhase.APPROACH
                else:
                    dist = float(np.linalg.norm(world.gripper_pose.position - target.position))
                    if align > _APPROACH_ABORT_ANG or dist > _APPROACH_ABORT_DIST or bounce_hold:
                        phase = PursuitPhase.STANDOFF
                        stable_ticks = 0
                cmd = pursue(obs, target, world.gripper_pose, phase, gains, target_vel)
                if (
                    attempts_used < attempts_allowed
                    and grasp_trigger(world.gripper_pose, target, cfg.grasp.eps_pos, cfg.grasp.eps_ang)
                ):
                    trigger_streak += 1
                else:
                    trigger_streak = 0
                if trigger_streak >= _TRIGGER_DEBOUNCE_TICKS:
                    trigger_streak = 0
                    grasp_state = "closing"
                    frozen_sel = sel
                    attempt_resolved = False
                    if tracker.mode is not TrackerMode.LOCKED:
                        premature_grasps += 1
                    true_grasp = pose_compose(world.object_pose, offsets[sel])
                    dtrue = float(np.linalg.norm(world.gripper_pose.position - true_grasp.position))
                    atrue = geodesic_angle(world.gripper_pose.orientation, true_grasp.orientation)
                    if dtrue > cfg.grasp.tolerances.delta_pos or atrue > cfg.grasp.tolerances.delta_ang:
                        premature_tick = True
                    cmd = pursue(obs, target, world.gripper_pose, PursuitPhase.CLOSE, gains, target_vel)

        # advance the world: object first, then the gripper under the command
        in_grasp = grasp_state in ("closing", "holding", "lifting") or (
            grasp_state == "pursue"
            and grasp_trigger(world.gripper_pose, target, cfg.grasp.eps_pos, cfg.grasp.eps_ang)
        )
        if held_offset is None:
            world = object_step(world, motion, dt, rng, visible_prev)
        else:
            world = replace(world, time=world.time + dt)
        world = gripper_step(world, cmd, dt, limits, width_floor)
        grip_speed_ema = 0.5 * grip_speed_ema + 0.5 * float(
            np.linalg.norm(world.gripper_pose.position - prev_grip_pos) / dt
        )
        prev_grip_pos = world.gripper_pose.position.copy()
        if held_offset is not None:
            world = replace(
                world,
                object_pose=pose_compose(world.gripper_pose, held_offset),
                object_twist=Twist(),
            )

        # resolve a closure once the fingers reach the object (or close empty)
        if grasp_state == "closing" and not attempt_resolved:
            true_grasp = pose_compose(world.object_pose, offsets[frozen_sel])
            hw = _held_width(offsets[frozen_sel], cfg.grasp.object_extent)
            if world.gripper_width <= hw + _EMPTY_CLOSE_EPS:
                attempt_resolved = True
                attempts_used += 1
                result = attempt_grasp(
                    world, true_grasp, cfg.grasp.tolerances, cfg.grasp.retry.slip_prob, rng
                )
                if result.success:
                    grasp_state = "holding"
                    holding_ticks = 0
                    held_offset = pose_compose(pose_inverse(world.gripper_pose), world.object_pose)
                    width_floor = hw
        if grasp_state == "closing" and attempt_resolved and detect_grasp_failure(world.gripper_width):
            grasp_state = "backoff"
            backoff_target = world.gripper_pose.position - cfg.grasp.retry.backoff_dist * _approach_axis(
                world.gripper_pose
            )
            frozen_sel = None
        elif grasp_state == "holding":
            holding_ticks += 1
            if holding_ticks >= cfg.grasp.retry.stabilization_ticks:
                grasp_state = "lifting"
                lift_target = world.gripper_pose.position + np.array([0.0, 0.0, ep.lift_height])
        elif grasp_state == "lifting":
            if float(np.linalg.norm(world.gripper_pose.position - lift_target)) < _LIFT_POS_TOL:
                outcome = Outcome.SUCCESS
                success_time = world.time
        elif grasp_state == "backoff":
            if float(np.linalg.norm(world.gripper_pose.position - backoff_target)) < _BACKOFF_POS_TOL:
                grasp_state = "pursue"
                phase = PursuitPhase.STANDOFF
                stable_ticks = 0

        collided = collision_check(world, limits, cfg.grasp.object_extent, in_grasp)

        cam_after = camera_world_pose(world.gripper_pose, cfg.camera)
        visible_prev = visibility_test(cam_after, world.object_pose.position, obstacles, cfg.camera)

        # sustained estimate divergence check
        err = float(np.linalg.norm(estimate.position - world.object_pose.position))
        if err > ep.tracking_failure_dist:
            tf_run += dt
        else:
            tf_run = 0.0
        tracking_failed = tf_run > ep.tracking_failure_time

        v = np.asarray(cmd.twist.linear, dtype=float)
        w = np.asarray(cmd.twist.angular, dtype=float)
        action_mag = math.sqrt(
            float(v @ v) / (gains.max_linear ** 2) + float(w @ w) / (gains.max_angular ** 2)
        )
        events = TickEvents(
            grasped=outcome is Outcome.SUCCESS,
            collided=collided,
            out_of_view=not visible_prev,
            premature_close=premature_tick,
            keypoint_distance=float(np.mean(np.linalg.norm(obs.error, axis=1))),
            alignment_error=geodesic_angle(world.gripper_pose.orientation, target.orientation),
            action_magnitude=action_mag,
        )
        reward_total += compute_reward(events, coeffs)

        if trace is not None:
            trace.append(
                {
                    "t": round(world.time, 6),
                    "object": _pose7(world.object_pose),
                    "estimate": _pose7(estimate),
                    "gripper": _pose7(world.gripper_pose),
                    "mode": tracker.mode.value,
                    "est_vel": [round(float(v), 6) for v in target_vel],
                    "phase": grasp_state if grasp_state != "pursue" else phase.value,
                    "width": round(world.gripper_width, 6),
                    "visible": bool(visible_prev),
                    "reward": round(reward_total, 6),
                }
            )
        prev_target = target

        if collided or tracking_failed or outcome is Outcome.SUCCESS:
            outcome = classify_outcome(collided, tracking_failed, outcome is Outcome.SUCCESS)
            break

    end_time = world.time
    if outcome is None:
        outcome = Outcome.TIMEOUT
    return EpisodeResult(
        outcome=outcome,
        time_to_grasp=success_time,
        end_time=end_time,
        retries=max(0, attempts_used - 1),
        loss_ticks=loss_ticks,
        premature_grasps=premature_grasps,
        reward_total=reward_total,
        trace=tuple(trace) if trace is not None else None,
    )


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class _EpisodeSpec:
    variant: str
    pattern: MotionPattern
    cfg: SimConfig
    seed: int
    index: int


def _with_workspace(cfg: SimConfig, name: str) -> SimConfig:
    return replace(cfg, episode=replace(cfg.episode, workspace=name))


def _linear(speed_lo: float, speed_hi: float) -> MotionPattern:
    kind = MotionKind.LINEAR_FAST if speed_hi > 0.05 else MotionKind.LINEAR_REGULAR
    return MotionPattern(kind=kind, speed_range=(speed_lo, speed_hi))


def _mixed_pattern(i: int) -> MotionPattern:
    """70/30 linear-regular/random split by episode index."""
    if i % 10 < 7:
        return _linear(0.0, 0.05)
    return MotionPattern(kind=MotionKind.RANDOM)


def _build_specs(name: str, episodes: int, master_seed: int, cfg: SimConfig, variants=None):
    specs = []
    idx = 0

    def add(variant, pattern, vcfg):
        nonlocal idx
        if variants is None or variant in variants:
            specs.append(_EpisodeSpec(variant, pattern, vcfg, master_seed + idx, idx))
        idx += 1

    if name == "speed_sweep":
        for label, lo, hi in (
            ("3", 0.03, 0.03),
            ("6", 0.06, 0.06),
            ("9", 0.09, 0.09),
            ("12", 0.12, 0.12),
            ("15", 0.15, 0.15),
            ("uniform", 0.0, 0.15),
        ):
            for _ in range(episodes):
                add(label, _linear(lo, hi), cfg)
    elif name == "time_limits":
        for i in range(episodes):
            add("pool", _mixed_pattern(i), cfg)
    elif name == "workspace":
        for part in ("side_a", "side_b", "base", "extended"):
            vcfg = _with_workspace(cfg, part)
            for i in range(episodes):
                add(part, _mixed_pattern(i), vcfg)
    elif name == "tracking_loss":
        vcfg = _with_workspace(cfg, "extended")
        for i in range(episodes):
            r = i % 15
            if r < 7:
                add("line", _linear(0.0, 0.05), vcfg)
            elif r < 10:
                add("random", MotionPattern(kind=MotionKind.RANDOM), vcfg)
            else:
                add("disruptive", MotionPattern(kind=MotionKind.DISRUPTIVE), vcfg)
    elif name == "ablation":
        vcfg = _with_workspace(cfg, "extended")
        for i in range(episodes):
            if i % 10 < 7:
                add(
                    "combined",
                    MotionPattern(
                        kind=MotionKind.DISRUPTIVE, speed_range=(0.0, 0.15), disrupt_prob=0.3
                    ),
                    vcfg,
                )
            else:
                add("combined", MotionPattern(kind=MotionKind.RANDOM), vcfg)
    else:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIO_NAMES}")
    return specs


def _run_spec(spec: _EpisodeSpec) -> EpisodeResult:
    return run_episode(spec.cfg, spec.pattern, spec.seed)


def _aggregate(scenario: str, variant: str, results) -> MetricsRow:
    n = len(results)
    counts = {o: 0 for o in Outcome}
    ttg = []
    for r in results:
        counts[r.outcome] += 1
        if r.outcome is Outcome.SUCCESS and r.time_to_grasp is not None:
            ttg.append(r.time_to_grasp)
    pct = lambda c: 100.0 * c / n if n else 0.0
    timeout_pct = pct(counts[Outcome.TIMEOUT])
    collision_pct = pct(counts[Outcome.COLLISION])
    tf_pct = pct(counts[Outcome.TRACKING_FAILURE])
    return MetricsRow(
        scenario=scenario,
        variant=variant,
        episodes=n,
        success_pct=pct(counts[Outcome.SUCCESS]),
        timeout_pct=timeout_pct,
        collision_pct=collision_pct,
        tracking_failure_pct=tf_pct,
        total_failure_pct=timeout_pct + collision_pct + tf_pct,
        mean_time_to_grasp_s=(sum(ttg) / len(ttg)) if ttg else None,
    )


def _cutoff_rows(results) -> list:
    """Cumulative success under shrinking time budgets for the time_limits pool."""
    rows = []
    for cutoff in (35.0, 30.0, 25.0, 20.0, 15.0, 10.0, 5.0):
        capped = []
        for r in results:
            if r.end_time <= cutoff + 1e-9:
                capped.append(r)
            else:
                capped.append(replace(r, outcome=Outcome.TIMEOUT, time_to_grasp=None))
        rows.append(_aggregate("time_limits", f"t<={cutoff:g}", capped))
    return rows


def run_scenario(
    name: str,
    episodes: int,
    master_seed: int = 0,
    cfg: SimConfig | None = None,
    workers: int = 1,
    variants=None,
    trace_dir=None,
) -> MetricsTable:
    """Run a named scenario and reduce it to a metrics table.

    `episodes` is per variant for speed_sweep and workspace, and the total
    pool size for the mixed scenarios. `variants` restricts to a subset of
    variant labels without changing each episode's seed.
    """
    if cfg is None:
        cfg = SimConfig()
    specs = _build_specs(name, episodes, master_seed, cfg, variants)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_spec, specs, chunksize=16))
    else:
        results = [_run_spec(s) for s in specs]

    if trace_dir is not None:
        _write_traces(trace_dir, name, specs)

    by_variant = {}
    order = []
    for spec, res in zip(specs, results):
        if spec.variant not in by_variant:
            by_variant[spec.variant] = []
            order.append(spec.variant)
        by_variant[spec.variant].append(res)

    if name == "time_limits":
        rows = _cutoff_rows(results)
    else:
        rows = [_aggregate(name, v, by_variant[v]) for v in order]
        if name == "tracking_loss" and variants is None and len(order) > 1:
            rows.append(_aggregate(name, "overall", results))
    return MetricsTable(rows=tuple(rows))


def _write_traces(trace_dir, scenario, specs):
    from pathlib import Path

    d = Path(trace_dir)
    d.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        res = run_episode(spec.cfg, spec.pattern, spec.seed, with_trace=True)
        path = d / f"{scenario}_{spec.variant}_{spec.index:05d}.jsonl"
        with path.open("w") as fh:
            for rec in res.trace:
                fh.write(json.dumps(rec, sort_keys=True))
                fh.write("\n")


# ---------------------------------------------------------------------------
# result emission


def _fmt_pct(x: float) -> str:
    return f"{x:.2f}"


def emit_results(table: MetricsTable, fmt: str = "csv", path=None) -> str:
    """Serialize a metrics table; percentages print with two decimals."""
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(CSV_HEADER)
        buf.write("\n")
        for r in table.rows:
            mean = "" if r.mean_time_to_grasp_s is None else f"{r.mean_time_to_grasp_s:.3f}"
            buf.write(
                f"{r.scenario},{r.variant},{r.episodes},{_fmt_pct(r.success_pct)},"
                f"{_fmt_pct(r.timeout_pct)},{_fmt_pct(r.collision_pct)},"
                f"{_fmt_pct(r.tracking_failure_pct)},{_fmt_pct(r.total_failure_pct)},{mean}\n"
            )
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(
            {"rows": [dataclasses.asdict(r) for r in table.rows]},
            indent=2,
            sort_keys=True,
        ) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        from pathlib import Path

        Path(path).write_text(text)
    return text


def read_results(text: str) -> MetricsTable:
    """Parse the CSV produced by emit_results."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("unrecognized results header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append(
            MetricsRow(
                scenario=parts[0],
                variant=parts[1],
                episodes=int(parts[2]),
                success_pct=float(parts[3]),
                timeout_pct=float(parts[4]),
                collision_pct=float(parts[5]),
                tracking_failure_pct=float(parts[6]),
                total_failure_pct=float(parts[7]),
                mean_time_to_grasp_s=float(parts[8]) if parts[8] else None,
            )
        )
    return MetricsTable(rows=tuple(rows))
