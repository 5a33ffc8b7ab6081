"""Extended Kalman filter over a 13-dimensional rigid-body state.

State layout: [position (3), linear velocity (3), orientation quaternion
(4, xyzw), angular velocity (3)]. The motion model is constant-velocity for
the translational part and a first-order quaternion step for attitude. Pose
measurements are 7-vectors [position, quaternion].

`process_function` is the raw first-order model; `process_jacobian` is its
exact analytic derivative (the quaternion block is differentiated before
renormalization). `ekf_predict` applies the model and then renormalizes the
quaternion part of the state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Pose, geodesic_angle, quat_normalize, quat_slerp

__all__ = [
    "STATE_DIM",
    "MEAS_DIM",
    "NoiseConfig",
    "FilterState",
    "PoseMeasurement",
    "LossRefeedMode",
    "FilterDivergence",
    "default_noise",
    "ekf_init",
    "process_function",
    "process_jacobian",
    "measurement_matrix",
    "ekf_predict",
    "ekf_update",
    "state_pose",
    "state_velocity",
    "clamped_estimate",
    "refeed_scale",
]

STATE_DIM = 13
MEAS_DIM = 7

_P = slice(0, 3)
_V = slice(3, 6)
_Q = slice(6, 10)
_W = slice(10, 13)


class LossRefeedMode(Enum):
    """How the filter is fed while the tracker has no fresh measurement."""

    EVERY_TICK = "every_tick"
    FIRST_TICK = "first_tick"
    OFF = "off"


class FilterDivergence(RuntimeError):
    """Raised when the innovation covariance is numerically singular."""


@dataclass(frozen=True)
class NoiseConfig:
    """Process/measurement covariances and the loss-refeed policy."""

    # linear-velocity process noise is deliberately loose: it sets how fast
    # positional belief widens while the target is unobserved, which drives
    # the viewpoint search after long losses
    q_diag: np.ndarray = field(
        default_factory=lambda: np.array([1e-6] * 3 + [1e-4] * 3 + [1e-8] * 4 + [2.5e-5] * 3)
    )
    r_diag: np.ndarray = field(default_factory=lambda: np.array([2.5e-5] * 3 + [1e-4] * 4))
    p0_diag: np.ndarray = field(default_factory=lambda: np.full(STATE_DIM, 1e-4))
    refeed_mode: LossRefeedMode = LossRefeedMode.FIRST_TICK
    refeed_rho: float = 1.5
    refeed_cap: float = 1e6
    # process noise multiplier applied while no fresh measurement arrives: an
    # unobserved target can maneuver far outside the tracked-motion model, and
    # the belief has to widen fast enough for the viewpoint search to commit
    # to real sweeps instead of staring at the stale mean
    loss_q_scale: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "q_diag", np.asarray(self.q_diag, dtype=float))
        object.__setattr__(self, "r_diag", np.asarray(self.r_diag, dtype=float))
        object.__setattr__(self, "p0_diag", np.asarray(self.p0_diag, dtype=float))
        for name in ("q_diag", "r_diag", "p0_diag"):
            if np.any(getattr(self, name) < 0.0):
                raise ValueError(f"negative entries in {name}")


def default_noise() -> NoiseConfig:
    return NoiseConfig()


@dataclass(frozen=True)
class FilterState:
    x: np.ndarray
    P: np.ndarray
    last_update_time: float = 0.0


@dataclass(frozen=True)
class PoseMeasurement:
    """World-frame pose observation with its timestamp in seconds."""

    pose: Pose
    timestamp: float


def ekf_init(pose0: Pose, noise: NoiseConfig, timestamp: float = 0.0) -> FilterState:
    """Start the filter at a measured pose with zero velocities."""
    x = np.zeros(STATE_DIM)
    x[_P] = pose0.position
    x[_Q] = quat_normalize(pose0.orientation)
    return FilterState(x=x, P=np.diag(noise.p0_diag).copy(), last_update_time=timestamp)


def process_function(x, dt: float):
    """One motion-model step without quaternion renormalization."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    out[_P] = x[_P] + dt * x[_V]
    qx, qy, qz, qw = x[6], x[7], x[8], x[9]
    wx, wy, wz = x[10], x[11], x[12]
    h = 0.5 * dt
    out[6] = qx + h * (qw * wx + qy * wz - qz * wy)
    out[7] = qy + h * (qw * wy - qx * wz + qz * wx)
    out[8] = qz + h * (qw * wz + qx * wy - qy * wx)
    out[9] = qw + h * (-qx * wx - qy * wy - qz * wz)
    return out


def process_jacobian(x, dt: float):
    """Analytic 13x13 Jacobian of process_function at x."""
    qx, qy, qz, qw = x[6], x[7], x[8], x[9]
    wx, wy, wz = x[10], x[11], x[12]
    h = 0.5 * dt

    F = np.eye(STATE_DIM)
    F[0, 3] = F[1, 4] = F[2, 5] = dt

    # d(q * (w, 0)) / dq, rows x,y,z,w by columns qx,qy,qz,qw
    F[6, 7] += h * wz
    F[6, 8] -= h * wy
    F[6, 9] += h * wx
    F[7, 6] -= h * wz
    F[7, 8] += h * wx
    F[7, 9] += h * wy
    F[8, 6] += h * wy
    F[8, 7] -= h * wx
    F[8, 9] += h * wz
    F[9, 6] -= h * wx
    F[9, 7] -= h * wy
    F[9, 8] -= h * wz

    # d(q * (w, 0)) / dw: left-multiplication by q restricted to the vector part
    F[6, 10] = h * qw
    F[6, 11] = -h * qz
    F[6, 12] = h * qy
    F[7, 10] = h * qz
    F[7, 11] = h * qw
    F[7, 12] = -h * qx
    F[8, 10] = -h * qy
    F[8, 11] = h * qx
    F[8, 12] = h * qw
    F[9, 10] = -h * qx
    F[9, 11] = -h * qy
    F[9, 12] = -h * qz
    return F


def measurement_matrix():
    """7x13 observation matrix selecting position and quaternion."""
    H = np.zeros((MEAS_DIM, STATE_DIM))
    H[0:3, 0:3] = np.eye(3)
    H[3:7, 6:10] = np.eye(4)
    return H


_H = measurement_matrix()
_H_T = _H.T


def ekf_predict(state: FilterState, dt: float, noise: NoiseConfig, q_scale: float = 1.0) -> FilterState:
    """Propagate mean and covariance through the motion model.

    `q_scale` inflates the process covariance for this step; tracking code
    passes loss_q_scale while the target is unobserved.
    """
    if not np.isfinite(state.x).all():
        raise ValueError("non-finite filter state")
    x = process_function(state.x, dt)
    x[_Q] = quat_normalize(x[_Q])
    F = process_jacobian(state.x, dt)
    P = F @ state.P @ F.T + np.diag(noise.q_diag * q_scale)
    P = 0.5 * (P + P.T)
    return FilterState(x=x, P=P, last_update_time=state.last_update_time)


def ekf_update(
    state: FilterState,
    m: PoseMeasurement,
    noise: NoiseConfig,
    r_scale: float = 1.0,
) -> FilterState:
    """Condition the state on a pose measurement.

    The measured quaternion is flipped onto the hemisphere of the prior before
    the residual is formed, and the posterior quaternion is renormalized.
    `r_scale` inflates the measurement covariance (loss-mode refeeds).
    """
    x = state.x
    z = np.empty(MEAS_DIM)
    z[0:3] = m.pose.position
    zq = np.asarray(m.pose.orientation, dtype=float)
    if float(x[_Q] @ zq) < 0.0:
        zq = -zq
    z[3:7] = zq

    y = z - x[[0, 1, 2, 6, 7, 8, 9]]
    PHt = state.P @ _H_T
    S = PHt[[0, 1, 2, 6, 7, 8, 9], :] + np.diag(noise.r_diag * r_scale)
    S = 0.5 * (S + S.T)
    try:
        K = np.linalg.solve(S, PHt.T).T
    except np.linalg.LinAlgError as exc:
        raise FilterDivergence("singular innovation covariance") from exc

    x_new = x + K @ y
    x_new[_Q] = quat_normalize(x_new[_Q])
    P = (np.eye(STATE_DIM) - K @ _H) @ state.P
    P = 0.5 * (P + P.T)
    return FilterState(x=x_new, P=P, last_update_time=m.timestamp)


def state_pose(state: FilterState) -> Pose:
    return Pose(state.x[_P].copy(), quat_normalize(state.x[_Q]))


def state_velocity(state: FilterState):
    return state.x[_V].copy()


def clamped_estimate(
    state: FilterState,
    prev_emitted: Pose,
    dt: float,
    v_clamp: float = 0.03,
    omega_clamp: float = 0.5,
) -> Pose:
    """Rate-limit the emitted pose toward the filter mean.

    The returned pose moves from prev_emitted toward the mean by at most
    v_clamp * dt in translation and omega_clamp * dt in rotation.
    """
    mean = state_pose(state)
    step = mean.position - prev_emitted.position
    d = math.sqrt(float(step @ step))
    max_d = v_clamp * dt
    if d > max_d:
        pos = prev_emitted.position + step * (max_d / d)
    else:
        pos = mean.position
    ang = geodesic_angle(prev_emitted.orientation, mean.orientation)
    max_ang = omega_clamp * dt
    if ang > max_ang:
        q = quat_slerp(prev_emitted.orientation, mean.orientation, max_ang / ang)
    else:
        q = mean.orientation
    return Pose(pos, quat_normalize(q))


def refeed_scale(noise: NoiseConfig, consecutive_loss_ticks: int) -> float:
    """Measurement-covariance inflation after k consecutive loss ticks."""
    return min(noise.refeed_rho ** max(consecutive_loss_ticks, 1), noise.refeed_cap)
