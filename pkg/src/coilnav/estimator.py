"""Pose Kalman filter fusing controller predictions with sparse measurements.

The filter state is the pose (x, y, theta) only.  Its prediction step uses
the controller's one-step-ahead pose from the previous cycle as the
propagated mean; when a measurement arrives, a standard linear update with
identity observation and angle-wrapped innovation follows.  When feedback
is absent (low frame rates), the prediction is used directly and the
covariance keeps inflating by the process noise.  Velocities are
reconstructed afterwards by differencing consecutive pose estimates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .angles import wrap_angle

log = logging.getLogger(__name__)

# Default per-step prediction spread, matched to the closed-loop accuracy
# of the controller's one-step predictions in this simulator (they track
# truth to well under these bounds, so the filter leans on them hard and
# measurement noise is strongly smoothed).
DEFAULT_SIGMA_PRED_MM = 0.1
DEFAULT_SIGMA_PRED_DEG = 0.5

_COV_FLOOR = 1e-12


class EstimatorFaultError(RuntimeError):
    """Non-finite input reached the filter."""


class InvalidIntervalError(ValueError):
    """Rate reconstruction asked for a non-positive time interval."""


@dataclass(frozen=True)
class SensorReading:
    """One (possibly noisy) pose measurement in mm/rad."""

    t: float
    x: float
    y: float
    theta: float
    valid: bool = True

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class PoseEstimate:
    """Filtered pose with covariance; ``source`` tells fused from predicted."""

    pose: np.ndarray  # (3,) mm, mm, rad
    covariance: np.ndarray  # (3, 3), mm^2 / rad^2 units
    source: str = "fused"


def default_process_cov() -> np.ndarray:
    return np.diag(
        [DEFAULT_SIGMA_PRED_MM**2, DEFAULT_SIGMA_PRED_MM**2, np.deg2rad(DEFAULT_SIGMA_PRED_DEG) ** 2]
    )


def measurement_cov(sigma_mm: float, sigma_theta_rad: float) -> np.ndarray:
    """Diagonal measurement covariance with a small floor so sigma=0 stays well-posed."""
    return np.diag(
        [
            max(sigma_mm**2, _COV_FLOOR),
            max(sigma_mm**2, _COV_FLOOR),
            max(sigma_theta_rad**2, _COV_FLOOR),
        ]
    )


def _ensure_psd(P: np.ndarray) -> np.ndarray:
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() < 0.0:
        log.warning("covariance lost positive semi-definiteness (min eig %.3e); flooring", w.min())
        w = np.maximum(w, _COV_FLOOR)
        P = V @ np.diag(w) @ V.T
    return P


def kf_step(
    prev: PoseEstimate,
    predicted_pose,
    measurement: SensorReading | None,
    Q: np.ndarray,
    Rm: np.ndarray,
) -> PoseEstimate:
    """One predict(+update) cycle of the pose filter.

    ``predicted_pose`` is the controller's pose prediction for the current
    instant and serves as the propagated mean; the propagated covariance is
    ``prev.covariance + Q``.  With a measurement the posterior follows the
    linear Kalman update with identity observation; without one the
    prediction is returned as-is with ``source='predicted'``.
    """
    pred = np.asarray(predicted_pose, dtype=float)[:3].copy()
    if not np.all(np.isfinite(pred)) or not np.all(np.isfinite(prev.pose)):
        raise EstimatorFaultError("non-finite pose input")
    P = prev.covariance + Q
    pred[2] = wrap_angle(pred[2])
    if measurement is None or not measurement.valid:
        return PoseEstimate(pose=pred, covariance=_ensure_psd(P), source="predicted")
    z = measurement.pose()
    if not np.all(np.isfinite(z)):
        raise EstimatorFaultError("non-finite measurement")
    innovation = z - pred
    innovation[2] = wrap_angle(innovation[2])
    S = P + Rm
    K = P @ np.linalg.inv(S)
    pose = pred + K @ innovation
    pose[2] = wrap_angle(pose[2])
    P_post = (np.eye(3) - K) @ P
    return PoseEstimate(pose=pose, covariance=_ensure_psd(P_post), source="fused")


def estimate_rates(current_pose, previous_pose, dt: float) -> tuple[float, float, float]:
    """Finite-difference velocities from consecutive poses, angle wrapped."""
    if dt <= 0:
        raise InvalidIntervalError(f"dt must be positive, got {dt}")
    cur = np.asarray(current_pose, dtype=float)
    prv = np.asarray(previous_pose, dtype=float)
    vx = (cur[0] - prv[0]) / dt
    vy = (cur[1] - prv[1]) / dt
    omega = wrap_angle(cur[2] - prv[2]) / dt
    return float(vx), float(vy), float(omega)
