"""IMU preintegration between keyframes on SO(3) x R^3.

The integrator is left-Riemann over successive sample intervals: sample k's
rates are held constant on [t_k, t_{k+1}).  Relative quantities are expressed
in the body frame at the span start:

  alpha  accumulated position offset (gravity-free, m)
  beta   accumulated velocity offset (gravity-free, m/s)
  gamma  rotation from span-end body frame to span-start body frame

A first-order gyro-bias correction of gamma is available without
re-integration through jac_gamma_bg (see apply_gyro_bias); exact correction is
re-integration with the bias passed in.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import exp_so3, project_to_so3, right_jacobian_so3

_REORTHO_EVERY = 100  # polar re-projection cadence, keeps gamma orthonormal


@dataclass(frozen=True)
class ImuSample:
    """One IMU reading: timestamp (s), body rates (rad/s), specific force (m/s^2)."""
    timestamp: float
    angular_velocity: np.ndarray
    linear_acceleration: np.ndarray


@dataclass(frozen=True)
class Preintegration:
    """Relative motion of one keyframe pair in the start body frame."""
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    jac_gamma_bg: np.ndarray
    dt_total: float

    def __post_init__(self):
        if self.dt_total < 0:
            raise ValueError("negative span duration")


def preintegrate_arrays(
    timestamps: np.ndarray,
    gyro: np.ndarray,
    accel: np.ndarray,
    gyro_bias: np.ndarray | None = None,
    accel_bias: np.ndarray | None = None,
) -> Preintegration:
    """Integrate raw sample arrays; timestamps (n,) s, gyro/accel (n, 3).

    The optional biases are subtracted from the measurements before
    integration.  A single sample yields the identity preintegration.
    """
    t = np.asarray(timestamps, dtype=float)
    w = np.asarray(gyro, dtype=float)
    a = np.asarray(accel, dtype=float)
    if t.size == 0:
        raise ValueError("empty IMU span")
    if t.size != w.shape[0] or t.size != a.shape[0]:
        raise ValueError("sample arrays must have matching lengths")
    dts = np.diff(t)
    if np.any(dts <= 0):
        bad = int(np.argmax(dts <= 0))
        raise ValueError(f"non-increasing timestamps at sample {bad + 1}")
    if gyro_bias is not None:
        w = w - np.asarray(gyro_bias, dtype=float)
    if accel_bias is not None:
        a = a - np.asarray(accel_bias, dtype=float)

    alpha = np.zeros(3)
    beta = np.zeros(3)
    gamma = np.eye(3)
    jac = np.zeros((3, 3))
    for k, dt in enumerate(dts):
        acc = gamma @ a[k]
        alpha = alpha + beta * dt + 0.5 * acc * dt * dt
        beta = beta + acc * dt
        phi = w[k] * dt
        inc = exp_so3(phi)
        jac = inc.T @ jac - right_jacobian_so3(phi) * dt
        gamma = gamma @ inc
        if (k + 1) % _REORTHO_EVERY == 0:
            gamma = project_to_so3(gamma)
    return Preintegration(alpha, beta, gamma, jac, float(t[-1] - t[0]))


def preintegrate(
    samples: Sequence[ImuSample],
    gyro_bias: np.ndarray | None = None,
    accel_bias: np.ndarray | None = None,
) -> Preintegration:
    """Integrate an ordered ImuSample sequence (see preintegrate_arrays)."""
    if len(samples) == 0:
        raise ValueError("empty IMU span")
    t = np.array([s.timestamp for s in samples])
    w = np.array([s.angular_velocity for s in samples])
    a = np.array([s.linear_acceleration for s in samples])
    return preintegrate_arrays(t, w, a, gyro_bias=gyro_bias, accel_bias=accel_bias)


def apply_gyro_bias(p: Preintegration, bg: np.ndarray) -> np.ndarray:
    """First-order bias-corrected rotation: gamma as if integrated with rates - bg."""
    return p.gamma @ exp_so3(p.jac_gamma_bg @ np.asarray(bg, dtype=float))


def predict_state(
    prev_state: tuple[np.ndarray, np.ndarray],
    p: Preintegration,
    gravity: np.ndarray,
    rot_start: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Propagate (position, velocity) across one span.

    prev_state holds the span-start position and velocity in the reference
    frame; rot_start is the rotation from the span-start body frame to the
    reference frame.  gravity is the reference-frame vector that an
    accelerometer at rest reports (pointing away from the earth, |g| = G).
    Returns (position, velocity, rotation) at the span end.
    """
    pos, vel = prev_state
    gravity = np.asarray(gravity, dtype=float)
    dt = p.dt_total
    pos_j = pos + vel * dt - 0.5 * gravity * dt * dt + rot_start @ p.alpha
    vel_j = vel - gravity * dt + rot_start @ p.beta
    rot_j = rot_start @ p.gamma
    return pos_j, vel_j, rot_j
