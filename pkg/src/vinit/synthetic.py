"""Synthetic scenario generator: the verification oracle for the pipeline.

Trajectories are analytic (position and Euler angles with closed-form first
and second derivatives), so IMU samples carry no numerical-differentiation
noise.  Ground truth is then DEFINED by propagating those noise-free samples
through the same discrete kinematic recursion the preintegrator uses; a
noise-free run is therefore consistent with the estimator's model down to
float precision instead of to the time-discretization error.

World frame is gravity aligned, z up; the accelerometer senses +G on the
z axis at rest.  Timestamps live on an integer-nanosecond grid with the
keyframe period an exact multiple of the IMU period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bias import Extrinsics
from .dataset import GroundTruth, InitSegment, KeyframeObservations
from .errors import ScenarioError
from .geometry import exp_so3
from .uncertainty import CameraIntrinsics

_TRAJECTORIES = ("sinusoid", "circle", "spline", "rotation_only", "translation_only")

_DEFAULT_R_BC = np.array([[0.0, 0.0, 1.0],
                          [-1.0, 0.0, 0.0],
                          [0.0, -1.0, 0.0]])
_DEFAULT_P_BC = np.array([0.05, -0.02, 0.01])


@dataclass
class ScenarioConfig:
    trajectory: str = "sinusoid"
    duration: float = 2.25                 # s; covers kf_count keyframes at kf_rate
    imu_rate: float = 200.0                # Hz
    frame_rate: float = 20.0               # Hz (camera; keyframes are a subset)
    kf_rate: float = 4.0                   # Hz
    n_landmarks: int = 150
    pixel_sigma_major: float = 0.0         # px; 0 disables pixel noise
    pixel_var_ratio: float = 10.0          # major/minor eigenvalue ratio of the 2x2 cov
    gyro_bias: tuple = (0.02, -0.01, 0.03)     # rad/s
    accel_bias: tuple = (0.0, 0.0, 0.0)        # m/s^2
    gyro_noise_density: float = 0.0        # rad/s/sqrt(Hz); 0 disables
    accel_noise_density: float = 0.0       # m/s^2/sqrt(Hz)
    gravity_magnitude: float = 9.81
    translation_scale: float = 2.5         # true metric scale of exported translations
    seed: int = 0
    fu: float = 458.0
    fv: float = 457.0
    cu: float = 376.0
    cv: float = 240.0
    width: int = 752
    height: int = 480
    r_bc: np.ndarray = field(default_factory=lambda: _DEFAULT_R_BC.copy())
    p_bc: np.ndarray = field(default_factory=lambda: _DEFAULT_P_BC.copy())

    def __post_init__(self):
        if self.trajectory not in _TRAJECTORIES:
            raise ScenarioError(
                f"unknown trajectory {self.trajectory!r}; choose from {_TRAJECTORIES}"
            )
        if self.imu_rate < self.frame_rate:
            raise ScenarioError("imu_rate must be >= frame_rate")
        if self.frame_rate < self.kf_rate:
            raise ScenarioError("frame_rate must be >= kf_rate")
        step = self.imu_rate / self.kf_rate
        if abs(step - round(step)) > 1e-9:
            raise ScenarioError("imu_rate must be an integer multiple of kf_rate")
        if self.duration * self.kf_rate < 1.0:
            raise ScenarioError("duration too short for two keyframes")

    @property
    def kf_count(self) -> int:
        return int(math.floor(self.duration * self.kf_rate + 1e-9)) + 1

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        """Plain-text key=value scenario file; '#' starts a comment."""
        path = Path(path)
        if not path.exists():
            raise ScenarioError(f"{path}: file not found")
        kwargs = {}
        valid = set(cls.__dataclass_fields__)
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                text = raw.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ScenarioError(f"{path}:{lineno}: expected key=value")
                key, val = [s.strip() for s in text.split("=", 1)]
                if key not in valid:
                    raise ScenarioError(f"{path}:{lineno}: unknown key {key!r}")
                kwargs[key] = _parse_value(key, val, path, lineno)
        return cls(**kwargs)


def _parse_value(key, val, path, lineno):
    fields = ScenarioConfig.__dataclass_fields__
    ftype = fields[key].type
    try:
        if key in ("gyro_bias", "accel_bias"):
            parts = [float(p) for p in val.split(",")]
            if len(parts) != 3:
                raise ValueError("expected 3 comma-separated numbers")
            return tuple(parts)
        if key in ("r_bc", "p_bc"):
            parts = [float(p) for p in val.split(",")]
            if key == "r_bc":
                if len(parts) != 9:
                    raise ValueError("expected 9 comma-separated numbers")
                return np.array(parts).reshape(3, 3)
            if len(parts) != 3:
                raise ValueError("expected 3 comma-separated numbers")
            return np.array(parts)
        if ftype == "str":
            return val
        if ftype == "int":
            return int(val)
        return float(val)
    except ValueError as exc:
        raise ScenarioError(f"{path}:{lineno}: bad value for {key}: {exc}") from None


class _Trajectory:
    """Analytic pose with closed-form derivatives, world frame, z up."""

    def __init__(self, kind: str, rng: np.random.Generator):
        self.kind = kind
        # randomized phases keep Monte-Carlo segments distinct while the
        # motion envelope stays controlled
        self.phase = rng.uniform(0.0, 2.0 * np.pi, size=6)
        if kind == "spline":
            # smooth pseudo-random path: seeded three-term sine series per axis
            self.amp_p = rng.uniform(0.15, 0.45, size=(3, 3))
            self.om_p = rng.uniform(1.5, 5.0, size=(3, 3))
            self.ph_p = rng.uniform(0.0, 2.0 * np.pi, size=(3, 3))
            self.amp_e = rng.uniform(0.05, 0.2, size=(3, 3))
            self.om_e = rng.uniform(1.0, 4.0, size=(3, 3))
            self.ph_e = rng.uniform(0.0, 2.0 * np.pi, size=(3, 3))

    def position(self, t: np.ndarray):
        """Returns (p, v, a), each (len(t), 3)."""
        t = np.asarray(t, dtype=float)
        if self.kind in ("rotation_only",):
            z = np.zeros((len(t), 3))
            return z, z.copy(), z.copy()
        if self.kind == "circle":
            r, om = 1.0, 1.2
            c, s = np.cos(om * t + self.phase[0]), np.sin(om * t + self.phase[0])
            p = np.column_stack([r * c, r * s, 0.12 * np.sin(2 * om * t)])
            v = np.column_stack([-r * om * s, r * om * c,
                                 0.24 * om * np.cos(2 * om * t)])
            a = np.column_stack([-r * om * om * c, -r * om * om * s,
                                 -0.48 * om * om * np.sin(2 * om * t)])
            return p, v, a
        if self.kind == "spline":
            arg = self.om_p[None, :, :] * t[:, None, None] + self.ph_p[None, :, :]
            p = np.sum(self.amp_p * np.sin(arg), axis=2)
            v = np.sum(self.amp_p * self.om_p * np.cos(arg), axis=2)
            a = -np.sum(self.amp_p * self.om_p ** 2 * np.sin(arg), axis=2)
            return p, v, a
        # sinusoid / translation_only
        amp = np.array([0.4, 0.3, 0.25])
        om = np.array([2.4, 3.1, 1.9])
        ph = self.phase[:3]
        arg = om[None, :] * t[:, None] + ph[None, :]
        p = amp * np.sin(arg)
        v = amp * om * np.cos(arg)
        a = -amp * om ** 2 * np.sin(arg)
        return p, v, a

    def euler(self, t: np.ndarray):
        """ZYX Euler angles (yaw, pitch, roll) and their rates, (len(t), 3)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "translation_only":
            z = np.zeros((len(t), 3))
            return z, z.copy()
        if self.kind == "spline":
            arg = self.om_e[None, :, :] * t[:, None, None] + self.ph_e[None, :, :]
            e = np.sum(self.amp_e * np.sin(arg), axis=2)
            de = np.sum(self.amp_e * self.om_e * np.cos(arg), axis=2)
            return e, de
        if self.kind == "circle":
            om = 1.2
            yaw = om * t + self.phase[0] + np.pi / 2.0
            pitch = 0.1 * np.sin(1.7 * t + self.phase[4])
            roll = 0.12 * np.sin(2.3 * t + self.phase[5])
            e = np.column_stack([yaw, pitch, roll])
            de = np.column_stack([np.full(len(t), om),
                                  0.17 * np.cos(1.7 * t + self.phase[4]),
                                  0.276 * np.cos(2.3 * t + self.phase[5])])
            return e, de
        amp = np.array([0.3, 0.25, 0.2])
        om = np.array([2.2, 2.9, 1.7])
        ph = self.phase[3:6]
        arg = om[None, :] * t[:, None] + ph[None, :]
        e = amp * np.sin(arg)
        de = amp * om * np.cos(arg)
        return e, de


def _euler_zyx_to_matrix(yaw, pitch, roll):
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    r = np.empty(np.shape(yaw) + (3, 3))
    r[..., 0, 0] = cy * cp
    r[..., 0, 1] = cy * sp * sr - sy * cr
    r[..., 0, 2] = cy * sp * cr + sy * sr
    r[..., 1, 0] = sy * cp
    r[..., 1, 1] = sy * sp * sr + cy * cr
    r[..., 1, 2] = sy * sp * cr - cy * sr
    r[..., 2, 0] = -sp
    r[..., 2, 1] = cp * sr
    r[..., 2, 2] = cp * cr
    return r


def _body_rates(euler, rates):
    """Body angular velocity for ZYX angles (yaw, pitch, roll)."""
    yaw_d, pitch_d, roll_d = rates[:, 0], rates[:, 1], rates[:, 2]
    pitch, roll = euler[:, 1], euler[:, 2]
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    wx = roll_d - sp * yaw_d
    wy = cr * pitch_d + sr * cp * yaw_d
    wz = -sr * pitch_d + cr * cp * yaw_d
    return np.column_stack([wx, wy, wz])


def _sample_imu(traj: _Trajectory, t: np.ndarray, gravity_magnitude: float):
    """Noise-free body rates and specific force on the given time grid."""
    _, _, a_w = traj.position(t)
    e, de = traj.euler(t)
    r_wb = _euler_zyx_to_matrix(e[:, 0], e[:, 1], e[:, 2])
    omega = _body_rates(e, de)
    g_up = np.array([0.0, 0.0, gravity_magnitude])
    accel = np.einsum("kij,kj->ki", r_wb.transpose(0, 2, 1), a_w + g_up)
    return omega, accel, r_wb


def _propagate(t, omega, accel, r0, p0, v0, gravity_magnitude):
    """Discrete kinematic propagation on the IMU grid (defines ground truth)."""
    g = np.array([0.0, 0.0, gravity_magnitude])
    n = len(t)
    rot = np.empty((n, 3, 3))
    pos = np.empty((n, 3))
    vel = np.empty((n, 3))
    rot[0], pos[0], vel[0] = r0, p0, v0
    for k in range(n - 1):
        dt = t[k + 1] - t[k]
        acc = rot[k] @ accel[k] - g
        pos[k + 1] = pos[k] + vel[k] * dt + 0.5 * acc * dt * dt
        vel[k + 1] = vel[k] + acc * dt
        rot[k + 1] = rot[k] @ exp_so3(omega[k] * dt)
    return rot, pos, vel


def _feature_covariances(rng, n, sigma_major, var_ratio):
    """Random-orientation anisotropic 2x2 covariances, packed [c11, c12, c22]."""
    theta = rng.uniform(0.0, np.pi, size=n)
    v_major = sigma_major ** 2
    v_minor = v_major / var_ratio
    c, s = np.cos(theta), np.sin(theta)
    c11 = v_major * c * c + v_minor * s * s
    c22 = v_major * s * s + v_minor * c * c
    c12 = (v_major - v_minor) * c * s
    return np.column_stack([c11, c12, c22])


def _sample_noise_2d(rng, cov_packed):
    """One draw per row from N(0, cov)."""
    n = len(cov_packed)
    cov = np.empty((n, 2, 2))
    cov[:, 0, 0] = cov_packed[:, 0]
    cov[:, 0, 1] = cov_packed[:, 1]
    cov[:, 1, 0] = cov_packed[:, 1]
    cov[:, 1, 1] = cov_packed[:, 2]
    chol = np.linalg.cholesky(cov + 1e-300 * np.eye(2))
    z = rng.standard_normal((n, 2))
    return np.einsum("kij,kj->ki", chol, z)


def generate(config: ScenarioConfig) -> tuple[InitSegment, GroundTruth]:
    """Build one synthetic segment plus its ground truth."""
    rng = np.random.default_rng(config.seed)
    traj = _Trajectory(config.trajectory, rng)
    g_mag = config.gravity_magnitude

    imu_dt_ns = int(round(1e9 / config.imu_rate))
    kf_dt_ns = int(round(1e9 / config.kf_rate))
    if kf_dt_ns % imu_dt_ns != 0:
        raise ScenarioError("keyframe period must sit on the IMU timestamp grid")
    n_kf = config.kf_count
    n_imu = (n_kf - 1) * (kf_dt_ns // imu_dt_ns) + 1
    imu_t_ns = np.arange(n_imu, dtype=np.int64) * imu_dt_ns
    kf_t_ns = np.arange(n_kf, dtype=np.int64) * kf_dt_ns
    t = imu_t_ns * 1e-9

    omega, accel, r_wb_analytic = _sample_imu(traj, t, g_mag)
    p0, v0_all, _ = traj.position(t[:1])
    rot, pos, vel = _propagate(
        t, omega, accel, r_wb_analytic[0], p0[0], v0_all[0], g_mag
    )

    stride = kf_dt_ns // imu_dt_ns
    kf_idx = np.arange(n_kf) * stride
    kf_rot_w = rot[kf_idx]
    kf_pos_w = pos[kf_idx]
    kf_vel_w = vel[kf_idx]

    # measured IMU stream: bias plus discrete white noise
    gyro = omega + np.asarray(config.gyro_bias, dtype=float)
    acc_meas = accel + np.asarray(config.accel_bias, dtype=float)
    if config.gyro_noise_density > 0.0:
        sigma = config.gyro_noise_density * math.sqrt(config.imu_rate)
        gyro = gyro + rng.normal(0.0, sigma, size=gyro.shape)
    if config.accel_noise_density > 0.0:
        sigma = config.accel_noise_density * math.sqrt(config.imu_rate)
        acc_meas = acc_meas + rng.normal(0.0, sigma, size=acc_meas.shape)

    extr = Extrinsics(r_bc=np.array(config.r_bc, dtype=float),
                      p_bc=np.array(config.p_bc, dtype=float))
    intr = CameraIntrinsics.from_pinhole(config.fu, config.fv, config.cu, config.cv)

    # camera poses in world, then everything in the first camera frame F_c0
    cam_rot_w = kf_rot_w @ extr.r_bc
    cam_pos_w = kf_pos_w + np.einsum("kij,j->ki", kf_rot_w, extr.p_bc)
    r_c0w = cam_rot_w[0].T
    o = cam_pos_w[0]
    cam_pos_c0 = (cam_pos_w - o) @ r_c0w.T
    body_rot_c0 = np.einsum("ij,kjl->kil", r_c0w, kf_rot_w)
    body_pos_c0 = (kf_pos_w - o) @ r_c0w.T
    body_vel_c0 = kf_vel_w @ r_c0w.T
    gravity_c0 = r_c0w @ np.array([0.0, 0.0, g_mag])

    landmarks_w = _sample_landmarks(rng, config, cam_rot_w, cam_pos_w)
    observations, n_behind, n_total = _project_tracks(
        rng, config, intr, cam_rot_w, cam_pos_w, landmarks_w
    )
    if n_behind > 0.5 * n_total:
        raise ScenarioError("bad scenario: landmarks behind camera for >50% of frames")
    _check_shared(observations, min_shared=10)

    seg = InitSegment(
        kf_times_ns=kf_t_ns,
        imu_times_ns=imu_t_ns,
        imu_gyro=gyro,
        imu_accel=acc_meas,
        span_bounds=np.column_stack([kf_idx[:-1], kf_idx[1:]]),
        observations=observations,
        cam_translations=cam_pos_c0 / config.translation_scale,
        intrinsics=intr,
        extrinsics=extr,
    )
    gt = GroundTruth(
        rotations=body_rot_c0,
        positions=body_pos_c0,
        velocities=body_vel_c0,
        gravity=gravity_c0,
        gyro_bias=np.asarray(config.gyro_bias, dtype=float),
        scale=config.translation_scale,
    )
    return seg, gt


def _sample_landmarks(rng, config, cam_rot_w, cam_pos_w):
    """Depth-shell points anchored to randomly chosen keyframe views.

    Anchoring each point inside one keyframe's own frustum keeps the cloud
    visible even when the heading sweeps a wide arc over the segment; a
    single shell ahead of the mean view direction is outside the field of
    view of the early and late frames once the sweep exceeds it.
    """
    n = config.n_landmarks
    anchor = rng.integers(0, len(cam_rot_w), size=n)
    right = cam_rot_w[anchor, :, 0]
    down = cam_rot_w[anchor, :, 1]
    fwd = cam_rot_w[anchor, :, 2]
    depth = rng.uniform(4.0, 10.0, size=n)
    half_u = 0.75 * (config.width / 2.0) / config.fu
    half_w = 0.75 * (config.height / 2.0) / config.fv
    du = rng.uniform(-half_u, half_u, size=n) * depth
    dw = rng.uniform(-half_w, half_w, size=n) * depth
    return (cam_pos_w[anchor] + depth[:, None] * fwd
            + du[:, None] * right + dw[:, None] * down)


def _project_tracks(rng, config, intr, cam_rot_w, cam_pos_w, landmarks_w):
    n_kf = len(cam_rot_w)
    n_lm = len(landmarks_w)
    cov_packed = None
    if config.pixel_sigma_major > 0.0:
        cov_packed = _feature_covariances(
            rng, n_lm, config.pixel_sigma_major, config.pixel_var_ratio
        )
    observations = []
    n_behind = 0
    for k in range(n_kf):
        local = (landmarks_w - cam_pos_w[k]) @ cam_rot_w[k]
        depth = local[:, 2]
        behind = depth <= 0.1
        n_behind += int(np.sum(behind))
        uv = np.empty((n_lm, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            uv[:, 0] = intr.k[0, 0] * local[:, 0] / depth + intr.k[0, 2]
            uv[:, 1] = intr.k[1, 1] * local[:, 1] / depth + intr.k[1, 2]
        margin = 4.0 * max(config.pixel_sigma_major, 1.0)
        visible = (
            ~behind
            & (uv[:, 0] >= -margin) & (uv[:, 0] <= config.width + margin)
            & (uv[:, 1] >= -margin) & (uv[:, 1] <= config.height + margin)
        )
        ids = np.flatnonzero(visible).astype(np.int64)
        uv_vis = uv[visible]
        cov_vis = None
        if cov_packed is not None:
            cov_vis = cov_packed[visible]
            uv_vis = uv_vis + _sample_noise_2d(rng, cov_vis)
        observations.append(
            KeyframeObservations(track_ids=ids, uv=uv_vis, cov=cov_vis)
        )
    return observations, n_behind, n_kf * n_lm


def _check_shared(observations, min_shared: int):
    for i in range(len(observations) - 1):
        common = np.intersect1d(
            observations[i].track_ids, observations[i + 1].track_ids,
            assume_unique=True,
        )
        if len(common) < min_shared:
            raise ScenarioError(
                f"bad scenario: keyframe pair ({i}, {i + 1}) shares only "
                f"{len(common)} landmarks (need {min_shared})"
            )


def make_config(**overrides) -> ScenarioConfig:
    """Convenience wrapper used by demos and tests."""
    return ScenarioConfig(**overrides)


def with_overrides(config: ScenarioConfig, **overrides) -> ScenarioConfig:
    return replace(config, **overrides)
