"""End-to-end initializer: bias -> velocity/gravity/scale -> refinement.

Wall-clock accounting separates raw integration (a fixed streaming cost that
scales with IMU rate, not with the solvers) from the three solver stages, so
stage timings stay meaningful across IMU rates.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .bias import BiasEstimate, Extrinsics, KeyframePairProblem, estimate_bias
from .dataset import InitSegment
from .errors import UnobservableError
from .preintegration import Preintegration, preintegrate_arrays
from .refine import RefinementState, recover_velocities, refine_scale_gravity
from .vgs import SegmentPoses, VgsSolution, solve_vgs


@dataclass
class InitResult:
    """All recovered initial-state quantities, expressed in the first camera frame."""
    gyro_bias: np.ndarray            # (3,) rad/s
    rotations: np.ndarray            # (N,3,3) body orientation per keyframe
    velocities: np.ndarray           # (N,3) m/s
    gravity: np.ndarray              # (3,) sensed-up gravity vector
    scale: float
    mode: str
    refined: bool
    bias_estimate: BiasEstimate
    vgs: VgsSolution
    refinement: RefinementState | None
    timings: dict = field(default_factory=dict)   # stage -> seconds


def _pair_indices(n_kf: int, pairing: str) -> list[tuple[int, int]]:
    if pairing == "consecutive":
        return [(i, i + 1) for i in range(n_kf - 1)]
    if pairing == "all":
        return [(i, j) for i in range(n_kf - 1) for j in range(i + 1, n_kf)]
    raise ValueError(f"unknown pairing {pairing!r}; use 'consecutive' or 'all'")


def _preintegrate_pair(seg: InitSegment, i: int, j: int, bg: np.ndarray) -> Preintegration:
    a = seg.span_bounds[i][0]
    b = seg.span_bounds[j - 1][1]
    t0 = int(seg.kf_times_ns[0])
    t = (seg.imu_times_ns[a:b + 1] - t0) * 1e-9
    return preintegrate_arrays(
        t, seg.imu_gyro[a:b + 1], seg.imu_accel[a:b + 1], gyro_bias=bg
    )


def _camera_rotation_chain(
    seg: InitSegment, pairs: list[tuple[int, int]], preints: list[Preintegration]
) -> list[np.ndarray] | None:
    """R_{c0 c_i} per keyframe by chaining consecutive gamma through extrinsics."""
    consec = {i: pre for (i, j), pre in zip(pairs, preints) if j == i + 1}
    if any(i not in consec for i in range(seg.n_keyframes - 1)):
        return None
    r_bc = seg.extrinsics.r_bc
    rots = [np.eye(3)]
    for i in range(seg.n_keyframes - 1):
        rots.append(rots[-1] @ (r_bc.T @ consec[i].gamma @ r_bc))
    return rots


def _build_problems(
    seg: InitSegment,
    pairs: list[tuple[int, int]],
    preints: list[Preintegration],
    need_cov: bool,
) -> list[KeyframePairProblem]:
    # Up-to-scale visual translations aim the pnec weight variance; the raw
    # preintegrated alpha cannot (its gravity double integral swamps the
    # actual motion over a keyframe gap).
    rots_c0 = None
    if need_cov and seg.cam_translations is not None:
        rots_c0 = _camera_rotation_chain(seg, pairs, preints)
    problems = []
    for (i, j), pre in zip(pairs, preints):
        f_i, f_j, sigma3d = seg.bearing_arrays(i, j)
        if need_cov and sigma3d is None and len(f_i) > 0:
            raise ValueError(
                "pnec mode needs per-feature covariances; the track table has none"
            )
        hint = None
        if rots_c0 is not None:
            hint = rots_c0[i].T @ (seg.cam_translations[j] - seg.cam_translations[i])
        problems.append(
            KeyframePairProblem.from_arrays(
                f_i, f_j, sigma3d, pre, seg.extrinsics, p_ij_hint=hint
            )
        )
    return problems


def build_problems(
    seg: InitSegment,
    pairing: str = "consecutive",
    bg: np.ndarray | None = None,
    need_cov: bool = True,
) -> list[KeyframePairProblem]:
    """Preintegrate each keyframe pair and package it with its bearings.

    Convenience wrapper over the pairing / preintegration / feature steps of
    initialize_segment for callers that run the bias solver on its own.
    """
    bg = np.zeros(3) if bg is None else np.asarray(bg, dtype=float)
    pairs = _pair_indices(seg.n_keyframes, pairing)
    preints = [_preintegrate_pair(seg, i, j, bg) for i, j in pairs]
    return _build_problems(seg, pairs, preints, need_cov)


def initialize_segment(
    seg: InitSegment,
    mode: str = "pnec",
    refine: bool = True,
    pairing: str = "consecutive",
    gravity_magnitude: float = 9.81,
    bias_passes: int = 2,
    refine_iters: int = 4,
    init_bg: np.ndarray | None = None,
) -> InitResult:
    """Run the full initializer on one segment.

    bias_passes > 1 re-integrates the gyro stream at the previous estimate and
    solves for the remainder, removing the first-order bias-correction error
    of the preintegration Jacobian.
    """
    if mode not in ("nec", "pnec"):
        raise ValueError(f"unknown mode {mode!r}; use 'nec' or 'pnec'")
    if bias_passes < 1:
        raise ValueError("bias_passes must be >= 1")
    n_kf = seg.n_keyframes
    if n_kf < 4:
        raise UnobservableError("need at least 4 keyframes")
    pairs = _pair_indices(n_kf, pairing)
    timings = {
        "preintegration": 0.0, "features": 0.0, "bias": 0.0, "vgs": 0.0,
        "refine": 0.0,
    }

    bg = np.zeros(3) if init_bg is None else np.asarray(init_bg, dtype=float)
    bias_est = None
    for _ in range(bias_passes):
        t0 = time.perf_counter()
        preints = [_preintegrate_pair(seg, i, j, bg) for i, j in pairs]
        timings["preintegration"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        problems = _build_problems(seg, pairs, preints, need_cov=(mode == "pnec"))
        timings["features"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        est = estimate_bias(problems, mode=mode)
        timings["bias"] += time.perf_counter() - t0
        bg = bg + est.bg
        bias_est = BiasEstimate(
            bg=bg,
            final_objective=est.final_objective,
            iterations=est.iterations,
            converged=est.converged,
            objective_history=est.objective_history,
            problems_used=est.problems_used,
        )

    # final integration at the converged bias feeds the linear solves
    t0 = time.perf_counter()
    preints_c = [_preintegrate_pair(seg, i, i + 1, bg) for i in range(n_kf - 1)]
    timings["preintegration"] += time.perf_counter() - t0

    rotations = np.empty((n_kf, 3, 3))
    rotations[0] = seg.extrinsics.r_bc.T
    for i in range(n_kf - 1):
        rotations[i + 1] = rotations[i] @ preints_c[i].gamma

    t0 = time.perf_counter()
    poses = SegmentPoses(
        rotations=rotations,
        cam_translations=seg.cam_translations,
        preints=preints_c,
    )
    vgs = solve_vgs(poses, seg.extrinsics)
    timings["vgs"] += time.perf_counter() - t0

    refinement = None
    velocities = vgs.velocities
    gravity = vgs.gravity
    scale = vgs.scale
    if refine:
        t0 = time.perf_counter()
        refinement = refine_scale_gravity(
            poses,
            vgs.gravity,
            vgs.scale,
            seg.extrinsics,
            gravity_magnitude=gravity_magnitude,
            max_outer=refine_iters,
        )
        gravity = refinement.gravity
        scale = refinement.scale
        velocities = recover_velocities(poses, scale, gravity, seg.extrinsics)
        timings["refine"] += time.perf_counter() - t0

    return InitResult(
        gyro_bias=bg,
        rotations=rotations,
        velocities=velocities,
        gravity=gravity,
        scale=scale,
        mode=mode,
        refined=refine,
        bias_estimate=bias_est,
        vgs=vgs,
        refinement=refinement,
        timings=timings,
    )
