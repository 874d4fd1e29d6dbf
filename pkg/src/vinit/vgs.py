"""Linear recovery of per-keyframe velocity, gravity, and metric scale.

Given bias-corrected keyframe rotations, up-to-scale camera translations, and
per-pair preintegrated IMU terms, each consecutive pair contributes six linear
equations in the stacked unknowns x = [v_0 .. v_{N-1}, g, s]:

  position:  v_i dt - 0.5 g dt^2 - s (p~_{i+1} - p~_i)
                 = -R_i alpha - (R_{i+1} - R_i) p_bc
  velocity:  v_i - v_{i+1} - g dt = -R_i beta

with R_i the body-to-reference rotations and p~ the up-to-scale camera
positions.  No gravity-norm constraint is imposed here; that happens in the
refinement stage.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bias import Extrinsics
from .errors import UnobservableError
from .preintegration import Preintegration

MIN_KEYFRAMES = 4


@dataclass(frozen=True)
class SegmentPoses:
    """Per-keyframe rotations R_{c0 b_i} (N,3,3), up-to-scale camera positions
    (N,3), and the N-1 consecutive-pair preintegrations."""
    rotations: np.ndarray
    cam_translations: np.ndarray
    preints: tuple[Preintegration, ...]

    def __post_init__(self):
        n = len(self.rotations)
        if len(self.cam_translations) != n or len(self.preints) != n - 1:
            raise ValueError("inconsistent segment pose arrays")


@dataclass(frozen=True)
class VgsSolution:
    velocities: np.ndarray
    gravity: np.ndarray
    scale: float
    residual_norm: float
    rank: int


def solve_vgs(poses: SegmentPoses, extrinsics: Extrinsics) -> VgsSolution:
    """Least-squares solve for velocities, gravity vector, and scale."""
    n = len(poses.rotations)
    if n < MIN_KEYFRAMES:
        raise UnobservableError(f"need at least {MIN_KEYFRAMES} keyframes, got {n}")
    rots = np.asarray(poses.rotations, dtype=float)
    trans = np.asarray(poses.cam_translations, dtype=float)
    p_bc = np.asarray(extrinsics.p_bc, dtype=float)

    n_unknowns = 3 * n + 4
    rows = 6 * (n - 1)
    a = np.zeros((rows, n_unknowns))
    b = np.zeros(rows)
    eye = np.eye(3)
    g_col = 3 * n
    s_col = 3 * n + 3

    for i, pre in enumerate(poses.preints):
        dt = pre.dt_total
        r_i = rots[i]
        r_j = rots[i + 1]
        lever = (r_j - r_i) @ p_bc
        rp = slice(6 * i, 6 * i + 3)       # position block
        rv = slice(6 * i + 3, 6 * i + 6)   # velocity block

        a[rp, 3 * i:3 * i + 3] = dt * eye
        a[rp, g_col:g_col + 3] = -0.5 * dt * dt * eye
        a[rp, s_col] = -(trans[i + 1] - trans[i])
        b[rp] = -(r_i @ pre.alpha) - lever

        a[rv, 3 * i:3 * i + 3] = eye
        a[rv, 3 * (i + 1):3 * (i + 1) + 3] = -eye
        a[rv, g_col:g_col + 3] = -dt * eye
        b[rv] = -(r_i @ pre.beta)

    x, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < n_unknowns:
        raise UnobservableError(
            f"scale/gravity unobservable: system rank {rank} < {n_unknowns} "
            "(insufficient motion excitation)"
        )
    scale = float(x[s_col])
    if scale <= 0:
        raise UnobservableError(f"non-positive scale recovered ({scale:.3e})")
    residual = float(np.linalg.norm(a @ x - b))
    return VgsSolution(
        velocities=x[:3 * n].reshape(n, 3),
        gravity=x[g_col:g_col + 3].copy(),
        scale=scale,
        residual_norm=residual,
        rank=int(rank),
    )
