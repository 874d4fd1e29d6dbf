"""Scale and gravity refinement with a hard gravity-magnitude constraint.

The gravity direction is parameterized as a rotation R_{c0 I} applied to the
reference direction g_I = (0, 0, 1), scaled by the known magnitude G.  Around
the current R_{c0 I} only a two-dimensional tangent perturbation
d_theta = (dx, dy, 0) is observable.  Keyframe triples (i, j, k) eliminate the
unknown velocities, leaving per-triple linear rows

    [lam(i) | phi(i)] [s; d_theta_xy] = psi(i)

which are stacked and solved by SVD-backed least squares; the rotation is then
updated multiplicatively and the process repeated.  Velocities are recovered
afterwards from the refined (s, g) via the pairwise kinematic constraints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bias import Extrinsics
from .errors import UnobservableError
from .geometry import exp_so3, skew
from .vgs import SegmentPoses

_G_I = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class TripleRow:
    """One keyframe triple's contribution: 3 equations in (s, d_theta_xy)."""
    lam: np.ndarray    # (3,)  scale coefficient
    phi: np.ndarray    # (3,2) tangent-perturbation coefficients
    psi: np.ndarray    # (3,)  right-hand side


@dataclass(frozen=True)
class RefinementState:
    """Refined scale and gravity; gravity = magnitude * (r_c0i @ (0,0,1))."""
    r_c0i: np.ndarray
    gravity_magnitude: float
    scale: float
    delta_theta_xy: np.ndarray
    iterations: int

    @property
    def gravity(self) -> np.ndarray:
        """Gravity vector whose norm equals gravity_magnitude bit-exactly.

        The direction is the third column of r_c0i; the float components are
        nudged by at most one ulp so that np.linalg.norm returns the exact
        configured magnitude (a representable-vector constraint, not a
        tolerance).
        """
        direction = self.r_c0i[:, 2]
        direction = direction / np.linalg.norm(direction)
        return exact_norm_vector(direction, self.gravity_magnitude)


def exact_norm_vector(direction: np.ndarray, magnitude: float) -> np.ndarray:
    """Scale a unit direction so the result's norm equals magnitude exactly."""
    g = magnitude * np.asarray(direction, dtype=float)
    for _ in range(4):
        n = float(np.linalg.norm(g))
        if n == magnitude:
            return g
        g = g * (magnitude / n)
    # rounding can cycle; nudge components by single ulps to land exactly
    for k in range(3):
        for sign in (1.0, -1.0):
            cand = g.copy()
            cand[k] = np.nextafter(cand[k], sign * np.inf)
            if float(np.linalg.norm(cand)) == magnitude:
                return cand
    for k in range(3):
        for j in range(3):
            if j == k:
                continue
            for sk in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    cand = g.copy()
                    cand[k] = np.nextafter(cand[k], sk * np.inf)
                    cand[j] = np.nextafter(cand[j], sj * np.inf)
                    if float(np.linalg.norm(cand)) == magnitude:
                        return cand
    return g


def gravity_to_rotation(gravity: np.ndarray) -> np.ndarray:
    """Rotation taking the reference direction (0,0,1) onto gravity's direction."""
    g = np.asarray(gravity, dtype=float)
    norm = np.linalg.norm(g)
    if norm == 0:
        raise ValueError("zero gravity vector")
    g = g / norm
    axis = np.cross(_G_I, g)
    sin_a = np.linalg.norm(axis)
    cos_a = float(_G_I @ g)
    angle = np.arctan2(sin_a, cos_a)
    if sin_a < 1e-12:
        if cos_a > 0:
            return np.eye(3)
        return exp_so3(np.array([np.pi, 0.0, 0.0]))  # antiparallel: flip about x
    return exp_so3(axis / sin_a * angle)


def build_triple_rows(
    poses: SegmentPoses,
    r_c0i: np.ndarray,
    gravity_magnitude: float,
    extrinsics: Extrinsics,
) -> list[TripleRow]:
    """Rows for all consecutive keyframe triples at the current R_{c0 I}."""
    rots = np.asarray(poses.rotations, dtype=float)
    trans = np.asarray(poses.cam_translations, dtype=float)
    p_bc = np.asarray(extrinsics.p_bc, dtype=float)
    g_dir = r_c0i @ _G_I
    tilt = r_c0i @ skew(_G_I)  # perturbation of the direction; z column is zero
    rows = []
    for i in range(len(rots) - 2):
        pre_ij = poses.preints[i]
        pre_jk = poses.preints[i + 1]
        dt_ij = pre_ij.dt_total
        dt_jk = pre_jk.dt_total
        r_i, r_j, r_k = rots[i], rots[i + 1], rots[i + 2]
        w = dt_ij * dt_ij * dt_jk + dt_jk * dt_jk * dt_ij

        lam = (trans[i + 1] - trans[i]) * dt_jk - (trans[i + 2] - trans[i + 1]) * dt_ij
        phi = 0.5 * gravity_magnitude * w * tilt[:, :2]
        psi = (
            (r_j - r_i) @ p_bc * dt_jk
            - (r_k - r_j) @ p_bc * dt_ij
            + r_i @ pre_ij.alpha * dt_jk
            - r_i @ pre_ij.beta * (dt_ij * dt_jk)
            - r_j @ pre_jk.alpha * dt_ij
            + 0.5 * gravity_magnitude * w * g_dir
        )
        rows.append(TripleRow(lam=lam, phi=phi, psi=psi))
    return rows


def refine_scale_gravity(
    poses: SegmentPoses,
    gravity0: np.ndarray,
    scale0: float,
    extrinsics: Extrinsics,
    gravity_magnitude: float = 9.81,
    max_outer: int = 4,
    tol: float = 1e-8,
) -> RefinementState:
    """Iteratively refine scale and gravity direction from keyframe triples.

    gravity0 seeds the direction (its magnitude is discarded in favor of the
    constraint); scale0 is unused beyond sanity, since s is re-solved in full
    each round.  max_outer = 1 gives the single-shot variant.
    """
    if len(poses.rotations) < 3:
        raise UnobservableError("refinement needs at least 3 keyframes")
    if scale0 <= 0:
        raise ValueError("non-positive initial scale")
    r_c0i = gravity_to_rotation(gravity0)
    scale = float(scale0)
    delta = np.zeros(2)
    iters = 0
    for _ in range(max_outer):
        iters += 1
        rows = build_triple_rows(poses, r_c0i, gravity_magnitude, extrinsics)
        a = np.zeros((3 * len(rows), 3))
        b = np.zeros(3 * len(rows))
        for t, row in enumerate(rows):
            a[3 * t:3 * t + 3, 0] = row.lam
            a[3 * t:3 * t + 3, 1:3] = row.phi
            b[3 * t:3 * t + 3] = row.psi
        x, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
        if rank < 3:
            raise UnobservableError("refinement unobservable: rank-deficient triple system")
        scale = float(x[0])
        delta = x[1:3]
        r_c0i = r_c0i @ exp_so3(np.array([delta[0], delta[1], 0.0]))
        if float(np.linalg.norm(delta)) < tol:
            break
    return RefinementState(
        r_c0i=r_c0i,
        gravity_magnitude=float(gravity_magnitude),
        scale=scale,
        delta_theta_xy=delta,
        iterations=iters,
    )


def recover_velocities(
    poses: SegmentPoses,
    scale: float,
    gravity: np.ndarray,
    extrinsics: Extrinsics,
) -> np.ndarray:
    """Per-keyframe velocities implied by a fixed (scale, gravity).

    The first N-1 velocities come from the pairwise position constraint; the
    last one from the final pair's velocity constraint.
    """
    rots = np.asarray(poses.rotations, dtype=float)
    trans = np.asarray(poses.cam_translations, dtype=float)
    p_bc = np.asarray(extrinsics.p_bc, dtype=float)
    gravity = np.asarray(gravity, dtype=float)
    n = len(rots)
    vel = np.zeros((n, 3))
    for i, pre in enumerate(poses.preints):
        dt = pre.dt_total
        lever = (rots[i + 1] - rots[i]) @ p_bc
        vel[i] = (
            scale * (trans[i + 1] - trans[i])
            + 0.5 * gravity * dt * dt
            - rots[i] @ pre.alpha
            - lever
        ) / dt
    last = poses.preints[-1]
    vel[n - 1] = vel[n - 2] - gravity * last.dt_total + rots[n - 2] @ last.beta
    return vel
