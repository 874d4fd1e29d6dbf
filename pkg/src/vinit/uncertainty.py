"""Feature position uncertainty: from image patches to bearing-vector covariance.

Pipeline: a tracked feature carries a 2x2 pixel covariance (estimated from the
patch via a Laplace approximation of the tracking energy, or supplied by a
simulator), optionally rotated into the current frame, then pushed through the
camera unprojection with a 5-point unscented transform to obtain a 3x3
covariance on the unit bearing vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePatchError

_CHOL_JITTER = 1e-12  # added to singular (but nonzero) pixel covariances


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; k upper-triangular, k_inv its exact counterpart."""
    k: np.ndarray
    k_inv: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        k_inv = np.asarray(self.k_inv, dtype=float)
        if k.shape != (3, 3) or k_inv.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if np.max(np.abs(k @ k_inv - np.eye(3))) > 1e-12:
            raise ValueError("k_inv is not the inverse of k")

    @classmethod
    def from_pinhole(cls, fu: float, fv: float, cu: float, cv: float) -> "CameraIntrinsics":
        if fu <= 0 or fv <= 0:
            raise ValueError("focal lengths must be positive")
        k = np.array([[fu, 0.0, cu], [0.0, fv, cv], [0.0, 0.0, 1.0]])
        k_inv = np.array([[1.0 / fu, 0.0, -cu / fu],
                          [0.0, 1.0 / fv, -cv / fv],
                          [0.0, 0.0, 1.0]])
        return cls(k, k_inv)


@dataclass(frozen=True)
class PatchData:
    """Sampled patch: pixel positions (n,2), intensities (n,), gradients (n,2)."""
    positions: np.ndarray
    intensity: np.ndarray
    gradient: np.ndarray

    def __post_init__(self):
        if len(self.positions) < 3:
            raise ValueError("patch needs at least 3 pixels")
        if len(self.intensity) != len(self.positions) or len(self.gradient) != len(self.positions):
            raise ValueError("patch arrays must have matching lengths")


@dataclass(frozen=True)
class UnscentedSet:
    """Sigma points (5,2) and weights (5,) of a 2D Gaussian."""
    points: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class FeatureUncertainty:
    """Pixel-space covariance (2,2) and its bearing-space image (3,3)."""
    sigma2d: np.ndarray
    sigma3d: np.ndarray


def klt_covariance(patch: PatchData) -> np.ndarray:
    """2x2 pixel covariance of a tracked patch under mean-normalized SE(2) tracking.

    Row k of the stacked Jacobian is the derivative of the mean-normalized
    intensity at patch pixel k with respect to (du, dv, dtheta); the covariance
    is the upper-left 2x2 block of the inverted normal matrix.
    """
    pos = np.asarray(patch.positions, dtype=float)
    inten = np.asarray(patch.intensity, dtype=float)
    grad = np.asarray(patch.gradient, dtype=float)
    n = len(pos)

    # d(warped pixel)/d(du, dv, dtheta) for a rotation about the origin
    # J_xi[k] is 2x3: [[1, 0, -v_k], [0, 1, u_k]]
    total = float(np.sum(inten))
    if total == 0.0:
        raise DegeneratePatchError("patch has zero total intensity")
    grad_rows = np.zeros((n, 3))
    grad_rows[:, 0] = grad[:, 0]
    grad_rows[:, 1] = grad[:, 1]
    grad_rows[:, 2] = -grad[:, 0] * pos[:, 1] + grad[:, 1] * pos[:, 0]
    sum_rows = np.sum(grad_rows, axis=0)  # sum_j grad(I_j)^T J_xi^j
    jac = (n / total ** 2) * (total * grad_rows - inten[:, None] * sum_rows[None, :])

    normal = jac.T @ jac
    w = np.linalg.eigvalsh(normal)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise DegeneratePatchError("degenerate patch: tracking normal matrix is singular")
    cov_se2 = np.linalg.inv(normal)
    return cov_se2[:2, :2]


def rotate_cov_2d(sigma2d: np.ndarray, r_theta: np.ndarray | None = None) -> np.ndarray:
    """Transport a 2x2 covariance through an in-plane rotation (default identity)."""
    sigma2d = np.asarray(sigma2d, dtype=float)
    if r_theta is None:
        return sigma2d.copy()
    r_theta = np.asarray(r_theta, dtype=float)
    return r_theta @ sigma2d @ r_theta.T


def rot2(theta: float) -> np.ndarray:
    """2D rotation matrix."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def sigma_points(mu: np.ndarray, sigma2d: np.ndarray) -> UnscentedSet:
    """Five-point symmetric sigma set for a 2D Gaussian.

    Points: mu, mu +/- sqrt(3) * columns of the Cholesky factor; weights 1/3
    for the center, 1/6 each for the rest.  An exactly-zero covariance puts
    all points at mu (no jitter), so downstream stays bit-exact.
    """
    mu = np.asarray(mu, dtype=float)
    sigma2d = np.asarray(sigma2d, dtype=float)
    ndim = 2
    if np.all(sigma2d == 0.0):
        chol = np.zeros((2, 2))
    else:
        try:
            chol = np.linalg.cholesky(sigma2d)
        except np.linalg.LinAlgError:
            chol = np.linalg.cholesky(sigma2d + _CHOL_JITTER * np.eye(2))
    spread = np.sqrt(ndim + 1.0)
    points = np.empty((2 * ndim + 1, 2))
    points[0] = mu
    points[1] = mu + spread * chol[:, 0]
    points[2] = mu + spread * chol[:, 1]
    points[3] = mu - spread * chol[:, 0]
    points[4] = mu - spread * chol[:, 1]
    weights = np.full(2 * ndim + 1, 1.0 / (2.0 * (ndim + 1.0)))
    weights[0] = 1.0 / (ndim + 1.0)
    return UnscentedSet(points, weights)


def unproject_unscented(
    us: UnscentedSet, intrinsics: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Push pixel sigma points through unproject-and-normalize.

    Returns the weighted mean bearing (not re-normalized) and the 3x3
    covariance.  The mean is computed as anchor + weighted deviations so that
    identical sigma points reproduce the plain unprojection bit-exactly.
    """
    pts = np.asarray(us.points, dtype=float)
    w = np.asarray(us.weights, dtype=float)
    homo = np.column_stack([pts, np.ones(len(pts))])
    rays = homo @ intrinsics.k_inv.T
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    dev0 = rays[1:] - rays[0]
    mu = rays[0] + w[1:] @ dev0
    diff = rays - mu
    sigma3d = (w[:, None] * diff).T @ diff
    return mu, sigma3d


def pixel_to_bearing(intrinsics: CameraIntrinsics, uv: np.ndarray) -> np.ndarray:
    """Unit bearing vector of a pixel."""
    uv = np.asarray(uv, dtype=float)
    ray = intrinsics.k_inv @ np.array([uv[0], uv[1], 1.0])
    return ray / np.linalg.norm(ray)


def bearing_covariance(
    uv: np.ndarray,
    sigma2d: np.ndarray,
    intrinsics: CameraIntrinsics,
    r_theta: np.ndarray | None = None,
) -> FeatureUncertainty:
    """Full pixel-to-bearing uncertainty for one tracked feature."""
    rotated = rotate_cov_2d(sigma2d, r_theta)
    _, sigma3d = unproject_unscented(sigma_points(uv, rotated), intrinsics)
    return FeatureUncertainty(sigma2d=rotated, sigma3d=sigma3d)
