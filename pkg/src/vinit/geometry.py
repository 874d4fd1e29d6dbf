"""Rotation and small-matrix kernels used throughout the package.

Conventions:
  - rotations are plain 3x3 float ndarrays (orthonormal, det = +1)
  - rotation vectors (axis * angle, rad) are length-3 float arrays
  - no wrapper classes; validation is explicit via check_rotation()

exp_so3 and right_jacobian_so3 sit on the per-sample hot path of the
integrator and the bias solver, so they build their output entrywise instead
of composing skew matrices.
"""
from __future__ import annotations

import math

import numpy as np

_EPS_ANGLE = 1e-8  # below this, use series expansions


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of skew() for antisymmetric input."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def _rodrigues(x: float, y: float, z: float, s: float, c: float) -> np.ndarray:
    """I + s*skew(v) + c*skew(v)^2 assembled entrywise."""
    xx, yy, zz = c * x * x, c * y * y, c * z * z
    xy, xz, yz = c * x * y, c * x * z, c * y * z
    sx, sy, sz = s * x, s * y, s * z
    out = np.empty((3, 3))
    out[0, 0] = 1.0 - yy - zz
    out[0, 1] = xy - sz
    out[0, 2] = xz + sy
    out[1, 0] = xy + sz
    out[1, 1] = 1.0 - xx - zz
    out[1, 2] = yz - sx
    out[2, 0] = xz - sy
    out[2, 1] = yz + sx
    out[2, 2] = 1.0 - xx - yy
    return out


def exp_so3(phi: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector."""
    x, y, z = float(phi[0]), float(phi[1]), float(phi[2])
    a2 = x * x + y * y + z * z
    angle = math.sqrt(a2)
    if angle < _EPS_ANGLE:
        # second-order series; orthonormal to ~angle^3
        return _rodrigues(x, y, z, 1.0, 0.5)
    s = math.sin(angle) / angle
    c = (1.0 - math.cos(angle)) / a2
    return _rodrigues(x, y, z, s, c)


def log_so3(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix; |result| <= pi.

    The angle-pi branch extracts the axis from the symmetric part and fixes
    the overall sign by the largest-magnitude component when the
    antisymmetric part gives no information.
    """
    rot = np.asarray(rot, dtype=float)
    cos_angle = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    w = vee(rot - rot.T) / 2.0  # == sin(angle) * axis
    if angle < _EPS_ANGLE:
        return w * (1.0 + angle * angle / 6.0)
    if angle < np.pi - 1e-6:
        return (angle / np.sin(angle)) * w
    # near pi: R + I ~= 2 * axis axis^T (up to O(pi - angle))
    s = rot + np.eye(3)
    axis = np.sqrt(np.clip(np.diag(s) / 2.0, 0.0, None))
    j = int(np.argmax(axis))
    # off-diagonal entries of s carry the relative signs
    axis = s[:, j] / (2.0 * axis[j])
    axis /= np.linalg.norm(axis)
    if np.linalg.norm(w) > 0 and np.dot(axis, w) < 0:
        axis = -axis
    elif np.linalg.norm(w) == 0 and axis[int(np.argmax(np.abs(axis)))] < 0:
        axis = -axis
    return angle * axis


def right_jacobian_so3(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of exp_so3: exp(phi + d) ~= exp(phi) exp(Jr(phi) d)."""
    x, y, z = float(phi[0]), float(phi[1]), float(phi[2])
    a2 = x * x + y * y + z * z
    angle = math.sqrt(a2)
    if angle < _EPS_ANGLE:
        return _rodrigues(x, y, z, -0.5, 1.0 / 6.0)
    c1 = (1.0 - math.cos(angle)) / a2
    c2 = (angle - math.sin(angle)) / (a2 * angle)
    return _rodrigues(x, y, z, -c1, c2)


def cayley_to_rotation(c: np.ndarray) -> np.ndarray:
    """Cayley map: rotation by 2*atan(|c|) about c (closed form, no inverse)."""
    c = np.asarray(c, dtype=float)
    n2 = float(c @ c)
    return ((1.0 - n2) * np.eye(3) + 2.0 * np.outer(c, c) + 2.0 * skew(c)) / (1.0 + n2)


def project_to_so3(m: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm (polar factor)."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def check_rotation(rot: np.ndarray, tol: float = 1e-9) -> None:
    """Raise ValueError unless rot is orthonormal with det +1 within tol."""
    rot = np.asarray(rot, dtype=float)
    if rot.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {rot.shape}")
    err = np.max(np.abs(rot.T @ rot - np.eye(3)))
    if err > tol:
        raise ValueError(f"matrix is not orthonormal (deviation {err:.3e})")
    if np.linalg.det(rot) < 0:
        raise ValueError("matrix has negative determinant")


def _sign_fix(v: np.ndarray) -> np.ndarray:
    """Deterministic eigenvector sign: largest-magnitude component positive."""
    if v[int(np.argmax(np.abs(v)))] < 0:
        return -v
    return v


def min_eig_sym3(m: np.ndarray) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue and unit eigenvector of a symmetric 3x3 matrix.

    Closed-form trigonometric solve; falls back to LAPACK when the relevant
    eigen-gap is tiny or the closed-form residual is untrustworthy.
    Eigenvector sign is deterministic (largest-magnitude component positive);
    for repeated eigenvalues the returned eigenvector is one valid choice.
    """
    lam, v, _ = min_eig_sym3_gap(m)
    return lam, v


def min_eig_sym3_gap(m: np.ndarray) -> tuple[float, np.ndarray, float]:
    """As min_eig_sym3 but also returns the gap to the middle eigenvalue."""
    m = np.asarray(m, dtype=float)
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return 0.0, np.array([1.0, 0.0, 0.0]), 0.0

    q = float(np.trace(m)) / 3.0
    a = m - q * np.eye(3)
    p2 = float(np.sum(a * a)) / 6.0
    if p2 <= (1e-14 * scale) ** 2:
        # m is (numerically) a multiple of the identity
        return q, np.array([1.0, 0.0, 0.0]), 0.0

    p = np.sqrt(p2)
    b = a / p
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam_max = q + 2.0 * p * np.cos(phi)
    lam_min = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam_mid = 3.0 * q - lam_max - lam_min
    gap = lam_mid - lam_min

    if gap < 1e-12 * scale:
        return _min_eig_fallback(m)

    # columns of (m - mid I)(m - max I) span the min-eigenvalue eigenspace
    prod = (m - lam_mid * np.eye(3)) @ (m - lam_max * np.eye(3))
    norms = np.linalg.norm(prod, axis=0)
    v = prod[:, int(np.argmax(norms))]
    nv = np.linalg.norm(v)
    if nv < 1e-14 * scale * scale:
        return _min_eig_fallback(m)
    v = _sign_fix(v / nv)
    if np.linalg.norm(m @ v - lam_min * v) > 1e-9 * scale:
        return _min_eig_fallback(m)
    return float(lam_min), v, float(gap)


def _min_eig_fallback(m: np.ndarray) -> tuple[float, np.ndarray, float]:
    w, vecs = np.linalg.eigh(m)
    return float(w[0]), _sign_fix(vecs[:, 0]), float(w[1] - w[0])


def _rodrigues_batch(phi: np.ndarray, s: np.ndarray, c: np.ndarray) -> np.ndarray:
    x, y, z = phi[:, 0], phi[:, 1], phi[:, 2]
    xx, yy, zz = c * x * x, c * y * y, c * z * z
    xy, xz, yz = c * x * y, c * x * z, c * y * z
    sx, sy, sz = s * x, s * y, s * z
    out = np.empty(phi.shape[:1] + (3, 3))
    out[:, 0, 0] = 1.0 - yy - zz
    out[:, 0, 1] = xy - sz
    out[:, 0, 2] = xz + sy
    out[:, 1, 0] = xy + sz
    out[:, 1, 1] = 1.0 - xx - zz
    out[:, 1, 2] = yz - sx
    out[:, 2, 0] = xz - sy
    out[:, 2, 1] = yz + sx
    out[:, 2, 2] = 1.0 - xx - yy
    return out


def exp_so3_batch(phi: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of (n, 3) rotation vectors -> (n, 3, 3)."""
    phi = np.asarray(phi, dtype=float)
    a2 = phi[:, 0] ** 2 + phi[:, 1] ** 2 + phi[:, 2] ** 2
    angle = np.sqrt(a2)
    small = angle < _EPS_ANGLE
    if small.any():
        safe = np.where(small, 1.0, angle)
        safe2 = np.where(small, 1.0, a2)
        s = np.where(small, 1.0, np.sin(safe) / safe)
        c = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe2)
    else:
        s = np.sin(angle) / angle
        c = (1.0 - np.cos(angle)) / a2
    return _rodrigues_batch(phi, s, c)


def right_jacobian_so3_batch(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of (n, 3) rotation vectors -> (n, 3, 3)."""
    phi = np.asarray(phi, dtype=float)
    a2 = phi[:, 0] ** 2 + phi[:, 1] ** 2 + phi[:, 2] ** 2
    angle = np.sqrt(a2)
    small = angle < _EPS_ANGLE
    if small.any():
        safe = np.where(small, 1.0, angle)
        safe2 = np.where(small, 1.0, a2)
        c1 = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe2)
        c2 = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / (safe2 * safe))
    else:
        c1 = (1.0 - np.cos(angle)) / a2
        c2 = (angle - np.sin(angle)) / (a2 * angle)
    return _rodrigues_batch(phi, -c1, c2)


def min_eig_sym3_batch(
    ms: np.ndarray, want_vec: bool = True
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """min_eig_sym3_gap over a stack of symmetric 3x3 matrices.

    Same branch structure as the scalar version: closed-form trigonometric
    eigenvalues, per-matrix LAPACK fallback when the gap or the eigenvector
    residual is untrustworthy.
    """
    ms = np.asarray(ms, dtype=float)
    n = ms.shape[0]
    m00 = ms[:, 0, 0]
    m01 = ms[:, 0, 1]
    m02 = ms[:, 0, 2]
    m11 = ms[:, 1, 1]
    m12 = ms[:, 1, 2]
    m22 = ms[:, 2, 2]

    scale = np.abs(ms).reshape(n, 9).max(axis=1)
    q = (m00 + m11 + m22) / 3.0
    b00 = m00 - q
    b11 = m11 - q
    b22 = m22 - q
    p2 = (b00 * b00 + b11 * b11 + b22 * b22) / 6.0 + (
        m01 * m01 + m02 * m02 + m12 * m12) / 3.0

    zero = scale == 0.0
    ident = ~zero & (p2 <= (1e-14 * scale) ** 2)
    degen = zero | ident

    # common path assumes a regular spectrum; exceptional rows patched below
    inv_p = 1.0 / np.sqrt(np.maximum(p2, 1e-300))
    c00 = b00 * inv_p
    c11 = b11 * inv_p
    c22 = b22 * inv_p
    c01 = m01 * inv_p
    c02 = m02 * inv_p
    c12 = m12 * inv_p
    half_det = 0.5 * (c00 * (c11 * c22 - c12 * c12)
                      - c01 * (c01 * c22 - c12 * c02)
                      + c02 * (c01 * c12 - c11 * c02))
    phi = np.arccos(np.clip(half_det, -1.0, 1.0)) / 3.0
    two_p = 2.0 / inv_p
    lam_max = q + two_p * np.cos(phi)
    lam = q + two_p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam_mid = 3.0 * q - lam_max - lam
    gap = lam_mid - lam

    any_degen = degen.any()
    if any_degen:
        lam[zero] = 0.0
        lam[ident] = q[ident]
        gap[degen] = 0.0
        lam_mid = np.where(degen, lam, lam_mid)
        lam_max = np.where(degen, lam, lam_max)

    bad = ~degen & (gap < 1e-12 * scale)
    if not want_vec:
        # no residual check without the vector: catch repeated min/mid roots,
        # where arccos amplifies the determinant rounding error to sqrt(eps)
        bad = bad | (~degen & (half_det > 1.0 - 1e-9))
    vec = None
    if want_vec:
        left = ms.copy()
        right = ms.copy()
        for d in range(3):
            left[:, d, d] -= lam_mid
            right[:, d, d] -= lam_max
        # (m - mid)(m - max) = (min - mid)(min - max) v v^T; take largest column
        prod = np.matmul(left, right)
        sq = np.sum(prod * prod, axis=1)
        cols = np.argmax(sq, axis=1)
        rows = np.arange(n)
        v = prod[rows, :, cols]
        nv2 = np.sum(v * v, axis=1)
        tiny = ~degen & (nv2 < (1e-14 * scale * scale) ** 2)
        v = v / np.sqrt(np.where(nv2 > 0.0, nv2, 1.0))[:, None]
        # deterministic sign: largest-magnitude component positive
        picks = np.argmax(np.abs(v), axis=1)
        sgn = np.where(v[rows, picks] < 0.0, -1.0, 1.0)
        v = v * sgn[:, None]
        dv = np.matmul(ms, v[:, :, None])[:, :, 0] - lam[:, None] * v
        resid2 = np.sum(dv * dv, axis=1)
        bad = bad | tiny | (~degen & (resid2 > (1e-9 * scale) ** 2))
        if any_degen:
            v[degen] = np.array([1.0, 0.0, 0.0])
        vec = v

    if bad.any():
        for row in np.flatnonzero(bad):
            lam_f, v_f, gap_f = _min_eig_fallback(ms[row])
            lam[row] = lam_f
            gap[row] = gap_f
            if want_vec:
                vec[row] = v_f
    return lam, vec, gap


def min_eig_sym3_packed(sums: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Smallest eigenvalue and eigen-gap of packed symmetric 3x3 rows.

    Each row of sums holds the unique entries [m00, m01, m02, m11, m12, m22].
    Eigenvalue-only variant of min_eig_sym3_batch for hot loops that do not
    need the eigenvector.  Without an eigenvector there is no residual check,
    and the trigonometric formula loses accuracy near repeated roots, so the
    eigh fallback triggers on a wider gap threshold than the full version.
    """
    m00 = sums[:, 0]
    m01 = sums[:, 1]
    m02 = sums[:, 2]
    m11 = sums[:, 3]
    m12 = sums[:, 4]
    m22 = sums[:, 5]

    scale = np.abs(sums).max(axis=1)
    q = (m00 + m11 + m22) / 3.0
    b00 = m00 - q
    b11 = m11 - q
    b22 = m22 - q
    p2 = (b00 * b00 + b11 * b11 + b22 * b22) / 6.0 + (
        m01 * m01 + m02 * m02 + m12 * m12) / 3.0

    inv_p = 1.0 / np.sqrt(np.maximum(p2, 1e-300))
    det_b = (b00 * (b11 * b22 - m12 * m12)
             - m01 * (m01 * b22 - m12 * m02)
             + m02 * (m01 * m12 - b11 * m02))
    half_det = 0.5 * det_b * inv_p * inv_p * inv_p
    phi = np.arccos(np.clip(half_det, -1.0, 1.0)) / 3.0
    two_p = 2.0 / inv_p
    lam_max = q + two_p * np.cos(phi)
    lam = q + two_p * np.cos(phi + 2.0 * np.pi / 3.0)
    gap = 3.0 * q - lam_max - 2.0 * lam

    zero = scale == 0.0
    ident = ~zero & (p2 <= (1e-14 * scale) ** 2)
    degen = zero | ident
    if degen.any():
        lam[zero] = 0.0
        lam[ident] = q[ident]
        gap[degen] = 0.0

    # half_det -> +1 is a repeated min/mid root, where arccos turns the eps
    # error of the determinant into a sqrt(eps)-sized eigenvalue error
    bad = ~degen & ((gap < 1e-12 * scale) | (half_det > 1.0 - 1e-9))
    if bad.any():
        for row in np.flatnonzero(bad):
            m = np.array([[m00[row], m01[row], m02[row]],
                          [m01[row], m11[row], m12[row]],
                          [m02[row], m12[row], m22[row]]])
            lam_f, _, gap_f = _min_eig_fallback(m)
            lam[row] = lam_f
            gap[row] = gap_f
    return lam, gap
