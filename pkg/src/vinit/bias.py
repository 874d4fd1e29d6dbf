"""Gyroscope bias estimation from epipolar-normal coplanarity.

Each keyframe pair contributes a 3x3 moment matrix M built from epipolar
plane normals n_k = [f_i]x R(bg) f_j, where R(bg) is the camera-frame
relative rotation predicted by gyro preintegration under a first-order bias
correction.  At the true bias all normals are coplanar and the smallest
eigenvalue of M vanishes, so the bias is recovered by minimizing the sum of
smallest eigenvalues over all pairs.

Two weighting modes:
  nec   uniform weights
  pnec  inverse per-correspondence residual variance, propagated from the
        feature's bearing covariance through the predicted relative pose
        (rotation from preintegration, translation from an up-to-scale
        visual hint when available); weights are refreshed from the current
        bias in an outer loop (IRLS) and held fixed during each inner
        damped least-squares solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UnobservableError
from .geometry import (
    exp_so3,
    exp_so3_batch,
    min_eig_sym3_batch,
    min_eig_sym3_gap,
    min_eig_sym3_packed,
    right_jacobian_so3_batch,
    skew,
)
from .preintegration import Preintegration
from .uncertainty import FeatureUncertainty

EPS_REG = 1e-10        # variance floor for the inverse-variance weights
MIN_BEARINGS = 10      # pairs with fewer correspondences are dropped
_DEGEN_TRANSLATION = 1e-9   # |p_ij| below this makes the variance model void
_EIG_GAP_FD = 1e-10    # relative eigen-gap below which the gradient uses FD


@dataclass(frozen=True)
class Extrinsics:
    """Camera-to-body rigid transform: p_body = r_bc @ p_cam + p_bc."""
    r_bc: np.ndarray
    p_bc: np.ndarray


@dataclass(frozen=True)
class BearingPair:
    """One correspondence: unit bearings in the two camera frames."""
    f_i: np.ndarray
    f_j: np.ndarray
    uncertainty: FeatureUncertainty | None = None


class KeyframePairProblem:
    """Bearing correspondences plus preintegrated IMU for one keyframe pair."""

    def __init__(
        self,
        bearings: Sequence[BearingPair],
        preint: Preintegration,
        extrinsics: Extrinsics,
        p_ij_hint: np.ndarray | None = None,
    ):
        bearings = list(bearings)
        if not bearings:
            raise ValueError("keyframe pair needs at least one bearing pair")
        f_i = np.array([b.f_i for b in bearings], dtype=float)
        f_j = np.array([b.f_j for b in bearings], dtype=float)
        sigmas = None
        if all(b.uncertainty is not None for b in bearings):
            sigmas = np.array([b.uncertainty.sigma3d for b in bearings], dtype=float)
        self._init_arrays(f_i, f_j, sigmas, preint, extrinsics, p_ij_hint)

    @classmethod
    def from_arrays(
        cls,
        f_i: np.ndarray,
        f_j: np.ndarray,
        sigma3d: np.ndarray | None,
        preint: Preintegration,
        extrinsics: Extrinsics,
        p_ij_hint: np.ndarray | None = None,
    ) -> "KeyframePairProblem":
        self = cls.__new__(cls)
        self._init_arrays(
            np.asarray(f_i, dtype=float),
            np.asarray(f_j, dtype=float),
            None if sigma3d is None else np.asarray(sigma3d, dtype=float),
            preint,
            extrinsics,
            None if p_ij_hint is None else np.asarray(p_ij_hint, dtype=float),
        )
        return self

    def _init_arrays(self, f_i, f_j, sigma3d, preint, extrinsics, p_ij_hint=None):
        if f_i.shape != f_j.shape or f_i.ndim != 2 or f_i.shape[1] != 3:
            raise ValueError("bearing arrays must both be (n, 3)")
        norms_i = np.linalg.norm(f_i, axis=1)
        norms_j = np.linalg.norm(f_j, axis=1)
        if np.max(np.abs(norms_i - 1.0)) > 1e-9 or np.max(np.abs(norms_j - 1.0)) > 1e-9:
            raise ValueError("bearings must be unit vectors")
        self.f_i = f_i
        self.f_j = f_j
        self.sigma3d = sigma3d
        self.preint = preint
        self.extrinsics = extrinsics
        # Optional up-to-scale translation c_i -> c_j in the c_i frame.  The
        # accelerometer double integral is dominated by gravity over typical
        # keyframe gaps, so the IMU translation surrogate points the weight
        # variance in a near-arbitrary direction; a visual translation, even
        # up to scale, aims it correctly (one global scale on all pairs
        # rescales every weight uniformly and leaves the argmin unchanged).
        self.p_ij_hint = p_ij_hint
        # f_j pre-rotated into the j body frame; rotations then compose on the left
        self._body_j = f_j @ extrinsics.r_bc.T

    def __len__(self) -> int:
        return self.f_i.shape[0]

    @property
    def bearings(self) -> list[BearingPair]:
        out = []
        for k in range(len(self)):
            unc = None
            if self.sigma3d is not None:
                unc = FeatureUncertainty(sigma2d=np.full((2, 2), np.nan), sigma3d=self.sigma3d[k])
            out.append(BearingPair(self.f_i[k], self.f_j[k], unc))
        return out


@dataclass
class BiasEstimate:
    """Result of estimate_bias."""
    bg: np.ndarray
    final_objective: float
    iterations: int
    converged: bool
    objective_history: list[float] = field(default_factory=list)
    problems_used: int = 0


def _corrected_rotation(problem: KeyframePairProblem, bg: np.ndarray) -> np.ndarray:
    p = problem.preint
    return p.gamma @ exp_so3(p.jac_gamma_bg @ np.asarray(bg, dtype=float))


def _normals(problem: KeyframePairProblem, bg: np.ndarray) -> np.ndarray:
    """Epipolar-plane normals n_k at the given bias, one row per bearing."""
    a = problem.extrinsics.r_bc.T @ _corrected_rotation(problem, bg)
    return np.cross(problem.f_i, problem._body_j @ a.T)


def nec_matrix(problem: KeyframePairProblem, bg: np.ndarray) -> np.ndarray:
    """Unweighted normal moment matrix M = sum_k n_k n_k^T."""
    n = _normals(problem, bg)
    return n.T @ n


def _relative_pose(problem: KeyframePairProblem, bg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """IMU-predicted camera-frame relative rotation and translation surrogate."""
    extr = problem.extrinsics
    gamma_hat = _corrected_rotation(problem, bg)
    r_ij = extr.r_bc.T @ gamma_hat @ extr.r_bc
    p_ij = extr.r_bc.T @ (problem.preint.alpha + gamma_hat @ extr.p_bc - extr.p_bc)
    return r_ij, p_ij


def _weight_translation(problem: KeyframePairProblem, bg: np.ndarray) -> np.ndarray:
    """Translation used inside the weight variance: hint if present."""
    if problem.p_ij_hint is not None:
        return problem.p_ij_hint
    return _relative_pose(problem, bg)[1]


def translation_degenerate(problem: KeyframePairProblem, bg: np.ndarray) -> bool:
    """True when the predicted translation vanishes (variance model void)."""
    return bool(np.linalg.norm(_weight_translation(problem, bg)) < _DEGEN_TRANSLATION)


def pnec_variances(problem: KeyframePairProblem, bg: np.ndarray) -> np.ndarray:
    """Residual variance of each correspondence, floored at EPS_REG."""
    if problem.sigma3d is None:
        raise ValueError("pnec weighting requires per-feature bearing covariances")
    r_ij, _ = _relative_pose(problem, bg)
    p_ij = _weight_translation(problem, bg)
    u = np.cross(problem.f_i, p_ij[None, :])  # rows span +/- skew(f_i)^T p_ij
    v = u @ r_ij
    var = np.einsum("ki,kij,kj->k", v, problem.sigma3d, v)
    return np.maximum(var, EPS_REG)


def pnec_variance(pair: BearingPair, problem: KeyframePairProblem, bg: np.ndarray) -> float:
    """Residual variance of a single correspondence (see pnec_variances)."""
    if pair.uncertainty is None:
        raise ValueError("bearing pair carries no covariance")
    r_ij, _ = _relative_pose(problem, bg)
    p_ij = _weight_translation(problem, bg)
    u = r_ij.T @ (skew(pair.f_i).T @ p_ij)
    var = float(u @ pair.uncertainty.sigma3d @ u)
    return max(var, EPS_REG)


def weighted_nec_matrix(
    problem: KeyframePairProblem,
    bg: np.ndarray,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Inverse-variance-weighted moment matrix M = sum_k n_k n_k^T / var_k.

    When weights is None the variances are evaluated at bg itself, which is
    how each outer reweighting round starts; the inner solver passes frozen
    weights instead.
    """
    if weights is None:
        weights = 1.0 / pnec_variances(problem, bg)
    n = _normals(problem, bg)
    return (weights[:, None] * n).T @ n


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product without np.cross dispatch overhead."""
    out = np.empty_like(b)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


class _Stack:
    """All problems flattened into contiguous arrays for vectorized solves."""

    def __init__(self, problems: Sequence[KeyframePairProblem]):
        self.problems = list(problems)
        counts = np.array([len(p) for p in self.problems], dtype=np.intp)
        self.counts = counts
        self.starts = np.zeros(len(counts), dtype=np.intp)
        np.cumsum(counts[:-1], out=self.starts[1:])
        self.f_i = np.vstack([p.f_i for p in self.problems])
        self.body_j = np.vstack([p._body_j for p in self.problems])
        self.rbct_gamma = np.stack(
            [p.extrinsics.r_bc.T @ p.preint.gamma for p in self.problems]
        )
        self.jacs = np.stack([p.preint.jac_gamma_bg for p in self.problems])
        self.sigma3d = None
        self.hints = None
        if all(p.sigma3d is not None for p in self.problems):
            self.sigma3d = np.concatenate([p.sigma3d for p in self.problems])
            self.r_bc = np.stack([p.extrinsics.r_bc for p in self.problems])
            self.p_bc = np.stack([p.extrinsics.p_bc for p in self.problems])
            # r_bc^T (alpha - p_bc); adding r_bc^T gamma_hat p_bc gives p_ij
            self.p_base = np.einsum(
                "pji,pj->pi",
                self.r_bc,
                np.stack([p.preint.alpha for p in self.problems]) - self.p_bc,
            )
            hint_rows = [p.p_ij_hint for p in self.problems]
            if any(h is not None for h in hint_rows):
                self.hints = np.stack(
                    [np.full(3, np.nan) if h is None else h for h in hint_rows]
                )
                self.hint_mask = ~np.isnan(self.hints[:, 0])

    def __len__(self) -> int:
        return len(self.problems)


def _stack_weights(stack: _Stack, bg: np.ndarray) -> np.ndarray:
    """Inverse pnec variances for every bearing in the stack at once."""
    psi = stack.jacs @ bg
    corr = stack.rbct_gamma @ exp_so3_batch(psi)       # r_bc^T gamma_hat
    if stack.hints is not None and stack.hint_mask.all():
        p_ij = stack.hints
    else:
        p_ij = stack.p_base + np.einsum("pij,pj->pi", corr, stack.p_bc)
        if stack.hints is not None:
            p_ij = np.where(stack.hint_mask[:, None], stack.hints, p_ij)
    r_ij = corr @ stack.r_bc
    u = _cross_rows(stack.f_i, np.repeat(p_ij, stack.counts, axis=0))
    v = np.einsum("mi,mij->mj", u, np.repeat(r_ij, stack.counts, axis=0))
    sv = np.matmul(stack.sigma3d, v[:, :, None])[:, :, 0]
    var = v[:, 0] * sv[:, 0] + v[:, 1] * sv[:, 1] + v[:, 2] * sv[:, 2]
    return 1.0 / np.maximum(var, EPS_REG)


def _stack_obj(
    stack: _Stack, w_all: np.ndarray, bg: np.ndarray
) -> tuple[np.ndarray, tuple]:
    """Per-problem smallest eigenvalues at bg plus reusable intermediates."""
    psi = stack.jacs @ bg
    corr = stack.rbct_gamma @ exp_so3_batch(psi)
    corr_rep = np.repeat(corr, stack.counts, axis=0)
    rot = np.einsum("mij,mj->mi", corr_rep, stack.body_j)
    n = _cross_rows(stack.f_i, rot)
    nw = n * w_all[:, None]
    cols = np.empty((n.shape[0], 6))
    cols[:, 0] = n[:, 0] * nw[:, 0]
    cols[:, 1] = n[:, 0] * nw[:, 1]
    cols[:, 2] = n[:, 0] * nw[:, 2]
    cols[:, 3] = n[:, 1] * nw[:, 1]
    cols[:, 4] = n[:, 1] * nw[:, 2]
    cols[:, 5] = n[:, 2] * nw[:, 2]
    sums = np.add.reduceat(cols, stack.starts, axis=0)
    lam, _ = min_eig_sym3_packed(sums)
    return lam, (psi, corr_rep, n, sums)


def _stack_grad(
    stack: _Stack,
    w_all: np.ndarray,
    bg: np.ndarray,
    lams: np.ndarray,
    cache: tuple,
) -> np.ndarray:
    """Per-problem gradient rows d lam_p / d bg, reusing objective work."""
    psi, corr_rep, n, sums = cache
    ms = np.empty((len(stack), 3, 3))
    ms[:, 0, 0] = sums[:, 0]
    ms[:, 0, 1] = ms[:, 1, 0] = sums[:, 1]
    ms[:, 0, 2] = ms[:, 2, 0] = sums[:, 2]
    ms[:, 1, 1] = sums[:, 3]
    ms[:, 1, 2] = ms[:, 2, 1] = sums[:, 4]
    ms[:, 2, 2] = sums[:, 5]
    _, vec, gap = min_eig_sym3_batch(ms, want_vec=True)
    cmat = right_jacobian_so3_batch(psi) @ stack.jacs
    cmat_rep = np.repeat(cmat, stack.counts, axis=0)
    vec_rep = np.repeat(vec, stack.counts, axis=0)
    # v.(f x R(c x b)) rearranged by two scalar triple products:
    # = (v x f).(R(c x b)) = (R^T (v x f)).(c x b) = c.(b x R^T(v x f))
    s = _cross_rows(vec_rep, stack.f_i)
    y = np.einsum("mji,mj->mi", corr_rep, s)
    z = _cross_rows(stack.body_j, y)
    dots = np.einsum("mij,mi->mj", cmat_rep, z)
    vnw = w_all * (n[:, 0] * vec_rep[:, 0] + n[:, 1] * vec_rep[:, 1]
                   + n[:, 2] * vec_rep[:, 2])
    grads = 2.0 * np.add.reduceat(vnw[:, None] * dots, stack.starts, axis=0)

    # rows with an ill-conditioned eigenvector: forward differences instead
    scale = np.abs(sums).max(axis=1)
    fd_rows = gap < _EIG_GAP_FD * np.maximum(scale, 1e-300)
    if np.any(fd_rows):
        h = 1e-7
        rows = np.flatnonzero(fd_rows)
        for axis in range(3):
            bg_h = np.array(bg, dtype=float)
            bg_h[axis] += h
            lam_h, _ = _stack_obj(stack, w_all, bg_h)
            grads[rows, axis] = (lam_h[rows] - lams[rows]) / h
    return grads


def objective_and_gradient(
    problems: Sequence[KeyframePairProblem],
    weights: Sequence[np.ndarray],
    bg: np.ndarray,
    want_grad: bool = True,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Total objective, per-problem eigenvalues, and stacked gradient rows."""
    stack = _Stack(problems)
    w_all = np.concatenate([np.asarray(w, dtype=float) for w in weights])
    bg = np.asarray(bg, dtype=float)
    lams, cache = _stack_obj(stack, w_all, bg)
    grads = _stack_grad(stack, w_all, bg, lams, cache) if want_grad else None
    return float(np.sum(lams)), lams, grads


def _lm_minimize(
    stack: _Stack,
    w_all: np.ndarray,
    bg0: np.ndarray,
    max_iters: int,
    step_tol: float,
    obj_tol: float,
    history: list[float],
) -> tuple[np.ndarray, int, bool]:
    """Damped least squares on residuals sqrt(lam_p); minimizes sum lam_p.

    Damping scales the diagonal of the normal matrix (not the identity) so the
    iterates are invariant to a global rescaling of the weights.
    """
    bg = np.array(bg0, dtype=float)
    lams, cache = _stack_obj(stack, w_all, bg)
    f = float(np.sum(lams))
    history.append(f)
    grads = _stack_grad(stack, w_all, bg, lams, cache)
    mu = 1e-4
    iterations = 0
    converged = False
    for _ in range(max_iters):
        iterations += 1
        r = np.sqrt(np.maximum(lams, 1e-300))
        jac = grads / (2.0 * r[:, None])
        h = jac.T @ jac
        g = jac.T @ r  # == sum(grads) / 2
        (h00, h01, h02), (_, h11, h12), (_, _, h22) = h.tolist()
        g0, g1, g2 = g.tolist()
        if not all(map(math.isfinite, (h00, h01, h02, h11, h12, h22, g0, g1, g2))):
            break
        if g0 * g0 + g1 * g1 + g2 * g2 == 0.0:
            converged = True
            break
        floor = 1e-12 * max(h00, h11, h22, 1e-300)
        a00 = h00 + mu * max(h00, floor)
        a11 = h11 + mu * max(h11, floor)
        a22 = h22 + mu * max(h22, floor)
        det = (a00 * (a11 * a22 - h12 * h12)
               - h01 * (h01 * a22 - h12 * h02)
               + h02 * (h01 * h12 - a11 * h02))
        if det == 0.0 or not math.isfinite(det):
            break
        # symmetric 3x3 solve by adjugate, step = -A^{-1} g
        i00 = a11 * a22 - h12 * h12
        i01 = h02 * h12 - h01 * a22
        i02 = h01 * h12 - h02 * a11
        i11 = a00 * a22 - h02 * h02
        i12 = h02 * h01 - a00 * h12
        i22 = a00 * a11 - h01 * h01
        s0 = -(i00 * g0 + i01 * g1 + i02 * g2) / det
        s1 = -(i01 * g0 + i11 * g1 + i12 * g2) / det
        s2 = -(i02 * g0 + i12 * g1 + i22 * g2) / det
        step_norm = math.sqrt(s0 * s0 + s1 * s1 + s2 * s2)
        step = np.array([s0, s1, s2])
        lams_new, cache_new = _stack_obj(stack, w_all, bg + step)
        f_new = float(np.sum(lams_new))
        if f_new < f:
            bg = bg + step
            decrease = f - f_new
            f, lams, cache = f_new, lams_new, cache_new
            history.append(f)
            mu = max(mu / 10.0, 1e-12)
            if step_norm < step_tol or decrease < obj_tol * max(f, 1e-300):
                converged = True
                break
            grads = _stack_grad(stack, w_all, bg, lams, cache)
        else:
            mu *= 10.0
            if mu > 1e16:
                break
            if step_norm < step_tol:
                converged = True
                break
    return bg, iterations, converged


def estimate_bias(
    problems: Sequence[KeyframePairProblem],
    mode: str = "pnec",
    init_bg: np.ndarray | None = None,
    weights: Sequence[np.ndarray] | None = None,
    min_bearings: int = MIN_BEARINGS,
    max_outer: int = 5,
    max_inner: int = 50,
    step_tol: float = 1e-10,
    obj_tol: float = 1e-12,
    outer_tol: float = 1e-8,
) -> BiasEstimate:
    """Estimate the gyroscope bias from a set of keyframe pair problems.

    Passing explicit per-problem weights freezes them: a single damped
    least-squares solve runs instead of the IRLS reweighting loop.
    """
    if mode not in ("nec", "pnec"):
        raise ValueError(f"unknown mode {mode!r}")
    keep = [len(p) >= min_bearings for p in problems]
    usable = [p for p, k in zip(problems, keep) if k]
    if not usable:
        raise UnobservableError(
            "unobservable bias: no keyframe pair has enough correspondences"
        )
    if mode == "pnec" and weights is None and any(p.sigma3d is None for p in usable):
        raise ValueError("pnec mode requires bearing covariances on every pair")

    bg = np.zeros(3) if init_bg is None else np.array(init_bg, dtype=float)
    history: list[float] = []
    total_iters = 0
    converged = False
    stack = _Stack(usable)

    if weights is not None:
        w_all = np.concatenate(
            [np.asarray(w, dtype=float) for w, k in zip(weights, keep) if k]
        )
        if w_all.shape[0] != stack.f_i.shape[0]:
            raise ValueError("weights do not match the problem bearing counts")
        bg, total_iters, converged = _lm_minimize(
            stack, w_all, bg, max_inner, step_tol, obj_tol, history
        )
    elif mode == "nec":
        w_all = np.ones(stack.f_i.shape[0])
        bg, total_iters, converged = _lm_minimize(
            stack, w_all, bg, max_inner, step_tol, obj_tol, history
        )
    else:
        for _ in range(max_outer):
            w_all = _stack_weights(stack, bg)
            bg_new, iters, converged = _lm_minimize(
                stack, w_all, bg, max_inner, step_tol, obj_tol, history
            )
            total_iters += iters
            moved = float(np.linalg.norm(bg_new - bg))
            bg = bg_new
            if moved < outer_tol:
                break

    final = history[-1] if history else 0.0
    return BiasEstimate(
        bg=bg,
        final_objective=final,
        iterations=total_iters,
        converged=converged,
        objective_history=history,
        problems_used=len(usable),
    )
