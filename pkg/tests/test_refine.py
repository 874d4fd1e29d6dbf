"""Fixed-magnitude gravity refinement and velocity recovery."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import TRUE_BG
from test_vgs import chained_poses, static_poses
from vinit.bias import Extrinsics
from vinit.errors import UnobservableError
from vinit.geometry import check_rotation, exp_so3
from vinit.refine import (
    build_triple_rows,
    exact_norm_vector,
    gravity_to_rotation,
    recover_velocities,
    refine_scale_gravity,
)
from vinit.vgs import solve_vgs


def angle_between(a, b):
    c = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def test_gravity_to_rotation_alignment():
    rng = np.random.default_rng(0)
    for _ in range(25):
        g = rng.normal(size=3) * rng.uniform(0.5, 20.0)
        r = gravity_to_rotation(g)
        check_rotation(r)
        assert_allclose(r @ [0.0, 0.0, 1.0], g / np.linalg.norm(g), atol=1e-12)
    # antiparallel case needs the fallback axis
    r = gravity_to_rotation(np.array([0.0, 0.0, -5.0]))
    check_rotation(r)
    assert_allclose(r @ [0.0, 0.0, 1.0], [0.0, 0.0, -1.0], atol=1e-12)
    with pytest.raises(ValueError, match="zero gravity vector"):
        gravity_to_rotation(np.zeros(3))


def test_exact_norm_vector_is_bit_exact():
    rng = np.random.default_rng(1)
    for _ in range(500):
        d = rng.normal(size=3)
        mag = rng.uniform(0.1, 30.0)
        v = exact_norm_vector(d, mag)
        assert float(np.linalg.norm(v)) == mag  # construction, not tolerance
        assert angle_between(v, d) < 1e-12
    assert float(np.linalg.norm(exact_norm_vector(np.array([1.0, 1.0, 1.0]), 9.81))) == 9.81


def test_refinement_recovers_perturbed_solution(clean):
    seg, gt = clean
    poses = chained_poses(seg, TRUE_BG)
    sol = solve_vgs(poses, seg.extrinsics)
    # knock the linear solution off by 1 degree and 3 percent scale
    g_bad = exp_so3(np.deg2rad(1.0) * np.array([1.0, 0.0, 0.0])) @ sol.gravity
    state = refine_scale_gravity(poses, g_bad, 1.03 * sol.scale, seg.extrinsics)
    assert angle_between(state.gravity, gt.gravity) < 1e-6
    assert abs(state.scale - gt.scale) / gt.scale < 1e-6
    assert float(np.linalg.norm(state.gravity)) == 9.81
    assert state.iterations <= 4


def test_single_shot_removes_most_of_the_error(clean):
    seg, gt = clean
    poses = chained_poses(seg, TRUE_BG)
    sol = solve_vgs(poses, seg.extrinsics)
    g_bad = exp_so3(np.deg2rad(1.0) * np.array([0.0, 1.0, 0.0])) @ sol.gravity
    state = refine_scale_gravity(
        poses, g_bad, 1.03 * sol.scale, seg.extrinsics, max_outer=1
    )
    assert state.iterations == 1
    assert angle_between(state.gravity, gt.gravity) < np.deg2rad(1.0) / 5.0


def test_recovered_velocities_match_truth(clean):
    seg, gt = clean
    poses = chained_poses(seg, TRUE_BG)
    sol = solve_vgs(poses, seg.extrinsics)
    vel = recover_velocities(poses, sol.scale, sol.gravity, seg.extrinsics)
    assert vel.shape == (seg.n_keyframes, 3)
    assert np.max(np.abs(vel - gt.velocities)) < 1e-6
    assert np.max(np.abs(vel - sol.velocities)) < 1e-6


def test_triple_rows_shapes(clean):
    seg, gt = clean
    poses = chained_poses(seg, TRUE_BG)
    r_c0i = gravity_to_rotation(gt.gravity)
    rows = build_triple_rows(poses, r_c0i, 9.81, seg.extrinsics)
    assert len(rows) == seg.n_keyframes - 2
    for row in rows:
        assert row.lam.shape == (3,)
        assert row.phi.shape == (3, 2)
        assert row.psi.shape == (3,)
        assert np.all(np.isfinite(row.psi))


def test_refinement_error_surface():
    extr = Extrinsics(np.eye(3), np.zeros(3))
    g0 = np.array([0.0, 0.0, 9.81])
    with pytest.raises(UnobservableError, match="at least 3 keyframes"):
        refine_scale_gravity(static_poses(n_kf=2), g0, 1.0, extr)
    with pytest.raises(ValueError, match="non-positive initial scale"):
        refine_scale_gravity(static_poses(), g0, 0.0, extr)
    with pytest.raises(UnobservableError, match="rank-deficient triple system"):
        refine_scale_gravity(static_poses(), g0, 1.0, extr)
