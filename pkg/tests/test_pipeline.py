"""End-to-end segment initialization glue."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import TRUE_BG
from vinit.errors import UnobservableError
from vinit.pipeline import InitResult, build_problems, initialize_segment
from vinit.synthetic import generate, make_config


def test_result_structure_noise_free(clean):
    seg, gt = clean
    res = initialize_segment(seg, mode="nec", refine=True)
    assert isinstance(res, InitResult)
    assert res.mode == "nec" and res.refined
    assert res.rotations.shape == (seg.n_keyframes, 3, 3)
    assert_allclose(res.rotations[0], seg.extrinsics.r_bc.T, atol=1e-15)
    assert res.velocities.shape == (seg.n_keyframes, 3)
    assert set(res.timings) == {"preintegration", "features", "bias", "vgs",
                                "refine"}
    assert res.refinement is not None
    assert np.max(np.abs(res.gyro_bias - TRUE_BG)) < 1e-6
    assert abs(res.scale - gt.scale) / gt.scale < 1e-6


def test_refine_off_keeps_linear_solution(clean):
    seg, gt = clean
    res = initialize_segment(seg, mode="nec", refine=False)
    assert not res.refined and res.refinement is None
    assert_allclose(res.gravity, res.vgs.gravity)
    assert_allclose(res.velocities, res.vgs.velocities)
    assert res.scale == res.vgs.scale


def test_build_problems_pairings(noisy):
    seg, _ = noisy
    consecutive = build_problems(seg, pairing="consecutive")
    assert len(consecutive) == seg.n_keyframes - 1
    everything = build_problems(seg, pairing="all")
    assert len(everything) == seg.n_keyframes * (seg.n_keyframes - 1) // 2
    assert all(p.sigma3d is not None for p in consecutive)
    assert all(p.p_ij_hint is not None for p in consecutive)
    bare = build_problems(seg, need_cov=False)
    assert all(p.sigma3d is None for p in bare)
    with pytest.raises(ValueError, match="unknown pairing"):
        build_problems(seg, pairing="ring")


def test_all_pairing_solves_too(clean):
    seg, gt = clean
    res = initialize_segment(seg, mode="nec", pairing="all", refine=False)
    assert np.max(np.abs(res.gyro_bias - TRUE_BG)) < 1e-6


def test_bias_passes_tighten_the_estimate(clean):
    seg, _ = clean
    one = initialize_segment(seg, mode="nec", refine=False, bias_passes=1)
    two = initialize_segment(seg, mode="nec", refine=False, bias_passes=2)
    err1 = np.max(np.abs(one.gyro_bias - TRUE_BG))
    err2 = np.max(np.abs(two.gyro_bias - TRUE_BG))
    assert err1 < 1e-3
    assert err2 < 1e-6
    assert err2 <= err1


def test_warm_start(clean):
    seg, _ = clean
    res = initialize_segment(seg, mode="nec", refine=False, bias_passes=1,
                             init_bg=TRUE_BG)
    assert np.max(np.abs(res.gyro_bias - TRUE_BG)) < 1e-6


def test_pnec_needs_covariances(clean):
    seg, _ = clean
    with pytest.raises(ValueError, match="per-feature covariances"):
        initialize_segment(seg, mode="pnec")


def test_pnec_full_run(noisy):
    seg, gt = noisy
    res = initialize_segment(seg, mode="pnec", refine=True)
    assert res.mode == "pnec"
    assert np.max(np.abs(res.gyro_bias - gt.gyro_bias)) < 0.05
    assert float(np.linalg.norm(res.gravity)) == 9.81


def test_argument_validation(clean):
    seg, _ = clean
    with pytest.raises(ValueError, match="unknown mode"):
        initialize_segment(seg, mode="epnp")
    with pytest.raises(ValueError, match="bias_passes must be >= 1"):
        initialize_segment(seg, mode="nec", bias_passes=0)
    short, _ = generate(make_config(duration=0.5, seed=0))
    assert short.n_keyframes == 3
    with pytest.raises(UnobservableError, match="at least 4 keyframes"):
        initialize_segment(short, mode="nec")
