"""Gyro bias recovery from epipolar-plane normal coplanarity."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import TRUE_BG
from vinit.bias import (
    EPS_REG,
    BearingPair,
    Extrinsics,
    KeyframePairProblem,
    estimate_bias,
    nec_matrix,
    objective_and_gradient,
    pnec_variances,
    translation_degenerate,
    weighted_nec_matrix,
)
from vinit.errors import UnobservableError
from vinit.geometry import exp_so3, min_eig_sym3
from vinit.pipeline import build_problems
from vinit.synthetic import generate, make_config


@pytest.fixture(scope="module")
def clean_problems(clean):
    seg, _ = clean
    return build_problems(seg, need_cov=False)


@pytest.fixture(scope="module")
def noisy_problems(noisy):
    seg, _ = noisy
    return build_problems(seg, need_cov=True)


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_normals_coplanar_at_true_bias(clean_problems):
    for problem in clean_problems:
        m = nec_matrix(problem, TRUE_BG)
        assert_allclose(m, m.T, atol=1e-12)
        lam, _ = min_eig_sym3(m)
        assert lam < 1e-10 * np.trace(m)
        # away from the true bias the normals leave their common plane
        lam_off, _ = min_eig_sym3(nec_matrix(problem, TRUE_BG + [0.05, 0.0, 0.0]))
        assert lam_off > 100.0 * max(lam, 1e-18)


def test_nec_recovers_bias_noise_free(clean_problems):
    est = estimate_bias(clean_problems, mode="nec")
    assert est.converged
    assert est.problems_used == len(clean_problems)
    assert np.max(np.abs(est.bg - TRUE_BG)) < 5e-4
    hist = np.array(est.objective_history)
    assert hist[-1] <= hist[0]
    assert np.all(np.diff(hist) <= 1e-15)  # damped steps only ever improve
    assert est.final_objective == pytest.approx(hist[-1])


def test_warm_start_stays_at_solution(clean_problems):
    est = estimate_bias(clean_problems, mode="nec", init_bg=TRUE_BG)
    assert np.max(np.abs(est.bg - TRUE_BG)) < 5e-4


def test_pnec_runs_on_noisy_covariances(noisy_problems):
    est = estimate_bias(noisy_problems, mode="pnec")
    assert est.converged
    assert np.max(np.abs(est.bg - TRUE_BG)) < 0.05


def test_uniform_weight_rescale_is_invariant(noisy_problems):
    w1 = [np.ones(len(p)) for p in noisy_problems]
    w7 = [7.0 * w for w in w1]
    a = estimate_bias(noisy_problems, mode="pnec", weights=w1)
    b = estimate_bias(noisy_problems, mode="pnec", weights=w7)
    assert np.max(np.abs(a.bg - b.bg)) < 1e-10


def test_uniform_weights_match_nec(noisy_problems):
    nec = estimate_bias(noisy_problems, mode="nec")
    uni = estimate_bias(
        noisy_problems, mode="pnec", weights=[np.ones(len(p)) for p in noisy_problems]
    )
    assert np.max(np.abs(nec.bg - uni.bg)) < 1e-10


def test_weighted_matrix_scales_linearly(noisy_problems):
    problem = noisy_problems[0]
    m = nec_matrix(problem, TRUE_BG)
    m3 = weighted_nec_matrix(problem, TRUE_BG, weights=3.0 * np.ones(len(problem)))
    assert_allclose(m3, 3.0 * m, rtol=1e-12)


def test_zero_covariance_floors_to_regularizer(clean_problems):
    problem = clean_problems[0]
    zeroed = KeyframePairProblem.from_arrays(
        problem.f_i, problem.f_j, np.zeros((len(problem), 3, 3)),
        problem.preint, problem.extrinsics,
    )
    variances = pnec_variances(zeroed, TRUE_BG)
    assert np.all(variances == EPS_REG)
    m = weighted_nec_matrix(zeroed, TRUE_BG)  # pnec weights, all floored
    assert_allclose(m, nec_matrix(zeroed, TRUE_BG) / EPS_REG, rtol=1e-12)


def test_single_bearing_matrix_is_rank_deficient(clean_problems):
    problem = clean_problems[0]
    one = KeyframePairProblem.from_arrays(
        problem.f_i[:1], problem.f_j[:1], None, problem.preint, problem.extrinsics
    )
    lam, _ = min_eig_sym3(nec_matrix(one, np.zeros(3)))
    assert abs(lam) < 1e-12 * np.trace(nec_matrix(one, np.zeros(3)))


def test_min_bearing_gate(clean_problems):
    starved = [
        KeyframePairProblem.from_arrays(
            p.f_i[:5], p.f_j[:5], None, p.preint, p.extrinsics
        )
        for p in clean_problems
    ]
    with pytest.raises(UnobservableError, match="unobservable bias"):
        estimate_bias(starved, mode="nec")
    # mixed: under-supported pairs are dropped, the rest still solve
    mixed = starved[:2] + list(clean_problems[2:])
    est = estimate_bias(mixed, mode="nec")
    assert est.problems_used == len(clean_problems) - 2
    assert np.max(np.abs(est.bg - TRUE_BG)) < 5e-4


def test_gradient_matches_finite_differences(noisy_problems):
    rng = np.random.default_rng(0)
    eps = 1e-6
    for problem in noisy_problems:
        bg = 0.05 * rng.normal(size=3)
        w = [np.ones(len(problem))]
        _, _, grad = objective_and_gradient([problem], w, bg)
        fd = np.zeros(3)
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = eps
            hi, _, _ = objective_and_gradient([problem], w, bg + e, want_grad=False)
            lo, _, _ = objective_and_gradient([problem], w, bg - e, want_grad=False)
            fd[axis] = (hi - lo) / (2.0 * eps)
        assert np.max(np.abs(grad - fd)) < 1e-5 * max(1.0, np.linalg.norm(fd))


def test_translation_degeneracy_flag():
    rot_only = make_config(
        trajectory="rotation_only", p_bc=np.zeros(3),
        pixel_sigma_major=2.0, pixel_var_ratio=10.0, seed=5,
    )
    seg, _ = generate(rot_only)
    degenerate = build_problems(seg, need_cov=True)
    assert all(translation_degenerate(p, np.zeros(3)) for p in degenerate)

    moving, _ = generate(make_config(pixel_sigma_major=2.0, seed=5))
    assert not any(
        translation_degenerate(p, np.zeros(3))
        for p in build_problems(moving, need_cov=True)
    )

    # with every weight floored, the probabilistic solve degrades to plain nec
    nec = estimate_bias(degenerate, mode="nec")
    pnec = estimate_bias(degenerate, mode="pnec")
    assert np.max(np.abs(nec.bg - pnec.bg)) < 1e-8


def test_downweighting_beats_uniform_on_outliers(noisy_problems):
    rng = np.random.default_rng(1)
    corrupted = []
    for problem in noisy_problems:
        f_j = problem.f_j.copy()
        sig = problem.sigma3d.copy()
        bad = rng.choice(len(problem), size=12, replace=False)
        for k in bad:
            f_j[k] = exp_so3(0.03 * rng.normal(size=3)) @ f_j[k]
            sig[k] *= 1e4  # the tracker knows these are unreliable
        corrupted.append(
            KeyframePairProblem.from_arrays(
                unit_rows(problem.f_i), unit_rows(f_j), sig,
                problem.preint, problem.extrinsics, p_ij_hint=problem.p_ij_hint,
            )
        )
    err_nec = np.linalg.norm(estimate_bias(corrupted, mode="nec").bg - TRUE_BG)
    err_pnec = np.linalg.norm(estimate_bias(corrupted, mode="pnec").bg - TRUE_BG)
    assert err_pnec < err_nec


def test_input_validation(clean_problems, noisy_problems):
    problem = clean_problems[0]
    with pytest.raises(ValueError, match="unknown mode"):
        estimate_bias(clean_problems, mode="irls")
    with pytest.raises(ValueError, match="covariances on every pair"):
        estimate_bias(clean_problems, mode="pnec")
    with pytest.raises(ValueError, match="weights do not match"):
        estimate_bias(noisy_problems, mode="pnec",
                      weights=[np.ones(3) for _ in noisy_problems])
    with pytest.raises(ValueError, match="at least one bearing"):
        KeyframePairProblem([], problem.preint, problem.extrinsics)
    with pytest.raises(ValueError, match=r"must both be \(n, 3\)"):
        KeyframePairProblem.from_arrays(
            problem.f_i[:4], problem.f_j[:5], None, problem.preint, problem.extrinsics
        )
    with pytest.raises(ValueError, match="unit vectors"):
        KeyframePairProblem.from_arrays(
            2.0 * problem.f_i, problem.f_j, None, problem.preint, problem.extrinsics
        )
    with pytest.raises(ValueError, match="unit vectors"):
        BearingPair(np.array([1.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))


def test_extrinsics_and_bearing_roundtrip(noisy_problems):
    problem = noisy_problems[0]
    pairs = problem.bearings
    assert len(pairs) == len(problem)
    assert_allclose(pairs[0].f_i, problem.f_i[0])
    assert_allclose(pairs[0].uncertainty.sigma3d, problem.sigma3d[0])
    rebuilt = KeyframePairProblem(pairs, problem.preint, problem.extrinsics)
    assert_allclose(rebuilt.f_j, problem.f_j)
    assert isinstance(problem.extrinsics, Extrinsics)
