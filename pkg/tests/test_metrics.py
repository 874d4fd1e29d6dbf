"""Similarity alignment and per-segment scoring."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from vinit.geometry import exp_so3
from vinit.metrics import (
    SegmentMetrics,
    aggregate,
    evaluate_segment,
    failed_metrics,
    parse_variant,
    run_ablation,
    run_segments,
    umeyama_alignment,
)
from vinit.pipeline import initialize_segment
from vinit.synthetic import generate, make_config


def metrics_row(scale_error, success=True):
    return SegmentMetrics(
        bias_error=0.01, rotation_rmse=0.02, velocity_rmse=0.03,
        gravity_dir_error_deg=0.5, scale_error=scale_error, success=success,
    )


def test_umeyama_recovers_similarity():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(40, 3))
    rot = exp_so3(rng.normal(size=3))
    s_true, t_true = 2.345, np.array([0.4, -1.2, 3.3])
    dst = s_true * src @ rot.T + t_true
    s, r, t = umeyama_alignment(src, dst)
    assert abs(s - s_true) < 1e-12
    assert_allclose(r, rot, atol=1e-12)
    assert_allclose(t, t_true, atol=1e-12)
    assert_allclose(s * src @ r.T + t, dst, atol=1e-12)


def test_umeyama_reflection_guard():
    rng = np.random.default_rng(1)
    src = rng.normal(size=(30, 3))
    dst = src.copy()
    dst[:, 0] *= -1.0  # mirrored cloud
    s, r, t = umeyama_alignment(src, dst)
    assert abs(np.linalg.det(r) - 1.0) < 1e-9  # stays a proper rotation
    assert s > 0.0


def test_umeyama_input_validation():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(10, 3))
    with pytest.raises(ValueError, match=r"matching \(n, 3\)"):
        umeyama_alignment(pts, pts[:5])
    with pytest.raises(ValueError, match="at least 3 points"):
        umeyama_alignment(pts[:2], pts[:2])
    line = np.outer(np.arange(6, dtype=float), np.ones(3))
    with pytest.raises(ValueError, match="degenerate point set"):
        umeyama_alignment(line, line)
    flat = np.tile([[1.0, 2.0, 3.0]], (5, 1))
    with pytest.raises(ValueError, match="degenerate point set"):
        umeyama_alignment(flat, flat)


def test_evaluate_segment_noise_free(clean):
    seg, gt = clean
    result = initialize_segment(seg, mode="nec")
    m = evaluate_segment(seg, result, gt)
    assert m.success
    assert m.bias_error < 1e-6
    assert m.rotation_rmse < 1e-6
    assert m.velocity_rmse < 1e-6
    assert m.gravity_dir_error_deg < 1e-6
    assert m.scale_error < 1e-6
    assert set(m.stage_times_ms) == {"preintegration", "features", "bias",
                                     "vgs", "refine"}


def test_evaluate_segment_none_is_failure(clean):
    seg, gt = clean
    m = evaluate_segment(seg, None, gt)
    assert not m.success and np.isinf(m.scale_error)
    assert not failed_metrics().success


def test_aggregate_over_mixed_rows():
    rows = [metrics_row(0.1), metrics_row(0.3), failed_metrics()]
    agg = aggregate(rows)
    assert agg.n_segments == 3 and agg.n_success == 2
    assert agg.success_rate == pytest.approx(2.0 / 3.0)
    assert agg.rmse["scale_error"] == pytest.approx(np.sqrt((0.01 + 0.09) / 2.0))
    assert agg.rmse["bias_error"] == pytest.approx(0.01)
    assert agg.scale_iqr == pytest.approx(0.1)
    empty = aggregate([failed_metrics()])
    assert empty.n_success == 0 and np.isnan(empty.rmse["scale_error"])


def test_parse_variant():
    assert parse_variant("pnec:on") == ("pnec", True)
    assert parse_variant(" nec:off ") == ("nec", False)
    with pytest.raises(ValueError, match="unknown mode"):
        parse_variant("gauss:on")
    with pytest.raises(ValueError, match="on/off"):
        parse_variant("nec:maybe")


def test_run_segments_handles_failures(clean):
    seg, gt = clean
    degenerate, dgt = generate(
        make_config(trajectory="rotation_only", p_bc=np.zeros(3), seed=4)
    )
    rows = run_segments([seg, degenerate], [gt, dgt], mode="nec", refine=True)
    assert rows[0].success
    assert not rows[1].success  # scale is unobservable without translation
    agg = aggregate(rows)
    assert agg.n_success == 1


def test_run_segments_without_truth(clean):
    seg, _ = clean
    rows = run_segments([seg], [None], mode="nec", refine=False)
    assert rows[0].success
    assert np.isnan(rows[0].scale_error)


def test_run_ablation_rows(clean):
    seg, gt = clean
    variants = [("nec", False), ("nec", True), ("nec", True)]
    rows = run_ablation([seg], [gt], variants)
    assert [r["variant"] for r in rows] == ["nec:off", "nec:on", "nec:on"]
    for row in rows:
        assert row["success_rate"] == 1.0
        assert row["scale_error"] < 1e-6
    # duplicated variants are bit-identical: the harness reuses nothing stale
    a, b = rows[1], rows[2]
    assert all(a[k] == b[k] for k in a if not k.startswith("_"))
