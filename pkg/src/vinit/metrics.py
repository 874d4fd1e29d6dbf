"""Evaluation metrics and ablation tables.

Conventions (documented because the usual benchmark papers leave them loose):
rotation RMSE is the RMS geodesic angle after aligning the first keyframe;
velocity RMSE is computed after the same first-frame rotation alignment;
scale error is |s_umeyama - 1| from a similarity alignment of estimated body
positions onto ground truth, so a perfect metric reconstruction scores 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import GroundTruth, InitSegment
from .errors import VinitError
from .geometry import log_so3
from .pipeline import InitResult, initialize_segment


def umeyama_alignment(src: np.ndarray, dst: np.ndarray):
    """Closed-form similarity (s, R, t) minimizing sum ||dst - (s R src + t)||^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("expected matching (n, 3) point arrays")
    n = len(src)
    if n < 3:
        raise ValueError("need at least 3 points")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    ds = src - mu_s
    dd = dst - mu_d
    var_s = float(np.mean(np.sum(ds * ds, axis=1)))
    cov = dd.T @ ds / n
    u, d, vt = np.linalg.svd(cov)
    if var_s <= 0.0 or d[1] <= 1e-15 * max(d[0], 1.0):
        raise ValueError("degenerate point set (coincident or collinear)")
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rot = u @ np.diag(s_fix) @ vt
    scale = float(np.sum(d * s_fix) / var_s)
    trans = mu_d - scale * rot @ mu_s
    return scale, rot, trans


@dataclass
class SegmentMetrics:
    bias_error: float              # ||bg_hat - bg*||, rad/s
    rotation_rmse: float           # rad, geodesic, first frame aligned
    velocity_rmse: float           # m/s
    gravity_dir_error_deg: float
    scale_error: float             # |s_umeyama - 1|
    success: bool                  # scale_error < 1
    stage_times_ms: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {
            "bias_error": self.bias_error,
            "rotation_rmse": self.rotation_rmse,
            "velocity_rmse": self.velocity_rmse,
            "gravity_dir_error_deg": self.gravity_dir_error_deg,
            "scale_error": self.scale_error,
            "success": bool(self.success),
        }


def failed_metrics() -> SegmentMetrics:
    inf = float("inf")
    return SegmentMetrics(
        bias_error=inf, rotation_rmse=inf, velocity_rmse=inf,
        gravity_dir_error_deg=inf, scale_error=inf, success=False,
    )


def evaluate_segment(
    seg: InitSegment, result: InitResult | None, gt: GroundTruth
) -> SegmentMetrics:
    """Score one initializer output against ground truth (None = clean failure)."""
    if result is None:
        return failed_metrics()

    r_align = gt.rotations[0] @ result.rotations[0].T
    n = len(gt.rotations)

    ang = np.empty(n)
    for i in range(n):
        ang[i] = np.linalg.norm(log_so3((r_align @ result.rotations[i]).T @ gt.rotations[i]))
    rotation_rmse = float(np.sqrt(np.mean(ang ** 2)))

    vel = result.velocities @ r_align.T
    velocity_rmse = float(np.sqrt(np.mean(np.sum((vel - gt.velocities) ** 2, axis=1))))

    g_est = r_align @ result.gravity
    denom = np.linalg.norm(g_est) * np.linalg.norm(gt.gravity)
    cosang = float(np.clip(g_est @ gt.gravity / denom, -1.0, 1.0))
    gravity_dir_error_deg = float(np.degrees(np.arccos(cosang)))

    p_bc = seg.extrinsics.p_bc
    est_pos = result.scale * seg.cam_translations - np.einsum(
        "kij,j->ki", result.rotations, p_bc
    )
    est_pos = est_pos @ r_align.T
    try:
        s_u, _, _ = umeyama_alignment(est_pos, gt.positions)
        scale_error = abs(s_u - 1.0)
    except ValueError:
        scale_error = float("inf")

    bias_error = float(np.linalg.norm(result.gyro_bias - gt.gyro_bias))
    stage_ms = {k: 1e3 * v for k, v in result.timings.items()}
    return SegmentMetrics(
        bias_error=bias_error,
        rotation_rmse=rotation_rmse,
        velocity_rmse=velocity_rmse,
        gravity_dir_error_deg=gravity_dir_error_deg,
        scale_error=scale_error,
        success=bool(scale_error < 1.0),
        stage_times_ms=stage_ms,
    )


@dataclass
class AggregateReport:
    n_segments: int
    n_success: int
    success_rate: float
    rmse: dict                     # metric name -> RMS over successful segments
    scale_iqr: float               # Q3 - Q1 of scale errors, successful only
    mean_stage_ms: dict

    def as_dict(self) -> dict:
        return {
            "n_segments": self.n_segments,
            "n_success": self.n_success,
            "success_rate": self.success_rate,
            "rmse": dict(self.rmse),
            "scale_iqr": self.scale_iqr,
        }


_METRIC_KEYS = (
    "bias_error", "rotation_rmse", "velocity_rmse", "gravity_dir_error_deg",
    "scale_error",
)


def aggregate(metrics: list[SegmentMetrics]) -> AggregateReport:
    n = len(metrics)
    ok = [m for m in metrics if m.success]
    rmse = {}
    for key in _METRIC_KEYS:
        if ok:
            vals = np.array([getattr(m, key) for m in ok])
            rmse[key] = float(np.sqrt(np.mean(vals ** 2)))
        else:
            rmse[key] = float("nan")
    if ok:
        scales = np.array([m.scale_error for m in ok])
        q1, q3 = np.percentile(scales, [25.0, 75.0])
        iqr = float(q3 - q1)
    else:
        iqr = float("nan")
    stage_keys = set()
    for m in metrics:
        stage_keys.update(m.stage_times_ms)
    mean_stage = {}
    for key in sorted(stage_keys):
        vals = [m.stage_times_ms[key] for m in metrics if key in m.stage_times_ms]
        mean_stage[key] = float(np.mean(vals)) if vals else float("nan")
    return AggregateReport(
        n_segments=n,
        n_success=len(ok),
        success_rate=float(len(ok) / n) if n else float("nan"),
        rmse=rmse,
        scale_iqr=iqr,
        mean_stage_ms=mean_stage,
    )


def run_segments(
    segments: list[InitSegment],
    truths: list[GroundTruth | None],
    mode: str = "pnec",
    refine: bool = True,
    **pipe_kwargs,
) -> list[SegmentMetrics]:
    """Initialize and score every segment; failures become unsuccessful rows."""
    out = []
    for seg, gt in zip(segments, truths):
        try:
            result = initialize_segment(seg, mode=mode, refine=refine, **pipe_kwargs)
        except (VinitError, np.linalg.LinAlgError):
            result = None
        if gt is None:
            out.append(failed_metrics() if result is None else SegmentMetrics(
                bias_error=float("nan"), rotation_rmse=float("nan"),
                velocity_rmse=float("nan"), gravity_dir_error_deg=float("nan"),
                scale_error=float("nan"), success=True,
                stage_times_ms={k: 1e3 * v for k, v in result.timings.items()},
            ))
        else:
            out.append(evaluate_segment(seg, result, gt))
    return out


def parse_variant(text: str) -> tuple[str, bool]:
    """'pnec:on' -> ('pnec', True); refine defaults to on."""
    parts = text.strip().lower().split(":")
    mode = parts[0]
    if mode not in ("nec", "pnec"):
        raise ValueError(f"unknown mode in variant {text!r}")
    refine = True
    if len(parts) > 1:
        if parts[1] not in ("on", "off"):
            raise ValueError(f"refine must be on/off in variant {text!r}")
        refine = parts[1] == "on"
    return mode, refine


def run_ablation(
    segments: list[InitSegment],
    truths: list[GroundTruth | None],
    variants: list[tuple[str, bool]],
    **pipe_kwargs,
) -> list[dict]:
    """One aggregate row per variant; duplicates yield identical rows."""
    rows = []
    for mode, refine in variants:
        metrics = run_segments(segments, truths, mode=mode, refine=refine, **pipe_kwargs)
        agg = aggregate(metrics)
        r = agg.rmse
        total = sum(
            r[k] for k in _METRIC_KEYS
            if not np.isnan(r[k])
        )
        rows.append({
            "variant": f"{mode}:{'on' if refine else 'off'}",
            "bias_error": r["bias_error"],
            "rotation_rmse": r["rotation_rmse"],
            "scale_error": r["scale_error"],
            "velocity_rmse": r["velocity_rmse"],
            "gravity_dir_error_deg": r["gravity_dir_error_deg"],
            "sum": float(total) if not np.isnan(total) else float("nan"),
            "success_rate": agg.success_rate,
            "_mean_stage_ms": agg.mean_stage_ms,
        })
    return rows
