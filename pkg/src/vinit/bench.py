"""Benchmark CLI: run the initializer over segments and report metrics.

Machine-readable reports (JSON/CSV) are byte-deterministic for a fixed
dataset, seed, and configuration, so wall-clock timings are deliberately kept
out of them; timings appear only in the human table on stdout.

Exit codes: 0 success, 2 dataset/config errors, 3 when no segment initialized.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import load_asl, segment as cut_segments, segment_truths
from .errors import DatasetError, ScenarioError
from .metrics import aggregate, parse_variant, run_ablation, run_segments
from .synthetic import _TRAJECTORIES, ScenarioConfig, generate


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", help="ASL-layout dataset directory")
    src.add_argument(
        "--synthetic",
        help="scenario key=value file, or a bare trajectory name "
             f"({'/'.join(_TRAJECTORIES)})",
    )
    p.add_argument("--segments", type=int, default=20,
                   help="number of segments (synthetic) or cap (dataset)")
    p.add_argument("--kf-count", type=int, default=10)
    p.add_argument("--kf-rate", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gravity", type=float, default=9.81)
    p.add_argument("--pairing", choices=("consecutive", "all"), default="consecutive")
    p.add_argument("--out", help="report path; .json or .csv by extension")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vinit-bench",
                                description="visual-inertial initializer benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one pipeline configuration")
    _add_data_flags(run_p)
    run_p.add_argument("--mode", choices=("nec", "pnec"), default="pnec")
    run_p.add_argument("--refine", choices=("on", "off"), default="on")

    abl_p = sub.add_parser("ablate", help="run the estimator/refinement ablation")
    _add_data_flags(abl_p)
    abl_p.add_argument(
        "--variants",
        default="nec:off,nec:on,pnec:off,pnec:on",
        help="comma-separated mode:refine variants",
    )
    return p


def _load_segments(args):
    """Returns (segments, truths, source_label)."""
    if args.dataset is not None:
        ds = load_asl(args.dataset)
        segs = cut_segments(
            ds,
            kf_rate=args.kf_rate,
            kf_count=args.kf_count,
            max_segments=args.segments,
            gravity_magnitude=args.gravity,
        )
        truths = segment_truths(ds, segs, gravity_magnitude=args.gravity)
        return segs, truths, str(args.dataset)

    spec_arg = args.synthetic
    if Path(spec_arg).exists():
        base = ScenarioConfig.from_file(spec_arg)
        label = str(spec_arg)
    elif spec_arg in _TRAJECTORIES:
        base = ScenarioConfig(trajectory=spec_arg)
        label = f"synthetic:{spec_arg}"
    else:
        raise ScenarioError(
            f"--synthetic {spec_arg!r}: not a file and not a known trajectory"
        )
    duration = (args.kf_count - 1) / args.kf_rate
    base = replace(base, kf_rate=args.kf_rate, duration=duration)
    seeds = np.random.SeedSequence(args.seed).generate_state(max(args.segments, 1))
    segs, truths = [], []
    for i in range(args.segments):
        cfg = replace(base, seed=int(seeds[i]))
        seg, gt = generate(cfg)
        segs.append(seg)
        truths.append(gt)
    return segs, truths, label


def _sanitize(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def _write_report(path: str, payload: dict, rows: list[dict]) -> None:
    path = Path(path)
    if path.suffix == ".json":
        doc = {k: v for k, v in payload.items()}
        doc["rows"] = [
            {k: _sanitize(v) for k, v in row.items() if not k.startswith("_")}
            for row in rows
        ]
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
        path.write_text(text)
    elif path.suffix == ".csv":
        keys = [k for k in rows[0] if not k.startswith("_")] if rows else []
        lines = [",".join(keys)]
        for row in rows:
            lines.append(",".join(_csv_cell(row[k]) for k in keys))
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"--out {path}: extension must be .json or .csv")


def _csv_cell(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        # plain-float repr round-trips exactly (numpy scalars repr differently)
        return repr(float(value))
    return str(value)


def _fmt(value, width=12, prec=6):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return " " * (width - 3) + "---"
    return f"{value:{width}.{prec}f}"


def _print_run_table(metrics, agg, label) -> None:
    print(f"source: {label}")
    print(f"{'seg':>4} {'bias[rad/s]':>12} {'rot[rad]':>12} {'vel[m/s]':>12} "
          f"{'gdir[deg]':>12} {'scale_err':>12} {'ok':>3}")
    for i, m in enumerate(metrics):
        print(f"{i:>4} {_fmt(m.bias_error)} {_fmt(m.rotation_rmse)} "
              f"{_fmt(m.velocity_rmse)} {_fmt(m.gravity_dir_error_deg)} "
              f"{_fmt(m.scale_error)} {'  y' if m.success else '  n'}")
    print(f"segments: {agg.n_segments}  success: {agg.n_success} "
          f"({100.0 * agg.success_rate:.1f}%)")
    r = agg.rmse
    print("rmse over successes: "
          f"bias {_fmt(r['bias_error'], 10)} rot {_fmt(r['rotation_rmse'], 10)} "
          f"vel {_fmt(r['velocity_rmse'], 10)} gdir {_fmt(r['gravity_dir_error_deg'], 10)} "
          f"scale {_fmt(r['scale_error'], 10)}")
    print(f"scale IQR (successes): {_fmt(agg.scale_iqr, 10)}")
    if agg.mean_stage_ms:
        parts = [f"{k} {v:.2f}" for k, v in sorted(agg.mean_stage_ms.items())]
        total = sum(agg.mean_stage_ms.values())
        print("mean stage times [ms]: " + "  ".join(parts) + f"  total {total:.2f}")


def _print_ablation_table(rows) -> None:
    cols = ("variant", "bias_error", "rotation_rmse", "scale_error",
            "velocity_rmse", "gravity_dir_error_deg", "sum")
    print(f"{'variant':>10} {'Bg':>12} {'Rot':>12} {'Scale':>12} "
          f"{'Vel':>12} {'G.Dir':>12} {'SUM':>12}")
    for row in rows:
        print(f"{row['variant']:>10} " + " ".join(
            _fmt(row[k]) for k in cols[1:]
        ))
    for row in rows:
        stages = row.get("_mean_stage_ms") or {}
        if stages:
            parts = [f"{k} {v:.2f}" for k, v in sorted(stages.items())]
            print(f"{row['variant']:>10} stage times [ms]: " + "  ".join(parts))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        segments, truths, label = _load_segments(args)
    except (DatasetError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    pipe_kwargs = {"pairing": args.pairing, "gravity_magnitude": args.gravity}

    if args.command == "run":
        refine = args.refine == "on"
        metrics = run_segments(segments, truths, mode=args.mode, refine=refine,
                               **pipe_kwargs)
        agg = aggregate(metrics)
        _print_run_table(metrics, agg, label)
        rows = [dict({"segment": i}, **m.as_row()) for i, m in enumerate(metrics)]
        if args.out:
            payload = {
                "command": "run",
                "source": label,
                "mode": args.mode,
                "refine": refine,
                "seed": args.seed,
                "kf_count": args.kf_count,
                "kf_rate": args.kf_rate,
                "segments": args.segments,
                "aggregate": {
                    "n_segments": agg.n_segments,
                    "n_success": agg.n_success,
                    "success_rate": _sanitize(agg.success_rate),
                    "scale_iqr": _sanitize(agg.scale_iqr),
                    "rmse": {k: _sanitize(v) for k, v in agg.rmse.items()},
                },
            }
            _write_report(args.out, payload, rows)
        if agg.n_success == 0:
            print("error: no segment initialized successfully", file=sys.stderr)
            return 3
        return 0

    # ablate
    try:
        variants = [parse_variant(v) for v in args.variants.split(",") if v.strip()]
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = run_ablation(segments, truths, variants, **pipe_kwargs)
    _print_ablation_table(rows)
    if args.out:
        payload = {
            "command": "ablate",
            "source": label,
            "seed": args.seed,
            "kf_count": args.kf_count,
            "kf_rate": args.kf_rate,
            "segments": args.segments,
            "variants": [f"{m}:{'on' if r else 'off'}" for m, r in variants],
        }
        _write_report(args.out, payload, rows)
    if rows and all(
        row["success_rate"] == 0.0 or np.isnan(row["success_rate"]) for row in rows
    ):
        print("error: no segment initialized successfully", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
