"""ASL-layout dataset ingest, segmentation, and export.

Expected layout under a dataset root (EuRoC-style):

  imu0/data.csv            timestamp [ns], wx, wy, wz, ax, ay, az
  cam0/data.csv            timestamp [ns], filename (filename unused)
  cam0/sensor.yaml         T_BS (4x4 row-major) and pinhole intrinsics
  tracks.csv               track_id, kf_index, u, v[, c11, c12, c22]
  translations.csv         kf_index, x, y, z   (optional; '# frame: segment')
  state_groundtruth_estimate0/data.csv   optional EuRoC ground truth

Timestamps are kept as integer nanoseconds internally and converted to
seconds relative to a local origin only at math boundaries, because absolute
nanosecond stamps exceed the exact range of float64.

Correspondences come from the sidecar track table (a real feature tracker is
out of scope); keyframes are the camera frames nearest to a fixed-rate grid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy.spatial.transform import Rotation as _ScipyRotation

from .bias import BearingPair, Extrinsics
from .errors import DatasetError
from .uncertainty import CameraIntrinsics, FeatureUncertainty, sigma_points, unproject_unscented


def times_to_seconds(t_ns: np.ndarray, origin_ns: int) -> np.ndarray:
    """Relative seconds; differences of int64 stamps stay exact."""
    return (np.asarray(t_ns, dtype=np.int64) - np.int64(origin_ns)) * 1e-9


def quat_wxyz_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return _ScipyRotation.from_quat(np.concatenate([q[1:], q[:1]])).as_matrix()


def matrix_to_quat_wxyz(rot: np.ndarray) -> np.ndarray:
    q = _ScipyRotation.from_matrix(np.asarray(rot, dtype=float)).as_quat()
    return np.concatenate([q[3:], q[:3]])


@dataclass(frozen=True)
class KeyframeObservations:
    """Tracked features seen in one keyframe, sorted by track id."""
    track_ids: np.ndarray          # (m,) int64
    uv: np.ndarray                 # (m, 2) pixels
    cov: np.ndarray | None         # (m, 3) packed [c11, c12, c22] or None


@dataclass(frozen=True)
class GroundTruth:
    """True keyframe states in the segment's first-camera frame."""
    rotations: np.ndarray          # (N,3,3) body-to-reference
    positions: np.ndarray          # (N,3) body origins, metric
    velocities: np.ndarray         # (N,3) metric
    gravity: np.ndarray            # (3,) sensed-up gravity vector, |g| = G
    gyro_bias: np.ndarray          # (3,)
    scale: float                   # metric scale of the up-to-scale translations


@dataclass
class InitSegment:
    """Everything the initializer needs for one keyframe window."""
    kf_times_ns: np.ndarray            # (N,) int64, subset of camera stamps
    imu_times_ns: np.ndarray           # (M,) int64
    imu_gyro: np.ndarray               # (M,3)
    imu_accel: np.ndarray              # (M,3)
    span_bounds: np.ndarray            # (N-1,2) inclusive index ranges into imu arrays
    observations: list[KeyframeObservations]
    cam_translations: np.ndarray       # (N,3) up-to-scale p_{c0 c_i}
    intrinsics: CameraIntrinsics
    extrinsics: Extrinsics

    @property
    def n_keyframes(self) -> int:
        return len(self.kf_times_ns)

    def imu_span(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Relative-seconds timestamps and raw rates for keyframe pair (i, i+1).

        Spans share their boundary sample: the left-Riemann integrator never
        uses the final sample's rates, so each measurement still contributes
        to exactly one pair.
        """
        a, b = self.span_bounds[i]
        t = times_to_seconds(self.imu_times_ns[a:b + 1], int(self.kf_times_ns[0]))
        return t, self.imu_gyro[a:b + 1], self.imu_accel[a:b + 1]

    def bearing_pairs(self, i: int, j: int) -> list[BearingPair]:
        """Correspondences between keyframes i and j, joined on track id."""
        f_i, f_j, sigma3d = self.bearing_arrays(i, j)
        out = []
        for k in range(len(f_i)):
            unc = None
            if sigma3d is not None:
                unc = FeatureUncertainty(
                    sigma2d=self._sigma2d_cache[(i, j)][k], sigma3d=sigma3d[k]
                )
            out.append(BearingPair(f_i[k], f_j[k], unc))
        return out

    def bearing_arrays(
        self, i: int, j: int
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        """Stacked unit bearings and 3D covariances for pair (i, j)."""
        obs_i, obs_j = self.observations[i], self.observations[j]
        common, idx_i, idx_j = np.intersect1d(
            obs_i.track_ids, obs_j.track_ids, assume_unique=True, return_indices=True
        )
        if len(common) == 0:
            return np.zeros((0, 3)), np.zeros((0, 3)), None
        f_i = _unproject_batch(obs_i.uv[idx_i], self.intrinsics)
        f_j = _unproject_batch(obs_j.uv[idx_j], self.intrinsics)
        sigma3d = None
        if obs_j.cov is not None:
            sigma2d, sigma3d = _bearing_cov_batch(
                obs_j.uv[idx_j], obs_j.cov[idx_j], self.intrinsics
            )
            if not hasattr(self, "_sigma2d_cache"):
                self._sigma2d_cache = {}
            self._sigma2d_cache[(i, j)] = sigma2d
        return f_i, f_j, sigma3d


def _unproject_batch(uv: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    homo = np.column_stack([uv, np.ones(len(uv))])
    rays = homo @ intrinsics.k_inv.T
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def _bearing_cov_batch(
    uv: np.ndarray, cov_packed: np.ndarray, intrinsics: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pixel-to-bearing covariance (matches the scalar op pipeline)."""
    m = len(uv)
    sigma2d = np.empty((m, 2, 2))
    sigma2d[:, 0, 0] = cov_packed[:, 0]
    sigma2d[:, 0, 1] = cov_packed[:, 1]
    sigma2d[:, 1, 0] = cov_packed[:, 1]
    sigma2d[:, 1, 1] = cov_packed[:, 2]

    chol = np.zeros((m, 2, 2))
    zero = np.all(cov_packed == 0.0, axis=1)
    todo = ~zero
    if np.any(todo):
        try:
            chol[todo] = np.linalg.cholesky(sigma2d[todo])
        except np.linalg.LinAlgError:
            # singular but nonzero rows: defer to the scalar op's jitter path
            return _bearing_cov_scalar(uv, sigma2d, intrinsics)

    spread = np.sqrt(3.0)
    pts = np.empty((m, 5, 2))
    pts[:, 0] = uv
    pts[:, 1] = uv + spread * chol[:, :, 0]
    pts[:, 2] = uv + spread * chol[:, :, 1]
    pts[:, 3] = uv - spread * chol[:, :, 0]
    pts[:, 4] = uv - spread * chol[:, :, 1]
    w = np.full(5, 1.0 / 6.0)
    w[0] = 1.0 / 3.0

    homo = np.concatenate([pts, np.ones((m, 5, 1))], axis=2)
    rays = homo @ intrinsics.k_inv.T
    rays /= np.linalg.norm(rays, axis=2, keepdims=True)
    dev = rays[:, 1:, :] - rays[:, :1, :]
    mu3 = rays[:, 0, :] + np.einsum("j,mjk->mk", w[1:], dev)
    diff = rays - mu3[:, None, :]
    sigma3d = np.einsum("j,mji,mjk->mik", w, diff, diff)
    return sigma2d, sigma3d


def _bearing_cov_scalar(uv, sigma2d, intrinsics):
    m = len(uv)
    sigma3d = np.empty((m, 3, 3))
    for k in range(m):
        _, sigma3d[k] = unproject_unscented(sigma_points(uv[k], sigma2d[k]), intrinsics)
    return sigma2d, sigma3d


@dataclass
class RawDataset:
    """Parsed ASL directory before segmentation."""
    imu_times_ns: np.ndarray
    imu_gyro: np.ndarray
    imu_accel: np.ndarray
    cam_times_ns: np.ndarray
    intrinsics: CameraIntrinsics
    extrinsics: Extrinsics
    tracks: dict[int, KeyframeObservations] | None   # keyed by global kf index
    translations: np.ndarray | None                  # (K,3) per global kf index
    translations_frame: str | None                   # 'segment' or 'world'
    gt_times_ns: np.ndarray | None
    gt_positions: np.ndarray | None                  # world body positions
    gt_quats_wxyz: np.ndarray | None
    gt_velocities: np.ndarray | None
    gt_gyro_bias: np.ndarray | None


def _read_numeric_csv(path: Path, n_cols: int, int_cols: tuple[int, ...] = (0,)):
    """Parse a comment-tolerant CSV; returns columns plus source line numbers."""
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    rows = []
    lines = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            parts = [p.strip() for p in text.split(",")]
            if len(parts) < n_cols:
                raise DatasetError(
                    f"{path}:{lineno}: expected at least {n_cols} fields, got {len(parts)}"
                )
            try:
                row = [float(parts[c]) for c in range(n_cols)]
                for c in int_cols:
                    row[c] = int(parts[c])
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            rows.append(row)
            lines.append(lineno)
    return rows, lines


def _check_monotone(times: np.ndarray, lines: list[int], path: Path) -> None:
    diffs = np.diff(times)
    if np.any(diffs <= 0):
        bad = int(np.argmax(diffs <= 0)) + 1
        raise DatasetError(f"{path}:{lines[bad]}: non-increasing timestamp")


def _load_sensor_yaml(path: Path) -> tuple[CameraIntrinsics, Extrinsics]:
    if not path.exists():
        raise DatasetError(f"{path}: file not found (camera calibration required)")
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    try:
        t_bs = np.array(doc["T_BS"]["data"], dtype=float).reshape(4, 4)
        fu, fv, cu, cv = [float(x) for x in doc["intrinsics"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: malformed sensor calibration ({exc})") from None
    intr = CameraIntrinsics.from_pinhole(fu, fv, cu, cv)
    extr = Extrinsics(r_bc=t_bs[:3, :3].copy(), p_bc=t_bs[:3, 3].copy())
    return intr, extr


def load_tracks(path: Path) -> dict[int, KeyframeObservations]:
    """Read a sidecar track table keyed by global keyframe index."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    rows, lines = _read_numeric_csv(path, 4, int_cols=(0, 1))
    has_cov = None
    per_kf: dict[int, list] = {}
    with open(path) as fh:
        raw_lines = fh.readlines()
    for row, lineno in zip(rows, lines):
        parts = [p.strip() for p in raw_lines[lineno - 1].strip().split(",")]
        if has_cov is None:
            has_cov = len(parts) >= 7
        if has_cov and len(parts) < 7:
            raise DatasetError(f"{path}:{lineno}: covariance columns missing")
        track_id, kf_idx = int(row[0]), int(row[1])
        entry = [track_id, row[2], row[3]]
        if has_cov:
            try:
                entry += [float(parts[4]), float(parts[5]), float(parts[6])]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
        per_kf.setdefault(kf_idx, []).append(entry)

    out = {}
    for kf_idx, entries in per_kf.items():
        entries.sort(key=lambda e: e[0])
        ids = np.array([e[0] for e in entries], dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise DatasetError(f"{path}: duplicate track id at keyframe {kf_idx}")
        uv = np.array([[e[1], e[2]] for e in entries], dtype=float)
        cov = None
        if has_cov:
            cov = np.array([[e[3], e[4], e[5]] for e in entries], dtype=float)
        out[kf_idx] = KeyframeObservations(track_ids=ids, uv=uv, cov=cov)
    return out


def _load_translations(path: Path) -> tuple[np.ndarray, str]:
    rows, lines = _read_numeric_csv(path, 4, int_cols=(0,))
    frame = "world"
    with open(path) as fh:
        for raw in fh:
            if raw.startswith("#") and "frame:" in raw:
                frame = raw.split("frame:")[1].strip()
    idx = np.array([r[0] for r in rows], dtype=int)
    xyz = np.array([r[1:4] for r in rows], dtype=float)
    order = np.argsort(idx)
    idx, xyz = idx[order], xyz[order]
    if not np.array_equal(idx, np.arange(len(idx))):
        raise DatasetError(f"{path}: keyframe indices must be 0..K-1 without holes")
    return xyz, frame


def load_asl(
    root: str | Path,
    intrinsics: CameraIntrinsics | None = None,
    extrinsics: Extrinsics | None = None,
) -> RawDataset:
    """Parse an ASL-layout directory into raw arrays (no segmentation yet)."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")

    imu_path = root / "imu0" / "data.csv"
    rows, lines = _read_numeric_csv(imu_path, 7)
    if not rows:
        raise DatasetError(f"{imu_path}: no data rows")
    imu_t = np.array([r[0] for r in rows], dtype=np.int64)
    _check_monotone(imu_t, lines, imu_path)
    imu_w = np.array([r[1:4] for r in rows], dtype=float)
    imu_a = np.array([r[4:7] for r in rows], dtype=float)

    cam_path = root / "cam0" / "data.csv"
    if not cam_path.exists():
        raise DatasetError(f"{cam_path}: file not found")
    cam_rows = []
    cam_lines = []
    with open(cam_path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            first = text.split(",")[0].strip()
            try:
                cam_rows.append(int(first))
            except ValueError as exc:
                raise DatasetError(f"{cam_path}:{lineno}: {exc}") from None
            cam_lines.append(lineno)
    if not cam_rows:
        raise DatasetError(f"{cam_path}: no data rows")
    cam_t = np.array(cam_rows, dtype=np.int64)
    _check_monotone(cam_t, cam_lines, cam_path)

    if intrinsics is None or extrinsics is None:
        intr, extr = _load_sensor_yaml(root / "cam0" / "sensor.yaml")
        intrinsics = intrinsics or intr
        extrinsics = extrinsics or extr

    tracks = None
    tracks_path = root / "tracks.csv"
    if tracks_path.exists():
        tracks = load_tracks(tracks_path)

    translations = None
    translations_frame = None
    tpath = root / "translations.csv"
    if tpath.exists():
        translations, translations_frame = _load_translations(tpath)

    gt_t = gt_p = gt_q = gt_v = gt_bw = None
    gt_path = root / "state_groundtruth_estimate0" / "data.csv"
    if gt_path.exists():
        grows, glines = _read_numeric_csv(gt_path, 11)
        gt_t = np.array([r[0] for r in grows], dtype=np.int64)
        _check_monotone(gt_t, glines, gt_path)
        gt_p = np.array([r[1:4] for r in grows], dtype=float)
        gt_q = np.array([r[4:8] for r in grows], dtype=float)
        gt_v = np.array([r[8:11] for r in grows], dtype=float)
        # gyro-bias columns are optional in some exports
        try:
            grows_full, _ = _read_numeric_csv(gt_path, 14)
            gt_bw = np.array([r[11:14] for r in grows_full], dtype=float)
        except DatasetError:
            gt_bw = np.zeros_like(gt_p)

    return RawDataset(
        imu_times_ns=imu_t,
        imu_gyro=imu_w,
        imu_accel=imu_a,
        cam_times_ns=cam_t,
        intrinsics=intrinsics,
        extrinsics=extrinsics,
        tracks=tracks,
        translations=translations,
        translations_frame=translations_frame,
        gt_times_ns=gt_t,
        gt_positions=gt_p,
        gt_quats_wxyz=gt_q,
        gt_velocities=gt_v,
        gt_gyro_bias=gt_bw,
    )


def select_keyframes(cam_times_ns: np.ndarray, kf_rate: float) -> np.ndarray:
    """Indices of camera frames nearest to a fixed-rate grid from the first stamp."""
    cam_t = np.asarray(cam_times_ns, dtype=np.int64)
    step_ns = int(round(1e9 / kf_rate))
    t0 = int(cam_t[0])
    n_grid = int((int(cam_t[-1]) - t0) // step_ns) + 1
    grid = t0 + step_ns * np.arange(n_grid, dtype=np.int64)
    pos = np.searchsorted(cam_t, grid)
    pos = np.clip(pos, 1, len(cam_t) - 1)
    left = cam_t[pos - 1]
    right = cam_t[pos]
    idx = np.where(np.abs(grid - left) <= np.abs(right - grid), pos - 1, pos)
    idx = np.unique(idx)
    return idx


def segment(
    dataset: RawDataset,
    kf_rate: float = 4.0,
    kf_count: int = 10,
    max_segments: int | None = None,
    gravity_magnitude: float = 9.81,
) -> list[InitSegment]:
    """Cut the dataset into non-overlapping keyframe windows.

    Windows with broken IMU coverage (a gap of more than 3x the nominal
    period) are dropped with a warning.  Translations come from the sidecar
    file when present, else are derived from ground truth (stand-in for a
    visual translation solver, which is out of scope).
    """
    if kf_count < 2:
        raise ValueError("kf_count must be >= 2")
    kf_idx_all = select_keyframes(dataset.cam_times_ns, kf_rate)
    n_windows = len(kf_idx_all) // kf_count
    if max_segments is not None:
        n_windows = min(n_windows, max_segments)
    imu_t = dataset.imu_times_ns
    nominal = float(np.median(np.diff(imu_t)))

    segments = []
    for w in range(n_windows):
        window = kf_idx_all[w * kf_count:(w + 1) * kf_count]
        kf_t = dataset.cam_times_ns[window]
        bounds = np.searchsorted(imu_t, kf_t, side="left")
        if bounds[0] >= len(imu_t) or kf_t[0] < imu_t[0] or bounds[-1] >= len(imu_t):
            warnings.warn(f"segment {w}: keyframes outside IMU coverage, dropped")
            continue
        span_bounds = np.column_stack([bounds[:-1], bounds[1:]])
        if np.any(span_bounds[:, 1] <= span_bounds[:, 0]):
            warnings.warn(f"segment {w}: a keyframe pair has no IMU samples, dropped")
            continue
        diffs = np.diff(imu_t[bounds[0]:bounds[-1] + 1])
        if diffs.size and float(np.max(diffs)) > 3.0 * nominal:
            warnings.warn(f"segment {w}: IMU gap exceeds 3x nominal period, dropped")
            continue

        obs = []
        if dataset.tracks is not None:
            base = w * kf_count
            missing = [k for k in range(kf_count) if (base + k) not in dataset.tracks]
            if missing:
                warnings.warn(f"segment {w}: missing tracks for keyframes {missing}, dropped")
                continue
            obs = [dataset.tracks[base + k] for k in range(kf_count)]
        else:
            obs = [
                KeyframeObservations(
                    track_ids=np.zeros(0, dtype=np.int64),
                    uv=np.zeros((0, 2)),
                    cov=None,
                )
                for _ in range(kf_count)
            ]

        trans = _segment_translations(dataset, w, window, gravity_magnitude)
        if trans is None:
            warnings.warn(f"segment {w}: no translation source, dropped")
            continue

        segments.append(
            InitSegment(
                kf_times_ns=kf_t.copy(),
                imu_times_ns=imu_t,
                imu_gyro=dataset.imu_gyro,
                imu_accel=dataset.imu_accel,
                span_bounds=span_bounds,
                observations=obs,
                cam_translations=trans,
                intrinsics=dataset.intrinsics,
                extrinsics=dataset.extrinsics,
            )
        )
    return segments


def _segment_translations(dataset, w, window, gravity_magnitude):
    kf_count = len(window)
    if dataset.translations is not None:
        base = w * kf_count
        if base + kf_count > len(dataset.translations):
            return None
        chunk = dataset.translations[base:base + kf_count]
        if dataset.translations_frame == "segment":
            return chunk.copy()
        # world-frame positions: reframe into this segment's first camera frame
        if dataset.gt_times_ns is None:
            return None
        r_wb0, _, _, _ = _gt_at(dataset, dataset.cam_times_ns[window[0]])
        r_wc0 = r_wb0 @ dataset.extrinsics.r_bc
        return (chunk - chunk[0]) @ r_wc0
    if dataset.gt_times_ns is None:
        return None
    # ground-truth-derived: camera positions in the segment frame, scaled by
    # the keyframe path length so the true scale is that length
    cam_pos = []
    r_wc0 = None
    o = None
    for k, ci in enumerate(window):
        r_wb, p_wb, _, _ = _gt_at(dataset, dataset.cam_times_ns[ci])
        p_wc = p_wb + r_wb @ dataset.extrinsics.p_bc
        if k == 0:
            r_wc0 = r_wb @ dataset.extrinsics.r_bc
            o = p_wc
        cam_pos.append(r_wc0.T @ (p_wc - o))
    cam_pos = np.array(cam_pos)
    path = float(np.sum(np.linalg.norm(np.diff(cam_pos, axis=0), axis=1)))
    if path <= 0:
        return None
    return cam_pos / path


def _gt_at(dataset: RawDataset, t_ns: int):
    """Nearest ground-truth state to a timestamp."""
    i = int(np.searchsorted(dataset.gt_times_ns, t_ns))
    if i > 0 and (
        i >= len(dataset.gt_times_ns)
        or abs(int(dataset.gt_times_ns[i - 1]) - int(t_ns))
        <= abs(int(dataset.gt_times_ns[i]) - int(t_ns))
    ):
        i -= 1
    r = quat_wxyz_to_matrix(dataset.gt_quats_wxyz[i])
    return r, dataset.gt_positions[i], dataset.gt_velocities[i], dataset.gt_gyro_bias[i]


def segment_truths(
    dataset: RawDataset,
    segments: list[InitSegment],
    gravity_magnitude: float = 9.81,
) -> list[GroundTruth | None]:
    """Ground-truth states per segment (None when the dataset has no GT).

    The ground-truth world frame is assumed gravity-aligned with z up, so the
    sensed-up gravity vector is (0, 0, G) there.
    """
    if dataset.gt_times_ns is None:
        return [None] * len(segments)
    out = []
    g_world = np.array([0.0, 0.0, gravity_magnitude])
    for seg in segments:
        rots, poss, vels, biases = [], [], [], []
        r_c0w = None
        o = None
        cam_pos = []
        for k, t in enumerate(seg.kf_times_ns):
            r_wb, p_wb, v_w, bw = _gt_at(dataset, int(t))
            if k == 0:
                r_c0w = (r_wb @ seg.extrinsics.r_bc).T
                o = p_wb + r_wb @ seg.extrinsics.p_bc
            rots.append(r_c0w @ r_wb)
            poss.append(r_c0w @ (p_wb - o))
            vels.append(r_c0w @ v_w)
            biases.append(bw)
            cam_pos.append(r_c0w @ (p_wb + r_wb @ seg.extrinsics.p_bc - o))
        cam_pos = np.array(cam_pos)
        diffs = np.linalg.norm(np.diff(seg.cam_translations, axis=0), axis=1)
        true_diffs = np.linalg.norm(np.diff(cam_pos, axis=0), axis=1)
        denom = float(np.sum(diffs))
        scale = float(np.sum(true_diffs)) / denom if denom > 0 else np.nan
        out.append(
            GroundTruth(
                rotations=np.array(rots),
                positions=np.array(poss),
                velocities=np.array(vels),
                gravity=r_c0w @ g_world,
                gyro_bias=np.mean(np.array(biases), axis=0),
                scale=scale,
            )
        )
    return out


def _fstr(x) -> str:
    """Shortest decimal form that round-trips exactly through float()."""
    return repr(float(x))


def export_asl(seg: InitSegment, root: str | Path, truth: GroundTruth | None = None) -> None:
    """Write one segment as an ASL-layout directory that load_asl can re-read."""
    root = Path(root)
    (root / "imu0").mkdir(parents=True, exist_ok=True)
    (root / "cam0").mkdir(parents=True, exist_ok=True)

    with open(root / "imu0" / "data.csv", "w") as fh:
        fh.write("#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n")
        for k in range(len(seg.imu_times_ns)):
            w = seg.imu_gyro[k]
            a = seg.imu_accel[k]
            fh.write(f"{int(seg.imu_times_ns[k])},{_fstr(w[0])},{_fstr(w[1])},"
                     f"{_fstr(w[2])},{_fstr(a[0])},{_fstr(a[1])},{_fstr(a[2])}\n")

    with open(root / "cam0" / "data.csv", "w") as fh:
        fh.write("#timestamp [ns],filename\n")
        for t in seg.kf_times_ns:
            fh.write(f"{int(t)},{int(t)}.png\n")

    t_bs = np.eye(4)
    t_bs[:3, :3] = seg.extrinsics.r_bc
    t_bs[:3, 3] = seg.extrinsics.p_bc
    k = seg.intrinsics.k
    doc = {
        "sensor_type": "camera",
        "T_BS": {"rows": 4, "cols": 4, "data": [float(x) for x in t_bs.ravel()]},
        "intrinsics": [float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2])],
    }
    with open(root / "cam0" / "sensor.yaml", "w") as fh:
        yaml.safe_dump(doc, fh)

    has_cov = all(o.cov is not None for o in seg.observations)
    with open(root / "tracks.csv", "w") as fh:
        fh.write("#track_id,kf_index,u,v" + (",c11,c12,c22" if has_cov else "") + "\n")
        for kf, obs in enumerate(seg.observations):
            for r in range(len(obs.track_ids)):
                line = (f"{int(obs.track_ids[r])},{kf},"
                        f"{_fstr(obs.uv[r, 0])},{_fstr(obs.uv[r, 1])}")
                if has_cov:
                    c = obs.cov[r]
                    line += f",{_fstr(c[0])},{_fstr(c[1])},{_fstr(c[2])}"
                fh.write(line + "\n")

    with open(root / "translations.csv", "w") as fh:
        fh.write("# frame: segment\n#kf_index,x,y,z\n")
        for k_idx, p in enumerate(seg.cam_translations):
            fh.write(f"{k_idx},{_fstr(p[0])},{_fstr(p[1])},{_fstr(p[2])}\n")

    if truth is not None:
        _export_truth(seg, truth, root)


def _export_truth(seg: InitSegment, truth: GroundTruth, root: Path) -> None:
    """Ground truth rows at keyframe stamps, in a constructed z-up world frame."""
    from .refine import gravity_to_rotation  # local import avoids a cycle

    r_c0i = gravity_to_rotation(truth.gravity)
    r_ic0 = r_c0i.T
    gdir = (root / "state_groundtruth_estimate0")
    gdir.mkdir(parents=True, exist_ok=True)
    with open(gdir / "data.csv", "w") as fh:
        fh.write("#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z,bw_x,bw_y,bw_z\n")
        for k, t in enumerate(seg.kf_times_ns):
            r_wb = r_ic0 @ truth.rotations[k]
            p = r_ic0 @ truth.positions[k]
            v = r_ic0 @ truth.velocities[k]
            q = matrix_to_quat_wxyz(r_wb)
            b = truth.gyro_bias
            row = [int(t)] + [_fstr(x) for x in (*p, *q, *v, *b)]
            fh.write(",".join(str(c) for c in row) + "\n")
