"""KITTI tracking-format ingestion.

Expected sequence layout (paths resolved flexibly, see _find_file):

    <seq_dir>/velodyne/<frame>.bin      packed float32 x y z reflectance
    <seq_dir>/label_02/<seq>.txt        one annotation row per object per frame
    <seq_dir>/calib/<seq>.txt           provides the LiDAR-to-camera transform

Label boxes live in the camera frame: dimensions are h w l, the location
is the bottom-face center (camera y points down), and rotation_y is the
heading about the camera y-axis with zero meaning camera x.  Conversion to
a LiDAR-frame Box3D lifts the center by h/2 against camera y, maps it
through the inverse calibration, and recovers yaw by pushing the heading
direction (cos ry, 0, -sin ry) through the calibration rotation.
`camera_label_from_box` is the exact inverse, used to build test fixtures
and to export.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from lidartrack.data.tracklets import Tracklet
from lidartrack.geometry import Box3D
from lidartrack.pointcloud import Frame

__all__ = ["load_kitti_tracklets", "lidar_box_from_camera", "camera_label_from_box"]

_CALIB_KEYS = ("Tr_velo_to_cam", "Tr_velo_cam")


def _find_file(seq_dir: Path, kind: str, seq: str) -> Path:
    candidates = [
        seq_dir / kind / f"{seq}.txt",
        seq_dir / f"{kind}.txt",
    ]
    sub = seq_dir / kind
    if sub.is_dir():
        txts = sorted(sub.glob("*.txt"))
        if len(txts) == 1:
            candidates.append(txts[0])
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(f"no {kind} file found under {seq_dir}")


def _read_calib(path: Path) -> np.ndarray:
    for line in path.read_text(encoding="utf-8").splitlines():
        if ":" not in line:
            continue
        key, rest = line.split(":", 1)
        if key.strip() in _CALIB_KEYS:
            vals = np.array([float(v) for v in rest.split()])
            if vals.size != 12:
                raise ValueError(f"{path}: {key} must have 12 values, found {vals.size}")
            tr = np.eye(4)
            tr[:3, :] = vals.reshape(3, 4)
            return tr
    raise ValueError(f"{path}: no LiDAR-to-camera transform ({' or '.join(_CALIB_KEYS)})")


def lidar_box_from_camera(loc, hwl, ry: float, tr_velo_to_cam: np.ndarray) -> Box3D:
    """Convert a camera-frame label box to a LiDAR-frame Box3D."""
    h, w, l = (float(v) for v in hwl)
    center_cam = np.array([loc[0], loc[1] - h / 2.0, loc[2], 1.0])
    inv = np.linalg.inv(tr_velo_to_cam)
    center = (inv @ center_cam)[:3]
    rot_cam_from_velo = tr_velo_to_cam[:3, :3]
    heading_cam = np.array([np.cos(ry), 0.0, -np.sin(ry)])
    heading = rot_cam_from_velo.T @ heading_cam
    yaw = float(np.arctan2(heading[1], heading[0]))
    return Box3D(center=center, size=(w, l, h), yaw=yaw)


def camera_label_from_box(box: Box3D, tr_velo_to_cam: np.ndarray):
    """Inverse of lidar_box_from_camera: returns (loc, (h, w, l), ry)."""
    center_cam = (tr_velo_to_cam @ np.append(box.center, 1.0))[:3]
    h = box.height
    loc = center_cam + np.array([0.0, h / 2.0, 0.0])
    heading = np.array([np.cos(box.yaw), np.sin(box.yaw), 0.0])
    heading_cam = tr_velo_to_cam[:3, :3] @ heading
    ry = float(np.arctan2(-heading_cam[2], heading_cam[0]))
    return loc, (h, box.width, box.length), ry


def _read_velodyne(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"{path}: missing point file for a labeled frame")
    raw = path.read_bytes()
    if len(raw) % 16 != 0:
        raise ValueError(f"{path}: corrupt point file, {len(raw)} bytes is not a whole number of xyzr float32 rows")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(-1, 4)[:, :3]


def load_kitti_tracklets(seq_dir, sequence: str | None = None) -> list[Tracklet]:
    """One Tracklet per (track id, contiguous frame run); DontCare skipped."""
    seq_dir = Path(seq_dir)
    seq = sequence or seq_dir.name
    tr = _read_calib(_find_file(seq_dir, "calib", seq))
    label_path = _find_file(seq_dir, "label_02", seq)

    # frame -> (box, category) lists keyed by track id, in file order
    per_track: dict[int, list[tuple[int, Box3D, str]]] = {}
    for line in label_path.read_text(encoding="utf-8").splitlines():
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 17:
            raise ValueError(f"{label_path}: malformed label row: {line!r}")
        kind = fields[2]
        if kind == "DontCare":
            continue
        frame, tid = int(fields[0]), int(fields[1])
        hwl = [float(v) for v in fields[10:13]]
        loc = [float(v) for v in fields[13:16]]
        ry = float(fields[16])
        per_track.setdefault(tid, []).append((frame, lidar_box_from_camera(loc, hwl, ry, tr), kind))

    frame_cache: dict[int, np.ndarray] = {}

    def frame_points(frame: int) -> np.ndarray:
        if frame not in frame_cache:
            frame_cache[frame] = _read_velodyne(seq_dir / "velodyne" / f"{frame:06d}.bin")
        return frame_cache[frame]

    tracklets: list[Tracklet] = []
    for tid, rows in sorted(per_track.items()):
        rows.sort(key=lambda r: r[0])
        # split at frame gaps: annotated tracklets must be contiguous
        runs: list[list[tuple[int, Box3D, str]]] = [[rows[0]]]
        for row in rows[1:]:
            if row[0] == runs[-1][-1][0] + 1:
                runs[-1].append(row)
            else:
                runs.append([row])
        for run_idx, run in enumerate(runs):
            frames = tuple(
                Frame(points=frame_points(frame), timestamp=frame) for frame, _, _ in run
            )
            boxes = tuple(box for _, box, _ in run)
            suffix = f"-s{run_idx}" if len(runs) > 1 else ""
            tracklets.append(
                Tracklet(
                    id=f"kitti-{seq}-{tid}{suffix}",
                    frames=frames,
                    gt_boxes=boxes,
                    category=run[0][2].lower(),
                    source="kitti",
                )
            )
    return tracklets
