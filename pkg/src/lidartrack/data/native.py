"""Native on-disk dataset format.

Layout under a root directory:

    manifest.json                      format version + tracklet index with split tags
    <tracklet-dir>/meta.json           id, category, source, timestamps, boxes, oracle
    <tracklet-dir>/points_000.bin      packed little-endian float32, xyz per point

Boxes and oracle annotations live in JSON (lossless for float64 via
repr-style serialization); point coordinates are quantized to float32 by
the binary files, so a first write is lossy at most to that precision and
every later round-trip is bit-stable.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from lidartrack.data.tracklets import Tracklet, TrackletOracle
from lidartrack.geometry import Box3D, RTM
from lidartrack.pointcloud import Frame

__all__ = ["write_native", "read_native"]

_FORMAT_VERSION = 1


def _dir_name(tracklet_id: str, taken: set[str]) -> str:
    base = re.sub(r"[^A-Za-z0-9_.-]+", "_", tracklet_id) or "tracklet"
    name, n = base, 1
    while name in taken:
        n += 1
        name = f"{base}_{n}"
    taken.add(name)
    return name


def _box_list(boxes: Sequence[Box3D]) -> list[list[float]]:
    return [[float(v) for v in b.as_vector()] for b in boxes]


def _oracle_dict(oracle: TrackletOracle) -> dict:
    return {
        "target_masks": [mask.astype(int).tolist() for mask in oracle.target_masks],
        "rtms": [[float(v) for v in m.as_vector()] for m in oracle.rtms],
        "dynamic_flags": [bool(f) for f in oracle.dynamic_flags],
        "distractor_boxes": [_box_list(track) for track in oracle.distractor_boxes],
    }


def write_native(tracklets: Sequence[Tracklet], root, splits: Optional[dict[str, str]] = None) -> None:
    """Write tracklets plus a manifest; splits maps tracklet id to a tag."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    splits = splits or {}
    taken: set[str] = set()
    index = []
    for t in tracklets:
        name = _dir_name(t.id, taken)
        tdir = root / name
        tdir.mkdir(exist_ok=True)
        meta = {
            "format_version": _FORMAT_VERSION,
            "id": t.id,
            "category": t.category,
            "source": t.source,
            "timestamps": [f.timestamp for f in t.frames],
            "boxes": _box_list(t.gt_boxes),
        }
        if t.oracle is not None:
            meta["oracle"] = _oracle_dict(t.oracle)
        (tdir / "meta.json").write_text(json.dumps(meta) + "\n", encoding="utf-8")
        for i, frame in enumerate(t.frames):
            data = frame.points.astype("<f4").tobytes()
            (tdir / f"points_{i:03d}.bin").write_bytes(data)
        index.append({"dir": name, "id": t.id, "split": splits.get(t.id, "train")})
    manifest = {"format_version": _FORMAT_VERSION, "tracklets": index}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _read_points(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) % 12 != 0:
        raise ValueError(f"{path}: corrupt point file, {len(raw)} bytes is not a whole number of xyz float32 triples")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(-1, 3)


def _read_tracklet(tdir: Path) -> Tracklet:
    meta_path = tdir / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"{meta_path}: missing tracklet metadata")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format_version") != _FORMAT_VERSION:
        raise ValueError(f"{meta_path}: unsupported format version {meta.get('format_version')}")
    timestamps = meta["timestamps"]
    frames = []
    for i, ts in enumerate(timestamps):
        pts_path = tdir / f"points_{i:03d}.bin"
        if not pts_path.is_file():
            raise FileNotFoundError(f"{pts_path}: missing point file")
        frames.append(Frame(points=_read_points(pts_path), timestamp=int(ts)))
    boxes = tuple(Box3D.from_vector(v) for v in meta["boxes"])
    oracle = None
    if "oracle" in meta:
        o = meta["oracle"]
        oracle = TrackletOracle(
            target_masks=tuple(np.asarray(m, dtype=bool) for m in o["target_masks"]),
            rtms=tuple(RTM(*v) for v in o["rtms"]),
            dynamic_flags=tuple(o["dynamic_flags"]),
            distractor_boxes=tuple(
                tuple(Box3D.from_vector(v) for v in track) for track in o["distractor_boxes"]
            ),
        )
    return Tracklet(
        id=meta["id"],
        frames=tuple(frames),
        gt_boxes=boxes,
        category=meta["category"],
        source=meta["source"],
        oracle=oracle,
    )


def read_native(root, split: Optional[str] = None) -> list[Tracklet]:
    """Load a dataset; an empty or absent manifest yields an empty dataset."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("format_version") != _FORMAT_VERSION:
            raise ValueError(
                f"{manifest_path}: unsupported format version {manifest.get('format_version')}"
            )
        entries = manifest["tracklets"]
    else:
        # no manifest: scan for tracklet directories; empty dir is fine
        entries = [
            {"dir": p.parent.name, "id": p.parent.name, "split": "train"}
            for p in sorted(root.glob("*/meta.json"))
        ]
    out = []
    for entry in entries:
        if split is not None and entry.get("split", "train") != split:
            continue
        out.append(_read_tracklet(root / entry["dir"]))
    return out
