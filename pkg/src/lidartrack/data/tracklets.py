"""Tracklet containers and consecutive-frame training pairs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from lidartrack.geometry import RTM, Box3D, infer_rtm
from lidartrack.pointcloud import Frame

__all__ = [
    "DYNAMIC_DISPLACEMENT",
    "Tracklet",
    "TrackletOracle",
    "TrainingPair",
    "is_dynamic",
    "make_training_pairs",
]

# a target whose inter-frame displacement exceeds this is labeled dynamic
DYNAMIC_DISPLACEMENT = 0.15


@dataclass(frozen=True)
class TrackletOracle:
    """Ground-truth annotations beyond the box track itself.

    target_masks: per frame, True for rows belonging to the target
    rtms / dynamic_flags: one entry per consecutive frame pair
    distractor_boxes: one full box track per distractor object
    """

    target_masks: tuple[np.ndarray, ...]
    rtms: tuple[RTM, ...]
    dynamic_flags: tuple[bool, ...]
    distractor_boxes: tuple[tuple[Box3D, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "target_masks", tuple(np.asarray(m, dtype=bool) for m in self.target_masks))
        object.__setattr__(self, "rtms", tuple(self.rtms))
        object.__setattr__(self, "dynamic_flags", tuple(bool(f) for f in self.dynamic_flags))
        object.__setattr__(self, "distractor_boxes", tuple(tuple(track) for track in self.distractor_boxes))
        if len(self.rtms) != len(self.dynamic_flags):
            raise ValueError("rtms and dynamic_flags must have equal length")


@dataclass(frozen=True)
class Tracklet:
    """One tracked object: frames and the GT box per frame."""

    id: str
    frames: tuple[Frame, ...]
    gt_boxes: tuple[Box3D, ...]
    category: str = "car"
    source: str = "synthetic"
    oracle: Optional[TrackletOracle] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "gt_boxes", tuple(self.gt_boxes))
        if len(self.frames) != len(self.gt_boxes) or len(self.frames) == 0:
            raise ValueError("need equally many frames and boxes, at least one each")
        stamps = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise ValueError("frame timestamps must be strictly increasing")
        if self.source not in ("synthetic", "kitti"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.oracle is not None:
            if len(self.oracle.target_masks) != len(self.frames):
                raise ValueError("oracle masks must cover every frame")
            if len(self.oracle.rtms) != len(self.frames) - 1:
                raise ValueError("oracle needs one RTM per consecutive frame pair")
            for mask, frame in zip(self.oracle.target_masks, self.frames):
                if mask.shape != (len(frame),):
                    raise ValueError("oracle mask length must match its frame")

    def __len__(self) -> int:
        return len(self.frames)


def is_dynamic(m: RTM) -> bool:
    """Strictly-greater displacement rule on the translation norm."""
    return bool(np.linalg.norm(m.translation) > DYNAMIC_DISPLACEMENT)


@dataclass(frozen=True)
class TrainingPair:
    tracklet_id: str
    frame_index: int  # index of the earlier frame within its tracklet
    prev_frame: Frame
    cur_frame: Frame
    prev_box: Box3D
    cur_box: Box3D
    rtm: RTM
    dynamic: bool


def make_training_pairs(tracklets: Sequence[Tracklet]) -> list[TrainingPair]:
    """One sample per consecutive annotated frame pair across all tracklets."""
    pairs: list[TrainingPair] = []
    for t in tracklets:
        for i in range(len(t) - 1):
            m = infer_rtm(t.gt_boxes[i], t.gt_boxes[i + 1])
            pairs.append(
                TrainingPair(
                    tracklet_id=t.id,
                    frame_index=i,
                    prev_frame=t.frames[i],
                    cur_frame=t.frames[i + 1],
                    prev_box=t.gt_boxes[i],
                    cur_box=t.gt_boxes[i + 1],
                    rtm=m,
                    dynamic=is_dynamic(m),
                )
            )
    return pairs
