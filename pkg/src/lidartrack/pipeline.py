"""Two-stage point tracker: segmentation, motion regression, refinement.

Frame-to-frame tracking proceeds in two stages.  Stage one classifies each
point of a joined two-frame cloud as target or background, pools the target
points, and regresses the inter-frame motion together with a correction of
the (possibly drifted) previous box; applying the motion to the corrected
box yields a coarse current box.  Stage two transports the previous target
points through the predicted motion, merges them with the current ones, and
regresses a residual in the coarse-box frame.

All regressed 4-vectors live in the frame of the box they correct: the
network never sees absolute world coordinates.  The override seam
(`TrackOverrides`) lets any stage be replaced by ground truth, which is how
the plumbing is validated end to end.

Training runs both stages on cropped frame pairs and teacher-forces the
discrete structure: stage inputs come from the ground-truth target mask and
the static/dynamic branch follows the ground-truth motion label, keeping the
regression targets stationary while the segmentation and motion classifiers
are still learning.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from lidartrack.augment import AugmentConfig, motion_augment, perturb_prev_box
from lidartrack.data.tracklets import Tracklet, TrainingPair, is_dynamic
from lidartrack.geometry import (
    Box3D,
    RTM,
    apply_rtm,
    infer_rtm,
    points_in_box,
    world_to_canonical,
    wrap_angle,
    yaw_matrix,
)
from lidartrack.nn import (
    Adam,
    Model,
    Tensor,
    add,
    add_const,
    backward,
    cross_entropy,
    huber,
    matmul_const,
    scale,
    segment_forward,
    segment_forward_batched,
    stage1_forward,
    stage2_forward,
    zero_grad,
)
from lidartrack.pointcloud import (
    EmptyRegionError,
    Frame,
    STCloud,
    assemble_features,
    build_st_cloud,
    crop_and_sample,
    motion_assisted_merge,
    split_by_time,
    with_channels,
)

__all__ = [
    "DegenerateTargetError",
    "Stage1Output",
    "FrameDiagnostics",
    "TrackResult",
    "TrackOverrides",
    "TrainConfig",
    "PairExample",
    "PairForward",
    "NetworkTracker",
    "apply_canonical_correction",
    "canonical_features",
    "prior_target_mask",
    "segment_target",
    "stage1_predict",
    "stage2_refine",
    "track_frame",
    "track_frames",
    "track_sequence",
    "make_oracle_overrides",
    "prepare_pair_example",
    "forward_pair",
    "total_loss",
    "scheduled_lr",
    "train",
    "export_predictions",
]

DEFAULT_MARGIN = 2.0
DEFAULT_POINTS = 1024

# Every network input channel is multiplied by this constant.  Without
# normalization layers, small uniform activations are what keep Adam's
# scale-free steps from swinging the meter-valued head outputs by whole
# meters; the flag channels shrink with the coordinates so no channel
# re-inflates the activations.  Outputs are NOT scaled back up; the heads
# regress meters directly.
COORD_SCALE = 0.05


class DegenerateTargetError(RuntimeError):
    """No usable target points remain, even after the prior fallback."""


# ---------------------------------------------------------------------------
# Feature preparation.
# ---------------------------------------------------------------------------


def canonical_features(st: STCloud, b_prev: Box3D) -> np.ndarray:
    """Network input (N, 14) with xyz expressed in the previous-box frame.

    All channels are converted to network units via ``COORD_SCALE``; the
    distance channels must have been attached from the same prior box.
    """
    feats = assemble_features(st)
    feats[:, :3] = world_to_canonical(st.xyz, b_prev)
    feats *= COORD_SCALE
    return feats


def prior_target_mask(st: STCloud, b_prev: Box3D, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """Motion-free target guess: previous points inside the previous box,
    current points inside the same box enlarged by ``margin``."""
    enlarged = Box3D(center=b_prev.center, size=b_prev.size + 2.0 * margin, yaw=b_prev.yaw)
    prev_rows = st.prev_rows
    inside_prev = points_in_box(st.xyz, b_prev)
    inside_near = points_in_box(st.xyz, enlarged)
    return np.where(prev_rows, inside_prev, inside_near)


def segment_target(
    st: STCloud, model: Model, b_prev: Box3D, margin: float = DEFAULT_MARGIN
) -> np.ndarray:
    """Boolean target mask over the joined cloud.

    Argmax of the per-point logits; an all-background prediction falls back
    to the prior mask, and an empty prior raises ``DegenerateTargetError``.
    """
    logits = segment_forward(canonical_features(st, b_prev), model)
    mask = logits.data.argmax(axis=1) == 1
    if not mask.any():
        mask = prior_target_mask(st, b_prev, margin)
    if not mask.any():
        raise DegenerateTargetError("no target points under either the predicted or prior mask")
    return mask


# ---------------------------------------------------------------------------
# Stage one: motion prediction from segmented points.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Stage1Output:
    """Coarse localization: predicted motion plus the boxes it produced."""

    rtm: RTM
    motion_logits: np.ndarray
    refined_prev_box: Box3D
    coarse_box: Box3D

    @property
    def dynamic(self) -> bool:
        # index 1 is the dynamic class; argmax resolves a tie to static
        return int(np.argmax(self.motion_logits)) == 1


def _yaw_block(yaw: float) -> np.ndarray:
    """4x4 map taking a canonical (dx, dy, dz, dyaw) vector to world axes."""
    m = np.eye(4)
    m[:3, :3] = yaw_matrix(yaw)
    return m


def stage1_predict(targets_xyzt: np.ndarray, b_prev: Box3D, model: Model) -> Stage1Output:
    """Run the motion stage on segmented target points (n, 4) in world xyzt."""
    pts = np.asarray(targets_xyzt, dtype=np.float64).reshape(-1, 4)
    if pts.shape[0] == 0:
        raise DegenerateTargetError("stage one needs at least one target point")
    canon = pts.copy()
    canon[:, :3] = world_to_canonical(pts[:, :3], b_prev)
    canon *= COORD_SCALE
    rtm4_c, logits, refine4_c = stage1_forward(canon, model)
    block = _yaw_block(b_prev.yaw)
    rtm = RTM(*(block @ rtm4_c.data[0]))
    refined = apply_rtm(b_prev, RTM(*(block @ refine4_c.data[0])))
    dynamic = int(np.argmax(logits.data[0])) == 1
    return Stage1Output(
        rtm=rtm,
        motion_logits=logits.data[0].astype(np.float64),
        refined_prev_box=refined,
        coarse_box=apply_rtm(refined, rtm) if dynamic else refined,
    )


# ---------------------------------------------------------------------------
# Stage two: refinement in the coarse-box frame.
# ---------------------------------------------------------------------------


def apply_canonical_correction(box: Box3D, vec4) -> Box3D:
    """Move a box by a 4-vector expressed in its own frame.

    The translation part is rotated by the box yaw before being added to the
    center; the last component increments the yaw.
    """
    v = np.asarray(vec4, dtype=np.float64).reshape(4)
    return Box3D(
        center=box.center + yaw_matrix(box.yaw) @ v[:3],
        size=box.size,
        yaw=box.yaw + v[3],
    )


def stage2_refine(
    prev_xyz: np.ndarray, cur_xyz: np.ndarray, s1: Stage1Output, model: Model
) -> Box3D:
    """Refine the coarse box from the motion-merged target points."""
    merged = motion_assisted_merge(
        prev_xyz, cur_xyz, s1.rtm, prev_box=s1.refined_prev_box, dynamic=s1.dynamic
    )
    if merged.shape[0] == 0:
        return s1.coarse_box
    canon = world_to_canonical(merged, s1.coarse_box) * COORD_SCALE
    out4 = stage2_forward(canon, model)
    return apply_canonical_correction(s1.coarse_box, out4.data[0])


# ---------------------------------------------------------------------------
# Frame-to-frame tracking with an override seam.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrackOverrides:
    """Replace individual pipeline stages, e.g. with ground-truth plumbing.

    Each callable receives the frame index of the current frame within its
    sequence.  ``segment_fn(i, st, b_prev)`` returns a boolean mask over the
    joined cloud; ``stage1_fn(i, targets_xyzt, b_prev)`` returns a
    :class:`Stage1Output`; ``stage2_fn(i, prev_xyz, cur_xyz, s1)`` returns
    the final box.
    """

    segment_fn: Optional[Callable[[int, STCloud, Box3D], np.ndarray]] = None
    stage1_fn: Optional[Callable[[int, np.ndarray, Box3D], Stage1Output]] = None
    stage2_fn: Optional[Callable[[int, np.ndarray, np.ndarray, Stage1Output], Box3D]] = None


@dataclass(frozen=True)
class FrameDiagnostics:
    frame_index: int
    n_prev_target: int
    n_cur_target: int
    dynamic: bool
    fallback_mask: bool
    degenerate: bool
    refined_prev_box: Optional[Box3D]
    coarse_box: Optional[Box3D]
    box: Box3D
    wall_ms: float


@dataclass(frozen=True)
class TrackResult:
    """Per-sequence output: one box per frame, diagnostics per tracked step."""

    boxes: tuple[Box3D, ...]
    diagnostics: tuple[FrameDiagnostics, ...]


def _degenerate_diag(frame_index: int, box: Box3D, t0: float) -> FrameDiagnostics:
    return FrameDiagnostics(
        frame_index=frame_index,
        n_prev_target=0,
        n_cur_target=0,
        dynamic=False,
        fallback_mask=False,
        degenerate=True,
        refined_prev_box=None,
        coarse_box=None,
        box=box,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )


def track_frame(
    prev: Frame,
    cur: Frame,
    b_prev: Box3D,
    model: Model,
    seed: int = 0,
    frame_index: int = 0,
    overrides: Optional[TrackOverrides] = None,
    margin: float = DEFAULT_MARGIN,
    n_points: int = DEFAULT_POINTS,
) -> tuple[Box3D, FrameDiagnostics]:
    """Estimate the current-frame box from one frame pair.

    Degenerate inputs degrade gracefully: an empty previous crop is replaced
    by a single synthetic point at the previous box center, an empty current
    crop (or an empty target mask after fallback) keeps the previous box and
    flags the frame as degenerate.
    """
    t0 = time.perf_counter()
    seed_prev, seed_cur = (int(s) for s in np.random.SeedSequence([seed, frame_index]).generate_state(2))
    try:
        prev_crop = crop_and_sample(prev, b_prev, margin=margin, n=n_points, rng_seed=seed_prev)
    except EmptyRegionError:
        center = np.array(b_prev.center).reshape(1, 3)
        prev_crop = Frame(points=center, timestamp=prev.timestamp)
    try:
        cur_crop = crop_and_sample(cur, b_prev, margin=margin, n=n_points, rng_seed=seed_cur)
    except EmptyRegionError:
        return b_prev, _degenerate_diag(frame_index, b_prev, t0)

    st = with_channels(build_st_cloud(prev_crop, cur_crop), b_prev)
    fallback = False
    if overrides is not None and overrides.segment_fn is not None:
        mask = np.asarray(overrides.segment_fn(frame_index, st, b_prev), dtype=bool).reshape(-1)
        if mask.shape[0] != len(st):
            raise ValueError(f"override mask length {mask.shape[0]} != cloud size {len(st)}")
    else:
        logits = segment_forward(canonical_features(st, b_prev), model)
        mask = logits.data.argmax(axis=1) == 1
    if not mask.any():
        fallback = True
        mask = prior_target_mask(st, b_prev, margin)
    if not mask.any():
        return b_prev, _degenerate_diag(frame_index, b_prev, t0)

    targets = st.points[mask]
    if overrides is not None and overrides.stage1_fn is not None:
        s1 = overrides.stage1_fn(frame_index, targets, b_prev)
    else:
        s1 = stage1_predict(targets, b_prev, model)

    prev_xyz, cur_xyz = split_by_time(st, mask)
    if overrides is not None and overrides.stage2_fn is not None:
        box = overrides.stage2_fn(frame_index, prev_xyz, cur_xyz, s1)
    else:
        box = stage2_refine(prev_xyz, cur_xyz, s1, model)

    diag = FrameDiagnostics(
        frame_index=frame_index,
        n_prev_target=prev_xyz.shape[0],
        n_cur_target=cur_xyz.shape[0],
        dynamic=s1.dynamic,
        fallback_mask=fallback,
        degenerate=False,
        refined_prev_box=s1.refined_prev_box,
        coarse_box=s1.coarse_box,
        box=box,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
    return box, diag


def track_frames(
    frames: Sequence[Frame],
    initial_box: Box3D,
    model: Model,
    seed: int = 0,
    overrides: Optional[TrackOverrides] = None,
    margin: float = DEFAULT_MARGIN,
    n_points: int = DEFAULT_POINTS,
) -> TrackResult:
    """Track through a frame sequence from a given first-frame box."""
    if len(frames) == 0:
        raise ValueError("cannot track an empty sequence")
    boxes = [initial_box]
    diags = []
    for t in range(1, len(frames)):
        box, diag = track_frame(
            frames[t - 1],
            frames[t],
            boxes[-1],
            model,
            seed=seed,
            frame_index=t,
            overrides=overrides,
            margin=margin,
            n_points=n_points,
        )
        boxes.append(box)
        diags.append(diag)
    return TrackResult(boxes=tuple(boxes), diagnostics=tuple(diags))


def track_sequence(
    tracklet: Tracklet,
    model: Model,
    initial_box: Optional[Box3D] = None,
    seed: int = 0,
    overrides: Optional[TrackOverrides] = None,
    margin: float = DEFAULT_MARGIN,
    n_points: int = DEFAULT_POINTS,
) -> TrackResult:
    """Track a tracklet, seeding from its first ground-truth box by default."""
    start = initial_box if initial_box is not None else tracklet.gt_boxes[0]
    return track_frames(
        tracklet.frames, start, model, seed=seed, overrides=overrides, margin=margin, n_points=n_points
    )


class NetworkTracker:
    """Tracker protocol adapter: ``track(frames, initial_box) -> boxes``."""

    name = "network"

    def __init__(
        self,
        model: Model,
        seed: int = 0,
        margin: float = DEFAULT_MARGIN,
        n_points: int = DEFAULT_POINTS,
    ):
        self.model = model
        self.seed = seed
        self.margin = margin
        self.n_points = n_points

    def track(self, frames: Sequence[Frame], initial_box: Box3D) -> list[Box3D]:
        result = track_frames(
            frames, initial_box, self.model, seed=self.seed, margin=self.margin, n_points=self.n_points
        )
        return list(result.boxes)


def make_oracle_overrides(tracklet: Tracklet) -> TrackOverrides:
    """Ground-truth plumbing: GT masks, GT motion, coarse box as final box.

    With these overrides the tracker must reproduce the annotation chain; any
    deviation beyond float rounding indicates broken plumbing.
    """
    boxes = tracklet.gt_boxes

    def segment(i: int, st: STCloud, b_prev: Box3D) -> np.ndarray:
        inside_prev = points_in_box(st.xyz, boxes[i - 1])
        inside_cur = points_in_box(st.xyz, boxes[i])
        return np.where(st.prev_rows, inside_prev, inside_cur)

    def stage1(i: int, targets: np.ndarray, b_prev: Box3D) -> Stage1Output:
        m = infer_rtm(boxes[i - 1], boxes[i])
        dynamic = is_dynamic(m)
        coarse = apply_rtm(b_prev, m) if dynamic else b_prev
        logits = np.array([0.0, 1.0]) if dynamic else np.array([1.0, 0.0])
        return Stage1Output(rtm=m, motion_logits=logits, refined_prev_box=b_prev, coarse_box=coarse)

    def stage2(i: int, prev_xyz: np.ndarray, cur_xyz: np.ndarray, s1: Stage1Output) -> Box3D:
        return s1.coarse_box

    return TrackOverrides(segment_fn=segment, stage1_fn=stage1, stage2_fn=stage2)


# ---------------------------------------------------------------------------
# Training: per-pair examples, the joint loss, and the optimization loop.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 20
    n_points: int = DEFAULT_POINTS
    margin: float = DEFAULT_MARGIN
    seed: int = 0
    augment: AugmentConfig = AugmentConfig()
    resample_each_epoch: bool = True
    lambda_cls_target: float = 0.1
    lambda_cls_motion: float = 0.1
    lambda_reg: float = 1.0
    start_epoch: int = 0  # resumed runs keep the absolute epoch counter

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.n_points < 1:
            raise ValueError("epochs, batch_size and n_points must be positive")
        if self.lr <= 0 or self.lr_decay <= 0 or self.lr_decay_every < 1:
            raise ValueError("learning-rate schedule values must be positive")
        if not 0 <= self.start_epoch <= self.epochs:
            raise ValueError("start_epoch must lie in [0, epochs]")


def scheduled_lr(cfg: TrainConfig, epoch: int) -> float:
    """Step decay: multiply by ``lr_decay`` every ``lr_decay_every`` epochs."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


@dataclass(frozen=True)
class PairExample:
    """One augmented, cropped, feature-complete training pair."""

    st: STCloud
    b_prev: Box3D
    features: np.ndarray
    seg_labels: np.ndarray
    gt_prev: Box3D
    gt_cur: Box3D
    rtm_target: RTM
    refine_target: RTM
    motion_label: int


@dataclass
class PairForward:
    """Graph nodes and aligned targets for one pair's regression terms."""

    motion_logits: Tensor
    motion_label: int
    rtm4: Tensor
    rtm_target: np.ndarray
    refine4: Tensor
    refine_target: np.ndarray
    box1_4: Tensor
    box1_target: np.ndarray
    box2_4: Tensor
    box2_target: np.ndarray
    refined_prev_box: Optional[Box3D] = None
    coarse_box: Optional[Box3D] = None


def prepare_pair_example(
    pair: TrainingPair, cfg: TrainConfig, rng: np.random.Generator
) -> Optional[PairExample]:
    """Augment, perturb, crop, and label one training pair.

    Returns None when a crop region is empty, so callers simply drop the
    pair for this epoch.
    """
    prev_pts = pair.prev_frame.points
    cur_pts = pair.cur_frame.points
    prev_target = points_in_box(prev_pts, pair.prev_box)
    cur_target = points_in_box(cur_pts, pair.cur_box)
    aug_prev, gt_prev, aug_cur, gt_cur, _ = motion_augment(
        prev_pts[prev_target], pair.prev_box, cur_pts[cur_target], pair.cur_box, cfg.augment, rng
    )
    prev_frame = Frame(
        points=np.vstack([aug_prev, prev_pts[~prev_target]]), timestamp=pair.prev_frame.timestamp
    )
    cur_frame = Frame(
        points=np.vstack([aug_cur, cur_pts[~cur_target]]), timestamp=pair.cur_frame.timestamp
    )
    b_prev = perturb_prev_box(gt_prev, cfg.augment, rng)

    try:
        prev_crop = crop_and_sample(
            prev_frame, b_prev, margin=cfg.margin, n=cfg.n_points, rng_seed=int(rng.integers(2**31))
        )
        cur_crop = crop_and_sample(
            cur_frame, b_prev, margin=cfg.margin, n=cfg.n_points, rng_seed=int(rng.integers(2**31))
        )
    except EmptyRegionError:
        return None

    st = with_channels(build_st_cloud(prev_crop, cur_crop), b_prev)
    seg_labels = np.where(
        st.prev_rows, points_in_box(st.xyz, gt_prev), points_in_box(st.xyz, gt_cur)
    ).astype(np.int64)
    rtm_target = infer_rtm(gt_prev, gt_cur)
    return PairExample(
        st=st,
        b_prev=b_prev,
        features=canonical_features(st, b_prev),
        seg_labels=seg_labels,
        gt_prev=gt_prev,
        gt_cur=gt_cur,
        rtm_target=rtm_target,
        refine_target=infer_rtm(b_prev, gt_prev),
        motion_label=int(is_dynamic(rtm_target)),
    )


def _aligned_vec4(values3, yaw_target: float, pred_yaw: float) -> np.ndarray:
    """Regression target whose yaw sits within pi of the prediction.

    Shifting the target by whole turns instead of wrapping the difference
    keeps the loss surface continuous around the prediction.
    """
    v = np.empty((1, 4))
    v[0, :3] = values3
    v[0, 3] = pred_yaw + wrap_angle(yaw_target - pred_yaw)
    return v


def forward_pair(
    example: PairExample, model: Model, margin: float = DEFAULT_MARGIN
) -> Optional[PairForward]:
    """Build the stage-one and stage-two graphs for one prepared pair.

    Training teacher-forces the structure the losses cannot supervise
    directly: the stage inputs use the ground-truth target mask and the
    static/dynamic branch follows the ground-truth motion label, while the
    motion values themselves stay predicted.  Inference swaps in the
    predicted mask and predicted branch.  Returns None when no mask
    survives even after the prior fallback.
    """
    mask = example.seg_labels.astype(bool)
    if not mask.any():
        mask = prior_target_mask(example.st, example.b_prev, margin)
    if not mask.any():
        return None
    b_prev = example.b_prev
    dynamic = bool(example.motion_label)

    rtm4_c, logits, refine4_c = stage1_forward(example.features[mask, :4], model)
    block = _yaw_block(b_prev.yaw)
    rtm4_w = matmul_const(rtm4_c, block)
    refine4_w = matmul_const(refine4_c, block)

    refined = apply_rtm(b_prev, RTM(*refine4_w.data[0]))
    coarse = apply_rtm(refined, RTM(*rtm4_w.data[0])) if dynamic else refined

    base4 = np.array([[*b_prev.center, b_prev.yaw]])
    shift = add(refine4_w, rtm4_w) if dynamic else refine4_w
    box1_4 = add_const(shift, base4)

    # the merge geometry is driven by predicted motion values; only the
    # stage-two output vector carries gradient here
    prev_xyz, cur_xyz = split_by_time(example.st, mask)
    merged = motion_assisted_merge(
        prev_xyz, cur_xyz, RTM(*rtm4_w.data[0]), prev_box=refined, dynamic=dynamic
    )
    out4 = stage2_forward(world_to_canonical(merged, coarse) * COORD_SCALE, model)
    coarse4 = np.array([[*coarse.center, coarse.yaw]])
    box2_4 = add_const(matmul_const(out4, _yaw_block(coarse.yaw)), coarse4)

    rtm_t = example.rtm_target.as_vector()
    refine_t = example.refine_target.as_vector()
    return PairForward(
        motion_logits=logits,
        motion_label=example.motion_label,
        rtm4=rtm4_w,
        rtm_target=_aligned_vec4(rtm_t[:3], rtm_t[3], rtm4_w.data[0, 3]),
        refine4=refine4_w,
        refine_target=_aligned_vec4(refine_t[:3], refine_t[3], refine4_w.data[0, 3]),
        box1_4=box1_4,
        box1_target=_aligned_vec4(example.gt_cur.center, example.gt_cur.yaw, box1_4.data[0, 3]),
        box2_4=box2_4,
        box2_target=_aligned_vec4(example.gt_cur.center, example.gt_cur.yaw, box2_4.data[0, 3]),
        refined_prev_box=refined,
        coarse_box=coarse,
    )


def _mean_of(terms: list[Tensor]) -> Optional[Tensor]:
    if not terms:
        return None
    acc = terms[0]
    for t in terms[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(terms))


def total_loss(
    seg_logits: Tensor,
    seg_labels: np.ndarray,
    pairs: Sequence[PairForward],
    lambda_cls_target: float = 0.1,
    lambda_cls_motion: float = 0.1,
    lambda_reg: float = 1.0,
) -> tuple[Tensor, dict]:
    """Weighted sum of the classification and regression terms.

    Returns the scalar loss node and a float breakdown whose entries are the
    unweighted per-term means; the weighted sum reproduces ``total`` exactly.
    """
    cls_target = cross_entropy(seg_logits, seg_labels)
    cls_motion = _mean_of(
        [cross_entropy(p.motion_logits, np.array([p.motion_label])) for p in pairs]
    )
    reg_motion = _mean_of([huber(p.rtm4, p.rtm_target) for p in pairs])
    reg_refine = _mean_of([huber(p.refine4, p.refine_target) for p in pairs])
    reg_stage1 = _mean_of([huber(p.box1_4, p.box1_target) for p in pairs])
    reg_stage2 = _mean_of([huber(p.box2_4, p.box2_target) for p in pairs])

    total = scale(cls_target, lambda_cls_target)
    if cls_motion is not None:
        total = add(total, scale(cls_motion, lambda_cls_motion))
        reg_sum = add(add(reg_motion, reg_refine), add(reg_stage1, reg_stage2))
        total = add(total, scale(reg_sum, lambda_reg))

    def val(t: Optional[Tensor]) -> float:
        return float(t.item()) if t is not None else 0.0

    terms = {
        "cls_target": val(cls_target),
        "cls_motion": val(cls_motion),
        "reg_motion": val(reg_motion),
        "reg_refine_prev": val(reg_refine),
        "reg_stage1": val(reg_stage1),
        "reg_stage2": val(reg_stage2),
        "total": float(total.item()),
    }
    return total, terms


def train(model: Model, pairs: Sequence[TrainingPair], cfg: TrainConfig) -> list[dict]:
    """Optimize the model in place; returns one metrics row per epoch.

    Examples are re-augmented every epoch unless ``resample_each_epoch`` is
    off, in which case the same prepared examples are reused so a small set
    can be overfit exactly.  Every random draw derives from ``cfg.seed``.
    """
    if not pairs:
        raise ValueError("no training pairs")
    params = model.parameters()
    opt = Adam(params, lr=cfg.lr)
    prepared: Optional[list[Optional[PairExample]]] = None
    metrics: list[dict] = []

    for epoch in range(cfg.start_epoch, cfg.epochs):
        lr = scheduled_lr(cfg, epoch)
        opt.lr = lr
        if prepared is None or cfg.resample_each_epoch:
            prep_key = epoch if cfg.resample_each_epoch else 0
            prepared = [
                prepare_pair_example(
                    pair, cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, prep_key, 1, i]))
                )
                for i, pair in enumerate(pairs)
            ]
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 0])).permutation(
            len(pairs)
        )
        sums: dict[str, float] = {}
        n_batches = 0
        n_skipped = sum(1 for ex in prepared if ex is None)

        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            examples = [prepared[j] for j in batch if prepared[j] is not None]
            if not examples:
                continue
            batch_id = f"epoch {epoch}, batch {start // cfg.batch_size}"
            try:
                feats = np.vstack([ex.features for ex in examples])
                labels = np.concatenate([ex.seg_labels for ex in examples])
                logits = segment_forward_batched(feats, model, batch=len(examples))
                fwds = []
                for ex in examples:
                    fwd = forward_pair(ex, model, cfg.margin)
                    if fwd is None:
                        n_skipped += 1
                    else:
                        fwds.append(fwd)
                loss, terms = total_loss(
                    logits,
                    labels,
                    fwds,
                    lambda_cls_target=cfg.lambda_cls_target,
                    lambda_cls_motion=cfg.lambda_cls_motion,
                    lambda_reg=cfg.lambda_reg,
                )
                zero_grad(params)
                backward(loss)
                opt.step()
            except FloatingPointError as err:
                raise FloatingPointError(f"training aborted at {batch_id}: {err}") from err
            for key, value in terms.items():
                sums[key] = sums.get(key, 0.0) + value
            n_batches += 1

        denom = max(n_batches, 1)
        row = {"epoch": epoch, "lr": lr, "n_batches": n_batches, "n_skipped_pairs": int(n_skipped)}
        row["loss"] = sums.get("total", 0.0) / denom
        for key in ("cls_target", "cls_motion", "reg_motion", "reg_refine_prev", "reg_stage1", "reg_stage2"):
            row[key] = sums.get(key, 0.0) / denom
        metrics.append(row)
    return metrics


def export_predictions(results: Iterable[tuple[str, TrackResult]], path) -> None:
    """Write per-frame predictions as JSON lines.

    Frame 0 echoes the initial box with ``dynamic`` false and zero wall
    time; later frames carry the tracker's diagnostics.
    """
    with open(str(path), "w", encoding="utf-8") as fh:
        for tracklet_id, result in results:
            rows = [
                {
                    "tracklet_id": tracklet_id,
                    "frame_index": 0,
                    "box": [float(v) for v in result.boxes[0].as_vector()],
                    "dynamic": False,
                    "wall_ms": 0.0,
                }
            ]
            for t, diag in enumerate(result.diagnostics, start=1):
                rows.append(
                    {
                        "tracklet_id": tracklet_id,
                        "frame_index": t,
                        "box": [float(v) for v in result.boxes[t].as_vector()],
                        "dynamic": bool(diag.dynamic),
                        "wall_ms": float(diag.wall_ms),
                    }
                )
            for row in rows:
                fh.write(json.dumps(row) + "\n")
