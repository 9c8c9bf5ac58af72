"""Evaluation metric suite.

Semantic segmentation: per-class IoU / pixel accuracy from a confusion
matrix, and Knowledgeability (threshold-averaged, budget-normalized
count of classes whose IoU clears each threshold).

Panoptic: PQ and part-aware PQ over per-image segment sets, with
segment matching at IoU > 0.5 (which makes matches unique both ways),
plus the conventional part-level IoU on uid rasters. The Impact metric
summarizes performance degradation under visual artifacts as a
non-positive percentage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .panoptic_uid import PpsSpec, decode_arrays
from .raster_io import ConfusionMatrix, UidRaster

VOID_CLASS = 0

__all__ = [
    "IouTable",
    "SemSegScores",
    "Segment",
    "SegmentSet",
    "PqStats",
    "miou_mpa",
    "knowledgeability",
    "pq",
    "part_pq",
    "part_iou",
    "impact",
    "segments_from_uid_raster",
]


@dataclass(frozen=True)
class IouTable:
    """Per-class IoU with a validity mask (classes absent from gt and pred)."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.shape != valid.shape or values.ndim != 1:
            raise ValidationError("IoU table values and validity mask must be 1-D and aligned")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]


@dataclass(frozen=True)
class SemSegScores:
    iou: IouTable
    pixel_accuracy: IouTable
    miou: float
    mpa: float


def miou_mpa(cm: ConfusionMatrix) -> SemSegScores:
    """Per-class IoU and pixel accuracy plus their means.

    Classes with an empty gt row and an empty pred column are invalid
    and excluded from the means; an all-empty matrix yields NaN means
    with a warning.
    """
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    gt_totals = counts.sum(axis=1)
    pred_totals = counts.sum(axis=0)
    union = gt_totals + pred_totals - tp
    valid = (gt_totals + pred_totals) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(valid & (union > 0), tp / np.where(union > 0, union, 1), 0.0)
        pa = np.where(gt_totals > 0, tp / np.where(gt_totals > 0, gt_totals, 1), 0.0)
    pa_valid = gt_totals > 0
    if not valid.any():
        warnings.warn("confusion matrix is empty; means are undefined", UserWarning, stacklevel=2)
        miou = mpa = float("nan")
    else:
        miou = float(iou[valid].mean())
        mpa = float(pa[pa_valid].mean()) if pa_valid.any() else float("nan")
    return SemSegScores(IouTable(iou, valid), IouTable(pa, pa_valid), miou, mpa)


def knowledgeability(
    ious: IouTable | np.ndarray, budget: int, num_thresholds: int = 10
) -> float:
    """Threshold-averaged, budget-normalized count of classes with IoU > t.

    Thresholds are the equidistant set {0, 1/n, ..., 1 - 1/n}; the
    strictly-greater comparison and the min() cap bound the value to
    [0, min(L, budget)/budget].
    """
    if budget < 1 or num_thresholds < 1:
        raise ValidationError("budget and threshold count must be >= 1")
    values = ious.valid_values() if isinstance(ious, IouTable) else np.asarray(ious, dtype=np.float64)
    thresholds = np.arange(num_thresholds) / num_thresholds
    counts = (values[None, :] > thresholds[:, None]).sum(axis=1)
    return float(np.minimum(counts, budget).sum() / (num_thresholds * budget))


# ---------------------------------------------------------------------------
# Panoptic quality


@dataclass(frozen=True)
class Segment:
    """One panoptic segment: scene class, optional instance id, pixel mask,
    optional per-pixel part ids valid inside the mask."""

    scene_class: int
    instance: int | None
    mask: np.ndarray
    parts: np.ndarray | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        if self.parts is not None:
            parts = np.asarray(self.parts, dtype=np.int64)
            if parts.shape != mask.shape:
                raise ValidationError("parts raster must match the segment mask shape")
            object.__setattr__(self, "parts", parts)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SegmentSet:
    """Segments of one image; masks must be pairwise disjoint."""

    shape: tuple[int, int]
    segments: tuple[Segment, ...]

    def __post_init__(self):
        segments = tuple(self.segments)
        object.__setattr__(self, "segments", segments)
        cover = np.zeros(self.shape, dtype=np.int32)
        for seg in segments:
            if seg.mask.shape != tuple(self.shape):
                raise ValidationError("segment mask shape differs from image shape")
            cover += seg.mask
        if np.any(cover > 1):
            raise ValidationError("segments within one image overlap")


@dataclass
class PqStats:
    """Per-class TP/FP/FN counts and the sum of matched-pair scores.

    Mergeable by addition (associative and commutative), enabling
    per-image accumulation with a final reduce.
    """

    tp: dict[int, int] = field(default_factory=dict)
    fp: dict[int, int] = field(default_factory=dict)
    fn: dict[int, int] = field(default_factory=dict)
    score_sum: dict[int, float] = field(default_factory=dict)

    def _bump(self, table: dict, cls: int, amount) -> None:
        table[cls] = table.get(cls, 0) + amount

    def __add__(self, other: "PqStats") -> "PqStats":
        merged = PqStats(dict(self.tp), dict(self.fp), dict(self.fn), dict(self.score_sum))
        for table, source in (
            (merged.tp, other.tp),
            (merged.fp, other.fp),
            (merged.fn, other.fn),
            (merged.score_sum, other.score_sum),
        ):
            for cls, amount in source.items():
                table[cls] = table.get(cls, 0) + amount
        return merged

    def classes_present(self) -> list[int]:
        present = set()
        for table in (self.tp, self.fp, self.fn):
            present.update(cls for cls, n in table.items() if n > 0)
        return sorted(present)

    def per_class(self) -> dict[int, float]:
        out = {}
        for cls in self.classes_present():
            denom = self.tp.get(cls, 0) + 0.5 * self.fp.get(cls, 0) + 0.5 * self.fn.get(cls, 0)
            out[cls] = self.score_sum.get(cls, 0.0) / denom if denom > 0 else 0.0
        return out

    def value(self) -> float:
        per_class = self.per_class()
        if not per_class:
            return float("nan")
        return float(np.mean(list(per_class.values())))


def _prepare_sets(gt: SegmentSet, pred: SegmentSet):
    """Trim predictions by the gt void region and split off void segments."""
    if gt.shape != pred.shape:
        raise ValidationError("gt and prediction images have different shapes")
    void = np.zeros(gt.shape, dtype=bool)
    gt_segments = []
    for seg in gt.segments:
        if seg.scene_class == VOID_CLASS:
            void |= seg.mask
        elif seg.area:
            gt_segments.append(seg)
    pred_segments = []
    for seg in pred.segments:
        if seg.scene_class == VOID_CLASS:
            continue
        mask = seg.mask & ~void
        if mask.any():
            pred_segments.append(Segment(seg.scene_class, seg.instance, mask, seg.parts))
    return gt_segments, pred_segments


def _match(gt_segments, pred_segments):
    """Same-class pairs with IoU > 0.5; uniqueness follows from the rule."""
    matches = []
    matched_gt = set()
    matched_pred = set()
    for gi, g in enumerate(gt_segments):
        for pi, p in enumerate(pred_segments):
            if p.scene_class != g.scene_class or pi in matched_pred:
                continue
            inter = int((g.mask & p.mask).sum())
            if inter == 0:
                continue
            union = g.area + p.area - inter
            iou = inter / union
            if iou > 0.5:
                matches.append((gi, pi, iou))
                matched_gt.add(gi)
                matched_pred.add(pi)
                break
    return matches, matched_gt, matched_pred


def _accumulate(gt_segments, pred_segments, matches, matched_gt, matched_pred, score_of):
    stats = PqStats()
    for gi, pi, iou in matches:
        cls = gt_segments[gi].scene_class
        stats._bump(stats.tp, cls, 1)
        stats._bump(stats.score_sum, cls, score_of(gt_segments[gi], pred_segments[pi], iou))
    for gi, g in enumerate(gt_segments):
        if gi not in matched_gt:
            stats._bump(stats.fn, g.scene_class, 1)
    for pi, p in enumerate(pred_segments):
        if pi not in matched_pred:
            stats._bump(stats.fp, p.scene_class, 1)
    return stats


def pq(gt: SegmentSet, pred: SegmentSet) -> tuple[PqStats, float]:
    """Panoptic quality of one image: stats plus the class-averaged value."""
    gt_segments, pred_segments = _prepare_sets(gt, pred)
    matches, mg, mp = _match(gt_segments, pred_segments)
    stats = _accumulate(gt_segments, pred_segments, matches, mg, mp, lambda g, p, iou: iou)
    return stats, stats.value()


def _part_pair_score(g: Segment, p: Segment, instance_iou: float) -> float:
    """Mean part-class IoU over the union of the two masks.

    Gt void-part pixels (part id 0) are excluded; parts absent from both
    sides are not averaged. A pair with no part semantics on either side
    degrades to the instance IoU.
    """
    if g.parts is None or p.parts is None:
        raise ValidationError("matched pair of a parts class lacks part annotations")
    gt_part = np.where(g.mask, g.parts, 0)
    pred_part = np.where(p.mask, p.parts, 0)
    evaluate = (g.mask | p.mask) & ~(g.mask & (gt_part == 0))
    present = set(np.unique(gt_part[evaluate & g.mask])) | set(
        np.unique(pred_part[evaluate & p.mask])
    )
    present.discard(0)
    if not present:
        return instance_iou
    ious = []
    for k in sorted(present):
        g_k = (gt_part == k) & g.mask & evaluate
        p_k = (pred_part == k) & p.mask & evaluate
        union = int((g_k | p_k).sum())
        inter = int((g_k & p_k).sum())
        ious.append(inter / union if union else 0.0)
    return float(np.mean(ious))


def part_pq(
    gt: SegmentSet, pred: SegmentSet, parts_spec: dict[int, int]
) -> tuple[PqStats, float]:
    """Part-aware PQ: matching as in pq; matched pairs of classes with
    declared parts score mean part IoU instead of instance IoU."""
    for segset in (gt, pred):
        for seg in segset.segments:
            if seg.parts is not None and seg.scene_class in parts_spec:
                bad = seg.parts[seg.mask & (seg.parts >= parts_spec[seg.scene_class])]
                if bad.size:
                    raise ValidationError(
                        f"part id {int(bad[0])} outside the declared part set of "
                        f"class {seg.scene_class}"
                    )
    gt_segments, pred_segments = _prepare_sets(gt, pred)
    matches, mg, mp = _match(gt_segments, pred_segments)

    def score_of(g: Segment, p: Segment, iou: float) -> float:
        if g.scene_class in parts_spec:
            return _part_pair_score(g, p, iou)
        return iou

    stats = _accumulate(gt_segments, pred_segments, matches, mg, mp, score_of)
    return stats, stats.value()


def part_iou(gt: UidRaster, pred: UidRaster, spec: PpsSpec) -> dict[int, float]:
    """Conventional IoU over part-level classes, per scene class with parts.

    Gt pixels of a parts class whose part id is void (0) or absent carry
    no part semantics and are excluded, as are gt scene-void pixels.
    Parts absent from both rasters are excluded from the class mean.
    """
    if (gt.width, gt.height) != (pred.width, pred.height):
        raise ValidationError("uid rasters have different dimensions")
    g_sid, _, g_pid = decode_arrays(gt.data)
    p_sid, _, p_pid = decode_arrays(pred.data)
    ignore = g_sid == VOID_CLASS
    for cls, count in spec.parts.items():
        ignore |= (g_sid == cls) & (g_pid <= 0)
    out: dict[int, float] = {}
    for cls, count in sorted(spec.parts.items()):
        ious = []
        for part in range(1, count):
            g_k = (g_sid == cls) & (g_pid == part) & ~ignore
            p_k = (p_sid == cls) & (p_pid == part) & ~ignore
            union = int((g_k | p_k).sum())
            if union == 0:
                continue
            ious.append(int((g_k & p_k).sum()) / union)
        if ious:
            out[cls] = float(np.mean(ious))
    return out


def impact(miou_none: float, miou_low: float, miou_high: float) -> float:
    """Performance degradation under a visual artifact, in percent (<= 0)."""
    if min(miou_none, miou_low, miou_high) < 0:
        raise ValidationError("mIoU inputs must be non-negative")
    denom = max(miou_none, miou_low)
    if denom == 0:
        raise ValidationError("impact undefined: max(mIoU_none, mIoU_low) is zero")
    return min(100.0 * min(miou_low, miou_high) / denom - 100.0, 0.0)


def segments_from_uid_raster(raster: UidRaster, spec: PpsSpec) -> SegmentSet:
    """Derive per-image segments from a uid raster.

    Stuff classes form one segment per class; things segments group by
    (semantic id, instance id). Things pixels lacking instance digits
    have no segment identity and are folded into the void region, as
    are scene-void and undeclared pixels.
    """
    sid, iid, pid = decode_arrays(raster.data)
    parts_arr = np.maximum(pid, 0)
    void = sid == VOID_CLASS
    declared = spec.stuff | spec.things
    void |= ~np.isin(sid, sorted(declared))
    segments: list[Segment] = []
    for cls in sorted(spec.stuff):
        mask = sid == cls
        if mask.any():
            parts = parts_arr if cls in spec.parts else None
            segments.append(Segment(cls, None, mask, parts))
    for cls in sorted(spec.things):
        cls_mask = sid == cls
        void |= cls_mask & (iid < 0)
        for inst in np.unique(iid[cls_mask & (iid >= 0)]):
            mask = cls_mask & (iid == inst)
            parts = parts_arr if cls in spec.parts else None
            segments.append(Segment(cls, int(inst), mask, parts))
    if void.any():
        segments.append(Segment(VOID_CLASS, None, void))
    return SegmentSet((raster.height, raster.width), tuple(segments))
