"""Pseudo-labels from weak annotations and their online refinement.

Bounding boxes (and image tags, treated as full-image boxes) each cast
a unity vote on every covered pixel; per-pixel vote counts normalize
into a categorical pseudo-label distribution. Channel 0 is the
unlabeled/void class: pixels covered by no annotation get unlabeled
probability 1. During training the pseudo-labels are refined against
the model's predictions: a pixel survives only when the prediction
argmax agrees with the pseudo argmax and its confidence reaches the
threshold (default 0.9), otherwise it is reset to unlabeled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .raster_io import ClassRaster, ProbRaster
from .conversion import _safe_log

UNLABELED = 0

__all__ = ["UNLABELED", "WeakAnnotation", "read_annotations", "rasterize_votes", "refine", "mixed_loss"]


@dataclass(frozen=True)
class WeakAnnotation:
    """A box or tag annotation; box coordinates are half-open pixel ranges."""

    kind: str
    label: int
    box: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("box", "tag"):
            raise ValidationError(f"annotation kind must be box or tag, got {self.kind!r}")
        if self.kind == "box":
            if self.box is None:
                raise ValidationError("box annotation requires coordinates")
            x0, y0, x1, y1 = self.box
            if not (x0 < x1 and y0 < y1):
                raise ValidationError(f"degenerate box {self.box}")
        elif self.box is not None:
            raise ValidationError("tag annotation carries no coordinates")


def read_annotations(path) -> list[WeakAnnotation]:
    """Parse JSON-lines annotations (one object per line, blank lines ok)."""
    annots = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
            kind = obj.get("kind")
            label = obj.get("label")
            if kind == "box":
                try:
                    box = (int(obj["x0"]), int(obj["y0"]), int(obj["x1"]), int(obj["y1"]))
                except KeyError as exc:
                    raise ValidationError(f"{path}:{lineno}: box missing coordinate {exc}") from None
                annots.append(WeakAnnotation("box", int(label), box))
            elif kind == "tag":
                annots.append(WeakAnnotation("tag", int(label)))
            else:
                raise ValidationError(f"{path}:{lineno}: unknown annotation kind {kind!r}")
    return annots


def rasterize_votes(
    annots: list[WeakAnnotation], num_labels: int, width: int, height: int
) -> ProbRaster:
    """Vote-and-normalize weak annotations into a pseudo-label raster.

    Tags vote on every pixel. Uncovered pixels get unlabeled (channel 0)
    probability 1; covered pixels are normalized over the votes cast.
    """
    votes = np.zeros((height, width, num_labels), dtype=np.float64)
    for a in annots:
        if not 0 <= a.label < num_labels:
            raise ValidationError(f"annotation label {a.label} out of range 0..{num_labels - 1}")
        if a.kind == "tag":
            x0, y0, x1, y1 = 0, 0, width, height
        else:
            x0, y0, x1, y1 = a.box
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
                raise ValidationError(f"box {a.box} outside {width}x{height} raster")
        votes[y0:y1, x0:x1, a.label] += 1.0
    totals = votes.sum(axis=2)
    covered = totals > 0
    votes[covered] /= totals[covered][:, None]
    votes[~covered, UNLABELED] = 1.0
    return ProbRaster(width, height, num_labels, votes)


def refine(pseudo: ProbRaster, pred: ProbRaster, threshold: float = 0.9) -> ProbRaster:
    """Keep a pixel's pseudo-label only when the prediction backs it.

    Kept iff argmax(pred) == argmax(pseudo), the prediction's max
    probability is >= threshold (inclusive, per the refinement rule),
    and the pseudo argmax is not the unlabeled channel. Everything else
    resets to unlabeled. Idempotent, never adds labeled pixels.
    """
    if (pseudo.width, pseudo.height, pseudo.channels) != (pred.width, pred.height, pred.channels):
        raise ValidationError("pseudo and prediction rasters must share dims and channels")
    if not 0 < threshold <= 1:
        raise ValidationError(f"threshold {threshold} outside (0, 1]")
    pseudo_arg = np.argmax(pseudo.data, axis=2)
    pred_arg = np.argmax(pred.data, axis=2)
    pred_max = np.max(pred.data, axis=2)
    kept = (pseudo_arg != UNLABELED) & (pred_arg == pseudo_arg) & (pred_max >= threshold)
    out = np.zeros_like(pseudo.data)
    out[..., UNLABELED] = 1.0
    out[kept] = pseudo.data[kept]
    return ProbRaster(pseudo.width, pseudo.height, pseudo.channels, out)


def mixed_loss(
    strong: tuple[ClassRaster, ProbRaster] | None,
    weak: tuple[ProbRaster, ProbRaster] | None,
) -> float:
    """Joint loss over strong pixels and refined weak pixels.

    Per-pixel weights are y/|P_strong| on strong pixels (one-hot gt,
    void excluded) and y_refined/|P_weak| on weak pixels (unlabeled
    channel contributes nothing; pixels refined to unlabeled are not
    counted in |P_weak|). Raises when both pixel sets are empty.
    """
    total = 0.0
    strong_count = weak_count = 0
    strong_term = weak_term = 0.0

    if strong is not None:
        gt, sigma = strong
        if (gt.width, gt.height) != (sigma.width, sigma.height):
            raise ValidationError("strong pair dimensions differ")
        y = gt.data.ravel().astype(np.int64)
        if y.size and y.max(initial=0) >= sigma.channels:
            raise ValidationError("strong label out of range")
        keep = y != UNLABELED
        strong_count = int(keep.sum())
        if strong_count:
            probs = sigma.data.reshape(-1, sigma.channels)[np.flatnonzero(keep), y[keep]]
            strong_term = float(-np.sum(_safe_log(probs)) / strong_count)

    if weak is not None:
        pseudo, sigma = weak
        if (pseudo.width, pseudo.height, pseudo.channels) != (
            sigma.width,
            sigma.height,
            sigma.channels,
        ):
            raise ValidationError("weak pair dimensions or channels differ")
        flat = pseudo.data.reshape(-1, pseudo.channels)
        labeled = np.argmax(flat, axis=1) != UNLABELED
        weak_count = int(labeled.sum())
        if weak_count:
            target = flat[labeled].copy()
            target[:, UNLABELED] = 0.0
            probs = sigma.data.reshape(-1, sigma.channels)[labeled]
            active = target > 0
            contrib = np.where(active, target * _safe_log(np.where(active, probs, 1.0)), 0.0)
            weak_term = float(-contrib.sum() / weak_count)

    if strong_count == 0 and weak_count == 0:
        raise ValidationError("mixed loss undefined: no strong and no weak pixels")
    total = strong_term + weak_term
    return total
