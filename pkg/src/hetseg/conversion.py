"""Atom-to-label probability conversion and its loss/gradient algebra.

The classifier predicts a categorical distribution sigma over atoms;
each dataset supervises it through the group-sum conversion
s_m = sum of sigma over the atoms of label m. Because every dataset's
groups partition the atom set, s is again a categorical distribution
and plugs into the ordinary cross-entropy loss. The exact logit
gradient of -log(group mass) redistributes the ground-truth pull over
the group atoms proportionally to their within-group probability and
degenerates to the flat softmax/CE gradient for singleton groups; a
central finite-difference checker verifies it numerically.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .raster_io import ClassRaster, ProbRaster
from .taxonomy import HierarchyNode, LabelSpace

PROB_FLOOR = 1e-300

__all__ = [
    "LossBreakdown",
    "ClampWarning",
    "softmax",
    "group_sum",
    "loss_per_image",
    "grad_logits",
    "finite_diff_check",
    "dense_cce",
    "sparse_cce",
    "hierarchical_decode",
    "hierarchical_loss",
]


class ClampWarning(UserWarning):
    """A loss clamped a probability at the 1e-300 floor (log(0) guard)."""


def _safe_log(p: np.ndarray | float) -> np.ndarray | float:
    clipped = np.maximum(p, PROB_FLOOR)
    if np.any(np.asarray(p) < PROB_FLOOR):
        warnings.warn("probability clamped to 1e-300 inside a loss", ClampWarning, stacklevel=3)
    return np.log(clipped)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (max-subtracted)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size and not np.all(np.isfinite(logits)):
        raise ValidationError("logits must be finite")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def group_sum(sigma: np.ndarray, space: LabelSpace) -> np.ndarray:
    """Accumulate atom probabilities into per-label sums.

    ``sigma`` has atoms on the last axis; the output replaces it with
    labels. A partitioned label space preserves the distribution
    property exactly (each atom is used once).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    num_atoms = sum(len(g) for g in space.groups)
    if sigma.shape[-1] != num_atoms:
        raise ValidationError(
            f"length mismatch: sigma has {sigma.shape[-1]} atoms, label space covers {num_atoms}"
        )
    out = np.empty(sigma.shape[:-1] + (space.num_labels,), dtype=np.float64)
    for label_id, group in enumerate(space.groups):
        out[..., label_id] = sigma[..., list(group)].sum(axis=-1)
    return out


def loss_per_image(
    labels: ClassRaster,
    sigma: ProbRaster,
    space: LabelSpace,
    ignore: set[int] = frozenset(),
) -> float:
    """Mean cross-entropy of group-summed probabilities at the gt labels.

    Returns 0.0 when every pixel is ignored.
    """
    if (labels.width, labels.height) != (sigma.width, sigma.height):
        raise ValidationError("label raster and probability raster dimensions differ")
    y = labels.data.ravel().astype(np.int64)
    if y.size and y.max(initial=0) >= space.num_labels:
        raise ValidationError(f"label id {int(y.max())} out of range for {space.num_labels} labels")
    s = group_sum(sigma.data.reshape(-1, sigma.channels), space)
    keep = np.ones_like(y, dtype=bool)
    for label in ignore:
        keep &= y != label
    if not keep.any():
        return 0.0
    picked = s[np.flatnonzero(keep), y[keep]]
    return float(-np.mean(_safe_log(picked)))


def grad_logits(sigma: np.ndarray, gt_group: set[int] | tuple[int, ...]) -> np.ndarray:
    """Exact gradient of -log(group mass) wrt the logits.

    g_m = sigma_m - [m in gt_group] * sigma_m / s with s the summed
    group mass: inside the group the pulled-down share is the
    within-group renormalized probability, outside it is plain sigma_m.
    For singleton groups this reduces to the flat softmax/CE gradient
    sigma - onehot. The entries sum to 0 (softmax shift invariance).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    group = sorted(set(int(a) for a in gt_group))
    if not group:
        raise ValidationError("gt_group must be non-empty")
    if group[0] < 0 or group[-1] >= sigma.shape[-1]:
        raise ValidationError("gt_group contains atom ids out of range")
    mass = np.maximum(sigma[..., group].sum(axis=-1, keepdims=True), PROB_FLOOR)
    grad = sigma.copy()
    grad[..., group] -= sigma[..., group] / mass
    return grad


def finite_diff_check(
    logits: np.ndarray, gt_group: set[int] | tuple[int, ...], epsilon: float = 1e-5
) -> float:
    """Max abs deviation between the analytic gradient and central differences.

    The reference loss is -log(sum of softmax over gt_group), evaluated
    coordinate-wise at logits +- epsilon.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    group = sorted(set(int(a) for a in gt_group))

    def loss_at(lam: np.ndarray) -> float:
        return float(-np.log(softmax(lam)[group].sum()))

    analytic = grad_logits(softmax(logits), group)
    numeric = np.empty_like(logits)
    for i in range(logits.size):
        bump = np.zeros_like(logits)
        bump[i] = epsilon
        numeric[i] = (loss_at(logits + bump) - loss_at(logits - bump)) / (2 * epsilon)
    return float(np.max(np.abs(analytic - numeric)))


def dense_cce(target: np.ndarray, sigma: np.ndarray) -> float:
    """-sum target_i * log(sigma_i); zero-probability targets contribute 0."""
    target = np.asarray(target, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if target.shape != sigma.shape:
        raise ValidationError(f"length mismatch: target {target.shape} vs sigma {sigma.shape}")
    active = target > 0
    if not active.any():
        return 0.0
    return float(-(target[active] * _safe_log(sigma[active])).sum())


def sparse_cce(label: int, sigma: np.ndarray) -> float:
    """Dense CCE with a one-hot target: -log(sigma_label)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if not 0 <= label < sigma.shape[-1]:
        raise ValidationError(f"label {label} out of range")
    target = np.zeros_like(sigma)
    target[label] = 1.0
    return dense_cce(target, sigma)


def hierarchical_decode(tree: HierarchyNode, probs: dict[str, ProbRaster]) -> ClassRaster:
    """Resolve per-pixel decisions down the classifier tree.

    Take the root argmax per pixel; while the chosen class has a child
    classifier, replace it by the child's argmax. Output ids index the
    depth-first enumeration of final (leaf-resolved) labels. Argmax
    ties break toward the lowest channel index.
    """
    final = tree.final_labels()
    final_id = {name: i for i, name in enumerate(final)}
    root_raster = probs.get(tree.name)
    if root_raster is None:
        raise ValidationError(f"missing classifier raster for node {tree.name!r}")
    height, width = root_raster.height, root_raster.width
    out = np.zeros((height, width), dtype=np.uint16)

    def resolve(node: HierarchyNode, mask: np.ndarray) -> None:
        raster = probs.get(node.name)
        if raster is None:
            raise ValidationError(f"missing classifier raster for node {node.name!r}")
        if (raster.height, raster.width) != (height, width):
            raise ValidationError(f"classifier raster {node.name!r} has mismatched dimensions")
        if raster.channels != len(node.classes):
            raise ValidationError(
                f"classifier raster {node.name!r} has {raster.channels} channels "
                f"for {len(node.classes)} classes"
            )
        choice = np.argmax(raster.data, axis=2)
        for idx, cls in enumerate(node.classes):
            chosen = mask & (choice == idx)
            if not chosen.any():
                continue
            child = node.children.get(cls)
            if child is None:
                out[chosen] = final_id[cls]
            else:
                resolve(child, chosen)

    resolve(tree, np.ones((height, width), dtype=bool))
    return ClassRaster(width, height, out)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-classifier losses, their weights, and the weighted total."""

    losses: tuple[float, ...]
    weights: tuple[float, ...]
    total: float


def hierarchical_loss(per_classifier: list[tuple[float, float]]) -> LossBreakdown:
    """Weighted sum of per-classifier losses (L2 regularizer excluded)."""
    losses = tuple(float(l) for l, _ in per_classifier)
    weights = tuple(float(w) for _, w in per_classifier)
    if any(w < 0 for w in weights):
        raise ValidationError("classifier weights must be non-negative")
    total = float(sum(w * l for l, w in zip(losses, weights)))
    return LossBreakdown(losses, weights, total)
