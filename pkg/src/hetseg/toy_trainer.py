"""Desk-scale end-to-end check of multi-dataset atom supervision.

A linear softmax classifier over semantic atoms is trained on synthetic
Gaussian-blob features, supervised per dataset through the group-sum
cross-entropy (each dataset sees only its own label space). Datasets
with conflicting granularity jointly supervise the shared atoms: a fine
dataset resolves atoms a coarse dataset lumps together, which is the
mechanism the taxonomy/conversion machinery exists for.

Everything is deterministic under the scenario seed; training is plain
SGD with optional momentum 0.9 and L2 decay, no schedule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .conversion import finite_diff_check, group_sum, softmax
from .errors import FormatError, NumericError, ValidationError
from .metrics import IouTable, knowledgeability
from .raster_io import ConfusionMatrix
from .taxonomy import AtomTaxonomy, taxonomy_from_dict

__all__ = [
    "SyntheticScenario",
    "DatasetSamples",
    "LinearModel",
    "TrainResult",
    "EvalResult",
    "generate",
    "train",
    "train_flat_reference",
    "evaluate",
    "load_scenario",
    "run_scenario",
]


@dataclass(frozen=True)
class SyntheticScenario:
    """Data-generation recipe: one Gaussian blob per atom, per-dataset
    sample counts, batch composition ratios, and the master seed."""

    taxonomy: AtomTaxonomy
    feature_dim: int
    blob_means: np.ndarray
    blob_std: float
    samples: dict[str, int]
    batch_ratio: dict[str, int]
    seed: int
    heldout: int = 500

    def __post_init__(self):
        means = np.ascontiguousarray(self.blob_means, dtype=np.float64)
        if means.shape != (self.taxonomy.num_atoms, self.feature_dim):
            raise ValidationError("blob means must be (num_atoms, feature_dim)")
        if self.taxonomy.num_atoms < 2:
            raise ValidationError("need at least two atoms")
        real = means[1:]
        if len(np.unique(real, axis=0)) != len(real):
            raise ValidationError("blob means must be distinct")
        for name in list(self.samples) + list(self.batch_ratio):
            self.taxonomy.label_space(name)
        object.__setattr__(self, "blob_means", means)


def default_blob_means(num_atoms: int, feature_dim: int, radius: float = 4.0) -> np.ndarray:
    """Evenly spread atom means on a circle in the first two dimensions."""
    if feature_dim < 2:
        raise ValidationError("feature_dim must be >= 2 for the default layout")
    means = np.zeros((num_atoms, feature_dim))
    angles = 2.0 * np.pi * np.arange(num_atoms) / max(num_atoms, 1)
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


@dataclass(frozen=True)
class DatasetSamples:
    features: np.ndarray
    labels: np.ndarray
    atoms: np.ndarray  # hidden ground truth


def generate(scenario: SyntheticScenario) -> dict[str, DatasetSamples]:
    """Draw per-dataset samples: a hidden atom (uniform over non-void
    atoms), a feature from its blob, and the dataset-level label the
    atom maps to. Deterministic under the scenario seed."""
    out = {}
    for index, (name, count) in enumerate(sorted(scenario.samples.items())):
        rng = np.random.default_rng([scenario.seed, index])
        atoms = rng.integers(1, scenario.taxonomy.num_atoms, size=count)
        features = scenario.blob_means[atoms] + scenario.blob_std * rng.standard_normal(
            (count, scenario.feature_dim)
        )
        lut = scenario.taxonomy.atom_to_label(name)
        out[name] = DatasetSamples(features, lut[atoms], atoms)
    return out


def generate_heldout(scenario: SyntheticScenario) -> DatasetSamples:
    rng = np.random.default_rng([scenario.seed, 10_000])
    atoms = rng.integers(1, scenario.taxonomy.num_atoms, size=scenario.heldout)
    features = scenario.blob_means[atoms] + scenario.blob_std * rng.standard_normal(
        (scenario.heldout, scenario.feature_dim)
    )
    return DatasetSamples(features, atoms.copy(), atoms)


@dataclass
class LinearModel:
    """Linear logits over atoms: x @ weights + bias."""

    weights: np.ndarray
    bias: np.ndarray
    l2_decay: float = 0.0

    @classmethod
    def zeros(cls, feature_dim: int, num_atoms: int, l2_decay: float = 0.0) -> "LinearModel":
        return cls(np.zeros((feature_dim, num_atoms)), np.zeros(num_atoms), l2_decay)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias


@dataclass
class TrainResult:
    model: LinearModel
    loss_curve: list[float]
    gradcheck_residuals: list[float] = field(default_factory=list)


def _indicator_rows(space_matrix: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # (batch, A) one row per sample: 1 on the atoms of the sample's label group
    return space_matrix.T[labels]


def train(
    model: LinearModel,
    data: dict[str, DatasetSamples],
    taxonomy: AtomTaxonomy,
    lr: float,
    steps: int,
    batch_ratio: dict[str, int],
    momentum: float = 0.9,
    gradcheck_every: int = 100,
) -> TrainResult:
    """SGD on the group-sum cross-entropy with the exact atom gradient.

    Each step draws exactly ``batch_ratio[name]`` samples from every
    dataset, cycling through each dataset independently. The analytic
    gradient is spot-checked against central differences every
    ``gradcheck_every`` steps.
    """
    if lr < 0:
        raise ValidationError("learning rate must be >= 0")
    num_atoms = taxonomy.num_atoms
    memberships = {
        name: taxonomy.label_space(name).membership_matrix(num_atoms) for name in data
    }
    cursors = {name: 0 for name in data}
    vel_w = np.zeros_like(model.weights)
    vel_b = np.zeros_like(model.bias)
    loss_curve: list[float] = []
    residuals: list[float] = []

    for step in range(steps):
        feats = []
        indicators = []
        for name in sorted(batch_ratio):
            take = batch_ratio[name]
            samples = data[name]
            count = samples.features.shape[0]
            idx = (cursors[name] + np.arange(take)) % count
            cursors[name] = (cursors[name] + take) % count
            feats.append(samples.features[idx])
            indicators.append(_indicator_rows(memberships[name], samples.labels[idx]))
        x = np.concatenate(feats)
        indicator = np.concatenate(indicators)
        batch = x.shape[0]

        sigma = softmax(model.logits(x))
        group_mass = np.maximum((sigma * indicator).sum(axis=1), 1e-300)
        loss = float(-np.mean(np.log(group_mass)))
        if not np.isfinite(loss):
            raise NumericError(f"training diverged at step {step}: loss is not finite")
        loss_curve.append(loss)

        # exact gradient of -log(group mass): the pull spreads over the
        # group atoms by their within-group probability (onehot when singleton)
        target = indicator * sigma / group_mass[:, None]
        grad_logits = (sigma - target) / batch
        grad_w = x.T @ grad_logits + model.l2_decay * model.weights
        grad_b = grad_logits.sum(axis=0)

        if gradcheck_every and step % gradcheck_every == 0:
            lam = model.logits(x[:1]).ravel()
            group = tuple(np.flatnonzero(indicator[0]))
            residuals.append(finite_diff_check(lam, group, 1e-5))

        vel_w = momentum * vel_w - lr * grad_w
        vel_b = momentum * vel_b - lr * grad_b
        model.weights = model.weights + vel_w
        model.bias = model.bias + vel_b

    return TrainResult(model, loss_curve, residuals)


def train_flat_reference(
    model: LinearModel,
    features: np.ndarray,
    labels: np.ndarray,
    lr: float,
    steps: int,
    batch_size: int,
    momentum: float = 0.9,
) -> TrainResult:
    """Plain multinomial logistic regression (one-hot gradient), used as
    the degeneracy reference for singleton-group taxonomies."""
    num_classes = model.bias.shape[0]
    vel_w = np.zeros_like(model.weights)
    vel_b = np.zeros_like(model.bias)
    cursor = 0
    loss_curve = []
    count = features.shape[0]
    for _ in range(steps):
        idx = (cursor + np.arange(batch_size)) % count
        cursor = (cursor + batch_size) % count
        x = features[idx]
        y = labels[idx]
        onehot = np.eye(num_classes)[y]
        sigma = softmax(model.logits(x))
        picked = (sigma * onehot).sum(axis=1)
        loss_curve.append(float(-np.mean(np.log(np.maximum(picked, 1e-300)))))
        grad_logits = (sigma - onehot) / batch_size
        grad_w = x.T @ grad_logits + model.l2_decay * model.weights
        grad_b = grad_logits.sum(axis=0)
        vel_w = momentum * vel_w - lr * grad_w
        vel_b = momentum * vel_b - lr * grad_b
        model.weights = model.weights + vel_w
        model.bias = model.bias + vel_b
    return TrainResult(model, loss_curve)


@dataclass(frozen=True)
class EvalResult:
    atom_accuracy: float
    label_accuracy: dict[str, float]
    knowledgeability: float
    per_atom_iou: IouTable


def evaluate(
    model: LinearModel,
    heldout: DatasetSamples,
    taxonomy: AtomTaxonomy,
    budget: int | None = None,
) -> EvalResult:
    """Atom accuracy, per-dataset label accuracy after group-sum
    projection, and Knowledgeability over atom-level IoUs."""
    sigma = softmax(model.logits(heldout.features))
    predicted = np.argmax(sigma, axis=1)
    atom_acc = float(np.mean(predicted == heldout.atoms))

    label_acc = {}
    for name in taxonomy.datasets:
        space = taxonomy.label_space(name)
        s = group_sum(sigma, space)
        pred_labels = np.argmax(s, axis=1)
        lut = taxonomy.atom_to_label(name)
        label_acc[name] = float(np.mean(pred_labels == lut[heldout.atoms]))

    num_atoms = taxonomy.num_atoms
    counts = np.zeros((num_atoms, num_atoms), dtype=np.int64)
    np.add.at(counts, (heldout.atoms, predicted), 1)
    cm = ConfusionMatrix(counts)
    tp = np.diag(cm.counts).astype(np.float64)
    gt_tot = cm.counts.sum(axis=1)
    pr_tot = cm.counts.sum(axis=0)
    union = gt_tot + pr_tot - tp
    valid = (gt_tot + pr_tot) > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(valid & (union > 0), tp / np.where(union > 0, union, 1), 0.0)
    table = IouTable(iou, valid)
    k = knowledgeability(table, budget if budget is not None else num_atoms)
    return EvalResult(atom_acc, label_acc, k, table)


# ---------------------------------------------------------------------------
# Scenario files


def load_scenario(path) -> tuple[SyntheticScenario, dict]:
    """Parse a scenario JSON file; returns the scenario and the trainer
    options (lr, steps, momentum, l2_decay) it carries."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"scenario file {path}: {exc}") from exc
    try:
        taxonomy = taxonomy_from_dict(obj["taxonomy"])
        feature_dim = int(obj["feature_dim"])
        blob_std = float(obj["blob_std"])
        samples = {str(k): int(v) for k, v in obj["samples"].items()}
        batch_ratio = {str(k): int(v) for k, v in obj["batch_ratio"].items()}
        seed = int(obj["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"scenario file {path}: {exc}") from exc
    if "blob_means" in obj:
        means = np.array(obj["blob_means"], dtype=np.float64)
    else:
        means = default_blob_means(taxonomy.num_atoms, feature_dim)
    scenario = SyntheticScenario(
        taxonomy,
        feature_dim,
        means,
        blob_std,
        samples,
        batch_ratio,
        seed,
        heldout=int(obj.get("heldout", 500)),
    )
    options = {
        "lr": float(obj.get("lr", 0.05)),
        "steps": int(obj.get("steps", 500)),
        "momentum": float(obj.get("momentum", 0.9)),
        "l2_decay": float(obj.get("l2_decay", 0.0)),
        "knowledgeability_budget": obj.get("knowledgeability_budget"),
    }
    return scenario, options


def run_scenario(scenario: SyntheticScenario, options: dict) -> dict:
    """Generate, train, evaluate; returns a JSON-ready report."""
    data = generate(scenario)
    heldout = generate_heldout(scenario)
    model = LinearModel.zeros(
        scenario.feature_dim, scenario.taxonomy.num_atoms, options.get("l2_decay", 0.0)
    )
    result = train(
        model,
        data,
        scenario.taxonomy,
        lr=options.get("lr", 0.05),
        steps=options.get("steps", 500),
        batch_ratio=scenario.batch_ratio,
        momentum=options.get("momentum", 0.9),
    )
    budget = options.get("knowledgeability_budget")
    scores = evaluate(result.model, heldout, scenario.taxonomy, budget)
    return {
        "loss_curve": [float(v) for v in result.loss_curve],
        "gradcheck_residuals": [float(v) for v in result.gradcheck_residuals],
        "atom_accuracy": scores.atom_accuracy,
        "label_accuracy": scores.label_accuracy,
        "knowledgeability": scores.knowledgeability,
    }
