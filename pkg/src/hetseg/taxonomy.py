"""Unified semantic-atom taxonomy over multiple dataset label spaces.

Atoms are the finest semantic primitives; every dataset class is the
union of a group of atoms and the groups of one dataset partition the
full atom set. Atom 0 is reserved for "void" and belongs to every
dataset's label-0 group; atoms a dataset does not cover must be placed
in its void group explicitly.

File format (UTF-8 JSON):

    {"atoms": ["void", ...],
     "datasets": {"name": {"labels": [...], "groups": [[0], [1, 2], ...]}},
     "hierarchy": {"name": ..., "classes": [...], "children": {...}}}   # optional
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError

__all__ = [
    "LabelSpace",
    "HierarchyNode",
    "AtomTaxonomy",
    "ValidationReport",
    "load_taxonomy",
    "taxonomy_from_dict",
    "validate_atom_properties",
    "label_of_atom",
]


@dataclass(frozen=True)
class LabelSpace:
    """A dataset's ordered labels plus the atom group of each label."""

    labels: tuple[str, ...]
    groups: tuple[tuple[int, ...], ...]

    def group_of(self, label_id: int) -> tuple[int, ...]:
        return self.groups[label_id]

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    def membership_matrix(self, num_atoms: int) -> np.ndarray:
        """(A, L) 0/1 matrix mapping atom probabilities onto label sums."""
        m = np.zeros((num_atoms, len(self.labels)), dtype=np.float64)
        for label_id, group in enumerate(self.groups):
            m[list(group), label_id] = 1.0
        return m


@dataclass(frozen=True)
class HierarchyNode:
    """One classifier node: its class names and per-class child classifiers."""

    name: str
    classes: tuple[str, ...]
    children: dict[str, "HierarchyNode"] = field(default_factory=dict)

    def walk(self):
        yield self
        for child in self.children.values():
            yield from child.walk()

    def final_labels(self) -> list[str]:
        """Leaf-resolved class names in depth-first order."""
        out: list[str] = []
        for cls in self.classes:
            child = self.children.get(cls)
            if child is None:
                out.append(cls)
            else:
                out.extend(child.final_labels())
        return out


@dataclass(frozen=True)
class AtomTaxonomy:
    """Immutable after load; safe for concurrent reads."""

    atoms: tuple[str, ...]
    datasets: dict[str, LabelSpace]
    hierarchy: HierarchyNode | None = None

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def label_space(self, dataset: str) -> LabelSpace:
        try:
            return self.datasets[dataset]
        except KeyError:
            raise ValidationError(f"unknown dataset {dataset!r}") from None

    def atom_to_label(self, dataset: str) -> np.ndarray:
        """Dense atom-id -> label-id lookup for one dataset."""
        space = self.label_space(dataset)
        lut = np.full(self.num_atoms, -1, dtype=np.int64)
        for label_id, group in enumerate(space.groups):
            for atom in group:
                lut[atom] = label_id
        return lut


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _check_partition(name: str, space: LabelSpace, num_atoms: int) -> None:
    if len(space.groups) != len(space.labels):
        raise ValidationError(
            f"dataset {name!r}: {len(space.labels)} labels but {len(space.groups)} groups"
        )
    seen: dict[int, int] = {}
    for label_id, group in enumerate(space.groups):
        for atom in group:
            if not 0 <= atom < num_atoms:
                raise ValidationError(f"dataset {name!r}: atom id {atom} out of range")
            if atom in seen:
                raise ValidationError(
                    f"dataset {name!r}: partition violation, atom {atom} in groups "
                    f"of labels {seen[atom]} and {label_id}"
                )
            seen[atom] = label_id
    missing = sorted(set(range(num_atoms)) - set(seen))
    if missing:
        raise ValidationError(
            f"dataset {name!r}: partition violation, atom {missing[0]} missing from all groups"
        )
    if 0 not in space.groups[0]:
        raise ValidationError(f"dataset {name!r}: void atom 0 must belong to label 0's group")


def _parse_hierarchy(obj: dict, path: str = "hierarchy") -> HierarchyNode:
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: node must be an object")
    name = obj.get("name")
    classes = obj.get("classes")
    if not isinstance(name, str) or not name:
        raise ValidationError(f"{path}: missing node name")
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise ValidationError(f"{path}: classes must be a list of strings")
    if len(set(classes)) != len(classes):
        raise ValidationError(f"{path}: duplicate class names within node {name!r}")
    children = {}
    for key, sub in obj.get("children", {}).items():
        if key not in classes:
            raise ValidationError(f"{path}: child key {key!r} not among classes of {name!r}")
        children[key] = _parse_hierarchy(sub, f"{path}.{key}")
    return HierarchyNode(name, tuple(classes), children)


def _check_hierarchy(tax: AtomTaxonomy) -> None:
    assert tax.hierarchy is not None
    occurrences: dict[str, int] = {}
    for node in tax.hierarchy.walk():
        for cls in node.classes:
            occurrences[cls] = occurrences.get(cls, 0) + 1
    # void (label 0) is an artifact convention, not a hierarchy class
    for name, space in tax.datasets.items():
        for label in space.labels[1:]:
            n = occurrences.get(label, 0)
            if n != 1:
                raise ValidationError(
                    f"dataset {name!r}: label {label!r} appears on {n} root-to-leaf "
                    "paths of the hierarchy, expected exactly 1"
                )


def taxonomy_from_dict(obj: dict) -> AtomTaxonomy:
    """Build and validate a taxonomy from parsed JSON."""
    if not isinstance(obj, dict):
        raise ValidationError("taxonomy file must contain a JSON object")
    atoms = obj.get("atoms")
    if not isinstance(atoms, list) or not all(isinstance(a, str) and a for a in atoms):
        raise ValidationError("atoms must be a list of non-empty strings")
    if len(set(atoms)) != len(atoms):
        raise ValidationError("atom names must be unique")
    if not atoms or atoms[0] != "void":
        raise ValidationError('atom 0 must be named "void"')
    datasets_obj = obj.get("datasets")
    if not isinstance(datasets_obj, dict) or not datasets_obj:
        raise ValidationError("at least one dataset is required")
    datasets: dict[str, LabelSpace] = {}
    for name, entry in datasets_obj.items():
        labels = entry.get("labels") if isinstance(entry, dict) else None
        groups = entry.get("groups") if isinstance(entry, dict) else None
        if not isinstance(labels, list) or not all(isinstance(l, str) and l for l in labels):
            raise ValidationError(f"dataset {name!r}: labels must be non-empty strings")
        if len(set(labels)) != len(labels):
            raise ValidationError(f"dataset {name!r}: label names must be unique")
        if not isinstance(groups, list) or not all(isinstance(g, list) for g in groups):
            raise ValidationError(f"dataset {name!r}: groups must be a list of lists")
        space = LabelSpace(tuple(labels), tuple(tuple(int(a) for a in g) for g in groups))
        _check_partition(name, space, len(atoms))
        datasets[name] = space
    hierarchy = None
    if obj.get("hierarchy") is not None:
        hierarchy = _parse_hierarchy(obj["hierarchy"])
    tax = AtomTaxonomy(tuple(atoms), datasets, hierarchy)
    if hierarchy is not None:
        _check_hierarchy(tax)
    return tax


def load_taxonomy(path) -> AtomTaxonomy:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"taxonomy file {path}: {exc}") from exc
    return taxonomy_from_dict(obj)


def validate_atom_properties(tax: AtomTaxonomy) -> ValidationReport:
    """Report partition / is-a / has-a status per dataset.

    A loaded taxonomy already satisfies the hard invariants, but the
    report is also usable on hand-built instances and carries warnings
    (e.g. an atom that is void in one dataset and meaningful in another).
    """
    report = ValidationReport()
    num_atoms = tax.num_atoms
    for name, space in tax.datasets.items():
        seen: dict[int, int] = {}
        for label_id, group in enumerate(space.groups):
            if not group:
                report.violations.append(
                    f"dataset {name!r}: label {label_id} ({space.labels[label_id]!r}) "
                    "has an empty group (has-a violated)"
                )
            for atom in group:
                if atom in seen:
                    report.violations.append(
                        f"dataset {name!r}: atom {atom} in groups of labels "
                        f"{seen[atom]} and {label_id} (is-a violated)"
                    )
                else:
                    seen[atom] = label_id
        missing = sorted(set(range(num_atoms)) - set(seen))
        if missing:
            report.violations.append(
                f"dataset {name!r}: atoms {missing} missing from all groups (partition incomplete)"
            )
    # cross-dataset warning: atom void in one dataset, meaningful in another
    for atom in range(1, num_atoms):
        void_in = [n for n, s in tax.datasets.items() if len(s.groups) > 0 and atom in s.groups[0]]
        meaningful_in = [
            n
            for n, s in tax.datasets.items()
            if any(atom in g for g in s.groups[1:])
        ]
        if void_in and meaningful_in:
            report.warnings.append(
                f"atom {atom} ({tax.atoms[atom]!r}) is void in {void_in} "
                f"but meaningful in {meaningful_in}"
            )
    return report


def label_of_atom(tax: AtomTaxonomy, dataset: str, atom: int) -> int:
    """The unique label whose group contains ``atom`` (total by partition)."""
    space = tax.label_space(dataset)
    if not 0 <= atom < tax.num_atoms:
        raise ValidationError(f"atom id {atom} out of range 0..{tax.num_atoms - 1}")
    for label_id, group in enumerate(space.groups):
        if atom in group:
            return label_id
    raise ValidationError(f"atom {atom} not covered by dataset {dataset!r}")
