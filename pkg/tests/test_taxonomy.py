import json

import pytest

from hetseg.errors import FormatError, ValidationError
from hetseg.taxonomy import (
    AtomTaxonomy,
    LabelSpace,
    label_of_atom,
    load_taxonomy,
    taxonomy_from_dict,
    validate_atom_properties,
)


def write_tax(tmp_path, obj):
    path = tmp_path / "tax.json"
    path.write_text(json.dumps(obj))
    return path


MINIMAL = {
    "atoms": ["void", "road"],
    "datasets": {"d": {"labels": ["void", "road"], "groups": [[0], [1]]}},
}

COARSE = {
    "atoms": ["void", "bicyclist", "motorcyclist"],
    "datasets": {"d": {"labels": ["void", "rider"], "groups": [[0], [1, 2]]}},
}


class TestLoad:
    def test_minimal_identity_mapping(self, tmp_path):
        tax = load_taxonomy(write_tax(tmp_path, MINIMAL))
        assert tax.num_atoms == 2
        assert tax.datasets["d"].labels == ("void", "road")

    def test_duplicate_atom_in_groups(self, tmp_path):
        bad = {
            "atoms": ["void", "road"],
            "datasets": {"d": {"labels": ["void", "road"], "groups": [[0], [0, 1]]}},
        }
        with pytest.raises(ValidationError, match="atom 0"):
            load_taxonomy(write_tax(tmp_path, bad))

    def test_coarse_group_absorbs_two_atoms(self, tmp_path):
        tax = load_taxonomy(write_tax(tmp_path, COARSE))
        assert tax.datasets["d"].group_of(1) == (1, 2)

    def test_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(FormatError):
            load_taxonomy(path)

    def test_missing_atom_reports_first_offender(self, tmp_path):
        bad = {
            "atoms": ["void", "a", "b"],
            "datasets": {"d": {"labels": ["void", "a"], "groups": [[0], [1]]}},
        }
        with pytest.raises(ValidationError, match="atom 2"):
            load_taxonomy(write_tax(tmp_path, bad))

    def test_void_atom_must_sit_in_label_zero(self, tmp_path):
        bad = {
            "atoms": ["void", "a"],
            "datasets": {"d": {"labels": ["void", "a"], "groups": [[1], [0]]}},
        }
        with pytest.raises(ValidationError, match="void atom 0"):
            load_taxonomy(write_tax(tmp_path, bad))

    def test_atom_zero_must_be_void(self):
        with pytest.raises(ValidationError):
            taxonomy_from_dict({"atoms": ["road"], "datasets": MINIMAL["datasets"]})

    def test_needs_a_dataset(self):
        with pytest.raises(ValidationError):
            taxonomy_from_dict({"atoms": ["void"], "datasets": {}})


class TestValidateAtomProperties:
    def test_valid_taxonomy_is_clean(self):
        tax = taxonomy_from_dict(MINIMAL)
        assert validate_atom_properties(tax).ok

    def test_empty_group_is_hasa_violation(self):
        space = LabelSpace(("void", "a", "empty"), ((0,), (1,), ()))
        tax = AtomTaxonomy(("void", "a"), {"d": space})
        report = validate_atom_properties(tax)
        assert any("has-a" in v for v in report.violations)

    def test_uncovered_atom_is_partition_violation(self):
        space = LabelSpace(("void", "a"), ((0,), (1,)))
        tax = AtomTaxonomy(("void", "a", "b"), {"d": space})
        report = validate_atom_properties(tax)
        assert any("partition" in v for v in report.violations)

    def test_cross_dataset_void_warning(self):
        # atom 1 meaningful in d1 but relegated to void in d2: warn, allow
        tax = taxonomy_from_dict(
            {
                "atoms": ["void", "marking", "sky"],
                "datasets": {
                    "d1": {"labels": ["void", "marking", "sky"], "groups": [[0], [1], [2]]},
                    "d2": {"labels": ["void", "sky"], "groups": [[0, 1], [2]]},
                },
            }
        )
        report = validate_atom_properties(tax)
        assert report.ok
        assert any("void in" in w for w in report.warnings)


class TestLabelOfAtom:
    def test_coarse_lookup(self):
        tax = taxonomy_from_dict(COARSE)
        assert label_of_atom(tax, "d", 2) == 1

    def test_void_convention(self):
        tax = taxonomy_from_dict(COARSE)
        assert label_of_atom(tax, "d", 0) == 0

    def test_singleton_identity(self):
        tax = taxonomy_from_dict(MINIMAL)
        for atom in range(tax.num_atoms):
            assert label_of_atom(tax, "d", atom) == atom

    def test_unknown_dataset(self):
        tax = taxonomy_from_dict(MINIMAL)
        with pytest.raises(ValidationError):
            label_of_atom(tax, "nope", 0)

    def test_atom_out_of_range(self):
        tax = taxonomy_from_dict(MINIMAL)
        with pytest.raises(ValidationError):
            label_of_atom(tax, "d", 99)

    def test_roundtrip_over_all_groups(self):
        tax = taxonomy_from_dict(
            {
                "atoms": ["void", "a", "b", "c", "d"],
                "datasets": {
                    "fine": {"labels": ["void", "a", "b", "c", "d"], "groups": [[0], [1], [2], [3], [4]]},
                    "coarse": {"labels": ["void", "ab", "cd"], "groups": [[0], [1, 2], [3, 4]]},
                },
            }
        )
        for name, space in tax.datasets.items():
            for label_id, group in enumerate(space.groups):
                for atom in group:
                    assert label_of_atom(tax, name, atom) == label_id

    def test_partition_counts(self):
        tax = taxonomy_from_dict(COARSE)
        for space in tax.datasets.values():
            sizes = sum(len(g) for g in space.groups)
            assert sizes == tax.num_atoms
            covered = set()
            for g in space.groups:
                covered.update(g)
            assert covered == set(range(tax.num_atoms))


class TestHierarchy:
    BASE = {
        "atoms": ["void", "road", "bicyclist", "motorcyclist"],
        "datasets": {
            "d": {
                "labels": ["void", "road", "bicyclist", "motorcyclist"],
                "groups": [[0], [1], [2], [3]],
            }
        },
    }

    def good_hierarchy(self):
        return {
            "name": "root",
            "classes": ["road", "rider"],
            "children": {
                "rider": {"name": "rider", "classes": ["bicyclist", "motorcyclist"]}
            },
        }

    def test_valid_hierarchy_loads(self):
        obj = dict(self.BASE, hierarchy=self.good_hierarchy())
        tax = taxonomy_from_dict(obj)
        assert tax.hierarchy.final_labels() == ["road", "bicyclist", "motorcyclist"]

    def test_label_missing_from_hierarchy(self):
        hier = {"name": "root", "classes": ["road"]}
        with pytest.raises(ValidationError, match="0 root-to-leaf"):
            taxonomy_from_dict(dict(self.BASE, hierarchy=hier))

    def test_label_on_two_paths(self):
        hier = {
            "name": "root",
            "classes": ["road", "rider"],
            "children": {
                "rider": {
                    "name": "rider",
                    "classes": ["bicyclist", "motorcyclist", "road"],
                }
            },
        }
        with pytest.raises(ValidationError, match="2 root-to-leaf"):
            taxonomy_from_dict(dict(self.BASE, hierarchy=hier))

    def test_child_key_must_be_a_class(self):
        hier = {
            "name": "root",
            "classes": ["road"],
            "children": {"sky": {"name": "sky", "classes": ["x"]}},
        }
        with pytest.raises(ValidationError, match="child key"):
            taxonomy_from_dict(dict(self.BASE, hierarchy=hier))

    def test_duplicate_class_within_node(self):
        hier = {"name": "root", "classes": ["road", "road"]}
        with pytest.raises(ValidationError, match="duplicate"):
            taxonomy_from_dict(dict(self.BASE, hierarchy=hier))
