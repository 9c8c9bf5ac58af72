"""Hierarchical 7-digit uid codec for panoptic-parts label rasters.

A uid packs up to three levels into one integer:

    sid                      semantic level only            (0..99)
    sid*10**3 + iid          semantic + instance            (1_000..99_999)
    sid*10**5 + iid*10**2 + pid   semantic + instance + part  (100_000..9_999_999)

Semantic ids occupy two digits, instance ids three, part ids two. A part
id is only meaningful on top of an instance id. Semantic id 0 cannot
carry instance or part digits: the resulting values would collide with
the plain 1-level range, so such combinations are rejected on encode and
flagged by the validator on decode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MAX_UID = 9_999_999

__all__ = [
    "MAX_UID",
    "Uid",
    "PpsSpec",
    "UidValidationReport",
    "encode",
    "decode",
    "encode_array",
    "decode_arrays",
    "project",
    "validate_raster",
]


@dataclass(frozen=True)
class Uid:
    """Decoded uid triple; absent levels are None."""

    semantic: int
    instance: int | None = None
    part: int | None = None

    def __post_init__(self):
        if not 0 <= self.semantic <= 99:
            raise ValidationError(f"semantic id {self.semantic} outside 0..99")
        if self.instance is not None and not 0 <= self.instance <= 999:
            raise ValidationError(f"instance id {self.instance} outside 0..999")
        if self.part is not None:
            if self.instance is None:
                raise ValidationError("part id requires an instance id")
            if not 0 <= self.part <= 99:
                raise ValidationError(f"part id {self.part} outside 0..99")


def encode(semantic: int, instance: int | None = None, part: int | None = None) -> int:
    """Pack a (semantic, instance, part) triple into a single uid integer."""
    uid = Uid(semantic, instance, part)
    if uid.instance is not None and uid.semantic == 0:
        raise ValidationError(
            "semantic id 0 cannot carry instance or part digits "
            "(encoded value would collide with the 1-level range)"
        )
    if uid.part is not None:
        return uid.semantic * 10**5 + uid.instance * 10**2 + uid.part
    if uid.instance is not None:
        return uid.semantic * 10**3 + uid.instance
    return uid.semantic


def decode(value: int) -> Uid:
    """Unpack a uid integer into its levels.

    Total on 0..9_999_999; the level is determined by magnitude
    (<=99 one level, <=99_999 two levels, else three).
    """
    if not 0 <= value <= MAX_UID:
        raise ValidationError(f"uid {value} outside 0..{MAX_UID}")
    if value <= 99:
        return Uid(value)
    if value <= 99_999:
        return Uid(value // 10**3, value % 10**3)
    return Uid(value // 10**5, value // 10**2 % 10**3, value % 10**2)


def encode_array(
    semantic: np.ndarray, instance: np.ndarray, part: np.ndarray
) -> np.ndarray:
    """Vectorized encode; instance/part use -1 for "absent"."""
    semantic = np.asarray(semantic, dtype=np.int64)
    instance = np.asarray(instance, dtype=np.int64)
    part = np.asarray(part, dtype=np.int64)
    if np.any((part >= 0) & (instance < 0)):
        raise ValidationError("part id requires an instance id")
    if np.any((instance >= 0) & (semantic == 0)):
        raise ValidationError("semantic id 0 cannot carry instance or part digits")
    for name, arr, hi in (("semantic", semantic, 99), ("instance", instance, 999), ("part", part, 99)):
        if np.any(arr > hi) or (name == "semantic" and np.any(arr < 0)):
            raise ValidationError(f"{name} id outside range")
    out = np.where(
        part >= 0,
        semantic * 10**5 + instance * 10**2 + part,
        np.where(instance >= 0, semantic * 10**3 + instance, semantic),
    )
    return out.astype(np.uint32)


def decode_arrays(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized decode into (sid, iid, pid) int64 arrays, -1 for absent."""
    v = np.asarray(values, dtype=np.int64)
    if np.any(v < 0) or np.any(v > MAX_UID):
        raise ValidationError(f"uid value outside 0..{MAX_UID}")
    three = v > 99_999
    two = (v > 99) & ~three
    sid = np.where(three, v // 10**5, np.where(two, v // 10**3, v))
    iid = np.where(three, v // 10**2 % 10**3, np.where(two, v % 10**3, -1))
    pid = np.where(three, v % 10**2, -1)
    return sid, iid, pid


def project(raster, level: str):
    """Project a UidRaster to a coarser task encoding.

    level="panoptic" strips part digits (stays a UidRaster),
    level="semantic" keeps semantic ids only (ClassRaster),
    level="parts" emits part ids, 0 where absent (ClassRaster).
    """
    from .raster_io import ClassRaster, UidRaster

    sid, iid, pid = decode_arrays(raster.data)
    if level == "panoptic":
        values = np.where(iid >= 0, sid * 10**3 + iid, sid)
        return UidRaster(raster.width, raster.height, values.astype(np.uint32))
    if level == "semantic":
        return ClassRaster(raster.width, raster.height, sid.astype(np.uint16))
    if level == "parts":
        return ClassRaster(
            raster.width, raster.height, np.maximum(pid, 0).astype(np.uint16)
        )
    raise ValidationError(f"unknown projection level {level!r}")


@dataclass(frozen=True)
class PpsSpec:
    """Scene/part class declaration for uid validation and PartPQ.

    ``parts`` maps a scene class id to its number of part classes
    including the void part at pid 0 (valid pids are 0..count-1).
    """

    stuff: frozenset[int]
    things: frozenset[int]
    parts: dict[int, int]

    @classmethod
    def from_dict(cls, obj: dict) -> "PpsSpec":
        try:
            stuff = frozenset(int(x) for x in obj["stuff"])
            things = frozenset(int(x) for x in obj["things"])
            parts = {int(k): int(v) for k, v in obj.get("parts", {}).items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad parts spec: {exc}") from exc
        if stuff & things:
            raise ValidationError("stuff and things class sets overlap")
        unknown = set(parts) - (stuff | things)
        if unknown:
            raise ValidationError(f"parts declared for undeclared classes {sorted(unknown)}")
        return cls(stuff, things, parts)


@dataclass
class UidValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_raster(raster, spec: PpsSpec) -> UidValidationReport:
    """Check every uid in the raster against the scene/part declaration.

    Report-based: never raises for content, only collects violations.
    """
    report = UidValidationReport()
    sid, iid, pid = decode_arrays(raster.data)
    declared = spec.stuff | spec.things | {0}

    def flag(mask: np.ndarray, message: str) -> None:
        if np.any(mask):
            first = int(np.flatnonzero(mask.ravel())[0])
            report.violations.append(f"{message} (first at pixel index {first}, count {int(mask.sum())})")

    undeclared = ~np.isin(sid, sorted(declared))
    flag(undeclared, "semantic id not declared as stuff or things")
    flag((sid == 0) & (iid >= 0), "semantic id 0 carries instance digits")
    stuff_mask = np.isin(sid, sorted(spec.stuff)) if spec.stuff else np.zeros_like(sid, bool)
    flag(stuff_mask & (iid >= 0), "instance digits on a stuff class")
    has_parts = np.isin(sid, sorted(spec.parts)) if spec.parts else np.zeros_like(sid, bool)
    flag(~has_parts & (pid >= 0), "part digits on a class without declared parts")
    for cls_id, count in sorted(spec.parts.items()):
        flag((sid == cls_id) & (pid >= count), f"part id >= declared part count {count} for class {cls_id}")
    return report
