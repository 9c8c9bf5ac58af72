"""Bit-exact raster codecs and confusion-matrix accumulation.

Three carriers:

* class rasters   -> binary PGM (P5), canonical header ``P5 <w> <h> 65535\\n``,
  big-endian 16-bit samples;
* uid rasters     -> UIR1: ``UIR1\\n<w> <h>\\n`` + little-endian uint32 words
  (PGM cannot carry 7-digit uids, maxval caps at 65535);
* prob rasters    -> PRB1: ``PRB1\\n<w> <h> <c>\\n`` + little-endian float64,
  channel-fastest.

write(read(f)) is byte-identical for canonical files; read(write(r))
returns an equal raster for every valid raster.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .panoptic_uid import MAX_UID

PROB_TOL = 1e-9

__all__ = [
    "ClassRaster",
    "UidRaster",
    "ProbRaster",
    "ConfusionMatrix",
    "NormalizationWarning",
    "read_pgm16",
    "write_pgm16",
    "read_uir32",
    "write_uir32",
    "read_prb",
    "write_prb",
    "read_any",
    "confusion_matrix",
]


class NormalizationWarning(UserWarning):
    """A probability raster read from disk violates per-pixel normalization."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClassRaster:
    """Row-major 16-bit class-id grid, shape (height, width)."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint16).reshape(self.height, self.width)
        object.__setattr__(self, "data", _frozen(data))

    def __eq__(self, other):
        return (
            isinstance(other, ClassRaster)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class UidRaster:
    """Row-major 32-bit uid grid; every value must stay within the uid grammar."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint32).reshape(self.height, self.width)
        if data.size and data.max(initial=0) > MAX_UID:
            raise ValidationError(f"uid raster contains value above {MAX_UID}")
        object.__setattr__(self, "data", _frozen(data))

    def __eq__(self, other):
        return (
            isinstance(other, UidRaster)
            and self.width == other.width
            and self.height == other.height
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class ProbRaster:
    """Per-pixel categorical distributions, shape (height, width, channels).

    Constructed rasters must be normalized (sum 1 within 1e-9, all
    channels >= 0); rasters read from disk may carry normalization
    warnings instead (see read_prb).
    """

    width: int
    height: int
    channels: int
    data: np.ndarray
    load_warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(
            self.height, self.width, self.channels
        )
        object.__setattr__(self, "data", _frozen(data))
        if not self.load_warnings:
            _check_normalization(data, raise_on_error=True)

    def __eq__(self, other):
        return (
            isinstance(other, ProbRaster)
            and self.width == other.width
            and self.height == other.height
            and self.channels == other.channels
            and np.array_equal(self.data, other.data)
        )


def _check_normalization(data: np.ndarray, raise_on_error: bool) -> list[str]:
    problems = []
    if data.size:
        if data.min() < 0:
            problems.append("negative channel value")
        dev = np.abs(data.sum(axis=2) - 1.0)
        worst = float(dev.max(initial=0.0))
        if worst > PROB_TOL:
            problems.append(
                f"per-pixel sum off by up to {worst:.3e} on {int((dev > PROB_TOL).sum())} pixel(s)"
            )
    if problems and raise_on_error:
        raise ValidationError("probability raster not normalized: " + "; ".join(problems))
    return problems


# ---------------------------------------------------------------------------
# PGM16


def _read_pgm_tokens(buf: io.BufferedReader, n: int) -> list[int]:
    # whitespace-separated ASCII tokens, '#' comments to end of line
    tokens: list[int] = []
    current = b""
    while len(tokens) < n:
        ch = buf.read(1)
        if not ch:
            raise FormatError("pgm: header truncated")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = buf.read(1)
            ch = b" "
        if ch.isspace():
            if current:
                try:
                    tokens.append(int(current))
                except ValueError:
                    raise FormatError(f"pgm: non-numeric header token {current!r}") from None
                current = b""
        else:
            current += ch
    return tokens


def read_pgm16(path) -> ClassRaster:
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P5":
            raise FormatError(f"pgm: bad magic {magic!r}, expected P5")
        width, height, maxval = _read_pgm_tokens(fh, 3)
        if maxval > 65535:
            raise FormatError(f"pgm: maxval {maxval} above 65535")
        if maxval <= 0:
            raise FormatError(f"pgm: maxval {maxval} not positive")
        if width < 0 or height < 0:
            raise FormatError("pgm: negative dimensions")
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        payload = fh.read(width * height * dtype.itemsize + 1)
    if len(payload) < width * height * dtype.itemsize:
        raise FormatError("pgm: truncated payload")
    if len(payload) > width * height * dtype.itemsize:
        raise FormatError("pgm: trailing bytes after payload")
    data = np.frombuffer(payload, dtype=dtype).astype(np.uint16)
    return ClassRaster(width, height, data.reshape(height, width))


def write_pgm16(raster: ClassRaster, path) -> None:
    header = f"P5 {raster.width} {raster.height} 65535\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raster.data.astype(">u2").tobytes())


# ---------------------------------------------------------------------------
# UIR1 / PRB1


def _read_dims_line(fh, count: int, what: str) -> list[int]:
    line = fh.readline(256)
    parts = line.split()
    if len(parts) != count:
        raise FormatError(f"{what}: bad dimension line {line!r}")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise FormatError(f"{what}: non-numeric dimensions {line!r}") from None
    if any(d < 0 for d in dims):
        raise FormatError(f"{what}: negative dimensions")
    return dims


def read_uir32(path) -> UidRaster:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != b"UIR1\n":
            raise FormatError(f"uir: bad magic {magic!r}")
        width, height = _read_dims_line(fh, 2, "uir")
        payload = fh.read(width * height * 4 + 1)
    if len(payload) < width * height * 4:
        raise FormatError("uir: truncated payload")
    if len(payload) > width * height * 4:
        raise FormatError("uir: trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<u4")
    return UidRaster(width, height, data.reshape(height, width))


def write_uir32(raster: UidRaster, path) -> None:
    # constructor guarantees values <= MAX_UID
    with open(path, "wb") as fh:
        fh.write(b"UIR1\n")
        fh.write(f"{raster.width} {raster.height}\n".encode("ascii"))
        fh.write(raster.data.astype("<u4").tobytes())


def read_prb(path) -> ProbRaster:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != b"PRB1\n":
            raise FormatError(f"prb: bad magic {magic!r}")
        width, height, channels = _read_dims_line(fh, 3, "prb")
        payload = fh.read(width * height * channels * 8 + 1)
    if len(payload) < width * height * channels * 8:
        raise FormatError("prb: truncated payload")
    if len(payload) > width * height * channels * 8:
        raise FormatError("prb: trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f8").reshape(height, width, channels)
    problems = _check_normalization(data, raise_on_error=False)
    for problem in problems:
        warnings.warn(f"{path}: {problem}", NormalizationWarning, stacklevel=2)
    return ProbRaster(width, height, channels, data, load_warnings=tuple(problems))


def write_prb(raster: ProbRaster, path) -> None:
    _check_normalization(raster.data, raise_on_error=True)
    with open(path, "wb") as fh:
        fh.write(b"PRB1\n")
        fh.write(f"{raster.width} {raster.height} {raster.channels}\n".encode("ascii"))
        fh.write(raster.data.astype("<f8").tobytes())


def read_any(path):
    """Dispatch on magic bytes; returns (kind, raster)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
    if magic[:2] == b"P5":
        return "pgm16", read_pgm16(path)
    if magic == b"UIR1\n":
        return "uir32", read_uir32(path)
    if magic == b"PRB1\n":
        return "prb", read_prb(path)
    raise FormatError(f"unrecognized raster magic {magic!r}")


# ---------------------------------------------------------------------------
# Confusion matrices


@dataclass(frozen=True)
class ConfusionMatrix:
    """L x L counts; rows are ground truth, columns prediction."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValidationError("confusion matrix must be square")
        if counts.size and counts.min() < 0:
            raise ValidationError("confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.num_classes != other.num_classes:
            raise ValidationError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion_matrix(
    gt: ClassRaster, pred: ClassRaster, num_classes: int, ignore: set[int] = frozenset()
) -> ConfusionMatrix:
    """Accumulate per-pixel (gt, pred) counts, skipping ignored gt labels.

    Ground-truth pixels whose label is in ``ignore`` are excluded;
    predicted ignore labels on evaluated pixels count as errors.
    """
    if (gt.width, gt.height) != (pred.width, pred.height):
        raise ValidationError(
            f"dimension mismatch: gt {gt.width}x{gt.height} vs pred {pred.width}x{pred.height}"
        )
    g = gt.data.ravel().astype(np.int64)
    p = pred.data.ravel().astype(np.int64)
    if g.size and (g.max() >= num_classes or p.max() >= num_classes):
        raise ValidationError(f"class id >= {num_classes}")
    keep = np.ones_like(g, dtype=bool)
    for label in ignore:
        keep &= g != label
    flat = g[keep] * num_classes + p[keep]
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))
