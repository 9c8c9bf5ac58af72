import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetseg.errors import FormatError, ValidationError
from hetseg.raster_io import (
    ClassRaster,
    ConfusionMatrix,
    NormalizationWarning,
    ProbRaster,
    UidRaster,
    confusion_matrix,
    read_any,
    read_pgm16,
    read_prb,
    read_uir32,
    write_pgm16,
    write_prb,
    write_uir32,
)

dims = st.tuples(st.integers(0, 12), st.integers(0, 12))


class TestPgm16:
    def test_roundtrip_small(self, tmp_path):
        raster = ClassRaster(2, 1, np.array([[3, 7]], dtype=np.uint16))
        path = tmp_path / "r.pgm"
        write_pgm16(raster, path)
        assert read_pgm16(path) == raster

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "r.pgm"
        path.write_bytes(b"P6 1 1 255\n\x00")
        with pytest.raises(FormatError):
            read_pgm16(path)

    def test_empty_raster(self, tmp_path):
        raster = ClassRaster(0, 0, np.zeros((0, 0), dtype=np.uint16))
        path = tmp_path / "empty.pgm"
        write_pgm16(raster, path)
        assert read_pgm16(path) == raster

    def test_canonical_write_is_byte_stable(self, tmp_path):
        raster = ClassRaster(3, 2, np.arange(6, dtype=np.uint16).reshape(2, 3) * 999)
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_pgm16(raster, p1)
        write_pgm16(read_pgm16(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_reads_8bit_pgm(self, tmp_path):
        path = tmp_path / "8bit.pgm"
        path.write_bytes(b"P5\n# comment\n2 1\n255\n\x05\x09")
        raster = read_pgm16(path)
        assert raster.data.tolist() == [[5, 9]]

    def test_maxval_too_large(self, tmp_path):
        path = tmp_path / "big.pgm"
        path.write_bytes(b"P5 1 1 70000\n\x00\x00\x00")
        with pytest.raises(FormatError):
            read_pgm16(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5 2 2 65535\n\x00\x00")
        with pytest.raises(FormatError):
            read_pgm16(path)

    @settings(max_examples=200, deadline=None)
    @given(wh=dims, data=st.data())
    def test_roundtrip_property(self, tmp_path_factory, wh, data):
        w, h = wh
        values = data.draw(
            st.lists(st.integers(0, 65535), min_size=w * h, max_size=w * h)
        )
        raster = ClassRaster(w, h, np.array(values, dtype=np.uint16).reshape(h, w))
        path = tmp_path_factory.mktemp("pgm") / "r.pgm"
        write_pgm16(raster, path)
        assert read_pgm16(path) == raster


class TestUir32:
    def test_paper_value_roundtrips(self, tmp_path):
        raster = UidRaster(1, 1, np.array([[2401002]], dtype=np.uint32))
        path = tmp_path / "r.uir"
        write_uir32(raster, path)
        assert read_uir32(path) == raster

    def test_value_above_grammar_rejected(self):
        with pytest.raises(ValidationError):
            UidRaster(1, 1, np.array([[10_000_000]], dtype=np.uint32))

    def test_payload_length(self, tmp_path):
        raster = UidRaster(3, 2, np.arange(6, dtype=np.uint32).reshape(2, 3))
        path = tmp_path / "r.uir"
        write_uir32(raster, path)
        blob = path.read_bytes()
        header_end = blob.index(b"\n", 5) + 1
        assert blob[:5] == b"UIR1\n"
        assert len(blob) - header_end == 24

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "r.uir"
        path.write_bytes(b"UIRX\n1 1\n\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_uir32(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "r.uir"
        path.write_bytes(b"UIR1\n2 2\n\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_uir32(path)

    @settings(max_examples=150, deadline=None)
    @given(wh=dims, data=st.data())
    def test_roundtrip_property(self, tmp_path_factory, wh, data):
        w, h = wh
        values = data.draw(st.lists(st.integers(0, 9_999_999), min_size=w * h, max_size=w * h))
        raster = UidRaster(w, h, np.array(values, dtype=np.uint32).reshape(h, w))
        path = tmp_path_factory.mktemp("uir") / "r.uir"
        write_uir32(raster, path)
        assert read_uir32(path) == raster


class TestPrb:
    def test_roundtrip(self, tmp_path):
        raster = ProbRaster(1, 1, 2, np.array([[[0.25, 0.75]]]))
        path = tmp_path / "r.prb"
        write_prb(raster, path)
        assert read_prb(path) == raster

    def test_unnormalized_write_rejected(self):
        with pytest.raises(ValidationError):
            ProbRaster(1, 1, 2, np.array([[[0.6, 0.6]]]))

    def test_empty_roundtrip(self, tmp_path):
        raster = ProbRaster(0, 0, 3, np.zeros((0, 0, 3)))
        path = tmp_path / "r.prb"
        write_prb(raster, path)
        assert read_prb(path) == raster

    def test_unnormalized_read_warns_not_fatal(self, tmp_path):
        path = tmp_path / "bad.prb"
        payload = np.array([0.6, 0.6], dtype="<f8").tobytes()
        path.write_bytes(b"PRB1\n1 1 2\n" + payload)
        with pytest.warns(NormalizationWarning):
            raster = read_prb(path)
        assert raster.load_warnings

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.prb"
        path.write_bytes(b"PRBX\n1 1 1\n" + b"\x00" * 8)
        with pytest.raises(FormatError):
            read_prb(path)

    @settings(max_examples=150, deadline=None)
    @given(wh=dims, channels=st.integers(1, 5), data=st.data())
    def test_roundtrip_property(self, tmp_path_factory, wh, channels, data):
        w, h = wh
        raw = data.draw(
            st.lists(
                st.floats(0.01, 1.0, allow_nan=False), min_size=w * h * channels, max_size=w * h * channels
            )
        )
        arr = np.array(raw).reshape(h, w, channels)
        arr = arr / arr.sum(axis=2, keepdims=True) if arr.size else arr
        raster = ProbRaster(w, h, channels, arr)
        path = tmp_path_factory.mktemp("prb") / "r.prb"
        write_prb(raster, path)
        assert read_prb(path) == raster


def test_read_any_dispatch(tmp_path):
    write_pgm16(ClassRaster(1, 1, np.array([[1]], dtype=np.uint16)), tmp_path / "a.pgm")
    write_uir32(UidRaster(1, 1, np.array([[1]], dtype=np.uint32)), tmp_path / "a.uir")
    write_prb(ProbRaster(1, 1, 1, np.ones((1, 1, 1))), tmp_path / "a.prb")
    assert read_any(tmp_path / "a.pgm")[0] == "pgm16"
    assert read_any(tmp_path / "a.uir")[0] == "uir32"
    assert read_any(tmp_path / "a.prb")[0] == "prb"
    (tmp_path / "junk").write_bytes(b"JUNK!")
    with pytest.raises(FormatError):
        read_any(tmp_path / "junk")


class TestConfusionMatrix:
    def test_diagonal(self):
        gt = ClassRaster(2, 2, np.full((2, 2), 1, dtype=np.uint16))
        cm = confusion_matrix(gt, gt, 3)
        assert cm.counts[1, 1] == 4
        assert cm.total == 4

    def test_void_exclusion(self):
        gt = ClassRaster(2, 1, np.array([[0, 1]], dtype=np.uint16))
        pred = ClassRaster(2, 1, np.array([[1, 1]], dtype=np.uint16))
        cm = confusion_matrix(gt, pred, 2, ignore={0})
        assert cm.counts[1, 1] == 1
        assert cm.total == 1

    def test_off_diagonal(self):
        gt = ClassRaster(1, 1, np.array([[2]], dtype=np.uint16))
        pred = ClassRaster(1, 1, np.array([[1]], dtype=np.uint16))
        cm = confusion_matrix(gt, pred, 3)
        assert cm.counts[2, 1] == 1

    def test_dimension_mismatch(self):
        a = ClassRaster(1, 1, np.zeros((1, 1), dtype=np.uint16))
        b = ClassRaster(2, 1, np.zeros((1, 2), dtype=np.uint16))
        with pytest.raises(ValidationError):
            confusion_matrix(a, b, 2)

    def test_id_out_of_range(self):
        a = ClassRaster(1, 1, np.array([[5]], dtype=np.uint16))
        with pytest.raises(ValidationError):
            confusion_matrix(a, a, 3)

    def test_merge_matches_joint_accumulation(self):
        rng = np.random.default_rng(0)
        g1 = ClassRaster(4, 4, rng.integers(0, 5, (4, 4)).astype(np.uint16))
        p1 = ClassRaster(4, 4, rng.integers(0, 5, (4, 4)).astype(np.uint16))
        g2 = ClassRaster(4, 4, rng.integers(0, 5, (4, 4)).astype(np.uint16))
        p2 = ClassRaster(4, 4, rng.integers(0, 5, (4, 4)).astype(np.uint16))
        merged = confusion_matrix(g1, p1, 5) + confusion_matrix(g2, p2, 5)
        joint = confusion_matrix(
            ClassRaster(8, 4, np.hstack([g1.data, g2.data])),
            ClassRaster(8, 4, np.hstack([p1.data, p2.data])),
            5,
        )
        assert merged == joint

    @settings(max_examples=100, deadline=None)
    @given(w=st.integers(1, 8), h=st.integers(1, 8), num_classes=st.integers(1, 6), data=st.data())
    def test_total_plus_ignored_is_pixel_count(self, w, h, num_classes, data):
        gt_vals = data.draw(st.lists(st.integers(0, num_classes - 1), min_size=w * h, max_size=w * h))
        pr_vals = data.draw(st.lists(st.integers(0, num_classes - 1), min_size=w * h, max_size=w * h))
        gt = ClassRaster(w, h, np.array(gt_vals, dtype=np.uint16).reshape(h, w))
        pred = ClassRaster(w, h, np.array(pr_vals, dtype=np.uint16).reshape(h, w))
        cm = confusion_matrix(gt, pred, num_classes, ignore={0})
        ignored = int((gt.data == 0).sum())
        assert cm.total + ignored == w * h


def test_confusion_matrix_validation():
    with pytest.raises(ValidationError):
        ConfusionMatrix(np.array([[1, 2, 3]]))
    with pytest.raises(ValidationError):
        ConfusionMatrix(np.array([[1, -1], [0, 0]]))
