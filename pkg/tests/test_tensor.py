import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stfuse.errors import FormatError, InvalidValue, ShapeError
from stfuse.fio import read_fmap, read_image, write_fmap, write_image
from stfuse.tensor import FeatureVector, feature_map, l2_normalize


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-6)

    def test_zero_vector_unchanged(self):
        out = l2_normalize(np.zeros(3, np.float32))
        np.testing.assert_array_equal(out, np.zeros(3, np.float32))

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(42)
        v = rng.standard_normal(100).astype(np.float32)
        # oracle: explicit norm accumulation and per-element division
        acc = 0.0
        for x in v:
            acc += float(x) * float(x)
        expected = np.array([float(x) / np.sqrt(acc) for x in v])
        np.testing.assert_allclose(l2_normalize(v), expected, atol=1e-6)

    def test_unit_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.standard_normal(17)
            out = l2_normalize(v)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-5

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidValue):
            l2_normalize(np.array([1.0, np.nan]))
        with pytest.raises(InvalidValue):
            l2_normalize(np.array([np.inf, 0.0]))

    def test_preserves_feature_vector_provenance(self):
        fv = FeatureVector(np.array([1.0, 2.0]), "bilinear")
        out = l2_normalize(fv)
        assert isinstance(out, FeatureVector)
        assert out.provenance == "bilinear"

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.floats(0.01, 50))
    @settings(max_examples=50, deadline=None)
    def test_scale_invariant_and_idempotent(self, vals, alpha):
        v = np.asarray(vals, dtype=np.float32)
        n1 = l2_normalize(v)
        np.testing.assert_allclose(l2_normalize(alpha * v), n1, atol=1e-5)
        np.testing.assert_allclose(l2_normalize(n1), n1, atol=1e-6)


class TestFeatureMap:
    def test_shape_and_dtype(self):
        m = feature_map(np.ones((2, 3, 4)))
        assert m.shape == (2, 3, 4) and m.dtype == np.float32

    def test_rejects_non_finite(self):
        bad = np.ones((2, 2, 1))
        bad[0, 0, 0] = np.nan
        with pytest.raises(InvalidValue):
            feature_map(bad)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ShapeError):
            feature_map(np.ones((2, 2, 2, 2)))

    def test_read_only(self):
        m = feature_map(np.ones((2, 2, 1)))
        with pytest.raises(ValueError):
            m[0, 0, 0] = 5.0


class TestFmapFormat:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(7)
        m = feature_map(rng.standard_normal((2, 3, 4)).astype(np.float32))
        path = tmp_path / "m.fmap"
        write_fmap(m, path)
        back = read_fmap(path)
        assert back.shape == (2, 3, 4)
        assert np.array_equal(m.view(np.uint32), back.view(np.uint32))

    def test_round_trip_many_shapes(self, tmp_path):
        rng = np.random.default_rng(8)
        for shape in [(1, 1, 1), (5, 4, 2), (3, 7, 1), (1, 1, 16)]:
            m = feature_map(rng.standard_normal(shape).astype(np.float32))
            p = tmp_path / "x.fmap"
            write_fmap(m, p)
            assert np.array_equal(read_fmap(p), m)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.fmap"
        p.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FormatError):
            read_fmap(p)

    def test_truncated_payload(self, tmp_path):
        import struct

        p = tmp_path / "trunc.fmap"
        header = b"FMAP" + struct.pack("<4I", 1, 2, 2, 2)
        p.write_bytes(header + b"\x00" * (7 * 4))  # 7 floats, header says 8
        with pytest.raises(FormatError):
            read_fmap(p)

    def test_dimension_overflow(self, tmp_path):
        import struct

        p = tmp_path / "huge.fmap"
        p.write_bytes(b"FMAP" + struct.pack("<4I", 1, 0xFFFFFFF0, 0xFFFFFFF0, 3))
        with pytest.raises(FormatError):
            read_fmap(p)


class TestImageRead:
    def test_p5_scaling(self, tmp_path):
        p = tmp_path / "g.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        m = read_image(p)
        assert m.shape == (2, 2, 1)
        np.testing.assert_allclose(
            m[:, :, 0], [[0.0, 1.0], [128 / 255, 64 / 255]], atol=1e-7
        )

    def test_p6_channel_order(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 128, 0]))
        m = read_image(p)
        assert m.shape == (1, 1, 3)
        np.testing.assert_allclose(m[0, 0], [1.0, 128 / 255, 0.0], atol=1e-7)

    def test_ascii_variant_rejected(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P2\n2 2\n255\n0 255 128 64\n")
        with pytest.raises(FormatError):
            read_image(p)

    def test_wrong_maxval_rejected(self, tmp_path):
        p = tmp_path / "m.pgm"
        p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(FormatError):
            read_image(p)

    def test_truncated_raster(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
        with pytest.raises(FormatError):
            read_image(p)

    def test_comments_in_header(self, tmp_path):
        p = tmp_path / "c.pgm"
        p.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([10, 20]))
        m = read_image(p)
        assert m.shape == (1, 2, 1)

    def test_write_read_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = feature_map((rng.integers(0, 256, (5, 6, 3)) / 255.0).astype(np.float32))
        p = tmp_path / "rt.ppm"
        write_image(img, p)
        back = read_image(p)
        np.testing.assert_allclose(back, img, atol=1 / 510)  # half a quantisation step


class TestFeatureVector:
    def test_rejects_empty(self):
        with pytest.raises(InvalidValue):
            FeatureVector(np.array([]), "concat")

    def test_rejects_unknown_tag(self):
        with pytest.raises(InvalidValue):
            FeatureVector(np.ones(3), "mystery")

    def test_len(self):
        assert len(FeatureVector(np.ones(5), "fc6_spatial")) == 5
