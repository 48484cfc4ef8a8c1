import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import loop_cooccurrence_max
from stfuse.errors import InvalidValue, ProvenanceError, ShapeError
from stfuse.fusion import (
    CooccurrenceFeature,
    bilinear_cooccurrence,
    cooccurrence_raw,
    cooccurrence_with_fc6,
    early_fusion,
    late_fusion,
)
from stfuse.tensor import FeatureVector


def rand_maps(seed, h=2, w=2, d=3):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, (h, w, d)).astype(np.float32)
    t = rng.uniform(-1, 1, (h, w, d)).astype(np.float32)
    return s, t


class TestBilinearCooccurrence:
    def test_single_location_rank_one(self):
        s = np.array([[[1.0, 0.0]]], np.float32)
        t = np.array([[[0.0, 2.0]]], np.float32)
        raw = cooccurrence_raw(s, t)
        np.testing.assert_allclose(raw, [0.0, 2.0, 0.0, 0.0], atol=1e-6)
        feat = bilinear_cooccurrence(s, t)
        np.testing.assert_allclose(feat.data, [0.0, 1.0, 0.0, 0.0], atol=1e-6)

    def test_256_channels_gives_65536(self):
        rng = np.random.default_rng(0)
        s = rng.standard_normal((2, 2, 256)).astype(np.float32)
        t = rng.standard_normal((2, 2, 256)).astype(np.float32)
        feat = bilinear_cooccurrence(s, t)
        assert len(feat) == 65536

    def test_matches_brute_force_oracle(self):
        for seed in range(10):
            s, t = rand_maps(seed, 2, 2, 3)
            raw = cooccurrence_raw(s, t)
            oracle = loop_cooccurrence_max(s, t)
            np.testing.assert_allclose(raw, oracle, atol=1e-6)

    def test_vec_is_row_major(self):
        # element a*d + b must hold s[a] * t[b]
        s = np.array([[[2.0, 3.0]]], np.float32)
        t = np.array([[[5.0, 7.0]]], np.float32)
        raw = cooccurrence_raw(s, t)
        np.testing.assert_allclose(raw, [10.0, 14.0, 15.0, 21.0], atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cooccurrence_raw(np.zeros((2, 2, 3), np.float32), np.zeros((2, 2, 4), np.float32))

    def test_normalised_output(self):
        s, t = rand_maps(5, 3, 3, 4)
        feat = bilinear_cooccurrence(s, t)
        assert abs(np.linalg.norm(feat.data) - 1.0) < 1e-5
        assert feat.provenance == "bilinear"
        assert feat.source_layer == "c5"

    def test_zero_maps_give_zero_feature(self):
        z = np.zeros((2, 2, 3), np.float32)
        feat = bilinear_cooccurrence(z, z)
        assert np.all(feat.data == 0.0)

    def test_rank_one_minors_vanish(self):
        # each location's outer product has every 2x2 minor equal to zero
        rng = np.random.default_rng(6)
        s = rng.standard_normal(4)
        t = rng.standard_normal(4)
        p = np.outer(s, t)
        for i in range(3):
            for j in range(3):
                minor = p[i, j] * p[i + 1, j + 1] - p[i, j + 1] * p[i + 1, j]
                assert abs(minor) < 1e-5

    def test_scale_covariance(self):
        s, t = rand_maps(7)
        raw = cooccurrence_raw(s, t)
        alpha, beta = 2.5, 0.3
        raw_scaled = cooccurrence_raw(alpha * s, beta * t)
        np.testing.assert_allclose(raw_scaled, alpha * beta * raw, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(
            bilinear_cooccurrence(alpha * s, beta * t).data,
            bilinear_cooccurrence(s, t).data,
            atol=1e-5,
        )

    def test_swap_transposes(self):
        s, t = rand_maps(8, 2, 3, 4)
        a = cooccurrence_raw(s, t).reshape(4, 4)
        b = cooccurrence_raw(t, s).reshape(4, 4)
        assert np.array_equal(a, b.T)

    def test_pooling_dominance(self):
        # every pooled value is attained at some location
        s, t = rand_maps(9, 3, 2, 3)
        raw = cooccurrence_raw(s, t)
        per_loc = np.einsum("hwa,hwb->hwab", s, t).reshape(-1, 9)
        for k in range(9):
            assert np.any(per_loc[:, k] == raw[k])

    def test_sum_pooling_variant(self):
        s, t = rand_maps(10)
        raw = cooccurrence_raw(s, t, pooling="sum")
        want = np.einsum("hwa,hwb->ab", s.astype(np.float64), t.astype(np.float64)).reshape(-1)
        np.testing.assert_allclose(raw, want, atol=1e-5)

    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_oracle_equivalence_property(self, seed):
        rng = np.random.default_rng(seed)
        h, w, d = int(rng.integers(1, 5)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
        s = rng.uniform(-1, 1, (h, w, d)).astype(np.float32)
        t = rng.uniform(-1, 1, (h, w, d)).astype(np.float32)
        np.testing.assert_allclose(
            cooccurrence_raw(s, t), loop_cooccurrence_max(s, t), atol=1e-6
        )


class TestEarlyFusion:
    def test_concatenation_order(self):
        s = FeatureVector(np.array([1.0, 2.0, 3.0]), "fc6_spatial")
        t = FeatureVector(np.array([4.0, 5.0]), "fc6_temporal")
        out = early_fusion(s, t)
        np.testing.assert_array_equal(out.data, [1, 2, 3, 4, 5])
        assert out.provenance == "concat"

    def test_default_widths(self):
        s = FeatureVector(np.ones(64), "fc6_spatial")
        t = FeatureVector(np.ones(64), "fc6_temporal")
        assert len(early_fusion(s, t)) == 128

    def test_wrong_provenance(self):
        s = FeatureVector(np.ones(4), "fc6_spatial")
        with pytest.raises(ProvenanceError):
            early_fusion(s, FeatureVector(np.ones(4), "softmax_temporal"))
        with pytest.raises(ProvenanceError):
            early_fusion(FeatureVector(np.ones(4), "fc6_temporal"), s)

    def test_empty_vector_rejected_at_construction(self):
        with pytest.raises(InvalidValue):
            FeatureVector(np.array([]), "fc6_temporal")


class TestLateFusion:
    def test_hundred_class_concat(self):
        rng = np.random.default_rng(11)
        a = rng.random(100)
        b = rng.random(100)
        s = FeatureVector(a / a.sum(), "softmax_spatial")
        t = FeatureVector(b / b.sum(), "softmax_temporal")
        assert len(late_fusion(s, t)) == 200

    def test_one_hot_concat(self):
        s = FeatureVector(np.array([1.0, 0.0]), "softmax_spatial")
        t = FeatureVector(np.array([0.0, 1.0]), "softmax_temporal")
        np.testing.assert_array_equal(late_fusion(s, t).data, [1, 0, 0, 1])

    def test_non_probability_rejected(self):
        s = FeatureVector(np.array([0.25, 0.25]), "softmax_spatial")
        t = FeatureVector(np.array([0.5, 0.5]), "softmax_temporal")
        with pytest.raises(InvalidValue):
            late_fusion(s, t)


class TestCooccurrenceWithFc6:
    def _bilinear(self, d=3):
        rng = np.random.default_rng(12)
        s = rng.standard_normal((2, 2, d)).astype(np.float32)
        t = rng.standard_normal((2, 2, d)).astype(np.float32)
        return bilinear_cooccurrence(s, t)

    def test_length_additivity(self):
        feat = cooccurrence_with_fc6(
            self._bilinear(3),
            FeatureVector(np.ones(64), "fc6_spatial"),
            FeatureVector(np.ones(64), "fc6_temporal"),
        )
        assert len(feat) == 9 + 64 + 64
        assert feat.provenance == "concat"

    def test_full_scale_arithmetic(self):
        # 256-channel conv tap with two 4096-wide fc6 vectors
        feat = cooccurrence_with_fc6(
            CooccurrenceFeature((np.eye(256, dtype=np.float32) / 16.0).reshape(-1), "bilinear"),
            FeatureVector(np.ones(4096), "fc6_spatial"),
            FeatureVector(np.ones(4096), "fc6_temporal"),
        )
        assert len(feat) == 65536 + 8192

    def test_zero_bilinear_accepted(self):
        z = np.zeros((2, 2, 2), np.float32)
        feat = cooccurrence_with_fc6(
            bilinear_cooccurrence(z, z),
            FeatureVector(np.ones(4), "fc6_spatial"),
            FeatureVector(np.ones(4), "fc6_temporal"),
        )
        assert len(feat) == 4 + 4 + 4

    def test_unnormalised_bilinear_rejected(self):
        raw = FeatureVector(np.array([3.0, 0.0, 0.0, 0.0]), "bilinear")
        with pytest.raises(InvalidValue):
            cooccurrence_with_fc6(
                raw,
                FeatureVector(np.ones(4), "fc6_spatial"),
                FeatureVector(np.ones(4), "fc6_temporal"),
            )

    def test_wrong_first_argument(self):
        with pytest.raises(ProvenanceError):
            cooccurrence_with_fc6(
                FeatureVector(np.ones(4), "concat"),
                FeatureVector(np.ones(4), "fc6_spatial"),
                FeatureVector(np.ones(4), "fc6_temporal"),
            )


class TestCooccurrenceFeatureType:
    def test_length_must_be_square(self):
        with pytest.raises(ShapeError):
            CooccurrenceFeature(np.ones(5), "bilinear")


class TestFeaturePersistence:
    def test_fmap_round_trip(self, tmp_path):
        from stfuse.fio import read_fmap
        from stfuse.fusion import load_feature, save_feature

        rng = np.random.default_rng(20)
        vec = FeatureVector(rng.standard_normal(37).astype(np.float32), "concat")
        path = tmp_path / "f.fmap"
        save_feature(vec, path)
        assert read_fmap(path).shape == (1, 1, 37)
        back = load_feature(path)
        assert np.array_equal(back.data, vec.data)
