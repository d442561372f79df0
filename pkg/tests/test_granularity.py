"""Classifier head forward pass, keyword fallback, weights manifest IO."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magcrop.errors import ConfigError, EmptyQuery, ShapeMismatch
from magcrop.granularity import (
    ClassifierWeights,
    GranularityLabel,
    QueryEmbedding,
    classify_embedding,
    classify_keywords,
    load_classifier_weights,
    save_classifier_weights,
)

from conftest import philox


def dense_forward_oracle(e, w):
    """Straight-line matrix-vector forward pass with explicit loops."""

    def matvec(mat, vec, bias):
        out = []
        for row, b in zip(mat, bias):
            acc = 0.0
            for m, v in zip(row, vec):
                acc += m * v
            out.append(acc + b)
        return out

    h1 = [max(0.0, v) for v in matvec(w.W1.tolist(), list(e), w.b1.tolist())]
    h2 = [max(0.0, v) for v in matvec(w.W2.tolist(), h1, w.b2.tolist())]
    return matvec(w.W3.tolist(), h2, w.b3.tolist())


class TestEmbeddingPath:
    def test_zero_weights_tie_break_to_image(self):
        w = ClassifierWeights(
            W1=np.zeros((256, 768)),
            b1=np.zeros(256),
            W2=np.zeros((128, 256)),
            b2=np.zeros(128),
            W3=np.zeros((3, 128)),
            b3=np.zeros(3),
        )
        label, probs = classify_embedding(QueryEmbedding(values=np.ones(768)), w)
        assert label == GranularityLabel.IMAGE
        np.testing.assert_allclose(probs, np.full(3, 1 / 3), atol=1e-12)

    def test_matches_dense_oracle(self, classifier_weights, fixture_embedding):
        label, probs = classify_embedding(
            QueryEmbedding(values=fixture_embedding), classifier_weights
        )
        expected_logits = dense_forward_oracle(fixture_embedding, classifier_weights)
        h1 = np.maximum(classifier_weights.W1 @ fixture_embedding + classifier_weights.b1, 0)
        h2 = np.maximum(classifier_weights.W2 @ h1 + classifier_weights.b2, 0)
        logits = classifier_weights.W3 @ h2 + classifier_weights.b3
        np.testing.assert_allclose(logits, expected_logits, atol=1e-5)
        assert int(label) == int(np.argmax(expected_logits))

    def test_wrong_embedding_width(self, classifier_weights):
        with pytest.raises(ShapeMismatch):
            QueryEmbedding(values=np.ones(767))

    def test_wrong_weight_shape(self):
        with pytest.raises(ShapeMismatch):
            ClassifierWeights(
                W1=np.zeros((256, 767)),
                b1=np.zeros(256),
                W2=np.zeros((128, 256)),
                b2=np.zeros(128),
                W3=np.zeros((3, 128)),
                b3=np.zeros(3),
            )

    def test_softmax_normalized(self, classifier_weights):
        rng = philox(21)
        for _ in range(20):
            _, probs = classify_embedding(
                QueryEmbedding(values=rng.standard_normal(768)), classifier_weights
            )
            assert abs(probs.sum() - 1.0) < 1e-6
            assert np.all(probs > 0) and np.all(probs < 1)

    def test_argmax_invariant_under_bias_shift(self, classifier_weights, fixture_embedding):
        label, _ = classify_embedding(QueryEmbedding(values=fixture_embedding), classifier_weights)
        shifted = ClassifierWeights(
            W1=classifier_weights.W1,
            b1=classifier_weights.b1,
            W2=classifier_weights.W2,
            b2=classifier_weights.b2,
            W3=classifier_weights.W3,
            b3=classifier_weights.b3 + 3.25,
        )
        label2, _ = classify_embedding(QueryEmbedding(values=fixture_embedding), shifted)
        assert label2 == label


class TestKeywordPath:
    @pytest.mark.parametrize(
        "query,expected",
        [
            ("Please segment the red car", GranularityLabel.PIXEL),
            ("Where is the bridge?", GranularityLabel.REGION),
            ("Describe this image.", GranularityLabel.IMAGE),
            ("Produce a MASK for the runway", GranularityLabel.PIXEL),
            ("Outline each storage tank", GranularityLabel.PIXEL),
            ("Count the airplanes", GranularityLabel.REGION),
            ("Is there a harbor in this scene?", GranularityLabel.REGION),
            ("Give the bounding box of the stadium", GranularityLabel.REGION),
            ("What season does this look like?", GranularityLabel.IMAGE),
        ],
    )
    def test_rule_table(self, query, expected):
        assert classify_keywords(query) == expected

    def test_pixel_rule_wins_over_region(self):
        # both keyword families present; the pixel rule fires first
        assert classify_keywords("Where should I segment?") == GranularityLabel.PIXEL

    def test_empty_query(self):
        with pytest.raises(EmptyQuery):
            classify_keywords("   ")

    @settings(max_examples=60, deadline=None)
    @given(st.text(min_size=1).filter(lambda s: s.strip()))
    def test_deterministic_and_case_insensitive(self, query):
        assert classify_keywords(query) == classify_keywords(query)
        assert classify_keywords(query) == classify_keywords(query.upper())


class TestWeightsManifest:
    def test_save_load_roundtrip(self, classifier_weights, tmp_path):
        save_classifier_weights(classifier_weights, tmp_path)
        loaded = load_classifier_weights(tmp_path)
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            np.testing.assert_array_equal(
                getattr(loaded, name), getattr(classifier_weights, name).astype(np.float32)
            )

    def test_manifest_shape_mismatch_rejected(self, classifier_weights, tmp_path):
        save_classifier_weights(classifier_weights, tmp_path)
        manifest = tmp_path / "manifest.txt"
        text = manifest.read_text().replace("W2\tW2.magt\t128x256", "W2\tW2.magt\t128x255")
        manifest.write_text(text)
        with pytest.raises(ShapeMismatch):
            load_classifier_weights(tmp_path)

    def test_missing_parameter_rejected(self, classifier_weights, tmp_path):
        save_classifier_weights(classifier_weights, tmp_path)
        manifest = tmp_path / "manifest.txt"
        lines = [l for l in manifest.read_text().splitlines() if not l.startswith("b3")]
        manifest.write_text("\n".join(lines))
        with pytest.raises(ConfigError):
            load_classifier_weights(tmp_path)


def test_label_parse():
    assert GranularityLabel.parse("pixel") == GranularityLabel.PIXEL
    assert str(GranularityLabel.REGION) == "region"
    with pytest.raises(ConfigError):
        GranularityLabel.parse("voxel")
