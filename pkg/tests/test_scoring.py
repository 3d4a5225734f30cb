"""Trial scoring: final cosine, per-phone evidence, score file round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonetrait.corpus import (
    CMU_PHONES,
    NON_VERBAL,
    CorpusIndex,
    PhoneAlignment,
    PhoneInventory,
    Trial,
    TrialList,
    UtteranceFeatures,
    generate_corpus,
    make_trials,
)
from phonetrait.encoder import EncoderConfig, EncoderParams, LayerSpec
from phonetrait.errors import (
    ConfigurationError,
    DimensionError,
    NumericGuardError,
    ParseError,
    UndefinedEvidenceError,
)
from phonetrait.scoring import (
    ScoreRecord,
    TraitSimilarityVector,
    cosine_similarity,
    evidence_score,
    final_score,
    load_scores,
    save_scores,
    score_trials,
    trait_similarity_vector,
)
from phonetrait.trait_layer import PhoneticTraitSet, ProjectionParams
from phonetrait.training import ModelConfig, ModelState, init_model

from _oracles import naive_cosine


def tiny_inventory():
    return PhoneInventory(CMU_PHONES[:5] + (NON_VERBAL,))


def scored_records(seed=0):
    inventory = tiny_inventory()
    features, alignments, _ = generate_corpus(
        3, 3, inventory, 3, (2, 4), (4, 8), 0.3, seed
    )
    index = CorpusIndex.build(features, alignments)
    model_cfg = ModelConfig(EncoderConfig(3, (LayerSpec((-1, 0, 1), 4, "relu"),)), 3)
    state = init_model(model_cfg, len(index.speakers), seed=1)
    trials = make_trials(features, 6, 6, seed=2)
    return state, index, trials, inventory


class TestCosine:
    def test_hand_cases(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == 1.0
        assert abs(cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 3.0]))) < 1e-15
        assert abs(cosine_similarity(np.array([1.0, 1.0]), np.array([-1.0, -1.0])) + 1.0) < 1e-12

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=30)
    def test_matches_naive_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=4) + 0.1, rng.normal(size=4) + 0.1
        value = cosine_similarity(a, b)
        assert abs(value - naive_cosine(a, b)) < 1e-12
        assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(NumericGuardError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_final_score_is_embedding_cosine(self):
        a, b = np.array([1.0, 2.0, 3.0]), np.array([3.0, 1.0, 2.0])
        assert final_score(a, b) == cosine_similarity(a, b)


class TestTraitSimilarity:
    def set_of(self, rows, present):
        traits = np.array(rows, dtype=np.float64)
        traits[~np.asarray(present)] = 0.0
        return PhoneticTraitSet("u", traits, present)

    def test_defined_only_where_both_present(self):
        enroll = self.set_of([[1.0, 0.0], [1.0, 1.0], [2.0, 0.0]], [True, True, False])
        test = self.set_of([[0.0, 1.0], [9.0, 9.0], [1.0, 1.0]], [True, False, True])
        sim = trait_similarity_vector(enroll, test)
        assert sim.defined.tolist() == [True, False, False]
        assert abs(sim.values[0]) < 1e-15
        assert np.isnan(sim.values[1]) and np.isnan(sim.values[2])
        assert sim.n_defined == 1

    def test_values_match_per_phone_cosine(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(4, 3))
        mask = np.array([True, True, True, True])
        sim = trait_similarity_vector(
            PhoneticTraitSet("a", a, mask), PhoneticTraitSet("b", b, mask)
        )
        for i in range(4):
            assert abs(sim.values[i] - naive_cosine(a[i], b[i])) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            trait_similarity_vector(
                PhoneticTraitSet("a", np.ones((2, 2)), np.ones(2, dtype=bool)),
                PhoneticTraitSet("b", np.ones((3, 2)), np.ones(3, dtype=bool)),
            )

    def test_evidence_is_mean_of_defined(self):
        sim = TraitSimilarityVector(
            np.array([0.5, np.nan, 0.1]), np.array([True, False, True])
        )
        assert abs(evidence_score(sim) - 0.3) < 1e-12

    def test_evidence_undefined(self):
        sim = TraitSimilarityVector(np.full(3, np.nan), np.zeros(3, dtype=bool))
        with pytest.raises(UndefinedEvidenceError):
            evidence_score(sim)


class TestScoreTrials:
    def test_labels_and_shapes_propagate(self):
        state, index, trials, inventory = scored_records()
        records = score_trials(state, index, trials, inventory.size)
        assert len(records) == len(trials)
        for record, trial in zip(records, trials):
            assert (record.enroll_id, record.test_id) == (trial.enroll_id, trial.test_id)
            assert record.label == trial.label
            assert record.similarity.values.shape == (inventory.size,)
            assert np.isfinite(record.final)

    def test_cache_does_not_change_records(self):
        state, index, trials, inventory = scored_records()
        fast = score_trials(state, index, trials, inventory.size, use_cache=True)
        slow = score_trials(state, index, trials, inventory.size, use_cache=False)
        for a, b in zip(fast, slow):
            assert a.final == b.final
            assert a.evidence == b.evidence
            assert np.array_equal(a.similarity.defined, b.similarity.defined)

    def test_unknown_utterance_rejected(self):
        state, index, _, inventory = scored_records()
        trials = TrialList([Trial("nope", list(index.features)[0], 0)])
        with pytest.raises(ConfigurationError):
            score_trials(state, index, trials, inventory.size)

    def test_disjoint_phones_give_none_evidence(self):
        # Two utterances with no phone in common: final still defined,
        # evidence is not.
        dim = 2
        features = [
            UtteranceFeatures("a", "s0", np.full((2, dim), 2.0)),
            UtteranceFeatures("b", "s1", np.full((2, dim), 3.0)),
        ]
        alignments = [
            PhoneAlignment("a", [(0, 2, 0)]),
            PhoneAlignment("b", [(0, 2, 1)]),
        ]
        index = CorpusIndex.build(features, alignments)
        encoder = EncoderParams(
            EncoderConfig(dim, (LayerSpec((0,), dim, "identity"),)),
            [np.eye(dim)], [np.zeros(dim)],
        )
        state = ModelState(
            encoder,
            ProjectionParams(np.eye(2 * dim), np.zeros(2 * dim)),
            class_weights=np.ones((2, 2 * dim)),
        )
        records = score_trials(state, index, TrialList([Trial("a", "b", 0)]), 3)
        assert records[0].evidence is None
        assert records[0].similarity.n_defined == 0
        assert np.isfinite(records[0].final)


class TestScoreFileIO:
    def test_round_trip_exact(self, tmp_path):
        state, index, trials, inventory = scored_records()
        records = score_trials(state, index, trials, inventory.size)
        path = tmp_path / "scores.txt"
        save_scores(records, path)
        loaded = load_scores(path, inventory.size)
        assert len(loaded) == len(records)
        for a, b in zip(records, loaded):
            assert (a.enroll_id, a.test_id, a.label) == (b.enroll_id, b.test_id, b.label)
            assert a.final == b.final
            assert a.evidence == b.evidence
            assert np.array_equal(a.similarity.defined, b.similarity.defined)
            assert np.array_equal(
                a.similarity.values[a.similarity.defined],
                b.similarity.values[b.similarity.defined],
            )
        save_scores(loaded, tmp_path / "again.txt")
        assert path.read_bytes() == (tmp_path / "again.txt").read_bytes()

    def test_n_phones_inferred_from_first_row(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("a\tb\t1\t0.5\t0.25\t0.25\tNA\t0.5\n")
        records = load_scores(path)
        assert records[0].similarity.values.shape == (3,)
        assert records[0].similarity.defined.tolist() == [True, False, True]

    def test_na_label_and_evidence(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("a\tb\tNA\t0.5\tNA\tNA\tNA\n")
        record = load_scores(path)[0]
        assert record.label is None
        assert record.evidence is None

    def test_too_few_fields(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("a\tb\t1\t0.5\n")
        with pytest.raises(ParseError, match="at least 6"):
            load_scores(path)

    def test_inconsistent_width(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("a\tb\t1\t0.5\t0.5\t1.0\na\tc\t0\t0.5\t0.5\t1.0\t1.0\n")
        with pytest.raises(ParseError, match="scores\\.txt:2"):
            load_scores(path)

    def test_bad_label(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("a\tb\t7\t0.5\t0.5\t1.0\n")
        with pytest.raises(ParseError, match="label"):
            load_scores(path)

    def test_bad_similarity_value(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("a\tb\t1\t0.5\t0.5\tx\n")
        with pytest.raises(ParseError, match="non-numeric"):
            load_scores(path)
