"""Verification metrics, score correlation, per-phone discriminability."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phonetrait.analysis import (
    FRATIO_HEADER,
    FRatioRow,
    compute_eer,
    compute_metrics,
    compute_min_dcf,
    explainability_correlation,
    export_explanation,
    f_ratio,
    labelled_scores,
    load_explanation,
    load_f_ratio,
    pearson_correlation,
    read_report,
    save_f_ratio,
    write_report,
)
from phonetrait.corpus import CMU_PHONES, NON_VERBAL, PhoneInventory
from phonetrait.errors import ConfigurationError, NumericGuardError, ParseError
from phonetrait.scoring import ScoreRecord, TraitSimilarityVector

from _oracles import sweep_eer, sweep_min_dcf


def tiny_inventory():
    return PhoneInventory(CMU_PHONES[:3] + (NON_VERBAL,))


def random_scores(rng, n=40, separation=1.0):
    labels = np.array([1] * (n // 2) + [0] * (n - n // 2))
    scores = rng.normal(size=n) + separation * labels
    return scores, labels


def record(enroll="a", test="b", label=1, final=0.5, evidence=0.4, sims=None, n_phones=4):
    if sims is None:
        values = np.full(n_phones, np.nan)
        defined = np.zeros(n_phones, dtype=bool)
    else:
        values = np.array([np.nan if v is None else v for v in sims], dtype=np.float64)
        defined = np.array([v is not None for v in sims])
    return ScoreRecord(enroll, test, label, final, evidence,
                       TraitSimilarityVector(values, defined))


class TestEer:
    def test_hand_case(self):
        scores = np.array([0.9, 0.7, 0.3, 0.6, 0.2, 0.1])
        labels = np.array([1, 1, 1, 0, 0, 0])
        eer, threshold = compute_eer(scores, labels)
        assert abs(eer - 1.0 / 3.0) < 1e-12
        assert threshold == 0.6

    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0])
        eer, _ = compute_eer(scores, labels)
        assert eer == 0.0

    def test_identical_distributions(self):
        scores = np.array([0.5, 0.5, 0.5, 0.5])
        labels = np.array([1, 1, 0, 0])
        eer, _ = compute_eer(scores, labels)
        assert abs(eer - 0.5) < 1e-12

    @given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 3.0))
    @settings(max_examples=40, deadline=None)
    def test_matches_sweep_oracle(self, seed, separation):
        rng = np.random.default_rng(seed)
        scores, labels = random_scores(rng, separation=separation)
        eer, threshold = compute_eer(scores, labels)
        oracle_eer, oracle_threshold = sweep_eer(scores.tolist(), labels.tolist())
        assert abs(eer - oracle_eer) < 1e-12
        assert abs(threshold - oracle_threshold) < 1e-12
        assert 0.0 <= eer <= 1.0

    def test_ties_accepted_together(self):
        # Three trials share the score 0.5; any threshold keeps them together.
        scores = np.array([0.5, 0.5, 0.9, 0.5, 0.1])
        labels = np.array([1, 1, 1, 0, 0])
        eer, threshold = compute_eer(scores, labels)
        oracle_eer, oracle_threshold = sweep_eer(scores.tolist(), labels.tolist())
        assert abs(eer - oracle_eer) < 1e-12
        assert abs(threshold - oracle_threshold) < 1e-12

    def test_single_class_rejected(self):
        with pytest.raises(ConfigurationError, match="non-target"):
            compute_eer(np.array([0.5, 0.6]), np.array([1, 1]))


class TestMinDcf:
    def test_perfect_separation_is_zero(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0])
        min_dcf, _ = compute_min_dcf(scores, labels)
        assert min_dcf == 0.0

    def test_normalised_upper_bound(self):
        rng = np.random.default_rng(0)
        scores, labels = random_scores(rng, separation=0.0)
        min_dcf, _ = compute_min_dcf(scores, labels)
        assert min_dcf <= 1.0 + 1e-12

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_matches_sweep_oracle(self, seed):
        rng = np.random.default_rng(seed)
        scores, labels = random_scores(rng)
        min_dcf, threshold = compute_min_dcf(scores, labels, 0.01, 1.0, 1.0)
        oracle, oracle_threshold = sweep_min_dcf(scores.tolist(), labels.tolist())
        assert abs(min_dcf - oracle) < 1e-12
        assert abs(threshold - oracle_threshold) < 1e-12

    def test_cost_parameters_matter(self):
        rng = np.random.default_rng(1)
        scores, labels = random_scores(rng, separation=0.5)
        a, _ = compute_min_dcf(scores, labels, p_target=0.01)
        b, _ = compute_min_dcf(scores, labels, p_target=0.5)
        assert a != b

    def test_invalid_prior(self):
        with pytest.raises(ConfigurationError):
            compute_min_dcf(np.array([0.5, 0.4]), np.array([1, 0]), p_target=0.0)


class TestMetricsReport:
    def test_counts_and_fields(self):
        scores = np.array([0.9, 0.7, 0.3, 0.6, 0.2, 0.1])
        labels = np.array([1, 1, 1, 0, 0, 0])
        report = compute_metrics(scores, labels)
        assert report.n_target == 3
        assert report.n_nontarget == 3
        assert abs(report.eer - 1.0 / 3.0) < 1e-12
        assert report.min_dcf <= 1.0

    def test_labelled_scores_filters(self):
        records = [
            record(label=1, final=0.9, evidence=0.8),
            record(label=None, final=0.7, evidence=0.6),
            record(label=0, final=0.2, evidence=None),
        ]
        finals, labels = labelled_scores(records, "final")
        assert finals.tolist() == [0.9, 0.2]
        assert labels.tolist() == [1, 0]
        evidences, labels = labelled_scores(records, "evidence")
        assert evidences.tolist() == [0.8]
        assert labels.tolist() == [1]
        with pytest.raises(ConfigurationError):
            labelled_scores(records, "both")


class TestPearson:
    def test_perfectly_linear(self):
        x = np.array([1.0, 2.0, 3.0])
        assert abs(pearson_correlation(x, 2 * x + 1) - 1.0) < 1e-12
        assert abs(pearson_correlation(x, -x) + 1.0) < 1e-12

    def test_matches_numpy(self):
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=30), rng.normal(size=30)
        assert abs(pearson_correlation(x, y) - np.corrcoef(x, y)[0, 1]) < 1e-12

    def test_constant_input_rejected(self):
        with pytest.raises(NumericGuardError):
            pearson_correlation(np.ones(5), np.arange(5.0))

    def test_too_few_points(self):
        with pytest.raises(NumericGuardError):
            pearson_correlation(np.array([1.0]), np.array([2.0]))

    def test_explainability_correlation_skips_undefined(self):
        records = [
            record(final=0.1, evidence=0.2),
            record(final=0.5, evidence=0.6),
            record(final=0.9, evidence=None),
            record(final=0.8, evidence=0.9),
        ]
        value = explainability_correlation(records)
        expected = pearson_correlation(
            np.array([0.1, 0.5, 0.8]), np.array([0.2, 0.6, 0.9])
        )
        assert abs(value - expected) < 1e-12

    def test_explainability_needs_two_defined(self):
        with pytest.raises(NumericGuardError):
            explainability_correlation([record(evidence=None), record(evidence=None)])


def fratio_records(n_target=30, n_nontarget=30, target_sim=0.8, nontarget_sim=0.2,
                   phones=(0, 1, 2), n_phones=4):
    records = []
    for i in range(n_target):
        sims = [target_sim if p in phones else None for p in range(n_phones)]
        records.append(record(f"e{i}", f"t{i}", 1, 0.9, target_sim, sims, n_phones))
    for i in range(n_nontarget):
        sims = [nontarget_sim if p in phones else None for p in range(n_phones)]
        records.append(record(f"e{i}", f"x{i}", 0, 0.1, nontarget_sim, sims, n_phones))
    return records


class TestFRatio:
    def test_constant_pools_give_exact_ratio(self):
        rows = f_ratio(fratio_records(), tiny_inventory(), n_samples=10, seed=0)
        for row in rows[:3]:
            assert row.included
            assert row.within_mean == 0.8
            assert row.between_mean == 0.2
            assert abs(row.ratio - 4.0) < 1e-12
        assert not rows[3].included
        assert np.isnan(rows[3].ratio)
        assert rows[3].n_available == 0

    def test_small_pool_excluded_and_flagged(self):
        rows = f_ratio(fratio_records(n_target=5), tiny_inventory(), n_samples=10, seed=0)
        for row in rows[:3]:
            assert not row.included
            assert row.n_available == 5
            assert np.isnan(row.within_mean)

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(8)
        records = []
        for i in range(40):
            sims = [float(rng.uniform(0.5, 1.0)), float(rng.uniform(0, 0.5)), None, None]
            records.append(record(f"e{i}", f"t{i}", 1, 0.9, 0.7, sims))
        for i in range(40):
            sims = [float(rng.uniform(0, 0.5)), float(rng.uniform(0, 0.5)), None, None]
            records.append(record(f"e{i}", f"x{i}", 0, 0.1, 0.2, sims))
        a = f_ratio(records, tiny_inventory(), n_samples=20, seed=3)
        b = f_ratio(records, tiny_inventory(), n_samples=20, seed=3)
        c = f_ratio(records, tiny_inventory(), n_samples=20, seed=4)
        for ra, rb in zip(a, b):
            assert (ra.within_mean, ra.between_mean, ra.ratio) == \
                   (rb.within_mean, rb.between_mean, rb.ratio)
        assert a[0].within_mean != c[0].within_mean

    def test_phone_streams_are_independent(self):
        # Shrinking phone 2's pool below the draw count must not change the
        # other phones' resampled statistics.
        full = f_ratio(fratio_records(), tiny_inventory(), n_samples=10, seed=0)
        fewer = fratio_records()
        for r in fewer[:25]:
            r.similarity.defined[2] = False
            r.similarity.values[2] = np.nan
        partial = f_ratio(fewer, tiny_inventory(), n_samples=10, seed=0)
        assert not partial[2].included
        for i in (0, 1):
            assert partial[i].within_mean == full[i].within_mean
            assert partial[i].between_mean == full[i].between_mean

    def test_unlabelled_records_ignored(self):
        records = fratio_records()
        records.append(record("u", "v", None, 0.5, 0.5, [0.9, 0.9, 0.9, 0.9]))
        rows = f_ratio(records, tiny_inventory(), n_samples=10, seed=0)
        assert rows[0].within_mean == 0.8

    def test_no_pools_anywhere_rejected(self):
        records = [record(sims=None, n_phones=4)]
        with pytest.raises(ConfigurationError, match="no phone"):
            f_ratio(records, tiny_inventory(), n_samples=5, seed=0)

    def test_round_trip(self, tmp_path):
        rows = f_ratio(fratio_records(), tiny_inventory(), n_samples=10, seed=0)
        path = tmp_path / "fratio.csv"
        save_f_ratio(rows, path)
        text = path.read_text()
        assert text.splitlines()[0] == FRATIO_HEADER
        assert text.splitlines()[4].endswith(",NA,NA,NA,0")
        loaded = load_f_ratio(path)
        for orig, back in zip(rows, loaded):
            assert orig.phone == back.phone
            assert orig.included == back.included
            if orig.included:
                assert orig.ratio == back.ratio

    def test_load_rejects_missing_header(self, tmp_path):
        path = tmp_path / "fratio.csv"
        path.write_text("AA,1.0,1.0,1.0,1\n")
        with pytest.raises(ParseError, match="header"):
            load_f_ratio(path)

    def test_load_rejects_bad_flag(self, tmp_path):
        path = tmp_path / "fratio.csv"
        path.write_text(FRATIO_HEADER + "\nAA,1.0,1.0,1.0,yes\n")
        with pytest.raises(ParseError, match="included"):
            load_f_ratio(path)


class TestExplanationFile:
    def test_round_trip(self, tmp_path):
        rec = record(sims=[0.5, None, -0.25, 1.0])
        path = tmp_path / "explanation.txt"
        export_explanation(rec, tiny_inventory(), path)
        back = load_explanation(path, tiny_inventory())
        assert (back.enroll_id, back.test_id, back.label) == ("a", "b", 1)
        assert back.final == rec.final
        assert back.evidence == rec.evidence
        assert np.array_equal(back.similarity.defined, rec.similarity.defined)
        assert back.similarity.values[0] == 0.5

    def test_file_shape(self, tmp_path):
        rec = record(label=None, evidence=None, sims=[0.5, None, None, None])
        path = tmp_path / "explanation.txt"
        export_explanation(rec, tiny_inventory(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "enroll a"
        assert lines[2] == "label NA"
        assert lines[4] == "evidence NA"
        assert lines[5] == "trait\tAA\t0.5"
        assert lines[6] == f"trait\t{CMU_PHONES[1]}\tNA"
        assert len(lines) == 5 + 4

    def test_inventory_size_checked(self):
        with pytest.raises(ConfigurationError):
            export_explanation(record(n_phones=3), tiny_inventory(), "unused.txt")

    def test_load_rejects_unknown_phone(self, tmp_path):
        path = tmp_path / "explanation.txt"
        path.write_text(
            "enroll a\ntest b\nlabel 1\nfinal 0.5\nevidence 0.5\ntrait\tZZ\t0.5\n"
        )
        with pytest.raises(ParseError, match="ZZ"):
            load_explanation(path, tiny_inventory())

    def test_load_rejects_missing_header(self, tmp_path):
        path = tmp_path / "explanation.txt"
        path.write_text("enroll a\ntest b\nlabel 1\nfinal 0.5\n")
        with pytest.raises(ParseError, match="evidence"):
            load_explanation(path, tiny_inventory())


class TestReportFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "report.txt"
        write_report([("eer", 0.125), ("threshold", -0.5), ("n_target", 250)], path)
        back = read_report(path)
        assert back["eer"] == "0.125"
        assert back["threshold"] == "-0.5"
        assert back["n_target"] == "250"
