"""Trial scoring: overall decision score plus the per-phone evidence behind it.

A trial compares an enrollment utterance with a test utterance. The final
score is the cosine similarity of their speaker embeddings. The evidence
score averages per-phone trait cosines over the phones present in both
utterances; phones missing on either side are undefined (kept as NaN in the
similarity vector) and excluded from the average. A trial with no shared
phone has no evidence score at all.

Score file format, one trial per line, tab separated::

    enroll_id  test_id  label  final  evidence  s0 .. s{I-1}

``label`` is 1/0 or NA for unlabelled trials; ``evidence`` and undefined
per-phone entries are NA.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CorpusIndex, TrialList, atomic_write
from .errors import (
    DimensionError,
    NumericGuardError,
    ParseError,
    UndefinedEvidenceError,
)
from .trait_layer import PhoneticTraitSet, forward_utterance
from .training import ModelState

_NORM_FLOOR = 1e-12


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"vectors must share a 1-d shape, got {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        raise NumericGuardError("cosine similarity of a near-zero vector is undefined")
    return float(a @ b / (na * nb))


def final_score(enroll_embedding: np.ndarray, test_embedding: np.ndarray) -> float:
    """Utterance-level decision score: cosine of the two speaker embeddings."""
    return cosine_similarity(enroll_embedding, test_embedding)


@dataclass
class TraitSimilarityVector:
    """Per-phone trait cosines for one trial; NaN where either side is absent."""

    values: np.ndarray   # (I,)
    defined: np.ndarray  # (I,) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.defined = np.asarray(self.defined, dtype=bool)
        if self.values.shape != self.defined.shape or self.values.ndim != 1:
            raise DimensionError("values and defined must be matching 1-d arrays")

    @property
    def n_defined(self) -> int:
        return int(self.defined.sum())


def trait_similarity_vector(
    enroll: PhoneticTraitSet, test: PhoneticTraitSet
) -> TraitSimilarityVector:
    """Cosine of same-phone trait pairs, defined where both sides are present."""
    if enroll.traits.shape != test.traits.shape:
        raise DimensionError(
            f"trait sets have shapes {enroll.traits.shape} and {test.traits.shape}"
        )
    n_phones = enroll.n_phones
    defined = enroll.present & test.present
    values = np.full(n_phones, np.nan)
    for i in np.nonzero(defined)[0]:
        values[i] = cosine_similarity(enroll.traits[i], test.traits[i])
    return TraitSimilarityVector(values, defined)


def evidence_score(similarity: TraitSimilarityVector) -> float:
    """Mean of the defined per-phone cosines; the trial's explanation summary."""
    if similarity.n_defined == 0:
        raise UndefinedEvidenceError("no phone is present in both utterances")
    return float(similarity.values[similarity.defined].mean())


@dataclass
class ScoreRecord:
    """One scored trial; ``evidence`` is None when no phone is shared."""

    enroll_id: str
    test_id: str
    label: int | None
    final: float
    evidence: float | None
    similarity: TraitSimilarityVector


def score_trials(
    state: ModelState,
    index: CorpusIndex,
    trials: TrialList,
    n_phones: int,
    use_cache: bool = True,
) -> list[ScoreRecord]:
    """Score every trial; with the cache each utterance is encoded only once.

    Caching is purely a runtime optimisation, the records are identical
    either way.
    """
    trials.validate_against(index.features)
    cache = {}

    def forward(utt_id: str):
        if use_cache and utt_id in cache:
            return cache[utt_id]
        result = forward_utterance(
            index.features[utt_id].features,
            index.alignments[utt_id],
            state.encoder,
            state.projection,
            n_phones,
        )
        if use_cache:
            cache[utt_id] = result
        return result

    records = []
    for trial in trials:
        enroll = forward(trial.enroll_id)
        test = forward(trial.test_id)
        similarity = trait_similarity_vector(enroll.trait_set, test.trait_set)
        try:
            evidence = evidence_score(similarity)
        except UndefinedEvidenceError:
            evidence = None
        records.append(
            ScoreRecord(
                enroll_id=trial.enroll_id,
                test_id=trial.test_id,
                label=trial.label,
                final=final_score(enroll.embedding, test.embedding),
                evidence=evidence,
                similarity=similarity,
            )
        )
    return records


# ---------------------------------------------------------------------------
# score file I/O
# ---------------------------------------------------------------------------

_NA = "NA"


def save_scores(records: list[ScoreRecord], path) -> None:
    with atomic_write(path) as f:
        for r in records:
            label = _NA if r.label is None else str(r.label)
            evidence = _NA if r.evidence is None else repr(float(r.evidence))
            cells = [r.enroll_id, r.test_id, label, repr(float(r.final)), evidence]
            for i in range(r.similarity.values.shape[0]):
                if r.similarity.defined[i]:
                    cells.append(repr(float(r.similarity.values[i])))
                else:
                    cells.append(_NA)
            f.write("\t".join(cells) + "\n")


def load_scores(path, n_phones: int | None = None) -> list[ScoreRecord]:
    """Read a score file; ``n_phones`` defaults to what the first row implies."""
    records = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            if n_phones is None:
                if len(cells) < 6:
                    raise ParseError(path, line_no, "score row needs at least 6 fields")
                n_phones = len(cells) - 5
            if len(cells) != 5 + n_phones:
                raise ParseError(
                    path, line_no, f"expected {5 + n_phones} fields, got {len(cells)}"
                )
            enroll_id, test_id, label_s, final_s, evidence_s = cells[:5]
            if label_s == _NA:
                label = None
            elif label_s in ("0", "1"):
                label = int(label_s)
            else:
                raise ParseError(path, line_no, f"label must be 1, 0 or NA, got {label_s!r}")
            try:
                final = float(final_s)
                evidence = None if evidence_s == _NA else float(evidence_s)
            except ValueError:
                raise ParseError(path, line_no, "non-numeric score") from None
            values = np.full(n_phones, np.nan)
            defined = np.zeros(n_phones, dtype=bool)
            for i, cell in enumerate(cells[5:]):
                if cell == _NA:
                    continue
                try:
                    values[i] = float(cell)
                except ValueError:
                    raise ParseError(path, line_no, f"non-numeric similarity {cell!r}") from None
                defined[i] = True
            records.append(
                ScoreRecord(
                    enroll_id=enroll_id,
                    test_id=test_id,
                    label=label,
                    final=final,
                    evidence=evidence,
                    similarity=TraitSimilarityVector(values, defined),
                )
            )
    return records
