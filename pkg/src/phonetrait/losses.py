"""Training losses: trait verification, trait centering, margin classification.

All three act on a pair batch of K speakers, each contributing one enrollment
and one test utterance. Gradients are derived by hand and returned alongside
the loss values so the whole model can be trained without autodiff; every
formula here is certified against central finite differences in the tests.

Conventions shared by the trait losses: trait tensors are (K, I, D1) with one
row per inventory phone, presence masks are (K, I) bools, and a loss term is
dropped (not zero-divided) when its averaging set is empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BatchError,
    ConfigurationError,
    DimensionError,
    EmptyUtteranceError,
    NumericGuardError,
)

# Norms below this are treated as degenerate rather than normalised.
_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the verification (matched/unmatched) and center terms."""

    alpha: float = 0.0007
    beta: float = 0.00001
    gamma: float = 0.0001

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class AamConfig:
    """Additive angular margin softmax settings."""

    margin: float = 0.2
    scale: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.margin < np.pi / 2:
            raise ConfigurationError("margin must be in [0, pi/2)")
        if self.scale <= 0:
            raise ConfigurationError("scale must be > 0")


@dataclass
class PairBatch:
    """K speakers, one (enrollment, test) utterance pair each."""

    speaker_ids: list[str]
    class_labels: np.ndarray       # (K,) int
    enroll_traits: np.ndarray      # (K, I, D1)
    enroll_present: np.ndarray     # (K, I) bool
    test_traits: np.ndarray        # (K, I, D1)
    test_present: np.ndarray       # (K, I) bool
    enroll_embeddings: np.ndarray  # (K, D2)
    test_embeddings: np.ndarray    # (K, D2)

    def __post_init__(self):
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        k = len(self.speaker_ids)
        if k < 1:
            raise BatchError("batch needs at least one speaker")
        if len(set(self.speaker_ids)) != k:
            raise BatchError("batch speakers must be distinct")
        shapes = {
            "class_labels": (self.class_labels, 1),
            "enroll_traits": (self.enroll_traits, 3),
            "enroll_present": (self.enroll_present, 2),
            "test_traits": (self.test_traits, 3),
            "test_present": (self.test_present, 2),
            "enroll_embeddings": (self.enroll_embeddings, 2),
            "test_embeddings": (self.test_embeddings, 2),
        }
        for name, (arr, ndim) in shapes.items():
            if arr.ndim != ndim or arr.shape[0] != k:
                raise DimensionError(f"{name} must have {ndim} dims with leading size {k}")
        if self.enroll_traits.shape != self.test_traits.shape:
            raise DimensionError("enroll and test trait tensors must share a shape")
        if self.enroll_embeddings.shape != self.test_embeddings.shape:
            raise DimensionError("enroll and test embeddings must share a shape")

    @property
    def n_speakers(self) -> int:
        return len(self.speaker_ids)


def trait_verification_loss(
    enroll_traits: np.ndarray,
    enroll_present: np.ndarray,
    test_traits: np.ndarray,
    test_present: np.ndarray,
    alpha: float,
    beta: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Pull same-speaker traits together, push nearest other-speaker traits apart.

    The attractive term averages squared distances over all (speaker, phone)
    pairs where the phone is present on both sides of that speaker's pair. The
    repulsive term, for each present enrollment trait, finds the closest test
    trait of the same phone from any *other* speaker that has it, and averages
    those minima; each term's average ignores entries with an empty candidate
    set.

    Returns (loss, d_enroll_traits, d_test_traits).
    """
    enroll = np.asarray(enroll_traits, dtype=np.float64)
    test = np.asarray(test_traits, dtype=np.float64)
    pe = np.asarray(enroll_present, dtype=bool)
    pt = np.asarray(test_present, dtype=bool)
    if enroll.shape != test.shape or enroll.ndim != 3:
        raise DimensionError("trait tensors must both be (K, I, D1)")
    n_speakers = enroll.shape[0]
    if n_speakers < 2:
        raise BatchError("trait verification needs >= 2 speakers in the batch")

    diff = enroll[:, None, :, :] - test[None, :, :, :]       # (K, K, I, D1)
    sq = np.einsum("khid,khid->khi", diff, diff)             # (K, K, I)
    valid = pe[:, None, :] & pt[None, :, :]

    loss = 0.0
    d_enroll = np.zeros_like(enroll)
    d_test = np.zeros_like(test)
    diag = np.arange(n_speakers)

    matched_mask = valid[diag, diag, :]                      # (K, I)
    n_matched = int(matched_mask.sum())
    if n_matched:
        loss += alpha * float(sq[diag, diag, :][matched_mask].sum()) / n_matched
        coef = 2.0 * alpha / n_matched
        matched_diff = diff[diag, diag, :, :] * matched_mask[:, :, None]
        d_enroll += coef * matched_diff
        d_test -= coef * matched_diff

    candidates = np.where(valid, sq, np.inf)
    candidates[diag, diag, :] = np.inf
    nearest = np.argmin(candidates, axis=1)                  # (K, I)
    nearest_sq = np.min(candidates, axis=1)
    retained = np.isfinite(nearest_sq)
    n_retained = int(retained.sum())
    if n_retained:
        loss -= beta * float(nearest_sq[retained].sum()) / n_retained
        coef = 2.0 * beta / n_retained
        ks, phones = np.nonzero(retained)
        hs = nearest[ks, phones]
        pulled = coef * diff[ks, hs, phones, :]
        # A test trait can be the nearest neighbour of several enrollments.
        np.subtract.at(d_enroll, (ks, phones), pulled)
        np.add.at(d_test, (hs, phones), pulled)
    return loss, d_enroll, d_test


def trait_center_loss(
    traits: np.ndarray,
    present: np.ndarray,
    gamma: float,
) -> tuple[float, np.ndarray]:
    """Compactness of each utterance's present traits around their own mean.

    Loss is the sum over utterances of squared distances to the utterance
    center, divided by the total present-trait count of the whole side, times
    gamma. Because each center is its utterance's own mean, the center's
    dependence on the traits cancels in the gradient and d/dx is simply
    2*gamma*(x - center)/total_count.

    Returns (loss, d_traits).
    """
    x = np.asarray(traits, dtype=np.float64)
    mask = np.asarray(present, dtype=bool)
    if x.ndim != 3 or mask.shape != x.shape[:2]:
        raise DimensionError("traits must be (K, I, D1) with a (K, I) presence mask")
    counts = mask.sum(axis=1)
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise EmptyUtteranceError(f"utterance {int(empty[0])} in batch has no present traits")
    total = int(counts.sum())
    masked = x * mask[:, :, None]
    centers = masked.sum(axis=1) / counts[:, None]           # (K, D1)
    deviation = (x - centers[:, None, :]) * mask[:, :, None]
    loss = gamma * float((deviation ** 2).sum()) / total
    d_traits = (2.0 * gamma / total) * deviation
    return loss, d_traits


def aam_softmax_loss(
    embeddings: np.ndarray,
    labels: np.ndarray,
    class_weights: np.ndarray,
    config: AamConfig,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Additive angular margin softmax over speaker classes.

    Rows of ``embeddings`` and ``class_weights`` are length-normalised, the
    true-class cosine gets the angular margin, everything is scaled and fed to
    cross entropy, averaged over the batch.

    Returns (loss, d_embeddings, d_class_weights).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    w = np.asarray(class_weights, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError("embeddings and class weights must be 2-d with equal width")
    batch = x.shape[0]
    if y.shape != (batch,):
        raise DimensionError(f"labels shape {y.shape}, want {(batch,)}")
    if batch < 1:
        raise BatchError("classification loss needs a non-empty batch")
    if y.min() < 0 or y.max() >= w.shape[0]:
        raise ConfigurationError("label outside the class range")
    x_norm = np.linalg.norm(x, axis=1)
    w_norm = np.linalg.norm(w, axis=1)
    if (x_norm < _NORM_FLOOR).any():
        raise NumericGuardError("embedding with near-zero norm cannot be normalised")
    if (w_norm < _NORM_FLOOR).any():
        raise NumericGuardError("class weight with near-zero norm cannot be normalised")
    x_hat = x / x_norm[:, None]
    w_hat = w / w_norm[:, None]
    cos = x_hat @ w_hat.T                                    # (B, C)
    rows = np.arange(batch)
    logits = config.scale * cos
    if config.margin == 0.0:
        margin_factor = np.ones(batch)
    else:
        cos_m, sin_m = np.cos(config.margin), np.sin(config.margin)
        # Clipped only in the forward-consistent sense: the margined value and
        # its derivative both come from the clipped cosine, so finite
        # differences agree away from |cos| = 1.
        cy = np.clip(cos[rows, y], -1.0 + 1e-9, 1.0 - 1e-9)
        sin_y = np.sqrt(1.0 - cy * cy)
        logits[rows, y] = config.scale * (cy * cos_m - sin_y * sin_m)
        margin_factor = cos_m + sin_m * cy / sin_y

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1)
    loss = float(np.mean(np.log(z) - shifted[rows, y]))

    d_logits = exp / z[:, None]
    d_logits[rows, y] -= 1.0
    d_logits /= batch
    d_cos = config.scale * d_logits
    d_cos[rows, y] *= margin_factor
    d_x_hat = d_cos @ w_hat
    d_w_hat = d_cos.T @ x_hat
    d_x = (d_x_hat - x_hat * np.sum(d_x_hat * x_hat, axis=1, keepdims=True)) / x_norm[:, None]
    d_w = (d_w_hat - w_hat * np.sum(d_w_hat * w_hat, axis=1, keepdims=True)) / w_norm[:, None]
    return loss, d_x, d_w


@dataclass
class LossOutput:
    """Loss components and every gradient needed for one update step."""

    total: float
    classification: float
    verification: float
    center: float
    d_enroll_traits: np.ndarray
    d_test_traits: np.ndarray
    d_enroll_embeddings: np.ndarray
    d_test_embeddings: np.ndarray
    d_class_weights: np.ndarray


def total_loss(
    batch: PairBatch,
    weights: LossWeights,
    aam_config: AamConfig,
    class_weights: np.ndarray,
    with_classification: bool = True,
) -> LossOutput:
    """Sum of the classification, verification and center losses on one batch.

    The classification term runs over the 2K embeddings (enrollments then
    tests) with each speaker's label repeated. Trait gradients from the
    verification and center terms are combined per side.
    """
    if batch.n_speakers < 2:
        raise BatchError("pair batch training needs >= 2 speakers")
    l_veri, d_enroll_traits, d_test_traits = trait_verification_loss(
        batch.enroll_traits, batch.enroll_present,
        batch.test_traits, batch.test_present,
        weights.alpha, weights.beta,
    )
    l_center_e, d_center_e = trait_center_loss(
        batch.enroll_traits, batch.enroll_present, weights.gamma
    )
    l_center_t, d_center_t = trait_center_loss(
        batch.test_traits, batch.test_present, weights.gamma
    )
    l_center = l_center_e + l_center_t
    d_enroll_traits = d_enroll_traits + d_center_e
    d_test_traits = d_test_traits + d_center_t

    k = batch.n_speakers
    if with_classification:
        stacked = np.concatenate([batch.enroll_embeddings, batch.test_embeddings])
        labels = np.concatenate([batch.class_labels, batch.class_labels])
        l_aam, d_emb, d_class_weights = aam_softmax_loss(
            stacked, labels, class_weights, aam_config
        )
        d_enroll_emb, d_test_emb = d_emb[:k], d_emb[k:]
    else:
        l_aam = 0.0
        d_enroll_emb = np.zeros_like(batch.enroll_embeddings)
        d_test_emb = np.zeros_like(batch.test_embeddings)
        d_class_weights = np.zeros_like(np.asarray(class_weights, dtype=np.float64))

    return LossOutput(
        total=l_aam + l_veri + l_center,
        classification=l_aam,
        verification=l_veri,
        center=l_center,
        d_enroll_traits=d_enroll_traits,
        d_test_traits=d_test_traits,
        d_enroll_embeddings=d_enroll_emb,
        d_test_embeddings=d_test_emb,
        d_class_weights=d_class_weights,
    )


LOSS_LOG_HEADER = "step,L_all,L_AAM,L_veri,L_center"


def format_loss_log_line(step: int, total: float, classification: float,
                         verification: float, center: float) -> str:
    return f"{step},{repr(float(total))},{repr(float(classification))}," \
           f"{repr(float(verification))},{repr(float(center))}"
