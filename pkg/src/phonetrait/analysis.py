"""Evaluation and explanation analysis over scored trials.

Covers the detection metrics (equal error rate, minimum normalised detection
cost), the agreement between decision scores and their per-phone evidence,
and a per-phone discriminability ratio computed by resampling trial evidence.

Detection metrics follow the accept-if-score-at-least-threshold convention
and consider every observed score as a candidate threshold plus one virtual
reject-all point, so ties are handled exactly rather than by sorting tricks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import PhoneInventory, atomic_write
from .errors import ConfigurationError, NumericGuardError, ParseError
from .scoring import ScoreRecord, TraitSimilarityVector


def _split_by_label(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ConfigurationError("scores and labels must be matching 1-d arrays")
    if not np.isfinite(scores).all():
        raise ConfigurationError("scores must be finite")
    target = np.sort(scores[labels == 1])
    nontarget = np.sort(scores[labels == 0])
    if target.size == 0 or nontarget.size == 0:
        raise ConfigurationError(
            "metrics need at least one target and one non-target trial"
        )
    return target, nontarget


def _operating_points(
    target: np.ndarray, nontarget: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(thresholds, far, frr) at every distinct score plus a reject-all point."""
    thresholds = np.unique(np.concatenate([target, nontarget]))
    # One step above the maximum rejects everything.
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    far = (nontarget.size - np.searchsorted(nontarget, thresholds, side="left")) / nontarget.size
    frr = np.searchsorted(target, thresholds, side="left") / target.size
    return thresholds, far, frr


def compute_eer(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Equal error rate and the threshold where it occurs.

    Walks the operating points in threshold order and linearly interpolates
    between the last point with FRR < FAR and the first with FRR >= FAR; an
    exact tie needs no interpolation.

    Returns (eer, threshold).
    """
    target, nontarget = _split_by_label(scores, labels)
    thresholds, far, frr = _operating_points(target, nontarget)
    gap = frr - far
    k = int(np.argmax(gap >= 0.0))
    if gap[k] == 0.0:
        return float(far[k]), float(thresholds[k])
    # gap is -1 at the lowest threshold and +1 at the reject-all point, so a
    # sign change always exists and k >= 1 here.
    lam = -gap[k - 1] / (gap[k] - gap[k - 1])
    eer = far[k - 1] + lam * (far[k] - far[k - 1])
    threshold = thresholds[k - 1] + lam * (thresholds[k] - thresholds[k - 1])
    return float(eer), float(threshold)


def compute_min_dcf(
    scores: np.ndarray,
    labels: np.ndarray,
    p_target: float = 0.01,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
) -> tuple[float, float]:
    """Minimum normalised detection cost over all candidate thresholds.

    Cost at a threshold is c_miss*p_target*FRR + c_fa*(1-p_target)*FAR,
    normalised by the better of the two trivial systems (accept all or
    reject all).

    Returns (min_dcf, threshold).
    """
    if not 0.0 < p_target < 1.0:
        raise ConfigurationError("p_target must be in (0, 1)")
    if c_miss <= 0 or c_fa <= 0:
        raise ConfigurationError("c_miss and c_fa must be > 0")
    target, nontarget = _split_by_label(scores, labels)
    thresholds, far, frr = _operating_points(target, nontarget)
    cost = c_miss * p_target * frr + c_fa * (1.0 - p_target) * far
    cost /= min(c_miss * p_target, c_fa * (1.0 - p_target))
    k = int(np.argmin(cost))
    return float(cost[k]), float(thresholds[k])


@dataclass
class MetricReport:
    eer: float
    min_dcf: float
    threshold_at_eer: float
    n_target: int
    n_nontarget: int


def compute_metrics(
    scores: np.ndarray,
    labels: np.ndarray,
    p_target: float = 0.01,
    c_miss: float = 1.0,
    c_fa: float = 1.0,
) -> MetricReport:
    labels = np.asarray(labels)
    eer, threshold = compute_eer(scores, labels)
    min_dcf, _ = compute_min_dcf(scores, labels, p_target, c_miss, c_fa)
    return MetricReport(
        eer=eer,
        min_dcf=min_dcf,
        threshold_at_eer=threshold,
        n_target=int((labels == 1).sum()),
        n_nontarget=int((labels == 0).sum()),
    )


def labelled_scores(
    records: list[ScoreRecord], kind: str = "final"
) -> tuple[np.ndarray, np.ndarray]:
    """Pull (scores, labels) for labelled trials; kind 'evidence' skips
    trials whose evidence is undefined."""
    if kind not in ("final", "evidence"):
        raise ConfigurationError(f"kind must be 'final' or 'evidence', got {kind!r}")
    scores, labels = [], []
    for r in records:
        if r.label is None:
            continue
        value = r.final if kind == "final" else r.evidence
        if value is None:
            continue
        scores.append(value)
        labels.append(r.label)
    return np.array(scores, dtype=np.float64), np.array(labels, dtype=np.int64)


def pearson_correlation(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ConfigurationError("correlation needs matching 1-d arrays")
    if x.size < 2:
        raise NumericGuardError("correlation needs at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom < 1e-12:
        raise NumericGuardError("correlation undefined for a constant score set")
    return float((xc * yc).sum() / denom)


def explainability_correlation(records: list[ScoreRecord]) -> float:
    """Pearson correlation between final scores and their evidence scores."""
    pairs = [(r.final, r.evidence) for r in records if r.evidence is not None]
    if len(pairs) < 2:
        raise NumericGuardError("need >= 2 trials with defined evidence")
    finals, evidences = zip(*pairs)
    return pearson_correlation(np.array(finals), np.array(evidences))


# ---------------------------------------------------------------------------
# per-phone discriminability
# ---------------------------------------------------------------------------

@dataclass
class FRatioRow:
    """Resampled same/different-speaker evidence summary for one phone."""

    phone: str
    within_mean: float   # NaN when excluded
    between_mean: float  # NaN when excluded
    ratio: float         # NaN when excluded
    n_available: int
    included: bool


def f_ratio(
    records: list[ScoreRecord],
    inventory: PhoneInventory,
    n_samples: int = 500,
    seed: int = 0,
) -> list[FRatioRow]:
    """Per-phone ratio of resampled same-speaker to different-speaker evidence.

    For each phone, the within pool holds its defined per-phone cosines from
    target trials and the between pool those from non-target trials. Each pool
    is summarised by the mean of ``n_samples`` draws with replacement; the row
    is excluded (flagged, statistics NaN) when either pool has fewer than
    ``n_samples`` values. Each phone consumes its own spawned random stream,
    so excluding one phone never changes another phone's draws.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(inventory.size)
    rows = []
    any_pool = False
    for i, phone in enumerate(inventory.labels):
        within, between = [], []
        for r in records:
            if r.label is None or not r.similarity.defined[i]:
                continue
            (within if r.label == 1 else between).append(r.similarity.values[i])
        if within or between:
            any_pool = True
        n_available = min(len(within), len(between))
        if n_available < n_samples:
            rows.append(FRatioRow(phone, np.nan, np.nan, np.nan, n_available, False))
            continue
        rng = np.random.default_rng(streams[i])
        within_mean = float(rng.choice(np.array(within), size=n_samples, replace=True).mean())
        between_mean = float(rng.choice(np.array(between), size=n_samples, replace=True).mean())
        if between_mean == 0.0:
            ratio = np.inf if within_mean > 0.0 else np.nan
        else:
            ratio = within_mean / between_mean
        rows.append(FRatioRow(phone, within_mean, between_mean, float(ratio), n_available, True))
    if not any_pool:
        raise ConfigurationError("no phone has any labelled similarity value to sample from")
    return rows


_NA = "NA"
FRATIO_HEADER = "phone,within,between,ratio,included"


def save_f_ratio(rows: list[FRatioRow], path) -> None:
    def cell(x: float) -> str:
        return _NA if np.isnan(x) else repr(float(x))

    with atomic_write(path) as f:
        f.write(FRATIO_HEADER + "\n")
        for row in rows:
            f.write(
                f"{row.phone},{cell(row.within_mean)},{cell(row.between_mean)},"
                f"{cell(row.ratio)},{int(row.included)}\n"
            )


def load_f_ratio(path) -> list[FRatioRow]:
    rows = []
    with open(path) as f:
        lines = [line.rstrip("\n") for line in f]
    if not lines or lines[0] != FRATIO_HEADER:
        raise ParseError(path, 1, f"expected header {FRATIO_HEADER!r}")
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != 5:
            raise ParseError(path, line_no, f"expected 5 comma-separated fields, got {len(cells)}")
        phone, within_s, between_s, ratio_s, included_s = cells
        if included_s not in ("0", "1"):
            raise ParseError(path, line_no, f"included must be 1 or 0, got {included_s!r}")
        try:
            within = np.nan if within_s == _NA else float(within_s)
            between = np.nan if between_s == _NA else float(between_s)
            ratio = np.nan if ratio_s == _NA else float(ratio_s)
        except ValueError:
            raise ParseError(path, line_no, "non-numeric ratio value") from None
        rows.append(FRatioRow(phone, within, between, ratio, 0, included_s == "1"))
    return rows


# ---------------------------------------------------------------------------
# per-trial explanation files
# ---------------------------------------------------------------------------

def export_explanation(record: ScoreRecord, inventory: PhoneInventory, path) -> None:
    """Write one trial's scores and per-phone evidence as a readable file."""
    if record.similarity.values.shape[0] != inventory.size:
        raise ConfigurationError(
            f"record has {record.similarity.values.shape[0]} phones, "
            f"inventory has {inventory.size}"
        )
    with atomic_write(path) as f:
        f.write(f"enroll {record.enroll_id}\n")
        f.write(f"test {record.test_id}\n")
        f.write(f"label {_NA if record.label is None else record.label}\n")
        f.write(f"final {repr(float(record.final))}\n")
        evidence = _NA if record.evidence is None else repr(float(record.evidence))
        f.write(f"evidence {evidence}\n")
        for i, phone in enumerate(inventory.labels):
            if record.similarity.defined[i]:
                f.write(f"trait\t{phone}\t{repr(float(record.similarity.values[i]))}\n")
            else:
                f.write(f"trait\t{phone}\t{_NA}\n")


def load_explanation(path, inventory: PhoneInventory) -> ScoreRecord:
    """Parse an exported explanation back into an equivalent ScoreRecord."""
    header: dict[str, str] = {}
    values = np.full(inventory.size, np.nan)
    defined = np.zeros(inventory.size, dtype=bool)
    with open(path) as f:
        lines = [line.rstrip("\n") for line in f]
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("trait\t"):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected trait<TAB>phone<TAB>value, got {line!r}")
            _, phone, cell = parts
            if phone not in inventory:
                raise ParseError(path, line_no, f"phone label {phone!r} not in inventory")
            if cell == _NA:
                continue
            try:
                values[inventory.index_of(phone)] = float(cell)
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric similarity {cell!r}") from None
            defined[inventory.index_of(phone)] = True
        else:
            key, sep, value = line.partition(" ")
            if not sep:
                raise ParseError(path, line_no, f"expected 'key value', got {line!r}")
            header[key] = value
    for key in ("enroll", "test", "label", "final", "evidence"):
        if key not in header:
            raise ParseError(path, len(lines), f"missing header field {key!r}")
    try:
        label = None if header["label"] == _NA else int(header["label"])
        final = float(header["final"])
        evidence = None if header["evidence"] == _NA else float(header["evidence"])
    except ValueError as exc:
        raise ParseError(path, 1, f"bad header value: {exc}") from None
    return ScoreRecord(
        enroll_id=header["enroll"],
        test_id=header["test"],
        label=label,
        final=final,
        evidence=evidence,
        similarity=TraitSimilarityVector(values, defined),
    )


# ---------------------------------------------------------------------------
# key-value report files
# ---------------------------------------------------------------------------

def write_report(entries: list[tuple[str, object]], path) -> None:
    """Write ``key value`` lines; floats rendered with repr for round-trips."""
    with atomic_write(path) as f:
        for key, value in entries:
            rendered = repr(float(value)) if isinstance(value, float) else str(value)
            f.write(f"{key} {rendered}\n")


def read_report(path) -> dict[str, str]:
    out = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            key, sep, value = line.rstrip("\n").partition(" ")
            if not sep:
                raise ParseError(path, line_no, f"expected 'key value', got {line!r}")
            out[key] = value
    return out
