"""Deliberately naive reference implementations used to certify the package.

Everything here trades speed for obviousness: explicit Python loops, direct
counting, no vectorised shortcuts. Tests compare the package's optimised
code against these.
"""

from __future__ import annotations

import math

import numpy as np


def central_difference(loss_fn, array: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of loss_fn() w.r.t. one array, in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + step
        upper = loss_fn()
        flat[i] = saved - step
        lower = loss_fn()
        flat[i] = saved
        flat_grad[i] = (upper - lower) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    rel = np.abs(analytic - numeric) / np.maximum(
        np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6
    )
    return float(rel.max())


def naive_encode(config, weights, biases, features: np.ndarray) -> np.ndarray:
    """Per-frame re-implementation of the context-window encoder."""
    x = np.asarray(features, dtype=np.float64)
    for layer, w, b in zip(config.layers, weights, biases):
        n_frames = x.shape[0]
        out = np.zeros((n_frames, layer.output_dim))
        for t in range(n_frames):
            ctx = []
            for off in layer.context_offsets:
                src = min(max(t + off, 0), n_frames - 1)
                ctx.extend(x[src])
            pre = w @ np.array(ctx) + b
            if layer.nonlinearity == "relu":
                pre = np.array([max(v, 0.0) for v in pre])
            out[t] = pre
        x = out
    return x


def naive_traits(frame_embeddings: np.ndarray, frame_phones, n_phones: int):
    """Group-by-phone mean with dictionaries; returns (traits, present)."""
    groups: dict[int, list[np.ndarray]] = {}
    for t, phone in enumerate(frame_phones):
        groups.setdefault(int(phone), []).append(frame_embeddings[t])
    dim = frame_embeddings.shape[1]
    traits = np.zeros((n_phones, dim))
    present = np.zeros(n_phones, dtype=bool)
    for phone, rows in groups.items():
        mean = np.zeros(dim)
        for row in rows:
            mean += row
        mean /= len(rows)
        if any(v != 0.0 for v in mean):
            traits[phone] = mean
            present[phone] = True
    return traits, present


def naive_cosine(a, b) -> float:
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return num / (na * nb)


def _error_rates_at(threshold: float, target, nontarget) -> tuple[float, float]:
    """Direct counting of (far, frr) under accept-iff-score>=threshold."""
    false_accepts = sum(1 for s in nontarget if s >= threshold)
    false_rejects = sum(1 for s in target if s < threshold)
    return false_accepts / len(nontarget), false_rejects / len(target)


def sweep_eer(scores, labels) -> tuple[float, float]:
    """Exhaustive-threshold EER: scan every candidate point, interpolate."""
    target = [s for s, l in zip(scores, labels) if l == 1]
    nontarget = [s for s, l in zip(scores, labels) if l == 0]
    thresholds = sorted(set(target) | set(nontarget))
    thresholds.append(thresholds[-1] + 1.0)
    points = [_error_rates_at(t, target, nontarget) for t in thresholds]
    prev_gap = None
    for k, (far, frr) in enumerate(points):
        gap = frr - far
        if gap == 0.0:
            return far, thresholds[k]
        if gap > 0.0:
            far_prev, frr_prev = points[k - 1]
            lam = -prev_gap / (gap - prev_gap)
            eer = far_prev + lam * (far - far_prev)
            threshold = thresholds[k - 1] + lam * (thresholds[k] - thresholds[k - 1])
            return eer, threshold
        prev_gap = gap
    raise AssertionError("no crossing found")


def sweep_min_dcf(scores, labels, p_target=0.01, c_miss=1.0, c_fa=1.0) -> tuple[float, float]:
    target = [s for s, l in zip(scores, labels) if l == 1]
    nontarget = [s for s, l in zip(scores, labels) if l == 0]
    thresholds = sorted(set(target) | set(nontarget))
    thresholds.append(thresholds[-1] + 1.0)
    floor = min(c_miss * p_target, c_fa * (1.0 - p_target))
    best, best_threshold = None, None
    for t in thresholds:
        far, frr = _error_rates_at(t, target, nontarget)
        cost = (c_miss * p_target * frr + c_fa * (1.0 - p_target) * far) / floor
        if best is None or cost < best:
            best, best_threshold = cost, t
    return best, best_threshold
