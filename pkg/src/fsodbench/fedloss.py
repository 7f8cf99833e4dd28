"""Federated BCE over a class subset, FedLoss negative sampling and pseudo-negatives.

Every loss is the mean binary cross-entropy over the ``R x |S|`` cells of
the selected class columns; columns outside ``S`` get exactly zero gradient.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Union

import numpy as np

# nuImages and LVIS class-subset sizes used for FedLoss fine-tuning
NUIMAGES_SUBSET_SIZE = 6
LVIS_SUBSET_SIZE = 50
PSEUDO_LABEL_THRESHOLD = 0.2


class Provenance(str, enum.Enum):
    SAMPLED_FEDLOSS = "fedloss"
    PSEUDO_NEGATIVE = "pseudo_negative"
    TRUE_NEGATIVE = "true_negative"
    EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True)
class ClassSubset:
    classes: frozenset
    provenance: Provenance

    def __contains__(self, c) -> bool:
        return c in self.classes

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(sorted(self.classes))

    def mask(self, num_classes: int) -> np.ndarray:
        m = np.zeros(num_classes, dtype=bool)
        m[sorted(self.classes)] = True
        return m


@dataclass
class LossReport:
    loss: float
    grad: np.ndarray


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_fedloss_subset(
    gt_classes: Iterable[int],
    freqs: Mapping[int, float],
    subset_size: int = NUIMAGES_SUBSET_SIZE,
    seed: Union[int, np.random.Generator, None] = 0,
) -> ClassSubset:
    """Ground-truth classes plus negatives drawn by square-root frequency.

    Negatives are drawn one at a time without replacement; after each draw
    the remaining weights are renormalised. Zero-frequency classes are never
    drawn unless every remaining weight is zero, in which case the draw is
    uniform. ``seed`` may be an existing ``numpy.random.Generator``.
    """
    gt = set(gt_classes)
    if subset_size < len(gt):
        raise ValueError(f"subset_size {subset_size} is smaller than the {len(gt)} GT classes")
    if freqs and min(freqs.values()) < 0:
        raise ValueError("class frequencies must be non-negative")
    rng = _rng(seed)
    pool = [c for c in sorted(freqs) if c not in gt]
    weights = [math.sqrt(freqs[c]) for c in pool]
    chosen = set(gt)
    for _ in range(min(subset_size - len(gt), len(pool))):
        total = math.fsum(weights)
        if total > 0:
            i = _weighted_index(weights, rng.random() * total)
        else:
            live = [j for j, c in enumerate(pool) if c is not None]
            i = live[int(rng.integers(len(live)))]
        chosen.add(pool[i])
        pool[i] = None
        weights[i] = 0.0
    return ClassSubset(frozenset(chosen), Provenance.SAMPLED_FEDLOSS)


def _weighted_index(weights, target):
    """First index whose cumulative weight exceeds ``target``; skips zero weights."""
    acc = 0.0
    last = 0
    for i, w in enumerate(weights):
        if w <= 0:
            continue
        acc += w
        last = i
        if target < acc:
            return i
    return last


def sqrt_frequency_distribution(freqs: Mapping[int, float], exclude=()) -> dict:
    """Single-draw negative selection probabilities."""
    pool = {c: np.sqrt(f) for c, f in freqs.items() if c not in set(exclude)}
    total = sum(pool.values())
    if total == 0:
        return {c: 1.0 / len(pool) for c in pool}
    return {c: w / total for c, w in pool.items()}


def max_scores_per_class(detections, num_classes: Optional[int] = None) -> dict:
    """Max confidence per class over one image's detections.

    ``detections`` yields objects with ``category_id`` and ``score``.
    """
    out = {c: 0.0 for c in range(num_classes)} if num_classes else {}
    for det in detections:
        out[det.category_id] = max(out.get(det.category_id, 0.0), det.score)
    return out


def pseudo_positive_filter(scores: Mapping[int, float], thresh: float = PSEUDO_LABEL_THRESHOLD) -> set:
    # inclusive: "at least" the threshold counts as positive
    if not 0.0 < thresh < 1.0:
        raise ValueError("thresh must lie in (0, 1)")
    return {c for c, s in scores.items() if s >= thresh}


def get_negatives(pseudo_pos: Iterable[int], all_classes: Iterable[int]) -> set:
    return set(all_classes) - set(pseudo_pos)


def select_classes(neg: Iterable[int], gt_classes: Iterable[int]) -> ClassSubset:
    return ClassSubset(frozenset(neg) | frozenset(gt_classes), Provenance.PSEUDO_NEGATIVE)


def pseudo_negative_subset(
    scores: Mapping[int, float],
    gt_classes: Iterable[int],
    all_classes: Iterable[int],
    thresh: float = PSEUDO_LABEL_THRESHOLD,
) -> ClassSubset:
    pos = pseudo_positive_filter(scores, thresh)
    return select_classes(get_negatives(pos, all_classes), gt_classes)


def true_negative_subset(
    present_classes: Iterable[int], gt_classes: Iterable[int], all_classes: Iterable[int]
) -> ClassSubset:
    """Oracle subset: every class truly absent from the image, plus GT classes."""
    neg = set(all_classes) - set(present_classes)
    return ClassSubset(frozenset(neg | set(gt_classes)), Provenance.TRUE_NEGATIVE)


def exhaustive_subset(all_classes: Iterable[int]) -> ClassSubset:
    return ClassSubset(frozenset(all_classes), Provenance.EXHAUSTIVE)


def _check_inputs(logits, targets, subset):
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if z.ndim != 2 or z.shape != t.shape:
        raise ValueError(f"logits {z.shape} and targets {t.shape} must be equal 2-D shapes")
    if z.shape[1] < 1:
        raise ValueError("need at least one class column")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("targets must be binary")
    bad = [c for c in subset.classes if not 0 <= c < z.shape[1]]
    if bad:
        raise ValueError(f"subset classes out of range: {sorted(bad)}")
    return z, t


def federated_bce(logits, targets, subset: ClassSubset) -> LossReport:
    z, t = _check_inputs(logits, targets, subset)
    grad = np.zeros_like(z)
    n = z.shape[0] * len(subset)
    if n == 0:
        return LossReport(0.0, grad)
    cols = np.array(sorted(subset.classes))
    zs, ts = z[:, cols], t[:, cols]
    # log(1 + e^z) - t*z, without overflow
    cell = np.maximum(zs, 0.0) - zs * ts + np.log1p(np.exp(-np.abs(zs)))
    grad[:, cols] = (sigmoid(zs) - ts) / n
    return LossReport(float(cell.sum() / n), grad)


def finite_difference_check(logits, targets, subset: ClassSubset, epsilon: float = 1e-5) -> float:
    """Max relative error between the analytic and central-difference gradient."""
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    z, t = _check_inputs(logits, targets, subset)
    analytic = federated_bce(z, t, subset).grad
    numeric = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += epsilon
        zm[idx] -= epsilon
        numeric[idx] = (federated_bce(zp, t, subset).loss - federated_bce(zm, t, subset).loss) / (
            2 * epsilon
        )
    if z.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))
