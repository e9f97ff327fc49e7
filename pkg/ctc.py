#!/usr/bin/env python3
"""
Connectionist temporal classification
Log-space forward-backward loss, best-path decoding and label error rates
The blank is the last label index (K-1)
"""

import logging
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from errors import ContractViolation, InfeasibleTargetError

logger = logging.getLogger(__name__)

LabelSeq = Tuple[int, ...]


def required_frames(target: Sequence[int]) -> int:
    """Minimum number of frames an alignment of the target needs"""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _check(posteriors: np.ndarray, target: Sequence[int]) -> Tuple[np.ndarray, LabelSeq]:
    posteriors = np.asarray(posteriors, dtype=float)
    if posteriors.ndim != 2 or posteriors.shape[0] < 1 or posteriors.shape[1] < 2:
        raise ContractViolation(f"posteriors must be T x K with T >= 1, K >= 2, got shape {posteriors.shape}")
    blank = posteriors.shape[1] - 1
    target = tuple(int(label) for label in target)
    if any(not 0 <= label < blank for label in target):
        raise ContractViolation(f"target labels must lie in [0, {blank - 1}], got {target}")
    needed = required_frames(target)
    if needed > posteriors.shape[0]:
        raise InfeasibleTargetError(len(target), needed, posteriors.shape[0])
    return posteriors, target


def _shift_right(x: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(x, -np.inf)
    if k < len(x):
        out[k:] = x[:-k]
    return out


def _shift_left(x: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(x, -np.inf)
    if k < len(x):
        out[:-k] = x[k:]
    return out


def _forward_backward(log_probs: np.ndarray, target: LabelSeq):
    """
    Log-space alpha (including the current frame) and beta (excluding it)

    Returns:
        alpha, beta of shape (T, S), the extended label sequence and log P(target)
    """
    frames, labels = log_probs.shape
    blank = labels - 1
    extended = np.full(2 * len(target) + 1, blank)
    extended[1::2] = target
    size = len(extended)

    # s-2 transitions allowed into non-blank labels that differ from l'_{s-2}
    skip = np.zeros(size, dtype=bool)
    skip[2:] = (extended[2:] != blank) & (extended[2:] != extended[:-2])

    skip_from = np.zeros(size, dtype=bool)
    skip_from[:-2] = skip[2:]

    emit = log_probs[:, extended]
    alpha = np.full((frames, size), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if size > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, frames):
        prev = alpha[t - 1]
        jump = np.where(skip, _shift_right(prev, 2), -np.inf)
        alpha[t] = emit[t] + np.logaddexp(np.logaddexp(prev, _shift_right(prev, 1)), jump)

    beta = np.full((frames, size), -np.inf)
    beta[-1, -1] = 0.0
    if size > 1:
        beta[-1, -2] = 0.0
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        jump = np.where(skip_from, _shift_left(nxt, 2), -np.inf)
        beta[t] = np.logaddexp(np.logaddexp(nxt, _shift_left(nxt, 1)), jump)

    ends = alpha[-1, -2:] if size > 1 else alpha[-1, -1:]
    return alpha, beta, extended, float(logsumexp(ends))


def _occupancy(alpha, beta, extended, log_total, labels: int) -> np.ndarray:
    """Posterior probability that frame t emits label k, summed over alignments"""
    frames = alpha.shape[0]
    joint = alpha + beta - log_total
    occupancy = np.zeros((frames, labels))
    for k in np.unique(extended):
        occupancy[:, k] = np.exp(logsumexp(joint[:, extended == k], axis=1))
    return occupancy


def ctc_loss(posteriors, target: Sequence[int]) -> Tuple[float, np.ndarray]:
    """
    Negative log likelihood of a target under per-frame label posteriors

    Args:
        posteriors: T x K rows summing to one, blank last
        target: Labels in [0, K-2]

    Returns:
        Tuple of -log P(target) and its gradient w.r.t. the posteriors
    """
    posteriors, target = _check(posteriors, target)
    with np.errstate(divide='ignore'):
        log_probs = np.log(posteriors)
    alpha, beta, extended, log_total = _forward_backward(log_probs, target)
    if not np.isfinite(log_total):
        raise InfeasibleTargetError(len(target), required_frames(target), posteriors.shape[0])
    occupancy = _occupancy(alpha, beta, extended, log_total, posteriors.shape[1])
    with np.errstate(divide='ignore', invalid='ignore'):
        grad = np.where(occupancy > 0.0, -occupancy / posteriors, 0.0)
    return -log_total, grad


def ctc_logit_gradient(posteriors, target: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the pre-softmax logits (posterior minus occupancy)"""
    posteriors, target = _check(posteriors, target)
    with np.errstate(divide='ignore'):
        log_probs = np.log(posteriors)
    alpha, beta, extended, log_total = _forward_backward(log_probs, target)
    if not np.isfinite(log_total):
        raise InfeasibleTargetError(len(target), required_frames(target), posteriors.shape[0])
    occupancy = _occupancy(alpha, beta, extended, log_total, posteriors.shape[1])
    return -log_total, posteriors - occupancy


def best_path_decode(posteriors) -> LabelSeq:
    """Per-frame argmax, repeats collapsed, blanks dropped"""
    posteriors = np.asarray(posteriors, dtype=float)
    blank = posteriors.shape[1] - 1
    best = np.argmax(posteriors, axis=1)
    labels: List[int] = []
    previous = None
    for label in best:
        label = int(label)
        if label != previous and label != blank:
            labels.append(label)
        previous = label
    return tuple(labels)


def edit_distance(hyp: Sequence[int], ref: Sequence[int]) -> int:
    """Levenshtein distance with unit insertion, deletion and substitution costs"""
    row = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        diagonal, row[0] = row[0], i
        for j, r in enumerate(ref, 1):
            diagonal, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, diagonal + (h != r))
    return row[-1]


def label_error_rate(hyp: Sequence[int], ref: Sequence[int]) -> float:
    """Edit distance over reference length (over 1 for an empty reference)"""
    return edit_distance(hyp, ref) / max(1, len(ref))


def corpus_label_error_rate(pairs: Iterable[Tuple[Sequence[int], Sequence[int]]]) -> Dict[str, float]:
    """
    Label error rate over a corpus

    Returns:
        'micro': total distance / total reference length,
        'macro': mean of per-sample rates, plus the raw totals
    """
    distance = 0
    length = 0
    rates = []
    for hyp, ref in pairs:
        d = edit_distance(hyp, ref)
        distance += d
        length += len(ref)
        rates.append(d / max(1, len(ref)))
    return {
        'micro': distance / max(1, length),
        'macro': float(np.mean(rates)) if rates else 0.0,
        'distance': distance,
        'reference_length': length,
        'samples': len(rates),
    }
