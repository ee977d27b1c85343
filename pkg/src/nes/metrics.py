"""Prediction matrices and scalar evaluation metrics for ensembles.

All metrics operate on row-stochastic matrices of class probabilities
(one row per data point) paired with integer label vectors. Computation
is float64 throughout; probabilities are clamped to [PROB_EPS, 1] before
any logarithm so degenerate one-hot rows stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-12
ROW_SUM_TOL = 1e-6


class ShapeMismatchError(ValueError):
    """Raised when prediction matrices and labels disagree in shape."""


@dataclass(frozen=True)
class PredictionMatrix:
    """N x C matrix of class probabilities for one network on one split."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"expected 2-D matrix, got shape {p.shape}")
        n, c = p.shape
        if n < 1 or c < 2:
            raise ValueError(f"need N >= 1 and C >= 2, got ({n}, {c})")
        if np.any(p < -ROW_SUM_TOL) or np.any(p > 1 + ROW_SUM_TOL):
            raise ValueError("probabilities outside [0, 1]")
        row_sums = p.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
            worst = float(np.max(np.abs(row_sums - 1.0)))
            raise ValueError(f"rows must sum to 1 (worst deviation {worst:.3g})")
        object.__setattr__(self, "probs", p)

    @property
    def num_points(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class EvalReport:
    """Scalar metrics for one ensemble on one evaluation split."""

    nll: float
    error: float
    ece: float
    oracle_nll: float
    avg_bsl_nll: float
    pred_disagreement: float


def as_probs(pred) -> np.ndarray:
    """Accept a PredictionMatrix or raw array, return the float64 matrix."""
    if isinstance(pred, PredictionMatrix):
        return pred.probs
    p = np.asarray(pred, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {p.shape}")
    return p


def _check_pair(probs: np.ndarray, y: np.ndarray):
    if probs.shape[0] != y.shape[0]:
        raise ShapeMismatchError(
            f"{probs.shape[0]} prediction rows vs {y.shape[0]} labels"
        )
    if y.size and (y.min() < 0 or y.max() >= probs.shape[1]):
        raise ValueError("label index out of range")


def _as_labels(y) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError("labels must be a 1-D sequence of class indices")
    return arr.astype(np.int64)


def ensemble_average(members, weights=None, mode: str = "probability") -> PredictionMatrix:
    """Combine member predictions into one matrix.

    Probability mode averages rows directly (the default ensemble). Logit
    mode takes elementwise log of clamped probabilities, averages, and
    re-softmaxes.
    """
    if len(members) == 0:
        raise ValueError("empty member list")
    mats = [as_probs(m) for m in members]
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise ShapeMismatchError(f"member shapes differ: {shape} vs {m.shape}")
    if weights is None:
        w = np.full(len(mats), 1.0 / len(mats))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(mats),):
            raise ValueError(f"{len(mats)} members but {w.size} weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError("weights must be nonnegative and sum to 1")
    stack = np.stack(mats)
    if mode == "probability":
        out = np.tensordot(w, stack, axes=1)
    elif mode == "logit":
        logs = np.log(np.clip(stack, PROB_EPS, 1.0))
        avg = np.tensordot(w, logs, axes=1)
        avg -= avg.max(axis=1, keepdims=True)
        e = np.exp(avg)
        out = e / e.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    # guard against float drift before revalidation
    out = out / out.sum(axis=1, keepdims=True)
    return PredictionMatrix(out)


def nll(pred, y) -> float:
    """Mean negative log-likelihood of the true class, in nats per point."""
    probs = as_probs(pred)
    y = _as_labels(y)
    _check_pair(probs, y)
    p_true = np.clip(probs[np.arange(len(y)), y], PROB_EPS, 1.0)
    return float(-np.log(p_true).mean())


def predicted_classes(pred) -> np.ndarray:
    """Per-row argmax with ties broken toward the lowest class index."""
    return np.argmax(as_probs(pred), axis=1)


def classification_error(pred, y) -> float:
    probs = as_probs(pred)
    y = _as_labels(y)
    _check_pair(probs, y)
    return float(np.mean(predicted_classes(probs) != y))


def ece(pred, y, num_bins: int = 15) -> float:
    """Expected calibration error with equal-width right-closed bins.

    Confidence is the max row probability; bins partition (0, 1]; empty
    bins contribute zero.
    """
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    probs = as_probs(pred)
    y = _as_labels(y)
    _check_pair(probs, y)
    conf = probs.max(axis=1)
    correct = (predicted_classes(probs) == y).astype(np.float64)
    # bin b covers (b/B, (b+1)/B]; ceil maps a confidence to its bin
    idx = np.ceil(conf * num_bins).astype(int) - 1
    idx = np.clip(idx, 0, num_bins - 1)
    n = len(y)
    total = 0.0
    for b in range(num_bins):
        mask = idx == b
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        total += (cnt / n) * abs(correct[mask].mean() - conf[mask].mean())
    return float(total)


def oracle_nll(members, y) -> float:
    """Per-point minimum of member NLLs, averaged; the oracle ensemble loss."""
    if len(members) == 0:
        raise ValueError("empty member list")
    y = _as_labels(y)
    mats = [as_probs(m) for m in members]
    for m in mats:
        _check_pair(m, y)
    rows = np.arange(len(y))
    p_true = np.stack([np.clip(m[rows, y], PROB_EPS, 1.0) for m in mats])
    return float(-np.log(p_true.max(axis=0)).mean())


def avg_base_learner_nll(members, y) -> float:
    if len(members) == 0:
        raise ValueError("empty member list")
    return float(np.mean([nll(m, y) for m in members]))


def predictive_disagreement(members, y) -> float:
    """Mean pairwise argmax-disagreement normalized by mean member error.

    Returns 0 when both numerator and denominator are 0, and +inf when
    members disagree yet every member is individually perfect.
    """
    if len(members) < 2:
        raise ValueError("need at least 2 members")
    y = _as_labels(y)
    mats = [as_probs(m) for m in members]
    for m in mats:
        _check_pair(m, y)
    preds = np.stack([predicted_classes(m) for m in mats])
    m_cnt = len(mats)
    pair_dis = [
        np.mean(preds[i] != preds[j])
        for i in range(m_cnt)
        for j in range(i + 1, m_cnt)
    ]
    disagreement = float(np.mean(pair_dis))
    mean_error = float(np.mean([np.mean(preds[i] != y) for i in range(m_cnt)]))
    if mean_error == 0.0:
        return 0.0 if disagreement == 0.0 else float("inf")
    return disagreement / mean_error


def proposition1_check(members, y, slack: float = 1e-9):
    """Oracle <= ensemble <= average chain for probability averaging.

    Returns (oracle_nll, ensemble_nll, avg_bsl_nll, holds).
    """
    y = _as_labels(y)
    lo = oracle_nll(members, y)
    mid = nll(ensemble_average(members), y)
    hi = avg_base_learner_nll(members, y)
    holds = (lo <= mid + slack) and (mid <= hi + slack)
    return lo, mid, hi, holds


def evaluate_ensemble(members, y, weights=None, mode: str = "probability",
                      num_bins: int = 15) -> EvalReport:
    """Full metric report for an ensemble of prediction matrices."""
    combined = ensemble_average(members, weights=weights, mode=mode)
    dis = predictive_disagreement(members, y) if len(members) >= 2 else 0.0
    return EvalReport(
        nll=nll(combined, y),
        error=classification_error(combined, y),
        ece=ece(combined, y, num_bins=num_bins),
        oracle_nll=oracle_nll(members, y),
        avg_bsl_nll=avg_base_learner_nll(members, y),
        pred_disagreement=dis,
    )
