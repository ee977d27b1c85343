"""Ensemble selection algorithms over a pool of prediction matrices.

Every selector takes the pool's validation predictions as a mapping from
member id to matrix and minimizes validation NLL (the ensemble loss used
throughout). Argmin ties always go to the smallest id, so selections are
deterministic and invariant to dict ordering.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .metrics import PROB_EPS, as_probs, nll

_WEIGHT_TOL = 1e-8


@dataclass(frozen=True)
class EnsembleSelection:
    """Ordered member ids with optional simplex weights."""

    member_ids: tuple
    weights: tuple | None = None
    with_replacement: bool = field(default=False, compare=False)

    def __post_init__(self):
        ids = tuple(self.member_ids)
        if len(ids) < 1:
            raise ValueError("selection must contain at least one member")
        if not self.with_replacement and len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in a without-replacement selection")
        object.__setattr__(self, "member_ids", ids)
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(ids):
                raise ValueError("weights must align with member_ids")
            if any(x < -_WEIGHT_TOL for x in w) or abs(sum(w) - 1.0) > _WEIGHT_TOL:
                raise ValueError("weights must be nonnegative and sum to 1")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.member_ids)

    def effective_weights(self) -> np.ndarray:
        if self.weights is not None:
            return np.asarray(self.weights)
        return np.full(len(self.member_ids), 1.0 / len(self.member_ids))


def _pool_arrays(pool_val_preds, y_val):
    """Sorted ids plus stacked true-class probability columns."""
    ids = sorted(pool_val_preds)
    if not ids:
        raise ValueError("empty pool")
    y = np.asarray(y_val, dtype=np.int64)
    rows = np.arange(len(y))
    mats = {}
    p_true = {}
    for i in ids:
        m = as_probs(pool_val_preds[i])
        if m.shape[0] != len(y):
            raise ValueError(f"member {i!r}: {m.shape[0]} rows vs {len(y)} labels")
        mats[i] = m
        p_true[i] = m[rows, y]
    return ids, mats, p_true, y


def _mean_nll_from_true(p_true_sum: np.ndarray, count: int) -> float:
    avg = np.clip(p_true_sum / count, PROB_EPS, 1.0)
    return float(-np.log(avg).mean())


def individual_nlls(pool_val_preds, y_val) -> dict:
    """Validation NLL of each pool member on its own."""
    ids, _, p_true, _ = _pool_arrays(pool_val_preds, y_val)
    return {i: float(-np.log(np.clip(p_true[i], PROB_EPS, 1.0)).mean()) for i in ids}


def forward_select(pool_val_preds, y_val, M: int, with_replacement: bool = False,
                   diversity_strength: float = 0.0) -> EnsembleSelection:
    """Greedy forward step-wise selection minimizing validation NLL.

    At each step the candidate whose addition gives the lowest ensemble
    NLL joins the selection. ``diversity_strength`` > 0 switches the step
    objective to NLL minus that multiple of the candidate ensemble's
    diversity (mean L2 distance between member rows and ensemble rows);
    zero reduces exactly to plain forward selection.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if diversity_strength < 0:
        raise ValueError("diversity_strength must be >= 0")
    ids, mats, p_true, y = _pool_arrays(pool_val_preds, y_val)
    if not with_replacement and len(ids) < M:
        raise ValueError(f"pool of {len(ids)} cannot fill M={M} without replacement")

    chosen: list = []
    sum_probs = np.zeros_like(mats[ids[0]])
    sum_true = np.zeros(len(y))
    for step in range(M):
        remaining = ids if with_replacement else [i for i in ids if i not in chosen]
        best_id, best_obj = None, math.inf
        for cand in remaining:
            obj = _mean_nll_from_true(sum_true + p_true[cand], step + 1)
            if diversity_strength > 0.0:
                ens = (sum_probs + mats[cand]) / (step + 1)
                members = [mats[c] for c in chosen] + [mats[cand]]
                div = float(np.mean(
                    [np.linalg.norm(m - ens, axis=1).mean() for m in members]
                ))
                obj -= diversity_strength * div
            if obj < best_obj:
                best_id, best_obj = cand, obj
        chosen.append(best_id)
        sum_probs = sum_probs + mats[best_id]
        sum_true = sum_true + p_true[best_id]
    return EnsembleSelection(tuple(chosen), with_replacement=with_replacement)


def forward_select_diverse(pool_val_preds, y_val, M: int,
                           diversity_strength: float) -> EnsembleSelection:
    """Forward selection with explicit diversity regularization."""
    return forward_select(pool_val_preds, y_val, M,
                          diversity_strength=diversity_strength)


def top_m(pool_val_preds, y_val, M: int) -> EnsembleSelection:
    """The M pool members with lowest individual validation NLL."""
    nlls = individual_nlls(pool_val_preds, y_val)
    if len(nlls) < M:
        raise ValueError(f"pool of {len(nlls)} cannot fill M={M}")
    order = sorted(nlls, key=lambda i: (nlls[i], i))
    return EnsembleSelection(tuple(order[:M]))


def quick_and_greedy(pool_val_preds, y_val, M: int) -> EnsembleSelection:
    """Add candidates in individual-NLL order, keeping only strict improvers.

    May return fewer than M members; every kept prefix strictly lowers
    validation NLL.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    ids, _, p_true, y = _pool_arrays(pool_val_preds, y_val)
    nlls = {i: float(-np.log(np.clip(p_true[i], PROB_EPS, 1.0)).mean()) for i in ids}
    order = sorted(ids, key=lambda i: (nlls[i], i))
    chosen = [order[0]]
    sum_true = p_true[order[0]].copy()
    current = _mean_nll_from_true(sum_true, 1)
    for cand in order[1:]:
        if len(chosen) >= M:
            break
        trial = _mean_nll_from_true(sum_true + p_true[cand], len(chosen) + 1)
        if trial < current:
            chosen.append(cand)
            sum_true += p_true[cand]
            current = trial
    return EnsembleSelection(tuple(chosen))


def stacking_select(pool_val_preds, y_val, M: int, weighted_output: bool = True,
                    step_size: float = 0.1, max_iters: int = 500,
                    tol: float = 1e-7) -> EnsembleSelection:
    """Learn simplex stacking weights, keep the M largest-weight members.

    Weights are fit by exponentiated gradient (mirror descent on the
    simplex) on validation NLL of the weighted probability average; the
    update keeps iterates strictly inside the simplex.
    """
    ids, _, p_true, y = _pool_arrays(pool_val_preds, y_val)
    k = len(ids)
    if k < M:
        raise ValueError(f"pool of {k} cannot fill M={M}")
    truth = np.stack([p_true[i] for i in ids])  # K x N
    w = np.full(k, 1.0 / k)

    def loss(weights):
        return float(-np.log(np.clip(weights @ truth, PROB_EPS, 1.0)).mean())

    prev = loss(w)
    converged = False
    for _ in range(max_iters):
        mix = np.clip(w @ truth, PROB_EPS, 1.0)
        grad = -(truth / mix).mean(axis=1)
        w = w * np.exp(-step_size * grad)
        w = w / w.sum()
        cur = loss(w)
        if prev - cur < tol:
            converged = True
            break
        prev = cur
    if not converged:
        warnings.warn("stacking weights did not converge; using best iterate")

    order = sorted(range(k), key=lambda j: (-w[j], ids[j]))[:M]
    order.sort(key=lambda j: ids[j])
    kept_ids = tuple(ids[j] for j in order)
    if weighted_output:
        kept_w = np.array([w[j] for j in order])
        kept_w = kept_w / kept_w.sum()
        return EnsembleSelection(kept_ids, weights=tuple(kept_w))
    return EnsembleSelection(kept_ids)


def bma_reweight(selection: EnsembleSelection, pool_val_preds, y_val,
                 scheme: str = "likelihood") -> EnsembleSelection:
    """Reweight an existing selection by validation likelihood or accuracy."""
    ids = selection.member_ids
    if not ids:
        raise ValueError("empty selection")
    y = np.asarray(y_val, dtype=np.int64)
    rows = np.arange(len(y))
    if scheme == "likelihood":
        # log-likelihood_i = -N * NLL_i; max-shift before exponentiating
        logliks = []
        for i in ids:
            m = as_probs(pool_val_preds[i])
            logliks.append(float(np.log(np.clip(m[rows, y], PROB_EPS, 1.0)).sum()))
        logliks = np.asarray(logliks)
        w = np.exp(logliks - logliks.max())
    elif scheme == "accuracy":
        accs = []
        for i in ids:
            m = as_probs(pool_val_preds[i])
            accs.append(float(np.mean(np.argmax(m, axis=1) == y)))
        w = np.asarray(accs)
        if w.sum() == 0:
            warnings.warn("all member accuracies are zero; falling back to uniform")
            w = np.ones(len(ids))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    w = w / w.sum()
    return EnsembleSelection(ids, weights=tuple(w),
                             with_replacement=selection.with_replacement)


def exhaustive_select(pool_val_preds, y_val, M: int,
                      max_combinations: int = 10 ** 6) -> EnsembleSelection:
    """Exact minimum-validation-NLL subset of size M (test oracle)."""
    ids, _, p_true, y = _pool_arrays(pool_val_preds, y_val)
    k = len(ids)
    if k < M:
        raise ValueError(f"pool of {k} cannot fill M={M}")
    if math.comb(k, M) > max_combinations:
        raise ValueError(f"C({k}, {M}) exceeds the {max_combinations} guard")
    best_ids, best_nll = None, math.inf
    for combo in itertools.combinations(ids, M):
        total = np.sum([p_true[i] for i in combo], axis=0)
        val = _mean_nll_from_true(total, M)
        if val < best_nll:
            best_ids, best_nll = combo, val
    return EnsembleSelection(best_ids)


def selection_nll(selection: EnsembleSelection, pool_preds, y) -> float:
    """NLL of a selection's (possibly weighted) average on the given pairing."""
    mats = np.stack([as_probs(pool_preds[i]) for i in selection.member_ids])
    w = selection.effective_weights()
    return nll(np.tensordot(w, mats, axes=1), y)
