"""Optimal bipartite assignment of predicted queries to ground-truth regions.

The optimizer is scipy's Jonker-Volgenant solver; on top of it we fix a
deterministic tie rule by greedily extracting the lexicographically smallest
optimal pair set, so golden tests never flap on degenerate costs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ShapeError, as_matrix
from .losses import dice_loss, focal_loss

# Relative slack when testing whether a forced pair preserves optimality.
_COST_RTOL = 1e-9


@dataclass
class AssignmentResult:
    """Matched (query, ground truth) pairs plus the queries left unmatched."""

    pairs: list[tuple[int, int]]
    unmatched_queries: list[int]
    total_cost: float


def _optimal_cost(cost: np.ndarray, rows: list[int], cols: list[int]) -> float:
    """Minimum cost of assigning min(|rows|, |cols|) pairs inside a submatrix."""
    if not rows or not cols:
        return 0.0
    sub = cost[np.ix_(rows, cols)]
    ri, ci = linear_sum_assignment(sub)
    return float(sub[ri, ci].sum())


def hungarian(cost) -> AssignmentResult:
    """Minimum-cost bipartite assignment with deterministic tie-breaking.

    Rows are queries and columns are ground truths; rectangular inputs are
    fine and min(rows, cols) pairs are produced. Among all optimal
    assignments the lexicographically smallest pair set is returned: each
    query in index order is matched to the smallest ground-truth index that
    still permits an optimal completion.
    """
    cost = as_matrix(cost, "cost")
    n_rows, n_cols = cost.shape
    rows = list(range(n_rows))
    cols = list(range(n_cols))
    pairs: list[tuple[int, int]] = []
    unmatched: list[int] = []

    while rows and cols:
        r = rows[0]
        rest = rows[1:]
        best = _optimal_cost(cost, rows, cols)
        tol = _COST_RTOL * max(1.0, abs(best))
        chosen = -1
        best_seen = np.inf
        for c in cols:
            others = [cc for cc in cols if cc != c]
            val = cost[r, c] + _optimal_cost(cost, rest, others)
            if val <= best + tol:
                chosen = c
                break
            if val < best_seen:
                best_seen = val
                fallback = c
        if chosen < 0 and len(rows) <= len(cols):
            # Every row must be matched when columns are plentiful; reaching
            # here means the tolerance was too tight, so take the best column.
            chosen = fallback
        if chosen < 0:
            # r is unmatched in every optimal assignment (only possible when
            # rows outnumber columns).
            unmatched.append(r)
        else:
            pairs.append((r, chosen))
            cols.remove(chosen)
        rows = rest

    unmatched.extend(rows)
    total = float(sum(cost[r, c] for r, c in pairs))
    return AssignmentResult(pairs, unmatched, total)


def build_assignment_cost(
    query_class_probs,
    query_masks,
    gt_classes,
    gt_masks,
    lambda_mask: float = 1.0,
) -> np.ndarray:
    """Set-prediction matching cost between queries and ground-truth regions.

    cost(q, g) = -P[q, class(g)] + lambda_mask * (dice + focal)(mask_q, mask_g)
    """
    probs = as_matrix(query_class_probs, "query_class_probs")
    n_queries = probs.shape[0]
    if len(query_masks) != n_queries:
        raise ShapeError(
            f"{len(query_masks)} query masks for {n_queries} probability rows"
        )
    if len(gt_classes) != len(gt_masks):
        raise ShapeError(
            f"{len(gt_classes)} ground-truth classes for {len(gt_masks)} masks"
        )
    for g in gt_classes:
        if not (0 <= g < probs.shape[1]):
            raise IndexError(f"ground-truth class {g} outside probability row")

    cost = np.zeros((n_queries, len(gt_classes)))
    for qi in range(n_queries):
        for gi, (g_cls, g_mask) in enumerate(zip(gt_classes, gt_masks)):
            c = -probs[qi, g_cls]
            if lambda_mask != 0.0:
                c += lambda_mask * (
                    dice_loss(query_masks[qi], g_mask).value
                    + focal_loss(query_masks[qi], g_mask).value
                )
            cost[qi, gi] = c
    return cost
