"""Bipartite matching between queries and ground truth.

The assignment cost follows the DETR family: a focal-style classification
cost plus L1 and GIoU box costs, weighted 1 / 5 / 2. Matching itself is
gradient-free.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .boxes import cxcywh_to_xyxy


@dataclass
class MatchAssignment:
    """Injective query<->ground-truth pairing plus bookkeeping.

    ``pairs`` is sorted by query index; ``total_cost`` is the sum of the
    paired cost entries in that order.
    """

    pairs: list[tuple[int, int]]
    unmatched_queries: list[int]
    total_cost: float
    pair_costs: list[float] = field(default_factory=list)

    @property
    def query_indices(self) -> np.ndarray:
        return np.array([q for q, _ in self.pairs], dtype=np.intp)

    @property
    def gt_indices(self) -> np.ndarray:
        return np.array([g for _, g in self.pairs], dtype=np.intp)


def giou(a, b) -> float:
    """Generalized IoU of two xyxy boxes, in [-1, 1]; symmetric.

    Degenerate (zero-area) boxes are an error: the hull/union ratio would
    be ill-defined.
    """
    a = np.asarray(a, dtype=np.float64).reshape(4)
    b = np.asarray(b, dtype=np.float64).reshape(4)
    for name, box in (("a", a), ("b", b)):
        if box[2] <= box[0] or box[3] <= box[1]:
            raise ValueError(f"giou: box {name} {box.tolist()} has no area")
    return float(kernels.pairwise_giou_xyxy(a[None], b[None])[0, 0])


def _pair_total(cost: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    """Sum pair costs in row-sorted order; the canonical total for equality tests."""
    pairs = sorted(pairs)
    if not pairs:
        return 0.0
    rows = np.array([p[0] for p in pairs])
    cols = np.array([p[1] for p in pairs])
    return float(np.sum(cost[rows, cols]))


def _lex_smallest_optimal(cost: np.ndarray, optimal_total: float) -> list[tuple[int, int]]:
    """Lexicographically smallest pair list among minimum-cost assignments.

    Fixes pairs row by row, testing each candidate column by re-solving the
    residual problem and keeping the choice iff the canonical total still
    equals the optimum exactly. Only invoked when ties are possible.
    """
    n, m = cost.shape
    k = min(n, m)
    fixed: list[tuple[int, int]] = []
    rows = list(range(n))
    cols = list(range(m))
    while len(fixed) < k:
        r = rows[0]
        chosen = None
        for c in cols:
            rest_rows = [x for x in rows if x != r]
            rest_cols = [x for x in cols if x != c]
            need = k - len(fixed) - 1
            sub_pairs: list[tuple[int, int]] = []
            if need > 0:
                sub = cost[np.ix_(rest_rows, rest_cols)]
                rr, cc = kernels.lap_solve(sub)
                sub_pairs = [(rest_rows[i], rest_cols[j]) for i, j in zip(rr, cc)]
            candidate = fixed + [(r, c)] + sub_pairs
            if _pair_total(cost, candidate) == optimal_total:
                chosen = c
                break
        if chosen is None:
            # no optimal solution matches this row (possible only when n > m)
            rows.remove(r)
            continue
        fixed.append((r, chosen))
        rows.remove(r)
        cols.remove(chosen)
    return fixed


def hungarian(cost: np.ndarray) -> MatchAssignment:
    """Minimum-total-cost assignment of min(n, m) pairs.

    Deterministic tie-break: among equal-cost optima the lexicographically
    smallest pair list wins. The refinement pass only runs when the cost
    matrix contains duplicate values (the only way exact ties arise in
    practice); costs must be finite.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or 0 in cost.shape:
        raise ValueError(f"hungarian: cost must be non-empty 2-d, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise ValueError("hungarian: NaN in cost matrix")
    if np.isinf(cost).any():
        raise ValueError("hungarian: cost matrix must be finite")
    rows, cols = kernels.lap_solve(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    total = _pair_total(cost, pairs)
    if np.unique(cost).size < cost.size:
        pairs = sorted(_lex_smallest_optimal(cost, total))
        total = _pair_total(cost, pairs)
    matched = {q for q, _ in pairs}
    unmatched = [q for q in range(cost.shape[0]) if q not in matched]
    pair_costs = [float(cost[q, g]) for q, g in pairs]
    return MatchAssignment(pairs=pairs, unmatched_queries=unmatched, total_cost=total, pair_costs=pair_costs)


def focal_class_cost(scores: np.ndarray, alpha: float = 0.25, gamma: float = 2.0):
    """Per-(query, prompt) positive and negative focal costs from logits."""
    p = 1.0 / (1.0 + np.exp(-scores))
    eps = 1e-8
    pos = alpha * (1.0 - p) ** gamma * (-np.log(p + eps))
    neg = (1.0 - alpha) * p**gamma * (-np.log(1.0 - p + eps))
    return pos, neg


def match_cost(
    scores: np.ndarray,
    boxes: np.ndarray,
    gt_boxes: np.ndarray,
    gt_prompt_idx: np.ndarray,
    class_weight: float = 1.0,
    bbox_weight: float = 5.0,
    giou_weight: float = 2.0,
    focal_alpha: float = 0.25,
    focal_gamma: float = 2.0,
) -> np.ndarray:
    """Cost matrix [Q, n_gt]: class 1.0 + L1 5.0 + (1 - GIoU) 2.0.

    ``scores`` are alignment logits [Q, C], ``boxes`` normalized cxcywh
    [Q, 4], ``gt_boxes`` likewise, ``gt_prompt_idx`` maps each instance to
    its prompt column. Evaluated without gradient.
    """
    scores = np.asarray(scores, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_prompt_idx = np.asarray(gt_prompt_idx, dtype=np.intp)
    pos, neg = focal_class_cost(scores, focal_alpha, focal_gamma)
    cls_cost = pos[:, gt_prompt_idx] - neg[:, gt_prompt_idx]
    l1_cost = np.abs(boxes[:, None, :] - gt_boxes[None, :, :]).sum(axis=-1)
    giou_mat = kernels.pairwise_giou_xyxy(cxcywh_to_xyxy(boxes), cxcywh_to_xyxy(gt_boxes))
    return class_weight * cls_cost + bbox_weight * l1_cost + giou_weight * (1.0 - giou_mat)
