"""Gradient-free hot kernels: assignment, pairwise box overlap, AP matching.

Each kernel has two implementations with identical arithmetic:

* a loop-style version compiled with numba ``@njit`` (default), and
* a pure-numpy fallback.

Set ``OVDET_NUMBA=0`` to force the fallback (useful when numba is
unavailable or for A/B timing; see ``benchmarks/bench_kernels.py``).
Both paths are exercised against each other in the test suite and must
agree bit-for-bit.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "backend",
    "lap_solve",
    "pairwise_iou_xyxy",
    "pairwise_giou_xyxy",
    "ap_greedy_match",
    "IMPLS",
]

_INF = 1e18

_env = os.environ.get("OVDET_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _env not in {"0", "false", "off", "no"}
if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# -- rectangular linear assignment (Jonker-Volgenant style) -------------------
#
# Shortest augmenting paths with dual potentials; requires n_rows <= n_cols
# (callers transpose). Deterministic: scanning order breaks ties, first
# minimum wins.


def _lap_core_loops(cost):
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) matched to col j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, _INF)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = _INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col4row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            col4row[p[j] - 1] = j - 1
    return col4row


def _lap_core_numpy(cost):
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    cols = np.arange(1, m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, _INF)
        used = np.zeros(m + 1, dtype=np.bool_)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            free_vals = np.where(free, minv[1:], _INF)
            j1 = int(np.argmin(free_vals)) + 1  # first minimum, as in the loop version
            delta = free_vals[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col4row = np.full(n, -1, dtype=np.int64)
    matched = p[1:] != 0
    col4row[p[1:][matched] - 1] = cols[matched] - 1
    return col4row


# -- pairwise IoU / GIoU on xyxy boxes ----------------------------------------


def _pairwise_giou_loops(a, b, want_giou):
    n = a.shape[0]
    m = b.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        ax1, ay1, ax2, ay2 = a[i, 0], a[i, 1], a[i, 2], a[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            bx1, by1, bx2, by2 = b[j, 0], b[j, 1], b[j, 2], b[j, 3]
            area_b = (bx2 - bx1) * (by2 - by1)
            iw = min(ax2, bx2) - max(ax1, bx1)
            ih = min(ay2, by2) - max(ay1, by1)
            inter = (iw if iw > 0.0 else 0.0) * (ih if ih > 0.0 else 0.0)
            union = area_a + area_b - inter
            iou = inter / union
            if want_giou:
                hw = max(ax2, bx2) - min(ax1, bx1)
                hh = max(ay2, by2) - min(ay1, by1)
                hull = hw * hh
                out[i, j] = iou - (hull - union) / hull
            else:
                out[i, j] = iou
    return out


def _pairwise_giou_numpy(a, b, want_giou):
    ax1, ay1, ax2, ay2 = (a[:, k][:, None] for k in range(4))
    bx1, by1, bx2, by2 = (b[:, k][None, :] for k in range(4))
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = np.where(iw > 0.0, iw, 0.0) * np.where(ih > 0.0, ih, 0.0)
    union = area_a + area_b - inter
    iou = inter / union
    if not want_giou:
        return iou
    hull = (np.maximum(ax2, bx2) - np.minimum(ax1, bx1)) * (
        np.maximum(ay2, by2) - np.minimum(ay1, by1)
    )
    return iou - (hull - union) / hull


# -- greedy AP matching --------------------------------------------------------
#
# Rows of ``iou`` are predictions already sorted by descending score; each
# prediction claims the unclaimed ground truth of highest IoU >= thr
# (ties: lowest gt index). Returns the matched gt index per prediction, -1
# for false positives.


def _ap_greedy_loops(iou, thr):
    n, m = iou.shape
    match = np.full(n, -1, dtype=np.int64)
    taken = np.zeros(m, dtype=np.bool_)
    for i in range(n):
        best = -1
        best_iou = -1.0
        for j in range(m):
            if not taken[j] and iou[i, j] > best_iou:
                best = j
                best_iou = iou[i, j]
        if best >= 0 and best_iou >= thr:
            match[i] = best
            taken[best] = True
    return match


def _ap_greedy_numpy(iou, thr):
    n, m = iou.shape
    match = np.full(n, -1, dtype=np.int64)
    taken = np.zeros(m, dtype=np.bool_)
    for i in range(n):
        row = np.where(taken, -_INF, iou[i])
        j = int(np.argmax(row))
        if row[j] >= thr:
            match[i] = j
            taken[j] = True
    return match


if NUMBA_ENABLED:
    _lap_core_nb = njit(cache=True)(_lap_core_loops)
    _pairwise_giou_nb = njit(cache=True)(_pairwise_giou_loops)
    _ap_greedy_nb = njit(cache=True)(_ap_greedy_loops)
else:  # pragma: no cover - environment dependent
    _lap_core_nb = None
    _pairwise_giou_nb = None
    _ap_greedy_nb = None

# registry for the benchmark: kernel name -> {path name -> callable}
IMPLS = {
    "lap_solve": {"numba": _lap_core_nb, "numpy": _lap_core_numpy},
    "pairwise_giou": {"numba": _pairwise_giou_nb, "numpy": _pairwise_giou_numpy},
    "ap_greedy_match": {"numba": _ap_greedy_nb, "numpy": _ap_greedy_numpy},
}


def lap_solve(cost: np.ndarray):
    """Minimum-cost injective assignment of min(n, m) pairs.

    Returns ``(row_ind, col_ind)`` sorted by row index. Requires finite
    costs; NaN is rejected.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or 0 in cost.shape:
        raise ValueError(f"lap_solve: cost must be non-empty 2-d, got {cost.shape}")
    if np.isnan(cost).any():
        raise ValueError("lap_solve: NaN in cost matrix")
    n, m = cost.shape
    core = _lap_core_nb if NUMBA_ENABLED else _lap_core_numpy
    if n <= m:
        col4row = core(cost)
        rows = np.arange(n, dtype=np.int64)
        return rows, col4row
    row4col = core(np.ascontiguousarray(cost.T))
    order = np.argsort(row4col, kind="stable")
    return row4col[order], np.arange(m, dtype=np.int64)[order]


def pairwise_iou_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU matrix [n, m] for xyxy boxes (positive area assumed)."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    if NUMBA_ENABLED:
        return _pairwise_giou_nb(a, b, False)
    return _pairwise_giou_numpy(a, b, False)


def pairwise_giou_xyxy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU matrix [n, m] for xyxy boxes (positive area assumed)."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    if NUMBA_ENABLED:
        return _pairwise_giou_nb(a, b, True)
    return _pairwise_giou_numpy(a, b, True)


def ap_greedy_match(iou: np.ndarray, thr: float) -> np.ndarray:
    """Greedy matching of score-sorted predictions to ground truth at ``thr``."""
    iou = np.ascontiguousarray(iou, dtype=np.float64)
    if iou.size == 0:
        return np.full(iou.shape[0], -1, dtype=np.int64)
    if NUMBA_ENABLED:
        return _ap_greedy_nb(iou, float(thr))
    return _ap_greedy_numpy(iou, float(thr))
