"""Matching tests: GIoU geometry, Hungarian optimality and tie-breaks, costs."""

import itertools

import numpy as np
import pytest

from ovdet.matching import MatchAssignment, giou, hungarian, match_cost


class TestGiou:
    def test_self_is_one(self):
        assert giou([0, 0, 2, 2], [0, 0, 2, 2]) == 1.0

    def test_hand_worked_example(self):
        assert giou([0, 0, 2, 2], [1, 1, 3, 3]) == pytest.approx(-5.0 / 63.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(20)
        for _ in range(100):
            a = np.sort(rng.uniform(0, 10, size=(2, 2)), axis=0).T.reshape(4)[[0, 2, 1, 3]]
            b = np.sort(rng.uniform(0, 10, size=(2, 2)), axis=0).T.reshape(4)[[0, 2, 1, 3]]
            # rebuild as [x1, y1, x2, y2]
            a = np.array([min(a[0], a[1]), min(a[2], a[3]), max(a[0], a[1]) + 0.1, max(a[2], a[3]) + 0.1])
            b = np.array([min(b[0], b[1]), min(b[2], b[3]), max(b[0], b[1]) + 0.1, max(b[2], b[3]) + 0.1])
            assert giou(a, b) == pytest.approx(giou(b, a), abs=1e-14)

    def test_separation_limit(self):
        vals = [giou([0, 0, 1, 1], [d, 0, d + 1, 1]) for d in (10, 100, 1000, 10000)]
        assert all(x > y for x, y in zip(vals, vals[1:]))
        assert vals[-1] < -0.999

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError, match="no area"):
            giou([0, 0, 0, 2], [0, 0, 1, 1])


def brute_min(cost):
    n, m = cost.shape
    best = np.inf
    k = min(n, m)
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            total = float(np.sum(cost[np.arange(n), list(perm)]))
            best = min(best, total)
    else:
        for rows in itertools.permutations(range(n), m):
            total = float(np.sum(cost[np.array(sorted(zip(rows, range(m))))[:, 0], np.array(sorted(zip(rows, range(m))))[:, 1]]))
            best = min(best, total)
    return best


class TestHungarian:
    def test_two_permutations(self):
        a = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert a.pairs == [(0, 0), (1, 1)]
        assert a.total_cost == 2.0
        assert a.unmatched_queries == []

    def test_singleton(self):
        a = hungarian(np.array([[5.0]]))
        assert a.pairs == [(0, 0)] and a.total_cost == 5.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            n = int(rng.integers(1, 6))
            m = int(rng.integers(1, 6))
            cost = rng.normal(size=(n, m))
            a = hungarian(cost)
            assert len(a.pairs) == min(n, m)
            assert a.total_cost == pytest.approx(brute_min(cost), abs=1e-12)
            assert a.total_cost == pytest.approx(sum(a.pair_costs), abs=1e-12)

    def test_row_constant_invariance(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            cost = rng.normal(size=(5, 5))
            base = hungarian(cost).pairs
            shifted = cost.copy()
            shifted[2] += 13.7
            assert hungarian(shifted).pairs == base

    def test_lexicographic_tie_break(self):
        # all-equal costs: every assignment is optimal; lexicographically
        # smallest pair list is the diagonal
        a = hungarian(np.ones((3, 3)))
        assert a.pairs == [(0, 0), (1, 1), (2, 2)]

    def test_lexicographic_tie_break_rectangular(self):
        # two optimal matchings: {(0,1),(1,0)} and {(0,0),(1,1)} both cost 2
        cost = np.array([[1.0, 1.0], [1.0, 1.0], [9.0, 9.0]])
        a = hungarian(cost)
        assert a.pairs == [(0, 0), (1, 1)]
        assert a.unmatched_queries == [2]

    def test_duplicate_rows_deterministic(self):
        cost = np.array([[2.0, 1.0], [2.0, 1.0]])
        a = hungarian(cost)
        # optima: (0,0)+(1,1)=3 and (0,1)+(1,0)=3; lexicographic pick
        assert a.pairs == [(0, 0), (1, 1)]

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="NaN"):
            hungarian(np.array([[np.nan]]))


class TestMatchCost:
    def test_perfect_box_dominates_row(self):
        scores = np.zeros((3, 4))
        scores[1, 2] = 8.0  # query 1 confident for prompt 2
        boxes = np.array([[0.5, 0.5, 0.2, 0.2], [0.3, 0.3, 0.1, 0.1], [0.7, 0.7, 0.2, 0.2]])
        gt_boxes = np.array([[0.3, 0.3, 0.1, 0.1]])
        cost = match_cost(scores, boxes, gt_boxes, np.array([2]))
        assert cost.shape == (3, 1)
        assert cost.argmin() == 1

    def test_identical_queries_identical_rows(self):
        scores = np.tile(np.array([[0.2, -0.4]]), (3, 1))
        boxes = np.tile(np.array([[0.4, 0.4, 0.2, 0.3]]), (3, 1))
        gt = np.array([[0.5, 0.5, 0.25, 0.25], [0.2, 0.8, 0.1, 0.1]])
        cost = match_cost(scores, boxes, gt, np.array([0, 1]))
        np.testing.assert_array_equal(cost[0], cost[1])
        np.testing.assert_array_equal(cost[0], cost[2])

    def test_bbox_only_matches_nearest_box(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            nq, ng = 5, int(rng.integers(1, 5))
            boxes = rng.uniform(0.2, 0.8, size=(nq, 4)) * [1, 1, 0.3, 0.3]
            gt = rng.uniform(0.2, 0.8, size=(ng, 4)) * [1, 1, 0.3, 0.3]
            scores = rng.normal(size=(nq, 3))
            cost = match_cost(scores, boxes, gt, rng.integers(0, 3, size=ng), class_weight=0.0, giou_weight=0.0)
            got = hungarian(cost)
            # brute-force minimal L1 assignment
            l1 = np.abs(boxes[:, None] - gt[None]).sum(-1)
            best, best_pairs = np.inf, None
            for perm in itertools.permutations(range(nq), ng):
                tot = float(np.sum(l1[list(perm), np.arange(ng)]))
                if tot < best - 1e-12:
                    best, best_pairs = tot, sorted(zip(perm, range(ng)))
            assert got.pairs == best_pairs

    def test_assignment_dataclass_properties(self):
        a = MatchAssignment(pairs=[(0, 1), (2, 0)], unmatched_queries=[1], total_cost=3.0)
        np.testing.assert_array_equal(a.query_indices, [0, 2])
        np.testing.assert_array_equal(a.gt_indices, [1, 0])
