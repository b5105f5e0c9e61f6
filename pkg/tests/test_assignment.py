import numpy as np
import pytest

from modalmatch.assignment import AssignmentResult, build_assignment_cost, hungarian
from modalmatch.losses import dice_loss, focal_loss

from oracles import brute_force_assignment


class TestHungarian:
    def test_identity_favoring_cost(self):
        cost = np.ones((3, 3)) - np.eye(3)
        res = hungarian(cost)
        assert res.pairs == [(0, 0), (1, 1), (2, 2)]
        assert res.total_cost == 0.0
        assert res.unmatched_queries == []

    def test_rectangular_with_unmatched_query(self):
        cost = np.array([[1.0, 2.0], [2.0, 1.0], [3.0, 3.0]])
        res = hungarian(cost)
        assert res.pairs == [(0, 0), (1, 1)]
        assert res.unmatched_queries == [2]
        assert res.total_cost == 2.0

    def test_single_cell(self):
        res = hungarian(np.array([[7.0]]))
        assert res.pairs == [(0, 0)]
        assert res.total_cost == 7.0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            hungarian(np.array([[1.0, np.inf], [0.0, 1.0]]))

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(123)
        for trial in range(100):
            n_rows = int(rng.integers(1, 8))
            n_cols = int(rng.integers(1, n_rows + 1))
            cost = rng.normal(size=(n_rows, n_cols))
            res = hungarian(cost)
            best, best_pairs = brute_force_assignment(cost)
            assert res.total_cost == pytest.approx(best, abs=1e-9), f"trial {trial}"
            assert res.pairs == best_pairs
            assert len(res.pairs) == min(n_rows, n_cols)
            covered = sorted([q for q, _ in res.pairs] + res.unmatched_queries)
            assert covered == list(range(n_rows))

    def test_lexicographic_tie_rule_on_degenerate_costs(self):
        # Integer costs with heavy ties exercise the canonicalization.
        rng = np.random.default_rng(321)
        for _ in range(40):
            cost = rng.integers(0, 3, size=(4, 3)).astype(float)
            res = hungarian(cost)
            best, best_pairs = brute_force_assignment(cost)
            assert res.total_cost == pytest.approx(best)
            assert res.pairs == best_pairs

    def test_constant_shift_invariance(self):
        rng = np.random.default_rng(77)
        cost = rng.normal(size=(5, 4))
        base = hungarian(cost)
        shifted = hungarian(cost + 13.7)
        assert base.pairs == shifted.pairs
        assert base.unmatched_queries == shifted.unmatched_queries


class TestBuildAssignmentCost:
    def test_perfect_query(self):
        probs = np.array([[0.0, 1.0]])
        mask = np.array([1.0, 1.0, 0.0])
        cost = build_assignment_cost(probs, [mask], [1], [mask], lambda_mask=1.0)
        # dice is not exactly 0 because of smoothing; focal is ~0.
        assert cost[0, 0] == pytest.approx(
            -1.0 + dice_loss(mask, mask).value + focal_loss(mask, mask).value
        )
        assert cost[0, 0] < -0.9

    def test_lambda_zero_is_pure_probability(self):
        probs = np.array([[0.2, 0.8], [0.6, 0.4]])
        masks = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        cost = build_assignment_cost(probs, masks, [1, 0], masks, lambda_mask=0.0)
        expected = np.array([[-0.8, -0.2], [-0.4, -0.6]])
        assert np.allclose(cost, expected)

    def test_hand_case_componentwise(self):
        rng = np.random.default_rng(10)
        probs = rng.dirichlet(np.ones(3), size=2)
        masks = [rng.random(6), rng.random(6)]
        gts = [(rng.random(6) > 0.5).astype(float), (rng.random(6) > 0.5).astype(float)]
        lam = 0.7
        cost = build_assignment_cost(probs, masks, [2, 1], gts, lambda_mask=lam)
        for q in range(2):
            for g, cls in enumerate([2, 1]):
                expected = -probs[q, cls] + lam * (
                    dice_loss(masks[q], gts[g]).value + focal_loss(masks[q], gts[g]).value
                )
                assert cost[q, g] == pytest.approx(expected, rel=1e-12)

    def test_class_out_of_range(self):
        with pytest.raises(IndexError):
            build_assignment_cost(
                np.array([[0.5, 0.5]]), [np.array([1.0])], [2], [np.array([1.0])]
            )
