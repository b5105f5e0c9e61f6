import math

import numpy as np
import pytest

from modalmatch.core import (
    ShapeError,
    cosine_similarity,
    finite_difference_gradient,
    scaled_sigmoid_similarity,
    softmax_with_temperature,
    top_k_indices,
)


class TestCosineSimilarity:
    def test_identical_vectors(self):
        assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == pytest.approx(0.0)

    def test_hand_value(self):
        # (1*2 + 2*1) / (sqrt(5) * sqrt(5)) = 0.8
        assert cosine_similarity([1, 2], [2, 1]) == pytest.approx(0.8)

    def test_zero_norm_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity([0, 0], [1, 1])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            cosine_similarity([1, 2], [1, 2, 3])

    def test_self_similarity_and_bound(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            u = rng.normal(size=5)
            v = rng.normal(size=5)
            assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-12)
            assert abs(cosine_similarity(u, v)) <= 1 + 1e-12


class TestScaledSigmoidSimilarity:
    def test_orthogonal_gives_half(self):
        for tau in (0.01, 0.5, 3.0):
            assert scaled_sigmoid_similarity([1, 0], [0, 1], tau) == pytest.approx(0.5)

    def test_saturation_at_identical(self):
        val = scaled_sigmoid_similarity([1.0, 2.0], [1.0, 2.0], 0.01)
        assert val == pytest.approx(1.0 / (1.0 + math.exp(-100)), abs=1e-12)

    def test_opposite_vectors(self):
        val = scaled_sigmoid_similarity([1.0, 2.0], [-1.0, -2.0], 1.0)
        assert val == pytest.approx(1.0 / (1.0 + math.e), abs=1e-12)

    def test_tau_must_be_positive(self):
        with pytest.raises(ValueError):
            scaled_sigmoid_similarity([1, 0], [0, 1], 0.0)

    def test_monotone_in_cosine(self):
        rng = np.random.default_rng(11)
        pairs = [(rng.normal(size=4), rng.normal(size=4)) for _ in range(40)]
        pairs.sort(key=lambda p: cosine_similarity(p[0], p[1]))
        scores = [scaled_sigmoid_similarity(u, v, 0.7) for u, v in pairs]
        assert all(0.0 < s < 1.0 for s in scores)
        assert all(b >= a for a, b in zip(scores, scores[1:]))


class TestSoftmaxWithTemperature:
    def test_uniform_on_equal_logits(self):
        out = softmax_with_temperature([2.5] * 4, 0.3)
        assert np.allclose(out, 0.25)

    def test_closed_form_two_entries(self):
        out = softmax_with_temperature([1.0, 0.0], 1.0)
        e = math.e
        assert out[0] == pytest.approx(e / (e + 1))
        assert out[1] == pytest.approx(1 / (e + 1))

    def test_saturation_at_low_temperature(self):
        out = softmax_with_temperature([1.0, 0.0], 0.01)
        assert out[0] > 1 - 1e-12

    def test_sum_stability_across_magnitudes(self):
        rng = np.random.default_rng(3)
        for scale in (1e-3, 1.0, 1e3):
            for _ in range(20):
                logits = rng.normal(size=6) * scale
                out = softmax_with_temperature(logits, 0.5)
                # Entries are positive where float64 can represent them; at
                # spans past exp(-745) underflow to 0 is the correct limit.
                assert np.all(out >= 0)
                if scale <= 1.0:
                    assert np.all(out > 0)
                assert abs(out.sum() - 1.0) < 1e-12

    def test_tau_must_be_positive(self):
        with pytest.raises(ValueError):
            softmax_with_temperature([1.0, 2.0], -1.0)


class TestTopKIndices:
    def test_direct_ordering(self):
        assert top_k_indices([0.1, 0.9, 0.5], 2) == [1, 2]

    def test_tie_goes_to_lowest_index(self):
        assert top_k_indices([0.5, 0.5], 1) == [0]

    def test_short_input_returns_all(self):
        assert top_k_indices([0.3], 3) == [0]

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            top_k_indices([1.0, 2.0], 0)

    def test_permutation_consistency(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            scores = rng.normal(size=8)
            perm = rng.permutation(8)
            base = top_k_indices(scores, 3)
            permuted = top_k_indices(scores[perm], 3)
            # Distinct scores: permuting inputs permutes outputs accordingly.
            if len(np.unique(scores)) == 8:
                assert [int(perm[i]) for i in permuted] == [
                    int(i) for i in np.arange(8)[np.argsort(-scores)][:3]
                ]
                assert base == [int(i) for i in np.argsort(-scores)[:3]]


class TestFiniteDifferenceGradient:
    def test_quadratic(self):
        grad = finite_difference_gradient(lambda x: float(x @ x), [1.0, 2.0], 1e-5)
        assert np.allclose(grad, [2.0, 4.0], atol=1e-6)

    def test_constant_function(self):
        grad = finite_difference_gradient(lambda x: 3.7, [0.3, -1.2, 4.0], 1e-5)
        assert np.allclose(grad, 0.0)

    def test_sum_function(self):
        grad = finite_difference_gradient(lambda x: float(x.sum()), [5.0, -2.0], 1e-5)
        assert np.allclose(grad, 1.0, atol=1e-9)

    def test_nonfinite_propagates(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda x: float("nan"), [1.0], 1e-5)
