import numpy as np
import numpy.testing as npt
import pytest

from catp.compensation import (aggregate_average, aggregate_high, aggregate_low, build_prototypes,
                               rebuild_sequence)
from catp.models import CompensationMode
from catp.numerics import Rng, gaussian_init
from catp.pruning import partition_tokens


class TestAggregateLow:
    def test_single_token(self):
        proto = aggregate_low([[1.5, -2.0]], [0.2])
        npt.assert_array_equal(proto.feature, [1.5, -2.0])
        npt.assert_array_equal(proto.weight_vector, [1.0])

    def test_hand_normalisation(self):
        proto = aggregate_low([[0.0], [3.0]], [0.1, 0.2])
        npt.assert_allclose(proto.weight_vector, [1 / 3, 2 / 3], rtol=1e-12)
        npt.assert_allclose(proto.feature, [2.0], rtol=1e-12)
        assert proto.origin == "low"
        assert proto.source_count == 2

    def test_empty_subset(self):
        assert aggregate_low(np.zeros((0, 3)), []) is None


class TestAggregateHigh:
    def test_hand_normalisation(self):
        proto = aggregate_high([[1.0], [4.0]], [0.8, 0.9])
        npt.assert_allclose(proto.weight_vector, [2 / 3, 1 / 3], rtol=1e-12)
        npt.assert_allclose(proto.feature, [2.0], rtol=1e-12)
        assert proto.origin == "high"

    def test_equal_scores_give_plain_mean(self):
        x = np.array([[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]])
        npt.assert_allclose(aggregate_high(x, [0.9, 0.9, 0.9]).feature, x.mean(axis=0), rtol=1e-12)


class TestAggregateAverage:
    def test_mean(self):
        npt.assert_array_equal(aggregate_average([[0.0], [2.0]], [0.1, 0.2]).feature, [1.0])

    def test_matches_low_when_scores_equal(self):
        x = gaussian_init(Rng(1), 5, 4, 1.0)
        npt.assert_allclose(aggregate_average(x, [0.2] * 5).feature,
                            aggregate_low(x, [0.2] * 5).feature, atol=1e-12)


class TestPrototypeProperties:
    def test_convex_combination(self):
        rng = Rng(2)
        for _ in range(50):
            n = 1 + int(rng.next_u64() % 20)
            x = gaussian_init(rng, n, 6, 3.0)
            p = 0.01 + 0.28 * rng.uniform(n)
            proto = aggregate_low(x, p)
            assert abs(proto.weight_vector.sum() - 1.0) < 1e-9
            assert np.all(proto.feature >= x.min(axis=0) - 1e-12)
            assert np.all(proto.feature <= x.max(axis=0) + 1e-12)
            npt.assert_allclose(proto.weight_vector, p / p.sum(), atol=1e-12)

    def test_weight_ordering(self):
        p_low = np.array([0.05, 0.1, 0.2, 0.25])
        p_high = np.array([0.75, 0.8, 0.9, 0.95])
        x = np.ones((4, 2))
        assert np.all(np.diff(aggregate_low(x, p_low).weight_vector) > 0)
        assert np.all(np.diff(aggregate_high(x, p_high).weight_vector) < 0)

    def test_scale_equivariance(self):
        x = gaussian_init(Rng(3), 4, 3, 1.0)
        p = [0.1, 0.2, 0.15, 0.05]
        npt.assert_allclose(aggregate_low(2.5 * x, p).feature, 2.5 * aggregate_low(x, p).feature,
                            rtol=1e-12)


class TestBuildPrototypes:
    scores = np.array([0.1, 0.5, 0.9, 0.2, 0.6])

    def _patches(self):
        return gaussian_init(Rng(4), 5, 3, 1.0)

    def test_none_mode(self):
        part = partition_tokens(self.scores, 0.3, 0.7)
        assert build_prototypes(self._patches(), self.scores, part, CompensationMode.NONE) == []

    @pytest.mark.parametrize("mode", [CompensationMode.AVERAGE, CompensationMode.WEIGHTED])
    def test_low_then_high(self, mode):
        part = partition_tokens(self.scores, 0.3, 0.7)
        protos = build_prototypes(self._patches(), self.scores, part, mode)
        assert [p.origin for p in protos] == ["low", "high"]
        assert [p.source_count for p in protos] == [2, 1]

    def test_missing_low_subset(self):
        part = partition_tokens(self.scores, 0.0, 0.7)
        protos = build_prototypes(self._patches(), self.scores, part, CompensationMode.WEIGHTED)
        assert [p.origin for p in protos] == ["high"]


class TestRebuildSequence:
    def _parts(self):
        x = gaussian_init(Rng(5), 6, 3, 1.0)
        low = aggregate_low(x[:2], [0.1, 0.2])
        high = aggregate_high(x[4:], [0.8, 0.9])
        return x[2:4], low, high

    def test_both_prototypes(self):
        mid, low, high = self._parts()
        seq = rebuild_sequence(np.zeros(3), mid, [2, 3], low, high)
        assert len(seq) == mid.shape[0] + 3
        npt.assert_array_equal(seq.tokens()[-2], low.feature)
        npt.assert_array_equal(seq.tokens()[-1], high.feature)
        npt.assert_array_equal(seq.index_map, [2, 3])

    def test_only_low(self):
        mid, low, _ = self._parts()
        seq = rebuild_sequence(np.zeros(3), mid, [2, 3], low, None)
        assert len(seq) == mid.shape[0] + 2
        assert seq.prototype_origins == ("low",)

    def test_no_prototypes(self):
        mid, _, _ = self._parts()
        seq = rebuild_sequence(np.zeros(3), mid, [2, 3])
        assert len(seq) == mid.shape[0] + 1
