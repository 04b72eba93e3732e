import numpy as np
import pytest

from proxskip.prox import (Consensus, IndicatorZero, L1, SquaredL2,
                           UnsupportedProxError)


class TestProxValues:
    def test_consensus_is_blockwise_average(self):
        op = Consensus(n=2, d=2)
        out = op.prox(1.0, np.array([1.0, 3.0, 3.0, 1.0]))
        assert np.array_equal(out, np.array([2.0, 2.0, 2.0, 2.0]))

    def test_l1_soft_threshold(self):
        out = L1(1.0).prox(1.0, np.array([3.0, -0.5]))
        assert np.array_equal(out, np.array([2.0, 0.0]))

    def test_squared_l2_shrinks(self):
        # argmin 0.5 (y-x)^2 + gamma * y^2  ->  y = x / (1 + 2 gamma).
        out = SquaredL2(1.0).prox(0.5, np.array([2.0]))
        assert np.array_equal(out, np.array([1.0]))

    def test_indicator_zero_projects_to_origin(self):
        out = IndicatorZero().prox(3.0, np.array([1.0, -2.0]))
        assert np.array_equal(out, np.zeros(2))

    def test_zero_weight_l1_is_identity(self):
        x = np.array([0.3, -1.7, 0.0])
        assert np.array_equal(L1(0.0).prox(2.0, x), x)

    def test_scale_must_be_positive(self):
        for op in (L1(1.0), SquaredL2(1.0), Consensus(2, 1), IndicatorZero()):
            with pytest.raises(ValueError):
                op.prox(0.0, np.zeros(2))
            with pytest.raises(ValueError):
                op.prox(-1.0, np.zeros(2))

    def test_consensus_dimension_check(self):
        with pytest.raises(ValueError):
            Consensus(2, 3).prox(1.0, np.zeros(5))


class TestConjugate:
    def test_indicator_zero_conjugate_is_identity(self):
        y = np.array([1.5, -2.0])
        assert np.array_equal(IndicatorZero().conjugate_prox(0.7, y), y)

    def test_indicator_zero_conjugate_at_origin(self):
        assert np.array_equal(IndicatorZero().conjugate_prox(1.0, np.zeros(3)),
                              np.zeros(3))

    def test_moreau_decomposition_for_l1(self):
        # prox_psi(x) + prox_{psi*}(x) = x at unit scale; the conjugate prox
        # is the clip onto the weight-ball.
        x = np.array([3.0, -0.5])
        op = L1(1.0)
        p = op.prox(1.0, x)
        q = op.conjugate_prox(1.0, x)
        assert np.array_equal(q, np.array([1.0, -0.5]))
        assert np.array_equal(p + q, x)

    def test_unsupported_conjugates_raise(self):
        with pytest.raises(UnsupportedProxError):
            SquaredL2(1.0).conjugate_prox(1.0, np.zeros(2))
        with pytest.raises(UnsupportedProxError):
            Consensus(2, 1).conjugate_prox(1.0, np.zeros(2))


class TestFirmNonexpansiveness:
    @pytest.mark.parametrize("op,d", [
        (L1(0.8), 6),
        (SquaredL2(2.0), 6),
        (Consensus(3, 2), 6),
        (IndicatorZero(), 6),
    ])
    def test_firm_nonexpansiveness(self, op, d, rng):
        # ||P(x)-P(y)||^2 + ||Q(x)-Q(y)||^2 <= ||x-y||^2 for prox maps.
        for _ in range(1000):
            x = rng.standard_normal(d) * rng.uniform(0.5, 5)
            y = rng.standard_normal(d) * rng.uniform(0.5, 5)
            scale = float(rng.uniform(1e-2, 10.0))
            px, py = op.prox(scale, x), op.prox(scale, y)
            lhs = np.sum((px - py) ** 2) + np.sum(((x - px) - (y - py)) ** 2)
            assert lhs <= np.sum((x - y) ** 2) + 1e-12


class TestConsensusStructure:
    def test_idempotent_exactly(self, rng):
        op = Consensus(n=3, d=4)
        for _ in range(50):
            x = rng.standard_normal(12)
            once = op.prox(1.0, x)
            twice = op.prox(1.0, once)
            assert np.array_equal(once, twice)

    def test_blocks_bitwise_identical(self, rng):
        op = Consensus(n=5, d=3)
        out = op.prox(2.0, rng.standard_normal(15)).reshape(5, 3)
        for i in range(1, 5):
            assert np.array_equal(out[i], out[0])

    def test_scale_invariance(self, rng):
        # The consensus prox is a projection; the scale cannot matter.
        op = Consensus(n=4, d=2)
        x = rng.standard_normal(8)
        assert np.array_equal(op.prox(0.01, x), op.prox(100.0, x))
