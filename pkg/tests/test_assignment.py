import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpmatch.assignment import (
    MatchSet,
    dustbin_marginals,
    hungarian,
    recover_matches,
    score_matrix,
    sinkhorn,
)
from kpmatch.autodiff import Tape, Tensor
from kpmatch.errors import NonPositiveTemperature, NonSquare


def brute_force_assignment(cost):
    n = len(cost)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n), perms].sum(axis=1)
    order = np.argsort(totals)
    return perms[order[0]], totals[order[0]], totals[order[1]]


def marginal_residual(p, a, b):
    return max(np.abs(p.sum(axis=1) - a).max(), np.abs(p.sum(axis=0) - b).max())


class TestScoreMatrix:
    def test_orthonormal_identity(self):
        out = score_matrix(np.eye(4), np.eye(4), 0.5)
        np.testing.assert_array_equal(out.inner, np.eye(4))
        assert out.augmented.shape == (5, 5)
        assert np.all(out.augmented[4] == 0.5) and np.all(out.augmented[:, 4] == 0.5)

    def test_bilinear(self, rng):
        fa = rng.normal(size=(3, 5))
        np.testing.assert_allclose(score_matrix(fa, 2 * fa, 0.0).inner, 2 * fa @ fa.T, atol=1e-15)

    def test_brute_force(self, rng):
        fa, fb = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        expected = [[sum(fa[i, k] * fb[j, k] for k in range(4)) for j in range(5)] for i in range(3)]
        np.testing.assert_allclose(score_matrix(fa, fb, 1.0).inner, expected, atol=1e-12)

    def test_taped_inputs_give_tensors(self, rng):
        out = score_matrix(Tensor(rng.normal(size=(2, 3))), rng.normal(size=(2, 3)), Tensor(1.0))
        assert isinstance(out.augmented, Tensor)


class TestSinkhorn:
    def test_one_by_one(self, rng):
        res = sinkhorn(rng.normal(size=(2, 2)))
        p = res.assignment
        np.testing.assert_allclose(p.sum(axis=1), [1, 1], atol=1e-6)
        np.testing.assert_allclose(p.sum(axis=0), [1, 1], atol=1e-6)

    def test_constant_scores_uniform_inner(self):
        p = sinkhorn(np.full((6, 6), 0.7)).assignment
        np.testing.assert_allclose(p[:-1, :-1], p[0, 0], rtol=1e-12)

    def test_marginals_on_random_bounded_scores(self, rng):
        for _ in range(30):
            n, m = rng.integers(1, 64, 2)
            s = rng.uniform(-10, 10, (n + 1, m + 1))
            res = sinkhorn(s)
            a, b = dustbin_marginals(n, m)
            assert marginal_residual(res.assignment, a, b) < 1e-6
            assert res.residual < 1e-6

    def test_entries_bounded(self, rng):
        s = rng.uniform(-10, 10, (9, 13))
        p = sinkhorn(s).assignment
        assert np.all(p >= 0) and np.all(p <= 12)

    def test_constant_shift_is_bit_exact(self, rng):
        # dyadic values keep s + c exact, so only the algorithm itself could break equality
        s = rng.integers(-64, 64, (7, 9)) / 8.0
        base = sinkhorn(s).log_assignment
        for c in (-3.0, 0.5, 17.25):
            np.testing.assert_array_equal(sinkhorn(s + c).log_assignment, base)

    def test_relaxation_does_not_move_fixed_point(self, rng):
        s = rng.uniform(-3, 3, (6, 8))
        a = sinkhorn(s, iterations=2000, relaxation=1.0).assignment
        b = sinkhorn(s, iterations=2000, relaxation=1.5).assignment
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_hungarian_agreement_at_low_temperature(self, rng):
        agree = total = 0
        while total < 30:
            s = rng.normal(size=(8, 8))
            best, c1, c2 = brute_force_assignment(-s)
            if c2 - c1 <= 0.1:
                continue
            total += 1
            p = sinkhorn(s, np.ones(8), np.ones(8), temperature=0.01).assignment
            agree += np.array_equal(p.argmax(axis=1), best)
        assert agree >= 0.95 * total

    def test_bad_temperature(self):
        with pytest.raises(NonPositiveTemperature):
            sinkhorn(np.zeros((2, 2)), temperature=0.0)

    def test_gradient_flows_to_scores(self, rng):
        s = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        with Tape() as tape:
            res = sinkhorn(s, iterations=10)
            out = (res.log_assignment * Tensor(rng.normal(size=(4, 5)))).data.sum()
        assert isinstance(res.log_assignment, Tensor)
        assert np.isfinite(out)


class TestHungarian:
    def test_identity(self):
        cost = 1.0 - np.eye(5)
        np.testing.assert_array_equal(hungarian(cost), np.arange(5))

    def test_anti_diagonal(self):
        np.testing.assert_array_equal(hungarian([[1.0, 0.0], [0.0, 1.0]]), [1, 0])

    def test_exhaustive_6x6(self, rng):
        for _ in range(50):
            c = rng.uniform(-5, 5, (6, 6))
            perm = hungarian(c)
            _, best, _ = brute_force_assignment(c)
            assert c[np.arange(6), perm].sum() == pytest.approx(best, abs=1e-12)

    def test_non_square(self):
        with pytest.raises(NonSquare):
            hungarian(np.zeros((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31))
    def test_is_permutation_and_optimal(self, n, seed):
        c = np.random.default_rng(seed).integers(0, 5, (n, n)).astype(float)  # ties are common
        perm = hungarian(c)
        assert sorted(perm) == list(range(n))
        _, best, _ = brute_force_assignment(c) if n > 1 else (None, c[0, 0], None)
        assert c[np.arange(n), perm].sum() == best


def mutual_argmax_oracle(p, th):
    inner = p[:-1, :-1]
    pairs = []
    for i in range(inner.shape[0]):
        j = int(np.argmax(inner[i]))
        if int(np.argmax(inner[:, j])) == i and inner[i, j] > th:
            pairs.append((i, j))
    return set(pairs)


class TestRecovery:
    def test_diagonal(self):
        p = np.zeros((5, 5))
        p[:4, :4] = 0.9 * np.eye(4)
        m = recover_matches(p, 0.2)
        assert m.as_set() == {(i, i) for i in range(4)}
        np.testing.assert_array_equal(m.confidence, 0.9)

    def test_below_threshold(self, rng):
        p = rng.uniform(0, 0.19, (6, 7))
        m = recover_matches(p, 0.2)
        assert len(m) == 0
        np.testing.assert_array_equal(m.unmatched_a, np.arange(5))
        np.testing.assert_array_equal(m.unmatched_b, np.arange(6))

    def test_oracle(self, rng):
        for _ in range(50):
            p = rng.uniform(0, 1, (11, 13)) ** 3
            assert recover_matches(p, 0.2).as_set() == mutual_argmax_oracle(p, 0.2)

    def test_partial_matching(self, rng):
        for _ in range(20):
            m = recover_matches(rng.uniform(0, 1, (15, 9)), 0.0)
            assert len(set(m.pairs[:, 0])) == len(m) == len(set(m.pairs[:, 1]))

    def test_row_permutation(self, rng):
        p = rng.uniform(0, 1, (9, 8))
        perm = rng.permutation(8)
        q = p.copy()
        q[:-1] = p[:-1][perm]
        inv = np.argsort(perm)
        moved = {(int(inv[i]), j) for i, j in recover_matches(p, 0.1).as_set()}
        assert recover_matches(q, 0.1).as_set() == moved

    def test_from_pairs(self):
        m = MatchSet.from_pairs([[0, 2], [3, 1]], 4, 3)
        np.testing.assert_array_equal(m.unmatched_a, [1, 2])
        np.testing.assert_array_equal(m.unmatched_b, [0])
