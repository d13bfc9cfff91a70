import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpmatch.assignment import MatchSet
from kpmatch.errors import EmptyErrors, InsufficientMatches
from kpmatch.geometry import Homography, Pose, fit_homography_dlt, warp_homography
from kpmatch.losses import GroundTruth
from kpmatch.metrics import (
    estimate_homography_ransac,
    estimate_pose_rgbd,
    homography_accuracy,
    image_corners,
    kabsch,
    mean_scores,
    pose_auc,
    score_matches,
)

from conftest import random_pose


def gt_from_pairs(pairs, n_a=20, n_b=20):
    d = np.full((n_a, n_b), 100.0)
    for i, j in pairs:
        d[i, j] = 0.0
    return GroundTruth.from_distances(d, 3.0)


def match_set(pairs):
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    return MatchSet(pairs, np.ones(len(pairs)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))


def numeric_auc(errors, t, n=1_000_000):
    """Midpoint-rule integral of the cumulative recall curve on [0, t].

    The curve starts at the origin, rises linearly from (e_k, k/n) to
    (e_{k+1}, (k+1)/n) and stays flat after the last error within t.
    """
    e = np.sort(np.asarray(errors, dtype=np.float64))
    ys = np.arange(len(e) + 1) / len(e)
    keep = np.concatenate([[True], e <= t])
    xs = np.concatenate([[0.0], e])[keep]
    mid = (np.arange(n) + 0.5) * (t / n)
    return float(np.interp(mid, xs, ys[keep]).mean())


def random_homography(rng, w=640, h=480):
    corners = image_corners(w, h)
    moved = corners + rng.uniform(-60, 60, size=corners.shape)
    return Homography(fit_homography_dlt(corners, moved))


class TestScoreMatches:
    def test_hand_counted_fixture(self):
        truth = [(i, i) for i in range(10)]
        pred = [(i, i) for i in range(6)] + [(6, 7), (7, 6)]
        rep = score_matches(match_set(pred), gt_from_pairs(truth))
        assert (rep.tp, rep.fp, rep.fn) == (6, 2, 4)
        assert rep.precision == 0.75
        assert rep.recall == 0.6
        assert rep.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35, abs=1e-15)
        assert rep.f1 == pytest.approx(0.6667, abs=1e-4)

    def test_perfect(self):
        truth = [(0, 3), (2, 1), (5, 5)]
        rep = score_matches(match_set(truth), gt_from_pairs(truth))
        assert rep.precision == rep.recall == rep.f1 == 1.0

    def test_empty_prediction(self):
        rep = score_matches(match_set([]), gt_from_pairs([(0, 0)]))
        assert rep.precision == rep.recall == rep.f1 == 0.0
        assert rep.fn == 1

    def test_empty_truth_and_prediction(self):
        rep = score_matches(match_set([]), gt_from_pairs([]))
        assert rep.f1 == 0.0

    def test_dustbin_miss_is_only_false_negative(self):
        rep = score_matches(match_set([(0, 0)]), gt_from_pairs([(0, 0), (1, 1)]))
        assert (rep.tp, rep.fp, rep.fn) == (1, 0, 1)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_order_invariant_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        truth = list(zip(range(8), rng.permutation(8)))
        pred = list(zip(rng.permutation(8)[:5], rng.permutation(8)[:5]))
        gt = gt_from_pairs(truth, 8, 8)
        a = score_matches(match_set(pred), gt)
        b = score_matches(match_set(pred[::-1]), gt)
        assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)
        assert 0.0 <= a.f1 <= 1.0
        assert (a.f1 == 0.0) == (a.tp == 0)

    def test_mean_scores(self):
        gt = gt_from_pairs([(0, 0), (1, 1)])
        reps = [score_matches(match_set([(0, 0), (1, 1)]), gt), score_matches(match_set([]), gt)]
        assert mean_scores(reps) == {"precision": 0.5, "recall": 0.5, "f1": 0.5}
        assert mean_scores([]) == {"precision": 0.0, "recall": 0.0, "f1": 0.0}


class TestPoseAuc:
    def test_two_errors_at_ten(self):
        auc = pose_auc([0.0, 10.0], thresholds=(10.0,))[0]
        assert auc == 0.75
        assert abs(auc - numeric_auc([0.0, 10.0], 10.0)) < 1e-9

    def test_against_numeric_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            errs = rng.uniform(0, 25, size=rng.integers(1, 12))
            for t, a in zip((5.0, 10.0, 20.0), pose_auc(errs)):
                assert abs(a - numeric_auc(errs, t)) < 1e-9

    def test_all_zero(self):
        assert pose_auc([0.0, 0.0, 0.0]) == [1.0, 1.0, 1.0]

    def test_all_large(self):
        assert pose_auc([21.0, 40.0, 180.0]) == [0.0, 0.0, 0.0]

    def test_piecewise_hand_value(self):
        # areas: triangle to (2, 0.5), trapezoid to (4, 1), flat to 5
        assert pose_auc([2.0, 4.0], thresholds=(5.0,))[0] == pytest.approx((0.5 + 1.5 + 1.0) / 5, abs=1e-15)

    def test_empty(self):
        with pytest.raises(EmptyErrors):
            pose_auc([])

    def test_negative(self):
        with pytest.raises(ValueError):
            pose_auc([-1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 30), min_size=1, max_size=10), st.floats(0, 5))
    def test_monotone_under_inflation(self, errs, extra):
        base = pose_auc(errs)
        inflated = pose_auc(np.asarray(errs) + extra)
        assert all(b >= i - 1e-12 for b, i in zip(base, inflated))
        assert all(0.0 <= a <= 1.0 for a in base)


class TestHomography:
    def test_accuracy_identical_is_zero(self, rng):
        h = random_homography(rng)
        ok, err = homography_accuracy(h, h, 640, 480)
        assert ok and err == 0.0

    def test_accuracy_four_px_translation(self):
        shift = Homography(np.array([[1.0, 0, 4.0], [0, 1, 0], [0, 0, 1]]))
        ok, err = homography_accuracy(shift, Homography.identity(), 640, 480)
        assert not ok
        assert err == pytest.approx(4.0, abs=1e-12)

    def test_accuracy_vs_direct_corners(self, rng):
        for _ in range(20):
            h1, h2 = random_homography(rng), random_homography(rng)
            corners = [(0, 0), (640, 0), (640, 480), (0, 480)]
            direct = []
            for x, y in corners:
                p = h1.H @ [x, y, 1.0]
                q = h2.H @ [x, y, 1.0]
                direct.append(np.hypot(p[0] / p[2] - q[0] / q[2], p[1] / p[2] - q[1] / q[2]))
            _, err = homography_accuracy(h1, h2, 640, 480)
            assert abs(err - np.mean(direct)) < 1e-12

    def test_ransac_exact(self, rng):
        h = random_homography(rng)
        src = rng.uniform([0, 0], [640, 480], size=(20, 2))
        est, mask = estimate_homography_ransac(src, warp_homography(h, src), seed=0)
        assert mask.all()
        corners = image_corners(640, 480)
        assert np.abs(warp_homography(est, corners) - warp_homography(h, corners)).max() < 1e-6

    def test_ransac_too_few(self):
        with pytest.raises(InsufficientMatches):
            estimate_homography_ransac(np.zeros((3, 2)), np.zeros((3, 2)))

    def test_ransac_deterministic(self, rng):
        src = rng.uniform(0, 500, size=(30, 2))
        dst = rng.uniform(0, 500, size=(30, 2))
        a, ma = estimate_homography_ransac(src, dst, iterations=50, seed=3)
        b, mb = estimate_homography_ransac(src, dst, iterations=50, seed=3)
        np.testing.assert_array_equal(a.H, b.H)
        np.testing.assert_array_equal(ma, mb)


class TestPoseEstimation:
    def test_kabsch_exact(self, rng):
        for _ in range(20):
            T = random_pose(rng)
            pb = rng.normal(size=(10, 3))
            est = kabsch(T.apply(pb), pb)
            np.testing.assert_allclose(est.rotation, T.rotation, atol=1e-10)
            np.testing.assert_allclose(est.translation, T.translation, atol=1e-10)
            assert np.linalg.det(est.rotation) == pytest.approx(1.0)

    def test_rgbd_ransac_rejects_outliers(self, rng):
        T = random_pose(rng, max_angle=0.5, max_t=0.5)
        pb = rng.uniform(-1, 1, size=(40, 3)) + [0, 0, 3]
        pa = T.apply(pb)
        pa[:15] += rng.uniform(-1, 1, size=(15, 3))
        est = estimate_pose_rgbd(pa, pb, seed=0)
        np.testing.assert_allclose(est.rotation, T.rotation, atol=1e-9)
        np.testing.assert_allclose(est.translation, T.translation, atol=1e-9)

    def test_rgbd_too_few(self):
        with pytest.raises(InsufficientMatches):
            estimate_pose_rgbd(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_identity(self, rng):
        p = rng.normal(size=(5, 3))
        est = kabsch(p, p)
        assert isinstance(est, Pose)
        np.testing.assert_allclose(est.rotation, np.eye(3), atol=1e-12)
