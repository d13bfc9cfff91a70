import numpy as np
import pytest

from kpmatch.errors import EmptyMeasurements, NonMonotonicTimestamps, NonPositiveSigma
from kpmatch.features import FeatureSet
from kpmatch.geometry import Homography, Pose, rotation_angle_deg, so3_exp
from kpmatch.imu_prior import (
    MAX_SQDIST,
    ImuSample,
    build_priors,
    constant_velocity_prior,
    cross_prior,
    cross_prior_homography,
    gaussian_score,
    integrate_imu,
    integrate_imu_state,
    noisy_homography_prior,
    self_prior,
    UNIT_SQUARE,
)
from kpmatch.geometry import homography_transform

G = np.array([0.0, 0.0, 9.81])


def imu_log(omega_fn, accel_world_fn, duration, rate=100.0):
    """Samples of a trajectory with R(0) = I, given body rate and world acceleration."""
    n = int(round(duration * rate))
    t = np.arange(n + 1) / rate
    samples = []
    rot = np.eye(3)
    for k, tk in enumerate(t):
        if k:
            rot = rot @ so3_exp(omega_fn(tk - 0.5 / rate) / rate)
        acc_body = rot.T @ (accel_world_fn(tk) + G)
        samples.append(ImuSample(tk, omega_fn(tk), acc_body))
    return samples


class TestIntegration:
    def test_static(self):
        samples = imu_log(lambda t: np.zeros(3), lambda t: np.zeros(3), 1.0)
        T = integrate_imu(samples, np.zeros(3), G, 0.0, 1.0)
        np.testing.assert_allclose(T.matrix(), np.eye(4), atol=1e-9)

    def test_constant_twist(self):
        samples = imu_log(lambda t: np.array([0, 0, np.pi]), lambda t: np.zeros(3), 0.5)
        T = integrate_imu(samples, np.zeros(3), G, 0.0, 0.5)
        np.testing.assert_allclose(T.rotation, so3_exp([0, 0, np.pi / 2]), atol=1e-3)
        np.testing.assert_allclose(T.translation, 0, atol=1e-3)

    def test_constant_acceleration(self):
        samples = [ImuSample(k / 100, np.zeros(3), G + [1.0, 0, 0]) for k in range(101)]
        T = integrate_imu(samples, np.zeros(3), G, 0.0, 1.0)
        np.testing.assert_allclose(T.translation, [0.5, 0, 0], atol=1e-3)
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-12)

    def test_split_interval_composes(self):
        samples = imu_log(
            lambda t: np.array([0.3 * np.sin(t), 0.2, 0.5 * np.cos(2 * t)]),
            lambda t: np.array([np.cos(t), 0.5 * np.sin(3 * t), 0.1]),
            2.0,
        )
        v0 = np.array([0.2, 0.0, -0.1])
        full = integrate_imu(samples, v0, G, 0.0, 2.0)
        mid = integrate_imu_state(samples, v0, G, 0.0, 1.0)
        first = integrate_imu(samples, v0, G, 0.0, 1.0)
        second = integrate_imu(samples, mid.velocity, G, 1.0, 2.0, initial_orientation=mid.orientation)
        np.testing.assert_allclose((first @ second).matrix(), full.matrix(), atol=1e-6)

    def test_array_input(self):
        samples = imu_log(lambda t: np.array([0, 0.4, 0]), lambda t: np.zeros(3), 0.3)
        arr = np.array([[s.timestamp, *s.omega, *s.accel] for s in samples])
        a = integrate_imu(samples, np.zeros(3), G, 0.05, 0.25)
        b = integrate_imu(arr, np.zeros(3), G, 0.05, 0.25)
        np.testing.assert_array_equal(a.matrix(), b.matrix())

    def test_errors(self):
        with pytest.raises(EmptyMeasurements):
            integrate_imu([], np.zeros(3), G, 0, 1)
        bad = [ImuSample(0.1, np.zeros(3), G), ImuSample(0.05, np.zeros(3), G)]
        with pytest.raises(NonMonotonicTimestamps):
            integrate_imu(bad, np.zeros(3), G, 0, 1)


class TestConstantVelocity:
    def test_identity(self):
        np.testing.assert_allclose(constant_velocity_prior(Pose.identity(), 0.1, 0.3).matrix(), np.eye(4), atol=1e-12)

    def test_same_interval_is_exact(self):
        T = Pose(so3_exp([0.1, 0.2, 0.3]), [1, 2, 3])
        assert constant_velocity_prior(T, 0.1, 0.1) is T

    def test_doubling(self):
        T = Pose(so3_exp([0, 0, np.radians(10)]), [0.1, 0, 0])
        out = constant_velocity_prior(T, 0.05, 0.1)
        assert rotation_angle_deg(out.rotation) == pytest.approx(20, abs=1e-9)
        np.testing.assert_allclose(out.matrix(), (T @ T).matrix(), atol=1e-9)


def _feats(px, size=(640, 480), depth=None):
    px = np.asarray(px, dtype=float)
    return FeatureSet(px, np.ones((len(px), 4)), depth, size)


class TestSpatialPrior:
    def test_score_values(self):
        assert gaussian_score(0.0, 0.1) == 1.0
        assert gaussian_score(0.1, 0.1) == pytest.approx(np.exp(-1))
        with pytest.raises(NonPositiveSigma):
            gaussian_score(0.1, 0.0)

    def test_self_prior_single(self):
        p = self_prior(_feats([[10, 10]]), 0.1)
        np.testing.assert_array_equal(p.s, [[1.0]])

    def test_self_prior_two_points(self):
        sigma = 0.1
        dx = np.sqrt(sigma)
        p = self_prior(FeatureSet.from_normalized([[0.1, 0.2], [0.1 + dx, 0.2]], np.eye(2)), sigma)
        np.testing.assert_allclose(p.s, [[1, np.exp(-1)], [np.exp(-1), 1]], rtol=1e-12)

    def test_self_prior_symmetric_unit_diagonal(self, rng):
        p = self_prior(_feats(rng.uniform([0, 0], [640, 480], (30, 2))), 0.1)
        np.testing.assert_array_equal(p.s, p.s.T)
        np.testing.assert_array_equal(np.diag(p.s), 1.0)
        assert np.all((p.s >= 0) & (p.s <= 1))

    def test_cross_identity_equals_self(self, rng, camera):
        px = rng.uniform([0, 0], [640, 480], (20, 2))
        f = _feats(px, depth=rng.uniform(1, 4, 20))
        cross = cross_prior(camera, camera, Pose.identity(), f, f, 0.1)
        np.testing.assert_allclose(cross.s, self_prior(f, 0.1).s, atol=1e-12)
        expected = np.exp(-((px[:, None] - px[None]) / [640, 480]) ** 2 @ [1, 1] / 0.1)
        np.testing.assert_allclose(cross.s, expected, atol=1e-12)

    def test_cross_invalid_rows_are_zero(self, camera):
        fa = _feats([[320, 240], [100, 100], [630, 470]], depth=[2.0, np.nan, 2.0])
        fb = _feats([[320, 240], [300, 200]])
        T = Pose(np.eye(3), [-0.6, 0, 0])  # pushes the right-edge point out of B's view
        p = cross_prior(camera, camera, T, fa, fb, 0.1)
        assert p.valid.tolist() == [True, False, False]
        np.testing.assert_array_equal(p.s[1:], 0.0)
        np.testing.assert_array_equal(p.sqdist[1:], MAX_SQDIST)

    def test_monotone_in_distance(self):
        d = np.linspace(0, 1, 50)
        assert np.all(np.diff(gaussian_score(d, 0.1)) < 0)

    def test_build_priors_shapes(self, rng, camera):
        fa = _feats(rng.uniform([0, 0], [640, 480], (7, 2)), depth=np.full(7, 2.0))
        fb = _feats(rng.uniform([0, 0], [640, 480], (5, 2)), depth=np.full(5, 2.0))
        priors = build_priors(camera, camera, Pose.identity(), fa, fb, 0.1)
        assert priors["self_a"].shape == (7, 7)
        assert priors["self_b"].shape == (5, 5)
        assert priors["cross_ab"].shape == (7, 5)
        assert priors["cross_ba"].shape == (5, 7)

    def test_homography_prior(self, camera):
        fa = _feats([[100, 100], [200, 50]])
        fb = _feats([[105, 97], [400, 400]])
        H = Homography(np.array([[1, 0, 5], [0, 1, -3], [0, 0, 1.0]]))
        p = cross_prior_homography(H, camera, fa, fb, 0.1)
        assert p.s[0, 0] == 1.0


class TestNoisyHomography:
    H = Homography(np.array([[1.1, 0.05, 0.02], [-0.03, 0.95, 0.01], [0.1, -0.05, 1.0]]))

    def test_zero_noise_is_exact(self):
        assert noisy_homography_prior(self.H, 0.0, 3) is self.H

    def test_deterministic(self):
        a = noisy_homography_prior(self.H, 0.01, 3)
        b = noisy_homography_prior(self.H, 0.01, 3)
        np.testing.assert_array_equal(a.H, b.H)

    def test_corner_noise_scale(self):
        scale = 0.02
        base, _ = homography_transform(self.H, UNIT_SQUARE)
        disp = []
        for seed in range(1000):
            h = noisy_homography_prior(self.H, scale, seed)
            disp.append(homography_transform(h, UNIT_SQUARE)[0] - base)
        std = np.std(np.concatenate(disp))
        assert abs(std - scale) < 0.2 * scale
