"""Motion prior from inertial measurements and the keypoint spatial prior.

The inertial integrator is a midpoint strapdown scheme: orientation advances
by the exponential map of the averaged angular rate, and gravity-compensated
world acceleration is averaged over each step (trapezoid rule).  Spatial
priors are Gaussian scores of squared distances in normalized image
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from kpmatch.errors import EmptyMeasurements, NonMonotonicTimestamps, NonPositiveSigma
from kpmatch.features import FeatureSet
from kpmatch.geometry import (
    CameraIntrinsics,
    Homography,
    Pose,
    fit_homography_dlt,
    homography_transform,
    so3_exp,
    warp_keypoints,
)

DIRECTIONS = ("self_a", "self_b", "cross_ab", "cross_ba")
# squared image diagonal in normalized units; distance used for rows with no usable warp
MAX_SQDIST = 2.0


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    omega: np.ndarray
    accel: np.ndarray


@dataclass
class ImuState:
    orientation: np.ndarray
    velocity: np.ndarray
    position: np.ndarray


@dataclass
class PriorMatrix:
    """Spatial prior for one attention direction.

    Holds the squared normalized distances rather than the scores so the
    attention can rescale them with its own (trainable) bandwidth.  Rows
    flagged invalid have no usable warp: their score is zero and their
    distances are pinned to ``MAX_SQDIST``.
    """

    sqdist: np.ndarray
    valid: np.ndarray
    sigma: float
    direction: str

    @property
    def shape(self):
        return self.sqdist.shape

    @property
    def s(self) -> np.ndarray:
        s = np.exp(-self.sqdist / self.sigma)
        s[~self.valid] = 0.0
        return s

    def transposed_direction(self) -> str:
        return {"self_a": "self_b", "self_b": "self_a", "cross_ab": "cross_ba", "cross_ba": "cross_ab"}[self.direction]

    def permuted(self, rows, cols) -> PriorMatrix:
        return PriorMatrix(self.sqdist[np.ix_(rows, cols)], self.valid[rows], self.sigma, self.direction)


def _as_arrays(samples):
    if isinstance(samples, np.ndarray):
        arr = np.asarray(samples, dtype=np.float64).reshape(-1, 7)
        return arr[:, 0], arr[:, 1:4], arr[:, 4:7]
    samples = list(samples)
    if not samples:
        raise EmptyMeasurements("no IMU samples")
    t = np.array([s.timestamp for s in samples], dtype=np.float64)
    w = np.array([s.omega for s in samples], dtype=np.float64).reshape(-1, 3)
    a = np.array([s.accel for s in samples], dtype=np.float64).reshape(-1, 3)
    return t, w, a


def _resample(t, values, grid):
    return np.stack([np.interp(grid, t, values[:, c]) for c in range(values.shape[1])], axis=1)


def integrate_imu_state(
    samples: Sequence[ImuSample] | np.ndarray,
    initial_velocity,
    gravity,
    t_start: float,
    t_end: float,
    initial_orientation=None,
) -> ImuState:
    """Propagate orientation, velocity and position from ``t_start`` to ``t_end``.

    The state starts at the origin with ``initial_orientation`` (world from
    body, identity by default).  Measurements are linearly interpolated onto
    the interval ends and held constant outside the sampled range.
    """
    t, w, a = _as_arrays(samples)
    if len(t) == 0:
        raise EmptyMeasurements("no IMU samples")
    if np.any(np.diff(t) <= 0):
        raise NonMonotonicTimestamps("IMU timestamps must be strictly increasing")
    if not t_end > t_start:
        raise ValueError("t_end must be after t_start")

    inner = t[(t > t_start) & (t < t_end)]
    grid = np.concatenate([[t_start], inner, [t_end]])
    ws = _resample(t, w, grid)
    acs = _resample(t, a, grid)
    g = np.asarray(gravity, dtype=np.float64)

    rot = np.eye(3) if initial_orientation is None else np.asarray(initial_orientation, dtype=np.float64)
    vel = np.asarray(initial_velocity, dtype=np.float64).copy()
    pos = np.zeros(3)
    for k in range(len(grid) - 1):
        dt = grid[k + 1] - grid[k]
        rot_next = rot @ so3_exp(0.5 * (ws[k] + ws[k + 1]) * dt)
        acc = 0.5 * (rot @ acs[k] + rot_next @ acs[k + 1]) - g
        pos = pos + vel * dt + 0.5 * acc * dt * dt
        vel = vel + acc * dt
        rot = rot_next
    return ImuState(rot, vel, pos)


def integrate_imu(samples, initial_velocity, gravity, t_start, t_end, initial_orientation=None) -> Pose:
    """Relative pose of the body at ``t_end`` expressed in the body frame at ``t_start``."""
    r0 = np.eye(3) if initial_orientation is None else np.asarray(initial_orientation, dtype=np.float64)
    state = integrate_imu_state(samples, initial_velocity, gravity, t_start, t_end, r0)
    return Pose(r0.T @ state.orientation, r0.T @ state.position)


def constant_velocity_prior(T_prev: Pose, dt_prev: float, dt_cur: float) -> Pose:
    """Extrapolate the previous relative motion over a new time step."""
    if not dt_prev > 0:
        raise ValueError("dt_prev must be positive")
    ratio = dt_cur / dt_prev
    if ratio == 1.0:
        return T_prev
    return Pose.exp(T_prev.log() * ratio)


def gaussian_score(sqdist, sigma):
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    return np.exp(-np.asarray(sqdist) / sigma)


def _sqdist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def prior_from_warped(warped_norm, valid, target_norm, sigma: float, direction: str) -> PriorMatrix:
    """Prior from source positions already mapped into the target image (normalized units)."""
    if not sigma > 0:
        raise NonPositiveSigma(f"sigma must be positive, got {sigma}")
    valid = np.asarray(valid, dtype=bool)
    sq = _sqdist(np.asarray(warped_norm, dtype=np.float64), np.asarray(target_norm, dtype=np.float64))
    sq[~valid] = MAX_SQDIST
    return PriorMatrix(sq, valid, float(sigma), direction)


def self_prior(feats: FeatureSet, sigma: float, direction: str = "self_a") -> PriorMatrix:
    pos = feats.positions
    return prior_from_warped(pos, np.ones(len(pos), dtype=bool), pos, sigma, direction)


def cross_prior(
    K_A: CameraIntrinsics,
    K_B: CameraIntrinsics,
    T_AB: Pose,
    feats_A: FeatureSet,
    feats_B: FeatureSet,
    sigma: float,
    direction: str = "cross_ab",
) -> PriorMatrix:
    """Warp A's keypoints into B with the motion prior and score against B's keypoints.

    Keypoints without depth or leaving B's frame get an all-zero score row.
    """
    depths = feats_A.depths if feats_A.depths is not None else np.full(len(feats_A), np.nan)
    warped, valid = warp_keypoints(K_A, K_B, T_AB, feats_A.keypoints, depths)
    return prior_from_warped(K_B.normalize(warped), valid, K_B.normalize(feats_B.keypoints), sigma, direction)


def cross_prior_homography(
    H_AB: Homography, K_B: CameraIntrinsics, feats_A: FeatureSet, feats_B: FeatureSet, sigma: float,
    direction: str = "cross_ab",
) -> PriorMatrix:
    warped, valid = homography_transform(H_AB, feats_A.keypoints)
    valid &= K_B.in_view(warped)
    return prior_from_warped(K_B.normalize(warped), valid, K_B.normalize(feats_B.keypoints), sigma, direction)


def build_priors(K_A, K_B, T_AB: Pose, feats_A, feats_B, sigma: float) -> dict[str, PriorMatrix]:
    """All four directional priors for a pose-prior pair."""
    return {
        "self_a": self_prior(feats_A, sigma, "self_a"),
        "self_b": self_prior(feats_B, sigma, "self_b"),
        "cross_ab": cross_prior(K_A, K_B, T_AB, feats_A, feats_B, sigma, "cross_ab"),
        "cross_ba": cross_prior(K_B, K_A, T_AB.inverse(), feats_B, feats_A, sigma, "cross_ba"),
    }


def build_priors_homography(H_AB: Homography, K_A, K_B, feats_A, feats_B, sigma: float) -> dict[str, PriorMatrix]:
    return {
        "self_a": self_prior(feats_A, sigma, "self_a"),
        "self_b": self_prior(feats_B, sigma, "self_b"),
        "cross_ab": cross_prior_homography(H_AB, K_B, feats_A, feats_B, sigma, "cross_ab"),
        "cross_ba": cross_prior_homography(H_AB.inverse(), K_A, feats_B, feats_A, sigma, "cross_ba"),
    }


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def noisy_homography_prior(H_gt: Homography, noise_scale: float, seed: int) -> Homography:
    """Perturb the images of the unit-square corners with Gaussian noise and refit."""
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    if noise_scale == 0:
        return H_gt
    rng = np.random.default_rng(seed)
    corners, _ = homography_transform(H_gt, UNIT_SQUARE)
    noisy = corners + rng.normal(0.0, noise_scale, size=corners.shape)
    return Homography(fit_homography_dlt(UNIT_SQUARE, noisy))
