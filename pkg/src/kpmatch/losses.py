"""Ground-truth correspondences and the two training objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kpmatch import autodiff as ad
from kpmatch.autodiff import Tensor
from kpmatch.errors import MissingDepth
from kpmatch.features import FeatureSet
from kpmatch.geometry import CameraIntrinsics, Homography, Pose, homography_transform, warp_keypoints

LOG_CLAMP = 1e-12
DEFAULT_TH = 3.0
DEFAULT_MG = 10.0


@dataclass
class GroundTruth:
    """Mutual-nearest correspondences under a pixel threshold.

    ``distances`` is the full reprojection distance matrix (inf where the
    warp is invalid); ``pairs`` and ``pair_distances`` are the accepted
    correspondences; every other index is listed as unmatched.
    """

    distances: np.ndarray
    threshold: float
    pairs: np.ndarray
    pair_distances: np.ndarray
    unmatched_a: np.ndarray
    unmatched_b: np.ndarray

    @classmethod
    def from_distances(cls, distances, threshold: float) -> GroundTruth:
        d = np.asarray(distances, dtype=np.float64)
        pairs = mutual_min_pairs(d, threshold)
        n_a, n_b = d.shape
        return cls(
            d,
            float(threshold),
            pairs,
            d[pairs[:, 0], pairs[:, 1]] if len(pairs) else np.zeros(0),
            np.setdiff1d(np.arange(n_a), pairs[:, 0]),
            np.setdiff1d(np.arange(n_b), pairs[:, 1]),
        )

    def with_threshold(self, threshold: float) -> GroundTruth:
        """Same distances, different acceptance threshold (e.g. the projection-loss margin)."""
        return GroundTruth.from_distances(self.distances, threshold)

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}


def mutual_min_pairs(distances, threshold: float) -> np.ndarray:
    """Pairs that are each other's nearest neighbour and closer than ``threshold``.

    Ties resolve to the smallest index so the result is always one-to-one.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        return np.zeros((0, 2), dtype=int)
    best_j = d.argmin(axis=1)
    best_i = d.argmin(axis=0)
    rows = np.arange(d.shape[0])
    keep = (best_i[best_j] == rows) & (d[rows, best_j] < threshold)
    return np.stack([rows[keep], best_j[keep]], axis=1).astype(int)


def reprojection_distances(
    K_A: CameraIntrinsics,
    K_B: CameraIntrinsics,
    feats_A: FeatureSet,
    feats_B: FeatureSet,
    pose: Pose | None = None,
    homography: Homography | None = None,
) -> np.ndarray:
    if (pose is None) == (homography is None):
        raise ValueError("exactly one of pose or homography is required")
    if pose is not None:
        if feats_A.depths is None or not feats_A.has_depth.any():
            raise MissingDepth("pose-based ground truth needs keypoint depths in image A")
        warped, valid = warp_keypoints(K_A, K_B, pose, feats_A.keypoints, feats_A.depths)
    else:
        warped, valid = homography_transform(homography, feats_A.keypoints)
    diff = warped[:, None, :] - feats_B.keypoints[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    d[~valid] = np.inf
    return d


def build_ground_truth(K_A, K_B, feats_A, feats_B, th: float = DEFAULT_TH, pose=None, homography=None) -> GroundTruth:
    if not th > 0:
        raise ValueError("threshold must be positive")
    return GroundTruth.from_distances(reprojection_distances(K_A, K_B, feats_A, feats_B, pose, homography), th)


def _log_prob(assignment):
    return ad.log(ad.clip(ad.as_tensor(assignment), LOG_CLAMP, 1.0))


def _negative_term(logp, unmatched_a, unmatched_b):
    n_a, n_b = logp.shape[0] - 1, logp.shape[1] - 1
    count = len(unmatched_a) + len(unmatched_b)
    if count == 0:
        return Tensor(0.0)
    rows = np.concatenate([np.asarray(unmatched_a, dtype=int), np.full(len(unmatched_b), n_a)])
    cols = np.concatenate([np.full(len(unmatched_a), n_b), np.asarray(unmatched_b, dtype=int)])
    return -ad.sum(logp[rows, cols]) * (1.0 / count)


def _finish(total, assignment):
    return total.item() if not isinstance(assignment, Tensor) else total


def matching_loss(assignment, gt: GroundTruth):
    """``2 * positive + negative`` negative log-likelihood of the assignment."""
    logp = _log_prob(assignment)
    if len(gt.pairs):
        pos = -ad.sum(logp[gt.pairs[:, 0], gt.pairs[:, 1]]) * (1.0 / len(gt.pairs))
    else:
        pos = Tensor(0.0)
    total = 2.0 * pos + _negative_term(logp, gt.unmatched_a, gt.unmatched_b)
    return _finish(total, assignment)


def projection_weights(distances, th: float) -> np.ndarray:
    return np.exp(th - np.asarray(distances, dtype=np.float64))


def projection_loss(assignment, gt_margin: GroundTruth, th: float = DEFAULT_TH):
    """Distance-weighted likelihood over margin-relaxed correspondences.

    ``gt_margin`` holds the mutual minima under the margin; each positive
    pair's log-likelihood is weighted by ``exp(th - d)``.
    """
    logp = _log_prob(assignment)
    pairs = gt_margin.pairs
    if len(pairs):
        w = Tensor(projection_weights(gt_margin.pair_distances, th))
        pos = -ad.sum(w * logp[pairs[:, 0], pairs[:, 1]]) * (1.0 / len(pairs))
    else:
        pos = Tensor(0.0)
    total = 2.0 * pos + _negative_term(logp, gt_margin.unmatched_a, gt_margin.unmatched_b)
    return _finish(total, assignment)
