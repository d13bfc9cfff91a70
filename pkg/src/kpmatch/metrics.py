"""Matching precision/recall, homography accuracy and pose-error AUC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kpmatch.assignment import MatchSet
from kpmatch.errors import EmptyErrors, InsufficientMatches
from kpmatch.geometry import Homography, Pose, fit_homography_dlt, homography_transform, warp_homography
from kpmatch.losses import GroundTruth

AUC_THRESHOLDS = (5.0, 10.0, 20.0)


def _ratio(num, den) -> float:
    return num / den if den else 0.0


@dataclass
class MatchReport:
    tp: int
    fp: int
    fn: int
    records: list = field(default_factory=list)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return _ratio(2 * p * r, p + r)


def score_matches(pred: MatchSet, gt: GroundTruth) -> MatchReport:
    """Unmatched ground truth counts only as a false negative."""
    predicted = pred.as_set()
    truth = gt.as_set()
    tp = len(predicted & truth)
    records = [(i, j, (i, j) in truth) for i, j in sorted(predicted)]
    return MatchReport(tp, len(predicted) - tp, len(truth) - tp, records)


def mean_scores(reports) -> dict[str, float]:
    """Per-pair averages of precision, recall and F1."""
    reports = list(reports)
    if not reports:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    return {
        "precision": float(np.mean([r.precision for r in reports])),
        "recall": float(np.mean([r.recall for r in reports])),
        "f1": float(np.mean([r.f1 for r in reports])),
    }


def reprojection_errors(H: np.ndarray, src, dst) -> np.ndarray:
    warped, valid = homography_transform(H, src)
    err = np.linalg.norm(warped - dst, axis=1)
    err[~valid] = np.inf
    return err


def estimate_homography_ransac(src, dst, iterations: int = 1000, inlier_px: float = 3.0, seed: int = 0):
    """Robust homography from putative matches.

    Four-point DLT hypotheses from seeded random samples are scored by
    inlier count; the winner is refit on all its inliers.  Returns the
    homography and the final inlier mask.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise InsufficientMatches(f"need at least 4 matches, got {n}")
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    for _ in range(iterations):
        idx = rng.choice(n, 4, replace=False)
        try:
            h = fit_homography_dlt(src[idx], dst[idx])
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(h)) or abs(np.linalg.det(h)) <= 1e-12:
            continue
        mask = reprojection_errors(h, src, dst) < inlier_px
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
            if count == n:
                break
    if best_mask is None or best_count < 4:
        raise InsufficientMatches("no non-degenerate homography hypothesis")
    h = fit_homography_dlt(src[best_mask], dst[best_mask])
    mask = reprojection_errors(h, src, dst) < inlier_px
    if mask.sum() >= 4:
        h = fit_homography_dlt(src[mask], dst[mask])
    else:
        mask = best_mask
    return Homography(h), mask


def image_corners(width: float, height: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])


def homography_accuracy(H_est: Homography, H_gt: Homography, width, height, threshold_px: float = 3.0):
    """Mean four-corner distance between two homographies and whether it is under the threshold."""
    corners = image_corners(width, height)
    err = float(np.mean(np.linalg.norm(warp_homography(H_est, corners) - warp_homography(H_gt, corners), axis=1)))
    return err < threshold_px, err


def pose_auc(errors, thresholds=AUC_THRESHOLDS) -> list[float]:
    """Normalized area under the cumulative error curve up to each threshold.

    The curve steps up at each sorted error (errors equal to ``x`` count as
    recalled at ``x``) and is integrated with the trapezoid rule.
    """
    e = np.sort(np.asarray(errors, dtype=np.float64))
    if e.size == 0:
        raise EmptyErrors("pose AUC needs at least one error")
    if np.any(e < 0):
        raise ValueError("errors must be non-negative")
    recall = np.arange(1, len(e) + 1) / len(e)
    e = np.concatenate([[0.0], e])
    recall = np.concatenate([[0.0], recall])
    out = []
    for t in thresholds:
        last = np.searchsorted(e, t, side="right")
        xs = np.concatenate([e[:last], [t]])
        ys = np.concatenate([recall[:last], [recall[last - 1]]])
        out.append(float(np.trapezoid(ys, xs) / t))
    return out


def estimate_pose_rgbd(points_a, points_b, iterations: int = 500, inlier_m: float = 0.05, seed: int = 0) -> Pose:
    """Rigid ``T_AB`` aligning matched 3-D points (``x_a = R x_b + t``), RANSAC over 3-point samples."""
    pa = np.asarray(points_a, dtype=np.float64).reshape(-1, 3)
    pb = np.asarray(points_b, dtype=np.float64).reshape(-1, 3)
    n = len(pa)
    if n < 3:
        raise InsufficientMatches(f"need at least 3 matches, got {n}")
    rng = np.random.default_rng(seed)
    best_mask, best_count = np.ones(n, dtype=bool), -1
    for _ in range(iterations):
        idx = rng.choice(n, 3, replace=False)
        pose = kabsch(pa[idx], pb[idx])
        mask = np.linalg.norm(pose.apply(pb) - pa, axis=1) < inlier_m
        if mask.sum() > best_count:
            best_count, best_mask = int(mask.sum()), mask
    if best_count < 3:
        best_mask = np.ones(n, dtype=bool)
    return kabsch(pa[best_mask], pb[best_mask])


def kabsch(points_a, points_b) -> Pose:
    ca, cb = points_a.mean(axis=0), points_b.mean(axis=0)
    cov = (points_b - cb).T @ (points_a - ca)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r, ca - r @ cb)
