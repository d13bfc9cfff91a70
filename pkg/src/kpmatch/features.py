"""Per-image keypoint container shared by every stage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FeatureSet:
    """Keypoints of one image.

    ``keypoints`` are pixel coordinates, ``depths`` holds NaN where a
    keypoint has no depth, and ``image_size`` is ``(width, height)`` used to
    normalize positions into the unit square.
    """

    keypoints: np.ndarray
    descriptors: np.ndarray
    depths: np.ndarray | None = None
    image_size: tuple[float, float] = field(default=(1.0, 1.0))

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        self.descriptors = np.atleast_2d(np.asarray(self.descriptors, dtype=np.float64))
        if len(self.keypoints) < 1:
            raise ValueError("a feature set needs at least one keypoint")
        if len(self.descriptors) != len(self.keypoints):
            raise ValueError("keypoint and descriptor counts differ")
        if not np.all(np.isfinite(self.descriptors)):
            raise ValueError("descriptors must be finite")
        if self.depths is not None:
            self.depths = np.asarray(self.depths, dtype=np.float64).reshape(-1)
            if len(self.depths) != len(self.keypoints):
                raise ValueError("depth count differs from keypoint count")

    @classmethod
    def from_normalized(cls, positions, descriptors, depths=None) -> FeatureSet:
        return cls(positions, descriptors, depths, (1.0, 1.0))

    def __len__(self) -> int:
        return len(self.keypoints)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.keypoints / np.asarray(self.image_size, dtype=np.float64)

    @property
    def has_depth(self) -> np.ndarray:
        if self.depths is None:
            return np.zeros(len(self), dtype=bool)
        return np.isfinite(self.depths) & (self.depths > 0)

    def permuted(self, order) -> FeatureSet:
        order = np.asarray(order)
        depths = None if self.depths is None else self.depths[order]
        return FeatureSet(self.keypoints[order], self.descriptors[order], depths, self.image_size)
