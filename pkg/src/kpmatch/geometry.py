"""Rigid poses, the pinhole camera and planar homographies.

Pose convention: ``T_AB`` is the pose of frame B expressed in frame A, so a
point with B-frame coordinates ``x_b`` has A-frame coordinates
``R @ x_b + t``.  Warping a keypoint from image A into image B therefore
applies ``T_AB.inverse()`` to its back-projected landmark.

Everything here runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kpmatch.errors import DegenerateDivision, NonPositiveDepth

_DEPTH_EPS = 1e-9
_W_EPS = 1e-12


def hat(w):
    """Skew-symmetric matrix of a 3-vector."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    k = hat(w)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * k @ k
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * k @ k


def so3_log(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    skew = vee(r - r.T) / 2.0
    sin = np.linalg.norm(skew)
    theta = np.arctan2(sin, cos)
    if theta < 1e-8:
        return skew
    if np.pi - theta < 1e-6:
        # near pi the skew part vanishes; recover the axis from the symmetric part
        s = (r + np.eye(3)) / 2.0
        axis = s[np.argmax(np.diag(s))]
        axis = axis / np.linalg.norm(axis)
        if np.dot(axis, skew) < 0:
            axis = -axis
        return theta * axis
    return theta / sin * skew


def _so3_left_jacobian(w):
    theta = np.linalg.norm(w)
    k = hat(w)
    if theta < 1e-8:
        return np.eye(3) + 0.5 * k + k @ k / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * k + b * k @ k


def rotation_angle_deg(r) -> float:
    cos = (np.trace(r) - 1.0) / 2.0
    sin = np.linalg.norm(vee(r - r.T)) / 2.0
    return float(np.degrees(np.arctan2(sin, cos)))


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q, t) -> Pose:
        """Build from a (w, x, y, z) quaternion; it is renormalized first."""
        w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
        r = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        return cls(r, t)

    def to_quaternion(self) -> np.ndarray:
        w = self.log()[:3]
        theta = np.linalg.norm(w)
        if theta < 1e-12:
            return np.array([1.0, 0.0, 0.0, 0.0])
        axis = w / theta
        return np.concatenate([[np.cos(theta / 2)], np.sin(theta / 2) * axis])

    @classmethod
    def exp(cls, xi) -> Pose:
        """SE(3) exponential of a twist ``(omega, rho)``."""
        xi = np.asarray(xi, dtype=np.float64)
        w, rho = xi[:3], xi[3:]
        return cls(so3_exp(w), _so3_left_jacobian(w) @ rho)

    def log(self) -> np.ndarray:
        w = so3_log(self.rotation)
        rho = np.linalg.solve(_so3_left_jacobian(w), self.translation)
        return np.concatenate([w, rho])

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: Pose) -> Pose:
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        """Map points (3,) or (N, 3) from the child frame into the parent frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_view(self, pixels) -> np.ndarray:
        px = np.asarray(pixels, dtype=np.float64)
        return (px[..., 0] >= 0) & (px[..., 0] < self.width) & (px[..., 1] >= 0) & (px[..., 1] < self.height)

    def normalize(self, pixels) -> np.ndarray:
        return np.asarray(pixels, dtype=np.float64) / np.array([self.width, self.height], dtype=np.float64)


@dataclass(frozen=True)
class Homography:
    H: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.H, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(h)) <= 1e-12:
            raise DegenerateDivision("singular homography")
        if abs(h[2, 2]) > 1e-12:
            h = h / h[2, 2]
        object.__setattr__(self, "H", h)

    @classmethod
    def identity(cls) -> Homography:
        return cls(np.eye(3))

    def inverse(self) -> Homography:
        return Homography(np.linalg.inv(self.H))


def project(K: CameraIntrinsics, landmark) -> np.ndarray:
    x, y, z = np.asarray(landmark, dtype=np.float64)
    if z <= _DEPTH_EPS:
        raise NonPositiveDepth(f"landmark depth {z} is not in front of the camera")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def unproject(K: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    u, v = np.asarray(pixel, dtype=np.float64)
    return np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])


def project_points(K: CameraIntrinsics, landmarks):
    """Vectorized projection; returns (pixels, valid) with valid meaning z > 0."""
    pts = np.asarray(landmarks, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > _DEPTH_EPS
    zs = np.where(valid, z, 1.0)
    px = np.stack([K.fx * pts[:, 0] / zs + K.cx, K.fy * pts[:, 1] / zs + K.cy], axis=1)
    return px, valid


def unproject_points(K: CameraIntrinsics, pixels, depths) -> np.ndarray:
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    return np.stack([(px[:, 0] - K.cx) / K.fx * d, (px[:, 1] - K.cy) / K.fy * d, d], axis=1)


def warp_keypoint(K_A: CameraIntrinsics, K_B: CameraIntrinsics, T_AB: Pose, p, depth: float):
    """Warp one pixel of image A into image B.

    Returns the B pixel, or None when the landmark lands behind camera B or
    outside its image.
    """
    landmark_b = T_AB.inverse().apply(unproject(K_A, p, depth))
    if landmark_b[2] <= _DEPTH_EPS:
        return None
    px = project(K_B, landmark_b)
    if not K_B.in_view(px):
        return None
    return px


def warp_keypoints(K_A: CameraIntrinsics, K_B: CameraIntrinsics, T_AB: Pose, pixels, depths):
    """Vectorized warp.  Missing (NaN) or non-positive depths are invalid."""
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    has_depth = np.isfinite(d) & (d > 0)
    landmarks = unproject_points(K_A, pixels, np.where(has_depth, d, 1.0))
    px, in_front = project_points(K_B, T_AB.inverse().apply(landmarks))
    valid = has_depth & in_front & K_B.in_view(px)
    return px, valid


def homography_transform(H, points):
    """Vectorized projective transform; returns (points, valid).

    ``H`` may be a :class:`Homography` or a raw 3x3 array.
    """
    h = H.H if isinstance(H, Homography) else np.asarray(H, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hom = pts @ h[:, :2].T + h[:, 2]
    w = hom[:, 2]
    valid = np.abs(w) >= _W_EPS
    ws = np.where(valid, w, 1.0)
    return hom[:, :2] / ws[:, None], valid


def warp_homography(H: Homography, p) -> np.ndarray:
    out, valid = homography_transform(H, p)
    if not valid.all():
        raise DegenerateDivision("homogeneous coordinate vanished")
    return out.reshape(np.shape(p))


def _hartley(points):
    mean = points.mean(axis=0)
    scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(points - mean, axis=1)), 1e-12)
    t = np.array([[scale, 0.0, -scale * mean[0]], [0.0, scale, -scale * mean[1]], [0.0, 0.0, 1.0]])
    return t, (points - mean) * scale


def fit_homography_dlt(src, dst) -> np.ndarray:
    """Normalized DLT over >= 4 correspondences; returns a raw 3x3 matrix."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) < 4:
        raise ValueError("DLT needs at least 4 correspondences")
    ts, s = _hartley(src)
    td, d = _hartley(dst)
    n = len(s)
    a = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    a[0::2, 0:3] = np.stack([-x, -y, -np.ones(n)], axis=1)
    a[0::2, 6:9] = np.stack([u * x, u * y, u], axis=1)
    a[1::2, 3:6] = np.stack([-x, -y, -np.ones(n)], axis=1)
    a[1::2, 6:9] = np.stack([v * x, v * y, v], axis=1)
    _, _, vt = np.linalg.svd(a)
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ h @ ts
    if abs(h[2, 2]) > 1e-12:
        h = h / h[2, 2]
    return h


def pose_angular_errors(T_est: Pose, T_gt: Pose) -> tuple[float, float]:
    """Rotation geodesic error and translation-direction error, in degrees."""
    rot = rotation_angle_deg(T_est.rotation @ T_gt.rotation.T)
    a, b = T_est.translation, T_gt.translation
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= 1e-9 and nb <= 1e-9:
        return rot, 0.0
    if na <= 1e-9 or nb <= 1e-9:
        return rot, 180.0
    trans = np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))
    return rot, float(trans)
