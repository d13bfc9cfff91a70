"""Synthetic two-view scenes standing in for real datasets at desk scale."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kpmatch.features import FeatureSet
from kpmatch.geometry import CameraIntrinsics, Pose, project_points, so3_exp, unproject_points

DEFAULT_CAMERA = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=240.0, width=640, height=480)

# motion of a pose_magnitude=1 pair, before the uniform [0.5, 1] draw
REF_ROTATION_DEG = 10.0
REF_TRANSLATION_M = 0.3
DEPTH_RANGE = (2.0, 6.0)
BORDER_PX = 8.0


@dataclass
class SynthPair:
    feats_a: FeatureSet
    feats_b: FeatureSet
    camera: CameraIntrinsics
    T_ab: Pose
    T_prior: Pose
    covisible: np.ndarray  # (k, 2) index pairs of keypoints that see the same landmark


def _random_unit(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_pose(rng, rotation_deg: float, translation_m: float) -> Pose:
    axis = _random_unit(rng, 1, 3)[0]
    direction = _random_unit(rng, 1, 3)[0]
    return Pose(so3_exp(axis * np.radians(rotation_deg)), direction * translation_m)


def _sample_pixels(rng, K, n):
    return np.stack(
        [rng.uniform(BORDER_PX, K.width - BORDER_PX, n), rng.uniform(BORDER_PX, K.height - BORDER_PX, n)], axis=1
    )


def synth_scene(
    seed: int,
    n_points: int = 64,
    descriptor_dim: int = 16,
    descriptor_noise: float = 0.0,
    outlier_fraction: float = 0.0,
    pose_magnitude: float = 1.0,
    prior_rotation_deg: float = 2.0,
    prior_translation_m: float = 0.03,
    keypoint_noise_px: float = 0.0,
    camera: CameraIntrinsics = DEFAULT_CAMERA,
) -> SynthPair:
    """Two views of a random point cloud with correlated descriptors.

    Each image gets ``n_points`` keypoints.  A ``1 - outlier_fraction`` share
    are projections of landmarks seen by both cameras; their descriptors are
    a shared random unit vector plus independent noise.  The rest are
    single-view points with unrelated descriptors.  ``T_prior`` is the true
    relative pose perturbed by the given rotation/translation error.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if not 0 <= outlier_fraction <= 1:
        raise ValueError("outlier_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    K = camera
    mag = pose_magnitude * rng.uniform(0.5, 1.0)
    T_ab = random_pose(rng, REF_ROTATION_DEG * mag, REF_TRANSLATION_M * mag)
    T_ba = T_ab.inverse()

    n_out = int(round(outlier_fraction * n_points))
    n_cov = n_points - n_out
    lm_a = np.zeros((0, 3))
    while len(lm_a) < n_cov:
        px = _sample_pixels(rng, K, 4 * n_cov + 8)
        cand = unproject_points(K, px, rng.uniform(*DEPTH_RANGE, len(px)))
        proj, front = project_points(K, T_ba.apply(cand))
        inside = front & (proj[:, 0] >= BORDER_PX) & (proj[:, 0] < K.width - BORDER_PX)
        inside &= (proj[:, 1] >= BORDER_PX) & (proj[:, 1] < K.height - BORDER_PX)
        lm_a = np.concatenate([lm_a, cand[inside]])[:n_cov]
    lm_b = T_ba.apply(lm_a)

    kp_a, _ = project_points(K, lm_a)
    kp_b, _ = project_points(K, lm_b)
    if keypoint_noise_px > 0:
        kp_b = kp_b + rng.normal(0.0, keypoint_noise_px, kp_b.shape)
        kp_b = np.clip(kp_b, 0.0, [K.width - 1e-6, K.height - 1e-6])
    depth_a, depth_b = lm_a[:, 2], lm_b[:, 2]

    base = _random_unit(rng, n_cov, descriptor_dim)
    scale = descriptor_noise / np.sqrt(descriptor_dim)
    desc_a = base + scale * rng.normal(size=base.shape)
    desc_b = base + scale * rng.normal(size=base.shape)

    if n_out:
        kp_a = np.concatenate([kp_a, _sample_pixels(rng, K, n_out)])
        kp_b = np.concatenate([kp_b, _sample_pixels(rng, K, n_out)])
        depth_a = np.concatenate([depth_a, rng.uniform(*DEPTH_RANGE, n_out)])
        depth_b = np.concatenate([depth_b, rng.uniform(*DEPTH_RANGE, n_out)])
        desc_a = np.concatenate([desc_a, _random_unit(rng, n_out, descriptor_dim)])
        desc_b = np.concatenate([desc_b, _random_unit(rng, n_out, descriptor_dim)])
    desc_a /= np.linalg.norm(desc_a, axis=1, keepdims=True)
    desc_b /= np.linalg.norm(desc_b, axis=1, keepdims=True)

    order_a = rng.permutation(n_points)
    order_b = rng.permutation(n_points)
    size = (K.width, K.height)
    feats_a = FeatureSet(kp_a[order_a], desc_a[order_a], depth_a[order_a], size)
    feats_b = FeatureSet(kp_b[order_b], desc_b[order_b], depth_b[order_b], size)
    inv_a, inv_b = np.argsort(order_a), np.argsort(order_b)
    covisible = np.stack([inv_a[:n_cov], inv_b[:n_cov]], axis=1)

    error = random_pose(rng, prior_rotation_deg, prior_translation_m)
    return SynthPair(feats_a, feats_b, K, T_ab, T_ab @ error, covisible)


def oracle_params(config, scale: float = 10.0, dustbin_fraction: float = 0.5):
    """Weights that hand descriptors straight to the scorer.

    Position-encoder outputs and every layer update are zeroed, so the
    network is the identity on descriptors, and the final projection is
    ``sqrt(scale) * I``: identical unit descriptors then score ``scale``.
    On noiseless synthetic pairs this model matches perfectly, whatever the
    attention variant or prior.
    """
    from kpmatch.attention_gnn import ModelParams

    params = ModelParams.init(config, seed=0)
    t = params.tensors
    last_encoder = len(config.encoder_hidden)
    for name in t:
        if name.startswith(f"encoder.{last_encoder}.") or ".merge.1." in name:
            t[name] = np.zeros_like(t[name])
    t["final.weight"] = np.sqrt(scale) * np.eye(config.dim)
    t["final.bias"] = np.zeros(config.dim)
    t["dustbin"] = np.array(dustbin_fraction * scale)
    return params
