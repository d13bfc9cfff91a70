"""Turning manifest records into pair samples, and writing synthetic datasets."""

from __future__ import annotations

import json
from pathlib import Path

from kpmatch.config import RunConfig
from kpmatch.errors import UsageError
from kpmatch.geometry import Pose
from kpmatch.imu_prior import integrate_imu
from kpmatch.io import PairRecord, load_features, load_imu, pose_to_json, save_features
from kpmatch.pipeline import PairSample, make_sample
from kpmatch.synth import DEFAULT_CAMERA, synth_scene
from kpmatch.train import SynthSettings


def prior_of(record: PairRecord) -> tuple[Pose | None, object]:
    """Pose or homography prior for a record; identity pose when none is given."""
    if record.prior_homography is not None:
        return None, record.prior_homography
    if record.prior_pose is not None:
        return record.prior_pose, None
    if record.imu_path is not None:
        samples = load_imu(record.imu_path)
        return integrate_imu(samples, record.initial_velocity, record.gravity, record.t_a, record.t_b), None
    return Pose.identity(), None


def sample_from_record(record: PairRecord, config: RunConfig) -> PairSample:
    for p in (record.features_a, record.features_b):
        if not Path(p).exists():
            raise UsageError(f"{record.pair_id}: feature file {p} does not exist")
    ka, kb = record.camera_a, record.camera_b
    fa = load_features(record.features_a, (ka.width, ka.height), expected_dim=config.dim)
    fb = load_features(record.features_b, (kb.width, kb.height), expected_dim=config.dim)
    T_prior, H_prior = prior_of(record)
    return make_sample(
        record.pair_id, fa, fb, ka, kb, config,
        T_prior=T_prior, H_prior=H_prior, T_gt=record.gt_pose, H_gt=record.gt_homography,
    )


def _intrinsics_json(K) -> dict:
    return {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height}


def write_synth_dataset(out_dir, n_pairs: int, seed: int, dim: int, settings: SynthSettings = SynthSettings()) -> Path:
    """Write feature files and a manifest for ``n_pairs`` synthetic pairs; returns the manifest path.

    Scene seeds follow the same scheme as :func:`kpmatch.train.synth_dataset`.
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    lines = []
    for k in range(n_pairs):
        sp = synth_scene(
            seed * 100_003 + k,
            n_points=settings.n_points,
            descriptor_dim=dim,
            descriptor_noise=settings.descriptor_noise,
            outlier_fraction=settings.outlier_fraction,
            pose_magnitude=settings.pose_magnitude,
            prior_rotation_deg=settings.prior_rotation_deg,
            prior_translation_m=settings.prior_translation_m,
            keypoint_noise_px=settings.keypoint_noise_px,
            camera=DEFAULT_CAMERA,
        )
        pid = f"synth-{seed}-{k:04d}"
        save_features(out / "features" / f"{pid}_a.kpmf", sp.feats_a)
        save_features(out / "features" / f"{pid}_b.kpmf", sp.feats_b)
        record = {
            "id": pid,
            "image_a": f"{pid}_a",
            "image_b": f"{pid}_b",
            "features_a": f"features/{pid}_a.kpmf",
            "features_b": f"features/{pid}_b.kpmf",
            "intrinsics": _intrinsics_json(sp.camera),
            "gt_pose": pose_to_json(sp.T_ab),
            "prior": {"pose": pose_to_json(sp.T_prior)},
        }
        lines.append(json.dumps(record, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest
