"""On-disk formats: feature files, IMU logs, weights, manifests and match lists."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kpmatch.assignment import MatchSet
from kpmatch.attention_gnn import ModelConfig, ModelParams, parameter_shapes
from kpmatch.errors import (
    DimMismatch,
    EmptyMeasurements,
    NonMonotonicTimestamps,
    ParseError,
    ShapeMismatch,
    UnknownTensorName,
    UsageError,
    VersionMismatch,
)
from kpmatch.features import FeatureSet
from kpmatch.geometry import CameraIntrinsics, Homography, Pose
from kpmatch.imu_prior import ImuSample

FEATURE_MAGIC = b"KPMF"
WEIGHTS_MAGIC = b"KPMW"
FORMAT_VERSION = 1


class _Reader:
    """Bounds-checked little-endian cursor over a byte string."""

    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"{self.source}: truncated at offset {self.pos} (wanted {n} bytes)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        item = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(item * count), dtype=dtype).copy()

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected))
        if got != expected:
            raise ParseError(f"{self.source}: bad magic {got!r} at offset 0, expected {expected!r}")

    def version(self) -> int:
        v = self.u32()
        if v != FORMAT_VERSION:
            raise VersionMismatch(f"{self.source}: format version {v}, expected {FORMAT_VERSION}")
        return v

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ParseError(f"{self.source}: {len(self.data) - self.pos} trailing bytes at offset {self.pos}")


def write_atomic(path, payload: bytes | str) -> None:
    """Write to a sibling temp file and rename, so readers never see partial files."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    mode = "wb" if isinstance(payload, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(payload)
    os.replace(tmp, path)


# ---------------------------------------------------------------- features

def encode_features(feats: FeatureSet) -> bytes:
    n, d = len(feats), feats.dim
    depths = feats.depths if feats.depths is not None else np.full(n, np.nan)
    rows = np.concatenate([feats.keypoints, depths[:, None]], axis=1).astype("<f4")
    head = FEATURE_MAGIC + struct.pack("<III", FORMAT_VERSION, n, d)
    return head + rows.tobytes() + feats.descriptors.astype("<f4").tobytes()


def decode_features(data: bytes, source: str = "<bytes>", image_size=(1.0, 1.0), expected_dim: int | None = None):
    r = _Reader(data, source)
    r.magic(FEATURE_MAGIC)
    r.version()
    n, d = r.u32(), r.u32()
    if n < 1:
        raise ParseError(f"{source}: feature file holds no keypoints")
    if d < 1:
        raise ParseError(f"{source}: descriptor dimension is zero")
    if expected_dim is not None and d != expected_dim:
        raise DimMismatch(f"{source}: descriptor dimension {d}, expected {expected_dim}")
    rows = r.array("<f4", 3 * n).reshape(n, 3).astype(np.float64)
    desc = r.array("<f4", n * d).reshape(n, d).astype(np.float64)
    r.done()
    try:
        return FeatureSet(rows[:, :2], desc, rows[:, 2], image_size)
    except ValueError as exc:
        raise ParseError(f"{source}: {exc}") from exc


def save_features(path, feats: FeatureSet) -> None:
    write_atomic(path, encode_features(feats))


def load_features(path, image_size=(1.0, 1.0), expected_dim: int | None = None) -> FeatureSet:
    return decode_features(Path(path).read_bytes(), str(path), image_size, expected_dim)


# ---------------------------------------------------------------- IMU

def parse_imu(lines, source: str = "<imu>") -> list[ImuSample]:
    """Rows of ``t, wx, wy, wz, ax, ay, az``; ``#`` starts a comment."""
    samples = []
    last = -np.inf
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        cols = [c.strip() for c in line.split(",")]
        if len(cols) != 7:
            raise ParseError(f"{source}:{lineno}: expected 7 columns, got {len(cols)}")
        try:
            vals = [float(c) for c in cols]
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: {exc}") from exc
        if not all(np.isfinite(vals)):
            raise ParseError(f"{source}:{lineno}: non-finite value")
        if vals[0] <= last:
            raise NonMonotonicTimestamps(f"{source}:{lineno}: timestamp {vals[0]} does not increase")
        last = vals[0]
        samples.append(ImuSample(vals[0], np.array(vals[1:4]), np.array(vals[4:7])))
    if not samples:
        raise EmptyMeasurements(f"{source}: no IMU rows")
    return samples


def load_imu(path) -> list[ImuSample]:
    return parse_imu(Path(path).read_text().splitlines(), str(path))


def format_imu(samples) -> str:
    out = ["# t,wx,wy,wz,ax,ay,az\n"]
    for s in samples:
        vals = [s.timestamp, *s.omega, *s.accel]
        out.append(",".join(repr(float(v)) for v in vals) + "\n")
    return "".join(out)


# ---------------------------------------------------------------- weights

def encode_weights(params: ModelParams) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.tensors))]
    for name in sorted(params.tensors):
        arr = np.asarray(params.tensors[name], dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_weights(data: bytes, config: ModelConfig, source: str = "<bytes>") -> ModelParams:
    """Parse a weights container against the shapes ``config`` expects.

    Everything is validated before a :class:`ModelParams` is built, so a
    failure never leaves partially loaded state behind.
    """
    expected = parameter_shapes(config)
    r = _Reader(data, source)
    r.magic(WEIGHTS_MAGIC)
    r.version()
    count = r.u32()
    tensors = {}
    for _ in range(count):
        at = r.pos
        name_len = r.u32()
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"{source}: tensor name at offset {at} is not UTF-8") from exc
        rank = r.u32()
        shape = tuple(r.array("<u4", rank).tolist())
        payload = r.array("<f8", int(np.prod(shape, dtype=np.int64))).reshape(shape)
        if name not in expected:
            raise UnknownTensorName(f"{source}: unknown tensor {name!r} at offset {at}")
        if shape != expected[name]:
            raise ShapeMismatch(f"{source}: {name} has shape {shape}, configuration expects {expected[name]}")
        if name in tensors:
            raise ParseError(f"{source}: duplicate tensor {name!r}")
        tensors[name] = payload.astype(np.float64)
    r.done()
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise ShapeMismatch(f"{source}: missing tensors {missing[:3]}{'...' if len(missing) > 3 else ''}")
    return ModelParams(config, tensors)


def save_weights(path, params: ModelParams) -> None:
    write_atomic(path, encode_weights(params))


def load_weights(path, config: ModelConfig) -> ModelParams:
    return decode_weights(Path(path).read_bytes(), config, str(path))


# ---------------------------------------------------------------- manifest

@dataclass
class PairRecord:
    """One manifest line, with paths already resolved against the manifest directory."""

    pair_id: str
    image_a: str
    image_b: str
    features_a: Path
    features_b: Path
    camera_a: CameraIntrinsics
    camera_b: CameraIntrinsics
    gt_pose: Pose | None = None
    gt_homography: Homography | None = None
    prior_pose: Pose | None = None
    prior_homography: Homography | None = None
    imu_path: Path | None = None
    t_a: float | None = None
    t_b: float | None = None
    initial_velocity: np.ndarray | None = None
    gravity: np.ndarray | None = None


def _intrinsics(obj, where: str) -> CameraIntrinsics:
    try:
        return CameraIntrinsics(
            float(obj["fx"]), float(obj["fy"]), float(obj["cx"]), float(obj["cy"]), int(obj["width"]), int(obj["height"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad intrinsics ({exc})") from exc


def parse_pose(obj, where: str = "<pose>") -> Pose:
    """``{"q": [w, x, y, z], "t": [...]}`` or ``{"matrix": 4x4}``."""
    try:
        if "matrix" in obj:
            m = np.asarray(obj["matrix"], dtype=np.float64)
            if m.shape != (4, 4):
                raise ValueError(f"matrix shape {m.shape}")
            return Pose(m[:3, :3], m[:3, 3])
        return Pose.from_quaternion(np.asarray(obj["q"], dtype=np.float64), np.asarray(obj["t"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad pose ({exc})") from exc


def pose_to_json(pose: Pose) -> dict:
    # matrix form keeps every bit through a JSON round trip; quaternions would not
    return {"matrix": pose.matrix().tolist()}


def parse_homography(obj, where: str = "<homography>") -> Homography:
    try:
        h = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad homography ({exc})") from exc
    if h.shape != (3, 3):
        raise ParseError(f"{where}: homography must be 3x3, got {h.shape}")
    return Homography(h)


def parse_record(line: str, base: Path, where: str) -> PairRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: record must be an object")
    try:
        features_a = base / obj["features_a"]
        features_b = base / obj["features_b"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{where}: missing field {exc}") from exc
    cam_a = _intrinsics(obj.get("intrinsics_a", obj.get("intrinsics")), where)
    cam_b = _intrinsics(obj.get("intrinsics_b", obj.get("intrinsics")), where)
    has_pose, has_h = "gt_pose" in obj, "gt_homography" in obj
    if has_pose and has_h:
        raise ParseError(f"{where}: give either gt_pose or gt_homography, not both")
    rec = PairRecord(
        pair_id=str(obj.get("id", where)),
        image_a=str(obj.get("image_a", "")),
        image_b=str(obj.get("image_b", "")),
        features_a=features_a,
        features_b=features_b,
        camera_a=cam_a,
        camera_b=cam_b,
        gt_pose=parse_pose(obj["gt_pose"], where) if has_pose else None,
        gt_homography=parse_homography(obj["gt_homography"], where) if has_h else None,
    )
    prior = obj.get("prior")
    if prior is not None:
        if "pose" in prior:
            rec.prior_pose = parse_pose(prior["pose"], where)
        elif "homography" in prior:
            rec.prior_homography = parse_homography(prior["homography"], where)
        elif "imu" in prior:
            rec.imu_path = base / prior["imu"]
            try:
                rec.t_a, rec.t_b = float(prior["t_a"]), float(prior["t_b"])
                rec.initial_velocity = np.asarray(prior.get("velocity", [0.0, 0.0, 0.0]), dtype=np.float64)
                rec.gravity = np.asarray(prior.get("gravity", [0.0, 0.0, -9.81]), dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{where}: bad IMU prior ({exc})") from exc
        else:
            raise ParseError(f"{where}: prior needs one of pose, homography or imu")
    return rec


def load_manifest(path) -> list[PairRecord]:
    """JSON-lines manifest; blank lines and ``#`` lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"manifest {path} does not exist")
    base = path.parent
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        records.append(parse_record(stripped, base, f"{path}:{lineno}"))
    return records


# ---------------------------------------------------------------- matches

def format_matches(matches: MatchSet) -> str:
    lines = ["# idx_a\tidx_b\tconfidence\n"]
    for (i, j), c in zip(matches.pairs.tolist(), matches.confidence.tolist()):
        lines.append(f"{i}\t{j}\t{c:.9g}\n")
    return "".join(lines)


def parse_matches(text: str) -> list[tuple[int, int, float]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"<matches>:{lineno}: expected 3 columns")
        out.append((int(cols[0]), int(cols[1]), float(cols[2])))
    return out
