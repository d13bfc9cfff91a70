"""Per-pair evaluation records and the text/CSV/figure report built from them."""

from __future__ import annotations

import csv
import io
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from kpmatch.assignment import recover_matches
from kpmatch.attention_gnn import ModelParams
from kpmatch.config import RunConfig
from kpmatch.errors import EmptyDataset, InsufficientMatches
from kpmatch.geometry import pose_angular_errors, unproject_points
from kpmatch.io import write_atomic
from kpmatch.metrics import (
    AUC_THRESHOLDS,
    estimate_homography_ransac,
    estimate_pose_rgbd,
    homography_accuracy,
    pose_auc,
    score_matches,
)
from kpmatch.pipeline import PairSample, match_pair

CURVE_THRESHOLDS = np.round(np.linspace(0.0, 0.9, 19), 2)


def pair_seed(pair_id: str) -> int:
    return zlib.crc32(pair_id.encode("utf-8"))


@dataclass
class PairEval:
    pair_id: str
    n_a: int
    n_b: int
    n_gt: int
    n_pred: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    rot_err_deg: float = float("nan")
    trans_err_deg: float = float("nan")
    pose_err_deg: float = float("nan")
    h_err_px: float = float("nan")
    h_correct: int = -1
    residual: float = 0.0
    f1_curve: list = field(default_factory=list, repr=False)
    timings_ms: dict = field(default_factory=dict, repr=False)


def _pose_error(sample: PairSample, pairs):
    fa, fb = sample.feats_a, sample.feats_b
    ok = fa.has_depth[pairs[:, 0]] & fb.has_depth[pairs[:, 1]] if len(pairs) else np.zeros(0, dtype=bool)
    pairs = pairs[ok]
    if len(pairs) < 3:
        return 180.0, 180.0
    pa = unproject_points(sample.camera_a, fa.keypoints[pairs[:, 0]], fa.depths[pairs[:, 0]])
    pb = unproject_points(sample.camera_b, fb.keypoints[pairs[:, 1]], fb.depths[pairs[:, 1]])
    try:
        est = estimate_pose_rgbd(pa, pb, seed=pair_seed(sample.pair_id))
    except InsufficientMatches:
        return 180.0, 180.0
    return pose_angular_errors(est, sample.T_gt)


def _homography_error(sample: PairSample, pairs):
    src = sample.feats_a.keypoints[pairs[:, 0]]
    dst = sample.feats_b.keypoints[pairs[:, 1]]
    try:
        H, _ = estimate_homography_ransac(src, dst, seed=pair_seed(sample.pair_id))
    except InsufficientMatches:
        return False, float("inf")
    K = sample.camera_a
    return homography_accuracy(H, sample.H_gt, K.width, K.height)


def evaluate_sample(params: ModelParams, config: RunConfig, sample: PairSample) -> PairEval:
    result = match_pair(params, config, sample)
    if sample.gt is None:
        raise EmptyDataset(f"{sample.pair_id}: evaluation needs ground truth")
    rep = score_matches(result.matches, sample.gt)
    rec = PairEval(
        sample.pair_id, len(sample.feats_a), len(sample.feats_b), len(sample.gt.pairs), len(result.matches),
        rep.tp, rep.fp, rep.fn, rep.precision, rep.recall, rep.f1,
        residual=result.residual, timings_ms=result.timings_ms,
    )
    rec.f1_curve = [score_matches(recover_matches(result.assignment, t), sample.gt).f1 for t in CURVE_THRESHOLDS]
    pairs = result.matches.pairs
    if sample.T_gt is not None:
        rec.rot_err_deg, rec.trans_err_deg = _pose_error(sample, pairs)
        rec.pose_err_deg = max(rec.rot_err_deg, rec.trans_err_deg)
    if sample.H_gt is not None:
        ok, err = _homography_error(sample, pairs)
        rec.h_err_px, rec.h_correct = err, int(ok)
    return rec


def thread_count(env_value: str | None) -> int:
    """``KPMATCH_THREADS``: unset or 1 runs serially, 0 picks the CPU count."""
    if env_value is None or env_value.strip() == "":
        return 1
    n = int(env_value)
    if n < 0:
        raise ValueError("KPMATCH_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def evaluate_all(params, config, samples, threads: int = 1) -> list[PairEval]:
    """Evaluate every pair; results come back in input order whatever the thread count."""
    if not samples:
        raise EmptyDataset("manifest lists no pairs")
    if threads <= 1:
        return [evaluate_sample(params, config, s) for s in samples]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: evaluate_sample(params, config, s), samples))


@dataclass
class Summary:
    n_pairs: int
    precision: float
    recall: float
    f1: float
    pose_auc: list | None
    h_accuracy: float | None


def summarize(records: list[PairEval]) -> Summary:
    pose = [r.pose_err_deg for r in records if not np.isnan(r.pose_err_deg)]
    hom = [r.h_correct for r in records if r.h_correct >= 0]
    return Summary(
        len(records),
        float(np.mean([r.precision for r in records])),
        float(np.mean([r.recall for r in records])),
        float(np.mean([r.f1 for r in records])),
        pose_auc(pose) if pose else None,
        float(np.mean(hom)) if hom else None,
    )


def format_tables(summary: Summary, label: str) -> str:
    """Matching table (precision/recall/F1) and pose table (AUC at 5/10/20 deg), in percent."""
    w = max(len(label), 8)
    out = [
        "Matching",
        f"{'model':<{w}}  {'pairs':>5}  {'P':>6}  {'R':>6}  {'F1':>6}",
        f"{label:<{w}}  {summary.n_pairs:>5}  {100 * summary.precision:6.2f}  "
        f"{100 * summary.recall:6.2f}  {100 * summary.f1:6.2f}",
    ]
    if summary.pose_auc is not None:
        heads = "  ".join(f"{'@' + format(t, 'g'):>6}" for t in AUC_THRESHOLDS)
        vals = "  ".join(f"{100 * a:6.2f}" for a in summary.pose_auc)
        out += ["", "Pose AUC", f"{'model':<{w}}  {heads}", f"{label:<{w}}  {vals}"]
    if summary.h_accuracy is not None:
        out += ["", "Homography", f"{'model':<{w}}  {'acc@3px':>7}", f"{label:<{w}}  {100 * summary.h_accuracy:7.2f}"]
    return "\n".join(out) + "\n"


RECORD_FIELDS = [
    "pair_id", "n_a", "n_b", "n_gt", "n_pred", "tp", "fp", "fn", "precision", "recall", "f1",
    "rot_err_deg", "trans_err_deg", "pose_err_deg", "h_err_px", "h_correct", "residual",
]


def records_csv(records: list[PairEval]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, RECORD_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        row = asdict(r)
        writer.writerow({k: (f"{row[k]:.9g}" if isinstance(row[k], float) else row[k]) for k in RECORD_FIELDS})
    return buf.getvalue()


def timings_csv(records: list[PairEval]) -> str:
    stages = ("prior", "gnn", "sinkhorn", "recovery")
    lines = ["pair_id," + ",".join(f"{s}_ms" for s in stages) + "\n"]
    for r in records:
        lines.append(r.pair_id + "," + ",".join(f"{r.timings_ms.get(s, 0.0):.3f}" for s in stages) + "\n")
    return "".join(lines)


def write_report(records: list[PairEval], out_dir, label: str) -> dict[str, Path]:
    """Text tables, per-pair CSV, timings CSV and two PNG figures under ``out_dir``."""
    from kpmatch.plotting import plot_error_cdf, plot_f1_curve  # matplotlib is slow to import

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(records)
    paths = {
        "report": out / "report.txt",
        "records": out / "pairs.csv",
        "timings": out / "timings.csv",
        "f1_curve": out / "f1_vs_confidence.png",
    }
    write_atomic(paths["report"], format_tables(summary, label))
    write_atomic(paths["records"], records_csv(records))
    write_atomic(paths["timings"], timings_csv(records))
    curve = np.mean([r.f1_curve for r in records], axis=0)
    plot_f1_curve(CURVE_THRESHOLDS, {label: curve}, paths["f1_curve"])
    pose = [r.pose_err_deg for r in records if not np.isnan(r.pose_err_deg)]
    if pose:
        paths["pose_cdf"] = plot_error_cdf({label: np.array(pose)}, out / "pose_error_cdf.png")
    return paths
