"""Command-line entry point: ``kpmatch {match,train,eval,synth,check-grad}``.

Exit codes: 0 success, 1 usage/configuration, 2 unparsable input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from kpmatch.attention_gnn import ModelParams
from kpmatch.config import load_config
from kpmatch.dataset import sample_from_record, write_synth_dataset
from kpmatch.errors import KpmatchError, UsageError
from kpmatch.geometry import CameraIntrinsics
from kpmatch.gradcheck import gradient_suite
from kpmatch.io import (
    PairRecord,
    format_matches,
    load_manifest,
    load_weights,
    parse_pose,
    save_weights,
    write_atomic,
)
from kpmatch.metrics import score_matches
from kpmatch.pipeline import match_pair
from kpmatch.report import evaluate_all, format_tables, summarize, thread_count, write_report
from kpmatch.synth import oracle_params
from kpmatch.train import SynthSettings, train

log = logging.getLogger("kpmatch")


def _overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args):
    return load_config(args.config, _overrides(args.set))


def _params(args, config) -> ModelParams:
    model = config.model_config()
    if args.weights:
        if not Path(args.weights).exists():
            raise UsageError(f"weights file {args.weights} does not exist")
        return load_weights(args.weights, model)
    return ModelParams.init(model, config.seed)


def _records(path) -> list[PairRecord]:
    records = load_manifest(path)
    if not records:
        raise UsageError(f"manifest {path} lists no pairs")
    return records


def _intrinsics(text: str) -> CameraIntrinsics:
    try:
        fx, fy, cx, cy, w, h = text.split(",")
        return CameraIntrinsics(float(fx), float(fy), float(cx), float(cy), int(w), int(h))
    except ValueError as exc:
        raise UsageError(f"--intrinsics expects fx,fy,cx,cy,width,height; got {text!r}") from exc


def _direct_record(args) -> PairRecord:
    if not (args.features_a and args.features_b and args.intrinsics):
        raise UsageError("give --manifest, or --features-a, --features-b and --intrinsics")
    ka = _intrinsics(args.intrinsics)
    kb = _intrinsics(args.intrinsics_b) if args.intrinsics_b else ka
    rec = PairRecord("pair", "", "", Path(args.features_a), Path(args.features_b), ka, kb)
    if args.prior_pose:
        rec.prior_pose = parse_pose(json.loads(Path(args.prior_pose).read_text()), args.prior_pose)
    return rec


def cmd_match(args) -> int:
    config = _config(args)
    params = _params(args, config)
    if args.manifest:
        records = _records(args.manifest)
        if args.pair:
            records = [r for r in records if r.pair_id == args.pair]
            if not records:
                raise UsageError(f"pair {args.pair!r} is not in {args.manifest}")
        record = records[0]
    else:
        record = _direct_record(args)
    sample = sample_from_record(record, config)
    result = match_pair(params, config, sample)
    text = format_matches(result.matches)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    timing = {"pair_id": sample.pair_id, **{f"{k}_ms": round(v, 3) for k, v in result.timings_ms.items()}}
    timing["total_ms"] = round(sum(result.timings_ms.values()), 3)
    if args.timing:
        write_atomic(args.timing, json.dumps(timing, sort_keys=True) + "\n")
    else:
        print("timing " + " ".join(f"{k}={v}" for k, v in timing.items() if k != "pair_id"), file=sys.stderr)
    if sample.gt is not None:
        rep = score_matches(result.matches, sample.gt)
        print(f"score precision={rep.precision:.4f} recall={rep.recall:.4f} f1={rep.f1:.4f}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    samples = [sample_from_record(r, config) for r in _records(args.manifest)]
    init = load_weights(args.init, config.model_config()) if args.init else None
    log_lines = []

    def on_epoch(record):
        line = json.dumps(record, sort_keys=True)
        log_lines.append(line + "\n")
        if not args.log:
            print(line, flush=True)

    result = train(config, samples, init=init, on_epoch=on_epoch)
    if args.log:
        write_atomic(args.log, "".join(log_lines))
    save_weights(args.weights_out, result.params)
    print(f"best epoch {result.best_epoch}; weights written to {args.weights_out}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    config = _config(args)
    params = _params(args, config)
    samples = [sample_from_record(r, config) for r in _records(args.manifest)]
    threads = thread_count(os.environ.get("KPMATCH_THREADS"))
    records = evaluate_all(params, config, samples, threads)
    label = args.label or config.variant
    sys.stdout.write(format_tables(summarize(records), label))
    if args.out_dir:
        paths = write_report(records, args.out_dir, label)
        print("wrote " + " ".join(str(p) for p in paths.values()), file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    if args.pairs < 1:
        raise UsageError("--pairs must be >= 1")
    settings = SynthSettings(
        n_points=args.points,
        descriptor_noise=args.noise,
        outlier_fraction=args.outliers,
        pose_magnitude=args.pose_magnitude,
        prior_rotation_deg=args.prior_rotation,
        prior_translation_m=args.prior_translation,
        keypoint_noise_px=args.keypoint_noise,
    )
    try:
        manifest = write_synth_dataset(args.out, args.pairs, args.seed, args.dim, settings)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(manifest)
    if args.oracle_weights:
        config = load_config(None, {"model.dim": str(args.dim), "model.layers": str(args.layers)})
        save_weights(args.oracle_weights, oracle_params(config.model_config()))
    return 0


def cmd_check_grad(args) -> int:
    reports = gradient_suite(
        dim=args.dim, n_points=args.points, layers=args.layers, seed=args.seed,
        coords_per_tensor=None if args.all_coords else args.coords,
    )
    ok = True
    for r in reports:
        worst = r.worst
        status = "ok" if r.passed(args.tol) else "FAIL"
        ok &= r.passed(args.tol)
        print(f"{status:4s} {r.variant:13s} {r.loss:10s} loss={r.value:.6f} worst={worst.rel_error:.2e} ({worst.name})")
    return 0 if ok else 3


def _add_model_args(p) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key (repeatable)")
    p.add_argument("--weights", help="weights file; random init from the seed when omitted")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kpmatch", description="Prior-guided keypoint matching.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="match one image pair")
    _add_model_args(m)
    m.add_argument("--manifest")
    m.add_argument("--pair", help="pair id within the manifest (default: first)")
    m.add_argument("--features-a")
    m.add_argument("--features-b")
    m.add_argument("--intrinsics", help="fx,fy,cx,cy,width,height")
    m.add_argument("--intrinsics-b")
    m.add_argument("--prior-pose", help="JSON file holding the prior pose of B in A")
    m.add_argument("--out", help="match list (TSV); stdout when omitted")
    m.add_argument("--timing", help="write per-stage timings as JSON here instead of stderr")
    m.set_defaults(func=cmd_match)

    t = sub.add_parser("train", help="train on a manifest")
    t.add_argument("--config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--manifest", required=True)
    t.add_argument("--init", help="start from these weights")
    t.add_argument("--weights-out", required=True)
    t.add_argument("--log", help="training log (JSON lines); stdout when omitted")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate on a manifest")
    _add_model_args(e)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out-dir", help="write report.txt, pairs.csv, timings.csv and figures here")
    e.add_argument("--label", help="model name in the tables")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--pairs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--points", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.0, help="descriptor noise")
    s.add_argument("--outliers", type=float, default=0.0, help="outlier fraction")
    s.add_argument("--pose-magnitude", type=float, default=1.0)
    s.add_argument("--prior-rotation", type=float, default=2.0, help="prior rotation error (deg)")
    s.add_argument("--prior-translation", type=float, default=0.03, help="prior translation error (m)")
    s.add_argument("--keypoint-noise", type=float, default=0.0, help="pixel noise on B's keypoints")
    s.add_argument("--layers", type=int, default=2, help="layer count for --oracle-weights")
    s.add_argument("--oracle-weights", help="also write pass-through weights that match noiseless pairs exactly")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("check-grad", help="finite-difference gradient check")
    g.add_argument("--dim", type=int, default=8)
    g.add_argument("--points", type=int, default=6)
    g.add_argument("--layers", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--coords", type=int, default=6, help="random coordinates probed per tensor")
    g.add_argument("--all-coords", action="store_true", help="probe every coordinate (slow)")
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except KpmatchError as exc:
        print(f"kpmatch: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"kpmatch: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
