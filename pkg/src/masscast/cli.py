"""Command-line entry point: extract, train, predict, score, synth, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every command writes a small JSON manifest next to its outputs recording the
command, configuration, seed, and output checksums; re-running a command
with the same inputs and seed reproduces every artifact byte for byte (the
manifest's wall-clock field is the one exception).
"""

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import archive, evaluation, synth
from .data import (
    DataError,
    load_detections,
    load_recording,
)
from .model import (
    MassModel,
    expected_param_count,
    finite_difference_check,
    load_model,
    predict_recording,
    save_model,
)
from .nn.gradcheck import LAYER_TOL, MODEL_TOL, MSE_TOL, run_layer_suite
from .nn.layers import NumericalError, ShapeError
from .nn.optim import OptimizerState
from .selection import SelectionConfig, extract_candidates
from .training import TrainConfig, build_dataset, fit_stats, train

SEED_ENV = "MASSCAST_SEED"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage problems; the contract here wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _resolve_seed(value):
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise DataError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _artifact_checksums(paths) -> dict:
    sums = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file() and f.name != "run_manifest.json":
                    sums[str(f)] = _sha256(f)
        elif p.is_file():
            sums[str(p)] = _sha256(p)
    return sums


def _write_manifest(manifest_path, command, config, seed, inputs, outputs,
                    started, extra=None):
    snapshot = {
        k: str(v) if isinstance(v, Path) else v
        for k, v in config.items()
        if k != "fn" and (v is None or isinstance(v, (str, int, float, bool, Path)))
    }
    doc = {
        "command": command,
        "config": snapshot,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": _artifact_checksums(outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    Path(manifest_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _recording_dirs(root: Path):
    dirs = sorted(p for p in root.iterdir() if (p / "meta.txt").is_file())
    if not dirs:
        raise DataError(f"{root}: no recording directories (meta.txt) found")
    return dirs


def _detections_path(rec_dir: Path, detections_root):
    if detections_root is None:
        return rec_dir / "detections.jsonl"
    return Path(detections_root) / rec_dir.name / "detections.jsonl"


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args) -> int:
    started = time.time()
    seed = _resolve_seed(args.seed)
    config = SelectionConfig(k_max=args.k, frame_stride=args.stride)
    rec_root = Path(args.recordings)
    infos, candidates = [], []
    warned_empty = 0
    for rec_dir in _recording_dirs(rec_root):
        bundle = load_recording(rec_dir)
        det_path = _detections_path(rec_dir, args.detections)
        if not det_path.is_file():
            raise DataError(f"{det_path}: detections file not found")
        dets = load_detections(det_path)
        cands = extract_candidates(bundle, dets, config)
        if not cands:
            warned_empty += 1
            print(f"warning: {bundle.recording_id}: no candidates", file=sys.stderr)
        infos.append(
            archive.RecordingInfo(
                bundle.recording_id, bundle.true_mass, bundle.container_class
            )
        )
        candidates.extend(cands)
    archive.save_archive(args.out, infos, candidates)

    by_class = {}
    unlabeled = 0
    mass_of = {i.recording_id: i.true_mass for i in infos}
    cls_of = {i.recording_id: i.container_class for i in infos}
    for c in candidates:
        by_class[cls_of[c.recording_id]] = by_class.get(cls_of[c.recording_id], 0) + 1
        if mass_of[c.recording_id] is None:
            unlabeled += 1
    print(f"recordings: {len(infos)}")
    print(f"candidates: {len(candidates)}")
    for cls in sorted(by_class):
        print(f"  {cls}: {by_class[cls]}")
    frac = unlabeled / len(candidates) if candidates else 0.0
    print(f"unlabeled candidates: {unlabeled} ({100.0 * frac:.1f}%)")
    out = Path(args.out)
    _write_manifest(
        out.with_name(out.name + ".manifest.json"), "extract", vars(args), seed,
        [rec_root], [out], started,
        extra={"candidates": len(candidates), "recordings": len(infos),
               "empty_recordings": warned_empty},
    )
    return 0


def _labeled_pairs(infos, candidates, ids):
    mass_of = {i.recording_id: i.true_mass for i in infos}
    wanted = set(ids)
    return [
        (c, mass_of[c.recording_id])
        for c in candidates
        if c.recording_id in wanted and mass_of[c.recording_id] is not None
    ]


def _train_one(infos, candidates, ids, args, seed):
    """80:20 split over ids, then the full loop; returns (model, stats, history)."""
    labeled = sorted(
        {
            i.recording_id
            for i in infos
            if i.true_mass is not None and i.recording_id in set(ids)
        }
    )
    if not labeled:
        raise DataError("no labeled recordings to train on")
    train_ids, val_ids = evaluation.random_split(labeled, 0.8, seed)
    train_pairs = _labeled_pairs(infos, candidates, train_ids)
    val_pairs = _labeled_pairs(infos, candidates, val_ids)
    if not train_pairs:
        raise DataError("no candidates in the training split")
    train_set = build_dataset(train_pairs, copies=args.copies, seed=seed)
    val_set = build_dataset(val_pairs, copies=0, seed=seed) if val_pairs else None
    stats = fit_stats(train_set)
    model = MassModel(seed=seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        seed=seed,
        optimizer=args.optimizer,
        opt_state=OptimizerState(base_lr=args.lr, weight_decay=args.weight_decay),
    )

    def progress(epoch, tl, vl):
        val_part = f"  val {vl:.6f}" if vl is not None else ""
        print(f"epoch {epoch:3d}  train {tl:.6f}{val_part}")

    history = train(model, train_set, val_set, stats, config, progress=progress)
    print(f"best epoch: {history.best_epoch}")
    return model, stats, history


def _predict_from_archive(model, stats, infos, candidates, ids):
    by_rec = {}
    for c in candidates:
        by_rec.setdefault(c.recording_id, []).append(c)
    return [
        predict_recording(model, rid, by_rec.get(rid, []), stats) for rid in sorted(ids)
    ]


def cmd_train(args) -> int:
    started = time.time()
    seed = _resolve_seed(args.seed)
    if args.epochs is None:
        args.epochs = 100 if args.mode == "cv3" else 300
    infos, candidates = archive.load_archive(args.patches)
    all_ids = [i.recording_id for i in infos]

    if args.mode == "final":
        out = Path(args.out)
        if out.is_dir():
            raise DataError(f"{out}: final mode writes a single model file")
        model, stats, history = _train_one(infos, candidates, all_ids, args, seed)
        save_model(out, model, stats, args.optimizer)
        _write_manifest(
            out.with_name(out.name + ".manifest.json"), "train", vars(args), seed,
            [args.patches], [out], started,
            extra={"best_epoch": history.best_epoch, "steps": history.steps},
        )
        return 0

    # cv3: three leave-one-instance-out folds from the catalog
    if args.catalog is None:
        raise DataError("--catalog is required for cv3 mode")
    catalog = evaluation.load_catalog(args.catalog)
    folds = evaluation.make_folds(catalog)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth_of = {
        i.recording_id: (i.true_mass, i.container_class)
        for i in infos
        if i.true_mass is not None
    }
    reports = []
    artifacts = []
    for fold in folds:
        print(f"--- fold {fold.index + 1} ---")
        model, stats, history = _train_one(
            infos, candidates, fold.trainval_ids, args, seed + fold.index
        )
        model_path = out_dir / f"model_fold{fold.index + 1}.bin"
        save_model(model_path, model, stats, args.optimizer)
        preds = _predict_from_archive(model, stats, infos, candidates, fold.test_ids)
        pred_path = out_dir / f"predictions_fold{fold.index + 1}.csv"
        evaluation.save_predictions(pred_path, preds)
        truths = {rid: truth_of[rid] for rid in fold.test_ids if rid in truth_of}
        report = evaluation.score_predictions(
            {p.recording_id: p.estimate for p in preds if p.recording_id in truths},
            truths,
        )
        reports.append(report)
        kv_path = out_dir / f"report_fold{fold.index + 1}.kv"
        evaluation.write_report_kv(kv_path, report, extra={"fold": fold.index + 1})
        print(evaluation.format_report(report))
        artifacts.extend([model_path, pred_path, kv_path])
    combined = evaluation.combine_scores(reports)
    evaluation.write_report_kv(out_dir / "report.kv", combined)
    (out_dir / "report.txt").write_text(evaluation.format_report(combined))
    print("=== combined ===")
    print(evaluation.format_report(combined))
    artifacts.extend([out_dir / "report.kv", out_dir / "report.txt"])
    _write_manifest(
        out_dir / "run_manifest.json", "train", vars(args), seed,
        [args.patches, args.catalog], artifacts, started,
    )
    return 0


def cmd_predict(args) -> int:
    started = time.time()
    seed = _resolve_seed(args.seed)
    loaded = load_model(args.model)
    config = SelectionConfig(k_max=args.k, frame_stride=args.stride)
    rec_root = Path(args.recordings)
    predictions = []
    for rec_dir in _recording_dirs(rec_root):
        bundle = load_recording(rec_dir)
        det_path = _detections_path(rec_dir, args.detections)
        if not det_path.is_file():
            raise DataError(f"{det_path}: detections file not found")
        cands = extract_candidates(bundle, load_detections(det_path), config)
        predictions.append(
            predict_recording(loaded.model, bundle.recording_id, cands, loaded.stats)
        )
    evaluation.save_predictions(args.out, predictions)
    n_missing = sum(1 for p in predictions if p.estimate is None)
    print(f"predicted {len(predictions)} recordings ({n_missing} without candidates)")
    out = Path(args.out)
    _write_manifest(
        out.with_name(out.name + ".manifest.json"), "predict", vars(args), seed,
        [args.model, rec_root], [out], started,
    )
    return 0


def cmd_score(args) -> int:
    started = time.time()
    preds = evaluation.load_predictions(args.pred)
    truths = evaluation.load_truth(args.truth)
    report = evaluation.score_predictions(preds, truths)
    out = Path(args.out)
    text = evaluation.format_report(report)
    out.write_text(text)
    evaluation.write_report_kv(out.with_suffix(".kv"), report)
    print(text, end="")
    _write_manifest(
        out.with_name(out.name + ".manifest.json"), "score", vars(args),
        _resolve_seed(args.seed), [args.pred, args.truth],
        [out, out.with_suffix(".kv")], started,
    )
    return 0


def cmd_synth(args) -> int:
    started = time.time()
    seed = _resolve_seed(args.seed)
    fields = {}
    if args.spec is not None:
        with open(args.spec) as fh:
            fields = json.load(fh)
        valid = set(synth.SynthSpec.__dataclass_fields__)
        unknown = set(fields) - valid
        if unknown:
            raise DataError(f"unknown spec fields: {', '.join(sorted(unknown))}")
    overrides = {
        "recordings": args.recordings,
        "width": args.width,
        "height": args.height,
        "frames": args.frames,
        "containers_per_frame": args.containers,
        "instance_pool": args.pool,
        "noise_sigma": args.sigma,
    }
    fields.update({k: v for k, v in overrides.items() if v is not None})
    fields["seed"] = seed
    if "mass_coeffs" in fields:
        fields["mass_coeffs"] = tuple(fields["mass_coeffs"])
    if "mass_clip" in fields:
        fields["mass_clip"] = tuple(fields["mass_clip"])
    spec = synth.SynthSpec(**fields)
    summary = synth.generate(spec, args.out)
    print(f"generated {summary['recordings']} recordings in {summary['out_dir']}")
    for cat, n in sorted(summary["categories"].items()):
        print(f"  {cat}: {n}")
    out_dir = Path(args.out)
    _write_manifest(
        out_dir / "run_manifest.json", "synth", vars(args), seed,
        [args.spec] if args.spec else [], [out_dir], started,
        extra={"recordings": summary["recordings"]},
    )
    return 0


def cmd_gradcheck(args) -> int:
    started = time.time()
    seed = _resolve_seed(args.seed)
    failures = []
    results = run_layer_suite(n_seeds=args.seeds, seed0=seed)
    for name in sorted(results):
        tol = MSE_TOL if name == "mse" else LAYER_TOL
        status = "ok" if results[name] < tol else "FAIL"
        if status == "FAIL":
            failures.append(name)
        print(f"{name:<12} max rel err {results[name]:.3e}  (tol {tol:.0e})  {status}")
    model_err = finite_difference_check(seed=seed)
    status = "ok" if model_err < MODEL_TOL else "FAIL"
    if status == "FAIL":
        failures.append("model")
    print(f"{'model':<12} max rel err {model_err:.3e}  (tol {MODEL_TOL:.0e})  {status}")
    print(f"parameter count: {expected_param_count()}")
    print(f"elapsed: {time.time() - started:.1f}s")
    if failures:
        print(f"gradient check FAILED: {', '.join(failures)}", file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="masscast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help=f"rng seed (default: ${SEED_ENV} or 0)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap (processing is sequential at this scale)")

    p = sub.add_parser("extract", help="select candidate patches into an archive")
    p.add_argument("--recordings", required=True)
    p.add_argument("--detections", default=None,
                   help="detections root (default: alongside each recording)")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("train", help="train the mass regressor")
    p.add_argument("--patches", required=True)
    p.add_argument("--mode", choices=("cv3", "final"), required=True)
    p.add_argument("--catalog", default=None, help="instance catalog (cv3 mode)")
    p.add_argument("--out", required=True,
                   help="model file (final) or output directory (cv3)")
    p.add_argument("--epochs", type=int, default=None,
                   help="default: 100 for cv3, 300 for final")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--copies", type=int, default=0,
                   help="augmented copies per training patch")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--lr", type=float, default=0.0015)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=0.001)
    add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", help="estimate masses for recordings")
    p.add_argument("--model", required=True)
    p.add_argument("--recordings", required=True)
    p.add_argument("--detections", default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("score", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", default=None, help="JSON file of generator fields")
    p.add_argument("--recordings", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--containers", type=int, default=None)
    p.add_argument("--pool", type=int, default=None,
                   help="container identities per category (0: one per recording)")
    p.add_argument("--sigma", type=float, default=None, help="mass label noise")
    add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seeds", type=int, default=10)
    add_common(p)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, ShapeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
