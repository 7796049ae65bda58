"""Scoring, cross-validation folds, and the CSV wire formats.

The headline metric rewards estimates that are close in relative terms:
each recording contributes exp(-|est - truth| / truth), a recording with
no estimate contributes zero, and the mean over recordings is reported as
a percentage.  Per-class scores use the same rule restricted to one class;
the combined number is instance-weighted, with an unweighted mean across
classes reported alongside.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import DataError


def relative_error(estimate: float, truth: float) -> float:
    if not truth > 0:
        raise DataError(f"ground-truth mass must be positive, got {truth}")
    return abs(estimate - truth) / truth


@dataclass
class ScoreReport:
    per_class: dict  # class -> score percent
    class_counts: dict  # class -> number of recordings
    class_missing: dict  # class -> recordings with no estimate
    total: float  # percent, instance weighted
    class_mean: float  # percent, equal weight per class
    mean_rel_error: float | None  # over estimated recordings only
    n_instances: int
    n_missing: int


def score_predictions(predictions: dict, truths: dict) -> ScoreReport:
    """Score {id: estimate-or-None} against {id: (mass_g, class)}.

    Every truth id must have a prediction row (a missing estimate is the
    explicit None, not an absent row), and predictions for unknown ids are
    rejected rather than ignored.
    """
    extra = sorted(set(predictions) - set(truths))
    if extra:
        raise DataError(f"predictions for unknown recordings: {', '.join(extra)}")
    absent = sorted(set(truths) - set(predictions))
    if absent:
        raise DataError(f"no prediction row for recordings: {', '.join(absent)}")

    gains = {}  # class -> list of exp(-eps) terms, 0.0 for missing
    missing = {}
    errors = []
    for rid in truths:
        mass, cls = truths[rid]
        gains.setdefault(cls, [])
        missing.setdefault(cls, 0)
        est = predictions[rid]
        if est is None:
            gains[cls].append(0.0)
            missing[cls] += 1
        else:
            eps = relative_error(est, mass)
            errors.append(eps)
            gains[cls].append(math.exp(-eps))

    per_class = {c: 100.0 * sum(v) / len(v) for c, v in gains.items()}
    counts = {c: len(v) for c, v in gains.items()}
    all_terms = [t for v in gains.values() for t in v]
    return ScoreReport(
        per_class=per_class,
        class_counts=counts,
        class_missing=missing,
        total=100.0 * sum(all_terms) / len(all_terms) if all_terms else 0.0,
        class_mean=sum(per_class.values()) / len(per_class) if per_class else 0.0,
        mean_rel_error=sum(errors) / len(errors) if errors else None,
        n_instances=len(all_terms),
        n_missing=sum(missing.values()),
    )


def combine_scores(reports: list) -> ScoreReport:
    """Instance-weighted merge of several reports (e.g. cross-val folds)."""
    if not reports:
        raise DataError("no reports to combine")
    counts, missing, weighted = {}, {}, {}
    err_sum, err_n = 0.0, 0
    for rep in reports:
        for cls, n in rep.class_counts.items():
            counts[cls] = counts.get(cls, 0) + n
            missing[cls] = missing.get(cls, 0) + rep.class_missing.get(cls, 0)
            weighted[cls] = weighted.get(cls, 0.0) + rep.per_class[cls] * n
        estimated = rep.n_instances - rep.n_missing
        if rep.mean_rel_error is not None:
            err_sum += rep.mean_rel_error * estimated
            err_n += estimated
    per_class = {c: weighted[c] / counts[c] for c in counts}
    n_total = sum(counts.values())
    total = sum(per_class[c] * counts[c] for c in counts) / n_total
    return ScoreReport(
        per_class=per_class,
        class_counts=counts,
        class_missing=missing,
        total=total,
        class_mean=sum(per_class.values()) / len(per_class),
        mean_rel_error=err_sum / err_n if err_n else None,
        n_instances=n_total,
        n_missing=sum(missing.values()),
    )


# ---------------------------------------------------------------------------
# splits and folds


def random_split(ids, ratio: float = 0.8, seed: int = 0):
    """Shuffle ids and split train/val; train gets ceil(ratio * N) entries.

    The ceiling is computed with a small guard so that an exactly
    representable product like 0.8 * 10 does not round up an extra entry
    through floating-point noise.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    pool = sorted(ids)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    order = rng.permutation(len(pool))
    pool = [pool[i] for i in order]
    n_train = math.ceil(ratio * len(pool) - 1e-9)
    n_train = min(max(n_train, 1), len(pool))
    return pool[:n_train], pool[n_train:]


@dataclass
class Fold:
    index: int
    held_out: dict  # category -> instance_id
    trainval_ids: list
    test_ids: list


def make_folds(catalog: list) -> list:
    """Three leave-one-instance-out folds from (instance, category, recording) rows.

    Every category must contribute exactly three instances; fold i holds out
    the i-th instance (sorted by id) of each category.
    """
    by_cat = {}
    rec_of_inst = {}
    seen_rec = {}
    for inst, cat, rid in catalog:
        by_cat.setdefault(cat, set()).add(inst)
        rec_of_inst.setdefault(inst, []).append(rid)
        if rid in seen_rec and seen_rec[rid] != inst:
            raise DataError(f"recording {rid} listed under two instances")
        seen_rec[rid] = inst
    if not by_cat:
        raise DataError("catalog is empty")
    for cat, insts in sorted(by_cat.items()):
        if len(insts) != 3:
            raise DataError(
                f"category {cat} has {len(insts)} instances, need exactly 3"
            )
    folds = []
    for i in range(3):
        held = {cat: sorted(insts)[i] for cat, insts in by_cat.items()}
        test_ids = sorted(
            rid for inst in held.values() for rid in rec_of_inst[inst]
        )
        test_set = set(test_ids)
        trainval = sorted(rid for rid in seen_rec if rid not in test_set)
        folds.append(Fold(index=i, held_out=held, trainval_ids=trainval, test_ids=test_ids))
    return folds


# ---------------------------------------------------------------------------
# CSV wire formats


def save_predictions(path, predictions: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "mass_g"])
        for p in sorted(predictions, key=lambda p: p.recording_id):
            w.writerow([p.recording_id, "NA" if p.estimate is None else repr(p.estimate)])


def load_predictions(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["recording_id", "mass_g"]:
        raise DataError(f"{path}: expected header recording_id,mass_g")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
        rid, val = row
        if rid in out:
            raise DataError(f"{path}:{lineno}: duplicate recording {rid}")
        if val == "NA":
            out[rid] = None
        else:
            try:
                out[rid] = float(val)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad mass value {val!r}") from None
    return out


def save_truth(path, rows: list) -> None:
    """rows: (recording_id, mass_g, class)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "mass_g", "class"])
        for rid, mass, cls in sorted(rows):
            w.writerow([rid, repr(float(mass)), cls])


def load_truth(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["recording_id", "mass_g", "class"]:
        raise DataError(f"{path}: expected header recording_id,mass_g,class")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        rid, val, cls = row
        if rid in out:
            raise DataError(f"{path}:{lineno}: duplicate recording {rid}")
        try:
            mass = float(val)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad mass value {val!r}") from None
        if not mass > 0:
            raise DataError(f"{path}:{lineno}: mass must be positive, got {val}")
        out[rid] = (mass, cls)
    return out


def save_catalog(path, rows: list) -> None:
    """rows: (instance_id, category, recording_id)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "category", "recording_id"])
        for inst, cat, rid in sorted(rows):
            w.writerow([inst, cat, rid])


def load_catalog(path) -> list:
    out = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["instance_id", "category", "recording_id"]:
        raise DataError(f"{path}: expected header instance_id,category,recording_id")
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        out.append((row[0], row[1], row[2]))
    return out


# ---------------------------------------------------------------------------
# report rendering


def format_report(report: ScoreReport) -> str:
    lines = [
        f"recordings: {report.n_instances}  (no estimate: {report.n_missing})",
    ]
    if report.mean_rel_error is not None:
        lines.append(f"mean relative error: {report.mean_rel_error:.4f}")
    for cls in sorted(report.per_class):
        lines.append(
            f"  {cls:<12} score {report.per_class[cls]:7.2f}  "
            f"n={report.class_counts[cls]}  missing={report.class_missing[cls]}"
        )
    lines.append(f"class mean: {report.class_mean:.2f}")
    lines.append(f"total (instance weighted): {report.total:.2f}")
    return "\n".join(lines) + "\n"


def write_report_kv(path, report: ScoreReport, extra: dict | None = None) -> None:
    """Machine-readable key=value mirror of the score report."""
    lines = []
    if extra:
        for k in sorted(extra):
            lines.append(f"{k}={extra[k]}")
    lines.append(f"n_instances={report.n_instances}")
    lines.append(f"n_missing={report.n_missing}")
    if report.mean_rel_error is None:
        lines.append("mean_rel_error=NA")
    else:
        lines.append(f"mean_rel_error={report.mean_rel_error:.6f}")
    for cls in sorted(report.per_class):
        key = cls.replace(" ", "_")
        lines.append(f"score_{key}={report.per_class[cls]:.4f}")
        lines.append(f"count_{key}={report.class_counts[cls]}")
        lines.append(f"missing_{key}={report.class_missing[cls]}")
    lines.append(f"score_class_mean={report.class_mean:.4f}")
    lines.append(f"score_total={report.total:.4f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
