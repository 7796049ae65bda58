"""Dataset assembly and the training loop for the mass regressor.

Patches are stored as uint8 and converted to normalized float tensors one
batch at a time, which keeps large datasets (thousands of patches, several
augmented copies each) at a manageable memory footprint.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import Candidate, DataError, NormStats, normalize
from .model import MassModel, normalized_feats, patches_to_tensor
from .nn.layers import NumericalError, mse_loss
from .nn.optim import OptimizerState, make_optimizer
from .patchops import AugmentConfig, augment


@dataclass
class SampleSet:
    """Flat arrays of training samples (originals plus augmented copies)."""

    patches: np.ndarray  # (N, 112, 112, 3) uint8
    feats: np.ndarray  # (N, 3) float64, raw (a, b, d)
    mass: np.ndarray  # (N,) float64, grams
    recording_ids: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.patches)
        if len(self.feats) != n or len(self.mass) != n or len(self.recording_ids) != n:
            raise DataError("sample arrays disagree on length")

    def __len__(self):
        return len(self.patches)


def _to_uint8(patch: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(patch) * 255.0), 0, 255).astype(np.uint8)


def build_dataset(pairs, copies: int = 0, seed: int = 0,
                  augment_cfg: AugmentConfig | None = None) -> SampleSet:
    """Assemble (Candidate, mass_g) pairs into a SampleSet.

    Each source sample contributes itself plus `copies` augmented variants.
    The augmentation stream for copy c of sample i depends only on
    (seed, i, c), so rebuilding the dataset reproduces it exactly.
    """
    if copies < 0:
        raise DataError(f"copies must be >= 0, got {copies}")
    cfg = augment_cfg if augment_cfg is not None else AugmentConfig(seed=seed)
    patches, feats, mass, rec_ids = [], [], [], []
    for i, (cand, mass_g) in enumerate(pairs):
        if mass_g is None or not mass_g > 0:
            raise DataError(f"sample {i} ({cand.recording_id}): mass must be positive")
        base = np.asarray(cand.patch, dtype=np.float32)
        patches.append(_to_uint8(base))
        feats.append((cand.a, cand.b, cand.d))
        mass.append(float(mass_g))
        rec_ids.append(cand.recording_id)
        for c in range(1, copies + 1):
            patches.append(_to_uint8(augment(base, cfg, sample_index=i, copy_index=c)))
            feats.append((cand.a, cand.b, cand.d))
            mass.append(float(mass_g))
            rec_ids.append(cand.recording_id)
    if not patches:
        raise DataError("no training samples")
    return SampleSet(
        patches=np.stack(patches),
        feats=np.asarray(feats, dtype=np.float64),
        mass=np.asarray(mass, dtype=np.float64),
        recording_ids=rec_ids,
    )


def fit_stats(dataset: SampleSet) -> NormStats:
    """Min/max normalization bounds from the training set only."""
    a, b, d = dataset.feats[:, 0], dataset.feats[:, 1], dataset.feats[:, 2]
    return NormStats(
        a_min=float(a.min()), a_max=float(a.max()),
        b_min=float(b.min()), b_max=float(b.max()),
        d_min=float(d.min()), d_max=float(d.max()),
        m_min=float(dataset.mass.min()), m_max=float(dataset.mass.max()),
    )


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"
    opt_state: OptimizerState = field(default_factory=OptimizerState)

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise DataError(f"batch_size must be >= 2, got {self.batch_size}")


@dataclass
class TrainHistory:
    train_loss: list
    val_loss: list
    best_epoch: int  # 1-based index into the loss lists
    steps: int


def _batch_tensors(ds: SampleSet, idx: np.ndarray, stats: NormStats):
    raw = ds.patches[idx].astype(np.float32) / 255.0
    tensors = np.ascontiguousarray(raw.transpose(0, 3, 1, 2))
    feats = np.empty((len(idx), 3), dtype=np.float32)
    for col, q in enumerate("abd"):
        for row, v in enumerate(ds.feats[idx, col]):
            feats[row, col] = normalize(float(v), q, stats)
    targets = np.array(
        [[normalize(float(m), "mass", stats)] for m in ds.mass[idx]], dtype=np.float32
    )
    return tensors, feats, targets


def evaluate_loss(model: MassModel, ds: SampleSet, stats: NormStats,
                  batch_size: int = 32) -> float:
    """Mean squared error over a dataset in eval mode (sum of SE / N)."""
    total, count = 0.0, 0
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        tensors, feats, targets = _batch_tensors(ds, idx, stats)
        out = model.forward(tensors, feats, train=False)
        total += float(np.sum((out - targets) ** 2))
        count += len(idx)
    return total / count


def train(model: MassModel, train_set: SampleSet, val_set: SampleSet | None,
          stats: NormStats, config: TrainConfig, progress=None) -> TrainHistory:
    """Run the full loop and leave the best-epoch weights in the model.

    The best epoch is the first one attaining the minimum selection loss
    (validation loss when a validation set is given, else training loss).
    Batch-norm layers need at least two samples, so a trailing batch of one
    is skipped for that epoch.
    """
    opt = config.opt_state
    optimizer = make_optimizer(
        config.optimizer,
        base_lr=opt.base_lr,
        decay_rate=opt.decay_rate,
        decay_steps=opt.decay_steps,
        weight_decay=opt.weight_decay,
    )
    n = len(train_set)
    history = TrainHistory(train_loss=[], val_loss=[], best_epoch=0, steps=0)
    best_loss = None
    best_snap = None
    for epoch in range(1, config.epochs + 1):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((int(config.seed), int(epoch))))
        )
        order = rng.permutation(n)
        sse, seen = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            if len(idx) < 2:
                continue
            tensors, feats, targets = _batch_tensors(train_set, idx, stats)
            out = model.forward(tensors, feats, train=True)
            loss, dout = mse_loss(out, targets)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {b}"
                )
            model.backward(dout)
            optimizer.step(model.parameters())
            history.steps += 1
            sse += loss * len(idx)
            seen += len(idx)
        epoch_train = sse / max(seen, 1)
        history.train_loss.append(epoch_train)
        if val_set is not None and len(val_set) > 0:
            epoch_val = evaluate_loss(model, val_set, stats, config.batch_size)
            history.val_loss.append(epoch_val)
            selection = epoch_val
        else:
            selection = epoch_train
        if best_loss is None or selection < best_loss:
            best_loss = selection
            best_snap = model.snapshot()
            history.best_epoch = epoch
        if progress is not None:
            progress(epoch, epoch_train, history.val_loss[-1] if history.val_loss else None)
    if best_snap is not None:
        model.restore(best_snap)
    return history
