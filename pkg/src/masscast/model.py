"""The container-mass regressor: architecture, prediction, serialization.

Four conv blocks (conv3x3 -> batch norm -> ReLU -> 2x2 max pool) with
channels (32, 64, 64, 128) reduce a 112x112 RGB patch to a 128*7*7 = 6272
vector.  Two FC+BN+ReLU stages map it to 64 then 6 features, the scalar
triplet (a, b, d) is concatenated, and a final linear layer emits the mass
in normalized units.  The head stays linear: a ReLU there would clamp
regression outputs at zero.
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .data import Candidate, DataError, MassPrediction, NormStats, denormalize, normalize
from .nn.layers import (
    BatchNorm,
    Conv3x3,
    Linear,
    MaxPool2,
    ReLU,
    ShapeError,
    concat_backward,
    concat_forward,
)

PATCH_SIZE = 112
IN_CHANNELS = 3
CONV_CHANNELS = (32, 64, 64, 128)
POOLED_SIDE = PATCH_SIZE // 2 ** len(CONV_CHANNELS)  # 112 -> 56 -> 28 -> 14 -> 7
FLAT_FEATURES = CONV_CHANNELS[-1] * POOLED_SIDE * POOLED_SIDE  # 6272
FC1_FEATURES = 64
FC2_FEATURES = 6
SIDE_FEATURES = 3  # (a, b, d)

MODEL_MAGIC = b"MASSNET1"


def expected_param_count() -> int:
    """Learnable parameter count from the layer shape formulas alone."""
    total = 0
    in_ch = IN_CHANNELS
    for out_ch in CONV_CHANNELS:
        total += out_ch * in_ch * 9 + out_ch  # conv weights + biases
        total += 2 * out_ch  # batch-norm gamma + beta
        in_ch = out_ch
    total += FC1_FEATURES * FLAT_FEATURES + FC1_FEATURES + 2 * FC1_FEATURES
    total += FC2_FEATURES * FC1_FEATURES + FC2_FEATURES + 2 * FC2_FEATURES
    total += 1 * (FC2_FEATURES + SIDE_FEATURES) + 1
    return total


class MassModel:
    """Fixed-architecture regressor over (patch, [a, b, d]) inputs."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
        self.conv_blocks = []
        in_ch = IN_CHANNELS
        for out_ch in CONV_CHANNELS:
            # nothing consumes the gradient w.r.t. the input patches, so the
            # first conv skips that half of its backward pass; the in-block
            # ReLUs clamp the batch-norm output in place (it is a fresh temp)
            conv = Conv3x3(in_ch, out_ch, rng, dtype=dtype,
                           needs_input_grad=in_ch != IN_CHANNELS)
            bn = BatchNorm(out_ch, spatial=True, dtype=dtype)
            self.conv_blocks.append(
                (conv, bn, ReLU(dtype=dtype, inplace=True), MaxPool2(dtype=dtype))
            )
            in_ch = out_ch
        self.fc1 = Linear(FLAT_FEATURES, FC1_FEATURES, rng, dtype=dtype)
        self.bn_fc1 = BatchNorm(FC1_FEATURES, spatial=False, dtype=dtype)
        self.relu_fc1 = ReLU(dtype=dtype, inplace=True)
        self.fc2 = Linear(FC1_FEATURES, FC2_FEATURES, rng, dtype=dtype)
        self.bn_fc2 = BatchNorm(FC2_FEATURES, spatial=False, dtype=dtype)
        self.relu_fc2 = ReLU(dtype=dtype, inplace=True)
        self.head = Linear(FC2_FEATURES + SIDE_FEATURES, 1, rng, dtype=dtype)
        assert FLAT_FEATURES == 6272
        actual = self.param_count()
        expected = expected_param_count()
        if actual != expected:
            raise AssertionError(f"parameter count {actual} != symbolic {expected}")

    # -- structure ---------------------------------------------------------

    def _named_layers(self):
        out = []
        for i, (conv, bn, _, _) in enumerate(self.conv_blocks, start=1):
            out.append((f"conv{i}", conv))
            out.append((f"bn{i}", bn))
        out.extend(
            [
                ("fc1", self.fc1),
                ("bn_fc1", self.bn_fc1),
                ("fc2", self.fc2),
                ("bn_fc2", self.bn_fc2),
                ("head", self.head),
            ]
        )
        return out

    def parameters(self):
        """(name, value, grad, decayed) for every learnable tensor."""
        refs = []
        for lname, layer in self._named_layers():
            for key, value in layer.params.items():
                refs.append(
                    (
                        f"{lname}.{key}",
                        value,
                        layer.grads.get(key),
                        key in layer.decayed,
                    )
                )
        return refs

    def state_arrays(self):
        """(name, array, kind) in the fixed serialization order."""
        out = []
        for lname, layer in self._named_layers():
            for key, value in layer.params.items():
                out.append((f"{lname}.{key}", value, "param"))
            if isinstance(layer, BatchNorm):
                out.append((f"{lname}.running_mean", layer.running_mean, "buffer"))
                out.append((f"{lname}.running_var", layer.running_var, "buffer"))
        return out

    def param_count(self) -> int:
        return sum(v.size for _, v, kind in self.state_arrays() if kind == "param")

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value, _ in self.state_arrays()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, value, _ in self.state_arrays():
            value[...] = snap[name]

    # -- forward / backward -------------------------------------------------

    def forward(self, patches: np.ndarray, feats: np.ndarray, train=False):
        if patches.ndim != 4 or patches.shape[1:] != (IN_CHANNELS, PATCH_SIZE, PATCH_SIZE):
            raise ShapeError(f"expected (B, 3, 112, 112) patches, got {patches.shape}")
        if feats.ndim != 2 or feats.shape != (patches.shape[0], SIDE_FEATURES):
            raise ShapeError(f"expected ({patches.shape[0]}, 3) features, got {feats.shape}")
        x = patches
        for conv, bn, relu, pool in self.conv_blocks:
            x = pool.forward(relu.forward(bn.forward(conv.forward(x, train), train), train), train)
        flat = x.reshape(x.shape[0], -1)
        h = self.relu_fc1.forward(self.bn_fc1.forward(self.fc1.forward(flat, train), train), train)
        h = self.relu_fc2.forward(self.bn_fc2.forward(self.fc2.forward(h, train), train), train)
        z = concat_forward(h, feats)
        return self.head.forward(z, train)

    def backward(self, dout):
        """Propagate the loss gradient; returns (dpatches, dfeats).

        dpatches is None: the first conv does not compute an input gradient.
        """
        dz = self.head.backward(dout)
        dh, dfeats = concat_backward(dz, FC2_FEATURES)
        dh = self.fc2.backward(self.bn_fc2.backward(self.relu_fc2.backward(dh)))
        dflat = self.fc1.backward(self.bn_fc1.backward(self.relu_fc1.backward(dh)))
        dx = dflat.reshape(
            dflat.shape[0], CONV_CHANNELS[-1], POOLED_SIDE, POOLED_SIDE
        )
        for conv, bn, relu, pool in reversed(self.conv_blocks):
            dx = conv.backward(bn.backward(relu.backward(pool.backward(dx))))
        return dx, dfeats


def finite_difference_check(seed: int = 0, batch: int = 3,
                            coords_per_tensor: int = 3,
                            n_directions: int = 4) -> float:
    """End-to-end gradient check of the composed model in float64.

    Returns the worst relative error between analytic and central-difference
    derivatives of the training loss over sampled coordinates and random
    directions.
    """
    from .nn.gradcheck import check_model
    from .nn.layers import mse_loss

    rng = np.random.default_rng(seed)
    model = MassModel(seed=seed, dtype=np.float64)
    patches = rng.random((batch, IN_CHANNELS, PATCH_SIZE, PATCH_SIZE))
    feats = rng.random((batch, SIDE_FEATURES))
    targets = rng.random((batch, 1))

    def loss_fn():
        out = model.forward(patches, feats, train=True)
        return mse_loss(out, targets)[0]

    out = model.forward(patches, feats, train=True)
    loss, dout = mse_loss(out, targets)
    model.backward(dout)
    return check_model(
        model, loss_fn, coords_per_tensor=coords_per_tensor,
        n_directions=n_directions, seed=seed,
    )


# ---------------------------------------------------------------------------
# prediction


def patches_to_tensor(patches) -> np.ndarray:
    """Stack (112, 112, 3) float patches into a (B, 3, 112, 112) tensor."""
    arr = np.stack([np.asarray(p, dtype=np.float32) for p in patches])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def normalized_feats(candidates, stats: NormStats) -> np.ndarray:
    feats = np.empty((len(candidates), SIDE_FEATURES), dtype=np.float32)
    for i, c in enumerate(candidates):
        feats[i] = (
            normalize(c.a, "a", stats),
            normalize(c.b, "b", stats),
            normalize(c.d, "d", stats),
        )
    return feats


def predict_patch(model: MassModel, patch, f, stats: NormStats) -> float:
    """Normalized mass for one patch and raw (a, b, d) triplet."""
    if stats is None:
        raise DataError("normalization stats are required for prediction")
    a, b, d = f
    feats = np.array(
        [[normalize(a, "a", stats), normalize(b, "b", stats), normalize(d, "d", stats)]],
        dtype=np.float32,
    )
    out = model.forward(patches_to_tensor([patch]), feats, train=False)
    return float(out[0, 0])


def predict_recording(
    model: MassModel,
    recording_id: str,
    candidates: list[Candidate],
    stats: NormStats,
) -> MassPrediction:
    """Average the denormalized per-patch predictions of one recording."""
    if stats is None:
        raise DataError("normalization stats are required for prediction")
    if not candidates:
        return MassPrediction(recording_id=recording_id, estimate=None, candidate_count=0)
    tensors = patches_to_tensor([c.patch for c in candidates])
    feats = normalized_feats(candidates, stats)
    out = model.forward(tensors, feats, train=False)[:, 0]
    grams = [denormalize(float(v), "mass", stats) for v in out]
    return MassPrediction(
        recording_id=recording_id,
        estimate=float(np.mean(grams)),
        candidate_count=len(candidates),
    )


# ---------------------------------------------------------------------------
# serialization


@dataclass
class LoadedModel:
    model: MassModel
    stats: NormStats
    meta: dict


def save_model(path, model: MassModel, stats: NormStats, optimizer_tag: str) -> None:
    arrays = model.state_arrays()
    header = {
        "arch": [[name, list(value.shape), kind] for name, value, kind in arrays],
        "stats": {k: getattr(stats, k) for k in (
            "a_min", "a_max", "b_min", "b_max", "d_min", "d_max", "m_min", "m_max")},
        "optimizer": optimizer_tag,
        "seed": model.seed,
        "param_count": model.param_count(),
        "dtype": "float32",
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for _, value, _ in arrays:
        blob += np.ascontiguousarray(value, dtype="<f4").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path) -> LoadedModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MODEL_MAGIC) + 8:
        raise DataError(f"{path}: unexpected end of file")
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise DataError(f"{path}: bad magic, not a model file")
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc_stored:
        raise DataError(f"{path}: checksum mismatch")
    offset = len(MODEL_MAGIC)
    (header_len,) = struct.unpack("<I", blob[offset : offset + 4])
    offset += 4
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    model = MassModel(seed=int(header.get("seed", 0)))
    expected_arch = [
        [name, list(value.shape), kind] for name, value, kind in model.state_arrays()
    ]
    if header["arch"] != expected_arch:
        raise DataError(f"{path}: architecture table mismatch")
    declared = int(header["param_count"])
    if declared != model.param_count():
        raise DataError(
            f"{path}: parameter count {declared} does not match "
            f"architecture ({model.param_count()})"
        )
    for name, value, _ in model.state_arrays():
        nbytes = value.size * 4
        chunk = blob[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise DataError(f"{path}: unexpected end of file in {name}")
        value[...] = np.frombuffer(chunk, dtype="<f4").reshape(value.shape)
        offset += nbytes
    if offset != len(blob) - 4:
        raise DataError(f"{path}: trailing bytes after weight sections")
    stats = NormStats(**header["stats"])
    meta = {k: header[k] for k in ("optimizer", "seed", "param_count", "dtype")}
    return LoadedModel(model=model, stats=stats, meta=meta)
