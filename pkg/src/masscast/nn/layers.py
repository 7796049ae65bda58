"""Minimal neural-network kernels with hand-derived backward passes.

Everything is plain numpy.  Layers hold their parameters in a ``params``
dict and, after ``backward``, matching gradients in ``grads``; forward
passes cache intermediates only when called with ``train=True``.  Training
runs in float32; gradient checks build float64 layers for headroom.
"""

import numpy as np


class ShapeError(Exception):
    """Tensor shape inconsistent with the layer."""


class NumericalError(Exception):
    """Non-finite values where finite ones are required."""


class Layer:
    """Base: parameter/gradient bookkeeping shared by all layers."""

    # params subject to weight decay (biases and BN gamma/beta never are)
    decayed: tuple[str, ...] = ()

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())


class Conv3x3(Layer):
    """3x3 convolution, padding 1, stride 1; spatial dims are preserved."""

    decayed = ("w",)

    def __init__(self, in_channels, out_channels, rng, dtype=np.float32,
                 needs_input_grad=True):
        super().__init__(dtype)
        self.in_channels = in_channels
        self.out_channels = out_channels
        # a first layer can skip the (expensive) input-gradient computation
        self.needs_input_grad = needs_input_grad
        fan_in = in_channels * 9
        limit = np.sqrt(6.0 / fan_in)
        self.params["w"] = rng.uniform(
            -limit, limit, size=(out_channels, in_channels, 3, 3)
        ).astype(self.dtype)
        self.params["b"] = np.zeros(out_channels, dtype=self.dtype)

    def _im2col(self, x):
        batch, channels, height, width = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        cols = np.empty((batch, channels, 3, 3, height, width), dtype=x.dtype)
        for i in range(3):
            for j in range(3):
                cols[:, :, i, j] = xp[:, :, i : i + height, j : j + width]
        return cols.reshape(batch, channels * 9, height * width)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv expects (B, {self.in_channels}, H, W), got {x.shape}"
            )
        batch, _, height, width = x.shape
        cols = self._im2col(x)
        w2 = self.params["w"].reshape(self.out_channels, -1)
        out = np.empty((batch, self.out_channels, height * width), dtype=x.dtype)
        np.matmul(w2, cols, out=out)
        out += self.params["b"][:, None]
        out = out.reshape(batch, self.out_channels, height, width)
        if train:
            self._cache = (cols, x.shape)
        return out

    def backward(self, dout):
        cols, x_shape = self._cache
        batch, _, height, width = x_shape
        dout2 = dout.reshape(batch, self.out_channels, height * width)
        self.grads["b"] = dout2.sum(axis=(0, 2)).astype(self.dtype)
        dw = np.matmul(dout2, cols.transpose(0, 2, 1)).sum(axis=0)
        self.grads["w"] = dw.reshape(self.params["w"].shape)
        if not self.needs_input_grad:
            return None
        w2 = self.params["w"].reshape(self.out_channels, -1)
        dcols = np.matmul(w2.T, dout2)  # (B, C*9, H*W)
        dcols = dcols.reshape(batch, self.in_channels, 3, 3, height, width)
        dxp = np.zeros(
            (batch, self.in_channels, height + 2, width + 2), dtype=dout.dtype
        )
        for i in range(3):
            for j in range(3):
                dxp[:, :, i : i + height, j : j + width] += dcols[:, :, i, j]
        return dxp[:, :, 1:-1, 1:-1]


class MaxPool2(Layer):
    """2x2 max pooling, stride 2; ties route to the first element row-major."""

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2 expects (B, C, H, W), got {x.shape}")
        height, width = x.shape[2:]
        if height % 2 or width % 2:
            raise ShapeError(f"maxpool2 needs even spatial dims, got {x.shape}")
        # window element k = 2*dy + dx, so selector k matches a row-major
        # argmax over the 2x2 window, with ties taking the smallest k
        a = x[:, :, 0::2, 0::2]
        b = x[:, :, 0::2, 1::2]
        c = x[:, :, 1::2, 0::2]
        d = x[:, :, 1::2, 1::2]
        top = np.maximum(a, b)
        bot = np.maximum(c, d)
        out = np.maximum(top, bot)
        if train:
            sel = np.where(
                bot > top,
                (d > c).astype(np.uint8) + 2,
                (b > a).astype(np.uint8),
            )
            self._cache = (sel, x.shape)
        return out

    def backward(self, dout):
        sel, x_shape = self._cache
        dx = np.zeros(x_shape, dtype=dout.dtype)
        quadrants = (
            dx[:, :, 0::2, 0::2],
            dx[:, :, 0::2, 1::2],
            dx[:, :, 1::2, 0::2],
            dx[:, :, 1::2, 1::2],
        )
        for k, view in enumerate(quadrants):
            np.copyto(view, dout, where=(sel == k))
        return dx


class BatchNorm(Layer):
    """Batch normalization over the batch (and spatial dims for conv input).

    Train mode uses biased batch statistics and folds them into the running
    estimates with the given momentum; eval mode applies the running stats.
    """

    def __init__(self, num_features, spatial, momentum=0.1, eps=1e-5,
                 dtype=np.float32):
        super().__init__(dtype)
        self.num_features = num_features
        self.spatial = spatial
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(num_features, dtype=self.dtype)
        self.params["beta"] = np.zeros(num_features, dtype=self.dtype)
        self.running_mean = np.zeros(num_features, dtype=self.dtype)
        self.running_var = np.ones(num_features, dtype=self.dtype)

    def _check(self, x):
        if self.spatial:
            if x.ndim != 4 or x.shape[1] != self.num_features:
                raise ShapeError(f"expected (B, {self.num_features}, H, W), got {x.shape}")
        elif x.ndim != 2 or x.shape[1] != self.num_features:
            raise ShapeError(f"expected (B, {self.num_features}), got {x.shape}")

    def forward(self, x, train=False):
        # all arithmetic runs on a (B, C, S) view so the reductions hit the
        # contiguous last axis (S = H*W for spatial input, 1 otherwise)
        self._check(x)
        x3 = x.reshape(x.shape[0], self.num_features, -1)
        if not train:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            scale = (self.params["gamma"] * inv)[None, :, None]
            shift = (self.params["beta"] - self.running_mean * scale[0, :, 0])[None, :, None]
            out = x3 * scale
            out += shift
            return out.reshape(x.shape)
        if x.shape[0] < 2:
            raise ShapeError("batch norm needs batch >= 2 in train mode")
        m = x3.shape[0] * x3.shape[2]
        mean = x3.sum(axis=2).sum(axis=0) / m
        xhat = x3 - mean[None, :, None]
        var = np.einsum("bcs,bcs->c", xhat, xhat) / m
        inv = 1.0 / np.sqrt(var + self.eps)
        np.multiply(xhat, inv[None, :, None], out=xhat)
        self.running_mean += self.momentum * (mean.astype(self.dtype) - self.running_mean)
        self.running_var += self.momentum * (var.astype(self.dtype) - self.running_var)
        self._cache = (xhat, inv, x.shape)
        out = xhat * self.params["gamma"][None, :, None]
        out += self.params["beta"][None, :, None]
        return out.reshape(x.shape)

    def backward(self, dout):
        xhat, inv, x_shape = self._cache
        do3 = dout.reshape(xhat.shape)
        m = do3.shape[0] * do3.shape[2]
        dbeta = do3.sum(axis=2).sum(axis=0)
        dgamma = np.einsum("bcs,bcs->c", do3, xhat)
        self.grads["beta"] = dbeta.astype(self.dtype)
        self.grads["gamma"] = dgamma.astype(self.dtype)
        # dx = gamma*inv * (dout - mean(dout) - xhat * mean(dout*xhat)),
        # reusing dbeta/m and dgamma/m as the two channel means
        dx = do3 - (dbeta / m)[None, :, None]
        dx -= xhat * (dgamma / m)[None, :, None]
        np.multiply(dx, (self.params["gamma"] * inv)[None, :, None], out=dx)
        return dx.reshape(x_shape)


class Linear(Layer):
    """Affine map y = x @ w.T + b with w shaped (out, in)."""

    decayed = ("w",)

    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        super().__init__(dtype)
        self.in_features = in_features
        self.out_features = out_features
        limit = np.sqrt(6.0 / in_features)
        self.params["w"] = rng.uniform(
            -limit, limit, size=(out_features, in_features)
        ).astype(self.dtype)
        self.params["b"] = np.zeros(out_features, dtype=self.dtype)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"expected (B, {self.in_features}), got {x.shape}")
        if train:
            self._cache = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads["w"] = (dout.T @ x).astype(self.dtype)
        self.grads["b"] = dout.sum(axis=0).astype(self.dtype)
        return dout @ self.params["w"]


class ReLU(Layer):
    """relu(x) = max(x, 0); the subgradient at 0 is taken as 0.

    With inplace=True the input array is clamped in place, which is safe
    whenever the caller does not keep the pre-activation around.
    """

    def __init__(self, dtype=np.float32, inplace=False):
        super().__init__(dtype)
        self.inplace = inplace

    def forward(self, x, train=False):
        if train:
            self._cache = x > 0
        if self.inplace:
            return np.maximum(x, 0, out=x)
        return np.maximum(x, 0)

    def backward(self, dout):
        if self.inplace:
            dout *= self._cache
            return dout
        return dout * self._cache


def concat_forward(features, extra):
    """Append the side-feature vectors to the feature batch along axis 1."""
    if features.shape[0] != extra.shape[0]:
        raise ShapeError(
            f"batch mismatch: {features.shape[0]} vs {extra.shape[0]}"
        )
    return np.concatenate([features, extra], axis=1)


def concat_backward(dout, feature_dim):
    """Split the gradient back into (features, extra) slices."""
    return dout[:, :feature_dim], dout[:, feature_dim:]


def mse_loss(pred, target):
    """Mean squared error and its gradient 2*(pred - target)/N."""
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, (2.0 / diff.size) * diff
