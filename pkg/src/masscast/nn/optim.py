"""Optimizers with a staircase exponential learning-rate schedule.

lr(t) = base_lr * decay_rate ** (t // decay_steps), where t counts optimizer
steps (one per batch).  Weight decay is an L2 term added to the gradients of
weight matrices only; biases and batch-norm gamma/beta are exempt.
"""

from dataclasses import dataclass

import numpy as np

from .layers import NumericalError


@dataclass
class OptimizerState:
    base_lr: float = 0.0015
    decay_rate: float = 0.9985
    decay_steps: int = 20
    weight_decay: float = 0.001
    global_step: int = 0

    def lr(self) -> float:
        return self.base_lr * self.decay_rate ** (self.global_step // self.decay_steps)


class _Optimizer:
    """Shared stepping logic; subclasses provide the per-parameter update."""

    tag = "base"

    def __init__(self, base_lr=0.0015, decay_rate=0.9985, decay_steps=20,
                 weight_decay=0.001):
        self.state = OptimizerState(base_lr, decay_rate, decay_steps, weight_decay)

    def step(self, parameters):
        """Apply one update to (name, layer, key) parameter references.

        ``parameters`` is an iterable of (name, array, grad, decayed) tuples;
        arrays are updated in place.  Raises on non-finite gradients before
        touching any parameter.
        """
        params = list(parameters)
        for name, _, grad, _ in params:
            if not np.isfinite(grad).all():
                raise NumericalError(
                    f"non-finite gradient in {name} at step {self.state.global_step}"
                )
        lr = self.state.lr()
        for name, value, grad, decayed in params:
            g = grad
            if decayed and self.state.weight_decay:
                g = g + self.state.weight_decay * value
            self._update(name, value, g, lr)
        self.state.global_step += 1

    def _update(self, name, value, grad, lr):
        raise NotImplementedError


class SGD(_Optimizer):
    """Plain stochastic gradient descent."""

    tag = "sgd"

    def _update(self, name, value, grad, lr):
        value -= (lr * grad).astype(value.dtype)


class Adam(_Optimizer):
    """Adam with the same lr schedule and additive L2 weight decay."""

    tag = "adam"

    def __init__(self, base_lr=0.0015, decay_rate=0.9985, decay_steps=20,
                 weight_decay=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(base_lr, decay_rate, decay_steps, weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def _update(self, name, value, grad, lr):
        m = self._m.setdefault(name, np.zeros_like(value, dtype=np.float64))
        v = self._v.setdefault(name, np.zeros_like(value, dtype=np.float64))
        t = self.state.global_step + 1
        m += (1.0 - self.beta1) * (grad - m)
        v += (1.0 - self.beta2) * (grad * grad - v)
        mhat = m / (1.0 - self.beta1 ** t)
        vhat = v / (1.0 - self.beta2 ** t)
        value -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(value.dtype)


def make_optimizer(tag: str, **kwargs) -> _Optimizer:
    if tag == "sgd":
        return SGD(**kwargs)
    if tag == "adam":
        return Adam(**kwargs)
    raise ValueError(f"unknown optimizer {tag!r}")
