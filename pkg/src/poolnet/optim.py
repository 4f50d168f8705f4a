"""Adam with coupled weight decay, and the step-decay learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .errors import CheckpointError
from .nn import Parameter


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Base rate until the drop epoch, then divided by the drop factor."""
    if epoch < config.lr_drop_epoch:
        return config.lr
    return config.lr / config.lr_drop_factor


class Adam:
    """Adam with bias correction; weight decay is added to the gradient.

    A parameter without a gradient is an error unless ``require_grads`` is
    false, in which case it is skipped untouched -- alternating training
    leaves each step type's unused branch without gradients by design.  Bias
    correction therefore counts updates per parameter.  ``state_dict``
    exports the moments flat (keyed by parameter name) so they can ride
    inside a checkpoint.
    """

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 require_grads: bool = True):
        self.params: list[Parameter] = [p for p in params if p.trainable]
        if not self.params:
            raise ValueError("Adam: no trainable parameters")
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.require_grads = require_grads
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.updates = np.zeros(len(self.params), dtype=np.int64)

    def _key(self, index: int) -> str:
        name = self.params[index].name
        return name if name else f"param{index}"

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                if self.require_grads:
                    raise ValueError(f"Adam: parameter {self._key(i)!r} has no gradient; "
                                     "was backward run?")
                continue
            g = p.grad.astype(p.dtype, copy=False)
            if self.weight_decay:
                g = g + p.dtype.type(self.weight_decay) * p.data
            self.updates[i] += 1
            t = int(self.updates[i])
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * np.square(g)
            m_hat = self.m[i] / p.dtype.type(1.0 - self.beta1 ** t)
            v_hat = self.v[i] / p.dtype.type(1.0 - self.beta2 ** t)
            p.data -= p.dtype.type(self.lr) * m_hat / (np.sqrt(v_hat) + p.dtype.type(self.eps))

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"opt/step": np.asarray([self.step_count], dtype=np.float32),
               "opt/updates": self.updates.astype(np.float32)}
        for i in range(len(self.params)):
            key = self._key(i)
            out[f"opt/m/{key}"] = self.m[i]
            out[f"opt/v/{key}"] = self.v[i]
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for required in ("opt/step", "opt/updates"):
            if required not in state:
                raise CheckpointError(f"optimizer state lacks {required!r}")
        if state["opt/updates"].shape != self.updates.shape:
            raise CheckpointError(f"optimizer state tracks {state['opt/updates'].size} "
                                  f"parameters, expected {self.updates.size}")
        self.step_count = int(state["opt/step"][0])
        self.updates = state["opt/updates"].astype(np.int64)
        for i, p in enumerate(self.params):
            key = self._key(i)
            for stash, label in ((self.m, "m"), (self.v, "v")):
                record = state.get(f"opt/{label}/{key}")
                if record is None:
                    raise CheckpointError(f"optimizer state lacks 'opt/{label}/{key}'")
                if record.shape != p.data.shape:
                    raise CheckpointError(f"optimizer record 'opt/{label}/{key}' has shape "
                                          f"{record.shape}, expected {p.data.shape}")
                stash[i] = record.astype(p.dtype, copy=True)
