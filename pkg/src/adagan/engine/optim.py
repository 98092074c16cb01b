"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DivergenceError
from ..tensor import DTYPE


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, iteration=None):
    """Update ``params`` (name -> Parameter) in place from ``grads`` (name -> array).

    Parameters whose gradient is ``None`` are left untouched but still share
    the global step counter.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}", iteration)
    state.step += 1
    t = state.step
    b1, b2 = DTYPE(state.beta1), DTYPE(state.beta2)
    c1 = DTYPE(1 - state.beta1**t)
    c2 = DTYPE(1 - state.beta2**t)
    lr, eps = DTYPE(state.lr), DTYPE(state.eps)
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(DTYPE)


class Adam:
    """Adam over a module's named parameters, reading gradients from ``.grad``."""

    def __init__(self, module, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.module = module
        self.state = AdamState(lr, beta1, beta2, eps)

    def step(self, iteration=None):
        params = dict(self.module.named_parameters())
        adam_step(params, {name: p.grad for name, p in params.items()}, self.state, iteration)

    def state_dict(self):
        out = {}
        for name in self.state.m:
            out[f"m/{name}"] = self.state.m[name]
            out[f"v/{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, tensors, step):
        self.state.step = int(step)
        self.state.m = {k[2:]: np.asarray(a, dtype=DTYPE).copy() for k, a in tensors.items() if k.startswith("m/")}
        self.state.v = {k[2:]: np.asarray(a, dtype=DTYPE).copy() for k, a in tensors.items() if k.startswith("v/")}
