
from dataclasses import dataclass, field
from typing import Dict, Mapping, MutableMapping

import numpy as np

from .errors import ConfigError
from .model import ModelParams


@dataclass
class AdamState:
    """Adam with weight decay applied as a coupled L2 term (added to the gradient)."""
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def reset(self):
        self.m.clear()
        self.v.clear()
        self.t = 0


def adam_update(state: AdamState, params: MutableMapping[str, np.ndarray],
                grads: Mapping[str, np.ndarray]):
    """In-place update of `params` for every name in `grads`."""
    for name, g in grads.items():
        if name not in params:
            raise ConfigError(f"gradient for unknown parameter '{name}'")
        if params[name].shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {params[name].shape}",
                              key=name)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        w = params[name]
        if state.weight_decay:
            g = g + state.weight_decay * w
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        w -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def adam_step(state: AdamState, params: ModelParams, grads: Mapping[str, np.ndarray]
              ) -> ModelParams:
    """Functional form: returns a new snapshot; entries without a gradient are copied."""
    arrays = {k: np.array(v, copy=True) for k, v in params.items()}
    adam_update(state, arrays, grads)
    return ModelParams(arrays.items(), step_count=params.step_count + 1)
