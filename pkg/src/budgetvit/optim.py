"""AdamW with decoupled weight decay and bias correction."""

import numpy as np

from .errors import ArgumentError, ShapeError
from .tensor import Tensor


def adamw_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.0, t=1):
    """One AdamW update over parallel lists of arrays.

    ``state`` is a list of {"m": array, "v": array} dicts, updated in place
    alongside ``params``. ``t`` is the 1-based step count used for bias
    correction.
    """
    if t < 1:
        raise ArgumentError(f"adamw_step: t must be >= 1, got {t}")
    if not (len(params) == len(grads) == len(state)):
        raise ShapeError("adamw_step: params, grads, and state must have equal length")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, st in zip(params, grads, state):
        if p.shape != g.shape or p.shape != st["m"].shape or p.shape != st["v"].shape:
            raise ShapeError(
                f"adamw_step: mismatched shapes param {p.shape}, grad {g.shape}, "
                f"moments {st['m'].shape}/{st['v'].shape}"
            )
        p *= 1.0 - lr * weight_decay
        m, v = st["m"], st["v"]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


class AdamW:
    """Stateful wrapper keyed by parameter name, used by the trainer.

    Moments are created lazily; ``reset(name)`` drops the state for a
    parameter whose shape changed (positional embeddings after a grid
    resize).
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.05):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.moments: dict[str, dict[str, np.ndarray]] = {}

    def step(self, named_params: dict[str, Tensor]) -> None:
        self.t += 1
        for name, param in named_params.items():
            if param.grad is None:
                continue
            st = self.moments.get(name)
            if st is None:
                st = {"m": np.zeros_like(param.data), "v": np.zeros_like(param.data)}
                self.moments[name] = st
            adamw_step([param.data], [param.grad], [st], self.lr, self.beta1,
                       self.beta2, self.eps, self.weight_decay, self.t)

    def reset(self, name: str) -> None:
        self.moments.pop(name, None)

    def state_dict(self) -> dict:
        return {"t": self.t, "moments": self.moments}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.moments = state["moments"]
