"""MAE loss and the Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, record


def mae_loss(pred, target):
    """Mean absolute error; the subgradient at a zero residual is 0."""
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if pred.ndim != 1 or pred.shape != target.shape:
        raise DimensionError(f"mae_loss: pred {pred.shape} and target {target.shape} must be equal-length vectors")
    n = pred.shape[0]
    if n == 0:
        raise ContractError("mae_loss: empty batch")
    resid = pred.data - target.data
    sign = np.sign(resid)

    def backward(g):
        gp = sign * (float(g) / n)
        return gp, -gp

    return record("mae", np.asarray(np.abs(resid).mean()), (pred, target), backward)


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
        return state


def adam_step(state, params, grads):
    """One Adam update, in place. Non-finite gradients leave everything untouched."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("adam_step: params, grads and state must have the same length")
    for p, g in zip(params, grads):
        if g is None:
            raise ContractError("adam_step: missing gradient")
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: gradient {g.shape} vs parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError("adam_step: non-finite gradient; parameters not updated")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        kernels.adam_update(p.data.reshape(-1), np.ascontiguousarray(g).reshape(-1), m.reshape(-1),
                            v.reshape(-1), state.lr, b1, b2, c1, c2, state.eps)
