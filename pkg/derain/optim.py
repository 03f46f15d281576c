import logging
from dataclasses import dataclass, field

import numpy as np

from derain.errors import InvalidArgumentError, ShapeMismatchError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moments, step counter and hyper-parameters of one Adam run"""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    lr_decay: float = 1.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def init_moments(self, params: dict):
        for name, value in params.items():
            self.m.setdefault(name, np.zeros_like(value))
            self.v.setdefault(name, np.zeros_like(value))


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """
    One Adam update with bias correction followed by decoupled weight decay
    p <- p * (1 - lr * weight_decay). Updates params and state in place.
    """
    if set(params) != set(grads):
        missing = sorted(set(params) ^ set(grads))
        raise InvalidArgumentError(f"adam_step: params and grads disagree on {missing}")
    state.init_moments(params)
    state.t += 1
    t = state.t
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    shrink = 1.0 - state.lr * state.weight_decay

    for name in sorted(params):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ShapeMismatchError(f"adam_step gradient for {name}", p.shape, g.shape)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ShapeMismatchError(f"adam_step moment for {name}", m.shape, p.shape)
        g = g.astype(p.dtype, copy=False)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
        if shrink != 1.0:
            p *= p.dtype.type(shrink)


class Adam:
    """Adam with decoupled weight decay and per-epoch multiplicative lr decay"""

    def __init__(self, params: dict, lr: float = 1e-3, weight_decay: float = 0.0, lr_decay: float = 1.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, state: AdamState = None):
        if lr <= 0:
            raise InvalidArgumentError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise InvalidArgumentError(f"weight decay must be >= 0, got {weight_decay}")
        self.params = params
        self.state = state or AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                                        weight_decay=weight_decay, lr_decay=lr_decay)
        self.state.init_moments(params)

    def step(self, grads: dict):
        adam_step(self.state, self.params, grads)

    def decay_lr(self):
        self.state.lr *= self.state.lr_decay
        logger.info(f"learning rate decayed to {self.state.lr:.6g}")
