"""SGD (with optional momentum) and Adam over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def hyperparams(self):
        return {"kind": self.kind, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "momentum": self.momentum}


class Optimizer:
    def __init__(self, state: OptimizerState):
        if state.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {state.lr}")
        self.state = state

    def step(self, params, grads):
        """Update ``params`` (name -> Tensor) in place from ``grads`` (name -> ndarray).

        Parameters without a gradient entry are left untouched.
        """
        self.state.step += 1
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, param {p.data.shape}")
            p.data = self._update(name, p.data, g.astype(p.data.dtype, copy=False))
        return params


class SGD(Optimizer):
    def __init__(self, lr, momentum=0.0):
        super().__init__(OptimizerState("sgd", lr, momentum=momentum))

    def _update(self, name, p, g):
        st = self.state
        if st.momentum:
            v = st.v.get(name)
            v = g.copy() if v is None else st.momentum * v + g
            st.v[name] = v
            g = v
        return p - p.dtype.type(st.lr) * g


class Adam(Optimizer):
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(OptimizerState("adam", lr, beta1, beta2, eps))

    def _update(self, name, p, g):
        st = self.state
        m = st.m.get(name)
        v = st.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = st.beta1 * m + (1 - st.beta1) * g
        v = st.beta2 * v + (1 - st.beta2) * g * g
        st.m[name], st.v[name] = m, v
        mhat = m / (1 - st.beta1 ** st.step)
        vhat = v / (1 - st.beta2 ** st.step)
        return (p - st.lr * mhat / (np.sqrt(vhat) + st.eps)).astype(p.dtype)


def make_optimizer(kind, lr, **kw):
    if kind == "adam":
        return Adam(lr, **kw)
    if kind == "sgd":
        return SGD(lr, **kw)
    raise ValueError(f"unknown optimizer {kind!r}")
