"""Parameter updates: SGD with momentum and AdamW with decoupled decay."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ParameterError
from .tensor import Tensor


def _check_grads(params):
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter '{name}' has no gradient; call backward first")


class SgdMomentum:
    """p <- p - lr * v with v <- momentum * v + (grad + wd * p)."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ParameterError(f"lr must be > 0, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ParameterError(f"momentum must be in [0, 1), got {momentum}")
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        _check_grads(self.params)
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self._velocity[name]
            v *= self.momentum
            v += g
            p.data -= self.lr * v


class AdamW:
    """Adam moments with weight decay applied directly to the parameter."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ParameterError(f"lr must be > 0, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        _check_grads(self.params)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                 + self.weight_decay * p.data)


def optimizer_step(kind: str, params: dict[str, Tensor], hyper: dict):
    """One-shot functional update, mainly for tests and scripts."""
    if kind == "sgd_momentum":
        opt = SgdMomentum(params, lr=hyper["lr"], momentum=hyper.get("momentum", 0.0),
                          weight_decay=hyper.get("weight_decay", 0.0))
    elif kind == "adamw":
        opt = AdamW(params, lr=hyper["lr"], betas=hyper.get("betas", (0.9, 0.999)),
                    eps=hyper.get("eps", 1e-8),
                    weight_decay=hyper.get("weight_decay", 0.0))
    else:
        raise ParameterError(f"unknown optimizer kind '{kind}'")
    opt.step()
    return opt


class ParamGroup:
    """Named parameters driven by one optimizer, with an optional freeze.

    While ``frozen()`` reports True the group's step is skipped entirely
    (no update, no momentum/statistics change) and its gradients are
    discarded, so the tensors stay bit-identical.
    """

    def __init__(self, name: str, optimizer, frozen=None):
        self.name = name
        self.optimizer = optimizer
        self._frozen = frozen if frozen is not None else (lambda: False)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.optimizer.params

    def frozen(self) -> bool:
        return bool(self._frozen())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        if self.frozen():
            for p in self.params.values():
                p.grad = np.zeros_like(p.data)
            return
        self.optimizer.step()
