"""SGD and Adam over block-labelled parameters.

Frozen parameters are skipped entirely, so their bytes never change.
"""

import numpy as np

from .autograd import MissingGradientError


class Optimizer:
    def __init__(self, params, lr):
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr!r}")
        self.params = list(params)
        self.lr = lr

    def _trainable(self):
        for p in self.params:
            if p.frozen:
                continue
            if p.grad is None:
                raise MissingGradientError(f"no gradient for trainable parameter {p.id!r}")
            yield p

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        raise NotImplementedError


class SGD(Optimizer):
    def step(self):
        for p in list(self._trainable()):
            p.values -= self.lr * p.grad
        self.zero_grad()


class Adam(Optimizer):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self):
        trainable = list(self._trainable())
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in trainable:
            g = p.grad
            m = self.m.get(p.id)
            if m is None:
                m = self.m[p.id] = np.zeros_like(p.values)
                self.v[p.id] = np.zeros_like(p.values)
            v = self.v[p.id]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.zero_grad()


def make_optimizer(kind, params, lr):
    if kind == "sgd":
        return SGD(params, lr)
    if kind == "adam":
        return Adam(params, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(params, learning_rate, kind="sgd", state=None):
    """One update of ``params``; ``state`` carries an Adam instance across calls."""
    opt = state if state is not None else make_optimizer(kind, params, learning_rate)
    opt.step()
    return opt
