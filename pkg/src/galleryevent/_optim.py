"""Adam optimiser and early-stopping bookkeeping for numpy parameter lists."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam update rule operating in place on a list of arrays."""

    def __init__(self, params, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        lr_t = self.learning_rate * np.sqrt(1 - self.beta2**self.t) / (1 - self.beta1**self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr_t * m / (np.sqrt(v) + self.eps)


class EarlyStopping:
    """Track the best loss; an epoch is accepted only when it improves on it.

    ``history`` holds the losses of accepted epochs and is therefore
    non-increasing.
    """

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = np.inf
        self.best_params = None
        self.history = []
        self.wait = 0

    def update(self, loss, params) -> bool:
        """Record ``loss``; return True when training should stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_params = [p.copy() for p in params]
            self.history.append(float(loss))
            self.wait = 0
            return False
        self.wait += 1
        return self.wait > self.patience
