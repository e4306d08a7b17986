"""Adaptive-moment optimizer with the step-decay learning-rate schedule.

The effective rate at a given epoch is ``initial * decay ** (epoch // interval)``;
the default schedule divides the rate by 10 every 3 epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class LrSchedule:
    initial: float = 1e-3
    decay: float = 0.1
    interval: int = 3

    def rate_at(self, epoch):
        if epoch < 0:
            raise ValueError(f"epoch must be non-negative, got {epoch}")
        return self.initial * self.decay ** (epoch // self.interval)


class Adam:
    """Adam over a list of parameter tensors.

    A step with any non-finite gradient is rejected and leaves both the
    parameters and the moment accumulators untouched.
    """

    def __init__(self, params, schedule=None, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.params = list(params)
        self.schedule = schedule if schedule is not None else LrSchedule()
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, epoch=0):
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise FloatingPointError("non-finite gradient; optimizer step rejected")
            grads.append(g)
        lr = self.schedule.rate_at(epoch)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - (lr * update).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
