"""AdamW with decoupled weight decay, cosine learning-rate schedule, and
global-norm gradient clipping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, TrainingError


@dataclass(frozen=True)
class Schedule:
    total_steps: int
    lr_init: float = 4e-4
    lr_final: float = 1e-6
    warmup_steps: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} must lie in [0, total_steps)")
        if self.lr_final > self.lr_init:
            raise ConfigError("lr_final must not exceed lr_init")


def lr_at(schedule: Schedule, step):
    """Cosine decay from lr_init to lr_final; optional linear warmup."""
    if not 0 <= step <= schedule.total_steps:
        raise ContractError(
            f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.lr_init * (step + 1) / schedule.warmup_steps
    t = step - schedule.warmup_steps
    total = schedule.total_steps - schedule.warmup_steps
    return schedule.lr_final + 0.5 * (schedule.lr_init - schedule.lr_final) * \
        (1.0 + np.cos(np.pi * t / total))


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns the pre-clip norm. No-op when max_norm is None or 0.
    """
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(sq))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    """Decoupled weight decay applied before the bias-corrected Adam update."""

    def __init__(self, params, betas=(0.9, 0.999), weight_decay=0.02, eps=1e-8):
        self.params = params
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for path, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in parameter {path}")
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            m = self.m[path]
            v = self.v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self):
        return {"step": self.step_count,
                "m": {k: a.copy() for k, a in self.m.items()},
                "v": {k: a.copy() for k, a in self.v.items()}}

    def load_state_dict(self, state):
        if set(state["m"]) != set(self.m) or set(state["v"]) != set(self.v):
            raise TrainingError("optimizer state parameter paths do not match")
        self.step_count = int(state["step"])
        for k in self.m:
            if state["m"][k].shape != self.m[k].shape:
                raise TrainingError(f"optimizer moment shape mismatch at {k}")
            self.m[k] = state["m"][k].astype(self.m[k].dtype).copy()
            self.v[k] = state["v"][k].astype(self.v[k].dtype).copy()
