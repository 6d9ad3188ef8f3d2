"""Adam with bias correction, and the geometric learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["AdamState", "adam_step", "LrSchedule", "lr_decay", "NonFiniteGradient"]


class NonFiniteGradient(ArithmeticError):
    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite gradient {value!r} at index {index}")
        self.index = index


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for one parameter vector."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **hyper) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), **hyper)

    def to_dict(self) -> dict:
        """JSON-ready layout: lists for the moments, scalars as is."""
        return {
            "m": self.m.tolist(),
            "v": self.v.tolist(),
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> AdamState:
        d = dict(d)
        return cls(np.array(d.pop("m"), dtype=float), np.array(d.pop("v"), dtype=float), **d)


def adam_step(state: AdamState, params, grad) -> tuple[np.ndarray, AdamState]:
    """One Adam update; returns new parameters and a new state.

    Neither ``params`` nor ``state`` is modified in place.
    """
    params = np.asarray(params, dtype=float)
    g = np.asarray(grad, dtype=float)
    if params.shape != g.shape or state.m.shape != g.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {g.shape}, moments {state.m.shape}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NonFiniteGradient(int(bad[0]), float(g[bad[0]]))
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, t=t)


@dataclass(frozen=True)
class LrSchedule:
    """``lr_i = lr0 * beta**i``."""

    lr0: float = 1.0
    beta: float = 0.5
    round_index: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0!r}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta!r}")

    @property
    def lr(self) -> float:
        return self.lr0 * self.beta**self.round_index

    def advance(self) -> LrSchedule:
        return replace(self, round_index=self.round_index + 1)


def lr_decay(schedule: LrSchedule) -> float:
    """Learning rate of the round after ``schedule.round_index``."""
    return schedule.advance().lr
