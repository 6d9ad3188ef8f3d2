"""Monte-Carlo terminal cost, the l_p sparsity penalty and sparsity counts.

The penalty is ``R_p(u) = sum_i (u_i**2 + eps**2) ** (p/2)``, the p-th power
of the l_p quasi-norm, smoothed by ``eps`` so that its gradient stays finite
at zero. Taking the p-th root instead would raise the sum to a power of
order 1e9 at the small ``p`` used for the pendulum, which is meaningless in
floating point.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tape as ad
from .dynamics import DisturbanceBatch, SystemModel, record_rollout, rollout

__all__ = [
    "ControlSequence",
    "CostBreakdown",
    "terminal_cost",
    "lp_regularizer",
    "mc_total_cost",
    "record_total_cost",
    "sparsity_l0",
    "DEFAULT_THRESHOLD",
]

DEFAULT_THRESHOLD = 1e-3


class ControlSequence:
    """Inputs ``u_0 .. u_{T-1}`` stored as a ``(T, n_u)`` float array."""

    def __init__(self, values, input_dim: int = 1):
        arr = np.array(values, dtype=float)
        if arr.ndim <= 1:
            arr = arr.reshape(-1, input_dim)
        if arr.ndim != 2:
            raise ValueError(f"control sequence must be 1-D or 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr.ravel()))[0])
            raise ValueError(f"non-finite control entry at flat index {bad}")
        self.values = arr

    @classmethod
    def zeros(cls, horizon: int, input_dim: int = 1) -> ControlSequence:
        return cls(np.zeros((horizon, input_dim)))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def input_dim(self) -> int:
        return self.values.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, ControlSequence):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"ControlSequence(T={self.horizon}, n_u={self.input_dim})"


@dataclass
class CostBreakdown:
    terminal_mc: float
    regularizer: float
    total: float
    lam: float
    p: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def terminal_cost(x_final, target):
    """Squared Euclidean distance between the final state and the target."""
    if len(x_final) != len(target):
        raise ValueError(f"state has {len(x_final)} entries, target has {len(target)}")
    total = None
    for a, b in zip(x_final, target):
        d = ad.square(a - float(b))
        total = d if total is None else total + d
    return 0.0 if total is None else total


def _check_p(p: float):
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p!r}")


def lp_regularizer(u, p: float, eps: float = 0.0):
    """``sum_i (u_i**2 + eps**2) ** (p/2)`` over the flattened inputs.

    ``u`` may be a :class:`ControlSequence`, an array, or a list of nodes.
    """
    _check_p(p)
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps!r}")
    if isinstance(u, ControlSequence):
        u = u.flat
    if isinstance(u, np.ndarray):
        u = u.ravel().tolist()
    total = None
    for ui in u:
        r = ad.smooth_abs_pow(ui, p, eps)
        total = r if total is None else total + r
    return 0.0 if total is None else total


def _as_steps(u, model: SystemModel) -> np.ndarray:
    if isinstance(u, ControlSequence):
        return u.values
    return np.asarray(u, dtype=float).reshape(-1, model.input_dim)


def mc_total_cost(
    model: SystemModel,
    x0,
    u,
    batch: DisturbanceBatch,
    target,
    lam: float,
    p: float,
    eps: float = 1e-8,
) -> CostBreakdown:
    """Sample-mean terminal cost over ``batch`` plus ``lam * R_p(u)``.

    Samples are summed in batch order, then divided by the batch size.
    """
    if len(batch) == 0:
        raise ValueError("empty disturbance batch")
    steps = _as_steps(u, model)
    acc = 0.0
    for w in batch.samples:
        acc += terminal_cost(rollout(model, x0, steps, w).final, target)
    terminal = acc / len(batch)
    reg = lp_regularizer(steps.ravel(), p, eps)
    return CostBreakdown(terminal, reg, terminal + lam * reg, lam, p)


def record_total_cost(
    model: SystemModel,
    x0,
    u_nodes,
    samples,
    target,
    lam: float,
    p: float,
    eps: float = 1e-8,
    horizon: int | None = None,
):
    """Tape-recorded cost; returns ``(total, terminal_mc, regularizer)`` nodes.

    ``u_nodes`` is a list of per-step node lists. With ``horizon=i`` only
    ``x_i`` enters the terminal term and only ``u_0 .. u_{i-1}`` are
    penalised, so the remaining inputs get exactly zero gradient.
    """
    if len(samples) == 0:
        raise ValueError("empty disturbance batch")
    T = len(u_nodes) if horizon is None else horizon
    acc = None
    for w in samples:
        xT = record_rollout(model, x0, u_nodes, w, T)[-1]
        c = terminal_cost(xT, target)
        acc = c if acc is None else acc + c
    terminal = acc / float(len(samples))
    reg = lp_regularizer([v for step in u_nodes[:T] for v in step], p, eps)
    return terminal + lam * reg, terminal, reg


def sparsity_l0(u, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Number of entries with magnitude strictly above ``threshold``."""
    if threshold < 0 or math.isnan(threshold):
        raise ValueError(f"threshold must be >= 0, got {threshold!r}")
    if isinstance(u, ControlSequence):
        u = u.flat
    return int(np.count_nonzero(np.abs(np.asarray(u, dtype=float)) > threshold))
