"""Incremental training with a decaying exponent, polishing, and evaluation.

Random draws come from named substreams of the master seed (see
:func:`handsoff.dynamics.make_rng`):

=====================  ======================
stream                 spawn key
=====================  ======================
incremental stage i    ``(1, i)``
polish round r         ``(2, r)``
evaluation             ``(3,)``
=====================  ======================

so changing e.g. the evaluation size never perturbs training draws.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .dynamics import SystemModel, Uniform, make_rng, parse_distribution, rollout, sample_disturbances
from .objective import DEFAULT_THRESHOLD, ControlSequence, CostBreakdown, record_total_cost, sparsity_l0, terminal_cost
from .optim import AdamState, LrSchedule, adam_step
from .tape import Tape

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainedResult",
    "EvalReport",
    "TrainingAborted",
    "cost_and_grad",
    "p_schedule",
    "incremental_train",
    "polish",
    "train_full",
    "evaluate",
    "STREAM_INCREMENTAL",
    "STREAM_POLISH",
    "STREAM_EVAL",
]

STREAM_INCREMENTAL = 1
STREAM_POLISH = 2
STREAM_EVAL = 3


class TrainingAborted(RuntimeError):
    def __init__(self, phase: str, index: int, cause: Exception):
        super().__init__(f"{phase} {index}: {cause}")
        self.phase = phase
        self.index = index


@dataclass
class TrainConfig:
    horizon: int = 50
    x0: tuple = (0.0, 0.0)
    target: tuple = (math.pi, 0.0)
    lam_incremental: float = 1.0
    lam_polish: float = 3e7
    p_start: float = 1.0
    alpha: float = 0.667
    p_polish: float = (2.0 / 3.0) ** 50
    eps: float = 1e-2
    batch_size: int = 2
    polish_batch_size: int | None = None
    stage_iters: int = 200
    polish_rounds: int = 10
    polish_iters: int = 500
    lr_incremental: float = 0.1
    lr0: float = 1.0
    lr_beta: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    noise: Uniform = field(default_factory=Uniform)
    seed: int = 0
    deterministic: bool = True
    keep_adam_state: bool = False

    def __post_init__(self):
        self.x0 = tuple(float(v) for v in self.x0)
        self.target = tuple(float(v) for v in self.target)
        self.noise = parse_distribution(self.noise)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("p_start", "p_polish"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        for name in ("batch_size", "stage_iters", "polish_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.polish_batch_size is not None and self.polish_batch_size < 1:
            raise ValueError("polish_batch_size must be >= 1")
        if self.polish_rounds < 0:
            raise ValueError("polish_rounds must be >= 0")
        if self.lam_incremental < 0 or self.lam_polish < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        LrSchedule(self.lr0, self.lr_beta)

    @property
    def n_polish(self) -> int:
        return self.batch_size if self.polish_batch_size is None else self.polish_batch_size

    def adam(self, size: int, lr: float) -> AdamState:
        return AdamState.zeros(size, lr=lr, beta1=self.adam_beta1, beta2=self.adam_beta2, eps=self.adam_eps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        d["target"] = list(self.target)
        d["noise"] = self.noise.to_dict()
        return d


@dataclass
class TrainedResult:
    control: ControlSequence
    stage_history: list[CostBreakdown]
    polish_history: list[CostBreakdown]
    incremental_control: ControlSequence
    l0_before_polish: int
    l0_after_polish: int
    config: TrainConfig
    threshold: float = DEFAULT_THRESHOLD

    @property
    def seed(self) -> int:
        return self.config.seed


@dataclass
class EvalReport:
    mean_terminal_error: float
    max_terminal_error: float
    terminal_costs: np.ndarray
    mean_final_state: np.ndarray
    l0_sparsity: int
    threshold: float
    n_eval: int
    seed: int
    trajectories: list = field(default_factory=list)

    def to_dict(self) -> dict:
        costs = self.terminal_costs
        return {
            "mean_terminal_error": self.mean_terminal_error,
            "max_terminal_error": self.max_terminal_error,
            "l0_sparsity": self.l0_sparsity,
            "threshold": self.threshold,
            "n_eval": self.n_eval,
            "seed": self.seed,
            "mean_final_state": self.mean_final_state.tolist(),
            "terminal_cost": {
                "mean": float(costs.mean()),
                "std": float(costs.std()),
                "min": float(costs.min()),
                "median": float(np.median(costs)),
                "max": float(costs.max()),
            },
        }


def cost_and_grad(model, x0, params: np.ndarray, samples, target, lam, p, eps, horizon=None):
    """Record the cost for flat ``params`` on a fresh tape and differentiate it.

    Returns ``(CostBreakdown, gradient)``.
    """
    tape = Tape()
    leaves = tape.leaves(params.tolist())
    n_u = model.input_dim
    u_nodes = [leaves[k : k + n_u] for k in range(0, len(leaves), n_u)]
    total, terminal, reg = record_total_cost(model, x0, u_nodes, samples, target, lam, p, eps, horizon)
    grad = np.array(tape.backward(total))
    return CostBreakdown(terminal.value, reg.value, total.value, lam, p), grad


def p_schedule(config: TrainConfig) -> np.ndarray:
    """Exponent used at incremental stages ``1 .. T``: ``p_start * alpha**(i-1)``."""
    return np.array([config.p_start * config.alpha ** (i - 1) for i in range(1, config.horizon + 1)])


Logger = Callable[[dict], None]


def _optimize(model, x0, params, samples, target, lam, p, eps, iters, adam, log, tag, horizon=None):
    for it in range(iters):
        cost, grad = cost_and_grad(model, x0, params, samples, target, lam, p, eps, horizon)
        if not math.isfinite(cost.total):
            raise ArithmeticError(f"non-finite loss at iteration {it}")
        if log is not None:
            log({**tag, "iteration": it, "p": p, "lr": adam.lr, "terminal_mc": cost.terminal_mc,
                 "regularizer": cost.regularizer, "total": cost.total})
        params, adam = adam_step(adam, params, grad)
    final, _ = cost_and_grad(model, x0, params, samples, target, lam, p, eps, horizon)
    return params, final, adam


def incremental_train(
    config: TrainConfig,
    model: SystemModel,
    seed: int | None = None,
    log: Logger | None = None,
    history: list | None = None,
    on_stage: Callable[[int, np.ndarray], None] | None = None,
    start: tuple[int, np.ndarray] | None = None,
) -> ControlSequence:
    """Grow the horizon one step per stage, warm-starting from the previous stage.

    Stage ``i`` trains ``u_0 .. u_{i-1}`` on ``batch_size`` fresh disturbance
    trajectories of length ``i``, with the new input initialised to zero and a
    fresh Adam state. ``start=(i, params)`` resumes after completed stage ``i``.
    """
    seed = config.seed if seed is None else seed
    n_u = model.input_dim
    first, params = 1, np.zeros(0)
    if start is not None:
        first, params = start[0] + 1, np.asarray(start[1], dtype=float)
    for i, p in enumerate(p_schedule(config)[first - 1 :], start=first):
        batch = sample_disturbances(make_rng(seed, STREAM_INCREMENTAL, i), config.batch_size, i,
                                    config.noise, model.noise_dim)
        params = np.concatenate([params, np.zeros(n_u)])
        try:
            params, final, _ = _optimize(model, config.x0, params, batch.samples, config.target,
                                      config.lam_incremental, float(p), config.eps, config.stage_iters,
                                      config.adam(params.size, config.lr_incremental), log,
                                      {"phase": "incremental", "stage": i})
        except (ArithmeticError, ValueError) as exc:
            raise TrainingAborted("stage", i, exc) from exc
        logger.debug("stage %d p=%.4g total=%.6g", i, p, final.total)
        if history is not None:
            history.append(final)
        if on_stage is not None:
            on_stage(i, params)
    return ControlSequence(params.reshape(-1, n_u))


def polish(
    config: TrainConfig,
    u_init: ControlSequence,
    model: SystemModel,
    seed: int | None = None,
    log: Logger | None = None,
    history: list | None = None,
    on_round: Callable[[int, np.ndarray, AdamState], None] | None = None,
    first_round: int = 0,
    adam: AdamState | None = None,
) -> ControlSequence:
    """Retrain all inputs jointly, scaling the rate by ``lr_beta`` each round.

    ``first_round`` and ``adam`` resume an interrupted run; the Adam state is
    only carried over when ``keep_adam_state`` is set.
    """
    seed = config.seed if seed is None else seed
    if u_init.horizon != config.horizon or u_init.input_dim != model.input_dim:
        raise ValueError(f"initial control has shape {u_init.values.shape}, expected ({config.horizon}, {model.input_dim})")
    params = u_init.flat.copy()
    schedule = LrSchedule(config.lr0, config.lr_beta, first_round)
    if adam is None:
        adam = config.adam(params.size, schedule.lr)
    for r in range(first_round, config.polish_rounds):
        if config.keep_adam_state:
            adam = replace(adam, lr=schedule.lr)
        else:
            adam = config.adam(params.size, schedule.lr)
        batch = sample_disturbances(make_rng(seed, STREAM_POLISH, r), config.n_polish, config.horizon,
                                    config.noise, model.noise_dim)
        try:
            params, final, adam = _optimize(model, config.x0, params, batch.samples, config.target,
                                      config.lam_polish, config.p_polish, config.eps, config.polish_iters,
                                      adam, log,
                                      {"phase": "polish", "round": r})
        except (ArithmeticError, ValueError) as exc:
            raise TrainingAborted("round", r, exc) from exc
        logger.debug("round %d lr=%.4g total=%.6g", r, schedule.lr, final.total)
        if history is not None:
            history.append(final)
        if on_round is not None:
            on_round(r, params, adam)
        schedule = schedule.advance()
    return ControlSequence(params.reshape(-1, model.input_dim))


def train_full(
    config: TrainConfig,
    model: SystemModel,
    log: Logger | None = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> TrainedResult:
    stages, rounds = [], []
    u_inc = incremental_train(config, model, log=log, history=stages)
    u = polish(config, u_inc, model, log=log, history=rounds)
    return TrainedResult(u, stages, rounds, u_inc, sparsity_l0(u_inc, threshold), sparsity_l0(u, threshold),
                         config, threshold)


def evaluate(
    u: ControlSequence,
    model: SystemModel,
    x0,
    target,
    n_eval: int = 100,
    seed: int = 0,
    dist=Uniform(),
    threshold: float = DEFAULT_THRESHOLD,
    keep: int = 5,
) -> EvalReport:
    """Apply ``u`` open loop against ``n_eval`` fresh disturbance trajectories.

    Draws use the evaluation substream of ``seed``. The first ``keep``
    trajectories are returned for plotting.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    batch = sample_disturbances(make_rng(seed, STREAM_EVAL), n_eval, u.horizon, dist, model.noise_dim)
    costs, finals, trajs = [], [], []
    for k, w in enumerate(batch.samples):
        traj = rollout(model, x0, u.values, w)
        costs.append(terminal_cost(traj.final, target))
        finals.append(traj.final)
        if k < keep:
            trajs.append(traj)
    costs = np.array(costs)
    errors = np.sqrt(costs)
    return EvalReport(float(errors.mean()), float(errors.max()), costs, np.mean(finals, axis=0),
                      sparsity_l0(u, threshold), threshold, n_eval, int(seed), trajs)
