"""Sparse ("hands-off") open-loop control by training an unrolled simulation.

The control inputs of a finite-horizon stochastic system are treated as the
weights of a network whose layers are the time steps. They are trained with
Adam on a Monte-Carlo terminal cost plus a smoothed ``sum |u_t|**p``
penalty, first incrementally (one step at a time, with ``p`` decaying) and
then jointly ("polishing") with a fixed small ``p``.
"""
from .dynamics import LinearSystem, Pendulum, PendulumParams, Uniform, rollout, sample_disturbances
from .objective import ControlSequence, lp_regularizer, mc_total_cost, sparsity_l0, terminal_cost
from .optim import AdamState, LrSchedule, adam_step
from .tape import Node, Tape
from .trainer import TrainConfig, evaluate, incremental_train, polish, train_full

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ControlSequence",
    "LinearSystem",
    "LrSchedule",
    "Node",
    "Pendulum",
    "PendulumParams",
    "Tape",
    "TrainConfig",
    "Uniform",
    "adam_step",
    "evaluate",
    "incremental_train",
    "lp_regularizer",
    "mc_total_cost",
    "polish",
    "rollout",
    "sample_disturbances",
    "sparsity_l0",
    "terminal_cost",
    "train_full",
]
