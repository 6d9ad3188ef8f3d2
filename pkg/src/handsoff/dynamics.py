"""Discrete-time stochastic plants, disturbance sampling and rollouts.

A model maps ``(x, u, w) -> x'`` where each argument is a sequence of
scalars. Step functions only use arithmetic and the helpers from
:mod:`handsoff.tape`, so the same code runs on floats and on tape nodes.

Disturbances are drawn with numpy's PCG64 bit generator seeded through a
:class:`numpy.random.SeedSequence`; both are specified bit-for-bit by numpy
and give the same streams on every platform.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tape as ad

__all__ = [
    "SystemModel",
    "PendulumParams",
    "Pendulum",
    "LinearSystem",
    "Trajectory",
    "Uniform",
    "DisturbanceBatch",
    "RolloutError",
    "pendulum_step",
    "rollout",
    "record_rollout",
    "make_rng",
    "sample_disturbances",
    "parse_distribution",
]


class RolloutError(ArithmeticError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, message: str = "non-finite state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class SystemModel:
    """One-step dynamics ``x_{t+1} = f(x_t, u_t, w_t)``.

    Subclasses set the three dimensions and implement :meth:`step`.
    Instances are read-only after construction.
    """

    state_dim: int
    input_dim: int
    noise_dim: int

    def step(self, x: Sequence, u: Sequence, w: Sequence) -> list:
        raise NotImplementedError


@dataclass(frozen=True)
class PendulumParams:
    length: float = 1.0
    mass: float = 1.0
    friction: float = 1.0
    gravity: float = 9.80665
    dt: float = 0.1

    def __post_init__(self):
        for name in ("length", "mass", "friction", "gravity", "dt"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"pendulum parameter {name} must be positive, got {value!r}")


def pendulum_step(x: Sequence, u, w, params: PendulumParams = PendulumParams()) -> list:
    """Damped pendulum, explicit Euler in angle and velocity.

    ``x = [angle, angular velocity]`` with the angle measured from the
    hanging position. Input and disturbance are added to the velocity
    update as given, without a factor of ``dt``.
    """
    angle, rate = x[0], x[1]
    for v in (angle, rate, u, w):
        if not isinstance(v, ad.Node) and not math.isfinite(v):
            raise ValueError(f"non-finite pendulum input {v!r}")
    p = params
    new_angle = angle + p.dt * rate
    new_rate = rate - p.dt * (p.gravity / p.length * ad.sin(angle) + p.friction / p.mass * rate) + u + w
    return [new_angle, new_rate]


class Pendulum(SystemModel):
    state_dim = 2
    input_dim = 1
    noise_dim = 1

    def __init__(self, params: PendulumParams = PendulumParams()):
        self.params = params

    def step(self, x, u, w):
        return pendulum_step(x, u[0], w[0], self.params)

    def __repr__(self):
        return f"Pendulum({self.params})"


class LinearSystem(SystemModel):
    """``x' = A x + B u + E w`` with dense coefficient matrices.

    ``E`` defaults to ``B`` (disturbance enters like the input).
    """

    def __init__(self, A, B, E=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.E = self.B if E is None else np.atleast_2d(np.asarray(E, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.E.shape[0] != n:
            raise ValueError("inconsistent linear system dimensions")
        self.state_dim = n
        self.input_dim = self.B.shape[1]
        self.noise_dim = self.E.shape[1]

    @classmethod
    def integrator(cls):
        """Scalar ``x' = x + u + w``."""
        return cls([[1.0]], [[1.0]])

    def step(self, x, u, w):
        out = []
        for r in range(self.state_dim):
            terms = []
            for M, v in ((self.A, x), (self.B, u), (self.E, w)):
                for c, coef in enumerate(M[r].tolist()):
                    if coef == 1.0:
                        terms.append(v[c])
                    elif coef != 0.0:
                        terms.append(coef * v[c])
            acc = terms[0] if terms else 0.0
            for term in terms[1:]:
                acc = acc + term
            out.append(acc)
        return out

    def __repr__(self):
        return f"LinearSystem(A={self.A.tolist()}, B={self.B.tolist()}, E={self.E.tolist()})"


@dataclass
class Trajectory:
    """States ``x_0 .. x_T`` as a ``(T+1, n)`` array."""

    states: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _check_dims(model: SystemModel, x0, u, w):
    if len(x0) != model.state_dim:
        raise ValueError(f"initial state has {len(x0)} entries, model expects {model.state_dim}")
    if len(u) != len(w):
        raise ValueError(f"input horizon {len(u)} does not match disturbance horizon {len(w)}")
    for t, (ut, wt) in enumerate(zip(u, w)):
        if len(ut) != model.input_dim:
            raise ValueError(f"u[{t}] has {len(ut)} entries, model expects {model.input_dim}")
        if len(wt) != model.noise_dim:
            raise ValueError(f"w[{t}] has {len(wt)} entries, model expects {model.noise_dim}")


def rollout(model: SystemModel, x0, u, w) -> Trajectory:
    """Simulate ``len(u)`` steps from ``x0`` on plain floats.

    ``u`` and ``w`` are ``(T, n_u)`` and ``(T, n_w)`` array-likes.
    """
    u = np.asarray(u, dtype=float).reshape(-1, model.input_dim)
    w = np.asarray(w, dtype=float).reshape(-1, model.noise_dim)
    _check_dims(model, x0, u, w)
    x = [float(v) for v in x0]
    states = [x]
    for t in range(len(u)):
        x = [float(v) for v in model.step(x, u[t].tolist(), w[t].tolist())]
        if not all(math.isfinite(v) for v in x):
            raise RolloutError(t + 1)
        states.append(x)
    return Trajectory(np.array(states, dtype=float).reshape(len(states), model.state_dim))


def record_rollout(model: SystemModel, x0, u_nodes, w, horizon: int | None = None) -> list[list]:
    """Tape-recorded rollout; ``u_nodes`` is a list of per-step node lists.

    Only the first ``horizon`` steps are simulated (all of them by default).
    Returns the list of states, each a list of nodes or floats.
    """
    T = len(u_nodes) if horizon is None else horizon
    w = np.asarray(w, dtype=float).reshape(-1, model.noise_dim)
    if T > len(u_nodes) or T > len(w):
        raise ValueError(f"horizon {T} exceeds available inputs ({len(u_nodes)}) or disturbances ({len(w)})")
    x = [float(v) for v in x0]
    if len(x) != model.state_dim:
        raise ValueError(f"initial state has {len(x)} entries, model expects {model.state_dim}")
    states = [x]
    for t in range(T):
        x = model.step(x, u_nodes[t], w[t].tolist())
        states.append(x)
    return states


@dataclass(frozen=True)
class Uniform:
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if not self.low <= self.high:
            raise ValueError(f"uniform bounds out of order: {self.low} > {self.high}")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.low == self.high:
            return np.full(shape, self.low, dtype=float)
        return rng.uniform(self.low, self.high, size=shape)

    def contains(self, values) -> bool:
        values = np.asarray(values)
        return bool(np.all((values >= self.low) & (values <= self.high)))

    def to_dict(self) -> dict:
        return {"kind": "uniform", "low": self.low, "high": self.high}


_DISTRIBUTIONS = {"uniform": Uniform}


def parse_distribution(spec) -> Uniform:
    """Build a distribution from ``{"kind": ..., **params}``."""
    if isinstance(spec, Uniform):
        return spec
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"distribution must be a mapping with a 'kind' key, got {spec!r}")
    params = dict(spec)
    kind = params.pop("kind")
    try:
        cls = _DISTRIBUTIONS[kind]
    except KeyError:
        raise ValueError(f"unknown distribution {kind!r}; known: {sorted(_DISTRIBUTIONS)}") from None
    return cls(**{k: float(v) for k, v in params.items()})


def make_rng(seed, *stream: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and an optional substream key.

    Substream ``(a, b, ...)`` is ``SeedSequence(seed, spawn_key=(a, b, ...))``,
    i.e. the same child :meth:`SeedSequence.spawn` would produce, so
    substreams are independent of one another and of how many are used.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(stream))))


@dataclass
class DisturbanceBatch:
    """``count`` disturbance trajectories as an ``(I, T, n_w)`` array."""

    samples: np.ndarray
    seed: object = None
    dist: Uniform = field(default_factory=Uniform)

    def __len__(self):
        return len(self.samples)

    @property
    def horizon(self) -> int:
        return self.samples.shape[1]


def sample_disturbances(rng_or_seed, count: int, horizon: int, dist=Uniform(), noise_dim: int = 1) -> DisturbanceBatch:
    """Draw i.i.d. entries, sample-major, so smaller batches are prefixes of larger ones."""
    if count < 1 or horizon < 1 or noise_dim < 1:
        raise ValueError("count, horizon and noise_dim must all be >= 1")
    dist = parse_distribution(dist)
    if isinstance(rng_or_seed, np.random.Generator):
        rng, seed = rng_or_seed, None
    else:
        rng, seed = make_rng(rng_or_seed), rng_or_seed
    return DisturbanceBatch(dist.sample(rng, (count, horizon, noise_dim)), seed, dist)
