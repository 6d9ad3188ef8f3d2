"""Reading and writing run artifacts.

Floats are written with ``repr``, the shortest decimal string that parses
back to the same double (at most 17 significant digits), so a file written
and read back gives bit-identical values and reruns give identical bytes.

CSV layouts:

``u.csv``      ``t,u`` (or ``t,u0,u1,..`` for several inputs), one row per step ``0..T-1``
``traj.csv``   ``t,x,y`` for two states (``t,x`` for one, ``t,x0,x1,..`` otherwise), rows ``0..T``
``phase.csv``  ``label,x,y``: an ``initial`` row, a ``target`` row, then ``path`` rows
"""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

from .dynamics import Trajectory
from .objective import ControlSequence

__all__ = [
    "ArtifactError",
    "RunLock",
    "atomic_write",
    "write_json",
    "controls_csv",
    "read_controls",
    "trajectory_csv",
    "phase_csv",
]


class ArtifactError(ValueError):
    """Malformed artifact file."""


def _num(v) -> str:
    return repr(float(v))


def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _table(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _state_names(n: int) -> list[str]:
    if n == 1:
        return ["x"]
    if n == 2:
        return ["x", "y"]
    return [f"x{k}" for k in range(n)]


def controls_csv(u: ControlSequence) -> str:
    names = ["u"] if u.input_dim == 1 else [f"u{k}" for k in range(u.input_dim)]
    return _table(["t", *names], ([t, *map(_num, row)] for t, row in enumerate(u.values)))


def read_controls(path: Path) -> ControlSequence:
    """Parse a file written by :func:`controls_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "t" or len(rows[0]) < 2:
        raise ArtifactError(f"{path}: header must start with 't' followed by input columns")
    width = len(rows[0])
    values = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise ArtifactError(f"{path}: line {n} has {len(row)} fields, expected {width}")
        try:
            t = int(row[0])
            values.append([float(v) for v in row[1:]])
        except ValueError:
            raise ArtifactError(f"{path}: line {n} is not numeric") from None
        if t != n - 2:
            raise ArtifactError(f"{path}: line {n} has t={t}, expected {n - 2}")
    if not values:
        raise ArtifactError(f"{path}: no data rows")
    try:
        return ControlSequence(np.array(values), input_dim=width - 1)
    except ValueError as exc:
        raise ArtifactError(f"{path}: {exc}") from None


def trajectory_csv(traj: Trajectory) -> str:
    states = traj.states
    return _table(["t", *_state_names(states.shape[1])], ([t, *map(_num, row)] for t, row in enumerate(states)))


def phase_csv(traj: Trajectory, x0, target) -> str:
    """Phase-plane data for a two-state system."""
    if traj.states.shape[1] != 2:
        raise ValueError("phase-plane output needs a two-dimensional state")
    rows = [["initial", *map(_num, x0)], ["target", *map(_num, target)]]
    rows += [["path", *map(_num, row)] for row in traj.states]
    return _table(["label", "x", "y"], rows)


class RunLock:
    """Exclusive lock on an output directory, held for the lifetime of a run."""

    NAME = ".lock"

    def __init__(self, directory: Path):
        self.path = Path(directory) / self.NAME
        self._held = False

    def __enter__(self) -> RunLock:
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"{self.path.parent} is in use by another run (remove {self.path} if stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        self._held = True
        return self

    def __exit__(self, *exc) -> None:
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False
