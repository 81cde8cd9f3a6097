"""Fixed-step batched ODE integration of the latent state tables.

A mode's state table is a (U, J) matrix whose rows evolve independently
under that mode's dynamics net. ``roll_trajectories`` sweeps one table per
mode across the sorted timestamp grid, always starting the integration at
t = 0 where the encoder defines the initial state. Gradients flow through
the unrolled solver steps on the tape (discretize-then-optimize).

Timestamp lookups are exact: decoding at a time that was not part of the
grid is an error, never an interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .nets import ModeNetwork, decode, dynamics_step

SOLVERS = ("euler", "rk4")


class IntegrationError(RuntimeError):
    """Non-finite state encountered while integrating."""


class TrajectoryLookupError(LookupError):
    """Requested (index, timestamp) is not present in the rolled tables."""


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing timestamps plus the solver step size."""

    times: np.ndarray
    step: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("TimeGrid needs a non-empty 1-D time array")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("TimeGrid times must be strictly increasing")
        if not self.step > 0.0:
            raise ValueError("TimeGrid step must be positive")
        object.__setattr__(self, "times", times)

    @classmethod
    def from_times(cls, times, step: float | None = None) -> "TimeGrid":
        """Default step: span / (4 * T), where T is the timestamp count."""
        times = np.unique(np.asarray(times, dtype=np.float64))
        if step is None:
            span = times[-1] - times[0]
            if span <= 0.0:
                span = max(times[-1], 1.0)
            step = span / (4.0 * times.size)
        return cls(times, float(step))

    def position(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i >= self.times.size or self.times[i] != t:
            raise TrajectoryLookupError(f"timestamp {t} not on the grid")
        return i


def ode_solve(mode: ModeNetwork, table: Var, t_from: float, t_to: float,
              method: str, step: float, leaves: dict[str, Var],
              tape: Tape) -> Var:
    """Advance every row of a state table from t_from to t_to."""
    if method not in SOLVERS:
        raise ValueError(f"unknown solver {method!r}; choose from {SOLVERS}")
    if t_to < t_from:
        raise ValueError(f"backwards integration {t_from} -> {t_to}")
    if not step > 0.0:
        raise ValueError("step must be positive")
    if t_to == t_from:
        return table

    span = t_to - t_from
    n_steps = max(1, math.ceil(span / step - 1e-12))
    h = span / n_steps
    z = table
    t = t_from
    for _ in range(n_steps):
        if method == "euler":
            k1 = dynamics_step(mode, z, t, leaves, tape)
            z = ad.add(z, ad.scale(k1, h))
        else:
            k1 = dynamics_step(mode, z, t, leaves, tape)
            k2 = dynamics_step(mode, ad.add(z, ad.scale(k1, 0.5 * h)),
                               t + 0.5 * h, leaves, tape)
            k3 = dynamics_step(mode, ad.add(z, ad.scale(k2, 0.5 * h)),
                               t + 0.5 * h, leaves, tape)
            k4 = dynamics_step(mode, ad.add(z, ad.scale(k3, h)),
                               t + h, leaves, tape)
            incr = ad.add(ad.add(k1, ad.scale(ad.add(k2, k3), 2.0)), k4)
            z = ad.add(z, ad.scale(incr, h / 6.0))
        t += h
        if not np.all(np.isfinite(z.value)):
            raise IntegrationError(f"non-finite state at t={t:.6g} (mode {mode.mode})")
    return z


def roll_trajectories(modes: list[ModeNetwork], tables0: list[Var],
                      grid: TimeGrid, method: str, step: float,
                      leaves: dict[str, Var], tape: Tape) -> list[dict[float, Var]]:
    """Sweep each mode's initial table from t = 0 across the grid.

    Returns, per mode, a map timestamp -> state table. Modes are uncoupled,
    so solving them one after the other inside the single sweep is
    mathematically identical to one stacked block-diagonal solve.
    """
    rolled = []
    for mode, z0 in zip(modes, tables0):
        states: dict[float, Var] = {}
        z = z0
        prev = 0.0
        for t in grid.times:
            z = ode_solve(mode, z, prev, float(t), method, step, leaves, tape)
            states[float(t)] = z
            prev = float(t)
        rolled.append(states)
    return rolled


@dataclass
class GatherPlan:
    """Precomputed exact-lookup positions for a batch of observations."""

    index_positions: list[np.ndarray]
    time_positions: np.ndarray
    table_sizes: list[int] = field(default_factory=list)


def gather_g(modes: list[ModeNetwork], rolled: list[dict[float, Var]],
             grid: TimeGrid, plan: GatherPlan,
             leaves: dict[str, Var]) -> list[Var]:
    """Decode rolled states and pick one g-row per observation per mode.

    Stacks each mode's tables over the grid, decodes once, then gathers the
    (time, index) rows, giving a (N, R) matrix per mode on the tape.
    """
    out = []
    for k, mode in enumerate(modes):
        states = rolled[k]
        try:
            stacked = ad.concat_rows([states[float(t)] for t in grid.times])
        except KeyError as exc:
            raise TrajectoryLookupError(f"mode {k}: missing table for t={exc}") from exc
        u = stacked.value.shape[0] // grid.times.size
        upos = plan.index_positions[k]
        if np.any(upos < 0) or np.any(upos >= u):
            raise TrajectoryLookupError(f"mode {k}: index position out of range")
        g_all = decode(mode, stacked, leaves)
        rows = plan.time_positions * u + upos
        out.append(ad.gather_rows(g_all, rows))
    return out
