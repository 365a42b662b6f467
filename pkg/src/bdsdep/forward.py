"""Euler scheme for the forward jump diffusion and first-exit detection.

The state follows drift + diffusion + compensated-jump dynamics; exit from
the (axis-aligned box) domain is detected at grid times only, and the path
is frozen at the first state found outside.  When no exit occurs the exit
index equals ``steps``, i.e. the horizon convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError
from .noise import MarkSpace, NoiseBatch, NoiseBundle, TimeGrid, compensated_increments


@dataclass(frozen=True)
class Box:
    """Open axis-aligned box; membership is strict inequality per axis."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if len(lower) != len(upper) or any(a >= b for a, b in zip(lower, upper)):
            raise ValueError("box needs lower < upper per axis")

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Vectorized membership over the leading axis of ``x`` (M, m)."""
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((x > lo) & (x < hi), axis=-1)

    def scaled(self, factor: float) -> "Box":
        """Box shrunk (or grown) about its center."""
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo) * factor
        return Box(tuple(mid - half), tuple(mid + half))


@dataclass(frozen=True)
class ForwardModel:
    """Coefficients and geometry of the forward equation.

    ``b(t, x)`` returns (M, m), ``sigma(t, x)`` returns (M, m, d), and
    ``h(t, x, z)`` returns (M, m) for one scalar mark value z.  ``domain``
    of None means the whole space (no exit).
    """

    m: int
    d: int
    b: Callable[[float, np.ndarray], np.ndarray]
    sigma: Callable[[float, np.ndarray], np.ndarray]
    h: Callable[[float, np.ndarray, float], np.ndarray]
    x0: tuple
    domain: Optional[Box] = None
    t_start: float = 0.0

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        object.__setattr__(self, "x0", x0)
        if len(x0) != self.m:
            raise ValueError(f"x0 has dimension {len(x0)}, model has m={self.m}")
        if self.domain is not None and not bool(
            self.domain.contains(np.asarray(x0)[None, :])[0]
        ):
            raise ValueError("x0 must lie inside the bounded domain")


@dataclass(frozen=True)
class ForwardPath:
    """Single simulated trajectory with its discrete exit index."""

    grid: TimeGrid
    X: np.ndarray           # (steps+1, m)
    exit_index: int
    jump_log: np.ndarray    # (steps, r) applied jump counts


@dataclass(frozen=True)
class ForwardBatch:
    """Stacked trajectories sharing one grid."""

    grid: TimeGrid
    X: np.ndarray           # (M, steps+1, m)
    exit_index: np.ndarray  # (M,)
    marks: MarkSpace

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    def exit_states(self) -> np.ndarray:
        idx = self.exit_index
        return self.X[np.arange(self.n_paths), idx]

    def exit_times(self) -> np.ndarray:
        return self.grid.times[self.exit_index]


def simulate_forward_batch(model: ForwardModel, noise: NoiseBatch) -> ForwardBatch:
    """Euler step all paths of a noise batch through the forward dynamics.

    The jump integral uses compensated increments, so a state-independent
    jump coefficient contributes zero drift in expectation.  Paths freeze
    at their first grid state outside the domain.
    """
    grid = noise.grid
    steps, dt = grid.steps, grid.dt
    times = grid.times
    marks = noise.marks
    M = noise.n_paths
    m = model.m
    if noise.dW.shape[2] != model.d:
        raise ValueError(
            f"noise has d={noise.dW.shape[2]}, model expects d={model.d}"
        )
    comp = compensated_increments(noise.jump_counts, marks, dt)  # (M, steps, r)
    zvals = marks.mark_array

    X = np.empty((M, steps + 1, m))
    X[:, 0, :] = np.asarray(model.x0)
    exit_index = np.full(M, steps, dtype=int)
    alive = np.ones(M, dtype=bool)

    for i in range(steps):
        t = float(times[i])
        xi = X[:, i, :]
        drift = np.asarray(model.b(t, xi), dtype=float)
        diff = np.asarray(model.sigma(t, xi), dtype=float)
        incr = drift * dt
        if model.d > 0:
            incr = incr + np.einsum("mij,mj->mi", diff, noise.dW[:, i, :])
        for j, z in enumerate(zvals):
            incr = incr + np.asarray(model.h(t, xi, float(z)), dtype=float) * comp[
                :, i, j, None
            ]
        nxt = np.where(alive[:, None], xi + incr, xi)
        bad = ~np.isfinite(nxt).all(axis=1)
        if np.any(bad & alive):
            raise BlowUpError(
                f"forward state became non-finite at step {i + 1}", step=i + 1
            )
        X[:, i + 1, :] = nxt
        if model.domain is not None:
            leaving = alive & ~model.domain.contains(nxt)
            exit_index[leaving] = i + 1
            alive &= ~leaving
    return ForwardBatch(grid=grid, X=X, exit_index=exit_index, marks=marks)


def simulate_forward(model: ForwardModel, bundle: NoiseBundle) -> ForwardPath:
    """Single-path variant consuming one noise bundle."""
    batch = NoiseBatch(
        grid=bundle.grid,
        marks=bundle.marks,
        dW=bundle.dW[None, :, :],
        jump_counts=bundle.jump_counts[None, :, :],
    )
    out = simulate_forward_batch(model, batch)
    return ForwardPath(
        grid=bundle.grid,
        X=out.X[0],
        exit_index=int(out.exit_index[0]),
        jump_log=bundle.jump_counts,
    )


def exit_time(path: ForwardPath) -> float:
    """Grid time of the first state outside the domain; horizon if none."""
    return float(path.grid.times[path.exit_index])


def check_forward_lipschitz(
    model: ForwardModel, samples: int = 2000, seed: int = 0, scale: float = 2.0
) -> dict:
    """Sampled difference quotients of b, sigma, h in the state argument."""
    rng = np.random.default_rng(seed)
    t = float(model.t_start)
    x1 = rng.standard_normal((samples, model.m)) * scale + np.asarray(model.x0)
    eps = 10.0 ** rng.uniform(-6.0, 0.0, (samples, 1))
    direction = rng.standard_normal((samples, model.m))
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
    x2 = x1 + eps * direction
    dx = np.linalg.norm(x1 - x2, axis=1)

    def quot(f):
        va = np.asarray(f(t, x1), dtype=float).reshape(samples, -1)
        vb = np.asarray(f(t, x2), dtype=float).reshape(samples, -1)
        return float(np.max(np.linalg.norm(va - vb, axis=1) / dx))

    report = {"b": quot(model.b), "sigma": quot(model.sigma)}
    report["h"] = max(
        float(
            np.max(
                np.linalg.norm(
                    np.asarray(model.h(t, x1, z), dtype=float)
                    - np.asarray(model.h(t, x2, z), dtype=float),
                    axis=1,
                )
                / dx
            )
        )
        for z in (0.0, 1.0)
    )
    return report


def path_rows(path: ForwardPath, model: ForwardModel):
    """Rows (t, x components..., in_domain flag) for delimited export."""
    times = path.grid.times
    for i in range(path.grid.steps + 1):
        x = path.X[i]
        if model.domain is None:
            inside = True
        else:
            inside = bool(model.domain.contains(x[None, :])[0])
        yield (float(times[i]), *[float(v) for v in x], int(inside))
