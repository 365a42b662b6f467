"""Seed-derived generation of the three independent noise sources.

Every stochastic object in the package is driven by exactly three sources
sampled on a shared uniform grid: a forward Brownian motion (dimension d),
a backward Brownian motion (dimension l, consumed by the backward integral
but stored forward in time), and a finite-activity Poisson random measure
on a finite mark set.  Generation is counter-based (Philox) and keyed by
``(seed, stream_id, block)`` so that identical inputs give bit-identical
output and distinct blocks never overlap, regardless of call order.

Block assignment: 0 = forward Brownian increments, 1 = backward Brownian
increments, 2 = Poisson counts, 3 is reserved for solver-internal draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidGridError

_BLOCK_DW = 0
_BLOCK_DB = 1
_BLOCK_COUNTS = 2
_BLOCK_SOLVER = 3

_MAX_STREAM = 1 << 56


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[t0, t0 + horizon]`` into ``steps`` intervals."""

    t0: float
    horizon: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidGridError(f"grid needs at least one step, got {self.steps}")
        if not np.isfinite(self.t0) or not np.isfinite(self.horizon):
            raise InvalidGridError("grid endpoints must be finite")
        if self.horizon <= self.t0:
            raise InvalidGridError(
                f"horizon {self.horizon} must exceed start time {self.t0}"
            )

    @property
    def dt(self) -> float:
        return (self.horizon - self.t0) / self.steps

    @property
    def times(self) -> np.ndarray:
        """Grid times, length ``steps + 1``, strictly increasing."""
        return np.linspace(self.t0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class MarkSpace:
    """Finite mark set with one positive intensity per mark.

    ``marks[j]`` is the value passed to jump coefficients, ``weights[j]`` the
    intensity of mark j; ``total`` is the (finite) total jump intensity.
    """

    marks: tuple
    weights: tuple

    def __post_init__(self):
        marks = tuple(float(z) for z in self.marks)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "weights", weights)
        if len(marks) < 1:
            raise ValueError("mark set must be nonempty")
        if len(marks) != len(weights):
            raise ValueError("marks and weights must have equal length")
        if any(w <= 0 or not np.isfinite(w) for w in weights):
            raise ValueError("all mark intensities must be strictly positive and finite")

    @property
    def r(self) -> int:
        return len(self.marks)

    @property
    def total(self) -> float:
        return float(sum(self.weights))

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def mark_array(self) -> np.ndarray:
        return np.asarray(self.marks, dtype=float)


@dataclass(frozen=True)
class NoiseBundle:
    """One joint realization of the three sources on a grid.

    ``dW`` has shape (steps, d), ``dB`` shape (steps, l) and ``jump_counts``
    shape (steps, r).  Arrays are read-only after creation so bundles can be
    shared between threads.
    """

    grid: TimeGrid
    marks: MarkSpace
    dW: np.ndarray
    dB: np.ndarray
    jump_counts: np.ndarray
    seed: int = 0
    stream_id: int = 0


@dataclass(frozen=True)
class NoiseBatch:
    """Stacked forward-source realizations for a block of Monte Carlo paths.

    Holds only the sources consumed path-by-path (forward Brownian increments
    and jump counts); the backward Brownian slice is shared across paths and
    lives in a single :class:`NoiseBundle`.
    """

    grid: TimeGrid
    marks: MarkSpace
    dW: np.ndarray          # (n_paths, steps, d)
    jump_counts: np.ndarray  # (n_paths, steps, r)

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]


def _generator(seed: int, stream_id: int, block: int) -> np.random.Generator:
    seed = int(seed) % (1 << 64)
    stream_id = int(stream_id)
    if not 0 <= stream_id < _MAX_STREAM:
        raise ValueError(f"stream_id must lie in [0, 2**56), got {stream_id}")
    key = np.array([seed, (stream_id << 8) | block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def generate_bundle(
    grid: TimeGrid,
    d: int,
    l: int,
    marks: MarkSpace,
    seed: int,
    stream_id: int = 0,
) -> NoiseBundle:
    """Generate one noise realization from disjoint counter substreams.

    Parameters
    ----------
    grid:
        Time grid; each increment covers one interval of width ``grid.dt``.
    d, l:
        Dimensions of the forward and backward Brownian motions (``>= 0``).
    marks:
        Finite mark set; counts for mark j are Poisson with mean
        ``weights[j] * dt`` per interval.
    seed, stream_id:
        Identify the realization.  Identical arguments give bit-identical
        bundles; distinct ``stream_id`` values give independent bundles.
    """
    if d < 0 or l < 0:
        raise ValueError("noise dimensions must be nonnegative")
    steps, dt = grid.steps, grid.dt
    sqrt_dt = np.sqrt(dt)
    dw = _generator(seed, stream_id, _BLOCK_DW).standard_normal((steps, d)) * sqrt_dt
    db = _generator(seed, stream_id, _BLOCK_DB).standard_normal((steps, l)) * sqrt_dt
    lam = marks.weight_array
    counts = _generator(seed, stream_id, _BLOCK_COUNTS).poisson(
        lam * dt, size=(steps, marks.r)
    )
    return NoiseBundle(
        grid=grid,
        marks=marks,
        dW=_freeze(dw),
        dB=_freeze(db),
        jump_counts=_freeze(counts.astype(float)),
        seed=int(seed),
        stream_id=int(stream_id),
    )


def generate_batch(
    grid: TimeGrid,
    d: int,
    marks: MarkSpace,
    n_paths: int,
    seed: int,
    stream_id: int = 0,
) -> NoiseBatch:
    """Generate the forward sources for ``n_paths`` Monte Carlo paths at once.

    Uses the same ``(seed, stream_id, block)`` keying as
    :func:`generate_bundle`; the blocks it consumes (forward Brownian, jump
    counts) are disjoint from the backward-Brownian block, so an outer
    bundle and an inner batch may share a stream id without overlap.
    """
    if n_paths < 1:
        raise ValueError("batch needs at least one path")
    if d < 0:
        raise ValueError("noise dimensions must be nonnegative")
    steps, dt = grid.steps, grid.dt
    dw = _generator(seed, stream_id, _BLOCK_DW).standard_normal(
        (n_paths, steps, d)
    ) * np.sqrt(dt)
    lam = marks.weight_array
    counts = _generator(seed, stream_id, _BLOCK_COUNTS).poisson(
        lam * dt, size=(n_paths, steps, marks.r)
    )
    return NoiseBatch(
        grid=grid,
        marks=marks,
        dW=_freeze(dw),
        jump_counts=_freeze(counts.astype(float)),
    )


def solver_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Generator reserved for solver-internal draws (never noise blocks)."""
    return _generator(seed, stream_id, _BLOCK_SOLVER)


def compensated_increment(bundle: NoiseBundle, step: int, mark: int) -> float:
    """Compensated jump increment for one interval and one mark.

    Returns ``jump_counts[step, mark] - weights[mark] * dt``, whose running
    sum over steps is a martingale in expectation.
    """
    steps, r = bundle.jump_counts.shape
    if not 0 <= step < steps:
        raise IndexError(f"step {step} out of range [0, {steps})")
    if not 0 <= mark < r:
        raise IndexError(f"mark {mark} out of range [0, {r})")
    lam = bundle.marks.weights[mark]
    return float(bundle.jump_counts[step, mark] - lam * bundle.grid.dt)


def compensated_increments(counts: np.ndarray, marks: MarkSpace, dt: float) -> np.ndarray:
    """Vectorized compensation: ``counts - weights * dt`` on the last axis."""
    return counts - marks.weight_array * dt
