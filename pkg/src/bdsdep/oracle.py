"""Independent reference computations used as ground truth in tests.

Nothing here imports the solver or its noise layer; the nested Monte Carlo
estimator re-implements plain Euler stepping with its own generator so an
agreement between solver and oracle is evidence, not circularity.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import BlowUpError


def analytic_linear(a: float, c: float, horizon: float, t: float) -> float:
    """Exact value at time t for the scalar linear driver with constant
    terminal value c: c * exp(a * (horizon - t))."""
    return c * math.exp(a * (horizon - t))


def nested_ce(model, payoff, t, x, inner_samples: int = 1000, seed: int = 0, steps: int = 64):
    """Brute-force conditional expectation of ``payoff`` at the horizon.

    Restarts the forward dynamics at (t, x) with a private Euler loop and
    plain Monte Carlo; returns ``(estimate, stderr)``.
    """
    if inner_samples < 100:
        raise ValueError("inner_samples must be >= 100")
    rng = np.random.default_rng(seed)
    horizon = getattr(model, "horizon", None)
    if horizon is None:
        raise ValueError("model must carry a 'horizon' attribute for the oracle")
    span = horizon - t
    if span < 0:
        raise ValueError("start time past the horizon")
    xs = np.tile(np.atleast_1d(np.asarray(x, dtype=float)), (inner_samples, 1))
    if span > 0:
        dt = span / steps
        sq = math.sqrt(dt)
        lam = np.asarray(getattr(model, "weights", ()), dtype=float)
        zs = np.asarray(getattr(model, "marks", ()), dtype=float)
        for i in range(steps):
            ti = t + i * dt
            incr = np.asarray(model.b(ti, xs), dtype=float) * dt
            if model.d > 0:
                dw = rng.standard_normal((inner_samples, model.d)) * sq
                incr = incr + np.einsum(
                    "mij,mj->mi", np.asarray(model.sigma(ti, xs), dtype=float), dw
                )
            for j, z in enumerate(zs):
                counts = rng.poisson(lam[j] * dt, inner_samples)
                incr = incr + np.asarray(model.h(ti, xs, float(z)), dtype=float) * (
                    counts - lam[j] * dt
                )[:, None]
            xs = xs + incr
            if not np.all(np.isfinite(xs)):
                raise BlowUpError(f"oracle state non-finite at step {i + 1}", step=i + 1)
    vals = np.asarray(payoff(xs), dtype=float).reshape(inner_samples, -1)[:, 0]
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(inner_samples)) if span > 0 else 0.0
    return est, stderr


class OracleModel:
    """Minimal forward description consumed only by :func:`nested_ce`."""

    def __init__(self, b, sigma, h, d, horizon, marks=(), weights=()):
        self.b = b
        self.sigma = sigma
        self.h = h
        self.d = d
        self.horizon = horizon
        self.marks = tuple(marks)
        self.weights = tuple(weights)


def pide_reference(name: str, t: float, x, horizon: float = 1.0) -> float:
    """Closed-form reference values for the deterministic named problems.

    ``heat-quadratic``: squared terminal data under pure diffusion, value
    |x|^2 + (horizon - t).  ``jump-linear``: identity terminal data under
    compensated pure-jump dynamics, value x (the compensation cancels the
    jump drift for affine data).
    """
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    if name == "heat-quadratic":
        return float(np.dot(xv, xv) + (horizon - t))
    if name == "jump-linear":
        return float(xv[0])
    raise KeyError(f"unknown reference problem {name!r}")
