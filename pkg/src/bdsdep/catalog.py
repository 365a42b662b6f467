"""Ready-to-solve problems pairing catalog drivers with forward dynamics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .backward import BackwardConfig
from .drivers import DriverSpec, TerminalSpec, builtin_driver
from .forward import ForwardModel

CATALOG_NAMES = ("zero", "linear-scalar", "dissipative-sqrtlog", "jump-coupled")


@dataclass(frozen=True)
class Problem:
    """A solvable backward problem: forward model, driver, terminal data."""

    name: str
    model: ForwardModel
    spec: DriverSpec
    terminal: TerminalSpec
    analytic: Optional[Callable[[float], float]] = None
    default_cfg: BackwardConfig = BackwardConfig()


def _zeros_m(t, x):
    return np.zeros_like(x)


def _unit_sigma(t, x):
    return np.ones(x.shape + (1,))


def _no_jump(t, x, z):
    return np.zeros_like(x)


def _brownian_model(horizon: float = 1.0) -> ForwardModel:
    return ForwardModel(
        m=1, d=1, b=_zeros_m, sigma=_unit_sigma, h=_no_jump, x0=(0.0,)
    )


def _ou_model() -> ForwardModel:
    return ForwardModel(
        m=1,
        d=1,
        b=lambda t, x: -x,
        sigma=_unit_sigma,
        h=_no_jump,
        x0=(0.0,),
    )


def _jump_model() -> ForwardModel:
    return ForwardModel(
        m=1,
        d=1,
        b=lambda t, x: -0.5 * x,
        sigma=lambda t, x: 0.5 * np.ones(x.shape + (1,)),
        h=lambda t, x, z: 0.2 * z * np.ones_like(x),
        x0=(0.5,),
    )


def catalog_problem(name: str, horizon: float = 1.0) -> Problem:
    """Assemble a named catalog problem with sensible solver defaults."""
    spec, terminal, analytic = builtin_driver(name, horizon)
    if name == "zero":
        model = _brownian_model(horizon)
        cfg = BackwardConfig(inner_paths=500, basis_degree=1, steps=20)
    elif name == "linear-scalar":
        model = _brownian_model(horizon)
        cfg = BackwardConfig(inner_paths=2000, basis_degree=1, steps=50)
    elif name == "dissipative-sqrtlog":
        model = _ou_model()
        cfg = BackwardConfig(
            inner_paths=2000, basis_degree=2, steps=40, mollify_order=8
        )
    elif name == "jump-coupled":
        model = _jump_model()
        cfg = BackwardConfig(inner_paths=2000, basis_degree=2, steps=40)
    else:
        raise KeyError(f"unknown catalog problem {name!r}")
    return Problem(
        name=name,
        model=model,
        spec=spec,
        terminal=terminal,
        analytic=analytic,
        default_cfg=cfg,
    )
