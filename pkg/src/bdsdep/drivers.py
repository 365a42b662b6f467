"""Coefficient model for the backward equation and sampling-based checkers.

A driver bundles the coefficient functions (f1, f2, g) of the backward
equation together with the parameters of the standing assumptions they are
supposed to satisfy: the growth envelope ``mu_t`` (time-dependent, with
``mu_bar`` its squared integral over the horizon), the monotonicity
constant ``mu``, and the concave continuity modulus ``rho``.  The checkers
here do not prove the assumptions; they try to falsify them by sampling,
mixing broad and heavy-tailed draws with near-duplicate pairs because the
modulus condition only bites near coincident points.

Coefficient call convention: functions receive a scalar time ``t`` and
batched state arrays with a leading sample axis, ``p`` of shape (M, n),
``q`` of shape (M, n, d), ``k`` of shape (M, n, r), and return (M, n)
(or (M, n, l) for g).  State-dependent drivers additionally receive the
forward state ``x`` of shape (M, m) right after ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EvaluationError
from .noise import MarkSpace

U_STAR = math.exp(-1.0)


@dataclass(frozen=True)
class ConcaveModulus:
    """Nondecreasing concave modulus with rho(0) = 0 and divergent 1/rho.

    ``linear``: rho(u) = slope * u.
    ``log-modulus``: rho(u) = u * log(1/u) on (0, e**-1], continued as the
    constant e**-1 above (value and slope match at the junction).
    """

    kind: str
    slope: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "log-modulus"):
            raise ValueError(f"unknown modulus kind {self.kind!r}")
        if self.kind == "linear" and self.slope <= 0:
            raise ValueError("linear modulus needs a positive slope")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "linear":
            return self.slope * u
        out = np.full_like(u, U_STAR)
        small = u <= U_STAR
        safe = np.where(u > 0, u, 1.0)
        out = np.where(small, -u * np.log(safe), out)
        return np.where(u <= 0, 0.0, out)


Coefficient = Callable[..., np.ndarray]


@dataclass(frozen=True)
class DriverSpec:
    """Coefficients of the backward equation plus assumption parameters.

    ``f1`` is the (possibly non-Lipschitz) monotone part, ``f2`` the
    Lipschitz part, ``g`` the backward-integral coefficient.  ``horizon``
    is the time interval length the growth envelope is integrated over;
    ``takes_state`` selects the (t, x, p, q, k) call signature used by the
    probabilistic-representation problems.
    """

    n: int
    d: int
    l: int
    marks: MarkSpace
    f1: Coefficient
    f2: Coefficient
    g: Coefficient
    mu_t: Callable[[float], float]
    mu_bar: float
    mu: float
    rho: ConcaveModulus
    horizon: float = 1.0
    takes_state: bool = False
    state_dim: Optional[int] = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("monotonicity constant mu must be positive")
        if not np.isfinite(self.mu_bar) or self.mu_bar < 0:
            raise ValueError("mu_bar must be finite and nonnegative")

    def _args(self, t, x):
        return (t, x) if self.takes_state else (t,)

    def eval_f1(self, t, p, q, k, x=None):
        return np.asarray(self.f1(*self._args(t, x), p, q, k), dtype=float)

    def eval_f2(self, t, p, q, k, x=None):
        return np.asarray(self.f2(*self._args(t, x), p, q, k), dtype=float)

    def eval_f(self, t, p, q, k, x=None):
        return self.eval_f1(t, p, q, k, x) + self.eval_f2(t, p, q, k, x)

    def eval_g(self, t, p, q, k, x=None):
        return np.asarray(self.g(*self._args(t, x), p, q, k), dtype=float)


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal condition evaluated on the stopped forward state.

    ``xi(x_tau, tau_times)`` receives the forward state at the (capped)
    exit index, shape (M, m), and the exit times, shape (M,), and returns
    terminal values of shape (M, n).  Square integrability is sampled and
    reported, never assumed exactly.
    """

    xi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n: int = 1

    def evaluate(self, x_tau: np.ndarray, tau_times: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.xi(x_tau, tau_times), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape != (x_tau.shape[0], self.n):
            raise ValueError(
                f"terminal returned shape {vals.shape}, expected ({x_tau.shape[0]}, {self.n})"
            )
        return vals


def lambda_norm(k: np.ndarray, marks: MarkSpace) -> np.ndarray:
    """Intensity-weighted norm of mark functions, batched over axis 0.

    ``k`` has shape (M, n, r); returns sqrt(sum_j weights[j] * |k_j|^2) of
    shape (M,).
    """
    lam = marks.weight_array
    return np.sqrt(np.einsum("mnr,r->m", np.square(k), lam))


def _frob(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(a.reshape(a.shape[0], -1)), axis=1))


@dataclass
class CheckReport:
    """Outcome of a sampling checker run."""

    max_violation: float
    witnesses: list = field(default_factory=list)
    samples: int = 0

    @property
    def ok(self) -> bool:
        return self.max_violation <= 1.0 + 1e-12


def _sample_cloud(rng, count, spec):
    """Mixed sampler: Gaussian bulk, uniform box, heavy tails."""
    n, d, r = spec.n, spec.d, spec.marks.r
    n_gauss = count // 2
    n_unif = count // 4
    n_heavy = count - n_gauss - n_unif

    def block(shape_tail):
        g = rng.standard_normal((n_gauss, *shape_tail)) * 2.0
        u = rng.uniform(-5.0, 5.0, (n_unif, *shape_tail))
        h = rng.standard_t(2.0, (n_heavy, *shape_tail)) * 3.0
        return np.concatenate([g, u, h], axis=0)

    p = block((n,))
    q = block((n, d))
    k = block((n, r))
    m = spec.state_dim if spec.state_dim is not None else n
    x = block((m,)) if spec.takes_state else None
    return p, q, k, x


def _check_finite(name, values, point):
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.isfinite(values).reshape(len(values), -1).all(axis=1)))
        witness = {"t": point["t"]}
        for key in ("p", "q", "k", "x"):
            val = point.get(key)
            if val is not None:
                witness[key] = np.asarray(val)[bad].copy()
        raise EvaluationError(f"{name} returned a non-finite value", witness=witness)


def _record(report, ratios, limit, t, p, cap=8):
    bad = np.nonzero(ratios > limit)[0]
    for idx in bad[: max(0, cap - len(report.witnesses))]:
        report.witnesses.append({"t": t, "p": p[idx].copy(), "ratio": float(ratios[idx])})
    m = float(np.max(ratios)) if ratios.size else 0.0
    report.max_violation = max(report.max_violation, m)


def check_growth(spec: DriverSpec, samples: int = 10_000, seed: int = 0) -> CheckReport:
    """Hunt for violations of the growth envelope.

    Checks ``|f1| <= mu(t)``, ``|f2| <= mu(t) (1 + |p| + |q| + ||k||)`` and
    ``|g| <= mu(t)`` at sampled points; reports the worst observed ratio of
    coefficient size to its bound.  A ratio at most ``1 + 1e-12`` means no
    violation was found at this sample budget.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    report = CheckReport(max_violation=0.0, samples=samples)
    chunks = 16
    per = max(1, samples // chunks)
    for _ in range(chunks):
        t = float(rng.uniform(0.0, spec.horizon))
        mu_t = float(spec.mu_t(t))
        p, q, k, x = _sample_cloud(rng, per, spec)
        point = {"t": t, "p": p, "q": q, "k": k, "x": x}
        f1 = spec.eval_f1(t, p, q, k, x)
        f2 = spec.eval_f2(t, p, q, k, x)
        g = spec.eval_g(t, p, q, k, x)
        for name, vals in (("f1", f1), ("f2", f2), ("g", g)):
            _check_finite(name, vals, point)
        growth = 1.0 + _frob(p) + _frob(q) + lambda_norm(k, spec.marks)
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = np.where(_frob(f1) > 0, _frob(f1) / mu_t, 0.0)
            r2 = np.where(_frob(f2) > 0, _frob(f2) / (mu_t * growth), 0.0)
            r3 = np.where(_frob(g) > 0, _frob(g) / mu_t, 0.0)
        for ratios in (r1, r2, r3):
            _record(report, ratios, 1.0 + 1e-12, t, p)
    return report


def _paired_cloud(rng, count, spec, vary):
    """Sample point pairs; ``vary`` names which arguments differ."""
    p1, q1, k1, x = _sample_cloud(rng, count, spec)
    scales = 10.0 ** rng.uniform(-8.0, 0.5, (count, 1))

    def perturb(a, on):
        if not on:
            return a.copy()
        direction = rng.standard_normal(a.shape)
        flat = direction.reshape(count, -1)
        norms = np.linalg.norm(flat, axis=1, keepdims=True)
        flat /= np.where(norms > 0, norms, 1.0)
        return a + scales.reshape((count,) + (1,) * (a.ndim - 1)) * direction

    p2 = perturb(p1, "p" in vary)
    q2 = perturb(q1, "q" in vary)
    k2 = perturb(k1, "k" in vary)
    return (p1, q1, k1), (p2, q2, k2), x


def check_monotone(spec: DriverSpec, samples: int = 10_000, seed: int = 0) -> CheckReport:
    """Hunt for violations of the monotonicity and Lipschitz conditions.

    Tests, on sampled pairs, the modulus-controlled monotonicity of f1, the
    Lipschitz continuity of f1 in the mark argument alone, the joint
    Lipschitz continuity of f2, and the squared bound on g increments.
    Pair construction ranges from O(1) separations down to 1e-8 so the
    modulus regime near coincident points is actually probed.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    report = CheckReport(max_violation=0.0, samples=samples)
    chunks = 16
    per = max(1, samples // chunks)
    mu = spec.mu
    for c in range(chunks):
        t = float(rng.uniform(0.0, spec.horizon))
        vary = ("p", "q", "k") if c % 4 else ("p",)
        (p1, q1, k1), (p2, q2, k2), x = _paired_cloud(rng, per, spec, vary)
        point = {"t": t, "p": p1, "q": q1, "k": k1, "x": x}

        dp = _frob(p1 - p2)
        dq = _frob(q1 - q2)
        dk = lambda_norm(k1 - k2, spec.marks)

        f1a = spec.eval_f1(t, p1, q1, k1, x)
        f1b = spec.eval_f1(t, p2, q2, k2, x)
        _check_finite("f1", f1a, point)
        _check_finite("f1", f1b, point)
        inner = np.einsum("mn,mn->m", p1 - p2, f1a - f1b)
        denom = mu * (np.asarray(spec.rho(dp**2)) + dp * (dq + dk))
        with np.errstate(divide="ignore", invalid="ignore"):
            r_mono = np.where(denom > 0, inner / denom, np.where(inner > 0, np.inf, 0.0))
        _record(report, r_mono, 1.0 + 1e-12, t, p1)

        # f1 Lipschitz in the mark argument only (p, q held fixed).
        f1k = spec.eval_f1(t, p1, q1, k2, x)
        _check_finite("f1", f1k, point)
        num = _frob(f1a - f1k)
        dk_only = lambda_norm(k1 - k2, spec.marks)
        with np.errstate(divide="ignore", invalid="ignore"):
            r_k = np.where(dk_only > 0, num / (mu * dk_only), np.where(num > 0, np.inf, 0.0))
        _record(report, r_k, 1.0 + 1e-12, t, p1)

        f2a = spec.eval_f2(t, p1, q1, k1, x)
        f2b = spec.eval_f2(t, p2, q2, k2, x)
        _check_finite("f2", f2a, point)
        _check_finite("f2", f2b, point)
        num = _frob(f2a - f2b)
        denom = mu * (dp + dq + dk)
        with np.errstate(divide="ignore", invalid="ignore"):
            r_f2 = np.where(denom > 0, num / denom, np.where(num > 0, np.inf, 0.0))
        _record(report, r_f2, 1.0 + 1e-12, t, p1)

        ga = spec.eval_g(t, p1, q1, k1, x)
        gb = spec.eval_g(t, p2, q2, k2, x)
        _check_finite("g", ga, point)
        _check_finite("g", gb, point)
        num = _frob(ga - gb) ** 2
        denom = mu * (dp**2 + dp * (dq + dk))
        with np.errstate(divide="ignore", invalid="ignore"):
            r_g = np.where(denom > 0, num / denom, np.where(num > 0, np.inf, 0.0))
        _record(report, r_g, 1.0 + 1e-12, t, p1)
    return report


# --- builtin catalog ---------------------------------------------------------

_DEFAULT_MARKS = MarkSpace(marks=(1.0,), weights=(0.5,))
_JUMP_MARKS = MarkSpace(marks=(-0.5, 1.0), weights=(1.0, 0.5))


def _zeros_like_p(p, l=None):
    if l is None:
        return np.zeros_like(p)
    return np.zeros(p.shape + (l,))


def _saturating_log(v):
    """v * log(1/v) on [0, e**-1], constant e**-1 beyond; vectorized."""
    v = np.asarray(v, dtype=float)
    safe = np.where(v > 0, np.minimum(v, U_STAR), 1.0)
    out = np.where(v > 0, -safe * np.log(safe), 0.0)
    return np.where(v > U_STAR, U_STAR, out)


def builtin_driver(name: str, horizon: float = 1.0):
    """Catalog of assumption-compliant drivers with terminal conditions.

    Returns ``(spec, terminal, analytic)`` where ``analytic`` maps a grid
    time to the exact scalar solution when one exists, else ``None``.
    Names: ``zero``, ``linear-scalar``, ``dissipative-sqrtlog``,
    ``jump-coupled``.
    """
    T = float(horizon)
    if name == "zero":
        c = 1.0
        spec = DriverSpec(
            n=1, d=1, l=1, marks=_DEFAULT_MARKS,
            f1=lambda t, p, q, k: _zeros_like_p(p),
            f2=lambda t, p, q, k: _zeros_like_p(p),
            g=lambda t, p, q, k: _zeros_like_p(p, 1),
            mu_t=lambda t: 0.0,
            mu_bar=0.0,
            mu=1.0,
            rho=ConcaveModulus("linear", 1.0),
            horizon=T,
        )
        terminal = TerminalSpec(xi=lambda x, tau: np.full((x.shape[0], 1), c), n=1)
        return spec, terminal, (lambda t: c)

    if name == "linear-scalar":
        a, c = 1.0, 1.0
        spec = DriverSpec(
            n=1, d=1, l=1, marks=_DEFAULT_MARKS,
            f1=lambda t, p, q, k: _zeros_like_p(p),
            f2=lambda t, p, q, k: a * p,
            g=lambda t, p, q, k: _zeros_like_p(p, 1),
            mu_t=lambda t: max(a, 1.0),
            mu_bar=max(a, 1.0) ** 2 * T,
            mu=max(a, 1.0),
            rho=ConcaveModulus("linear", 1.0),
            horizon=T,
        )
        terminal = TerminalSpec(xi=lambda x, tau: np.full((x.shape[0], 1), c), n=1)
        return spec, terminal, (lambda t: c * math.exp(a * (T - t)))

    if name == "dissipative-sqrtlog":
        gamma = 0.25

        def f1(t, p, q, k):
            mag = np.abs(p)
            with np.errstate(divide="ignore", invalid="ignore"):
                unit = np.where(mag > 0, p / np.where(mag > 0, mag, 1.0), 0.0)
            return -unit * _saturating_log(mag)

        spec = DriverSpec(
            n=1, d=1, l=1, marks=_DEFAULT_MARKS,
            f1=f1,
            f2=lambda t, p, q, k: _zeros_like_p(p),
            g=lambda t, p, q, k: gamma * np.tanh(p)[:, :, None],
            mu_t=lambda t: 1.0,
            mu_bar=T,
            mu=1.0,
            rho=ConcaveModulus("log-modulus"),
            horizon=T,
        )
        terminal = TerminalSpec(xi=lambda x, tau: np.tanh(x[:, :1]), n=1)
        return spec, terminal, None

    if name == "jump-coupled":
        a, beta = 0.5, 0.3
        lam = _JUMP_MARKS.weight_array

        def f2(t, p, q, k):
            return a * p + beta * np.einsum("mnr,r->mn", k, lam)

        spec = DriverSpec(
            n=1, d=1, l=1, marks=_JUMP_MARKS,
            f1=lambda t, p, q, k: _zeros_like_p(p),
            f2=f2,
            g=lambda t, p, q, k: _zeros_like_p(p, 1),
            mu_t=lambda t: 1.0,
            mu_bar=T,
            mu=1.0,
            rho=ConcaveModulus("linear", 1.0),
            horizon=T,
        )
        terminal = TerminalSpec(xi=lambda x, tau: x[:, :1], n=1)
        return spec, terminal, None

    raise KeyError(f"unknown builtin driver {name!r}")
