"""Two-level regression Monte Carlo solver for the backward equation.

One call solves the backward system along a single realization of the
backward Brownian motion (the outer level), using an inner cloud of
forward paths for the conditional-expectation regressions.  Stepping back
from the terminal index, each grid step computes

* the regressed conditional expectation of the next value given the
  current forward state (polynomial basis, ordinary least squares with a
  ridge fallback on rank deficiency),
* the Brownian and jump integrands from centered covariance regressions
  against the respective increments, and
* the current value as the fixed point of
  ``p -> E[next] + f(t, p, q, k) dt + g(t, p, q, k) dB``,
  iterated to tolerance (the iteration contracts when the driver Lipschitz
  scale times dt is below one, which is validated up front).

Paths are masked after their first exit from the domain: the value is
frozen at the terminal function of the exit state and the integrands are
exactly zero there.  Centering the covariance targets on the regressed
conditional expectation removes the spurious integrand noise a constant
value problem would otherwise produce, and makes the jump integrand exact
when no jump occurs in-sample.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .drivers import DriverSpec, TerminalSpec
from .errors import ConfigError, PicardDivergenceError, RegressionError
from .forward import ForwardModel, simulate_forward_batch
from .mollify import MollifierConfig, mollify_driver
from .noise import MarkSpace, NoiseBundle, TimeGrid, generate_batch, solver_rng


@dataclass(frozen=True)
class BackwardConfig:
    """Numeric controls of the backward solver.

    ``inner_paths`` is the forward Monte Carlo cloud size per backward
    realization and must be at least ten times the regression basis size.
    ``steps`` is used by runners that build their own grids; the solver
    itself takes the grid from the outer noise bundle.  ``picard_init``
    selects the fixed-point starting value: the regressed conditional
    expectation (``ce``), ``zeros``, or seeded ``random`` draws.
    """

    inner_paths: int = 2000
    basis_degree: int = 2
    max_total_degree: Optional[int] = None
    picard_tol: float = 1e-12
    picard_max_iter: int = 200
    picard_init: str = "ce"
    mollify_order: Optional[int] = None
    steps: int = 50
    outer_runs: int = 1
    quad_nodes: int = 24
    mc_fallback_samples: int = 20_000

    def __post_init__(self):
        if self.picard_tol <= 0:
            raise ConfigError("picard_tol must be positive")
        if self.picard_max_iter < 1:
            raise ConfigError("picard_max_iter must be >= 1")
        if self.picard_init not in ("ce", "zeros", "random"):
            raise ConfigError(f"unknown picard_init {self.picard_init!r}")
        if self.inner_paths < 1 or self.steps < 1:
            raise ConfigError("inner_paths and steps must be >= 1")


class PolynomialBasis:
    """Multivariate monomial basis of the forward state, intercept first."""

    def __init__(self, m: int, degree: int, max_total_degree: Optional[int] = None):
        if degree < 0:
            raise ConfigError("basis degree must be >= 0")
        cap = max_total_degree if max_total_degree is not None else degree
        self.exponents = [
            alpha
            for alpha in itertools.product(range(degree + 1), repeat=m)
            if sum(alpha) <= cap
        ]
        self.exponents.sort(key=lambda a: (sum(a), a))
        self.m = m

    @property
    def size(self) -> int:
        return len(self.exponents)

    def design(self, x: np.ndarray) -> np.ndarray:
        """Design matrix at states ``x`` (M, m), coordinates standardized.

        Per-coordinate affine standardization leaves the fitted values
        unchanged (the monomial span is affine invariant under the total
        degree cap) and keeps the normal equations well conditioned.
        """
        x = np.asarray(x, dtype=float)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        z = (x - mean) / std
        cols = [
            np.prod(
                np.stack([z[:, i] ** a for i, a in enumerate(alpha)], axis=0), axis=0
            )
            if any(alpha)
            else np.ones(len(x))
            for alpha in self.exponents
        ]
        return np.stack(cols, axis=1)


class StepRegression:
    """Least-squares fit reused against many targets at one grid step.

    Full-rank designs use the SVD projector; rank deficiency falls back to
    ridge with penalty ``1e-10 * trace(design' design)`` applied to every
    column except the intercept, so constants are still reproduced exactly.
    """

    def __init__(self, design: np.ndarray, step: int):
        if not np.all(np.isfinite(design)):
            raise RegressionError(f"non-finite design matrix at step {step}", step=step)
        self.design = design
        self.step = step
        rows, cols = design.shape
        u, s, _ = np.linalg.svd(design, full_matrices=False)
        tol = max(rows, cols) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        self.rank = int(np.sum(s > tol))
        self.full_rank = self.rank == cols
        if self.full_rank:
            self._u = u
        else:
            gram = design.T @ design
            penalty = 1e-10 * np.trace(gram)
            damping = np.ones(cols)
            damping[0] = 0.0  # intercept unpenalized
            self._mat = gram + penalty * np.diag(damping)

    def fitted(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values, one column per target column."""
        if not np.all(np.isfinite(targets)):
            raise RegressionError(
                f"non-finite regression target at step {self.step}", step=self.step
            )
        if self.full_rank:
            return self._u @ (self._u.T @ targets)
        try:
            beta = np.linalg.solve(self._mat, self.design.T @ targets)
        except np.linalg.LinAlgError as exc:
            raise RegressionError(
                f"ridge fallback failed at step {self.step}", step=self.step
            ) from exc
        return self.design @ beta


@dataclass
class PicardContext:
    """Frozen per-step data the fixed-point map closes over."""

    t: float
    dt: float
    ce: np.ndarray            # (M, n) regressed conditional expectation
    q: np.ndarray             # (M, n, d)
    k: np.ndarray             # (M, n, r)
    db: np.ndarray            # (l,)
    spec: DriverSpec
    x: Optional[np.ndarray] = None  # (M, m) forward states when state-dependent


def picard_step(p_prev: np.ndarray, ctx: PicardContext):
    """One application of the fixed-point map; returns (next, residual).

    Residual is the max norm of the update over inner paths; a driver that
    ignores its value arguments therefore reaches residual zero on the
    second application.
    """
    f_val = ctx.spec.eval_f(ctx.t, p_prev, ctx.q, ctx.k, ctx.x)
    p_next = ctx.ce + f_val * ctx.dt
    if ctx.db.size:
        g_val = ctx.spec.eval_g(ctx.t, p_prev, ctx.q, ctx.k, ctx.x)
        p_next = p_next + g_val @ ctx.db
    residual = float(np.max(np.abs(p_next - p_prev))) if p_prev.size else 0.0
    return p_next, residual


@dataclass
class SolveDiagnostics:
    picard_iterations: np.ndarray
    picard_residuals: np.ndarray
    mollify_order: Optional[int]
    mu_dt: float
    g_depends_on_marks: bool
    ridge_steps: list = field(default_factory=list)


@dataclass(frozen=True)
class BackwardSolution:
    """Per-path grid functions of the backward solution.

    ``P`` has shape (steps+1, M, n); ``Q`` and ``K`` have shapes
    (steps, M, n, d) and (steps, M, n, r) and are exactly zero on masked
    steps.  ``tau_index[m]`` is the first grid index at which path m left
    the domain (``steps`` when it never did).
    """

    grid: TimeGrid
    marks: MarkSpace
    P: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    tau_index: np.ndarray
    terminal: np.ndarray
    diagnostics: SolveDiagnostics

    @property
    def p0(self) -> np.ndarray:
        """Initial value averaged over the inner cloud, shape (n,)."""
        return self.P[0].mean(axis=0)

    @property
    def p0_std(self) -> np.ndarray:
        return self.P[0].std(axis=0)


def _probe_mark_dependence(spec: DriverSpec) -> bool:
    p = np.zeros((1, spec.n))
    q = np.zeros((1, spec.n, spec.d))
    x = np.zeros((1, spec.state_dim or spec.n)) if spec.takes_state else None
    k0 = np.zeros((1, spec.n, spec.marks.r))
    k1 = np.ones((1, spec.n, spec.marks.r))
    try:
        g0 = spec.eval_g(0.0, p, q, k0, x)
        g1 = spec.eval_g(0.0, p, q, k1, x)
    except Exception:
        return False
    return bool(np.any(g0 != g1))


def solve_backward(
    model: ForwardModel,
    spec: DriverSpec,
    terminal: TerminalSpec,
    cfg: BackwardConfig,
    outer_b: NoiseBundle,
    seed: int,
    stream_id: int = 0,
) -> BackwardSolution:
    """Solve the backward system along one backward-Brownian realization.

    Parameters
    ----------
    model:
        Forward dynamics; its grid is taken from ``outer_b``.
    spec, terminal:
        Driver coefficients and terminal condition.  When the driver is
        not Lipschitz, set ``cfg.mollify_order`` to smooth its monotone
        part before solving.
    cfg:
        Numeric controls; see :class:`BackwardConfig`.
    outer_b:
        Noise bundle whose backward-Brownian slice is the fixed outer
        realization.  Its grid defines the time discretization.
    seed, stream_id:
        Key of the inner forward cloud.  Reusing the stream id of
        ``outer_b`` is safe: inner and outer generation draw from disjoint
        counter blocks.

    Raises
    ------
    ConfigError
        If the contraction precondition ``mu * dt < 1`` fails, dimensions
        disagree, or the inner cloud is too small for the basis.
    PicardDivergenceError
        If any step fails to reach ``picard_tol`` within the budget.
    """
    grid = outer_b.grid
    dt = grid.dt
    if outer_b.dB.shape != (grid.steps, spec.l):
        raise ConfigError(
            f"outer bundle dB has shape {outer_b.dB.shape}, expected {(grid.steps, spec.l)}"
        )
    if outer_b.marks.r != spec.marks.r:
        raise ConfigError("outer bundle and driver disagree on the mark set")
    if model.d != spec.d:
        raise ConfigError(f"model d={model.d} but driver d={spec.d}")
    if abs(grid.t0 - model.t_start) > 1e-12 * max(1.0, abs(grid.t0)):
        raise ConfigError(
            f"grid starts at {grid.t0} but the forward model starts at {model.t_start}"
        )
    mu_dt = spec.mu * dt
    if mu_dt >= 1.0:
        raise ConfigError(
            f"contraction precondition failed: mu * dt = {mu_dt:.3g} >= 1; refine the grid"
        )

    work_spec = spec
    if cfg.mollify_order is not None:
        work_spec = mollify_driver(
            spec,
            MollifierConfig(
                order=cfg.mollify_order,
                quad_nodes=cfg.quad_nodes,
                mc_fallback_samples=cfg.mc_fallback_samples,
            ),
        )

    basis = PolynomialBasis(model.m, cfg.basis_degree, cfg.max_total_degree)
    if cfg.inner_paths < 10 * basis.size:
        raise ConfigError(
            f"inner_paths={cfg.inner_paths} below 10x basis size ({basis.size})"
        )

    inner = generate_batch(grid, model.d, spec.marks, cfg.inner_paths, seed, stream_id)
    fwd = simulate_forward_batch(model, inner)
    xi = terminal.evaluate(fwd.exit_states(), fwd.exit_times())
    if not np.all(np.isfinite(xi)):
        raise RegressionError("terminal values are not finite", step=grid.steps)

    M, n, d, r = cfg.inner_paths, spec.n, spec.d, spec.marks.r
    lam = spec.marks.weight_array
    comp = inner.jump_counts - lam * dt  # (M, steps, r)

    P = np.empty((grid.steps + 1, M, n))
    Q = np.zeros((grid.steps, M, n, d))
    K = np.zeros((grid.steps, M, n, r))
    P[grid.steps] = xi

    iters = np.zeros(grid.steps, dtype=int)
    resid = np.zeros(grid.steps)
    diagnostics = SolveDiagnostics(
        picard_iterations=iters,
        picard_residuals=resid,
        mollify_order=cfg.mollify_order,
        mu_dt=mu_dt,
        g_depends_on_marks=_probe_mark_dependence(spec),
    )
    rng = solver_rng(seed, stream_id) if cfg.picard_init == "random" else None
    times = grid.times

    for i in range(grid.steps - 1, -1, -1):
        P[i] = xi  # frozen value past the exit index
        active = fwd.exit_index > i
        ma = int(active.sum())
        if ma == 0:
            continue
        x_i = fwd.X[active, i, :]
        p_next = P[i + 1][active]
        design = basis.design(x_i)
        fit = StepRegression(design, step=i)
        if not fit.full_rank:
            diagnostics.ridge_steps.append(i)
        ce = fit.fitted(p_next)
        centered = p_next - ce
        if d > 0:
            dw = inner.dW[active, i, :]
            targets = (centered[:, :, None] * dw[:, None, :]).reshape(ma, n * d)
            q_i = fit.fitted(targets).reshape(ma, n, d) / dt
        else:
            q_i = np.zeros((ma, n, 0))
        comp_i = comp[active, i, :]
        targets = (centered[:, :, None] * comp_i[:, None, :]).reshape(ma, n * r)
        k_i = fit.fitted(targets).reshape(ma, n, r) / (lam * dt)

        ctx = PicardContext(
            t=float(times[i]),
            dt=dt,
            ce=ce,
            q=q_i,
            k=k_i,
            db=outer_b.dB[i],
            spec=work_spec,
            x=x_i if spec.takes_state else None,
        )
        if cfg.picard_init == "zeros":
            p_cur = np.zeros_like(ce)
        elif cfg.picard_init == "random":
            p_cur = rng.standard_normal(ce.shape)
        else:
            p_cur = ce
        history = []
        for _ in range(cfg.picard_max_iter):
            p_cur, res = picard_step(p_cur, ctx)
            history.append(res)
            if res < cfg.picard_tol:
                break
        else:
            raise PicardDivergenceError(
                f"fixed point did not reach tol {cfg.picard_tol:g} at step {i}",
                step=i,
                residuals=history,
            )
        P[i][active] = p_cur
        Q[i][active] = q_i
        K[i][active] = k_i
        iters[i] = len(history)
        resid[i] = history[-1]

    return BackwardSolution(
        grid=grid,
        marks=spec.marks,
        P=P,
        Q=Q,
        K=K,
        tau_index=fwd.exit_index,
        terminal=xi,
        diagnostics=diagnostics,
    )


def solution_norms(sol: BackwardSolution) -> dict:
    """Discrete solution-space norms averaged over the inner cloud.

    ``sSq`` is the mean pathwise maximum of |P|^2 over the grid, ``mSq``
    the mean of sum |Q|^2 dt, ``fSq`` the mean of the intensity-weighted
    sum of |K|^2 dt.
    """
    dt = sol.grid.dt
    lam = sol.marks.weight_array
    p_sq = np.sum(np.square(sol.P), axis=2)          # (steps+1, M)
    s_sq = float(np.mean(np.max(p_sq, axis=0)))
    m_sq = float(np.mean(np.sum(np.square(sol.Q), axis=(0, 2, 3)) * dt))
    k_sq = np.einsum("imnr,r->m", np.square(sol.K), lam) * dt
    f_sq = float(np.mean(k_sq))
    return {"sSq": s_sq, "mSq": m_sq, "fSq": f_sq, "total": s_sq + m_sq + f_sq}
