import dataclasses
import math

import numpy as np
import pytest

from bdsdep.backward import (
    BackwardConfig,
    PicardContext,
    PolynomialBasis,
    picard_step,
    solution_norms,
    solve_backward,
)
from bdsdep.catalog import catalog_problem
from bdsdep.errors import ConfigError
from bdsdep.noise import TimeGrid, generate_bundle
from bdsdep.oracle import OracleModel, analytic_linear, nested_ce


def _solve(problem, cfg=None, seed=0, steps=None, horizon=1.0):
    cfg = cfg or problem.default_cfg
    if steps is not None:
        cfg = dataclasses.replace(cfg, steps=steps)
    grid = TimeGrid(0.0, horizon, cfg.steps)
    outer = generate_bundle(
        grid, d=problem.model.d, l=problem.spec.l, marks=problem.spec.marks, seed=seed
    )
    return solve_backward(
        problem.model, problem.spec, problem.terminal, cfg, outer, seed=seed
    )


class TestZeroDriver:
    def test_exact_constant_solution(self):
        sol = _solve(catalog_problem("zero"))
        assert np.max(np.abs(sol.P - 1.0)) < 1e-10
        assert np.max(np.abs(sol.Q)) < 1e-10
        assert np.max(np.abs(sol.K)) < 1e-10

    def test_norms(self):
        sol = _solve(catalog_problem("zero"))
        norms = solution_norms(sol)
        assert norms["sSq"] == pytest.approx(1.0, abs=1e-10)
        assert norms["mSq"] < 1e-20
        assert norms["fSq"] < 1e-20

    def test_degenerate_start_uses_ridge(self):
        # all paths share x0 at step 0, so the design there is rank deficient
        sol = _solve(catalog_problem("zero"))
        assert 0 in sol.diagnostics.ridge_steps


class TestLinearScalar:
    def test_against_analytic_oracle(self):
        problem = catalog_problem("linear-scalar")
        cfg = problem.default_cfg
        sol = _solve(problem)
        exact = analytic_linear(1.0, 1.0, 1.0, 0.0)
        rel = abs(sol.p0[0] - exact) / exact
        dt = 1.0 / cfg.steps
        assert rel < 10.0 * (dt + cfg.inner_paths**-0.5)

    def test_norm_scale_against_analytic_path(self):
        sol = _solve(catalog_problem("linear-scalar"))
        norms = solution_norms(sol)
        exact_sup_sq = math.e**2
        assert norms["sSq"] == pytest.approx(exact_sup_sq, rel=1.0)  # within 2x
        assert norms["sSq"] <= 2 * exact_sup_sq


def test_terminal_consistency_per_path():
    problem = catalog_problem("jump-coupled")
    sol = _solve(problem)
    assert np.array_equal(sol.P[-1], sol.terminal)


def test_identity_terminal_matches_nested_mc_oracle():
    # value function of the identity payoff under pure diffusion is x itself;
    # check the solver against the brute-force restart estimator
    problem = catalog_problem("linear-scalar")
    spec = dataclasses.replace(problem.spec, f2=lambda t, p, q, k: np.zeros_like(p))
    terminal = dataclasses.replace(problem.terminal, xi=lambda x, tau: x[:, :1])
    cfg = BackwardConfig(inner_paths=10_000, basis_degree=1, steps=20, picard_tol=1e-12)
    grid = TimeGrid(0.0, 1.0, cfg.steps)
    outer = generate_bundle(grid, d=1, l=1, marks=spec.marks, seed=4)
    sol = solve_backward(problem.model, spec, terminal, cfg, outer, seed=4)

    oracle_model = OracleModel(
        b=lambda t, x: np.zeros_like(x),
        sigma=lambda t, x: np.ones(x.shape + (1,)),
        h=lambda t, x, z: np.zeros_like(x),
        d=1,
        horizon=1.0,
    )
    # sample a few (step, path) cells and compare
    rng = np.random.default_rng(0)
    step = 10
    idx = rng.choice(cfg.inner_paths, size=5, replace=False)
    for m in idx:
        x = float(sol.P[step, m, 0])  # solver value should be close to state
        state = None
        est, se = nested_ce(
            oracle_model,
            lambda xs: xs[:, 0],
            grid.times[step],
            x,
            inner_samples=1000,
            seed=int(m),
        )
        assert abs(x - est) < 3 * max(se, 1e-3)

    # the Brownian integrand of the identity value function is one
    q_mid = sol.Q[step, :, 0, 0]
    assert np.mean(q_mid) == pytest.approx(1.0, abs=0.05)
    assert np.max(np.abs(sol.K[step])) < 0.05


class TestPicardStep:
    def _ctx(self, spec, ce, dt=0.05, db=None):
        return PicardContext(
            t=0.0,
            dt=dt,
            ce=ce,
            q=np.zeros((len(ce), 1, 1)),
            k=np.zeros((len(ce), 1, 1)),
            db=db if db is not None else np.zeros(1),
            spec=spec,
        )

    def test_value_independent_driver_converges_in_one_application(self):
        problem = catalog_problem("zero")
        spec = dataclasses.replace(
            problem.spec, f2=lambda t, p, q, k: np.full_like(p, 0.4)
        )
        ce = np.ones((8, 1))
        ctx = self._ctx(spec, ce)
        p1, r1 = picard_step(ce, ctx)
        p2, r2 = picard_step(p1, ctx)
        assert r1 > 0
        assert r2 == 0.0

    @pytest.mark.parametrize("a_dt", [0.1, 0.5])
    def test_linear_driver_contracts_at_rate_a_dt(self, a_dt):
        problem = catalog_problem("zero")
        a, dt = a_dt / 0.1, 0.1
        spec = dataclasses.replace(problem.spec, f2=lambda t, p, q, k: a * p)
        ce = np.ones((4, 1))
        ctx = self._ctx(spec, ce, dt=dt)
        p, _ = picard_step(np.zeros_like(ce), ctx)
        residuals = []
        for _ in range(6):
            p, r = picard_step(p, ctx)
            residuals.append(r)
        ratios = [b / a for a, b in zip(residuals, residuals[1:])]
        for r in ratios:
            assert r == pytest.approx(a_dt, rel=0.2)


def test_solution_norms_trivial_cases():
    problem = catalog_problem("zero")
    sol = _solve(problem)
    zeroed = dataclasses.replace(
        sol, P=np.zeros_like(sol.P), Q=np.zeros_like(sol.Q), K=np.zeros_like(sol.K)
    )
    norms = solution_norms(zeroed)
    assert (norms["sSq"], norms["mSq"], norms["fSq"]) == (0.0, 0.0, 0.0)
    const = dataclasses.replace(
        sol, P=np.full_like(sol.P, 3.0), Q=np.zeros_like(sol.Q), K=np.zeros_like(sol.K)
    )
    assert solution_norms(const)["sSq"] == pytest.approx(9.0)


def test_masking_zeroes_integrands_after_exit():
    from bdsdep.forward import Box, ForwardModel

    problem = catalog_problem("linear-scalar")
    model = ForwardModel(
        m=1,
        d=1,
        b=lambda t, x: np.full_like(x, 2.0),
        sigma=lambda t, x: 0.5 * np.ones(x.shape + (1,)),
        h=lambda t, x, z: np.zeros_like(x),
        x0=(0.5,),
        domain=Box((-1.0,), (1.0,)),
    )
    terminal = dataclasses.replace(problem.terminal, xi=lambda x, tau: np.tanh(x[:, :1]))
    cfg = BackwardConfig(inner_paths=400, basis_degree=1, steps=30, picard_tol=1e-12)
    grid = TimeGrid(0.0, 1.0, 30)
    outer = generate_bundle(grid, d=1, l=1, marks=problem.spec.marks, seed=8)
    sol = solve_backward(model, problem.spec, terminal, cfg, outer, seed=8)
    exited = sol.tau_index < 30
    assert exited.any()
    for m in np.nonzero(exited)[0][:20]:
        e = sol.tau_index[m]
        assert np.all(sol.Q[e:, m] == 0.0)
        assert np.all(sol.K[e:, m] == 0.0)
        assert np.all(sol.P[e:, m] == sol.terminal[m])


def test_outer_variation_dominates_inner_for_additive_noise():
    # value-independent driver with nonzero backward coefficient: the initial
    # value is a functional of the outer realization alone
    problem = catalog_problem("zero")
    spec = dataclasses.replace(
        problem.spec,
        f2=lambda t, p, q, k: np.full_like(p, 0.3),
        g=lambda t, p, q, k: np.full(p.shape + (1,), 0.5),
        mu_t=lambda t: 0.5,
        mu_bar=0.25,
    )
    cfg = BackwardConfig(inner_paths=200, basis_degree=1, steps=10, picard_tol=1e-12)
    grid = TimeGrid(0.0, 1.0, 10)
    p0 = np.empty((10, 10))
    for outer_seed in range(10):
        outer = generate_bundle(grid, d=1, l=1, marks=spec.marks, seed=1000 + outer_seed)
        for inner_seed in range(10):
            sol = solve_backward(
                problem.model, spec, problem.terminal, cfg, outer, seed=inner_seed
            )
            p0[outer_seed, inner_seed] = sol.p0[0]
    within = p0.std(axis=1).max()
    across = p0.mean(axis=1).std()
    assert within < 1e-10
    assert across > 1e-2


def test_mark_dependent_backward_coefficient_is_flagged():
    problem = catalog_problem("zero")
    sol = _solve(problem)
    assert sol.diagnostics.g_depends_on_marks is False
    coupled = dataclasses.replace(
        problem.spec,
        g=lambda t, p, q, k: 0.1 * k.sum(axis=2, keepdims=True),
    )
    grid = TimeGrid(0.0, 1.0, 10)
    outer = generate_bundle(grid, d=1, l=1, marks=problem.spec.marks, seed=0)
    sol2 = solve_backward(
        problem.model,
        coupled,
        problem.terminal,
        BackwardConfig(inner_paths=200, basis_degree=1, steps=10),
        outer,
        seed=0,
    )
    assert sol2.diagnostics.g_depends_on_marks is True


class TestValidation:
    def test_contraction_precondition(self):
        problem = catalog_problem("linear-scalar")
        grid = TimeGrid(0.0, 3.0, 2)  # dt = 1.5, mu = 1
        outer = generate_bundle(grid, d=1, l=1, marks=problem.spec.marks, seed=0)
        with pytest.raises(ConfigError, match="mu \\* dt"):
            solve_backward(
                problem.model,
                problem.spec,
                problem.terminal,
                BackwardConfig(inner_paths=100, basis_degree=1),
                outer,
                seed=0,
            )

    def test_inner_paths_floor(self):
        problem = catalog_problem("linear-scalar")
        grid = TimeGrid(0.0, 1.0, 10)
        outer = generate_bundle(grid, d=1, l=1, marks=problem.spec.marks, seed=0)
        with pytest.raises(ConfigError, match="basis"):
            solve_backward(
                problem.model,
                problem.spec,
                problem.terminal,
                BackwardConfig(inner_paths=25, basis_degree=2),
                outer,
                seed=0,
            )

    def test_dimension_mismatch(self):
        problem = catalog_problem("linear-scalar")
        grid = TimeGrid(0.0, 1.0, 10)
        outer = generate_bundle(grid, d=1, l=2, marks=problem.spec.marks, seed=0)
        with pytest.raises(ConfigError):
            solve_backward(
                problem.model,
                problem.spec,
                problem.terminal,
                BackwardConfig(inner_paths=100, basis_degree=1),
                outer,
                seed=0,
            )

    def test_bad_picard_init_rejected(self):
        with pytest.raises(ConfigError):
            BackwardConfig(picard_init="warm")

    def test_divergence_error_carries_residual_history(self):
        from bdsdep.errors import PicardDivergenceError

        problem = catalog_problem("linear-scalar")
        grid = TimeGrid(0.0, 1.0, 50)
        outer = generate_bundle(grid, d=1, l=1, marks=problem.spec.marks, seed=0)
        with pytest.raises(PicardDivergenceError) as err:
            solve_backward(
                problem.model,
                problem.spec,
                problem.terminal,
                BackwardConfig(inner_paths=200, basis_degree=1, picard_max_iter=2),
                outer,
                seed=0,
            )
        assert err.value.step == 49
        assert len(err.value.residuals) == 2


def test_polynomial_basis_enumeration():
    basis = PolynomialBasis(m=2, degree=2)
    assert basis.size == 6  # 1, x, y, x^2, xy, y^2 under total-degree cap
    capped = PolynomialBasis(m=2, degree=2, max_total_degree=1)
    assert capped.size == 3
    x = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, -1.0]])
    design = basis.design(x)
    assert design.shape == (3, 6)
    assert np.all(design[:, 0] == 1.0)
