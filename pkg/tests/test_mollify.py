import dataclasses
import math

import numpy as np
import pytest
from scipy.integrate import quad

from bdsdep.drivers import builtin_driver
from bdsdep.errors import ConfigError
from bdsdep.mollify import (
    MollifierConfig,
    bump_kernel,
    estimate_lipschitz,
    mollify_driver,
)

SPEC, _, _ = builtin_driver("linear-scalar")


def _with_f1(f1):
    zero = lambda t, p, q, k: np.zeros_like(p)
    return dataclasses.replace(SPEC, f1=f1, f2=zero)


def _eval1(spec, x):
    """Evaluate a scalar driver's f1 at scalar points x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = x[:, None]
    q = np.zeros((len(x), 1, 1))
    k = np.zeros((len(x), 1, 1))
    return spec.eval_f1(0.0, p, q, k)[:, 0]


class TestBumpKernel:
    def test_zero_outside_unit_ball(self):
        for x in ([1.0], [1.2], [-3.0]):
            assert bump_kernel(np.array(x), 1) == 0.0
        assert bump_kernel(np.array([0.8, 0.8]), 2) == 0.0

    def test_center_value_matches_quadrature_oracle(self):
        # oracle: normalize exp(-1/(1-u^2)) on [-1, 1] with adaptive quadrature
        mass, _ = quad(lambda u: math.exp(-1.0 / (1.0 - u * u)), -1.0, 1.0)
        c0 = 1.0 / mass
        val = float(bump_kernel(np.array([0.0]), 1))
        assert val == pytest.approx(c0 * math.exp(-1.0), rel=1e-9)

    def test_even_symmetry(self):
        xs = np.linspace(-0.99, 0.99, 41)
        left = bump_kernel(xs[:, None], 1)
        right = bump_kernel(-xs[:, None], 1)
        assert np.array_equal(left, right)

    @pytest.mark.parametrize("dim,nodes", [(1, 120), (2, 90), (3, 50)])
    def test_unit_mass_per_dimension(self, dim, nodes):
        # independent tensor-quadrature check of the radial normalization
        pts, w = np.polynomial.legendre.leggauss(nodes)
        grids = np.meshgrid(*([pts] * dim), indexing="ij")
        x = np.stack([g.ravel() for g in grids], axis=-1)
        wall = np.prod(
            np.stack(np.meshgrid(*([w] * dim), indexing="ij"), axis=-1).reshape(-1, dim),
            axis=1,
        )
        mass = float(np.sum(wall * bump_kernel(x, dim)))
        assert mass == pytest.approx(1.0, abs=1e-6)


class TestMollifyDriver:
    def test_affine_fixed_point(self):
        spec = _with_f1(lambda t, p, q, k: 3.0 * p + 1.0)
        for order in (1, 4):
            smooth = mollify_driver(spec, MollifierConfig(order=order))
            x = np.linspace(-2, 2, 9)
            assert _eval1(smooth, x) == pytest.approx(3.0 * x + 1.0, abs=1e-8)

    def test_abs_value_at_origin_vs_quadrature_oracle(self):
        spec = _with_f1(lambda t, p, q, k: np.abs(p))
        smooth = mollify_driver(spec, MollifierConfig(order=1, quad_nodes=48))
        val = float(_eval1(smooth, 0.0)[0])
        mass, _ = quad(lambda u: math.exp(-1.0 / (1.0 - u * u)), -1.0, 1.0)
        oracle = 2.0 * quad(
            lambda u: u * math.exp(-1.0 / (1.0 - u * u)) / mass, 0.0, 1.0
        )[0]
        assert val > 0
        assert val == pytest.approx(oracle, abs=1e-3)

    def test_consistency_distance_shrinks_with_order(self):
        spec = _with_f1(lambda t, p, q, k: np.abs(p))
        x = np.linspace(-1.5, 1.5, 100)
        exact = np.abs(x)
        dists = []
        for order in (1, 10, 100):
            smooth = mollify_driver(spec, MollifierConfig(order=order))
            dists.append(np.max(np.abs(_eval1(smooth, x) - exact)))
        assert dists[0] > dists[1] > dists[2]

    @pytest.mark.parametrize("name", ["zero", "linear-scalar", "dissipative-sqrtlog", "jump-coupled"])
    def test_catalog_consistency_non_increasing(self, name):
        spec, _, _ = builtin_driver(name)
        rng = np.random.default_rng(5)
        p = rng.standard_normal((100, spec.n))
        q = rng.standard_normal((100, spec.n, spec.d))
        k = rng.standard_normal((100, spec.n, spec.marks.r))
        exact = spec.eval_f1(0.3, p, q, k)
        prev = None
        for order in (1, 2, 4, 8):
            smooth = mollify_driver(spec, MollifierConfig(order=order))
            dist = float(np.max(np.abs(smooth.eval_f1(0.3, p, q, k) - exact)))
            if prev is not None:
                assert dist <= prev + 1e-12
            prev = dist

    def test_mark_argument_passes_through(self):
        spec = _with_f1(lambda t, p, q, k: k.sum(axis=2))
        smooth = mollify_driver(spec, MollifierConfig(order=2))
        k = np.array([[[0.5]], [[-1.5]]])
        out = smooth.eval_f1(0.0, np.zeros((2, 1)), np.zeros((2, 1, 1)), k)
        assert out == pytest.approx(k.sum(axis=2))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            MollifierConfig(order=0)
        with pytest.raises(ConfigError):
            MollifierConfig(order=1, quad_nodes=2)


class TestEstimateLipschitz:
    def test_constant_driver_zero(self):
        spec = _with_f1(lambda t, p, q, k: np.full_like(p, 2.5))
        assert estimate_lipschitz(spec, samples=2000, seed=0) == 0.0

    def test_linear_driver_exact(self):
        spec = _with_f1(lambda t, p, q, k: 3.0 * p)
        est = estimate_lipschitz(spec, samples=2000, seed=0)
        assert est == pytest.approx(3.0, abs=1e-9)

    def test_mollified_abs_bracketed_by_dense_scan(self):
        spec = _with_f1(lambda t, p, q, k: np.abs(p))
        smooth = mollify_driver(spec, MollifierConfig(order=10, quad_nodes=32))
        est = estimate_lipschitz(smooth, samples=4000, seed=1)
        xs = np.linspace(-0.5, 0.5, 2001)
        vals = _eval1(smooth, xs)
        scan = float(np.max(np.abs(np.diff(vals)) / np.diff(xs)))
        assert np.isfinite(est)
        assert 0.5 * scan <= est <= 1.3 * scan

    def test_promotion_on_non_lipschitz_catalog_driver(self):
        spec, _, _ = builtin_driver("dissipative-sqrtlog")
        previous = 0.0
        for order in (1, 10, 100):
            smooth = mollify_driver(spec, MollifierConfig(order=order))
            est = estimate_lipschitz(smooth, samples=2000, seed=2)
            assert np.isfinite(est)
            assert est > previous
            previous = est
