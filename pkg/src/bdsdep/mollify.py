"""Smoothing of the monotone driver part by bump-kernel convolution.

``mollify_driver`` replaces f1 with its convolution against the product
bump kernel J(p, q) = J1(p) J2(q), shifted at scale 1/order.  Only f1 is
smoothed; f2 is already Lipschitz and the mark argument passes through
untouched.  The convolution is approximated by tensor Gauss-Legendre
quadrature over the unit balls (kernel zero-extended to the bounding box)
up to four dimensions per block, with a deterministic Monte Carlo node set
above that.  Node weights are normalized to unit mass, which makes affine
functions exact fixed points of the smoothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .drivers import DriverSpec, lambda_norm

_TENSOR_DIM_CAP = 4
_C0_CACHE: dict[int, float] = {}


@dataclass(frozen=True)
class MollifierConfig:
    """Numeric controls for the smoothing: order = 1/radius of the shift."""

    order: int
    quad_nodes: int = 24
    mc_fallback_samples: int = 20_000

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("mollifier order must be >= 1")
        if self.quad_nodes < 3:
            raise ConfigError("need at least 3 quadrature nodes per axis")


def _unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


def _unit_sphere_area(dim: int) -> float:
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


def _raw_bump(r2: np.ndarray) -> np.ndarray:
    """exp(-1/(1-|x|^2)) inside the unit ball, 0 outside; input is |x|^2."""
    r2 = np.asarray(r2, dtype=float)
    inside = r2 < 1.0
    safe = np.where(inside, 1.0 - r2, 1.0)
    with np.errstate(over="ignore"):
        vals = np.exp(-1.0 / safe)
    return np.where(inside, vals, 0.0)


def _c0(dim: int) -> float:
    """Normalizing constant so the dim-dimensional kernel has unit mass.

    Computed once per dimension by radial quadrature:
    integral = area(S^{dim-1}) * int_0^1 r^{dim-1} exp(-1/(1-r^2)) dr.
    """
    if dim not in _C0_CACHE:
        nodes, weights = np.polynomial.legendre.leggauss(200)
        r = 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        radial = np.sum(w * r ** (dim - 1) * _raw_bump(r**2))
        if dim == 1:
            mass = 2.0 * radial
        else:
            mass = _unit_sphere_area(dim) * radial
        _C0_CACHE[dim] = 1.0 / mass
    return _C0_CACHE[dim]


def bump_kernel(x, dim: int) -> np.ndarray:
    """Normalized bump kernel; ``x`` is one point or an array of points.

    For an array, the last axis must have length ``dim``; returns the
    kernel values with that axis contracted.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if dim != 1:
            raise ValueError("scalar input only valid for dim=1")
        r2 = x**2
    else:
        if x.shape[-1] != dim:
            raise ValueError(f"last axis has length {x.shape[-1]}, expected {dim}")
        r2 = np.sum(np.square(x), axis=-1)
    return _c0(dim) * _raw_bump(r2)


def _tensor_nodes(dim: int, nodes_per_axis: int):
    """Tensor Gauss-Legendre grid on [-1,1]^dim with kernel-weighted mass."""
    nodes, weights = np.polynomial.legendre.leggauss(nodes_per_axis)
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*([weights] * dim), indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    mass = w * bump_kernel(pts, dim)
    keep = mass > 0
    return pts[keep], mass[keep]


def _mc_nodes(dim: int, count: int, tag: int):
    """Deterministic uniform-in-ball nodes weighted by the kernel."""
    rng = np.random.default_rng(0xB0B + 37 * dim + tag)
    raw = rng.standard_normal((count, dim))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = rng.uniform(0.0, 1.0, (count, 1)) ** (1.0 / dim)
    pts = raw * radii
    mass = bump_kernel(pts, dim) * _unit_ball_volume(dim) / count
    return pts, mass


def _node_set(dim: int, cfg: MollifierConfig, tag: int):
    if dim <= _TENSOR_DIM_CAP:
        pts, mass = _tensor_nodes(dim, cfg.quad_nodes)
    else:
        pts, mass = _mc_nodes(dim, cfg.mc_fallback_samples, tag)
    total = mass.sum()
    if not total > 0:
        raise ConfigError("mollifier quadrature has zero kernel mass")
    return pts, mass / total


def _ignores_q(spec: DriverSpec) -> bool:
    """Probe whether f1 is constant in its Brownian-integrand argument."""
    rng = np.random.default_rng(0xA11CE)
    n, d, r = spec.n, spec.d, spec.marks.r
    m = spec.state_dim if spec.state_dim is not None else n
    for _ in range(3):
        t = float(rng.uniform(0.0, spec.horizon))
        p = rng.standard_normal((2, n))
        k = rng.standard_normal((2, n, r))
        x = rng.standard_normal((2, m)) if spec.takes_state else None
        qa = rng.standard_normal((2, n, d))
        qb = qa + rng.standard_normal((2, n, d)) * 3.0
        try:
            if not np.array_equal(
                spec.eval_f1(t, p, qa, k, x), spec.eval_f1(t, p, qb, k, x)
            ):
                return False
        except Exception:
            return False
    return True


def mollify_driver(spec: DriverSpec, cfg: MollifierConfig) -> DriverSpec:
    """Return a copy of ``spec`` whose f1 is smoothed at scale 1/order.

    The new f1 evaluates the weighted sum of the original f1 over shifted
    (p, q) quadrature nodes.  The q tensor factor collapses to a single
    node when the driver has no Brownian component or provably ignores the
    argument (the kernel has unit mass, so the factor integrates out).
    The result is Lipschitz with a constant that grows with the order,
    which is the point: it makes the fixed-point solver's per-step
    contraction applicable to merely continuous monotone drivers.
    """
    n, d = spec.n, spec.d
    inv = 1.0 / cfg.order
    p_pts, p_w = _node_set(n, cfg, tag=0)
    if d > 0 and not _ignores_q(spec):
        q_pts, q_w = _node_set(n * d, cfg, tag=1)
    else:
        q_pts, q_w = np.zeros((1, n * d)), np.ones(1)
    # Flattened tensor-product node table: one row per (p-node, q-node) pair.
    np_p, np_q = len(p_w), len(q_w)
    pairs = np_p * np_q
    shift_p = np.repeat(p_pts, np_q, axis=0) * inv                       # (pairs, n)
    shift_q = np.tile(q_pts, (np_p, 1)).reshape(pairs, n, d) * inv       # (pairs, n, d)
    pair_w = (p_w[:, None] * q_w[None, :]).ravel()                       # (pairs,)
    base_f1 = spec.f1
    takes_state = spec.takes_state
    row_cap = 2_000_000

    def smoothed(*args):
        if takes_state:
            t, x, p, q, k = args
        else:
            t, p, q, k = args
            x = None
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        k = np.asarray(k, dtype=float)
        batch = p.shape[0]
        acc = np.zeros_like(p)
        step = max(1, row_cap // max(1, batch))
        for lo in range(0, len(pair_w), step):
            hi = min(lo + step, len(pair_w))
            chunk = hi - lo
            rows = chunk * batch
            pp = (p[None, :, :] - shift_p[lo:hi, None, :]).reshape(rows, n)
            qq = (q[None, :, :, :] - shift_q[lo:hi, None, :, :]).reshape(rows, n, d)
            kk = np.broadcast_to(k, (chunk,) + k.shape).reshape(rows, n, k.shape[-1])
            if takes_state:
                xx = np.broadcast_to(x, (chunk,) + x.shape).reshape(rows, x.shape[-1])
                vals = np.asarray(base_f1(t, xx, pp, qq, kk), dtype=float)
            else:
                vals = np.asarray(base_f1(t, pp, qq, kk), dtype=float)
            acc += np.einsum(
                "c,cmn->mn", pair_w[lo:hi], vals.reshape(chunk, batch, n)
            )
        return acc

    return replace(spec, f1=smoothed)


def estimate_lipschitz(spec: DriverSpec, samples: int = 4000, seed: int = 0) -> float:
    """Largest sampled difference quotient of f = f1 + f2.

    Pairs mix O(1) separations with near-duplicates down to 1e-5 (smaller
    scales drown the quotient in float cancellation noise); the quotient
    divides by |dp| + |dq| + ||dk||.  Finite output for a mollified driver
    is the empirical Lipschitz constant.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    n, d, r = spec.n, spec.d, spec.marks.r
    m = spec.state_dim if spec.state_dim is not None else n
    best = 0.0
    chunks = 8
    per = max(1, samples // chunks)
    for c in range(chunks):
        t = float(rng.uniform(0.0, spec.horizon))
        p1 = rng.standard_normal((per, n)) * 2.0
        q1 = rng.standard_normal((per, n, d)) * 2.0
        k1 = rng.standard_normal((per, n, r)) * 2.0
        x = rng.standard_normal((per, m)) * 2.0 if spec.takes_state else None
        scale = 10.0 ** rng.uniform(-5.0, 0.0, (per, 1))
        dp = rng.standard_normal((per, n))
        dp /= np.maximum(np.linalg.norm(dp, axis=1, keepdims=True), 1e-300)
        p2 = p1 + scale * dp
        if c % 2:  # alternate joint perturbations with p-only ones
            q2 = q1 + scale[:, :, None] * rng.standard_normal((per, n, d)) * 0.5
            k2 = k1 + scale[:, :, None] * rng.standard_normal((per, n, r)) * 0.5
        else:
            q2, k2 = q1.copy(), k1.copy()
        fa = spec.eval_f(t, p1, q1, k1, x)
        fb = spec.eval_f(t, p2, q2, k2, x)
        num = np.linalg.norm(fa - fb, axis=1)
        den = (
            np.linalg.norm(p1 - p2, axis=1)
            + np.linalg.norm((q1 - q2).reshape(per, -1), axis=1)
            + lambda_norm(k1 - k2, spec.marks)
        )
        good = den > 0
        if np.any(good):
            best = max(best, float(np.max(num[good] / den[good])))
    return best
