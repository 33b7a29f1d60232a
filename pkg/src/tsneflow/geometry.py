"""Manifold samplers, exact empirical W1, and Monte-Carlo kernel integrals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .affinity_hi import Dataset, as_dataset
from .errors import BadSpec, DegenerateGrid, SizeMismatch, TooLarge

W1_MAX = 1024

# kind -> (intrinsic dim, minimal ambient dim, default params)
KINDS = {
    "circle": (1, 2, {"radius": 1.0}),
    "sphere": (2, 3, {"radius": 1.0}),
    "torus": (2, 3, {"major": 2.0, "minor": 0.5}),
    "swiss_roll": (2, 3, {"height": 21.0, "t_max": 4.5 * math.pi}),
    "gaussian_clusters": (None, 2, {"clusters": 3, "spread": 0.2, "separation": 3.0}),
}


@dataclass(frozen=True)
class ManifoldSpec:
    """What to sample. ``m`` defaults to the kind's intrinsic dimension
    (``d`` for Gaussian clusters); low-dimensional shapes are zero-padded
    into ``R^d``."""

    kind: str
    d: int | None = None
    m: int | None = None
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BadSpec(f"unknown manifold kind {self.kind!r}; choose from {sorted(KINDS)}")
        m_native, d_min, defaults = KINDS[self.kind]
        d = d_min if self.d is None else int(self.d)
        if d < max(2, d_min):
            raise BadSpec(f"{self.kind} needs ambient dimension >= {max(2, d_min)}, got {d}")
        m = d if m_native is None else m_native
        if self.m is not None and self.m != m:
            raise BadSpec(f"{self.kind} in R^{d} has intrinsic dimension {m}, not {self.m}")
        params = {**defaults, **self.params}
        unknown = set(params) - set(defaults)
        if unknown:
            raise BadSpec(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        for k, v in params.items():
            if not (isinstance(v, (int, float)) and v > 0):
                raise BadSpec(f"parameter {k} must be positive, got {v!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "params", params)


def _pad(x, d):
    if x.shape[1] == d:
        return x
    return np.hstack([x, np.zeros((x.shape[0], d - x.shape[1]))])


def _circle(rng, n, p):
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    return p["radius"] * np.c_[np.cos(th), np.sin(th)]


def _sphere(rng, n, p):
    g = rng.normal(size=(n, 3))
    return p["radius"] * g / np.linalg.norm(g, axis=1, keepdims=True)


def _torus(rng, n, p):
    big, small = p["major"], p["minor"]
    if small >= big:
        raise BadSpec("torus needs minor < major radius")
    out = np.empty((0, 2))
    # area element is proportional to big + small*cos(v); thin by rejection
    while out.shape[0] < n:
        u = rng.uniform(0, 2 * np.pi, 2 * n)
        v = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.uniform(0, big + small, 2 * n) < big + small * np.cos(v)
        out = np.vstack([out, np.c_[u[keep], v[keep]]])
    u, v = out[:n, 0], out[:n, 1]
    r = big + small * np.cos(v)
    return np.c_[r * np.cos(u), r * np.sin(u), small * np.sin(v)]


def _swiss_roll(rng, n, p):
    t_lo, t_hi = 1.5 * np.pi, p["t_max"]
    if t_hi <= t_lo:
        raise BadSpec(f"swiss roll needs t_max > {t_lo:.4g}")
    out = np.empty(0)
    # arc-length density along the spiral is proportional to sqrt(1 + t^2)
    top = math.sqrt(1 + t_hi * t_hi)
    while out.size < n:
        t = rng.uniform(t_lo, t_hi, 2 * n)
        keep = rng.uniform(0, top, 2 * n) < np.sqrt(1 + t * t)
        out = np.concatenate([out, t[keep]])
    t = out[:n]
    h = rng.uniform(0, p["height"], n)
    return np.c_[t * np.cos(t), h, t * np.sin(t)]


def _clusters(rng, n, p, d):
    k = int(p["clusters"])
    centers = rng.normal(size=(k, d))
    centers *= p["separation"] / max(np.linalg.norm(centers, axis=1).mean(), 1e-12)
    labels = rng.integers(0, k, n)
    return centers[labels] + p["spread"] * rng.normal(size=(n, d))


def sample(spec: ManifoldSpec, n: int, seed: int | None = None) -> Dataset:
    """Draw ``n`` i.i.d. points; identical spec and seed give identical data."""
    if n < 2:
        raise BadSpec(f"need n >= 2, got {n}")
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    p = spec.params
    if spec.kind == "circle":
        x = _circle(rng, n, p)
    elif spec.kind == "sphere":
        x = _sphere(rng, n, p)
    elif spec.kind == "torus":
        x = _torus(rng, n, p)
    elif spec.kind == "swiss_roll":
        x = _swiss_roll(rng, n, p)
    else:
        x = _clusters(rng, n, p, spec.d)
    meta = {"sampler": spec.kind, "seed": seed, "m": spec.m, "params": dict(p)}
    return Dataset(_pad(x, spec.d), meta=meta)


@dataclass(frozen=True)
class W1Result:
    distance: float
    matching: np.ndarray


def _points(a):
    return a.points if isinstance(a, Dataset) else np.atleast_2d(np.asarray(a, dtype=float))


def w1_exact(a, b) -> W1Result:
    """Exact W1 between two equal-size empirical measures.

    With uniform weights an optimal plan can be taken to be a permutation,
    so W1 is the optimal assignment cost divided by ``n``.
    """
    xa, xb = _points(a), _points(b)
    if xa.shape[0] != xb.shape[0]:
        raise SizeMismatch(f"sizes differ: {xa.shape[0]} vs {xb.shape[0]}")
    if xa.shape[0] > W1_MAX:
        raise TooLarge(f"exact assignment limited to {W1_MAX} points, got {xa.shape[0]}")
    if xa.shape[1] != xb.shape[1]:
        raise SizeMismatch(f"dimensions differ: {xa.shape[1]} vs {xb.shape[1]}")
    cost = cdist(xa, xb)
    rows, cols = linear_sum_assignment(cost)
    return W1Result(float(cost[rows, cols].sum() / xa.shape[0]), cols)


def w1_to_reference(x: np.ndarray, ref: np.ndarray) -> float:
    """W1 between an ``n``-sample and a larger reference sample.

    When ``len(ref)`` is a multiple of ``n`` each sample point is repeated
    ``len(ref) / n`` times, which represents the same empirical measure, and
    the result is exact. Otherwise the reference is subsampled to ``n``.
    """
    n, m = x.shape[0], ref.shape[0]
    if m % n == 0:
        return w1_exact(np.repeat(x, m // n, axis=0), ref).distance
    pick = np.random.default_rng(n).choice(m, size=n, replace=False)
    return w1_exact(x, ref[pick]).distance


def w1_convergence_curve(spec: ManifoldSpec, n_list, m_ref: int,
                         ref_seed: int | None = None):
    """``[(n, W1(mu_n, mu_ref))]``; the reference stands in for the true measure."""
    n_list = [int(n) for n in n_list]
    if m_ref < max(n_list):
        raise BadSpec("m_ref must be at least max(n_list)")
    ref_seed = spec.seed + 1_000_003 if ref_seed is None else ref_seed
    ref = sample(spec, m_ref, seed=ref_seed).points
    return [(n, w1_to_reference(sample(spec, n).points, ref)) for n in n_list]


def _kernel_weights(x, z, sigma):
    d2 = np.sum((x - np.asarray(z, dtype=float)) ** 2, axis=1)
    return d2 / (2.0 * sigma * sigma)


def kernel_integral(data, z, sigma: float) -> float:
    """Monte-Carlo ``(1/n) sum_i exp(-|x_i - z|^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return float(np.mean(np.exp(-_kernel_weights(_points(data), z, sigma))))


def scaling_grid(data, n_sigma: int = 12, k: int = 20) -> np.ndarray:
    """Geometric grid from the median distance to the ``k``-th nearest
    neighbour up to a fifth of the diameter.

    Below the lower end only a handful of points carry the kernel mass and
    the Monte-Carlo integral is too noisy to show the scaling; above the
    upper end curvature and the finite extent of the set take over.
    """
    data = as_dataset(data)
    k = min(k, data.n - 1)
    nn = cKDTree(data.points).query(data.points, k=k + 1)[0][:, k]
    lo, hi = float(np.median(nn)), 0.2 * data.diameter()
    if not lo < hi:
        raise DegenerateGrid(f"no scaling regime: lower end {lo:.3g} >= upper end {hi:.3g}")
    return np.geomspace(lo, hi, n_sigma)


def estimate_intrinsic_dim(data, z, sigma_grid=None) -> float:
    """Least-squares slope of ``log kernel_integral`` against ``log sigma``."""
    if sigma_grid is None:
        sigma_grid = scaling_grid(data)
    s = np.asarray(sigma_grid, dtype=float)
    if s.size < 2 or np.any(s <= 0) or np.unique(s).size < 2:
        raise DegenerateGrid("need at least two distinct positive sigmas")
    vals = np.array([kernel_integral(data, z, v) for v in s])
    if np.any(vals <= 0):
        raise DegenerateGrid("kernel integral underflowed on the grid; sigma too small")
    slope, _ = np.polyfit(np.log(s), np.log(vals), 1)
    return float(slope)


def continuum_entropy(data, z, sigma: float) -> float:
    """``-int g log g dmu`` with ``g = k / int k dmu`` and ``k`` the Gaussian
    kernel at ``z``; ``mu`` is the empirical measure of ``data``.

    Zero for a flat kernel and tends to ``-inf`` as ``sigma -> 0``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a = -_kernel_weights(_points(data), z, sigma)
    shift = a.max()
    e = np.exp(a - shift)
    mean_e = float(e.mean())
    g = e / mean_e
    log_g = (a - shift) - math.log(mean_e)
    return float(-np.mean(g * log_g))
