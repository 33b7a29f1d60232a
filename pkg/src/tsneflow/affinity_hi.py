"""Gaussian conditional affinities, perplexity calibration and symmetrization.

Entropies are in nats throughout, so perplexity is ``exp(H)``; this is the
same number as ``2**H_bits``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import (
    BoundViolated,
    BracketFailure,
    DegenerateDistances,
    DuplicatePoints,
    NonFiniteInput,
    PerpOutOfRange,
)

MAX_BRACKET_STEPS = 200
MAX_BISECTIONS = 128
DEFAULT_TOL = 1e-9
TIE_RTOL = 1e-12
DUPLICATE_RTOL = 1e-14


@dataclass(frozen=True)
class Dataset:
    """``n`` distinct finite points in ``R^d`` plus provenance metadata."""

    points: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.array(self.points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise NonFiniteInput(f"points must be a 2-d array, got shape {x.shape}")
        if x.shape[0] < 2:
            raise ValueError(f"need at least 2 points, got {x.shape[0]}")
        bad = ~np.isfinite(x)
        if bad.any():
            i = int(np.argwhere(bad)[0, 0])
            raise NonFiniteInput(f"point {i} has a non-finite coordinate", index=i)
        diam = _diameter(x)
        nn_dist, nn_idx = cKDTree(x).query(x, k=2)
        k = int(np.argmin(nn_dist[:, 1]))
        if diam == 0.0 or nn_dist[k, 1] < DUPLICATE_RTOL * diam:
            # with exact copies the tree may list the twin before the point itself
            j = int(nn_idx[k, 1] if nn_idx[k, 1] != k else nn_idx[k, 0])
            i, j = min(k, j), max(k, j)
            raise DuplicatePoints(f"points {i} and {j} coincide", index=(i, j))
        x.setflags(write=False)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "_diam", diam)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def sq_distances(self) -> np.ndarray:
        return squareform(pdist(self.points, "sqeuclidean"))

    def diameter(self) -> float:
        return self._diam

    def to_csv(self, path) -> None:
        write_csv(path, self.points)

    @classmethod
    def from_csv(cls, path, **meta) -> "Dataset":
        return cls(read_csv(path), meta={"source": str(path), **meta})


def _diameter(x: np.ndarray, chunk: int = 1024) -> float:
    best = 0.0
    for start in range(0, x.shape[0], chunk):
        best = max(best, float(cdist(x[start:start + chunk], x).max()))
    return best


def read_csv(path) -> np.ndarray:
    """Headerless CSV, one point per line."""
    return np.loadtxt(Path(path), delimiter=",", ndmin=2, dtype=float)


def write_csv(path, points) -> None:
    # repr(float) is the shortest string that round-trips
    lines = [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(points)]
    Path(path).write_text("\n".join(lines) + "\n")


def as_dataset(data) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset(data)


@dataclass(frozen=True)
class CondAffinity:
    """Row-stochastic ``rows[i, j] = p_{j|i}`` with a zero diagonal."""

    rows: np.ndarray
    sigmas: np.ndarray
    perp_target: float

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def perplexities(self) -> np.ndarray:
        return np.array([math.exp(shannon_entropy(np.delete(r, i)))
                         for i, r in enumerate(self.rows)])


@dataclass(frozen=True)
class SymAffinity:
    """Joint ``p_ij`` over ordered pairs ``i != j``; sums to one."""

    p: np.ndarray

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def entropy_term(self) -> float:
        """``sum_{i != j} p_ij log p_ij`` (a negative number)."""
        off = self.p[~np.eye(self.n, dtype=bool)]
        return float(np.sum(off * np.log(off)))

    def min_offdiag(self) -> float:
        return float(self.p[~np.eye(self.n, dtype=bool)].min())


def _row_logits(sq_dist_row: np.ndarray, sigma: float) -> np.ndarray:
    return -sq_dist_row / (2.0 * sigma * sigma)


def _row_probs_entropy(sq_dist_row: np.ndarray, sigma: float):
    """Probabilities and entropy of the Gaussian row, shifted by the max logit."""
    a = _row_logits(sq_dist_row, sigma)
    a = a - a.max()
    e = np.exp(a)
    z = e.sum()
    p = e / z
    h = math.log(z) - float(np.dot(p, a))
    return p, max(h, 0.0)


def conditional_row(data, i: int, sigma: float) -> np.ndarray:
    """Conditional affinities ``p_{j|i}`` for all ``j`` (entry ``i`` is 0).

    Computed through a max-shifted softmax, so any ``sigma > 0`` is safe.
    """
    data = as_dataset(data)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = data.points
    d2 = np.sum((x - x[i]) ** 2, axis=1)
    others = np.arange(data.n) != i
    row = np.zeros(data.n)
    row[others] = _row_probs_entropy(d2[others], sigma)[0]
    return row


def shannon_entropy(row) -> float:
    """``-sum p log p`` in nats, with ``0 log 0 = 0``."""
    p = np.asarray(row, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def nearest_tie_count(sq_dist_row: np.ndarray, diam: float) -> int:
    """How many neighbours sit at the minimal distance (the small-sigma limit
    of the perplexity)."""
    d = np.sqrt(sq_dist_row)
    return int(np.sum(d - d.min() <= TIE_RTOL * diam))


def _check_row(d2, i, perp, diam):
    d = np.sqrt(d2)
    if d.max() - d.min() <= TIE_RTOL * max(d.max(), diam):
        raise DegenerateDistances(
            f"all distances from point {i} are equal; entropy does not depend on sigma",
            index=i,
        )
    lo = max(1, nearest_tie_count(d2, diam))
    hi = d2.size
    if not lo < perp < hi:
        raise PerpOutOfRange(
            f"perplexity {perp} outside ({lo}, {hi}) for point {i}", index=i,
            lower=lo, upper=hi,
        )


def _solve_row(d2, i, perp, tol, sigma0):
    target = math.log(perp)

    def h(s):
        return _row_probs_entropy(d2, s)[1]

    s = float(sigma0)
    hs = h(s)
    lo = hi = None
    steps = 0
    if hs < target:
        while hs < target:
            lo = s
            s *= 2.0
            hs = h(s)
            steps += 1
            if steps > MAX_BRACKET_STEPS:
                raise BracketFailure(f"could not bracket sigma for point {i}", index=i)
        hi = s
    else:
        while hs > target:
            hi = s
            s *= 0.5
            hs = h(s)
            steps += 1
            if steps > MAX_BRACKET_STEPS:
                raise BracketFailure(f"could not bracket sigma for point {i}", index=i)
        lo = s
    if lo is None or hi is None:  # sigma0 hit the target exactly
        return s

    best, best_err = s, abs(math.expm1(hs - target))
    if best_err <= tol:
        return best
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(MAX_BISECTIONS):
        mid = math.exp(0.5 * (llo + lhi))
        hm = h(mid)
        err = abs(math.expm1(hm - target))
        if err < best_err:
            best, best_err = mid, err
        if err <= tol:
            break
        if hm < target:
            llo = math.log(mid)
        else:
            lhi = math.log(mid)
    return best


def solve_sigma(data, i: int, perp: float, tol: float = DEFAULT_TOL,
                sigma0: float | None = None) -> float:
    """Bandwidth ``sigma_i`` whose row has perplexity ``perp``.

    Brackets by doubling/halving from ``sigma0`` (default: median distance
    from point ``i``), then bisects in ``log sigma``. The entropy is strictly
    increasing in sigma, so the root is unique.

    Raises
    ------
    DegenerateDistances
        All neighbours of ``i`` are equidistant.
    PerpOutOfRange
        ``perp`` is not in ``(max(1, N_i), n - 1)``.
    """
    data = as_dataset(data)
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = data.points
    others = np.arange(data.n) != i
    d2 = np.sum((x[others] - x[i]) ** 2, axis=1)
    _check_row(d2, i, perp, data.diameter())
    if sigma0 is None:
        sigma0 = float(np.median(np.sqrt(d2)))
    return _solve_row(d2, i, perp, tol, sigma0)


def calibrate(data, perp: float, tol: float = DEFAULT_TOL) -> CondAffinity:
    """Solve every row for ``perp``; errors carry the offending index."""
    data = as_dataset(data)
    n = data.n
    if n - 1 <= 1:
        raise PerpOutOfRange(
            f"no admissible perplexity for n={n}: interval (1, {n - 1}) is empty",
            index=0, lower=1, upper=n - 1,
        )
    d2_all = data.sq_distances()
    diam = math.sqrt(d2_all.max())
    sigma0 = float(np.median(np.sqrt(d2_all[np.triu_indices(n, 1)])))
    rows = np.zeros((n, n))
    sigmas = np.empty(n)
    idx = np.arange(n)
    for i in range(n):
        others = idx != i
        d2 = d2_all[i, others]
        _check_row(d2, i, perp, diam)
        s = _solve_row(d2, i, perp, tol, sigma0)
        sigmas[i] = s
        rows[i, others] = _row_probs_entropy(d2, s)[0]
    rows.setflags(write=False)
    sigmas.setflags(write=False)
    return CondAffinity(rows, sigmas, float(perp))


def perp_from_zeta(zeta: float, n: int) -> float:
    """Perplexity proportional to the sample size, ``zeta * (n - 1)``."""
    if not 0 < zeta < 1:
        raise ValueError(f"zeta must lie in (0, 1), got {zeta}")
    return zeta * (n - 1)


def symmetrize(cond: CondAffinity) -> SymAffinity:
    n = cond.n
    p = (cond.rows + cond.rows.T) / (2.0 * n)
    np.fill_diagonal(p, 0.0)
    p.setflags(write=False)
    return SymAffinity(p)


@dataclass(frozen=True)
class CpBoundReport:
    """Outcome of the uniform affinity comparison check.

    ``log_cp`` is kept alongside ``cp`` since ``cp`` overflows for small
    sigma floors. ``cond_ratio_*`` are min/max of ``(n-1) p_{j|i}`` and
    ``joint_ratio_*`` of ``n(n-1) p_ij``; both should lie in
    ``[1/cp, cp]``. ``joint_doubled_*`` records the looser factor-2 form
    of the joint bound.
    """

    cp: float
    log_cp: float
    sigma_floor: float
    diameter: float
    cond_ratio_min: float
    cond_ratio_max: float
    joint_ratio_min: float
    joint_ratio_max: float
    cond_margin: float
    joint_margin: float
    joint_doubled_lower_holds: bool
    joint_doubled_upper_holds: bool


def cp_bound_report(cond: CondAffinity, data, sigma_floor: float | None = None,
                    p: SymAffinity | None = None) -> CpBoundReport:
    """Check ``C_p^-1/(n-1) <= p_{j|i} <= C_p/(n-1)`` and the joint analogue.

    ``C_p = exp(diam^2 / (2 sigma_floor^2))`` with the empirical diameter.
    Margins are log-space slack (positive means the bound holds).
    """
    data = as_dataset(data)
    n = cond.n
    if sigma_floor is None:
        sigma_floor = float(cond.sigmas.min())
    if sigma_floor > cond.sigmas.min() * (1 + 1e-12):
        raise ValueError("sigma_floor exceeds the smallest calibrated sigma")
    diam = data.diameter()
    log_cp = diam * diam / (2.0 * sigma_floor * sigma_floor)
    cp = math.exp(log_cp) if log_cp < 709.0 else math.inf
    slack = 1e-12 * max(1.0, log_cp)

    off = ~np.eye(n, dtype=bool)
    log_rows = log_conditional_rows(data, cond.sigmas)
    if not np.allclose(np.exp(log_rows), cond.rows, rtol=1e-9, atol=1e-15):
        raise ValueError("cond rows do not match the data and sigmas")
    log_cond = math.log(n - 1) + log_rows[off]
    _assert_within(log_cond, log_cp, slack, off, "conditional")
    if p is not None and not np.allclose(p.p, symmetrize(cond).p, rtol=1e-12, atol=0):
        raise ValueError("p is not the symmetrization of cond")
    log_joint = (np.logaddexp(log_rows, log_rows.T) - math.log(2.0 * n))[off]
    log_joint = log_joint + math.log(n * (n - 1))
    _assert_within(log_joint, log_cp, slack, off, "joint")

    cond_margin = float(log_cp - np.abs(log_cond).max())
    joint_margin = float(log_cp - np.abs(log_joint).max())
    lj_min, lj_max = float(log_joint.min()), float(log_joint.max())
    return CpBoundReport(
        cp=cp,
        log_cp=log_cp,
        sigma_floor=sigma_floor,
        diameter=diam,
        cond_ratio_min=float(np.exp(log_cond.min())),
        cond_ratio_max=float(np.exp(log_cond.max())),
        joint_ratio_min=float(np.exp(lj_min)),
        joint_ratio_max=float(np.exp(lj_max)),
        cond_margin=cond_margin,
        joint_margin=joint_margin,
        joint_doubled_lower_holds=bool(lj_min >= math.log(2.0) - log_cp - slack),
        joint_doubled_upper_holds=bool(lj_max <= math.log(2.0) + log_cp + slack),
    )


def log_conditional_rows(data, sigmas) -> np.ndarray:
    """``log p_{j|i}`` computed without leaving the log domain.

    Far neighbours of a point with a small sigma have affinities below the
    smallest double; their logs are still finite and are what the bound
    check needs. The diagonal is ``-inf``.
    """
    data = as_dataset(data)
    logits = -data.sq_distances() / (2.0 * np.asarray(sigmas, dtype=float)[:, None] ** 2)
    np.fill_diagonal(logits, -np.inf)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def _assert_within(log_ratio, log_cp, slack, off, what):
    bad = np.abs(log_ratio) > log_cp + slack
    if bad.any():
        k = int(np.argmax(bad))
        i, j = np.argwhere(off)[k]
        raise BoundViolated(
            f"{what} affinity ({i}, {j}) outside [1/C_p, C_p] scaling: "
            f"log ratio {log_ratio[k]:.6g}, log C_p {log_cp:.6g}",
            index=(int(i), int(j)), module="affinity-hi",
        )
