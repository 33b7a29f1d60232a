"""Closed-form quantities for the boundedness analysis of the KL flow.

Covers the pairwise-sum derivative identity and its upper bound, the
explicit distance-ratio constant ``D``, the boundedness radius ``R_n`` and
the sample-size condition under which boundedness is guaranteed.

``D`` and ``R_n`` are exponentials of enormous arguments in practice, so
each has a ``log_`` variant; the plain version returns ``inf`` on overflow.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .affinity_hi import SymAffinity
from .affinity_lo import qprime_sq_sum_check, student_kernel
from .errors import BoundViolated


def _p(p) -> np.ndarray:
    return p.p if isinstance(p, SymAffinity) else np.asarray(p, dtype=float)


def _y(state) -> np.ndarray:
    return state.y if hasattr(state, "y") else np.asarray(state, dtype=float)


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def pairwise_sq_sum(state) -> float:
    """``S = sum_{i != j} |y_i - y_j|^2`` over ordered pairs."""
    y = _y(state)
    n = y.shape[0]
    c = y - y.mean(axis=0)
    return float(2.0 * n * np.sum(c * c))


def pairwise_sq_sum_derivative(p, state) -> float:
    """``dS/dt`` along the flow: ``8n sum_{i != j} (p_ij - q_ij)/(1 + d_ij^2)``.

    Differentiating ``S = 2n sum_i |y_i - c|^2`` against the flow gives the
    prefactor ``8n``; a fixed constant 24 is right only at ``n = 3``.
    """
    y = _y(state)
    k = student_kernel(y)
    q = k / k.sum()
    return float(8.0 * y.shape[0] * np.sum((_p(p) - q) * k))


def derivative_upper_bound(p, state, *, check: bool = True) -> float:
    """``4n (sum p^2 - sum q^2) sum_{k != l} (1 + d_kl^2)^-1``.

    Follows from ``dS/dt = 8n sum (p - q) q * sum K`` and ``pq <= (p^2 + q^2)/2``,
    so its sign alone decides whether ``S`` can grow. With ``check`` the
    derivative is asserted to lie below the bound.
    """
    pm = _p(p)
    y = _y(state)
    n = y.shape[0]
    k = student_kernel(y)
    ksum = k.sum()
    q = k / ksum
    bound = float(4.0 * n * (np.sum(pm * pm) - np.sum(q * q)) * ksum)
    if check:
        deriv = float(8.0 * n * np.sum((pm - q) * k))
        if deriv > bound + 1e-12 * max(1.0, abs(bound)):
            raise BoundViolated(f"dS/dt = {deriv!r} exceeds upper bound {bound!r}")
    return bound


def log_ratio_constant_D(p, c0: float) -> float:
    pm = _p(p)
    off = pm[~np.eye(pm.shape[0], dtype=bool)]
    ent = float(np.sum(off * np.log(off)))
    return 0.5 * math.log(2.0) + (c0 - ent) / (2.0 * float(off.min()))


def ratio_constant_D(p, c0: float) -> float:
    """``sqrt(2) exp((C_0 - sum p log p) / (2 min p))``."""
    return _exp(log_ratio_constant_D(p, c0))


def distance_ratio(state) -> float:
    """Observed ``max_{i != j} d_ij / min_{k != l} d_kl``."""
    d2 = _offdiag_sq(_y(state))
    return float(math.sqrt(d2.max() / d2.min())) if d2.min() > 0 else math.inf


def _offdiag_sq(y):
    n = y.shape[0]
    diff = y[:, None, :] - y[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return d2[~np.eye(n, dtype=bool)]


def log_boundedness_radius(p, c0: float, log_cp: float, n: int) -> float:
    pm = _p(p)
    off = pm[~np.eye(pm.shape[0], dtype=bool)]
    ent = float(np.sum(off * np.log(off)))
    gap = c0 - ent
    if gap == 0.0:
        return 0.5 * math.log(2.0)
    return 0.5 * math.log(2.0) + 0.5 * _exp(log_cp) * n * (n - 1) * gap


def boundedness_radius(p, c0: float, cp: float, n: int) -> float:
    """``sqrt(2) exp((C_p / 2) n (n-1) (C_0 - sum p log p))``."""
    if cp < 1:
        raise ValueError("cp must be >= 1")
    log_cp = math.log(cp) if math.isfinite(cp) else math.inf
    return _exp(log_boundedness_radius(p, c0, log_cp, n))


def theorem_condition(n: int, cp: float) -> bool:
    """``(n - 1) / (log n)^2 >= 8 C_p^2``."""
    if n < 3:
        return False
    return (n - 1) / math.log(n) ** 2 >= 8.0 * cp * cp


def detect_tau(dsdt) -> int | None:
    """Index of the first recorded time with ``dS/dt >= 0``, or ``None``."""
    hits = np.flatnonzero(np.asarray(dsdt) >= 0.0)
    return int(hits[0]) if hits.size else None


def radius_check(trace, log_radius: float) -> dict:
    """Compare ``max |y_i|`` to the radius at every recorded time after tau."""
    tau = detect_tau(trace.dSdt)
    norms = np.asarray(trace.max_norm)
    out = {"tau_index": tau, "checked": 0, "holds": True, "finite": bool(np.all(np.isfinite(norms)))}
    if tau is None:
        return out
    after = norms[tau:]
    with np.errstate(divide="ignore"):
        logs = np.log(after)
    out["checked"] = int(after.size)
    out["holds"] = bool(np.all(logs <= log_radius))
    return out


@dataclass
class TheoryReport:
    """Theory constants for one run. ``None`` in a float slot means overflow;
    the matching ``log_`` field is always finite or ``inf``."""

    C_p: float | None
    D: float | None
    R_n: float | None
    theorem_condition: bool
    qprime_margin: float
    entropy_term: float
    C_0: float
    log_C_p: float
    log_D: float
    log_R_n: float
    tau_index: int | None = None
    radius_holds: bool | None = None
    min_dist_gt_one_throughout: bool | None = None
    observed_distance_ratio: float | None = None
    distance_ratio_below_D: bool | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_finite_or_none(asdict(self)), indent=2, sort_keys=True)


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite_or_none(obj.item())
    return obj


def theory_report(p: SymAffinity, trace, log_cp: float, final_state=None, meta=None) -> TheoryReport:
    """Assemble the report from a calibrated affinity and a flow trace."""
    n = p.n
    c0 = float(trace.kl[0])
    ent = p.entropy_term()
    cp = _exp(log_cp)
    log_d = log_ratio_constant_D(p, c0)
    log_r = log_boundedness_radius(p, c0, log_cp, n)
    final = final_state if final_state is not None else trace.final_state
    _, _, margin = qprime_sq_sum_check(final)
    rc = radius_check(trace, log_r)
    min_gt_one = bool(np.all(np.asarray(trace.min_dist) > 1.0))
    ratio = distance_ratio(final)
    return TheoryReport(
        C_p=cp,
        D=_exp(log_d),
        R_n=_exp(log_r),
        theorem_condition=theorem_condition(n, cp) if n >= 3 else False,
        qprime_margin=margin,
        entropy_term=ent,
        C_0=c0,
        log_C_p=log_cp,
        log_D=log_d,
        log_R_n=log_r,
        tau_index=rc["tau_index"],
        radius_holds=rc["holds"] and rc["finite"],
        min_dist_gt_one_throughout=min_gt_one,
        observed_distance_ratio=ratio,
        distance_ratio_below_D=bool(math.log(ratio) <= log_d) if min_gt_one else None,
        meta=dict(meta or {}),
    )
