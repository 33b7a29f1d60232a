"""Property and oracle checks behind ``tsneflow verify``.

Each check returns a :class:`CheckResult`; exceptions raised inside a check
count as failures. ``gradient`` can be swapped out so that a deliberately
broken gradient is caught (mutation sanity).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import affinity_hi as hi
from . import affinity_lo as lo
from . import diagnostics as dg
from . import flow
from . import geometry as geo


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    skipped: bool = False

    def line(self) -> str:
        status = "SKIP" if self.skipped else ("PASS" if self.passed else "FAIL")
        return f"[{status}] {self.name}: {self.detail}"


def random_instance(rng, n):
    """Random symmetric positive ``P`` summing to one and a random planar ``Y``."""
    a = rng.uniform(0.1, 1.0, (n, n))
    p = a + a.T
    np.fill_diagonal(p, 0.0)
    p /= p.sum()
    y = rng.normal(0.0, 1.0, (n, 2))
    return p, y


def kl_extended(p, y) -> np.longdouble:
    """KL in extended precision, written independently of :mod:`flow`."""
    ld = np.longdouble
    p, y = np.asarray(p, dtype=ld), np.asarray(y, dtype=ld)
    n = y.shape[0]
    d2 = ((y[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)
    k = 1 / (1 + d2)
    np.fill_diagonal(k, 0)
    q = k / k.sum()
    off = ~np.eye(n, dtype=bool)
    pv, qv = p[off], q[off]
    nz = pv > 0
    return (pv[nz] * np.log(pv[nz] / qv[nz])).sum()


def fd_gradient(p, y, h=1e-7):
    """Central differences of :func:`kl_extended`."""
    h = np.longdouble(h)
    y = np.asarray(y, dtype=np.longdouble)
    g = np.zeros(y.shape)
    for i in range(y.shape[0]):
        for k in range(2):
            yp, ym = y.copy(), y.copy()
            yp[i, k] += h
            ym[i, k] -= h
            g[i, k] = float((kl_extended(p, yp) - kl_extended(p, ym)) / (2 * h))
    return g


def five_point_derivative(t, f):
    """Fourth-order finite differences on a uniform grid (one-sided at ends)."""
    t, f = np.asarray(t), np.asarray(f)
    h = float(np.mean(np.diff(t)))
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    d[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    d[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    d[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    d[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return d


def forced_affinity(n):
    """Affinity for ``n = 2``: the single neighbour gets all the mass."""
    if n != 2:
        raise ValueError("only defined for n = 2")
    return hi.SymAffinity(np.array([[0.0, 0.5], [0.5, 0.0]]))


def check_gradient_oracle(gradient=flow.kl_gradient, trials=50, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(3, 17))
        p, y = random_instance(rng, n)
        g = gradient(p, y)
        fd = fd_gradient(p, y)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.abs(fd))))
    return CheckResult("gradient-oracle", worst <= 1e-6,
                       f"max per-entry rel err {worst:.2e} over {trials} instances (tol 1e-6)")


def check_calibration(data, perps):
    if data.n == 2:
        return CheckResult("perplexity-calibration", True,
                           "degenerate interval (1, 1): no admissible perplexity for n=2",
                           skipped=True)
    worst = 0.0
    for perp in perps:
        cond = hi.calibrate(data, perp, tol=1e-10)
        worst = max(worst, float(np.max(np.abs(cond.perplexities() / perp - 1))))
    return CheckResult("perplexity-calibration", worst <= 1e-8,
                       f"max rel perplexity err {worst:.2e} over perp={list(perps)} (tol 1e-8)")


def check_entropy_shape(data, rows=10):
    if data.n == 2:
        return CheckResult("entropy-monotone-and-limits", True,
                           "degenerate interval: entropy is identically 0 for n=2", skipped=True)
    x = data.points
    n = data.n
    diam = data.diameter()
    ok = True
    notes = []
    for i in range(min(rows, n)):
        d2 = np.sum((np.delete(x, i, axis=0) - x[i]) ** 2, axis=1)
        d = np.sqrt(d2)
        grid = np.geomspace(0.5 * d.min(), diam, 50)
        hs = np.array([hi._row_probs_entropy(d2, s)[1] for s in grid])
        if not np.all(np.diff(hs) > 0):
            ok = False
            notes.append(f"row {i} not strictly increasing")
        h_big = hi._row_probs_entropy(d2, 1e6 * diam)[1]
        if h_big < math.log(n - 1) - 1e-6:
            ok = False
            notes.append(f"row {i} large-sigma limit {h_big}")
        ds = np.sort(d)
        if ds[1] - ds[0] > 0:
            h_small = hi._row_probs_entropy(d2, 1e-6 * (ds[1] - ds[0]))[1]
            if h_small > 1e-6:
                ok = False
                notes.append(f"row {i} small-sigma limit {h_small}")
    return CheckResult("entropy-monotone-and-limits", ok, "; ".join(notes) or f"{min(rows, n)} rows")


def check_affinity_bounds(data, perp):
    if data.n == 2:
        return CheckResult("affinity-bounds", True, "degenerate interval for n=2", skipped=True)
    cond = hi.calibrate(data, perp)
    rep = hi.cp_bound_report(cond, data)
    return CheckResult("affinity-bounds", True,
                       f"(n-1)p_j|i in [{rep.cond_ratio_min:.3g}, {rep.cond_ratio_max:.3g}], "
                       f"log C_p = {rep.log_cp:.4g}")


def check_qprime_bound(trace=None, trials=1000, seed=1):
    rng = np.random.default_rng(seed)
    worst = math.inf
    for _ in range(trials):
        n = int(rng.integers(3, 65))
        y = rng.normal(size=(n, 2)) * rng.uniform(0.01, 100.0)
        v, b, _ = lo.qprime_sq_sum_check(y)
        worst = min(worst, v / b)
    snaps = 0
    if trace is not None:
        n = trace.final_state.n
        b = lo.qprime_sq_bound(n) if n >= 3 else 0.0
        vals = np.asarray(trace.qprime_sq)
        snaps = vals.size
        worst = min(worst, float(np.min(vals / b)) if n >= 3 else worst)
    return CheckResult("qprime-square-bound", worst >= 1.0,
                       f"min value/bound {worst:.3g} over {trials} random + {snaps} snapshots")


def check_derivative_bound(trials=1000, seed=2):
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(trials):
        n = int(rng.integers(3, 33))
        p, y = random_instance(rng, n)
        y *= rng.uniform(0.01, 10.0)
        bound = dg.derivative_upper_bound(p, y, check=False)
        worst = max(worst, dg.pairwise_sq_sum_derivative(p, y) - bound)
    return CheckResult("derivative-upper-bound", worst <= 1e-12,
                       f"max (dS/dt - bound) {worst:.3g} over {trials} instances")


def check_trace(trace, n):
    arr = trace.as_arrays()
    com = float(np.max(np.hypot(arr["com_x"], arr["com_y"])))
    step_kl = np.asarray(trace.step_kl)
    rise = float(np.max(np.diff(step_kl))) if step_kl.size > 1 else 0.0
    out = [
        CheckResult("center-of-mass", com <= 1e-9, f"max |com| {com:.2e} (tol 1e-9)"),
        CheckResult("kl-monotone", rise <= 1e-12,
                    f"max per-step KL rise {rise:.2e} (tol 1e-12), {trace.halvings} halved steps"),
    ]
    t = arr["t"]
    if t.size >= 5 and np.allclose(np.diff(t), np.diff(t)[0], rtol=1e-8):
        fd = five_point_derivative(t, arr["S"])
        an = arr["dSdt_analytic"]
        scale = np.abs(an)
        err = float(np.max(np.abs(fd - an) / np.where(scale > 0, scale, 1.0)))
        out.append(CheckResult("pairwise-sum-derivative", err <= 1e-5,
                               f"max rel err vs finite differences {err:.2e} (tol 1e-5)"))
    else:
        out.append(CheckResult("pairwise-sum-derivative", True,
                               "needs >= 5 uniformly spaced records", skipped=True))
    finite = bool(np.all(np.isfinite(arr["max_norm"])))
    out.append(CheckResult("boundedness", finite,
                           f"max |y_i| at end {arr['max_norm'][-1]:.4g}, finite={finite}"))
    return out


def check_w1(seed=3):
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(20):
        n = int(rng.integers(2, 65))
        a, b, c = (rng.normal(size=(n, 2)) for _ in range(3))
        ab = geo.w1_exact(a, b).distance
        ok &= geo.w1_exact(a, a).distance == 0.0
        ok &= abs(ab - geo.w1_exact(b, a).distance) <= 1e-12
        ok &= ab <= geo.w1_exact(a, c).distance + geo.w1_exact(c, b).distance + 1e-12
        v = rng.normal(size=2)
        ok &= abs(geo.w1_exact(a, a + v).distance - np.linalg.norm(v)) <= 1e-12
    return CheckResult("w1-metric", bool(ok), "identity, symmetry, triangle, translation on 20 clouds")


def check_intrinsic_dim(n=5000):
    c = geo.sample(geo.ManifoldSpec("circle", seed=11), n)
    s = geo.sample(geo.ManifoldSpec("sphere", seed=12), n)
    mc = geo.estimate_intrinsic_dim(c, c.points[0])
    ms = geo.estimate_intrinsic_dim(s, s.points[0])
    ok = abs(mc - 1.0) <= 0.2 and abs(ms - 2.0) <= 0.3
    return CheckResult("kernel-integral-scaling", ok, f"circle slope {mc:.3f}, sphere slope {ms:.3f}")


def check_continuum_entropy(n=5000, sigma=0.3):
    spec = geo.ManifoldSpec("circle", seed=21)
    x = geo.sample(spec, n).points
    ref = geo.sample(spec, 4 * n, seed=22).points
    gaps = []
    for i in range(5):
        d2 = np.sum((np.delete(x, i, axis=0) - x[i]) ** 2, axis=1)
        h = hi._row_probs_entropy(d2, sigma)[1]
        gaps.append(abs(geo.continuum_entropy(ref, x[i], sigma) - (h - math.log(n))))
    sig = np.geomspace(0.2, 0.005, 12)
    div = [-geo.continuum_entropy(ref, x[0], s) for s in sig]
    ok = max(gaps) <= 0.1 and bool(np.all(np.diff(div) > 0))
    return CheckResult("continuum-entropy", ok,
                       f"max discrete/continuum gap {max(gaps):.3g} (tol 0.1); "
                       f"divergence trend {'ok' if np.all(np.diff(div) > 0) else 'broken'}")


def run_all(data, perp, opts, seed=0, gradient=flow.kl_gradient, log=print):
    """Run every check; returns the list of results."""
    results = []

    def add(fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            res = fn(*a, **kw)
        except Exception as exc:  # a raised check is a failed check
            res = CheckResult(fn.__name__.replace("check_", "").replace("_", "-"),
                              False, f"raised {type(exc).__name__}: {exc}")
        for r in res if isinstance(res, list) else [res]:
            r.detail += f" [{time.perf_counter() - t0:.1f}s]"
            results.append(r)
            log(r.line())

    add(check_gradient_oracle, gradient)
    add(check_calibration, data, [perp])
    add(check_entropy_shape, data)
    add(check_affinity_bounds, data, perp)

    def check_flow_trajectory():
        p = forced_affinity(2) if data.n == 2 else hi.symmetrize(hi.calibrate(data, perp))
        trace = flow.integrate(p, flow.initial_embedding(data.n, seed), opts, gradient=gradient)
        return check_trace(trace, data.n) + [check_qprime_bound(trace)]

    add(check_flow_trajectory)
    add(check_derivative_bound)
    add(check_w1)
    add(check_intrinsic_dim)
    add(check_continuum_entropy)
    return results
