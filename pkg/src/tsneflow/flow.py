"""KL objective, its gradient and the continuous gradient flow.

The flow ``dy_i/dt = -grad_{y_i} C`` is integrated with classic RK4 (or
Euler). A step that raises the KL by more than ``KL_SLACK`` is retried at
half the step size; this controls discretisation error only, since the exact
flow never increases the objective.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .affinity_hi import SymAffinity
from .affinity_lo import EmbeddingState, sq_distances
from .diagnostics import pairwise_sq_sum, pairwise_sq_sum_derivative
from .errors import StepFailure

log = logging.getLogger(__name__)

KL_SLACK = 1e-12
MAX_HALVINGS = 40
INIT_SCALE = 1e-2
TRACE_COLUMNS = ("t", "kl", "com_x", "com_y", "S", "dSdt_analytic",
                 "max_norm", "min_dist", "max_dist")


def _p(p) -> np.ndarray:
    return p.p if isinstance(p, SymAffinity) else np.asarray(p, dtype=float)


def _y(state) -> np.ndarray:
    return state.y if isinstance(state, EmbeddingState) else np.asarray(state, dtype=float)


def kl_divergence(p, state) -> float:
    """``sum_{i != j} p_ij log(p_ij / q_ij)``."""
    pm = _p(p)
    y = _y(state)
    n = y.shape[0]
    off = ~np.eye(n, dtype=bool)
    log_k = -np.log1p(sq_distances(y))
    log_z = math.log(float(np.exp(log_k[off]).sum()))
    pv = pm[off]
    nz = pv > 0
    return float(np.sum(pv[nz] * (np.log(pv[nz]) - log_k[off][nz] + log_z)))


def kl_gradient(p, state) -> np.ndarray:
    """``grad_{y_i} C = 4 sum_j (p_ij - q_ij)(y_i - y_j)/(1 + |y_i - y_j|^2)``.

    Returns the gradient itself, not the flow velocity.
    """
    pm = _p(p)
    y = _y(state)
    k = 1.0 / (1.0 + sq_distances(y))
    np.fill_diagonal(k, 0.0)
    w = (pm - k / k.sum()) * k
    return 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)


@dataclass(frozen=True)
class FlowOptions:
    h: float = 0.1
    t_end: float = 50.0
    method: str = "rk4"
    eta: float = 100.0
    alpha: float = 0.5
    record_every: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step h must be positive")
        if not self.eta > 0:
            raise ValueError("learning rate eta must be positive")
        if not 0 <= self.alpha < 1:
            raise ValueError("momentum alpha must lie in [0, 1)")
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")


def _advance(p, y, h, method, gradient):
    if method == "euler":
        return y - h * gradient(p, y)
    k1 = -gradient(p, y)
    k2 = -gradient(p, y + 0.5 * h * k1)
    k3 = -gradient(p, y + 0.5 * h * k2)
    k4 = -gradient(p, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow_step(p, state: EmbeddingState, h: float, method: str = "rk4",
              gradient=kl_gradient, kl_before: float | None = None) -> EmbeddingState:
    """Advance one step, halving ``h`` while the KL would rise.

    The full step may raise the KL by ``KL_SLACK`` (rounding); a halved
    retry must not raise it at all. The returned state's ``t`` reflects the
    step actually taken.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    y = state.y
    c_old = kl_divergence(p, y) if kl_before is None else kl_before
    slack = KL_SLACK
    for _ in range(MAX_HALVINGS + 1):
        y_new = _advance(p, y, h, method, gradient)
        if np.all(np.isfinite(y_new)) and kl_divergence(p, y_new) <= c_old + slack:
            return EmbeddingState(y_new, state.t + h)
        h *= 0.5
        # A descent direction must strictly help once h is small; without
        # this an ascent direction would creep forward inside the slack.
        slack = 0.0
    raise StepFailure(
        f"KL kept increasing after {MAX_HALVINGS} halvings at t={state.t}",
        t=state.t, kl=c_old,
    )


def discrete_step(p, state: EmbeddingState, prev_state: EmbeddingState | None,
                  eta: float, alpha: float) -> EmbeddingState:
    """Classic update ``Y <- Y - eta grad C + alpha (Y - Y_prev)``.

    Carries no monotonicity guarantee.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    y = state.y
    y_new = y - eta * kl_gradient(p, y)
    if prev_state is not None and alpha:
        y_new = y_new + alpha * (y - prev_state.y)
    return EmbeddingState(y_new, state.t + eta)


def descend(p, init: EmbeddingState, opts: FlowOptions, n_iter: int) -> list[float]:
    """Run ``n_iter`` momentum steps; returns the KL after each one."""
    prev, cur = None, init
    kls = []
    for _ in range(n_iter):
        prev, cur = cur, discrete_step(p, cur, prev, opts.eta, opts.alpha)
        kls.append(kl_divergence(p, cur))
    return kls


def initial_embedding(n: int, seed=None, scale: float = INIT_SCALE) -> EmbeddingState:
    """I.i.d. Gaussian points with std ``scale``, recentred at the origin."""
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, scale, size=(n, 2))
    return EmbeddingState(y - y.mean(axis=0), 0.0)


@dataclass
class FlowTrace:
    """Diagnostics recorded along a trajectory (see ``TRACE_COLUMNS``)."""

    t: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    com: list = field(default_factory=list)
    S: list = field(default_factory=list)
    dSdt: list = field(default_factory=list)
    max_norm: list = field(default_factory=list)
    min_dist: list = field(default_factory=list)
    max_dist: list = field(default_factory=list)
    qprime_sq: list = field(default_factory=list)
    states: list = field(default_factory=list)
    step_kl: list = field(default_factory=list)
    halvings: int = 0
    final_state: EmbeddingState | None = None

    def record(self, p, state: EmbeddingState, kl: float, keep_state: bool) -> None:
        y = state.y
        n = y.shape[0]
        d2 = sq_distances(y)[~np.eye(n, dtype=bool)]
        self.t.append(state.t)
        self.kl.append(kl)
        self.com.append(y.mean(axis=0))
        self.S.append(pairwise_sq_sum(y))
        self.dSdt.append(pairwise_sq_sum_derivative(p, y))
        self.max_norm.append(float(np.sqrt(np.max(np.sum(y * y, axis=1)))))
        self.min_dist.append(float(np.sqrt(d2.min())))
        self.max_dist.append(float(np.sqrt(d2.max())))
        if d2.min() > 0:
            inv = 1.0 / d2
            self.qprime_sq.append(float(np.sum(inv * inv) / inv.sum() ** 2))
        else:
            self.qprime_sq.append(math.nan)
        if keep_state:
            self.states.append(state)

    def rows(self):
        for i in range(len(self.t)):
            yield (self.t[i], self.kl[i], self.com[i][0], self.com[i][1], self.S[i],
                   self.dSdt[i], self.max_norm[i], self.min_dist[i], self.max_dist[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])

    def as_arrays(self) -> dict:
        return {name: np.array([r[k] for r in self.rows()])
                for k, name in enumerate(TRACE_COLUMNS)}


def integrate(p, init: EmbeddingState, opts: FlowOptions, *, gradient=kl_gradient,
              keep_states: bool = False) -> FlowTrace:
    """Integrate the flow from ``init`` to ``opts.t_end``.

    ``init`` is recentred once so the (conserved) centre of mass is the origin.
    Every step's KL is kept in ``step_kl``; diagnostics are recorded every
    ``opts.record_every`` steps and at the final time.
    """
    y0 = init.y - init.y.mean(axis=0)
    state = EmbeddingState(y0, init.t)
    t_end = init.t + opts.t_end
    trace = FlowTrace()
    kl = kl_divergence(p, state)
    trace.step_kl.append(kl)
    trace.record(p, state, kl, keep_states)
    eps = 1e-12 * max(1.0, abs(t_end))
    step = 0
    while t_end - state.t > eps:
        h = min(opts.h, t_end - state.t)
        new = flow_step(p, state, h, opts.method, gradient, kl_before=kl)
        if new.t - state.t < h * (1 - 1e-9):
            trace.halvings += 1
            log.debug("step halved to %g at t=%g", new.t - state.t, state.t)
        state = new
        kl = kl_divergence(p, state)
        trace.step_kl.append(kl)
        step += 1
        if step % opts.record_every == 0:
            trace.record(p, state, kl, keep_states)
    if trace.t[-1] != state.t:
        trace.record(p, state, kl, keep_states)
    trace.final_state = state
    return trace


def integrate_many(p, inits, opts: FlowOptions, max_workers: int | None = None) -> list[FlowTrace]:
    """Independent trajectories, run concurrently (no shared mutable state)."""
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda s: integrate(p, s, opts), inits))
