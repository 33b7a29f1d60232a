"""Student-t embedding affinities and their inverse-square tail proxy.

Every normalizer runs over ordered pairs ``k != l``, so each unordered pair
is counted twice. Halving conventions silently rescale the KL objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundViolated, CoincidentPoints


@dataclass(frozen=True)
class EmbeddingState:
    """``n`` points in the plane at flow time ``t``."""

    y: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError(f"embedding must have shape (n, 2), got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("embedding has non-finite coordinates")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def center_of_mass(self) -> np.ndarray:
        return self.y.mean(axis=0)


def sq_distances(y: np.ndarray) -> np.ndarray:
    diff = y[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def student_kernel(y: np.ndarray) -> np.ndarray:
    """``(1 + |y_i - y_j|^2)^-1`` with a zero diagonal."""
    k = 1.0 / (1.0 + sq_distances(y))
    np.fill_diagonal(k, 0.0)
    return k


def _state_y(state) -> np.ndarray:
    return state.y if isinstance(state, EmbeddingState) else np.asarray(state, dtype=float)


def q_matrix(state) -> np.ndarray:
    k = student_kernel(_state_y(state))
    return k / k.sum()


def q_prime_matrix(state) -> np.ndarray:
    """Inverse-square affinities ``|y_i - y_j|^-2 / sum_{k != l} |y_k - y_l|^-2``."""
    y = _state_y(state)
    d2 = sq_distances(y)
    np.fill_diagonal(d2, np.inf)
    if np.any(d2 == 0.0):
        i, j = np.argwhere(d2 == 0.0)[0]
        raise CoincidentPoints(f"points {i} and {j} coincide", index=(int(i), int(j)))
    k = 1.0 / d2
    return k / k.sum()


def qprime_sq_bound(n: int) -> float:
    """Lower bound ``1 / (4 n (log n)^2)`` on ``sum q'^2`` for planar points."""
    return 1.0 / (4.0 * n * math.log(n) ** 2)


def qprime_sq_sum_check(state, *, strict: bool = True):
    """Return ``(value, bound, margin)`` for ``sum_{i != j} q'_ij^2``.

    The bound is only asserted for ``n >= 3``; for ``n = 2`` it is reported.
    """
    y = _state_y(state)
    n = y.shape[0]
    qp = q_prime_matrix(y)
    value = float(np.sum(qp * qp))
    bound = qprime_sq_bound(n)
    margin = value - bound
    if strict and n >= 3 and margin < -1e-15 * bound:
        raise BoundViolated(
            f"sum q'^2 = {value:.6g} below bound {bound:.6g} (n={n})",
            module="affinity-lo",
        )
    return value, bound, margin
