"""Exact differentiable ranking.

Soft ranks are computed as the Euclidean projection of theta/epsilon onto
the permutahedron spanned by w = (n, ..., 1).  The projection reduces to a
decreasing isotonic regression of the sorted input minus w, solved by
pool-adjacent-violators; the pooled block structure is kept because it is
exactly the support of the projection's Jacobian, which makes the backward
pass closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, SizeError


@dataclass(frozen=True)
class IsotonicSolution:
    """Least-squares fit under a non-increasing constraint.

    blocks are (start, stop) half-open index ranges over the input order;
    within a block every output entry equals the mean of the corresponding
    inputs, and block values strictly decrease from one block to the next.
    """

    values: np.ndarray
    blocks: tuple

    def min_boundary_gap(self) -> float:
        """Smallest drop between consecutive block values (inf if one block)."""
        if len(self.blocks) < 2:
            return float("inf")
        vals = [self.values[b[0]] for b in self.blocks]
        return float(min(vals[i] - vals[i + 1] for i in range(len(vals) - 1)))


def isotonic_decreasing(y) -> IsotonicSolution:
    """argmin over non-increasing v of sum((v - y)^2), by PAV.

    Adjacent blocks whose running means violate (or tie with) the
    decreasing constraint are merged; a single left-to-right pass with
    backtracking is O(n).
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ShapeError(f"isotonic regression expects a vector, got shape {y.shape}")
    if y.size == 0:
        raise SizeError("isotonic regression of an empty vector")

    # Parallel stacks of block start index, element count, and value sum.
    starts = []
    counts = []
    sums = []
    for i in range(y.size):
        starts.append(i)
        counts.append(1)
        sums.append(float(y[i]))
        # Merge while the previous block mean does not exceed the new one.
        while len(starts) > 1 and sums[-2] * counts[-1] <= sums[-1] * counts[-2]:
            sums[-2] += sums[-1]
            counts[-2] += counts[-1]
            starts.pop()
            counts.pop()
            sums.pop()

    values = np.empty_like(y)
    blocks = []
    for start, count, total in zip(starts, counts, sums):
        values[start:start + count] = total / count
        blocks.append((start, start + count))
    return IsotonicSolution(values=values, blocks=tuple(blocks))


@dataclass(frozen=True)
class Permutahedron:
    """Convex hull of all permutations of the anchor w = (n, ..., 1)."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise SizeError("permutahedron needs n >= 1")

    @property
    def anchor(self) -> np.ndarray:
        return np.arange(self.n, 0, -1, dtype=np.float64)


def _project_sorted(z: np.ndarray, w: np.ndarray):
    """Shared core: returns (projection, descending argsort, isotonic solution)."""
    order = np.argsort(-z, kind="stable")  # ties keep original index order
    zs = z[order]
    sol = isotonic_decreasing(zs - w)
    out = np.empty_like(z)
    out[order] = zs - sol.values
    return out, order, sol


def project_permutahedron(z, w: Permutahedron) -> np.ndarray:
    """Euclidean projection of z onto the permutahedron of w.anchor."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError(f"projection expects a vector, got shape {z.shape}")
    if z.size != w.n:
        raise ShapeError(f"vector of length {z.size} vs permutahedron of size {w.n}")
    out, _, _ = _project_sorted(z, w.anchor)
    return out


@dataclass(frozen=True)
class SoftRankResult:
    """Soft ascending ranks plus the context needed for the exact backward."""

    ranks: np.ndarray
    epsilon: float
    sort_permutation: np.ndarray
    blocks: tuple

    @property
    def n(self) -> int:
        return self.ranks.size

    def pooled_fraction(self) -> float:
        """Fraction of coordinates sitting in non-singleton blocks."""
        pooled = sum(b[1] - b[0] for b in self.blocks if b[1] - b[0] > 1)
        return pooled / self.n


def soft_rank(theta, epsilon: float) -> SoftRankResult:
    """Epsilon-regularized ascending ranks (rank 1 = smallest theta).

    epsilon -> 0 recovers the hard ranks; epsilon -> inf pools every rank
    at (n+1)/2.  The coordinate sum is always n(n+1)/2 because the result
    lies on the permutahedron.
    """
    if not epsilon > 0.0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size == 0:
        raise ShapeError(f"soft_rank expects a non-empty vector, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise DomainError("soft_rank requires finite inputs")
    w = Permutahedron(theta.size).anchor
    ranks, order, sol = _project_sorted(theta / epsilon, w)
    return SoftRankResult(ranks=ranks, epsilon=float(epsilon),
                          sort_permutation=order, blocks=sol.blocks)


def soft_rank_backward(result: SoftRankResult, cotangent) -> np.ndarray:
    """Exact vector-Jacobian product of soft_rank.

    The projection's Jacobian, in the sorted coordinates, is the identity
    minus within-block averaging over the isotonic blocks; it is conjugated
    back through the sort permutation and scaled by 1/epsilon.  At block
    boundaries (measure-zero kinks) this is the one-sided Jacobian implied
    by the computed block structure.
    """
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != result.ranks.shape:
        raise ShapeError(f"cotangent shape {cot.shape} vs ranks shape {result.ranks.shape}")
    u = cot[result.sort_permutation].copy()
    for start, stop in result.blocks:
        u[start:stop] -= u[start:stop].mean()
    grad = np.empty_like(u)
    grad[result.sort_permutation] = u / result.epsilon
    return grad


def soft_rank_kink_distance(theta, epsilon: float) -> float:
    """Distance proxy to the nearest Jacobian discontinuity of soft_rank.

    Small when two inputs nearly tie (sort order about to change) or when
    an isotonic block boundary is nearly active (blocks about to merge).
    Measured in the units of theta.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.size < 2:
        return float("inf")
    z = np.sort(theta)[::-1]
    tie_gap = float(np.min(z[:-1] - z[1:]))
    res = soft_rank(theta, epsilon)
    boundary_gap = IsotonicSolution(
        values=(theta / epsilon)[res.sort_permutation]
        - res.ranks[res.sort_permutation],  # isotonic values = zs - projection
        blocks=res.blocks,
    ).min_boundary_gap()
    return min(tie_gap, boundary_gap * epsilon)


def hard_rank(theta) -> np.ndarray:
    """Exact ascending ranks (1 = smallest), ties broken by original index."""
    theta = np.asarray(theta, dtype=np.float64)
    order = np.argsort(theta, kind="stable")
    ranks = np.empty(theta.size, dtype=np.float64)
    ranks[order] = np.arange(1, theta.size + 1)
    return ranks
