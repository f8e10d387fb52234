"""Maximum-total-cost one-to-one assignment between TTDs and subarrays.

``hungarian_max`` returns the exact optimum. Maximization is realized by
negation plus offset in front of a standard minimizing Hungarian routine
(shortest augmenting paths with row/column potentials, the same reduction
semantics as the classic cover-and-adjust loop). Among equally optimal
permutations the lexicographically smallest one is returned, so repeated
runs are reproducible even on degenerate cost matrices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    n: int

    @classmethod
    def from_array(cls, entries) -> "CostMatrix":
        arr = np.asarray(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("cost matrix must be square")
        if not np.all(np.isfinite(arr)):
            raise ValueError("cost matrix must be finite")
        return cls(arr, arr.shape[0])


@dataclass(frozen=True)
class Assignment:
    permutation: np.ndarray  # permutation[p] = assigned column l
    total_cost: float

    def __post_init__(self):
        n = len(self.permutation)
        if sorted(self.permutation.tolist()) != list(range(n)):
            raise ValueError("assignment must be a bijective index map")


def _as_square(C) -> np.ndarray:
    if isinstance(C, CostMatrix):
        return C.entries
    return CostMatrix.from_array(C).entries


def _solve_min(cost: np.ndarray, with_potentials: bool = False):
    """Minimizing Hungarian routine (shortest augmenting paths), O(n^3).

    Returns the row-to-column assignment achieving the exact minimum and,
    optionally, the dual potentials (u, v) indexed from 0.
    """
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)      # p[j]: row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    if with_potentials:
        return row_to_col, u[1:], v[1:]
    return row_to_col


def _max_value(C: np.ndarray) -> float:
    """Optimal maximum total cost of a square matrix."""
    if C.shape[0] == 0:
        return 0.0
    perm = _solve_min(np.max(C) - C)
    return float(np.sum(C[np.arange(C.shape[0]), perm]))


def optimal_permutation(C) -> np.ndarray:
    """Fast path: one exact maximizing permutation, no tie refinement.

    Deterministic for a given matrix; used in inner optimization loops
    where the lexicographic tie policy of hungarian_max is not needed.
    """
    C = _as_square(C)
    return _solve_min(np.max(C) - C)


def hungarian_max(C) -> Assignment:
    """Exact maximum-total-cost assignment.

    Ties are resolved to the lexicographically smallest permutation by
    fixing rows in order and keeping, per row, the smallest column that
    still achieves the optimal completion. Candidate columns are filtered
    by complementary slackness (an edge in any optimal assignment has zero
    reduced cost under the dual potentials), so on non-degenerate matrices
    only the incumbent column survives and no extra solves are needed.
    """
    C = _as_square(C)
    n = C.shape[0]
    work = np.max(C) - C                # minimize the offset-negated matrix
    cols = list(range(n))               # kept ascending
    perm = np.zeros(n, dtype=int)
    for row in range(n):
        rows_left = range(row, n)
        sub = work[np.ix_(rows_left, cols)]
        sub_perm, u, v = _solve_min(sub, with_potentials=True)
        sub_opt = float(np.sum(sub[np.arange(len(cols)), sub_perm]))
        chosen = cols[sub_perm[0]]
        for j, l in enumerate(cols):
            if l >= chosen:
                break
            if sub[0, j] - u[0] - v[j] != 0.0:
                continue                # nonzero reduced cost: never optimal
            rest = np.delete(np.arange(len(cols)), j)
            completion = _min_value(sub[1:][:, rest])
            if float(sub[0, j]) + completion == sub_opt:
                chosen = l
                break
        perm[row] = chosen
        cols.remove(chosen)
    total = float(np.sum(C[np.arange(n), perm]))
    return Assignment(perm, total)


def _min_value(C: np.ndarray) -> float:
    if C.shape[0] == 0:
        return 0.0
    perm = _solve_min(C)
    return float(np.sum(C[np.arange(C.shape[0]), perm]))


def hungarian_min(C) -> Assignment:
    """Minimizing counterpart (duality check: equals hungarian_max on -C)."""
    C = _as_square(C)
    result = hungarian_max(-C)
    return Assignment(result.permutation,
                      float(np.sum(C[np.arange(C.shape[0]), result.permutation])))


def brute_force_assignment(C) -> Assignment:
    """Exhaustive maximum over all n! permutations; test oracle for n <= 9.

    Enumeration order is lexicographic and argmax keeps the first maximum,
    so ties resolve to the lexicographically smallest permutation, matching
    hungarian_max.
    """
    C = _as_square(C)
    n = C.shape[0]
    if n > 9:
        raise ValueError("brute force limited to n <= 9")
    perms = np.array(list(itertools.permutations(range(n))), dtype=int)
    costs = C[np.arange(n), perms].sum(axis=1)
    best = int(np.argmax(costs))
    return Assignment(perms[best].copy(), float(costs[best]))
