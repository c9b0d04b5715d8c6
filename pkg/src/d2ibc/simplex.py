"""Dense two-phase simplex for small linear programs.

Solves  minimize c.x  subject to  A x >= b,  x >= 0  on a full tableau.
Bland's rule picks the entering column (lowest index with negative reduced
cost) and breaks ratio-test ties by lowest basis-variable index, which rules
out cycling and makes every solve deterministic.  Intended for problems with
a handful of variables and at most a few thousand constraints.
"""

from __future__ import annotations

import numpy as np

from .errors import LpInfeasibleError, LpUnboundedError

_TOL = 1e-11


def _pivot(tab: np.ndarray, basis: list, row: int, col: int) -> None:
    tab[row] = tab[row] / tab[row, col]
    factor = tab[:, col].copy()
    factor[row] = 0.0
    tab -= np.outer(factor, tab[row])
    basis[row] = col


def _bland_enter(reduced: np.ndarray, allowed: int) -> int:
    neg = np.flatnonzero(reduced[:allowed] < -_TOL)
    return int(neg[0]) if neg.size else -1


def _bland_leave(tab: np.ndarray, basis: list, col: int) -> int:
    positive = np.flatnonzero(tab[:, col] > _TOL)
    if positive.size == 0:
        raise LpUnboundedError("objective is unbounded below")
    ratios = tab[positive, -1] / tab[positive, col]
    best = ratios.min()
    ties = positive[ratios <= best + _TOL]
    # Bland: among minimum-ratio rows, leave the basis variable of lowest index
    return int(min(ties, key=lambda r: basis[r]))


def _run(tab: np.ndarray, basis: list, cost: np.ndarray, allowed: int) -> None:
    while True:
        cb = cost[basis]
        reduced = cost[:-1] - cb @ tab[:, :-1]
        col = _bland_enter(reduced, allowed)
        if col < 0:
            return
        row = _bland_leave(tab, basis, col)
        _pivot(tab, basis, row, col)


def solve_min_ge(c, a, b):
    """Minimize ``c . x`` over ``a @ x >= b``, ``x >= 0``.

    Returns (x, objective value).  Raises LpInfeasibleError or
    LpUnboundedError when the program has no optimum.
    """
    c = np.asarray(c, dtype=float)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = c.shape[0]
    k = a.shape[0]
    if a.shape != (k, n) or b.shape != (k,):
        raise ValueError("inconsistent LP dimensions")

    # Equality form: a x - s = b with s >= 0; flip rows so rhs >= 0.
    lhs = np.hstack([a, -np.eye(k)])
    rhs = b.copy()
    flip = rhs < 0
    lhs[flip] *= -1.0
    rhs[flip] *= -1.0

    # Flipped rows carry a +1 surplus coefficient and can start basic;
    # the remaining rows get artificial variables.
    basis = [0] * k
    art_rows = []
    for r in range(k):
        if flip[r]:
            basis[r] = n + r
        else:
            art_rows.append(r)
    total = n + k + len(art_rows)
    tab = np.zeros((k, total + 1))
    tab[:, : n + k] = lhs
    tab[:, -1] = rhs
    for idx, r in enumerate(art_rows):
        col = n + k + idx
        tab[r, col] = 1.0
        basis[r] = col

    phase1 = np.zeros(total + 1)
    phase1[n + k :] = 1.0
    _run(tab, basis, phase1, allowed=total)
    if phase1[basis] @ tab[:, -1] > 1e-8:
        raise LpInfeasibleError("no feasible point for the given constraints")

    # Drive any zero-level artificials out of the basis where possible.
    for r in range(k):
        if basis[r] >= n + k:
            pivot_col = -1
            for j in range(n + k):
                if abs(tab[r, j]) > _TOL:
                    pivot_col = j
                    break
            if pivot_col >= 0:
                _pivot(tab, basis, r, pivot_col)

    phase2 = np.zeros(total + 1)
    phase2[:n] = c
    _run(tab, basis, phase2, allowed=n + k)

    x = np.zeros(n)
    for r, col in enumerate(basis):
        if col < n:
            x[col] = tab[r, -1]
    return x, float(c @ x)
