"""Dense linear programming via the two-phase simplex method.

Every LP in this package has a handful of rows and columns, so a plain
dense tableau beats anything clever. Bland's rule is used for both the
entering and leaving choices, which makes cycling impossible on the
heavily degenerate instances produced by redundancy removal.

Problems are stated in inequality form over free variables:

    max / min  c.x   subject to   A x <= b,   x in R^n.

Internally x is split into a difference of nonnegative parts.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_MAX_PIVOTS = 20_000

#: default feasibility tolerance for declaring phase 1 successful
LP_FEAS_TOL = 1e-8


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpOutcome:
    """Result of a linear program; point and value are set only when optimal."""

    status: LpStatus
    point: np.ndarray | None = None
    value: float | None = None


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] = tab[row] / tab[row, col]
    col_vals = tab[:, col].copy()
    col_vals[row] = 0.0
    tab -= np.outer(col_vals, tab[row])
    basis[row] = col


def _run_simplex(tab: np.ndarray, basis: np.ndarray) -> str:
    """Minimize the cost row of a canonical tableau in place.

    The last tableau row holds reduced costs, the last column the RHS.
    Returns "optimal" or "unbounded".
    """
    m = tab.shape[0] - 1
    ncols = tab.shape[1] - 1
    for _ in range(_MAX_PIVOTS):
        enter = -1
        for j in range(ncols):
            if tab[-1, j] < -_COST_TOL:
                enter = j
                break
        if enter < 0:
            return "optimal"
        # ratio test; ties go to the smallest basic index (Bland)
        best = np.inf
        leave = -1
        for i in range(m):
            a = tab[i, enter]
            if a > _PIVOT_TOL:
                ratio = tab[i, -1] / a
                if ratio < best - 1e-12 or (
                    abs(ratio - best) <= 1e-12
                    and leave >= 0
                    and basis[i] < basis[leave]
                ):
                    best = ratio
                    leave = i
        if leave < 0:
            return "unbounded"
        _pivot(tab, basis, leave, enter)
    raise RuntimeError("simplex exceeded the pivot cap; should be unreachable with Bland's rule")


def solve_inequality_lp(
    objective,
    A,
    b,
    sense: str = "max",
    feas_tol: float = LP_FEAS_TOL,
) -> LpOutcome:
    """Optimize a linear objective over {x : A x <= b} with x free in sign."""
    c = np.asarray(objective, dtype=float).ravel()
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if A.size == 0:
        A = A.reshape(0, c.size)
    if A.ndim != 2 or A.shape[1] != c.size:
        raise ValueError(
            f"objective has {c.size} entries but the constraint matrix has shape {A.shape}"
        )
    if A.shape[0] != b.size:
        raise ValueError(f"{A.shape[0]} constraint rows but {b.size} offsets")
    if sense not in ("max", "min"):
        raise ValueError(f"sense must be 'max' or 'min', got {sense!r}")
    cmin = -c if sense == "max" else c

    m, n = A.shape
    if m == 0:
        if np.all(np.abs(c) <= _COST_TOL):
            return LpOutcome(LpStatus.OPTIMAL, np.zeros(n), 0.0)
        return LpOutcome(LpStatus.UNBOUNDED)

    # Standard form: x = xp - xn, one slack per row, artificials where the
    # RHS is negative after the row flip.
    flip = b < 0
    rows = np.where(flip[:, None], -A, A)
    rhs = np.where(flip, -b, b)
    art_rows = np.flatnonzero(flip)
    n_art = art_rows.size

    ncols = 2 * n + m + n_art
    tab = np.zeros((m + 1, ncols + 1))
    tab[:m, :n] = rows
    tab[:m, n : 2 * n] = -rows
    tab[:m, 2 * n : 2 * n + m] = np.diag(np.where(flip, -1.0, 1.0))
    for k, i in enumerate(art_rows):
        tab[i, 2 * n + m + k] = 1.0
    tab[:m, -1] = rhs

    basis = np.empty(m, dtype=int)
    basis[~flip] = 2 * n + np.flatnonzero(~flip)
    basis[flip] = 2 * n + m + np.arange(n_art)

    if n_art:
        tab[-1, 2 * n + m : ncols] = 1.0
        for i in range(m):
            if basis[i] >= 2 * n + m:
                tab[-1] -= tab[i]
        _run_simplex(tab, basis)  # phase 1 cannot be unbounded
        if tab[-1, -1] < -feas_tol:
            return LpOutcome(LpStatus.INFEASIBLE)
        # drive leftover artificials out of the basis; rows that cannot
        # pivot are redundant and are dropped
        drop = []
        for i in range(m):
            if basis[i] >= 2 * n + m:
                for j in range(2 * n + m):
                    if abs(tab[i, j]) > _PIVOT_TOL:
                        _pivot(tab, basis, i, j)
                        break
                else:
                    drop.append(i)
        if drop:
            keep = [i for i in range(m) if i not in drop]
            tab = np.vstack([tab[keep], tab[-1:]])
            basis = basis[keep]
        tab = np.hstack([tab[:, : 2 * n + m], tab[:, -1:]])
        ncols = 2 * n + m

    m_act = len(basis)
    cost = np.zeros(ncols)
    cost[:n] = cmin
    cost[n : 2 * n] = -cmin
    tab[-1, :ncols] = cost
    tab[-1, -1] = 0.0
    for i in range(m_act):
        cb = cost[basis[i]]
        if cb != 0.0:
            tab[-1] -= cb * tab[i]

    if _run_simplex(tab, basis) == "unbounded":
        return LpOutcome(LpStatus.UNBOUNDED)

    full = np.zeros(ncols)
    full[basis] = tab[:m_act, -1]
    x = full[:n] - full[n : 2 * n]
    return LpOutcome(LpStatus.OPTIMAL, x, float(np.dot(c, x)))
