"""Halfspace polytopes and the geometric predicates built on the LP kernel.

A polytope is stored as {x : C x <= d} with every row of C scaled to unit
Euclidean norm, so offsets and tolerances are comparable across rows.
Instances are immutable; the underlying arrays are write-protected.
"""

from __future__ import annotations

import warnings

import numpy as np

from .linprog import LP_FEAS_TOL, LpOutcome, LpStatus, solve_inequality_lp

#: default tolerance for geometric predicates (containment, set equality)
GEO_TOL = 1e-7

#: default cap on intermediate rows during Fourier-Motzkin elimination
FM_ROW_CAP = 10_000


class GeometryError(RuntimeError):
    """A geometric operation failed (empty, unbounded or degenerate input)."""


class ProjectionLimitError(GeometryError):
    """Fourier-Motzkin elimination exceeded the intermediate row cap."""


class HPolytope:
    """Polytope in halfspace form, rows normalized on construction.

    A zero-row instance represents the whole space.
    """

    __slots__ = ("C", "d")

    def __init__(self, C, d, normalize: bool = True):
        C = np.array(C, dtype=float, ndmin=2)
        d = np.atleast_1d(np.asarray(d, dtype=float)).ravel()
        if C.size == 0:
            C = C.reshape(0, C.shape[1] if C.ndim == 2 and C.shape[1] else 0)
        if C.shape[0] != d.shape[0]:
            raise ValueError(f"{C.shape[0]} constraint rows but {d.shape[0]} offsets")
        if normalize and C.shape[0]:
            norms = np.linalg.norm(C, axis=1)
            if np.any(norms < 1e-12):
                raise ValueError("constraint row with zero norm")
            C = C / norms[:, None]
            d = d / norms
        self.C = C
        self.d = d
        self.C.flags.writeable = False
        self.d.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.C.shape[1]

    @property
    def nrows(self) -> int:
        return self.C.shape[0]

    @classmethod
    def box(cls, lower, upper) -> "HPolytope":
        """Axis-aligned box {lower <= x <= upper}."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("lower and upper bounds differ in length")
        n = lower.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def to_dict(self) -> dict:
        return {"C": self.C.tolist(), "d": self.d.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "HPolytope":
        return cls(np.asarray(data["C"], dtype=float), np.asarray(data["d"], dtype=float))

    def __repr__(self) -> str:
        return f"HPolytope(rows={self.nrows}, dim={self.dim})"


def _check_dim(P: HPolytope, other_dim: int, what: str) -> None:
    if P.dim != other_dim:
        raise ValueError(f"{what}: polytope is {P.dim}-dimensional, got {other_dim}")


def lp_solve(objective, P: HPolytope, sense: str = "max", feas_tol: float = LP_FEAS_TOL) -> LpOutcome:
    """Global optimum of a linear objective over P."""
    c = np.asarray(objective, dtype=float).ravel()
    _check_dim(P, c.size, "lp_solve")
    return solve_inequality_lp(c, P.C, P.d, sense=sense, feas_tol=feas_tol)


def contains(P: HPolytope, x, tol: float = GEO_TOL) -> bool:
    """True iff C x <= d + tol componentwise."""
    x = np.asarray(x, dtype=float).ravel()
    _check_dim(P, x.size, "contains")
    if P.nrows == 0:
        return True
    return bool(np.all(P.C @ x <= P.d + tol))


def membership_mask(P: HPolytope, points, tol: float = GEO_TOL) -> np.ndarray:
    """Vectorized containment over an array of row-stacked points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _check_dim(P, pts.shape[1], "membership_mask")
    if P.nrows == 0:
        return np.ones(pts.shape[0], dtype=bool)
    return np.all(pts @ P.C.T <= P.d + tol, axis=1)


def is_feasible(P: HPolytope, feas_tol: float = LP_FEAS_TOL) -> bool:
    if P.nrows == 0:
        return True
    return solve_inequality_lp(np.zeros(P.dim), P.C, P.d, feas_tol=feas_tol).status is LpStatus.OPTIMAL


def is_subset(P: HPolytope, Q: HPolytope, tol: float = GEO_TOL) -> bool:
    """True iff every point of P satisfies every row of Q.

    Decided one Q-row at a time by maximizing the row over P. An infeasible
    P is vacuously a subset; an unbounded row maximum makes the test
    inconclusive and raises.
    """
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if not is_feasible(P):
        return True
    for c_row, offset in zip(Q.C, Q.d):
        out = solve_inequality_lp(c_row, P.C, P.d)
        if out.status is LpStatus.UNBOUNDED:
            raise GeometryError("subset test inconclusive: row maximum unbounded over P")
        if out.value > offset + tol:
            return False
    return True


def remove_redundant(P: HPolytope, tol: float = GEO_TOL) -> HPolytope:
    """Minimal representation of P: drop every row implied by the others.

    Row i is redundant iff max c_i.x over the remaining rows (with the
    test row relaxed by one unit to keep the LP bounded) stays below
    d_i + tol. Rows are examined in order, so duplicate rows keep their
    last occurrence.
    """
    if P.nrows == 0:
        return P
    if not is_feasible(P):
        raise GeometryError("cannot minimize an infeasible polytope")
    C, d = P.C, P.d
    keep = np.ones(P.nrows, dtype=bool)
    for i in range(P.nrows):
        others = keep.copy()
        others[i] = False
        if not others.any():
            continue
        A_test = np.vstack([C[others], C[i : i + 1]])
        b_test = np.concatenate([d[others], [d[i] + 1.0]])
        out = solve_inequality_lp(C[i], A_test, b_test)
        if out.status is LpStatus.INFEASIBLE:
            raise GeometryError("cannot minimize an infeasible polytope")
        if out.value <= d[i] + tol:
            keep[i] = False
    return HPolytope(C[keep], d[keep], normalize=False)


def intersect(P: HPolytope, Q: HPolytope) -> HPolytope:
    """Row-stacked intersection, minimized when the result is feasible."""
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if P.nrows == 0:
        return Q
    if Q.nrows == 0:
        return P
    stacked = HPolytope(np.vstack([P.C, Q.C]), np.concatenate([P.d, Q.d]), normalize=False)
    if not is_feasible(stacked):
        return stacked
    return remove_redundant(stacked)


def _eliminate_coordinate(C: np.ndarray, d: np.ndarray, j: int, tol: float):
    """One Fourier-Motzkin step: drop coordinate j from C x <= d."""
    col = C[:, j]
    pos = np.flatnonzero(col > 1e-10)
    neg = np.flatnonzero(col < -1e-10)
    zero = np.flatnonzero(np.abs(col) <= 1e-10)

    rows = [np.delete(C[zero], j, axis=1)]
    offs = [d[zero]]
    for p in pos:
        alpha = col[p]
        for q in neg:
            beta = -col[q]
            comb = beta * C[p] + alpha * C[q]
            rows.append(np.delete(comb[None, :], j, axis=1))
            offs.append([beta * d[p] + alpha * d[q]])
    C_new = np.vstack(rows) if rows else np.zeros((0, C.shape[1] - 1))
    d_new = np.concatenate([np.asarray(o, dtype=float) for o in offs])

    # combinations can cancel entirely; such rows are either trivial or
    # witness emptiness of the shadow
    norms = np.linalg.norm(C_new, axis=1) if C_new.size else np.zeros(0)
    trivial = norms < 1e-10
    if np.any(trivial & (d_new < -tol)):
        raise GeometryError("projection is empty: contradictory constraint produced")
    return C_new[~trivial], d_new[~trivial]


def project(
    P: HPolytope,
    keep,
    tol: float = GEO_TOL,
    row_cap: int = FM_ROW_CAP,
) -> HPolytope:
    """Orthogonal projection onto the coordinates in `keep`.

    Dropped coordinates are removed one at a time by Fourier-Motzkin
    elimination with redundancy removal after every step. The result's
    columns follow the order given in `keep`.
    """
    keep = list(keep)
    if len(keep) == 0:
        raise ValueError("keep must be a nonempty set of coordinates")
    if len(set(keep)) != len(keep):
        raise ValueError("keep contains duplicate coordinates")
    if any(k < 0 or k >= P.dim for k in keep):
        raise ValueError(f"keep indices out of range for dimension {P.dim}")
    if len(keep) == P.dim:
        raise ValueError("keep must be a strict subset of the coordinates")

    drop = sorted(set(range(P.dim)) - set(keep), reverse=True)
    C, d = P.C.copy(), P.d.copy()
    labels = list(range(P.dim))
    for j in drop:
        pos = labels.index(j)
        C, d = _eliminate_coordinate(C, d, pos, tol)
        labels.pop(pos)
        if C.shape[0] > row_cap:
            raise ProjectionLimitError(
                f"elimination produced {C.shape[0]} rows, above the cap of {row_cap}"
            )
        if C.shape[0]:
            reduced = remove_redundant(HPolytope(C, d), tol=tol)
            C, d = reduced.C.copy(), reduced.d.copy()
    if C.shape[0] == 0:
        return HPolytope(np.zeros((0, len(keep))), np.zeros(0), normalize=False)
    order = [labels.index(k) for k in keep]
    return HPolytope(C[:, order], d, normalize=False)


def chebyshev_center(P: HPolytope, feas_tol: float = LP_FEAS_TOL):
    """Center and radius of the largest ball inscribed in P.

    One LP over (x, r): maximize r subject to C x + r <= d, which is exact
    because the rows of C carry unit norm. Returns (center, radius).
    """
    if P.nrows == 0:
        raise GeometryError("chebyshev center undefined for the whole space")
    n = P.dim
    A = np.hstack([P.C, np.ones((P.nrows, 1))])
    A = np.vstack([A, np.concatenate([np.zeros(n), [-1.0]])])
    b = np.concatenate([P.d, [0.0]])
    c = np.concatenate([np.zeros(n), [1.0]])
    out = solve_inequality_lp(c, A, b, sense="max", feas_tol=feas_tol)
    if out.status is LpStatus.INFEASIBLE:
        raise GeometryError("polytope is empty")
    if out.status is LpStatus.UNBOUNDED:
        raise GeometryError("polytope is unbounded; chebyshev center undefined")
    center, radius = out.point[:n], float(out.value)
    if radius <= feas_tol:
        warnings.warn("polytope is flat: inscribed radius is zero", stacklevel=2)
    return center, radius
