"""Maximal control invariant set of a constrained linear system.

The one-step backward operator and its fixed point over the state
constraint set, computed entirely with halfspace algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polytope import (
    GEO_TOL,
    GeometryError,
    HPolytope,
    intersect,
    is_feasible,
    is_subset,
    project,
    remove_redundant,
)


@dataclass(frozen=True)
class InvariantResult:
    c_inf: HPolytope
    iterations: int
    converged: bool


def pre_set(S: HPolytope, A, B, U: HPolytope, tol: float = GEO_TOL) -> HPolytope:
    """States that some admissible input maps into S in one step.

    {x : exists u in U with A x + B u in S}, obtained by stacking the
    constraints in (x, u) space and projecting the input coordinates out.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = S.dim
    m = U.dim
    if A.shape != (n, n):
        raise ValueError(f"A must be {n}x{n}, got {A.shape}")
    if B.shape != (n, m):
        raise ValueError(f"B must be {n}x{m}, got {B.shape}")

    C_top = np.hstack([S.C @ A, S.C @ B])
    C_bot = np.hstack([np.zeros((U.nrows, n)), U.C])
    C = np.vstack([C_top, C_bot])
    d = np.concatenate([S.d, U.d])

    # rows that lost both state and input coefficients are either vacuous
    # or witness emptiness and cannot enter an HPolytope
    norms = np.linalg.norm(C, axis=1)
    degenerate = norms < 1e-12
    if np.any(degenerate & (d < -tol)):
        raise GeometryError("pre-set is empty: target unreachable for every input")
    C, d = C[~degenerate], d[~degenerate]
    if C.shape[0] == 0:
        return HPolytope(np.zeros((0, n)), np.zeros(0), normalize=False)

    stacked = HPolytope(C, d)
    x_only = np.all(np.abs(stacked.C[:, n:]) <= 1e-12, axis=1)
    if np.all(x_only):
        return HPolytope(stacked.C[:, :n], stacked.d)
    return project(stacked, range(n), tol=tol)


def max_control_invariant(
    X: HPolytope,
    U: HPolytope,
    A,
    B,
    max_iter: int = 100,
    tol: float = GEO_TOL,
) -> InvariantResult:
    """Fixed point of S -> pre_set(S) intersect X starting from X.

    The iterates form a decreasing chain by construction; this is checked
    at every step. Convergence means mutual inclusion at `tol`.
    """
    if not is_feasible(X) or not is_feasible(U):
        raise GeometryError("state and input constraint sets must be feasible")
    omega = remove_redundant(X, tol=tol)
    for k in range(1, max_iter + 1):
        pre = pre_set(omega, A, B, U, tol=tol)
        nxt = intersect(pre, X)
        if not is_feasible(nxt):
            raise GeometryError(
                f"iterate {k} became empty: no control invariant subset within tolerance"
            )
        if not is_subset(nxt, omega, tol=tol):
            raise GeometryError(f"iterate {k} is not contained in its predecessor")
        if is_subset(omega, nxt, tol=tol):
            return InvariantResult(nxt, k, True)
        omega = nxt
    return InvariantResult(omega, max_iter, False)
