"""Dense strictly convex QP via a primal active-set method.

Solves  min 0.5 z'Hz + q'z  s.t.  G z <= b  with H positive definite.
The working set grows by blocking constraints and shrinks by dropping the
lowest-index constraint with a negative multiplier, so ties are broken by
index on both sides. Every returned optimum is KKT-certified.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linprog import LpStatus, solve_inequality_lp

#: slack/multiplier threshold below which a constraint counts as active
ACT_TOL = 1e-7

_STEP_TOL = 1e-11
_MULT_TOL = 1e-9
_KKT_TOL = 1e-6


class QpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"


class QpSolverError(RuntimeError):
    """The iteration cap was hit or a linear solve failed; not infeasibility."""


class DegenerateActiveSetError(RuntimeError):
    """The active constraint rows are linearly dependent."""

    def __init__(self, active_set):
        self.active_set = tuple(active_set)
        super().__init__(f"singular KKT system for active set {self.active_set}")


@dataclass(frozen=True)
class QpSolution:
    status: QpStatus
    z: np.ndarray | None = None
    active_set: tuple = ()
    multipliers: np.ndarray | None = None
    on_boundary: bool = False
    iterations: int = 0


def solve_qp(H, q, G, b, act_tol: float = ACT_TOL, max_iter: int | None = None) -> QpSolution:
    """KKT-certified minimizer of a strictly convex inequality QP."""
    H = np.asarray(H, dtype=float)
    q = np.asarray(q, dtype=float).ravel()
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    nv = H.shape[0]
    if H.shape != (nv, nv) or q.size != nv:
        raise ValueError("H and q dimensions disagree")
    if G.size == 0:
        G = G.reshape(0, nv)
    ncon = G.shape[0]
    if G.shape[1] != nv or b.size != ncon:
        raise ValueError("constraint dimensions disagree")
    H = 0.5 * (H + H.T)
    if max_iter is None:
        max_iter = 100 * max(ncon, 1)

    if ncon == 0:
        z = np.linalg.solve(H, -q)
        return QpSolution(QpStatus.OPTIMAL, z, (), np.zeros(0), False, 0)

    start = solve_inequality_lp(np.zeros(nv), G, b)
    if start.status is LpStatus.INFEASIBLE:
        return QpSolution(QpStatus.INFEASIBLE)
    z = start.point.copy()

    working: list[int] = []
    lam_w = np.zeros(0)
    for it in range(1, max_iter + 1):
        # equality-constrained step on the current working set; the second
        # block re-anchors z onto the working constraints against drift
        if working:
            Gw = G[working]
            k = len(working)
            K = np.block([[H, Gw.T], [Gw, np.zeros((k, k))]])
            rhs = np.concatenate([-(H @ z + q), b[working] - Gw @ z])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError as exc:
                raise QpSolverError(f"singular working-set system {working}") from exc
            p, lam_w = sol[:nv], sol[nv:]
        else:
            p = np.linalg.solve(H, -(H @ z + q))
            lam_w = np.zeros(0)

        if np.max(np.abs(p), initial=0.0) <= _STEP_TOL * (1.0 + np.max(np.abs(z), initial=0.0)):
            if lam_w.size == 0 or lam_w.min() >= -_MULT_TOL:
                break
            # drop the smallest constraint index with a negative multiplier
            negatives = [working[i] for i in range(len(working)) if lam_w[i] < -_MULT_TOL]
            working.remove(min(negatives))
            continue

        alpha = 1.0
        blocking = -1
        Gp = G @ p
        slack = b - G @ z
        for i in range(ncon):
            if i in working or Gp[i] <= 1e-12:
                continue
            a_i = max(slack[i] / Gp[i], 0.0)
            if a_i < alpha - 1e-15:
                alpha = a_i
                blocking = i
        z = z + alpha * p
        if blocking >= 0:
            # a blocking row is never in the span of the working set, since
            # those rows satisfy G_w p = 0 while g_blocking . p > 0
            working.append(blocking)
            working.sort()
    else:
        raise QpSolverError(f"active-set iteration cap {max_iter} exceeded (possible cycling)")

    multipliers = np.zeros(ncon)
    for idx, lam in zip(working, lam_w):
        multipliers[idx] = lam

    slack = b - G @ z
    _certify(H, q, G, z, slack, multipliers)
    active = tuple(int(i) for i in np.flatnonzero(slack <= act_tol))
    on_boundary = any(multipliers[i] < act_tol for i in active)
    return QpSolution(QpStatus.OPTIMAL, z, active, multipliers, on_boundary, it)


def _certify(H, q, G, z, slack, multipliers) -> None:
    stationarity = np.max(np.abs(H @ z + q + G.T @ multipliers), initial=0.0)
    primal = np.max(-slack, initial=0.0)
    comp = np.max(np.abs(multipliers * slack), initial=0.0)
    if stationarity > _KKT_TOL or primal > _KKT_TOL or comp > _KKT_TOL:
        raise QpSolverError(
            "KKT certification failed: "
            f"stationarity={stationarity:.2e} primal={primal:.2e} complementarity={comp:.2e}"
        )


def kkt_residuals(H, q, G, b, z, multipliers) -> tuple[float, float, float]:
    """(stationarity, primal, complementarity) residual norms at a candidate."""
    H = np.asarray(H, dtype=float)
    G = np.asarray(G, dtype=float)
    slack = np.asarray(b, dtype=float) - G @ z
    stat = float(np.max(np.abs(H @ z + np.asarray(q, dtype=float) + G.T @ multipliers), initial=0.0))
    primal = float(np.max(-slack, initial=0.0))
    comp = float(np.max(np.abs(multipliers * slack), initial=0.0))
    return stat, primal, comp
