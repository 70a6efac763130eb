"""Finite-horizon linear MPC as a dense condensed QP.

The state trajectory is eliminated through the dynamics, leaving a QP in
the stacked input sequence whose linear term and constraint offsets are
affine in the initial state. Solving it gives the receding-horizon control
law u*(x); differentiating its KKT system in x gives the exact law
gradient on the interior of each affine piece.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .polytope import HPolytope
from .qp import ACT_TOL, DegenerateActiveSetError, QpSolution, QpStatus, solve_qp

_PSD_TOL = 1e-9


class MpcInfeasibleError(RuntimeError):
    """No admissible input sequence exists from the given state."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        super().__init__(f"MPC problem infeasible from state {self.x.tolist()}")


@dataclass(frozen=True)
class LinearSystem:
    """Discrete-time dynamics x+ = A x + B u."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows but the state dimension is {A.shape[0]}")
        A.flags.writeable = False
        B.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def simulate_step(system: LinearSystem, x, u) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if x.size != system.n or u.size != system.m:
        raise ValueError(f"expected state/input of sizes {system.n}/{system.m}")
    return system.A @ x + system.B @ u


def _check_weight(M, size, name, definite: bool) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {M.shape}")
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    eig_min = float(np.linalg.eigvalsh(M).min())
    if definite and eig_min <= _PSD_TOL:
        raise ValueError(f"{name} must be positive definite (min eigenvalue {eig_min:.2e})")
    if not definite and eig_min < -_PSD_TOL:
        raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {eig_min:.2e})")
    M.flags.writeable = False
    return M


@dataclass(frozen=True)
class MpcProblem:
    """Horizon problem data: dynamics, quadratic weights, constraint sets."""

    system: LinearSystem
    Q: np.ndarray
    R: np.ndarray
    Q_N: np.ndarray
    horizon: int
    X: HPolytope
    U_set: HPolytope

    def __post_init__(self):
        n, m = self.system.n, self.system.m
        object.__setattr__(self, "Q", _check_weight(self.Q, n, "Q", definite=False))
        object.__setattr__(self, "Q_N", _check_weight(self.Q_N, n, "Q_N", definite=False))
        object.__setattr__(self, "R", _check_weight(self.R, m, "R", definite=True))
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.X.dim != n:
            raise ValueError(f"state set is {self.X.dim}-dimensional, expected {n}")
        if self.U_set.dim != m:
            raise ValueError(f"input set is {self.U_set.dim}-dimensional, expected {m}")

    def to_dict(self) -> dict:
        return {
            "A": self.system.A.tolist(),
            "B": self.system.B.tolist(),
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "Q_N": self.Q_N.tolist(),
            "N": self.horizon,
            "X": self.X.to_dict(),
            "U": self.U_set.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MpcProblem":
        try:
            return cls(
                system=LinearSystem(np.asarray(data["A"], dtype=float), np.asarray(data["B"], dtype=float)),
                Q=np.asarray(data["Q"], dtype=float),
                R=np.asarray(data["R"], dtype=float),
                Q_N=np.asarray(data["Q_N"], dtype=float),
                horizon=int(data["N"]),
                X=HPolytope.from_dict(data["X"]),
                U_set=HPolytope.from_dict(data["U"]),
            )
        except KeyError as exc:
            raise ValueError(f"problem description misses field {exc}") from exc


def problem_hash(problem: MpcProblem) -> str:
    """Stable fingerprint binding datasets and trained surrogates to a problem."""
    canon = json.dumps(problem.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def two_dim_benchmark() -> MpcProblem:
    """Double-integrator benchmark: box state/input sets, horizon 3."""
    system = LinearSystem(np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.0], [1.0]]))
    return MpcProblem(
        system=system,
        Q=np.eye(2),
        R=np.array([[10.0]]),
        Q_N=np.eye(2),
        horizon=3,
        X=HPolytope.box([-5.0, -5.0], [5.0, 5.0]),
        U_set=HPolytope.box([-2.0], [2.0]),
    )


@dataclass(frozen=True)
class CondensedQp:
    """min over U of 0.5 U'HU + x'FU  s.t.  G U <= w + S x.

    The objective equals the horizon cost along the rolled-out trajectory
    up to a term constant in U. Constraint rows are the state rows for
    steps 1..N followed by the input rows for steps 0..N-1.
    """

    H: np.ndarray
    F: np.ndarray
    G: np.ndarray
    w: np.ndarray
    S: np.ndarray
    n: int
    m: int
    horizon: int

    def __post_init__(self):
        for arr in (self.H, self.F, self.G, self.w, self.S):
            arr.flags.writeable = False
        if not (self.G.shape[0] == self.w.shape[0] == self.S.shape[0]):
            raise ValueError("constraint row counts disagree")


def condense(problem: MpcProblem) -> CondensedQp:
    """Eliminate the states of the horizon problem through the dynamics."""
    A, B = problem.system.A, problem.system.B
    n, m, N = problem.system.n, problem.system.m, problem.horizon

    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])

    # reach[k] maps the stacked input sequence to x(k)
    reach = []
    for k in range(N + 1):
        Gk = np.zeros((n, N * m))
        for j in range(k):
            Gk[:, j * m : (j + 1) * m] = powers[k - 1 - j] @ B
        reach.append(Gk)

    R_bar = np.kron(np.eye(N), problem.R)
    H = 2.0 * R_bar.copy()
    F = np.zeros((n, N * m))
    for k in range(1, N + 1):
        Qk = problem.Q_N if k == N else problem.Q
        H += 2.0 * reach[k].T @ Qk @ reach[k]
        F += 2.0 * powers[k].T @ Qk @ reach[k]
    H = 0.5 * (H + H.T)

    g_blocks, w_blocks, s_blocks = [], [], []
    for k in range(1, N + 1):
        g_blocks.append(problem.X.C @ reach[k])
        w_blocks.append(problem.X.d)
        s_blocks.append(-problem.X.C @ powers[k])
    for k in range(N):
        sel = np.zeros((m, N * m))
        sel[:, k * m : (k + 1) * m] = np.eye(m)
        g_blocks.append(problem.U_set.C @ sel)
        w_blocks.append(problem.U_set.d)
        s_blocks.append(np.zeros((problem.U_set.nrows, n)))

    return CondensedQp(
        H=H,
        F=F,
        G=np.vstack(g_blocks),
        w=np.concatenate(w_blocks),
        S=np.vstack(s_blocks),
        n=n,
        m=m,
        horizon=N,
    )


@dataclass(frozen=True)
class ControlSolution:
    """Optimal input sequence at one state, with its KKT certificate data."""

    status: QpStatus
    u_seq: np.ndarray | None = None
    u0: np.ndarray | None = None
    active_set: tuple = ()
    multipliers: np.ndarray | None = None
    on_boundary: bool = False


def qp_solve(qp: CondensedQp, x, act_tol: float = ACT_TOL) -> ControlSolution:
    """Solve the condensed QP at state x; optimum is KKT-certified."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != qp.n:
        raise ValueError(f"state must have dimension {qp.n}")
    sol: QpSolution = solve_qp(qp.H, qp.F.T @ x, qp.G, qp.w + qp.S @ x, act_tol=act_tol)
    if sol.status is QpStatus.INFEASIBLE:
        return ControlSolution(QpStatus.INFEASIBLE)
    return ControlSolution(
        status=QpStatus.OPTIMAL,
        u_seq=sol.z,
        u0=sol.z[: qp.m].copy(),
        active_set=sol.active_set,
        multipliers=sol.multipliers,
        on_boundary=sol.on_boundary,
    )


def control_law(qp: CondensedQp, x, act_tol: float = ACT_TOL) -> np.ndarray:
    """First input of the optimal sequence; raises when x is infeasible."""
    sol = qp_solve(qp, x, act_tol=act_tol)
    if sol.status is QpStatus.INFEASIBLE:
        raise MpcInfeasibleError(x)
    return sol.u0


def sensitivity(qp: CondensedQp, sol: ControlSolution, x) -> np.ndarray:
    """Exact law gradient du*/dx from the KKT system of the active set.

    Weakly active constraints are kept in the system, which selects one
    consistent side whenever x sits on a boundary between affine pieces.
    """
    if sol.status is not QpStatus.OPTIMAL:
        raise ValueError("sensitivity requires an optimal solution")
    active = list(sol.active_set)
    if not active:
        dU = np.linalg.solve(qp.H, -qp.F.T)
        return dU[: qp.m].copy()
    Ga = qp.G[active]
    k = len(active)
    K = np.block([[qp.H, Ga.T], [Ga, np.zeros((k, k))]])
    rhs = np.vstack([-qp.F.T, qp.S[active]])
    try:
        dUdl = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateActiveSetError(active) from None
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > 1e12:
        raise DegenerateActiveSetError(active)
    return dUdl[: qp.m].copy()


def closed_loop(system: LinearSystem, controller, x0, steps: int):
    """Roll the system forward under an arbitrary state-feedback controller.

    Returns (states, inputs) with shapes (steps+1, n) and (steps, m).
    Constraint violations are the caller's concern; nothing is raised.
    """
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != system.n:
        raise ValueError(f"initial state must have dimension {system.n}")
    states = [x.copy()]
    inputs = []
    for _ in range(steps):
        u = np.asarray(controller(states[-1]), dtype=float).ravel()
        inputs.append(u)
        states.append(simulate_step(system, states[-1], u))
    return np.asarray(states), np.asarray(inputs)


def mpc_controller(qp: CondensedQp, act_tol: float = ACT_TOL):
    """The exact MPC law as a plain state -> input callable."""

    def law(x):
        return control_law(qp, x, act_tol=act_tol)

    return law
