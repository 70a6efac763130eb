"""Surrogate controller metrics and the gradient-data estimation demo.

Two metrics: normalized mean square prediction error on held-out states,
and the quadratic trajectory cost of running a controller in closed loop,
normalized by the squared initial state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, verify_problem_binding
from .mpc import MpcProblem, closed_loop
from .neural import MlpParams, forward
from .polytope import GEO_TOL, HPolytope, contains
from .sampling import sample_states

_X0_NORM_FLOOR = 1e-9


class ZeroInitialStateError(ValueError):
    """The trajectory starts at the origin; its normalized cost is undefined."""


@dataclass(frozen=True)
class NmseResult:
    ratio: float
    db: float
    n_samples: int
    zero_error: bool = False  # set when ratio == 0, db is the -inf sentinel


@dataclass(frozen=True)
class CostResult:
    per_trajectory: np.ndarray
    mean: float
    violations: int
    n_excluded: int = 0


def nmse(predictions, truths) -> NmseResult:
    """mean ||u_hat - u||^2 over mean ||u||^2, also reported in dB."""
    pred = np.atleast_2d(np.asarray(predictions, dtype=float))
    true = np.atleast_2d(np.asarray(truths, dtype=float))
    if pred.shape != true.shape or pred.shape[0] == 0:
        raise ValueError(f"prediction/truth shapes disagree: {pred.shape} vs {true.shape}")
    denom = float(np.mean(np.sum(true**2, axis=1)))
    if denom == 0.0:
        raise ValueError("NMSE undefined: reference inputs are identically zero")
    ratio = float(np.mean(np.sum((pred - true) ** 2, axis=1))) / denom
    if ratio == 0.0:
        return NmseResult(0.0, float("-inf"), pred.shape[0], zero_error=True)
    return NmseResult(ratio, 10.0 * np.log10(ratio), pred.shape[0])


def control_cost(states, inputs, problem: MpcProblem) -> float:
    """Accumulated quadratic cost of a simulated trajectory over x(0)'x(0)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if states.shape[0] != inputs.shape[0] + 1:
        raise ValueError("need one more state than inputs")
    x0 = states[0]
    norm0 = float(x0 @ x0)
    if norm0 < _X0_NORM_FLOOR**2:
        raise ZeroInitialStateError("initial state is numerically zero")
    cost = float(states[-1] @ problem.Q_N @ states[-1])
    for x, u in zip(states[:-1], inputs):
        cost += float(x @ problem.Q @ x) + float(u @ problem.R @ u)
    return cost / norm0


def _count_violations(states, inputs, problem: MpcProblem, tol: float = GEO_TOL) -> int:
    bad = 0
    for x in states[1:]:
        if not contains(problem.X, x, tol):
            bad += 1
    for u in inputs:
        if not contains(problem.U_set, u, tol):
            bad += 1
    return bad


def trajectory_costs(problem: MpcProblem, controller, initial_states, steps: int) -> CostResult:
    """Closed-loop cost sweep; zero initial states are excluded, not fatal."""
    costs = []
    violations = 0
    excluded = 0
    for x0 in np.atleast_2d(np.asarray(initial_states, dtype=float)):
        if float(x0 @ x0) < _X0_NORM_FLOOR**2:
            excluded += 1
            continue
        states, inputs = closed_loop(problem.system, controller, x0, steps)
        costs.append(control_cost(states, inputs, problem))
        violations += _count_violations(states, inputs, problem)
    per = np.asarray(costs)
    mean = float(per.mean()) if per.size else float("nan")
    return CostResult(per, mean, violations, excluded)


def evaluate_surrogate(
    predictor,
    test_ds: Dataset,
    problem: MpcProblem,
    c_inf: HPolytope,
    n_traj: int = 100,
    steps: int = 3,
    seed: int = 0,
):
    """(NmseResult, CostResult) for a surrogate controller.

    `predictor` is trained network parameters or any state -> input
    callable. NMSE uses the test dataset's states and stored inputs only;
    stored gradients are never read. The cost sweep starts from fresh
    hit-and-run states of c_inf.
    """
    verify_problem_binding(test_ds, problem)
    if isinstance(predictor, MlpParams):
        params = predictor
        controller = lambda x: forward(params, x)  # noqa: E731
    elif callable(predictor):
        controller = predictor
    else:
        raise TypeError("predictor must be MlpParams or a callable")

    X = test_ds.states()
    preds = np.asarray([np.asarray(controller(x), dtype=float).ravel() for x in X])
    quality = nmse(preds, test_ds.inputs())

    starts = sample_states(c_inf, n_traj, seed)
    costs = trajectory_costs(problem, controller, starts, steps)
    return quality, costs


@dataclass(frozen=True)
class LsDemoResult:
    estimates: np.ndarray  # (reps, 2) columns: slope, intercept
    diff_means: np.ndarray  # per repetition mean of (value - derivative) samples
    empirical_cov: np.ndarray
    predicted_cov: np.ndarray


def gradient_ls_demo(
    n: int,
    lambda_e: float,
    lambda_v: float,
    l1: float = 0.7,
    l2: float = -0.3,
    reps: int = 10_000,
    seed: int = 0,
) -> LsDemoResult:
    """Scalar affine-law identification with noisy derivative measurements.

    Data per repetition, all at unit excitation x_k = 1:
        u_k  = l1 + l2 + e_k,   e_k ~ N(0, lambda_e)
        u'_k = l1 + v_k,        v_k ~ N(0, lambda_v)
    The noise-weighted least-squares estimate of (l1, l2) is computed from
    its 2x2 normal equations. At unit excitation the estimator covariance
    has the closed form (1/n) [[lv, -lv], [-lv, le+lv]], returned for
    comparison against the Monte Carlo covariance.
    """
    if n < 1 or reps < 1:
        raise ValueError("n and reps must be positive")
    if lambda_e <= 0.0 or lambda_v <= 0.0:
        raise ValueError("noise variances must be positive")
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, np.sqrt(lambda_e), size=(reps, n))
    v = rng.normal(0.0, np.sqrt(lambda_v), size=(reps, n))
    u = l1 + l2 + e
    du = l1 + v

    # normal equations of sum_k (u_k-l1-l2)^2/le + (u'_k-l1)^2/lv
    M = n * np.array(
        [
            [1.0 / lambda_e + 1.0 / lambda_v, 1.0 / lambda_e],
            [1.0 / lambda_e, 1.0 / lambda_e],
        ]
    )
    rhs = np.stack(
        [u.sum(axis=1) / lambda_e + du.sum(axis=1) / lambda_v, u.sum(axis=1) / lambda_e],
        axis=1,
    )
    estimates = np.linalg.solve(M, rhs.T).T

    predicted = (1.0 / n) * np.array([[lambda_v, -lambda_v], [-lambda_v, lambda_e + lambda_v]])
    return LsDemoResult(
        estimates=estimates,
        diff_means=(u - du).mean(axis=1),
        empirical_cov=np.cov(estimates.T, ddof=1),
        predicted_cov=predicted,
    )
