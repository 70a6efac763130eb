import numpy as np
import pytest
from scipy.optimize import linprog as scipy_linprog

from mpclearn.invariant import max_control_invariant, pre_set
from mpclearn.polytope import (
    GeometryError,
    HPolytope,
    contains,
    is_subset,
    membership_mask,
)
from mpclearn.sampling import sample_states

A2 = np.array([[1.0, 1.0], [0.0, 1.0]])
B2 = np.array([[0.0], [1.0]])
X2 = HPolytope.box([-5.0, -5.0], [5.0, 5.0])
U2 = HPolytope.box([-2.0], [2.0])


def one_step_reachable(A, B, U, S, x):
    """Independent oracle: does some u in U send x into S? One scipy LP."""
    res = scipy_linprog(
        np.zeros(B.shape[1]),
        A_ub=np.vstack([S.C @ B, U.C]),
        b_ub=np.concatenate([S.d - S.C @ A @ x, U.d]) + 1e-9,
        bounds=[(None, None)] * B.shape[1],
        method="highs",
    )
    return res.success


class TestPreSet:
    def test_identity_dynamics_fixed(self):
        A = np.eye(2)
        B = np.zeros((2, 1))
        pre = pre_set(X2, A, B, U2)
        assert is_subset(pre, X2) and is_subset(X2, pre)

    def test_full_input_authority_gives_whole_space(self):
        # A = 0 and B = I with inputs covering the target: every state works
        A = np.zeros((2, 2))
        B = np.eye(2)
        U = HPolytope.box([-6.0, -6.0], [6.0, 6.0])
        pre = pre_set(X2, A, B, U)
        assert pre.nrows == 0
        assert contains(pre, [1e6, -1e6])

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            pre_set(X2, np.eye(3), B2, U2)
        with pytest.raises(ValueError):
            pre_set(X2, A2, np.zeros((2, 2)), U2)

    def test_grid_agrees_with_feasibility_lp_oracle(self):
        pre = pre_set(X2, A2, B2, U2)
        g = np.linspace(-6.0, 6.0, 101)
        pts = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
        claimed = membership_mask(pre, pts, 1e-7)
        for x, inside in zip(pts, claimed):
            assert one_step_reachable(A2, B2, U2, X2, x) == inside


class TestMaxControlInvariant:
    def test_already_invariant_converges_immediately(self):
        res = max_control_invariant(X2, U2, np.eye(2), np.zeros((2, 1)))
        assert res.converged and res.iterations == 1
        assert is_subset(res.c_inf, X2) and is_subset(X2, res.c_inf)

    def test_benchmark_fixed_point(self):
        res = max_control_invariant(X2, U2, A2, B2)
        assert res.converged
        assert is_subset(res.c_inf, X2)
        pre = pre_set(res.c_inf, A2, B2, U2)
        from mpclearn.polytope import intersect

        forward = intersect(pre, X2)
        assert is_subset(forward, res.c_inf, 1e-7)
        assert is_subset(res.c_inf, forward, 1e-7)

    def test_invariance_certificate_on_samples(self):
        # the defining property, point by point: from every sampled member
        # some admissible input keeps the successor inside
        res = max_control_invariant(X2, U2, A2, B2)
        for x in sample_states(res.c_inf, 200, seed=5):
            assert one_step_reachable(A2, B2, U2, res.c_inf, x)

    def test_infeasible_inputs_rejected(self):
        bad_U = HPolytope([[1.0], [-1.0]], [1.0, -2.0])
        with pytest.raises(GeometryError):
            max_control_invariant(X2, bad_U, A2, B2)

    def test_non_convergence_reported(self):
        res = max_control_invariant(X2, U2, A2, B2, max_iter=2)
        assert not res.converged and res.iterations == 2
