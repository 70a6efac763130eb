import numpy as np
import pytest
from scipy.optimize import linprog as scipy_linprog

from mpclearn.linprog import LpStatus, solve_inequality_lp
from mpclearn.polytope import (
    GeometryError,
    HPolytope,
    chebyshev_center,
    contains,
    intersect,
    is_subset,
    lp_solve,
    membership_mask,
    project,
    remove_redundant,
)

BOX5 = HPolytope.box([-5.0, -5.0], [5.0, 5.0])


def random_polytope(rng, dim, rows):
    """Random bounded polytope: box plus extra random halfspaces through
    points near the origin, so it always has interior."""
    C = rng.normal(size=(rows, dim))
    d = np.abs(rng.normal(size=rows)) + 0.5
    box = HPolytope.box([-4.0] * dim, [4.0] * dim)
    return HPolytope(np.vstack([C, box.C]), np.concatenate([d, box.d]))


class TestConstruction:
    def test_rows_normalized(self):
        P = HPolytope([[2.0, 0.0], [0.0, 3.0]], [4.0, 9.0])
        assert np.allclose(np.linalg.norm(P.C, axis=1), 1.0)
        assert np.allclose(P.d, [2.0, 3.0])

    def test_zero_row_rejected(self):
        with pytest.raises(ValueError, match="zero norm"):
            HPolytope([[0.0, 0.0]], [1.0])

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError, match="offsets"):
            HPolytope([[1.0, 0.0]], [1.0, 2.0])

    def test_immutability(self):
        with pytest.raises(ValueError):
            BOX5.C[0, 0] = 3.0

    def test_json_round_trip(self):
        data = BOX5.to_dict()
        assert list(data) == ["C", "d"]
        Q = HPolytope.from_dict(data)
        assert np.array_equal(Q.C, BOX5.C) and np.array_equal(Q.d, BOX5.d)


class TestLpSolve:
    def test_box_maximum(self):
        out = lp_solve([1.0, 0.0], BOX5, "max")
        assert out.status is LpStatus.OPTIMAL
        assert out.value == pytest.approx(5.0, abs=1e-9)
        assert out.point[0] == pytest.approx(5.0, abs=1e-9)
        assert contains(BOX5, out.point, 1e-8)

    def test_contradictory_rows_infeasible(self):
        P = HPolytope([[1.0], [-1.0]], [1.0, -2.0])
        assert lp_solve([1.0], P, "max").status is LpStatus.INFEASIBLE

    def test_missing_upper_bound_unbounded(self):
        P = HPolytope([[1.0, 0.0]], [1.0])
        assert lp_solve([1.0, 1.0], P, "max").status is LpStatus.UNBOUNDED

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lp_solve([1.0, 0.0, 0.0], BOX5)

    def test_min_sense(self):
        out = lp_solve([1.0, 0.0], BOX5, "min")
        assert out.value == pytest.approx(-5.0, abs=1e-9)

    def test_agrees_with_scipy_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(120):
            n = rng.integers(1, 4)
            rows = rng.integers(1, 9)
            A = rng.normal(size=(rows, n))
            b = rng.normal(size=rows)
            c = rng.normal(size=n)
            mine = solve_inequality_lp(c, A, b, sense="max")
            ref = scipy_linprog(-c, A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
            if ref.status == 2:
                assert mine.status is LpStatus.INFEASIBLE
            elif ref.status == 3:
                assert mine.status is LpStatus.UNBOUNDED
            else:
                assert mine.status is LpStatus.OPTIMAL
                assert mine.value == pytest.approx(-ref.fun, abs=1e-7)
                assert np.all(A @ mine.point <= b + 1e-8)


class TestContains:
    def test_origin_in_box(self):
        assert contains(BOX5, [0.0, 0.0])

    def test_point_past_tolerance(self):
        tol = 1e-7
        assert not contains(BOX5, [5.0 + 2 * tol, 0.0], tol)

    def test_boundary_point_included(self):
        assert contains(BOX5, [5.0, 0.0], 1e-9)

    def test_membership_mask(self):
        pts = np.array([[0.0, 0.0], [6.0, 0.0], [5.0, 5.0]])
        assert membership_mask(BOX5, pts).tolist() == [True, False, True]


class TestIsSubset:
    def test_nested_boxes(self):
        small = HPolytope.box([-1.0, -1.0], [1.0, 1.0])
        assert is_subset(small, BOX5)
        assert not is_subset(BOX5, small)

    def test_reflexive(self):
        assert is_subset(BOX5, BOX5)

    def test_infeasible_is_vacuous_subset(self):
        empty = HPolytope([[1.0], [-1.0]], [0.0, -1.0])
        assert is_subset(empty, HPolytope.box([-0.1], [0.1]))

    def test_unbounded_row_maximum_raises(self):
        halfplane = HPolytope([[1.0, 0.0]], [1.0])
        with pytest.raises(GeometryError):
            is_subset(halfplane, BOX5)


class TestRemoveRedundant:
    def test_dominated_row_removed(self):
        P = HPolytope(
            np.vstack([BOX5.C, [[1.0, 0.0]]]), np.concatenate([BOX5.d, [7.0]])
        )
        reduced = remove_redundant(P)
        assert reduced.nrows == 4

    def test_minimal_box_unchanged(self):
        reduced = remove_redundant(BOX5)
        assert reduced.nrows == 4
        assert is_subset(reduced, BOX5) and is_subset(BOX5, reduced)

    def test_infeasible_raises(self):
        empty = HPolytope([[1.0], [-1.0]], [0.0, -1.0])
        with pytest.raises(GeometryError):
            remove_redundant(empty)

    def test_kept_rows_are_supporting(self):
        rng = np.random.default_rng(3)
        P = random_polytope(rng, 2, 8)
        reduced = remove_redundant(P)
        for c_row, offset in zip(reduced.C, reduced.d):
            out = lp_solve(c_row, reduced, "max")
            assert out.value == pytest.approx(offset, abs=1e-7)

    def test_grid_membership_oracle(self):
        # membership verdicts of the 12-row polytope and its minimal form
        # must agree on a dense grid
        rng = np.random.default_rng(7)
        P = random_polytope(rng, 2, 8)  # 8 random + 4 box rows = 12
        assert P.nrows == 12
        reduced = remove_redundant(P)
        assert reduced.nrows < P.nrows
        g = np.linspace(-5.0, 5.0, 100)
        grid = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
        assert np.array_equal(membership_mask(P, grid), membership_mask(reduced, grid))

    def test_membership_preserved_on_random_points(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            P = random_polytope(rng, int(rng.integers(2, 4)), 6)
            reduced = remove_redundant(P)
            pts = rng.uniform(-5, 5, size=(200, P.dim))
            assert np.array_equal(membership_mask(P, pts), membership_mask(reduced, pts))


class TestProject:
    def test_box_to_interval(self):
        shadow = project(BOX5, [0])
        assert is_subset(shadow, HPolytope.box([-5.0], [5.0]))
        assert is_subset(HPolytope.box([-5.0], [5.0]), shadow)

    def test_3d_box_to_2d(self):
        box = HPolytope.box([-1.0, -2.0, -3.0], [1.0, 2.0, 3.0])
        shadow = project(box, [0, 1])
        target = HPolytope.box([-1.0, -2.0], [1.0, 2.0])
        assert is_subset(shadow, target) and is_subset(target, shadow)

    def test_keep_order_controls_columns(self):
        box = HPolytope.box([-1.0, -2.0, -3.0], [1.0, 2.0, 3.0])
        shadow = project(box, [2, 0])
        target = HPolytope.box([-3.0, -1.0], [3.0, 1.0])
        assert is_subset(shadow, target) and is_subset(target, shadow)

    def test_invalid_keep_sets(self):
        with pytest.raises(ValueError):
            project(BOX5, [])
        with pytest.raises(ValueError):
            project(BOX5, [0, 1])
        with pytest.raises(ValueError):
            project(BOX5, [0, 0])
        with pytest.raises(ValueError):
            project(BOX5, [5])

    def test_lift_feasibility_oracle(self):
        # a point is in the shadow iff some value of the dropped coordinate
        # completes it to a point of P; the completion test is an
        # independent scipy LP
        rng = np.random.default_rng(19)
        P = random_polytope(rng, 3, 6)
        shadow = project(P, [0, 1])
        pts = rng.uniform(-4.5, 4.5, size=(1000, 2))
        claimed = membership_mask(shadow, pts, 1e-7)
        for point, inside in zip(pts, claimed):
            rest = P.C[:, :2] @ point
            res = scipy_linprog(
                [0.0],
                A_ub=P.C[:, 2:3],
                b_ub=P.d - rest + 1e-9,
                bounds=[(None, None)],
                method="highs",
            )
            assert res.success == inside

    def test_row_cap_raises_resource_error(self):
        from mpclearn.polytope import ProjectionLimitError

        rng = np.random.default_rng(29)
        P = random_polytope(rng, 3, 12)
        with pytest.raises(ProjectionLimitError, match="cap of 4"):
            project(P, [0, 1], row_cap=4)

    def test_monotone_in_the_argument(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            Q = random_polytope(rng, 3, 5)
            extra = rng.normal(size=(2, 3))
            P = HPolytope(np.vstack([Q.C, extra]), np.concatenate([Q.d, np.abs(rng.normal(size=2)) + 0.3]))
            assert is_subset(project(P, [0, 1]), project(Q, [0, 1]), 1e-6)


class TestIntersect:
    def test_nested_boxes(self):
        small = HPolytope.box([-1.0, -1.0], [1.0, 1.0])
        both = intersect(BOX5, small)
        assert is_subset(both, small) and is_subset(small, both)

    def test_self_intersection_is_identity(self):
        both = intersect(BOX5, BOX5)
        assert is_subset(both, BOX5) and is_subset(BOX5, both)

    def test_empty_intersection_detected_by_lp(self):
        left = HPolytope([[1.0, 0.0]], [0.0])
        right = HPolytope([[-1.0, 0.0]], [-1.0])
        both = intersect(left, right)
        assert lp_solve([0.0, 0.0], both).status is LpStatus.INFEASIBLE


class TestChebyshevCenter:
    def test_box(self):
        center, radius = chebyshev_center(BOX5)
        assert np.allclose(center, 0.0, atol=1e-9)
        assert radius == pytest.approx(5.0, abs=1e-9)

    def test_interval(self):
        center, radius = chebyshev_center(HPolytope.box([0.0], [2.0]))
        assert center[0] == pytest.approx(1.0, abs=1e-9)
        assert radius == pytest.approx(1.0, abs=1e-9)

    def test_triangle_equidistant_from_edges(self):
        tri = HPolytope([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], [0.0, 0.0, 1.0])
        center, radius = chebyshev_center(tri)
        distances = tri.d - tri.C @ center  # rows have unit norm
        assert np.allclose(distances, radius, atol=1e-9)
        assert radius > 0

    def test_empty_raises(self):
        empty = HPolytope([[1.0], [-1.0]], [0.0, -1.0])
        with pytest.raises(GeometryError):
            chebyshev_center(empty)

    def test_unbounded_raises(self):
        with pytest.raises(GeometryError):
            chebyshev_center(HPolytope([[1.0, 0.0]], [1.0]))

    def test_flat_polytope_warns(self):
        flat = HPolytope([[1.0], [-1.0]], [1.0, -1.0])
        with pytest.warns(UserWarning, match="flat"):
            center, radius = chebyshev_center(flat)
        assert center[0] == pytest.approx(1.0, abs=1e-8)
        assert radius == pytest.approx(0.0, abs=1e-8)


class TestInvariantProperties:
    def test_mutual_subset_implies_same_membership(self):
        rng = np.random.default_rng(31)
        P = random_polytope(rng, 2, 6)
        Q = remove_redundant(P)
        assert is_subset(P, Q) and is_subset(Q, P)
        pts = rng.uniform(-5, 5, size=(500, 2))
        assert np.array_equal(membership_mask(P, pts), membership_mask(Q, pts))

    def test_lp_optimum_feasible(self):
        rng = np.random.default_rng(37)
        for _ in range(25):
            P = random_polytope(rng, 2, 5)
            out = lp_solve(rng.normal(size=2), P)
            assert out.status is LpStatus.OPTIMAL
            assert contains(P, out.point, 1e-8)
