import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restora.errors import ConfigError, InfeasibleAssignment
from restora.program import ConvexProgram
from restora.qp import QpSolver, polygonize_program, polygonize_soc, solve


def test_quadratic_projection_onto_box():
    p = ConvexProgram()
    p.add_var("x", 0.0, 1.0)
    p.set_penalty("x", 2.0, 3.0)   # (x - 3)^2
    sol = solve(p)
    assert sol.optimal
    assert sol.values[0] == pytest.approx(1.0, abs=1e-6)


def test_simple_lp():
    p = ConvexProgram()
    p.add_var("x", 0.0, 2.0)
    p.add_linear_cost("x", -1.0)
    sol = solve(p)
    assert sol.optimal
    assert sol.values[0] == pytest.approx(2.0, abs=1e-6)
    assert sol.objective == pytest.approx(-2.0, abs=1e-6)


def test_equality_and_inequality_rows():
    # min (a-1)^2 + (b-2)^2 s.t. a + b = 2, a - b <= 0
    p = ConvexProgram()
    p.add_var("a")
    p.add_var("b")
    p.set_penalty("a", 2.0, 1.0)
    p.set_penalty("b", 2.0, 2.0)
    p.add_eq({"a": 1, "b": 1}, 2.0)
    p.add_row({"a": 1, "b": -1}, -np.inf, 0.0)
    sol = solve(p)
    assert sol.optimal
    assert sol.values[0] + sol.values[1] == pytest.approx(2.0, abs=1e-6)
    assert sol.values[0] == pytest.approx(0.5, abs=1e-5)
    assert sol.values[1] == pytest.approx(1.5, abs=1e-5)


def test_infeasible_detection():
    p = ConvexProgram()
    p.add_var("x", 0.0, 1.0)
    p.add_row({"x": 1.0}, 2.0, 3.0)   # x in [2,3] conflicts with box [0,1]
    sol = solve(p)
    assert sol.status == "infeasible"


def test_degenerate_lp_ties_are_deterministic():
    p = ConvexProgram()
    p.add_var("x", 0.0, 1.0)
    p.add_var("y", 0.0, 1.0)
    p.add_row({"x": 1, "y": 1}, -np.inf, 1.0)
    p.add_linear_cost("x", -1.0)
    p.add_linear_cost("y", -1.0)
    a = solve(p)
    b = solve(p)
    assert a.optimal and b.optimal
    np.testing.assert_array_equal(a.values, b.values)
    assert a.objective == pytest.approx(-1.0, abs=1e-6)


def test_duality_gap_bound():
    rng = np.random.default_rng(7)
    for trial in range(20):
        n, m = 8, 12
        p = ConvexProgram()
        for i in range(n):
            p.add_var(("v", i), -2.0, 2.0)
            if i % 2:
                p.set_penalty(("v", i), 1.0 + trial % 3, float(rng.normal()))
            else:
                p.add_linear_cost(("v", i), float(rng.normal()))
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(-1, 1, size=n)     # keeps the program feasible
        b = A @ x0
        for r in range(m):
            coeffs = {("v", i): A[r, i] for i in range(n)}
            p.add_row(coeffs, -np.inf, float(b[r] + abs(rng.normal())))
        sol = solve(p, tol=1e-6)
        assert sol.optimal, f"trial {trial}: {sol.status}"
        assert sol.achieved_tol <= 1e-6
        assert sol.duality_gap <= 1e-5


def test_warm_start_reuses_structure():
    p = ConvexProgram()
    p.add_var("x", 0.0, 5.0)
    p.set_penalty("x", 1.0, 4.0)
    s = QpSolver(p)
    first = s.solve()
    assert first.values[0] == pytest.approx(4.0, abs=1e-6)
    p.set_center("x", 1.0)
    second = s.solve()
    assert second.values[0] == pytest.approx(1.0, abs=1e-6)


def test_determinism_bitwise():
    p = ConvexProgram()
    for i in range(6):
        p.add_var(("x", i), -1.0, 1.0)
        p.add_linear_cost(("x", i), (-1) ** i * (i + 1) / 7.0)
    p.add_row({("x", i): 1.0 for i in range(6)}, -np.inf, 2.0)
    a = solve(p)
    b = solve(p)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.objective == b.objective


# -- polygonization ----------------------------------------------------------


def _polygon_feasible(pp, qq, s, sides, gate=1.0):
    rows = polygonize_soc(s, sides)
    return all(cp * pp + cq * qq <= rhs * gate + 1e-12 for cp, cq, rhs in rows)


def test_polygon_axis_vertex_feasible():
    assert _polygon_feasible(1.0, 0.0, 1.0, 8)


def test_polygon_interior_diagonal_feasible():
    c = 0.99 * math.cos(math.pi / 4)
    assert _polygon_feasible(c, c, 1.0, 8)


def test_polygon_outside_infeasible():
    assert not _polygon_feasible(1.01, 0.0, 1.0, 8)


def test_polygon_is_inside_disk():
    # every polygon vertex must satisfy p^2 + q^2 <= s^2
    sides = 12
    rows = polygonize_soc(2.0, sides)
    for (c1, s1, r1), (c2, s2, r2) in zip(rows, rows[1:] + rows[:1]):
        det = c1 * s2 - c2 * s1
        vx = (r1 * s2 - r2 * s1) / det
        vy = (c1 * r2 - c2 * r1) / det
        assert vx * vx + vy * vy <= 4.0 + 1e-9


def test_polygon_rejects_bad_sides():
    with pytest.raises(ConfigError):
        polygonize_soc(1.0, 7)
    with pytest.raises(ConfigError):
        polygonize_soc(1.0, 6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(0, 0.999), st.sampled_from([8, 12, 16]))
def test_polygon_conservative_property(theta, radial, sides):
    # any point strictly inside radius s*cos(pi/K) is feasible; any point
    # outside the disk is infeasible
    s = 1.7
    shrink = math.cos(math.pi / sides)
    rr = radial * s * shrink
    assert _polygon_feasible(rr * math.cos(theta), rr * math.sin(theta), s, sides)
    ro = s * 1.001
    assert not _polygon_feasible(ro * math.cos(theta), ro * math.sin(theta), s, sides)


def test_gated_polygon_forces_zero_flow():
    p = ConvexProgram()
    p.add_var("pf", -5.0, 5.0)
    p.add_var("qf", -5.0, 5.0)
    p.add_var("a", 0.0, 0.0)   # gate pinned to zero
    p.add_soc_cap("pf", "qf", 2.0, gate_key="a")
    p.add_linear_cost("pf", -1.0)
    poly = polygonize_program(p, 12)
    sol = solve(poly)
    assert sol.optimal
    assert abs(sol.values[0]) <= 1e-6
    assert abs(sol.values[1]) <= 1e-6


def test_fix_binaries_contradiction_rejected():
    p = ConvexProgram()
    p.add_var("a", 0.0, 1.0, binary=True)
    p.add_row({"a": 1.0}, 0.0, 0.0, name="fault-pin")
    with pytest.raises(InfeasibleAssignment):
        p.fix_binaries({"a": 1})


def test_fix_binaries_requires_boolean():
    p = ConvexProgram()
    p.add_var("a", 0.0, 1.0, binary=True)
    with pytest.raises(ValueError):
        p.fix_binaries({"a": 0.5})
