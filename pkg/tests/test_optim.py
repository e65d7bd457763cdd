"""Backend tests: statuses, duals vs finite differences, scipy cross-checks."""

import numpy as np
import pytest

from zonosynth.optim import ProblemBuilder


def random_lp(rng, n=6, mi=8, me=2):
    """A feasible, bounded LP with a known interior point."""
    pb = ProblemBuilder()
    x = pb.var("x", n)
    x0 = rng.normal(size=n)
    G = rng.normal(size=(mi, n))
    slack = rng.uniform(0.2, 1.5, mi)
    pb.add_le(np.dot(G, x), G @ x0 + slack, tag="ineq")
    if me:
        A = rng.normal(size=(me, n))
        pb.add_eq(np.dot(A, x), A @ x0, tag="eq")
    pb.add_le(x, x0 + 10.0, tag="ubx")
    pb.add_le(-x, 10.0 - x0, tag="lbx")
    pb.add_cost(np.dot(rng.normal(size=n), x))
    return pb.compile()


def test_scalar_bound_dual():
    pb = ProblemBuilder()
    x = pb.var("x")
    pb.add_le(-x, -3.0, tag="lb")
    pb.add_cost(x)
    sol = pb.compile().solve()
    assert sol.optimal
    assert abs(sol.value("x") - 3.0) < 1e-8
    # d(obj)/d(rhs) = -dual: relaxing -x <= -3 to -x <= -3+d lowers obj by d.
    assert abs(sol.dual("lb")[0] - 1.0) < 1e-7


def test_contradictory_equalities_infeasible():
    pb = ProblemBuilder()
    x = pb.var("x")
    pb.add_eq(x, 1.0)
    pb.add_eq(x, 2.0)
    assert pb.compile().solve().status == "infeasible"


def test_unbounded():
    pb = ProblemBuilder()
    x = pb.var("x")
    pb.add_le(-x, 0.0)
    pb.add_cost(-x)
    assert pb.compile().solve().status == "unbounded"


def test_duals_match_finite_differences():
    rng = np.random.default_rng(7)
    checked = 0
    for trial in range(12):
        prog = random_lp(rng)
        sol = prog.solve()
        assert sol.optimal
        base = sol.objective
        # Perturb each inequality rhs through h0 and re-solve.
        delta = 1e-5
        for tag in ("ineq",):
            info = prog.tags[tag]
            duals = sol.dual(tag)
            for r in range(info.count):
                row = info.start + r
                h_save = prog.h0[row]
                prog.h0[row] = h_save + delta
                up = prog.solve().objective
                prog.h0[row] = h_save - delta
                dn = prog.solve().objective
                prog.h0[row] = h_save
                fwd, bwd = (up - base) / delta, (base - dn) / delta
                if abs(fwd - bwd) > 1e-6 * (1 + abs(fwd)):
                    continue            # degenerate vertex, secants disagree
                fd = (up - dn) / (2 * delta)
                assert abs(fd + duals[r]) <= 1e-5 * (1.0 + abs(duals[r]))
                checked += 1
    assert checked > 40


def test_strong_duality_spot_check():
    rng = np.random.default_rng(11)
    for trial in range(50):
        prog = random_lp(rng, n=5, mi=6, me=1)
        sol = prog.solve()
        assert sol.optimal
        # Lagrangian dual value: -b'y - h'z ... with our sign convention the
        # dual objective is b'y + h'z where stationarity gives c = -A'y - G'z.
        theta, beq, h, c, _ = prog.assemble({})
        y, z = sol._res.y, sol._res.z
        stat = c + prog.A.T @ y + prog.G.T @ z
        assert np.max(np.abs(stat)) < 1e-6 * (1 + np.max(np.abs(c)))
        dual_obj = -float(beq @ y) - float(h @ z)
        assert abs(dual_obj - sol.objective) < 1e-6 * (1 + abs(sol.objective))


def test_matches_scipy_on_random_lps():
    rng = np.random.default_rng(3)
    for trial in range(25):
        prog = random_lp(rng, n=5, mi=7, me=2)
        ours = prog.solve()
        ref = prog.solve(method="scipy")
        assert ours.status == ref.status == "optimal"
        assert abs(ours.objective - ref.objective) < 1e-6 * (1 + abs(ref.objective))


def test_scipy_adapter_duals_agree():
    rng = np.random.default_rng(5)
    prog = random_lp(rng)
    a = prog.solve()
    b = prog.solve(method="scipy")
    # Both must satisfy the same sensitivity convention; compare where the
    # optimum is nondegenerate (duals unique -> equal).
    za, zb = a.dual("ineq"), b.dual("ineq")
    mask = (np.minimum(za, zb) > 1e-6) | (np.maximum(za, zb) < 1e-6)
    assert np.all(np.abs(za - zb)[mask] < 1e-5 * (1 + np.abs(zb[mask])))


def test_quadratic_projection():
    # Euclidean projection of a point onto {x : sum(x) <= 1, x >= 0}.
    pb = ProblemBuilder()
    x = pb.var("x", 3)
    target = np.array([0.8, 0.9, -0.3])
    pb.add_le(x.sum(), 1.0)
    pb.add_le(-x, 0.0)
    for i in range(3):
        pb.add_square_cost(x[i] - target[i])
    sol = pb.compile().solve()
    assert sol.optimal
    # KKT by hand: active set {sum=1, x2=0}; x = (0.8,0.9,-)+t on first two.
    expect = np.array([0.45, 0.55, 0.0])
    assert np.allclose(sol.value("x"), expect, atol=1e-7)


def test_param_rhs_and_gradient():
    rng = np.random.default_rng(13)
    pb = ProblemBuilder()
    x = pb.var("x", 3)
    th = pb.param("th", 2)
    G = rng.normal(size=(5, 3))
    base = rng.uniform(1.0, 2.0, 5)
    P = rng.normal(size=(5, 2))
    pb.add_le(np.dot(G, x), base + np.dot(P, th), tag="rows")
    pb.add_le(x, 5.0)
    pb.add_le(-x, 5.0)
    pb.add_cost(np.dot(np.ones(3), x) * -1.0)
    prog = pb.compile()
    t0 = np.array([0.3, -0.2])
    sol = prog.solve({"th": t0})
    assert sol.optimal
    g = sol.param_gradient()["th"]
    eps = 1e-5
    for j in range(2):
        tp, tm = t0.copy(), t0.copy()
        tp[j] += eps
        tm[j] -= eps
        up = prog.solve({"th": tp}).objective
        dn = prog.solve({"th": tm}).objective
        fd = (up - dn) / (2 * eps)
        assert abs(fd - g[j]) < 1e-4 * (1 + abs(g[j]))


def test_param_in_quadratic_cost():
    # min ||x - th||^2 s.t. x <= 0: optimum max(th,0)^2, gradient 2*max(th,0).
    pb = ProblemBuilder()
    x = pb.var("x")
    th = pb.param("th")
    pb.add_le(x, 0.0)
    pb.add_square_cost(x - th)
    prog = pb.compile()
    sol = prog.solve({"th": 0.7})
    assert abs(sol.objective - 0.49) < 1e-7
    assert abs(sol.param_gradient()["th"] - 1.4) < 1e-6
    sol = prog.solve({"th": -0.5})
    assert abs(sol.objective) < 1e-7


def test_missing_parameter_raises():
    pb = ProblemBuilder()
    x = pb.var("x")
    th = pb.param("th")
    pb.add_le(x, th)
    pb.add_cost(-x)
    prog = pb.compile()
    with pytest.raises(ValueError):
        prog.solve({})


def test_lp_text_dump():
    pb = ProblemBuilder("dump")
    x = pb.var("x", 2)
    pb.add_le(x[0] + x[1], 1.0)
    pb.add_eq(x[0] - x[1], 0.25)
    pb.add_cost(x[0])
    text = pb.compile().write_lp(__import__("io").StringIO())
    assert "Minimize" in text and "Subject To" in text and "<=" in text


def test_batch_lp_matches_single():
    rng = np.random.default_rng(21)
    from zonosynth import ipm
    n, m, B = 5, 2, 40
    A = rng.normal(size=(m, n))
    c = rng.normal(size=n)
    X0 = rng.uniform(-1, 1, size=(B, n))
    b = X0 @ A.T
    lb, ub = -np.ones(n) * 2, np.ones(n) * 2
    xs, ok = ipm.solve_lp_batch(c, A, b, lb, ub)
    assert ok.all()
    for i in range(0, B, 7):
        pb = ProblemBuilder()
        x = pb.var("x", n)
        pb.add_eq(np.dot(A, x), b[i])
        pb.add_le(x, ub)
        pb.add_le(-x, -lb)
        pb.add_cost(np.dot(c, x))
        ref = pb.compile().solve()
        assert abs(float(c @ xs[i]) - ref.objective) < 1e-6 * (1 + abs(ref.objective))
