"""Zonotope operations against sampling, enumeration and cross-check oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zonosynth.geometry import (
    Zonotope, affine_map, cartesian_product, check_containment,
    contains_point, contains_points, directed_hausdorff,
    encode_weighted_containment, minkowski_sum, reduce_box, sample_extreme,
    sample_point, sample_points, vertices_2d, volume_parallelotope,
)
from zonosynth.optim import ProblemBuilder


def rand_zono(rng, n=2, p=4, spread=1.0):
    return Zonotope(rng.normal(size=n) * spread, rng.normal(size=(n, p)))


def poly_contains(verts, pts, tol=1e-9):
    """Point-in-convex-polygon for CCW vertex lists (2-D oracle)."""
    pts = np.atleast_2d(pts)
    ok = np.ones(len(pts), dtype=bool)
    m = len(verts)
    for i in range(m):
        a, b = verts[i], verts[(i + 1) % m]
        edge = b - a
        ok &= edge[0] * (pts[:, 1] - a[1]) - edge[1] * (pts[:, 0] - a[0]) >= -tol
    return ok


# -- construction -----------------------------------------------------------

def test_dimension_checks():
    with pytest.raises(ValueError):
        Zonotope([0, 0], np.ones((3, 2)))
    with pytest.raises(ValueError):
        affine_map(np.eye(3), np.zeros(3), Zonotope([0, 0], np.eye(2)))


def test_zero_generators_dropped_and_singleton():
    Z = Zonotope([1.0, 2.0], np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert Z.num_generators == 1
    S = Zonotope([3.0, 4.0])
    assert S.num_generators == 0 and contains_point(S, [3, 4])


def test_order():
    assert Zonotope([0, 0], np.ones((2, 6))).order == 3.0


# -- affine map -------------------------------------------------------------

def test_affine_scaling_identity():
    Z = affine_map(2 * np.eye(2), np.zeros(2), Zonotope([0, 0], np.eye(2)))
    assert np.allclose(Z.generators, 2 * np.eye(2))


def test_affine_translation():
    Z = affine_map(np.eye(2), [1, 1], Zonotope([0, 0], np.eye(2)))
    assert np.allclose(Z.center, [1, 1])
    assert np.allclose(Z.generators, np.eye(2))


def test_affine_shear_membership_oracle():
    rng = np.random.default_rng(0)
    A, b = np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2)
    Z = Zonotope([1, 0], np.eye(2))
    out = affine_map(A, b, Z)
    assert np.allclose(out.generators, A)
    pts = sample_points(Z, rng, 100)
    assert contains_points(out, pts @ A.T + b).all()


# -- Minkowski sum ----------------------------------------------------------

def test_minkowski_definition():
    Z = minkowski_sum(Zonotope([1, 0], np.eye(2)), Zonotope([0, 1], np.eye(2)))
    assert np.allclose(Z.center, [1, 1])
    assert np.allclose(Z.generators, np.hstack([np.eye(2), np.eye(2)]))


def test_minkowski_singleton_translates():
    Z = Zonotope([1, 2], np.array([[1.0, 0.5], [0.0, 2.0]]))
    S = minkowski_sum(Z, Zonotope([3, -1]))
    T = Z.translate([3, -1])
    assert np.allclose(S.center, T.center) and np.allclose(S.generators, T.generators)


def test_minkowski_pairwise_sum_oracle():
    rng = np.random.default_rng(1)
    Z1, Z2 = rand_zono(rng, 2, 3), rand_zono(rng, 2, 4)
    S = minkowski_sum(Z1, Z2)
    p1 = sample_points(Z1, rng, 50)
    p2 = sample_points(Z2, rng, 50)
    sums = (p1[:, None, :] + p2[None, :, :]).reshape(-1, 2)
    assert contains_points(S, sums).all()


# -- Cartesian product ------------------------------------------------------

def test_cartesian_identities():
    Z = cartesian_product([Zonotope([0], [[1.0]]), Zonotope([0], [[1.0]])])
    assert np.allclose(Z.generators, np.eye(2))
    Z = cartesian_product([Zonotope([1], [[2.0]]), Zonotope([2], [[3.0]])])
    assert np.allclose(Z.center, [1, 2])
    assert np.allclose(Z.generators, np.diag([2.0, 3.0]))
    with pytest.raises(ValueError):
        cartesian_product([])


def test_cartesian_stacked_sampling_oracle():
    rng = np.random.default_rng(2)
    parts = [rand_zono(rng, 2, 3), rand_zono(rng, 1, 2), rand_zono(rng, 3, 4)]
    Z = cartesian_product(parts)
    pts = np.hstack([sample_points(P, rng, 80) for P in parts])
    assert contains_points(Z, pts).all()


# -- boxing reduction -------------------------------------------------------

def test_box_row_sums():
    Z = reduce_box(Zonotope([0, 0], np.array([[1.0, 1.0], [1.0, -1.0]])))
    assert np.allclose(Z.generators, 2 * np.eye(2))


def test_box_of_singleton():
    Z = reduce_box(Zonotope([1.0, -2.0]))
    assert Z.num_generators == 0 and np.allclose(Z.center, [1, -2])


def test_box_contains_samples():
    rng = np.random.default_rng(3)
    for _ in range(25):
        Z = rand_zono(rng, 3, 6)
        box = reduce_box(Z)
        assert contains_points(box, sample_points(Z, rng, 100)).all()


# -- volume -----------------------------------------------------------------

def test_volume_examples():
    assert volume_parallelotope(Zonotope([0, 0], np.eye(2))) == pytest.approx(4.0)
    assert volume_parallelotope(Zonotope([0, 0], np.diag([1.0, 2.0]))) == pytest.approx(8.0)
    th = 0.7
    R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert volume_parallelotope(Zonotope([0, 0], R)) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        volume_parallelotope(Zonotope([0, 0], np.ones((2, 3))))


# -- containment encodings --------------------------------------------------

def test_containment_basic():
    I2 = Zonotope([0, 0], np.eye(2))
    cert = check_containment(Zonotope([0, 0], 0.5 * np.eye(2)), I2)
    assert cert.feasible
    assert np.allclose(cert.gamma_matrix, 0.5 * np.eye(2), atol=1e-6)
    assert np.allclose(cert.gamma_vector, 0.0, atol=1e-6)
    assert not check_containment(Zonotope([0, 0], 2 * np.eye(2)), I2).feasible


def test_containment_shifted_with_vertex_oracle():
    inner = Zonotope([0.5, 0.0], np.eye(2))
    outer = Zonotope([0.0, 0.0], 1.5 * np.eye(2))
    cert = check_containment(inner, outer)
    assert cert.feasible
    assert poly_contains(vertices_2d(outer), vertices_2d(inner)).all()


def test_containment_feasible_implies_vertex_oracle():
    rng = np.random.default_rng(4)
    hits = 0
    for _ in range(60):
        inner, outer = rand_zono(rng, 2, 3, 0.3), rand_zono(rng, 2, 4)
        cert = check_containment(inner, outer)
        if cert.feasible:
            hits += 1
            assert poly_contains(vertices_2d(outer), vertices_2d(inner), 1e-6).all()
    assert hits >= 3


def test_containment_monotone_inflation():
    rng = np.random.default_rng(5)
    for _ in range(20):
        inner, outer = rand_zono(rng, 2, 3, 0.3), rand_zono(rng, 2, 4)
        if not check_containment(inner, outer).feasible:
            continue
        grown = Zonotope(outer.center,
                         np.hstack([outer.generators, 0.05 * np.eye(2)]))
        assert check_containment(inner, grown).feasible


def test_weighted_feasible_iff_alpha_geq_one():
    pb = ProblemBuilder()
    a = pb.param("a", 2)
    encode_weighted_containment(Zonotope([0, 0], np.eye(2)),
                                Zonotope([0, 0], np.eye(2)), a, pb, "w")
    prog = pb.compile()
    assert prog.solve({"a": [1.0, 1.0]}).optimal
    assert prog.solve({"a": [2.0, 1.0]}).optimal
    assert not prog.solve({"a": [0.98, 1.0]}).optimal


def test_weighted_singleton_at_center():
    pb = ProblemBuilder()
    a = pb.param("a", 3)
    encode_weighted_containment(Zonotope([1.0, -2.0]),
                                Zonotope([1.0, -2.0], np.ones((2, 3))), a, pb, "w")
    prog = pb.compile()
    assert prog.solve({"a": np.zeros(3)}).optimal


def test_weighted_matches_prescaled_unweighted():
    rng = np.random.default_rng(6)
    checked = 0
    for trial in range(100):
        inner = rand_zono(rng, 2, 3, 0.4)
        base = rand_zono(rng, 2, 4)
        alpha = rng.uniform(0.1, 2.0, 4)
        scaled = Zonotope(base.center, base.generators * alpha)
        # skip knife-edge instances where solver tolerance decides the answer
        margin = directed_hausdorff(scaled, inner)
        if 1e-9 < margin < 1e-5:
            continue
        pb = ProblemBuilder()
        encode_weighted_containment(inner, base, alpha, pb, "w")
        weighted = pb.compile().solve().optimal
        plain = check_containment(inner, scaled).feasible
        assert weighted == plain
        checked += 1
    assert checked >= 90


def test_weighted_alpha_one_equals_unweighted():
    rng = np.random.default_rng(7)
    for trial in range(100):
        inner = rand_zono(rng, 3, 4, 0.5)
        outer = rand_zono(rng, 3, 5)
        pb = ProblemBuilder()
        encode_weighted_containment(inner, outer, np.ones(outer.num_generators),
                                    pb, "w")
        assert pb.compile().solve().optimal == check_containment(inner, outer).feasible


def test_box_fastpath_agrees_with_general():
    rng = np.random.default_rng(8)
    for _ in range(50):
        inner = rand_zono(rng, 3, 4, 0.5)
        outer = Zonotope(rng.normal(size=3) * 0.2, np.diag(rng.uniform(0.5, 3, 3)))
        fast = check_containment(inner, outer).feasible
        pb = ProblemBuilder()
        from zonosynth.geometry import encode_containment
        encode_containment(inner, outer, pb, "g", force_general=True)
        assert fast == pb.compile().solve().optimal


# -- directed Hausdorff -----------------------------------------------------

def test_hausdorff_examples():
    I2 = Zonotope([0, 0], np.eye(2))
    big = Zonotope([0, 0], 2 * np.eye(2))
    assert directed_hausdorff(big, I2) == pytest.approx(0.0, abs=1e-7)
    # farthest vertex of the 2-box needs inflation 1 in the infinity norm
    assert directed_hausdorff(I2, big) == pytest.approx(1.0, abs=1e-7)
    Z = Zonotope([0.3, -1], np.array([[1.0, 0.2], [0.0, 0.7]]))
    assert directed_hausdorff(Z, Z) == pytest.approx(0.0, abs=1e-7)


def test_hausdorff_zero_implies_membership():
    rng = np.random.default_rng(9)
    for _ in range(20):
        Z1, Z2 = rand_zono(rng, 2, 4), rand_zono(rng, 2, 3, 0.3)
        d = directed_hausdorff(Z1, Z2)
        if d <= 1e-9:
            assert contains_points(Z1, sample_points(Z2, rng, 100), tol=1e-6).all()


# -- membership and sampling ------------------------------------------------

def test_contains_center_and_outside():
    rng = np.random.default_rng(10)
    Z = rand_zono(rng, 3, 5)
    assert contains_point(Z, Z.center)
    outside = Z.center + 1.01 * np.abs(Z.generators).sum(axis=1)
    assert not contains_point(Z, outside)


def test_contains_constructive():
    rng = np.random.default_rng(11)
    for _ in range(20):
        Z = rand_zono(rng, 3, 5)
        zeta = rng.uniform(-1, 1, Z.num_generators)
        assert contains_point(Z, Z.center + Z.generators @ zeta)


def test_sample_extremes_inside():
    rng = np.random.default_rng(12)
    Z = rand_zono(rng, 2, 4)
    for _ in range(32):
        assert contains_point(Z, sample_extreme(Z, rng))
    assert np.allclose(sample_point(Zonotope([1.0, 2.0]), rng), [1, 2])


def test_sample_mean_near_center():
    rng = np.random.default_rng(13)
    Z = Zonotope([1.0, -2.0], np.array([[1.0, 0.3], [0.0, 1.5]]))
    pts = sample_points(Z, rng, 100_000)
    # var of uniform on [-1,1] is 1/3; project through the generators
    var = (Z.generators ** 2).sum(axis=1) / 3.0
    sigma = np.sqrt(var / len(pts))
    assert np.all(np.abs(pts.mean(axis=0) - Z.center) < 3 * sigma + 1e-12)


# -- serialization & hypothesis properties -----------------------------------

def test_json_round_trip():
    rng = np.random.default_rng(14)
    Z = rand_zono(rng, 3, 4)
    Z2 = Zonotope.from_dict(Z.to_dict())
    assert np.allclose(Z.center, Z2.center) and np.allclose(Z.generators, Z2.generators)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 5), st.integers(0, 2 ** 31 - 1))
def test_box_always_contains(n, p, seed):
    rng = np.random.default_rng(seed)
    Z = Zonotope(rng.normal(size=n), rng.normal(size=(n, p)))
    box = reduce_box(Z)
    pts = sample_points(Z, rng, 32)
    assert contains_points(box, pts).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_affine_commutes_with_sampling(n, p, seed):
    rng = np.random.default_rng(seed)
    Z = Zonotope(rng.normal(size=n), rng.normal(size=(n, p)))
    A = rng.normal(size=(n, n))
    b = rng.normal(size=n)
    out = affine_map(A, b, Z)
    pts = sample_points(Z, rng, 16)
    assert contains_points(out, pts @ A.T + b, tol=1e-6).all()
