"""Set decomposition against separable and grid-search oracles."""

import itertools

import numpy as np
import pytest

from zonosynth.decompose import DecompositionError, decompose_zonotope
from zonosynth.geometry import Zonotope, cartesian_product, check_containment
from zonosynth.scenarios import coupled_lti_triple


def test_identity_block_recovery():
    out = decompose_zonotope(Zonotope(np.zeros(4), np.eye(4)), [2, 2])
    assert out.certified
    for P, expect in zip(out.parts, (np.eye(2), np.eye(2))):
        assert np.allclose(P.generators, expect, atol=1e-6)
        assert np.allclose(P.center, 0.0, atol=1e-6)


def test_diagonal_case_is_separable():
    X = Zonotope(np.zeros(4), np.diag([1.0, 2.0, 3.0, 4.0]))
    out = decompose_zonotope(X, [2, 2])
    assert out.certified
    got = np.concatenate([np.diag(P.generators) for P in out.parts])
    assert np.allclose(got, [1, 2, 3, 4], atol=1e-6)


def test_block_diagonal_recovery_with_offsets():
    X = Zonotope(np.array([1.0, -1.0, 0.5]), np.diag([0.5, 1.5, 2.0]))
    out = decompose_zonotope(X, [2, 1])
    assert out.certified
    assert np.allclose(out.parts[0].center, [1.0, -1.0], atol=1e-6)
    assert np.allclose(np.diag(out.parts[0].generators), [0.5, 1.5], atol=1e-6)
    assert np.allclose(np.diag(out.parts[1].generators), [2.0], atol=1e-6)


def test_grid_search_oracle_2d():
    # Non-axis-aligned 2-D set split into two 1-D factors: compare the
    # optimizer's volume against a dense grid of certified boxes.  One
    # parametric feasibility program is compiled and re-solved per grid point.
    from zonosynth.geometry import Block, encode_inclusion
    from zonosynth.optim import ProblemBuilder

    X = Zonotope(np.zeros(2), np.array([[1.0, 0.4], [0.2, 0.8]]))
    out = decompose_zonotope(X, [1, 1])
    assert out.certified

    pb = ProblemBuilder()
    s = pb.param("s", 2)
    gens = np.zeros((2, 2), dtype=object)
    gens[0, 0], gens[1, 1] = s[0], s[1]
    encode_inclusion(pb, (np.zeros(2), gens), X.center, [Block(X.generators)],
                     "grid", force_general=True)
    prog = pb.compile()
    best = 0.0
    for s1, s2 in itertools.product(np.linspace(0.05, 1.6, 40), repeat=2):
        if prog.solve({"s": [s1, s2]}).optimal:
            best = max(best, s1 * s2)
    ours = float(np.prod([np.diag(P.generators) for P in out.parts]))
    assert ours >= best - 1e-3          # grid resolution slack
    prod = cartesian_product(out.parts)
    assert check_containment(prod, X).feasible


def test_objective_not_below_warm_start():
    rng = np.random.default_rng(0)
    for _ in range(5):
        G = rng.normal(size=(4, 6))
        X = Zonotope(rng.normal(size=4) * 0.1, G)
        out = decompose_zonotope(X, [2, 2])
        # slack covers the certification pull-back of at most 1e-6 relative
        assert out.objective >= out.warm_objective - 1e-5
        assert out.certified


def test_degenerate_set_raises():
    X = Zonotope(np.zeros(3), np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).reshape(3, 2))
    with pytest.raises(DecompositionError):
        decompose_zonotope(X, [2, 1])


def test_dims_must_match():
    with pytest.raises(ValueError):
        decompose_zonotope(Zonotope(np.zeros(4), np.eye(4)), [2, 3])


def test_coupled_lti_triple_decomposes():
    net = coupled_lti_triple()
    out = decompose_zonotope(net.coupled_X_at(0), [2, 2, 2])
    assert out.certified
    prod = cartesian_product(out.parts)
    assert check_containment(prod, net.coupled_X_at(0)).feasible
    # every factor has positive extent in both coordinates
    for P in out.parts:
        assert np.all(np.diag(P.generators) > 1e-3)
