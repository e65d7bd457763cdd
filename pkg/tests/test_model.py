"""Model construction, scenario round-trips, and the network generators."""

import numpy as np
import pytest

from zonosynth.geometry import Zonotope, sample_points
from zonosynth.model import (
    Coupling, LinearNetwork, ScenarioError, Subsystem,
    generate_power_network, generate_random_network, load_scenario,
    network_from_dict, network_to_dict, save_scenario,
)
from zonosynth.scenarios import _CS1_A, coupled_lti_triple, coupled_ltv_quad


def two_node_net():
    A = np.array([[0.5, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    s0 = Subsystem(A=A, B=B, D=Zonotope([0, 0], 0.1 * np.eye(2)),
                   X=Zonotope([0, 0], np.eye(2)), U=Zonotope([0.0], [[1.0]]))
    s1 = Subsystem(A=0.9 * np.eye(2), B=B, D=Zonotope([0, 0], 0.05 * np.eye(2)),
                   X=Zonotope([0, 0], 2 * np.eye(2)), U=Zonotope([0.0], [[2.0]]))
    c = Coupling(i=0, j=1, A=0.1 * np.ones((2, 2)))
    return LinearNetwork([s0, s1], [c])


def test_dimension_validation():
    with pytest.raises(ScenarioError):
        Subsystem(A=np.eye(2), B=np.ones((3, 1)), D=Zonotope([0, 0], np.eye(2)))
    with pytest.raises(ScenarioError):
        Coupling(i=1, j=1, A=np.eye(2))
    s = Subsystem(A=np.eye(2), B=np.ones((2, 1)), D=Zonotope([0, 0], np.eye(2)))
    with pytest.raises(ScenarioError):
        LinearNetwork([s], [], coupled_X=Zonotope([0, 0, 0], np.eye(3)))


def test_round_trip(tmp_path):
    net = two_node_net()
    path = tmp_path / "net.json"
    save_scenario(net, path)
    back = load_scenario(path)
    assert back.eta == 2 and len(back.couplings) == 1
    assert np.allclose(back.subsystems[0].A_at(0), net.subsystems[0].A_at(0))
    assert np.allclose(back.couplings[0].A_at(0), net.couplings[0].A_at(0))
    assert np.allclose(back.subsystems[1].D_at(0).generators,
                       net.subsystems[1].D_at(0).generators)
    # second round trip is the identity on the dict form
    assert network_to_dict(back) == network_to_dict(net)


def test_unknown_fields_rejected():
    d = network_to_dict(two_node_net())
    d["bogus"] = 1
    with pytest.raises(ScenarioError, match="bogus"):
        network_from_dict(d)
    d.pop("bogus")
    d["subsystems"][0]["extra"] = 2
    with pytest.raises(ScenarioError, match=r"subsystems\[0\]"):
        network_from_dict(d)


def test_missing_coupling_B_is_zero():
    net = two_node_net()
    assert net.couplings[0].B is None
    _, B = net.aggregate_matrices(0)
    assert np.allclose(B[0:2, 1:2], 0.0)


def test_aggregate_matches_per_node_simulation():
    rng = np.random.default_rng(0)
    net = two_node_net()
    A, B = net.aggregate_matrices(0)
    for _ in range(20):
        x = [rng.normal(size=2), rng.normal(size=2)]
        u = [rng.normal(size=1), rng.normal(size=1)]
        d = [rng.normal(size=2), rng.normal(size=2)]
        nxt = net.step(x, u, d, 0)
        full = A @ np.concatenate(x) + B @ np.concatenate(u) + np.concatenate(d)
        assert np.allclose(np.concatenate(nxt), full, atol=1e-12)


def test_ltv_sequence_length_enforced():
    A = [np.eye(2)] * 3
    s = Subsystem(A=A, B=np.ones((2, 1)), D=Zonotope([0, 0], np.eye(2)))
    with pytest.raises(ScenarioError, match="shorter than"):
        LinearNetwork([s], [], horizon=5)


# -- generators ---------------------------------------------------------------

def test_random_network_basics():
    net = generate_random_network(1, seed=3)
    assert net.eta == 1 and not net.couplings
    net = generate_random_network(20, lam=0.1, seed=5)
    assert net.eta == 20
    s = net.subsystems[0]
    assert np.allclose(s.A_at(0), [[1, 0.2], [0, 1]])
    assert np.allclose(s.B_at(0), [[0], [0.2]])
    assert np.allclose(s.X_at(0).generators, 5 * np.eye(2))
    assert np.allclose(s.D_at(0).generators, 0.1 * np.eye(2))
    # reproducibility
    net2 = generate_random_network(20, lam=0.1, seed=5)
    assert len(net2.couplings) == len(net.couplings)
    for a, b in zip(net.couplings, net2.couplings):
        assert (a.i, a.j) == (b.i, b.j)
        assert np.allclose(a.A_at(0), b.A_at(0))


def test_random_network_radius_cut():
    # Two nodes farther apart than the radius stay uncoupled.
    net = generate_random_network(2, side=100.0, radius=10.0, seed=11)
    rng = np.random.default_rng(11)
    pos = rng.uniform(0, 100, size=(2, 2))
    dist = np.linalg.norm(pos[0] - pos[1])
    assert (len(net.couplings) == 0) == (dist >= 10.0)
    gain = [c for c in net.couplings]
    if gain:
        assert np.allclose(gain[0].A_at(0), 0.1 / (1 + dist) * np.ones((2, 2)))


def test_power_network_complete_four_areas():
    net = generate_power_network(4, "complete")
    assert net.eta == 4
    assert len(net.couplings) == 12            # 4 * 3 directed pairs
    A = net.subsystems[0].A_at(0)
    assert A[0, 1] == pytest.approx(2 * np.pi * 0.1)            # ~0.6283
    assert A[1, 1] == pytest.approx(1 - 0.1 / 25.0)
    # off-diagonal gain: dt*Kp*Ks / (2*pi*Tp) with the printed constants
    gain = 0.1 * 110.0 * 0.5 / (2 * np.pi * 25.0)
    assert gain == pytest.approx(0.03501, abs=5e-6)
    assert net.couplings[0].A_at(0)[1, 0] == pytest.approx(gain)
    # diagonal frequency coupling scales with the neighbor count
    assert A[1, 0] == pytest.approx(-0.1 * 110.0 * (0.5 * 3) / (2 * np.pi * 25.0))
    D = net.subsystems[0].D_at(0)
    assert D.generators[1, 1] == pytest.approx(-0.1 * 110.0 * 0.01 / 25.0)
    assert net.subsystems[0].U_at(0).generators[0, 0] == pytest.approx(0.1)


def test_power_network_ring_and_edges():
    net = generate_power_network(5, "ring")
    assert len(net.couplings) == 10
    net = generate_power_network(3, [(0, 1)])
    assert len(net.couplings) == 2
    assert not net.incoming(2)


# -- case-study scenarios ------------------------------------------------------

def test_lti_triple_reproduces_aggregate_matrix():
    net = coupled_lti_triple()
    A, _ = net.aggregate_matrices(0)
    assert np.allclose(A, _CS1_A)
    assert net.coupled_X_at(0).dim == 6
    # no coupling from subsystem 0 into subsystem 2 (zero block)
    assert all(not (c.i == 2 and c.j == 0) for c in net.couplings)


def test_ltv_quad_matches_printed_entries():
    net = coupled_ltv_quad()
    assert net.horizon == 15
    A7, _ = net.aggregate_matrices(7)
    assert A7[0, 0] == pytest.approx(0.01 * 7)
    assert A7[1, 6] == pytest.approx(0.01 * np.log(8.0))
    assert A7[5, 0] == pytest.approx(0.01 * 0.1 * 49)
    assert A7[7, 7] == pytest.approx(0.01 * 7)
    X1 = net.subsystems[0].X_at(3)
    assert X1.generators[0, 0] == pytest.approx(5 - np.sin(np.pi * 3 / 15))
    X4 = net.subsystems[3].X_at(15)
    assert X4.generators[1, 1] == pytest.approx(2.0)


def test_ltv_quad_simulation_consistency():
    rng = np.random.default_rng(1)
    net = coupled_ltv_quad()
    for t in (0, 4, 14):
        A, B = net.aggregate_matrices(t)
        x = [rng.normal(size=2) for _ in range(4)]
        u = [rng.normal(size=1) for _ in range(4)]
        d = [rng.normal(size=2) for _ in range(4)]
        nxt = net.step(x, u, d, t)
        full = A @ np.concatenate(x) + B @ np.concatenate(u) + np.concatenate(d)
        assert np.allclose(np.concatenate(nxt), full, atol=1e-12)
