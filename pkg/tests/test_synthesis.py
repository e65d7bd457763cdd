"""Tube synthesis against hand-solved, rollout, and enumeration oracles."""

import numpy as np
import pytest

from zonosynth.geometry import Zonotope, directed_hausdorff, sample_points
from zonosynth.model import Subsystem
from zonosynth.synthesis import (
    OutOfTubeError, eval_controller, eval_controller_batch, k_search,
    synth_rci, synth_viable,
)


def scalar_sub(dist=0.1, xbox=1.0, ubox=1.0):
    return Subsystem(A=[[0.5]], B=[[1.0]],
                     D=Zonotope([0.0], [[dist]] if dist else None),
                     X=Zonotope([0.0], [[xbox]]),
                     U=Zonotope([0.0], [[ubox]]))


def rotation_sub(rho=0.8, theta=0.5, dist=0.05):
    A = rho * np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
    return Subsystem(A=A, B=np.array([[0.0], [1.0]]),
                     D=Zonotope([0, 0], dist * np.eye(2)),
                     X=Zonotope([0, 0], np.eye(2)),
                     U=Zonotope([0.0], [[1.0]]))


# -- finite horizon ------------------------------------------------------------

def test_scalar_viable_one_step():
    res = synth_viable(scalar_sub(), h=1, k=0, x0=[0.0])
    assert res.feasible
    ctrl = res.controller
    assert ctrl.T[1].shape == (1, 1)
    assert abs(abs(ctrl.T[1][0, 0]) - 0.1) < 1e-7
    assert abs(ctrl.x_centers[1][0]) < 1e-6


def test_nominal_tubes_shrink():
    sub = rotation_sub(dist=0.0)
    res = synth_viable(sub, h=6, k=2,
                       X_seq=[Zonotope([0, 0], 100 * np.eye(2))] * 7,
                       U_seq=[Zonotope([0.0], [[100.0]])] * 6)
    assert res.feasible
    norms = [np.abs(T).sum() for T in res.controller.T]
    assert norms[-1] <= 0.5 * max(norms[0], 1e-12) + 1e-9


def test_viable_soundness_extreme_rollout():
    rng = np.random.default_rng(0)
    sub = rotation_sub()
    h = 5
    res = synth_viable(sub, h=h, k=2)
    assert res.feasible
    ctrl = res.controller
    A, B, D = sub.A_at(0), sub.B_at(0), sub.D_at(0)
    for t in range(h):
        omega_t = ctrl.state_tube(t)
        omega_next = ctrl.state_tube(t + 1)
        X = sample_points(omega_t, rng, 200)
        U = eval_controller_batch(ctrl, t, X)
        # every combination of +-1 disturbance signs
        for signs in ([1, 1], [1, -1], [-1, 1], [-1, -1]):
            d = D.center + D.generators @ np.asarray(signs, dtype=float)
            nxt = X @ A.T + U @ B.T + d
            from zonosynth.geometry import contains_points
            assert contains_points(omega_next, nxt, tol=1e-6).all()


def test_viable_constraint_certification():
    sub = rotation_sub()
    h = 4
    res = synth_viable(sub, h=h, k=2)
    assert res.feasible
    for t in range(h + 1):
        assert directed_hausdorff(sub.X_at(t), res.controller.state_tube(t)) < 1e-7
    for t in range(h):
        assert directed_hausdorff(sub.U_at(t), res.controller.action_tube(t)) < 1e-7


def test_fixed_width_implies_full_mode():
    sub = rotation_sub()
    for k in (2, 3, 4):
        fixed = synth_viable(sub, h=4, k=k, fixed_width=True)
        if fixed.feasible:
            assert synth_viable(sub, h=4, k=k).feasible


def test_infeasible_is_value_not_exception():
    # inputs too weak to counter the disturbance within the state box
    sub = Subsystem(A=[[2.0]], B=[[0.1]], D=Zonotope([0.0], [[0.5]]),
                    X=Zonotope([0.0], [[0.6]]), U=Zonotope([0.0], [[0.01]]))
    res = synth_viable(sub, h=3, k=1)
    assert not res.feasible and res.status == "infeasible"


# -- infinite horizon ----------------------------------------------------------

def test_scalar_rci_hand_solution():
    res = synth_rci(scalar_sub(), k=1, simple=True)
    assert res.feasible
    ctrl = res.controller
    # [0.5 T + M, 0.1] = [0, T] forces T = 0.1 (up to sign), M = -T/2
    assert abs(abs(ctrl.T[0][0, 0]) - 0.1) < 1e-7
    assert abs(ctrl.M[0][0, 0] + ctrl.T[0][0, 0] / 2.0) < 1e-7
    assert abs(ctrl.x_centers[0][0]) < 1e-6
    assert abs(ctrl.u_centers[0][0]) < 1e-6
    omega, theta = res.omegas()[0], res.thetas()[0]
    assert abs(omega.radii()[0] - 0.1) < 1e-6
    assert abs(theta.radii()[0] - 0.05) < 1e-6


def test_scalar_rci_exhaustive_grid_rollout():
    res = synth_rci(scalar_sub(), k=1, simple=True)
    ctrl = res.controller
    xs = np.linspace(-0.1, 0.1, 81)[:, None]
    U = eval_controller_batch(ctrl, 0, xs)
    for d in (-0.1, 0.1):
        nxt = 0.5 * xs[:, 0] + U[:, 0] + d
        assert np.all(np.abs(nxt) <= 0.1 + 1e-7)


def test_rci_zero_disturbance_fixed_point():
    sub = Subsystem(A=[[0.5]], B=[[1.0]], D=Zonotope([0.3]),
                    X=Zonotope([0.0], [[2.0]]), U=Zonotope([0.0], [[2.0]]))
    res = synth_rci(sub, k=1, simple=True)
    assert res.feasible
    xb = res.controller.x_centers[0][0]
    ub = res.controller.u_centers[0][0]
    assert abs(0.5 * xb + ub + 0.3 - xb) < 1e-7
    assert res.omegas()[0].radii()[0] < 1e-6


def test_rci_soundness_consecutive_steps():
    rng = np.random.default_rng(1)
    sub = rotation_sub()
    res = k_search(lambda k: synth_rci(sub, k=k, simple=True), 2, 8)
    assert res.feasible
    ctrl = res.controller
    omega = ctrl.state_tube(0)
    theta = ctrl.action_tube(0)
    A, B, D = sub.A_at(0), sub.B_at(0), sub.D_at(0)
    X = sample_points(omega, rng, 200)
    from zonosynth.geometry import contains_points
    for step in range(100):
        U = eval_controller_batch(ctrl, 0, X)
        assert contains_points(theta, U, tol=1e-6).all()
        d = D.center + rng.choice([-1.0, 1.0], (X.shape[0], D.num_generators)) \
            @ D.generators.T
        X = X @ A.T + U @ B.T + d
        assert contains_points(omega, X, tol=1e-6).all()


def test_rci_beta_scaling():
    sub = rotation_sub()
    res = k_search(lambda k: synth_rci(sub, k=k, beta=0.3, simple=False), 2, 8)
    if res.feasible:
        ctrl = res.controller
        assert np.allclose(ctrl.state_tube(0).generators,
                           ctrl.T[0] / 0.7, atol=1e-9)


def test_rci_requires_lti():
    sub = Subsystem(A=[np.eye(1)] * 3, B=[[1.0]], D=Zonotope([0.0], [[0.1]]))
    with pytest.raises(ValueError):
        synth_rci(sub, k=1)


# -- k search -------------------------------------------------------------------

def test_k_search_scalar_first_feasible_at_one():
    calls = []

    def fn(k):
        calls.append(k)
        return synth_rci(scalar_sub(), k=k, simple=True)

    res = k_search(fn, 0, 4)
    assert res.feasible and res.k == 1 and calls == [0, 1]


def test_k_search_single_call_when_feasible():
    calls = []

    def fn(k):
        calls.append(k)
        return synth_rci(scalar_sub(), k=k, simple=True)

    res = k_search(fn, 1, 4)
    assert res.feasible and calls == [1]


def test_k_search_exhausts():
    sub = Subsystem(A=[[2.0]], B=[[0.0]], D=Zonotope([0.0], [[0.5]]),
                    X=Zonotope([0.0], [[1.0]]), U=Zonotope([0.0], [[1.0]]))
    res = k_search(lambda k: synth_rci(sub, k=k, simple=True), 0, 3)
    assert not res.feasible


# -- controller evaluation -------------------------------------------------------

def test_eval_at_center_returns_center_input():
    sub = rotation_sub()
    res = synth_viable(sub, h=3, k=2)
    ctrl = res.controller
    for t in range(3):
        u = eval_controller(ctrl, t, ctrl.x_centers[t])
        assert np.allclose(u, ctrl.u_centers[t], atol=1e-6)


def test_eval_scalar_rci_boundary():
    ctrl = synth_rci(scalar_sub(), k=1, simple=True).controller
    u = eval_controller(ctrl, 0, [0.1])
    sign = np.sign(ctrl.T[0][0, 0])
    assert abs(u[0] - (-0.05)) < 1e-6 if sign > 0 else abs(u[0] + 0.05) < 1e-6


def test_eval_outside_tube_raises():
    ctrl = synth_rci(scalar_sub(), k=1, simple=True).controller
    with pytest.raises(OutOfTubeError):
        eval_controller(ctrl, 0, [0.2])


def test_eval_batch_matches_single():
    rng = np.random.default_rng(2)
    sub = rotation_sub()
    res = k_search(lambda k: synth_rci(sub, k=k, simple=True), 2, 8)
    ctrl = res.controller
    X = sample_points(ctrl.state_tube(0), rng, 40)
    U = eval_controller_batch(ctrl, 0, X)
    for i in range(0, 40, 5):
        u = eval_controller(ctrl, 0, X[i])
        assert np.allclose(u, U[i], atol=1e-6)


def test_eval_inside_action_set():
    rng = np.random.default_rng(3)
    sub = rotation_sub()
    res = k_search(lambda k: synth_rci(sub, k=k, simple=True), 2, 8)
    ctrl = res.controller
    X = sample_points(ctrl.state_tube(0), rng, 100)
    U = eval_controller_batch(ctrl, 0, X)
    from zonosynth.geometry import contains_points
    assert contains_points(ctrl.action_tube(0), U, tol=1e-6).all()


def test_controller_round_trip():
    from zonosynth.synthesis import TubeController
    ctrl = synth_rci(scalar_sub(), k=1, simple=True).controller
    back = TubeController.from_dict(ctrl.to_dict())
    assert back.mode == "rci" and np.allclose(back.T[0], ctrl.T[0])
