"""Built-in benchmark scenarios used by the CLI and the test suite."""

from __future__ import annotations

import math

import numpy as np

from .geometry import Zonotope
from .model import Coupling, LinearNetwork, Subsystem

# 6-state LTI network: three coupled 2-state subsystems with a coupled
# state constraint set, decentralized invariant sets are the target.
_CS1_A = np.array([
    [0.1, 0.1, 0.1, 0.02, 0.04, -0.02],
    [0.0, 0.1, -0.1, 0.06, 0.0, -0.04],
    [-0.08, 0.0, 0.1, 0.1, 0.04, 0.1],
    [0.02, -0.06, 0.0, 0.1, 0.08, 0.0],
    [0.0, 0.0, 0.04, 0.02, 0.1, 0.1],
    [0.0, 0.0, 0.02, 0.1, 0.0, 0.1],
])

_CS1_XGEN = np.array([
    [1.0, 0.1, 0.2, 0.0, 0.0, 0.0],
    [0.1, 1.0, 0.02, 0.0, 0.0, 0.1],
    [0.0, 0.01, 1.0, 0.0, 0.1, 0.1],
    [0.2, 0.0, 0.03, 1.0, 0.0, 0.1],
    [0.0, 0.1, 0.1, 0.0, 1.0, 0.2],
    [-0.1, -0.02, 0.1, 0.0, 0.0, 1.0],
])


def coupled_lti_triple() -> LinearNetwork:
    """Three 2-state LTI subsystems, state-coupled, with a coupled X set."""
    dims = [2, 2, 2]
    offs = [0, 2, 4]
    B = np.array([[0.0], [0.1]])
    subs = []
    for i in range(3):
        block = _CS1_A[offs[i]:offs[i] + 2, offs[i]:offs[i] + 2]
        subs.append(Subsystem(A=block, B=B,
                              D=Zonotope([0, 0], 0.3 * np.eye(2)),
                              U=Zonotope([0.0], [[1.0]]),
                              name=f"sub{i}"))
    couplings = []
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            blk = _CS1_A[offs[i]:offs[i] + 2, offs[j]:offs[j] + 2]
            if np.any(blk != 0.0):
                couplings.append(Coupling(i=i, j=j, A=blk))
    return LinearNetwork(subs, couplings,
                         coupled_X=Zonotope(np.zeros(6), _CS1_XGEN))


def _ltv_aggregate_A(t: float) -> np.ndarray:
    s, c, lg = math.sin(t), math.cos(t), math.log(t + 1.0)
    return 0.01 * np.array([
        [t, 100, 0.1, 0.1, 0, 0, -s, t],
        [0, 100, 0.1, 0.1, 0, 0, lg, c],
        [0.1, 0.1, 100, 100, 0.1, 0.1, 0, 0],
        [0.1, 0.1, 0, 100, 0.1, 0.1, 0, -1],
        [0, 0, 0.1, 0.1, 100, 100, 0, 1],
        [0.1 * t * t, 0, 0.1, 0.1, 0, 100, 0, 0],
        [t, 0, 0, 0, 0, 0, 100, 100],
        [-t, 1, 0, 1, 0, 0, 0, t],
    ])


def coupled_ltv_quad(horizon: int = 15) -> LinearNetwork:
    """Four 2-state LTV subsystems over a finite horizon, per-node bounds.

    The aggregate A(t) is evaluated at integer steps; state bounds shrink and
    swell with time, which is what makes time-indexed tubes interesting here.
    """
    steps = horizon + 1
    A_seq = [_ltv_aggregate_A(float(t)) for t in range(steps)]
    offs = [0, 2, 4, 6]
    B = np.array([[0.0], [0.1]])

    def xgen(i, t):
        if i == 0:
            return np.diag([5 - math.sin(math.pi * t / 15),
                            6 - 5.5 * math.sin(math.pi * t / 12)])
        if i == 1:
            return np.diag([5 - 2 * math.sin(math.pi * t / 8),
                            6 - 5.5 * math.sin(math.pi * t / 20)])
        if i == 2:
            return np.diag([5 - math.cos(math.pi * t / 15),
                            6 - 5.5 * math.cos(math.pi * t / 12)])
        return np.diag([5 - t / 5.0, 5 - t / 5.0])

    subs = []
    for i in range(4):
        A_blocks = [A[offs[i]:offs[i] + 2, offs[i]:offs[i] + 2] for A in A_seq]
        X = [Zonotope([0, 0], xgen(i, t)) for t in range(steps)]
        subs.append(Subsystem(
            A=A_blocks, B=B, D=Zonotope([0, 0], np.diag([0.4, 0.4])),
            X=X, U=Zonotope([0.0], [[10.0]]), name=f"sub{i}"))
    couplings = []
    for i in range(4):
        for j in range(4):
            if i == j:
                continue
            blocks = [A[offs[i]:offs[i] + 2, offs[j]:offs[j] + 2] for A in A_seq]
            if any(np.any(b != 0.0) for b in blocks):
                couplings.append(Coupling(i=i, j=j, A=blocks))
    return LinearNetwork(subs, couplings, horizon=horizon)


# Goal box for each area of the power network benchmark.
POWER_GOAL = 0.01
POWER_X0 = np.array([-0.2, 0.1, 0.02, 0.01, 0.1, -0.05, -0.03, -0.01])


def power_goal_set() -> Zonotope:
    return Zonotope([0.0, 0.0], POWER_GOAL * np.eye(2))


BUILTIN = {
    "cs1": coupled_lti_triple,
    "cs2": coupled_ltv_quad,
}
