"""Decomposition of a coupled constraint set into per-subsystem factors.

Given a zonotope ``X`` over the stacked coordinates of several subsystems,
find per-subsystem sets whose Cartesian product fits inside ``X`` with
maximum product volume.  Factors use an axis-aligned template: each block
generator is ``diag(s_i)`` with ``s_i > 0`` (a symmetric PSD matrix, so the
product volume is ``2^n * prod(s)``), and block centers are free.

Maximizing ``sum(log s)`` over the linear containment polytope is a concave
program; it is solved by projected gradient ascent with backtracking, warm
started from the LP relaxation ``max sum(s)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Zonotope, check_containment, encode_inclusion, Block
from .optim import ProblemBuilder, SolverError

_S_FLOOR = 1e-9
_MAX_ITERS = 500
_REL_TOL = 1e-8


class DecompositionError(RuntimeError):
    """Raised when no positive-volume decomposition exists."""


@dataclass
class DecompositionResult:
    parts: list
    objective: float            # sum of log generator entries at the optimum
    warm_objective: float       # same quantity at the LP warm start
    iterations: int
    certified: bool

    @property
    def log_volume(self):
        n = sum(P.dim for P in self.parts)
        return n * np.log(2.0) + self.objective


def _build_programs(X: Zonotope, dims):
    n = X.dim
    if sum(dims) != n:
        raise ValueError(f"dims {dims} do not sum to the set dimension {n}")
    pb_lp = ProblemBuilder("decompose-warm")
    pb_qp = ProblemBuilder("decompose-project")
    pb_pr = ProblemBuilder("decompose-probe")
    builds = []
    for pb, kind in ((pb_lp, "lp"), (pb_qp, "qp"), (pb_pr, "probe")):
        s = pb.var("s", n)
        c = pb.var("c", n)
        pb.add_le(-s, -_S_FLOOR)
        gens = np.zeros((n, n), dtype=object)
        off = 0
        for d in dims:
            for r in range(off, off + d):
                gens[r, r] = s[r]
            off += d
        encode_inclusion(pb, (c, gens), X.center, [Block(X.generators)], "inc",
                         force_general=True)
        if kind == "lp":
            pb.add_cost(-s.sum())
        elif kind == "qp":
            target = pb.param("target", n)
            for r in range(n):
                pb.add_square_cost(s[r] - target[r])
        else:
            # Probe for degenerate directions: the best uniform lower bound
            # on all extents.
            tau = pb.var("tau")
            pb.add_le(tau - s, 0.0)
            pb.add_cost(-tau)
        builds.append(pb.compile())
    return builds


def decompose_zonotope(X: Zonotope, dims, max_iters=_MAX_ITERS) -> DecompositionResult:
    """Split ``X`` into per-block axis-aligned sets of maximal product volume."""
    dims = [int(d) for d in dims]
    warm, proj, probe = _build_programs(X, dims)

    psol = probe.solve()
    if psol.status == "infeasible" or \
            (psol.optimal and psol.value("tau") <= 1e-7 * (1.0 + X.radii().max())):
        raise DecompositionError(
            "containment infeasible: the set has (near-)empty interior in "
            "some block coordinate")
    sol = warm.solve()
    if not sol.optimal:
        raise SolverError(f"warm-start LP failed: {sol.status}")
    s = np.maximum(sol.value("s"), _S_FLOOR)
    c = sol.value("c")
    warm_obj = float(np.log(s).sum())

    obj = warm_obj
    eta = 1.0
    iters = 0
    for iters in range(1, max_iters + 1):
        grad = 1.0 / s
        improved = False
        for _ in range(30):
            psol = proj.solve({"target": s + eta * grad})
            if not psol.optimal:
                eta *= 0.5
                continue
            s_new = np.maximum(psol.value("s"), _S_FLOOR)
            obj_new = float(np.log(s_new).sum())
            if obj_new > obj + 1e-14:
                improved = True
                break
            eta *= 0.5
        if not improved:
            break
        c = psol.value("c")
        gain = obj_new - obj
        s, obj = s_new, obj_new
        eta = min(eta * 2.0, 1e3)
        if gain < _REL_TOL * max(1.0, abs(obj)):
            break

    # Volume maximization rides the containment boundary; the QP iterate can
    # sit ~1e-7 outside it.  Pull back by the smallest factor that certifies.
    from .geometry import cartesian_product

    def make_parts(shrink):
        parts, off = [], 0
        for d in dims:
            parts.append(Zonotope(c[off:off + d],
                                  np.diag(s[off:off + d] * (1.0 - shrink))))
            off += d
        return parts

    certified = False
    parts = make_parts(0.0)
    for shrink in (0.0, 1e-8, 1e-7, 1e-6):
        candidate = make_parts(shrink)
        if check_containment(cartesian_product(candidate), X).feasible:
            parts, certified = candidate, True
            break
    obj = float(sum(np.log(np.diag(P.generators)).sum() for P in parts))
    return DecompositionResult(parts, obj, warm_obj, iters, certified)


def decompose_network_constraints(net, steps=None):
    """Per-subsystem admissible sets, decomposing coupled ones when needed.

    Returns two lists of dicts mapping time step to a per-subsystem set (or
    None when unconstrained): one for states, one for inputs.  For networks
    without coupled constraints this just collects the per-subsystem bounds.
    """
    state_dims = [s.n for s in net.subsystems]
    input_dims = [s.m for s in net.subsystems]
    if steps is None:
        steps = [0] if net.horizon is None else list(range(net.horizon + 1))

    def split(coupled_at, dims, t):
        X = coupled_at(t)
        if X is None:
            return None
        return decompose_zonotope(X, dims).parts

    X_of, U_of = [], []
    for t in steps:
        if net.coupled_X is not None:
            parts = split(net.coupled_X_at, state_dims, t)
            X_of.append({i: parts[i] for i in range(net.eta)})
        else:
            X_of.append({i: net.subsystems[i].X_at(t) for i in range(net.eta)})
        if net.coupled_U is not None:
            parts = split(net.coupled_U_at, input_dims, t)
            U_of.append({i: parts[i] for i in range(net.eta)})
        else:
            U_of.append({i: net.subsystems[i].U_at(t) for i in range(net.eta)})
    return X_of, U_of
