"""Single-subsystem tube synthesis and online controller evaluation.

Two synthesis modes, both linear programs:

* finite horizon: tube matrices satisfy the forward recursion
  ``[A_t T_t + B_t M_t, Gd_t] = T_{t+1}`` (or, in fixed-width mode, the
  leading block of ``[0, T_{t+1}]``), with per-step set containments;
* infinite horizon (LTI): ``[A T + B M, Gd] = [E, T]`` with a contraction
  certificate on E, giving a robust control invariant set after scaling the
  tube by 1/(1-beta).

Feasibility is a value, not an exception: searches over the column-count
hyper-parameter k branch on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ipm
from .geometry import Block, Zonotope, encode_inclusion
from .optim import ProblemBuilder, SolverError, hcat


class OutOfTubeError(RuntimeError):
    """The queried state is not inside the tube cross-section."""


@dataclass
class TubeController:
    """Realizes the set-valued policy u = u_bar_t + M_t zeta(x)."""

    mode: str                      # "finite" or "rci"
    x_centers: list
    u_centers: list
    T: list
    M: list
    k: int
    beta: float = 0.0

    def horizon(self):
        return len(self.u_centers)

    def _stage(self, t):
        if self.mode == "rci":
            return 0
        if not 0 <= t <= len(self.T) - 1:
            raise IndexError(f"stage {t} outside tube range")
        return t

    def state_tube(self, t) -> Zonotope:
        i = self._stage(t)
        scale = 1.0 / (1.0 - self.beta) if self.mode == "rci" else 1.0
        return Zonotope(self.x_centers[i], scale * self.T[i])

    def action_tube(self, t) -> Zonotope:
        i = min(self._stage(t), len(self.M) - 1)
        scale = 1.0 / (1.0 - self.beta) if self.mode == "rci" else 1.0
        return Zonotope(self.u_centers[i], scale * self.M[i])

    def effective(self, t):
        """(x_bar, T_eff, u_bar, M_eff) with the RCI scaling applied."""
        i = self._stage(t)
        iu = min(i, len(self.M) - 1)
        scale = 1.0 / (1.0 - self.beta) if self.mode == "rci" else 1.0
        return (self.x_centers[i], scale * self.T[i],
                self.u_centers[iu], scale * self.M[iu])

    def to_dict(self):
        return {
            "mode": self.mode, "k": self.k, "beta": self.beta,
            "x_centers": [np.asarray(v).tolist() for v in self.x_centers],
            "u_centers": [np.asarray(v).tolist() for v in self.u_centers],
            "T": [np.asarray(M).tolist() for M in self.T],
            "M": [np.asarray(M).tolist() for M in self.M],
        }

    @staticmethod
    def from_dict(d):
        return TubeController(
            d["mode"],
            [np.asarray(v, dtype=float) for v in d["x_centers"]],
            [np.asarray(v, dtype=float) for v in d["u_centers"]],
            [np.asarray(M, dtype=float) for M in d["T"]],
            [np.asarray(M, dtype=float) for M in d["M"]],
            int(d["k"]), float(d["beta"]))


@dataclass
class SynthesisResult:
    feasible: bool
    k: int
    controller: TubeController | None = None
    status: str = ""
    objective: float = np.nan

    def omegas(self):
        if self.controller.mode == "rci":
            return [self.controller.state_tube(0)]
        return [self.controller.state_tube(t)
                for t in range(len(self.controller.T))]

    def thetas(self):
        if self.controller.mode == "rci":
            return [self.controller.action_tube(0)]
        return [self.controller.action_tube(t)
                for t in range(len(self.controller.M))]

    def to_dict(self):
        out = {"feasible": self.feasible, "k": self.k, "status": self.status}
        if self.controller is not None:
            out["controller"] = self.controller.to_dict()
            out["omegas"] = [Z.to_dict() for Z in self.omegas()]
            out["thetas"] = [Z.to_dict() for Z in self.thetas()]
        return out


def _tube_size_cost(pb, T, name):
    S = pb.var(name, T.shape)
    pb.add_le(T - S, 0.0)
    pb.add_le(-T - S, 0.0)
    pb.add_cost(S.sum())


def synth_viable(sub, h, k, X_seq=None, U_seq=None, fixed_width=False,
                 objective="min_tube", x0=None, pin_T0_zero=False,
                 disturbances=None) -> SynthesisResult:
    """Finite-horizon viable tube for one subsystem, couplings ignored.

    ``X_seq``/``U_seq`` override the subsystem's own bounds (entries may be
    None for unconstrained steps); ``disturbances`` overrides its disturbance
    sequence (used when couplings are folded into the disturbance).
    """
    n, m = sub.n, sub.m
    D = [disturbances[t] if disturbances is not None else sub.D_at(t)
         for t in range(h)]
    X = [X_seq[t] if X_seq is not None else sub.X_at(t) for t in range(h + 1)]
    U = [U_seq[t] if U_seq is not None else sub.U_at(t) for t in range(h)]

    pb = ProblemBuilder("viable")
    widths = []
    w = k
    for t in range(h + 1):
        widths.append(w if not fixed_width else k)
        if t < h:
            w = w + D[t].num_generators
    T = [pb.var(f"T{t}", (n, widths[t])) if widths[t] else
         np.zeros((n, 0), dtype=object) for t in range(h + 1)]
    M = [pb.var(f"M{t}", (m, widths[t])) if widths[t] else
         np.zeros((m, 0), dtype=object) for t in range(h)]
    xb = [pb.var(f"xb{t}", n) for t in range(h + 1)]
    ub = [pb.var(f"ub{t}", m) for t in range(h)]

    if pin_T0_zero and widths[0]:
        pb.add_eq(T[0], 0.0)
    if x0 is not None:
        pb.add_eq(xb[0], np.asarray(x0, dtype=float))

    for t in range(h):
        A, B, Gd = sub.A_at(t), sub.B_at(t), D[t].generators
        flow = hcat(np.dot(A, T[t]) + np.dot(B, M[t]), Gd)
        if fixed_width:
            rhs = hcat(np.zeros((n, Gd.shape[1])), T[t + 1])
        else:
            rhs = np.asarray(T[t + 1], dtype=object)
        pb.add_eq(flow, rhs)
        pb.add_eq(np.dot(A, xb[t]) + np.dot(B, ub[t]) + D[t].center, xb[t + 1])

    for t in range(h + 1):
        if X[t] is not None:
            encode_inclusion(pb, (xb[t], T[t]), X[t].center,
                             [Block(X[t].generators)], f"x{t}")
    for t in range(h):
        if U[t] is not None:
            encode_inclusion(pb, (ub[t], M[t]), U[t].center,
                             [Block(U[t].generators)], f"u{t}")

    if objective == "min_tube":
        for t in range(h + 1):
            if widths[t]:
                _tube_size_cost(pb, T[t], f"S{t}")

    sol = pb.compile().solve()
    if sol.status == ipm.INFEASIBLE:
        return SynthesisResult(False, k, status="infeasible")
    if not sol.optimal:
        raise SolverError(f"viable synthesis solver failure: {sol.status}")
    ctrl = TubeController(
        "finite",
        [sol.value(f"xb{t}") for t in range(h + 1)],
        [sol.value(f"ub{t}") for t in range(h)],
        [sol.value(f"T{t}") if widths[t] else np.zeros((n, 0))
         for t in range(h + 1)],
        [sol.value(f"M{t}") if widths[t] else np.zeros((m, 0))
         for t in range(h)],
        k)
    return SynthesisResult(True, k, ctrl, "optimal", sol.objective)


def synth_rci(sub, k, beta=0.0, X=None, U=None, simple=True,
              disturbance=None) -> SynthesisResult:
    """Robust control invariant set for an LTI subsystem at fixed k, beta."""
    if not sub.lti:
        raise ValueError("invariant-set synthesis expects an LTI subsystem")
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must be in [0, 1)")
    n, m = sub.n, sub.m
    A, B = sub.A_at(0), sub.B_at(0)
    D = disturbance if disturbance is not None else sub.D_at(0)
    X = X if X is not None else sub.X_at(0)
    U = U if U is not None else sub.U_at(0)
    p = D.num_generators

    pb = ProblemBuilder("rci")
    T = pb.var("T", (n, k)) if k else np.zeros((n, 0), dtype=object)
    M = pb.var("M", (m, k)) if k else np.zeros((m, 0), dtype=object)
    xb = pb.var("xb", n)
    ub = pb.var("ub", m)

    if simple:
        E = np.zeros((n, p), dtype=object)
    else:
        E = pb.var("E", (n, p)) if p else np.zeros((n, 0), dtype=object)
        if p:
            if beta > 0.0:
                encode_inclusion(pb, (np.zeros(n), E), np.zeros(n),
                                 [Block(beta * D.generators)], "econ")
            else:
                pb.add_eq(E, 0.0)

    lhs = hcat(np.dot(A, T) + np.dot(B, M), D.generators)
    rhs = hcat(E, T)
    pb.add_eq(lhs, rhs)
    pb.add_eq(np.dot(A, xb) + np.dot(B, ub) + D.center, xb)

    scale = 1.0 / (1.0 - beta)
    if X is not None:
        inner = np.asarray(T, dtype=object) * scale if k else np.zeros((n, 0))
        encode_inclusion(pb, (xb, inner), X.center, [Block(X.generators)], "xcon")
    if U is not None:
        inner = np.asarray(M, dtype=object) * scale if k else np.zeros((m, 0))
        encode_inclusion(pb, (ub, inner), U.center, [Block(U.generators)], "ucon")

    if k:
        _tube_size_cost(pb, np.asarray(T, dtype=object), "S")

    sol = pb.compile().solve()
    if sol.status == ipm.INFEASIBLE:
        return SynthesisResult(False, k, status="infeasible")
    if not sol.optimal:
        raise SolverError(f"invariant-set solver failure: {sol.status}")
    ctrl = TubeController(
        "rci",
        [sol.value("xb")], [sol.value("ub")],
        [sol.value("T") if k else np.zeros((n, 0))],
        [sol.value("M") if k else np.zeros((m, 0))],
        k, beta)
    return SynthesisResult(True, k, ctrl, "optimal", sol.objective)


def k_search(synth_fn, k_init, k_max) -> SynthesisResult:
    """Raise the column count one unit at a time until synthesis succeeds."""
    if k_init > k_max:
        raise ValueError("k_init must not exceed k_max")
    result = None
    for k in range(k_init, k_max + 1):
        result = synth_fn(k)
        if result.feasible:
            return result
    return result


# ---------------------------------------------------------------------------
# Controller evaluation
# ---------------------------------------------------------------------------

_EVAL_TOL = 1e-6


def _lex_coords(T, R, tstar):
    """Lexicographically smallest minimizers of ||zeta||_inf, batched.

    Stage j minimizes zeta_j subject to the remaining equality system and
    the box |zeta| <= tstar; the chosen coordinate is then substituted out.
    """
    B, k = R.shape[0], T.shape[1]
    out = np.zeros((B, k))
    ok = np.ones(B, dtype=bool)
    bounds = tstar + 1e-9
    R = R.copy()
    for j in range(k):
        Tj = T[:, j:]
        c = np.zeros(Tj.shape[1])
        c[0] = 1.0
        lb = np.tile(-bounds[:, None], (1, Tj.shape[1]))
        ub = -lb
        x, conv = ipm.solve_lp_batch(c, Tj, R, lb, ub)
        ok &= conv
        zj = x[:, 0]
        out[:, j] = zj
        R = R - np.outer(zj, T[:, j])
    return out, ok


def eval_controller(ctrl: TubeController, t, x, tie_break=True, tol=_EVAL_TOL):
    """Control input for one state; raises OutOfTubeError outside the tube."""
    u = eval_controller_batch(ctrl, t, np.asarray(x, dtype=float)[None, :],
                              tie_break=tie_break, tol=tol)
    return u[0]


def eval_controller_batch(ctrl: TubeController, t, X, tie_break=True,
                          tol=_EVAL_TOL):
    """Vectorized controller evaluation for a batch of states (rows of X)."""
    xb, T, ub, M = ctrl.effective(t)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = X.shape[0]
    R = X - xb
    k = T.shape[1]
    if k == 0:
        bad = np.max(np.abs(R), axis=1, initial=0.0) > tol
        if np.any(bad):
            raise OutOfTubeError(
                f"{int(bad.sum())} state(s) differ from the singleton tube")
        return np.tile(ub, (B, 1))
    tstar, zeta, ok = _coords_batch(T, R)
    outside = ~ok | (tstar > 1.0 + tol)
    if np.any(outside):
        raise OutOfTubeError(
            f"{int(outside.sum())} state(s) outside the tube at stage {t}")
    if tie_break and k > 1:
        lex, okl = _lex_coords(T, R, tstar)
        # keep the plain minimizer for instances where a stage LP failed
        zeta = np.where(okl[:, None], lex, zeta)
    return ub + zeta @ M.T


def _coords_batch(T, R):
    n, k = T.shape
    B = R.shape[0]
    nv = 3 * k + 1
    c = np.zeros(nv)
    c[k] = 1.0
    A = np.zeros((n + 2 * k, nv))
    A[:n, :k] = T
    A[n:n + k, :k] = np.eye(k)
    A[n:n + k, k] = -1.0
    A[n:n + k, k + 1:2 * k + 1] = np.eye(k)
    A[n + k:, :k] = -np.eye(k)
    A[n + k:, k] = -1.0
    A[n + k:, 2 * k + 1:] = np.eye(k)
    b = np.zeros((B, n + 2 * k))
    b[:, :n] = R
    lb = np.full(nv, -np.inf)
    lb[k:] = 0.0
    ub = np.full(nv, np.inf)
    x, ok = ipm.solve_lp_batch(c, A, b, lb, ub)
    return np.where(ok, x[:, k], np.inf), x[:, :k], ok
