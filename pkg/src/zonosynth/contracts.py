"""Parametric contracts between coupled subsystems.

Each subsystem publishes a *guarantee*: parametric state and input sets
obtained by scaling the generator columns of fixed baseline sets.  What a
subsystem *assumes* about its neighbors follows mechanically: coupling
matrices map the neighbors' guarantees into an additive disturbance set.

The per-subsystem potential measures how far the locally synthesizable tube
protrudes from the subsystem's own guarantee, as a sum of directed Hausdorff
distances.  It is the optimal value of one LP in which every contract
parameter appears only on right-hand sides, so one solve yields both the
value and an exact subgradient with respect to all parameters (own and
neighbors') through the LP duals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ipm
from .geometry import Block, Zonotope, check_containment, encode_inclusion
from .optim import ProblemBuilder, SolverError, hcat
from .synthesis import SynthesisResult, TubeController, k_search, synth_rci, synth_viable

ALPHA_FLOOR = 1e-9


class BaselineError(RuntimeError):
    """No usable baseline sets could be constructed for a subsystem."""


# -- parameter bookkeeping ----------------------------------------------------

def pname(kind, i, t=None):
    """Canonical parameter names: ax3, au3 (RCI) or ax3_5 etc. (timed)."""
    return f"{kind}{i}" if t is None else f"{kind}{i}_{t}"


@dataclass
class ContractParams:
    """Flat name -> vector map of all negotiated parameters."""

    values: dict

    def copy(self):
        return ContractParams({k: np.array(v) for k, v in self.values.items()})

    def get(self, name):
        return self.values[name]

    def step(self, gradient, delta):
        """Gradient-descent update with the positivity floor on scalings."""
        out = {}
        for name, v in self.values.items():
            g = gradient.get(name)
            nv = v - delta * g if g is not None else np.array(v)
            if name.startswith("a"):
                nv = np.maximum(nv, ALPHA_FLOOR)
            out[name] = nv
        return ContractParams(out)

    def merge(self, other):
        d = dict(self.values)
        d.update(other.values)
        return ContractParams(d)

    def asdict(self):
        return {k: np.asarray(v).tolist() for k, v in self.values.items()}


def add_gradients(target, part):
    for name, g in part.items():
        if name in target:
            target[name] = target[name] + g
        else:
            target[name] = np.array(g)
    return target


# -- baseline sets --------------------------------------------------------------

@dataclass
class Baseline:
    cx: np.ndarray
    Cx: np.ndarray
    cu: np.ndarray
    Cu: np.ndarray


@dataclass
class BaselineSets:
    mode: str                       # "viable" | "rci" | "mpc"
    entries: dict                   # (i, t) -> Baseline; t None in rci mode
    horizon: int | None = None

    def at(self, i, t=None) -> Baseline:
        key = (i, None) if self.mode == "rci" else (i, t)
        return self.entries[key]

    def state_times(self, i):
        return [None] if self.mode == "rci" else \
            sorted(t for (j, t) in self.entries if j == i)


def _nonzero_cols(M):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return M.reshape(M.shape[0], 0)
    keep = np.abs(M).max(axis=0) > 0.0
    return M[:, keep]


def rci_with_beta_sweep(sub, k_init, k_max, X=None, U=None, disturbance=None):
    """Simple-mode invariant set first; sweep the contraction rate if needed."""
    res = k_search(lambda k: synth_rci(sub, k=k, simple=True, X=X, U=U,
                                       disturbance=disturbance), k_init, k_max)
    if res is not None and res.feasible:
        return res
    for beta in np.arange(0.0, 1.0, 0.1):
        res = k_search(lambda k: synth_rci(sub, k=k, beta=beta, simple=False,
                                           X=X, U=U, disturbance=disturbance),
                       k_init, k_max)
        if res is not None and res.feasible:
            return res
    return res


def build_baselines(net, mode, admissible_X=None, admissible_U=None,
                    k_max=12, horizon=None, box=True) -> BaselineSets:
    """Baseline guarantee sets per subsystem and step.

    For viable/rci negotiation the default is each subsystem's decoupled
    tube (couplings ignored); when that synthesis is infeasible the
    subsystem's admissible sets serve as the baseline shape instead.  In MPC
    mode centers are parameters, so only generator shapes matter: admissible
    generators where present, unit boxes otherwise.

    ``box=True`` replaces tube-derived baselines by their interval hulls:
    axis-aligned baselines keep every downstream encoding in the cheap
    row-interval form and cut the parameter count to the set dimension.
    """
    h = horizon if horizon is not None else net.horizon
    entries = {}

    def shape(center, gens):
        if not box or gens.shape[1] == 0:
            return np.array(center), _nonzero_cols(gens)
        Z = Zonotope(center, gens)
        return np.array(center), _nonzero_cols(np.diag(Z.radii()))

    if mode == "rci":
        for i, sub in enumerate(net.subsystems):
            X = admissible_X[i] if admissible_X else sub.X_at(0)
            U = admissible_U[i] if admissible_U else sub.U_at(0)
            res = rci_with_beta_sweep(sub, max(sub.n, 1), k_max, X=X, U=U)
            if res is not None and res.feasible:
                om, th = res.omegas()[0], res.thetas()[0]
                entries[(i, None)] = Baseline(*shape(om.center, om.generators),
                                              *shape(th.center, th.generators))
                continue
            if X is None or U is None:
                raise BaselineError(
                    f"subsystem {i}: decoupled invariant-set synthesis failed "
                    f"and no admissible sets exist to fall back on")
            entries[(i, None)] = Baseline(X.center, X.generators,
                                          U.center, U.generators)
        return BaselineSets("rci", entries)

    if mode == "viable":
        if h is None:
            raise ValueError("viable baselines need a horizon")
        for i, sub in enumerate(net.subsystems):
            X_seq = [admissible_X[t][i] if admissible_X else sub.X_at(t)
                     for t in range(h + 1)]
            U_seq = [admissible_U[t][i] if admissible_U else sub.U_at(t)
                     for t in range(h)]
            res = k_search(lambda k: synth_viable(sub, h, k, X_seq=X_seq,
                                                  U_seq=U_seq), 0, k_max)
            if res is not None and res.feasible:
                ctrl = res.controller
                for t in range(h + 1):
                    cu = ctrl.u_centers[min(t, h - 1)]
                    Cu = ctrl.M[min(t, h - 1)]
                    entries[(i, t)] = Baseline(
                        *shape(ctrl.x_centers[t], ctrl.T[t]),
                        *shape(cu, Cu))
                continue
            if any(Z is None for Z in X_seq) or any(Z is None for Z in U_seq):
                raise BaselineError(
                    f"subsystem {i}: decoupled tube synthesis failed and the "
                    f"admissible-set fallback is incomplete")
            for t in range(h + 1):
                U = U_seq[min(t, h - 1)]
                entries[(i, t)] = Baseline(X_seq[t].center, X_seq[t].generators,
                                           U.center, U.generators)
        return BaselineSets("viable", entries, h)

    if mode == "mpc":
        if h is None:
            raise ValueError("mpc baselines need a horizon")
        for i, sub in enumerate(net.subsystems):
            X = admissible_X[i] if admissible_X else sub.X_at(0)
            U = admissible_U[i] if admissible_U else sub.U_at(0)
            Cx = X.generators if X is not None else np.eye(sub.n)
            Cu = U.generators if U is not None else np.eye(sub.m)
            for t in range(h):
                entries[(i, t)] = Baseline(np.zeros(sub.n), Cx,
                                           np.zeros(sub.m), Cu)
        return BaselineSets("mpc", entries, h)

    raise ValueError(f"unknown baseline mode {mode!r}")


# -- assumed disturbance ---------------------------------------------------------

def _coupling_terms(net, i):
    """Incoming couplings of i, merged per neighbor: (j, A_fn, B_fn)."""
    terms = []
    for c in net.incoming(i):
        terms.append((c.j, c))
    return terms


def assumed_disturbance(i, t, params: ContractParams, baselines: BaselineSets,
                        net):
    """Boxed assumption set over the disturbance space, with sensitivities.

    Returns (box, diag_sens, center_sens): ``box`` is the interval hull of
    the coupled-neighbor images plus the exogenous disturbance;
    ``diag_sens[name][r, c]`` is d(diag_r)/d(alpha_name[c]), exact because
    the boxed radii are linear in the nonnegative scalings.
    """
    sub = net.subsystems[i]
    tt = 0 if t is None else t
    D = sub.D_at(tt)
    n = sub.n
    diag = np.abs(D.generators).sum(axis=1) if D.num_generators else np.zeros(n)
    center = np.array(D.center)
    diag_sens, center_sens = {}, {}
    tkey = None if baselines.mode == "rci" else t
    for j, c in _coupling_terms(net, i):
        base = baselines.at(j, tkey)
        if c.A is not None:
            K = np.abs(c.A_at(tt) @ base.Cx)
            name = pname("ax", j, tkey)
            diag = diag + K @ params.get(name)
            diag_sens[name] = diag_sens.get(name, 0) + K
            center = center + c.A_at(tt) @ base.cx
            center_sens[pname("cx", j, tkey)] = c.A_at(tt)
        if c.B is not None:
            K = np.abs(c.B_at(tt) @ base.Cu)
            name = pname("au", j, tkey)
            diag = diag + K @ params.get(name)
            diag_sens[name] = diag_sens.get(name, 0) + K
            center = center + c.B_at(tt) @ base.cu
            center_sens[pname("cu", j, tkey)] = c.B_at(tt)
    return Zonotope(center, np.diag(diag)), diag_sens, center_sens


def assumption_set(i, t, params, baselines, net, boxed=False):
    """The assumption set W (optionally boxed) at given parameter values."""
    sub = net.subsystems[i]
    tt = 0 if t is None else t
    tkey = None if baselines.mode == "rci" else t
    parts_c = [np.array(sub.D_at(tt).center)]
    parts_g = [sub.D_at(tt).generators]
    for j, c in _coupling_terms(net, i):
        base = baselines.at(j, tkey)
        if c.A is not None:
            cx = base.cx if baselines.mode != "mpc" else params.get(pname("cx", j, tkey))
            parts_c.append(c.A_at(tt) @ cx)
            parts_g.append(c.A_at(tt) @ (base.Cx * params.get(pname("ax", j, tkey))))
        if c.B is not None:
            cu = base.cu if baselines.mode != "mpc" else params.get(pname("cu", j, tkey))
            parts_c.append(c.B_at(tt) @ cu)
            parts_g.append(c.B_at(tt) @ (base.Cu * params.get(pname("au", j, tkey))))
    W = Zonotope(np.sum(parts_c, axis=0), np.hstack(parts_g))
    from .geometry import reduce_box
    return reduce_box(W) if boxed else W


def guarantee_sets(i, t, params, baselines):
    """Parametric state/input guarantee at given parameter values."""
    tkey = None if baselines.mode == "rci" else t
    base = baselines.at(i, tkey)
    if baselines.mode == "mpc":
        cx = params.get(pname("cx", i, tkey))
        cu = params.get(pname("cu", i, tkey))
    else:
        cx, cu = base.cx, base.cu
    X = Zonotope(cx, base.Cx * params.get(pname("ax", i, tkey)))
    U = Zonotope(cu, base.Cu * params.get(pname("au", i, tkey)))
    return X, U


# -- the potential LP ------------------------------------------------------------

@dataclass
class PotentialEval:
    feasible: bool
    value: float = np.nan           # sum of distance variables only
    objective: float = np.nan       # value + omega * quadratic cost
    dx: list = field(default_factory=list)
    du: list = field(default_factory=list)
    omegas: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    controller: TubeController | None = None
    gradient: dict = field(default_factory=dict)

    def message(self):
        """Wire form exchanged during negotiation."""
        return {"V": self.value, "feasible": self.feasible,
                "gradient": [(k, np.asarray(v).tolist())
                             for k, v in sorted(self.gradient.items())]}


class PotentialProblem:
    """Compiled distance-minimization LP for one subsystem at fixed k.

    The program is assembled once; contract parameters (and, in MPC mode,
    initial states) enter only through right-hand sides, so re-evaluation at
    new parameters is a fresh solve of the same matrices.
    """

    def __init__(self, net, baselines: BaselineSets, i, k, mode=None,
                 terminal=None, cost=None, omega=0.0):
        self.net, self.baselines, self.i, self.k = net, baselines, i, k
        self.mode = mode or baselines.mode
        self.terminal = terminal
        self.cost = cost
        self.omega = omega
        self.sub = net.subsystems[i]
        if self.mode == "rci":
            self._build_rci()
        elif self.mode == "viable":
            self._build_viable()
        elif self.mode == "mpc":
            self._build_mpc()
        else:
            raise ValueError(f"unknown potential mode {self.mode!r}")

    # .. shared pieces ..........................................................

    def _declare_alpha(self, pb, which, j, tkey):
        base = self.baselines.at(j, tkey)
        count = base.Cx.shape[1] if which == "ax" else base.Cu.shape[1]
        name = pname(which, j, tkey)
        if name not in pb._pars:
            pb.param(name, count)
        off, shape = pb._pars[name]
        out = np.empty(count, dtype=object)
        from .optim import LinExpr
        for r in range(count):
            out[r] = LinExpr(0.0, None, {off + r: 1.0})
        return out

    def _declare_center(self, pb, which, j, tkey, dim):
        name = pname(which, j, tkey)
        if name not in pb._pars:
            return pb.param(name, dim)
        off, _ = pb._pars[name]
        from .optim import LinExpr
        return np.array([LinExpr(0.0, None, {off + r: 1.0})
                         for r in range(dim)], dtype=object)

    def _boxed_w(self, pb, t, tkey, first_step_points=False):
        """Symbolic boxed assumption: (center exprs, diag exprs)."""
        sub, net = self.sub, self.net
        tt = 0 if t is None else t
        D = sub.D_at(tt)
        n = sub.n
        diag = np.abs(D.generators).sum(axis=1).astype(object) if \
            D.num_generators else np.zeros(n, dtype=object)
        center = np.array(D.center, dtype=object)
        for j, c in _coupling_terms(net, self.i):
            base = self.baselines.at(j, tkey)
            if c.A is not None:
                if first_step_points:
                    x0j = self._declare_center(pb, "x0_", j, None,
                                               net.subsystems[j].n)
                    center = center + np.dot(c.A_at(tt), x0j)
                else:
                    a = self._declare_alpha(pb, "ax", j, tkey)
                    diag = diag + np.dot(np.abs(c.A_at(tt) @ base.Cx), a)
                    if self.mode == "mpc":
                        cxj = self._declare_center(pb, "cx", j, tkey,
                                                   net.subsystems[j].n)
                        center = center + np.dot(c.A_at(tt), cxj)
                    else:
                        center = center + c.A_at(tt) @ base.cx
            if c.B is not None:
                a = self._declare_alpha(pb, "au", j, tkey)
                diag = diag + np.dot(np.abs(c.B_at(tt) @ base.Cu), a)
                if self.mode == "mpc":
                    cuj = self._declare_center(pb, "cu", j, tkey,
                                               net.subsystems[j].m)
                    center = center + np.dot(c.B_at(tt), cuj)
                else:
                    center = center + c.B_at(tt) @ base.cu
        return center, diag

    def _distance_containment(self, pb, inner_c, inner_g, outer_c, base_gens,
                              alpha, dvar, prefix):
        blocks = [Block(base_gens, alpha), Block(np.eye(len(inner_c)), dvar)]
        encode_inclusion(pb, (inner_c, inner_g), outer_c, blocks, prefix)

    # .. RCI mode ...............................................................

    def _build_rci(self):
        sub, i, k = self.sub, self.i, self.k
        n, m = sub.n, sub.m
        pb = ProblemBuilder(f"potential-rci-{i}")
        A, B = sub.A_at(0), sub.B_at(0)
        wc, wdiag = self._boxed_w(pb, None, None)

        T = pb.var("T", (n, k)) if k else np.zeros((n, 0), dtype=object)
        M = pb.var("M", (m, k)) if k else np.zeros((m, 0), dtype=object)
        xb, ub = pb.var("xb", n), pb.var("ub", m)
        dx, du = pb.var("dx"), pb.var("du")
        pb.add_le(-dx, 0.0)
        pb.add_le(-du, 0.0)

        # [A T + B M, W_box] = [0, T]; the boxed generator is diag(wdiag).
        Wg = np.zeros((n, n), dtype=object)
        for r in range(n):
            Wg[r, r] = wdiag[r]
        lhs = hcat(np.dot(A, T) + np.dot(B, M), Wg)
        rhs = hcat(np.zeros((n, n)), T)
        pb.add_eq(lhs, rhs)
        pb.add_eq(np.dot(A, xb) + np.dot(B, ub) + wc, xb)

        base = self.baselines.at(i, None)
        ax = self._declare_alpha(pb, "ax", i, None)
        au = self._declare_alpha(pb, "au", i, None)
        self._distance_containment(pb, xb, T, base.cx, base.Cx, ax, dx, "cx")
        self._distance_containment(pb, ub, M, base.cu, base.Cu, au, du, "cu")
        pb.add_cost(dx + du)
        self._finish(pb, [("dx", None), ("du", None)])

    # .. finite-horizon (Problem 1) mode ........................................

    def _build_viable(self):
        sub, i, k = self.sub, self.i, self.k
        net = self.net
        h = net.horizon
        n, m = sub.n, sub.m
        pb = ProblemBuilder(f"potential-viable-{i}")

        widths = [k + t * n for t in range(h + 1)]
        T = [pb.var(f"T{t}", (n, widths[t])) if widths[t] else
             np.zeros((n, 0), dtype=object) for t in range(h + 1)]
        M = [pb.var(f"M{t}", (m, widths[t])) if widths[t] else
             np.zeros((m, 0), dtype=object) for t in range(h)]
        xb = [pb.var(f"xb{t}", n) for t in range(h + 1)]
        ub = [pb.var(f"ub{t}", m) for t in range(h)]
        dx = pb.var("dx", h + 1)
        du = pb.var("du", h)
        pb.add_le(-dx, 0.0)
        pb.add_le(-du, 0.0)

        for t in range(h):
            A, B = sub.A_at(t), sub.B_at(t)
            wc, wdiag = self._boxed_w(pb, t, t)
            Wg = np.zeros((n, n), dtype=object)
            for r in range(n):
                Wg[r, r] = wdiag[r]
            pb.add_eq(hcat(np.dot(A, T[t]) + np.dot(B, M[t]), Wg),
                      np.asarray(T[t + 1], dtype=object))
            pb.add_eq(np.dot(A, xb[t]) + np.dot(B, ub[t]) + wc, xb[t + 1])

        for t in range(h + 1):
            base = self.baselines.at(i, t)
            ax = self._declare_alpha(pb, "ax", i, t)
            self._distance_containment(pb, xb[t], T[t], base.cx, base.Cx,
                                       ax, dx[t], f"cx{t}")
        for t in range(h):
            base = self.baselines.at(i, t)
            au = self._declare_alpha(pb, "au", i, t)
            self._distance_containment(pb, ub[t], M[t], base.cu, base.Cu,
                                       au, du[t], f"cu{t}")
        pb.add_cost(dx.sum() + du.sum())
        self._finish(pb, [("dx", h + 1), ("du", h)])

    # .. MPC mode ................................................................

    def _build_mpc(self):
        sub, i, k = self.sub, self.i, self.k
        net = self.net
        h = self.baselines.horizon
        n, m = sub.n, sub.m
        if k < n:
            raise ValueError("mpc mode needs k >= the state dimension")
        if self.terminal is None:
            raise ValueError("mpc mode needs a terminal set")
        pb = ProblemBuilder(f"potential-mpc-{i}")

        widths = [0] + [k + (t - 1) * n for t in range(1, h + 1)]
        T = [np.zeros((n, 0), dtype=object)] + \
            [pb.var(f"T{t}", (n, widths[t])) for t in range(1, h + 1)]
        M = [np.zeros((m, 0), dtype=object)] + \
            [pb.var(f"M{t}", (m, widths[t])) for t in range(1, h)]
        xb = [pb.var(f"xb{t}", n) for t in range(h + 1)]
        ub = [pb.var(f"ub{t}", m) for t in range(h)]
        dx = pb.var("dx", h)            # stages 1..h
        du = pb.var("du", h - 1)        # stages 1..h-1
        pb.add_le(-dx, 0.0)
        pb.add_le(-du, 0.0)

        x0 = self._declare_center(pb, "x0_", i, None, n)
        pb.add_eq(np.asarray(xb[0], dtype=object) - x0, 0.0)

        # first transition: neighbors contribute their known initial states
        A, B = sub.A_at(0), sub.B_at(0)
        wc0, wdiag0 = self._boxed_w(pb, 0, 0, first_step_points=True)
        Wg0 = np.zeros((n, n), dtype=object)
        for r in range(n):
            Wg0[r, r] = wdiag0[r]
        pb.add_eq(np.asarray(T[1], dtype=object),
                  hcat(np.zeros((n, k - n)), Wg0))
        pb.add_eq(np.dot(A, xb[0]) + np.dot(B, ub[0]) + wc0, xb[1])

        for t in range(1, h):
            wc, wdiag = self._boxed_w(pb, t, t)
            Wg = np.zeros((n, n), dtype=object)
            for r in range(n):
                Wg[r, r] = wdiag[r]
            pb.add_eq(hcat(np.dot(A, T[t]) + np.dot(B, M[t]), Wg),
                      np.asarray(T[t + 1], dtype=object))
            pb.add_eq(np.dot(A, xb[t]) + np.dot(B, ub[t]) + wc, xb[t + 1])

        for t in range(1, h):
            base = self.baselines.at(i, t)
            ax = self._declare_alpha(pb, "ax", i, t)
            cx = self._declare_center(pb, "cx", i, t, n)
            self._distance_containment(pb, xb[t], T[t], cx, base.Cx, ax,
                                       dx[t - 1], f"cx{t}")
            au = self._declare_alpha(pb, "au", i, t)
            cu = self._declare_center(pb, "cu", i, t, m)
            self._distance_containment(pb, ub[t], M[t], cu, base.Cu, au,
                                       du[t - 1], f"cu{t}")
        # terminal containment
        encode_inclusion(pb, (xb[h], T[h]), self.terminal.center,
                         [Block(self.terminal.generators),
                          Block(np.eye(n), dx[h - 1])], "term")
        # the first applied input must be admissible outright
        U0 = sub.U_at(0)
        if U0 is not None:
            encode_inclusion(pb, (ub[0], np.zeros((m, 0))), U0.center,
                             [Block(U0.generators)], "u0adm")

        pb.add_cost(dx.sum() + du.sum())
        if self.cost is not None and self.omega > 0.0:
            Q, R = self.cost
            qd, rd = np.diag(np.atleast_2d(Q)), np.diag(np.atleast_2d(R))
            for t in range(1, h + 1):
                for r in range(n):
                    if qd[r]:
                        pb.add_square_cost(xb[t][r], self.omega * qd[r])
            for t in range(h):
                for r in range(m):
                    if rd[r]:
                        pb.add_square_cost(ub[t][r], self.omega * rd[r])
        self._finish(pb, [("dx", h), ("du", h - 1)])

    # .. evaluation .............................................................

    def _finish(self, pb, dist_vars):
        self.program = pb.compile()
        self._dist_vars = dist_vars

    def evaluate(self, params: ContractParams, x0=None) -> PotentialEval:
        values = dict(params.values)
        if x0 is not None:
            for j, xj in enumerate(x0):
                values[pname("x0_", j)] = np.asarray(xj, dtype=float)
        sol = self.program.solve(values)
        if sol.status == ipm.INFEASIBLE:
            return PotentialEval(False)
        if not sol.optimal:
            raise SolverError(
                f"potential LP for subsystem {self.i} failed: {sol.status}")
        dx_name, dx_count = self._dist_vars[0]
        du_name, du_count = self._dist_vars[1]
        dx = sol.value(dx_name)
        du = sol.value(du_name)
        dx = np.atleast_1d(dx)
        du = np.atleast_1d(du)
        value = float(np.maximum(dx, 0.0).sum() + np.maximum(du, 0.0).sum())
        grad = {k: v for k, v in sol.param_gradient().items()
                if not k.startswith("x0_")}
        ctrl, omegas, thetas = self._extract_tubes(sol)
        return PotentialEval(True, value, sol.objective, dx.tolist(), du.tolist(),
                             omegas, thetas, ctrl, grad)

    def _extract_tubes(self, sol):
        n, m = self.sub.n, self.sub.m
        if self.mode == "rci":
            ctrl = TubeController(
                "rci", [sol.value("xb")], [sol.value("ub")],
                [sol.value("T") if self.k else np.zeros((n, 0))],
                [sol.value("M") if self.k else np.zeros((m, 0))], self.k)
            return ctrl, [ctrl.state_tube(0)], [ctrl.action_tube(0)]
        h = self.net.horizon if self.mode == "viable" else self.baselines.horizon
        xs = [sol.value(f"xb{t}") for t in range(h + 1)]
        us = [sol.value(f"ub{t}") for t in range(h)]
        if self.mode == "viable":
            Ts = [sol.value(f"T{t}") if self.k + t * n else np.zeros((n, 0))
                  for t in range(h + 1)]
            Ms = [sol.value(f"M{t}") if self.k + t * n else np.zeros((m, 0))
                  for t in range(h)]
        else:
            Ts = [np.zeros((n, 0))] + [sol.value(f"T{t}")
                                       for t in range(1, h + 1)]
            Ms = [np.zeros((m, 0))] + [sol.value(f"M{t}")
                                       for t in range(1, h)]
        ctrl = TubeController("finite", xs, us, Ts, Ms, self.k)
        omegas = [ctrl.state_tube(t) for t in range(h + 1)]
        thetas = [ctrl.action_tube(t) for t in range(len(Ms))]
        return ctrl, omegas, thetas


def evaluate_potential(i, params, baselines, net, k, terminal=None,
                       cost=None, omega=0.0, x0=None) -> PotentialEval:
    """One-shot potential evaluation (compiles, solves, discards)."""
    prob = PotentialProblem(net, baselines, i, k, terminal=terminal,
                            cost=cost, omega=omega)
    return prob.evaluate(params, x0=x0)


# -- validity projection -----------------------------------------------------------

class ValidityProjector:
    """Per-(i, t) QPs projecting parameters onto the valid set.

    Validity means the parametric guarantee stays inside the subsystem's own
    admissible set; the projection minimizes the Euclidean parameter change
    subject to the containment encoding.
    """

    def __init__(self, net, baselines: BaselineSets, admissible_X,
                 admissible_U):
        self.baselines = baselines
        self.progs = {}
        mode = baselines.mode
        for (i, t), base in baselines.entries.items():
            for which, C, cen, adm in (
                    ("ax", base.Cx, base.cx,
                     self._adm(admissible_X, i, t, mode)),
                    ("au", base.Cu, base.cu,
                     self._adm(admissible_U, i, t, mode))):
                if adm is None or C.shape[1] == 0:
                    continue
                self.progs[(which, i, t)] = self._build(
                    which, C, cen, adm, mode)

    @staticmethod
    def _adm(table, i, t, mode):
        if table is None:
            return None
        if mode == "rci":
            entry = table[i] if not isinstance(table, dict) else table.get(i)
        else:
            entry = table[t][i] if not isinstance(table, dict) else \
                table.get((i, t))
        return entry

    def _build(self, which, C, cen, adm, mode):
        nloc, cols = C.shape
        pb = ProblemBuilder(f"project-{which}")
        a = pb.var("a", cols)
        target = pb.param("target", cols)
        pb.add_le(-a, -ALPHA_FLOOR)
        gens = np.empty((nloc, cols), dtype=object)
        for r in range(nloc):
            for c in range(cols):
                gens[r, c] = a[c] * C[r, c]
        if mode == "mpc":
            cvar = pb.var("c", nloc)
            ctar = pb.param("ctarget", nloc)
            inner_center = cvar
            for r in range(nloc):
                pb.add_square_cost(cvar[r] - ctar[r])
        else:
            inner_center = np.asarray(cen, dtype=float)
        encode_inclusion(pb, (inner_center, gens), adm.center,
                         [Block(adm.generators)], "val")
        for c in range(cols):
            pb.add_square_cost(a[c] - target[c])
        prog = pb.compile()
        # analytic validity test, exact for axis-aligned admissible sets
        from .geometry import _is_diagonal
        if _is_diagonal(adm.generators) and adm.generators.shape[0] == nloc:
            prog._fast = (np.abs(C), np.asarray(cen, dtype=float),
                          adm.center, np.abs(np.diag(adm.generators)))
        else:
            prog._fast = None
        return prog

    def _already_valid(self, prog, alpha, center=None):
        if prog._fast is None:
            return False
        K, cen, adm_c, radii = prog._fast
        c = cen if center is None else center
        return bool(np.all(K @ alpha + np.abs(c - adm_c) <= radii + 1e-12))

    def project(self, params: ContractParams) -> ContractParams:
        out = params.copy()
        mode = self.baselines.mode
        for (which, i, t), prog in self.progs.items():
            name = pname(which, i, t)
            cname = pname("cx" if which == "ax" else "cu", i, t) \
                if mode == "mpc" else None
            center = params.get(cname) if cname else None
            if self._already_valid(prog, params.get(name), center):
                continue
            vals = {"target": params.get(name)}
            if cname:
                vals["ctarget"] = center
            sol = prog.solve(vals)
            if sol.status == ipm.INFEASIBLE:
                raise BaselineError(
                    f"subsystem {i}: guarantee at step {t} cannot be made "
                    f"valid (baseline center outside the admissible set)")
            if not sol.optimal:
                raise SolverError(f"projection QP failed: {sol.status}")
            out.values[name] = np.maximum(np.atleast_1d(sol.value("a")),
                                          ALPHA_FLOOR)
            if cname is not None:
                out.values[cname] = np.atleast_1d(sol.value("c"))
        return out


def default_params(net, baselines: BaselineSets, init="ones", rng=None,
                   mpc_centers=None) -> ContractParams:
    """All-ones scalings (or seeded uniform[0.5, 1.5]); MPC centers zeroed."""
    values = {}
    for (i, t), base in baselines.entries.items():
        for which, C in (("ax", base.Cx), ("au", base.Cu)):
            cols = C.shape[1]
            if init == "random":
                v = rng.uniform(0.5, 1.5, cols)
            else:
                v = np.ones(cols)
            values[pname(which, i, t)] = v
        if baselines.mode == "mpc":
            cx0, cu0 = None, None
            if mpc_centers is not None and (i, t) in mpc_centers:
                cx0, cu0 = mpc_centers[(i, t)]
            values[pname("cx", i, t)] = np.array(cx0) if cx0 is not None \
                else np.zeros(base.cx.size)
            values[pname("cu", i, t)] = np.array(cu0) if cu0 is not None \
                else np.zeros(base.cu.size)
    return ContractParams(values)


# -- correctness certification -----------------------------------------------------

@dataclass
class CorrectnessReport:
    guarantee_ok: dict             # (i, t, "x"|"u") -> bool   (strong check)
    assumption_ok: dict            # (i, t) -> bool            (implied check)
    all_ok: bool

    def summary(self):
        bad = [k for k, v in {**self.guarantee_ok, **self.assumption_ok}.items()
               if not v]
        return "all certificates hold" if self.all_ok else \
            f"{len(bad)} certificate(s) failed: {bad[:6]}"


def certify_correctness(omegas, thetas, params, baselines, net,
                        terminal=None) -> CorrectnessReport:
    """Containment certificates for the strong per-subsystem inclusions and
    the implied assumption-coverage inclusions (computed without boxing).

    ``omegas[i]``/``thetas[i]`` are the per-subsystem tube sequences (single
    sets in rci mode).
    """
    mode = baselines.mode
    gok, aok = {}, {}
    times = [None] if mode == "rci" else list(range(baselines.horizon or 0))

    for i in range(net.eta):
        oms, ths = omegas[i], thetas[i]
        if mode == "rci":
            X, U = guarantee_sets(i, None, params, baselines)
            gok[(i, 0, "x")] = check_containment(oms[0], X).feasible
            gok[(i, 0, "u")] = check_containment(ths[0], U).feasible
        elif mode == "viable":
            h = baselines.horizon
            for t in range(h + 1):
                X, _ = guarantee_sets(i, t, params, baselines)
                gok[(i, t, "x")] = check_containment(oms[t], X).feasible
            for t in range(h):
                _, U = guarantee_sets(i, t, params, baselines)
                gok[(i, t, "u")] = check_containment(ths[t], U).feasible
        else:
            h = baselines.horizon
            for t in range(1, h):
                X, U = guarantee_sets(i, t, params, baselines)
                gok[(i, t, "x")] = check_containment(oms[t], X).feasible
                gok[(i, t, "u")] = check_containment(ths[t], U).feasible
            gok[(i, h, "x")] = check_containment(oms[h], terminal[i]).feasible

    for i in range(net.eta):
        steps = [None] if mode == "rci" else \
            (list(range(net.horizon)) if mode == "viable"
             else list(range(1, baselines.horizon)))
        for t in steps:
            tt = 0 if t is None else t
            sub = net.subsystems[i]
            parts_c = [np.array(sub.D_at(tt).center)]
            parts_g = [sub.D_at(tt).generators]
            for j, c in _coupling_terms(net, i):
                om = omegas[j][tt if mode != "rci" else 0]
                th = thetas[j][min(tt if mode != "rci" else 0,
                                   len(thetas[j]) - 1)]
                if c.A is not None:
                    parts_c.append(c.A_at(tt) @ om.center)
                    parts_g.append(c.A_at(tt) @ om.generators)
                if c.B is not None:
                    parts_c.append(c.B_at(tt) @ th.center)
                    parts_g.append(c.B_at(tt) @ th.generators)
            daug = Zonotope(np.sum(parts_c, axis=0), np.hstack(parts_g))
            W = assumption_set(i, t, params, baselines, net, boxed=False)
            aok[(i, 0 if t is None else t)] = check_containment(daug, W).feasible

    all_ok = all(gok.values()) and all(aok.values())
    return CorrectnessReport(gok, aok, all_ok)
