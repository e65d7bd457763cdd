"""Finding correct contract parameters.

Two routes to the same goal:

* :func:`compose_centralized` solves one program over all subsystems' tube
  matrices and contract scalings jointly (assumption sets enter with their
  generators concatenated exactly, never boxed);
* :func:`compose_distributed` iterates the negotiation: project parameters
  onto the valid set, evaluate every subsystem's potential in parallel, sum
  values and subgradients, take a safeguarded subgradient step.  When the
  total potential plateaus above zero the tube width hyper-parameter k is
  raised by one and the loop restarts from the current parameters.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ipm
from .contracts import (
    BaselineSets, ContractParams, PotentialProblem, ValidityProjector,
    add_gradients, build_baselines, certify_correctness, default_params,
    pname,
)
from .decompose import decompose_network_constraints
from .geometry import Block, Zonotope, check_containment, encode_inclusion
from .optim import ProblemBuilder, SolverError, hcat
from .synthesis import TubeController


@dataclass
class NegotiationConfig:
    k_init: int | None = None       # default: max subsystem state dimension
    k_max: int = 20
    step: float = 0.1
    step_rule: str = "polyak"       # "polyak" | "fixed"
    max_halvings: int = 20
    plateau_window: int = 10
    plateau_rtol: float = 1e-6
    zero_tol: float = 1e-9
    max_iters: int = 2000
    alpha_init: str = "ones"        # "ones" | "random"
    seed: int = 0
    threads: int = 1
    time_limit: float | None = None

    def trial_step(self, sum_v, grad):
        """Initial step length for one update, before backtracking.

        The potential's optimal value is known to be zero whenever correct
        parameters exist, so the Polyak rule sum_v / ||g||^2 adapts the step
        across the many orders of magnitude the potential traverses; a fixed
        step is available for comparison runs.
        """
        if self.step_rule == "fixed":
            return self.step
        gsq = sum(float(np.sum(np.square(g))) for g in grad.values())
        if gsq <= 0.0:
            return self.step
        return max(self.step, sum_v / gsq)


@dataclass
class ComposeResult:
    success: bool
    mode: str
    k: int
    sum_v: float
    params: ContractParams
    omegas: list = field(default_factory=list)      # per subsystem
    thetas: list = field(default_factory=list)
    controllers: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    report: object = None
    solve_time: float = 0.0
    iterations: int = 0

    def coupled_constraints_hold(self, net):
        """Certify the product tubes against any coupled sets."""
        from .geometry import cartesian_product
        times = [0] if net.horizon is None else list(range(net.horizon + 1))
        for t in times:
            X = net.coupled_X_at(t) if net.coupled_X is not None else None
            if X is not None:
                prod = cartesian_product([om[min(t, len(om) - 1)]
                                          for om in self.omegas])
                if not check_containment(prod, X).feasible:
                    return False
            U = net.coupled_U_at(t) if net.coupled_U is not None else None
            if U is not None and (net.horizon is None or t < net.horizon):
                prod = cartesian_product([th[min(t, len(th) - 1)]
                                          for th in self.thetas])
                if not check_containment(prod, U).feasible:
                    return False
        return True


def _mode_of(net):
    return "rci" if net.horizon is None else "viable"


def suggest_rci_k(net, reduced=True):
    """Tube width heuristic: room for a full per-column deadbeat chain."""
    widths = []
    for i, sub in enumerate(net.subsystems):
        if reduced:
            p = sub.n
        else:
            p = sub.D_at(0).num_generators
            for c in net.incoming(i):
                if c.A is not None:
                    p += net.subsystems[c.j].n
                if c.B is not None:
                    p += net.subsystems[c.j].m
        widths.append(2 * p)
    return max(widths)


# ---------------------------------------------------------------------------
# Distributed negotiation
# ---------------------------------------------------------------------------

def _evaluate_all(problems, params, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(problems[i].evaluate, params)
                    for i in range(len(problems))]
            return [f.result() for f in futs]
    return [problems[i].evaluate(params) for i in range(len(problems))]


def compose_distributed(net, config: NegotiationConfig | None = None,
                        baselines: BaselineSets | None = None,
                        admissible=None) -> ComposeResult:
    """Contract negotiation via projected subgradient descent on the
    summed potential, with k escalation on plateaus."""
    cfg = config or NegotiationConfig()
    mode = _mode_of(net)
    t0 = time.perf_counter()

    if admissible is None:
        X_of, U_of = decompose_network_constraints(net)
    else:
        X_of, U_of = admissible
    if mode == "rci":
        adm_X, adm_U = X_of[0], U_of[0]
    else:
        adm_X, adm_U = X_of, U_of
    if baselines is None:
        baselines = build_baselines(net, mode, admissible_X=adm_X,
                                    admissible_U=adm_U)
    projector = ValidityProjector(net, baselines, adm_X, adm_U)

    rng = np.random.default_rng(cfg.seed)
    params = default_params(net, baselines, init=cfg.alpha_init, rng=rng)
    k = cfg.k_init if cfg.k_init is not None else \
        max(s.n for s in net.subsystems)

    trace = []
    best = None

    def make_problems(kk):
        return [PotentialProblem(net, baselines, i, kk) for i in range(net.eta)]

    problems = make_problems(k)
    params = projector.project(params)
    evals = _evaluate_all(problems, params, cfg.threads)
    history = []
    it = 0
    while it < cfg.max_iters:
        it += 1
        if cfg.time_limit and time.perf_counter() - t0 > cfg.time_limit:
            break
        if any(not e.feasible for e in evals):
            trace.append({"iter": it, "k": k, "sumV": None, "step": 0.0,
                          "event": "infeasible", "per_subsystem_V": None})
            if k >= cfg.k_max:
                break
            k += 1
            problems = make_problems(k)
            evals = _evaluate_all(problems, params, cfg.threads)
            history = []
            continue

        sum_v = float(sum(e.value for e in evals))
        per_v = [e.value for e in evals]
        if best is None or sum_v < best[0]:
            best = (sum_v, params.copy(), evals, k)
        history.append(sum_v)
        trace.append({"iter": it, "k": k, "sumV": sum_v, "step": cfg.step,
                      "event": "eval", "per_subsystem_V": per_v})

        if sum_v <= cfg.zero_tol:
            report = certify_correctness(
                [e.omegas for e in evals], [e.thetas for e in evals],
                params, baselines, net)
            return ComposeResult(
                True, mode, k, sum_v, params,
                [e.omegas for e in evals], [e.thetas for e in evals],
                [e.controller for e in evals], trace, report,
                time.perf_counter() - t0, it)

        plateau = (len(history) > cfg.plateau_window and
                   history[-cfg.plateau_window - 1] - history[-1] <
                   cfg.plateau_rtol * max(1.0, history[-cfg.plateau_window - 1]))
        if plateau:
            if k >= cfg.k_max:
                break
            k += 1
            problems = make_problems(k)
            evals = _evaluate_all(problems, params, cfg.threads)
            history = []
            trace.append({"iter": it, "k": k, "sumV": None, "step": 0.0,
                          "event": "k_escalation", "per_subsystem_V": None})
            continue

        grad = {}
        for e in evals:
            add_gradients(grad, e.gradient)
        delta = cfg.trial_step(sum_v, grad)
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            cand = projector.project(params.step(grad, delta))
            cand_evals = _evaluate_all(problems, cand, cfg.threads)
            if any(not e.feasible for e in cand_evals):
                delta *= 0.5
                continue
            cand_v = float(sum(e.value for e in cand_evals))
            if cand_v <= sum_v + 1e-12:
                params, evals = cand, cand_evals
                accepted = True
                break
            delta *= 0.5
        if not accepted:
            # no acceptable step: repeat the current value so the plateau
            # window can run out and trigger k escalation
            history.append(sum_v)

    sum_v, params, evals, k = best if best is not None else \
        (np.inf, params, evals, k)
    return ComposeResult(
        False, mode, k, sum_v, params,
        [e.omegas for e in evals if e.feasible],
        [e.thetas for e in evals if e.feasible],
        [e.controller for e in evals if e.feasible], trace, None,
        time.perf_counter() - t0, it)


# ---------------------------------------------------------------------------
# Centralized program
# ---------------------------------------------------------------------------

def compose_centralized(net, k, baselines: BaselineSets | None = None,
                        admissible=None) -> ComposeResult:
    """All subsystems' tubes and contract scalings in one program.

    Assumption generators are concatenated exactly (boxing the symbolic sum
    would break convexity), so tube widths carry every neighbor column.
    """
    mode = _mode_of(net)
    t0 = time.perf_counter()
    if admissible is None:
        X_of, U_of = decompose_network_constraints(net)
    else:
        X_of, U_of = admissible
    if baselines is None:
        baselines = build_baselines(
            net, mode,
            admissible_X=X_of[0] if mode == "rci" else X_of,
            admissible_U=U_of[0] if mode == "rci" else U_of)

    pb = ProblemBuilder(f"centralized-{mode}")
    if mode == "rci":
        tubes = _centralized_rci(pb, net, baselines, k)
    else:
        tubes = _centralized_viable(pb, net, baselines, k)

    sol = pb.compile().solve()
    elapsed = time.perf_counter() - t0
    if sol.status == ipm.INFEASIBLE:
        return ComposeResult(False, mode, k, np.inf,
                             ContractParams({}), solve_time=elapsed)
    if not sol.optimal:
        raise SolverError(f"centralized program failed: {sol.status}")

    params = ContractParams({name: np.atleast_1d(sol.value(name))
                             for name in tubes["alpha_names"]})
    omegas, thetas, ctrls = [], [], []
    for i in range(net.eta):
        n, m = net.subsystems[i].n, net.subsystems[i].m
        if mode == "rci":
            T = [sol.value(f"T{i}") if k else np.zeros((n, 0))]
            M = [sol.value(f"M{i}") if k else np.zeros((m, 0))]
            ctrl = TubeController("rci", [sol.value(f"xb{i}")],
                                  [sol.value(f"ub{i}")], T, M, k)
            omegas.append([ctrl.state_tube(0)])
            thetas.append([ctrl.action_tube(0)])
        else:
            h = net.horizon
            widths = tubes["widths"][i]
            T = [sol.value(f"T{i}_{t}") if widths[t] else np.zeros((n, 0))
                 for t in range(h + 1)]
            M = [sol.value(f"M{i}_{t}") if widths[t] else np.zeros((m, 0))
                 for t in range(h)]
            ctrl = TubeController(
                "finite", [sol.value(f"xb{i}_{t}") for t in range(h + 1)],
                [sol.value(f"ub{i}_{t}") for t in range(h)], T, M, k)
            omegas.append([ctrl.state_tube(t) for t in range(h + 1)])
            thetas.append([ctrl.action_tube(t) for t in range(h)])
        ctrls.append(ctrl)

    report = certify_correctness(omegas, thetas, params, baselines, net)
    res = ComposeResult(True, mode, k, 0.0, params, omegas, thetas, ctrls,
                        [], report, elapsed, 1)
    return res


def _alpha_var(pb, name, count):
    a = pb.var(name, count)
    pb.add_le(-a, 0.0)
    return a


def _sym_w(pb, net, baselines, i, t, alphas):
    """Unreduced symbolic assumption set: (center consts, generator exprs)."""
    sub = net.subsystems[i]
    tt = 0 if t is None else t
    D = sub.D_at(tt)
    tkey = None if baselines.mode == "rci" else t
    cen = np.array(D.center, dtype=float)
    blocks = []
    for c in net.incoming(i):
        base = baselines.at(c.j, tkey)
        if c.A is not None:
            AC = c.A_at(tt) @ base.Cx
            a = alphas[pname("ax", c.j, tkey)]
            blk = np.empty(AC.shape, dtype=object)
            for r in range(AC.shape[0]):
                for cc in range(AC.shape[1]):
                    blk[r, cc] = a[cc] * AC[r, cc]
            blocks.append(blk)
            cen = cen + c.A_at(tt) @ base.cx
        if c.B is not None:
            BC = c.B_at(tt) @ base.Cu
            a = alphas[pname("au", c.j, tkey)]
            blk = np.empty(BC.shape, dtype=object)
            for r in range(BC.shape[0]):
                for cc in range(BC.shape[1]):
                    blk[r, cc] = a[cc] * BC[r, cc]
            blocks.append(blk)
            cen = cen + c.B_at(tt) @ base.cu
    blocks.append(D.generators.astype(object))
    Wg = hcat(*blocks) if blocks else np.zeros((sub.n, 0), dtype=object)
    return cen, Wg


def _centralized_rci(pb, net, baselines, k):
    alphas, names = {}, []
    for i in range(net.eta):
        base = baselines.at(i, None)
        alphas[pname("ax", i)] = _alpha_var(pb, pname("ax", i), base.Cx.shape[1])
        alphas[pname("au", i)] = _alpha_var(pb, pname("au", i), base.Cu.shape[1])
        names += [pname("ax", i), pname("au", i)]

    for i, sub in enumerate(net.subsystems):
        n, m = sub.n, sub.m
        A, B = sub.A_at(0), sub.B_at(0)
        T = pb.var(f"T{i}", (n, k)) if k else np.zeros((n, 0), dtype=object)
        M = pb.var(f"M{i}", (m, k)) if k else np.zeros((m, 0), dtype=object)
        xb, ub = pb.var(f"xb{i}", n), pb.var(f"ub{i}", m)
        wc, Wg = _sym_w(pb, net, baselines, i, None, alphas)
        p = Wg.shape[1]
        pb.add_eq(hcat(np.dot(A, T) + np.dot(B, M), Wg),
                  hcat(np.zeros((n, p)), T))
        pb.add_eq(np.dot(A, xb) + np.dot(B, ub) + wc, xb)

        base = baselines.at(i, None)
        encode_inclusion(pb, (xb, T), base.cx,
                         [Block(base.Cx, alphas[pname("ax", i)])], f"g{i}x")
        encode_inclusion(pb, (ub, M), base.cu,
                         [Block(base.Cu, alphas[pname("au", i)])], f"g{i}u")
        pb.add_cost(alphas[pname("ax", i)].sum())

    _coupled_or_local_bounds(pb, net, baselines, [None],
                             lambda i, t: (f"T{i}", f"xb{i}"),
                             lambda i, t: (f"M{i}", f"ub{i}"))
    return {"alpha_names": names}


def _centralized_viable(pb, net, baselines, k):
    h = net.horizon
    alphas, names = {}, []
    for i in range(net.eta):
        for t in range(h + 1):
            base = baselines.at(i, t)
            alphas[pname("ax", i, t)] = _alpha_var(pb, pname("ax", i, t),
                                                   base.Cx.shape[1])
            names.append(pname("ax", i, t))
            if t < h:
                alphas[pname("au", i, t)] = _alpha_var(pb, pname("au", i, t),
                                                       base.Cu.shape[1])
                names.append(pname("au", i, t))

    widths_all = []
    for i, sub in enumerate(net.subsystems):
        n, m = sub.n, sub.m
        wgs, wcs = [], []
        widths = [k]
        for t in range(h):
            wc, Wg = _sym_w(pb, net, baselines, i, t, alphas)
            wcs.append(wc)
            wgs.append(Wg)
            widths.append(widths[-1] + Wg.shape[1])
        widths_all.append(widths)
        T = [pb.var(f"T{i}_{t}", (n, widths[t])) if widths[t] else
             np.zeros((n, 0), dtype=object) for t in range(h + 1)]
        M = [pb.var(f"M{i}_{t}", (m, widths[t])) if widths[t] else
             np.zeros((m, 0), dtype=object) for t in range(h)]
        xb = [pb.var(f"xb{i}_{t}", n) for t in range(h + 1)]
        ub = [pb.var(f"ub{i}_{t}", m) for t in range(h)]
        for t in range(h):
            A, B = sub.A_at(t), sub.B_at(t)
            pb.add_eq(hcat(np.dot(A, T[t]) + np.dot(B, M[t]), wgs[t]),
                      np.asarray(T[t + 1], dtype=object))
            pb.add_eq(np.dot(A, xb[t]) + np.dot(B, ub[t]) + wcs[t], xb[t + 1])
        for t in range(h + 1):
            base = baselines.at(i, t)
            encode_inclusion(pb, (xb[t], T[t]), base.cx,
                             [Block(base.Cx, alphas[pname("ax", i, t)])],
                             f"g{i}x{t}")
            pb.add_cost(alphas[pname("ax", i, t)].sum())
        for t in range(h):
            base = baselines.at(i, t)
            encode_inclusion(pb, (ub[t], M[t]), base.cu,
                             [Block(base.Cu, alphas[pname("au", i, t)])],
                             f"g{i}u{t}")

    _coupled_or_local_bounds(pb, net, baselines, list(range(h + 1)),
                             lambda i, t: (f"T{i}_{t}", f"xb{i}_{t}"),
                             lambda i, t: (f"M{i}_{t}", f"ub{i}_{t}"))
    return {"alpha_names": names, "widths": widths_all}


def _get_var(pb, name):
    off, shape = pb._vars[name]
    from .optim import LinExpr
    count = int(np.prod(shape)) if shape else 1
    out = np.empty(count, dtype=object)
    for r in range(count):
        out[r] = LinExpr(0.0, {off + r: 1.0})
    return out.reshape(shape) if shape else out[0]


def _coupled_or_local_bounds(pb, net, baselines, times, state_names,
                             input_names):
    """Impose the admissible constraints over tube sets, aggregated when the
    network carries coupled sets and per-subsystem otherwise."""
    h = net.horizon
    for t in times:
        tt = 0 if t is None else t
        Xc = net.coupled_X_at(tt) if net.coupled_X is not None else None
        state_ok = net.horizon is None or tt <= h
        if state_ok:
            if Xc is not None:
                cen_parts, gen_blocks = [], []
                for i in range(net.eta):
                    Tn, xn = state_names(i, t)
                    gen_blocks.append(_get_var(pb, Tn) if Tn in pb._vars
                                      else np.zeros((net.subsystems[i].n, 0)))
                    cen_parts.append(_get_var(pb, xn))
                inner_c = np.concatenate(cen_parts)
                inner_g = _block_diag_obj(gen_blocks)
                encode_inclusion(pb, (inner_c, inner_g), Xc.center,
                                 [Block(Xc.generators)], f"cX{tt}")
            else:
                for i in range(net.eta):
                    X = net.subsystems[i].X_at(tt)
                    if X is None:
                        continue
                    Tn, xn = state_names(i, t)
                    Tv = _get_var(pb, Tn) if Tn in pb._vars else \
                        np.zeros((net.subsystems[i].n, 0))
                    encode_inclusion(pb, (_get_var(pb, xn), Tv), X.center,
                                     [Block(X.generators)], f"aX{i}_{tt}")
        input_ok = net.horizon is None or tt < h
        if not input_ok:
            continue
        Uc = net.coupled_U_at(tt) if net.coupled_U is not None else None
        if Uc is not None:
            cen_parts, gen_blocks = [], []
            for i in range(net.eta):
                Mn, un = input_names(i, t)
                gen_blocks.append(_get_var(pb, Mn) if Mn in pb._vars
                                  else np.zeros((net.subsystems[i].m, 0)))
                cen_parts.append(_get_var(pb, un))
            encode_inclusion(pb, (np.concatenate(cen_parts),
                                  _block_diag_obj(gen_blocks)), Uc.center,
                             [Block(Uc.generators)], f"cU{tt}")
        else:
            for i in range(net.eta):
                U = net.subsystems[i].U_at(tt)
                if U is None:
                    continue
                Mn, un = input_names(i, t)
                Mv = _get_var(pb, Mn) if Mn in pb._vars else \
                    np.zeros((net.subsystems[i].m, 0))
                encode_inclusion(pb, (_get_var(pb, un), Mv), U.center,
                                 [Block(U.generators)], f"aU{i}_{tt}")


def _block_diag_obj(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols), dtype=object)
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out
