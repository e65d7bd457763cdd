"""Distributed robust MPC on top of the contract negotiation.

Each control period the subsystems renegotiate extended contract parameters
(generator scalings plus set centers) for a fresh finite-horizon tube whose
last cross-section must land inside a precomputed invariant terminal set.
Once the negotiation certifies correctness at zero cost weight, the weight
on the quadratic reference cost is raised geometrically for as long as the
contracts stay correct; the last correct iterate is executed.

Warm starts shift the previous period's parameters by one step and seed the
final stage from the terminal sets, which typically makes later periods
converge in a handful of iterations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .contracts import (
    ALPHA_FLOOR, BaselineSets, ContractParams, PotentialProblem,
    ValidityProjector, add_gradients, build_baselines, certify_correctness,
    default_params, guarantee_sets, pname,
)
from .geometry import Zonotope, check_containment
from .negotiate import NegotiationConfig, compose_distributed
from .simulate import RolloutReport, _sample_signs
from .synthesis import TubeController, eval_controller


class MpcError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class MpcConfig:
    horizon: int
    terminal_sets: list                     # per-subsystem invariant sets
    Q: list | np.ndarray = None
    R: list | np.ndarray = None
    omega_growth: float = 2.0
    omega_phases: int = 10
    omega_iters: int = 30
    negotiation: NegotiationConfig = field(default_factory=NegotiationConfig)
    extreme_disturbances: bool = True

    def cost_of(self, i, n, m):
        Q = self.Q[i] if isinstance(self.Q, list) else self.Q
        R = self.R[i] if isinstance(self.R, list) else self.R
        Q = np.zeros((n, n)) if Q is None else np.atleast_2d(Q) * np.eye(n) \
            if np.isscalar(Q) or np.asarray(Q).ndim == 0 else np.atleast_2d(Q)
        R = np.zeros((m, m)) if R is None else np.atleast_2d(R) * np.eye(m) \
            if np.isscalar(R) or np.asarray(R).ndim == 0 else np.atleast_2d(R)
        return Q, R


@dataclass
class MpcStepResult:
    success: bool
    u0: list
    params: ContractParams
    controllers: list
    omegas: list
    thetas: list
    sum_v: float
    omega_final: float
    iterations: int
    trace: list = field(default_factory=list)


@dataclass
class TerminalDesign:
    sets: list
    controllers: list
    params: ContractParams
    baselines: BaselineSets
    compose: object


def prepare_terminal_sets(net, goal_sets, config=None) -> TerminalDesign:
    """Negotiate decentralized invariant sets inside per-subsystem goals."""
    from .model import LinearNetwork, Subsystem
    subs = []
    for i, s in enumerate(net.subsystems):
        subs.append(Subsystem(A=s.A, B=s.B, D=s.D, X=[goal_sets[i]],
                              U=s.U, name=s.name))
    goal_net = LinearNetwork(subs, net.couplings, horizon=None)
    res = compose_distributed(goal_net, config or NegotiationConfig())
    if not res.success or not res.report.all_ok:
        raise MpcError("terminal invariant-set negotiation failed", res.trace)
    sets = [res.omegas[i][0] for i in range(net.eta)]
    return TerminalDesign(sets, res.controllers, res.params,
                          build_baselines(goal_net, "rci"), res)


class MpcSession:
    """Caches baselines, projectors and compiled programs across steps."""

    def __init__(self, net, cfg: MpcConfig, terminal: TerminalDesign):
        self.net, self.cfg, self.terminal = net, cfg, terminal
        h = cfg.horizon
        self.baselines = build_baselines(net, "mpc", horizon=h)
        adm_X = {i: net.subsystems[i].X_at(0) for i in range(net.eta)}
        adm_U = {i: net.subsystems[i].U_at(0) for i in range(net.eta)}
        self.projector = ValidityProjector(
            self.net, self.baselines,
            {(i, t): adm_X[i] for (i, t) in self.baselines.entries},
            {(i, t): adm_U[i] for (i, t) in self.baselines.entries})
        self.k = cfg.negotiation.k_init or max(s.n for s in net.subsystems)
        self._programs = {}

    def problems(self, omega):
        key = (self.k, float(omega))
        if key not in self._programs:
            cfg = self.cfg
            probs = []
            for i in range(self.net.eta):
                n, m = self.net.subsystems[i].n, self.net.subsystems[i].m
                probs.append(PotentialProblem(
                    self.net, self.baselines, i, self.k,
                    terminal=self.terminal.sets[i],
                    cost=cfg.cost_of(i, n, m), omega=omega))
            self._programs[key] = probs
        return self._programs[key]

    def cold_params(self, x0):
        """Initial guess from decoupled tube syntheses toward the terminal.

        Each subsystem plans its own tube from its initial state into its
        terminal set ignoring couplings; centers seed the parametric set
        centers and tube radii (with headroom for the couplings) seed the
        scalings.  Zero-input propagation is the fallback.
        """
        from .synthesis import synth_viable
        h = self.cfg.horizon
        values = default_params(self.net, self.baselines).values
        for i, sub in enumerate(self.net.subsystems):
            res = synth_viable(
                sub, h, self.k,
                X_seq=[None] * h + [self.terminal.sets[i]],
                U_seq=[sub.U_at(0)] * h,
                x0=np.asarray(x0[i], dtype=float), pin_T0_zero=True)
            if res.feasible:
                ctrl = res.controller
                for t in range(1, h):
                    base = self.baselines.at(i, t)
                    values[pname("cx", i, t)] = np.array(ctrl.x_centers[t])
                    values[pname("cu", i, t)] = np.array(ctrl.u_centers[t])
                    values[pname("ax", i, t)] = _cover_alpha(
                        base.Cx, ctrl.state_tube(t)) * 1.5 + 1e-4
                    values[pname("au", i, t)] = _cover_alpha(
                        base.Cu, ctrl.action_tube(t)) * 1.5 + 1e-4
                continue
            x = np.asarray(x0[i], dtype=float)
            for t in range(1, h):
                x = sub.A_at(0) @ x + sub.D_at(0).center
                values[pname("cx", i, t)] = np.array(x)
                values[pname("cu", i, t)] = np.zeros(sub.m)
        return ContractParams(values)

    def shift_params(self, prev: ContractParams):
        """Advance the previous period's parameters by one step; the last
        stage is re-seeded from the terminal sets."""
        h = self.cfg.horizon
        out = prev.copy()
        for i in range(self.net.eta):
            for t in range(1, h - 1):
                for kind in ("ax", "au", "cx", "cu"):
                    out.values[pname(kind, i, t)] = \
                        np.array(prev.get(pname(kind, i, t + 1)))
            base = self.baselines.at(i, h - 1)
            term = self.terminal.sets[i]
            theta = self.terminal.controllers[i].action_tube(0)
            out.values[pname("cx", i, h - 1)] = np.array(term.center)
            out.values[pname("ax", i, h - 1)] = _cover_alpha(base.Cx, term)
            out.values[pname("cu", i, h - 1)] = np.array(theta.center)
            out.values[pname("au", i, h - 1)] = _cover_alpha(base.Cu, theta)
        return out


def _cover_alpha(C, Z: Zonotope):
    """Scalings making the diagonal baseline cover the set Z (center aside)."""
    radii = Z.radii()
    d = np.abs(np.diag(C)) if C.shape[0] == C.shape[1] else None
    cols = C.shape[1]
    if d is not None and np.count_nonzero(C - np.diag(np.diag(C))) == 0:
        with np.errstate(divide="ignore"):
            a = np.where(d > 0, radii / np.where(d > 0, d, 1.0), ALPHA_FLOOR)
        return np.maximum(a, ALPHA_FLOOR)
    return np.maximum(np.full(cols, float(radii.max()) /
                              max(np.abs(C).max(), 1e-12)), ALPHA_FLOOR)


def mpc_step(session: MpcSession, x0, warm: ContractParams | None = None) -> MpcStepResult:
    """One control period: negotiate, refine with the cost weight, return
    the first inputs and the converged extended parameters."""
    net, cfg = session.net, session.cfg
    ncfg = cfg.negotiation
    params = session.shift_params(warm) if warm is not None else \
        session.cold_params(x0)
    params = session.projector.project(params)
    trace = []
    iters = 0

    def evaluate(probs, p):
        return [probs[i].evaluate(p, x0=x0) for i in range(net.eta)]

    probs = session.problems(0.0)
    evals = evaluate(probs, params)
    history = []
    converged = False
    while iters < ncfg.max_iters:
        iters += 1
        if any(not e.feasible for e in evals):
            if session.k >= ncfg.k_max:
                raise MpcError("negotiation infeasible at the k cap", trace)
            session.k += 1
            session._programs.clear()
            probs = session.problems(0.0)
            evals = evaluate(probs, params)
            continue
        sum_v = float(sum(e.value for e in evals))
        history.append(sum_v)
        trace.append({"iter": iters, "k": session.k, "omega": 0.0,
                      "sumV": sum_v})
        if sum_v <= ncfg.zero_tol:
            converged = True
            break
        plateau = (len(history) > ncfg.plateau_window and
                   history[-ncfg.plateau_window - 1] - history[-1] <
                   ncfg.plateau_rtol * max(1.0, history[-ncfg.plateau_window - 1]))
        if plateau:
            if session.k >= ncfg.k_max:
                raise MpcError("potential plateau above zero at the k cap",
                               trace)
            session.k += 1
            session._programs.clear()
            probs = session.problems(0.0)
            evals = evaluate(probs, params)
            history = []
            continue
        grad = {}
        for e in evals:
            add_gradients(grad, e.gradient)
        delta = ncfg.trial_step(sum_v, grad)
        accepted = False
        for _ in range(ncfg.max_halvings + 1):
            cand = session.projector.project(params.step(grad, delta))
            cand_evals = evaluate(probs, cand)
            if all(e.feasible for e in cand_evals):
                cand_v = float(sum(e.value for e in cand_evals))
                if cand_v <= sum_v + 1e-12:
                    params, evals = cand, cand_evals
                    accepted = True
                    break
            delta *= 0.5
        if not accepted:
            history.append(sum_v)
    if not converged:
        raise MpcError("negotiation exhausted its iteration budget", trace)

    # cost-refinement phase: raise omega while the contracts stay correct
    best = (params, evals, 0.0)
    has_cost = cfg.Q is not None or cfg.R is not None
    if has_cost:
        omega = 1.0
        for _ in range(cfg.omega_phases):
            probs = session.problems(omega)
            cur = evaluate(probs, params)
            if any(not e.feasible for e in cur) or \
                    max(e.value for e in cur) > 1e-8:
                break
            best = (params, cur, omega)
            obj = float(sum(e.objective for e in cur))
            stalled = 0
            for _ in range(cfg.omega_iters):
                iters += 1
                grad = {}
                for e in cur:
                    add_gradients(grad, e.gradient)
                delta = ncfg.step
                moved = False
                for _ in range(ncfg.max_halvings + 1):
                    cand = session.projector.project(params.step(grad, delta))
                    cand_evals = evaluate(probs, cand)
                    if all(e.feasible for e in cand_evals):
                        cand_obj = float(sum(e.objective for e in cand_evals))
                        if cand_obj <= obj + 1e-12:
                            moved = True
                            break
                    delta *= 0.5
                if not moved:
                    break
                if max(e.value for e in cand_evals) > 1e-8:
                    break               # stepped out of the correct set
                params, cur, obj = cand, cand_evals, cand_obj
                best = (params, cur, omega)
                trace.append({"iter": iters, "k": session.k, "omega": omega,
                              "sumV": float(sum(e.value for e in cur))})
            omega *= cfg.omega_growth

    params, evals, omega_final = best
    sum_v = float(sum(e.value for e in evals))
    return MpcStepResult(
        True, [np.atleast_1d(e.controller.u_centers[0]) for e in evals],
        params, [e.controller for e in evals],
        [e.omegas for e in evals], [e.thetas for e in evals],
        sum_v, omega_final, iters, trace)


@dataclass
class ClosedLoopLog:
    steps: list = field(default_factory=list)   # one dict per period
    violations: int = 0
    fallbacks: int = 0

    def to_jsonl(self):
        import json
        return "\n".join(json.dumps(rec) for rec in self.steps)


def run_closed_loop(net, x0, session: MpcSession, steps, rng,
                    renegotiate=True) -> ClosedLoopLog:
    """Serial closed loop: negotiate (warm-started), apply the first input,
    sample a disturbance, advance the true network state.

    If a period's negotiation fails the previously synthesized tube
    controller keeps running (its guarantees cover all remaining steps up to
    its horizon, then the terminal invariant controllers take over).
    """
    cfg = session.cfg
    log = ClosedLoopLog()
    x = [np.asarray(v, dtype=float) for v in x0]
    warm = None
    active = None           # (controllers, stage) fallback state
    for step in range(steps):
        u = None
        iters = 0
        sum_v = np.nan
        omega_final = np.nan
        if renegotiate or warm is None:
            try:
                res = mpc_step(session, x, warm=warm)
                warm = res.params
                active = (res.controllers, 0)
                u = [np.atleast_1d(v) for v in res.u0]
                iters, sum_v, omega_final = res.iterations, res.sum_v, \
                    res.omega_final
            except MpcError:
                log.fallbacks += 1
        if u is None:
            ctrls, stage = active
            u = []
            for i in range(net.eta):
                if stage < len(ctrls[i].M):
                    u.append(eval_controller(ctrls[i], stage, x[i]))
                else:
                    term = session.terminal.controllers[i]
                    u.append(eval_controller(term, 0, x[i]))
            active = (ctrls, stage + 1)
        # constraint bookkeeping on the applied pair
        for i in range(net.eta):
            U = net.subsystems[i].U_at(0)
            if U is not None and np.any(
                    np.abs(u[i] - U.center) > U.radii() + 1e-6):
                log.violations += 1
            X = net.subsystems[i].X_at(0)
            if X is not None and np.any(
                    np.abs(x[i] - X.center) > X.radii() + 1e-6):
                log.violations += 1
        d = []
        for i in range(net.eta):
            D = net.subsystems[i].D_at(0)
            sig = _sample_signs(rng, D.num_generators,
                                cfg.extreme_disturbances)
            d.append(D.center + D.generators @ sig)
        x = net.step(x, u, d, 0)
        log.steps.append({
            "step": step, "x": np.concatenate(x).tolist(),
            "u": np.concatenate(u).tolist(), "d": np.concatenate(d).tolist(),
            "iters": iters, "sumV_final": sum_v, "omega_final": omega_final})
    return log


def tube_rollout(net, step_result: MpcStepResult, session: MpcSession,
                 x0, steps, trials, rng) -> RolloutReport:
    """Mass Monte-Carlo rollout of one period's tubes without renegotiation.

    Runs the synthesized finite tube to its horizon, then hands over to the
    terminal invariant controllers; all evaluations use coordinate replay.
    Also verifies the realized states stay inside the predicted tube
    cross-sections, which is the witness for next-period feasibility.
    """
    cfg = session.cfg
    h = cfg.horizon
    eta = net.eta
    report = RolloutReport(trials, steps)
    term = session.terminal

    x = [np.tile(np.asarray(x0[i], dtype=float), (trials, 1))
         for i in range(eta)]
    zeta = [np.zeros((trials, 0)) for _ in range(eta)]
    ctrls = step_result.controllers
    rci_zeta = [None] * eta
    certs = []
    for i in range(eta):
        certs.append(check_containment(step_result.omegas[i][h],
                                       term.sets[i]))

    from .geometry import contains_points

    for t in range(steps):
        finite_stage = t < h
        u = []
        for i in range(eta):
            if finite_stage:
                u.append(ctrls[i].u_centers[t] + zeta[i] @ ctrls[i].M[t].T)
            else:
                _, _, ub, M = term.controllers[i].effective(0)
                u.append(ub + rci_zeta[i] @ M.T)
        for i in range(eta):
            U = net.subsystems[i].U_at(0)
            if U is not None:
                bad = np.abs(u[i] - U.center) > U.radii() + 1e-6
                report.input_violations += int(bad.any(axis=1).sum())
        new_x = []
        w_real = []
        for i in range(eta):
            sub = net.subsystems[i]
            D = sub.D_at(0)
            sig = _sample_signs(rng, (trials, D.num_generators),
                                cfg.extreme_disturbances)
            w = D.center + sig @ D.generators.T
            for c in net.incoming(i):
                if c.A is not None:
                    w = w + x[c.j] @ c.A_at(0).T
                if c.B is not None:
                    w = w + u[c.j] @ c.B_at(0).T
            w_real.append(w)
            new_x.append(x[i] @ sub.A_at(0).T + u[i] @ sub.B_at(0).T + w)

        new_zeta = []
        for i in range(eta):
            sub = net.subsystems[i]
            if finite_stage:
                box, _, _ = assumed_box(session, i, t, step_result.params, x0)
            else:
                box, _, _ = assumed_disturbance_terminal(term, net, i)
            radii = box.radii()
            dev = w_real[i] - box.center
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = np.where(radii > 0, dev / radii, 0.0)
            stray = np.abs(dev) > radii[None, :] + 1e-6
            report.assumption_violations += int(stray.any(axis=1).sum())
            report.max_assumption_coord = max(
                report.max_assumption_coord, float(np.abs(xi).max(initial=0.0)))
            xi = np.clip(xi, -1.0, 1.0)
            if finite_stage:
                nz = np.concatenate([zeta[i], xi], axis=1)
                # realized states must land in the predicted cross-section
                om = step_result.omegas[i][t + 1]
                take = new_x[i][:min(trials, 64)]
                if om.num_generators:
                    inside = contains_points(om, take, tol=1e-6)
                else:
                    inside = np.max(np.abs(take - om.center), axis=1) <= 1e-6
                report.tube_violations += int((~inside).sum())
                if t + 1 == h:
                    cert = certs[i]
                    if cert.feasible:
                        rci_zeta[i] = nz @ cert.gamma_matrix.T + \
                            cert.gamma_vector
                    else:
                        report.tube_violations += trials
                new_zeta.append(nz)
            else:
                p = sub.n
                rci_zeta[i] = np.concatenate([rci_zeta[i][:, p:], xi], axis=1)
        x = new_x
        if finite_stage:
            zeta = new_zeta
    return report


def assumed_box(session, i, t, params, x0):
    from .contracts import assumed_disturbance
    net = session.net
    if t == 0:
        sub = net.subsystems[i]
        D = sub.D_at(0)
        center = np.array(D.center)
        diag = np.abs(D.generators).sum(axis=1) if D.num_generators else \
            np.zeros(sub.n)
        for c in net.incoming(i):
            if c.A is not None:
                center = center + c.A_at(0) @ np.asarray(x0[c.j], dtype=float)
            if c.B is not None:
                base = session.baselines.at(c.j, 0)
                diag = diag + np.abs(c.B_at(0) @ base.Cu) @ \
                    params.get(pname("au", c.j, 0))
                center = center + c.B_at(0) @ params.get(pname("cu", c.j, 0))
        return Zonotope(center, np.diag(diag)), None, None
    return assumed_disturbance(i, t, params, session.baselines, net)


def assumed_disturbance_terminal(term: TerminalDesign, net, i):
    from .contracts import assumed_disturbance
    return assumed_disturbance(i, None, term.params, term.baselines, net)
