"""Closed-loop rollout harnesses for networks under tube controllers.

Two evaluation styles:

* :func:`replay_rollout` tracks each trajectory's tube coordinates in closed
  form (the disturbance-feedback realization used in the tube constructions),
  which makes massive Monte-Carlo soundness checks cheap: every step verifies
  that realized coupling disturbances stay inside the negotiated assumptions
  and that states/inputs stay inside the admissible sets.
* :func:`lp_rollout` drives the same loop through the LP-based controller
  evaluation (minimum-infinity-norm coordinates); it is the slower oracle
  used on smaller batches.

Both styles sample exogenous disturbances from the per-subsystem sets,
either uniformly or at extreme points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contracts import assumed_disturbance, guarantee_sets, pname
from .geometry import Zonotope, contains_points
from .synthesis import eval_controller_batch


@dataclass
class RolloutReport:
    trials: int
    steps: int
    assumption_violations: int = 0
    state_violations: int = 0
    input_violations: int = 0
    tube_violations: int = 0
    max_assumption_coord: float = 0.0
    max_drift: float = 0.0

    @property
    def clean(self):
        return (self.assumption_violations == 0 and self.state_violations == 0
                and self.input_violations == 0 and self.tube_violations == 0)


def _box_check(Z: Zonotope, pts, tol):
    """Exact membership for axis-aligned sets, batched."""
    r = Z.radii()
    return np.all(np.abs(pts - Z.center) <= r + tol, axis=1)


def _set_check(Z, pts, tol):
    G = Z.generators
    if G.shape[0] == G.shape[1] and np.count_nonzero(G - np.diag(np.diag(G))) == 0:
        return _box_check(Z, pts, tol)
    return contains_points(Z, pts, tol=tol)


def _sample_signs(rng, shape, extreme):
    if extreme:
        return rng.choice([-1.0, 1.0], shape)
    return rng.uniform(-1.0, 1.0, shape)


def replay_rollout(net, controllers, params, baselines, steps, trials, rng,
                   extreme=True, admissible_X=None, admissible_U=None,
                   tol=1e-6, coupled_subsample=50) -> RolloutReport:
    """Monte-Carlo network rollout via tube-coordinate replay.

    Controllers must come from a converged negotiation over ``baselines`` at
    ``params`` (rci or finite mode); the coordinate recursion mirrors the
    synthesis constraints, so any violation signals an unsound result rather
    than a conservative evaluator.
    """
    eta = net.eta
    mode = controllers[0].mode
    report = RolloutReport(trials, steps)

    # per-subsystem static data
    n_of = [s.n for s in net.subsystems]
    zeta = []
    for i in range(eta):
        k0 = controllers[i].T[0].shape[1]
        zeta.append(_sample_signs(rng, (trials, k0), False))
    x = [controllers[i].x_centers[0] + zeta[i] @ controllers[i].T[0].T
         for i in range(eta)]

    horizon = steps if mode == "rci" else len(controllers[0].M)
    for t in range(steps):
        tt = 0 if mode == "rci" else min(t, horizon - 1)
        tkey = None if mode == "rci" else tt
        # inputs via the replay coordinates
        u = []
        for i in range(eta):
            ctrl = controllers[i]
            xb, T, ub, M = ctrl.effective(tt)
            u.append(ub + zeta[i] @ M.T)
        # admissible-set checks
        for i in range(eta):
            X = admissible_X[i] if admissible_X is not None else \
                net.subsystems[i].X_at(tt)
            if X is not None:
                report.state_violations += int((~_set_check(X, x[i], tol)).sum())
            U = admissible_U[i] if admissible_U is not None else \
                net.subsystems[i].U_at(tt)
            if U is not None:
                report.input_violations += int((~_set_check(U, u[i], tol)).sum())

        new_zeta, new_x = [], []
        for i in range(eta):
            sub = net.subsystems[i]
            ctrl = controllers[i]
            D = sub.D_at(tt)
            dsig = _sample_signs(rng, (trials, D.num_generators), extreme)
            d = D.center + dsig @ D.generators.T
            w = d.copy()
            for c in net.incoming(i):
                if c.A is not None:
                    w = w + x[c.j] @ c.A_at(tt).T
                if c.B is not None:
                    w = w + u[c.j] @ c.B_at(tt).T
            box, _, _ = assumed_disturbance(i, tkey, params, baselines, net)
            radii = box.radii()
            dev = w - box.center
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = np.where(radii > 0, dev / radii, 0.0)
            stray = np.abs(dev) > radii[None, :] + tol
            report.assumption_violations += int(stray.any(axis=1).sum())
            report.max_assumption_coord = max(
                report.max_assumption_coord, float(np.abs(xi).max(initial=0.0)))
            xi = np.clip(xi, -1.0, 1.0)

            if mode == "rci":
                p = sub.n
                nz = np.concatenate([zeta[i][:, p:], xi], axis=1)
                xb, T = ctrl.x_centers[0], ctrl.T[0]
            else:
                nz = np.concatenate([zeta[i], xi], axis=1)
                xb, T = ctrl.x_centers[t + 1], ctrl.T[t + 1]
            # the true update; its drift from the tube replay measures how
            # well the synthesized tube equalities hold along the trajectory
            true_next = x[i] @ sub.A_at(tt).T + u[i] @ sub.B_at(tt).T + w
            drift = np.abs(true_next - (xb + nz @ T.T)).max(initial=0.0)
            report.max_drift = max(report.max_drift, float(drift))
            if drift > 100 * tol:
                report.tube_violations += 1
            new_zeta.append(nz)
            new_x.append(true_next)
        zeta, x = new_zeta, new_x
        if mode != "rci" and t + 1 >= len(controllers[0].T) - 1:
            break
    return report


def lp_rollout(net, controllers, steps, trials, rng, extreme=True,
               admissible_X=None, admissible_U=None, tol=1e-6) -> RolloutReport:
    """Slower oracle: the LP controller evaluation drives the loop and every
    membership is checked with containment programs."""
    eta = net.eta
    mode = controllers[0].mode
    report = RolloutReport(trials, steps)
    x = []
    from .geometry import sample_points
    for i in range(eta):
        x.append(sample_points(controllers[i].state_tube(0), rng, trials))
    horizon = steps if mode == "rci" else len(controllers[0].M)
    for t in range(min(steps, horizon)):
        tt = 0 if mode == "rci" else t
        u = [eval_controller_batch(controllers[i], tt, x[i], tie_break=True,
                                   tol=1e-5) for i in range(eta)]
        for i in range(eta):
            theta = controllers[i].action_tube(tt)
            report.input_violations += int(
                (~contains_points(theta, u[i], tol=tol)).sum())
        new_x = []
        for i in range(eta):
            sub = net.subsystems[i]
            D = sub.D_at(tt)
            d = D.center + _sample_signs(rng, (trials, D.num_generators),
                                         extreme) @ D.generators.T
            nxt = x[i] @ sub.A_at(tt).T + u[i] @ sub.B_at(tt).T + d
            for c in net.incoming(i):
                if c.A is not None:
                    nxt = nxt + x[c.j] @ c.A_at(tt).T
                if c.B is not None:
                    nxt = nxt + u[c.j] @ c.B_at(tt).T
            new_x.append(nxt)
        for i in range(eta):
            omega = controllers[i].state_tube(0 if mode == "rci" else t + 1)
            report.tube_violations += int(
                (~contains_points(omega, new_x[i], tol=tol)).sum())
        x = new_x
    return report


def coupled_membership_spotcheck(net, states_by_step, rng, sample=50,
                                 tol=1e-6):
    """Check aggregate states against a coupled constraint set on a subsample."""
    if net.coupled_X is None:
        return 0
    bad = 0
    for t, parts in enumerate(states_by_step):
        X = net.coupled_X_at(min(t, 0) if net.horizon is None else t)
        agg = np.hstack(parts)
        take = min(sample, agg.shape[0])
        idx = rng.choice(agg.shape[0], take, replace=False)
        bad += int((~contains_points(X, agg[idx], tol=tol)).sum())
    return bad
