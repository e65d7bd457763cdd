"""Dense/sparse primal-dual interior-point solvers.

Two entry points:

* :func:`solve_qp` -- a Mehrotra predictor-corrector method for linear and
  diagonally-quadratic programs ``min 0.5 x'Qx + c'x  s.t.  Ax = b, Gx <= h``.
  It returns primal and dual variables; the dual variables are the source of
  all sensitivity information used elsewhere in the package, so the solver
  re-checks KKT residuals before reporting an optimum.
* :func:`solve_lp_batch` -- a vectorized solver for many small LPs that share
  one constraint matrix but differ in right-hand sides and bounds.  Used by
  the closed-loop rollout harnesses where thousands of tiny controller LPs
  must be solved per simulated step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# Status strings shared with the declarative layer.
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ERROR = "error"

_DENSE_LIMIT = 900          # KKT dimension below which dense factorization wins
_REG_PRIMAL = 1e-9
_REG_DUAL = 1e-9
_FEAS_TOL = 1e-7            # elastic violation above this means infeasible
_FEAS_SOLVE_TOL = 1e-11     # elastic LPs solved tighter than they are judged
_OBJ_UNBOUNDED = -1e14


@dataclass
class IpmResult:
    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None          # equality duals
    z: np.ndarray | None = None          # inequality duals (>= 0)
    s: np.ndarray | None = None          # inequality slacks
    objective: float = np.nan
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    message: str = ""


def _as_csr(M, ncols):
    if M is None:
        return sp.csr_matrix((0, ncols))
    if sp.issparse(M):
        return M.tocsr()
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return sp.csr_matrix((M.shape[0] if M.ndim == 2 else 0, ncols))
    return sp.csr_matrix(M)


def _row_scale(M, b):
    """Equilibrate rows of (M, b) by their max |coefficient|."""
    if M.shape[0] == 0:
        return M, b, np.ones(0)
    absM = abs(M)
    scale = np.asarray(absM.max(axis=1).todense()).ravel()
    scale[scale <= 0] = 1.0
    scale = np.clip(scale, 1e-10, 1e10)
    d = 1.0 / scale
    return sp.diags(d) @ M, b * d, d


class _KktSolver:
    """Factorizes the quasi-definite KKT matrix [[H, A'], [A, -dI]]."""

    def __init__(self, n, me, dense):
        self.n, self.me, self.dense = n, me, dense
        self._fact = None

    def factor(self, H, A, reg_p, reg_d):
        n, me = self.n, self.me
        if self.dense:
            K = np.zeros((n + me, n + me))
            K[:n, :n] = H.toarray() if sp.issparse(H) else H
            K[:n, :n] += reg_p * np.eye(n)
            if me:
                Ad = A.toarray() if sp.issparse(A) else A
                K[n:, :n] = Ad
                K[:n, n:] = Ad.T
                K[n:, n:] = -reg_d * np.eye(me)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(K, check_finite=False)
            dpiv = np.abs(np.diag(lu))
            if not np.all(np.isfinite(lu)) or np.min(dpiv) <= 1e-300:
                raise RuntimeError("singular KKT factorization")
            self._fact = (lu, piv)
            self._K = K
        else:
            blocks = [[H + reg_p * sp.eye(n), A.T if me else None],
                      [A if me else None, -reg_d * sp.eye(me) if me else None]]
            K = sp.bmat([[b for b in row] for row in blocks], format="csc") \
                if me else (H + reg_p * sp.eye(n)).tocsc()
            self._fact = spla.splu(K, permc_spec="MMD_AT_PLUS_A",
                                   options={"SymmetricMode": True})
            self._K = K

    def solve(self, rhs, refine=1):
        if self.dense:
            sol = scipy.linalg.lu_solve(self._fact, rhs, check_finite=False)
            for _ in range(refine):
                res = rhs - self._K @ sol
                if np.max(np.abs(res)) < 1e-13 * (1.0 + np.max(np.abs(rhs))):
                    break
                sol = sol + scipy.linalg.lu_solve(self._fact, res,
                                                  check_finite=False)
            return sol
        sol = self._fact.solve(rhs)
        for _ in range(refine):
            res = rhs - self._K @ sol
            if np.max(np.abs(res)) < 1e-13 * (1.0 + np.max(np.abs(rhs))):
                break
            sol = sol + self._fact.solve(res)
        return sol


def solve_qp(qdiag, c, A, b, G, h, tol=1e-9, max_iter=120,
             check_infeasible=True):
    """Solve ``min 0.5 x' diag(qdiag) x + c'x  s.t.  Ax = b, Gx <= h``.

    All matrices may be dense, sparse or None.  Returns an :class:`IpmResult`
    whose duals follow the convention: for equality row r, d(obj)/d(b_r) =
    -y_r; for inequality row r, z_r >= 0 and d(obj)/d(h_r) = -z_r.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    qdiag = np.zeros(n) if qdiag is None else np.asarray(qdiag, dtype=float).ravel()
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).ravel()
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).ravel()
    A = _as_csr(A, n)
    G = _as_csr(G, n)
    me, mi = A.shape[0], G.shape[0]
    if A.shape[1] != n or G.shape[1] != n or b.size != me or h.size != mi:
        return IpmResult(ERROR, message="inconsistent problem dimensions")

    As, bs, d_eq = _row_scale(A, b)
    Gs, hs, d_in = _row_scale(G, h)

    if not np.any(qdiag) and not np.any(c) and mi:
        # Pure feasibility problem: one elastic solve answers it, and any
        # feasible point with zero multipliers is optimal.
        res = _feasibility_point(As, bs, Gs, hs, max_iter)
        if res.status == OPTIMAL:
            if me:
                res.y = res.y * d_eq
            res.z = res.z * d_in
            res.s = res.s / d_in
        return res

    res = _mehrotra(qdiag, c, As, bs, Gs, hs, tol, max_iter)

    if res.status != OPTIMAL and check_infeasible:
        phase = _phase1(As, bs, Gs, hs, max_iter)
        if phase == INFEASIBLE:
            return IpmResult(INFEASIBLE, iterations=res.iterations,
                             message="phase-1 residual positive")
        if phase == OPTIMAL and _has_descent_ray(qdiag, c, As, Gs, max_iter):
            return IpmResult(UNBOUNDED, iterations=res.iterations)

    if res.status == OPTIMAL:
        # Undo row scaling on the duals before handing them back.
        if me:
            res.y = res.y * d_eq
        if mi:
            res.z = res.z * d_in
            res.s = res.s / d_in
    return res


def _mehrotra(qdiag, c, A, b, G, h, tol, max_iter):
    n, me, mi = c.size, A.shape[0], G.shape[0]
    Q = sp.diags(qdiag)
    dense = (n + me) <= _DENSE_LIMIT
    kkt = _KktSolver(n, me, dense)

    scale_b = 1.0 + (np.max(np.abs(b)) if me else 0.0)
    scale_h = 1.0 + (np.max(np.abs(h)) if mi else 0.0)
    scale_c = 1.0 + np.max(np.abs(c), initial=0.0)

    if mi == 0:
        return _solve_equality_only(qdiag, c, A, b, kkt, tol)

    if dense:
        # numpy throughout: assembling small KKT systems through scipy.sparse
        # dominates the runtime otherwise.  Single-entry rows (sign bounds,
        # the bulk of the inequalities) only touch the diagonal of H.
        A = A.toarray() if sp.issparse(A) else A
        Gs_csr = G.tocsr()
        nnz_per_row = np.diff(Gs_csr.indptr)
        single = nnz_per_row == 1
        cols1 = Gs_csr.indices[Gs_csr.indptr[:-1][single]]
        vals1 = np.zeros(single.sum())
        for kk, r in enumerate(np.nonzero(single)[0]):
            vals1[kk] = Gs_csr.data[Gs_csr.indptr[r]]
        Gd_rest = Gs_csr[~single].toarray()
        rest_idx = np.nonzero(~single)[0]
        G = Gs_csr.toarray()
        Qd = np.diag(qdiag)

        didx = np.arange(n)

        def make_H(d):
            H = Qd.copy()
            if cols1.size:
                H[didx, didx] += np.bincount(cols1, weights=d[single] * vals1
                                             * vals1, minlength=n)
            if rest_idx.size:
                H += (Gd_rest.T * d[rest_idx]) @ Gd_rest
            return H
    else:
        def make_H(d):
            return Q + (G.T @ sp.diags(d) @ G)

    reg_p, reg_d = _REG_PRIMAL, _REG_DUAL
    # Starting point: regularized least-squares step, then shift slacks.
    H0 = (Qd + np.eye(n)) if dense else Q + sp.eye(n)
    try:
        kkt.factor(H0, A, reg_p, reg_d)
    except (RuntimeError, ValueError, np.linalg.LinAlgError):
        return IpmResult(ERROR, message="initial factorization failed")
    rhs0 = np.concatenate([-c, b]) if me else -c
    sol0 = kkt.solve(rhs0)
    x = sol0[:n]
    y = sol0[n:] if me else np.zeros(0)
    s_raw = h - G @ x
    shift = max(0.0, -1.5 * np.min(s_raw, initial=0.0)) + 0.1 * scale_h
    s = s_raw + shift
    z = np.full(mi, max(1.0, 0.01 * scale_c))

    best = None
    history = []
    for it in range(1, max_iter + 1):
        r_d = qdiag * x + c + (A.T @ y if me else 0.0) + G.T @ z
        r_p = (A @ x - b) if me else np.zeros(0)
        r_g = G @ x + s - h
        mu = float(s @ z) / mi
        obj = 0.5 * float(x @ (qdiag * x)) + float(c @ x)

        rd_rel = np.max(np.abs(r_d)) / scale_c
        rp_rel = (np.max(np.abs(r_p)) / scale_b) if me else 0.0
        rg_rel = np.max(np.abs(r_g)) / scale_h
        mu_rel = mu / (1.0 + abs(obj))
        quality = max(rd_rel, rp_rel, rg_rel, mu_rel)
        if best is None or quality < best[0]:
            best = (quality, x.copy(), y.copy(), z.copy(), s.copy(), obj, it)
        if quality <= tol:
            return IpmResult(OPTIMAL, x, y, z, s, obj, it,
                             {"rd": rd_rel, "rp": rp_rel, "rg": rg_rel, "mu": mu})
        if obj < _OBJ_UNBOUNDED and rp_rel < 1e-7 and rg_rel < 1e-7:
            r = IpmResult(ERROR, iterations=it, message="objective diverged")
            r.residuals["obj_diverged"] = True
            return r

        # Infeasible problems drive mu to zero while residuals stall; bail
        # out early and let phase-1 classify the outcome.
        if mu < 1e-13 and max(rp_rel, rg_rel) > 1e2 * tol:
            break
        history.append(quality)
        if len(history) > 12 and quality > 1e3 * tol \
                and quality > 0.9 * history[-13]:
            break

        with np.errstate(over="ignore", divide="ignore"):
            d = z / s
        if not np.all(np.isfinite(d)) or np.max(d) > 1e16:
            break
        H = make_H(d)
        for attempt in range(4):
            try:
                kkt.factor(H, A, reg_p, reg_d)
                break
            except (RuntimeError, ValueError, np.linalg.LinAlgError):
                reg_p *= 100.0
                reg_d *= 100.0
        else:
            break

        def newton(rc):
            rhs_x = -r_d - G.T @ ((z * r_g - rc) / s)
            rhs = np.concatenate([rhs_x, -r_p]) if me else rhs_x
            sol = kkt.solve(rhs)
            if not np.all(np.isfinite(sol)):
                return None
            dx = sol[:n]
            dy = sol[n:] if me else np.zeros(0)
            dz = d * (G @ dx) + (z * r_g - rc) / s
            ds = -r_g - G @ dx
            return dx, dy, dz, ds

        # Affine-scaling (predictor) direction.
        step_a = newton(s * z)
        if step_a is None:
            break
        dx_a, dy_a, dz_a, ds_a = step_a
        a_p = _max_step(s, ds_a)
        a_d = _max_step(z, dz_a)
        mu_aff = float((s + a_p * ds_a) @ (z + a_d * dz_a)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector.
        rc = s * z + ds_a * dz_a - sigma * mu
        step_c = newton(rc)
        if step_c is None:
            break
        dx, dy, dz, ds = step_c
        eta = max(0.995, 1.0 - 10.0 * mu)
        a_p = min(1.0, eta * _max_step(s, ds))
        a_d = min(1.0, eta * _max_step(z, dz))
        if not np.isfinite(a_p) or not np.isfinite(a_d):
            break
        x = x + a_p * dx
        s = s + a_p * ds
        y = y + a_d * dy
        z = z + a_d * dz
        if np.any(~np.isfinite(x)) or np.any(s <= 0) or np.any(z <= 0):
            break

    # No high-accuracy convergence: accept the best iterate if it is still a
    # trustworthy optimum, otherwise report an error.
    if best is not None and best[0] <= 1e-7:
        _, x, y, z, s, obj, it = best
        return IpmResult(OPTIMAL, x, y, z, s, obj, it, {"loose": best[0]})
    return IpmResult(ERROR, iterations=max_iter,
                     residuals={"best": best[0] if best else np.inf},
                     message="no convergence")


def _max_step(v, dv):
    """Largest alpha in (0, 1] with v + alpha*dv >= (1-eps) feasible."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _solve_equality_only(qdiag, c, A, b, kkt, tol):
    """QP with only equality constraints: one (regularized) KKT solve."""
    n, me = c.size, A.shape[0]
    Q = sp.diags(qdiag)
    try:
        kkt.factor(Q, A, _REG_PRIMAL, _REG_DUAL)
    except RuntimeError:
        return IpmResult(ERROR, message="singular equality KKT")
    rhs = np.concatenate([-c, b]) if me else -c
    sol = kkt.solve(rhs, refine=3)
    x, y = sol[:n], (sol[n:] if me else np.zeros(0))
    r_p = (A @ x - b) if me else np.zeros(0)
    r_d = qdiag * x + c + (A.T @ y if me else 0.0)
    scale_b = 1.0 + (np.max(np.abs(b)) if me else 0.0)
    if me and np.max(np.abs(r_p)) > 1e-7 * scale_b:
        return IpmResult(INFEASIBLE, message="inconsistent equalities")
    if np.max(np.abs(r_d), initial=0.0) > 1e-6 * (1.0 + np.max(np.abs(c), initial=0.0)):
        return IpmResult(UNBOUNDED, message="stationarity unattainable")
    obj = 0.5 * float(x @ (qdiag * x)) + float(c @ x)
    return IpmResult(OPTIMAL, x, y, np.zeros(0), np.zeros(0), obj, 1)


def _phase1(A, b, G, h, max_iter):
    """Elastic feasibility LP; returns OPTIMAL (feasible) or INFEASIBLE."""
    n, me, mi = A.shape[1], A.shape[0], G.shape[0]
    # Variables: x, p, q (equality elastics), w (inequality elastics).
    nv = n + 2 * me + mi
    c = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    blocks = [A, sp.eye(me), -sp.eye(me)] if me else None
    A1 = sp.hstack(blocks + [sp.csr_matrix((me, mi))]) if me else None
    rows = []
    if mi:
        rows.append(sp.hstack([G, sp.csr_matrix((mi, 2 * me)), -sp.eye(mi)]))
    rows.append(sp.hstack([sp.csr_matrix((2 * me + mi, n)), -sp.eye(2 * me + mi)]))
    G1 = sp.vstack(rows).tocsr()
    h1 = np.concatenate([h, np.zeros(2 * me + mi)]) if mi \
        else np.zeros(2 * me + mi)
    res = _mehrotra(np.zeros(nv), c, _as_csr(A1, nv), b, G1, h1,
                    tol=_FEAS_SOLVE_TOL, max_iter=max_iter)
    if res.status != OPTIMAL:
        return ERROR
    scale = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(h), initial=0.0))
    return OPTIMAL if res.objective <= _FEAS_TOL * scale else INFEASIBLE


def _feasibility_point(A, b, G, h, max_iter):
    """Classify and solve a zero-objective problem via one elastic LP."""
    n, me, mi = A.shape[1], A.shape[0], G.shape[0]
    nv = n + 2 * me + mi
    c1 = np.concatenate([np.zeros(n), np.ones(2 * me + mi)])
    A1 = sp.hstack([A, sp.eye(me), -sp.eye(me),
                    sp.csr_matrix((me, mi))]).tocsr() if me else None
    rows = [sp.hstack([G, sp.csr_matrix((mi, 2 * me)), -sp.eye(mi)])]
    rows.append(sp.hstack([sp.csr_matrix((2 * me + mi, n)),
                           -sp.eye(2 * me + mi)]))
    G1 = sp.vstack(rows).tocsr()
    h1 = np.concatenate([h, np.zeros(2 * me + mi)])
    res = _mehrotra(np.zeros(nv), c1, _as_csr(A1, nv), b, G1, h1,
                    tol=_FEAS_SOLVE_TOL, max_iter=max_iter)
    if res.status != OPTIMAL:
        return IpmResult(ERROR, message="feasibility solve failed")
    scale = 1.0 + max(np.max(np.abs(b), initial=0.0),
                      np.max(np.abs(h), initial=0.0))
    if res.objective > _FEAS_TOL * scale:
        return IpmResult(INFEASIBLE, iterations=res.iterations)
    x = res.x[:n]
    s = h - G @ x
    if np.min(s, initial=0.0) < -1e2 * _FEAS_TOL * scale:
        return IpmResult(ERROR, message="elastic point violates inequalities")
    return IpmResult(OPTIMAL, x, np.zeros(me), np.zeros(mi),
                     np.maximum(s, 0.0), 0.0, res.iterations)


def _has_descent_ray(qdiag, c, A, G, max_iter):
    """Certify unboundedness: a recession direction with negative cost.

    Solves ``min c'd  s.t.  A d = 0, G d <= 0, |d| <= 1`` (coordinates with a
    positive quadratic weight are pinned to zero).  A strictly negative
    optimum is an unbounded ray of the original problem.
    """
    n = c.size
    me, mi = A.shape[0], G.shape[0]
    Gboxed = sp.vstack([G, sp.eye(n), -sp.eye(n)]).tocsr()
    h = np.concatenate([np.zeros(mi), np.ones(2 * n)])
    Aeq, beq = A, np.zeros(me)
    pinned = np.nonzero(qdiag > 0)[0]
    if pinned.size:
        P = sp.csr_matrix((np.ones(pinned.size),
                           (np.arange(pinned.size), pinned)), shape=(pinned.size, n))
        Aeq = sp.vstack([A, P]).tocsr() if me else P
        beq = np.zeros(me + pinned.size)
    res = _mehrotra(np.zeros(n), c, _as_csr(Aeq, n), beq, Gboxed, h,
                    tol=1e-9, max_iter=max_iter)
    scale = 1.0 + np.max(np.abs(c), initial=0.0)
    return res.status == OPTIMAL and res.objective < -1e-7 * scale


# ---------------------------------------------------------------------------
# Batched bound-constrained LPs (shared structure, many right-hand sides)
# ---------------------------------------------------------------------------

def solve_lp_batch(c, A, b, lb, ub, tol=1e-9, max_iter=60):
    """Solve ``min c'x  s.t.  A x = b_k,  lb_k <= x <= ub_k`` for a batch k.

    Parameters
    ----------
    c : (n,) cost, shared across the batch.
    A : (m, n) equality matrix, shared.
    b : (B, m) per-instance right-hand sides.
    lb, ub : (n,) or (B, n); entries may be ``-inf``/``+inf``.

    Returns
    -------
    x : (B, n) primal solutions.
    ok : (B,) boolean convergence flags.
    """
    c = np.asarray(c, dtype=float).ravel()
    A = np.asarray(A, dtype=float)
    b = np.atleast_2d(np.asarray(b, dtype=float))
    B, m = b.shape
    n = c.size
    lb = np.broadcast_to(np.asarray(lb, dtype=float), (B, n)).copy()
    ub = np.broadcast_to(np.asarray(ub, dtype=float), (B, n)).copy()
    has_l = np.isfinite(lb)
    has_u = np.isfinite(ub)

    x = np.zeros((B, n))
    with np.errstate(invalid="ignore"):
        mid = np.where(has_l & has_u, 0.5 * (lb + ub), 0.0)
    x = np.where(has_l & has_u, mid, x)
    x = np.where(has_l & ~has_u, lb + 1.0, x)
    x = np.where(~has_l & has_u, ub - 1.0, x)
    y = np.zeros((B, m))
    sl = np.where(has_l, np.maximum(x - lb, 1.0), 1.0)
    su = np.where(has_u, np.maximum(ub - x, 1.0), 1.0)
    zl = np.where(has_l, 1.0, 0.0)
    zu = np.where(has_u, 1.0, 0.0)
    nb = np.maximum(has_l.sum(axis=1) + has_u.sum(axis=1), 1)

    K = np.zeros((B, n + m, n + m))
    K[:, :n, n:] = A.T
    K[:, n:, :n] = A
    idx = np.arange(m)
    K[:, n + idx, n + idx] = -1e-10
    diag_idx = np.arange(n)

    scale_b = 1.0 + np.max(np.abs(b), axis=1)
    scale_c = 1.0 + np.max(np.abs(c), initial=0.0)
    ok = np.zeros(B, dtype=bool)

    for _ in range(max_iter):
        r_d = c + y @ A - zl + zu
        r_p = x @ A.T - b
        mu = (np.where(has_l, sl * zl, 0.0).sum(axis=1)
              + np.where(has_u, su * zu, 0.0).sum(axis=1)) / nb

        rd_rel = np.max(np.abs(r_d), axis=1) / scale_c
        rp_rel = np.max(np.abs(r_p), axis=1) / scale_b
        conv = (rd_rel <= tol) & (rp_rel <= tol) & (mu <= tol * 10)
        ok |= conv
        if np.all(ok):
            break

        d = (np.where(has_l, zl / sl, 0.0) + np.where(has_u, zu / su, 0.0)) + 1e-10
        K[:, diag_idx, diag_idx] = d

        def newton(rcl, rcu):
            rhs_x = -r_d - np.where(has_l, rcl / sl, 0.0) + np.where(has_u, rcu / su, 0.0)
            rhs = np.concatenate([rhs_x, -r_p], axis=1)
            try:
                sol = np.linalg.solve(K, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                return None
            dx, dy = sol[:, :n], sol[:, n:]
            dzl = np.where(has_l, (-rcl - zl * dx) / sl, 0.0)
            dzu = np.where(has_u, (-rcu + zu * dx) / su, 0.0)
            dsl = np.where(has_l, dx, 0.0)
            dsu = np.where(has_u, -dx, 0.0)
            return dx, dy, dzl, dzu, dsl, dsu

        step = newton(sl * zl * has_l, su * zu * has_u)
        if step is None:
            break
        dx, dy, dzl, dzu, dsl, dsu = step
        a_p = _batch_step(sl, dsl, has_l, su, dsu, has_u)
        a_d = _batch_step(zl, dzl, has_l, zu, dzu, has_u)
        mu_aff = (np.where(has_l, (sl + a_p[:, None] * dsl) * (zl + a_d[:, None] * dzl), 0).sum(axis=1)
                  + np.where(has_u, (su + a_p[:, None] * dsu) * (zu + a_d[:, None] * dzu), 0).sum(axis=1)) / nb
        sigma = np.where(mu > 0, (mu_aff / np.maximum(mu, 1e-300)) ** 3, 0.0)

        rcl = (sl * zl + dsl * dzl - (sigma * mu)[:, None]) * has_l
        rcu = (su * zu + dsu * dzu - (sigma * mu)[:, None]) * has_u
        step = newton(rcl, rcu)
        if step is None:
            break
        dx, dy, dzl, dzu, dsl, dsu = step
        a_p = 0.995 * _batch_step(sl, dsl, has_l, su, dsu, has_u)
        a_d = 0.995 * _batch_step(zl, dzl, has_l, zu, dzu, has_u)
        halt = ok.astype(float)          # freeze converged instances
        a_p = np.minimum(a_p, 1.0) * (1.0 - halt)
        a_d = np.minimum(a_d, 1.0) * (1.0 - halt)

        x = x + a_p[:, None] * dx
        y = y + a_d[:, None] * dy
        sl = np.where(has_l, sl + a_p[:, None] * dsl, sl)
        su = np.where(has_u, su + a_p[:, None] * dsu, su)
        zl = np.where(has_l, zl + a_d[:, None] * dzl, zl)
        zu = np.where(has_u, zu + a_d[:, None] * dzu, zu)

    return x, ok


def _batch_step(s1, ds1, m1, s2, ds2, m2):
    """Per-instance fraction-to-boundary step for two slack families."""
    big = np.full_like(s1, np.inf)
    r1 = np.where(m1 & (ds1 < 0), -s1 / np.where(ds1 < 0, ds1, -1.0), big)
    r2 = np.where(m2 & (ds2 < 0), -s2 / np.where(ds2 < 0, ds2, -1.0), big)
    return np.minimum(1.0, np.minimum(r1.min(axis=1), r2.min(axis=1)))
