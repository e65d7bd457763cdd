"""Declarative linear/quadratic programs with dual extraction.

The layer is deliberately small: named variables and parameters, affine
equality and inequality (<=) constraints, a linear plus diagonally-quadratic
objective, and tagged rows so callers can pull dual values out by name.

Parameters are symbolic constants.  They may appear in constraint constants
and in the objective's affine part; a compiled :class:`Program` is solved
repeatedly for different parameter values without re-assembling matrices.
That, together with the dual-based envelope gradient
(:meth:`Solution.param_gradient`), is the mechanism the contract negotiation
uses to get exact subgradients of optimal values with respect to contract
parameters.

Sign convention for duals of a minimization: the dual of ``a.x <= b`` is
nonnegative, the dual of ``a.x = b`` is free, and in both cases
``d(optimum)/d(b) = -dual``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ipm

OPTIMAL = ipm.OPTIMAL
INFEASIBLE = ipm.INFEASIBLE
UNBOUNDED = ipm.UNBOUNDED
ERROR = ipm.ERROR


class SolverError(RuntimeError):
    """Raised when the backend fails numerically (not for infeasibility)."""


class LinExpr:
    """Scalar affine expression: const + sum(coef * var) + sum(coef * param)."""

    __slots__ = ("const", "lin", "plin")

    def __init__(self, const=0.0, lin=None, plin=None):
        self.const = float(const)
        self.lin = lin if lin is not None else {}
        self.plin = plin if plin is not None else {}

    def copy(self):
        return LinExpr(self.const, dict(self.lin), dict(self.plin))

    def _iadd(self, other, sign=1.0):
        if isinstance(other, LinExpr):
            self.const += sign * other.const
            for k, v in other.lin.items():
                self.lin[k] = self.lin.get(k, 0.0) + sign * v
            for k, v in other.plin.items():
                self.plin[k] = self.plin.get(k, 0.0) + sign * v
        else:
            self.const += sign * float(other)
        return self

    def __add__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented       # let numpy broadcast elementwise
        return self.copy()._iadd(other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        return self.copy()._iadd(other, -1.0)

    def __rsub__(self, other):
        if isinstance(other, np.ndarray):
            return NotImplemented
        out = self.copy()
        out.const = -out.const
        out.lin = {k: -v for k, v in out.lin.items()}
        out.plin = {k: -v for k, v in out.plin.items()}
        return out._iadd(other)

    def __mul__(self, a):
        if isinstance(a, np.ndarray):
            return NotImplemented
        a = float(a)
        return LinExpr(self.const * a, {k: v * a for k, v in self.lin.items()},
                       {k: v * a for k, v in self.plin.items()})

    __rmul__ = __mul__

    def __truediv__(self, a):
        return self * (1.0 / float(a))

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return f"LinExpr({self.const}, {self.lin}, {self.plin})"


def as_expr(x):
    return x if isinstance(x, LinExpr) else LinExpr(float(x))


def expr_array(values):
    """Wrap a numeric ndarray as an object array usable in expression math."""
    arr = np.asarray(values)
    if arr.dtype == object:
        return arr
    return arr.astype(object)


def hcat(*mats):
    """Horizontal concatenation that tolerates mixed numeric/object blocks."""
    mats = [np.atleast_2d(np.asarray(m, dtype=object)) for m in mats if m is not None]
    mats = [m for m in mats if m.shape[1] > 0]
    if not mats:
        return np.zeros((0, 0), dtype=object)
    return np.concatenate(mats, axis=1)


@dataclass
class _TagInfo:
    kind: str        # "eq" or "le"
    start: int
    count: int


class ProblemBuilder:
    """Accumulates variables, parameters, constraints, and the objective."""

    def __init__(self, name="problem"):
        self.name = name
        self._nvar = 0
        self._npar = 0
        self._vars = {}      # name -> (offset, shape)
        self._pars = {}
        # Constraint storage: COO triplets plus per-row constant/param RHS.
        self._eq = _RowStore()
        self._le = _RowStore()
        self._tags = {}
        # Objective.
        self._qdiag = {}                 # var col -> coef (0.5*coef*x^2 ... stored as full coef of x^2)
        self._c = {}                     # var col -> constant coef
        self._c_par = []                 # (col, par, coef): cost coef affine in params
        self._k0 = 0.0
        self._k_par = {}                 # par -> coef (objective constant, affine)
        self._k_par2 = []                # (par_i, par_j, coef) objective constant, quadratic

    # -- declarations ------------------------------------------------------

    def var(self, name, shape=()):
        if name in self._vars or name in self._pars:
            raise ValueError(f"duplicate declaration {name!r}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        off = self._nvar
        self._nvar += count
        self._vars[name] = (off, shape)
        out = np.empty(count, dtype=object)
        for i in range(count):
            out[i] = LinExpr(0.0, {off + i: 1.0})
        return out.reshape(shape) if shape else out[0]

    def param(self, name, shape=()):
        if name in self._vars or name in self._pars:
            raise ValueError(f"duplicate declaration {name!r}")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        count = int(np.prod(shape)) if shape else 1
        off = self._npar
        self._npar += count
        self._pars[name] = (off, shape)
        out = np.empty(count, dtype=object)
        for i in range(count):
            out[i] = LinExpr(0.0, None, {off + i: 1.0})
        return out.reshape(shape) if shape else out[0]

    # -- constraints -------------------------------------------------------

    def _register(self, tag, kind, start, count):
        if tag is None:
            tag = f"_{kind}{len(self._tags)}"
        if tag in self._tags:
            raise ValueError(f"duplicate constraint tag {tag!r}")
        self._tags[tag] = _TagInfo(kind, start, count)
        return tag

    def add_eq(self, lhs, rhs=0.0, tag=None):
        store = self._eq
        start = store.nrows
        for e in _iter_exprs(lhs, rhs):
            store.add_row(e)
        return self._register(tag, "eq", start, store.nrows - start)

    def add_le(self, lhs, rhs=0.0, tag=None):
        store = self._le
        start = store.nrows
        for e in _iter_exprs(lhs, rhs):
            store.add_row(e)
        return self._register(tag, "le", start, store.nrows - start)

    # -- objective ---------------------------------------------------------

    def add_cost(self, expr):
        """Add an affine term to the objective."""
        for e in np.ravel(np.asarray(expr, dtype=object)):
            e = as_expr(e)
            self._k0 += e.const
            for k, v in e.lin.items():
                self._c[k] = self._c.get(k, 0.0) + v
            for k, v in e.plin.items():
                self._k_par[k] = self._k_par.get(k, 0.0) + v

    def add_square_cost(self, expr, weight=1.0):
        """Add ``weight * expr**2`` where expr contains at most one variable."""
        w = float(weight)
        if w == 0.0:
            return
        for e in np.ravel(np.asarray(expr, dtype=object)):
            e = as_expr(e)
            if len(e.lin) > 1:
                raise ValueError("square cost terms must involve a single variable")
            items = list(e.lin.items())
            if items:
                col, a = items[0]
                self._qdiag[col] = self._qdiag.get(col, 0.0) + 2.0 * w * a * a
                self._c[col] = self._c.get(col, 0.0) + 2.0 * w * a * e.const
                for p, pv in e.plin.items():
                    self._c_par.append((col, p, 2.0 * w * a * pv))
            self._k0 += w * e.const * e.const
            for p, pv in e.plin.items():
                self._k_par[p] = self._k_par.get(p, 0.0) + 2.0 * w * e.const * pv
            pitems = list(e.plin.items())
            for i, (pi, vi) in enumerate(pitems):
                for pj, vj in pitems[i:]:
                    coef = w * vi * vj * (1.0 if pi == pj else 2.0)
                    self._k_par2.append((pi, pj, coef))

    # -- compilation -------------------------------------------------------

    def compile(self):
        return Program(self)


def _iter_exprs(lhs, rhs):
    lhs = np.asarray(lhs, dtype=object)
    rhs = np.asarray(rhs, dtype=object)
    lhs, rhs = np.broadcast_arrays(lhs, rhs)
    for a, b in zip(np.ravel(lhs), np.ravel(rhs)):
        yield as_expr(a) - b


class _RowStore:
    def __init__(self):
        self.nrows = 0
        self.rows = []
        self.cols = []
        self.vals = []
        self.rhs0 = []
        self.prow = []
        self.pcol = []
        self.pval = []

    def add_row(self, e):
        r = self.nrows
        for k, v in e.lin.items():
            if v != 0.0:
                self.rows.append(r)
                self.cols.append(k)
                self.vals.append(v)
        self.rhs0.append(-e.const)
        for k, v in e.plin.items():
            if v != 0.0:
                self.prow.append(r)
                self.pcol.append(k)
                self.pval.append(-v)
        self.nrows += 1

    def matrices(self, nvar, npar):
        M = sp.csr_matrix((self.vals, (self.rows, self.cols)),
                          shape=(self.nrows, nvar))
        b0 = np.asarray(self.rhs0, dtype=float)
        P = sp.csr_matrix((self.pval, (self.prow, self.pcol)),
                          shape=(self.nrows, npar))
        return M, b0, P


class Program:
    """Compiled immutable problem; thread-safe to solve concurrently."""

    def __init__(self, pb: ProblemBuilder):
        self.name = pb.name
        self.nvar, self.npar = pb._nvar, pb._npar
        self.var_index = dict(pb._vars)
        self.par_index = dict(pb._pars)
        self.tags = dict(pb._tags)
        self.A, self.beq0, self.Beqp = pb._eq.matrices(self.nvar, self.npar)
        self.G, self.h0, self.Hp = pb._le.matrices(self.nvar, self.npar)
        self.qdiag = np.zeros(self.nvar)
        for k, v in pb._qdiag.items():
            self.qdiag[k] = v
        self.c0 = np.zeros(self.nvar)
        for k, v in pb._c.items():
            self.c0[k] = v
        if pb._c_par:
            cols, pars, vals = zip(*pb._c_par)
            self.Cp = sp.csr_matrix((vals, (cols, pars)),
                                    shape=(self.nvar, self.npar))
        else:
            self.Cp = None
        self.k0 = pb._k0
        self.k_par = np.zeros(self.npar)
        for k, v in pb._k_par.items():
            self.k_par[k] = v
        self.k_par2 = list(pb._k_par2)

    # -- parameter plumbing --------------------------------------------------

    def _theta(self, params):
        theta = np.zeros(self.npar)
        params = params or {}
        seen = set()
        for name, value in params.items():
            if name not in self.par_index:
                continue
            off, shape = self.par_index[name]
            v = np.asarray(value, dtype=float).ravel()
            count = int(np.prod(shape)) if shape else 1
            if v.size != count:
                raise ValueError(f"parameter {name!r} expects {count} entries")
            theta[off:off + count] = v
            seen.add(name)
        missing = set(self.par_index) - seen
        if missing:
            raise ValueError(f"missing parameter values: {sorted(missing)}")
        return theta

    def assemble(self, params=None):
        theta = self._theta(params)
        beq = self.beq0 + (self.Beqp @ theta if self.npar else 0.0)
        h = self.h0 + (self.Hp @ theta if self.npar else 0.0)
        c = self.c0 + (self.Cp @ theta if self.Cp is not None else 0.0)
        k = self.k0 + float(self.k_par @ theta)
        for pi, pj, coef in self.k_par2:
            k += coef * theta[pi] * theta[pj]
        return theta, beq, h, c, k

    # -- solving -------------------------------------------------------------

    def solve(self, params=None, method="ipm", tol=1e-9, max_iter=120):
        theta, beq, h, c, k = self.assemble(params)
        if method == "scipy":
            res = self._solve_scipy(c, beq, h)
        else:
            res = ipm.solve_qp(self.qdiag, c, self.A, beq, self.G, h,
                               tol=tol, max_iter=max_iter)
        return Solution(self, res, theta, k)

    def _solve_scipy(self, c, beq, h):
        if np.any(self.qdiag):
            raise SolverError("scipy adapter handles LPs only")
        from scipy.optimize import linprog
        res = linprog(c, A_ub=self.G if self.G.shape[0] else None,
                      b_ub=h if self.G.shape[0] else None,
                      A_eq=self.A if self.A.shape[0] else None,
                      b_eq=beq if self.A.shape[0] else None,
                      bounds=(None, None), method="highs")
        out = ipm.IpmResult(ERROR, message=res.message)
        if res.status == 0:
            y = -np.asarray(res.eqlin.marginals) if self.A.shape[0] else np.zeros(0)
            z = -np.asarray(res.ineqlin.marginals) if self.G.shape[0] else np.zeros(0)
            s = (h - self.G @ res.x) if self.G.shape[0] else np.zeros(0)
            out = ipm.IpmResult(OPTIMAL, res.x, y, z, s, res.fun, int(res.nit))
        elif res.status == 2:
            out = ipm.IpmResult(INFEASIBLE)
        elif res.status == 3:
            out = ipm.IpmResult(UNBOUNDED)
        return out

    # -- debug dump ----------------------------------------------------------

    def write_lp(self, path_or_buf, params=None):
        """Dump the instantiated problem in (CPLEX-style) LP text format."""
        _, beq, h, c, _ = self.assemble(params)
        buf = io.StringIO()
        buf.write(f"\\ {self.name}\nMinimize\n obj:")
        for j in np.nonzero(c)[0]:
            buf.write(f" {c[j]:+.17g} x{j}")
        if np.any(self.qdiag):
            buf.write(" + [")
            for j in np.nonzero(self.qdiag)[0]:
                buf.write(f" {self.qdiag[j]:+.17g} x{j}^2")
            buf.write(" ] / 2")
        buf.write("\nSubject To\n")
        A, G = self.A.tocsr(), self.G.tocsr()
        for i in range(A.shape[0]):
            row = A.getrow(i)
            terms = " ".join(f"{v:+.17g} x{j}" for j, v in zip(row.indices, row.data))
            buf.write(f" e{i}: {terms} = {beq[i]:.17g}\n")
        for i in range(G.shape[0]):
            row = G.getrow(i)
            terms = " ".join(f"{v:+.17g} x{j}" for j, v in zip(row.indices, row.data))
            buf.write(f" i{i}: {terms} <= {h[i]:.17g}\n")
        buf.write("Bounds\n")
        for j in range(self.nvar):
            buf.write(f" x{j} free\n")
        buf.write("End\n")
        text = buf.getvalue()
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as f:
                f.write(text)
        return text


class Solution:
    """Result of one solve; immutable."""

    def __init__(self, program: Program, res: ipm.IpmResult, theta, obj_const):
        self._p = program
        self._res = res
        self._theta = theta
        self.status = res.status
        self.iterations = res.iterations
        self.message = res.message
        self.objective = (res.objective + obj_const) if res.status == OPTIMAL else np.nan

    @property
    def optimal(self):
        return self.status == OPTIMAL

    def value(self, name):
        if not self.optimal:
            raise SolverError(f"no solution available (status={self.status})")
        off, shape = self._p.var_index[name]
        count = int(np.prod(shape)) if shape else 1
        v = self._res.x[off:off + count]
        return v.reshape(shape) if shape else float(v[0])

    def value_expr(self, expr):
        """Evaluate an expression (array) at the solution point."""
        x, theta = self._res.x, self._theta

        def ev(e):
            if not isinstance(e, LinExpr):
                return float(e)
            return (e.const + sum(v * x[k] for k, v in e.lin.items())
                    + sum(v * theta[k] for k, v in e.plin.items()))

        arr = np.asarray(expr, dtype=object)
        out = np.frompyfunc(ev, 1, 1)(arr).astype(float)
        return float(out) if out.ndim == 0 else out

    def dual(self, tag):
        """Duals of the tagged rows (>= 0 for <=-rows); see module docstring."""
        if not self.optimal:
            raise SolverError(f"no duals available (status={self.status})")
        info = self._p.tags[tag]
        src = self._res.y if info.kind == "eq" else self._res.z
        return np.array(src[info.start:info.start + info.count])

    def param_gradient(self):
        """d(optimum)/d(theta) for every parameter, via the envelope theorem."""
        if not self.optimal:
            raise SolverError(f"no gradient available (status={self.status})")
        p, res, theta = self._p, self._res, self._theta
        g = p.k_par.copy()
        for pi, pj, coef in p.k_par2:
            if pi == pj:
                g[pi] += 2.0 * coef * theta[pi]
            else:
                g[pi] += coef * theta[pj]
                g[pj] += coef * theta[pi]
        if p.Cp is not None:
            g += p.Cp.T @ res.x
        if p.A.shape[0]:
            g -= p.Beqp.T @ res.y
        if p.G.shape[0]:
            g -= p.Hp.T @ res.z
        out = {}
        for name, (off, shape) in p.par_index.items():
            count = int(np.prod(shape)) if shape else 1
            v = g[off:off + count]
            out[name] = v.reshape(shape) if shape else float(v[0])
        return out
