"""Zonotope set calculus and the linear-programming encodings built on it.

A zonotope ``Z(c, G)`` is the set ``{c + G z : ||z||_inf <= 1}``.  Everything
downstream (tubes, invariant sets, contracts) is expressed with this one
representation, so this module carries both the cheap closed-form operations
(affine image, Minkowski sum, interval hull) and the sufficient containment
encodings that turn set inclusions into linear constraints.

Containment encodings accept symbolic entries: centers and generators may be
:class:`~zonosynth.optim.LinExpr` objects, which is how synthesis programs
constrain unknown tube matrices inside known (or parametric) sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ipm
from .optim import LinExpr, ProblemBuilder, SolverError, as_expr, hcat

_FEAS_TOL = 1e-7


@dataclass(frozen=True)
class Zonotope:
    """Centrally symmetric convex set: center plus generator columns."""

    center: np.ndarray
    generators: np.ndarray

    def __init__(self, center, generators=None):
        center = np.atleast_1d(np.asarray(center, dtype=float)).ravel()
        n = center.size
        if generators is None:
            generators = np.zeros((n, 0))
        generators = np.asarray(generators, dtype=float)
        if generators.ndim == 1:
            generators = generators.reshape(n, -1) if generators.size else \
                np.zeros((n, 0))
        if generators.ndim != 2 or generators.shape[0] != n:
            raise ValueError(
                f"generator rows {generators.shape} do not match center "
                f"dimension {n}")
        if generators.shape[1]:
            keep = np.linalg.norm(generators, axis=0) > 0.0
            generators = generators[:, keep]
        center.setflags(write=False)
        generators.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "generators", generators)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    @property
    def order(self) -> float:
        return self.num_generators / self.dim

    def translate(self, v) -> "Zonotope":
        return Zonotope(self.center + np.asarray(v, dtype=float), self.generators)

    def scale(self, a: float) -> "Zonotope":
        return Zonotope(self.center, a * self.generators)

    def radii(self) -> np.ndarray:
        """Per-coordinate half-widths of the interval hull."""
        if self.num_generators == 0:
            return np.zeros(self.dim)
        return np.abs(self.generators).sum(axis=1)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(),
                "generators": self.generators.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Zonotope":
        return Zonotope(np.asarray(d["center"], dtype=float),
                        np.asarray(d["generators"], dtype=float))

    def __repr__(self):
        return f"Zonotope(dim={self.dim}, p={self.num_generators})"


@dataclass
class ContainmentCertificate:
    gamma_matrix: np.ndarray
    gamma_vector: np.ndarray
    feasible: bool


# ---------------------------------------------------------------------------
# Closed-form operations
# ---------------------------------------------------------------------------

def affine_map(A, b, Z: Zonotope) -> Zonotope:
    """Image A*Z + b; A may be rectangular."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[1] != Z.dim:
        raise ValueError(f"map expects dimension {A.shape[1]}, set has {Z.dim}")
    if b.size != A.shape[0]:
        raise ValueError("offset length must match the map's row count")
    return Zonotope(A @ Z.center + b, A @ Z.generators)


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    if Z1.dim != Z2.dim:
        raise ValueError(f"dimension mismatch {Z1.dim} vs {Z2.dim}")
    return Zonotope(Z1.center + Z2.center,
                    np.hstack([Z1.generators, Z2.generators]))


def cartesian_product(parts) -> Zonotope:
    parts = list(parts)
    if not parts:
        raise ValueError("cartesian product of an empty list")
    center = np.concatenate([Z.center for Z in parts])
    n = center.size
    p = sum(Z.num_generators for Z in parts)
    G = np.zeros((n, p))
    r = c = 0
    for Z in parts:
        G[r:r + Z.dim, c:c + Z.num_generators] = Z.generators
        r += Z.dim
        c += Z.num_generators
    return Zonotope(center, G)


def reduce_box(Z: Zonotope) -> Zonotope:
    """Interval hull: axis-aligned parallelotope with the same center."""
    return Zonotope(Z.center, np.diag(Z.radii()))


def volume_parallelotope(Z: Zonotope) -> float:
    G = Z.generators
    if G.shape[0] != G.shape[1]:
        raise ValueError("volume formula needs a square generator matrix")
    gram = G.T @ G
    return (2.0 ** Z.dim) * float(np.sqrt(max(np.linalg.det(gram), 0.0)))


# ---------------------------------------------------------------------------
# Containment encodings
# ---------------------------------------------------------------------------

def _center_gens(S):
    """Accept a Zonotope or a (center, generators) pair, possibly symbolic."""
    if isinstance(S, Zonotope):
        return S.center, S.generators
    center, gens = S
    center = np.atleast_1d(np.asarray(center, dtype=object)).ravel()
    gens = np.asarray(gens, dtype=object)
    if gens.ndim == 1:
        gens = gens.reshape(center.size, -1)
    return center, gens


def _is_diagonal(G):
    G = np.asarray(G, dtype=float)
    return G.shape[0] == G.shape[1] and np.count_nonzero(G - np.diag(np.diag(G))) == 0


class Block:
    """One generator block of an outer set, with an optional column scaling.

    ``weight`` is what multiplies the block columns: None (fixed), a numeric
    vector, a symbolic vector (parameters or variables), or a scalar
    expression broadcast over all columns (used for Hausdorff slack terms).
    """

    def __init__(self, G, weight=None):
        self.G = np.atleast_2d(np.asarray(G, dtype=float))
        self.weight = weight

    def weight_vec(self):
        s = self.G.shape[1]
        w = self.weight
        if w is None:
            return np.ones(s, dtype=object)
        if np.isscalar(w) or isinstance(w, LinExpr):
            return np.array([w] * s, dtype=object)
        w = np.asarray(w, dtype=object).ravel()
        if w.size != s:
            raise ValueError(f"weight length {w.size} != block columns {s}")
        return w


class InclusionHandle:
    """Bookkeeping for one encoded inclusion; can rebuild the certificate."""

    def __init__(self, prefix, blocks, diag_mode, gamma_names, row_tags,
                 inner_cols):
        self.prefix = prefix
        self.blocks = blocks
        self.diag_mode = diag_mode
        self.gamma_names = gamma_names
        self.row_tags = row_tags
        self.inner_cols = inner_cols

    def certificate(self, sol) -> ContainmentCertificate:
        if not sol.optimal:
            return ContainmentCertificate(np.zeros((0, 0)), np.zeros(0), False)
        if self.diag_mode:
            Gm, gv = self._diag_certificate(sol)
        else:
            mats, vecs = [], []
            for gp, gm, cp, cm in self.gamma_names:
                mats.append(sol.value(gp) - sol.value(gm))
                vecs.append(sol.value(cp) - sol.value(cm))
            Gm = np.vstack(mats)
            gv = np.concatenate(vecs)
        return ContainmentCertificate(Gm, gv, True)

    def _diag_certificate(self, sol):
        # Canonical (Gamma, gamma) for a diagonal outer block structure.
        inner_g = sol.value(self.prefix + "_gval") if self.prefix + "_gval" in \
            sol._p.var_index else self._numeric_inner
        diff = sol.value(self.prefix + "_cval") if self.prefix + "_cval" in \
            sol._p.var_index else self._numeric_center
        rows = []
        vecs = []
        for blk in self.blocks:
            d = np.diag(blk.G).astype(float)
            inv = np.divide(1.0, d, out=np.zeros_like(d), where=d != 0)
            rows.append(inv[:, None] * inner_g)
            vecs.append(inv * diff)
        return np.vstack(rows), np.concatenate(vecs)


def encode_inclusion(pb: ProblemBuilder, inner, outer_center, blocks,
                     prefix, force_general=False):
    """Constrain ``inner subset of Z(outer_center, [G_1 diag(w_1), ...])``.

    The weights ``w_k`` never multiply decision variables; they only bound
    row sums, so when they are solver parameters the dual values of those
    rows give exact sensitivities of the optimum with respect to the weights.
    """
    ic, ig = _center_gens(inner)
    oc = np.atleast_1d(np.asarray(outer_center, dtype=object)).ravel()
    n = ic.size
    if oc.size != n:
        raise ValueError(f"dimension mismatch {n} vs {oc.size}")
    r = ig.shape[1] if ig.size else ig.shape[1]
    blocks = [b if isinstance(b, Block) else Block(*b) for b in blocks]
    for blk in blocks:
        if blk.G.shape[0] != n:
            raise ValueError("outer block rows do not match set dimension")

    diag_mode = (not force_general) and all(_is_diagonal(b.G) for b in blocks)
    if diag_mode:
        return _encode_inclusion_box(pb, ic, ig, oc, blocks, prefix)
    return _encode_inclusion_general(pb, ic, ig, oc, blocks, prefix)


def _encode_inclusion_general(pb, ic, ig, oc, blocks, prefix):
    n, r = ic.size, ig.shape[1]
    gamma_names, row_tags = [], []
    gen_terms = np.zeros((n, r), dtype=object)
    cen_terms = np.zeros(n, dtype=object)
    for k, blk in enumerate(blocks):
        s = blk.G.shape[1]
        gp = pb.var(f"{prefix}_Gp{k}", (s, r))
        gm = pb.var(f"{prefix}_Gm{k}", (s, r))
        cp = pb.var(f"{prefix}_gp{k}", (s,))
        cm = pb.var(f"{prefix}_gm{k}", (s,))
        gamma_names.append((f"{prefix}_Gp{k}", f"{prefix}_Gm{k}",
                            f"{prefix}_gp{k}", f"{prefix}_gm{k}"))
        pb.add_le(-gp, 0.0)
        pb.add_le(-gm, 0.0)
        pb.add_le(-cp, 0.0)
        pb.add_le(-cm, 0.0)
        if s:
            gen_terms = gen_terms + np.dot(blk.G, gp - gm)
            cen_terms = cen_terms + np.dot(blk.G, cp - cm)
        w = blk.weight_vec()
        rows = (gp + gm).sum(axis=1) + cp + cm if r else cp + cm
        tag = pb.add_le(rows, w, tag=f"{prefix}_w{k}")
        row_tags.append(tag)
    if r:
        pb.add_eq(gen_terms, ig, tag=f"{prefix}_geq")
    pb.add_eq(cen_terms, oc - ic, tag=f"{prefix}_ceq")
    return InclusionHandle(prefix, blocks, False, gamma_names, row_tags, r)


def _encode_inclusion_box(pb, ic, ig, oc, blocks, prefix):
    """Exact row-interval encoding when every outer block is diagonal.

    Needs |inner| row sums, so symbolic inner entries get sign-splitting
    auxiliaries; the per-row budget sums the diagonal weights of all blocks.
    """
    n, r = ic.size, ig.shape[1]
    numeric_inner = ig.dtype != object
    numeric_center = (np.asarray(ic).dtype != object
                      and np.asarray(oc).dtype != object)

    if numeric_inner:
        row_abs = np.abs(ig.astype(float)).sum(axis=1) if r else np.zeros(n)
    else:
        S = pb.var(f"{prefix}_absG", (n, r))
        pb.add_le(ig - S, 0.0)
        pb.add_le(-ig - S, 0.0)
        row_abs = S.sum(axis=1)
    if numeric_center:
        cdiff_abs = np.abs(oc.astype(float) - ic.astype(float))
    else:
        t = pb.var(f"{prefix}_absc", (n,))
        diff = np.asarray(oc, dtype=object) - np.asarray(ic, dtype=object)
        pb.add_le(diff - t, 0.0)
        pb.add_le(-diff - t, 0.0)
        cdiff_abs = t

    # Row budget: sum of |diag| * weight over blocks, rows without any
    # budget must have zero extent.
    budget = np.zeros(n, dtype=object)
    for blk in blocks:
        d = np.abs(np.diag(blk.G))
        budget = budget + d * blk.weight_vec()
    tag = pb.add_le(row_abs + cdiff_abs, budget, tag=f"{prefix}_w0")
    handle = InclusionHandle(prefix, blocks, True, [], [tag], r)
    handle._numeric_inner = ig.astype(float) if numeric_inner else None
    handle._numeric_center = (np.asarray(oc, dtype=float)
                              - np.asarray(ic, dtype=float)) if numeric_center else None
    if not numeric_inner:
        gval = pb.var(f"{prefix}_gval", (n, r))
        pb.add_eq(gval - ig, 0.0)
        # mirror for certificate extraction
    if not numeric_center:
        cval = pb.var(f"{prefix}_cval", (n,))
        pb.add_eq(cval - (np.asarray(oc, dtype=object) - np.asarray(ic, dtype=object)), 0.0)
    return handle


def encode_containment(inner, outer, pb: ProblemBuilder, prefix=None,
                       force_general=False):
    """Sufficient linear encoding of ``inner subset of outer``."""
    oc, og = _center_gens(outer)
    prefix = prefix or f"inc{len(pb._tags)}"
    return encode_inclusion(pb, inner, oc, [Block(og.astype(float))], prefix,
                            force_general=force_general)


def encode_weighted_containment(inner, outer_base, weights,
                                pb: ProblemBuilder, prefix=None,
                                force_general=False):
    """Encoding of ``inner subset of Z(c2, G2 diag(weights))``.

    The weights appear only on the right-hand side of row-sum inequalities,
    which is what makes d(optimum)/d(weight) available as an LP dual.
    """
    oc, og = _center_gens(outer_base)
    prefix = prefix or f"winc{len(pb._tags)}"
    return encode_inclusion(pb, inner, oc, [Block(og.astype(float), weights)],
                            prefix, force_general=force_general)


def check_containment(inner: Zonotope, outer: Zonotope, tol=_FEAS_TOL) -> ContainmentCertificate:
    """Feasibility check of the sufficient encoding, numeric sets only.

    Containment boundary cases (synthesis drives sets to be exactly tight)
    are accepted up to a uniform inflation of ``tol`` times the outer scale.
    """
    if inner.dim != outer.dim:
        raise ValueError(f"dimension mismatch {inner.dim} vs {outer.dim}")
    pb = ProblemBuilder("containment")
    handle = encode_containment(inner, outer, pb, prefix="c")
    sol = pb.compile().solve()
    if sol.status == ipm.ERROR:
        raise SolverError(sol.message)
    if sol.optimal:
        return handle.certificate(sol)
    # retry against the tol-inflated outer set
    slack = tol * (1.0 + float(np.max(outer.radii(), initial=0.0))
                   + float(np.max(np.abs(outer.center), initial=0.0)))
    pb = ProblemBuilder("containment-tol")
    handle = encode_inclusion(pb, inner, outer.center,
                              [Block(outer.generators),
                               Block(slack * np.eye(outer.dim))], "c")
    sol = pb.compile().solve()
    if sol.status == ipm.ERROR:
        raise SolverError(sol.message)
    if not sol.optimal:
        return ContainmentCertificate(np.zeros((0, 0)), np.zeros(0), False)
    cert = handle.certificate(sol)
    s = outer.num_generators
    return ContainmentCertificate(cert.gamma_matrix[:s], cert.gamma_vector[:s],
                                  True)


def directed_hausdorff(Z1: Zonotope, Z2: Zonotope) -> float:
    """Smallest d >= 0 with Z2 inside Z1 + d * unit box (infinity norm)."""
    if Z1.dim != Z2.dim:
        raise ValueError(f"dimension mismatch {Z1.dim} vs {Z2.dim}")
    pb = ProblemBuilder("hausdorff")
    d = pb.var("d")
    pb.add_le(-d, 0.0)
    encode_inclusion(pb, Z2, Z1.center,
                     [Block(Z1.generators), Block(np.eye(Z1.dim), d)], "h")
    pb.add_cost(d)
    sol = pb.compile().solve()
    if not sol.optimal:
        raise SolverError(f"hausdorff LP failed: {sol.status}")
    return max(float(sol.value("d")), 0.0)


# ---------------------------------------------------------------------------
# Membership and sampling
# ---------------------------------------------------------------------------

def coords_infnorm(Z: Zonotope, points):
    """Batched min-infinity-norm coordinates: for each point x solve
    ``min ||zeta||_inf  s.t.  c + G zeta = x``.

    Returns (t, zeta, ok); t is inf where x is not in the generator span.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    B = X.shape[0]
    n, p = Z.dim, Z.num_generators
    R = X - Z.center
    if p == 0:
        t = np.where(np.max(np.abs(R), axis=1) <= 1e-9, 0.0, np.inf)
        return t, np.zeros((B, 0)), np.isfinite(t)
    # Variables [zeta, t, u, v]: u = t - zeta >= 0, v = t + zeta >= 0.
    nv = 3 * p + 1
    c = np.zeros(nv)
    c[p] = 1.0
    A = np.zeros((n + 2 * p, nv))
    A[:n, :p] = Z.generators
    A[n:n + p, :p] = np.eye(p)
    A[n:n + p, p] = -1.0
    A[n:n + p, p + 1:2 * p + 1] = np.eye(p)
    A[n + p:, :p] = -np.eye(p)
    A[n + p:, p] = -1.0
    A[n + p:, 2 * p + 1:] = np.eye(p)
    b = np.zeros((B, n + 2 * p))
    b[:, :n] = R
    lb = np.full(nv, -np.inf)
    lb[p:] = 0.0
    ub = np.full(nv, np.inf)
    x, ok = ipm.solve_lp_batch(c, A, b, lb, ub)
    t = np.where(ok, x[:, p], np.inf)
    return t, x[:, :p], ok


def contains_point(Z: Zonotope, x, tol=_FEAS_TOL) -> bool:
    x = np.asarray(x, dtype=float).ravel()
    if x.size != Z.dim:
        raise ValueError(f"point dimension {x.size} != set dimension {Z.dim}")
    t, _, ok = coords_infnorm(Z, x[None, :])
    return bool(ok[0] and t[0] <= 1.0 + tol)


def contains_points(Z: Zonotope, points, tol=_FEAS_TOL):
    """Vectorized membership for many points; returns a boolean array."""
    t, _, ok = coords_infnorm(Z, points)
    return ok & (t <= 1.0 + tol)


def sample_point(Z: Zonotope, rng) -> np.ndarray:
    zeta = rng.uniform(-1.0, 1.0, Z.num_generators)
    return Z.center + Z.generators @ zeta


def sample_extreme(Z: Zonotope, rng) -> np.ndarray:
    zeta = rng.choice([-1.0, 1.0], Z.num_generators)
    return Z.center + Z.generators @ zeta


def sample_points(Z: Zonotope, rng, count, extreme=False):
    p = Z.num_generators
    if extreme:
        zeta = rng.choice([-1.0, 1.0], (count, p))
    else:
        zeta = rng.uniform(-1.0, 1.0, (count, p))
    return Z.center + zeta @ Z.generators.T


def vertices_2d(Z: Zonotope) -> np.ndarray:
    """Vertices of a 2-D zonotope, counterclockwise.

    Standard construction: orient each generator into the upper half-plane,
    sort by angle, and walk the boundary.
    """
    if Z.dim != 2:
        raise ValueError("vertex enumeration implemented for 2-D sets only")
    G = Z.generators.copy()
    if G.shape[1] == 0:
        return Z.center[None, :]
    flip = G[1] < 0
    flip |= (G[1] == 0) & (G[0] < 0)
    G[:, flip] *= -1.0
    order = np.argsort(np.arctan2(G[1], G[0]))
    G = G[:, order]
    start = Z.center - G.sum(axis=1)
    steps = np.concatenate([2 * G.T, -2 * G.T], axis=0)
    verts = start + np.vstack([np.zeros(2), np.cumsum(steps, axis=0)[:-1]])
    return verts
