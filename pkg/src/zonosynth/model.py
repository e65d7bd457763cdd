"""Network model: coupled discrete-time linear subsystems and scenario I/O.

A network is a list of subsystems (each with internal dynamics, a disturbance
zonotope, and optional per-subsystem state/input bounds), a list of directed
couplings, and either a finite horizon (time-varying problems) or none
(infinite-horizon set-invariance problems).  Constraints may instead be given
in coupled form over the aggregate state/input vectors.

Time-varying data is supplied as explicit per-step sequences; a single matrix
or set stands for a constant one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Zonotope, cartesian_product

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Schema or consistency violation, annotated with a field path."""


def _seq(value, kind, path):
    """Normalize single-or-sequence input into a list."""
    if value is None:
        return None
    if kind == "matrix":
        if isinstance(value, (list, tuple)) and value and \
                isinstance(value[0], (list, tuple, np.ndarray)) and \
                np.asarray(value[0]).ndim == 2:
            return [np.atleast_2d(np.asarray(v, dtype=float)) for v in value]
        arr = np.atleast_2d(np.asarray(value, dtype=float))
        return [arr]
    if kind == "zono":
        if isinstance(value, Zonotope):
            return [value]
        if isinstance(value, (list, tuple)):
            return [z if isinstance(z, Zonotope) else Zonotope.from_dict(z)
                    for z in value]
        if isinstance(value, dict):
            return [Zonotope.from_dict(value)]
    raise ScenarioError(f"{path}: cannot interpret value")


def _at(seq, t):
    if seq is None:
        return None
    return seq[0] if len(seq) == 1 else seq[t]


@dataclass
class Subsystem:
    """One node: x+ = A x + B u + d plus incoming coupling terms."""

    A: list
    B: list
    D: list
    X: list | None = None
    U: list | None = None
    name: str = ""

    def __post_init__(self):
        self.A = _seq(self.A, "matrix", "A")
        self.B = _seq(self.B, "matrix", "B")
        self.D = _seq(self.D, "zono", "D")
        self.X = _seq(self.X, "zono", "X") if self.X is not None else None
        self.U = _seq(self.U, "zono", "U") if self.U is not None else None
        n = self.A[0].shape[0]
        m = self.B[0].shape[1]
        for k, M in enumerate(self.A):
            if M.shape != (n, n):
                raise ScenarioError(f"A[{k}]: expected {(n, n)}, got {M.shape}")
        for k, M in enumerate(self.B):
            if M.shape != (n, m):
                raise ScenarioError(f"B[{k}]: expected {(n, m)}, got {M.shape}")
        for k, Z in enumerate(self.D):
            if Z.dim != n:
                raise ScenarioError(f"D[{k}]: dimension {Z.dim} != {n}")
        if self.X is not None:
            for k, Z in enumerate(self.X):
                if Z.dim != n:
                    raise ScenarioError(f"X[{k}]: dimension {Z.dim} != {n}")
        if self.U is not None:
            for k, Z in enumerate(self.U):
                if Z.dim != m:
                    raise ScenarioError(f"U[{k}]: dimension {Z.dim} != {m}")

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def lti(self) -> bool:
        seqs = [self.A, self.B, self.D, self.X or [], self.U or []]
        return all(len(s) <= 1 for s in seqs)

    def A_at(self, t):
        return _at(self.A, t)

    def B_at(self, t):
        return _at(self.B, t)

    def D_at(self, t):
        return _at(self.D, t)

    def X_at(self, t):
        return _at(self.X, t)

    def U_at(self, t):
        return _at(self.U, t)


@dataclass
class Coupling:
    """Directed influence of subsystem j on subsystem i."""

    i: int
    j: int
    A: list | None = None
    B: list | None = None

    def __post_init__(self):
        if self.i == self.j:
            raise ScenarioError(f"coupling ({self.i},{self.j}): self-loop")
        self.A = _seq(self.A, "matrix", "coupling.A") if self.A is not None else None
        self.B = _seq(self.B, "matrix", "coupling.B") if self.B is not None else None
        if self.A is None and self.B is None:
            raise ScenarioError(
                f"coupling ({self.i},{self.j}): needs A or B")

    def A_at(self, t):
        return _at(self.A, t)

    def B_at(self, t):
        return _at(self.B, t)


@dataclass
class LinearNetwork:
    subsystems: list
    couplings: list = field(default_factory=list)
    horizon: int | None = None
    coupled_X: list | None = None
    coupled_U: list | None = None

    def __post_init__(self):
        self.coupled_X = _seq(self.coupled_X, "zono", "coupled_X") \
            if self.coupled_X is not None else None
        self.coupled_U = _seq(self.coupled_U, "zono", "coupled_U") \
            if self.coupled_U is not None else None
        self.validate()

    # -- structure -----------------------------------------------------------

    @property
    def eta(self) -> int:
        return len(self.subsystems)

    @property
    def total_n(self) -> int:
        return sum(s.n for s in self.subsystems)

    @property
    def total_m(self) -> int:
        return sum(s.m for s in self.subsystems)

    def incoming(self, i):
        return [c for c in self.couplings if c.i == i]

    def neighbors(self, i):
        return sorted({c.j for c in self.incoming(i)})

    def validate(self):
        eta = self.eta
        for k, c in enumerate(self.couplings):
            if not (0 <= c.i < eta and 0 <= c.j < eta):
                raise ScenarioError(f"couplings[{k}]: index out of range")
            ni, nj = self.subsystems[c.i].n, self.subsystems[c.j].n
            mj = self.subsystems[c.j].m
            if c.A is not None:
                for step, M in enumerate(c.A):
                    if M.shape != (ni, nj):
                        raise ScenarioError(
                            f"couplings[{k}].A[{step}]: expected {(ni, nj)}, "
                            f"got {M.shape}")
            if c.B is not None:
                for step, M in enumerate(c.B):
                    if M.shape != (ni, mj):
                        raise ScenarioError(
                            f"couplings[{k}].B[{step}]: expected {(ni, mj)}, "
                            f"got {M.shape}")
        if self.coupled_X is not None:
            for t, Z in enumerate(self.coupled_X):
                if Z.dim != self.total_n:
                    raise ScenarioError(
                        f"coupled_X[{t}]: dimension {Z.dim} != {self.total_n}")
        if self.coupled_U is not None:
            for t, Z in enumerate(self.coupled_U):
                if Z.dim != self.total_m:
                    raise ScenarioError(
                        f"coupled_U[{t}]: dimension {Z.dim} != {self.total_m}")
        if self.horizon is not None:
            h = self.horizon
            if h < 1:
                raise ScenarioError("horizon must be >= 1")
            for idx, s in enumerate(self.subsystems):
                for nm, seq, need in (("A", s.A, h), ("B", s.B, h), ("D", s.D, h),
                                      ("X", s.X, h + 1), ("U", s.U, h)):
                    if seq is not None and len(seq) not in (1,) and len(seq) < need:
                        raise ScenarioError(
                            f"subsystems[{idx}].{nm}: sequence shorter than "
                            f"horizon ({len(seq)} < {need})")

    # -- aggregate views ------------------------------------------------------

    def state_offsets(self):
        off, out = 0, []
        for s in self.subsystems:
            out.append(off)
            off += s.n
        return out

    def input_offsets(self):
        off, out = 0, []
        for s in self.subsystems:
            out.append(off)
            off += s.m
        return out

    def aggregate_matrices(self, t=0):
        """Block (A, B) of the full network at step t."""
        N, M = self.total_n, self.total_m
        soff, ioff = self.state_offsets(), self.input_offsets()
        A = np.zeros((N, N))
        B = np.zeros((N, M))
        for i, s in enumerate(self.subsystems):
            A[soff[i]:soff[i] + s.n, soff[i]:soff[i] + s.n] = s.A_at(t)
            B[soff[i]:soff[i] + s.n, ioff[i]:ioff[i] + s.m] = s.B_at(t)
        for c in self.couplings:
            si, sj = self.subsystems[c.i], self.subsystems[c.j]
            if c.A is not None:
                A[soff[c.i]:soff[c.i] + si.n, soff[c.j]:soff[c.j] + sj.n] += c.A_at(t)
            if c.B is not None:
                B[soff[c.i]:soff[c.i] + si.n, ioff[c.j]:ioff[c.j] + sj.m] += c.B_at(t)
        return A, B

    def admissible_X(self, i, t):
        return self.subsystems[i].X_at(t)

    def admissible_U(self, i, t):
        return self.subsystems[i].U_at(t)

    def coupled_X_at(self, t):
        return _at(self.coupled_X, t)

    def coupled_U_at(self, t):
        return _at(self.coupled_U, t)

    def aggregate_disturbance(self, t=0):
        return cartesian_product([s.D_at(t) for s in self.subsystems])

    def step(self, x_parts, u_parts, d_parts, t=0):
        """One synchronous update of all subsystems (per-node equations)."""
        out = []
        for i, s in enumerate(self.subsystems):
            nxt = s.A_at(t) @ x_parts[i] + s.B_at(t) @ u_parts[i] + d_parts[i]
            for c in self.incoming(i):
                if c.A is not None:
                    nxt = nxt + c.A_at(t) @ x_parts[c.j]
                if c.B is not None:
                    nxt = nxt + c.B_at(t) @ u_parts[c.j]
            out.append(nxt)
        return out


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

_SUB_FIELDS = {"n", "m", "A", "B", "D", "X", "U", "name"}
_COUP_FIELDS = {"i", "j", "A", "B"}
_TOP_FIELDS = {"version", "horizon", "subsystems", "couplings",
               "coupled_X", "coupled_U"}


def _matrix_json(seq):
    if seq is None:
        return None
    mats = [np.asarray(M).tolist() for M in seq]
    return mats[0] if len(mats) == 1 else mats


def _zono_json(seq):
    if seq is None:
        return None
    ds = [Z.to_dict() for Z in seq]
    return ds[0] if len(ds) == 1 else ds


def network_to_dict(net: LinearNetwork) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "horizon": net.horizon,
        "subsystems": [
            {"n": s.n, "m": s.m, "A": _matrix_json(s.A), "B": _matrix_json(s.B),
             "D": _zono_json(s.D), "X": _zono_json(s.X), "U": _zono_json(s.U),
             "name": s.name}
            for s in net.subsystems],
        "couplings": [
            {"i": c.i, "j": c.j, "A": _matrix_json(c.A), "B": _matrix_json(c.B)}
            for c in net.couplings],
        "coupled_X": _zono_json(net.coupled_X),
        "coupled_U": _zono_json(net.coupled_U),
    }


def network_from_dict(data: dict) -> LinearNetwork:
    unknown = set(data) - _TOP_FIELDS
    if unknown:
        raise ScenarioError(f"unknown top-level fields: {sorted(unknown)}")
    if data.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {data.get('version')}")
    subsystems = []
    for idx, sd in enumerate(data.get("subsystems", [])):
        unknown = set(sd) - _SUB_FIELDS
        if unknown:
            raise ScenarioError(
                f"subsystems[{idx}]: unknown fields {sorted(unknown)}")
        try:
            sub = Subsystem(A=sd["A"], B=sd["B"], D=sd["D"],
                            X=sd.get("X"), U=sd.get("U"),
                            name=sd.get("name", f"sub{idx}"))
        except (KeyError, ScenarioError) as e:
            raise ScenarioError(f"subsystems[{idx}]: {e}") from e
        for dim, key in ((sub.n, "n"), (sub.m, "m")):
            if key in sd and sd[key] != dim:
                raise ScenarioError(
                    f"subsystems[{idx}].{key}: declared {sd[key]}, inferred {dim}")
        subsystems.append(sub)
    couplings = []
    for idx, cd in enumerate(data.get("couplings", [])):
        unknown = set(cd) - _COUP_FIELDS
        if unknown:
            raise ScenarioError(
                f"couplings[{idx}]: unknown fields {sorted(unknown)}")
        try:
            couplings.append(Coupling(i=cd["i"], j=cd["j"],
                                      A=cd.get("A"), B=cd.get("B")))
        except (KeyError, ScenarioError) as e:
            raise ScenarioError(f"couplings[{idx}]: {e}") from e
    return LinearNetwork(subsystems, couplings,
                         horizon=data.get("horizon"),
                         coupled_X=data.get("coupled_X"),
                         coupled_U=data.get("coupled_U"))


def save_scenario(net: LinearNetwork, path):
    with open(path, "w") as f:
        json.dump(network_to_dict(net), f, indent=1)


def load_scenario(path) -> LinearNetwork:
    with open(path) as f:
        data = json.load(f)
    return network_from_dict(data)


# ---------------------------------------------------------------------------
# Network generators
# ---------------------------------------------------------------------------

def generate_random_network(count, side=100.0, radius=10.0, lam=0.1,
                            seed=0) -> LinearNetwork:
    """Randomly placed double integrators, coupled when closer than `radius`.

    Each node: A = [[1, 0.2], [0, 1]], B = [0, 0.2]', X = 5*box, U = 5*box,
    D = 0.1*box; coupling gain lam/(1 + dist) * ones(2, 2).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, side, size=(count, 2))
    A = np.array([[1.0, 0.2], [0.0, 1.0]])
    B = np.array([[0.0], [0.2]])
    subs = [Subsystem(A=A, B=B, D=Zonotope([0, 0], 0.1 * np.eye(2)),
                      X=Zonotope([0, 0], 5.0 * np.eye(2)),
                      U=Zonotope([0.0], [[5.0]]), name=f"node{i}")
            for i in range(count)]
    couplings = []
    for i in range(count):
        for j in range(count):
            if i == j:
                continue
            dist = float(np.linalg.norm(pos[i] - pos[j]))
            if dist < radius:
                gain = lam / (1.0 + dist)
                couplings.append(Coupling(i=i, j=j, A=gain * np.ones((2, 2))))
    return LinearNetwork(subs, couplings)


# Load-frequency control constants (per-area dynamics, Euler-discretized).
LFC_DT = 0.1
LFC_KP = 110.0
LFC_KS = 0.5
LFC_TP = 25.0
LFC_EPS = 1e-10
LFC_DPD = 0.01
LFC_UMAX = 0.1


def generate_power_network(areas, topology="complete") -> LinearNetwork:
    """Multi-area load-frequency control network.

    Each area's state is (phase angle deviation, frequency deviation); the
    input is generated power.  ``topology`` is "complete", "ring", or an
    explicit list of undirected edges (i, j).
    """
    if isinstance(topology, str):
        if topology == "complete":
            edges = [(i, j) for i in range(areas) for j in range(i + 1, areas)]
        elif topology == "ring":
            edges = [(i, (i + 1) % areas) for i in range(areas)] \
                if areas > 2 else [(0, 1)]
        else:
            raise ValueError(f"unknown topology {topology!r}")
    else:
        edges = [tuple(e) for e in topology]
    neigh = {i: set() for i in range(areas)}
    for i, j in edges:
        neigh[i].add(j)
        neigh[j].add(i)

    two_pi = 2.0 * math.pi
    off_gain = LFC_DT * LFC_KP * LFC_KS / (two_pi * LFC_TP)
    subs = []
    for i in range(areas):
        ks_sum = LFC_KS * len(neigh[i])
        A = np.array([[1.0, two_pi * LFC_DT],
                      [-LFC_DT * LFC_KP * ks_sum / (two_pi * LFC_TP),
                       1.0 - LFC_DT / LFC_TP]])
        B = np.array([[0.0], [LFC_KP * LFC_DT / LFC_TP]])
        D = Zonotope([0.0, 0.0],
                     np.diag([LFC_EPS, -LFC_DT * LFC_KP * LFC_DPD / LFC_TP]))
        subs.append(Subsystem(A=A, B=B, D=D, U=Zonotope([0.0], [[LFC_UMAX]]),
                              name=f"area{i}"))
    couplings = []
    A_ij = np.array([[0.0, 0.0], [off_gain, 0.0]])
    for i in range(areas):
        for j in sorted(neigh[i]):
            couplings.append(Coupling(i=i, j=j, A=A_ij.copy()))
    return LinearNetwork(subs, couplings)
