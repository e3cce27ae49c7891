"""General flow-and-interference utility maximization problem.

Variables are theta = (r, x, z): flow rates (bps), per-link resource
allocations (Hz) and per-link interference levels (W/Hz). The constraint
vector stacks, in order: resource rows ``A_x x - b_x``, network rows
``A_r r - b_r``, interference coupling ``G x - z`` and link capacity
``E r - C(x, z)``. A point is feasible when every entry is <= 0 and the
point lies in the box [0, bounds].
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .capacity import LinkCapacityModel, capacity_from_dict

ZERO, LOG, CUSTOM = 0, 1, 2


def _as_matrix(a, n_cols):
    """Accept dense or scipy-sparse; empty -> (0, n_cols) dense."""
    if a is None:
        return np.zeros((0, n_cols))
    if sp.issparse(a):
        return sp.csr_array(a)
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("constraint matrix must be 2-D")
    return a


def _matvec(a, v):
    out = a @ v
    return np.asarray(out).ravel()


def _rmatvec(a, v):
    out = a.T @ v
    return np.asarray(out).ravel()


def build_incidence(link_flows, num_flows: int) -> np.ndarray:
    """Dense 0/1 link-by-flow incidence matrix from per-link flow sets."""
    e = np.zeros((len(link_flows), num_flows))
    for l, flows in enumerate(link_flows):
        flows = list(flows)
        if not flows:
            raise ValueError(f"link {l} carries no flows")
        for s in flows:
            if not 0 <= s < num_flows:
                raise ValueError(f"flow index {s} out of range on link {l}")
            e[l, s] = 1.0
    return e


@dataclass(frozen=True)
class FlowGraph:
    """Flow/link topology: which rate components share each wireless link."""

    num_flows: int
    link_flows: tuple
    incidence: object = None  # dense ndarray or scipy sparse, built if None

    def __post_init__(self):
        lf = tuple(tuple(sorted(f)) for f in self.link_flows)
        object.__setattr__(self, "link_flows", lf)
        if self.incidence is None:
            object.__setattr__(self, "incidence", build_incidence(lf, self.num_flows))
        for l, flows in enumerate(lf):
            if not flows:
                raise ValueError(f"link {l} carries no flows")
            if max(flows) >= self.num_flows:
                raise ValueError("flow index out of range")

    @property
    def num_links(self) -> int:
        return len(self.link_flows)


@dataclass(frozen=True)
class ResourceConstraints:
    """Linear rows A x <= b on the resource (bandwidth) vector."""

    a: object
    b: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "b", b)
        if np.any(b < 0):
            raise ValueError("resource bounds must be nonnegative")

    @classmethod
    def empty(cls, n_links: int) -> "ResourceConstraints":
        return cls(np.zeros((0, n_links)), np.zeros(0))

    @property
    def n_rows(self) -> int:
        return self.b.size


@dataclass(frozen=True)
class NetworkConstraints:
    """Linear rows A r <= b on the rate vector (wired-side limits)."""

    a: object
    b: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "b", b)
        a = self.a
        if b.size:
            rows_abs = np.abs(a).sum(axis=1)
            rows_abs = np.asarray(rows_abs).ravel()
            if np.any(rows_abs == 0):
                raise ValueError("all-zero network constraint row")

    @classmethod
    def empty(cls, n_rate: int) -> "NetworkConstraints":
        return cls(np.zeros((0, n_rate)), np.zeros(0))

    @property
    def n_rows(self) -> int:
        return self.b.size


class InterferenceMap:
    """Linear interference mixing z = G x with G >= 0 and no self-coupling.

    Stored either densely or in the factored cellular form
    ``G[l, l'] = W[l, bs(l')]`` for flows served by other base stations,
    which keeps memory at O(L * n_bs).
    """

    def __init__(self, dense=None, factored=None):
        if (dense is None) == (factored is None):
            raise ValueError("exactly one representation required")
        self._g = None
        self._w = None
        if dense is not None:
            g = np.asarray(dense, dtype=float)
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise ValueError("G must be square")
            if np.any(g < 0):
                raise ValueError("G must be nonnegative")
            if np.any(np.diag(g) != 0):
                raise ValueError("a link does not interfere with itself")
            self._g = g
            self.n_links = g.shape[0]
        else:
            w, serving, n_bs = factored
            self._w = np.asarray(w, dtype=float)
            self._serving = np.asarray(serving, dtype=int)
            self._n_bs = int(n_bs)
            if np.any(self._w < 0):
                raise ValueError("gain factors must be nonnegative")
            self.n_links = self._w.shape[0]

    @classmethod
    def from_dense(cls, g) -> "InterferenceMap":
        return cls(dense=g)

    @classmethod
    def from_factored(cls, w, serving_bs, n_bs) -> "InterferenceMap":
        return cls(factored=(w, serving_bs, n_bs))

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._g is not None:
            return self._g @ x
        loads = np.bincount(self._serving, weights=x, minlength=self._n_bs)
        z = self._w @ loads
        z -= self._w[np.arange(self.n_links), self._serving] * loads[self._serving]
        return z

    def apply_t(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self._g is not None:
            return self._g.T @ v
        col = self._w.T @ v
        own = np.bincount(
            self._serving,
            weights=v * self._w[np.arange(self.n_links), self._serving],
            minlength=self._n_bs,
        )
        return (col - own)[self._serving]

    def dense(self) -> np.ndarray:
        if self._g is not None:
            return self._g
        g = self._w[:, self._serving]
        same = self._serving[:, None] == self._serving[None, :]
        g = np.where(same, 0.0, g)
        return g

    def to_dict(self) -> dict:
        if self._g is not None:
            return {"type": "dense", "g": self._g.tolist()}
        return {
            "type": "factored",
            "w": self._w.tolist(),
            "serving_bs": self._serving.tolist(),
            "n_bs": self._n_bs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InterferenceMap":
        if d["type"] == "dense":
            return cls.from_dense(np.asarray(d["g"]))
        return cls.from_factored(np.asarray(d["w"]), np.asarray(d["serving_bs"]), d["n_bs"])


@dataclass(frozen=True)
class UtilitySpec:
    """Per-component utility of the rate vector.

    Components are tagged zero (pure flow variables), log (proportional
    fair, evaluated at max(r, floor)) or custom (arbitrary nondecreasing
    callable).
    """

    kinds: np.ndarray
    floors: np.ndarray
    customs: tuple = None

    def __post_init__(self):
        kinds = np.asarray(self.kinds, dtype=np.int8)
        floors = np.asarray(self.floors, dtype=float)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "floors", floors)
        if self.customs is None:
            object.__setattr__(self, "customs", (None,) * kinds.size)
        if np.any((kinds == LOG) & (floors <= 0)):
            raise ValueError("log components need a positive rate floor")

    @classmethod
    def all_zero(cls, n: int) -> "UtilitySpec":
        return cls(np.full(n, ZERO), np.zeros(n))

    @classmethod
    def all_log(cls, n: int, floor: float) -> "UtilitySpec":
        return cls(np.full(n, LOG), np.full(n, floor))

    @classmethod
    def log_then_zero(cls, n_log: int, n_zero: int, floor: float) -> "UtilitySpec":
        kinds = np.concatenate([np.full(n_log, LOG), np.full(n_zero, ZERO)])
        floors = np.concatenate([np.full(n_log, floor), np.zeros(n_zero)])
        return cls(kinds, floors)

    @property
    def n(self) -> int:
        return self.kinds.size

    def evaluate(self, r) -> float:
        r = np.asarray(r, dtype=float)
        total = 0.0
        log_mask = self.kinds == LOG
        if np.any(log_mask):
            total += float(np.sum(np.log(np.maximum(r[log_mask], self.floors[log_mask]))))
        for s in np.nonzero(self.kinds == CUSTOM)[0]:
            total += float(self.customs[s](r[s]))
        return total

    def component_value(self, s: int, r: float) -> float:
        k = self.kinds[s]
        if k == ZERO:
            return 0.0
        if k == LOG:
            return float(np.log(max(r, self.floors[s])))
        return float(self.customs[s](r))

    def to_dict(self) -> dict:
        if np.any(self.kinds == CUSTOM):
            raise ValueError("custom utilities are not serializable")
        return {"kinds": self.kinds.tolist(), "floors": self.floors.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "UtilitySpec":
        return cls(np.asarray(d["kinds"]), np.asarray(d["floors"]))


@dataclass(frozen=True)
class Bounds:
    """Elementwise upper bounds on (r, x, z).

    Entries are finite and nonnegative; a zero bound pins the coordinate
    at 0 (used for interference-free links and for clamping flows during
    restricted re-optimization).
    """

    r: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("r", "x", "z"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if v.size and (not np.all(np.isfinite(v)) or np.any(v < 0)):
                raise ValueError(f"{name} bounds must be finite and nonnegative")


@dataclass(frozen=True)
class DecisionPoint:
    """One value of the decision vector theta = (r, x, z)."""

    r: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("r", "x", "z"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if v.size and not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def zeros(cls, inst: "ProblemInstance") -> "DecisionPoint":
        return cls(np.zeros(inst.n_rate), np.zeros(inst.n_links), np.zeros(inst.n_z))

    def in_box(self, bounds: Bounds) -> bool:
        for v, ub in ((self.r, bounds.r), (self.x, bounds.x), (self.z, bounds.z)):
            if v.size and (np.any(v < 0) or np.any(v > ub)):
                return False
        return True


@dataclass(frozen=True)
class ProblemInstance:
    """Complete constrained program: topology, constraints, capacity, utility.

    ``interference`` is None when the interference level is frozen into the
    capacity model and z is not a decision variable.
    """

    flows: FlowGraph
    resources: ResourceConstraints
    network: NetworkConstraints
    interference: InterferenceMap | None
    capacity: LinkCapacityModel
    utility: UtilitySpec
    bounds: Bounds

    def __post_init__(self):
        s, l = self.flows.num_flows, self.flows.num_links
        if self.capacity.n_links != l:
            raise ValueError("capacity model size mismatch")
        if self.utility.n != s:
            raise ValueError("utility size mismatch")
        if self.resources.a.shape[1] != l:
            raise ValueError("A_x column count must equal number of links")
        if self.network.a.shape[1] != s:
            raise ValueError("A_r column count must equal rate dimension")
        if self.interference is not None and self.interference.n_links != l:
            raise ValueError("interference map size mismatch")
        if self.bounds.r.size != s or self.bounds.x.size != l:
            raise ValueError("bounds size mismatch")
        if self.bounds.z.size != self.n_z:
            raise ValueError("z bounds size mismatch")

    @property
    def n_rate(self) -> int:
        return self.flows.num_flows

    @property
    def n_links(self) -> int:
        return self.flows.num_links

    @property
    def n_z(self) -> int:
        return self.flows.num_links if self.interference is not None else 0

    def with_bounds(self, bounds: Bounds) -> "ProblemInstance":
        return replace(self, bounds=bounds)

    def constraint_block_sizes(self) -> tuple:
        return (self.resources.n_rows, self.network.n_rows, self.n_z, self.n_links)


def evaluate_constraints(inst: ProblemInstance, point: DecisionPoint) -> np.ndarray:
    """Stacked constraint vector g(theta); feasible iff every entry <= 0."""
    r, x, z = point.r, point.x, point.z
    if r.size != inst.n_rate or x.size != inst.n_links or z.size != inst.n_z:
        raise ValueError("decision point dimensions do not match instance")
    blocks = [
        _matvec(inst.resources.a, x) - inst.resources.b,
        _matvec(inst.network.a, r) - inst.network.b,
    ]
    if inst.interference is not None:
        blocks.append(inst.interference.apply(x) - z)
        cap = inst.capacity.capacity(x, z)
    else:
        cap = inst.capacity.capacity(x)
    blocks.append(_matvec(inst.flows.incidence, r) - cap)
    return np.concatenate(blocks)


def evaluate_utility(inst: ProblemInstance, point: DecisionPoint) -> float:
    """Total utility of the rate vector (log components floored)."""
    if point.r.size != inst.n_rate:
        raise ValueError("rate dimension mismatch")
    return inst.utility.evaluate(point.r)


def is_feasible(inst: ProblemInstance, point: DecisionPoint, tol: float = 1e-9) -> bool:
    """Constraint satisfaction within tol plus exact box membership."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if not point.in_box(inst.bounds):
        return False
    g = evaluate_constraints(inst, point)
    return bool(g.size == 0 or np.max(g) <= tol)


def _matrix_to_jsonable(a):
    if sp.issparse(a):
        a = a.toarray()
    return np.asarray(a).tolist()


def instance_to_dict(inst: ProblemInstance) -> dict:
    """JSON-ready dict with dense matrices (test-fixture scale)."""
    return {
        "flow_graph": {
            "num_flows": inst.flows.num_flows,
            "link_flows": [list(f) for f in inst.flows.link_flows],
        },
        "resources": {"a": _matrix_to_jsonable(inst.resources.a), "b": inst.resources.b.tolist()},
        "network": {"a": _matrix_to_jsonable(inst.network.a), "b": inst.network.b.tolist()},
        "interference": None if inst.interference is None else inst.interference.to_dict(),
        "capacity": inst.capacity.to_dict(),
        "utility": inst.utility.to_dict(),
        "bounds": {
            "r": inst.bounds.r.tolist(),
            "x": inst.bounds.x.tolist(),
            "z": inst.bounds.z.tolist(),
        },
    }


def instance_from_dict(d: dict) -> ProblemInstance:
    fg = FlowGraph(d["flow_graph"]["num_flows"], tuple(map(tuple, d["flow_graph"]["link_flows"])))
    n_links = fg.num_links
    res = d["resources"]
    net = d["network"]
    imap = None if d["interference"] is None else InterferenceMap.from_dict(d["interference"])
    return ProblemInstance(
        flows=fg,
        resources=ResourceConstraints(np.asarray(res["a"]).reshape(-1, n_links), np.asarray(res["b"])),
        network=NetworkConstraints(np.asarray(net["a"]).reshape(-1, fg.num_flows), np.asarray(net["b"])),
        interference=imap,
        capacity=capacity_from_dict(d["capacity"]),
        utility=UtilitySpec.from_dict(d["utility"]),
        bounds=Bounds(
            np.asarray(d["bounds"]["r"]), np.asarray(d["bounds"]["x"]), np.asarray(d["bounds"]["z"])
        ),
    )
