"""Priority graphs and the two safety predicates built on them.

A priority graph has an edge ``(w, l)`` when robot ``w`` passes the shared
conflict region before robot ``l``.  A configuration is *free* for a graph
when no edge's shifted section contains it, and a joint state is *brake
safe* when the all-brake flow from it stays free forever.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from itertools import chain
from typing import Iterable, Mapping

import numpy as np

from . import _kernels as K
from .dynamics import ContractError, Kinodynamics, RobotState
from .geometry import (
    CROSSING,
    DISJOINT,
    EPS_GEOM,
    SAME_PATH,
    Footprint,
    PairSection,
    PathSpec,
    in_shifted_obstacle,
    pair_section,
)

#: Threshold inflation used by the control law and the entry test.  It is
#: larger than EPS_GEOM so states the law certifies keep a margin under the
#: monitors' predicate.
EPS_LAW = 2.0 * EPS_GEOM

N_SUB = 16


@dataclass(frozen=True)
class PriorityGraph:
    vertices: frozenset = frozenset()
    edges: frozenset = frozenset()

    def __post_init__(self):
        for w, l in self.edges:
            if w == l:
                raise ContractError(f"self edge on {w}")
            if (l, w) in self.edges:
                raise ContractError(f"both orientations present for {w}, {l}")
            if w not in self.vertices or l not in self.vertices:
                raise ContractError(f"edge ({w}, {l}) touches a missing vertex")

    def in_edges(self, v) -> list:
        return [e for e in self.edges if e[1] == v]

    def sorted_edges(self) -> list[tuple]:
        return sorted(self.edges)

    def is_acyclic(self) -> bool:
        ts = TopologicalSorter({v: set() for v in self.vertices})
        for w, l in self.edges:
            ts.add(l, w)
        try:
            ts.prepare()
        except CycleError:
            return False
        return True


class WorldModel:
    """Paths, footprint and per-robot data with a precomputed section cache.

    Sections only depend on the pair of paths, so the cache is keyed by
    path ids; robot pairs look up their paths' section.
    """

    def __init__(self, paths: Iterable[PathSpec], footprint: Footprint):
        self.paths = {p.id: p for p in paths}
        self.footprint = footprint
        self.robot_path: dict[int, str] = {}
        self.robot_kin: dict[int, Kinodynamics] = {}
        self._sections: dict[tuple[str, str], PairSection] = {}
        for pi in self.paths.values():
            for pj in self.paths.values():
                self._sections[pi.id, pj.id] = pair_section(pi, pj, footprint)
        self._params: dict[tuple[str, str, float], tuple] = {}
        self._tables: dict[float, tuple] = {}

    def add_robot(self, rid: int, path_id: str, kin: Kinodynamics) -> None:
        if path_id not in self.paths:
            raise ContractError(f"unknown path {path_id}")
        self.robot_path[rid] = path_id
        self.robot_kin[rid] = kin

    def remove_robot(self, rid: int) -> None:
        self.robot_path.pop(rid, None)
        self.robot_kin.pop(rid, None)

    def path_section(self, path_i: str, path_j: str) -> PairSection:
        return self._sections[path_i, path_j]

    def section(self, i: int, j: int) -> PairSection:
        """Section of robots ``i`` and ``j`` oriented as ``(x_i, x_j)``."""
        return self._sections[self.robot_path[i], self.robot_path[j]]

    def conflicts(self, i: int, j: int) -> bool:
        return not self.section(i, j).empty

    def edge_params(self, path_w: str, path_l: str, eps: float) -> tuple:
        """Kernel parameters ``(kind, c_w, c_l, cos, hi_w, lo_l, thr)`` for an edge."""
        key = (path_w, path_l, eps)
        p = self._params.get(key)
        if p is None:
            p = _edge_params(self._sections[path_w, path_l], eps)
            self._params[key] = p
        return p

    def param_table(self, eps: float) -> tuple[dict, np.ndarray, np.ndarray]:
        """Edge parameters for every ordered path pair, for vectorised lookup.

        Returns ``(path_index, kinds, values)`` where ``kinds[i, j]`` is the
        kernel section kind (-1 for disjoint pairs) and ``values[i, j]`` holds
        ``(c_w, c_l, cos, hi_w, lo_l, thr)``.
        """
        tab = self._tables.get(eps)
        if tab is None:
            ids = list(self.paths)
            index = {p: k for k, p in enumerate(ids)}
            kinds = np.full((len(ids), len(ids)), -1, dtype=np.int64)
            values = np.full((len(ids), len(ids), 6), np.nan)
            for a in ids:
                for b in ids:
                    if self._sections[a, b].kind != DISJOINT:
                        row = self.edge_params(a, b, eps)
                        kinds[index[a], index[b]] = row[0]
                        values[index[a], index[b]] = row[1:]
            tab = (index, kinds, values)
            self._tables[eps] = tab
        return tab


def _edge_params(sec: PairSection, eps: float) -> tuple:
    D = sec.diameter
    if sec.kind == SAME_PATH:
        return (K.SAME_PATH, 0.0, 0.0, 0.0, math.inf, -math.inf, D + eps)
    if sec.kind == DISJOINT:
        raise ContractError("no edge may join robots whose section is empty")
    thr = D * D + eps
    h = math.sqrt(thr / (1.0 - sec.cos * sec.cos))
    return (K.CROSSING, sec.c_i, sec.c_j, sec.cos, sec.c_i + h, sec.c_j - h, thr)


@dataclass
class EdgeTable:
    """Edges as index arrays into a robot ordering, plus per-edge section data."""

    ew: np.ndarray
    el: np.ndarray
    kind: np.ndarray
    cw: np.ndarray
    cl: np.ndarray
    cs: np.ndarray
    hi_w: np.ndarray
    lo_l: np.ndarray
    thr: np.ndarray

    def args(self) -> tuple:
        return (self.ew, self.el, self.kind, self.cw, self.cl, self.cs, self.hi_w, self.lo_l, self.thr)

    def __len__(self):
        return self.ew.shape[0]


def edge_table(
    edges, index: Mapping[int, int], world: WorldModel, eps: float, robot_path: Mapping[int, str] | None = None
) -> EdgeTable:
    """Edge arrays for ``edges`` with robots numbered by ``index``.

    ``robot_path`` defaults to the world's robot registry.
    """
    rp = world.robot_path if robot_path is None else robot_path
    pidx, kinds, values = world.param_table(eps)
    n = len(edges)
    if n == 0:
        z = np.zeros(0)
        return EdgeTable(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64), z, z, z, z, z, z)
    verts = sorted(index)
    keys = np.array(verts)
    slot_of = np.array([index[r] for r in verts], dtype=np.int64)
    path_of = np.array([pidx[rp[r]] for r in verts], dtype=np.int64)
    flat = np.fromiter(chain.from_iterable(edges), dtype=keys.dtype, count=2 * n).reshape(n, 2)
    pos = np.searchsorted(keys, flat)
    if not (keys[np.minimum(pos, keys.shape[0] - 1)] == flat).all():
        raise ContractError("edge endpoint missing from the robot index")
    ew = slot_of[pos[:, 0]]
    el = slot_of[pos[:, 1]]
    pw = path_of[pos[:, 0]]
    pl = path_of[pos[:, 1]]
    kind = kinds[pw, pl]
    if (kind < 0).any():
        raise ContractError("no edge may join robots whose section is empty")
    vals = values[pw, pl]
    return EdgeTable(ew, el, kind, *(np.ascontiguousarray(vals[:, c]) for c in range(6)))


@dataclass
class Snapshot:
    """Robots of a graph in sorted-id order with kinodynamic arrays and edges."""

    ids: list
    b: np.ndarray
    a: np.ndarray
    vm: np.ndarray
    table: EdgeTable
    index: dict = field(default_factory=dict)
    edges: list = field(default_factory=list)  # sorted (w, l) pairs matching the table rows

    @classmethod
    def build(cls, graph: PriorityGraph, world: WorldModel, eps: float) -> "Snapshot":
        ids = sorted(graph.vertices)
        index = {r: k for k, r in enumerate(ids)}
        kins = [world.robot_kin[r] for r in ids]
        b = np.array([k.brake for k in kins], dtype=float)
        a = np.array([k.u_max for k in kins], dtype=float)
        vm = np.array([k.v_max for k in kins], dtype=float)
        edges = graph.sorted_edges()
        table = edge_table(edges, index, world, eps)
        return cls(ids, b, a, vm, table, index, edges)

    def arrays(self, s: Mapping[int, RobotState]) -> tuple[np.ndarray, np.ndarray]:
        try:
            x = np.array([s[r].x for r in self.ids], dtype=float)
            v = np.array([s[r].v for r in self.ids], dtype=float)
        except KeyError as exc:
            raise ContractError(f"state is missing robot {exc.args[0]}") from None
        return x, v


def add_lowest_priority(g: PriorityGraph, newcomer, world: WorldModel) -> PriorityGraph:
    if newcomer in g.vertices:
        raise ContractError(f"robot {newcomer} is already in the graph")
    new_edges = {(j, newcomer) for j in g.vertices if world.conflicts(j, newcomer)}
    out = PriorityGraph(g.vertices | {newcomer}, g.edges | new_edges)
    # A new sink cannot close a cycle, so checking that every new edge ends at
    # the newcomer certifies acyclicity without a full topological sort.
    if any(l != newcomer for _, l in new_edges):
        raise ContractError("priority graph became cyclic")
    return out


def remove_vertex(g: PriorityGraph, rid) -> PriorityGraph:
    if rid not in g.vertices:
        raise ContractError(f"robot {rid} is not in the graph")
    return PriorityGraph(g.vertices - {rid}, frozenset(e for e in g.edges if rid not in e))


def config_free(cfg: Mapping[int, float], g: PriorityGraph, world: WorldModel, eps: float = EPS_GEOM) -> bool:
    for w, l in g.edges:
        if in_shifted_obstacle(world.section(w, l), 0, 1, cfg[w], cfg[l], eps):
            return False
    return True


def first_brake_violation(
    s: Mapping[int, RobotState],
    g: PriorityGraph,
    world: WorldModel,
    nsub: int = N_SUB,
    eps: float = EPS_GEOM,
    snapshot: Snapshot | None = None,
):
    """The first edge whose all-brake flow enters its shifted section, or None."""
    snap = snapshot or Snapshot.build(g, world, eps)
    if len(snap.table) == 0:
        return None
    x, v = snap.arrays(s)
    e = K.first_unsafe_edge(x, v, snap.b, snap.a, snap.vm, *snap.table.args(), nsub)
    if e < 0:
        return None
    t = snap.table
    return snap.ids[t.ew[e]], snap.ids[t.el[e]]


def is_brake_safe(
    s: Mapping[int, RobotState],
    g: PriorityGraph,
    world: WorldModel,
    nsub: int = N_SUB,
    eps: float = EPS_GEOM,
) -> bool:
    """True iff maximum braking by everyone keeps the configuration free forever.

    The flow is followed until every robot of each edge is at rest; the
    rest configuration is included.
    """
    return first_brake_violation(s, g, world, nsub, eps) is None
