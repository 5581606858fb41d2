"""Static scenario: nodes, lossy links, hyperarcs, conflict cliques, routes and
the catalog of network codes that the solver and the simulator may use.

Everything here is immutable after construction and safe to share across
solver and simulator runs.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np


class TopologyError(ValueError):
    """Raised for scenarios that cannot be turned into a valid hypergraph."""


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    capacity: float
    success_prob: float = 1.0

    def __post_init__(self):
        if self.src == self.dst:
            raise TopologyError(f"self-link at node {self.src}")
        if not self.capacity > 0:
            raise TopologyError(f"link {self.src}->{self.dst} has non-positive capacity")
        if not 0 < self.success_prob <= 1:
            raise TopologyError(f"link {self.src}->{self.dst}: success_prob must be in (0, 1]")

    @property
    def effective_rate(self) -> float:
        return self.capacity * self.success_prob


@dataclass(frozen=True)
class Flow:
    id: int
    source: int
    dest: int
    path: tuple[int, ...]
    utility: str = "log"
    start_time: float | None = None

    def __post_init__(self):
        if len(self.path) < 2 or self.path[0] != self.source or self.path[-1] != self.dest:
            raise TopologyError(f"flow {self.id}: path must run from source to dest")
        if len(set(self.path)) != len(self.path):
            raise TopologyError(f"flow {self.id}: path repeats a node")
        if self.utility != "log":
            raise TopologyError(f"flow {self.id}: only log utility is supported")

    def next_hop(self, node: int) -> int | None:
        i = self.path.index(node)
        return self.path[i + 1] if i + 1 < len(self.path) else None

    def prev_hop(self, node: int) -> int | None:
        i = self.path.index(node)
        return self.path[i - 1] if i > 0 else None

    @property
    def hops(self) -> list[tuple[int, int]]:
        return list(zip(self.path[:-1], self.path[1:]))


@dataclass(frozen=True)
class Hyperarc:
    id: int
    origin: int
    targets: frozenset[int]
    member_links: tuple[int, ...]
    rate: float

    @property
    def nodes(self) -> frozenset[int]:
        return self.targets | {self.origin}


@dataclass(frozen=True)
class ConflictGraph:
    vertices: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    cliques: tuple[frozenset[int], ...]

    def conflicts(self, a: int, b: int) -> bool:
        return a == b or (min(a, b), max(a, b)) in self.edges


@dataclass
class Network:
    """Nodes, directed links and the symmetric in-range relation."""

    names: list[str]
    links: list[Link]
    in_range: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.names)
        self.in_range = np.asarray(self.in_range, dtype=bool)
        if self.in_range.shape != (n, n):
            raise TopologyError("in-range relation must be an n x n matrix")
        np.fill_diagonal(self.in_range, False)
        self._link_index = {}
        for idx, link in enumerate(self.links):
            for end in (link.src, link.dst):
                if not 0 <= end < n:
                    raise TopologyError(f"link references unknown node {end}")
            if (link.src, link.dst) in self._link_index:
                raise TopologyError(f"duplicate link {link.src}->{link.dst}")
            self._link_index[(link.src, link.dst)] = idx

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    def link_id(self, src: int, dst: int) -> int | None:
        return self._link_index.get((src, dst))

    def link(self, src: int, dst: int) -> Link:
        idx = self.link_id(src, dst)
        if idx is None:
            raise TopologyError(f"no link {self.names[src]}->{self.names[dst]}")
        return self.links[idx]

    def neighbors(self, node: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.in_range[node])]

    def node_id(self, ref) -> int:
        if isinstance(ref, (int, np.integer)):
            return int(ref)
        try:
            return self.names.index(ref)
        except ValueError:
            raise TopologyError(f"unknown node {ref!r}") from None


@dataclass(frozen=True)
class Code:
    """One network code over a hyperarc: the set of flows XOR-ed together.

    ``hops`` is 1 for codes decoded at the hyperarc targets (COPE style) and 2
    for butterfly codes relayed coded through a single next hop and decoded
    one hop further on.
    """

    id: int
    hyperarc: int
    flows: frozenset[int]
    hops: int = 1


@dataclass(frozen=True)
class Partition:
    """A part of a flow on one coding path; ``entries`` are (hyperarc, code) pairs."""

    entries: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class CodingPath:
    nodes: tuple[int, ...]
    partitions: tuple[Partition, ...]


@dataclass
class CodeCatalog:
    codes: list[Code]
    nc_paths: dict[int, list[CodingPath]]
    depth: int
    by_hyperarc: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        self.by_hyperarc = {}
        for code in self.codes:
            self.by_hyperarc.setdefault(code.hyperarc, []).append(code.id)

    def indicator(self, hyperarc: int, flow: int, code: int) -> int:
        """H_h^{s,k}: 1 when flow uses code ``code`` over ``hyperarc``."""
        for path in self.nc_paths.get(flow, ()):
            for part in path.partitions:
                if (hyperarc, code) in part.entries:
                    return 1
        return 0

    def entries(self) -> list[tuple[int, int, int]]:
        """All (flow, hyperarc, code) triples with H = 1."""
        out = []
        for flow, paths in sorted(self.nc_paths.items()):
            for path in paths:
                for part in path.partitions:
                    for h, k in part.entries:
                        out.append((flow, h, k))
        return out


@dataclass
class Hypergraph:
    network: Network
    flows: list[Flow]
    hyperarcs: list[Hyperarc]
    conflict: ConflictGraph
    overprovision: float = 1.0

    def __post_init__(self):
        self._by_key = {(h.origin, h.targets): h.id for h in self.hyperarcs}

    def hyperarc_id(self, origin: int, targets: Iterable[int]) -> int | None:
        return self._by_key.get((origin, frozenset(targets)))

    @property
    def rates(self) -> np.ndarray:
        return np.array([h.rate for h in self.hyperarcs], dtype=float)

    @property
    def cliques(self) -> tuple[frozenset[int], ...]:
        return self.conflict.cliques


@dataclass
class Scenario:
    """Everything needed to build a problem or run the simulator."""

    name: str
    network: Network
    flows: list[Flow]
    coding_depth: int = 1
    bitrate: float = 1e6
    overhear_success_prob: float | None = None
    overprovision: float = 1.0

    def build(self, coding_depth: int | None = None) -> tuple[Hypergraph, CodeCatalog]:
        depth = self.coding_depth if coding_depth is None else coding_depth
        structures = enumerate_code_structures(self.network, self.flows, depth)
        demand = {(c.origin, c.targets) for c in structures}
        for c in structures:
            if c.hops == 2:
                (relay,) = c.targets
                demand.add((relay, c.decode_targets))
        hg = build_hypergraph(self.network, self.flows, demand, overprovision=self.overprovision)
        catalog = build_code_catalog(self.flows, hg, depth, structures=structures)
        return hg, catalog

    def with_flows(self, flows: Sequence[Flow]) -> "Scenario":
        return Scenario(self.name, self.network, list(flows), self.coding_depth, self.bitrate,
                        self.overhear_success_prob, self.overprovision)


# --------------------------------------------------------------------------
# hypergraph and conflicts


def _hyperarc_conflict(net: Network, a: Hyperarc, b: Hyperarc) -> bool:
    if a.nodes & b.nodes:
        return True
    return bool(net.in_range[np.ix_(sorted(a.nodes), sorted(b.nodes))].any())


def build_hypergraph(network: Network, flows: Sequence[Flow],
                     demand: Iterable[tuple[int, frozenset[int]]] = (),
                     overprovision: float = 1.0) -> Hypergraph:
    """Enumerate the singleton hyperarcs along every flow hop plus the
    demanded multi-target ones, then build the protocol-model conflict graph."""
    keys: dict[tuple[int, frozenset[int]], None] = {}
    for flow in flows:
        for u, v in flow.hops:
            if network.link_id(u, v) is None:
                raise TopologyError(
                    f"flow {flow.id}: no link {network.names[u]}->{network.names[v]} on its path")
            keys[(u, frozenset([v]))] = None
    for origin, targets in sorted(demand, key=lambda d: (d[0], len(d[1]), sorted(d[1]))):
        keys[(origin, frozenset(targets))] = None

    hyperarcs = []
    for hid, (origin, targets) in enumerate(keys):
        members = []
        for t in sorted(targets):
            lid = network.link_id(origin, t)
            if lid is None:
                raise TopologyError(f"hyperarc from {network.names[origin]} needs a link to "
                                    f"{network.names[t]}")
            members.append(lid)
        rate = min(network.links[l].effective_rate for l in members)
        hyperarcs.append(Hyperarc(hid, origin, targets, tuple(members), rate))

    edges = set()
    for a, b in itertools.combinations(hyperarcs, 2):
        if _hyperarc_conflict(network, a, b):
            edges.add((a.id, b.id))
    vertices = tuple(h.id for h in hyperarcs)
    cliques = enumerate_cliques(vertices, edges)
    conflict = ConflictGraph(vertices, frozenset(edges), tuple(cliques))
    return Hypergraph(network, list(flows), hyperarcs, conflict, overprovision)


def enumerate_cliques(vertices: Iterable[int], edges: Iterable[tuple[int, int]]) -> list[frozenset[int]]:
    """All maximal cliques, sorted by their smallest members for determinism."""
    g = nx.Graph()
    g.add_nodes_from(vertices)
    g.add_edges_from(edges)
    cliques = [frozenset(c) for c in nx.find_cliques(g)]
    return sorted(cliques, key=lambda c: sorted(c))


# --------------------------------------------------------------------------
# code catalog


@dataclass(frozen=True)
class CodeStructure:
    origin: int
    targets: frozenset[int]
    flows: frozenset[int]
    hops: int
    decode_targets: frozenset[int] = frozenset()


def _knowers(network: Network, flow: Flow, at: int) -> set[int]:
    """Nodes that hold a packet of ``flow`` by the time it sits at ``at``:
    every node that carried it so far plus everyone in range of a transmitter."""
    upto = flow.path[: flow.path.index(at) + 1]
    known = set(upto)
    for tx in upto[:-1]:
        known.update(network.neighbors(tx))
    return known


def _decodable(network: Network, flows: Mapping[int, Flow], members: Sequence[int],
               at: int, decode_nodes: Mapping[int, int]) -> bool:
    for s in members:
        j = decode_nodes[s]
        for other in members:
            if other != s and j not in _knowers(network, flows[other], at):
                return False
    return True


def enumerate_code_structures(network: Network, flows: Sequence[Flow], depth: int) -> list[CodeStructure]:
    if depth not in (0, 1, 2):
        raise TopologyError("coding depth must be 0, 1 or 2")
    if depth > 0 and not network.in_range.any():
        raise TopologyError("network coding requested but no overhearing relation declared")
    by_id = {f.id: f for f in flows}
    out: list[CodeStructure] = []
    if depth == 0:
        return out
    relays: dict[int, list[int]] = {}
    for f in flows:
        for node in f.path[1:-1]:
            relays.setdefault(node, []).append(f.id)
    for node in sorted(relays):
        members = sorted(relays[node])
        nxt = {s: by_id[s].next_hop(node) for s in members}
        for size in range(2, len(members) + 1):
            for combo in itertools.combinations(members, size):
                targets = frozenset(nxt[s] for s in combo)
                if len(targets) != size:
                    continue
                if not all(network.link_id(node, t) is not None for t in targets):
                    continue
                if _decodable(network, by_id, combo, node, nxt):
                    out.append(CodeStructure(node, targets, frozenset(combo), 1))
    if depth == 2:
        out.extend(_butterfly_structures(network, by_id, relays))
    return out


def _butterfly_structures(network: Network, by_id: Mapping[int, Flow],
                          relays: Mapping[int, list[int]]) -> list[CodeStructure]:
    """Pairs of flows sharing a two-hop segment i -> j and then diverging,
    where each flow's node after j already knows the other flow's packet."""
    out = []
    for node in sorted(relays):
        for s, t in itertools.combinations(sorted(relays[node]), 2):
            fs, ft = by_id[s], by_id[t]
            j = fs.next_hop(node)
            if j is None or j != ft.next_hop(node) or j in (fs.dest, ft.dest):
                continue
            a, b = fs.next_hop(j), ft.next_hop(j)
            if a == b:
                continue
            if a in _knowers(network, ft, node) and b in _knowers(network, fs, node):
                out.append(CodeStructure(node, frozenset([j]), frozenset([s, t]), 2, frozenset([a, b])))
    return out


def build_code_catalog(flows: Sequence[Flow], hypergraph: Hypergraph, coding_depth: int,
                       structures: Sequence[CodeStructure] | None = None) -> CodeCatalog:
    """Bind code structures to hyperarcs and lay out each flow's coding paths.

    One-hop catalogs give every flow hop its own coding path whose partitions
    are the individual codes usable on that hop. Two-hop catalogs replace the
    segment covered by a butterfly with a single coding path holding a coded
    and an uncoded partition.
    """
    net = hypergraph.network
    if structures is None:
        structures = enumerate_code_structures(net, flows, coding_depth)
    codes: list[Code] = []
    code_key: dict[tuple[int, frozenset[int], int], int] = {}

    def add_code(h: int, members: frozenset[int], hops: int) -> int:
        key = (h, members, hops)
        if key not in code_key:
            code_key[key] = len(codes)
            codes.append(Code(len(codes), h, members, hops))
        return code_key[key]

    def arc(origin: int, targets: Iterable[int]) -> int:
        hid = hypergraph.hyperarc_id(origin, targets)
        if hid is None:
            raise TopologyError("code references a hyperarc absent from the hypergraph")
        return hid

    # singleton codes first so that code ids are stable across depths
    for f in flows:
        for u, v in f.hops:
            add_code(arc(u, [v]), frozenset([f.id]), 1)
    one_hop: dict[tuple[int, int], list[int]] = {}
    butterflies: dict[int, list[CodeStructure]] = {}
    for st in structures:
        if st.hops == 1:
            k = add_code(arc(st.origin, st.targets), st.flows, 1)
            for s in st.flows:
                one_hop.setdefault((s, st.origin), []).append(k)
        else:
            add_code(arc(st.origin, st.targets), st.flows, 2)
            for s in st.flows:
                butterflies.setdefault(s, []).append(st)

    nc_paths: dict[int, list[CodingPath]] = {}
    for f in flows:
        paths = []
        idx = 0
        hops = f.hops
        while idx < len(hops):
            u, v = hops[idx]
            bf = [b for b in butterflies.get(f.id, []) if b.origin == u]
            if bf and idx + 1 < len(hops):
                w = hops[idx + 1][1]
                single_uv = code_key[(arc(u, [v]), frozenset([f.id]), 1)]
                single_vw = code_key[(arc(v, [w]), frozenset([f.id]), 1)]
                parts = [Partition(((arc(u, [v]), single_uv), (arc(v, [w]), single_vw)))]
                for b in bf:
                    (other,) = b.flows - {f.id}
                    w_other = next(g for g in flows if g.id == other).next_hop(v)
                    relay_h = arc(u, [v])
                    bcast_h = hypergraph.hyperarc_id(v, [w, w_other])
                    if bcast_h is None:
                        continue
                    k_relay = code_key[(relay_h, b.flows, 2)]
                    k_bcast = add_code(bcast_h, b.flows, 1)
                    parts.append(Partition(((relay_h, k_relay), (bcast_h, k_bcast))))
                paths.append(CodingPath((u, v, w), tuple(parts)))
                idx += 2
                continue
            single = code_key[(arc(u, [v]), frozenset([f.id]), 1)]
            parts = [Partition(((arc(u, [v]), single),))]
            for k in one_hop.get((f.id, u), []):
                parts.append(Partition(((codes[k].hyperarc, k),)))
            paths.append(CodingPath((u, v), tuple(parts)))
            idx += 1
        nc_paths[f.id] = paths
    return CodeCatalog(codes, nc_paths, coding_depth)


# --------------------------------------------------------------------------
# scenario construction and I/O

DEFAULT_RANGE = 250.0


def range_from_positions(positions: np.ndarray, radius: float) -> np.ndarray:
    pos = np.asarray(positions, dtype=float)
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    adj = d <= radius
    np.fill_diagonal(adj, False)
    return adj


def _make_scenario(name: str, names: list[str], positions: list[tuple[float, float]],
                   link_caps: Mapping[tuple[str, str], float], flow_paths: Sequence[Sequence[str]],
                   success_prob: float, coding_depth: int, radius: float = DEFAULT_RANGE,
                   bitrate: float = 1e6, start_times: Sequence[float] | None = None) -> Scenario:
    idx = {n: i for i, n in enumerate(names)}
    links = [Link(idx[a], idx[b], cap, success_prob) for (a, b), cap in link_caps.items()]
    pos = np.array(positions, dtype=float)
    net = Network(list(names), links, range_from_positions(pos, radius), pos)
    flows = []
    for fid, p in enumerate(flow_paths):
        path = tuple(idx[n] for n in p)
        st = None if start_times is None else start_times[fid]
        flows.append(Flow(fid, path[0], path[-1], path, start_time=st))
    return Scenario(name, net, flows, coding_depth, bitrate)


def _circle(n: int, radius: float = 90.0, center=(100.0, 100.0), offset: float = 0.0):
    return [(center[0] + radius * math.cos(offset + 2 * math.pi * k / n),
             center[1] + radius * math.sin(offset + 2 * math.pi * k / n)) for k in range(n)]


def _bidir(pairs: Mapping[tuple[str, str], float]) -> dict[tuple[str, str], float]:
    out = {}
    for (a, b), c in pairs.items():
        out[(a, b)] = c
        out[(b, a)] = c
    return out


def alice_bob(c1: float = 1.0, c2: float = 1.0, success_prob: float = 1.0,
              coding_depth: int = 1, **kw) -> Scenario:
    """A1 <-> I <-> A2; C1 is the A1-I link, C2 the A2-I link (both directions)."""
    names = ["A1", "I", "A2"]
    pos = [(10.0, 100.0), (100.0, 100.0), (190.0, 100.0)]
    caps = _bidir({("A1", "I"): c1, ("A2", "I"): c2})
    return _make_scenario("alice-bob", names, pos, caps, [["A1", "I", "A2"], ["A2", "I", "A1"]],
                          success_prob, coding_depth, **kw)


def x_topology(c1: float = 1.0, c2: float = 1.0, c3: float = 1.0, c4: float = 1.0,
               success_prob: float = 1.0, coding_depth: int = 1, **kw) -> Scenario:
    """Flows A1 -> I -> A2 and B1 -> I -> B2.

    Capacity labels: C1 = I-A2, C2 = A1-I, C3 = B1-I, C4 = I-B2.
    """
    names = ["A1", "B1", "I", "A2", "B2"]
    c = _circle(4, offset=math.pi / 4)
    # A1 top-left, B1 top-right, A2 bottom-right, B2 bottom-left
    pos = [c[1], c[0], (100.0, 100.0), c[3], c[2]]
    caps = _bidir({("I", "A2"): c1, ("A1", "I"): c2, ("B1", "I"): c3, ("I", "B2"): c4})
    return _make_scenario("x", names, pos, caps, [["A1", "I", "A2"], ["B1", "I", "B2"]],
                          success_prob, coding_depth, **kw)


def cross(capacity: float = 1.0, success_prob: float = 1.0, coding_depth: int = 1, **kw) -> Scenario:
    """Four end nodes N, E, S, W around I; each sends to the opposite one."""
    names = ["E", "N", "W", "S", "I"]
    pos = _circle(4) + [(100.0, 100.0)]
    caps = _bidir({(n, "I"): capacity for n in "ENWS"})
    paths = [["E", "I", "W"], ["W", "I", "E"], ["N", "I", "S"], ["S", "I", "N"]]
    return _make_scenario("cross", names, pos, caps, paths, success_prob, coding_depth, **kw)


def wheel(n_flows: int = 4, capacity: float = 1.0, success_prob: float = 1.0,
          coding_depth: int = 1, **kw) -> Scenario:
    """``n_flows`` sources on a circle, each sending through I to the opposite point."""
    if n_flows < 1:
        raise TopologyError("wheel needs at least one flow")
    pts = _circle(2 * n_flows)
    names = [f"S{k + 1}" for k in range(n_flows)] + [f"R{k + 1}" for k in range(n_flows)] + ["I"]
    pos = pts[:n_flows] + pts[n_flows:] + [(100.0, 100.0)]
    caps = {}
    for k in range(n_flows):
        caps.update(_bidir({(f"S{k + 1}", "I"): capacity, (f"R{k + 1}", "I"): capacity}))
    paths = [[f"S{k + 1}", "I", f"R{k + 1}"] for k in range(n_flows)]
    return _make_scenario(f"wheel({n_flows})", names, pos, caps, paths, success_prob, coding_depth, **kw)


def butterfly(c1: float = 1.0, c2: float = 1.0, c3: float = 1.0, c4: float = 1.0, c5: float = 1.0,
              success_prob: float = 1.0, coding_depth: int = 2, **kw) -> Scenario:
    """Flows A1 -> I1 -> I2 -> A2 and B1 -> I1 -> I2 -> B2 on a 300 m square.

    Capacity labels: C1 = A1-I1, C2 = B1-I1, C3 = I1-I2, C4 = I2-A2, C5 = I2-B2.
    A2 overhears B1 and B2 overhears A1.
    """
    names = ["A1", "B1", "I1", "I2", "A2", "B2"]
    pos = [(30.0, 270.0), (270.0, 270.0), (150.0, 200.0), (150.0, 100.0), (270.0, 30.0), (30.0, 30.0)]
    caps = _bidir({("A1", "I1"): c1, ("B1", "I1"): c2, ("I1", "I2"): c3,
                   ("I2", "A2"): c4, ("I2", "B2"): c5})
    paths = [["A1", "I1", "I2", "A2"], ["B1", "I1", "I2", "B2"]]
    return _make_scenario("butterfly", names, pos, caps, paths, success_prob, coding_depth, **kw)


def grid(seed: int = 0, n_flows: int = 6, duration: float = 60.0, capacity: float = 1.0,
         success_prob: float = 1.0, coding_depth: int = 1, arrival_rate: float = 6 / 30.0,
         **kw) -> Scenario:
    """15 nodes in a 3x3 grid of 100 m cells (six cells hold two nodes).

    Flows arrive as a Poisson process with ``arrival_rate`` per second; the
    endpoints are drawn uniformly and both are re-drawn on a collision.
    Routes are direct between same or neighbouring cells and otherwise relay
    through one random node of a cell adjacent to both endpoints.
    """
    rng = np.random.default_rng(seed)
    counts = [2] * 6 + [1] * 3
    rng.shuffle(counts)
    names, pos, cell_of = [], [], []
    for cell, cnt in enumerate(counts):
        cx, cy = cell % 3, cell // 3
        for _ in range(cnt):
            names.append(f"N{len(names)}")
            pos.append((100 * cx + rng.uniform(0, 100), 100 * cy + rng.uniform(0, 100)))
            cell_of.append(cell)

    def adjacent(a: int, b: int) -> bool:
        return max(abs(a % 3 - b % 3), abs(a // 3 - b // 3)) <= 1

    n = len(names)
    caps = {}
    for u in range(n):
        for v in range(n):
            if u != v and adjacent(cell_of[u], cell_of[v]):
                caps[(names[u], names[v])] = capacity
    paths, starts = [], []
    t = 0.0
    while len(paths) < n_flows:
        t += rng.exponential(1 / arrival_rate)
        src, dst = rng.choice(n, size=2, replace=True)
        while src == dst:
            src, dst = rng.choice(n, size=2, replace=True)
        src, dst = int(src), int(dst)
        if adjacent(cell_of[src], cell_of[dst]):
            path = [src, dst]
        else:
            middle = [c for c in range(9) if adjacent(c, cell_of[src]) and adjacent(c, cell_of[dst])]
            relays = [r for r in range(n) if cell_of[r] in middle]
            path = [src, int(rng.choice(relays)), dst]
        paths.append([names[p] for p in path])
        starts.append(min(t, duration * 0.9))
    return _make_scenario(f"grid({seed})", names, pos, caps, paths, success_prob, coding_depth,
                          radius=kw.pop("radius", 300.0), start_times=starts, **kw)


GENERATORS = {
    "alice-bob": alice_bob,
    "x": x_topology,
    "cross": cross,
    "wheel": wheel,
    "butterfly": butterfly,
    "grid": grid,
}


def named_scenario(spec: str, **kw) -> Scenario:
    """Build a built-in topology from ``name`` or ``name(arg)``, e.g. ``wheel(8)``."""
    spec = spec.strip()
    arg = None
    if "(" in spec and spec.endswith(")"):
        spec, arg = spec[:-1].split("(", 1)
    if spec not in GENERATORS:
        raise TopologyError(f"unknown topology {spec!r}; choose from {sorted(GENERATORS)}")
    if arg is not None:
        key = "n_flows" if spec == "wheel" else "seed"
        kw[key] = int(arg)
    return GENERATORS[spec](**kw)


def load_scenario(path: str | Path) -> Scenario:
    """Read a JSON scenario file.

    Keys: ``nodes`` (list of ``{"name", "pos"}``), ``links`` (``from``, ``to``,
    ``capacity``, ``success_prob``), ``flows`` (``path`` plus optional
    ``start_time``), and optionally ``coding_depth``, ``range`` or
    ``adjacency``, ``bitrate``, ``overprovision``. A ``topology`` key naming a
    built-in generator (with ``params``) may replace the explicit lists.
    """
    data = json.loads(Path(path).read_text())
    return scenario_from_dict(data)


def scenario_from_dict(data: Mapping) -> Scenario:
    if "topology" in data:
        return named_scenario(data["topology"], **dict(data.get("params", {})))
    nodes = data["nodes"]
    names = [str(n.get("name", i)) for i, n in enumerate(nodes)]
    positions = None
    if all("pos" in n for n in nodes):
        positions = np.array([n["pos"] for n in nodes], dtype=float)
    if "adjacency" in data:
        in_range = np.array(data["adjacency"], dtype=bool)
        in_range = in_range | in_range.T
    elif positions is not None:
        in_range = range_from_positions(positions, float(data.get("range", DEFAULT_RANGE)))
    else:
        in_range = np.zeros((len(names), len(names)), dtype=bool)

    def nid(ref):
        return ref if isinstance(ref, int) else names.index(ref)

    links = [Link(nid(l["from"]), nid(l["to"]), float(l["capacity"]), float(l.get("success_prob", 1.0)))
             for l in data["links"]]
    net = Network(names, links, in_range, positions)
    flows = []
    for fid, f in enumerate(data.get("flows", [])):
        path = tuple(nid(p) for p in f["path"])
        flows.append(Flow(fid, path[0], path[-1], path, start_time=f.get("start_time")))
    return Scenario(str(data.get("name", "scenario")), net, flows, int(data.get("coding_depth", 1)),
                    float(data.get("bitrate", 1e6)), data.get("overhear_success_prob"),
                    float(data.get("overprovision", 1.0)))


def scenario_to_dict(sc: Scenario) -> dict:
    net = sc.network
    nodes = []
    for i, name in enumerate(net.names):
        entry = {"name": name}
        if net.positions is not None:
            entry["pos"] = [float(v) for v in net.positions[i]]
        nodes.append(entry)
    return {
        "name": sc.name,
        "nodes": nodes,
        "adjacency": net.in_range.astype(int).tolist(),
        "links": [{"from": net.names[l.src], "to": net.names[l.dst], "capacity": l.capacity,
                   "success_prob": l.success_prob} for l in net.links],
        "flows": [{"path": [net.names[p] for p in f.path], "start_time": f.start_time} for f in sc.flows],
        "coding_depth": sc.coding_depth,
        "bitrate": sc.bitrate,
        "overprovision": sc.overprovision,
    }
