"""Per-node output-queue disciplines.

``NoNC`` is plain DropTail. ``COPE`` keeps natives in a FIFO and XORs at each
transmission opportunity; ``BFLY`` additionally forms two-hop butterfly codes.
``NCAQM`` codes when packets are inserted and, on overflow, drops from the
flow that dominates the virtual per-hyperarc queues.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .simcore.packets import CodedPacket, Knowledge, NativePacket
from .topology import CodeCatalog, Hypergraph

DROP_QUEUE = "queue"


@dataclass
class CodingContext:
    """Static lookups shared by every node's discipline in one run."""

    hypergraph: Hypergraph
    catalog: CodeCatalog
    knowledge: Knowledge
    code_key: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)       # node -> flow -> [(h, k)]
    butterflies: dict = field(default_factory=dict)   # (node, flows) -> {flow: decode node}
    relayed: dict = field(default_factory=dict)       # node -> set of flows relayed there

    @classmethod
    def build(cls, hypergraph: Hypergraph, catalog: CodeCatalog, knowledge: Knowledge) -> "CodingContext":
        ctx = cls(hypergraph, catalog, knowledge)
        for code in catalog.codes:
            ctx.code_key[(code.hyperarc, code.flows, code.hops)] = code.id
        arcs = hypergraph.hyperarcs
        flows = {f.id: f for f in hypergraph.flows}
        for s, h, k in catalog.entries():
            node = arcs[h].origin
            opts = ctx.options.setdefault(node, {}).setdefault(s, [])
            if (h, k) not in opts:
                opts.append((h, k))
        for code in catalog.codes:
            if code.hops != 2:
                continue
            node = arcs[code.hyperarc].origin
            (relay,) = arcs[code.hyperarc].targets
            ctx.butterflies[(node, code.flows)] = {s: flows[s].next_hop(relay) for s in code.flows}
        for f in hypergraph.flows:
            for node in f.path[1:-1]:
                ctx.relayed.setdefault(node, set()).add(f.id)
        return ctx

    def lookup(self, node: int, coded: CodedPacket) -> tuple[int | None, int | None]:
        """(hyperarc, code) used when ``node`` sends ``coded``; None for unknown or ACK."""
        if not coded.is_data:
            return None, None
        h = self.hypergraph.hyperarc_id(node, coded.targets)
        if h is None:
            return None, None
        hops = 2 if coded.frozen and len(coded.targets) == 1 else 1
        return h, self.code_key.get((h, coded.flows, hops))

    # eligibility -----------------------------------------------------------

    def one_hop_ok(self, natives: list[NativePacket], at: int) -> bool:
        """Distinct data flows and each next hop holds every other native."""
        if len(natives) < 2:
            return True
        if any(not p.is_data for p in natives):
            return False
        if len({p.flow for p in natives}) != len(natives):
            return False
        know = self.knowledge.knows
        for p in natives:
            nh = p.next_hop(at)
            for q in natives:
                if q is not p and not know(nh, q.id):
                    return False
        return True

    def two_hop_decode(self, a: NativePacket, b: NativePacket, at: int) -> dict[int, int] | None:
        """Decode nodes of a butterfly code over ``a`` and ``b``, or None if not usable."""
        if not (a.is_data and b.is_data) or a.flow == b.flow:
            return None
        dec = self.butterflies.get((at, frozenset((a.flow, b.flow))))
        if dec is None or a.next_hop(at) != b.next_hop(at):
            return None
        da, db = dec[a.flow], dec[b.flow]
        if not (self.knowledge.knows(da, b.id) and self.knowledge.knows(db, a.id)):
            return None
        return {a.id: da, b.id: db}

    def eligible(self, coded: CodedPacket, at: int) -> bool:
        if coded.frozen:
            if not coded.decode_at or len(coded.natives) != 2:
                return False
            a, b = coded.natives
            if len(coded.targets) == 1:
                return self.two_hop_decode(a, b, at) is not None
            return True
        return self.one_hop_ok(coded.natives, at)


def merge(a: CodedPacket, b: CodedPacket, at: int) -> CodedPacket:
    natives = a.natives + b.natives
    return CodedPacket(natives, {p.id: p.next_hop(at) for p in natives}, at)


@dataclass
class QueueStats:
    transmissions: int = 0
    data_transmissions: int = 0
    coded_transmissions: int = 0
    relay_opportunities: int = 0
    no_partner: int = 0
    drops: int = 0


class Discipline:
    """Base FIFO with DropTail; subclasses change coding and dropping."""

    name = "base"

    def __init__(self, node: int, ctx: CodingContext, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.node = node
        self.ctx = ctx
        self.capacity = capacity
        self.rng = rng
        self.queue: list[CodedPacket] = []
        self.stats = QueueStats()

    def __len__(self) -> int:
        return len(self.queue)

    def per_flow_counts(self) -> dict[int, int]:
        """Q_i^s: data natives of each flow, coded natives counted once each."""
        out: dict[int, int] = {}
        for c in self.queue:
            for p in c.natives:
                if p.is_data:
                    out[p.flow] = out.get(p.flow, 0) + 1
        return out

    def peek_targets(self) -> frozenset[int]:
        return self.queue[0].targets if self.queue else frozenset()

    def enqueue(self, coded: CodedPacket, now: float) -> list[NativePacket]:
        """Insert; return the natives dropped to respect the capacity."""
        if len(self.queue) >= self.capacity:
            self.stats.drops += 1
            return list(coded.natives)
        self.queue.append(coded)
        return []

    def _count_opportunity(self, head: CodedPacket) -> None:
        relayed = self.ctx.relayed.get(self.node, set())
        if not head.is_data or len(relayed) < 2 or not (head.flows & relayed):
            return
        self.stats.relay_opportunities += 1
        partner = any(c.is_data and (c.flows & relayed) - head.flows
                      for c in self.queue[1:])
        if not partner and not head.is_coded:
            self.stats.no_partner += 1

    def dequeue(self, now: float) -> CodedPacket:
        head = self.queue[0]
        self._count_opportunity(head)
        out = self._select()
        self.on_transmit(out)
        return out

    def _select(self) -> CodedPacket:
        return self.queue.pop(0)

    def on_transmit(self, coded: CodedPacket) -> None:
        self.stats.transmissions += 1
        if coded.is_data:
            self.stats.data_transmissions += 1
            if coded.is_coded:
                self.stats.coded_transmissions += 1


class NoNC(Discipline):
    name = "nonc"


class COPE(Discipline):
    """Code at dequeue: the head native is XOR-ed greedily with later natives."""

    name = "cope"
    two_hop = False

    def _select(self) -> CodedPacket:
        head = self.queue.pop(0)
        if head.frozen or not head.is_data:
            return head
        current = head
        keep = []
        for c in self.queue:
            if not c.frozen and not c.is_coded and c.is_data:
                cand = merge(current, c, self.node)
                if self.ctx.one_hop_ok(cand.natives, self.node):
                    current = cand
                    continue
            keep.append(c)
        if current is head and self.two_hop:
            for i, c in enumerate(self.queue):
                if c.frozen or c.is_coded or not c.is_data:
                    continue
                dec = self.ctx.two_hop_decode(head.natives[0], c.natives[0], self.node)
                if dec is not None:
                    del self.queue[i]
                    return two_hop_packet(head.natives[0], c.natives[0], self.node, dec)
            return head
        self.queue = keep
        return current


class BFLY(COPE):
    name = "bfly"
    two_hop = True


def two_hop_packet(a: NativePacket, b: NativePacket, at: int, decode_at: dict[int, int]) -> CodedPacket:
    relay = a.next_hop(at)
    return CodedPacket([a, b], {a.id: relay, b.id: relay}, at, frozen=True, decode_at=decode_at)


class SplitEstimator:
    """Window over the node's last ``window`` transmissions of how each flow's
    natives were sent: alpha(s, h, k) = uses of (h, k) by s / natives of s sent."""

    def __init__(self, options: dict[int, list[tuple[int, int]]], window: int = 100):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.options = options
        self.window = window
        self._log: deque[list[tuple[int, int | None, int | None]]] = deque()
        self._uses: dict[tuple[int, int, int], int] = {}
        self._sent: dict[int, int] = {}

    def record(self, entries: list[tuple[int, int | None, int | None]]) -> None:
        """``entries`` holds one (flow, h, k) per data native of the transmission."""
        self._log.append(entries)
        self._bump(entries, 1)
        if len(self._log) > self.window:
            self._bump(self._log.popleft(), -1)

    def _bump(self, entries, sign: int) -> None:
        for s, h, k in entries:
            self._sent[s] = self._sent.get(s, 0) + sign
            if h is not None and k is not None:
                key = (s, h, k)
                self._uses[key] = self._uses.get(key, 0) + sign

    def alpha(self, s: int, h: int, k: int) -> float:
        sent = self._sent.get(s, 0)
        if sent <= 0:
            opts = self.options.get(s, ())
            return 1.0 / len(opts) if (h, k) in opts else 0.0
        return self._uses.get((s, h, k), 0) / sent


def dominance(values: dict[int, float]) -> dict[int, float]:
    """m-check: 1/|argmax| on the flows attaining the maximum, 0 elsewhere."""
    if not values:
        return {}
    best = max(values.values())
    top = [s for s, v in values.items() if v == best]
    return {s: (1.0 / len(top) if s in top else 0.0) for s in values}


def virtual_state(options: dict[int, list[tuple[int, int]]], counts: dict[int, int],
                  alpha) -> tuple[dict[int, float], dict[int, float]]:
    """Per-hyperarc Q_h and per-flow Phi from queue counts and split estimates."""
    by_code: dict[tuple[int, int], list[int]] = {}
    for s, opts in options.items():
        for h, k in opts:
            by_code.setdefault((h, k), []).append(s)
    q_h: dict[int, float] = {}
    w: dict[tuple[int, int], float] = {}
    for (h, k), members in by_code.items():
        vals = {s: alpha(s, h, k) * counts.get(s, 0) for s in members}
        q_h[h] = q_h.get(h, 0.0) + max(vals.values())
        for s, m in dominance(vals).items():
            w[(s, h)] = w.get((s, h), 0.0) + alpha(s, h, k) * m
    phi = {s: 0.0 for s in options}
    for (s, h), ws in w.items():
        phi[s] += q_h[h] * ws
    return q_h, phi


class NCAQM(Discipline):
    """Alg. 1 recoding on insertion and Alg. 2 dominance-based dropping."""

    name = "ncaqm"

    def __init__(self, node, ctx, capacity, rng, window: int = 100, drop_fallback: str = "tail",
                 recode: str = "on-enqueue"):
        super().__init__(node, ctx, capacity, rng)
        if drop_fallback not in ("tail", "incoming"):
            raise ValueError("drop_fallback must be 'tail' or 'incoming'")
        self.drop_fallback = drop_fallback
        self.recode_mode = recode
        self.options = ctx.options.get(node, {})
        self.estimator = SplitEstimator(self.options, window)
        self.victims: list[tuple[int, float]] = []   # (flow, its best m-check) per drop
        self.stale_splits = 0

    # Alg. 1 -----------------------------------------------------------------

    def _try_merge(self, a: CodedPacket, b: CodedPacket) -> CodedPacket | None:
        if a.frozen or b.frozen or not (a.is_data and b.is_data):
            return None
        if a.flows & b.flows:
            return None
        cand = merge(a, b, self.node)
        if self.ctx.one_hop_ok(cand.natives, self.node):
            return cand
        if not a.is_coded and not b.is_coded:
            dec = self.ctx.two_hop_decode(a.natives[0], b.natives[0], self.node)
            if dec is not None:
                return two_hop_packet(a.natives[0], b.natives[0], self.node, dec)
        return None

    def recode_queue(self) -> None:
        """Full pass: combine each slot with any later eligible slot, then compact."""
        q = self.queue
        m = 0
        while m < len(q):
            n = m + 1
            while n < len(q):
                merged = self._try_merge(q[m], q[n])
                if merged is not None:
                    q[m] = merged
                    del q[n]
                else:
                    n += 1
            m += 1

    def _recode_incoming(self) -> CodedPacket | None:
        """Combine the newest slot into the earliest eligible slot; returns the
        slot still holding the arrival, or None if it was absorbed."""
        new = self.queue[-1]
        for m in range(len(self.queue) - 1):
            merged = self._try_merge(self.queue[m], new)
            if merged is not None:
                self.queue[m] = merged
                self.queue.pop()
                return None
        return new

    # Alg. 2 -----------------------------------------------------------------

    def phi(self) -> dict[int, float]:
        _, phi = virtual_state(self.options, self.per_flow_counts(), self.estimator.alpha)
        return phi

    def h_queues(self) -> dict[int, float]:
        q_h, _ = virtual_state(self.options, self.per_flow_counts(), self.estimator.alpha)
        return q_h

    def _best_dominance(self, s: int, counts: dict[int, int]) -> float:
        best = 0.0
        by_code: dict[tuple[int, int], list[int]] = {}
        for f, opts in self.options.items():
            for hk in opts:
                by_code.setdefault(hk, []).append(f)
        for (h, k), members in by_code.items():
            if s in members:
                vals = {f: self.estimator.alpha(f, h, k) * counts.get(f, 0) for f in members}
                best = max(best, dominance(vals)[s])
        return best

    def drop_packet(self, incoming: CodedPacket | None = None) -> list[NativePacket]:
        counts = self.per_flow_counts()
        phi = {s: v for s, v in self.phi().items() if counts.get(s, 0) > 0}
        victim_idx = None
        if phi:
            top = max(phi.values())
            tied = sorted(s for s, v in phi.items() if v == top)
            s = tied[int(self.rng.integers(len(tied)))] if len(tied) > 1 else tied[0]
            self.victims.append((s, self._best_dominance(s, counts)))
            for i in range(len(self.queue) - 1, -1, -1):
                c = self.queue[i]
                if not c.is_coded and c.is_data and c.natives[0].flow == s:
                    victim_idx = i
                    break
        if victim_idx is None:
            if self.drop_fallback == "incoming" and incoming is not None and incoming in self.queue:
                victim_idx = self.queue.index(incoming)
            else:
                victim_idx = len(self.queue) - 1
        self.stats.drops += 1
        return list(self.queue.pop(victim_idx).natives)

    def enqueue(self, coded: CodedPacket, now: float) -> list[NativePacket]:
        self.queue.append(coded)
        incoming = coded
        if self.recode_mode == "on-enqueue":
            incoming = self._recode_incoming()
        dropped: list[NativePacket] = []
        while len(self.queue) > self.capacity:
            dropped.extend(self.drop_packet(incoming))
        return dropped

    def _split_stale_head(self) -> None:
        """A code formed at insertion can go stale if a next hop evicted a
        partner from its decoding buffer; send such natives separately."""
        head = self.queue[0]
        if head.is_coded and not self.ctx.eligible(head, self.node):
            self.queue[0:1] = [CodedPacket.single(p, self.node) for p in head.natives]
            self.stale_splits += 1

    def _select(self) -> CodedPacket:
        self._split_stale_head()
        head = self.queue[0]
        n = 1
        while n < len(self.queue):
            merged = self._try_merge(head, self.queue[n])
            if merged is not None:
                head = merged
                del self.queue[n]
            else:
                n += 1
        self.queue.pop(0)
        return head

    def on_transmit(self, coded: CodedPacket) -> None:
        super().on_transmit(coded)
        if not coded.is_data:
            return
        h, k = self.ctx.lookup(self.node, coded)
        self.estimator.record([(p.flow, h, k) for p in coded.natives])


DISCIPLINES = {"nonc": NoNC, "cope": COPE, "bfly": BFLY, "ncaqm": NCAQM}


def make_discipline(name: str, node: int, ctx: CodingContext, capacity: int,
                    rng: np.random.Generator, **kw) -> Discipline:
    try:
        cls = DISCIPLINES[name]
    except KeyError:
        raise ValueError(f"unknown discipline {name!r}; choose from {sorted(DISCIPLINES)}") from None
    return cls(node, ctx, capacity, rng, **kw) if name == "ncaqm" else cls(node, ctx, capacity, rng)
