"""Discrete-event loop: sources, queues, medium and receivers."""
from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..qm import CodingContext, NCAQM, make_discipline
from ..topology import Scenario
from ..transport import (ACK_SIZE, MSS, CountingReceiver, OptimalSource, TcpConfig, TcpReceiver,
                         TcpSender)
from .medium import Channel, interferes, schedule_medium
from .packets import ACK, DATA, CodedPacket, DecodingBuffer, Knowledge, NativePacket, PacketFactory

DROP_CAUSES = ("queue", "channel", "coding")
_DEPTH = {"nonc": 0, "cope": 1, "bfly": 2}


@dataclass
class SimConfig:
    discipline: str = "ncaqm"
    transport: str = "tcp"
    buffer: int = 10
    duration: float = 60.0
    packet_size: int = MSS
    ack_size: int = ACK_SIZE
    bitrate: float | None = None
    overhead: float = 1e-3
    max_retries: int = 7
    success_prob: float | None = None
    overhear_prob: float | None = None
    decoding_buffer: int = 64
    knowledge_delay: float | None = None
    window: int = 100
    drop_fallback: str = "tail"
    recode: str = "on-enqueue"
    start_window: float = 5.0
    sample_interval: float = 0.1
    price_scale: float = 1.0 / 250.0
    coding_depth: int | None = None
    trace: bool = False
    tcp: TcpConfig = field(default_factory=TcpConfig)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.buffer < 1:
            raise ValueError("buffer must be >= 1")
        if self.transport not in ("tcp", "optimal"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.recode != "on-enqueue" and not self.recode.startswith("every-ms:"):
            raise ValueError("recode must be 'on-enqueue' or 'every-ms:<T>'")


@dataclass
class Metrics:
    duration: float
    throughput_bps: list[float]
    delivered_packets: list[int]
    drops: dict[str, int]
    drops_by_flow: dict[str, list[int]]
    injected: list[int]
    arrived: list[int]
    in_network: list[int]
    coded_fraction: float
    no_partner_fraction: float
    relay_opportunities: int
    data_transmissions: int
    coded_transmissions: int
    transmissions: int
    node_stats: list[dict]
    queue_times: list[float]
    queue_series: list[list[int]]
    mean_queue: list[float]
    tcp: list[dict]
    drop_victims: list[list]
    events: int
    trace: list[tuple] | None = None

    @property
    def aggregate_bps(self) -> float:
        return float(sum(self.throughput_bps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aggregate_bps"] = self.aggregate_bps
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class Simulator:
    def __init__(self, scenario: Scenario, config: SimConfig | None = None, seed: int = 0):
        self.scenario = scenario
        self.cfg = cfg = config or SimConfig()
        self.rng = np.random.default_rng(seed)
        net = scenario.network
        self.n_nodes = net.n_nodes
        depth = cfg.coding_depth
        if depth is None:
            depth = _DEPTH.get(cfg.discipline, scenario.coding_depth)
        if not net.in_range.any():
            depth = 0
        self.hypergraph, self.catalog = scenario.build(depth)
        self.buffers = [DecodingBuffer(cfg.decoding_buffer) for _ in range(self.n_nodes)]
        self.knowledge = Knowledge(self.buffers, cfg.knowledge_delay)
        self.ctx = CodingContext.build(self.hypergraph, self.catalog, self.knowledge)
        kw = {}
        if cfg.discipline == "ncaqm":
            kw = dict(window=cfg.window, drop_fallback=cfg.drop_fallback, recode=cfg.recode)
        self.queues = [make_discipline(cfg.discipline, i, self.ctx, cfg.buffer, self.rng, **kw)
                       for i in range(self.n_nodes)]
        self.channel = Channel(net, cfg.bitrate or scenario.bitrate, cfg.overhead, cfg.max_retries,
                               cfg.success_prob, cfg.overhear_prob)
        self.in_range = [set(net.neighbors(i)) for i in range(self.n_nodes)]
        self.flows = scenario.flows
        self.factory = PacketFactory()
        self.busy: dict[int, frozenset[int]] = {}
        self.in_air: dict[int, CodedPacket] = {}
        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0.0
        self.events = 0
        nf = len(self.flows)
        self.injected = [0] * nf
        self.arrived = [0] * nf
        self.drops_by_flow = {c: [0] * nf for c in DROP_CAUSES}
        self.trace: list[tuple] | None = [] if cfg.trace else None
        self.queue_times: list[float] = []
        self.queue_series: list[list[int]] = [[] for _ in range(self.n_nodes)]
        if cfg.transport == "tcp":
            self.senders = [TcpSender(cfg.tcp) for _ in self.flows]
            self.receivers = [TcpReceiver() for _ in self.flows]
        else:
            pkt_rate = self.channel.bitrate / (cfg.packet_size * 8.0)
            self.senders = [OptimalSource(pkt_rate / 1000.0, pkt_rate) for _ in self.flows]
            self.receivers = [CountingReceiver() for _ in self.flows]

    # event plumbing -----------------------------------------------------------

    def _push(self, t: float, kind: str, *args) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), kind, args))

    def _log(self, *entry) -> None:
        if self.trace is not None:
            self.trace.append((round(self.now, 9), *entry))

    def run(self) -> Metrics:
        cfg = self.cfg
        for f in self.flows:
            start = f.start_time if f.start_time is not None else float(self.rng.uniform(0, cfg.start_window))
            self._push(start, "start", f.id)
        self._push(0.0, "sample")
        if cfg.knowledge_delay:
            self._push(cfg.knowledge_delay, "refresh")
        if cfg.recode.startswith("every-ms:"):
            self._recode_period = float(cfg.recode.split(":", 1)[1]) / 1000.0
            self._push(self._recode_period, "recode")
        handlers = {"start": self._on_start, "tx_end": self._on_tx_end, "rto": self._on_rto,
                    "emit": self._on_emit, "sample": self._on_sample, "refresh": self._on_refresh,
                    "recode": self._on_recode}
        while self._heap:
            t, _, kind, args = self._heap[0]
            if t > cfg.duration:
                break
            heapq.heappop(self._heap)
            if t < self.now:
                raise RuntimeError("event scheduled in the past")
            self.now = t
            self.events += 1
            handlers[kind](*args)
            self._grant()
        self.now = cfg.duration
        return self._metrics()

    # sources --------------------------------------------------------------------

    def _inject(self, s: int, kind: str, seq: int) -> None:
        f = self.flows[s]
        route = f.path if kind == DATA else tuple(reversed(f.path))
        size = self.cfg.packet_size if kind == DATA else self.cfg.ack_size
        pkt = self.factory.make(s, size, kind, seq, self.now, route)
        if kind == DATA:
            self.injected[s] += 1
        if kind == DATA:
            self.buffers[route[0]].add(pkt.id)
        self._log("inject", s, kind, seq, pkt.id)
        self._enqueue(route[0], CodedPacket.single(pkt, route[0]))

    def _send(self, s: int, seqs: list[int]) -> None:
        for seq in seqs:
            self._inject(s, DATA, seq)
        snd = self.senders[s]
        if isinstance(snd, TcpSender) and snd.timer_deadline is not None and \
                getattr(snd, "_pushed", None) != snd.timer_version:
            snd._pushed = snd.timer_version
            self._push(snd.timer_deadline, "rto", s, snd.timer_version)

    def _on_start(self, s: int) -> None:
        if self.cfg.transport == "tcp":
            self._send(s, self.senders[s].start(self.now))
        else:
            self._on_emit(s)

    def _on_rto(self, s: int, version: int) -> None:
        snd = self.senders[s]
        if version != snd.timer_version or snd.timer_deadline is None:
            return
        self._log("rto", s)
        self._send(s, snd.on_timeout(self.now))

    def path_price(self, s: int) -> float:
        total = 0.0
        for node in self.flows[s].path[:-1]:
            q = self.queues[node]
            if isinstance(q, NCAQM):
                total += q.phi().get(s, 0.0)
            else:
                total += q.per_flow_counts().get(s, 0)
        return total * self.cfg.price_scale

    def _on_emit(self, s: int) -> None:
        seq, gap = self.senders[s].step(self.path_price(s))
        self._inject(s, DATA, seq)
        self._push(self.now + gap, "emit", s)

    # queues and medium ------------------------------------------------------------

    def _enqueue(self, node: int, coded: CodedPacket) -> None:
        dropped = self.queues[node].enqueue(coded, self.now)
        for p in dropped:
            self._drop(p, "queue", node)

    def _drop(self, p: NativePacket, cause: str, node: int) -> None:
        if p.kind == DATA:
            self.drops_by_flow[cause][p.flow] += 1
        self._log("drop", cause, node, p.id)

    def _grant(self) -> None:
        while True:
            cands = []
            for u in range(self.n_nodes):
                if u in self.busy or not len(self.queues[u]):
                    continue
                mine = {u} | set(self.queues[u].peek_targets())
                if any(interferes(self.in_range, mine, other) for other in self.busy.values()):
                    continue
                cands.append(u)
            if not cands:
                return
            self._start_tx(schedule_medium(cands, self.rng))

    def _start_tx(self, u: int) -> None:
        coded = self.queues[u].dequeue(self.now)
        if coded.is_coded and not self.ctx.eligible(coded, u):
            raise AssertionError("discipline emitted an ineligible coded packet")
        if coded.is_data:
            for p in coded.natives:
                self.buffers[u].add(p.id)
        out = self.channel.transmit(u, coded.targets, coded.size, self.rng)
        self.busy[u] = frozenset({u} | coded.targets)
        self.in_air[u] = coded
        self._log("tx", u, tuple(p.id for p in coded.natives), tuple(sorted(coded.targets)), out.attempts)
        self._push(self.now + out.duration, "tx_end", u, coded, out)

    def _on_tx_end(self, u: int, coded: CodedPacket, out) -> None:
        del self.busy[u]
        del self.in_air[u]
        for o in out.overheard:
            self._overhear(o, coded)
        for t in out.failed:
            for p in coded.natives:
                if coded.next_hop[p.id] == t:
                    self._drop(p, "channel", u)
        for t in out.received:
            self._receive(t, coded)

    def _overhear(self, o: int, coded: CodedPacket) -> None:
        if not coded.is_data:
            return
        buf = self.buffers[o]
        unknown = [p for p in coded.natives if p.id not in buf]
        if len(unknown) == 1:
            buf.add(unknown[0].id)

    def _receive(self, t: int, coded: CodedPacket) -> None:
        buf = self.buffers[t]
        mine = [p for p in coded.natives if coded.next_hop[p.id] == t]
        if coded.frozen and len(coded.targets) == 1:
            # butterfly relay: forward the code whole toward the decode points
            fwd = CodedPacket(list(coded.natives), dict(coded.decode_at), t, frozen=True,
                              decode_at=dict(coded.decode_at))
            self._enqueue(t, fwd)
            return
        unknown = [p for p in coded.natives if p.id not in buf]
        if len(unknown) > 1:
            for p in mine:
                if p in unknown:
                    self._drop(p, "coding", t)
            return
        if coded.is_data:
            for p in coded.natives:
                buf.add(p.id)
        for p in mine:
            self._arrive(t, p)

    def _arrive(self, t: int, p: NativePacket) -> None:
        if t != p.route[-1]:
            self._enqueue(t, CodedPacket.single(p, t))
            return
        s = p.flow
        if p.kind == DATA:
            self.arrived[s] += 1
            rcv = self.receivers[s]
            if self.cfg.transport == "tcp":
                ack = rcv.on_data(p.seq)
                self._inject(s, ACK, ack)
            else:
                rcv.on_data(p.seq)
        else:
            self._send(s, self.senders[s].on_ack(p.seq, self.now))

    # periodic -------------------------------------------------------------------------

    def _on_sample(self) -> None:
        self.queue_times.append(round(self.now, 9))
        for i, q in enumerate(self.queues):
            self.queue_series[i].append(len(q))
        self._push(self.now + self.cfg.sample_interval, "sample")

    def _on_refresh(self) -> None:
        self.knowledge.refresh()
        self._push(self.now + self.cfg.knowledge_delay, "refresh")

    def _on_recode(self) -> None:
        for q in self.queues:
            if isinstance(q, NCAQM):
                q.recode_queue()
        self._push(self.now + self._recode_period, "recode")

    # results ------------------------------------------------------------------------------

    def in_network(self) -> list[int]:
        out = [0] * len(self.flows)
        packets = [c for q in self.queues for c in q.queue] + list(self.in_air.values())
        for c in packets:
            for p in c.natives:
                if p.kind == DATA:
                    out[p.flow] += 1
        return out

    def _metrics(self) -> Metrics:
        cfg = self.cfg
        delivered = [r.delivered for r in self.receivers]
        thr = [d * cfg.packet_size * 8.0 / cfg.duration for d in delivered]
        stats = [asdict(q.stats) for q in self.queues]
        data_tx = sum(s["data_transmissions"] for s in stats)
        coded_tx = sum(s["coded_transmissions"] for s in stats)
        opp = sum(s["relay_opportunities"] for s in stats)
        nop = sum(s["no_partner"] for s in stats)
        tcp = []
        for snd in self.senders:
            if isinstance(snd, TcpSender):
                tcp.append(dict(cwnd=snd.cwnd, ssthresh=snd.ssthresh, retransmissions=snd.retransmissions,
                                timeouts=snd.timeouts, fast_retransmits=snd.fast_retransmits))
            else:
                tcp.append(dict(rate=snd.rate, sent=snd.next_seq))
        victims = [[i, s, m] for i, q in enumerate(self.queues) if isinstance(q, NCAQM)
                   for s, m in q.victims]
        return Metrics(
            duration=cfg.duration,
            throughput_bps=thr,
            delivered_packets=delivered,
            drops={c: sum(v) for c, v in self.drops_by_flow.items()},
            drops_by_flow={c: list(v) for c, v in self.drops_by_flow.items()},
            injected=list(self.injected),
            arrived=list(self.arrived),
            in_network=self.in_network(),
            coded_fraction=coded_tx / data_tx if data_tx else 0.0,
            no_partner_fraction=nop / opp if opp else 0.0,
            relay_opportunities=opp,
            data_transmissions=data_tx,
            coded_transmissions=coded_tx,
            transmissions=sum(s["transmissions"] for s in stats),
            node_stats=stats,
            queue_times=self.queue_times,
            queue_series=self.queue_series,
            mean_queue=[float(np.mean(s)) if s else 0.0 for s in self.queue_series],
            tcp=tcp,
            drop_victims=victims,
            events=self.events,
            trace=self.trace,
        )


def run(scenario: Scenario, config: SimConfig | None = None, seed: int = 0, **overrides) -> Metrics:
    """Simulate ``scenario`` once. Keyword overrides patch fields of ``config``."""
    cfg = config or SimConfig()
    if overrides:
        cfg = SimConfig(**{**asdict(cfg), **overrides, "tcp": cfg.tcp})
    return Simulator(scenario, cfg, seed).run()
