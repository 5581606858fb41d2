"""Packets moved by the simulator and the per-node decoding buffers."""
from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass, field

DATA, ACK = "data", "ack"


@dataclass(eq=False)
class NativePacket:
    id: int
    flow: int
    size: int
    kind: str
    seq: int
    created_at: float
    route: tuple[int, ...]

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("packet size must be positive")

    def next_hop(self, node: int) -> int | None:
        i = self.route.index(node)
        return self.route[i + 1] if i + 1 < len(self.route) else None

    @property
    def is_data(self) -> bool:
        return self.kind == DATA


@dataclass(eq=False)
class CodedPacket:
    """XOR of natives from distinct flows; one native means uncoded.

    ``next_hop`` maps native id to the node that should take it next.
    ``frozen`` marks a two-hop code in transit: the relay forwards it whole
    and nobody may add to it.
    """

    natives: list[NativePacket]
    next_hop: dict[int, int]
    origin: int
    frozen: bool = False
    decode_at: dict[int, int] = field(default_factory=dict)

    @classmethod
    def single(cls, pkt: NativePacket, at: int) -> "CodedPacket":
        return cls([pkt], {pkt.id: pkt.next_hop(at)}, at)

    @property
    def is_coded(self) -> bool:
        return len(self.natives) > 1

    @property
    def size(self) -> int:
        return max(p.size for p in self.natives)

    @property
    def targets(self) -> frozenset[int]:
        return frozenset(self.next_hop.values())

    @property
    def flows(self) -> frozenset[int]:
        return frozenset(p.flow for p in self.natives)

    @property
    def is_data(self) -> bool:
        return self.natives[0].is_data


class PacketFactory:
    """Hands out globally unique native ids."""

    def __init__(self):
        self._ids = itertools.count()

    def make(self, flow: int, size: int, kind: str, seq: int, now: float, route) -> NativePacket:
        return NativePacket(next(self._ids), flow, size, kind, seq, now, tuple(route))


class DecodingBuffer:
    """FIFO-bounded set of native ids a node holds."""

    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("decoding buffer capacity must be >= 1")
        self.capacity = capacity
        self._ids: OrderedDict[int, None] = OrderedDict()

    def __contains__(self, pid: int) -> bool:
        return pid in self._ids

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, pid: int) -> None:
        if pid in self._ids:
            self._ids.move_to_end(pid)
            return
        self._ids[pid] = None
        if len(self._ids) > self.capacity:
            self._ids.popitem(last=False)

    def snapshot(self) -> frozenset[int]:
        return frozenset(self._ids)


class Knowledge:
    """What a sender believes its neighbours hold.

    ``delay=None`` reads the true buffers; otherwise answers come from
    snapshots refreshed every ``delay`` seconds by the engine.
    """

    def __init__(self, buffers: list[DecodingBuffer], delay: float | None = None):
        self.buffers = buffers
        self.delay = delay
        self._snap = [b.snapshot() for b in buffers] if delay else None

    def knows(self, node: int, pid: int) -> bool:
        if self._snap is None:
            return pid in self.buffers[node]
        return pid in self._snap[node]

    def refresh(self) -> None:
        if self._snap is not None:
            self._snap = [b.snapshot() for b in self.buffers]
