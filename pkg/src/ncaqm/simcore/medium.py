"""Shared wireless medium: Bernoulli link losses with MAC retries and a
uniform-random contention abstraction of 802.11."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..topology import Network


@dataclass
class TxOutcome:
    attempts: int
    received: tuple[int, ...]
    failed: tuple[int, ...]
    overheard: tuple[int, ...]
    duration: float


class Channel:
    """Per-link success probabilities, transmission timing and retries.

    A transmission repeats until every target has the packet or
    ``max_retries`` retransmissions are spent; every attempt is also a fresh
    overhearing chance for in-range non-targets.
    """

    def __init__(self, network: Network, bitrate: float = 1e6, overhead: float = 1e-3,
                 max_retries: int = 7, success_prob: float | None = None,
                 overhear_prob: float | None = None):
        if bitrate <= 0 or overhead < 0 or max_retries < 0:
            raise ValueError("need bitrate > 0, overhead >= 0, max_retries >= 0")
        for p in (success_prob, overhear_prob):
            if p is not None and not 0 < p <= 1:
                raise ValueError("success probabilities must lie in (0, 1]")
        self.network = network
        self.bitrate = bitrate
        self.overhead = overhead
        self.max_retries = max_retries
        self.success_override = success_prob
        if overhear_prob is None:
            probs = [l.success_prob for l in network.links] if success_prob is None else [success_prob]
            overhear_prob = float(np.mean(probs)) if probs else 1.0
        self.overhear_default = overhear_prob
        self.neighbors = [network.neighbors(i) for i in range(network.n_nodes)]

    def success_prob(self, u: int, v: int) -> float:
        if self.success_override is not None:
            return self.success_override
        return self.network.link(u, v).success_prob

    def overhear_prob(self, u: int, o: int) -> float:
        idx = self.network.link_id(u, o)
        if idx is not None:
            return self.success_prob(u, o)
        return self.overhear_default

    def airtime(self, u: int, targets, size: int) -> float:
        """Seconds for one attempt: payload at the slowest target link plus overhead."""
        mult = min(self.network.link(u, t).capacity for t in targets)
        return size * 8.0 / (self.bitrate * mult) + self.overhead

    def transmit(self, u: int, targets, size: int, rng: np.random.Generator) -> TxOutcome:
        targets = sorted(targets)
        overhearers = [o for o in self.neighbors[u] if o not in targets]
        pending = {t: self.success_prob(u, t) for t in targets}
        listen = {o: self.overhear_prob(u, o) for o in overhearers}
        received, overheard = [], []
        attempts = 0
        while attempts <= self.max_retries:
            attempts += 1
            for t in list(pending):
                p = pending[t]
                if p >= 1.0 or rng.random() < p:
                    received.append(t)
                    del pending[t]
            for o in list(listen):
                p = listen[o]
                if p >= 1.0 or rng.random() < p:
                    overheard.append(o)
                    del listen[o]
            if not pending:
                break
        return TxOutcome(attempts, tuple(received), tuple(sorted(pending)), tuple(overheard),
                         attempts * self.airtime(u, targets, size))


def interferes(in_range: list[set[int]], a: set[int], b: set[int]) -> bool:
    """Protocol model: shared node, or any endpoint of one in range of the other."""
    if a & b:
        return True
    return any(in_range[x] & b for x in a)


def schedule_medium(candidates: list[int], rng: np.random.Generator) -> int:
    """Uniform-random grant among backlogged, conflict-free contenders."""
    if not candidates:
        raise ValueError("no backlogged contender")
    if len(candidates) == 1:
        return candidates[0]
    return candidates[int(rng.integers(len(candidates)))]
