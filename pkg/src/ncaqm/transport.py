"""End-to-end sources: a NewReno-style TCP and a price-driven paced source.

Both are pure state machines. The engine feeds them ACKs, timeouts and
clock ticks and sends whatever sequence numbers they return.
"""
from __future__ import annotations

from dataclasses import dataclass, field

MSS = 500
ACK_SIZE = 40

SLOW_START, CONGESTION_AVOIDANCE, FAST_RECOVERY = "slow-start", "congestion-avoidance", "fast-recovery"


@dataclass
class TcpConfig:
    initial_cwnd: float = 2.0
    initial_ssthresh: float = 64.0
    min_rto: float = 0.2
    initial_rto: float = 1.0
    max_rto: float = 60.0
    dupack_threshold: int = 3

    def __post_init__(self):
        if self.initial_cwnd < 1 or self.initial_ssthresh < 2:
            raise ValueError("initial_cwnd must be >= 1 and initial_ssthresh >= 2")
        if not 0 < self.min_rto <= self.initial_rto <= self.max_rto:
            raise ValueError("need 0 < min_rto <= initial_rto <= max_rto")


@dataclass
class TcpSender:
    """Window-based sender for an infinite backlog.

    ``timer_deadline`` is the absolute RTO expiry (None when nothing is
    outstanding); ``timer_version`` changes whenever the timer is re-armed so
    stale timeout events can be ignored.
    """

    config: TcpConfig = field(default_factory=TcpConfig)

    def __post_init__(self):
        c = self.config
        self.cwnd = c.initial_cwnd
        self.ssthresh = c.initial_ssthresh
        self.state = SLOW_START
        self.rto = c.initial_rto
        self.srtt: float | None = None
        self.rttvar = 0.0
        self.next_seq = 0
        self.highest_acked = 0          # cumulative: every seq below is acknowledged
        self.dup_acks = 0
        self.recover = 0
        self.timer_deadline: float | None = None
        self.timer_version = 0
        self.sent_at: dict[int, float | None] = {}
        self.retransmissions = 0
        self.timeouts = 0
        self.fast_retransmits = 0

    @property
    def in_flight(self) -> int:
        return self.next_seq - self.highest_acked

    def _arm(self, now: float) -> None:
        self.timer_version += 1
        self.timer_deadline = now + self.rto if self.in_flight > 0 else None

    def _fill(self, now: float) -> list[int]:
        out = []
        while self.in_flight < int(self.cwnd):
            seq = self.next_seq
            self.sent_at[seq] = None if seq in self.sent_at else now
            out.append(seq)
            self.next_seq += 1
        if out and self.timer_deadline is None:
            self._arm(now)
        return out

    def _retransmit(self, seq: int, now: float) -> int:
        self.sent_at[seq] = None   # Karn: no RTT sample from a retransmitted segment
        self.retransmissions += 1
        return seq

    def _sample(self, rtt: float) -> None:
        if self.srtt is None:
            self.srtt, self.rttvar = rtt, rtt / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - rtt)
            self.srtt = 0.875 * self.srtt + 0.125 * rtt
        c = self.config
        self.rto = min(max(c.min_rto, self.srtt + 4 * self.rttvar), c.max_rto)

    def start(self, now: float) -> list[int]:
        return self._fill(now)

    def on_ack(self, ack: int, now: float) -> list[int]:
        """Process a cumulative ACK (next expected seq); return seqs to send."""
        out: list[int] = []
        if ack > self.highest_acked:
            newly = ack - self.highest_acked
            t0 = self.sent_at.get(ack - 1)
            if t0 is not None:
                self._sample(now - t0)
            for seq in range(self.highest_acked, ack):
                self.sent_at.pop(seq, None)
            self.highest_acked = ack
            if self.next_seq < ack:
                self.next_seq = ack
            if self.state == FAST_RECOVERY:
                if ack >= self.recover:
                    self.cwnd = self.ssthresh
                    self.state = CONGESTION_AVOIDANCE
                    self.dup_acks = 0
                else:
                    out.append(self._retransmit(ack, now))
                    self.cwnd = max(self.cwnd - newly + 1, 1.0)
            else:
                self.dup_acks = 0
                if self.cwnd < self.ssthresh:
                    self.cwnd += 1.0
                    self.state = SLOW_START if self.cwnd < self.ssthresh else CONGESTION_AVOIDANCE
                else:
                    self.cwnd += 1.0 / self.cwnd
                    self.state = CONGESTION_AVOIDANCE
            self._arm(now)
        elif ack == self.highest_acked and self.in_flight > 0:
            self.dup_acks += 1
            if self.state == FAST_RECOVERY:
                self.cwnd += 1.0
            elif self.dup_acks == self.config.dupack_threshold and ack >= self.recover:
                self.ssthresh = max(self.cwnd / 2, 2.0)
                self.recover = self.next_seq
                self.cwnd = self.ssthresh + self.config.dupack_threshold
                self.state = FAST_RECOVERY
                self.fast_retransmits += 1
                out.append(self._retransmit(ack, now))
        out.extend(self._fill(now))
        return out

    def on_timeout(self, now: float) -> list[int]:
        self.timeouts += 1
        self.ssthresh = max(self.in_flight / 2, 2.0)
        self.cwnd = 1.0
        self.state = SLOW_START
        self.dup_acks = 0
        self.recover = self.next_seq
        for seq in range(self.highest_acked, self.next_seq):
            self.sent_at[seq] = None
        self.next_seq = self.highest_acked
        self.rto = min(self.rto * 2, self.config.max_rto)
        self.timer_deadline = None
        out = self._fill(now)
        self.retransmissions += len(out)
        self._arm(now)
        return out


class TcpReceiver:
    """Cumulative-ACK receiver counting in-order delivered segments."""

    def __init__(self):
        self.expected = 0
        self._ahead: set[int] = set()
        self.delivered = 0
        self.duplicates = 0

    def on_data(self, seq: int) -> int:
        if seq < self.expected or seq in self._ahead:
            self.duplicates += 1
        elif seq == self.expected:
            self.expected += 1
            self.delivered += 1
            while self.expected in self._ahead:
                self._ahead.discard(self.expected)
                self.expected += 1
                self.delivered += 1
        else:
            self._ahead.add(seq)
        return self.expected


def optimal_step(price: float, rate_min: float, rate_max: float) -> float:
    """Log-utility rate: 1 / price, clamped."""
    if price < 0:
        raise ValueError("price feedback must be >= 0")
    if price == 0:
        return rate_max
    return min(max(1.0 / price, rate_min), rate_max)


class OptimalSource:
    """Paced source whose rate follows the path price (packets per second)."""

    def __init__(self, rate_min: float, rate_max: float):
        if not 0 < rate_min <= rate_max:
            raise ValueError("need 0 < rate_min <= rate_max")
        self.rate_min = rate_min
        self.rate_max = rate_max
        self.rate = rate_max
        self.next_seq = 0

    def step(self, price: float) -> tuple[int, float]:
        """Emit one packet; return its seq and the gap until the next one."""
        self.rate = optimal_step(price, self.rate_min, self.rate_max)
        seq = self.next_seq
        self.next_seq += 1
        return seq, 1.0 / self.rate


class CountingReceiver:
    """Receiver for the paced source: counts distinct delivered segments."""

    def __init__(self):
        self._seen: set[int] = set()
        self.duplicates = 0

    @property
    def delivered(self) -> int:
        return len(self._seen)

    def on_data(self, seq: int) -> None:
        if seq in self._seen:
            self.duplicates += 1
        self._seen.add(seq)
