"""Deterministic discrete-event network and clock.

One heap of (time, seqno) ordered events drives every node handler; ties
break on a global monotone sequence number, so identical inputs replay to
byte-identical traces. Sim time is integer microseconds. Message handling
itself takes zero time; scenarios that need a slow participant inject
production delay at the node level.

Channels are reliable: every scheduled delivery between two endpoints
happens exactly once, at send time plus the configured link latency.
Adversary hooks run before scheduling (outbound) and before dispatch
(inbound), so a strategy can only reshape its own node's traffic.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from fairchain.messages import SignedMessage


class SimTimeout(Exception):
    """Simulation hit max_sim_time; the partial trace is attached."""

    def __init__(self, trace: "Trace"):
        super().__init__("simulation exceeded max_sim_time")
        self.trace = trace


@dataclass(frozen=True)
class SimConfig:
    """Network-level knobs. Requires n >= 2f+3 and delta at least as large
    as the slowest link, so a missing delivery at the stall timer is
    genuinely missing and not merely late."""

    n: int
    f: int
    latency_us: int = 20_000
    latency_overrides: dict = field(default_factory=dict)  # (src, dst) -> us
    delta_us: int = 200_000
    seed: int = 0
    max_sim_time_us: int = 120_000_000

    def __post_init__(self) -> None:
        if self.n < 2 * self.f + 3:
            raise ValueError(
                "need n >= 2f+3 for accurate detection: n=%d f=%d" % (self.n, self.f)
            )
        slowest = max([self.latency_us, *self.latency_overrides.values()], default=self.latency_us)
        if self.delta_us < slowest:
            raise ValueError("delta must be an upper bound on link latency")

    def latency(self, src: int, dst: int) -> int:
        return self.latency_overrides.get((src, dst), self.latency_us)


# Actions a handler may return.


@dataclass(frozen=True)
class Send:
    dst: int
    msg: SignedMessage


@dataclass(frozen=True)
class SetTimer:
    delay: int
    tag: tuple


Action = object  # Send | SetTimer


class Handler(Protocol):
    node_id: int

    def on_start(self, now: int) -> list[Action]: ...

    def on_deliver(self, msg: SignedMessage, now: int) -> list[Action]: ...

    def on_timer(self, tag: tuple, now: int) -> list[Action]: ...


class Trace:
    """Append-only ordered record of everything that happened in a run."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def emit(self, t: int, kind: str, **fields) -> int:
        record = {"i": len(self.records), "t": t, "kind": kind}
        record.update(fields)
        self.records.append(record)
        return record["i"]

    def to_ndjson(self) -> str:
        return "\n".join(
            json.dumps(r, separators=(",", ":"), ensure_ascii=True) for r in self.records
        ) + "\n"

    @staticmethod
    def from_ndjson(text: str) -> "Trace":
        trace = Trace()
        for line in text.splitlines():
            if line.strip():
                trace.records.append(json.loads(line))
        return trace


OutboundHook = Callable[[int, list[Send], int], list[Send]]
InboundHook = Callable[[int, SignedMessage, int], bool]


class Network:
    """Event loop gluing node handlers together over simulated links."""

    def __init__(
        self,
        config: SimConfig,
        trace: Trace,
        outbound_hook: Optional[OutboundHook] = None,
        inbound_hook: Optional[InboundHook] = None,
    ):
        self.config = config
        self.trace = trace
        self.now = 0
        self._heap: list[tuple[int, int, str, tuple]] = []
        self._seqno = 0
        self._handlers: dict[int, Handler] = {}
        self._outbound = outbound_hook
        self._inbound = inbound_hook

    def add_node(self, handler: Handler) -> None:
        self._handlers[handler.node_id] = handler

    def _schedule(self, at: int, kind: str, payload: tuple) -> None:
        heapq.heappush(self._heap, (at, self._seqno, kind, payload))
        self._seqno += 1

    def send(self, src: int, dst: int, msg: SignedMessage, now: int) -> None:
        """Schedule exactly-once delivery. Self-sends are a programming error:
        a node's own broadcast is delivered to itself inside the node."""
        if src == dst:
            raise ValueError("self-loop sends are prohibited; node %d" % src)
        arrive = now + self.config.latency(src, dst)
        self.trace.emit(now, "send", src=src, dst=dst, **msg.summary())
        self._schedule(arrive, "deliver", (dst, src, msg))

    def _apply(self, node_id: int, actions: list[Action]) -> None:
        sends = [a for a in actions if isinstance(a, Send)]
        timers = [a for a in actions if isinstance(a, SetTimer)]
        if self._outbound is not None and sends:
            sends = self._outbound(node_id, sends, self.now)
        for action in sends:
            self.send(node_id, action.dst, action.msg, self.now)
        for timer in timers:
            self._schedule(self.now + timer.delay, "timer", (node_id, timer.tag))

    def run(self, stop_fn: Optional[Callable[[], bool]] = None) -> str:
        """Drive events until quiescence, the stop condition, or timeout.

        Returns "target" if stop_fn fired, "quiescent" if the event queue
        drained, and raises SimTimeout past max_sim_time.
        """
        for node_id in sorted(self._handlers):
            self._apply(node_id, self._handlers[node_id].on_start(self.now))
        if stop_fn is not None and stop_fn():
            return "target"
        while self._heap:
            at, _, kind, payload = heapq.heappop(self._heap)
            if at > self.config.max_sim_time_us:
                raise SimTimeout(self.trace)
            self.now = at
            if kind == "deliver":
                dst, src, msg = payload
                handler = self._handlers.get(dst)
                if handler is None:
                    continue
                if self._inbound is not None and not self._inbound(dst, msg, self.now):
                    self.trace.emit(self.now, "suppressed", dst=dst, **msg.summary())
                    continue
                self.trace.emit(self.now, "deliver", dst=dst, src=src, **msg.summary())
                self._apply(dst, handler.on_deliver(msg, self.now))
            else:
                owner, tag = payload
                handler = self._handlers.get(owner)
                if handler is None:
                    continue
                self._apply(owner, handler.on_timer(tag, self.now))
            if stop_fn is not None and stop_fn():
                return "target"
        return "quiescent"
