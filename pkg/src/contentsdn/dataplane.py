"""Simulated forwarding elements: switch, cache, proxy.

Each element is a single-threaded state machine that consumes simulated
packets and control messages and emits control messages back.  A switch
enforces flow rules byte-exactly: when a rule carries a byte budget
(until_byte_count), forwarding is truncated mid-packet at the budget,
the rule is marked expired exactly once, and later packets matching
only expired rules are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .metadata import HeadParseError, parse_http_response_head
from .protocol import (
    ActionKind,
    CacheReport,
    FiveTuple,
    FlowExpired,
    FlowMatch,
    FlowMod,
    Message,
    PacketIn,
    WILDCARD_NAME,
)


@dataclass(frozen=True)
class SimPacket:
    """One simulated packet: a 5-tuple, a content-name tag, and sizes.

    ``payload_len`` is what a byte counter sees on the wire.
    ``http_head`` is set on the packet carrying the start of an HTTP
    response, for elements configured to inspect it.
    """

    five_tuple: FiveTuple
    content_name: str = ""
    payload_len: int = 0
    http_head: bytes | None = None

    def __post_init__(self):
        if self.payload_len < 0:
            raise ValueError("payload_len must be >= 0")


def match_packet(match: FlowMatch, packet: SimPacket) -> bool:
    """AND over the match's present fields; the wildcard name matches all."""
    if match.content_name is not None and match.content_name != WILDCARD_NAME:
        if match.content_name != packet.content_name:
            return False
    if match.five_tuple is not None and match.five_tuple != packet.five_tuple:
        return False
    return True


@dataclass
class FlowEntry:
    rule: FlowMod
    byte_counter: int = 0
    packet_counter: int = 0
    expired: bool = False


class Verdict(Enum):
    FORWARDED = "forwarded"
    DROPPED = "dropped"
    TABLE_MISS = "table_miss"


@dataclass
class SwitchResult:
    verdict: Verdict
    forwarded_bytes: int = 0
    counted_bytes: int = 0  # what the entry's byte counter admitted of this packet
    output_ports: tuple[int, ...] = ()  # explicit OUTPUT forks taken
    cache_copy: bool = False  # a CACHE action kept a copy
    messages: list[Message] = field(default_factory=list)
    entry: FlowEntry | None = None


class Switch:
    """A flow-table forwarding element."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self.table: list[FlowEntry] = []

    def install(self, rule: FlowMod) -> FlowEntry:
        entry = FlowEntry(rule=rule)
        self.table.append(entry)
        return entry

    def _lookup(self, packet: SimPacket) -> tuple[FlowEntry | None, bool]:
        """Best live entry for the packet, plus whether an expired one matched.

        Highest priority wins; among equal priorities the earliest
        installed entry wins (table order is insertion order).
        """
        live: FlowEntry | None = None
        saw_expired = False
        for entry in self.table:
            if not match_packet(entry.rule.match, packet):
                continue
            if entry.expired:
                saw_expired = True
            elif live is None or entry.rule.priority > live.rule.priority:
                live = entry
        return live, saw_expired

    def process(self, packet: SimPacket) -> SwitchResult:
        """Run one packet through the table and execute the matched actions."""
        entry, saw_expired = self._lookup(packet)
        if entry is None:
            if saw_expired:
                # the flow's byte budget is spent; nothing more passes
                return SwitchResult(verdict=Verdict.DROPPED)
            miss = PacketIn(
                content_name=packet.content_name,
                content_size=0,
                src_ip=packet.five_tuple.src_ip,
                src_port=packet.five_tuple.src_port,
                dst_ip=packet.five_tuple.dst_ip,
                dst_port=packet.five_tuple.dst_port,
            )
            return SwitchResult(verdict=Verdict.TABLE_MISS, messages=[miss])

        entry.packet_counter += 1
        until = entry.rule.until_byte_count
        offered = packet.payload_len
        messages: list[Message] = []
        if until > 0 and entry.byte_counter + offered >= until:
            # crossing the budget: count and forward only up to it
            countable = until - entry.byte_counter
            entry.byte_counter = until
            entry.expired = True
            messages.append(
                FlowExpired(match=entry.rule.match, bytes_counted=entry.byte_counter)
            )
        else:
            countable = offered
            entry.byte_counter += offered

        forwarded = 0
        output_ports: list[int] = []
        cache_copy = False
        dropped = False
        for action in entry.rule.actions:
            if action.kind is ActionKind.DROP:
                dropped = True
                break  # discard: later actions never run
            if action.kind is ActionKind.EXTRACT_METADATA:
                if packet.http_head is not None:
                    try:
                        length, _mime = parse_http_response_head(packet.http_head)
                    except HeadParseError:
                        pass  # not parseable (e.g. chunked); counters still run
                    else:
                        messages.append(
                            PacketIn(
                                content_name=packet.content_name,
                                content_size=length,
                                src_ip=packet.five_tuple.src_ip,
                                src_port=packet.five_tuple.src_port,
                                dst_ip=packet.five_tuple.dst_ip,
                                dst_port=packet.five_tuple.dst_port,
                            )
                        )
            elif action.kind is ActionKind.NORMAL:
                forwarded = countable
            elif action.kind is ActionKind.OUTPUT:
                forwarded = countable
                output_ports.append(action.port)
            elif action.kind is ActionKind.CACHE:
                cache_copy = True

        verdict = Verdict.DROPPED if dropped or forwarded == 0 else Verdict.FORWARDED
        if dropped:
            forwarded = 0
            output_ports = []
            cache_copy = False
        return SwitchResult(
            verdict=verdict,
            forwarded_bytes=forwarded,
            counted_bytes=countable,
            output_ports=tuple(output_ports),
            cache_copy=cache_copy,
            messages=messages,
            entry=entry,
        )


class CacheRejected(Exception):
    """Store refused: even evicting everything would not make room."""


class Cache:
    """Content store with a hard capacity and footprint reporting.

    When a store would overflow, the cache asks the supplied eviction
    planner (the controller's policy) what to remove; a plan that cannot
    free enough space rejects the store and the capacity invariant holds.
    """

    def __init__(
        self,
        node_id: str,
        capacity_bytes: int,
        eviction_planner: Callable[[list[tuple[str, int, int]], int], Sequence[str]] | None = None,
    ):
        if capacity_bytes <= 0:
            raise ValueError("capacity_bytes must be > 0")
        self.node_id = node_id
        self.capacity_bytes = capacity_bytes
        self.eviction_planner = eviction_planner
        self.stored: dict[str, int] = {}
        self.popularity: dict[str, int] = {}
        self.evicted_log: list[str] = []

    @property
    def used_bytes(self) -> int:
        return sum(self.stored.values())

    def record_hit(self, name: str):
        if name in self.stored:
            self.popularity[name] = self.popularity.get(name, 0) + 1

    def contents(self) -> list[tuple[str, int, int]]:
        return [
            (name, size, self.popularity.get(name, 0))
            for name, size in sorted(self.stored.items())
        ]

    def store(self, name: str, size_bytes: int) -> list[Message]:
        """Keep a completed object; returns the footprint report."""
        if size_bytes <= 0:
            raise ValueError("size_bytes must be > 0")
        if size_bytes > self.capacity_bytes:
            raise CacheRejected(
                f"{name!r} ({size_bytes} B) exceeds cache capacity {self.capacity_bytes} B"
            )
        old = self.stored.pop(name, None)
        deficit = size_bytes - (self.capacity_bytes - self.used_bytes)
        if deficit > 0:
            victims = self._plan_eviction(deficit)
            freed = sum(self.stored[v] for v in victims)
            if freed < deficit:
                if old is not None:
                    self.stored[name] = old
                raise CacheRejected(
                    f"eviction plan frees {freed} B but {deficit} B are needed"
                )
            for victim in victims:
                del self.stored[victim]
                self.popularity.pop(victim, None)
                self.evicted_log.append(victim)
        self.stored[name] = size_bytes
        assert self.used_bytes <= self.capacity_bytes
        return [CacheReport(content_name=name, footprint_bytes=size_bytes)]

    def _plan_eviction(self, deficit: int) -> list[str]:
        if self.eviction_planner is None:
            raise CacheRejected("cache is full and no eviction planner is configured")
        plan = list(self.eviction_planner(self.contents(), deficit))
        unknown = [v for v in plan if v not in self.stored]
        if unknown:
            raise CacheRejected(f"eviction plan names unknown contents {unknown}")
        return plan

    def footprint(self, name: str) -> int:
        return self.stored[name]


@dataclass
class ProxyOutcome:
    name: str
    client: str
    target_kind: str  # "origin" | "cache"
    target: str | None
    decision: object | None  # the controller's Decision, when one arrived


class Proxy:
    """Demultiplexes client requests by asking the controller.

    The controller answers with a Decision (duck-typed: ``kind`` is
    "miss" or "hit").  No answer within the query timeout fails open:
    the request goes to the origin unoptimized rather than stalling.
    """

    def __init__(self, node_id: str, query: Callable[[str, str], object | None]):
        self.node_id = node_id
        self.query = query

    def handle_get(self, name: str, client: str) -> ProxyOutcome:
        decision = self.query(name, client)
        if decision is None:  # timeout: fail open toward the origin
            return ProxyOutcome(
                name=name, client=client, target_kind="origin", target=None, decision=None
            )
        if decision.kind == "hit":
            return ProxyOutcome(
                name=name,
                client=client,
                target_kind="cache",
                target=decision.cache,
                decision=decision,
            )
        return ProxyOutcome(
            name=name,
            client=client,
            target_kind="origin",
            target=decision.origin,
            decision=decision,
        )
