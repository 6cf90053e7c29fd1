"""Content management layer: sessions, metadata-driven decisions, flows.

The controller is a single logical state machine.  Inbound control
messages are processed one at a time, in arrival order; every outbound
message appears in the returned (destination, message) list, so a
replay of the same transcript produces byte-identical output.

Size provenance: a cache footprint is exact and wins over everything;
a Content-Length parsed at the ingress wins over the byte counter; the
counter estimate never overwrites either.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Sequence

from .metadata import MetadataStore, finalize_size_from_counter
from .netmodel import (
    Graph,
    NodeKind,
    Path,
    enumerate_paths,
    path_cost,
    retrieval_delay,
    select_min_cost_path,
)
from .protocol import (
    Action,
    ActionKind,
    CacheReport,
    Capability,
    FeaturesReply,
    FeaturesRequest,
    FiveTuple,
    FlowExpired,
    FlowMatch,
    FlowMod,
    Hello,
    Message,
    PacketIn,
    WILDCARD_NAME,
)

log = logging.getLogger(__name__)

# wire bytes of a full packet: max payload plus per-packet header overhead
WIRE_MTU_BYTES = 1500

# flow table priorities, lowest to highest
STANDING_PRIORITY = 1
FORWARD_PRIORITY = 10
FIREWALL_PRIORITY = 20

TE_MIN_COST_PATH = "min_cost_path"
TE_MIN_RETRIEVAL_DELAY = "min_retrieval_delay"

# provenance ranks; an update is applied only at equal or higher rank
_PROVENANCE_RANK = {"counter": 1, "dpi": 2, "footprint": 3}


class ControllerError(Exception):
    pass


class ConfigError(ControllerError, ValueError):
    """Controller config document is malformed or inconsistent."""


class UnknownElementError(ControllerError):
    """Message arrived from a node the topology does not declare."""


class NoReachableCacheError(ControllerError):
    """No candidate cache has a path for the requested operation."""


class UnknownSizeError(ControllerError):
    """Operation requires a stored size and none is known."""


_CONFIG_KEYS = {
    "elephant_threshold_bytes",
    "per_packet_overhead_bytes",
    "te_objective",
    "delay_bounds",
    "max_paths",
}


@dataclass
class ControllerConfig:
    elephant_threshold_bytes: int = 100_000
    per_packet_overhead_bytes: int = 40
    te_objective: str = TE_MIN_COST_PATH
    delay_bounds: dict[str, float] = field(default_factory=dict)  # media-type prefix -> seconds
    max_paths: int = 32

    def __post_init__(self):
        if self.elephant_threshold_bytes <= 0:
            raise ConfigError("elephant_threshold_bytes must be > 0")
        if self.per_packet_overhead_bytes < 0:
            raise ConfigError("per_packet_overhead_bytes must be >= 0")
        if self.te_objective not in (TE_MIN_COST_PATH, TE_MIN_RETRIEVAL_DELAY):
            raise ConfigError(f"unknown te_objective {self.te_objective!r}")
        if self.max_paths <= 0:
            raise ConfigError("max_paths must be > 0")
        for prefix, bound in self.delay_bounds.items():
            if not isinstance(prefix, str) or not prefix:
                raise ConfigError("delay_bounds keys must be non-empty strings")
            if not bound > 0:
                raise ConfigError(f"delay bound for {prefix!r} must be > 0")

    @classmethod
    def from_json(cls, document: str | bytes | Mapping) -> "ControllerConfig":
        if isinstance(document, (str, bytes)):
            try:
                doc = json.loads(document)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON: {exc}") from exc
        else:
            doc = dict(document)
        if not isinstance(doc, Mapping):
            raise ConfigError("controller config must be a JSON object")
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "delay_bounds" in kwargs:
            bounds = kwargs["delay_bounds"]
            if not isinstance(bounds, Mapping):
                raise ConfigError("delay_bounds must be an object")
            kwargs["delay_bounds"] = {str(k): float(v) for k, v in bounds.items()}
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "ControllerConfig":
        with open(path, "rb") as fh:
            return cls.from_json(fh.read())


class SessionState(Enum):
    HELLO_SEEN = "hello_seen"
    FEATURES_REQUESTED = "features_requested"
    READY = "ready"


@dataclass
class ElementSession:
    element: str
    datapath_id: int = 0
    capabilities: Capability = Capability(0)
    state: SessionState = SessionState.HELLO_SEEN


@dataclass(frozen=True)
class Decision:
    """Outcome of one content request.

    kind "miss": forward to ``origin``; ``cache``/``path`` describe where
    the incoming content will be stored.  kind "hit": redirect to
    ``cache``; ``path`` is the TE-selected path.  ``flow_mods`` carries
    every rule written, as (destination element, FlowMod).
    """

    kind: str  # "miss" | "hit"
    content_name: str
    origin: str | None = None
    cache: str | None = None
    path: Path | None = None
    size_bits_used: float = 0.0
    flow_mods: tuple[tuple[str, FlowMod], ...] = ()


def _reverse_tuple(t: FiveTuple) -> FiveTuple:
    """The response direction of a connection's 5-tuple."""
    return FiveTuple(
        src_ip=t.dst_ip,
        src_port=t.dst_port,
        dst_ip=t.src_ip,
        dst_port=t.src_port,
        protocol=t.protocol,
    )


@dataclass(frozen=True)
class EvictionPlan:
    names: tuple[str, ...]
    freed_bytes: int
    shortfall: bool  # total stock is smaller than what was asked for


def eviction_candidates(
    cache_contents: Sequence[tuple[str, int, int]], bytes_needed: int
) -> EvictionPlan:
    """Pick what to evict to free ``bytes_needed``.

    Contents are (name, size_bytes, popularity) triples.  Candidates are
    ranked by popularity per byte, ascending (cheapest value loss first);
    ties prefer the larger item, then name order.  Returns the shortest
    prefix of that ranking whose sizes sum to at least ``bytes_needed``;
    when the whole cache is too small, returns everything with the
    shortfall flag set.
    """
    if bytes_needed <= 0:
        raise ValueError(f"bytes_needed must be > 0, got {bytes_needed}")
    for name, size, popularity in cache_contents:
        if size <= 0:
            raise ValueError(f"item {name!r} has non-positive size {size}")
        if popularity < 0:
            raise ValueError(f"item {name!r} has negative popularity {popularity}")
    ranked = sorted(
        cache_contents,
        key=lambda item: (Fraction(item[2], item[1]), -item[1], item[0]),
    )
    chosen: list[str] = []
    freed = 0
    for name, size, _ in ranked:
        if freed >= bytes_needed:
            break
        chosen.append(name)
        freed += size
    return EvictionPlan(
        names=tuple(chosen), freed_bytes=freed, shortfall=freed < bytes_needed
    )


def select_path_with_delay_bound(
    paths: Sequence[Path], content_size_bits: float, bound: float
) -> Path:
    """Min-delay path among those meeting the bound, else lowest excess."""
    if not paths:
        raise ValueError("no candidate paths")
    if not bound > 0:
        raise ValueError(f"bound must be > 0, got {bound}")
    keyed = [(retrieval_delay(p, content_size_bits), p) for p in paths]
    within = [(d, p) for d, p in keyed if d <= bound]
    pool = within if within else [(d - bound, p) for d, p in keyed]
    return min(pool, key=lambda dp: (dp[0], len(dp[1]), dp[1].link_ids))[1]


class Controller:
    """Serialized message-driven controller over one topology snapshot."""

    def __init__(self, graph: Graph, config: ControllerConfig | None = None):
        self.graph = graph
        self.config = config or ControllerConfig()
        self.sessions: dict[str, ElementSession] = {}
        self.store = MetadataStore()
        self.size_provenance: dict[str, str] = {}
        self.ingress_of: dict[str, str] = {}  # content name -> ingress that saw it
        self.in_progress_writes: dict[str, int] = {}

    # -- session plumbing --------------------------------------------------

    def _ready(self, node_id: str) -> bool:
        session = self.sessions.get(node_id)
        return session is not None and session.state is SessionState.READY

    def ready_elements(self) -> list[str]:
        return sorted(n for n in self.sessions if self._ready(n))

    def _ready_caches(self) -> list[str]:
        return [c for c in self.graph.caches if self._ready(c)]

    def _node_kind(self, node_id: str) -> NodeKind:
        return self.graph.nodes[node_id].kind

    # -- size bookkeeping ---------------------------------------------------

    def _apply_size(self, name: str, size_bytes: int, provenance: str):
        rank = _PROVENANCE_RANK[provenance]
        current = _PROVENANCE_RANK.get(self.size_provenance.get(name, ""), 0)
        if rank >= current:
            self.store.put(name, size_bytes=size_bytes)
            self.size_provenance[name] = provenance
        else:
            self.store.put(name)  # keep the record, ignore the weaker size

    def _estimate_packets(self, counted_bytes: int) -> int:
        # the counter reports only bytes; assume full packets of one wire MTU
        return max(1, math.ceil(counted_bytes / WIRE_MTU_BYTES)) if counted_bytes else 0

    def overhead_allowance(self, size_bytes: int) -> int:
        """Header bytes a firewall budget must admit on top of the content."""
        payload_per_packet = WIRE_MTU_BYTES - self.config.per_packet_overhead_bytes
        if payload_per_packet <= 0:
            raise ConfigError("per_packet_overhead_bytes must be below the wire MTU")
        packets = math.ceil(size_bytes / payload_per_packet)
        return packets * self.config.per_packet_overhead_bytes

    # -- message handling ----------------------------------------------------

    def handle_message(self, source: str, msg: Message) -> list[tuple[str, Message]]:
        """Process one inbound message; returns outbound (destination, message)s."""
        if source not in self.graph.nodes:
            raise UnknownElementError(source)
        if isinstance(msg, Hello):
            return self._on_hello(source)
        if isinstance(msg, FeaturesReply):
            return self._on_features_reply(source, msg)

        if not self._ready(source):
            log.warning("dropping %s from %s: session not ready", type(msg).__name__, source)
            return []
        if isinstance(msg, PacketIn):
            return self._on_packet_in(source, msg)
        if isinstance(msg, FlowExpired):
            return self._on_flow_expired(source, msg)
        if isinstance(msg, CacheReport):
            return self._on_cache_report(source, msg)
        log.warning("dropping unexpected %s from %s", type(msg).__name__, source)
        return []

    def _on_hello(self, source: str) -> list[tuple[str, Message]]:
        session = self.sessions.get(source)
        if session is not None and session.state is not SessionState.HELLO_SEEN:
            log.warning("dropping HELLO from %s: session already %s", source, session.state.value)
            return []
        self.sessions[source] = ElementSession(element=source)
        self.sessions[source].state = SessionState.FEATURES_REQUESTED
        return [(source, FeaturesRequest())]

    def _on_features_reply(self, source: str, msg: FeaturesReply) -> list[tuple[str, Message]]:
        session = self.sessions.get(source)
        if session is None or session.state is not SessionState.FEATURES_REQUESTED:
            log.warning("dropping FEATURES_REPLY from %s: no pending request", source)
            return []
        session.datapath_id = msg.datapath_id
        session.capabilities = msg.capabilities
        session.state = SessionState.READY

        out: list[tuple[str, Message]] = []
        kind = self._node_kind(source)
        if kind is NodeKind.INGRESS_SWITCH and msg.capabilities & Capability.EXTRACT_METADATA:
            # standing rule: inspect everything, then forward as usual
            out.append(
                (
                    source,
                    FlowMod(
                        match=FlowMatch(content_name=WILDCARD_NAME),
                        priority=STANDING_PRIORITY,
                        actions=(
                            Action(ActionKind.EXTRACT_METADATA),
                            Action(ActionKind.NORMAL),
                        ),
                    ),
                )
            )
        if kind is NodeKind.CACHE and msg.capabilities & Capability.CACHE_CONTENT:
            # standing rule: keep a copy and report the footprint back
            out.append(
                (
                    source,
                    FlowMod(
                        match=FlowMatch(content_name=WILDCARD_NAME),
                        priority=STANDING_PRIORITY,
                        actions=(Action(ActionKind.CACHE),),
                    ),
                )
            )
        return out

    def _on_packet_in(self, source: str, msg: PacketIn) -> list[tuple[str, Message]]:
        name = msg.content_name
        if not name or name == WILDCARD_NAME:
            return []  # table-miss for unnamed traffic; nothing to record
        if msg.content_size > 0:
            self._apply_size(name, msg.content_size, "dpi")
        else:
            self.store.put(name)
        if self._node_kind(source) is NodeKind.INGRESS_SWITCH:
            self.ingress_of[name] = source
        return []

    def _on_flow_expired(self, source: str, msg: FlowExpired) -> list[tuple[str, Message]]:
        name = msg.match.content_name
        if not name or name == WILDCARD_NAME:
            return []  # tuple-only expiry carries no name to key the store
        packets = self._estimate_packets(msg.bytes_counted)
        try:
            size = finalize_size_from_counter(
                msg.bytes_counted, packets, self.config.per_packet_overhead_bytes
            )
        except ValueError as exc:
            log.warning("ignoring counter for %s: %s", name, exc)
            return []
        self._apply_size(name, size, "counter")
        return []

    def _on_cache_report(self, source: str, msg: CacheReport) -> list[tuple[str, Message]]:
        if self._node_kind(source) is not NodeKind.CACHE:
            log.warning("dropping CACHE_REPORT from non-cache %s", source)
            return []
        name = msg.content_name
        self._apply_size(name, msg.footprint_bytes, "footprint")
        self.store.put(name, cached_at=source)
        if self.in_progress_writes.get(source, 0) > 0:
            self.in_progress_writes[source] -= 1
        return []

    # -- path and cache selection ---------------------------------------------

    def _paths(self, src: str, dst: str) -> list[Path]:
        return enumerate_paths(self.graph, src, dst, max_paths=self.config.max_paths)

    def select_cache_for_storage(
        self, content_size_bits: float, candidate_caches: Sequence[str]
    ) -> tuple[str, Path]:
        """Cheapest (cache, ingress->cache path) by path cost.

        Cost ties prefer the cache with fewest in-progress writes, then
        the smaller cache id.
        """
        if not candidate_caches:
            raise NoReachableCacheError("no candidate caches")
        ingresses = self.graph.ingress_switches
        best: tuple | None = None
        for cache in sorted(candidate_caches):
            for ingress in ingresses:
                for path in self._paths(ingress, cache):
                    key = (
                        path_cost(path, content_size_bits),
                        self.in_progress_writes.get(cache, 0),
                        cache,
                        len(path),
                        path.link_ids,
                    )
                    if best is None or key < best[0]:
                        best = (key, cache, path)
        if best is None:
            raise NoReachableCacheError(
                f"no ingress->cache path to any of {sorted(candidate_caches)}"
            )
        return best[1], best[2]

    def select_cache_for_retrieval(
        self, content_size_bits: float, client: str, caches_holding: Sequence[str]
    ) -> tuple[str, Path]:
        """(cache, cache->client path) minimizing retrieval delay; ties by cache id."""
        if not caches_holding:
            raise NoReachableCacheError("no caches hold the content")
        best: tuple | None = None
        for cache in sorted(caches_holding):
            for path in self._paths(cache, client):
                key = (
                    retrieval_delay(path, content_size_bits),
                    cache,
                    len(path),
                    path.link_ids,
                )
                if best is None or key < best[0]:
                    best = (key, cache, path)
        if best is None:
            raise NoReachableCacheError(
                f"no cache->client path from any of {sorted(caches_holding)}"
            )
        return best[1], best[2]

    def install_firewall_flows(
        self,
        name: str,
        size_bytes: int,
        path: Path,
        overhead_allowance: int | None = None,
    ) -> list[tuple[str, FlowMod]]:
        """One terminating rule per switch on the path.

        The rule matches the content name itself, not the transfer's
        5-tuple, so packets with forged addresses still hit the expired
        entry and are dropped once the byte budget is spent.
        """
        if size_bytes <= 0:
            raise UnknownSizeError(f"size of {name!r} is not known; cannot set a byte budget")
        if overhead_allowance is None:
            overhead_allowance = self.overhead_allowance(size_bytes)
        until = size_bytes + overhead_allowance
        rule = FlowMod(
            match=FlowMatch(content_name=name),
            priority=FIREWALL_PRIORITY,
            actions=(Action(ActionKind.NORMAL),),
            until_byte_count=until,
        )
        switch_kinds = (NodeKind.SWITCH, NodeKind.INGRESS_SWITCH)
        return [
            (node, rule)
            for node in path.nodes
            if self._node_kind(node) in switch_kinds and self._ready(node)
        ]

    # -- request handling -------------------------------------------------------

    def handle_content_request(
        self, name: str, client: str, request_tuple: FiveTuple | None = None
    ) -> Decision:
        """Decide how to serve one named request from ``client``.

        ``request_tuple`` is the client's connection toward the origin,
        when the proxy knows it; transfer-scoped rules then match the
        response direction of that exact connection.
        """
        if client not in self.graph.nodes:
            raise UnknownElementError(client)
        record = self.store.record_access(name)

        ready_caches = self._ready_caches()
        holding = sorted(c for c in record.cached_at if c in ready_caches)
        if holding:
            return self._decide_hit(name, client, holding)
        return self._decide_miss(name, client, ready_caches, request_tuple)

    def _size_bits_for_te(self, name: str) -> float:
        record = self.store.get(name)
        size = record.size_bytes
        if size <= 0:
            # size not yet known: plan for an elephant rather than under-provision
            size = self.config.elephant_threshold_bytes
        return 8.0 * size

    def _origin_server(self) -> str:
        servers = self.graph.nodes_of_kind(NodeKind.SERVER)
        if not servers:
            raise ControllerError("topology declares no server")
        return servers[0]

    def _port_toward(self, node: str, link_id: str) -> int:
        # OUTPUT ports are indexes into the node's id-sorted out-link list
        for port, link in enumerate(self.graph.out_links(node)):
            if link.id == link_id:
                return port
        raise ControllerError(f"link {link_id!r} does not leave {node!r}")

    def _decide_miss(
        self,
        name: str,
        client: str,
        ready_caches: Sequence[str],
        request_tuple: FiveTuple | None,
    ) -> Decision:
        size_bits = self._size_bits_for_te(name)
        cache, storage_path = self.select_cache_for_storage(size_bits, ready_caches)
        self.in_progress_writes[cache] = self.in_progress_writes.get(cache, 0) + 1

        # these rules are scoped to the one transfer: content name plus
        # the response direction of the client's connection, when known
        match = FlowMatch(
            content_name=name,
            five_tuple=_reverse_tuple(request_tuple) if request_tuple else None,
        )
        flow_mods: list[tuple[str, FlowMod]] = []
        # one forwarding rule per switch on the storage path: the ingress
        # inspects, forwards toward the client as usual, and forks a copy
        # toward the cache; interior switches just pass the fork along
        switch_kinds = (NodeKind.SWITCH, NodeKind.INGRESS_SWITCH)
        for node, link in zip(storage_path.nodes, storage_path.links):
            if self._node_kind(node) not in switch_kinds or not self._ready(node):
                continue
            fork = Action(ActionKind.OUTPUT, self._port_toward(node, link.id))
            if node == storage_path.src:
                actions = (
                    Action(ActionKind.EXTRACT_METADATA),
                    Action(ActionKind.NORMAL),
                    fork,
                )
            else:
                actions = (fork,)
            flow_mods.append(
                (
                    node,
                    FlowMod(match=match, priority=FORWARD_PRIORITY, actions=actions),
                )
            )
        return Decision(
            kind="miss",
            content_name=name,
            origin=self._origin_server(),
            cache=cache,
            path=storage_path,
            size_bits_used=size_bits,
            flow_mods=tuple(flow_mods),
        )

    def _delay_bound_for(self, name: str) -> float | None:
        mime = self.store.get(name).mime_type
        if not mime:
            return None
        for prefix in sorted(self.config.delay_bounds):
            if mime.startswith(prefix):
                return self.config.delay_bounds[prefix]
        return None

    def _decide_hit(self, name: str, client: str, holding: Sequence[str]) -> Decision:
        size_bits = self._size_bits_for_te(name)

        if self.config.te_objective == TE_MIN_RETRIEVAL_DELAY:
            cache, te_path = self.select_cache_for_retrieval(size_bits, client, holding)
        else:
            # ingress -> cache path per the size-aware cost; anchor on the
            # ingress that saw the content, else consider every ingress
            ingress = self.ingress_of.get(name)
            ingresses = [ingress] if ingress else self.graph.ingress_switches
            candidates: list[Path] = []
            for ing in ingresses:
                for cache in holding:
                    candidates.extend(self._paths(ing, cache))
            if not candidates:
                raise NoReachableCacheError(
                    f"no ingress->cache path for {name!r} among {list(holding)}"
                )
            bound = self._delay_bound_for(name)
            if bound is not None:
                within = [
                    p for p in candidates if retrieval_delay(p, size_bits) <= bound
                ]
                if within:
                    te_path = select_min_cost_path(within, size_bits)
                else:
                    te_path = select_path_with_delay_bound(candidates, size_bits, bound)
            else:
                te_path = select_min_cost_path(candidates, size_bits)
            cache = te_path.dst

        size_bytes = self.store.get(name).size_bytes
        if size_bytes > 0:
            flow_mods = self.install_firewall_flows(name, size_bytes, te_path)
        else:
            # size still unknown: forward without a byte budget
            rule = FlowMod(
                match=FlowMatch(content_name=name),
                priority=FORWARD_PRIORITY,
                actions=(Action(ActionKind.NORMAL),),
            )
            switch_kinds = (NodeKind.SWITCH, NodeKind.INGRESS_SWITCH)
            flow_mods = [
                (node, rule)
                for node in te_path.nodes
                if self._node_kind(node) in switch_kinds and self._ready(node)
            ]
        return Decision(
            kind="hit",
            content_name=name,
            cache=cache,
            path=te_path,
            size_bits_used=size_bits,
            flow_mods=tuple(flow_mods),
        )

    # -- client attachment (transparent proxying) -------------------------------

    def redirect_client_flows(
        self, switch: str, client_tuple: FiveTuple, proxy: str
    ) -> list[tuple[str, FlowMod]]:
        """Rules steering a client's connection to a proxy.

        Written when a switch reports the first packets of a client
        connection; afterwards the client talks to the proxy without
        knowing it.
        """
        if not self._ready(switch):
            return []
        paths = self._paths(switch, proxy)
        if not paths:
            return []
        first_hop = paths[0].links[0]
        rule = FlowMod(
            match=FlowMatch(five_tuple=client_tuple),
            priority=FORWARD_PRIORITY,
            actions=(Action(ActionKind.OUTPUT, self._port_toward(switch, first_hop.id)),),
        )
        return [(switch, rule)]
