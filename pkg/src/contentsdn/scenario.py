"""End-to-end request flow on a topology: boot, miss, cache, hit.

The engine drives real elements (switches, a cache, a proxy) and the
controller through the full sequence: handshake and standing flows,
a client attaching and being transparently proxied, a first request
that misses and pulls the content from the origin while an on-path
copy is forked to a cache, the footprint report, and a second request
served entirely from the cache over a size-aware path with terminating
byte budgets on every switch.

Every control message crosses the wire codec both ways, and every
claim the run makes is recorded as a transcript row
{step, actor, message_type, assertion, pass}.  The run is free of
randomness: same topology and config, same transcript.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .controller import (
    Controller,
    ControllerConfig,
    WIRE_MTU_BYTES,
    eviction_candidates,
)
from .dataplane import Cache, Proxy, SimPacket, Switch, Verdict
from .netmodel import Graph, NodeKind, enumerate_paths, select_min_cost_path
from .protocol import (
    ActionKind,
    CacheReport,
    Capability,
    FeaturesReply,
    FeaturesRequest,
    FiveTuple,
    FlowExpired,
    FlowMod,
    Hello,
    Message,
    PacketIn,
    decode,
    encode,
)

DEFAULT_CONTENT_NAME = "video.example/clips/intro.mp4"
DEFAULT_CONTENT_SIZE = 1_000_000
DEFAULT_CACHE_CAPACITY_BYTES = 100_000_000

_HTTP_PORT = 80
_CLIENT_PORT_MISS = 49152
_CLIENT_PORT_HIT = 49153
_TCP = 6

_WIRE_NAMES = {
    Hello: "HELLO",
    FeaturesRequest: "FEATURES_REQUEST",
    FeaturesReply: "FEATURES_REPLY",
    FlowMod: "FLOW_MOD",
    PacketIn: "PACKET_IN",
    FlowExpired: "FLOW_EXPIRED",
    CacheReport: "CACHE_REPORT",
}


class ScenarioError(Exception):
    """The topology or config cannot support the scenario (usage error)."""


@dataclass
class TranscriptEntry:
    step: int
    actor: str
    message_type: str
    assertion: str
    ok: bool

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "actor": self.actor,
            "message_type": self.message_type,
            "assertion": self.assertion,
            "pass": self.ok,
        }


class ScenarioEngine:
    """One deterministic run of the full request flow."""

    def __init__(
        self,
        graph: Graph,
        config: ControllerConfig | None = None,
        content_name: str = DEFAULT_CONTENT_NAME,
        content_size: int = DEFAULT_CONTENT_SIZE,
    ):
        self.graph = graph
        self.config = config or ControllerConfig()
        self.content_name = content_name
        self.content_size = content_size

        required = {
            NodeKind.INGRESS_SWITCH: "ingress switch",
            NodeKind.CACHE: "cache",
            NodeKind.PROXY: "proxy",
            NodeKind.CLIENT: "client",
            NodeKind.SERVER: "server",
        }
        for kind, label in required.items():
            if not graph.nodes_of_kind(kind):
                raise ScenarioError(f"topology declares no {label}")

        self.controller = Controller(graph, self.config)
        table_kinds = (NodeKind.SWITCH, NodeKind.INGRESS_SWITCH, NodeKind.CACHE)
        self.switches = {
            n.id: Switch(n.id) for n in graph.nodes.values() if n.kind in table_kinds
        }
        planner = lambda contents, needed: eviction_candidates(contents, needed).names
        self.caches = {
            c: Cache(c, DEFAULT_CACHE_CAPACITY_BYTES, eviction_planner=planner)
            for c in graph.caches
        }
        self.proxy_node = graph.nodes_of_kind(NodeKind.PROXY)[0]
        self.client = graph.nodes_of_kind(NodeKind.CLIENT)[0]
        self.origin = graph.nodes_of_kind(NodeKind.SERVER)[0]
        plain_switches = graph.nodes_of_kind(NodeKind.SWITCH)
        self.attach_switch = plain_switches[0] if plain_switches else graph.ingress_switches[0]

        self.ip = {node: f"10.0.0.{i + 1}" for i, node in enumerate(sorted(graph.nodes))}
        self.mss = WIRE_MTU_BYTES - self.config.per_packet_overhead_bytes
        if self.mss <= 0:
            raise ScenarioError("per-packet overhead leaves no payload per packet")

        self.transcript: list[TranscriptEntry] = []
        self.ok = True
        self.origin_tx_bytes = 0
        self.client_rx_bytes = 0
        self.assembly: dict[tuple[str, str], int] = {}  # (cache, name) -> bytes
        self.flow_expired_count: dict[str, int] = {}
        self._current_request_tuple: FiveTuple | None = None

        self.proxy = Proxy(self.proxy_node, self._proxy_query)

    # -- transcript helpers -------------------------------------------------

    def _log(self, step: int, actor: str, message_type: str, assertion: str, ok: bool):
        self.transcript.append(TranscriptEntry(step, actor, message_type, assertion, ok))
        if not ok:
            self.ok = False

    def _assert(self, step: int, actor: str, assertion: str, ok: bool):
        self._log(step, actor, "-", assertion, ok)

    def first_failure(self) -> str | None:
        for entry in self.transcript:
            if not entry.ok:
                return entry.assertion
        return None

    def transcript_json(self) -> str:
        return json.dumps([e.to_json_dict() for e in self.transcript], indent=2)

    # -- control channel ----------------------------------------------------

    def _roundtrip(self, msg: Message) -> tuple[Message, bool]:
        frame = encode(msg)
        decoded, consumed = decode(frame)
        return decoded, (decoded == msg and consumed == len(frame))

    def _to_controller(self, step: int, source: str, msg: Message) -> None:
        decoded, wire_ok = self._roundtrip(msg)
        self._log(step, source, _WIRE_NAMES[type(msg)], "control frame round-trips", wire_ok)
        if isinstance(msg, FlowExpired):
            self.flow_expired_count[source] = self.flow_expired_count.get(source, 0) + 1
        for dst, reply in self.controller.handle_message(source, decoded):
            self._from_controller(step, dst, reply)

    def _from_controller(self, step: int, dst: str, msg: Message) -> None:
        decoded, wire_ok = self._roundtrip(msg)
        self._log(step, "controller", _WIRE_NAMES[type(msg)], "control frame round-trips", wire_ok)
        if isinstance(decoded, FlowMod) and dst in self.switches:
            self.switches[dst].install(decoded)
        # FEATURES_REQUEST needs no engine-side state: the boot loop answers it

    # -- packet plumbing -----------------------------------------------------

    def _port_link(self, node: str, port: int):
        links = self.graph.out_links(node)
        if port >= len(links):
            raise ScenarioError(f"{node!r} has no port {port}")
        return links[port]

    def _deliver(self, step: int, node: str, packet: SimPacket, chunk: int, route: list[str]):
        """Process a packet at ``node`` and propagate per the verdict.

        ``route`` is the remaining downstream hop list used when the
        matched rule says to forward normally.
        """
        if node == self.client:
            self.client_rx_bytes += chunk
            return
        if node not in self.switches:
            if route:  # transparent relay (the proxy)
                self._deliver(step, route[0], packet, chunk, route[1:])
            return

        switch = self.switches[node]
        result = switch.process(packet)
        for msg in result.messages:
            self._to_controller(step, node, msg)
        if result.verdict is not Verdict.FORWARDED and not result.cache_copy:
            return

        # mid-packet truncation shrinks the content that actually passed
        if result.counted_bytes < packet.payload_len:
            passed = max(0, result.counted_bytes - self.config.per_packet_overhead_bytes)
        else:
            passed = chunk

        if result.cache_copy and node in self.caches:
            key = (node, packet.content_name)
            self.assembly[key] = self.assembly.get(key, 0) + passed
        forward_normally = result.entry is not None and any(
            a.kind is ActionKind.NORMAL for a in result.entry.rule.actions
        )
        for port in result.output_ports:
            link = self._port_link(node, port)
            self._deliver(step, link.dst, packet, passed, [])
        if forward_normally and route:
            self._deliver(step, route[0], packet, passed, route[1:])

    def _content_packets(self, src_ip: str, src_port: int, dst_ip: str, dst_port: int):
        """(content_chunk, packet) pairs for one full transfer.

        ``payload_len`` is wire bytes: the chunk plus per-packet header
        overhead.  The first packet carries the HTTP response head (the
        head itself is metadata here and adds no wire bytes).
        """
        head = (
            f"HTTP/1.1 200 OK\r\n"
            f"Content-Length: {self.content_size}\r\n"
            f"Content-Type: video/mp4\r\n\r\n"
        ).encode("ascii")
        tup = FiveTuple(src_ip, src_port, dst_ip, dst_port, _TCP)
        remaining = self.content_size
        first = True
        while remaining > 0:
            chunk = min(self.mss, remaining)
            remaining -= chunk
            yield chunk, SimPacket(
                five_tuple=tup,
                content_name=self.content_name,
                payload_len=chunk + self.config.per_packet_overhead_bytes,
                http_head=head if first else None,
            )
            first = False

    def _proxy_query(self, name: str, client: str):
        return self.controller.handle_content_request(
            name, client, request_tuple=self._current_request_tuple
        )

    def _route_to_client(self, from_node: str) -> list[str]:
        paths = enumerate_paths(self.graph, from_node, self.client, self.config.max_paths)
        if not paths:
            raise ScenarioError(f"no path from {from_node!r} to the client")
        return list(paths[0].nodes[1:])

    def expected_until(self) -> int:
        packets = math.ceil(self.content_size / self.mss)
        return self.content_size + packets * self.config.per_packet_overhead_bytes

    # -- the flow --------------------------------------------------------------

    def run(self) -> bool:
        self._boot()
        self._attach_client(step=4, client_port=_CLIENT_PORT_MISS)
        decision = self._first_request()
        self._stream_from_origin(decision)
        self._report_cache(decision)
        self._second_request()
        return self.ok

    def _boot(self):
        # steps 1-3: elements come up, announce capabilities, standing flows
        caps_by_kind = {
            NodeKind.INGRESS_SWITCH: Capability.EXTRACT_METADATA,
            NodeKind.CACHE: Capability.CACHE_CONTENT,
            NodeKind.PROXY: Capability.PROXY_CONTENT,
            NodeKind.SWITCH: Capability(0),
        }
        elements = sorted(
            n.id for n in self.graph.nodes.values() if n.kind in caps_by_kind
        )
        for index, element in enumerate(elements):
            self._to_controller(1, element, Hello())
            caps = caps_by_kind[self.graph.nodes[element].kind]
            self._to_controller(2, element, FeaturesReply(datapath_id=index + 1, capabilities=caps))
        self._assert(
            2,
            "controller",
            "all element sessions are ready after the handshake",
            self.controller.ready_elements() == elements,
        )
        for ingress in self.graph.ingress_switches:
            table = self.switches[ingress].table
            ok = any(
                e.rule.match.content_name == "*"
                and tuple(a.kind for a in e.rule.actions)
                == (ActionKind.EXTRACT_METADATA, ActionKind.NORMAL)
                for e in table
            )
            self._assert(3, ingress, "standing rule inspects then forwards every packet", ok)
        for cache in self.graph.caches:
            ok = any(
                e.rule.match.content_name == "*"
                and tuple(a.kind for a in e.rule.actions) == (ActionKind.CACHE,)
                for e in self.switches[cache].table
            )
            self._assert(3, cache, "standing rule keeps and reports content", ok)

    def _attach_client(self, step: int, client_port: int) -> FiveTuple:
        # steps 4-5: connection setup packets miss, the controller steers
        # the client's connection to the proxy
        redirect_step = 5 if step == 4 else step
        tup = FiveTuple(self.ip[self.client], client_port, self.ip[self.origin], _HTTP_PORT, _TCP)
        self._current_request_tuple = tup
        syn = SimPacket(five_tuple=tup, payload_len=self.config.per_packet_overhead_bytes)
        result = self.switches[self.attach_switch].process(syn)
        for msg in result.messages:
            self._to_controller(step, self.attach_switch, msg)
        self._assert(
            step,
            self.attach_switch,
            "connection setup packet is sent to the controller",
            result.verdict is Verdict.TABLE_MISS,
        )
        for dst, rule in self.controller.redirect_client_flows(
            self.attach_switch, tup, self.proxy_node
        ):
            self._from_controller(redirect_step, dst, rule)
        retry = self.switches[self.attach_switch].process(syn)
        self._assert(
            redirect_step,
            self.attach_switch,
            "client connection is transparently steered to the proxy",
            retry.verdict is Verdict.FORWARDED,
        )
        return tup

    def _first_request(self):
        # steps 6-7: proxy asks, the answer is a miss, request goes upstream
        outcome = self.proxy.handle_get(self.content_name, self.client)
        decision = outcome.decision
        self._assert(6, self.proxy_node, "first request is a cache miss", decision.kind == "miss")
        self._assert(
            7,
            self.proxy_node,
            "miss is forwarded to the origin server",
            outcome.target_kind == "origin" and outcome.target == self.origin,
        )
        for dst, rule in decision.flow_mods:
            self._from_controller(7, dst, rule)
        return decision

    def _stream_from_origin(self, decision):
        # steps 8-9: content flows origin -> ingress -> client, with an
        # on-path fork toward the selected cache
        ingress = decision.path.src
        route = self._route_to_client(ingress)
        first = True
        for chunk, packet in self._content_packets(
            self.ip[self.origin], _HTTP_PORT, self.ip[self.client], _CLIENT_PORT_MISS
        ):
            self.origin_tx_bytes += packet.payload_len
            self._deliver(8, ingress, packet, chunk, route)
            if first:
                record_size = (
                    self.controller.store.get(self.content_name).size_bytes
                    if self.content_name in self.controller.store
                    else 0
                )
                self._assert(
                    8,
                    ingress,
                    "parsed Content-Length reaches the metadata store",
                    record_size == self.content_size,
                )
                first = False
        self._assert(
            9,
            decision.cache,
            "forked copy of the full content reaches the cache",
            self.assembly.get((decision.cache, self.content_name), 0) == self.content_size,
        )
        self._assert(
            9,
            self.client,
            "first transfer reaches the client in full",
            self.client_rx_bytes == self.content_size,
        )

    def _report_cache(self, decision):
        # step 10: the cache stores the object and reports its footprint
        cache = decision.cache
        size = self.assembly.get((cache, self.content_name), 0)
        for msg in self.caches[cache].store(self.content_name, size):
            self._to_controller(10, cache, msg)
        record = self.controller.store.get(self.content_name)
        self._assert(
            10,
            cache,
            "footprint report pins the stored size and location",
            record.size_bytes == self.content_size and record.cached_at == {cache},
        )

    def _second_request(self):
        # step 11: the same name again: redirect to the cache, size-aware
        # path, byte budgets on every switch, origin stays idle
        origin_before = self.origin_tx_bytes
        client_before = self.client_rx_bytes
        tup = self._attach_client(step=11, client_port=_CLIENT_PORT_HIT)

        outcome = self.proxy.handle_get(self.content_name, self.client)
        decision = outcome.decision
        self._assert(
            11,
            self.proxy_node,
            "second request is a hit redirected to the cache",
            decision.kind == "hit" and outcome.target_kind == "cache",
        )

        # the controller's path must equal a fresh evaluation of the
        # size-aware cost over every ingress-to-cache candidate
        holding = sorted(self.controller.store.get(self.content_name).cached_at)
        ingress = self.controller.ingress_of.get(self.content_name)
        ingresses = [ingress] if ingress else self.graph.ingress_switches
        candidates = [
            p
            for ing in ingresses
            for c in holding
            for p in enumerate_paths(self.graph, ing, c, self.config.max_paths)
        ]
        oracle = select_min_cost_path(candidates, 8.0 * self.content_size)
        self._assert(
            11,
            "controller",
            "hit path equals the size-aware minimum-cost evaluation",
            decision.path is not None and decision.path.link_ids == oracle.link_ids,
        )

        until = self.expected_until()
        fw_switches = sorted({dst for dst, _ in decision.flow_mods})
        budgets_ok = bool(decision.flow_mods) and all(
            rule.until_byte_count == until for _, rule in decision.flow_mods
        )
        self._assert(
            11,
            "controller",
            "terminating rules carry the exact byte budget on every path switch",
            budgets_ok,
        )
        for dst, rule in decision.flow_mods:
            self._from_controller(11, dst, rule)

        cache = decision.cache
        delivery_hops = list(reversed(decision.path.nodes))[1:]  # cache is the sender
        route = delivery_hops + self._route_to_client(delivery_hops[-1] if delivery_hops else cache)
        for chunk, packet in self._content_packets(
            self.ip[cache], _HTTP_PORT, self.ip[self.client], _CLIENT_PORT_HIT
        ):
            self._deliver(11, route[0], packet, chunk, route[1:])

        self._assert(
            11,
            self.origin,
            "origin sends zero bytes for the second request",
            self.origin_tx_bytes == origin_before,
        )
        self._assert(
            11,
            self.client,
            "second transfer reaches the client in full from the cache",
            self.client_rx_bytes - client_before == self.content_size,
        )
        for sw in fw_switches:
            entry = next(
                (
                    e
                    for e in self.switches[sw].table
                    if e.rule.until_byte_count == until
                    and e.rule.match.content_name == self.content_name
                ),
                None,
            )
            ok = (
                entry is not None
                and entry.expired
                and entry.byte_counter == until
                and self.flow_expired_count.get(sw, 0) == 1
            )
            self._assert(11, sw, "byte budget is spent exactly, with one expiry report", ok)

        spoofed = SimPacket(
            five_tuple=FiveTuple("192.0.2.66", _HTTP_PORT, self.ip[self.client], _CLIENT_PORT_HIT, _TCP),
            content_name=self.content_name,
            payload_len=WIRE_MTU_BYTES,
        )
        first_switch = next((n for n in delivery_hops if n in self.switches), None)
        dropped = (
            first_switch is not None
            and self.switches[first_switch].process(spoofed).verdict is Verdict.DROPPED
        )
        self._assert(
            11,
            first_switch or cache,
            "post-budget packet with a forged source is dropped",
            dropped,
        )
        self._assert(
            11,
            "controller",
            "expiry counters agree with the known size after correction",
            self.controller.store.get(self.content_name).size_bytes == self.content_size,
        )


def run_scenario(
    graph: Graph, config: ControllerConfig | None = None
) -> tuple[list[dict], bool, str | None]:
    """Run the flow; returns (transcript rows, all assertions passed, first failure)."""
    engine = ScenarioEngine(graph, config)
    ok = engine.run()
    return [e.to_json_dict() for e in engine.transcript], ok, engine.first_failure()
