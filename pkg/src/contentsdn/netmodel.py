"""Network graph model and size-aware path selection.

Links are directed and carry three rates: raw capacity, background
traffic already on the link, and the rate currently available to new
transfers.  Path cost for a content of size F bits is the sum over the
path's links of (background + F) / capacity; transfer delay is F divided
by the path's bottleneck available rate.  All enumeration and selection
is deterministic for a fixed topology.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence


class TopologyError(ValueError):
    """Base error for topology documents."""


class TopologyParseError(TopologyError):
    """Document is not well-formed (bad JSON, wrong shape, unknown fields)."""


class TopologyValidationError(TopologyError):
    """Document is well-formed but violates a model invariant."""


class NodeKind(str, Enum):
    SWITCH = "switch"
    INGRESS_SWITCH = "ingress_switch"
    CACHE = "cache"
    PROXY = "proxy"
    CLIENT = "client"
    SERVER = "server"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind


@dataclass(frozen=True)
class Link:
    """Directed edge. Rates in bits/second.

    ``rate_bps`` is the rate currently available to a new transfer on the
    link, distinct from the raw ``capacity_bps``.
    """

    id: str
    src: str
    dst: str
    capacity_bps: float
    background_bps: float = 0.0
    rate_bps: float | None = None  # defaults to capacity - background

    def __post_init__(self):
        if self.capacity_bps <= 0:
            raise TopologyValidationError(
                f"link {self.id!r}: capacity_bps must be > 0, got {self.capacity_bps}"
            )
        if self.background_bps < 0:
            raise TopologyValidationError(
                f"link {self.id!r}: background_bps must be >= 0, got {self.background_bps}"
            )
        if self.background_bps > self.capacity_bps:
            raise TopologyValidationError(
                f"link {self.id!r}: background_bps {self.background_bps} exceeds "
                f"capacity_bps {self.capacity_bps}"
            )
        if self.rate_bps is None:
            object.__setattr__(self, "rate_bps", self.capacity_bps - self.background_bps)
        if self.rate_bps <= 0:
            raise TopologyValidationError(
                f"link {self.id!r}: rate_bps must be > 0, got {self.rate_bps} "
                "(set rate_bps explicitly when background equals capacity)"
            )
        if self.rate_bps > self.capacity_bps:
            raise TopologyValidationError(
                f"link {self.id!r}: rate_bps {self.rate_bps} exceeds "
                f"capacity_bps {self.capacity_bps}"
            )


@dataclass(frozen=True)
class Path:
    """A contiguous walk of directed links visiting no node twice."""

    links: tuple[Link, ...]

    def __post_init__(self):
        if not self.links:
            raise ValueError("a path must contain at least one link")
        nodes = self.nodes
        if len(set(nodes)) != len(nodes):
            raise ValueError("path is not simple (repeated node)")
        for a, b in zip(self.links, self.links[1:]):
            if a.dst != b.src:
                raise ValueError(
                    f"links {a.id!r} and {b.id!r} are not contiguous ({a.dst!r} != {b.src!r})"
                )

    @property
    def link_ids(self) -> tuple[str, ...]:
        return tuple(l.id for l in self.links)

    @property
    def nodes(self) -> tuple[str, ...]:
        return (self.links[0].src,) + tuple(l.dst for l in self.links)

    @property
    def src(self) -> str:
        return self.links[0].src

    @property
    def dst(self) -> str:
        return self.links[-1].dst

    def __len__(self) -> int:
        return len(self.links)


class Graph:
    """Immutable snapshot of a topology: nodes, directed links, adjacency."""

    def __init__(self, nodes: Iterable[Node], links: Iterable[Link]):
        self.nodes: dict[str, Node] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise TopologyValidationError(f"duplicate node id {node.id!r}")
            self.nodes[node.id] = node
        self.links: dict[str, Link] = {}
        for link in links:
            if link.id in self.links:
                raise TopologyValidationError(f"duplicate link id {link.id!r}")
            for endpoint in (link.src, link.dst):
                if endpoint not in self.nodes:
                    raise TopologyValidationError(
                        f"link {link.id!r} references unknown node {endpoint!r}"
                    )
            self.links[link.id] = link
        # adjacency sorted by link id so traversal order is a property of
        # the topology, not of declaration order
        self._out: dict[str, list[Link]] = {n: [] for n in self.nodes}
        for link in sorted(self.links.values(), key=lambda l: l.id):
            self._out[link.src].append(link)

    def out_links(self, node_id: str) -> Sequence[Link]:
        return self._out[node_id]

    def nodes_of_kind(self, kind: NodeKind) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind is kind)

    @property
    def ingress_switches(self) -> list[str]:
        return self.nodes_of_kind(NodeKind.INGRESS_SWITCH)

    @property
    def caches(self) -> list[str]:
        return self.nodes_of_kind(NodeKind.CACHE)

    @property
    def switches(self) -> list[str]:
        return sorted(
            n.id
            for n in self.nodes.values()
            if n.kind in (NodeKind.SWITCH, NodeKind.INGRESS_SWITCH)
        )


_NODE_FIELDS = {"id", "kind"}
_LINK_FIELDS = {"id", "src", "dst", "capacity_bps", "background_bps", "rate_bps"}


def load_topology(document: str | bytes | Mapping) -> Graph:
    """Build a Graph from a topology document (JSON text or parsed dict).

    The document has exactly two top-level arrays, ``nodes`` and ``links``;
    unknown fields anywhere are rejected.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise TopologyParseError(f"invalid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise TopologyParseError("topology document must be a JSON object")
    extra = set(doc) - {"nodes", "links"}
    if extra:
        raise TopologyParseError(f"unknown top-level fields: {sorted(extra)}")
    if "nodes" not in doc or "links" not in doc:
        raise TopologyParseError("topology document needs 'nodes' and 'links' arrays")

    nodes = []
    for i, item in enumerate(doc["nodes"]):
        if not isinstance(item, Mapping):
            raise TopologyParseError(f"nodes[{i}] is not an object")
        extra = set(item) - _NODE_FIELDS
        if extra:
            raise TopologyParseError(f"nodes[{i}]: unknown fields {sorted(extra)}")
        try:
            kind = NodeKind(item["kind"])
        except (KeyError, ValueError) as exc:
            raise TopologyParseError(f"nodes[{i}]: bad or missing kind") from exc
        node_id = item.get("id")
        if not isinstance(node_id, str) or not node_id:
            raise TopologyParseError(f"nodes[{i}]: bad or missing id")
        nodes.append(Node(id=node_id, kind=kind))

    links = []
    for i, item in enumerate(doc["links"]):
        if not isinstance(item, Mapping):
            raise TopologyParseError(f"links[{i}] is not an object")
        extra = set(item) - _LINK_FIELDS
        if extra:
            raise TopologyParseError(f"links[{i}]: unknown fields {sorted(extra)}")
        missing = {"id", "src", "dst", "capacity_bps"} - set(item)
        if missing:
            raise TopologyParseError(f"links[{i}]: missing fields {sorted(missing)}")
        links.append(
            Link(
                id=item["id"],
                src=item["src"],
                dst=item["dst"],
                capacity_bps=float(item["capacity_bps"]),
                background_bps=float(item.get("background_bps", 0.0)),
                rate_bps=(
                    float(item["rate_bps"]) if item.get("rate_bps") is not None else None
                ),
            )
        )

    return Graph(nodes, links)


def load_topology_file(path) -> Graph:
    with open(path, "rb") as fh:
        return load_topology(fh.read())


DEFAULT_MAX_PATHS = 32


def enumerate_paths(graph: Graph, src: str, dst: str, max_paths: int = DEFAULT_MAX_PATHS) -> list[Path]:
    """All simple directed paths src -> dst, shortest (fewest links) first.

    Ties within a hop count are ordered by the lexicographic sequence of
    link ids, so the result is independent of declaration order.  The
    list is truncated to ``max_paths``.  ``src == dst`` yields an empty
    list: there is no self-path by convention.
    """
    for node in (src, dst):
        if node not in graph.nodes:
            raise ValueError(f"unknown node {node!r}")
    if src == dst:
        return []

    found: list[Path] = []
    stack: list[Link] = []
    visited = {src}

    def walk(node: str):
        for link in graph.out_links(node):
            if link.dst in visited:
                continue
            stack.append(link)
            if link.dst == dst:
                found.append(Path(tuple(stack)))
            else:
                visited.add(link.dst)
                walk(link.dst)
                visited.discard(link.dst)
            stack.pop()

    walk(src)
    found.sort(key=lambda p: (len(p), p.link_ids))
    return found[:max_paths]


def path_cost(path: Path, content_size_bits: float) -> float:
    """Sum over the path's links of (background + F) / capacity."""
    if content_size_bits < 0:
        raise ValueError("content size must be >= 0")
    return sum((l.background_bps + content_size_bits) / l.capacity_bps for l in path.links)


def select_min_cost_path(paths: Sequence[Path], content_size_bits: float) -> Path:
    """Path of minimal cost; ties broken by fewest links, then link-id order.

    The tie-break keys only on path contents, so the choice is invariant
    under permutation of the input list.
    """
    if not paths:
        raise ValueError("no candidate paths")
    return min(
        paths,
        key=lambda p: (path_cost(p, content_size_bits), len(p), p.link_ids),
    )


def bottleneck_rate(path: Path) -> float:
    """Minimum available rate over the path's links, in bits/second."""
    if not path.links:
        raise ValueError("empty path")
    return min(l.rate_bps for l in path.links)


def retrieval_delay(path: Path, content_size_bits: float) -> float:
    """Seconds to move F bits through the path's bottleneck."""
    if content_size_bits < 0:
        raise ValueError("content size must be >= 0")
    return content_size_bits / bottleneck_rate(path)
