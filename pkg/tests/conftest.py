"""Shared fixtures: the dual-path topology, a config, and golden frames."""

import json
from pathlib import Path

import pytest

from contentsdn.controller import Controller, ControllerConfig
from contentsdn.netmodel import Graph, NodeKind, load_topology_file
from contentsdn.protocol import Capability, FeaturesReply, Hello

FIXTURES = Path(__file__).parent / "fixtures"

TOPOLOGY_PATH = FIXTURES / "topology_dualpath.json"
CONFIG_PATH = FIXTURES / "controller_config.json"

DEFAULT_CAPS = {
    NodeKind.INGRESS_SWITCH: Capability.EXTRACT_METADATA,
    NodeKind.CACHE: Capability.CACHE_CONTENT,
    NodeKind.PROXY: Capability.PROXY_CONTENT,
    NodeKind.SWITCH: Capability(0),
}


@pytest.fixture
def dualpath_graph() -> Graph:
    return load_topology_file(TOPOLOGY_PATH)


@pytest.fixture
def config() -> ControllerConfig:
    return ControllerConfig.from_file(CONFIG_PATH)


@pytest.fixture
def golden_frames() -> dict[str, str]:
    return json.loads((FIXTURES / "golden_frames.json").read_text())


def boot_controller(graph: Graph, config: ControllerConfig | None = None) -> Controller:
    """A controller with every manageable element handshaken to READY."""
    controller = Controller(graph, config)
    elements = sorted(
        n.id for n in graph.nodes.values() if n.kind in DEFAULT_CAPS
    )
    for index, element in enumerate(elements):
        controller.handle_message(element, Hello())
        caps = DEFAULT_CAPS[graph.nodes[element].kind]
        controller.handle_message(
            element, FeaturesReply(datapath_id=index + 1, capabilities=caps)
        )
    return controller


@pytest.fixture
def ready_controller(dualpath_graph, config) -> Controller:
    return boot_controller(dualpath_graph, config)
