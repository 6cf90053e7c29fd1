"""Content-aware SDN simulator.

A controller that learns content sizes at the network layer (header
inspection, byte counters, cache footprints) and uses them for path
selection, cache placement, per-content firewalling, and eviction;
simulated switches, caches and a proxy speaking a compact binary
control protocol; and the two-link experiment quantifying what size
awareness buys under heavy-tailed workloads.
"""

from .controller import (
    Controller,
    ControllerConfig,
    Decision,
    EvictionPlan,
    eviction_candidates,
    select_path_with_delay_bound,
)
from .dataplane import Cache, Proxy, SimPacket, Switch, Verdict
from .metadata import (
    ContentMetadata,
    MetadataStore,
    SizeClass,
    classify,
    finalize_size_from_counter,
    parse_http_response_head,
)
from .netmodel import (
    Graph,
    Link,
    Node,
    NodeKind,
    Path,
    bottleneck_rate,
    enumerate_paths,
    load_topology,
    load_topology_file,
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
    decode,
    encode,
)
from .scenario import ScenarioEngine, run_scenario
from .simeval import (
    FluidLinkQueue,
    ParetoWorkload,
    pareto_sample,
    run_two_link_experiment,
    scale_for_load,
    sweep_alpha,
)

__version__ = "0.1.0"
