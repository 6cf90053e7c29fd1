"""Controller: sessions, size bookkeeping, selection policies, flow rules."""

import functools
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contentsdn.controller import (
    FIREWALL_PRIORITY,
    FORWARD_PRIORITY,
    STANDING_PRIORITY,
    ConfigError,
    Controller,
    ControllerConfig,
    EvictionPlan,
    NoReachableCacheError,
    SessionState,
    UnknownElementError,
    UnknownSizeError,
    eviction_candidates,
    select_path_with_delay_bound,
)
from contentsdn.netmodel import (
    Graph,
    Link,
    Node,
    NodeKind,
    Path,
    enumerate_paths,
    retrieval_delay,
)
from contentsdn.protocol import (
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
    PacketIn,
    encode,
)

from conftest import CONFIG_PATH, boot_controller

REQUEST_TUPLE = FiveTuple("10.0.0.2", 49152, "10.0.0.5", 80, 6)


def packet_in(name="video.example/clips/intro.mp4", size=0):
    return PacketIn(
        content_name=name,
        content_size=size,
        src_ip="10.0.0.5",
        src_port=80,
        dst_ip="10.0.0.2",
        dst_port=49152,
    )


class TestControllerConfig:
    def test_defaults(self):
        cfg = ControllerConfig()
        assert cfg.elephant_threshold_bytes == 100_000
        assert cfg.per_packet_overhead_bytes == 40
        assert cfg.te_objective == "min_cost_path"
        assert cfg.delay_bounds == {}
        assert cfg.max_paths == 32

    def test_from_file(self):
        cfg = ControllerConfig.from_file(CONFIG_PATH)
        assert cfg.delay_bounds == {"video/": 30.0}

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ControllerConfig.from_json('{"elephant_threshold": 5}')

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(elephant_threshold_bytes=0),
            dict(per_packet_overhead_bytes=-1),
            dict(te_objective="fastest"),
            dict(max_paths=0),
            dict(delay_bounds={"video/": 0.0}),
            dict(delay_bounds={"": 1.0}),
        ],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            ControllerConfig(**kwargs)

    def test_delay_bounds_coerced_to_float(self):
        cfg = ControllerConfig.from_json('{"delay_bounds": {"video/": 30}}')
        assert cfg.delay_bounds == {"video/": 30.0}
        assert isinstance(cfg.delay_bounds["video/"], float)


class TestHandshake:
    def test_hello_gets_features_request(self, dualpath_graph):
        c = Controller(dualpath_graph)
        out = c.handle_message("ingress", Hello())
        assert out == [("ingress", FeaturesRequest())]
        assert c.sessions["ingress"].state is SessionState.FEATURES_REQUESTED

    def test_features_reply_promotes_to_ready(self, dualpath_graph):
        c = Controller(dualpath_graph)
        c.handle_message("sw_mid", Hello())
        out = c.handle_message("sw_mid", FeaturesReply(datapath_id=9))
        assert out == []  # a plain switch earns no standing rule
        assert c.sessions["sw_mid"].state is SessionState.READY
        assert c.sessions["sw_mid"].datapath_id == 9

    def test_unknown_source_raises(self, dualpath_graph):
        c = Controller(dualpath_graph)
        with pytest.raises(UnknownElementError):
            c.handle_message("ghost", Hello())

    def test_features_reply_without_hello_dropped(self, dualpath_graph):
        c = Controller(dualpath_graph)
        assert c.handle_message("ingress", FeaturesReply(datapath_id=1)) == []
        assert "ingress" not in c.sessions

    def test_repeat_hello_on_ready_session_dropped(self, dualpath_graph):
        c = Controller(dualpath_graph)
        c.handle_message("ingress", Hello())
        c.handle_message(
            "ingress", FeaturesReply(datapath_id=1, capabilities=Capability.EXTRACT_METADATA)
        )
        assert c.handle_message("ingress", Hello()) == []
        assert c.sessions["ingress"].state is SessionState.READY

    def test_data_messages_from_unready_session_dropped(self, dualpath_graph):
        c = Controller(dualpath_graph)
        c.handle_message("ingress", Hello())  # not READY yet
        assert c.handle_message("ingress", packet_in(size=100)) == []
        assert len(c.store) == 0


class TestStandingFlows:
    def test_capable_ingress_gets_inspect_rule(self, dualpath_graph):
        c = Controller(dualpath_graph)
        c.handle_message("ingress", Hello())
        out = c.handle_message(
            "ingress", FeaturesReply(datapath_id=1, capabilities=Capability.EXTRACT_METADATA)
        )
        assert len(out) == 1
        dst, rule = out[0]
        assert dst == "ingress"
        assert rule.match == FlowMatch(content_name="*")
        assert rule.priority == STANDING_PRIORITY
        assert rule.actions == (
            Action(ActionKind.EXTRACT_METADATA),
            Action(ActionKind.NORMAL),
        )
        assert rule.until_byte_count == 0

    def test_capable_cache_gets_cache_rule(self, dualpath_graph):
        c = Controller(dualpath_graph)
        c.handle_message("cache1", Hello())
        out = c.handle_message(
            "cache1", FeaturesReply(datapath_id=2, capabilities=Capability.CACHE_CONTENT)
        )
        assert [(dst, rule.actions) for dst, rule in out] == [
            ("cache1", (Action(ActionKind.CACHE),))
        ]

    def test_ingress_without_capability_gets_nothing(self, dualpath_graph):
        c = Controller(dualpath_graph)
        c.handle_message("ingress", Hello())
        out = c.handle_message("ingress", FeaturesReply(datapath_id=1))
        assert out == []


class TestSizeBookkeeping:
    def test_packet_in_records_dpi_size_and_ingress(self, ready_controller):
        c = ready_controller
        c.handle_message("ingress", packet_in(size=1_000_000))
        assert c.store.get("video.example/clips/intro.mp4").size_bytes == 1_000_000
        assert c.size_provenance["video.example/clips/intro.mp4"] == "dpi"
        assert c.ingress_of["video.example/clips/intro.mp4"] == "ingress"

    def test_zero_size_packet_in_only_registers_name(self, ready_controller):
        c = ready_controller
        c.handle_message("ingress", packet_in(size=0))
        assert c.store.get("video.example/clips/intro.mp4").size_bytes == 0
        assert "video.example/clips/intro.mp4" not in c.size_provenance

    @pytest.mark.parametrize("name", ["", "*"])
    def test_unnamed_packet_in_ignored(self, ready_controller, name):
        ready_controller.handle_message("ingress", packet_in(name=name, size=5))
        assert len(ready_controller.store) == 0

    def test_flow_expired_applies_overhead_correction(self, ready_controller):
        c = ready_controller
        # 1,027,400 counted = 685 estimated packets of 1500 -> 27,400 header bytes
        c.handle_message(
            "ingress",
            FlowExpired(match=FlowMatch(content_name="x"), bytes_counted=1_027_400),
        )
        assert c.store.get("x").size_bytes == 1_000_000
        assert c.size_provenance["x"] == "counter"

    def test_flow_expired_underflow_ignored(self, ready_controller):
        c = ready_controller
        c.handle_message(
            "ingress", FlowExpired(match=FlowMatch(content_name="x"), bytes_counted=30)
        )
        assert "x" not in c.size_provenance

    def test_cache_report_sets_footprint_and_location(self, ready_controller):
        c = ready_controller
        c.handle_message("cache1", CacheReport(content_name="x", footprint_bytes=500))
        record = c.store.get("x")
        assert record.size_bytes == 500
        assert record.cached_at == {"cache1"}
        assert c.size_provenance["x"] == "footprint"

    def test_cache_report_from_non_cache_dropped(self, ready_controller):
        c = ready_controller
        c.handle_message("ingress", CacheReport(content_name="x", footprint_bytes=500))
        assert len(c.store) == 0

    def test_weaker_provenance_never_downgrades_size(self, ready_controller):
        c = ready_controller
        c.handle_message("cache1", CacheReport(content_name="x", footprint_bytes=900))
        c.handle_message("ingress", packet_in(name="x", size=1000))  # dpi < footprint
        c.handle_message(
            "ingress", FlowExpired(match=FlowMatch(content_name="x"), bytes_counted=1040)
        )
        assert c.store.get("x").size_bytes == 900
        assert c.size_provenance["x"] == "footprint"

    def test_stronger_provenance_upgrades_size(self, ready_controller):
        c = ready_controller
        c.handle_message(
            "ingress", FlowExpired(match=FlowMatch(content_name="x"), bytes_counted=1040)
        )
        assert c.store.get("x").size_bytes == 1000
        c.handle_message("ingress", packet_in(name="x", size=1100))
        assert c.store.get("x").size_bytes == 1100
        c.handle_message("cache1", CacheReport(content_name="x", footprint_bytes=1200))
        assert c.store.get("x").size_bytes == 1200

    def test_equal_provenance_overwrites(self, ready_controller):
        c = ready_controller
        c.handle_message("ingress", packet_in(name="x", size=10))
        c.handle_message("ingress", packet_in(name="x", size=20))
        assert c.store.get("x").size_bytes == 20


class TestOverheadAllowance:
    def test_exact_mss_multiple(self, ready_controller):
        # 1e6 bytes / 1460 per packet -> 685 packets -> 27,400 header bytes
        assert ready_controller.overhead_allowance(1_000_000) == 27_400

    def test_single_packet(self, ready_controller):
        assert ready_controller.overhead_allowance(1) == 40

    def test_overhead_must_leave_payload(self, dualpath_graph):
        c = Controller(dualpath_graph, ControllerConfig(per_packet_overhead_bytes=1500))
        with pytest.raises(ConfigError):
            c.overhead_allowance(1000)


# -- random-graph oracles -----------------------------------------------------


def random_controller_graph(rng: random.Random):
    """A small graph with ingress switches, caches, and plain switches."""
    n_ingress = rng.randint(1, 2)
    n_cache = rng.randint(1, 3)
    n_switch = rng.randint(0, 2)
    nodes = (
        [Node(f"i{k}", NodeKind.INGRESS_SWITCH) for k in range(n_ingress)]
        + [Node(f"c{k}", NodeKind.CACHE) for k in range(n_cache)]
        + [Node(f"s{k}", NodeKind.SWITCH) for k in range(n_switch)]
        + [Node("client", NodeKind.CLIENT)]
    )
    ids = [n.id for n in nodes]
    links = []
    for k in range(rng.randint(2, 10)):
        src, dst = rng.sample(ids, 2)
        cap = rng.uniform(10.0, 1e6)
        links.append(
            Link(
                id=f"l{k:02d}",
                src=src,
                dst=dst,
                capacity_bps=cap,
                background_bps=rng.uniform(0.0, cap * 0.9),
            )
        )
    graph = Graph(nodes, links)
    caches = [n.id for n in nodes if n.kind is NodeKind.CACHE]
    return graph, caches


def raw_cost(graph: Graph, link_ids, f_bits: float) -> float:
    return sum(
        (graph.links[i].background_bps + f_bits) / graph.links[i].capacity_bps
        for i in link_ids
    )


def raw_delay(graph: Graph, link_ids, f_bits: float) -> float:
    return f_bits / min(graph.links[i].rate_bps for i in link_ids)


def all_paths(graph, src, dst):
    return enumerate_paths(graph, src, dst, max_paths=10**6)


class TestCacheSelectionOracles:
    def test_storage_matches_exhaustive_search(self):
        rng = random.Random(0x57A6)
        checked = 0
        while checked < 80:
            graph, caches = random_controller_graph(rng)
            controller = Controller(graph, ControllerConfig(max_paths=10**6))
            writes = {c: rng.randint(0, 2) for c in caches}
            controller.in_progress_writes.update(writes)
            f_bits = rng.uniform(1.0, 1e7)
            combos = [
                (raw_cost(graph, p.link_ids, f_bits), writes.get(c, 0), c, len(p), p.link_ids, c, p)
                for c in caches
                for ing in graph.ingress_switches
                for p in all_paths(graph, ing, c)
            ]
            if not combos:
                with pytest.raises(NoReachableCacheError):
                    controller.select_cache_for_storage(f_bits, caches)
                continue
            best = min(combos)
            cache, path = controller.select_cache_for_storage(f_bits, caches)
            assert (cache, path.link_ids) == (best[5], best[6].link_ids)
            checked += 1

    def test_retrieval_matches_exhaustive_search(self):
        rng = random.Random(0x7E7A)
        checked = 0
        while checked < 80:
            graph, caches = random_controller_graph(rng)
            controller = Controller(graph, ControllerConfig(max_paths=10**6))
            f_bits = rng.uniform(1.0, 1e7)
            combos = [
                (raw_delay(graph, p.link_ids, f_bits), c, len(p), p.link_ids, p)
                for c in caches
                for p in all_paths(graph, c, "client")
            ]
            if not combos:
                with pytest.raises(NoReachableCacheError):
                    controller.select_cache_for_retrieval(f_bits, "client", caches)
                continue
            best = min(combos)
            cache, path = controller.select_cache_for_retrieval(f_bits, "client", caches)
            assert (cache, path.link_ids) == (best[1], best[4].link_ids)
            checked += 1

    def test_storage_write_pressure_breaks_cost_ties(self):
        nodes = [
            Node("i0", NodeKind.INGRESS_SWITCH),
            Node("c0", NodeKind.CACHE),
            Node("c1", NodeKind.CACHE),
        ]
        links = [
            Link(id="l0", src="i0", dst="c0", capacity_bps=100.0),
            Link(id="l1", src="i0", dst="c1", capacity_bps=100.0),
        ]
        controller = Controller(Graph(nodes, links))
        controller.in_progress_writes["c0"] = 3
        cache, _ = controller.select_cache_for_storage(50.0, ["c0", "c1"])
        assert cache == "c1"  # c0 is equally cheap but busier

    def test_no_candidates_raises(self, dualpath_graph):
        controller = Controller(dualpath_graph)
        with pytest.raises(NoReachableCacheError):
            controller.select_cache_for_storage(1.0, [])


class TestDelayBoundSelection:
    def one_link_path(self, rate, ident):
        return Path(
            links=(Link(id=ident, src="a", dst="b", capacity_bps=rate, rate_bps=rate),)
        )

    def test_prefers_fastest_within_bound(self):
        paths = [self.one_link_path(r, f"l{r}") for r in (100.0, 200.0, 400.0)]
        # delays for 1000 bits: 10, 5, 2.5; bound 6 admits the last two
        best = select_path_with_delay_bound(paths, 1000.0, bound=6.0)
        assert best.link_ids == ("l400.0",)

    def test_falls_back_to_least_excess(self):
        paths = [self.one_link_path(r, f"l{r}") for r in (10.0, 20.0)]
        # delays 100 and 50 both exceed the bound; least excess wins
        best = select_path_with_delay_bound(paths, 1000.0, bound=1.0)
        assert best.link_ids == ("l20.0",)

    def test_oracle_over_random_pools(self):
        rng = random.Random(0xB0D)
        for _ in range(100):
            paths = [
                self.one_link_path(rng.uniform(1.0, 500.0), f"l{k}")
                for k in range(rng.randint(1, 8))
            ]
            f_bits = rng.uniform(1.0, 5000.0)
            bound = rng.uniform(0.5, 100.0)
            got = select_path_with_delay_bound(paths, f_bits, bound)
            delays = [(retrieval_delay(p, f_bits), p) for p in paths]
            within = [(d, p) for d, p in delays if d <= bound]
            pool = within or [(d - bound, p) for d, p in delays]
            expected = min(pool, key=lambda dp: (dp[0], len(dp[1]), dp[1].link_ids))[1]
            assert got is expected

    def test_bound_must_be_positive(self):
        with pytest.raises(ValueError):
            select_path_with_delay_bound([self.one_link_path(1.0, "l")], 1.0, 0.0)


# -- eviction -----------------------------------------------------------------


def density_order(a, b) -> int:
    """Independent comparison: popularity per byte via cross-multiplication."""
    lhs = a[2] * b[1]
    rhs = b[2] * a[1]
    if lhs != rhs:
        return -1 if lhs < rhs else 1
    if a[1] != b[1]:
        return -1 if a[1] > b[1] else 1  # larger items go first
    return -1 if a[0] < b[0] else (0 if a[0] == b[0] else 1)


def greedy_eviction_oracle(contents, needed) -> EvictionPlan:
    ranked = sorted(contents, key=functools.cmp_to_key(density_order))
    chosen, freed = [], 0
    for name, size, _ in ranked:
        if freed >= needed:
            break
        chosen.append(name)
        freed += size
    return EvictionPlan(tuple(chosen), freed, freed < needed)


cache_items = st.lists(
    st.tuples(
        st.text(alphabet="abcdefgh", min_size=1, max_size=4),
        st.integers(1, 10**6),
        st.integers(0, 10**4),
    ),
    max_size=12,
    unique_by=lambda item: item[0],
)


class TestEvictionCandidates:
    def test_low_density_goes_first(self):
        contents = [("hot", 100, 50), ("cold", 100, 1), ("warm", 100, 10)]
        plan = eviction_candidates(contents, bytes_needed=150)
        assert plan.names == ("cold", "warm")
        assert plan.freed_bytes == 200
        assert not plan.shortfall

    def test_equal_density_prefers_larger_item(self):
        contents = [("small", 10, 1), ("large", 100, 10)]
        plan = eviction_candidates(contents, bytes_needed=5)
        assert plan.names == ("large",)

    def test_shortfall_returns_everything(self):
        plan = eviction_candidates([("only", 10, 0)], bytes_needed=100)
        assert plan == EvictionPlan(("only",), 10, True)

    def test_bytes_needed_positive(self):
        with pytest.raises(ValueError):
            eviction_candidates([("a", 1, 0)], bytes_needed=0)

    def test_bad_items_rejected(self):
        with pytest.raises(ValueError):
            eviction_candidates([("a", 0, 0)], bytes_needed=1)
        with pytest.raises(ValueError):
            eviction_candidates([("a", 1, -1)], bytes_needed=1)

    @given(cache_items, st.integers(1, 2 * 10**6))
    @settings(max_examples=200)
    def test_matches_greedy_oracle(self, contents, needed):
        assert eviction_candidates(contents, needed) == greedy_eviction_oracle(
            contents, needed
        )

    @given(cache_items, st.integers(1, 2 * 10**6))
    @settings(max_examples=200)
    def test_never_evicts_denser_content_than_it_keeps(self, contents, needed):
        plan = eviction_candidates(contents, needed)
        evicted = set(plan.names)
        kept = [item for item in contents if item[0] not in evicted]
        gone = [item for item in contents if item[0] in evicted]
        if not kept or not gone:
            return
        max_gone = max(Fraction(p, s) for _, s, p in gone)
        min_kept = min(Fraction(p, s) for _, s, p in kept)
        assert max_gone <= min_kept

    @given(cache_items.filter(bool), st.integers(1, 2 * 10**6))
    @settings(max_examples=200)
    def test_prefix_is_minimal(self, contents, needed):
        plan = eviction_candidates(contents, needed)
        if plan.shortfall or not plan.names:
            return
        sizes = dict((name, size) for name, size, _ in contents)
        assert plan.freed_bytes - sizes[plan.names[-1]] < needed


# -- request decisions on the fixture topology --------------------------------


NAME = "video.example/clips/intro.mp4"


class TestContentRequests:
    def test_first_request_is_a_miss(self, ready_controller):
        decision = ready_controller.handle_content_request(NAME, "client")
        assert decision.kind == "miss"
        assert decision.origin == "origin"
        assert decision.cache == "cache1"
        assert ready_controller.store.get(NAME).popularity == 1
        assert ready_controller.store.get(NAME).size_bytes == 0

    def test_miss_storage_path_uses_size_stand_in(self, ready_controller):
        # unknown size plans for an elephant: 8e5 bits favors the fast pair
        decision = ready_controller.handle_content_request(NAME, "client")
        assert decision.size_bits_used == pytest.approx(8 * 100_000)
        assert decision.path.link_ids == ("l03_ingress_mid", "l04_mid_cache")

    def test_miss_rules_fork_toward_the_cache(self, ready_controller):
        decision = ready_controller.handle_content_request(
            NAME, "client", request_tuple=REQUEST_TUPLE
        )
        rules = dict(decision.flow_mods)
        assert set(rules) == {"ingress", "sw_mid"}
        ingress_rule = rules["ingress"]
        # ingress: inspect, forward normally, fork a copy into l03 (port 1)
        assert ingress_rule.actions == (
            Action(ActionKind.EXTRACT_METADATA),
            Action(ActionKind.NORMAL),
            Action(ActionKind.OUTPUT, port=1),
        )
        assert ingress_rule.priority == FORWARD_PRIORITY
        # interior switch only passes the fork along l04 (port 0)
        assert rules["sw_mid"].actions == (Action(ActionKind.OUTPUT, port=0),)

    def test_miss_rules_scoped_to_the_response_direction(self, ready_controller):
        decision = ready_controller.handle_content_request(
            NAME, "client", request_tuple=REQUEST_TUPLE
        )
        for _, rule in decision.flow_mods:
            assert rule.match.content_name == NAME
            assert rule.match.five_tuple == FiveTuple(
                "10.0.0.5", 80, "10.0.0.2", 49152, 6
            )

    def test_miss_without_tuple_matches_name_only(self, ready_controller):
        decision = ready_controller.handle_content_request(NAME, "client")
        for _, rule in decision.flow_mods:
            assert rule.match == FlowMatch(content_name=NAME)

    def test_miss_counts_in_progress_write(self, ready_controller):
        ready_controller.handle_content_request(NAME, "client")
        assert ready_controller.in_progress_writes["cache1"] == 1

    def test_second_request_after_report_is_a_hit(self, ready_controller):
        c = ready_controller
        c.handle_message("ingress", packet_in(size=1_000_000))
        c.handle_content_request(NAME, "client", request_tuple=REQUEST_TUPLE)
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1_000_000))
        decision = c.handle_content_request(NAME, "client")
        assert decision.kind == "hit"
        assert decision.cache == "cache1"
        # 8e6 bits: two fast hops cost 1.6, the one slow hop costs 8.0
        assert decision.path.link_ids == ("l03_ingress_mid", "l04_mid_cache")

    def test_hit_installs_firewall_budgets(self, ready_controller):
        c = ready_controller
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1_000_000))
        decision = c.handle_content_request(NAME, "client")
        rules = dict(decision.flow_mods)
        assert set(rules) == {"ingress", "sw_mid"}
        for rule in rules.values():
            assert rule.priority == FIREWALL_PRIORITY
            assert rule.match == FlowMatch(content_name=NAME)
            assert rule.actions == (Action(ActionKind.NORMAL),)
            assert rule.until_byte_count == 1_000_000 + 27_400

    def test_hit_with_unknown_size_forwards_without_budget(self, ready_controller):
        c = ready_controller
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1))
        c.store.put(NAME, size_bytes=0)  # size withdrawn; location kept
        decision = c.handle_content_request(NAME, "client")
        assert decision.kind == "hit"
        for _, rule in decision.flow_mods:
            assert rule.until_byte_count == 0
            assert rule.priority == FORWARD_PRIORITY

    def test_unready_cache_is_not_a_hit(self):
        nodes = [
            Node("i0", NodeKind.INGRESS_SWITCH),
            Node("c0", NodeKind.CACHE),
            Node("c1", NodeKind.CACHE),
            Node("client", NodeKind.CLIENT),
            Node("origin", NodeKind.SERVER),
        ]
        links = [
            Link(id="l0", src="i0", dst="c0", capacity_bps=100.0),
            Link(id="l1", src="i0", dst="c1", capacity_bps=100.0),
        ]
        c = Controller(Graph(nodes, links))
        for element in ("i0", "c1"):  # c0 never handshakes
            c.handle_message(element, Hello())
            c.handle_message(element, FeaturesReply(datapath_id=1))
        # c0 holds the content but its session is down: degrade to a miss
        # that stores into the cache that is actually reachable
        c.store.put(NAME, size_bytes=1000, cached_at="c0")
        decision = c.handle_content_request(NAME, "client")
        assert decision.kind == "miss"
        assert decision.cache == "c1"

    def test_no_ready_cache_at_all_raises(self, dualpath_graph, config):
        c = Controller(dualpath_graph, config)
        for element in ("ingress", "sw_mid"):
            c.handle_message(element, Hello())
            c.handle_message(element, FeaturesReply(datapath_id=1))
        c.store.put(NAME, size_bytes=1000, cached_at="cache1")
        with pytest.raises(NoReachableCacheError):
            c.handle_content_request(NAME, "client")

    def test_unknown_client_rejected(self, ready_controller):
        with pytest.raises(UnknownElementError):
            ready_controller.handle_content_request(NAME, "ghost")

    def test_rules_only_for_ready_switches(self, dualpath_graph, config):
        c = Controller(dualpath_graph, config)
        for element in ("ingress", "cache1"):  # sw_mid never handshakes
            c.handle_message(element, Hello())
            caps = (
                Capability.EXTRACT_METADATA
                if element == "ingress"
                else Capability.CACHE_CONTENT
            )
            c.handle_message(element, FeaturesReply(datapath_id=1, capabilities=caps))
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1000))
        decision = c.handle_content_request(NAME, "client")
        assert decision.kind == "hit"
        assert {dst for dst, _ in decision.flow_mods} == {"ingress"}

    def test_delay_bound_filters_hit_candidates(self, ready_controller):
        c = ready_controller
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1_000_000))
        c.store.put(NAME, mime_type="video/mp4")
        # 8e6 bits over the slow 1e6 b/s link takes 8 s; over the fast
        # pair 0.8 s; a 30 s bound admits both, cost still decides
        decision = c.handle_content_request(NAME, "client")
        assert decision.path.link_ids == ("l03_ingress_mid", "l04_mid_cache")

    def test_tight_delay_bound_falls_back_to_least_excess(self, dualpath_graph):
        cfg = ControllerConfig(delay_bounds={"video/": 0.1})
        c = boot_controller(dualpath_graph, cfg)
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1_000_000))
        c.store.put(NAME, mime_type="video/mp4")
        # no path meets 0.1 s for 8e6 bits; nearest is the fast pair (0.8 s)
        decision = c.handle_content_request(NAME, "client")
        assert decision.path.link_ids == ("l03_ingress_mid", "l04_mid_cache")

    def test_min_retrieval_delay_objective(self, dualpath_graph):
        cfg = ControllerConfig(te_objective="min_retrieval_delay")
        c = boot_controller(dualpath_graph, cfg)
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1_000_000))
        decision = c.handle_content_request(NAME, "client")
        assert decision.kind == "hit"
        # cache -> client: l07+l08+l09 (1e6 bottleneck, 8 s) loses to
        # l05+l06+l08+l09 (1e7 bottleneck, 0.8 s)
        assert decision.path.link_ids == (
            "l05_cache_mid",
            "l06_mid_ingress",
            "l08_ingress_proxy",
            "l09_proxy_client",
        )


class TestFirewallFlows:
    def test_one_rule_per_switch_with_exact_budget(self, ready_controller):
        path = enumerate_paths(ready_controller.graph, "ingress", "cache1")[1]
        rules = ready_controller.install_firewall_flows(
            "x", 1000, path, overhead_allowance=0
        )
        assert [dst for dst, _ in rules] == ["ingress", "sw_mid"]
        for _, rule in rules:
            assert rule.until_byte_count == 1000
            assert rule.match == FlowMatch(content_name="x")

    def test_default_allowance_added(self, ready_controller):
        path = enumerate_paths(ready_controller.graph, "ingress", "cache1")[0]
        rules = ready_controller.install_firewall_flows("x", 1_000_000, path)
        assert rules[0][1].until_byte_count == 1_027_400

    def test_unknown_size_rejected(self, ready_controller):
        path = enumerate_paths(ready_controller.graph, "ingress", "cache1")[0]
        with pytest.raises(UnknownSizeError):
            ready_controller.install_firewall_flows("x", 0, path)


class TestRedirect:
    def test_rule_points_at_first_hop_toward_proxy(self, ready_controller):
        tup = FiveTuple("10.0.0.2", 49152, "10.0.0.5", 80, 6)
        rules = ready_controller.redirect_client_flows("ingress", tup, "proxy")
        assert len(rules) == 1
        dst, rule = rules[0]
        assert dst == "ingress"
        assert rule.match == FlowMatch(five_tuple=tup)
        # ingress out-links sorted: l02, l03, l08; l08 leads to the proxy
        assert rule.actions == (Action(ActionKind.OUTPUT, port=2),)

    def test_unready_switch_writes_nothing(self, dualpath_graph):
        c = Controller(dualpath_graph)
        tup = FiveTuple("10.0.0.2", 49152, "10.0.0.5", 80, 6)
        assert c.redirect_client_flows("ingress", tup, "proxy") == []


def test_identical_message_sequences_replay_byte_identically(dualpath_graph, config):
    def run_once():
        frames = []
        c = boot_controller(dualpath_graph, config)
        c.handle_message("ingress", packet_in(size=1_000_000))
        for decision in (
            c.handle_content_request(NAME, "client", request_tuple=REQUEST_TUPLE),
        ):
            frames.extend(encode(rule) for _, rule in decision.flow_mods)
        c.handle_message("cache1", CacheReport(content_name=NAME, footprint_bytes=1_000_000))
        decision = c.handle_content_request(NAME, "client")
        frames.extend(encode(rule) for _, rule in decision.flow_mods)
        return b"".join(frames)

    assert run_once() == run_once()
