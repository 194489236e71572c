import math

import pytest

from iotdisc.corpus import Annotation, synth_corpus
from iotdisc.netsim import (
    Codec,
    NetsimError,
    Placement,
    ReestablishPolicy,
    SimConfig,
    Simulation,
    WorkloadQuery,
    brute_force_answer,
    check_reestablish,
    edge_nodes,
    gen_queries,
    gen_topology,
    grow_network,
    measure_misleading,
    place_streams,
    reestablish,
    run_experiment,
)


class TestTopology:
    def test_two_nodes_single_edge(self):
        topo = gen_topology(2, seed=1)
        assert topo.adjacency == [[1], [0]]

    def test_degrees_and_connectivity(self):
        topo = gen_topology(1000, seed=7)
        assert topo.is_connected()
        degs = [topo.degree(x) for x in range(topo.n)]
        assert min(degs) >= 2
        assert max(degs) <= 10
        assert 2 <= sum(degs) / len(degs) <= 10

    def test_determinism(self):
        a = gen_topology(300, seed=9)
        b = gen_topology(300, seed=9)
        assert a.adjacency == b.adjacency

    def test_degree_cap_option(self):
        topo = gen_topology(200, seed=3, deg_max=8)
        assert max(topo.degree(x) for x in range(200)) <= 8


class TestPlacement:
    def test_random_placement_uses_edge_nodes(self):
        topo = gen_topology(120, seed=5)
        streams = synth_corpus(60, n_attrs=4, vocab_size=40, seed=2)
        hosts = place_streams(streams, topo, Placement(mode="random"), seed=4)
        rim = set(edge_nodes(topo))
        assert set(hosts.values()) <= rim

    def test_single_region_single_cluster(self):
        topo = gen_topology(40, seed=5)
        streams = synth_corpus(30, n_attrs=4, vocab_size=30, seed=2)
        hosts = place_streams(
            streams, topo, Placement(mode="region", regions=1, clusters=1), seed=4
        )
        assert set(hosts.values()) <= set(range(40))

    def test_seven_regions_fourteen_clusters_round_robin(self):
        topo = gen_topology(210, seed=11)
        streams = synth_corpus(280, n_attrs=5, vocab_size=60, seed=3)
        placement = Placement(mode="region", regions=7, clusters=14)
        hosts = place_streams(streams, topo, placement, seed=6)
        assert len(hosts) == 280

    def test_region_mode_groups_similar_streams(self):
        # intra-region descriptor similarity must beat inter-region
        topo = gen_topology(140, seed=13)
        streams = synth_corpus(200, n_attrs=6, vocab_size=50, zipf_s=1.3, seed=5)
        placement = Placement(mode="region", regions=7, clusters=14)
        hosts = place_streams(streams, topo, placement, seed=8)

        # recompute region of each node from the BFS segmentation
        from collections import deque

        order, seen, todo = [], {0}, deque([0])
        while todo:
            x = todo.popleft()
            order.append(x)
            for y in topo.adjacency[x]:
                if y not in seen:
                    seen.add(y)
                    todo.append(y)
        per = max(1, len(order) // 7)
        region_of = {}
        for r in range(7):
            seg = order[r * per : (r + 1) * per] if r < 6 else order[6 * per :]
            for x in seg:
                region_of[x] = r

        sets = {s.stream_id: frozenset(s.descriptors.items()) for s in streams}
        sids = [s.stream_id for s in streams]

        def jac(a, b):
            return len(sets[a] & sets[b]) / len(sets[a] | sets[b])

        intra, inter, ni, nx = 0.0, 0.0, 0, 0
        for i in range(0, len(sids), 3):
            for j in range(i + 1, len(sids), 3):
                sim = jac(sids[i], sids[j])
                if region_of[hosts[sids[i]]] == region_of[hosts[sids[j]]]:
                    intra += sim
                    ni += 1
                else:
                    inter += sim
                    nx += 1
        assert intra / ni > inter / nx

    def test_more_regions_than_nodes_rejected(self):
        topo = gen_topology(5, seed=1)
        streams = synth_corpus(5, n_attrs=3, vocab_size=10, seed=1)
        with pytest.raises(NetsimError):
            place_streams(streams, topo, Placement(mode="region", regions=9), seed=1)


class TestQueries:
    def test_every_query_has_a_bruteforce_match(self):
        streams = synth_corpus(100, n_attrs=6, vocab_size=50, seed=4)
        queries = gen_queries(streams, 50, seed=9, alpha=1.0, n_nodes=30)
        for q in queries:
            assert brute_force_answer(q, streams)

    def test_determinism(self):
        streams = synth_corpus(50, n_attrs=5, vocab_size=40, seed=4)
        a = gen_queries(streams, 30, seed=9, alpha=1.0, n_nodes=30)
        b = gen_queries(streams, 30, seed=9, alpha=1.0, n_nodes=30)
        assert a == b

    def test_full_descriptor_query_matches_sampled_stream(self):
        streams = synth_corpus(40, n_attrs=4, vocab_size=30, seed=4)
        stream = streams[7]
        wq = WorkloadQuery(0, sorted(stream.descriptors.items()), 0, 1.0)
        assert stream.stream_id in brute_force_answer(wq, streams)


def small_scenario(policy, n=60, n_streams=80, seed=5, **cfg_kw):
    kw = dict(
        policy=policy,
        c=2,
        d=6,
        b=4,
        seed=seed,
        rotate_hash_on_collision=True,
    )
    kw.update(cfg_kw)
    cfg = SimConfig(**kw)
    topo = gen_topology(n, seed=seed, deg_max=8)
    streams = synth_corpus(n_streams, n_attrs=4, vocab_size=60, seed=seed, absent_prob=0.08)
    hosts = place_streams(streams, topo, Placement(mode="random"), seed=seed)
    queries = gen_queries(streams, 60, seed=seed, alpha=1.0, n_nodes=n)
    return cfg, topo, streams, hosts, queries


class TestEngines:
    @pytest.mark.parametrize("policy", ["nsum", "ncac", "hash", "meaning", "alph"])
    def test_fast_and_event_tables_agree(self, policy):
        # the fast engine must reproduce the unpruned event engine exactly
        cfg, topo, streams, hosts, queries = small_scenario(policy)
        cfg_fast = SimConfig(**{**cfg.__dict__, "engine": "fast"})
        cfg_event = SimConfig(**{**cfg.__dict__, "engine": "event"})
        m_fast = run_experiment(cfg_fast, topo, streams, hosts, queries, codec=Codec(streams, cfg_fast))
        m_event = run_experiment(cfg_event, topo, streams, hosts, queries, codec=Codec(streams, cfg_event))
        assert m_fast.rt_entries_avg == m_event.rt_entries_avg
        assert m_fast.rt_bytes_avg == m_event.rt_bytes_avg
        assert m_fast.adv_msgs == m_event.adv_msgs
        assert m_fast.qry_msgs == m_event.qry_msgs
        assert m_fast.recall == m_event.recall
        assert m_fast.misleading_pct == m_event.misleading_pct

    def test_pruned_flood_saves_advertisement_traffic(self):
        cfg, topo, streams, hosts, _ = small_scenario("nsum", n_streams=150)
        plain = run_experiment(cfg, topo, streams, hosts, [])
        pruned = run_experiment(
            SimConfig(**{**cfg.__dict__, "adv_prune": True, "engine": "event"}),
            topo, streams, hosts, [],
        )
        assert pruned.adv_msgs < plain.adv_msgs

    def test_determinism_bit_exact(self):
        cfg, topo, streams, hosts, queries = small_scenario("hash")
        m1 = run_experiment(cfg, topo, streams, hosts, queries, codec=Codec(streams, cfg))
        m2 = run_experiment(cfg, topo, streams, hosts, queries, codec=Codec(streams, cfg))
        assert m1 == m2


class TestRecallAndMisleading:
    @pytest.mark.parametrize("policy", ["ncac", "nsum", "alph", "hash", "meaning"])
    def test_unbounded_full_coverage_recall_is_exact(self, policy):
        cfg, topo, streams, hosts, queries = small_scenario(policy)
        sim = Simulation(cfg, topo, streams, hosts)
        sim.advertise_all()
        records = sim.run_queries(queries)
        for rec in records:
            assert rec["found"] == rec["expected"], rec["qid"]

    def test_ncac_zero_misleading(self):
        cfg, topo, streams, hosts, queries = small_scenario("ncac")
        metrics = run_experiment(cfg, topo, streams, hosts, queries)
        assert metrics.misleading_pct == 0.0

    def test_nsum_misleading_is_small_but_positive(self):
        cfg, topo, streams, hosts, queries = small_scenario("nsum", n_streams=120)
        metrics = run_experiment(cfg, topo, streams, hosts, queries)
        assert 0.0 < metrics.misleading_pct < 15.0

    def test_hop_bound_monotonicity(self):
        cfg, topo, streams, hosts, queries = small_scenario("nsum")
        results = []
        for b_q in (2, 4, INF := math.inf):
            cfg_b = SimConfig(**{**cfg.__dict__, "b_q": b_q})
            results.append(run_experiment(cfg_b, topo, streams, hosts, queries))
        assert results[0].qry_msgs <= results[1].qry_msgs <= results[2].qry_msgs
        assert results[0].rsp_msgs <= results[2].rsp_msgs
        assert results[0].recall <= results[1].recall <= results[2].recall

    def test_summarization_compresses_tables(self):
        cfg, topo, streams, hosts, queries = small_scenario("hash", n_streams=150)
        summarized = run_experiment(cfg, topo, streams, hosts, [])
        plain = run_experiment(
            SimConfig(**{**cfg.__dict__, "trigger": "none"}), topo, streams, hosts, []
        )
        assert summarized.rt_entries_avg < plain.rt_entries_avg

    def test_nsum_tables_never_smaller_than_hash(self):
        # at a reasonably dense code space, summarization plus collision
        # merging beats the trie's pointer overhead
        cfg = SimConfig(policy="hash", c=2, d=4, b=4, seed=5)
        topo = gen_topology(60, seed=5, deg_max=8)
        streams = synth_corpus(200, n_attrs=4, vocab_size=240, seed=5)
        hosts = place_streams(streams, topo, Placement(mode="random"), seed=5)
        hash_m = run_experiment(cfg, topo, streams, hosts, [])
        nsum_m = run_experiment(
            SimConfig(**{**cfg.__dict__, "policy": "nsum"}), topo, streams, hosts, []
        )
        assert hash_m.rt_entries_avg <= nsum_m.rt_entries_avg
        assert hash_m.rt_bytes_avg < nsum_m.rt_bytes_avg

    def test_measure_only_matches_materialized_sizes(self):
        for policy in ("nsum", "ncac"):
            cfg, topo, streams, hosts, _ = small_scenario(policy)
            real = run_experiment(cfg, topo, streams, hosts, [])
            virt = run_experiment(
                SimConfig(**{**cfg.__dict__, "measure_only": True}), topo, streams, hosts, []
            )
            assert virt.rt_bytes_avg == real.rt_bytes_avg
            assert virt.rt_entries_avg == real.rt_entries_avg


class TestEstimatedScv:
    def test_estimated_mode_runs_and_tags_premature_events(self):
        cfg, topo, streams, hosts, queries = small_scenario(
            "hash", n_streams=150, scv_mode="estimated", d=5
        )
        est = run_experiment(cfg, topo, streams, hosts, queries)
        exact = run_experiment(
            SimConfig(**{**cfg.__dict__, "scv_mode": "exact"}), topo, streams, hosts, queries
        )
        assert est.misleading_pct >= exact.misleading_pct - 1e-9
        assert est.premature_summaries >= 0


class TestGrowthAndReestablish:
    def make_sim(self, policy="hash", n=80, n_streams=60, seed=11, **kw):
        cfg, topo, streams, hosts, _ = small_scenario(policy, n=n, n_streams=n_streams, seed=seed, **kw)
        cfg.engine = "event"
        sim = Simulation(cfg, topo, streams, hosts)
        sim.advertise_all()
        return sim

    def test_zero_growth_changes_nothing(self):
        sim = self.make_sim()
        n_before = sim.topo.n
        grow_network(sim, 0.0, [], seed=3)
        assert sim.topo.n == n_before

    def test_ten_percent_growth_keeps_connectivity(self):
        sim = self.make_sim()
        extra = synth_corpus(20, n_attrs=4, vocab_size=60, seed=99)
        for s in extra:
            s.stream_id = "g" + s.stream_id
        new_ids = grow_network(sim, 0.10, extra, seed=3)
        assert len(new_ids) == 8
        assert sim.topo.is_connected()
        queries = gen_queries(extra, 10, seed=5, alpha=1.0, n_nodes=sim.topo.n)
        for rec in sim.run_queries(queries):
            assert rec["found"] >= (rec["expected"] & {s.stream_id for s in extra})

    def test_full_meaning_clusters_alias_new_keywords(self):
        sim = self.make_sim(policy="meaning", n_streams=120)
        extra = synth_corpus(40, n_attrs=4, vocab_size=200, seed=77)
        for s in extra:
            s.stream_id = "g" + s.stream_id
        grow_network(sim, 0.05, extra, seed=3)
        # brand-new keywords force descents; at least some clusters filled up
        assert sim.codec.new_keyword_count > 0

    def test_reestablish_with_no_streams_costs_nothing(self):
        cfg = SimConfig(policy="hash", d=5, b=4)
        topo = gen_topology(20, seed=2)
        sim = Simulation(cfg, topo, [], {})
        assert reestablish(sim, ReestablishPolicy()) == 0.0

    def test_density_trigger(self):
        sim = self.make_sim(policy="hash", d=5)
        unique = max(len(sim.codec.keywords[a]) for a in sim.codec.attributes)
        space = 4**5
        policy = ReestablishPolicy(trigger="density_ratio", threshold=unique / space + 0.01)
        assert not check_reestablish(sim, policy)
        policy.threshold = unique / space - 0.01
        assert check_reestablish(sim, policy)

    def test_reestablish_reduces_collisions_with_deeper_tree(self):
        sim = self.make_sim(policy="hash", d=4, n_streams=150, rotate_hash_on_collision=False)
        before = sim.metrics().collision_pct
        assert before > 0
        reestablish(sim, ReestablishPolicy(new_d=6))
        after = sim.metrics().collision_pct
        assert after < before

    def test_reestablish_preserves_recall(self):
        sim = self.make_sim(policy="hash", d=5)
        cost = reestablish(sim, ReestablishPolicy(new_d=6))
        assert cost > 0
        queries = gen_queries(sim.streams, 30, seed=21, alpha=1.0, n_nodes=sim.topo.n)
        for rec in sim.run_queries(queries):
            assert rec["found"] == rec["expected"]


class TestMeasureMisleading:
    def test_duplicate_edge_into_responder_is_fruitful(self):
        # (2, 1) is a duplicate delivery into the responder: not misled;
        # (0, 3) dead-ends without a response: misled
        rec = {
            "forward_edges": [(0, 1), (0, 2), (2, 1), (0, 3)],
            "responders": {1: 1},
        }
        assert measure_misleading([rec]) == pytest.approx(25.0)

    def test_no_edges_no_misleading(self):
        assert measure_misleading([{"forward_edges": [], "responders": {}}]) == 0.0
