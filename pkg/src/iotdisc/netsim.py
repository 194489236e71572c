"""Deterministic simulation harness for discovery routing experiments.

One run builds a random connected topology, places synthetic data
streams on edge nodes (uniformly or regionalized), floods advertisements
to settle every node's routing tables, executes a query workload, and
measures table sizes, traffic, latency, misleading forwards, collisions
and recall. Everything is driven by explicit seeds; identical inputs
give bit-identical metrics.

Two advertisement engines produce identical table content:

* ``event`` delivers every message explicitly (needed for traces,
  growth, and reestablishment cost accounting);
* ``fast`` exploits the per-stream flood structure: the set of neighbors
  that ever deliver a stream's advertisement to a node is derived from
  the flood tree of the stream's host, so tables can be bulk-built.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field, fields

from .corpus import ABSENT, Annotation, attribute_keywords
from .embeddings import DeterministicFallback, EmbeddingProvider
from .hashing import derive_seed
from .protocol import (
    AdvMsg,
    CodedDescriptor,
    NodeState,
    Query,
    TablePolicy,
    advertise_stream,
    alpha_threshold_met,
    iter_bits,
)
from .sumtree import (
    SumTree,
    TreeConfig,
    assign_code_new_keyword,
    build_alph,
    build_hash,
    build_meaning,
    collision_census,
    estimated_scv,
)

INF = math.inf

POLICIES = ("ncac", "nsum", "alph", "hash", "meaning")


class NetsimError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SimConfig:
    policy: str = "hash"
    cov: float = 1.0
    alpha: float = 1.0
    c: int = 2
    d: int = 6
    b: int = 4
    b_ad: float = INF
    b_q: float = INF
    scv_mode: str = "exact"  # exact | estimated
    trigger: str = "end"  # none | end | on_insert | size_bound
    size_bound: int | None = None
    arena_size: int = 4096
    cache_bound: int | None = None
    hash_seed: int = 0
    seed: int = 0
    engine: str = "auto"  # auto | fast | event
    rotate_hash_on_collision: bool = False
    measure_only: bool = False  # phase-1 sizes only; raw tables stay virtual
    # content-complete flooding by default (matches the fast engine and
    # keeps full-coverage recall exact); enable pruning for traffic and
    # growth experiments
    adv_prune: bool = False

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise NetsimError(f"unknown policy {self.policy!r}")
        if self.scv_mode not in ("exact", "estimated"):
            raise NetsimError(f"unknown scv mode {self.scv_mode!r}")
        if self.trigger not in ("none", "end", "on_insert", "size_bound"):
            raise NetsimError(f"unknown trigger {self.trigger!r}")
        if self.scv_mode == "estimated" and self.policy == "meaning":
            # sibling counts for clustering trees always come from the tree
            self.scv_mode = "exact"


# ---------------------------------------------------------------------------
# topology


@dataclass
class Topology:
    n: int
    adjacency: list[list[int]]
    seed: int

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def edge_count(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def is_connected(self) -> bool:
        seen = {0}
        todo = deque([0])
        while todo:
            x = todo.popleft()
            for y in self.adjacency[x]:
                if y not in seen:
                    seen.add(y)
                    todo.append(y)
        return len(seen) == self.n


def gen_topology(
    n: int,
    seed: int,
    deg_min: int = 2,
    deg_max: int = 10,
    weights: list[float] | None = None,
) -> Topology:
    """Random connected graph with degrees in [deg_min, deg_max] drawn
    from a weighted uniform distribution (uniform weights by default).
    For tiny n the degree law is clipped to feasibility."""
    if n < 2:
        raise NetsimError("need at least two nodes")
    rng = random.Random(derive_seed(seed, "topology"))
    deg_max = min(deg_max, n - 1)
    deg_min = min(deg_min, deg_max)
    choices = list(range(deg_min, deg_max + 1))
    if weights is not None and len(weights) != len(choices):
        raise NetsimError("degree weight vector length mismatch")
    targets = rng.choices(choices, weights=weights, k=n)

    adjacency: list[set[int]] = [set() for _ in range(n)]

    def link(a, b):
        adjacency[a].add(b)
        adjacency[b].add(a)

    # spanning tree first: connectivity by construction
    order = list(range(n))
    rng.shuffle(order)
    for i in range(1, n):
        node = order[i]
        candidates = [x for x in order[:i] if len(adjacency[x]) < deg_max]
        parent = rng.choice(candidates) if candidates else order[rng.randrange(i)]
        link(node, parent)

    # top up toward the degree targets
    want = [x for x in range(n) for _ in range(max(0, targets[x] - len(adjacency[x])))]
    rng.shuffle(want)
    for _ in range(4 * len(want)):
        if len(want) < 2:
            break
        a = want.pop()
        partners = [b for b in want if b != a and b not in adjacency[a]]
        if not partners or len(adjacency[a]) >= deg_max:
            continue
        b = rng.choice(partners)
        link(a, b)
        want.remove(b)

    # degree floor
    for x in range(n):
        while len(adjacency[x]) < min(deg_min, n - 1):
            candidates = [
                y for y in range(n) if y != x and y not in adjacency[x] and len(adjacency[y]) < deg_max
            ]
            if not candidates:
                candidates = [y for y in range(n) if y != x and y not in adjacency[x]]
            if not candidates:
                break
            link(x, rng.choice(candidates))

    topo = Topology(n, [sorted(adjacency[x]) for x in range(n)], seed)
    if not topo.is_connected():
        raise NetsimError("topology generation lost connectivity")
    return topo


def edge_nodes(topo: Topology) -> list[int]:
    """Bottom degree tercile: the resource-constrained rim of the network."""
    ranked = sorted(range(topo.n), key=lambda x: (topo.degree(x), x))
    return ranked[: max(1, topo.n // 3)]


# ---------------------------------------------------------------------------
# placement


@dataclass
class Placement:
    mode: str = "random"  # random | region
    regions: int = 7
    clusters: int = 14


def _jaccard_distance(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    if union == 0:
        return 0.0
    return 1.0 - len(a & b) / union


def _k_medoids(items: list[frozenset], k: int, rng: random.Random, iters: int = 4):
    """Deterministic PAM-style clustering on Jaccard distance. Medoid
    updates sample large clusters for tractability."""
    k = min(k, len(items))
    medoids = sorted(rng.sample(range(len(items)), k))
    assign = [0] * len(items)
    for _ in range(iters):
        for i, item in enumerate(items):
            best, best_d = 0, None
            for ci, m in enumerate(medoids):
                d = _jaccard_distance(item, items[m])
                if best_d is None or d < best_d:
                    best, best_d = ci, d
            assign[i] = best
        new_medoids = []
        for ci in range(k):
            members = [i for i, a in enumerate(assign) if a == ci]
            if not members:
                new_medoids.append(medoids[ci])
                continue
            probe = members if len(members) <= 120 else members[:: max(1, len(members) // 120)]
            best_m, best_cost = members[0], None
            for m in probe:
                cost = sum(_jaccard_distance(items[m], items[i]) for i in probe)
                if best_cost is None or cost < best_cost:
                    best_m, best_cost = m, cost
            new_medoids.append(best_m)
        if new_medoids == medoids:
            break
        medoids = new_medoids
    return assign


def place_streams(
    streams: list[Annotation],
    topo: Topology,
    placement: Placement,
    seed: int,
) -> dict[str, int]:
    """Assign every stream a host node.

    random: uniform over the low-degree (edge) nodes.
    region: the network is cut into contiguous breadth-first segments;
    streams are clustered by descriptor similarity and clusters are
    dealt round-robin to regions, so similar streams stay together.
    """
    rng = random.Random(derive_seed(seed, "placement"))
    if placement.mode == "random":
        pool = edge_nodes(topo)
        return {s.stream_id: rng.choice(pool) for s in streams}
    if placement.mode != "region":
        raise NetsimError(f"unknown placement mode {placement.mode!r}")
    if placement.regions > topo.n:
        raise NetsimError("more regions than nodes")

    # contiguous regions along the BFS traversal order
    order = []
    seen = {0}
    todo = deque([0])
    while todo:
        x = todo.popleft()
        order.append(x)
        for y in topo.adjacency[x]:
            if y not in seen:
                seen.add(y)
                todo.append(y)
    per = max(1, len(order) // placement.regions)
    segments = [order[i * per : (i + 1) * per] for i in range(placement.regions - 1)]
    segments.append(order[(placement.regions - 1) * per :])

    items = [frozenset(s.descriptors.items()) for s in streams]
    assign = _k_medoids(items, placement.clusters, rng)
    hosts = {}
    for i, stream in enumerate(streams):
        segment = segments[assign[i] % placement.regions]
        hosts[stream.stream_id] = rng.choice(segment)
    return hosts


# ---------------------------------------------------------------------------
# workload


@dataclass
class WorkloadQuery:
    qid: int
    raw: list[tuple[str, str]]  # (attribute, value), absences omitted
    src: int
    alpha: float


def gen_queries(
    streams: list[Annotation],
    count: int,
    seed: int,
    alpha: float,
    n_nodes: int,
) -> list[WorkloadQuery]:
    """Each query samples a stream, a non-empty subset of its
    descriptors, and a uniform source node."""
    if not streams:
        raise NetsimError("no streams to query")
    rng = random.Random(derive_seed(seed, "queries"))
    out = []
    for qid in range(count):
        stream = streams[rng.randrange(len(streams))]
        pairs = sorted(stream.descriptors.items())
        k = rng.randint(1, len(pairs))
        subset = sorted(rng.sample(pairs, k))
        out.append(WorkloadQuery(qid, subset, rng.randrange(n_nodes), alpha))
    return out


def brute_force_answer(query: WorkloadQuery, streams: list[Annotation]) -> set[str]:
    """Global scan over raw annotations: the recall oracle."""
    n = len(query.raw)
    out = set()
    for s in streams:
        hits = 0
        for attr, value in query.raw:
            have = s.descriptors.get(attr)
            if have is None or have == value:
                hits += 1
        if alpha_threshold_met(hits, n, query.alpha):
            out.add(s.stream_id)
    return out


# ---------------------------------------------------------------------------
# codec: descriptor values -> table keys


class Codec:
    """Per-attribute coding of descriptor values under one policy.

    Raw policies key tables by the keyword itself; the coded policies
    build one summarization tree per attribute. Attributes that some
    stream omits get a reserved absent-marker keyword so value-absent
    matching survives coding.
    """

    def __init__(self, streams: list[Annotation], cfg: SimConfig,
                 emb: EmbeddingProvider | None = None):
        self.cfg = cfg
        self.policy = cfg.policy
        self.emb = emb or DeterministicFallback()
        self.keywords = attribute_keywords(streams, with_absent_marker=True)
        self.attributes = sorted(self.keywords)
        self.trees: dict[str, SumTree] = {}
        self.new_keyword_count = 0
        self._cache: dict[tuple, CodedDescriptor] = {}
        self._build_trees()

    # -- tree construction ---------------------------------------------------

    def _build_trees(self):
        cfg = self.cfg
        self._cache.clear()
        if self.policy in ("ncac", "nsum"):
            return
        hash_seed = cfg.hash_seed
        for attempt in range(32):
            self.trees = {}
            tree_cfg = None
            for attr in self.attributes:
                words = self.keywords[attr]
                if self.policy == "alph":
                    self.trees[attr] = build_alph(words)
                elif self.policy == "hash":
                    tree_cfg = TreeConfig(
                        policy="hash", c=cfg.c, d=cfg.d, b=cfg.b, hash_seed=hash_seed
                    )
                    self.trees[attr] = build_hash(words, tree_cfg)
                else:
                    min_depth = cfg.b // cfg.c + 1
                    tree = build_meaning(
                        words,
                        self.emb,
                        cfg.c,
                        seed=derive_seed(cfg.seed, f"meaning:{attr}"),
                        min_depth=min_depth,
                        max_depth=cfg.d,
                    )
                    tree.cfg.b = cfg.b
                    tree.validate_against_master(cfg.b)
                    self.trees[attr] = tree
            if not (cfg.rotate_hash_on_collision and self.policy == "hash"):
                break
            colliding, _ = self.collision_counts()
            if colliding == 0:
                break
            hash_seed += 1
        self.hash_seed = hash_seed

    def total_unique_keywords(self) -> int:
        return sum(len(v) for v in self.keywords.values())

    def collision_counts(self) -> tuple[int, int]:
        """(colliding unique keywords, total unique keywords), hash policy."""
        colliding = total = 0
        for attr in self.attributes:
            if self.policy == "hash":
                c, t = collision_census(self.trees[attr])
            else:
                t = len(self.keywords[attr])
                c = 0
            colliding += c
            total += t
        return colliding, total

    def alias_count(self) -> int:
        return sum(len(t.alias_events) for t in self.trees.values())

    def omega(self, attr: str) -> float:
        space = (1 << self.cfg.c) ** self.cfg.d
        return min(1.0, len(self.keywords[attr]) / space)

    # -- encoding --------------------------------------------------------------

    def key_of(self, attr: str, value: str):
        return self.encode(attr, value).key

    def encode(self, attr: str, value: str) -> CodedDescriptor:
        cached = self._cache.get((attr, value))
        if cached is not None:
            return cached
        if self.policy in ("ncac", "nsum"):
            desc = CodedDescriptor(attr, value, None)
        else:
            tree = self.trees[attr]
            if value not in tree.leaf_of:
                self.new_keyword_count += 1
                assign_code_new_keyword(
                    tree,
                    value,
                    self.emb.vector(value) if self.policy == "meaning" else None,
                )
                self.keywords[attr].add(value)
                # tree shape changed: cached sibling counts are stale
                stale = [k for k in self._cache if k[0] == attr]
                for k in stale:
                    del self._cache[k]
            code, scv = tree.encode(value)
            if self.cfg.scv_mode == "estimated" and self.policy in ("hash", "alph"):
                scv = estimated_scv(tree.cfg, self.omega(attr), code)
            desc = CodedDescriptor(attr, code, scv)
        self._cache[(attr, value)] = desc
        return desc

    def marker_keys(self) -> dict[str, object]:
        out = {}
        for attr in self.attributes:
            if ABSENT in self.keywords[attr]:
                out[attr] = self.encode(attr, ABSENT).key
        return out

    def coded_bundle(self, annotation: Annotation):
        """(descriptor list incl. absent markers, {attr: key} map for the
        local store)."""
        coded = []
        coded_map = {}
        for attr in self.attributes:
            value = annotation.descriptors.get(attr)
            if value is None:
                if ABSENT in self.keywords[attr]:
                    coded.append(self.encode(attr, ABSENT))
                continue
            desc = self.encode(attr, value)
            coded.append(desc)
            coded_map[attr] = desc.key
        return coded, coded_map

    def true_sibling_group_size(self, attr: str, parent_code) -> int | None:
        tree = self.trees.get(attr)
        if tree is None:
            return None
        node = tree.by_code.get(parent_code)
        return None if node is None else node.nc


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    policy: str = ""
    n_nodes: int = 0
    n_streams: int = 0
    n_queries: int = 0
    rt_entries_avg: float = 0.0
    rt_entries_max: int = 0
    rt_bytes_avg: float = 0.0
    rt_bytes_max: int = 0
    adv_msgs: int = 0
    adv_per_stream: float = 0.0
    qry_msgs: int = 0
    qry_per_query: float = 0.0
    rsp_msgs: int = 0
    rsp_per_query: float = 0.0
    latency_avg: float = 0.0
    misleading_pct: float = 0.0
    collision_pct: float = 0.0
    alias_count: int = 0
    recall: float = 1.0
    aliased_responses: int = 0
    dropped_neighbors: int = 0
    premature_summaries: int = 0
    reestablish_cost: float = 0.0
    compression_vs_nsum: float | None = None

    def as_row(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = "" if v is None else v
        return out


def measure_misleading(records: list[dict]) -> float:
    """Share of query-forward edges whose propagation subtree produced no
    response, over the forward DAG of each query."""
    total = 0
    misled = 0
    for rec in records:
        edges = rec["forward_edges"]
        if not edges:
            continue
        total += len(edges)
        fruitful = set(rec["responders"])
        reverse: dict[int, list[int]] = {}
        for src, dst in edges:
            reverse.setdefault(dst, []).append(src)
        todo = deque(fruitful)
        while todo:
            x = todo.popleft()
            for src in reverse.get(x, ()):  # src can reach a responder via x
                if src not in fruitful:
                    fruitful.add(src)
                    todo.append(src)
        misled += sum(1 for _, dst in edges if dst not in fruitful)
    return 100.0 * misled / total if total else 0.0


# ---------------------------------------------------------------------------
# the simulation proper


class Simulation:
    def __init__(
        self,
        cfg: SimConfig,
        topo: Topology,
        streams: list[Annotation],
        hosts: dict[str, int],
        codec: Codec | None = None,
        trace: list | None = None,
    ):
        self.cfg = cfg
        self.topo = topo
        self.streams = streams
        self.hosts = hosts
        self.codec = codec or Codec(streams, cfg)
        self.trace = trace
        table_trigger = cfg.trigger if cfg.trigger in ("on_insert", "size_bound") else "manual"
        self.policy = TablePolicy(
            mode=cfg.policy,
            cov=cfg.cov,
            c=cfg.c,
            d=cfg.d,
            b=cfg.b,
            trigger=table_trigger,
            size_bound=cfg.size_bound,
            arena_size=cfg.arena_size,
            cache_bound=cfg.cache_bound,
            adv_prune=cfg.adv_prune,
        )
        self.nodes = [NodeState(i, topo.adjacency[i], self.policy) for i in range(topo.n)]
        self.adv_msgs = 0
        self.tick = 0
        self.query_records: list[dict] = []
        self.growth_rounds = 0
        self.new_descriptors = 0
        # virtual table sizes for measure-only runs
        self._virtual_entries: list[int] | None = None
        self._virtual_bytes: list[int] | None = None

    # -- tracing ------------------------------------------------------------

    def _trace(self, kind: str, src, dst, ident, hops):
        if self.trace is not None:
            hops_txt = "inf" if hops == INF else str(int(hops))
            self.trace.append(f"{self.tick}\t{kind}\t{src}\t{dst}\t{ident}\t{hops_txt}")

    # -- advertisement phase ---------------------------------------------------

    def advertise_all(self):
        engine = self.cfg.engine
        if engine == "auto":
            engine = "event" if (self.trace is not None or self.cfg.adv_prune) else "fast"
        if engine == "fast" and self.cfg.adv_prune:
            raise NetsimError("the fast engine models content-complete flooding only")
        if engine == "event":
            self._advertise_event()
        else:
            self._advertise_fast()
        if self.cfg.trigger == "end" and self.cfg.policy in ("alph", "hash", "meaning"):
            for node in self.nodes:
                node.summarize_tables(self.cfg.cov)

    def _advertise_event(self):
        for stream in self.streams:
            host = self.hosts[stream.stream_id]
            coded, coded_map = self.codec.coded_bundle(stream)
            out = advertise_stream(self.nodes[host], stream, coded, coded_map, self.cfg.b_ad)
            frontier = [(host, dst, msg) for dst, msg in out]
            while frontier:
                self.tick += 1
                nxt = []
                for src, dst, msg in frontier:
                    self.adv_msgs += 1
                    self._trace("ADV", src, dst, stream.stream_id, msg.hops_remaining)
                    for nb, fwd in self.nodes[dst].handle_advertise(msg, src):
                        nxt.append((dst, nb, fwd))
                frontier = nxt

    # fast engine -----------------------------------------------------------

    def _flood_tree(self, host: int):
        """(depth, parent) arrays for a flood rooted at ``host``,
        truncated at the advertisement hop bound."""
        n = self.topo.n
        depth = [-1] * n
        parent = [-1] * n
        depth[host] = 0
        todo = deque([host])
        b_ad = self.cfg.b_ad
        while todo:
            x = todo.popleft()
            if depth[x] >= b_ad:
                continue
            for y in self.topo.adjacency[x]:
                if depth[y] < 0:
                    depth[y] = depth[x] + 1
                    parent[y] = x
                    todo.append(y)
        return depth, parent

    def _sender_masks(self, host: int):
        """Per node: bitmask (over its 5-bit neighbor codes) of neighbors
        that deliver this host's advertisements to it, plus the message
        count of one full flood."""
        depth, parent = self._flood_tree(host)
        n = self.topo.n
        b_ad = self.cfg.b_ad
        masks = [0] * n
        messages = 0
        for y in range(n):
            if depth[y] < 0 or depth[y] >= b_ad:
                continue  # y never forwards
            node_y = self.nodes[y]
            fan = 0
            for x in self.topo.adjacency[y]:
                if x == parent[y]:
                    continue
                fan += 1
                if depth[x] >= 0:
                    masks[x] |= 1 << self.nodes[x].nbr_code[y]
            messages += fan
        return masks, messages, depth

    def _advertise_fast(self):
        cfg = self.cfg
        if cfg.b_ad < 1:
            for stream in self.streams:
                host = self.hosts[stream.stream_id]
                coded, coded_map = self.codec.coded_bundle(stream)
                advertise_stream(self.nodes[host], stream, coded, coded_map, cfg.b_ad)
            return
        host_cache: dict[int, tuple] = {}
        by_host: dict[int, list[Annotation]] = {}
        for stream in self.streams:
            by_host.setdefault(self.hosts[stream.stream_id], []).append(stream)
        for host in by_host:
            host_cache[host] = self._sender_masks(host)

        # local stores + per-stream advertisement accounting
        bundles: dict[str, list[CodedDescriptor]] = {}
        for stream in self.streams:
            host = self.hosts[stream.stream_id]
            coded, coded_map = self.codec.coded_bundle(stream)
            bundles[stream.stream_id] = coded
            self.nodes[host].store.append((stream, coded_map))
            self.nodes[host].seen_adverts.add(stream.stream_id)
            self.adv_msgs += host_cache[host][1]

        if cfg.measure_only and cfg.policy in ("ncac", "nsum"):
            self._measure_raw_tables(by_host, host_cache)
            return

        if cfg.policy == "ncac":
            self._fast_build_ncac(by_host, host_cache)
        elif cfg.policy == "nsum":
            self._fast_build_nsum(by_host, host_cache)
        else:
            self._fast_build_coded(bundles, host_cache)

    def _fast_build_ncac(self, by_host, host_cache):
        for host, streams in by_host.items():
            masks = host_cache[host][0]
            coded = [(s.stream_id, self.codec.coded_bundle(s)[0]) for s in streams]
            for x in range(self.topo.n):
                mask = masks[x]
                if not mask:
                    continue
                node = self.nodes[x]
                for sid, descs in coded:
                    node.seen_adverts.add(sid)
                    for desc in descs:
                        table = node.table_for(desc.attr)
                        streams_map = table.by_key.setdefault(desc.key, {})
                        if sid not in streams_map:
                            streams_map[sid] = mask
                            table.entry_count += 1
                            table._bytes += 8 + len(desc.key) + 1 + 4
                        else:
                            streams_map[sid] |= mask

    def _mask_matrix(self, host_cache):
        import numpy as np

        hosts = sorted(host_cache)
        index = {h: i for i, h in enumerate(hosts)}
        matrix = np.array([host_cache[h][0] for h in hosts], dtype=np.int64)
        return index, matrix

    def _union_masks(self, matrix, rows):
        import numpy as np

        if len(rows) == 1:
            return matrix[rows[0]]
        return np.bitwise_or.reduce(matrix[rows], axis=0)

    def _fast_build_nsum(self, by_host, host_cache):
        # per (attribute, value): the set of hosts advertising it
        per_value: dict[tuple, set[int]] = {}
        for host, streams in by_host.items():
            for s in streams:
                for desc in self.codec.coded_bundle(s)[0]:
                    per_value.setdefault((desc.attr, desc.key), set()).add(host)
        index, matrix = self._mask_matrix(host_cache)
        for (attr, key), hostset in sorted(per_value.items()):
            union = self._union_masks(matrix, [index[h] for h in sorted(hostset)])
            for x in union.nonzero()[0]:
                mask = int(union[x])
                table = self.nodes[x].table_for(attr)
                if key not in table.entries:
                    table.entries[key] = mask
                    table._bytes += table._entry_bytes(key)
                else:
                    table.entries[key] |= mask

    def _fast_build_coded(self, bundles, host_cache):
        per_value: dict[tuple, set[int]] = {}
        descs: dict[tuple, CodedDescriptor] = {}
        for sid, coded in bundles.items():
            host = self.hosts[sid]
            for desc in coded:
                per_value.setdefault((desc.attr, str(desc.key)), set()).add(host)
                descs[(desc.attr, str(desc.key))] = desc
        index, matrix = self._mask_matrix(host_cache)
        cap = 8
        for vk, hostset in sorted(per_value.items()):
            desc = descs[vk]
            union = self._union_masks(matrix, [index[h] for h in sorted(hostset)])
            for x in union.nonzero()[0]:
                mask = int(union[x])
                neighbors = []
                for code in iter_bits(mask):
                    neighbors.append(code)
                    if len(neighbors) == cap:
                        break
                table = self.nodes[int(x)].table_for(desc.attr)
                table.insert_bulk(desc.key, neighbors, desc.scv)

    def _measure_raw_tables(self, by_host, host_cache):
        """Exact table sizes without materializing the tables; content is
        fully determined by which streams reach which nodes."""
        n = self.topo.n
        entries = [0] * n
        nbytes = [0] * n
        if self.cfg.policy == "ncac":
            for host, streams in by_host.items():
                masks = host_cache[host][0]
                per_stream_bytes = []
                for s in streams:
                    coded = self.codec.coded_bundle(s)[0]
                    per_stream_bytes.append(
                        (len(coded), sum(8 + len(d.key) + 1 + 4 for d in coded))
                    )
                for x in range(n):
                    if masks[x]:
                        for cnt, bts in per_stream_bytes:
                            entries[x] += cnt
                            nbytes[x] += bts
        else:
            per_value: dict[tuple, set[int]] = {}
            for host, streams in by_host.items():
                for s in streams:
                    for desc in self.codec.coded_bundle(s)[0]:
                        per_value.setdefault((desc.attr, desc.key), set()).add(host)
            for (attr, key), hostset in per_value.items():
                mask_list = [host_cache[h][0] for h in sorted(hostset)]
                cost = 8 + len(key) + 1
                for x in range(n):
                    if any(masks[x] for masks in mask_list):
                        entries[x] += 1
                        nbytes[x] += cost
        self._virtual_entries = entries
        self._virtual_bytes = nbytes

    # -- query phase --------------------------------------------------------------

    def run_queries(self, workload: list[WorkloadQuery]):
        marker_keys = self.codec.marker_keys()
        records = []
        for wq in workload:
            coded = [(attr, self.codec.key_of(attr, value)) for attr, value in wq.raw]
            query = Query(wq.qid, coded, wq.alpha, wq.src, self.cfg.b_q)
            rec = self._run_one_query(wq, query, marker_keys)
            records.append(rec)
        self.query_records.extend(records)
        return records

    def _run_one_query(self, wq: WorkloadQuery, query: Query, marker_keys):
        forward_edges = []
        responders = {}
        matches_at = {}
        qry_msgs = 0
        found: set[str] = set()
        todo = deque([(wq.src, None, self.cfg.b_q, 0)])
        while todo:
            node_id, from_id, hops, depth = todo.popleft()
            matches, forwards = self.nodes[node_id].handle_query(
                query, from_id, hops, marker_keys
            )
            if matches is None:
                continue  # duplicate copy absorbed
            if matches:
                responders[node_id] = depth
                matches_at[node_id] = matches
                found.update(matches)
                self._trace("RSP", node_id, wq.src, wq.qid, depth)
            for nb in forwards:
                forward_edges.append((node_id, nb))
                qry_msgs += 1
                self._trace("QRY", node_id, nb, wq.qid, hops - 1)
                todo.append((nb, node_id, hops - 1, depth + 1))
        expected = brute_force_answer(wq, self.streams)
        # a response only vouches for its subtree when it is genuine:
        # collision-aliased local matches are potential misleading
        genuine = {
            node: depth
            for node, depth in responders.items()
            if any(sid in expected for sid in matches_at[node])
        }
        return {
            "qid": wq.qid,
            "forward_edges": forward_edges,
            "responders": genuine,
            "all_responders": responders,
            "qry_msgs": qry_msgs,
            "rsp_msgs": sum(responders.values()),
            "latency": max(responders.values()) if responders else None,
            "found": found,
            "expected": expected,
        }

    # -- metrics ---------------------------------------------------------------------

    def metrics(self) -> Metrics:
        m = Metrics(
            policy=self.cfg.policy,
            n_nodes=self.topo.n,
            n_streams=len(self.streams),
            n_queries=len(self.query_records),
        )
        if self._virtual_entries is not None:
            entries, nbytes = self._virtual_entries, self._virtual_bytes
        else:
            entries = [node.rt_entries() for node in self.nodes]
            nbytes = [node.rt_bytes() for node in self.nodes]
        m.rt_entries_avg = sum(entries) / len(entries)
        m.rt_entries_max = max(entries)
        m.rt_bytes_avg = sum(nbytes) / len(nbytes)
        m.rt_bytes_max = max(nbytes)
        m.adv_msgs = self.adv_msgs
        m.adv_per_stream = self.adv_msgs / len(self.streams) if self.streams else 0.0
        recs = self.query_records
        if recs:
            m.qry_msgs = sum(r["qry_msgs"] for r in recs)
            m.qry_per_query = m.qry_msgs / len(recs)
            m.rsp_msgs = sum(r["rsp_msgs"] for r in recs)
            m.rsp_per_query = m.rsp_msgs / len(recs)
            latencies = [r["latency"] for r in recs if r["latency"] is not None]
            m.latency_avg = sum(latencies) / len(latencies) if latencies else 0.0
            m.misleading_pct = measure_misleading(recs)
            answered = [r for r in recs if r["expected"]]
            if answered:
                m.recall = sum(
                    len(r["found"] & r["expected"]) / len(r["expected"]) for r in answered
                ) / len(answered)
            m.aliased_responses = sum(len(r["found"] - r["expected"]) for r in recs)
        colliding, total = self.codec.collision_counts()
        m.collision_pct = 100.0 * colliding / total if total else 0.0
        m.alias_count = self.codec.alias_count()
        m.dropped_neighbors = sum(node.dropped_neighbors() for node in self.nodes)
        m.premature_summaries = self._count_premature()
        return m

    def _count_premature(self) -> int:
        if self.cfg.policy not in ("hash", "meaning", "alph"):
            return 0
        premature = 0
        for node in self.nodes:
            for attr, table in node.tables.items():
                log = getattr(table, "summarize_log", None)
                if log is None:
                    continue
                for parent_code, nc_used in log.events:
                    true_nc = self.codec.true_sibling_group_size(attr, parent_code)
                    if true_nc is not None and nc_used < true_nc:
                        premature += 1
        return premature


# ---------------------------------------------------------------------------
# growth and reestablishment


def grow_network(sim: Simulation, growth_rate: float, new_streams: list[Annotation], seed: int):
    """Attach new nodes at the network edge and advertise new streams.

    New nodes connect preferentially to existing low-degree nodes with
    degrees drawn from the same law as the base topology. New keywords
    receive codes through the live trees (hash: stateless; alph: string;
    meaning: nearest-centroid descent with aliasing when full)."""
    rng = random.Random(derive_seed(seed, "growth"))
    topo = sim.topo
    n_new = round(growth_rate * topo.n)
    new_ids = []
    for _ in range(n_new):
        node_id = topo.n
        target = rng.randint(2, min(10, topo.n - 1))
        ranked = sorted(range(topo.n), key=lambda x: (topo.degree(x), x))
        pool = ranked[: max(4, topo.n // 3)]
        partners = sorted(rng.sample(pool, min(target, len(pool))))
        topo.adjacency.append(partners)
        topo.n += 1
        for p in partners:
            topo.adjacency[p].append(node_id)
            topo.adjacency[p].sort()
            sim.nodes[p].add_neighbor(node_id)
        node = NodeState(node_id, partners, sim.policy)
        sim.nodes.append(node)
        new_ids.append(node_id)

    pool = new_ids or edge_nodes(topo)
    before = sim.codec.new_keyword_count
    for stream in new_streams:
        host = rng.choice(pool)
        sim.hosts[stream.stream_id] = host
        sim.streams.append(stream)
        coded, coded_map = sim.codec.coded_bundle(stream)
        out = advertise_stream(sim.nodes[host], stream, coded, coded_map, sim.cfg.b_ad)
        frontier = [(host, dst, msg) for dst, msg in out]
        while frontier:
            nxt = []
            for src, dst, msg in frontier:
                sim.adv_msgs += 1
                for nb, fwd in sim.nodes[dst].handle_advertise(msg, src):
                    nxt.append((dst, nb, fwd))
            frontier = nxt
    sim.new_descriptors += sim.codec.new_keyword_count - before
    sim.growth_rounds += 1
    return new_ids


@dataclass
class ReestablishPolicy:
    trigger: str = "density_ratio"  # descriptor_count | density_ratio | intra_cluster | periodic
    threshold: float = 0.5
    period: int = 1
    new_d: int | None = None  # default: current depth + 1
    new_c: int | None = None


def check_reestablish(sim: Simulation, policy: ReestablishPolicy) -> bool:
    cfg = sim.cfg
    if policy.trigger == "descriptor_count":
        return sim.new_descriptors >= policy.threshold
    if policy.trigger == "periodic":
        return sim.growth_rounds > 0 and sim.growth_rounds % policy.period == 0
    if policy.trigger == "density_ratio":
        if cfg.policy not in ("hash", "meaning"):
            return False
        space = (1 << cfg.c) ** cfg.d
        ratio = max(
            len(sim.codec.keywords[attr]) / space for attr in sim.codec.attributes
        )
        return ratio >= policy.threshold
    if policy.trigger == "intra_cluster":
        if cfg.policy != "meaning":
            return False
        worst = 0.0
        for attr in sim.codec.attributes:
            tree = sim.codec.trees[attr]
            stack = [tree.root]
            while stack:
                node = stack.pop()
                kids = node.sorted_children()
                stack.extend(k for k in kids if k.children)
                leaf_kids = [k for k in kids if k.value is not None]
                if len(leaf_kids) >= 2 and node.centroid is not None:
                    dist = sum(
                        float(((k.centroid - node.centroid) ** 2).sum()) ** 0.5
                        for k in leaf_kids
                    ) / len(leaf_kids)
                    worst = max(worst, dist)
        return worst > policy.threshold
    raise NetsimError(f"unknown reestablish trigger {policy.trigger!r}")


def reestablish(sim: Simulation, policy: ReestablishPolicy) -> float:
    """Rebuild trees and codes, clear every routing table, re-advertise
    every stream, and return the average number of advertisement messages
    per stream.

    Re-advertisement always prunes descriptors whose deepest entry
    already lists the sender: advertisements of codes the neighborhood
    already routes die out quickly, which is what keeps the per-stream
    cost from scaling with the full network size."""
    cfg = sim.cfg
    if cfg.policy == "hash":
        cfg.d = policy.new_d if policy.new_d is not None else cfg.d + 1
    elif cfg.policy == "meaning":
        if policy.new_c is not None:
            cfg.c = policy.new_c
        if policy.new_d is not None:
            cfg.d = policy.new_d
    sim.codec = Codec(sim.streams, cfg, emb=sim.codec.emb)
    sim.policy.c, sim.policy.d, sim.policy.b = cfg.c, cfg.d, cfg.b
    for node in sim.nodes:
        node.tables.clear()
        node.seen_adverts.clear()
        node.store.clear()
    sim.new_descriptors = 0
    if not sim.streams:
        return 0.0

    prune_before = sim.policy.adv_prune
    sim.policy.adv_prune = True
    messages = 0
    try:
        for stream in sim.streams:
            host = sim.hosts[stream.stream_id]
            coded, coded_map = sim.codec.coded_bundle(stream)
            frontier = [
                (host, dst, msg)
                for dst, msg in advertise_stream(sim.nodes[host], stream, coded, coded_map, cfg.b_ad)
            ]
            while frontier:
                nxt = []
                for src, dst, msg in frontier:
                    messages += 1
                    for nb, fwd in sim.nodes[dst].handle_advertise(msg, src):
                        nxt.append((dst, nb, fwd))
                frontier = nxt
    finally:
        sim.policy.adv_prune = prune_before
    if cfg.trigger == "end" and cfg.policy in ("alph", "hash", "meaning"):
        for node in sim.nodes:
            node.summarize_tables(cfg.cov)
    cost = messages / len(sim.streams)
    sim.adv_msgs += messages
    return cost


# ---------------------------------------------------------------------------
# one-call experiment runner


def run_experiment(
    cfg: SimConfig,
    topo: Topology,
    streams: list[Annotation],
    hosts: dict[str, int],
    queries: list[WorkloadQuery],
    codec: Codec | None = None,
    trace: list | None = None,
) -> Metrics:
    """Advertise every stream, run the workload, return the metrics."""
    sim = Simulation(cfg, topo, streams, hosts, codec=codec, trace=trace)
    sim.advertise_all()
    if queries:
        sim.run_queries(queries)
    return sim.metrics()
