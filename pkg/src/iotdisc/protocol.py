"""Node-level discovery logic: matching, advertisement, query forwarding.

Matching semantics: a query descriptor attr-matches a stream descriptor
when the values are equal or either side is absent. A stream (or a
forwarding neighbor) alpha-matches when at least ``alpha * n`` of the
``n`` attributes present in the query attr-match.

Advertisements flood per stream: a node processes each stream's
advertisement once (first arrival wins) and re-forwards it to every
neighbor except the sender. Individual descriptors are pruned from the
re-forwarded bundle when the deepest matching table entry already lists
the sender; nothing downstream can learn anything new from those.
Queries flood along alpha-matching neighbors with per-copy hop budgets;
each node processes a query id once, and responses retrace the query's
path.

Neighbor sets are handled as bitmasks over the per-node 5-bit neighbor
codes throughout this module; ids only appear at the borders.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

from .corpus import ABSENT, Annotation
from .rtable import AlphTrie, HybridTableTrie
from .sumtree import Scv

RAW_POLICIES = ("ncac", "nsum")
CODED_POLICIES = ("alph", "hash", "meaning")
MAX_NEIGHBORS = 31  # 5-bit codes, one value reserved as the empty sentinel


class ProtocolError(ValueError):
    pass


def iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_of(codes) -> int:
    out = 0
    for c in codes:
        out |= 1 << c
    return out


# ---------------------------------------------------------------------------
# matching


def attr_match(q_val, ds_val) -> bool:
    """Equal, or either side absent (None or the absent marker)."""
    if q_val is None or ds_val is None:
        return True
    if q_val == ABSENT or ds_val == ABSENT:
        return True
    return q_val == ds_val


def alpha_match_count(q_pairs, ds_map) -> int:
    """Number of query descriptors that attr-match a coded descriptor map."""
    hits = 0
    for attr, key in q_pairs:
        ds_key = ds_map.get(attr)
        if ds_key is None or ds_key == key:
            hits += 1
    return hits


def alpha_threshold_met(hits: int, n: int, alpha: float) -> bool:
    return hits + 1e-9 >= alpha * n


def alpha_match_local(query: "Query", coded_descriptors: dict) -> bool:
    """Coded local matching; collision-aliased keys therefore match."""
    hits = alpha_match_count(query.descriptors, coded_descriptors)
    return alpha_threshold_met(hits, len(query.descriptors), query.alpha)


# ---------------------------------------------------------------------------
# messages


@dataclass
class CodedDescriptor:
    attr: str
    key: object  # int code (hash/meaning), str code (alph), raw keyword otherwise
    scv: Scv | None = None


@dataclass
class AdvMsg:
    stream_id: str
    descriptors: list[CodedDescriptor]
    hops_remaining: float
    origin_forwarder: int = -1


@dataclass
class Query:
    id: int
    descriptors: list[tuple]  # (attr, key) pairs, absent attributes omitted
    alpha: float
    src: int
    hop_bound: float


@dataclass
class Response:
    query_id: int
    responder: int
    stream_ids: list[str]
    depth: int


# ---------------------------------------------------------------------------
# per-attribute tables for the uncoded policies


class DictTable:
    """Descriptor-keyed table (common-attribute compression baseline).

    Values are raw keyword strings, so an entry is charged its string
    bytes plus a fixed 8-byte block for type, sibling data and neighbors.
    Optional ``bound`` turns the table into an LRU cache over entries.
    """

    def __init__(self, bound: int | None = None):
        self.entries: OrderedDict = OrderedDict()  # key -> neighbor mask
        self.bound = bound
        self.dropped_neighbors = 0
        self._bytes = 0

    @property
    def entry_count(self) -> int:
        return len(self.entries)

    @property
    def byte_size(self) -> int:
        return self._bytes

    @staticmethod
    def _entry_bytes(key) -> int:
        return 8 + len(key) + 1

    def insert(self, key, neighbor: int) -> str:
        bit = 1 << neighbor
        mask = self.entries.get(key)
        if mask is not None:
            self.entries.move_to_end(key)
            if mask & bit:
                return "known"
            self.entries[key] = mask | bit
            return "added"
        self.entries[key] = bit
        self._bytes += self._entry_bytes(key)
        if self.bound is not None and len(self.entries) > self.bound:
            old_key, _ = self.entries.popitem(last=False)
            self._bytes -= self._entry_bytes(old_key)
        return "added"

    def lookup_mask(self, key) -> int:
        mask = self.entries.get(key)
        if mask is None:
            return 0
        self.entries.move_to_end(key)
        return mask

    def lookup(self, key) -> set:
        return set(iter_bits(self.lookup_mask(key)))


class NcacTable:
    """Stream-qualified table: keys are (descriptor value, stream id).

    Kept as a side map because the packed layout has no stream-id field;
    an entry is charged its string bytes, the fixed 8-byte block, and a
    4-byte stream id.
    """

    def __init__(self):
        self.by_key: dict = {}  # value -> {stream_id: neighbor mask}
        self.entry_count = 0
        self._bytes = 0

    @property
    def byte_size(self) -> int:
        return self._bytes

    def insert(self, key, stream_id: str, neighbor: int) -> str:
        bit = 1 << neighbor
        streams = self.by_key.setdefault(key, {})
        mask = streams.get(stream_id)
        if mask is None:
            streams[stream_id] = bit
            self.entry_count += 1
            self._bytes += 8 + len(key) + 1 + 4
            return "added"
        if mask & bit:
            return "known"
        streams[stream_id] = mask | bit
        return "added"

    def lookup_mask(self, key) -> int:
        out = 0
        for mask in self.by_key.get(key, {}).values():
            out |= mask
        return out

    def lookup(self, key) -> set:
        return set(iter_bits(self.lookup_mask(key)))

    def lookup_streams(self, key) -> dict:
        return self.by_key.get(key, {})


# ---------------------------------------------------------------------------
# node state


@dataclass
class TablePolicy:
    """Everything a node needs to build and drive its tables."""

    mode: str  # ncac | nsum | alph | hash | meaning
    cov: float = 1.0
    c: int = 2
    d: int = 9
    b: int = 8
    trigger: str = "manual"
    size_bound: int | None = None
    arena_size: int = 4096
    cache_bound: int | None = None  # LRU entry bound for the nsum baseline
    b_eff: dict = field(default_factory=dict)  # per-attribute master width
    # With adv_prune a node drops a descriptor from re-forwarded bundles
    # when its deepest table entry already lists the sender (saves
    # advertisement traffic). Without it bundles stay whole, so every
    # node learns each stream's full descriptor set through its first
    # delivery edge, which makes full-coverage recall provably exact.
    adv_prune: bool = True


class NodeState:
    """One network node: tables, hosted annotations, neighbor registry."""

    def __init__(self, node_id: int, neighbors, policy: TablePolicy):
        if len(neighbors) > MAX_NEIGHBORS:
            raise ProtocolError("more neighbors than the 5-bit code space")
        self.id = node_id
        self.neighbors = tuple(sorted(neighbors))
        self.nbr_code = {nb: i for i, nb in enumerate(self.neighbors)}
        self.code_nbr = dict(enumerate(self.neighbors))
        self.policy = policy
        self.tables: dict = {}
        self.store: list[tuple[Annotation, dict]] = []
        self.seen_adverts: set[str] = set()
        self.seen_queries: set[int] = set()
        self.breadcrumbs: dict[int, int] = {}

    def add_neighbor(self, node_id: int):
        """Register a late-joining neighbor; existing codes stay stable."""
        if node_id in self.nbr_code:
            return
        if len(self.neighbors) >= MAX_NEIGHBORS:
            raise ProtocolError("neighbor code space exhausted")
        code = len(self.neighbors)
        self.neighbors = self.neighbors + (node_id,)
        self.nbr_code[node_id] = code
        self.code_nbr[code] = node_id

    def table_for(self, attr: str):
        table = self.tables.get(attr)
        if table is None:
            mode = self.policy.mode
            if mode == "ncac":
                table = NcacTable()
            elif mode == "nsum":
                table = DictTable(bound=self.policy.cache_bound)
            elif mode == "alph":
                table = AlphTrie(cov=self.policy.cov)
            else:
                table = HybridTableTrie(
                    c=self.policy.c,
                    d=self.policy.d,
                    b=self.policy.b_eff.get(attr, self.policy.b),
                    policy=mode,
                    arena_size=self.policy.arena_size,
                    cov=self.policy.cov,
                    trigger=self.policy.trigger,
                    size_bound=self.policy.size_bound,
                )
            self.tables[attr] = table
        return table

    # -- accounting -------------------------------------------------------

    def rt_entries(self) -> int:
        return sum(t.entry_count for t in self.tables.values())

    def rt_bytes(self) -> int:
        return sum(t.byte_size for t in self.tables.values())

    def dropped_neighbors(self) -> int:
        return sum(getattr(t, "dropped_neighbors", 0) for t in self.tables.values())

    # -- advertisement ------------------------------------------------------

    def insert_descriptor(self, desc: CodedDescriptor, stream_id: str, from_code: int) -> str:
        table = self.table_for(desc.attr)
        if self.policy.mode == "ncac":
            return table.insert(desc.key, stream_id, from_code)
        if self.policy.mode == "nsum":
            return table.insert(desc.key, from_code)
        inserted, fnset = table.insert(desc.key, from_code, desc.scv)
        if inserted:
            return "added"
        return "known" if from_code in fnset else "dropped"

    def handle_advertise(self, msg: AdvMsg, from_id: int) -> list[tuple[int, AdvMsg]]:
        """Insert every descriptor; re-forward the bundle to the other
        neighbors on first arrival, pruning descriptors whose deepest
        table entry already listed the sender."""
        from_code = self.nbr_code[from_id]
        keep: list[CodedDescriptor] = []
        for desc in msg.descriptors:
            status = self.insert_descriptor(desc, msg.stream_id, from_code)
            if status != "known" or not self.policy.adv_prune:
                keep.append(desc)
        first_arrival = msg.stream_id not in self.seen_adverts
        self.seen_adverts.add(msg.stream_id)
        if not first_arrival or msg.hops_remaining <= 0 or not keep:
            return []
        fwd = AdvMsg(msg.stream_id, keep, msg.hops_remaining - 1, self.id)
        return [(nb, fwd) for nb in self.neighbors if nb != from_id]

    def summarize_tables(self, cov: float | None = None):
        for table in self.tables.values():
            if hasattr(table, "summarize_table"):
                table.summarize_table(cov)

    # -- queries ----------------------------------------------------------------

    def _fnset_mask(self, attr: str, key, marker_key) -> int:
        table = self.tables.get(attr)
        if table is None:
            return 0
        if hasattr(table, "lookup_mask"):
            mask = table.lookup_mask(key)
            if marker_key is not None and marker_key != key:
                mask |= table.lookup_mask(marker_key)
            return mask
        mask = mask_of(table.lookup(key))
        if marker_key is not None and marker_key != key:
            mask |= mask_of(table.lookup(marker_key))
        return mask

    def alpha_matching_neighbors(self, query: Query, marker_keys: dict) -> set[int]:
        """Neighbors appearing in the forwarding sets of at least
        ``alpha * n`` query attributes (node ids, not 5-bit codes)."""
        n = len(query.descriptors)
        if n == 0:
            return set()
        if self.policy.mode == "ncac":
            return self._ncac_mns(query, marker_keys)
        counts: dict[int, int] = {}
        for attr, key in query.descriptors:
            for code in iter_bits(self._fnset_mask(attr, key, marker_keys.get(attr))):
                counts[code] = counts.get(code, 0) + 1
        return {
            self.code_nbr[code]
            for code, hits in counts.items()
            if alpha_threshold_met(hits, n, query.alpha)
        }

    def _ncac_mns(self, query: Query, marker_keys: dict) -> set[int]:
        # a neighbor qualifies only if a single advertised stream covers
        # enough of the query behind it
        n = len(query.descriptors)
        counts: dict[tuple, int] = {}
        for attr, key in query.descriptors:
            table = self.tables.get(attr)
            if table is None:
                continue
            probes = [key]
            marker = marker_keys.get(attr)
            if marker is not None and marker != key:
                probes.append(marker)
            seen: set = set()
            for probe in probes:
                for sid, mask in table.lookup_streams(probe).items():
                    for code in iter_bits(mask):
                        seen.add((code, sid))
            for pair in seen:
                counts[pair] = counts.get(pair, 0) + 1
        return {
            self.code_nbr[code]
            for (code, _sid), hits in counts.items()
            if alpha_threshold_met(hits, n, query.alpha)
        }

    def local_matches(self, query: Query) -> list[str]:
        return [ann.stream_id for ann, coded in self.store if alpha_match_local(query, coded)]

    def handle_query(self, query: Query, from_id, hops_remaining: float, marker_keys: dict):
        """Process one query copy. Returns (responses, forward node ids);
        duplicate copies of the same query id are absorbed (None, [])."""
        if query.id in self.seen_queries:
            return None, []
        self.seen_queries.add(query.id)
        if from_id is not None:
            self.breadcrumbs[query.id] = from_id
        matches = self.local_matches(query)
        forwards = []
        if hops_remaining > 0:
            mns = self.alpha_matching_neighbors(query, marker_keys)
            forwards = sorted(nb for nb in mns if nb != from_id)
        return matches, forwards


def advertise_stream(
    node: NodeState,
    annotation: Annotation,
    coded: list[CodedDescriptor],
    coded_map: dict,
    b_ad: float,
) -> list[tuple[int, AdvMsg]]:
    """Store the annotation locally and fan the advertisement out to every
    neighbor with the hop budget decremented once."""
    node.store.append((annotation, coded_map))
    node.seen_adverts.add(annotation.stream_id)
    if not coded or b_ad < 1:
        return []
    msg = AdvMsg(annotation.stream_id, coded, b_ad - 1, node.id)
    return [(nb, msg) for nb in node.neighbors]
