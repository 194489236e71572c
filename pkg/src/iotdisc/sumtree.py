"""Summarization trees, keyword codes and sibling-count vectors.

A summarization tree defines, per attribute, which keyword codes can be
collapsed into which parent code inside a routing table. Three policies
are supported:

* ``alph`` -- a longest-common-prefix trie over the keyword strings;
  codes are the keywords themselves with a ``$`` terminator on leaves.
* ``hash`` -- keywords hashed into a uniform space of ``c*d`` bits; a
  leading 1 bit is prepended so every code is ``c*d + 1`` bits long and
  a parent code is the child code with the last ``c`` bits removed.
* ``meaning`` -- recursive k-means clustering of keyword embeddings into
  ``2^c`` clusters; the j-th child of a node coded ``p`` is coded
  ``p * 2^c + j``.

Bit codes are plain ints: the leading 1 makes ``int.bit_length()`` the
code length, so no separate length field is needed. String codes (alph)
are plain ``str``.

Each node also carries a sibling-count vector (SCV): the concatenation of
the sibling counts of the node and its ancestors, one fixed-width field
per level below the root. Routing tables use the last field of a carried
SCV to learn the full sibling-set size without storing the tree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingProvider
from .hashing import stable_hash64

# Character universe for string codes: lowercase letters, digits,
# underscore, plus the reserved leaf terminator.
TERMINATOR = "$"
ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789_"
N_CHAR = len(ALPHABET) + 1  # 38, terminator included
ALPH_SCV_WIDTH = math.ceil(math.log2(N_CHAR))  # 6 bits per level


class SumTreeError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


# ---------------------------------------------------------------------------
# codes


def code_bits(code: int) -> str:
    """Render a bit code as a binary-digit string (leading 1 included)."""
    return format(code, "b")


def code_level(code: int, c: int) -> int:
    """Depth of a bit code below the 1-bit root."""
    return (code.bit_length() - 1) // c


def parent_code(code: int, c: int) -> int:
    """Parent of a bit code: the code with its last ``c`` bits removed."""
    if code.bit_length() <= c:
        raise SumTreeError(f"code {code_bits(code)} has no parent")
    return code >> c


@dataclass(frozen=True)
class Scv:
    """Sibling-count vector: one ``width``-bit field per level, root first."""

    fields: tuple[int, ...]
    width: int

    def __post_init__(self):
        for f in self.fields:
            if not 0 <= f < (1 << self.width):
                raise SumTreeError(f"scv field {f} does not fit in {self.width} bits")

    @property
    def bit_length(self) -> int:
        return len(self.fields) * self.width

    @property
    def last(self) -> int:
        if not self.fields:
            raise SumTreeError("empty scv has no last field")
        return self.fields[-1]

    def drop_last(self) -> "Scv":
        return Scv(self.fields[:-1], self.width)

    def suffix(self, nfields: int) -> "Scv":
        return Scv(self.fields[len(self.fields) - nfields :], self.width)

    def bits(self) -> str:
        return "".join(format(f, f"0{self.width}b") for f in self.fields)

    def pack(self) -> int:
        value = 0
        for f in self.fields:
            value = (value << self.width) | f
        return value

    @classmethod
    def unpack(cls, value: int, nfields: int, width: int) -> "Scv":
        fields = []
        for i in range(nfields):
            shift = (nfields - 1 - i) * width
            fields.append((value >> shift) & ((1 << width) - 1))
        return cls(tuple(fields), width)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class TreeConfig:
    """Static parameters of a summarization tree.

    ``b`` is the master-table prefix width consumed by the routing table;
    it is carried here so code lengths can be validated against it at
    build time (no leaf may sit at or above the master-table level).
    """

    policy: str = "hash"  # alph | hash | meaning
    c: int = 2
    d: int = 9
    hash_seed: int = 0
    b: int = 8

    def __post_init__(self):
        if self.policy not in ("alph", "hash", "meaning"):
            raise SumTreeError(f"unknown policy {self.policy!r}")
        if self.c < 1:
            raise SumTreeError("c must be >= 1")
        if self.policy == "hash":
            if self.d < 1:
                raise SumTreeError("d must be >= 1")
            if self.b >= 0 and self.d <= self.b / self.c:
                raise SumTreeError(
                    f"hash leaves at level d={self.d} would not clear the "
                    f"master prefix (b={self.b}, c={self.c})"
                )

    @property
    def fanout(self) -> int:
        return 1 << self.c

    @property
    def code_bits(self) -> int:
        return self.c * self.d + 1

    @property
    def hash_space(self) -> int:
        """Number of leaf slots: the (c*d + 1)-bit codes with a leading 1,
        i.e. 2^(c*d) = (2^c)^d values."""
        return self.fanout**self.d

    def scv_width(self) -> int:
        return ALPH_SCV_WIDTH if self.policy == "alph" else self.c


# ---------------------------------------------------------------------------
# tree nodes


class SumTreeNode:
    __slots__ = ("tau", "ns", "value", "values", "children", "level", "centroid", "count")

    def __init__(self, tau, level):
        self.tau = tau
        self.level = level
        self.ns = 0
        self.value = None  # keyword, leaves only
        self.values = None  # extra colliding keywords sharing a hash leaf
        self.children: dict = {}
        self.centroid = None  # cluster centroid, meaning policy internals
        self.count = 0  # embedded element count under this node (meaning)

    @property
    def nc(self) -> int:
        return len(self.children)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def sorted_children(self):
        return [self.children[k] for k in sorted(self.children)]


class SumTree:
    """A built summarization tree plus code/SCV lookup helpers."""

    def __init__(self, cfg: TreeConfig, root: SumTreeNode):
        self.cfg = cfg
        self.root = root
        self.by_code: dict = {}
        self.leaf_of: dict[str, SumTreeNode] = {}
        self.alias_events: list[tuple[str, str]] = []  # (keyword, reused keyword)
        self._reindex()

    def _reindex(self):
        self.by_code.clear()
        self.leaf_of.clear()
        self.root.level = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            self.by_code[node.tau] = node
            if node.value is not None:
                self.leaf_of[node.value] = node
                for extra in node.values or ():
                    self.leaf_of[extra] = node
            for child in node.children.values():
                child.level = node.level + 1
                stack.append(child)

    # -- sibling counts ----------------------------------------------------

    def _fix_sibling_counts(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            for child in node.children.values():
                child.ns = node.nc - 1
                stack.append(child)
        self.root.ns = 0

    def scv_of(self, node: SumTreeNode) -> Scv:
        """Exact SCV: sibling counts from the root's children down to ``node``.

        For the meaning policy only the node's own count is carried; every
        internal level is full by construction.
        """
        width = self.cfg.scv_width()
        if self.cfg.policy == "meaning":
            return Scv((node.ns,), width)
        fields = []
        cur = node
        while cur is not self.root:
            fields.append(cur.ns)
            cur = self._parent_of(cur)
        fields.reverse()
        return Scv(tuple(fields), width)

    def _parent_of(self, node: SumTreeNode) -> SumTreeNode:
        if self.cfg.policy == "alph":
            code = node.tau
            # walk prefixes until a known code; the root has code ""
            for cut in range(len(code) - 1, -1, -1):
                cand = self.by_code.get(code[:cut])
                if cand is not None and node.tau in cand.children:
                    return cand
            raise SumTreeError(f"orphan code {node.tau!r}")
        return self.by_code[parent_code(node.tau, self.cfg.c)]

    # -- public operations ---------------------------------------------------

    def encode(self, keyword: str) -> tuple:
        """Leaf code and full sibling-count vector for a known keyword."""
        node = self.leaf_of.get(keyword)
        if node is None:
            raise SumTreeError(f"keyword {keyword!r} not in tree")
        return node.tau, self.scv_of(node)

    def siblings(self, code) -> set:
        """Codes of all same-parent nodes, excluding ``code`` itself."""
        node = self.by_code.get(code)
        if node is None:
            raise SumTreeError(f"unknown code {code!r}")
        if node is self.root:
            return set()
        parent = self._parent_of(node)
        return {ch.tau for ch in parent.children.values() if ch is not node}

    def min_leaf_level(self) -> int:
        levels = [n.level for n in self.by_code.values() if n.value is not None]
        return min(levels) if levels else 0

    def validate_against_master(self, b: int | None = None):
        """No leaf may sit at or above the master-prefix level b/c."""
        if self.cfg.policy == "alph":
            return
        b = self.cfg.b if b is None else b
        floor = b / self.cfg.c
        lvl = self.min_leaf_level()
        if lvl <= floor:
            raise SumTreeError(
                f"leaf at level {lvl} conflicts with master prefix b={b} (c={self.cfg.c})"
            )

    def export(self) -> dict:
        """Debug export: nested dict with code bits, sibling count and value."""

        def conv(node):
            out = {
                "tau": node.tau if isinstance(node.tau, str) else code_bits(node.tau),
                "ns": node.ns,
            }
            if node.value is not None:
                out["value"] = node.value
                if node.values:
                    out["also"] = sorted(node.values)
            if node.children:
                out["children"] = [conv(c) for c in node.sorted_children()]
            return out

        return conv(self.root)

    def export_json(self) -> str:
        return json.dumps(self.export(), sort_keys=True)


# ---------------------------------------------------------------------------
# builders


def _check_keywords(keywords):
    if not keywords:
        raise SumTreeError("empty keyword set")
    for kw in keywords:
        if TERMINATOR in kw:
            raise SumTreeError(f"keyword {kw!r} contains reserved terminator")
        if not kw:
            raise SumTreeError("empty keyword")


def build_alph(keywords) -> SumTree:
    """Longest-common-prefix trie over ``keyword + '$'`` codes.

    Internal nodes are the LCP of their children; every internal node has
    at least two children, except possibly the root (code "").
    """
    _check_keywords(keywords)
    codes = sorted(kw + TERMINATOR for kw in set(keywords))

    def split_groups(codes_, depth):
        groups = {}
        for code in codes_:
            groups.setdefault(code[depth], []).append(code)
        return [groups[ch] for ch in sorted(groups)]

    def lcp_of(codes_):
        first, last = codes_[0], codes_[-1]
        n = min(len(first), len(last))
        i = 0
        while i < n and first[i] == last[i]:
            i += 1
        return first[:i]

    def build(node, codes_, depth):
        for group in split_groups(codes_, depth):
            if len(group) == 1:
                child = SumTreeNode(group[0], node.level + 1)
                child.value = group[0][: -len(TERMINATOR)]
                node.children[group[0]] = child
            else:
                prefix = lcp_of(group)
                child = SumTreeNode(prefix, node.level + 1)
                node.children[prefix] = child
                build(child, group, len(prefix))

    root = SumTreeNode("", 0)
    build(root, codes, 0)
    cfg = TreeConfig(policy="alph", c=1, d=1, b=0)
    tree = SumTree(cfg, root)
    tree._fix_sibling_counts()
    return tree


def hash_code(keyword: str, cfg: TreeConfig) -> int:
    """Leaf code under the hash policy: seeded hash truncated to c*d bits,
    with a leading 1 (total c*d + 1 bits)."""
    raw = stable_hash64(keyword, cfg.hash_seed) & ((1 << (cfg.c * cfg.d)) - 1)
    return (1 << (cfg.c * cfg.d)) | raw


def build_hash(keywords, cfg: TreeConfig) -> SumTree:
    """Hash tree: every keyword hashed to a leaf at level d; internal
    nodes materialized only along occupied paths. Colliding keywords
    share a leaf."""
    _check_keywords(keywords)
    if cfg.policy != "hash":
        raise SumTreeError("config policy must be 'hash'")
    root = SumTreeNode(1, 0)
    tree = SumTree(cfg, root)
    for kw in sorted(set(keywords)):
        _hash_insert(tree, kw)
    tree._fix_sibling_counts()
    tree._reindex()
    return tree


def _hash_insert(tree: SumTree, keyword: str) -> SumTreeNode:
    cfg = tree.cfg
    leaf_code = hash_code(keyword, cfg)
    node = tree.root
    for level in range(1, cfg.d + 1):
        digit = (leaf_code >> ((cfg.d - level) * cfg.c)) & (cfg.fanout - 1)
        nxt = node.children.get(digit)
        if nxt is None:
            nxt = SumTreeNode((node.tau << cfg.c) | digit, level)
            node.children[digit] = nxt
        node = nxt
    if node.value is None:
        node.value = keyword
    elif node.value != keyword and keyword not in (node.values or ()):
        node.values = (node.values or [])
        node.values.append(keyword)
        tree.alias_events.append((keyword, node.value))
    return node


def collision_census(tree: SumTree) -> tuple[int, int]:
    """(colliding keyword count, total keyword count) for a hash tree."""
    colliding = 0
    total = 0
    for node in tree.by_code.values():
        if node.value is None:
            continue
        k = 1 + len(node.values or ())
        total += k
        if k > 1:
            colliding += k
    return colliding, total


def build_meaning(
    keywords,
    emb: EmbeddingProvider,
    c: int,
    seed: int = 0,
    min_depth: int = 1,
    max_depth: int | None = None,
) -> SumTree:
    """Clustering tree: recursive k-means over keyword embeddings.

    The root has code 1. A cluster of k keywords stops recursing when
    k <= 2^c: one keyword makes the node a leaf, otherwise k leaf
    children are spawned directly. Cluster centroids are retained on
    internal nodes so later keywords can be placed by nearest-centroid
    descent.

    ``min_depth`` keeps every leaf strictly below the master-table prefix
    (small clusters are pushed down through chains of singleton clusters)
    and ``max_depth`` bounds code length: clusters still holding more
    than one keyword at the cap keep one representative per leaf and
    alias the rest to it (recorded in ``alias_events``).
    """
    _check_keywords(keywords)
    fanout = 1 << c
    words = sorted(set(keywords))
    vectors = emb.matrix(words)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    vectors = vectors / norms
    rng = np.random.default_rng(seed)
    if max_depth is not None and max_depth < min_depth:
        raise SumTreeError("max_depth below min_depth")

    root = SumTreeNode(1, 0)
    root.centroid = vectors.mean(axis=0)
    root.count = len(words)
    aliases: list[tuple[str, str]] = []

    def make_child(node, j, members):
        child = SumTreeNode((node.tau << c) | j, node.level + 1)
        sub = vectors[members]
        child.centroid = sub.mean(axis=0)
        child.count = len(members)
        node.children[j] = child
        return child

    def spawn_leaves(node, idxs):
        for j, i in enumerate(sorted(idxs, key=lambda k: words[k])):
            child = make_child(node, j, [i])
            child.value = words[i]

    def alias_into_leaves(node, idxs):
        k = min(fanout, len(idxs))
        if k == 1:
            groups = [list(range(len(idxs)))]
            centers = vectors[idxs].mean(axis=0, keepdims=True)
        else:
            assign, centers = _kmeans(vectors[idxs], k, rng)
            order = sorted(range(k), key=lambda j: tuple(centers[j]))
            groups = [[i for i in range(len(idxs)) if assign[i] == cl] for cl in order]
        for j, group in enumerate(groups):
            members = [idxs[i] for i in group]
            child = make_child(node, j, members)
            center = child.centroid
            rep = min(members, key=lambda m: (float(((vectors[m] - center) ** 2).sum()), words[m]))
            child.value = words[rep]
            child.centroid = vectors[rep]
            extras = sorted(words[m] for m in members if m != rep)
            if extras:
                child.values = list(extras)
                aliases.extend((w, words[rep]) for w in extras)

    def expand(node, idxs):
        depth_next = node.level + 1
        if len(idxs) == 1:
            if node.level >= min_depth:
                node.value = words[idxs[0]]
                node.centroid = vectors[idxs[0]]
                return
            child = make_child(node, 0, idxs)
            expand(child, idxs)
            return
        if max_depth is not None and depth_next >= max_depth:
            alias_into_leaves(node, idxs)
            return
        if len(idxs) <= fanout and depth_next >= min_depth:
            spawn_leaves(node, idxs)
            return
        k = min(fanout, len(idxs))
        assign, centers = _kmeans(vectors[idxs], k, rng)
        order = sorted(range(k), key=lambda j: tuple(centers[j]))
        for j, cluster in enumerate(order):
            members = [idxs[i] for i in range(len(idxs)) if assign[i] == cluster]
            child = make_child(node, j, members)
            expand(child, members)

    expand(root, list(range(len(words))))
    cfg = TreeConfig(policy="meaning", c=c, d=max_depth if max_depth else 1, b=0)
    tree = SumTree(cfg, root)
    tree.alias_events.extend(aliases)
    tree._fix_sibling_counts()
    tree._reindex()
    tree._emb = emb
    return tree


def _kmeans(vectors: np.ndarray, k: int, rng: np.random.Generator, iters: int = 50):
    """Plain k-means with k-means++ seeding on L2-normalized vectors.

    Ties break to the lowest cluster index; an empty cluster is repaired
    by stealing the farthest point from the largest cluster.
    """
    n = len(vectors)
    centers = np.empty((k, vectors.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = vectors[first]
    d2 = ((vectors - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 1e-12:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = vectors[idx]
        d2 = np.minimum(d2, ((vectors - centers[j]) ** 2).sum(axis=1))

    assign = None
    for _ in range(iters):
        dist = ((vectors[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        for j in range(k):
            if not (new_assign == j).any():
                sizes = np.bincount(new_assign, minlength=k)
                big = int(sizes.argmax())
                members = np.where(new_assign == big)[0]
                far = members[int(dist[members, big].argmax())]
                new_assign[far] = j
        if assign is not None and (new_assign == assign).all():
            break
        assign = new_assign
        for j in range(k):
            members = vectors[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return assign, centers


def build_tree(keywords, cfg: TreeConfig, emb: EmbeddingProvider | None = None, seed: int = 0) -> SumTree:
    if cfg.policy == "alph":
        return build_alph(keywords)
    if cfg.policy == "hash":
        return build_hash(keywords, cfg)
    if emb is None:
        raise SumTreeError("meaning policy needs an embedding provider")
    tree = build_meaning(keywords, emb, cfg.c, seed=seed)
    tree.cfg.b = cfg.b
    tree.cfg.hash_seed = cfg.hash_seed
    return tree


# ---------------------------------------------------------------------------
# sibling-set size estimation


def estimate_fscs_hash(omega: float, c: int, d: int, level: int) -> int:
    """Estimated sibling count at ``level`` of a hash tree with leaf
    occupancy probability ``omega``.

    The expected sibling-set size is ``2^c * gamma`` where ``gamma`` is
    the occupancy probability of a node at that level; sizes below one
    collapse to a sibling count of zero.
    """
    if not 0.0 < omega <= 1.0:
        raise SumTreeError(f"omega {omega} outside (0, 1]")
    if not 0 <= level <= d:
        raise SumTreeError(f"level {level} outside [0, {d}]")
    gamma = 1.0 - (1.0 - omega) ** (2 ** ((d - level) * c))
    f = (1 << c) * gamma
    if f < 1.0:
        return 0
    return max(round_half_up(f) - 1, 0)


def estimate_fscs_alph(length: int) -> int:
    """Estimated sibling count for a string code of the given length,
    from the fitted inverse-square model f(l) = 26 / l^2."""
    if length < 1:
        raise SumTreeError("code length must be >= 1")
    f = 26.0 * length**-2
    if f < 1.0:
        return 0
    return max(round_half_up(f) - 1, 0)


def estimated_scv(cfg: TreeConfig, omega: float, code) -> Scv:
    """SCV built from the estimator instead of the tree (hash and alph)."""
    if cfg.policy == "hash":
        lvl = code_level(code, cfg.c)
        fields = tuple(
            min(estimate_fscs_hash(omega, cfg.c, cfg.d, l), cfg.fanout - 1)
            for l in range(1, lvl + 1)
        )
        return Scv(fields, cfg.c)
    if cfg.policy == "alph":
        cap = (1 << ALPH_SCV_WIDTH) - 1
        fields = tuple(
            min(estimate_fscs_alph(l), cap) for l in range(1, len(code) + 1)
        )
        return Scv(fields, ALPH_SCV_WIDTH)
    raise SumTreeError("estimation is only defined for hash and alph policies")


# ---------------------------------------------------------------------------
# late keyword arrivals


def assign_code_new_keyword(tree: SumTree, keyword: str, vector=None) -> tuple:
    """Code and SCV for a keyword that joins after tree construction.

    alph: the keyword string plus terminator (the trie is extended).
    hash: the stateless hash (the leaf is materialized).
    meaning: descend by nearest child centroid to a bottom cluster; take
    the smallest free child slot there, or alias to the most similar
    existing keyword when the cluster is full.
    """
    if TERMINATOR in keyword or not keyword:
        raise SumTreeError(f"bad keyword {keyword!r}")
    policy = tree.cfg.policy
    if keyword in tree.leaf_of:
        return tree.encode(keyword)

    if policy == "alph":
        _alph_insert_keyword(tree, keyword)
        tree._reindex()
        tree._fix_sibling_counts()
        return tree.encode(keyword)

    if policy == "hash":
        node = _hash_insert(tree, keyword)
        tree._fix_sibling_counts()
        tree._reindex()
        return node.tau, tree.scv_of(node)

    # meaning
    emb = getattr(tree, "_emb", None)
    if vector is None:
        if emb is None:
            raise SumTreeError("meaning assignment needs an embedding vector")
        vector = emb.vector(keyword)
    vector = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(vector))
    if norm > 0:
        vector = vector / norm

    node = tree.root
    path = [node]
    while node.children:
        best = None
        best_d = None
        for kid in node.sorted_children():
            if kid.centroid is None:
                raise SumTreeError(f"malformed interior node {kid.tau}")
            dist = float(((vector - kid.centroid) ** 2).sum())
            if best_d is None or dist < best_d:
                best, best_d = kid, dist
        if best.value is not None:
            break  # nearest child is a leaf: this node is the target cluster
        node = best
        path.append(node)

    fanout = tree.cfg.fanout
    if node.value is not None:
        raise SumTreeError("descent reached a leaf instead of a cluster")
    if node.nc < fanout:
        slot = min(j for j in range(fanout) if j not in node.children)
        child = SumTreeNode((node.tau << tree.cfg.c) | slot, node.level + 1)
        child.value = keyword
        child.centroid = vector
        child.count = 1
        node.children[slot] = child
        for anc in path:
            anc.centroid = (anc.centroid * anc.count + vector) / (anc.count + 1)
            anc.count += 1
        tree._fix_sibling_counts()
        tree._reindex()
        return child.tau, tree.scv_of(child)

    # full bottom cluster: reuse the most similar existing code
    best = None
    best_d = None
    for kid in node.sorted_children():
        if kid.value is None:
            continue
        dist = float(((vector - kid.centroid) ** 2).sum())
        if best_d is None or dist < best_d:
            best, best_d = kid, dist
    if best is None:
        raise SumTreeError("full cluster holds no leaf to alias against")
    best.values = best.values or []
    best.values.append(keyword)
    tree.alias_events.append((keyword, best.value))
    tree.leaf_of[keyword] = best
    return best.tau, tree.scv_of(best)


def _alph_insert_keyword(tree: SumTree, keyword: str):
    """Extend the LCP trie with one more keyword code."""
    code = keyword + TERMINATOR
    node = tree.root
    while True:
        # find the child whose code is a prefix of the new code
        into = None
        for child in node.children.values():
            if code.startswith(child.tau):
                into = child
                break
        if into is not None and into.value is None:
            node = into
            continue
        if into is not None:
            # exact keyword already handled by caller; here a leaf whose
            # code prefixes ours cannot happen ('$' terminates leaves)
            raise SumTreeError(f"code clash for {keyword!r}")
        # find a child sharing a proper prefix longer than node's code
        share = None
        share_len = len(node.tau)
        for child in node.children.values():
            n = min(len(child.tau), len(code))
            i = len(node.tau)
            while i < n and child.tau[i] == code[i]:
                i += 1
            if i > share_len:
                share, share_len = child, i
        leaf = SumTreeNode(code, 0)
        leaf.value = keyword
        if share is None:
            node.children[code] = leaf
        else:
            prefix = code[:share_len]
            if prefix == share.tau:
                share.children[code] = leaf
            else:
                junction = SumTreeNode(prefix, 0)
                del node.children[share.tau]
                node.children[prefix] = junction
                junction.children[share.tau] = share
                junction.children[code] = leaf
        return
