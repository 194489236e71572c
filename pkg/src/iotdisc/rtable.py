"""Routing tables for coded discovery routing.

Two table kinds live here:

* :class:`HybridTableTrie` -- for bit codes (hash and meaning policies).
  A full master index table over the first ``b`` bits fans out to
  bit-packed tries whose entries live in a slot arena of 8-byte cells.
  Entry types: A (actual routing data), P (pointers only), M (mixed,
  16 bytes) and P' (a P whose 14-bit first-child index is addressed from
  the bottom of the arena).
* :class:`AlphTrie` -- a regular character trie for string codes.

Both support the same three operations: longest-prefix lookup that
accumulates the neighbor sets of every routing entry on the path (so
summarized ancestors contribute), advertisement insert, and coverage-
threshold summarization that collapses sibling groups into their parent
code.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .sumtree import Scv, TERMINATOR

CHILD_NULL = 0xFFFF  # null 16-bit child / master pointer
FIRST_NULL = 0x3FFF  # null 14-bit first-child pointer
NB_SENTINEL = 31  # empty 5-bit neighbor slot
NB_SLOTS = 8

TYPE_A, TYPE_P, TYPE_M, TYPE_PPRIME = 0, 1, 2, 3
TYPE_NAMES = {TYPE_A: "A", TYPE_P: "P", TYPE_M: "M", TYPE_PPRIME: "P'"}


class RTableError(ValueError):
    pass


class ArenaFull(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# code decomposition


def split_code(tau: int, b: int) -> tuple[int, int]:
    """Split a full code into (master index, trie code).

    The master index is the first ``b`` bits after the leading 1; the trie
    code is a leading 1 followed by the remaining bits, so recombining
    reproduces the original code.
    """
    length = tau.bit_length()
    if length < 1 or tau <= 0:
        raise RTableError("empty code")
    if b == 0:
        return 0, tau
    if length <= b + 1:
        raise RTableError(f"code of {length} bits too short for b={b}")
    body = tau ^ (1 << (length - 1))
    rest = length - 1 - b
    master = body >> rest
    tau_bplus = (1 << rest) | (body & ((1 << rest) - 1))
    return master, tau_bplus


def join_code(master: int, tau_bplus: int, b: int) -> int:
    """Inverse of :func:`split_code`."""
    if b == 0:
        return tau_bplus
    rest = tau_bplus.bit_length() - 1
    body = (master << rest) | (tau_bplus ^ (1 << rest))
    return (1 << (b + rest)) | body


# ---------------------------------------------------------------------------
# packed entry layout


@dataclass(frozen=True)
class Layout:
    """Field geometry of packed entries, derived from (c, d, b)."""

    c: int
    d: int
    b: int

    def __post_init__(self):
        if self.b % self.c != 0:
            raise RTableError("master prefix b must be a multiple of c")
        if self.tau_bits < 2:
            raise RTableError("trie codes need at least 2 bits")
        if 2 + 2 * self.tau_bits + NB_SLOTS * 5 > 64:
            raise RTableError(
                f"A-entry fields exceed 64 bits for c={self.c} d={self.d} b={self.b}"
            )

    @property
    def fanout(self) -> int:
        return 1 << self.c

    @property
    def tau_bits(self) -> int:
        return self.c * self.d + 1 - self.b

    @property
    def trie_depth(self) -> int:
        return self.d - self.b // self.c

    @property
    def p_cells(self) -> int:
        return (2 + 14 + 16 * (self.fanout - 1) + 63) // 64

    @property
    def m_cells(self) -> int:
        return 1 + (16 * self.fanout + 63) // 64

    def cells_for(self, etype: int) -> int:
        if etype == TYPE_A:
            return 1
        if etype == TYPE_M:
            return self.m_cells
        return self.p_cells


@dataclass
class RtEntry:
    """Unpacked routing entry. ``children[j]`` is an arena slot or None."""

    entry_type: int
    tau_bplus: int = 0
    scv: tuple = ()
    nb: tuple = ()
    children: tuple = ()

    @property
    def type_name(self) -> str:
        return TYPE_NAMES[self.entry_type]


def _pack_nb(nb) -> int:
    if len(nb) > NB_SLOTS:
        raise RTableError("too many neighbors for one entry")
    value = 0
    for i in range(NB_SLOTS):
        code = nb[i] if i < len(nb) else NB_SENTINEL
        if not 0 <= code < NB_SENTINEL and code != NB_SENTINEL:
            raise RTableError(f"neighbor code {code} out of range")
        value = (value << 5) | code
    return value


def _unpack_nb(value: int) -> tuple:
    out = []
    for i in range(NB_SLOTS):
        code = (value >> (5 * (NB_SLOTS - 1 - i))) & 0x1F
        if code != NB_SENTINEL:
            out.append(code)
    return tuple(out)


def pack_entry(entry: RtEntry, layout: Layout, arena_size: int) -> list[int]:
    """Pack an entry into its 8-byte cells (as 64-bit ints)."""
    tb = layout.tau_bits
    fanout = layout.fanout
    et = entry.entry_type

    if et in (TYPE_A, TYPE_M):
        if entry.tau_bplus.bit_length() > tb:
            raise RTableError(f"code does not fit in {tb} bits")
        scv = Scv(tuple(entry.scv), layout.c)
        if scv.bit_length > tb:
            raise RTableError(f"scv does not fit in {tb} bits")
        cell = (et << 62) | (entry.tau_bplus << (62 - tb)) | (scv.pack() << (62 - 2 * tb))
        cell |= _pack_nb(entry.nb) << (62 - 2 * tb - 40)
        if et == TYPE_A:
            return [cell]
        cells = [cell]
        stream = 0
        for j in range(fanout):
            slot = entry.children[j]
            stream = (stream << 16) | (CHILD_NULL if slot is None else slot)
        nbits = 16 * fanout
        pad = (64 - nbits % 64) % 64
        stream <<= pad
        for i in range((nbits + pad) // 64 - 1, -1, -1):
            cells.append((stream >> (64 * i)) & 0xFFFFFFFFFFFFFFFF)
        return cells

    # P / P'
    first = entry.children[0]
    if first is None:
        raw = FIRST_NULL
    elif et == TYPE_PPRIME:
        raw = arena_size - 1 - first
    else:
        raw = first
    if raw != FIRST_NULL and not 0 <= raw < FIRST_NULL:
        raise RTableError(f"first-child slot {first} not addressable in 14 bits")
    stream = (et << 14) | raw
    nbits = 16
    for j in range(1, fanout):
        slot = entry.children[j]
        stream = (stream << 16) | (CHILD_NULL if slot is None else slot)
        nbits += 16
    pad = layout.p_cells * 64 - nbits
    stream <<= pad
    cells = []
    for i in range(layout.p_cells - 1, -1, -1):
        cells.append((stream >> (64 * i)) & 0xFFFFFFFFFFFFFFFF)
    return cells


def unpack_entry(cells: list[int], layout: Layout, arena_size: int, policy: str) -> RtEntry:
    """Inverse of :func:`pack_entry`; rejects malformed type bits."""
    tb = layout.tau_bits
    fanout = layout.fanout
    head = cells[0]
    et = (head >> 62) & 0x3

    if et in (TYPE_A, TYPE_M):
        tau = (head >> (62 - tb)) & ((1 << tb) - 1)
        if tau == 0:
            raise RTableError("A/M cell without a code")
        width = layout.c
        nfields = 1 if policy == "meaning" else (tau.bit_length() - 1) // width
        scv_val = (head >> (62 - 2 * tb)) & ((1 << tb) - 1)
        scv = Scv.unpack(scv_val, nfields, width)
        nb = _unpack_nb((head >> (62 - 2 * tb - 40)) & ((1 << 40) - 1))
        if et == TYPE_A:
            return RtEntry(TYPE_A, tau, scv.fields, nb, ())
        stream = 0
        for cell in cells[1:]:
            stream = (stream << 64) | cell
        nbits = 16 * fanout
        pad = (64 - nbits % 64) % 64
        stream >>= pad
        children = []
        for j in range(fanout):
            raw = (stream >> (16 * (fanout - 1 - j))) & 0xFFFF
            children.append(None if raw == CHILD_NULL else raw)
        return RtEntry(TYPE_M, tau, scv.fields, nb, tuple(children))

    # P / P'
    stream = 0
    for cell in cells:
        stream = (stream << 64) | cell
    nbits = 2 + 14 + 16 * (fanout - 1)
    pad = layout.p_cells * 64 - nbits
    stream >>= pad
    children = []
    raw_first = (stream >> (16 * (fanout - 1))) & FIRST_NULL
    if raw_first == FIRST_NULL:
        children.append(None)
    elif et == TYPE_PPRIME:
        children.append(arena_size - 1 - raw_first)
    else:
        children.append(raw_first)
    for j in range(1, fanout):
        raw = (stream >> (16 * (fanout - 1 - j))) & 0xFFFF
        children.append(None if raw == CHILD_NULL else raw)
    return RtEntry(et, 0, (), (), tuple(children))


# ---------------------------------------------------------------------------
# arena with top-bottom allocation


class Arena:
    """Slot arena of 8-byte cells with top-bottom allocation.

    Zero entries (codes ending in ``c`` zero bits) allocate from the top
    so a 14-bit index can address them; when the top quarter is consumed
    or the downward-growing middle region crosses it, zero entries
    continue from the bottom quarter (addressed bottom-relative via type
    P'). Everything else allocates from the middle outward.
    """

    def __init__(self, size: int = 4096):
        if not 16 <= size <= CHILD_NULL:
            raise RTableError(f"arena size {size} outside [16, {CHILD_NULL}]")
        self.size = size
        self.cells = [0] * size
        self.quarter = size // 4
        self.ze_top = 0
        self.ze_bottom = size - 1
        mid = size // 2
        self.nz_lo = mid - 1
        self.nz_hi = mid
        self._prefer_hi = True
        self._free: dict[tuple[str, int], list[int]] = {}

    def allocated_cells(self) -> int:
        return (
            self.ze_top
            + (self.size - 1 - self.ze_bottom)
            + (self.nz_hi - self.nz_lo - 1)
        )

    def alloc(self, is_ze: bool, ncells: int) -> int:
        if is_ze:
            free = self._free.get(("ze_top", ncells))
            if free:
                return free.pop()
            if self.ze_top + ncells <= min(self.quarter, self.nz_lo + 1):
                idx = self.ze_top
                self.ze_top += ncells
                return idx
            free = self._free.get(("ze_bottom", ncells))
            if free:
                return free.pop()
            idx = self.ze_bottom - ncells + 1
            if idx >= max(self.size - self.quarter, self.nz_hi):
                self.ze_bottom -= ncells
                return idx
            raise ArenaFull("no zero-entry slots left")
        free = self._free.get(("mid", ncells))
        if free:
            return free.pop()
        for side in (self._prefer_hi, not self._prefer_hi):
            if side:
                if self.nz_hi + ncells - 1 <= self.ze_bottom:
                    idx = self.nz_hi
                    self.nz_hi += ncells
                    self._prefer_hi = False
                    return idx
            else:
                idx = self.nz_lo - ncells + 1
                if idx >= self.ze_top:
                    self.nz_lo -= ncells
                    self._prefer_hi = True
                    return idx
        raise ArenaFull("middle regions collided")

    def free(self, idx: int, is_ze: bool, ncells: int):
        region = "mid"
        if is_ze:
            region = "ze_top" if idx < self.quarter else "ze_bottom"
        self._free.setdefault((region, ncells), []).append(idx)
        for i in range(idx, idx + ncells):
            self.cells[i] = 0

    def read(self, idx: int, ncells: int) -> list[int]:
        return self.cells[idx : idx + ncells]

    def write(self, idx: int, cells: list[int]):
        self.cells[idx : idx + len(cells)] = cells


# ---------------------------------------------------------------------------
# summarization bookkeeping


@dataclass
class SummarizeStats:
    removed: int = 0
    bytes_reclaimed: int = 0
    neighbors_moved: int = 0
    dropped: int = 0
    events: list = field(default_factory=list)  # (parent full-ish code, nc used)

    def merge(self, other: "SummarizeStats"):
        self.removed += other.removed
        self.bytes_reclaimed += other.bytes_reclaimed
        self.neighbors_moved += other.neighbors_moved
        self.dropped += other.dropped
        self.events.extend(other.events)


# ---------------------------------------------------------------------------
# hybrid table-trie


class HybridTableTrie:
    """Per-attribute routing table: master index table over packed tries.

    ``trigger`` selects when summarization runs: "manual" (callers invoke
    :meth:`summarize_table`), "on_insert" (after each new leaf, cascading
    upward), or "size_bound" (whole-table pass when ``size_bound`` entries
    are exceeded).
    """

    def __init__(
        self,
        c: int = 2,
        d: int = 9,
        b: int = 8,
        policy: str = "hash",
        arena_size: int = 4096,
        cov: float = 1.0,
        trigger: str = "manual",
        size_bound: int | None = None,
    ):
        if policy not in ("hash", "meaning"):
            raise RTableError("packed tables support hash and meaning policies")
        if trigger not in ("manual", "on_insert", "size_bound"):
            raise RTableError(f"unknown trigger {trigger!r}")
        self.layout = Layout(c, d, b)
        self.policy = policy
        self.cov = cov
        self.trigger = trigger
        self.size_bound = size_bound
        self.master = [CHILD_NULL] * (1 << b)
        self.arena = Arena(arena_size)
        self.n_a = self.n_p = self.n_m = self.n_pp = 0
        self.dropped_neighbors = 0
        self.summarize_log = SummarizeStats()

    # -- accounting --------------------------------------------------------

    @property
    def entry_count(self) -> int:
        return self.n_a + self.n_p + self.n_m + self.n_pp

    @property
    def byte_size(self) -> int:
        return 8 * (self.n_a + self.n_p + self.n_pp) + 16 * self.n_m + 2 * len(self.master)

    # -- cell plumbing -------------------------------------------------------

    def _read(self, slot: int) -> RtEntry:
        head = self.arena.cells[slot]
        et = (head >> 62) & 0x3
        ncells = self.layout.cells_for(et)
        return unpack_entry(self.arena.read(slot, ncells), self.layout, self.arena.size, self.policy)

    # raw-integer accessors for the hot walk paths: no entry objects

    def _etype_at(self, slot: int) -> int:
        return (self.arena.cells[slot] >> 62) & 0x3

    def _nb_iter(self, slot: int):
        tb = self.layout.tau_bits
        field = (self.arena.cells[slot] >> (62 - 2 * tb - 40)) & ((1 << 40) - 1)
        for i in range(NB_SLOTS):
            code = (field >> (5 * (NB_SLOTS - 1 - i))) & 0x1F
            if code != NB_SENTINEL:
                yield code

    def _tau_at(self, slot: int) -> int:
        tb = self.layout.tau_bits
        return (self.arena.cells[slot] >> (62 - tb)) & ((1 << tb) - 1)

    def _child_at(self, slot: int, etype: int, j: int):
        """Child slot index, resolving the 14-bit first-child encoding.
        16-bit fields never straddle cell boundaries by construction."""
        cells = self.arena.cells
        if etype == TYPE_A:
            return None
        if etype == TYPE_M:
            bitpos = 16 * j
            word = cells[slot + 1 + (bitpos >> 6)]
            raw = (word >> (48 - (bitpos & 63))) & 0xFFFF
            return None if raw == CHILD_NULL else raw
        if j == 0:
            raw = (cells[slot] >> 48) & FIRST_NULL
            if raw == FIRST_NULL:
                return None
            return self.arena.size - 1 - raw if etype == TYPE_PPRIME else raw
        bitpos = 16 * j
        word = cells[slot + (bitpos >> 6)]
        raw = (word >> (48 - (bitpos & 63))) & 0xFFFF
        return None if raw == CHILD_NULL else raw

    def _write(self, slot: int, entry: RtEntry):
        self.arena.write(slot, pack_entry(entry, self.layout, self.arena.size))

    def _alloc_entry(self, entry: RtEntry, is_ze: bool) -> int:
        ncells = self.layout.cells_for(entry.entry_type)
        slot = self.arena.alloc(is_ze, ncells)
        if entry.entry_type in (TYPE_P, TYPE_PPRIME) and entry.children[0] is not None:
            # pick P or P' depending on where the first child lives
            entry.entry_type = self._p_type_for(entry.children[0])
        self._write(slot, entry)
        self._bump(entry.entry_type, +1)
        return slot

    def _p_type_for(self, first_child_slot: int | None) -> int:
        if first_child_slot is None or first_child_slot < self.arena.quarter:
            return TYPE_P
        raw = self.arena.size - 1 - first_child_slot
        if raw < FIRST_NULL:
            return TYPE_PPRIME
        raise RTableError(f"first-child slot {first_child_slot} not 14-bit addressable")

    def _bump(self, etype: int, delta: int):
        if etype == TYPE_A:
            self.n_a += delta
        elif etype == TYPE_P:
            self.n_p += delta
        elif etype == TYPE_M:
            self.n_m += delta
        else:
            self.n_pp += delta

    def _free_entry(self, slot: int, entry: RtEntry, is_ze: bool):
        self.arena.free(slot, is_ze, self.layout.cells_for(entry.entry_type))
        self._bump(entry.entry_type, -1)

    def _retype(self, slot: int, entry: RtEntry, new: RtEntry, is_ze: bool) -> int:
        """Replace an entry, reallocating when the cell count changes.
        Returns the slot the new entry lives in."""
        old_cells = self.layout.cells_for(entry.entry_type)
        new_cells = self.layout.cells_for(new.entry_type)
        if new.entry_type in (TYPE_P, TYPE_PPRIME) and new.children and new.children[0] is not None:
            new.entry_type = self._p_type_for(new.children[0])
            new_cells = self.layout.cells_for(new.entry_type)
        if old_cells == new_cells:
            self._bump(entry.entry_type, -1)
            self._bump(new.entry_type, +1)
            self._write(slot, new)
            return slot
        self.arena.free(slot, is_ze, old_cells)
        self._bump(entry.entry_type, -1)
        return self._alloc_entry(new, is_ze)

    # -- digits --------------------------------------------------------------

    def _digits(self, tau_bplus: int) -> list[int]:
        c = self.layout.c
        rest = tau_bplus.bit_length() - 1
        if rest % c:
            raise RTableError(f"trie code length {rest + 1} not aligned to c={c}")
        return [(tau_bplus >> (rest - c * (k + 1))) & (self.layout.fanout - 1) for k in range(rest // c)]

    def _parent_scv_fields(self, child_fields: tuple) -> tuple:
        if self.policy == "meaning":
            return (self.layout.fanout - 1,)
        return tuple(child_fields[:-1])

    # -- lookup ----------------------------------------------------------------

    def lookup(self, tau: int) -> set[int]:
        """Forwarding-neighbor set for a full code: walk the master-rooted
        path, accumulating the NB of every A/M entry passed."""
        master_idx, tau_bplus = split_code(tau, self.layout.b)
        slot = self.master[master_idx]
        fnset: set[int] = set()
        if slot == CHILD_NULL:
            return fnset
        etype = self._etype_at(slot)
        if etype in (TYPE_A, TYPE_M):
            fnset.update(self._nb_iter(slot))
        for j in self._digits(tau_bplus):
            if etype == TYPE_A:
                break
            nxt = self._child_at(slot, etype, j)
            if nxt is None:
                break
            slot = nxt
            etype = self._etype_at(slot)
            if etype in (TYPE_A, TYPE_M):
                fnset.update(self._nb_iter(slot))
        return fnset

    # -- insert ---------------------------------------------------------------

    def insert(self, tau: int, neighbor: int, scv: Scv) -> tuple[bool, set[int]]:
        """Advertisement insert. Returns (changed, forwarding neighbors).

        Walks the longest matching prefix; a known (code, neighbor) pair on
        the deepest entry means no change is needed and the advertisement
        need not travel further. Late neighbors beyond the slot capacity of
        an entry are dropped (counted in ``dropped_neighbors``).
        """
        if not 0 <= neighbor < NB_SENTINEL:
            raise RTableError(f"neighbor code {neighbor} out of range")
        master_idx, tau_bplus = split_code(tau, self.layout.b)
        digits = self._digits(tau_bplus)
        depth_target = len(digits)
        if depth_target < 1:
            raise RTableError("code too short to route below the master table")
        scv_fields = self._entry_scv_fields(scv, depth_target)

        fnset: set[int] = set()
        slot = self.master[master_idx]
        if slot == CHILD_NULL:
            root = RtEntry(TYPE_P, children=(None,) * self.layout.fanout)
            slot = self._alloc_entry(root, is_ze=False)
            self.master[master_idx] = slot
        self._current_root = self.master[master_idx]
        self._current_master = master_idx

        depth = 0
        etype = self._etype_at(slot)
        if etype in (TYPE_A, TYPE_M):
            fnset.update(self._nb_iter(slot))
        while depth < depth_target and etype != TYPE_A:
            nxt = self._child_at(slot, etype, digits[depth])
            if nxt is None:
                break
            slot, depth = nxt, depth + 1
            etype = self._etype_at(slot)
            if etype in (TYPE_A, TYPE_M):
                fnset.update(self._nb_iter(slot))

        if etype in (TYPE_A, TYPE_M) and neighbor in self._nb_iter(slot):
            return False, fnset

        entry = self._read(slot)
        if depth == depth_target:
            changed = self._attach_neighbor(slot, entry, depth, digits, scv_fields, neighbor)
            if changed:
                fnset.add(neighbor)
                self._post_insert(depth, digits)
            return changed, fnset

        # extend a chain of pointer entries down to the new leaf
        new_slot = self._build_chain(digits, depth, depth_target, scv_fields, neighbor, tau_bplus)
        self._link_child(slot, entry, digits[depth], new_slot, depth, digits)
        fnset.add(neighbor)
        self._post_insert(depth_target, digits)
        return True, fnset

    def _entry_scv_fields(self, scv: Scv, depth: int) -> tuple:
        if self.policy == "meaning":
            if len(scv.fields) != 1:
                raise RTableError("meaning codes carry a single sibling-count field")
            return scv.fields
        if len(scv.fields) < depth:
            raise RTableError(f"scv has {len(scv.fields)} fields, need {depth}")
        return scv.suffix(depth).fields

    def _attach_neighbor(self, slot, entry, depth, digits, scv_fields, neighbor) -> bool:
        tau_bplus = self._code_at(digits, depth)
        if entry.entry_type in (TYPE_A, TYPE_M):
            if len(entry.nb) >= NB_SLOTS:
                self.dropped_neighbors += 1
                return False
            entry.nb = entry.nb + (neighbor,)
            self._write(slot, entry)
            return True
        # pointer entry at exactly this code: promote to mixed
        new = RtEntry(TYPE_M, tau_bplus, scv_fields, (neighbor,), entry.children)
        is_ze = depth > 0 and digits[depth - 1] == 0
        new_slot = self._retype(slot, entry, new, is_ze)
        if new_slot != slot:
            self._repoint_via_path(digits, depth, new_slot)
        return True

    def _build_chain(self, digits, depth, depth_target, scv_fields, neighbor, tau_bplus) -> int:
        leaf = RtEntry(TYPE_A, tau_bplus, scv_fields, (neighbor,), ())
        child_slot = self._alloc_entry(leaf, is_ze=digits[depth_target - 1] == 0)
        for k in range(depth_target - 1, depth, -1):
            children = [None] * self.layout.fanout
            children[digits[k]] = child_slot
            p = RtEntry(TYPE_P, children=tuple(children))
            child_slot = self._alloc_entry(p, is_ze=digits[k - 1] == 0)
        return child_slot

    def _link_child(self, slot, entry, digit, child_slot, depth, digits):
        if entry.entry_type == TYPE_A:
            # a leaf gaining children becomes mixed
            new = RtEntry(TYPE_M, entry.tau_bplus, entry.scv, entry.nb,
                          tuple(child_slot if j == digit else None for j in range(self.layout.fanout)))
            is_ze = depth > 0 and digits[depth - 1] == 0
            new_slot = self._retype(slot, entry, new, is_ze)
            if new_slot != slot:
                self._repoint_via_path(digits, depth, new_slot)
            return
        children = list(entry.children)
        children[digit] = child_slot
        entry.children = tuple(children)
        if entry.entry_type in (TYPE_P, TYPE_PPRIME):
            entry.entry_type = self._p_type_for(children[0]) if children[0] is not None else TYPE_P
        self._write(slot, entry)

    def _code_at(self, digits, depth) -> int:
        code = 1
        for k in range(depth):
            code = (code << self.layout.c) | digits[k]
        return code

    def insert_bulk(self, tau: int, neighbors, scv: Scv) -> bool:
        """Insert several neighbors for one code with one structural walk.
        Slot-capacity overflow drops the late neighbors, as in insert.
        With the on_insert trigger the plain insert loop is used so every
        neighbor addition can fire summarization."""
        neighbors = list(neighbors)
        if not neighbors:
            return False
        if self.trigger == "on_insert":
            changed = False
            for nb in neighbors:
                inserted, _ = self.insert(tau, nb, scv)
                changed = changed or inserted
            return changed
        changed, _ = self.insert(tau, neighbors[0], scv)
        if len(neighbors) == 1:
            return changed
        master_idx, tau_bplus = split_code(tau, self.layout.b)
        self._current_root = self.master[master_idx]
        self._current_master = master_idx
        located = self._locate(self._digits(tau_bplus))
        if (
            located is None
            or located[1].entry_type not in (TYPE_A, TYPE_M)
            or located[1].tau_bplus != tau_bplus
        ):
            # an ancestor absorbed the insert; let the slow path sort it out
            for nb in neighbors[1:]:
                inserted, _ = self.insert(tau, nb, scv)
                changed = changed or inserted
            return changed
        slot, entry = located
        for extra in neighbors[1:]:
            if extra in entry.nb:
                continue
            if len(entry.nb) >= NB_SLOTS:
                self.dropped_neighbors += 1
                continue
            entry.nb = entry.nb + (extra,)
            changed = True
        self._write(slot, entry)
        return changed

    # -- summarization -----------------------------------------------------------

    def _post_insert(self, leaf_depth, digits):
        if self.trigger == "on_insert":
            self._cascade_from_parent(digits, leaf_depth)
        elif self.trigger == "size_bound" and self.size_bound is not None:
            if self.entry_count > self.size_bound:
                self.summarize_table(self.cov)

    def _cascade_from_parent(self, digits, leaf_depth):
        # climb from the new leaf's parent while summarization keeps firing
        for depth in range(leaf_depth - 1, 0, -1):
            prefix = digits[:depth]
            located = self._locate(prefix)
            if located is None:
                return
            slot, entry = located
            stats = self._summarize_slot(slot, entry, depth, prefix)
            if stats is None or stats.removed == 0:
                return

    def _locate(self, prefix_digits) -> tuple[int, RtEntry] | None:
        """Find the entry at a digit path under the current master root."""
        slot = self._current_root
        if slot == CHILD_NULL:
            return None
        etype = self._etype_at(slot)
        for j in prefix_digits:
            if etype == TYPE_A:
                return None
            nxt = self._child_at(slot, etype, j)
            if nxt is None:
                return None
            slot = nxt
            etype = self._etype_at(slot)
        return slot, self._read(slot)

    def summarize(self, master_idx: int, prefix_digits, cov: float | None = None) -> SummarizeStats:
        """Summarize the children of the entry at ``prefix_digits`` under
        the given master slot. Raises when a child is a pointer entry."""
        cov = self.cov if cov is None else cov
        self._current_root = self.master[master_idx]
        self._current_master = master_idx
        located = self._locate(list(prefix_digits))
        if located is None:
            raise RTableError("no entry at that path")
        if len(prefix_digits) < 1:
            raise RTableError("cannot summarize into the trie root")
        slot, entry = located
        stats = self._summarize_slot(slot, entry, len(prefix_digits), list(prefix_digits), cov, strict=True)
        return stats if stats is not None else SummarizeStats()

    def _summarize_slot(self, slot, entry, depth, prefix_digits, cov=None, strict=False):
        """Apply the coverage rule at one parent entry. Returns stats or
        None when the parent is not summarizable."""
        cov = self.cov if cov is None else cov
        if entry.entry_type == TYPE_A or not entry.children:
            return None
        kids = [(j, s) for j, s in enumerate(entry.children) if s is not None]
        if not kids:
            return None
        kid_entries = {}
        has_a = False
        for j, s in kids:
            ke = self._read(s)
            if ke.entry_type in (TYPE_P, TYPE_PPRIME):
                if strict:
                    raise RTableError("parent has a pointer child; not summarizable")
                return None
            if ke.entry_type == TYPE_A:
                has_a = True
            kid_entries[j] = ke
        if not has_a:
            return None

        stats = SummarizeStats()
        first = kid_entries[kids[0][0]]
        nc = first.scv[-1] + 1
        counts: dict[int, int] = {}
        for j, _ in kids:
            for nb in kid_entries[j].nb:
                counts[nb] = counts.get(nb, 0) + 1
        sum_nb = [nb for nb, cnt in sorted(counts.items()) if cnt + 1e-9 >= cov * nc]
        if not sum_nb:
            return stats

        parent_nb = list(entry.nb)
        moved = []
        for nb in sum_nb:
            if nb in parent_nb:
                moved.append(nb)
            elif len(parent_nb) < NB_SLOTS:
                parent_nb.append(nb)
                moved.append(nb)
            else:
                stats.dropped += 1  # no room in the parent: leave in children
        if not moved:
            self.summarize_log.merge(stats)
            return stats

        stats.events.append((join_code(self._current_master, self._code_at(prefix_digits, depth), self.layout.b), nc))
        stats.neighbors_moved += len(moved)
        moved_set = set(moved)
        survivors = []
        for j, s in kids:
            ke = kid_entries[j]
            ke.nb = tuple(nb for nb in ke.nb if nb not in moved_set)
            if ke.entry_type == TYPE_A and not ke.nb:
                before = self.byte_size
                self._free_entry(s, ke, is_ze=j == 0)
                stats.removed += 1
                stats.bytes_reclaimed += before - self.byte_size
                continue
            if ke.entry_type == TYPE_M and not ke.nb:
                demoted = RtEntry(TYPE_P, children=ke.children)
                new_slot = self._retype(s, ke, demoted, is_ze=j == 0)
                survivors.append((j, new_slot))
                continue
            self._write(s, ke)
            survivors.append((j, s))

        children = [None] * self.layout.fanout
        for j, s in survivors:
            children[j] = s
        parent_scv = entry.scv if entry.entry_type == TYPE_M else self._parent_scv_fields(first.scv)
        parent_code = self._code_at(prefix_digits, depth)
        is_ze = depth > 0 and prefix_digits[depth - 1] == 0
        if any(s is not None for s in children):
            new = RtEntry(TYPE_M, parent_code, parent_scv, tuple(parent_nb), tuple(children))
        else:
            new = RtEntry(TYPE_A, parent_code, parent_scv, tuple(parent_nb), ())
        new_slot = self._retype(slot, entry, new, is_ze)
        if new_slot != slot:
            self._repoint_via_path(prefix_digits, depth, new_slot)
        self.summarize_log.merge(stats)
        return stats

    def _repoint_via_path(self, prefix_digits, depth, new_slot):
        if depth == 0:
            raise RTableError("trie roots are never retyped")
        parent = self._locate(prefix_digits[: depth - 1])
        if parent is None:
            raise RTableError("lost parent while repointing")
        pslot, pentry = parent
        children = list(pentry.children)
        children[prefix_digits[depth - 1]] = new_slot
        pentry.children = tuple(children)
        if pentry.entry_type in (TYPE_P, TYPE_PPRIME):
            pentry.entry_type = self._p_type_for(children[0]) if children[0] is not None else TYPE_P
        self._write(pslot, pentry)

    def summarize_table(self, cov: float | None = None) -> SummarizeStats:
        """Post-order pass over every trie: children first, so a parent
        that becomes a leaf can immediately summarize further up."""
        cov = self.cov if cov is None else cov
        total = SummarizeStats()
        for master_idx, root in enumerate(self.master):
            if root == CHILD_NULL:
                continue
            self._current_root = root
            self._current_master = master_idx

            def visit(prefix):
                located = self._locate(prefix)
                if located is None:
                    return
                slot, entry = located
                if entry.entry_type == TYPE_A or not entry.children:
                    return
                for j, s in enumerate(entry.children):
                    if s is not None:
                        visit(prefix + [j])
                if prefix:
                    located = self._locate(prefix)
                    if located is None:
                        return
                    slot, entry = located
                    stats = self._summarize_slot(slot, entry, len(prefix), prefix, cov)
                    if stats is not None:
                        total.merge(stats)

            visit([])
        return total

    _current_root = CHILD_NULL
    _current_master = 0

    # -- inspection ----------------------------------------------------------

    def find(self, tau: int) -> RtEntry | None:
        """Exact-code entry, or None."""
        master_idx, tau_bplus = split_code(tau, self.layout.b)
        slot = self.master[master_idx]
        if slot == CHILD_NULL:
            return None
        self._current_root = slot
        located = self._locate(self._digits(tau_bplus))
        if located is None:
            return None
        _, entry = located
        if entry.entry_type in (TYPE_A, TYPE_M) and entry.tau_bplus != tau_bplus:
            return None
        return entry

    def entries(self):
        """Iterate (master_idx, digit path, slot, entry) over live entries."""
        out = []
        for master_idx, root in enumerate(self.master):
            if root == CHILD_NULL:
                continue
            self._current_root = root
            stack = [([], root)]
            while stack:
                prefix, slot = stack.pop()
                entry = self._read(slot)
                out.append((master_idx, tuple(prefix), slot, entry))
                if entry.entry_type != TYPE_A:
                    for j, s in enumerate(entry.children):
                        if s is not None:
                            stack.append((prefix + [j], s))
        return out

    def dump_lines(self) -> list[str]:
        lines = []
        for master_idx, prefix, slot, entry in sorted(self.entries(), key=lambda t: (t[0], t[1])):
            code = self._code_at(list(prefix), len(prefix))
            scv = "".join(format(f, f"0{self.layout.c}b") for f in entry.scv)
            kids = [s for s in entry.children if s is not None] if entry.children else []
            lines.append(
                f"master={master_idx:03x} slot={slot} type={entry.type_name} "
                f"code={format(code, 'b')} scv={scv or '-'} nb={list(entry.nb)} children={kids}"
            )
        return lines

    def to_bytes(self) -> bytes:
        """Bit-exact binary dump: header, master table, arena cells."""
        head = struct.pack(
            "<4sHBBHII",
            b"HTT1",
            1,
            self.layout.b,
            self.layout.c,
            self.layout.d,
            self.entry_count,
            self.arena.size,
        )
        master = b"".join(struct.pack("<H", s) for s in self.master)
        cells = b"".join(struct.pack("<Q", c) for c in self.arena.cells)
        return head + master + cells


# ---------------------------------------------------------------------------
# character trie for string codes


class _AlphNode:
    __slots__ = ("children", "nb", "scv", "is_leaf_code")

    def __init__(self):
        self.children: dict[str, _AlphNode] = {}
        self.nb: list[int] | None = None
        self.scv: tuple | None = None
        self.is_leaf_code = False


class AlphTrie:
    """Regular character trie keyed by string codes.

    Entries may sit at any node; lookup accumulates the neighbor sets of
    every entry on the path (summarized prefixes included). Summarization
    collapses fully covered sibling groups into their longest common
    prefix, which in this trie is the nearest junction node above them.
    """

    def __init__(self, cov: float = 1.0):
        self.root = _AlphNode()
        self.cov = cov
        self.entry_count = 0
        self.dropped_neighbors = 0

    @property
    def byte_size(self) -> int:
        return 8 * self.entry_count

    def _walk(self, code: str):
        node = self.root
        yield node
        for ch in code:
            node = node.children.get(ch)
            if node is None:
                return
            yield node

    def lookup(self, code: str) -> set[int]:
        fnset: set[int] = set()
        for node in self._walk(code):
            if node.nb:
                fnset.update(node.nb)
        return fnset

    def insert(self, code: str, neighbor: int, scv: Scv) -> tuple[bool, set[int]]:
        if not code:
            raise RTableError("empty code")
        fnset: set[int] = set()
        deepest_entry = None
        node = self.root
        exact = True
        for ch in code:
            nxt = node.children.get(ch)
            if nxt is None:
                exact = False
                break
            node = nxt
            if node.nb is not None:
                deepest_entry = node
                fnset.update(node.nb)
        if deepest_entry is not None and neighbor in deepest_entry.nb:
            return False, fnset
        if exact and node.nb is not None:
            if len(node.nb) >= NB_SLOTS:
                self.dropped_neighbors += 1
                return False, fnset
            node.nb.append(neighbor)
            fnset.add(neighbor)
            return True, fnset
        node = self.root
        for ch in code:
            node = node.children.setdefault(ch, _AlphNode())
        if node.nb is None:
            node.nb = []
            self.entry_count += 1
        node.nb.append(neighbor)
        node.scv = scv.fields
        node.is_leaf_code = code.endswith(TERMINATOR)
        fnset.add(neighbor)
        return True, fnset

    def insert_bulk(self, code: str, neighbors, scv: Scv) -> bool:
        changed = False
        for nb in neighbors:
            inserted, _ = self.insert(code, nb, scv)
            changed = changed or inserted
        return changed

    # -- summarization ---------------------------------------------------------

    def summarize_table(self, cov: float | None = None) -> SummarizeStats:
        cov = self.cov if cov is None else cov
        total = SummarizeStats()
        for _ in range(64):  # collapsing can expose new groups above
            stats = self._pass(self.root, "", cov)
            total.merge(stats)
            if stats.removed == 0 and stats.neighbors_moved == 0:
                break
        return total

    def _radix_children(self, node):
        """Nearest entry-or-junction below each child branch. Branches whose
        top carries no entry block summarization at this node."""
        out = []
        for ch in sorted(node.children):
            cur = node.children[ch]
            while cur.nb is None and len(cur.children) == 1:
                (cur,) = cur.children.values()
            out.append(cur)
        return out

    def _pass(self, node, prefix, cov) -> SummarizeStats:
        stats = SummarizeStats()
        for ch in sorted(node.children):
            child = node.children[ch]
            stats.merge(self._pass(child, prefix + ch, cov))
        if node is self.root or not node.children:
            return stats
        group = self._radix_children(node)
        if len(group) < 2:
            return stats
        if any(g.nb is None for g in group):
            return stats
        if not any(not g.children for g in group):
            return stats  # need at least one pure leaf entry
        scvs = {g.scv for g in group}
        if len(scvs) != 1:
            return stats
        (scv_fields,) = scvs
        if not scv_fields:
            return stats
        nc = scv_fields[-1] + 1
        counts: dict[int, int] = {}
        for g in group:
            for nb in g.nb:
                counts[nb] = counts.get(nb, 0) + 1
        sum_nb = [nb for nb, cnt in sorted(counts.items()) if cnt + 1e-9 >= cov * nc]
        if not sum_nb:
            return stats

        if node.nb is None:
            node.nb = []
            node.scv = tuple(scv_fields[:-1])
            self.entry_count += 1
        moved = []
        for nb in sum_nb:
            if nb in node.nb:
                moved.append(nb)
            elif len(node.nb) < NB_SLOTS:
                node.nb.append(nb)
                moved.append(nb)
            else:
                stats.dropped += 1
        if not moved:
            return stats
        stats.neighbors_moved += len(moved)
        stats.events.append((prefix, nc))
        moved_set = set(moved)
        for g in group:
            g.nb = [nb for nb in g.nb if nb not in moved_set]
            if not g.nb and not g.children:
                g.nb = None
                g.scv = None
                self.entry_count -= 1
                stats.removed += 1
                stats.bytes_reclaimed += 8
            elif not g.nb:
                g.nb = None  # keeps deeper structure, sheds routing data
                g.scv = None
                self.entry_count -= 1
                stats.removed += 1
                stats.bytes_reclaimed += 8
        self._prune(node)
        return stats

    def _prune(self, node):
        dead = [ch for ch, c in node.children.items() if self._is_dead(c)]
        for ch in dead:
            del node.children[ch]

    def _is_dead(self, node) -> bool:
        if node.nb is not None:
            return False
        node.children = {ch: c for ch, c in node.children.items() if not self._is_dead(c)}
        return not node.children

    def entries(self):
        out = []
        stack = [("", self.root)]
        while stack:
            prefix, node = stack.pop()
            if node.nb is not None:
                out.append((prefix, tuple(node.nb), node.scv))
            for ch, child in node.children.items():
                stack.append((prefix + ch, child))
        return sorted(out)
