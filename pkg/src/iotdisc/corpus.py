"""Data-stream annotations: file format, synthetic corpora, statistics.

A corpus file holds one stream per line::

    stream_id<TAB>attr=value;attr=value;...

Attributes with absent values are simply omitted from the line. Keywords
are restricted to lowercase letters, digits and underscore so every
coding policy (including the string-code trie with its ``$`` terminator)
can handle them.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .hashing import derive_seed
from .sumtree import ALPHABET

# Reserved keyword advertised for attributes a stream does not carry, so
# value-absent matching works through coded routing tables as well.
ABSENT = "__absent__"

_ALLOWED = set(ALPHABET)


class CorpusError(ValueError):
    pass


@dataclass
class Annotation:
    """One data stream's metadata: at most one value per attribute."""

    stream_id: str
    descriptors: dict[str, str] = field(default_factory=dict)

    def value(self, attr: str):
        return self.descriptors.get(attr)


@dataclass
class CorpusStats:
    stream_count: int
    attributes: list[str]
    unique_keywords: dict[str, int]
    total_keywords: int

    @classmethod
    def of(cls, streams: list[Annotation]) -> "CorpusStats":
        attrs = sorted({a for s in streams for a in s.descriptors})
        uniq: dict[str, set] = {a: set() for a in attrs}
        total = 0
        for s in streams:
            for a, v in s.descriptors.items():
                uniq[a].add(v)
                total += 1
        return cls(len(streams), attrs, {a: len(v) for a, v in uniq.items()}, total)


def _check_keyword(word: str, where: str):
    if not word:
        raise CorpusError(f"{where}: empty keyword")
    bad = set(word) - _ALLOWED
    if bad:
        raise CorpusError(f"{where}: disallowed characters {sorted(bad)} in {word!r}")


def load_corpus(path) -> list[Annotation]:
    """Parse a corpus file; errors carry the offending line number."""
    streams: list[Annotation] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            where = f"{path}:{lineno}"
            if "\t" not in line:
                raise CorpusError(f"{where}: expected 'stream_id<TAB>descriptors'")
            sid, rest = line.split("\t", 1)
            if not sid:
                raise CorpusError(f"{where}: empty stream id")
            if sid in seen:
                raise CorpusError(f"{where}: duplicate stream id {sid!r}")
            seen.add(sid)
            descriptors: dict[str, str] = {}
            if rest:
                for part in rest.split(";"):
                    if not part:
                        continue
                    if "=" not in part:
                        raise CorpusError(f"{where}: bad descriptor {part!r}")
                    attr, value = part.split("=", 1)
                    if not attr:
                        raise CorpusError(f"{where}: empty attribute name")
                    if attr in descriptors:
                        raise CorpusError(f"{where}: duplicate attribute {attr!r}")
                    _check_keyword(value, where)
                    descriptors[attr] = value
            if not descriptors:
                raise CorpusError(f"{where}: stream without descriptors")
            streams.append(Annotation(sid, descriptors))
    if not streams:
        raise CorpusError(f"{path}: empty corpus")
    return streams


def save_corpus(streams: list[Annotation], path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in streams:
            body = ";".join(f"{a}={v}" for a, v in sorted(s.descriptors.items()))
            fh.write(f"{s.stream_id}\t{body}\n")


# ---------------------------------------------------------------------------
# synthetic corpora

_SUFFIXES = (
    "_rate", "_avg", "_min", "_max", "_std", "_raw", "_lvl", "_idx",
    "01", "02", "03", "1", "2", "x", "y", "z",
)


def _make_vocab(size: int, rng: random.Random) -> list[str]:
    """Keyword families sharing stems, so prefix and embedding similarity
    both have structure to find."""
    vocab: set[str] = set()
    letters = "abcdefghijklmnopqrstuvwxyz"
    while len(vocab) < size:
        stem = "".join(rng.choice(letters) for _ in range(rng.randint(3, 6)))
        for _ in range(rng.randint(2, 6)):
            word = stem + rng.choice(_SUFFIXES)
            vocab.add(word)
            if len(vocab) >= size:
                break
    return sorted(vocab)


def _zipf_cumulative(n: int, s: float) -> list[float]:
    weights = [1.0 / (rank**s) for rank in range(1, n + 1)]
    total = sum(weights)
    acc, out = 0.0, []
    for w in weights:
        acc += w / total
        out.append(acc)
    return out


def synth_corpus(
    n_streams: int,
    n_attrs: int = 15,
    vocab_size: int = 400,
    zipf_s: float = 1.1,
    seed: int = 0,
    absent_prob: float = 0.05,
) -> list[Annotation]:
    """Deterministic synthetic corpus with Zipf-distributed keyword use.

    Each attribute gets its own vocabulary and its own rank order; a
    descriptor is omitted with probability ``absent_prob`` (never all of
    them for one stream).
    """
    if n_streams < 1 or n_attrs < 1 or vocab_size < 1:
        raise CorpusError("corpus parameters must be positive")
    import bisect

    attrs = [f"attr{i:02d}" for i in range(n_attrs)]
    cum = _zipf_cumulative(vocab_size, zipf_s)
    vocabs: dict[str, list[str]] = {}
    for i, attr in enumerate(attrs):
        rng = random.Random(derive_seed(seed, f"vocab:{attr}"))
        vocab = _make_vocab(vocab_size, rng)
        rng.shuffle(vocab)
        vocabs[attr] = vocab
    rng = random.Random(derive_seed(seed, "streams"))
    streams = []
    for n in range(n_streams):
        descriptors = {}
        for attr in attrs:
            if rng.random() < absent_prob:
                continue
            rank = bisect.bisect_left(cum, rng.random())
            descriptors[attr] = vocabs[attr][min(rank, vocab_size - 1)]
        if not descriptors:
            attr = rng.choice(attrs)
            descriptors[attr] = vocabs[attr][0]
        streams.append(Annotation(f"s{n:06d}", descriptors))
    return streams


def attribute_keywords(streams: list[Annotation], with_absent_marker: bool = True) -> dict[str, set]:
    """Keyword universe per attribute. The absent marker is included for
    attributes that at least one stream omits, so routing can honor
    value-absent matches."""
    attrs = sorted({a for s in streams for a in s.descriptors})
    out: dict[str, set] = {a: set() for a in attrs}
    for s in streams:
        for a, v in s.descriptors.items():
            out[a].add(v)
    if with_absent_marker:
        for a in attrs:
            if any(a not in s.descriptors for s in streams):
                out[a].add(ABSENT)
    return out
