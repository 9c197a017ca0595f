"""Lossless, deterministic segmentation of a long document into bounded chunks.

A *unit* is either a maximal run of non-whitespace characters (``word`` mode,
the default) or a single character (``char`` mode). Concatenating the chunks
of a document always reproduces its text exactly.
"""

from __future__ import annotations

import enum
import gc
import re
import uuid
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import accumulate, count, repeat
from typing import Iterable, Iterator, NamedTuple

from .errors import EmptyDocument

PIECE_SIZE = 4096

_LAST_WHITESPACE = re.compile(r".*\s", re.DOTALL)


class UnitMode(str, enum.Enum):
    WORD = "word"
    CHAR = "char"


def count_units(text: str, mode: UnitMode | str = UnitMode.WORD) -> int:
    if UnitMode(mode) is UnitMode.CHAR:
        return len(text)
    return len(text.split())


@lru_cache(maxsize=64)
def _k_words(k: int) -> re.Pattern:
    # (?!\S) pins each \S+ to a whole run so the repetition cannot split words.
    return re.compile(r"(?:\s*\S+(?!\S)){%d}\s*" % k)


@lru_cache(maxsize=64)
def _up_to_k_words(k: int) -> re.Pattern:
    return re.compile(r"(?:\s*\S+(?!\S)){1,%d}\s*" % k)


@lru_cache(maxsize=64)
def _k_words_bare(k: int) -> re.Pattern:
    return re.compile(r"(?:\s*\S+(?!\S)){%d}" % k)


def truncate_units(text: str, limit: int, mode: UnitMode | str = UnitMode.WORD) -> str:
    """Longest prefix of ``text`` holding at most ``limit`` units."""
    if limit <= 0:
        return ""
    if UnitMode(mode) is UnitMode.CHAR:
        return text[:limit]
    m = _k_words_bare(limit).match(text)
    return text if m is None else text[: m.end()]


@dataclass(frozen=True)
class Document:
    text: str
    id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    mode: UnitMode = UnitMode.WORD

    @property
    def unit_count(self) -> int:
        return count_units(self.text, self.mode)

    def pieces(self, size: int = PIECE_SIZE) -> Iterator[str]:
        """Yield the text in fixed-size slices; the chunk stream pulls from here."""
        for start in range(0, len(self.text), size):
            yield self.text[start : start + size]

    def span_text(self, span: tuple[int, int]) -> str:
        start, end = span
        return self.text[start:end]


class Chunk(NamedTuple):
    index: int
    text: str
    unit_count: int
    span: tuple[int, int]


class StreamConsumed(RuntimeError):
    pass


class ChunkStream:
    """Single-pass iterator of chunks over an iterable of text pieces.

    Only the text needed to decide the next boundary is buffered, so memory
    use is bounded by roughly one chunk plus one piece regardless of the
    total document length.
    """

    def __init__(
        self,
        pieces: Iterable[str],
        k: int,
        mode: UnitMode | str = UnitMode.WORD,
        prefer_whitespace: bool = True,
    ):
        if k < 1:
            raise ValueError(f"chunk size must be >= 1, got {k}")
        self.k = k
        self.mode = UnitMode(mode)
        self.prefer_whitespace = prefer_whitespace
        self._pieces = iter(pieces)
        self._buf = ""
        self._pos = 0
        self._iterated = False
        self._gen = self._generate()

    def __iter__(self) -> Iterator[Chunk]:
        if self._iterated:
            raise StreamConsumed("a chunk stream can only be iterated once")
        self._iterated = True
        return self._gen

    @property
    def buffered_units(self) -> int:
        """Units read from the source but not yet emitted as a chunk."""
        return count_units(self._buf[self._pos :], self.mode)

    def _cut(self, exhausted: bool) -> int | None:
        buf, pos, k = self._buf, self._pos, self.k
        if self.mode is UnitMode.CHAR:
            if len(buf) - pos <= k:
                return len(buf) if exhausted else None
            if self.prefer_whitespace:
                m = _LAST_WHITESPACE.match(buf, pos, pos + k)
                if m is not None:
                    return m.end()
            return pos + k
        m = _k_words(k).match(buf, pos)
        if m is None:
            return len(buf) if exhausted else None
        if m.end() < len(buf) or exhausted:
            return m.end()
        # the k-th word or the trailing whitespace may continue in the next piece
        return None

    def _generate(self) -> Iterator[Chunk]:
        offset = 0
        index = 0
        exhausted = False
        while True:
            cut = self._cut(exhausted)
            if cut is None:
                piece = next(self._pieces, None)
                if piece is None:
                    exhausted = True
                    continue
                if self._pos:
                    offset += self._pos
                    self._buf = self._buf[self._pos :]
                    self._pos = 0
                self._buf += piece
                continue
            if cut == self._pos:
                self._buf = ""
                self._pos = 0
                return
            index += 1
            text = self._buf[self._pos : cut]
            span = (offset + self._pos, offset + cut)
            self._pos = cut
            yield Chunk(index, text, count_units(text, self.mode), span)


def iter_chunks(
    pieces: Iterable[str],
    k: int,
    mode: UnitMode | str = UnitMode.WORD,
    prefer_whitespace: bool = True,
) -> ChunkStream:
    return ChunkStream(pieces, k, mode, prefer_whitespace)


def split_document(
    doc: Document,
    k: int,
    mode: UnitMode | str | None = None,
    prefer_whitespace: bool = True,
) -> list[Chunk]:
    """Split ``doc`` into chunks of at most ``k`` units.

    Raises:
        EmptyDocument: if ``doc.text`` is empty.
    """
    if not doc.text:
        raise EmptyDocument(f"document {doc.id!r} is empty")
    mode = UnitMode(mode or doc.mode)
    if k < 1:
        raise ValueError(f"chunk size must be >= 1, got {k}")
    if mode is UnitMode.WORD:
        return _split_words(doc.text, k)
    return _split_chars(doc.text, k, prefer_whitespace)


def _split_words(text: str, k: int) -> list[Chunk]:
    # Whole text in hand: the greedy matches tile the text and every one
    # except the last holds exactly k units.
    texts = _up_to_k_words(k).findall(text) or [text]
    counts = [k] * (len(texts) - 1) + [count_units(texts[-1])]
    return _assemble(texts, counts)


@lru_cache(maxsize=64)
def _char_window(k: int, prefer_whitespace: bool) -> re.Pattern:
    if not prefer_whitespace:
        return re.compile(r".{1,%d}" % k, re.DOTALL)
    # the whole remainder if it fits, else up to the last whitespace in the window, else a hard cut
    return re.compile(r".{1,%d}\Z|.{0,%d}\s|.{1,%d}" % (k, k - 1, k), re.DOTALL)


def _split_chars(text: str, k: int, prefer_whitespace: bool) -> list[Chunk]:
    texts = _char_window(k, prefer_whitespace).findall(text)
    return _assemble(texts, list(map(len, texts)))


def _assemble(texts: list[str], counts: list[int]) -> list[Chunk]:
    # Millions of tiny acyclic tuples for small k: build them without a Python
    # loop and keep the cyclic collector from rescanning them mid-build.
    paused = gc.isenabled()
    gc.disable()
    try:
        ends = list(accumulate(map(len, texts)))
        spans = zip([0, *ends[:-1]], ends)
        return list(map(tuple.__new__, repeat(Chunk), zip(count(1), texts, counts, spans)))
    finally:
        if paused:
            gc.enable()
