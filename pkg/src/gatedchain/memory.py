"""Long-term memory: the ordered bank of filter-approved evidence entries."""

from __future__ import annotations

import copy
import enum
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Optional

from .agents import AgentRole, Decision, JudgeVerdict, RenderedPrompt, Winner
from .backend import BackendSpec, ChatResponse, complete
from .chunker import UnitMode, count_units, truncate_units
from .errors import OutOfOrderAppend, StaleConflict, UnrelatedAppend
from .metrics import normalize_answer

TRUNCATION_NOTICE = "[earlier evidence truncated]"
_SEP = "\n\n"


class Status(str, enum.Enum):
    ACTIVE = "active"
    SUPERSEDED = "superseded"
    CORRECTED = "corrected"


@dataclass
class MemoryEntry:
    index: int
    chunk_ref: tuple[int, int]
    hidden: str
    filtered: str
    decision: Decision = Decision.RELATED
    status: Status = Status.ACTIVE
    correction: str | None = None
    resolved_by: int | None = None

    @property
    def current_text(self) -> str:
        if self.status is Status.CORRECTED:
            return self.correction
        return self.filtered or self.hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chunk_ref"] = list(self.chunk_ref)
        d["decision"] = self.decision.value
        d["status"] = self.status.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryEntry":
        return cls(
            index=d["index"],
            chunk_ref=tuple(d["chunk_ref"]),
            hidden=d["hidden"],
            filtered=d["filtered"],
            decision=Decision(d["decision"]),
            status=Status(d["status"]),
            correction=d.get("correction"),
            resolved_by=d.get("resolved_by"),
        )


@dataclass(frozen=True)
class ConflictPair:
    earlier: int
    later: int
    reason: str = ""


# A detector returns a reason string when the two entries conflict, else None.
Detector = Callable[[MemoryEntry, MemoryEntry], Optional[str]]

_ANSWER_LINE = re.compile(r"answer\s*:\s*(.*)", re.IGNORECASE)


def extract_answer(text: str) -> str:
    """Normalized text of the last ``Answer:`` line, or '' when there is none."""
    found = _ANSWER_LINE.findall(text)
    return normalize_answer(found[-1]) if found else ""


def heuristic_detector(earlier: MemoryEntry, later: MemoryEntry) -> str | None:
    a, b = extract_answer(earlier.current_text), extract_answer(later.current_text)
    if a and b and a != b:
        return f"answers differ: {a!r} vs {b!r}"
    return None


DETECTOR_SYSTEM = (
    "You compare two pieces of evidence extracted from the same document. "
    "Write exactly CONSISTENT or CONFLICTING on the first line, then one sentence explaining why."
)


class LLMDetector:
    """Pairwise consistency check through a chat backend (filter-style prompt).

    Calls made are kept in ``calls`` so the engine can log them.
    """

    def __init__(self, backend: BackendSpec, query: str = ""):
        self.backend = backend
        self.query = query
        self.calls: list[tuple[RenderedPrompt, ChatResponse]] = []

    def __call__(self, earlier: MemoryEntry, later: MemoryEntry) -> str | None:
        question = f"Question: {self.query}\n" if self.query else ""
        user = (
            f"{question}Evidence A (chunk {earlier.index}):\n{earlier.current_text}\n\n"
            f"Evidence B (chunk {later.index}):\n{later.current_text}\n\nResponse:"
        )
        prompt = RenderedPrompt(AgentRole.FILTER, DETECTOR_SYSTEM, user)
        response = complete(self.backend, prompt.request(self.backend))
        self.calls.append((prompt, response))
        for line in response.text.splitlines():
            low = line.lower()
            if "conflict" in low or "inconsistent" in low:
                return line.strip()
            if "consistent" in low:
                return None
        return None


@dataclass
class MemoryBank:
    document_id: str = ""
    entries: list[MemoryEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, index: int) -> MemoryEntry:
        for entry in self.entries:
            if entry.index == index:
                return entry
        raise KeyError(index)

    @property
    def indices(self) -> list[int]:
        return [e.index for e in self.entries]

    def append_related(self, entry: MemoryEntry) -> "MemoryBank":
        if entry.decision is not Decision.RELATED:
            raise UnrelatedAppend(f"chunk {entry.index} was judged unrelated")
        if self.entries and entry.index <= self.entries[-1].index:
            raise OutOfOrderAppend(f"chunk {entry.index} arrives after chunk {self.entries[-1].index}")
        entry.status = Status.ACTIVE
        self.entries.append(entry)
        return self

    def find_conflicts(self, new_entry: MemoryEntry, detector: Detector | None) -> list[ConflictPair]:
        if detector is None:
            return []
        pairs = []
        for entry in self.entries:
            if entry.index >= new_entry.index or entry.status is Status.SUPERSEDED:
                continue
            reason = detector(entry, new_entry)
            if reason:
                pairs.append(ConflictPair(entry.index, new_entry.index, reason))
        return pairs

    def is_stale(self, pair: ConflictPair) -> bool:
        return any(self.get(i).status is Status.SUPERSEDED for i in (pair.earlier, pair.later))

    def resolve_conflict(self, pair: ConflictPair, verdict: JudgeVerdict, node: int | None = None) -> "MemoryBank":
        earlier, later = self.get(pair.earlier), self.get(pair.later)
        if self.is_stale(pair):
            raise StaleConflict(f"conflict ({pair.earlier}, {pair.later}) involves a superseded entry")
        node = pair.later if node is None else node
        if verdict.winner is Winner.LATER:
            earlier.status, earlier.resolved_by = Status.SUPERSEDED, node
        elif verdict.winner is Winner.EARLIER:
            later.status, later.resolved_by = Status.SUPERSEDED, node
        else:
            earlier.status, earlier.resolved_by = Status.SUPERSEDED, node
            later.status, later.correction, later.resolved_by = Status.CORRECTED, verdict.corrected_text, node
        return self

    def visible(self) -> list[MemoryEntry]:
        return [e for e in self.entries if e.status is not Status.SUPERSEDED]

    def render_context(self, budget: int, mode: UnitMode | str = UnitMode.WORD) -> str:
        """Serialize the surviving evidence in index order within ``budget`` units.

        Over budget, the oldest entries are dropped first and a notice is
        prepended; if even the newest entry does not fit, its prefix is kept.
        """
        pieces = [f"[{e.index}] {e.current_text}" for e in self.visible()]
        if not pieces:
            return ""
        sizes = [count_units(p, mode) for p in pieces]
        sep = count_units(_SEP, mode)
        if sum(sizes) + sep * (len(pieces) - 1) <= budget:
            return _SEP.join(pieces)
        head = count_units(TRUNCATION_NOTICE, mode) + sep
        for start in range(1, len(pieces)):
            tail = pieces[start:]
            if head + sum(sizes[start:]) + sep * (len(tail) - 1) <= budget:
                return _SEP.join([TRUNCATION_NOTICE, *tail])
        if budget <= head:
            return truncate_units(TRUNCATION_NOTICE, budget, mode)
        return TRUNCATION_NOTICE + _SEP + truncate_units(pieces[-1], budget - head, mode)

    def snapshot(self) -> "MemoryBank":
        return copy.deepcopy(self)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_dict(), ensure_ascii=False) + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, lines: Iterable[str] | str, document_id: str = "") -> "MemoryBank":
        if isinstance(lines, str):
            lines = lines.splitlines()
        return cls(document_id, [MemoryEntry.from_dict(json.loads(line)) for line in lines if line.strip()])
