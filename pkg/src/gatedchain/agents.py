"""The four agent roles: prompt templates, rendering, and verdict parsing.

Every agent performs exactly one chat completion per invocation. Verdicts are
carried on a leading marker line so parsing stays deterministic:

* Filter: the first line mentioning ``related`` is the marker line; it means
  *unrelated* if it contains that word, otherwise *related*.
* Judge: the first non-empty line starts with ``EARLIER``, ``LATER`` or ``MERGED``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING

from .backend import BackendSpec, ChatRequest, ChatResponse, complete
from .chunker import Chunk, UnitMode, count_units, truncate_units
from .errors import (
    IndexOrderError,
    MissingChunkText,
    TemplateError,
    TemplateMismatch,
    UnparseableVerdict,
)

if TYPE_CHECKING:
    from .memory import MemoryEntry


class AgentRole(str, enum.Enum):
    WORKER = "worker"
    FILTER = "filter"
    JUDGE = "judge"
    MANAGER = "manager"


class TaskKind(str, enum.Enum):
    QA = "qa"
    SUMMARIZATION = "summarization"
    FEWSHOT = "fewshot"


class Decision(str, enum.Enum):
    RELATED = "related"
    UNRELATED = "unrelated"


class Winner(str, enum.Enum):
    EARLIER = "earlier"
    LATER = "later"
    MERGED = "merged"


PLACEHOLDERS = {
    AgentRole.WORKER: {"chunk", "chunk_index", "previous", "question_block"},
    AgentRole.FILTER: {"evidence", "question_block"},
    AgentRole.JUDGE: {
        "earlier_index",
        "earlier_chunk",
        "earlier_answer",
        "later_index",
        "later_chunk",
        "later_answer",
        "question_block",
    },
    AgentRole.MANAGER: {"evidence", "question_block"},
}

NO_EVIDENCE = "(no evidence found)"

_PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")
_JUDGE_MARKER = re.compile(r"[\s*#>_`'\"\[(]*(earlier|later|merged)\b[\s:.\-)\]*]*", re.IGNORECASE)


@dataclass(frozen=True)
class PromptTemplate:
    role: AgentRole
    task: TaskKind
    system_prompt: str
    body: str

    def __post_init__(self):
        unknown = self.placeholders() - PLACEHOLDERS[AgentRole(self.role)]
        if unknown:
            raise TemplateError(f"{self.task.value}/{self.role.value} template uses unknown placeholders {sorted(unknown)}")

    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER.findall(self.body))

    def fill(self, values: dict[str, str]) -> str:
        # single pass: substituted payloads are never re-scanned
        return _PLACEHOLDER.sub(lambda m: values[m.group(1)], self.body)


@dataclass(frozen=True)
class RenderedPrompt:
    role: AgentRole
    system: str
    user: str

    @property
    def text(self) -> str:
        return f"{self.system}\n\n{self.user}" if self.system else self.user

    def request(self, spec: BackendSpec) -> ChatRequest:
        return ChatRequest(self.system, self.user, self.role.value, spec.temperature, spec.max_output_units)


@dataclass
class HiddenState:
    text: str
    source_index: int
    truncated: bool = False
    response: ChatResponse | None = field(default=None, repr=False, compare=False)


@dataclass
class FilterVerdict:
    decision: Decision
    filtered_text: str
    defaulted: bool = False
    response: ChatResponse | None = field(default=None, repr=False, compare=False)


@dataclass
class JudgeVerdict:
    winner: Winner
    corrected_text: str
    defaulted: bool = False
    response: ChatResponse | None = field(default=None, repr=False, compare=False)


def _question_block(query: str) -> str:
    return f"Question: {query}\n" if query else ""


def _check_role(template: PromptTemplate, role: AgentRole) -> None:
    if template.role != role:
        raise TemplateMismatch(f"expected a {role.value} template, got {template.role.value}")


def render_worker(template: PromptTemplate, chunk: Chunk, query: str, prev: HiddenState | None) -> RenderedPrompt:
    _check_role(template, AgentRole.WORKER)
    user = template.fill(
        {
            "chunk": chunk.text,
            "chunk_index": str(chunk.index),
            "previous": prev.text if prev is not None else "",
            "question_block": _question_block(query),
        }
    )
    return RenderedPrompt(AgentRole.WORKER, template.system_prompt, user)


def render_filter(template: PromptTemplate, hidden: HiddenState, query: str) -> RenderedPrompt:
    _check_role(template, AgentRole.FILTER)
    user = template.fill({"evidence": hidden.text, "question_block": _question_block(query)})
    return RenderedPrompt(AgentRole.FILTER, template.system_prompt, user)


def render_judge(template: PromptTemplate, entry_i: "MemoryEntry", entry_j: "MemoryEntry", query: str, document) -> RenderedPrompt:
    """``entry_i`` is the later entry, ``entry_j`` the earlier one.

    ``document`` resolves each entry's chunk span back to its original text.
    """
    _check_role(template, AgentRole.JUDGE)
    if not entry_j.index < entry_i.index:
        raise IndexOrderError(f"earlier entry {entry_j.index} must precede later entry {entry_i.index}")
    texts = []
    for entry in (entry_j, entry_i):
        text = document.span_text(entry.chunk_ref) if entry.chunk_ref else ""
        if not text:
            raise MissingChunkText(f"no source text for chunk {entry.index}")
        texts.append(text)
    user = template.fill(
        {
            "earlier_index": str(entry_j.index),
            "earlier_chunk": texts[0],
            "earlier_answer": entry_j.current_text,
            "later_index": str(entry_i.index),
            "later_chunk": texts[1],
            "later_answer": entry_i.current_text,
            "question_block": _question_block(query),
        }
    )
    return RenderedPrompt(AgentRole.JUDGE, template.system_prompt, user)


def render_manager(template: PromptTemplate, bank_context: str, query: str) -> RenderedPrompt:
    _check_role(template, AgentRole.MANAGER)
    user = template.fill({"evidence": bank_context or NO_EVIDENCE, "question_block": _question_block(query)})
    return RenderedPrompt(AgentRole.MANAGER, template.system_prompt, user)


def _lines(text: str) -> list[str]:
    # only real line breaks; str.splitlines also splits on \x1c-\x1e, \x85, \u2028
    return text.replace("\r\n", "\n").split("\n")


def parse_filter(completion: str, fallback_text: str = "") -> FilterVerdict:
    """Parse a filter completion.

    A related verdict with nothing after the marker line keeps ``fallback_text``
    (normally the worker output) so that stored evidence is never empty.
    """
    lines = _lines(completion)
    for idx, line in enumerate(lines):
        low = line.lower()
        if "related" not in low:
            continue
        remainder = "\n".join(lines[idx + 1 :]).strip()
        if "unrelated" in low:
            return FilterVerdict(Decision.UNRELATED, remainder)
        return FilterVerdict(Decision.RELATED, remainder or fallback_text)
    raise UnparseableVerdict(completion, "related/unrelated")


def format_filter(verdict: FilterVerdict) -> str:
    return verdict.decision.value.upper() + ("\n" + verdict.filtered_text if verdict.filtered_text else "")


def parse_judge(completion: str, fallback_text: str = "") -> JudgeVerdict:
    lines = _lines(completion.strip())
    m = _JUDGE_MARKER.match(lines[0]) if lines else None
    if m is None:
        raise UnparseableVerdict(completion, "EARLIER/LATER/MERGED")
    tail = lines[0][m.end() :].strip()
    remainder = "\n".join(([tail] if tail else []) + lines[1:]).strip()
    return JudgeVerdict(Winner(m.group(1).lower()), remainder or fallback_text)


def format_judge(verdict: JudgeVerdict) -> str:
    return verdict.winner.value.upper() + "\n" + verdict.corrected_text


def _call(backend: BackendSpec, prompt: RenderedPrompt) -> ChatResponse:
    return complete(backend, prompt.request(backend))


def invoke_worker(
    backend: BackendSpec,
    prompt: RenderedPrompt,
    index: int,
    cap: int = 1024,
    mode: UnitMode | str = UnitMode.WORD,
) -> HiddenState:
    response = _call(backend, prompt)
    text = response.text.strip()
    truncated = count_units(text, mode) > cap
    if truncated:
        text = truncate_units(text, cap, mode)
    return HiddenState(text, index, truncated, response)


def invoke_filter(backend: BackendSpec, prompt: RenderedPrompt, fallback_text: str = "") -> FilterVerdict:
    response = _call(backend, prompt)
    try:
        verdict = parse_filter(response.text, fallback_text)
    except UnparseableVerdict as exc:
        exc.response = response
        raise
    verdict.response = response
    return verdict


def invoke_judge(backend: BackendSpec, prompt: RenderedPrompt, fallback_text: str = "") -> JudgeVerdict:
    response = _call(backend, prompt)
    try:
        verdict = parse_judge(response.text, fallback_text)
    except UnparseableVerdict as exc:
        exc.response = response
        raise
    verdict.response = response
    return verdict


def invoke_manager(backend: BackendSpec, prompt: RenderedPrompt) -> tuple[str, ChatResponse]:
    response = _call(backend, prompt)
    return response.text.strip(), response


# -- template loading ---------------------------------------------------------

TEMPLATE_SEPARATOR = "---"


def parse_template_file(text: str, role: AgentRole, task: TaskKind) -> PromptTemplate:
    """A template file holds the system prompt, a line of ``---``, then the body."""
    lines = text.splitlines()
    try:
        sep = lines.index(TEMPLATE_SEPARATOR)
    except ValueError:
        raise TemplateError(f"{task.value}_{role.value}: missing '{TEMPLATE_SEPARATOR}' separator line") from None
    system = "\n".join(lines[:sep]).strip()
    body = "\n".join(lines[sep + 1 :]).strip("\n") + "\n"
    return PromptTemplate(role, task, system, body)


class TemplateSet:
    def __init__(self, templates: dict[tuple[TaskKind, AgentRole], PromptTemplate], source: str = "<memory>"):
        self.templates = templates
        self.source = source

    def get(self, task: TaskKind | str, role: AgentRole | str) -> PromptTemplate:
        key = (TaskKind(task), AgentRole(role))
        try:
            return self.templates[key]
        except KeyError:
            raise TemplateError(f"no {key[0].value}/{key[1].value} template in {self.source}") from None

    def missing(self, task: TaskKind | str) -> list[AgentRole]:
        return [role for role in AgentRole if (TaskKind(task), role) not in self.templates]


def load_templates(directory: str | Path | None = None) -> TemplateSet:
    """Load ``{task}_{role}.txt`` files; the packaged defaults when no directory is given."""
    if directory is None:
        root = resources.files("gatedchain") / "templates"
        source = "packaged defaults"
    else:
        root = Path(directory)
        if not root.is_dir():
            raise TemplateError(f"template directory {root} does not exist")
        source = str(root)
    templates = {}
    for task in TaskKind:
        for role in AgentRole:
            path = root / f"{task.value}_{role.value}.txt"
            if path.is_file():
                templates[(task, role)] = parse_template_file(path.read_text(encoding="utf-8"), role, task)
    if not templates:
        raise TemplateError(f"no templates found in {source}")
    return TemplateSet(templates, source)
