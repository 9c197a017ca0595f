"""Node loop: worker -> filter -> (judge) per chunk, then one manager call."""

from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

from .agents import (
    AgentRole,
    Decision,
    FilterVerdict,
    HiddenState,
    JudgeVerdict,
    RenderedPrompt,
    TaskKind,
    TemplateSet,
    Winner,
    invoke_filter,
    invoke_judge,
    invoke_manager,
    invoke_worker,
    load_templates,
    render_filter,
    render_judge,
    render_manager,
    render_worker,
)
from .backend import BackendSpec, ChatResponse
from .chunker import Chunk, ChunkStream, Document, UnitMode, count_units
from .errors import BackendError, ChainAborted, ConfigError, EmptyDocument, MalformedTrace, UnparseableVerdict
from .memory import LLMDetector, MemoryBank, MemoryEntry, heuristic_detector

TRACE_SCHEMA = "gatedchain.report/1"
DETECTORS = ("auto", "heuristic", "llm", "none")


@dataclass
class ChainConfig:
    role_backends: dict[AgentRole, BackendSpec]
    k: int = 5000
    unit_mode: UnitMode = UnitMode.WORD
    task: TaskKind = TaskKind.QA
    templates: TemplateSet = field(default_factory=load_templates)
    hidden_cap: int = 1024
    manager_budget: int = 4096
    max_judge_calls_per_node: int = 4
    detector: str = "auto"
    filter_default: Decision = Decision.RELATED
    workers: int = 1

    def __post_init__(self):
        self.unit_mode = UnitMode(self.unit_mode)
        self.task = TaskKind(self.task)
        self.filter_default = Decision(self.filter_default)
        self.role_backends = {AgentRole(r): b for r, b in self.role_backends.items()}

    def validate(self) -> "ChainConfig":
        missing = [r.value for r in AgentRole if r not in self.role_backends]
        if missing:
            raise ConfigError(f"no backend configured for roles {missing}")
        missing = [r.value for r in self.templates.missing(self.task)]
        if missing:
            raise ConfigError(f"no {self.task.value} template for roles {missing} in {self.templates.source}")
        for name in ("k", "hidden_cap", "manager_budget", "max_judge_calls_per_node", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.detector not in DETECTORS:
            raise ConfigError(f"detector must be one of {DETECTORS}, got {self.detector!r}")
        return self

    def template(self, role: AgentRole):
        return self.templates.get(self.task, role)

    def make_detector(self, query: str):
        kind = self.detector
        if kind == "auto":
            kind = "heuristic" if self.task is TaskKind.QA else "none"
        if kind == "heuristic":
            return heuristic_detector
        if kind == "llm":
            return LLMDetector(self.role_backends[AgentRole.FILTER], query)
        return None

    def snapshot(self) -> dict:
        return {
            "k": self.k,
            "unit_mode": self.unit_mode.value,
            "task": self.task.value,
            "hidden_cap": self.hidden_cap,
            "manager_budget": self.manager_budget,
            "max_judge_calls_per_node": self.max_judge_calls_per_node,
            "detector": self.detector,
            "filter_default": self.filter_default.value,
            "templates": self.templates.source,
            "backends": {r.value: b.describe() for r, b in self.role_backends.items()},
        }


@dataclass
class CallRecord:
    role: str
    node: int | None
    prompt: str
    output: str
    latency_ms: float = 0.0
    input_units: int = 0
    output_units: int = 0
    attempts: int = 1
    flags: list[str] = field(default_factory=list)

    @classmethod
    def of(cls, prompt: RenderedPrompt, node: int | None, response: ChatResponse | None, flags=()) -> "CallRecord":
        if response is None:
            return cls(prompt.role.value, node, prompt.text, "", flags=list(flags))
        return cls(
            prompt.role.value,
            node,
            prompt.text,
            response.text,
            response.latency_ms,
            response.input_units,
            response.output_units,
            response.attempts,
            list(flags),
        )


@dataclass
class JudgeRecord:
    earlier: int
    later: int
    call: CallRecord
    winner: str
    corrected_text: str


@dataclass
class NodeRecord:
    index: int
    span: tuple[int, int]
    chunk_units: int
    worker: CallRecord | None = None
    hidden: str = ""
    hidden_truncated: bool = False
    filter: CallRecord | None = None
    decision: str | None = None
    filtered: str = ""
    detector_calls: list[CallRecord] = field(default_factory=list)
    conflicts: list[dict] = field(default_factory=list)
    judgements: list[JudgeRecord] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    held_units: int = 0


@dataclass
class ChainTrace:
    config: dict
    document_id: str
    query: str
    nodes: list[NodeRecord] = field(default_factory=list)
    manager_context: str | None = None
    manager: CallRecord | None = None
    final_hidden: str = ""
    answer: str | None = None
    wall_seconds: float = 0.0
    peak_held_units: int = 0
    error: dict | None = None

    def calls(self) -> list[CallRecord]:
        out = []
        for node in self.nodes:
            out.extend(c for c in (node.worker, node.filter) if c is not None)
            out.extend(node.detector_calls)
            out.extend(j.call for j in node.judgements)
        if self.manager is not None:
            out.append(self.manager)
        return out

    def call_sequence(self) -> list[str]:
        """Role initials in call order, e.g. ``['W', 'F', 'J', 'M']``."""
        return [c.role[0].upper() for c in self.calls()]


@dataclass
class ChainResult:
    answer: str
    trace: ChainTrace
    final_bank: MemoryBank


def stream_chunks(doc: Document, config: ChainConfig) -> ChunkStream:
    """Lazy, single-pass chunk iterator over the document's text pieces."""
    return ChunkStream(doc.pieces(), config.k, config.unit_mode)


def _abort(exc: BackendError, role: AgentRole, node: int | None, record: NodeRecord | None) -> BackendError:
    exc.role = role.value
    exc.node = node
    exc.partial_record = record
    return exc


def run_node(
    i: int,
    chunk: Chunk,
    prev_hidden: HiddenState | None,
    bank: MemoryBank,
    config: ChainConfig,
    query: str = "",
    document: Document | None = None,
    detector=None,
) -> tuple[HiddenState, MemoryBank, NodeRecord]:
    """Process one chunk. The returned hidden state is the worker output
    whether or not the filter lets it into the bank."""
    if chunk.index != i:
        raise ValueError(f"chunk index {chunk.index} does not match node {i}")
    if bank.entries and bank.entries[-1].index >= i:
        raise ValueError(f"bank already holds chunk {bank.entries[-1].index} at node {i}")
    backends, mode = config.role_backends, config.unit_mode
    record = NodeRecord(i, chunk.span, chunk.unit_count)

    prompt = render_worker(config.template(AgentRole.WORKER), chunk, query, prev_hidden)
    try:
        hidden = invoke_worker(backends[AgentRole.WORKER], prompt, i, config.hidden_cap, mode)
    except BackendError as exc:
        record.worker = CallRecord.of(prompt, i, None, ["error"])
        raise _abort(exc, AgentRole.WORKER, i, record)
    record.worker = CallRecord.of(prompt, i, hidden.response, ["truncated"] if hidden.truncated else [])
    record.hidden, record.hidden_truncated = hidden.text, hidden.truncated

    prompt = render_filter(config.template(AgentRole.FILTER), hidden, query)
    flags = []
    try:
        verdict = invoke_filter(backends[AgentRole.FILTER], prompt, hidden.text)
    except UnparseableVerdict as exc:
        related = config.filter_default is Decision.RELATED
        verdict = FilterVerdict(config.filter_default, hidden.text if related else "", True, exc.response)
        flags.append("unparseable-default")
    except BackendError as exc:
        record.filter = CallRecord.of(prompt, i, None, ["error"])
        raise _abort(exc, AgentRole.FILTER, i, record)
    record.filter = CallRecord.of(prompt, i, verdict.response, flags)
    record.decision, record.filtered = verdict.decision.value, verdict.filtered_text

    if verdict.decision is not Decision.RELATED:
        return hidden, bank, record

    entry = MemoryEntry(i, chunk.span, hidden.text, verdict.filtered_text)
    bank.append_related(entry)
    try:
        pairs = bank.find_conflicts(entry, detector)
    except BackendError as exc:
        raise _abort(exc, AgentRole.FILTER, i, record)
    finally:
        if isinstance(detector, LLMDetector):
            record.detector_calls.extend(CallRecord.of(p, i, r, ["detector"]) for p, r in detector.calls)
            detector.calls.clear()
    record.conflicts = [asdict(p) for p in pairs]

    judged = 0
    for pair in pairs:
        if bank.is_stale(pair):
            record.skipped.append({**asdict(pair), "why": "stale"})
            continue
        if judged >= config.max_judge_calls_per_node:
            record.skipped.append({**asdict(pair), "why": "judge-cap"})
            continue
        later, earlier = bank.get(pair.later), bank.get(pair.earlier)
        prompt = render_judge(config.template(AgentRole.JUDGE), later, earlier, query, document)
        flags = []
        try:
            jv = invoke_judge(backends[AgentRole.JUDGE], prompt, later.hidden)
        except UnparseableVerdict as exc:
            jv = JudgeVerdict(Winner.LATER, later.hidden, True, exc.response)
            flags.append("unparseable-default")
        except BackendError as exc:
            record.judgements.append(
                JudgeRecord(pair.earlier, pair.later, CallRecord.of(prompt, i, None, ["error"]), "", "")
            )
            raise _abort(exc, AgentRole.JUDGE, i, record)
        judged += 1
        bank.resolve_conflict(pair, jv, node=i)
        record.judgements.append(
            JudgeRecord(pair.earlier, pair.later, CallRecord.of(prompt, i, jv.response, flags), jv.winner.value, jv.corrected_text)
        )
    return hidden, bank, record


def run_chain(doc: Document, query: str, config: ChainConfig) -> ChainResult:
    """Run the whole chain over ``doc`` and return the manager's answer.

    Raises:
        EmptyDocument: for an empty document.
        ChainAborted: when a backend call fails; ``.trace`` is the partial trace.
    """
    config.validate()
    if not doc.text:
        raise EmptyDocument(f"document {doc.id!r} is empty")
    trace = ChainTrace(config.snapshot(), doc.id, query)
    bank = MemoryBank(doc.id)
    detector = config.make_detector(query)
    mode = config.unit_mode
    start = time.perf_counter()
    hidden: HiddenState | None = None
    try:
        stream = stream_chunks(doc, config)
        for chunk in stream:
            lookahead = stream.buffered_units + chunk.unit_count
            prev_units = count_units(hidden.text, mode) if hidden else 0
            hidden, bank, record = run_node(chunk.index, chunk, hidden, bank, config, query, doc, detector)
            record.held_units = lookahead + max(prev_units, count_units(hidden.text, mode))
            trace.peak_held_units = max(trace.peak_held_units, record.held_units)
            trace.nodes.append(record)
            trace.final_hidden = hidden.text
        context = bank.render_context(config.manager_budget, mode)
        trace.manager_context = context
        prompt = render_manager(config.template(AgentRole.MANAGER), context, query)
        try:
            answer, response = invoke_manager(config.role_backends[AgentRole.MANAGER], prompt)
        except BackendError as exc:
            trace.manager = CallRecord.of(prompt, None, None, ["error"])
            raise _abort(exc, AgentRole.MANAGER, None, None)
        trace.manager = CallRecord.of(prompt, None, response, [] if answer else ["empty"])
        trace.answer = answer
    except BackendError as exc:
        partial = getattr(exc, "partial_record", None)
        if partial is not None:
            trace.nodes.append(partial)
        trace.error = {"type": type(exc).__name__, "message": str(exc), "role": exc.role, "node": exc.node}
        trace.wall_seconds = time.perf_counter() - start
        raise ChainAborted(exc, trace) from exc
    trace.wall_seconds = time.perf_counter() - start
    return ChainResult(answer, trace, bank.snapshot())


# -- report files ---------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if is_dataclass(obj):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def report_dict(trace: ChainTrace, bank: MemoryBank | None = None) -> dict:
    return {
        "schema": TRACE_SCHEMA,
        "answer": trace.answer,
        "error": trace.error,
        "trace": asdict(trace),
        "final_bank": [e.to_dict() for e in bank.entries] if bank is not None else None,
    }


def write_report(path: str | Path, trace: ChainTrace, bank: MemoryBank | None = None) -> None:
    Path(path).write_text(json.dumps(report_dict(trace, bank), indent=2, default=_plain, ensure_ascii=False) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> dict:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedTrace("report is not UTF-8", exc.start) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedTrace(exc.msg, len(text[: exc.pos].encode("utf-8"))) from None
    if not isinstance(data, dict) or data.get("schema") != TRACE_SCHEMA or "trace" not in data:
        raise MalformedTrace(f"not a {TRACE_SCHEMA} report", 0)
    return data
