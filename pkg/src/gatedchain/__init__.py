"""Gated multi-agent chain for long-context question answering and summarization."""

from .agents import AgentRole, Decision, TaskKind, Winner, load_templates
from .backend import BackendSpec, ChatRequest, Rule, ScriptedBackend, complete, script_backend
from .chunker import Chunk, Document, UnitMode, count_units, split_document
from .engine import ChainConfig, ChainResult, ChainTrace, run_chain, run_node
from .memory import MemoryBank, MemoryEntry, Status
from .metrics import normalize_answer, qa_f1, rouge_l

__all__ = [
    "AgentRole",
    "BackendSpec",
    "ChainConfig",
    "ChainResult",
    "ChainTrace",
    "ChatRequest",
    "Chunk",
    "Decision",
    "Document",
    "MemoryBank",
    "MemoryEntry",
    "Rule",
    "ScriptedBackend",
    "Status",
    "TaskKind",
    "UnitMode",
    "Winner",
    "complete",
    "count_units",
    "load_templates",
    "normalize_answer",
    "qa_f1",
    "rouge_l",
    "run_chain",
    "run_node",
    "script_backend",
    "split_document",
]
