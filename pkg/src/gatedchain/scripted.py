"""Canned responders for fully offline runs.

They read the sections of the packaged QA templates, so they are meant for
smoke tests and the needle suite rather than for custom templates.
"""

from __future__ import annotations

import re

from .agents import NO_EVIDENCE
from .backend import ChatRequest, Rule
from .errors import ConfigError
from .memory import TRUNCATION_NOTICE

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+|\n+")
_LABEL = re.compile(r"^\[\d+\]\s*")


def _section(text: str, header: str, stops: tuple[str, ...]) -> str:
    start = text.find(header)
    if start < 0:
        return ""
    start += len(header)
    end = len(text)
    for stop in stops:
        pos = text.find(stop, start)
        if pos >= 0:
            end = min(end, pos)
    return text[start:end].strip()


def chunk_text(request: ChatRequest) -> str:
    m = re.search(r"Text chunk \d+:\n", request.user)
    if m is None:
        return request.user
    return _section(request.user[m.start() :], m.group(0), ("\n\nEvidence from previous chunks:", "\n\nSummary of previous", "\n\nNotes from previous"))


def evidence_text(request: ChatRequest) -> str:
    return _section(request.user, "Evidence:\n", ("\n\nResponse:", "\n\nQuestion:"))


def copy_sentences(token: str):
    """Worker that copies every sentence of its chunk containing ``token``."""

    def respond(request: ChatRequest) -> str:
        sentences = _SENTENCE_END.split(chunk_text(request))
        return " ".join(s.strip() for s in sentences if token in s)

    return respond


def pass_filter(request: ChatRequest) -> str:
    """Filter that keeps any non-empty evidence unchanged."""
    evidence = evidence_text(request)
    return f"RELATED\n{evidence}" if evidence else "UNRELATED"


def echo_evidence(request: ChatRequest) -> str:
    """Manager that answers with the bank contents, labels stripped."""
    evidence = evidence_text(request)
    if evidence == NO_EVIDENCE:
        return ""
    parts = [_LABEL.sub("", p).strip() for p in evidence.split("\n\n")]
    return " ".join(p for p in parts if p and p != TRUNCATION_NOTICE)


RESPONDERS = {
    "copy_sentences": copy_sentences,
    "pass_filter": lambda: pass_filter,
    "echo_evidence": lambda: echo_evidence,
}


def rule_from_config(raw: dict) -> Rule:
    """Build a :class:`Rule` from a config mapping.

    Either ``response`` (literal text) or ``responder`` (a name from
    ``RESPONDERS``, with optional ``args``) must be given.
    """
    raw = dict(raw)
    unknown = set(raw) - {"role", "pattern", "repeat", "response", "responder", "args"}
    if unknown:
        raise ConfigError(f"unknown scripted rule keys {sorted(unknown)}")
    if ("response" in raw) == ("responder" in raw):
        raise ConfigError("a scripted rule needs exactly one of 'response' or 'responder'")
    if "responder" in raw:
        try:
            factory = RESPONDERS[raw["responder"]]
        except KeyError:
            raise ConfigError(f"unknown responder {raw['responder']!r}; known: {sorted(RESPONDERS)}") from None
        try:
            response = factory(**(raw.get("args") or {}))
        except TypeError as exc:
            raise ConfigError(f"bad args for responder {raw['responder']!r}: {exc}") from None
    else:
        response = str(raw["response"])
    return Rule(response, role=raw.get("role"), pattern=raw.get("pattern"), repeat=bool(raw.get("repeat", False)))
